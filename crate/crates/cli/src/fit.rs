use crate::args::Args;
use crate::common::*;
use crate::data::Table;
use crate::error::{CliError, Result};
use crate::model_file::*;
use lvm_core::data::Dataset;
use lvm_core::em::{run_em_from, run_em_restart, select_best, EmConfig, EmModel, FitReport};
use lvm_core::fa::FaModel;
use lvm_core::glm::{irls_fit, IrlsConfig};
use lvm_core::gmm::{CovarianceMode, GmmModel};
use lvm_core::hmm::HmmModel;
use lvm_core::ica::{ica_fit, IcaConfig};
use lvm_core::info::CategoricalMixture;
use lvm_core::rbm::{cd_n_gradient, neg_log_likelihood, BinaryBatch, RbmParams, ENUMERATION_LIMIT};
use lvm_core::rng::substream;
use lvm_core::sparse::SparseCodingModel;
use lvm_core::ssm::SsmModel;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

/// Largest `V + H` for which every training step records the exact likelihood.
pub const RBM_TRACE_BITS: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct FitMetrics {
    pub model: &'static str,
    pub loglik_per_sample: Option<f64>,
    pub free_energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: Option<bool>,
    pub seed: u64,
    pub wall_ms: f64,
}

/// A fitted model: its file text and the metrics of the run.
pub struct Fitted {
    pub model_json: String,
    pub metrics: FitMetrics,
}

pub fn run(args: &Args) -> Result<Vec<u8>> {
    let start = Instant::now();
    let mut fitted = fit(args)?;
    fitted.metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Some(out) = &args.out {
        write_file(out, fitted.model_json.as_bytes())?;
    }
    emit(args.metrics.as_deref(), json_line(&fitted.metrics))
}

pub fn fit(args: &Args) -> Result<Fitted> {
    reject_init(args)?;
    match args.model {
        Kind::Glim | Kind::Ica => {}
        Kind::Rbm if args.init.is_some() => {}
        _ => {
            require_k(args)?;
        }
    }
    let table = require_data(args)?;
    match args.model {
        Kind::Gmm => fit_gmm(args, &table),
        Kind::Fa => fit_fa(args, &table),
        Kind::Sc => fit_sc(args, &table),
        Kind::Hmm => fit_hmm(args, &table),
        Kind::Ssm => fit_ssm(args, &table),
        Kind::Rbm => fit_rbm(args, &table),
        Kind::Glim => fit_glim(args, &table),
        Kind::Ica => fit_ica(args, &table),
        Kind::Cat => fit_cat(args, &table),
    }
}

fn em_config(args: &Args) -> EmConfig {
    let d = EmConfig::default();
    EmConfig {
        max_iter: args.max_iter.unwrap_or(d.max_iter),
        tol: args.tol.unwrap_or(d.tol),
        seed: args.seed,
        restarts: args.restarts as usize,
    }
}

/// From `init` when given, otherwise the best of the seeded restarts, run in parallel.
fn fit_em<M>(model: &M, config: &EmConfig, init: Option<M::Params>) -> Result<FitReport<M::Params>>
where
    M: EmModel + Sync,
    M::Params: Send,
{
    if let Some(p) = init {
        return Ok(run_em_from(model, p, config)?);
    }
    let reports = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| run_em_restart(model, config, r))
        .collect::<lvm_core::Result<Vec<_>>>()?;
    Ok(select_best(reports).expect("at least one restart"))
}

/// The warm start named by `--init`, checked against the kind and columns.
fn warm_start<P: serde::de::DeserializeOwned>(args: &Args, cols: &[String]) -> Result<Option<ModelFile<P>>> {
    let Some(path) = &args.init else {
        return Ok(None);
    };
    let file = read_model::<P>(path, args.model)?;
    check_columns(&file, cols)?;
    Ok(Some(file))
}

struct Parts<P> {
    payload: P,
    columns: Vec<String>,
    targets: Vec<String>,
    controls: Vec<String>,
    trace: Vec<f64>,
    iterations: usize,
    converged: Option<bool>,
    loglik: Option<f64>,
}

impl<P> Parts<P> {
    fn em<Q>(payload: P, columns: Vec<String>, report: &FitReport<Q>, loglik: f64) -> Self {
        Self {
            payload,
            columns,
            targets: vec![],
            controls: vec![],
            trace: report.free_energy_trace.clone(),
            iterations: report.iterations,
            converged: Some(report.converged),
            loglik: Some(loglik),
        }
    }
}

fn finish<P: Serialize>(args: &Args, table: &Table, parts: Parts<P>) -> Result<Fitted> {
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        kind: args.model,
        columns: parts.columns,
        targets: parts.targets,
        controls: parts.controls,
        data: table.provenance.clone(),
        fit: FitMeta {
            seed: args.seed,
            iterations: parts.iterations,
            final_free_energy: parts.trace.last().copied(),
            converged: parts.converged,
        },
        params: parts.payload,
    };
    Ok(Fitted {
        model_json: file.to_json(),
        metrics: FitMetrics {
            model: args.model.name(),
            loglik_per_sample: parts.loglik,
            free_energy_trace: parts.trace,
            iterations: parts.iterations,
            converged: parts.converged,
            seed: args.seed,
            wall_ms: 0.0,
        },
    })
}

fn fit_gmm(args: &Args, table: &Table) -> Result<Fitted> {
    let k = require_k(args)?;
    let cols = observed_columns(args, table, &[])?;
    let data = table.dataset(&cols)?;
    let mode = match args.isotropic {
        Some(eps) => CovarianceMode::FixedIsotropic(eps),
        None => CovarianceMode::Full,
    };
    let model = GmmModel::new(&data, k, mode)?;
    let init = match warm_start::<GmmPayload>(args, &cols)? {
        Some(f) => Some(f.params.params()?),
        None => None,
    };
    let report = fit_em(&model, &em_config(args), init)?;
    let ll = gmm_loglik(&report.params, &data)?;
    finish(
        args,
        table,
        Parts::em(GmmPayload::from(&report.params), cols, &report, ll),
    )
}

fn fit_fa(args: &Args, table: &Table) -> Result<Fitted> {
    let k = require_k(args)?;
    let cols = observed_columns(args, table, &[])?;
    let data = table.dataset(&cols)?;
    let model = FaModel::new(&data, k)?;
    let init = match warm_start::<FaPayload>(args, &cols)? {
        Some(f) => Some(f.params.params()?),
        None => None,
    };
    let report = fit_em(&model, &em_config(args), init)?;
    let ll = fa_loglik(&report.params, &data)?;
    finish(
        args,
        table,
        Parts::em(FaPayload::from(&report.params), cols, &report, ll),
    )
}

fn fit_sc(args: &Args, table: &Table) -> Result<Fitted> {
    let k = require_k(args)?;
    let cols = observed_columns(args, table, &[])?;
    let data = table.dataset(&cols)?;
    let model = SparseCodingModel::new(&data, k, args.lambda, DVector::from_element(k, args.alpha), args.beta)?;
    let init = match warm_start::<ScPayload>(args, &cols)? {
        Some(f) => Some(f.params.params()?),
        None => None,
    };
    let report = fit_em(&model, &em_config(args), init)?;
    let ll = sc_loglik(&report.params, &data)?;
    finish(
        args,
        table,
        Parts::em(ScPayload::from(&report.params), cols, &report, ll),
    )
}

fn fit_hmm(args: &Args, table: &Table) -> Result<Fitted> {
    let k = require_k(args)?;
    let cols = observed_columns(args, table, &[])?;
    let (_, data) = table.sequence_dataset(&cols)?;
    let model = HmmModel::new(&data, k)?;
    let init = match warm_start::<HmmPayload>(args, &cols)? {
        Some(f) => Some(f.params.params()?),
        None => None,
    };
    let report = fit_em(&model, &em_config(args), init)?;
    let ll = hmm_loglik(&report.params, &data)?;
    finish(
        args,
        table,
        Parts::em(HmmPayload::from(&report.params), cols, &report, ll),
    )
}

fn fit_ssm(args: &Args, table: &Table) -> Result<Fitted> {
    let k = require_k(args)?;
    let controls = args.controls.clone().unwrap_or_default();
    let cols = observed_columns(args, table, &controls)?;
    let (_, data) = table.sequence_dataset(&cols)?;
    let inputs = if controls.is_empty() {
        None
    } else {
        Some(table.sequences(&controls)?.1)
    };
    let model = SsmModel::new(&data, inputs.as_deref(), k)?;
    let init = match warm_start::<SsmPayload>(args, &cols)? {
        Some(f) if f.controls != controls => {
            return Err(CliError::Core(lvm_core::Error::Dimension(format!(
                "model file has controls {:?}, the command names {:?}",
                f.controls, controls
            ))))
        }
        Some(f) => Some(f.params.params()?),
        None => None,
    };
    let report = fit_em(&model, &em_config(args), init)?;
    let ll = ssm_loglik(&report.params, &data, inputs.as_deref())?;
    let mut parts = Parts::em(SsmPayload::from(&report.params), cols, &report, ll);
    parts.controls = controls;
    finish(args, table, parts)
}

fn fit_rbm(args: &Args, table: &Table) -> Result<Fitted> {
    let cols = observed_columns(args, table, &[])?;
    let batch = BinaryBatch::new(table.select(&cols)?)?;
    let mut params = match warm_start::<RbmPayload>(args, &cols)? {
        Some(f) => f.params.params()?,
        None => RbmParams::random(
            batch.dim(),
            require_k(args)?,
            0.01,
            &mut substream(args.seed, "rbm-init", 0),
        ),
    };
    let rate = args.lr.unwrap_or(0.1);
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(CliError::Usage("--lr must be positive".into()));
    }
    let steps = args.max_iter.unwrap_or(1000);
    let bits = params.visible() + params.hidden();
    let every_step = bits <= RBM_TRACE_BITS;
    let mut rng = substream(args.seed, "rbm-cd", 0);
    let mut trace = Vec::new();
    if every_step {
        trace.push(neg_log_likelihood(&params, &batch)?);
    }
    for _ in 0..steps {
        let g = cd_n_gradient(&params, &batch, args.cd_steps as usize, &mut rng)?;
        params = params.step(&g, rate);
        if every_step {
            trace.push(neg_log_likelihood(&params, &batch)?);
        }
    }
    if !every_step && bits <= ENUMERATION_LIMIT {
        trace.push(neg_log_likelihood(&params, &batch)?);
    }
    let loglik = rbm_loglik(&params, &batch)?;
    let parts = Parts {
        payload: RbmPayload::from(&params),
        columns: cols,
        targets: vec![],
        controls: vec![],
        trace,
        iterations: steps,
        converged: None,
        loglik,
    };
    finish(args, table, parts)
}

/// Responses default to the last numeric column.
pub fn glim_targets(args: &Args, table: &Table) -> Result<Vec<String>> {
    match &args.target {
        Some(t) if !t.is_empty() => Ok(t.clone()),
        _ => table
            .columns
            .last()
            .map(|c| vec![c.clone()])
            .ok_or_else(|| CliError::Usage("no target column".into())),
    }
}

fn fit_glim(args: &Args, table: &Table) -> Result<Fitted> {
    let targets = glim_targets(args, table)?;
    let cols = match &args.columns {
        Some(c) => c.clone(),
        None => table.columns_except(&targets),
    };
    let intercept = !args.no_intercept;
    let x = design(&table.select(&cols)?, intercept);
    let y = table.select(&targets)?;
    let family = args.glim_family();
    let d = IrlsConfig::default();
    let config = IrlsConfig {
        max_iter: args.max_iter.unwrap_or(d.max_iter),
        tol: args.tol.unwrap_or(d.tol),
    };
    let (weights, traces) = irls_fit(&Dataset::new(x.clone())?, &Dataset::new(y.clone())?, &family, &config)?;
    let len = traces.iter().map(|t| t.objective.len()).max().unwrap_or(0);
    let trace = (0..len)
        .map(|i| traces.iter().map(|t| t.objective[i.min(t.objective.len() - 1)]).sum())
        .collect();
    let loglik = glim_loglik(&family, &x, &y, &weights)?;
    let parts = Parts {
        payload: GlimPayload::new(&family, intercept, &weights),
        columns: cols,
        targets,
        controls: vec![],
        trace,
        iterations: traces.iter().map(|t| t.iterations).max().unwrap_or(0),
        converged: Some(traces.iter().all(|t| t.converged)),
        loglik: Some(loglik),
    };
    finish(args, table, parts)
}

fn fit_ica(args: &Args, table: &Table) -> Result<Fitted> {
    let cols = observed_columns(args, table, &[])?;
    let data = table.dataset(&cols)?;
    let d = IcaConfig::default();
    let config = IcaConfig {
        lr: args.lr.unwrap_or(d.lr),
        iters: args.max_iter.unwrap_or(d.iters),
        seed: args.seed,
        nonlinearity: args.nonlinearity(),
    };
    let fit = ica_fit(&data, &config)?;
    let loglik = ica_loglik(&fit.model, &data)?;
    let parts = Parts {
        payload: IcaPayload::from(&fit.model),
        columns: cols,
        targets: vec![],
        controls: vec![],
        iterations: fit.loss.len().saturating_sub(1),
        trace: fit.loss,
        converged: None,
        loglik: Some(loglik),
    };
    finish(args, table, parts)
}

fn fit_cat(args: &Args, table: &Table) -> Result<Fitted> {
    let k = require_k(args)?;
    let cols = observed_columns(args, table, &[])?;
    let [column] = cols.as_slice() else {
        return Err(CliError::Usage(format!(
            "--model cat reads one symbol column, got {cols:?}"
        )));
    };
    let symbols = symbols(table, column)?;
    let init = match warm_start::<CatPayload>(args, &cols)? {
        Some(f) => Some(f.params.model()?),
        None => None,
    };
    let vocabulary = match &init {
        Some(m) => m.symbols(),
        None => symbols.iter().max().map_or(0, |m| m + 1),
    };
    let model = CategoricalMixture::new(&symbols, vocabulary, k)?;
    let report = fit_em(&model, &em_config(args), init)?;
    let ll = cat_loglik(&report.params, &symbol_distribution(&symbols, vocabulary)?)?;
    finish(
        args,
        table,
        Parts::em(CatPayload::from(&report.params), cols, &report, ll),
    )
}
