use crate::args::Args;
use crate::common::*;
use crate::error::Result;
use crate::model_file::*;
use lvm_core::info::{bits_back_costs, CodingCostReport, Proxy};
use lvm_core::rbm::BinaryBatch;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct EvalMetrics {
    pub model: &'static str,
    /// Samples, or time steps summed over sequences.
    pub rows: usize,
    /// Mean log-likelihood per row; `null` when it cannot be enumerated.
    pub loglik_per_sample: Option<f64>,
    /// False where the likelihood is a Laplace approximation.
    pub exact: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits_back: Option<BitsBack>,
}

/// Expected code lengths in nats per symbol under two recognition proxies.
#[derive(Debug, Clone, Serialize)]
pub struct BitsBack {
    pub exact: Costs,
    pub hard: Costs,
}

#[derive(Debug, Clone, Serialize)]
pub struct Costs {
    pub marginal_cross_entropy: f64,
    pub hard_assignment_cost: f64,
    pub stochastic_cost_before_refund: f64,
    pub refund: f64,
    pub net_stochastic_cost: f64,
    pub proxy_kl: f64,
}

impl From<CodingCostReport> for Costs {
    fn from(r: CodingCostReport) -> Self {
        Self {
            marginal_cross_entropy: r.marginal_cross_entropy,
            hard_assignment_cost: r.hard_assignment_cost,
            stochastic_cost_before_refund: r.stochastic_cost_before_refund,
            refund: r.refund,
            net_stochastic_cost: r.net_stochastic_cost(),
            proxy_kl: r.proxy_kl,
        }
    }
}

pub fn run(args: &Args) -> Result<Vec<u8>> {
    let metrics = evaluate(args)?;
    emit(args.metrics.as_deref(), json_line(&metrics))
}

pub fn evaluate(args: &Args) -> Result<EvalMetrics> {
    let table = require_data(args)?;
    let path = require_params(args)?;
    let mut m = EvalMetrics {
        model: args.model.name(),
        rows: table.n(),
        loglik_per_sample: None,
        exact: true,
        bits_back: None,
    };
    m.loglik_per_sample = match args.model {
        Kind::Gmm => {
            let file: ModelFile<GmmPayload> = read_model(path, Kind::Gmm)?;
            Some(gmm_loglik(&file.params.params()?, &table.dataset(&file.columns)?)?)
        }
        Kind::Fa => {
            let file: ModelFile<FaPayload> = read_model(path, Kind::Fa)?;
            Some(fa_loglik(&file.params.params()?, &table.dataset(&file.columns)?)?)
        }
        Kind::Sc => {
            let file: ModelFile<ScPayload> = read_model(path, Kind::Sc)?;
            m.exact = false;
            Some(sc_loglik(&file.params.params()?, &table.dataset(&file.columns)?)?)
        }
        Kind::Hmm => {
            let file: ModelFile<HmmPayload> = read_model(path, Kind::Hmm)?;
            let (_, data) = table.sequence_dataset(&file.columns)?;
            Some(hmm_loglik(&file.params.params()?, &data)?)
        }
        Kind::Ssm => {
            let file: ModelFile<SsmPayload> = read_model(path, Kind::Ssm)?;
            let (_, data) = table.sequence_dataset(&file.columns)?;
            let controls = if file.controls.is_empty() {
                None
            } else {
                Some(table.sequences(&file.controls)?.1)
            };
            Some(ssm_loglik(&file.params.params()?, &data, controls.as_deref())?)
        }
        Kind::Rbm => {
            let file: ModelFile<RbmPayload> = read_model(path, Kind::Rbm)?;
            let batch = BinaryBatch::new(table.select(&file.columns)?)?;
            rbm_loglik(&file.params.params()?, &batch)?
        }
        Kind::Glim => {
            let file: ModelFile<GlimPayload> = read_model(path, Kind::Glim)?;
            let x = design(&table.select(&file.columns)?, file.params.intercept);
            let y = table.select(&file.targets)?;
            Some(glim_loglik(&file.params.family()?, &x, &y, &file.params.weights()?)?)
        }
        Kind::Ica => {
            let file: ModelFile<IcaPayload> = read_model(path, Kind::Ica)?;
            Some(ica_loglik(&file.params.model()?, &table.dataset(&file.columns)?)?)
        }
        Kind::Cat => {
            let file: ModelFile<CatPayload> = read_model(path, Kind::Cat)?;
            let model = file.params.model()?;
            let empirical = symbol_distribution(&symbols(&table, &file.columns[0])?, model.symbols())?;
            m.bits_back = Some(BitsBack {
                exact: bits_back_costs(&model, &empirical, &Proxy::Exact)?.into(),
                hard: bits_back_costs(&model, &empirical, &Proxy::Hard)?.into(),
            });
            Some(cat_loglik(&model, &empirical)?)
        }
    };
    Ok(m)
}
