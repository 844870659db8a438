use crate::args::Args;
use crate::common::*;
use crate::data::{float_rows, write_csv, Table};
use crate::error::Result;
use crate::model_file::*;
use lvm_core::fa::fa_recognize;
use lvm_core::glm::GlimFamily;
use lvm_core::gmm::GmmScorer;
use lvm_core::hmm::hmm_smoother;
use lvm_core::rbm::hidden_means;
use lvm_core::sparse::sc_recognition;
use lvm_core::ssm::ssm_smoother;
use lvm_core::GaussianBelief;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub fn run(args: &Args) -> Result<Vec<u8>> {
    let table = require_data(args)?;
    let path = require_params(args)?;
    let (header, rows) = match args.model {
        Kind::Gmm => {
            let file: ModelFile<GmmPayload> = read_model(path, Kind::Gmm)?;
            let scorer = GmmScorer::new(&file.params.params()?)?;
            let x = table.select(&file.columns)?;
            let rows = per_row(&x, |v| Ok(scorer.recognize(v).probs().to_vec()))?;
            (names("r", file.params.weights.len()), float_rows(&rows))
        }
        Kind::Fa => {
            let file: ModelFile<FaPayload> = read_model(path, Kind::Fa)?;
            let p = file.params.params()?;
            let x = table.select(&file.columns)?;
            let rows = per_row(&x, |v| Ok(moments(&fa_recognize(&p, v)?)))?;
            (moment_names(p.factors()), float_rows(&rows))
        }
        Kind::Sc => {
            let file: ModelFile<ScPayload> = read_model(path, Kind::Sc)?;
            let p = file.params.params()?;
            let x = table.select(&file.columns)?;
            let rows = per_row(&x, |v| {
                let rec = sc_recognition(&p, v)?;
                let cov = rec.cov()?;
                Ok(flatten(&rec.mode, &cov))
            })?;
            (moment_names(p.sources()), float_rows(&rows))
        }
        Kind::Hmm => {
            let file: ModelFile<HmmPayload> = read_model(path, Kind::Hmm)?;
            let p = file.params.params()?;
            let (labels, seqs) = table.sequences(&file.columns)?;
            let posts = seqs
                .par_iter()
                .map(|s| hmm_smoother(&p, s))
                .collect::<lvm_core::Result<Vec<_>>>()?;
            let per_seq = posts
                .iter()
                .map(|post| post.smoother.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect();
            sequence_rows(&labels, per_seq, names("p", p.states()))
        }
        Kind::Ssm => {
            let file: ModelFile<SsmPayload> = read_model(path, Kind::Ssm)?;
            let p = file.params.params()?;
            let (labels, seqs) = table.sequences(&file.columns)?;
            let controls = if file.controls.is_empty() {
                None
            } else {
                Some(table.sequences(&file.controls)?.1)
            };
            let posts = seqs
                .par_iter()
                .enumerate()
                .map(|(n, s)| ssm_smoother(&p, s, controls.as_ref().map(|c| &c[n])))
                .collect::<lvm_core::Result<Vec<_>>>()?;
            let per_seq = posts
                .iter()
                .map(|post| post.smoothed.iter().map(moments).collect())
                .collect();
            sequence_rows(&labels, per_seq, moment_names(p.state_dim()))
        }
        Kind::Rbm => {
            let file: ModelFile<RbmPayload> = read_model(path, Kind::Rbm)?;
            let p = file.params.params()?;
            let x = table.select(&file.columns)?;
            let rows = per_row(&x, |v| Ok(hidden_means(&p, v).iter().copied().collect()))?;
            (names("h", p.hidden()), float_rows(&rows))
        }
        Kind::Glim => glim_means(args, &table)?,
        Kind::Ica => {
            let file: ModelFile<IcaPayload> = read_model(path, Kind::Ica)?;
            let m = file.params.model()?;
            let s = m.sources(&table.dataset(&file.columns)?)?;
            (names("s", m.dim()), float_rows(&matrix_rows(&s)))
        }
        Kind::Cat => {
            let file: ModelFile<CatPayload> = read_model(path, Kind::Cat)?;
            let m = file.params.model()?;
            let symbols = symbols(&table, &file.columns[0])?;
            symbol_distribution(&symbols, m.symbols())?;
            let rec = m.exact_recognition();
            let rows: Vec<Vec<f64>> = symbols.iter().map(|s| rec.row(*s).iter().copied().collect()).collect();
            (names("r", m.classes()), float_rows(&rows))
        }
    };
    emit(args.out.as_deref(), write_csv(&header, &rows))
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// `mean0..`, then the upper triangle `cov_i_j` with `i <= j`.
fn moment_names(k: usize) -> Vec<String> {
    let mut h = names("mean", k);
    for i in 0..k {
        for j in i..k {
            h.push(format!("cov_{i}_{j}"));
        }
    }
    h
}

fn flatten(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Vec<f64> {
    let k = mean.len();
    let mut v: Vec<f64> = mean.iter().copied().collect();
    for i in 0..k {
        for j in i..k {
            v.push(cov[(i, j)]);
        }
    }
    v
}

fn moments(b: &GaussianBelief) -> Vec<f64> {
    flatten(b.mean(), b.cov())
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn per_row<F>(x: &DMatrix<f64>, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&DVector<f64>) -> lvm_core::Result<Vec<f64>> + Sync,
{
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|i| f(&x.row(i).transpose()))
        .collect::<lvm_core::Result<Vec<_>>>()?)
}

/// Rows led by the sequence label and the time index within the sequence.
fn sequence_rows(
    labels: &[String],
    per_seq: Vec<Vec<Vec<f64>>>,
    value_names: Vec<String>,
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["seq_id".to_string(), "t".to_string()];
    header.extend(value_names);
    let mut rows = Vec::new();
    for (label, seq) in labels.iter().zip(per_seq) {
        for (t, values) in float_rows(&seq).into_iter().enumerate() {
            let mut r = vec![label.clone(), t.to_string()];
            r.extend(values);
            rows.push(r);
        }
    }
    (header, rows)
}

fn glim_means(args: &Args, table: &Table) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file: ModelFile<GlimPayload> = read_model(require_params(args)?, Kind::Glim)?;
    let family = file.params.family()?;
    let weights = file.params.weights()?;
    let x = design(&table.select(&file.columns)?, file.params.intercept);
    if weights.ncols() != x.ncols() {
        return Err(lvm_core::Error::Dimension(format!(
            "weights expect {} inputs, design has {}",
            weights.ncols(),
            x.ncols()
        ))
        .into());
    }
    let s = &x * weights.transpose();
    let means = s.map(|s| response_mean(&family, s));
    let header = file.targets.iter().map(|t| format!("mean_{t}")).collect();
    Ok((header, float_rows(&matrix_rows(&means))))
}

/// `E[y | x]` at linear predictor `s`.
pub fn response_mean(family: &GlimFamily, s: f64) -> f64 {
    match family {
        // The sufficient statistic is `log y`; the response mean is shape times scale.
        GlimFamily::GammaShapeLog { scale } => s.exp() * scale,
        _ => family.mean_fn(family.link(s).0),
    }
}
