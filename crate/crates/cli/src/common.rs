//! Argument checks, file plumbing and the per-sample log-likelihoods shared by
//! `fit` (for its metrics) and `eval`.

use crate::args::Args;
use crate::data::{load_table, Table};
use crate::error::{CliError, Result};
use crate::model_file::{Kind, ModelFile};
use lvm_core::data::{Dataset, SequenceDataset};
use lvm_core::fa::FaParams;
use lvm_core::glm::{glim_cross_entropy, GlimFamily};
use lvm_core::gmm::{GmmParams, GmmScorer};
use lvm_core::hmm::{hmm_filter, HmmParams};
use lvm_core::ica::{ica_loss, IcaModel};
use lvm_core::info::{marginal_cross_entropy, DiscreteLatentModel};
use lvm_core::linalg::MvnFactor;
use lvm_core::rbm::{neg_log_likelihood, BinaryBatch, RbmParams, ENUMERATION_LIMIT};
use lvm_core::sparse::{sc_log_marginal, SparseCodingParams};
use lvm_core::ssm::{kalman_filter, SsmParams};
use lvm_core::DiscreteDistribution;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::path::Path;

pub fn require_data(args: &Args) -> Result<Table> {
    let path = args
        .data
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--data is required for --model {}", args.model.name())))?;
    load_table(path, args.sequence_column.as_deref())
}

pub fn require_k(args: &Args) -> Result<usize> {
    args.k()
        .ok_or_else(|| CliError::Usage(format!("--k is required for --model {}", args.model.name())))
}

pub fn require_params(args: &Args) -> Result<&Path> {
    args.params
        .as_deref()
        .ok_or_else(|| CliError::Usage("--params (a fitted model file) is required".into()))
}

/// `--columns` when given, otherwise every numeric column not in `exclude`.
pub fn observed_columns(args: &Args, table: &Table, exclude: &[String]) -> Result<Vec<String>> {
    let cols = match &args.columns {
        Some(c) => c.clone(),
        None => table.columns_except(exclude),
    };
    if cols.is_empty() {
        return Err(CliError::Usage("no data columns to model".into()));
    }
    Ok(cols)
}

/// Rejects a model file fitted on different columns.
pub fn check_columns<P>(file: &ModelFile<P>, cols: &[String]) -> Result<()> {
    if file.columns != cols {
        return Err(CliError::Core(lvm_core::Error::Dimension(format!(
            "model file was fitted on columns {:?}, data supplies {:?}",
            file.columns, cols
        ))));
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes to `path`, or hands the bytes back for standard output.
pub fn emit(path: Option<&Path>, bytes: Vec<u8>) -> Result<Vec<u8>> {
    match path {
        Some(p) => {
            write_file(p, &bytes)?;
            Ok(Vec::new())
        }
        None => Ok(bytes),
    }
}

/// A JSON object on one line, newline-terminated.
pub fn json_line<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec(value).expect("metrics serialize");
    s.push(b'\n');
    s
}

/// Integer symbols from a single numeric column.
pub fn symbols(table: &Table, column: &str) -> Result<Vec<usize>> {
    let values = table.select(&[column.to_string()])?;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if *v >= 0.0 && v.fract() == 0.0 && *v < u32::MAX as f64 {
                Ok(*v as usize)
            } else {
                Err(CliError::Parse {
                    row: Some(i + 1),
                    column: Some(column.to_string()),
                    message: format!("{v} is not a non-negative integer symbol"),
                })
            }
        })
        .collect()
}

pub fn symbol_distribution(symbols: &[usize], vocabulary: usize) -> Result<DiscreteDistribution> {
    if let Some(s) = symbols.iter().find(|s| **s >= vocabulary) {
        return Err(CliError::Core(lvm_core::Error::Dimension(format!(
            "symbol {s} is outside the vocabulary of {vocabulary}"
        ))));
    }
    let mut counts = vec![0.0; vocabulary];
    for s in symbols {
        counts[*s] += 1.0;
    }
    Ok(DiscreteDistribution::from_weights(&counts)?)
}

/// The GLiM design matrix: data columns, then a column of ones if requested.
pub fn design(inputs: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        inputs.clone().insert_column(inputs.ncols(), 1.0)
    } else {
        inputs.clone()
    }
}

fn mean_of(values: Vec<f64>, n: usize) -> f64 {
    values.iter().sum::<f64>() / n as f64
}

fn per_row<F>(data: &Dataset, f: F) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> lvm_core::Result<f64> + Sync,
{
    let values = (0..data.n())
        .into_par_iter()
        .map(|i| f(&data.row(i)))
        .collect::<lvm_core::Result<Vec<_>>>()?;
    Ok(mean_of(values, data.n()))
}

pub fn gmm_loglik(params: &GmmParams, data: &Dataset) -> Result<f64> {
    let scorer = GmmScorer::new(params)?;
    if data.dim() != params.dim() {
        return Err(CliError::Core(lvm_core::Error::Dimension(format!(
            "data has dimension {}, model expects {}",
            data.dim(),
            params.dim()
        ))));
    }
    per_row(data, |x| Ok(scorer.log_marginal(x)))
}

pub fn fa_loglik(params: &FaParams, data: &Dataset) -> Result<f64> {
    let f = MvnFactor::new(&params.offset, &params.marginal_cov(), "factor marginal covariance")?;
    if data.dim() != params.dim() {
        return Err(CliError::Core(lvm_core::Error::Dimension(format!(
            "data has dimension {}, model expects {}",
            data.dim(),
            params.dim()
        ))));
    }
    per_row(data, |x| Ok(f.log_density(x)))
}

/// Laplace approximation to the marginal.
pub fn sc_loglik(params: &SparseCodingParams, data: &Dataset) -> Result<f64> {
    per_row(data, |x| sc_log_marginal(params, x))
}

/// Per time step, over all sequences.
pub fn hmm_loglik(params: &HmmParams, data: &SequenceDataset) -> Result<f64> {
    let values = data
        .sequences()
        .par_iter()
        .map(|s| Ok(hmm_filter(params, s)?.1.iter().sum::<f64>()))
        .collect::<lvm_core::Result<Vec<_>>>()?;
    Ok(mean_of(values, data.total_len()))
}

/// Per time step, over all sequences.
pub fn ssm_loglik(params: &SsmParams, data: &SequenceDataset, controls: Option<&[DMatrix<f64>]>) -> Result<f64> {
    let values = data
        .sequences()
        .par_iter()
        .enumerate()
        .map(|(n, s)| Ok(kalman_filter(params, s, controls.map(|c| &c[n]))?.2))
        .collect::<lvm_core::Result<Vec<_>>>()?;
    Ok(mean_of(values, data.total_len()))
}

/// Exact mean log-likelihood when the enumeration fits, `None` beyond it.
pub fn rbm_loglik(params: &RbmParams, batch: &BinaryBatch) -> Result<Option<f64>> {
    if params.visible() + params.hidden() > ENUMERATION_LIMIT {
        return Ok(None);
    }
    Ok(Some(-neg_log_likelihood(params, batch)?))
}

/// Summed over target columns, averaged over samples.
pub fn glim_loglik(family: &GlimFamily, x: &DMatrix<f64>, y: &DMatrix<f64>, weights: &DMatrix<f64>) -> Result<f64> {
    if weights.nrows() != y.ncols() || weights.ncols() != x.ncols() || x.nrows() != y.nrows() {
        return Err(CliError::Core(lvm_core::Error::Dimension(format!(
            "weights are {}x{}, inputs {}x{}, targets {}x{}",
            weights.nrows(),
            weights.ncols(),
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        ))));
    }
    Ok(-(0..y.ncols())
        .map(|j| glim_cross_entropy(family, x, &y.column(j).into_owned(), &weights.row(j).transpose()))
        .sum::<f64>())
}

pub fn ica_loglik(model: &IcaModel, data: &Dataset) -> Result<f64> {
    Ok(-ica_loss(model, data)?)
}

pub fn cat_loglik(model: &DiscreteLatentModel, data: &DiscreteDistribution) -> Result<f64> {
    Ok(-marginal_cross_entropy(model, data)?)
}

/// Rejects flags that the model kind cannot honour.
pub fn reject_init(args: &Args) -> Result<()> {
    if args.init.is_some() && matches!(args.model, Kind::Glim | Kind::Ica) {
        return Err(CliError::Usage(format!(
            "--init is not supported for --model {}",
            args.model.name()
        )));
    }
    Ok(())
}
