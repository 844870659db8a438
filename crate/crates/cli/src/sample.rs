use crate::args::Args;
use crate::common::*;
use crate::data::{float_rows, write_csv};
use crate::error::{CliError, Result};
use crate::infer::response_mean;
use crate::model_file::*;
use lvm_core::glm::GlimFamily;
use lvm_core::ica::Nonlinearity;
use lvm_core::rbm::gibbs_sweep;
use lvm_core::rng::{substream, StreamRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

pub fn run(args: &Args) -> Result<Vec<u8>> {
    let n = args
        .n
        .ok_or_else(|| CliError::Usage("--n (number of draws) is required".into()))?;
    let path = require_params(args)?;
    let mut rng = substream(args.seed, "sample", 0);
    let (header, rows) = match args.model {
        Kind::Gmm => {
            let file: ModelFile<GmmPayload> = read_model(path, Kind::Gmm)?;
            let p = file.params.params()?;
            let rows: Vec<_> = (0..n).map(|_| to_vec(&p.sample(&mut rng).1)).collect();
            (file.columns, float_rows(&rows))
        }
        Kind::Fa => {
            let file: ModelFile<FaPayload> = read_model(path, Kind::Fa)?;
            let p = file.params.params()?;
            let rows: Vec<_> = (0..n).map(|_| to_vec(&p.sample(&mut rng).1)).collect();
            (file.columns, float_rows(&rows))
        }
        Kind::Sc => {
            let file: ModelFile<ScPayload> = read_model(path, Kind::Sc)?;
            let p = file.params.params()?;
            let rows: Vec<_> = (0..n).map(|_| to_vec(&p.sample(&mut rng).1)).collect();
            (file.columns, float_rows(&rows))
        }
        Kind::Hmm => {
            let file: ModelFile<HmmPayload> = read_model(path, Kind::Hmm)?;
            let p = file.params.params()?;
            let seqs = (0..args.sequences).map(|_| p.sample(n, &mut rng).1).collect();
            sequences(file.columns, seqs)
        }
        Kind::Ssm => {
            let file: ModelFile<SsmPayload> = read_model(path, Kind::Ssm)?;
            let p = file.params.params()?;
            let seqs = if file.controls.is_empty() {
                (0..args.sequences)
                    .map(|_| Ok(p.sample(n, None, &mut rng)?.1))
                    .collect::<lvm_core::Result<Vec<_>>>()?
            } else {
                // One draw per control sequence in --data.
                let table = require_data(args)?;
                let (_, controls) = table.sequences(&file.controls)?;
                controls
                    .iter()
                    .map(|u| Ok(p.sample(n, Some(u), &mut rng)?.1))
                    .collect::<lvm_core::Result<Vec<_>>>()?
            };
            sequences(file.columns, seqs)
        }
        Kind::Rbm => {
            let file: ModelFile<RbmPayload> = read_model(path, Kind::Rbm)?;
            let p = file.params.params()?;
            let rows: Vec<_> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut chain = substream(args.seed, "rbm-chain", i as u64);
                    let mut v = DVector::from_fn(p.visible(), |_, _| f64::from(u8::from(chain.random::<bool>())));
                    for _ in 0..args.gibbs_sweeps {
                        v = gibbs_sweep(&p, &v, &mut chain);
                    }
                    to_vec(&v)
                })
                .collect();
            (file.columns, float_rows(&rows))
        }
        Kind::Glim => glim_draws(args, n, &mut rng)?,
        Kind::Ica => {
            let file: ModelFile<IcaPayload> = read_model(path, Kind::Ica)?;
            let m = file.params.model()?;
            let mixing =
                m.unmixing.clone().try_inverse().ok_or_else(|| {
                    CliError::Core(lvm_core::Error::Singularity("unmixing matrix has no inverse".into()))
                })?;
            let rows: Vec<_> = (0..n)
                .map(|_| {
                    let s = DVector::from_fn(m.dim(), |_, _| source_draw(m.nonlinearity, &mut rng));
                    to_vec(&(&mixing * s))
                })
                .collect();
            (file.columns, float_rows(&rows))
        }
        Kind::Cat => {
            let file: ModelFile<CatPayload> = read_model(path, Kind::Cat)?;
            let m = file.params.model()?;
            let rows = (0..n).map(|_| vec![m.sample(&mut rng).1.to_string()]).collect();
            (file.columns, rows)
        }
    };
    emit(args.out.as_deref(), write_csv(&header, &rows))
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// A draw from the source density the nonlinearity is the cdf of.
fn source_draw(g: Nonlinearity, rng: &mut StreamRng) -> f64 {
    match g {
        Nonlinearity::Logistic => {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            (u / (1.0 - u)).ln()
        }
        Nonlinearity::GaussianCdf => rng.sample(StandardNormal),
    }
}

fn sequences(columns: Vec<String>, seqs: Vec<DMatrix<f64>>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![crate::data::DEFAULT_SEQUENCE_COLUMN.to_string()];
    header.extend(columns);
    let mut rows = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        for r in s.row_iter() {
            let mut row = vec![i.to_string()];
            row.extend(r.iter().map(|x| crate::data::format_float(*x)));
            rows.push(row);
        }
    }
    (header, rows)
}

/// Responses drawn at the inputs of `--data`, cycling through its rows.
fn glim_draws(args: &Args, n: usize, rng: &mut StreamRng) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file: ModelFile<GlimPayload> = read_model(require_params(args)?, Kind::Glim)?;
    let family = file.params.family()?;
    let weights = file.params.weights()?;
    let table = require_data(args)?;
    let x = design(&table.select(&file.columns)?, file.params.intercept);
    if weights.ncols() != x.ncols() {
        return Err(lvm_core::Error::Dimension(format!(
            "weights expect {} inputs, design has {}",
            weights.ncols(),
            x.ncols()
        ))
        .into());
    }
    if n > 0 && x.nrows() == 0 {
        return Err(CliError::Usage("--data has no rows to condition on".into()));
    }
    let s = &x * weights.transpose();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row = s
            .row(i % x.nrows())
            .iter()
            .map(|s| response_draw(&family, *s, rng))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((file.targets, float_rows(&rows)))
}

fn response_draw(family: &GlimFamily, s: f64, rng: &mut StreamRng) -> Result<f64> {
    let invalid = |e: String| CliError::Core(lvm_core::Error::InvalidDistribution(e));
    Ok(match family {
        GlimFamily::Gaussian => s + rng.sample::<f64, _>(StandardNormal),
        GlimFamily::BernoulliLogit => {
            let p = response_mean(family, s);
            f64::from(u8::from(
                Bernoulli::new(p).map_err(|e| invalid(e.to_string()))?.sample(rng),
            ))
        }
        GlimFamily::PoissonLog => {
            let rate = response_mean(family, s);
            if rate == 0.0 {
                0.0
            } else {
                Poisson::new(rate).map_err(|e| invalid(e.to_string()))?.sample(rng)
            }
        }
        GlimFamily::GammaShapeLog { scale } => Gamma::new(s.exp(), *scale)
            .map_err(|e| invalid(e.to_string()))?
            .sample(rng),
    })
}
