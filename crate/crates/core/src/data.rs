//! Observed data containers.

use crate::prelude::*;

/// I.i.d. samples, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
}

impl Dataset {
    /// Rejects empty and non-finite data.
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Precondition(alloc::format!(
                "dataset is {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        crate::linalg::check_finite(&x, "dataset")?;
        Ok(Self { x })
    }

    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(dim_err!("rows have differing lengths"));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn rows(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.x.row_iter().map(|r| r.transpose())
    }

    pub fn mean(&self) -> DVector<f64> {
        crate::linalg::row_mean(&self.x)
    }

    /// Maximum-likelihood covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        crate::linalg::row_covariance(&self.x)
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(dim_err!("data has dimension {}, model expects {d}", self.dim()));
        }
        Ok(())
    }
}

/// Several sequences of vectors sharing one dimension, one time step per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    sequences: Vec<DMatrix<f64>>,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = sequences.first() else {
            return Err(Error::Precondition("no sequences".into()));
        };
        let d = first.ncols();
        for (i, s) in sequences.iter().enumerate() {
            if s.nrows() == 0 {
                return Err(Error::Precondition(alloc::format!("sequence {i} is empty")));
            }
            if s.ncols() != d {
                return Err(dim_err!("sequence {i} has dimension {}, expected {d}", s.ncols()));
            }
            crate::linalg::check_finite(s, "sequence")?;
        }
        Ok(Self { sequences })
    }

    pub fn single(seq: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![seq])
    }

    pub fn sequences(&self) -> &[DMatrix<f64>] {
        &self.sequences
    }

    pub fn dim(&self) -> usize {
        self.sequences[0].ncols()
    }

    /// Total number of time steps across sequences.
    pub fn total_len(&self) -> usize {
        self.sequences.iter().map(|s| s.nrows()).sum()
    }

    /// Every time step of every sequence as one i.i.d.-style dataset.
    pub fn pooled(&self) -> Dataset {
        let d = self.dim();
        let mut x = DMatrix::zeros(self.total_len(), d);
        let mut r = 0;
        for s in &self.sequences {
            x.rows_mut(r, s.nrows()).copy_from(s);
            r += s.nrows();
        }
        Dataset { x }
    }
}
