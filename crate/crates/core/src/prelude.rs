// Float supplies libm-backed math when std is absent from the crate graph.
// When std is present its inherent f64 methods win, so the import is allowed
// to go unused.
#[allow(unused_imports)]
pub(crate) use num_traits::Float;

pub(crate) use crate::error::{dim_err, singular, Error, Result};
pub(crate) use alloc::vec;
pub(crate) use alloc::vec::Vec;
pub(crate) use nalgebra::{DMatrix, DVector};
