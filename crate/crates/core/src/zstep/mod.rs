//! Sparse coding of each signal with the dictionary held fixed.
//!
//! The production solver is locally greedy coordinate descent ([`lgcd_solve`]);
//! [`fista_reference`] is an accelerated proximal-gradient solver kept as an
//! independent check on the same convex problem.

pub mod beta;
pub mod dtd;
mod fista;
mod lgcd;

use ndarray::{Array3, ArrayView2};
use serde::{Deserialize, Serialize};

pub use beta::{apply_update, coordinate_update, init_beta, BetaTable, CdState};
pub use dtd::{compute_dtd, compute_dtd_direct, DtdTable};
pub use fista::{fista_observed, fista_reference, FistaInfo};
pub use lgcd::{lgcd_solve, segment_bounds, solve_all, ZStepDiagnostics};

use crate::conv::{correlate_signal, correlate_signal_rank1};
use crate::dictionary::Dictionary;
use crate::error::{contract, CscError, Result};
use crate::tensor::SignalSet;

/// Number of time segments LGCD cycles through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segments {
    /// `M = floor(T~ / (2L - 1))`, at least 1.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZSolverConfig {
    pub lambda: f64,
    /// Stop once a full pass over the segments sees `max |z - z'| < tol`.
    pub tol: f64,
    /// Cap on accepted coordinate updates.
    pub max_updates: u64,
    pub segments: Segments,
}

impl ZSolverConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            tol: 1e-6,
            max_updates: 100_000_000,
            segments: Segments::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CscError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(CscError::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.segments == Segments::Fixed(0) {
            return Err(CscError::Config("segment count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dictionary-dependent data shared read-only by every per-signal solve.
#[derive(Debug, Clone)]
pub struct ZStepProblem<'a> {
    dictionary: &'a Dictionary,
    atoms: Array3<f64>,
    dtd: DtdTable,
}

impl<'a> ZStepProblem<'a> {
    pub fn new(dictionary: &'a Dictionary) -> Result<Self> {
        let dtd = compute_dtd(dictionary);
        if let Some(k) = dtd.norms_sq().iter().position(|n| !(*n > 0.0)) {
            return Err(CscError::DegenerateAtom(k));
        }
        Ok(Self {
            dictionary,
            atoms: dictionary.materialize(),
            dtd,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dictionary
    }

    pub fn atoms(&self) -> &Array3<f64> {
        &self.atoms
    }

    pub fn dtd(&self) -> &DtdTable {
        &self.dtd
    }
}

/// Largest `(D~_k ~* X)[t]` of one signal, floored at zero.
pub fn lambda_max_signal(x: ArrayView2<'_, f64>, d: &Dictionary) -> Result<f64> {
    let mut best = 0.0f64;
    for k in 0..d.n_atoms() {
        let corr = match d {
            Dictionary::Rank1 { u, v } => correlate_signal_rank1(u.row(k), v.row(k), x)?,
            Dictionary::Full { atoms } => correlate_signal(atoms.index_axis(ndarray::Axis(0), k), x)?,
        };
        best = corr.iter().copied().fold(best, f64::max);
    }
    Ok(best)
}

/// Smallest `lambda` for which `z = 0` solves the sparse coding problem of every signal.
///
/// Activations are nonnegative, so this is a one-sided maximum of the correlations.
pub fn lambda_max(x: &SignalSet, d: &Dictionary) -> Result<f64> {
    if x.n_channels() != d.n_channels() {
        return contract(format!(
            "signals have {} channels but atoms have {}",
            x.n_channels(),
            d.n_channels()
        ));
    }
    let mut best = 0.0f64;
    for n in 0..x.n_signals() {
        best = best.max(lambda_max_signal(x.signal(n), d)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_max_of_zero_signal_is_zero() {
        let d = Dictionary::rank1(Array2::ones((2, 3)), Array2::ones((2, 4))).unwrap();
        assert_eq!(lambda_max(&SignalSet::zeros(2, 3, 10), &d).unwrap(), 0.0);
    }

    #[test]
    fn lambda_max_is_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dictionary::rank1(
            Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0)),
            Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let data = ndarray::Array3::from_shape_fn((2, 3, 30), |_| rng.random_range(-1.0..1.0));
        let a = lambda_max(&SignalSet::new(data.clone()).unwrap(), &d).unwrap();
        let b = lambda_max(&SignalSet::new(data * 2.5).unwrap(), &d).unwrap();
        assert!((b - 2.5 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn config_validation() {
        assert!(ZSolverConfig::new(0.1).validate().is_ok());
        let mut c = ZSolverConfig::new(0.1);
        c.tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = ZSolverConfig::new(0.1);
        c.segments = Segments::Fixed(0);
        assert!(c.validate().is_err());
        assert!(ZSolverConfig::new(-1.0).validate().is_err());
    }
}
