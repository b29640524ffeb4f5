//! The regularized reconstruction objective shared by every solver.

use ndarray::{ArrayView2, ArrayView3};

use crate::conv::reconstruct;
use crate::dictionary::Dictionary;
use crate::error::{contract, Result};
use crate::tensor::{ActivationSet, SignalSet};

/// Checks that signals, dictionary and activations describe the same problem.
pub fn check_shapes(x: &SignalSet, d: &Dictionary, z: &ActivationSet) -> Result<()> {
    if x.n_times() < d.atom_len() {
        return contract(format!(
            "signals have {} samples but atoms have {}",
            x.n_times(),
            d.atom_len()
        ));
    }
    if x.n_channels() != d.n_channels() {
        return contract(format!(
            "signals have {} channels but atoms have {}",
            x.n_channels(),
            d.n_channels()
        ));
    }
    let n_valid = x.n_times() - d.atom_len() + 1;
    if z.n_signals() != x.n_signals() || z.n_atoms() != d.n_atoms() || z.n_valid() != n_valid {
        return contract(format!(
            "activations {:?} do not match (N={}, K={}, T~={})",
            z.data().dim(),
            x.n_signals(),
            d.n_atoms(),
            n_valid
        ));
    }
    Ok(())
}

/// `sum_n 1/2 ||X^n - sum_k z_k^n * D_k||^2 + lambda sum_{n,k} ||z_k^n||_1`.
pub fn objective(x: &SignalSet, d: &Dictionary, z: &ActivationSet, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return contract(format!("lambda must be >= 0, got {lambda}"));
    }
    check_shapes(x, d, z)?;
    let atoms = d.materialize();
    let mut total = 0.0;
    for n in 0..x.n_signals() {
        total += signal_objective(x.signal(n), atoms.view(), z.signal(n), lambda)?;
    }
    Ok(total)
}

/// Objective of a single signal against materialized `K x P x L` atoms.
pub fn signal_objective(
    x: ArrayView2<'_, f64>,
    atoms: ArrayView3<'_, f64>,
    z: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<f64> {
    let recon = reconstruct(z, atoms)?;
    if recon.dim() != x.dim() {
        return contract(format!(
            "reconstruction {:?} does not match signal {:?}",
            recon.dim(),
            x.dim()
        ));
    }
    let sq: f64 = x
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.5 * sq + lambda * z.sum())
}
