use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ZStepProblem;
use crate::conv::{correlate_signal, reconstruct};
use crate::error::{contract, Result};
use crate::objective::signal_objective;

const POWER_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FistaInfo {
    pub iterations: usize,
    pub step: f64,
    pub restarts: usize,
    pub converged: bool,
    pub objective: f64,
}

/// `A^T r`: correlation of every atom with a `P x T` block, giving `K x T~`.
fn adjoint(problem: &ZStepProblem<'_>, r: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let atoms = problem.atoms();
    let (k, _, l) = atoms.dim();
    let mut out = Array2::zeros((k, r.ncols() - l + 1));
    for (kk, atom) in atoms.outer_iter().enumerate() {
        out.row_mut(kk).assign(&correlate_signal(atom, r)?);
    }
    Ok(out)
}

/// Upper estimate of `||A^T A||` where `A z = sum_k z_k * D_k`.
fn lipschitz(problem: &ZStepProblem<'_>, n_valid: usize) -> Result<f64> {
    let k = problem.atoms().dim().0;
    let dtd = problem.dtd();
    // Gershgorin on the banded Gram matrix is a hard upper bound
    let gershgorin = (0..k)
        .map(|a| (0..k).map(|b| dtd.table().slice(ndarray::s![a, b, ..]).iter().map(|v| v.abs()).sum::<f64>()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut w = Array2::from_elem((k, n_valid), 1.0 / ((k * n_valid) as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..POWER_ITERS {
        let aw = reconstruct(w.view(), problem.atoms().view())?;
        let mut next = adjoint(problem, aw.view())?;
        est = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if est == 0.0 {
            break;
        }
        next /= est;
        w = next;
    }
    Ok((1.05 * est).min(gershgorin).max(f64::MIN_POSITIVE))
}

/// Accelerated proximal gradient with gradient-based momentum restart.
///
/// The smooth part's gradient is `A^T (A z - x)`; the proximal step is the
/// nonnegative soft-threshold `max(z - step * lambda, 0)`. Stops when the
/// largest coordinate change falls below `tol`.
pub fn fista_reference(
    problem: &ZStepProblem<'_>,
    x: ArrayView2<'_, f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Array2<f64>, FistaInfo)> {
    let atoms = problem.atoms();
    if x.nrows() != atoms.dim().1 || x.ncols() < atoms.dim().2 {
        return contract(format!("signal {:?} incompatible with atoms {:?}", x.dim(), atoms.dim()));
    }
    let z0 = Array2::zeros((atoms.dim().0, x.ncols() - atoms.dim().2 + 1));
    fista_observed(problem, x, lambda, tol, max_iter, z0.view(), &mut |_, _| {})
}

/// [`fista_reference`] from a nonnegative start `z0`, calling `observe(iteration, z)` after each iteration.
pub fn fista_observed(
    problem: &ZStepProblem<'_>,
    x: ArrayView2<'_, f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    z0: ArrayView2<'_, f64>,
    observe: &mut dyn FnMut(usize, ArrayView2<'_, f64>),
) -> Result<(Array2<f64>, FistaInfo)> {
    let atoms = problem.atoms();
    let (k, p, l) = atoms.dim();
    if x.nrows() != p || x.ncols() < l {
        return contract(format!("signal {:?} incompatible with atoms {:?}", x.dim(), atoms.dim()));
    }
    if !(lambda >= 0.0) {
        return contract(format!("lambda must be >= 0, got {lambda}"));
    }
    let n_valid = x.ncols() - l + 1;
    let step = 1.0 / lipschitz(problem, n_valid)?;

    if z0.dim() != (k, n_valid) || z0.iter().any(|v| !(*v >= 0.0)) {
        return contract(format!("start point {:?} must be nonnegative with shape {:?}", z0.dim(), (k, n_valid)));
    }
    let mut z = z0.to_owned();
    let mut y = z.clone();
    let mut theta = 1.0f64;
    let mut restarts = 0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let mut resid = reconstruct(y.view(), atoms.view())?;
        resid -= &x;
        let grad = adjoint(problem, resid.view())?;
        let mut z_next = &y - &(grad * step);
        z_next.mapv_inplace(|v| (v - step * lambda).max(0.0));

        let diff = &z_next - &z;
        let change = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // restart when the momentum direction opposes the last step
        let restart = (&y - &z_next).iter().zip(diff.iter()).map(|(a, b)| a * b).sum::<f64>() > 0.0;
        let theta_next = if restart {
            restarts += 1;
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt())
        };
        let momentum = if restart { 0.0 } else { (theta - 1.0) / theta_next };
        y = &z_next + &(diff * momentum);
        theta = theta_next;
        z = z_next;
        observe(it, z.view());
        if change < tol {
            converged = true;
            break;
        }
    }
    let objective = signal_objective(x, atoms.view(), z.view(), lambda)?;
    debug_assert!(z.iter().all(|v| *v >= 0.0));
    Ok((
        z,
        FistaInfo {
            iterations,
            step,
            restarts,
            converged,
            objective,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use crate::zstep::lambda_max_signal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem_dict(seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut atoms = ndarray::Array3::from_shape_fn((2, 2, 5), |_| rng.random_range(-1.0..1.0));
        for mut a in atoms.outer_iter_mut() {
            let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            a /= n;
        }
        Dictionary::full(atoms).unwrap()
    }

    #[test]
    fn zero_above_lambda_max() {
        let d = problem_dict(1);
        let problem = ZStepProblem::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((2, 40), |_| rng.random_range(-1.0..1.0));
        let lmax = lambda_max_signal(x.view(), &d).unwrap();
        let (z, info) = fista_reference(&problem, x.view(), lmax * 1.001, 1e-10, 1000).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(info.converged);
    }

    #[test]
    fn noiseless_instance_is_fit_as_lambda_vanishes() {
        let d = problem_dict(2);
        let problem = ZStepProblem::new(&d).unwrap();
        let mut z_true = Array2::zeros((2, 36));
        z_true[[0, 3]] = 1.0;
        z_true[[1, 20]] = 0.6;
        z_true[[0, 30]] = 0.8;
        let x = reconstruct(z_true.view(), problem.atoms().view()).unwrap();
        let energy = x.iter().map(|v| v * v).sum::<f64>();
        let mut last = f64::INFINITY;
        for &lambda in &[1e-2, 1e-3, 1e-4] {
            let (z, _) = fista_reference(&problem, x.view(), lambda, 1e-12, 20_000).unwrap();
            let r = reconstruct(z.view(), problem.atoms().view()).unwrap();
            let err = (&r - &x).iter().map(|v| v * v).sum::<f64>() / energy;
            assert!(err <= last + 1e-15);
            last = err;
        }
        assert!(last < 1e-6, "relative error {last}");
    }

    #[test]
    fn step_is_below_inverse_spectral_norm() {
        let d = problem_dict(3);
        let problem = ZStepProblem::new(&d).unwrap();
        let lip = lipschitz(&problem, 30).unwrap();
        // Rayleigh quotient of a random vector never exceeds the true norm
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let w = Array2::from_shape_fn((2, 30), |_| rng.random_range(-1.0..1.0));
            let aw = reconstruct(w.view(), problem.atoms().view()).unwrap();
            let rq = aw.iter().map(|v| v * v).sum::<f64>() / w.iter().map(|v| v * v).sum::<f64>();
            assert!(rq <= lip);
        }
    }
}
