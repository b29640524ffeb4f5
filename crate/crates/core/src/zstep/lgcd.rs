use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::beta::CdState;
use super::{Segments, ZSolverConfig, ZStepProblem};
use crate::error::{contract, CscError, Result};
use crate::objective::signal_objective;
use crate::par;
use crate::tensor::{ActivationSet, SignalSet};

/// Per-signal solve record, emitted as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZStepDiagnostics {
    pub signal: usize,
    pub n_segments: usize,
    pub segment_visits: u64,
    pub n_updates: u64,
    pub touched: u64,
    pub max_touched_per_update: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub init_seconds: f64,
    pub loop_seconds: f64,
    pub wall_seconds: f64,
}

/// Contiguous `[start, end)` blocks partitioning `[0, n_valid)`; the last block takes the remainder.
pub fn segment_bounds(n_valid: usize, atom_len: usize, segments: Segments) -> Vec<(usize, usize)> {
    let m = match segments {
        Segments::Auto => n_valid / (2 * atom_len - 1),
        Segments::Fixed(m) => m,
    }
    .clamp(1, n_valid.max(1));
    let size = n_valid / m;
    (0..m)
        .map(|i| (i * size, if i + 1 == m { n_valid } else { (i + 1) * size }))
        .collect()
}

/// Locally greedy coordinate descent on one `P x T` signal, warm-started from `z0`.
pub fn lgcd_solve(
    problem: &ZStepProblem<'_>,
    x: ArrayView2<'_, f64>,
    config: &ZSolverConfig,
    z0: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, ZStepDiagnostics)> {
    config.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CscError::NonFinite("signal contains NaN or infinite samples".into()));
    }
    let d = problem.dictionary();
    if x.nrows() != d.n_channels() {
        return contract(format!(
            "signal has {} channels but atoms have {}",
            x.nrows(),
            d.n_channels()
        ));
    }
    let start = Instant::now();
    let mut state = CdState::new(x, d, problem.dtd(), z0, config.lambda)?;
    let init_seconds = start.elapsed().as_secs_f64();

    let bounds = segment_bounds(state.n_valid(), d.atom_len(), config.segments);
    let loop_start = Instant::now();
    let mut visits = 0u64;
    let mut converged = false;
    'outer: loop {
        let mut pass_gap = 0.0f64;
        for &(lo, hi) in &bounds {
            visits += 1;
            let (k, t, gap, cand) = state.best_in_range(lo, hi);
            pass_gap = pass_gap.max(gap);
            if gap > 0.0 {
                state.update(k, t, cand);
                if state.n_updates() >= config.max_updates {
                    break 'outer;
                }
            }
        }
        if pass_gap < config.tol {
            converged = true;
            break;
        }
    }
    let loop_seconds = loop_start.elapsed().as_secs_f64();

    let diag_base = (state.n_updates(), state.touched(), state.max_touched());
    let z = state.into_z();
    let final_objective = signal_objective(x, problem.atoms().view(), z.view(), config.lambda)?;
    Ok((
        z,
        ZStepDiagnostics {
            signal: 0,
            n_segments: bounds.len(),
            segment_visits: visits,
            n_updates: diag_base.0,
            touched: diag_base.1,
            max_touched_per_update: diag_base.2,
            converged,
            final_objective,
            init_seconds,
            loop_seconds,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Runs [`lgcd_solve`] on every signal, warm-starting from and overwriting `z`.
///
/// Signals are independent; results do not depend on `parallel` or thread count.
pub fn solve_all(
    problem: &ZStepProblem<'_>,
    x: &SignalSet,
    config: &ZSolverConfig,
    z: &mut ActivationSet,
    parallel: bool,
) -> Result<Vec<ZStepDiagnostics>> {
    if z.n_signals() != x.n_signals() {
        return contract(format!(
            "{} activation blocks for {} signals",
            z.n_signals(),
            x.n_signals()
        ));
    }
    let results = {
        let z_ref = &*z;
        par::map_indexed(x.n_signals(), parallel, |n| {
            lgcd_solve(problem, x.signal(n), config, z_ref.signal(n))
        })
    };
    let mut diags = Vec::with_capacity(results.len());
    for (n, r) in results.into_iter().enumerate() {
        let (zn, mut diag) = r?;
        z.set_signal(n, zn.view())?;
        diag.signal = n;
        diags.push(diag);
    }
    Ok(diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use crate::zstep::{fista_reference, lambda_max_signal};
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn segments_partition_the_valid_range() {
        let b = segment_bounds(100, 4, Segments::Auto);
        assert_eq!(b.len(), 100 / 7);
        assert_eq!(b[0].0, 0);
        assert_eq!(b.last().unwrap().1, 100);
        for w in b.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert_eq!(segment_bounds(5, 16, Segments::Auto), vec![(0, 5)]);
        assert_eq!(segment_bounds(3, 2, Segments::Fixed(10)).len(), 3);
    }

    fn unit_rank1(rng: &mut ChaCha8Rng, k: usize, p: usize, l: usize) -> Dictionary {
        let mut u = Array2::from_shape_fn((k, p), |_| rng.random_range(-1.0..1.0));
        let mut v = Array2::from_shape_fn((k, l), |_| rng.random_range(-1.0..1.0));
        for mut r in u.outer_iter_mut().chain(v.outer_iter_mut()) {
            let r2: f64 = r.iter().map(|x| x * x).sum();
            let n = r2.sqrt();
            r /= n;
        }
        Dictionary::rank1(u, v).unwrap()
    }

    #[test]
    fn single_spike_is_recovered_with_shrinkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = unit_rank1(&mut rng, 1, 3, 6);
        let problem = ZStepProblem::new(&d).unwrap();
        let n_valid = 40;
        let t0 = 17;
        let mut z_true = Array2::zeros((1, n_valid));
        z_true[[0, t0]] = 1.0;
        let x = crate::conv::reconstruct(z_true.view(), problem.atoms().view()).unwrap();
        let lambda = 0.05;
        let mut cfg = ZSolverConfig::new(lambda);
        cfg.tol = 1e-12;
        let (z, diag) = lgcd_solve(&problem, x.view(), &cfg, Array2::zeros((1, n_valid)).view()).unwrap();
        assert!(diag.converged);
        // residual at (1 - lambda) e_t0 is lambda * d, whose correlation with d is at most lambda
        // at every shift, so this point satisfies the optimality conditions
        assert!((z[[0, t0]] - (1.0 - lambda)).abs() < 1e-10);
        assert_eq!(z.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn above_lambda_max_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = unit_rank1(&mut rng, 2, 3, 5);
        let problem = ZStepProblem::new(&d).unwrap();
        let x = Array2::from_shape_fn((3, 64), |_| rng.random_range(-1.0..1.0));
        let lmax = lambda_max_signal(x.view(), &d).unwrap();
        let (z, _) = lgcd_solve(&problem, x.view(), &ZSolverConfig::new(lmax), Array2::zeros((2, 60)).view()).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn agrees_with_proximal_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = unit_rank1(&mut rng, 3, 4, 16);
        let problem = ZStepProblem::new(&d).unwrap();
        let x = Array2::from_shape_fn((4, 512), |_| rng.random_range(-1.0..1.0));
        let lambda = 0.1 * lambda_max_signal(x.view(), &d).unwrap();
        let mut cfg = ZSolverConfig::new(lambda);
        cfg.tol = 1e-10;
        let (_, diag) = lgcd_solve(&problem, x.view(), &cfg, Array2::zeros((3, 497)).view()).unwrap();
        let (_, info) = fista_reference(&problem, x.view(), lambda, 1e-12, 50_000).unwrap();
        let rel = (diag.final_objective - info.objective).abs() / info.objective;
        assert!(rel < 1e-6, "lgcd {} fista {}", diag.final_objective, info.objective);
    }

    #[test]
    fn rejects_non_finite_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = unit_rank1(&mut rng, 1, 2, 3);
        let problem = ZStepProblem::new(&d).unwrap();
        let mut x = Array2::zeros((2, 10));
        x[[1, 4]] = f64::NAN;
        let r = lgcd_solve(&problem, x.view(), &ZSolverConfig::new(0.1), Array2::zeros((1, 8)).view());
        assert!(matches!(r, Err(CscError::NonFinite(_))));
    }

    #[test]
    fn touched_entries_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = unit_rank1(&mut rng, 2, 2, 8);
        let problem = ZStepProblem::new(&d).unwrap();
        let x = Array2::from_shape_fn((2, 207), |_| rng.random_range(-1.0..1.0));
        let (z, diag) = lgcd_solve(&problem, x.view(), &ZSolverConfig::new(0.05), Array2::zeros((2, 200)).view()).unwrap();
        assert!(diag.max_touched_per_update <= 2 * 15);
        assert!(diag.n_updates > 0);
        assert!(z.iter().all(|v| *v >= 0.0));
        let _ = Array1::<f64>::zeros(1);
    }

    #[test]
    fn warm_start_does_not_increase_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = unit_rank1(&mut rng, 2, 3, 6);
        let problem = ZStepProblem::new(&d).unwrap();
        let x = Array2::from_shape_fn((3, 105), |_| rng.random_range(-1.0..1.0));
        let z0 = Array2::from_shape_fn((2, 100), |_| if rng.random_bool(0.1) { 0.5 } else { 0.0 });
        let before = signal_objective(x.view(), problem.atoms().view(), z0.view(), 0.1).unwrap();
        let (_, diag) = lgcd_solve(&problem, x.view(), &ZSolverConfig::new(0.1), z0.view()).unwrap();
        assert!(diag.final_objective <= before);
    }
}
