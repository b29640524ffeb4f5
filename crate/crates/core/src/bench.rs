//! Timing studies: cost of each step as the channel count grows, and
//! convergence curves of coordinate-descent strategies on the Z-step.
//!
//! Everything here runs single-threaded. Only ratios and orderings of the
//! measured times are meaningful across machines.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dstep::{compute_phi, compute_psi, grad_all_atoms, PhiPsiCache};
use crate::error::{CscError, Result};
use crate::objective::signal_objective;
use crate::simulate::{make_truth, AtomKind, SimConfig};
use crate::tensor::{ActivationSet, SignalSet};
use crate::zstep::{fista_observed, lambda_max, segment_bounds, solve_all, CdState, Segments, ZSolverConfig, ZStepProblem};

/// Order statistics of repeated timings, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub reps: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(samples: &[f64]) -> Stats {
    assert!(!samples.is_empty(), "no samples to summarize");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
    Stats {
        reps: s.len(),
        median: quantile(&s, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        min: s[0],
        max: s[s.len() - 1],
    }
}

/// Median cost of timing an empty section.
pub fn timer_overhead(samples: usize) -> f64 {
    let mut v = Vec::with_capacity(samples.max(1));
    for _ in 0..samples.max(1) {
        let t = Instant::now();
        v.push(t.elapsed().as_secs_f64());
    }
    summarize(&v).median
}

/// Runs `f` `warmup` times untimed, then `reps` times timed.
pub fn time_reps<R>(warmup: usize, reps: usize, mut f: impl FnMut() -> R) -> (Vec<f64>, Vec<R>) {
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut times = Vec::with_capacity(reps);
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let r = std::hint::black_box(f());
        times.push(t.elapsed().as_secs_f64());
        out.push(r);
    }
    (times, out)
}

/// Order-sensitive fingerprint of solver inputs.
pub fn fingerprint(parts: &[&[f64]]) -> String {
    let mut h = DefaultHasher::new();
    for part in parts {
        part.len().hash(&mut h);
        for v in *part {
            v.to_bits().hash(&mut h);
        }
    }
    format!("{:016x}", h.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub step: String,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub reps: usize,
    pub median_s: f64,
    pub q1_s: f64,
    pub q3_s: f64,
    pub iqr_s: f64,
    /// Median divided by the median of the same step at the smallest `P`.
    pub normalized: f64,
    pub n_updates: u64,
    pub touched: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub timer_overhead_s: f64,
    pub measurements: Vec<Measurement>,
}

impl BenchReport {
    pub fn find(&self, step: &str, p: usize) -> Option<&Measurement> {
        self.measurements.iter().find(|m| m.step == step && m.p == p)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for m in &self.measurements {
            out.serialize(m).map_err(|e| CscError::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const STEP_ZSTEP: &str = "zstep_total";
pub const STEP_UPDATE: &str = "zstep_per_update";
pub const STEP_GRAD: &str = "dstep_gradient";
pub const STEP_PHI: &str = "phi_precompute";
pub const STEP_PSI: &str = "psi_precompute";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingConfig {
    pub channels: Vec<usize>,
    pub n_signals: usize,
    pub n_atoms: usize,
    pub atom_len: usize,
    pub n_valid: usize,
    pub density: f64,
    pub lambda_fraction: f64,
    /// Z-step stopping tolerance.
    pub z_tol: f64,
    pub reps: usize,
    pub warmup: usize,
    /// Gradient evaluations per timed repetition; one is too short to time reliably.
    pub grad_evals: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            channels: vec![1, 2, 4, 8, 16, 32, 64],
            n_signals: 2,
            n_atoms: 5,
            atom_len: 32,
            n_valid: 2000,
            density: 0.05,
            lambda_fraction: 0.005,
            z_tol: 1e-4,
            reps: 5,
            warmup: 1,
            grad_evals: 50,
            seed: 0,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CscError::Config(m.to_string()));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channel list must be non-empty and positive");
        }
        if self.reps < 3 {
            return bad("at least 3 repetitions are needed");
        }
        if self.grad_evals == 0 {
            return bad("grad_evals must be >= 1");
        }
        if !(self.lambda_fraction > 0.0) {
            return bad("lambda fraction must be > 0");
        }
        if !(self.z_tol > 0.0) {
            return bad("z_tol must be > 0");
        }
        Ok(())
    }
}

/// Smooth random temporal patterns: windowed sums of a few sinusoids.
fn smooth_patterns(k: usize, l: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let f1 = rng.random_range(0.5..3.0);
            let f2 = rng.random_range(0.5..3.0);
            let ph = rng.random_range(0.0..std::f64::consts::TAU);
            (0..l)
                .map(|i| {
                    let s = i as f64 / l as f64;
                    let w = (std::f64::consts::PI * s).sin();
                    w * ((std::f64::consts::TAU * f1 * s + ph).sin() + 0.5 * (std::f64::consts::TAU * f2 * s).cos())
                })
                .collect()
        })
        .collect()
}

/// Planted data with the largest requested channel count.
fn scaling_instance(cfg: &ScalingConfig) -> Result<(SignalSet, Dictionary, ActivationSet)> {
    let p_max = *cfg.channels.iter().max().expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sim = SimConfig {
        n_signals: cfg.n_signals,
        n_channels: p_max,
        n_atoms: cfg.n_atoms,
        atom_len: cfg.atom_len,
        n_valid: cfg.n_valid,
        density: cfg.density,
        noise_sigma: 0.01,
        atom_kind: AtomKind::Custom(smooth_patterns(cfg.n_atoms, cfg.atom_len, &mut rng)),
        seed: cfg.seed,
        ..Default::default()
    };
    let truth = make_truth(&sim)?;
    Ok((truth.signals, truth.dictionary, truth.activations))
}

/// Times the Z-step, its per-update cost, the D-step gradient and the Phi/Psi
/// precomputations on the same planted signals truncated to each channel count.
///
/// Phi, Psi and the gradient use the planted activations, identical for every `P`,
/// so only the channel count changes between rows.
pub fn bench_scaling_channels(cfg: &ScalingConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let (x_full, d_full, z_true) = scaling_instance(cfg)?;
    let (k, l) = (cfg.n_atoms, cfg.atom_len);
    let t_len = x_full.n_times();
    let mut channels = cfg.channels.clone();
    channels.sort_unstable();
    channels.dedup();

    let mut rows: Vec<Measurement> = Vec::new();
    let mut push = |step: &str, p: usize, samples: &[f64], n_updates: u64, touched: u64| {
        let s = summarize(samples);
        rows.push(Measurement {
            step: step.to_string(),
            p,
            k,
            l,
            t: t_len,
            reps: s.reps,
            median_s: s.median,
            q1_s: s.q1,
            q3_s: s.q3,
            iqr_s: s.iqr,
            normalized: f64::NAN,
            n_updates,
            touched,
        });
    };

    for &p in &channels {
        let x = x_full.truncate_channels(p)?;
        let d = d_full.truncate_channels(p)?;
        let lambda = cfg.lambda_fraction * lambda_max(&x, &d)?;
        let mut zc = ZSolverConfig::new(lambda);
        zc.tol = cfg.z_tol;

        let (times, outs) = time_reps(cfg.warmup, cfg.reps, || -> Result<_> {
            let problem = ZStepProblem::new(&d)?;
            let mut z = ActivationSet::zeros(x.n_signals(), k, x.n_times() - l + 1);
            let diags = solve_all(&problem, &x, &zc, &mut z, false)?;
            Ok(diags)
        });
        let mut per_update = Vec::new();
        let (mut updates, mut touched) = (0, 0);
        for diags in outs {
            let diags = diags?;
            let loop_s: f64 = diags.iter().map(|g| g.loop_seconds).sum();
            updates = diags.iter().map(|g| g.n_updates).sum::<u64>();
            touched = diags.iter().map(|g| g.touched).sum::<u64>();
            per_update.push(loop_s / updates.max(1) as f64);
        }
        push(STEP_ZSTEP, p, &times, updates, touched);
        push(STEP_UPDATE, p, &per_update, updates, touched);

        let (phi_t, phis) = time_reps(cfg.warmup, cfg.reps, || compute_phi(&x, &z_true, l, false));
        let (psi_t, psis) = time_reps(cfg.warmup, cfg.reps, || compute_psi(&z_true, l, false));
        push(STEP_PHI, p, &phi_t, 0, 0);
        push(STEP_PSI, p, &psi_t, 0, 0);

        let cache = PhiPsiCache {
            phi: phis.into_iter().next().expect("reps >= 3")?,
            psi: psis.into_iter().next().expect("reps >= 3")?,
        };
        let (grad_t, grads) = time_reps(cfg.warmup, cfg.reps, || {
            let mut last = None;
            for _ in 0..cfg.grad_evals {
                last = Some(grad_all_atoms(&d, &cache));
            }
            last.expect("grad_evals >= 1")
        });
        for g in grads {
            g?;
        }
        let per_eval: Vec<f64> = grad_t.iter().map(|t| t / cfg.grad_evals as f64).collect();
        push(STEP_GRAD, p, &per_eval, 0, 0);
    }

    let base_p = channels[0];
    let base: Vec<(String, f64)> = rows
        .iter()
        .filter(|m| m.p == base_p)
        .map(|m| (m.step.clone(), m.median_s))
        .collect();
    for m in rows.iter_mut() {
        let b = base.iter().find(|(s, _)| *s == m.step).map(|(_, v)| *v).unwrap_or(f64::NAN);
        m.normalized = m.median_s / b;
    }
    Ok(BenchReport {
        scenario: "scaling-p".into(),
        timer_overhead_s: timer_overhead(1000),
        measurements: rows,
    })
}

/// Z-step solvers compared on identical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Greedy within one segment of length about `2L - 1` per iteration.
    Lgcd,
    /// Every coordinate in order.
    Cyclic,
    /// Uniformly drawn coordinates.
    Randomized,
    /// Greedy over the whole signal.
    Greedy,
    /// Accelerated proximal gradient.
    Fista,
}

impl Solver {
    pub const ALL: [Solver; 5] = [Solver::Lgcd, Solver::Cyclic, Solver::Randomized, Solver::Greedy, Solver::Fista];

    pub fn name(self) -> &'static str {
        match self {
            Solver::Lgcd => "lgcd",
            Solver::Cyclic => "cyclic",
            Solver::Randomized => "randomized",
            Solver::Greedy => "greedy",
            Solver::Fista => "fista",
        }
    }

    pub fn parse(s: &str) -> Option<Solver> {
        Solver::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Time excluding paused sections (objective bookkeeping that is not part of a solver).
struct Clock {
    start: Instant,
    paused: Duration,
}

impl Clock {
    fn new() -> Self {
        Clock {
            start: Instant::now(),
            paused: Duration::ZERO,
        }
    }

    fn now(&self) -> f64 {
        (self.start.elapsed() - self.paused).as_secs_f64()
    }

    fn pause<R>(&mut self, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.paused += t.elapsed();
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub solver: Solver,
    pub lambda_fraction: f64,
    pub init: usize,
    pub input_hash: String,
    /// `(seconds, objective)` points, thinned for the report.
    pub curve: Vec<(f64, f64)>,
    pub final_objective: f64,
    pub iterations: u64,
    pub updates: u64,
    pub seconds: f64,
    pub per_iteration_s: f64,
    pub converged: bool,
    pub diverged: bool,
    pub error: Option<String>,
    /// Seconds until `(f - f*) <= precision * |f*|`, `f*` the best value over all runs.
    pub time_to_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub solvers: Vec<Solver>,
    pub lambda_fractions: Vec<f64>,
    pub n_inits: usize,
    /// Stop on a pass whose largest coordinate change is below this.
    pub tol: f64,
    pub max_updates: u64,
    pub fista_max_iter: usize,
    pub precision: f64,
    pub max_curve_points: usize,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            solvers: Solver::ALL.to_vec(),
            lambda_fractions: vec![0.005, 0.05],
            n_inits: 3,
            tol: 1e-8,
            max_updates: 50_000_000,
            fista_max_iter: 20_000,
            precision: 1e-3,
            max_curve_points: 200,
            seed: 0,
        }
    }
}

struct RawRun {
    curve: Vec<(f64, f64)>,
    iterations: u64,
    updates: u64,
    seconds: f64,
    converged: bool,
    z: Array2<f64>,
}

/// Coordinate descent with a pluggable selection rule, tracking the objective
/// incrementally from the closed-form update.
fn run_cd(
    solver: Solver,
    problem: &ZStepProblem<'_>,
    x: ArrayView2<'_, f64>,
    lambda: f64,
    z0: ArrayView2<'_, f64>,
    cfg: &ConvergenceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RawRun> {
    let d = problem.dictionary();
    let mut clock = Clock::new();
    let mut state = CdState::new(x, d, problem.dtd(), z0, lambda)?;
    let f0 = clock.pause(|| signal_objective(x, problem.atoms().view(), z0, lambda))?;
    let mut f = f0;
    let mut curve = vec![(clock.now(), f)];
    let (k, n_valid) = (state.n_atoms(), state.n_valid());
    let mut iterations = 0u64;
    let mut converged = false;

    let step = |state: &mut CdState<'_>, kk: usize, t: usize, cand: f64, f: &mut f64, curve: &mut Vec<(f64, f64)>, clock: &Clock| {
        *f += state.objective_delta(kk, t, cand);
        state.update(kk, t, cand);
        curve.push((clock.now(), *f));
    };

    match solver {
        Solver::Lgcd | Solver::Greedy => {
            let bounds = if solver == Solver::Lgcd {
                segment_bounds(n_valid, d.atom_len(), Segments::Auto)
            } else {
                vec![(0, n_valid)]
            };
            'outer: loop {
                let mut pass_gap = 0.0f64;
                for &(lo, hi) in &bounds {
                    iterations += 1;
                    let (kk, t, gap, cand) = state.best_in_range(lo, hi);
                    pass_gap = pass_gap.max(gap);
                    if gap > 0.0 {
                        step(&mut state, kk, t, cand, &mut f, &mut curve, &clock);
                        if state.n_updates() >= cfg.max_updates {
                            break 'outer;
                        }
                    }
                }
                if pass_gap < cfg.tol {
                    converged = true;
                    break;
                }
            }
        }
        Solver::Cyclic | Solver::Randomized => 'outer: loop {
            let mut pass_gap = 0.0f64;
            for i in 0..k * n_valid {
                iterations += 1;
                let (kk, t) = if solver == Solver::Cyclic {
                    (i / n_valid, i % n_valid)
                } else {
                    (rng.random_range(0..k), rng.random_range(0..n_valid))
                };
                let cand = state.candidate(kk, t);
                let gap = (cand - state.z()[[kk, t]]).abs();
                pass_gap = pass_gap.max(gap);
                if gap > 0.0 {
                    step(&mut state, kk, t, cand, &mut f, &mut curve, &clock);
                    if state.n_updates() >= cfg.max_updates {
                        break 'outer;
                    }
                }
            }
            if pass_gap < cfg.tol {
                converged = true;
                break;
            }
        },
        Solver::Fista => unreachable!("handled by run_fista"),
    }
    let seconds = clock.now();
    let updates = state.n_updates();
    Ok(RawRun {
        curve,
        iterations,
        updates,
        seconds,
        converged,
        z: state.into_z(),
    })
}

fn run_fista(problem: &ZStepProblem<'_>, x: ArrayView2<'_, f64>, lambda: f64, z0: ArrayView2<'_, f64>, cfg: &ConvergenceConfig) -> Result<RawRun> {
    let atoms = problem.atoms().view();
    let clock = std::cell::RefCell::new(Clock::new());
    let f0 = clock.borrow_mut().pause(|| signal_objective(x, atoms, z0, lambda))?;
    let mut curve = vec![(clock.borrow().now(), f0)];
    let mut failure = None;
    let (z, info) = fista_observed(problem, x, lambda, cfg.tol, cfg.fista_max_iter, z0, &mut |_, z| {
        let mut c = clock.borrow_mut();
        let now = c.now();
        match c.pause(|| signal_objective(x, atoms, z, lambda)) {
            Ok(f) => curve.push((now, f)),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let seconds = clock.borrow().now();
    Ok(RawRun {
        curve,
        iterations: info.iterations as u64,
        updates: info.iterations as u64,
        seconds,
        converged: info.converged,
        z,
    })
}

/// Keeps the first and last points plus up to `n` points evenly spread in time.
fn thin(curve: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    if curve.len() <= n.max(2) {
        return curve.to_vec();
    }
    let end = curve[curve.len() - 1].0;
    let mut out = vec![curve[0]];
    let mut next = 1;
    for (i, &pt) in curve.iter().enumerate().skip(1) {
        let target = end * next as f64 / n as f64;
        if pt.0 >= target || i == curve.len() - 1 {
            out.push(pt);
            while next < n && end * next as f64 / n as f64 <= pt.0 {
                next += 1;
            }
        }
    }
    out
}

fn time_to_precision(curve: &[(f64, f64)], best: f64, precision: f64) -> Option<f64> {
    let thresh = best + precision * best.abs();
    curve.iter().find(|(_, f)| *f <= thresh).map(|(t, _)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub solver: Solver,
    pub lambda_fraction: f64,
    pub runs: usize,
    pub reached: usize,
    pub median_time_to_precision_s: f64,
    pub median_seconds: f64,
    pub median_per_iteration_s: f64,
    pub median_final_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub scenario: String,
    pub n_atoms: usize,
    pub n_channels: usize,
    pub atom_len: usize,
    pub n_valid: usize,
    pub precision: f64,
    /// Best objective over all runs, per lambda fraction.
    pub best_objective: Vec<(f64, f64)>,
    pub runs: Vec<SolverRun>,
    pub summary: Vec<ConvergenceSummary>,
}

impl ConvergenceReport {
    pub fn summary_for(&self, solver: Solver, lambda_fraction: f64) -> Option<&ConvergenceSummary> {
        self.summary.iter().find(|s| s.solver == solver && s.lambda_fraction == lambda_fraction)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.summary {
            out.serialize(s).map_err(|e| CscError::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        summarize(v).median
    }
}

/// Runs every solver from the same starting points on one signal with `d` fixed.
///
/// Init 0 starts from zero; later inits from sparse random nonnegative points.
/// A solver that errors or produces a non-finite objective is recorded as diverged.
pub fn bench_convergence(x: ArrayView2<'_, f64>, d: &Dictionary, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.solvers.is_empty() || cfg.lambda_fractions.is_empty() || cfg.n_inits == 0 {
        return Err(CscError::Config("solvers, lambda fractions and inits must be non-empty".into()));
    }
    let problem = ZStepProblem::new(d)?;
    let n_valid = x.ncols() + 1 - d.atom_len();
    let k = d.n_atoms();
    let lmax = crate::zstep::lambda_max_signal(x, d)?;
    let atoms = problem.atoms().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inits: Vec<Array2<f64>> = (0..cfg.n_inits)
        .map(|i| {
            if i == 0 {
                Array2::zeros((k, n_valid))
            } else {
                Array2::from_shape_fn((k, n_valid), |_| {
                    if rng.random_bool(0.01) { rng.random_range(0.0..0.5) } else { 0.0 }
                })
            }
        })
        .collect();

    let mut runs = Vec::new();
    let mut best_objective = Vec::new();
    for &frac in &cfg.lambda_fractions {
        let lambda = frac * lmax;
        let mut group = Vec::new();
        for (init, z0) in inits.iter().enumerate() {
            let hash = fingerprint(&[
                x.as_standard_layout().as_slice().expect("standard"),
                atoms.as_slice().expect("standard"),
                z0.as_slice().expect("standard"),
                &[lambda],
            ]);
            for &solver in &cfg.solvers {
                let mut solver_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(init as u64));
                let raw = match solver {
                    Solver::Fista => run_fista(&problem, x, lambda, z0.view(), cfg),
                    _ => run_cd(solver, &problem, x, lambda, z0.view(), cfg, &mut solver_rng),
                };
                let run = match raw {
                    Ok(raw) => {
                        let final_objective = signal_objective(x, atoms.view(), raw.z.view(), lambda)?;
                        SolverRun {
                            solver,
                            lambda_fraction: frac,
                            init,
                            input_hash: hash.clone(),
                            curve: raw.curve,
                            final_objective,
                            iterations: raw.iterations,
                            updates: raw.updates,
                            seconds: raw.seconds,
                            per_iteration_s: raw.seconds / raw.iterations.max(1) as f64,
                            converged: raw.converged,
                            diverged: !final_objective.is_finite(),
                            error: None,
                            time_to_precision: None,
                        }
                    }
                    Err(e) => SolverRun {
                        solver,
                        lambda_fraction: frac,
                        init,
                        input_hash: hash.clone(),
                        curve: Vec::new(),
                        final_objective: f64::NAN,
                        iterations: 0,
                        updates: 0,
                        seconds: 0.0,
                        per_iteration_s: f64::NAN,
                        converged: false,
                        diverged: true,
                        error: Some(e.to_string()),
                        time_to_precision: None,
                    },
                };
                group.push(run);
            }
        }
        let best = group
            .iter()
            .filter(|r| !r.diverged)
            .flat_map(|r| r.curve.iter().map(|p| p.1).chain([r.final_objective]))
            .filter(|f| f.is_finite())
            .fold(f64::INFINITY, f64::min);
        for r in group.iter_mut() {
            if !r.diverged {
                r.time_to_precision = time_to_precision(&r.curve, best, cfg.precision);
                r.curve = thin(&r.curve, cfg.max_curve_points);
            }
        }
        best_objective.push((frac, best));
        runs.extend(group);
    }

    let mut summary = Vec::new();
    for &frac in &cfg.lambda_fractions {
        let best = best_objective.iter().find(|b| b.0 == frac).map(|b| b.1).unwrap_or(f64::NAN);
        for &solver in &cfg.solvers {
            let these: Vec<&SolverRun> = runs.iter().filter(|r| r.solver == solver && r.lambda_fraction == frac).collect();
            let ttp: Vec<f64> = these.iter().filter_map(|r| r.time_to_precision).collect();
            let ok: Vec<&&SolverRun> = these.iter().filter(|r| !r.diverged).collect();
            summary.push(ConvergenceSummary {
                solver,
                lambda_fraction: frac,
                runs: these.len(),
                reached: ttp.len(),
                median_time_to_precision_s: median(&ttp),
                median_seconds: median(&ok.iter().map(|r| r.seconds).collect::<Vec<_>>()),
                median_per_iteration_s: median(&ok.iter().map(|r| r.per_iteration_s).collect::<Vec<_>>()),
                median_final_gap: median(&ok.iter().map(|r| (r.final_objective - best) / best.abs().max(f64::MIN_POSITIVE)).collect::<Vec<_>>()),
            });
        }
    }
    let (_, p, l) = atoms.dim();
    Ok(ConvergenceReport {
        scenario: "convergence".into(),
        n_atoms: k,
        n_channels: p,
        atom_len: l,
        n_valid,
        precision: cfg.precision,
        best_objective,
        runs,
        summary,
    })
}

/// A planted single-signal instance for [`bench_convergence`], using the true dictionary.
pub fn convergence_instance(n_channels: usize, n_atoms: usize, atom_len: usize, n_valid: usize, seed: u64) -> Result<(SignalSet, Dictionary)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = SimConfig {
        n_signals: 1,
        n_channels,
        n_atoms,
        atom_len,
        n_valid,
        density: 0.01,
        noise_sigma: 0.05,
        atom_kind: AtomKind::Custom(smooth_patterns(n_atoms, atom_len, &mut rng)),
        seed,
        ..Default::default()
    };
    let t = make_truth(&sim)?;
    Ok((t.signals, t.dictionary))
}

/// Convenience view of the first signal.
pub fn first_signal(x: &SignalSet) -> ArrayView2<'_, f64> {
    x.data().index_axis(Axis(0), 0)
}
