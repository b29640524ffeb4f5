//! Alternating minimization over activations and atoms.

use std::time::Instant;

use ndarray::{s, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryKind};
use crate::dstep::{compute_cache, dstep_solve, DStepConfig, DStepDiagnostics};
use crate::error::{contract, CscError, Result};
use crate::linalg::leading_singular_pair;
use crate::objective::objective;
use crate::tensor::{ActivationSet, SignalSet};
use crate::zstep::{lambda_max, solve_all, ZSolverConfig, ZStepProblem};

/// Atom structure to learn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Single-channel signals, `P = 1`.
    Univariate,
    /// Unconstrained `P x L` atoms.
    Full,
    /// `u_k v_k^T` atoms.
    Rank1,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Univariate => "univariate",
            Model::Full => "full",
            Model::Rank1 => "rank1",
        }
    }
}

/// How the regularization weight is chosen at each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum RegPolicy {
    Absolute(f64),
    /// `lambda = rho * lambda_max(X, D)`, with `lambda_max` recomputed for the current dictionary.
    FractionOfLambdaMax(f64),
}

impl RegPolicy {
    pub fn resolve(self, lambda_max: f64) -> f64 {
        match self {
            RegPolicy::Absolute(l) => l,
            RegPolicy::FractionOfLambdaMax(rho) => rho * lambda_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: Model,
    pub n_atoms: usize,
    pub atom_len: usize,
    pub reg: RegPolicy,
    /// Its `lambda` is overwritten every iteration from `reg`.
    pub z_config: ZSolverConfig,
    pub d_config: DStepConfig,
    pub n_iter: usize,
    pub seed: u64,
    /// Stop when the objective changes by less than this fraction over one iteration.
    pub convergence_tol: f64,
    pub parallel: bool,
}

impl FitConfig {
    pub fn new(model: Model, n_atoms: usize, atom_len: usize, reg: RegPolicy) -> Self {
        FitConfig {
            model,
            n_atoms,
            atom_len,
            reg,
            z_config: ZSolverConfig::new(0.0),
            d_config: DStepConfig::default(),
            n_iter: 40,
            seed: 0,
            convergence_tol: 1e-8,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CscError::Config(m));
        if self.n_atoms == 0 {
            return bad("n_atoms must be >= 1".into());
        }
        if self.atom_len == 0 {
            return bad("atom_len must be >= 1".into());
        }
        if self.n_iter == 0 {
            return bad("n_iter must be >= 1".into());
        }
        if !(self.convergence_tol >= 0.0) {
            return bad(format!("convergence_tol must be >= 0, got {}", self.convergence_tol));
        }
        match self.reg {
            RegPolicy::Absolute(l) if !(l >= 0.0 && l.is_finite()) => {
                return bad(format!("lambda must be finite and >= 0, got {l}"))
            }
            RegPolicy::FractionOfLambdaMax(r) if !(r > 0.0 && r.is_finite()) => {
                return bad(format!("lambda fraction must be finite and > 0, got {r}"))
            }
            _ => {}
        }
        let mut z = self.z_config.clone();
        z.lambda = 0.0;
        z.validate()?;
        self.d_config.validate()
    }

    /// Checks the config against the data it will be fit on.
    pub fn check_data(&self, x: &SignalSet) -> Result<()> {
        if self.atom_len > x.n_times() {
            return contract(format!(
                "atom length {} exceeds signal length {}",
                self.atom_len,
                x.n_times()
            ));
        }
        if self.model == Model::Univariate && x.n_channels() != 1 {
            return contract(format!(
                "univariate model needs single-channel signals, got P = {}",
                x.n_channels()
            ));
        }
        Ok(())
    }
}

/// Objective values around the two half-steps of one outer iteration, all at that iteration's `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda_max: f64,
    pub lambda: f64,
    pub before_z: f64,
    pub after_z: f64,
    pub after_d: f64,
    pub nonzeros: usize,
    pub z_updates: u64,
    pub d_gradient_evals: usize,
    pub d_stalled: bool,
    pub resampled: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTiming {
    pub zstep_seconds: f64,
    pub phi_psi_seconds: f64,
    pub dstep_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub dictionary: Dictionary,
    pub activations: ActivationSet,
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// `lambda_max` of the dictionary entering each iteration.
    pub lambda_trace: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub timings: Vec<IterationTiming>,
    pub converged: bool,
    pub last_dstep: Option<DStepDiagnostics>,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_lambda(&self) -> f64 {
        self.iterations.last().map(|r| r.lambda).unwrap_or(f64::NAN)
    }
}

const CHUNK_ATTEMPTS: usize = 1000;

/// One atom from a random chunk `X^n[:, t..t + L]`; all-zero chunks are redrawn.
fn chunk_atom(x: &SignalSet, model: Model, atom_len: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let starts = x.n_times() - atom_len + 1;
    for _ in 0..CHUNK_ATTEMPTS {
        let n = rng.random_range(0..x.n_signals());
        let t = rng.random_range(0..starts);
        let chunk = x.signal(n).slice(s![.., t..t + atom_len]).to_owned();
        let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            continue;
        }
        return Ok(match model {
            Model::Rank1 => {
                let (_, u, v) = leading_singular_pair(chunk.view());
                // packed as one row [u | v]
                let mut packed = Array2::zeros((1, u.len() + v.len()));
                packed.slice_mut(s![0, ..u.len()]).assign(&u);
                packed.slice_mut(s![0, u.len()..]).assign(&v);
                packed
            }
            Model::Full | Model::Univariate => chunk / norm,
        });
    }
    Err(CscError::Contract(
        "signals are identically zero; no chunk can seed an atom".into(),
    ))
}

fn init_with(x: &SignalSet, model: Model, n_atoms: usize, atom_len: usize, rng: &mut ChaCha8Rng) -> Result<Dictionary> {
    let p = x.n_channels();
    match model {
        Model::Rank1 => {
            let mut u = Array2::zeros((n_atoms, p));
            let mut v = Array2::zeros((n_atoms, atom_len));
            for k in 0..n_atoms {
                let packed = chunk_atom(x, model, atom_len, rng)?;
                u.row_mut(k).assign(&packed.slice(s![0, ..p]));
                v.row_mut(k).assign(&packed.slice(s![0, p..]));
            }
            Dictionary::rank1(u, v)
        }
        Model::Full | Model::Univariate => {
            let mut atoms = Array3::zeros((n_atoms, p, atom_len));
            for k in 0..n_atoms {
                atoms.index_axis_mut(Axis(0), k).assign(&chunk_atom(x, model, atom_len, rng)?);
            }
            Dictionary::full(atoms)
        }
    }
}

/// Atoms drawn from random signal chunks: rank-1 projected for [`Model::Rank1`], otherwise
/// the raw chunk. Every atom has unit norm (both factors for rank-1).
pub fn init_dictionary(x: &SignalSet, model: Model, n_atoms: usize, atom_len: usize, seed: u64) -> Result<Dictionary> {
    if atom_len == 0 || atom_len > x.n_times() {
        return contract(format!("atom length {atom_len} must be in [1, {}]", x.n_times()));
    }
    if n_atoms == 0 {
        return contract("n_atoms must be >= 1");
    }
    init_with(x, model, n_atoms, atom_len, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn replace_atom(d: &mut Dictionary, k: usize, fresh: &Dictionary) {
    match (d, fresh) {
        (Dictionary::Rank1 { u, v }, Dictionary::Rank1 { u: fu, v: fv }) => {
            u.row_mut(k).assign(&fu.row(0));
            v.row_mut(k).assign(&fv.row(0));
        }
        (Dictionary::Full { atoms }, Dictionary::Full { atoms: fa }) => {
            atoms.index_axis_mut(Axis(0), k).assign(&fa.index_axis(Axis(0), 0));
        }
        _ => unreachable!("fresh atoms share the dictionary's kind"),
    }
}

fn finite(value: f64, what: &str, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CscError::NonFinite(format!("objective {what} at iteration {iteration} is {value}")))
    }
}

/// Learns a dictionary and activations for `x`.
///
/// Each iteration resolves `lambda`, runs the Z-step warm-started from the previous
/// activations, then the D-step. Atoms left without any activation are redrawn from
/// signal chunks afterwards, which leaves the objective unchanged.
pub fn fit(x: &SignalSet, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    config.check_data(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = init_with(x, config.model, config.n_atoms, config.atom_len, &mut rng)?;
    run(x, config, d, rng)
}

/// Like [`fit`] but starts from `init` instead of signal chunks. The seed still drives
/// dead-atom resampling.
pub fn fit_from(x: &SignalSet, config: &FitConfig, init: Dictionary) -> Result<FitResult> {
    config.validate()?;
    config.check_data(x)?;
    let kind_ok = match config.model {
        Model::Rank1 => init.kind() == DictionaryKind::Rank1,
        Model::Full | Model::Univariate => init.kind() == DictionaryKind::Full,
    };
    if !kind_ok
        || init.n_atoms() != config.n_atoms
        || init.atom_len() != config.atom_len
        || init.n_channels() != x.n_channels()
    {
        return Err(CscError::Contract(format!(
            "initial dictionary ({:?}, K={}, P={}, L={}) does not match the {} model with K={}, P={}, L={}",
            init.kind(),
            init.n_atoms(),
            init.n_channels(),
            init.atom_len(),
            config.model.name(),
            config.n_atoms,
            x.n_channels(),
            config.atom_len
        )));
    }
    if !init.is_feasible(1e-9) {
        return Err(CscError::Contract("initial dictionary has atoms outside the unit ball".into()));
    }
    run(x, config, init, ChaCha8Rng::seed_from_u64(config.seed))
}

fn run(x: &SignalSet, config: &FitConfig, mut d: Dictionary, mut rng: ChaCha8Rng) -> Result<FitResult> {
    if !x.is_finite() {
        return Err(CscError::NonFinite("signals contain NaN or infinite samples".into()));
    }
    let (k_atoms, l) = (config.n_atoms, config.atom_len);
    let mut z = ActivationSet::zeros(x.n_signals(), k_atoms, x.n_times() - l + 1);

    let mut result = FitResult {
        dictionary: d.clone(),
        activations: z.clone(),
        objective_trace: Vec::new(),
        lambda_trace: Vec::new(),
        iterations: Vec::new(),
        timings: Vec::new(),
        converged: false,
        last_dstep: None,
    };

    for it in 0..config.n_iter {
        let start = Instant::now();
        let lmax = lambda_max(x, &d)?;
        let lambda = config.reg.resolve(lmax);
        let before_z = finite(objective(x, &d, &z, lambda)?, "before Z-step", it)?;

        let t0 = Instant::now();
        let mut zc = config.z_config.clone();
        zc.lambda = lambda;
        let diags = {
            let problem = ZStepProblem::new(&d)?;
            solve_all(&problem, x, &zc, &mut z, config.parallel)?
        };
        let zstep_seconds = t0.elapsed().as_secs_f64();
        let after_z = finite(objective(x, &d, &z, lambda)?, "after Z-step", it)?;

        let t1 = Instant::now();
        let cache = compute_cache(x, &z, l, config.parallel)?;
        let phi_psi_seconds = t1.elapsed().as_secs_f64();
        let t2 = Instant::now();
        let (d_new, ddiag) = dstep_solve(&d, &cache, &config.d_config)?;
        let dstep_seconds = t2.elapsed().as_secs_f64();
        d = d_new;
        let after_d = finite(objective(x, &d, &z, lambda)?, "after D-step", it)?;

        let mut resampled = Vec::new();
        for (k, mass) in z.atom_l1().iter().enumerate() {
            if *mass == 0.0 {
                let fresh = init_with(x, config.model, 1, l, &mut rng)?;
                replace_atom(&mut d, k, &fresh);
                resampled.push(k);
            }
        }

        let prev = result.objective_trace.last().copied();
        result.objective_trace.push(after_d);
        result.lambda_trace.push(lmax);
        result.iterations.push(IterationRecord {
            iteration: it,
            lambda_max: lmax,
            lambda,
            before_z,
            after_z,
            after_d,
            nonzeros: z.count_nonzeros(),
            z_updates: diags.iter().map(|g| g.n_updates).sum(),
            d_gradient_evals: ddiag.gradient_evals,
            d_stalled: ddiag.blocks.iter().any(|b| b.stalled),
            resampled,
        });
        result.timings.push(IterationTiming {
            zstep_seconds,
            phi_psi_seconds,
            dstep_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        });
        result.last_dstep = Some(ddiag);

        if let Some(prev) = prev {
            let denom = prev.abs().max(f64::MIN_POSITIVE);
            if (prev - after_d).abs() / denom < config.convergence_tol {
                result.converged = true;
                break;
            }
        }
    }
    result.dictionary = d;
    result.activations = z;
    Ok(result)
}
