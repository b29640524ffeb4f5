//! Synthetic rank-1 data with known atoms, and scoring of recovered atoms.

use std::io::Write;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conv::reconstruct;
use crate::dictionary::Dictionary;
use crate::error::{contract, CscError, Result};
use crate::learner::{fit, FitConfig, RegPolicy};
use crate::par;
use crate::tensor::{ActivationSet, SignalSet};

/// Temporal patterns of the planted atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomKind {
    /// A boxcar over the middle `L/2` samples and a full-width symmetric ramp; needs `K = 2`.
    SquareTriangle,
    /// One row per atom, each of length `L`; normalized on use.
    Custom(Vec<Vec<f64>>),
}

/// Spatial maps of the planted atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMaps {
    /// Uniform on the unit sphere of `R^P`.
    Random,
    /// One row per atom, each of length `P`; normalized on use.
    Custom(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_signals: usize,
    pub n_channels: usize,
    pub n_atoms: usize,
    pub atom_len: usize,
    /// Number of activation positions, `T - L + 1`.
    pub n_valid: usize,
    /// Probability that an activation is nonzero.
    pub density: f64,
    /// Standard deviation of the additive white noise.
    pub noise_sigma: f64,
    pub atom_kind: AtomKind,
    pub spatial_maps: SpatialMaps,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_signals: 100,
            n_channels: 5,
            n_atoms: 2,
            atom_len: 64,
            n_valid: 640,
            density: 0.05,
            noise_sigma: 0.0,
            atom_kind: AtomKind::SquareTriangle,
            spatial_maps: SpatialMaps::Random,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CscError::Config(m));
        if self.n_signals == 0 || self.n_channels == 0 || self.n_atoms == 0 || self.atom_len == 0 || self.n_valid == 0 {
            return bad("n_signals, n_channels, n_atoms, atom_len and n_valid must all be >= 1".into());
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density must be in (0, 1], got {}", self.density));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        match &self.atom_kind {
            AtomKind::SquareTriangle if self.n_atoms != 2 || self.atom_len < 3 => {
                return bad(format!(
                    "square/triangle atoms need n_atoms = 2 and atom_len >= 3, got {} and {}",
                    self.n_atoms, self.atom_len
                ))
            }
            AtomKind::Custom(rows) if rows.len() != self.n_atoms || rows.iter().any(|r| r.len() != self.atom_len) => {
                return bad(format!("custom atoms must be {} rows of length {}", self.n_atoms, self.atom_len))
            }
            _ => {}
        }
        if let SpatialMaps::Custom(rows) = &self.spatial_maps {
            if rows.len() != self.n_atoms || rows.iter().any(|r| r.len() != self.n_channels) {
                return bad(format!("custom maps must be {} rows of length {}", self.n_atoms, self.n_channels));
            }
        }
        Ok(())
    }
}

/// Unit-norm boxcar over `[L/4, L/4 + L/2)`.
pub fn square_atom(atom_len: usize) -> Array1<f64> {
    let start = atom_len / 4;
    let width = (atom_len / 2).max(1);
    let mut v = Array1::zeros(atom_len);
    v.slice_mut(ndarray::s![start..(start + width).min(atom_len)]).fill(1.0);
    normalized(v)
}

/// Unit-norm symmetric ramp `1 - |2i/(L-1) - 1|` over the whole support.
pub fn triangle_atom(atom_len: usize) -> Array1<f64> {
    if atom_len == 1 {
        return Array1::ones(1);
    }
    let v = Array1::from_shape_fn(atom_len, |i| 1.0 - (2.0 * i as f64 / (atom_len - 1) as f64 - 1.0).abs());
    normalized(v)
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

fn rows_normalized(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let (k, m) = (rows.len(), rows.first().map_or(0, |r| r.len()));
    let mut a = Array2::zeros((k, m));
    for (i, r) in rows.iter().enumerate() {
        let v = normalized(Array1::from_vec(r.clone()));
        if !(v.dot(&v) > 0.0) {
            return contract(format!("custom row {i} is zero"));
        }
        a.row_mut(i).assign(&v);
    }
    Ok(a)
}

/// A planted problem instance.
#[derive(Debug, Clone)]
pub struct Truth {
    pub dictionary: Dictionary,
    pub activations: ActivationSet,
    pub signals: SignalSet,
    /// The noise that was added, `N x P x T`.
    pub noise: Array3<f64>,
}

/// Draws spatial maps, then activations, then noise, from one stream seeded by `config.seed`.
pub fn make_truth(config: &SimConfig) -> Result<Truth> {
    config.validate()?;
    let (n, p, k, l, tv) = (config.n_signals, config.n_channels, config.n_atoms, config.atom_len, config.n_valid);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let v = match &config.atom_kind {
        AtomKind::SquareTriangle => {
            let mut v = Array2::zeros((2, l));
            v.row_mut(0).assign(&square_atom(l));
            v.row_mut(1).assign(&triangle_atom(l));
            v
        }
        AtomKind::Custom(rows) => rows_normalized(rows)?,
    };
    let u = match &config.spatial_maps {
        SpatialMaps::Random => {
            let mut u = Array2::zeros((k, p));
            for mut row in u.rows_mut() {
                loop {
                    row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
                    let nr = row.dot(&row).sqrt();
                    if nr > 0.0 {
                        row /= nr;
                        break;
                    }
                }
            }
            u
        }
        SpatialMaps::Custom(rows) => rows_normalized(rows)?,
    };
    let dictionary = Dictionary::rank1(u, v)?;

    let mut z = Array3::zeros((n, k, tv));
    for val in z.iter_mut() {
        if rng.random_bool(config.density) {
            *val = rng.random::<f64>();
        }
    }
    let activations = ActivationSet::new(z)?;

    let atoms = dictionary.materialize();
    let t = tv + l - 1;
    let mut noise = Array3::zeros((n, p, t));
    if config.noise_sigma > 0.0 {
        noise.mapv_inplace(|_| config.noise_sigma * rng.sample::<f64, _>(StandardNormal));
    }
    let mut x = noise.clone();
    for i in 0..n {
        let clean = reconstruct(activations.signal(i), atoms.view())?;
        let mut xi = x.index_axis_mut(Axis(0), i);
        xi += &clean;
    }
    Ok(Truth {
        dictionary,
        activations,
        signals: SignalSet::new(x)?,
        noise,
    })
}

/// Best sign-and-permutation match between estimated and true temporal atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryMatch {
    pub loss: f64,
    /// `permutation[k]` is the estimated atom matched to true atom `k`.
    pub permutation: Vec<usize>,
    /// `+1` or `-1` applied to the matched estimate.
    pub signs: Vec<f64>,
}

fn pairwise_costs(estimated: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if estimated.dim() != truth.dim() {
        return contract(format!(
            "estimated atoms {:?} and true atoms {:?} differ in shape",
            estimated.dim(),
            truth.dim()
        ));
    }
    let k = truth.nrows();
    let mut cost = Array2::zeros((k, k));
    let mut sign = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let (mut plus, mut minus) = (0.0, 0.0);
            for (a, b) in estimated.row(j).iter().zip(truth.row(i)) {
                plus += (a - b) * (a - b);
                minus += (a + b) * (a + b);
            }
            // estimate j compared with truth i
            if minus < plus {
                cost[[i, j]] = minus;
                sign[[i, j]] = -1.0;
            } else {
                cost[[i, j]] = plus;
                sign[[i, j]] = 1.0;
            }
        }
    }
    Ok((cost, sign))
}

fn finish(cost: &Array2<f64>, sign: &Array2<f64>, permutation: Vec<usize>) -> RecoveryMatch {
    let loss = permutation.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    let signs = permutation.iter().enumerate().map(|(i, &j)| sign[[i, j]]).collect();
    RecoveryMatch { loss, permutation, signs }
}

/// Enumerates all `K!` permutations.
pub fn recovery_loss_exhaustive(estimated: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<RecoveryMatch> {
    let (cost, sign) = pairwise_costs(estimated, truth)?;
    let k = cost.nrows();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_loss = f64::INFINITY;
    loop {
        let loss: f64 = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
        if loss < best_loss {
            best_loss = loss;
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(finish(&cost, &sign, best))
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Minimum-cost perfect matching (Hungarian method with potentials), `O(K^3)`.
/// Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: ArrayView2<'_, f64>) -> Vec<usize> {
    let n = cost.nrows();
    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Solves the matching as an assignment problem on the pairwise costs.
pub fn recovery_loss_assignment(estimated: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<RecoveryMatch> {
    let (cost, sign) = pairwise_costs(estimated, truth)?;
    let perm = min_cost_assignment(cost.view());
    Ok(finish(&cost, &sign, perm))
}

/// `min_s sum_k min(||v^_s(k) - v_k||^2, ||v^_s(k) + v_k||^2)` over permutations `s`.
///
/// Rows are atoms. Enumerates permutations for `K <= 8`, otherwise solves the assignment problem.
pub fn recovery_loss(estimated: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<RecoveryMatch> {
    if truth.nrows() <= 8 {
        recovery_loss_exhaustive(estimated, truth)
    } else {
        recovery_loss_assignment(estimated, truth)
    }
}

/// `n` values from `lo` to `hi` evenly spaced in log scale.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub channels: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Fractions of `lambda_max`.
    pub lambda_fractions: Vec<f64>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            channels: vec![1, 5],
            sigmas: vec![1e-3],
            lambda_fractions: log_grid(0.003, 0.3, 5),
        }
    }
}

/// Summary for one `(P, sigma)` cell at its best `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    #[serde(rename = "P")]
    pub p: usize,
    pub sigma: f64,
    pub lambda_best: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub loss_median: f64,
}

/// Every individual fit of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub p: usize,
    pub sigma: f64,
    pub lambda_fraction: f64,
    pub seed: u64,
    pub loss: f64,
    pub final_objective: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits every `(P, sigma, lambda, seed)` combination and keeps, per `(P, sigma)`, the
/// `lambda` with the lowest mean recovery loss.
///
/// Data for seed `s` uses `base.seed + s`; the fit uses `fit_config.seed + s`. The
/// regularization is always a fraction of `lambda_max`. Fits run concurrently when
/// `parallel` is set; results do not depend on it.
pub fn run_recovery_experiment(
    grid: &ExperimentGrid,
    base: &SimConfig,
    fit_config: &FitConfig,
    n_seeds: usize,
    parallel: bool,
) -> Result<(Vec<ExperimentRow>, Vec<ExperimentRun>)> {
    if n_seeds == 0 || grid.channels.is_empty() || grid.sigmas.is_empty() || grid.lambda_fractions.is_empty() {
        return Err(CscError::Config("experiment grid and seed count must be non-empty".into()));
    }
    let mut jobs = Vec::new();
    for &p in &grid.channels {
        for &sigma in &grid.sigmas {
            for &frac in &grid.lambda_fractions {
                for s in 0..n_seeds as u64 {
                    jobs.push((p, sigma, frac, s));
                }
            }
        }
    }
    let results = par::map_indexed(jobs.len(), parallel, |i| -> Result<ExperimentRun> {
        let (p, sigma, frac, s) = jobs[i];
        let sim = SimConfig {
            n_channels: p,
            noise_sigma: sigma,
            seed: base.seed.wrapping_add(s),
            ..base.clone()
        };
        let truth = make_truth(&sim)?;
        let mut cfg = fit_config.clone();
        cfg.reg = RegPolicy::FractionOfLambdaMax(frac);
        cfg.seed = fit_config.seed.wrapping_add(s);
        cfg.parallel = false;
        cfg.n_atoms = sim.n_atoms;
        cfg.atom_len = sim.atom_len;
        let r = fit(&truth.signals, &cfg)?;
        let m = recovery_loss(
            r.dictionary.temporal_patterns().view(),
            truth.dictionary.temporal_patterns().view(),
        )?;
        Ok(ExperimentRun {
            p,
            sigma,
            lambda_fraction: frac,
            seed: s,
            loss: m.loss,
            final_objective: r.final_objective(),
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &p in &grid.channels {
        for &sigma in &grid.sigmas {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for &frac in &grid.lambda_fractions {
                let losses: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.p == p && r.sigma == sigma && r.lambda_fraction == frac)
                    .map(|r| r.loss)
                    .collect();
                let (mean, _) = mean_std(&losses);
                if best.as_ref().is_none_or(|(_, b)| mean < mean_std(b).0) {
                    best = Some((frac, losses));
                }
            }
            let (frac, losses) = best.expect("non-empty lambda grid");
            let (mean, std) = mean_std(&losses);
            rows.push(ExperimentRow {
                p,
                sigma,
                lambda_best: frac,
                loss_mean: mean,
                loss_std: std,
                loss_median: median(&losses),
            });
        }
    }
    Ok((rows, runs))
}

/// CSV with header `P,sigma,lambda_best,loss_mean,loss_std,loss_median`.
pub fn write_experiment_csv<W: Write>(rows: &[ExperimentRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| CscError::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
