//! Dictionary update with activations fixed.
//!
//! Everything here reads only the [`PhiPsiCache`] built once per D-step, so
//! gradient and loss evaluations cost `O(K^2 L (L + P))` independently of `T`.

mod cache;
mod grad;

pub use cache::{compute_cache, compute_phi, compute_psi, PhiPsiCache};
pub use grad::{grad_all_atoms, grad_full_atom, grad_uv, objective_upto_constant};

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::dictionary::{project_unit_ball, Dictionary};
use crate::error::{CscError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoConfig {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: u32,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        ArmijoConfig {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DStepConfig {
    /// Stop a block once the l1 change of its variables over one step drops below this.
    pub eps: f64,
    pub max_outer: usize,
    pub armijo: ArmijoConfig,
}

impl Default for DStepConfig {
    fn default() -> Self {
        DStepConfig {
            eps: 1e-7,
            max_outer: 100,
            armijo: ArmijoConfig::default(),
        }
    }
}

impl DStepConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        let bad = |m: &str| Err(CscError::Config(m.to_string()));
        if !(self.eps >= 0.0) {
            return bad("dstep eps must be >= 0");
        }
        if self.max_outer == 0 {
            return bad("dstep max_outer must be >= 1");
        }
        if !(a.initial_step > 0.0 && a.initial_step.is_finite()) {
            return bad("armijo initial_step must be positive and finite");
        }
        if !(a.shrink > 0.0 && a.shrink < 1.0) {
            return bad("armijo shrink must be in (0, 1)");
        }
        if !(a.sufficient_decrease > 0.0 && a.sufficient_decrease <= 0.5) {
            return bad("armijo sufficient_decrease must be in (0, 0.5]");
        }
        Ok(())
    }
}

/// One projected-gradient loop on a block of variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BlockStats {
    pub block: String,
    pub iterations: usize,
    pub backtracks: usize,
    pub converged: bool,
    pub stalled: bool,
    pub final_step: f64,
    /// Loss (up to a constant) at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DStepDiagnostics {
    pub blocks: Vec<BlockStats>,
    pub gradient_evals: usize,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Projected gradient with Armijo backtracking on a `rows x cols` block,
/// each row projected onto the unit ball.
fn descend<F>(name: &str, x0: Array2<f64>, config: &DStepConfig, evals: &mut usize, mut eval: F) -> Result<(Array2<f64>, BlockStats)>
where
    F: FnMut(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let arm = &config.armijo;
    let mut stats = BlockStats {
        block: name.to_string(),
        ..Default::default()
    };
    let mut x = x0;
    let (mut fx, mut gx) = eval(&x)?;
    *evals += 1;
    stats.objective_trace.push(fx);
    let mut step = arm.initial_step;

    for _ in 0..config.max_outer {
        if gx.iter().all(|g| *g == 0.0) {
            stats.converged = true;
            break;
        }
        let mut trial = step;
        let mut accepted = None;
        for b in 0..=arm.max_backtracks {
            let mut xn = &x - &(&gx * trial);
            for mut row in xn.rows_mut() {
                project_unit_ball(&mut row);
            }
            let mut slope = 0.0;
            Zip::from(&gx).and(&xn).and(&x).for_each(|g, a, b| slope += g * (a - b));
            let (fn_, gn) = eval(&xn)?;
            *evals += 1;
            if !fn_.is_finite() {
                return Err(CscError::NonFinite(format!("{name} block loss became {fn_}")));
            }
            if fn_ <= fx + arm.sufficient_decrease * slope && fn_ <= fx {
                stats.backtracks += b as usize;
                accepted = Some((xn, fn_, gn));
                break;
            }
            trial *= arm.shrink;
        }
        let Some((xn, fn_, gn)) = accepted else {
            stats.backtracks += arm.max_backtracks as usize;
            stats.stalled = true;
            break;
        };
        let change: f64 = xn.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).sum();
        x = xn;
        fx = fn_;
        gx = gn;
        stats.iterations += 1;
        stats.objective_trace.push(fx);
        // warm step, allowed to grow back by one notch
        step = trial / arm.shrink;
        if change < config.eps {
            stats.converged = true;
            break;
        }
    }
    stats.final_step = step;
    Ok((x, stats))
}

/// Update the dictionary for the activations summarized in `cache`.
///
/// Rank-1 dictionaries update all `u_k` jointly, then all `v_k`. Full
/// dictionaries run one loop on all atoms with per-atom projection.
/// A block whose line search cannot find a decrease keeps its current point
/// and is reported as stalled.
pub fn dstep_solve(d0: &Dictionary, cache: &PhiPsiCache, config: &DStepConfig) -> Result<(Dictionary, DStepDiagnostics)> {
    config.validate()?;
    let mut diag = DStepDiagnostics::default();
    let mut evals = 0;
    diag.objective_before = objective_upto_constant(d0, cache)?;
    let d = match d0 {
        Dictionary::Rank1 { u, v } => {
            let v_fixed = v.clone();
            let (u_new, su) = descend("u", u.clone(), config, &mut evals, |u| {
                let d = Dictionary::rank1(u.clone(), v_fixed.clone())?;
                let (f, g) = grad::value_and_grad(&d, cache)?;
                let mut gu = Array2::zeros(u.dim());
                for k in 0..u.nrows() {
                    let (gk, _) = grad_uv(u.row(k), v_fixed.row(k), g.index_axis(Axis(0), k));
                    gu.row_mut(k).assign(&gk);
                }
                Ok((f, gu))
            })?;
            let u_fixed = u_new;
            let (v_new, sv) = descend("v", v.clone(), config, &mut evals, |v| {
                let d = Dictionary::rank1(u_fixed.clone(), v.clone())?;
                let (f, g) = grad::value_and_grad(&d, cache)?;
                let mut gv = Array2::zeros(v.dim());
                for k in 0..v.nrows() {
                    let (_, gk) = grad_uv(u_fixed.row(k), v.row(k), g.index_axis(Axis(0), k));
                    gv.row_mut(k).assign(&gk);
                }
                Ok((f, gv))
            })?;
            diag.blocks = vec![su, sv];
            Dictionary::rank1(u_fixed, v_new)?
        }
        Dictionary::Full { atoms } => {
            let (k, p, l) = atoms.dim();
            let flat = atoms.clone().into_shape_with_order((k, p * l)).expect("standard layout");
            let (x, s) = descend("atoms", flat, config, &mut evals, |x| {
                let a: Array3<f64> = x.clone().into_shape_with_order((k, p, l)).expect("standard layout");
                let (f, g) = grad::value_and_grad(&Dictionary::full(a)?, cache)?;
                Ok((f, g.into_shape_with_order((k, p * l)).expect("standard layout")))
            })?;
            diag.blocks = vec![s];
            Dictionary::full(x.into_shape_with_order((k, p, l)).expect("standard layout"))?
        }
    };
    diag.gradient_evals = evals;
    diag.objective_after = objective_upto_constant(&d, cache)?;
    Ok((d, diag))
}
