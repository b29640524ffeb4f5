//! Coordinate-descent bookkeeping: the `beta` table and single-coordinate updates.

use ndarray::{Array2, ArrayView2};

use super::dtd::DtdTable;
use crate::conv::{correlate_signal, correlate_signal_rank1};
use crate::dictionary::Dictionary;
use crate::error::{contract, CscError, Result};

/// `beta[k][t]` for one signal plus the atom norms `||D_k||^2`.
///
/// `beta_k[t] = (D~_k ~* (X - sum_l z_l * D_l + z_k[t] e_t * D_k))[t]`, i.e. the
/// correlation of atom `k` with the residual in which coordinate `(k, t)` is zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTable {
    pub beta: Array2<f64>,
    pub norms: Vec<f64>,
}

/// Builds `beta` for the activations `z` (`K x T~`) of the `P x T` signal `x`.
pub fn init_beta(
    x: ArrayView2<'_, f64>,
    d: &Dictionary,
    z: ArrayView2<'_, f64>,
    dtd: &DtdTable,
) -> Result<BetaTable> {
    let k_atoms = d.n_atoms();
    let l = d.atom_len();
    if x.ncols() < l {
        return contract(format!("signal length {} < atom length {l}", x.ncols()));
    }
    let n_valid = x.ncols() - l + 1;
    if z.dim() != (k_atoms, n_valid) {
        return contract(format!(
            "activations {:?} do not match (K={k_atoms}, T~={n_valid})",
            z.dim()
        ));
    }
    let mut beta = Array2::zeros((k_atoms, n_valid));
    match d {
        Dictionary::Rank1 { u, v } => {
            for k in 0..k_atoms {
                beta.row_mut(k)
                    .assign(&correlate_signal_rank1(u.row(k), v.row(k), x)?);
            }
        }
        Dictionary::Full { atoms } => {
            for k in 0..k_atoms {
                beta.row_mut(k)
                    .assign(&correlate_signal(atoms.index_axis(ndarray::Axis(0), k), x)?);
            }
        }
    }
    let norms = dtd.norms_sq();
    let center = dtd.center() as isize;
    let b = beta.as_slice_mut().expect("standard layout");
    for (l_atom, zrow) in z.outer_iter().enumerate() {
        for (t_src, &val) in zrow.iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            let (lo, hi) = window(t_src, l, n_valid);
            for k in 0..k_atoms {
                let lane = dtd.row(k, l_atom);
                let brow = &mut b[k * n_valid..(k + 1) * n_valid];
                for t in lo..hi {
                    brow[t] -= val * lane[(t as isize - t_src as isize + center) as usize];
                }
            }
        }
    }
    for (k, zrow) in z.outer_iter().enumerate() {
        let brow = &mut b[k * n_valid..(k + 1) * n_valid];
        for (bt, zt) in brow.iter_mut().zip(zrow.iter()) {
            *bt += zt * norms[k];
        }
    }
    Ok(BetaTable { beta, norms })
}

/// Closed-form minimizer over coordinate `(k, t)`: `max((beta - lambda) / ||D_k||^2, 0)`.
pub fn coordinate_update(k: usize, t: usize, beta: &BetaTable, lambda: f64) -> Result<f64> {
    let norm = beta.norms[k];
    if !(norm > 0.0) {
        return Err(CscError::DegenerateAtom(k));
    }
    Ok(((beta.beta[[k, t]] - lambda) / norm).max(0.0))
}

/// Sets `z[k0][t0] = new_value` and propagates the change to `beta`.
///
/// Only the `K (2L - 1)` entries with `|t - t0| < L` move, and `beta[k0][t0]`
/// itself does not depend on `z[k0][t0]`. Returns the number of entries touched.
pub fn apply_update(
    k0: usize,
    t0: usize,
    new_value: f64,
    z: &mut Array2<f64>,
    beta: &mut BetaTable,
    dtd: &DtdTable,
) -> usize {
    let old = z[[k0, t0]];
    if new_value == old {
        return 0;
    }
    z[[k0, t0]] = new_value;
    let n_valid = z.ncols();
    propagate(
        k0,
        t0,
        old - new_value,
        beta.beta.as_slice_mut().expect("standard layout"),
        n_valid,
        dtd,
    )
}

#[inline]
fn window(t0: usize, l: usize, n_valid: usize) -> (usize, usize) {
    (t0.saturating_sub(l - 1), (t0 + l).min(n_valid))
}

#[inline]
fn propagate(k0: usize, t0: usize, delta: f64, b: &mut [f64], n_valid: usize, dtd: &DtdTable) -> usize {
    let l = dtd.atom_len();
    let (lo, hi) = window(t0, l, n_valid);
    // lane index of t is t - t0 + (L - 1); at t = lo that is lo + L - 1 - t0
    let offset = lo + l - 1 - t0;
    let k_atoms = dtd.n_atoms();
    for k in 0..k_atoms {
        let lane = &dtd.row(k, k0)[offset..offset + (hi - lo)];
        let brow = &mut b[k * n_valid + lo..k * n_valid + hi];
        if k == k0 {
            let keep = brow[t0 - lo];
            for (bt, d) in brow.iter_mut().zip(lane) {
                *bt += d * delta;
            }
            brow[t0 - lo] = keep;
        } else {
            for (bt, d) in brow.iter_mut().zip(lane) {
                *bt += d * delta;
            }
        }
    }
    k_atoms * (hi - lo) - 1
}

/// Mutable solver state for one signal: activations, `beta`, and update counters.
#[derive(Debug, Clone)]
pub struct CdState<'a> {
    dtd: &'a DtdTable,
    z: Array2<f64>,
    beta: BetaTable,
    lambda: f64,
    inv_norms: Vec<f64>,
    n_updates: u64,
    touched: u64,
    max_touched: usize,
}

impl<'a> CdState<'a> {
    pub fn new(
        x: ArrayView2<'_, f64>,
        d: &Dictionary,
        dtd: &'a DtdTable,
        z0: ArrayView2<'_, f64>,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return contract(format!("lambda must be >= 0, got {lambda}"));
        }
        if z0.iter().any(|v| !(*v >= 0.0)) {
            return contract("warm start must be nonnegative");
        }
        let beta = init_beta(x, d, z0, dtd)?;
        if let Some(k) = beta.norms.iter().position(|n| !(*n > 0.0)) {
            return Err(CscError::DegenerateAtom(k));
        }
        let inv_norms = beta.norms.iter().map(|n| 1.0 / n).collect();
        Ok(Self {
            dtd,
            z: z0.as_standard_layout().to_owned(),
            beta,
            lambda,
            inv_norms,
            n_updates: 0,
            touched: 0,
            max_touched: 0,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_valid(&self) -> usize {
        self.z.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn beta(&self) -> &BetaTable {
        &self.beta
    }

    pub fn into_z(self) -> Array2<f64> {
        self.z
    }

    pub fn n_updates(&self) -> u64 {
        self.n_updates
    }

    pub fn touched(&self) -> u64 {
        self.touched
    }

    pub fn max_touched(&self) -> usize {
        self.max_touched
    }

    #[inline]
    pub fn candidate(&self, k: usize, t: usize) -> f64 {
        ((self.beta.beta[[k, t]] - self.lambda) * self.inv_norms[k]).max(0.0)
    }

    /// Change of the objective if `z[k][t]` were set to `new_value`.
    pub fn objective_delta(&self, k: usize, t: usize, new_value: f64) -> f64 {
        let old = self.z[[k, t]];
        let b = self.beta.beta[[k, t]];
        0.5 * self.beta.norms[k] * (new_value * new_value - old * old) - (b - self.lambda) * (new_value - old)
    }

    /// Applies an update and returns the number of `beta` entries touched.
    pub fn update(&mut self, k: usize, t: usize, new_value: f64) -> usize {
        let old = self.z[[k, t]];
        if new_value == old {
            return 0;
        }
        self.z[[k, t]] = new_value;
        let n_valid = self.n_valid();
        let touched = propagate(
            k,
            t,
            old - new_value,
            self.beta.beta.as_slice_mut().expect("standard layout"),
            n_valid,
            self.dtd,
        );
        self.n_updates += 1;
        self.touched += touched as u64;
        self.max_touched = self.max_touched.max(touched);
        touched
    }

    /// Greedy choice over all atoms and `t in [lo, hi)`: `(k, t, |z - z'|, z')`.
    ///
    /// Ties keep the lowest `(k, t)`.
    #[inline]
    pub fn best_in_range(&self, lo: usize, hi: usize) -> (usize, usize, f64, f64) {
        let n_valid = self.n_valid();
        let b = self.beta.beta.as_slice().expect("standard layout");
        let z = self.z.as_slice().expect("standard layout");
        let mut best = (0, lo, -1.0, 0.0);
        for k in 0..self.n_atoms() {
            let inv = self.inv_norms[k];
            let brow = &b[k * n_valid + lo..k * n_valid + hi];
            let zrow = &z[k * n_valid + lo..k * n_valid + hi];
            for (i, (bt, zt)) in brow.iter().zip(zrow).enumerate() {
                let cand = ((bt - self.lambda) * inv).max(0.0);
                let gap = (cand - zt).abs();
                if gap > best.2 {
                    best = (k, lo + i, gap, cand);
                }
            }
        }
        best
    }
}
