use ndarray::{Array3, ArrayView2};

use crate::conv::record_time_pass;
use crate::error::{contract, Result};
use crate::par;
use crate::tensor::{ActivationSet, SignalSet};

/// Statistics of `(X, Z)` that make D-step evaluations independent of `T`.
///
/// * `phi[k][p][tau] = sum_n sum_t z_k^n[t] X^n[p][t + tau]`, shape `K x P x L`
/// * `psi[k][l][L - 1 + s] = sum_n sum_t z_k^n[t] z_l^n[t + s]` over valid `t + s`,
///   shape `K x K x (2L - 1)`
#[derive(Debug, Clone, PartialEq)]
pub struct PhiPsiCache {
    pub phi: Array3<f64>,
    pub psi: Array3<f64>,
}

impl PhiPsiCache {
    pub fn n_atoms(&self) -> usize {
        self.phi.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.phi.dim().1
    }

    pub fn atom_len(&self) -> usize {
        self.phi.dim().2
    }

    /// `psi[k][l]` at lag `s`, zero outside `|s| < L`.
    #[inline]
    pub fn psi_at(&self, k: usize, l: usize, s: isize) -> f64 {
        let idx = self.atom_len() as isize - 1 + s;
        if idx < 0 || idx >= self.psi.dim().2 as isize {
            0.0
        } else {
            self.psi[[k, l, idx as usize]]
        }
    }
}

fn check(x: &SignalSet, z: &ActivationSet, atom_len: usize) -> Result<()> {
    if atom_len == 0 || x.n_times() < atom_len {
        return contract(format!("atom length {atom_len} incompatible with T = {}", x.n_times()));
    }
    let n_valid = x.n_times() - atom_len + 1;
    if z.n_signals() != x.n_signals() || z.n_valid() != n_valid {
        return contract(format!(
            "activations {:?} do not match N = {}, T~ = {n_valid}",
            z.data().dim(),
            x.n_signals()
        ));
    }
    Ok(())
}

fn phi_one(x: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, atom_len: usize) -> Array3<f64> {
    record_time_pass();
    let k_atoms = z.nrows();
    let p = x.nrows();
    let n_valid = z.ncols();
    let mut phi = Array3::zeros((k_atoms, p, atom_len));
    let out = phi.as_slice_mut().expect("standard layout");
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let t_len = x.ncols();
    let zs = z.as_standard_layout();
    let zs = zs.as_slice().expect("standard layout");
    for k in 0..k_atoms {
        let block = &mut out[k * p * atom_len..(k + 1) * p * atom_len];
        for (t, &val) in zs[k * n_valid..(k + 1) * n_valid].iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            for pp in 0..p {
                let src = &xs[pp * t_len + t..pp * t_len + t + atom_len];
                let dst = &mut block[pp * atom_len..(pp + 1) * atom_len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += val * s;
                }
            }
        }
    }
    phi
}

fn psi_one(z: ArrayView2<'_, f64>, atom_len: usize) -> Array3<f64> {
    record_time_pass();
    let k_atoms = z.nrows();
    let n_valid = z.ncols();
    let width = 2 * atom_len - 1;
    let mut psi = Array3::zeros((k_atoms, k_atoms, width));
    let out = psi.as_slice_mut().expect("standard layout");
    let zs = z.as_standard_layout();
    let zs = zs.as_slice().expect("standard layout");
    for k in 0..k_atoms {
        for (t, &val) in zs[k * n_valid..(k + 1) * n_valid].iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            // lags s with 0 <= t + s < T~ and |s| < L
            let lo = t.saturating_sub(atom_len - 1);
            let hi = (t + atom_len).min(n_valid);
            let offset = lo + atom_len - 1 - t;
            for l in 0..k_atoms {
                let src = &zs[l * n_valid + lo..l * n_valid + hi];
                let base = (k * k_atoms + l) * width + offset;
                let dst = &mut out[base..base + (hi - lo)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += val * s;
                }
            }
        }
    }
    psi
}

/// `K x P x L` signal/activation correlations, summed over signals in index order.
pub fn compute_phi(x: &SignalSet, z: &ActivationSet, atom_len: usize, parallel: bool) -> Result<Array3<f64>> {
    check(x, z, atom_len)?;
    let parts = par::map_indexed(x.n_signals(), parallel, |n| phi_one(x.signal(n), z.signal(n), atom_len));
    Ok(sum_in_order(parts, (z.n_atoms(), x.n_channels(), atom_len)))
}

/// `K x K x (2L - 1)` activation cross-correlations, summed over signals in index order.
pub fn compute_psi(z: &ActivationSet, atom_len: usize, parallel: bool) -> Result<Array3<f64>> {
    if atom_len == 0 || atom_len > z.n_valid() + atom_len - 1 {
        return contract(format!("invalid atom length {atom_len}"));
    }
    let parts = par::map_indexed(z.n_signals(), parallel, |n| psi_one(z.signal(n), atom_len));
    Ok(sum_in_order(parts, (z.n_atoms(), z.n_atoms(), 2 * atom_len - 1)))
}

pub fn compute_cache(x: &SignalSet, z: &ActivationSet, atom_len: usize, parallel: bool) -> Result<PhiPsiCache> {
    Ok(PhiPsiCache {
        phi: compute_phi(x, z, atom_len, parallel)?,
        psi: compute_psi(z, atom_len, parallel)?,
    })
}

fn sum_in_order(parts: Vec<Array3<f64>>, shape: (usize, usize, usize)) -> Array3<f64> {
    let mut total = Array3::zeros(shape);
    for part in parts {
        total += &part;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (SignalSet, ActivationSet, usize) {
        let (n, k, p, l, tv) = (3, 2, 3, 5, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = SignalSet::new(Array3::from_shape_fn((n, p, tv + l - 1), |_| rng.random_range(-1.0..1.0))).unwrap();
        let z = ActivationSet::new(Array3::from_shape_fn((n, k, tv), |_| {
            if rng.random_bool(0.25) { rng.random_range(0.0..1.0) } else { 0.0 }
        }))
        .unwrap();
        (x, z, l)
    }

    #[test]
    fn zero_activations_give_zero_cache() {
        let (x, _, l) = instance(1);
        let z = ActivationSet::zeros(3, 2, 25);
        let c = compute_cache(&x, &z, l, false).unwrap();
        assert!(c.phi.iter().chain(c.psi.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn spike_extracts_signal_window() {
        let (x, _, l) = instance(2);
        let mut data = Array3::zeros((3, 2, 25));
        data[[1, 0, 7]] = 1.0;
        let z = ActivationSet::new(data).unwrap();
        let c = compute_cache(&x, &z, l, false).unwrap();
        let window = x.signal(1).slice(ndarray::s![.., 7..7 + l]).to_owned();
        assert_eq!(c.phi.index_axis(ndarray::Axis(0), 0), window);
        assert!(c.phi.index_axis(ndarray::Axis(0), 1).iter().all(|v| *v == 0.0));
        let mut e = ndarray::Array1::zeros(2 * l - 1);
        e[l - 1] = 1.0;
        assert_eq!(c.psi.slice(ndarray::s![0, 0, ..]), e);
    }

    #[test]
    fn matches_naive_double_loops() {
        let (x, z, l) = instance(3);
        let c = compute_cache(&x, &z, l, false).unwrap();
        let (n, k, tv) = z.data().dim();
        let p = x.n_channels();
        for kk in 0..k {
            for pp in 0..p {
                for tau in 0..l {
                    let mut acc = 0.0;
                    for nn in 0..n {
                        for t in 0..tv {
                            acc += z.data()[[nn, kk, t]] * x.data()[[nn, pp, t + tau]];
                        }
                    }
                    assert!((c.phi[[kk, pp, tau]] - acc).abs() < 1e-10);
                }
            }
            for ll in 0..k {
                for s in -(l as isize - 1)..(l as isize) {
                    let mut acc = 0.0;
                    for nn in 0..n {
                        for t in 0..tv as isize {
                            let j = t + s;
                            if j >= 0 && j < tv as isize {
                                acc += z.data()[[nn, kk, t as usize]] * z.data()[[nn, ll, j as usize]];
                            }
                        }
                    }
                    assert!((c.psi_at(kk, ll, s) - acc).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn psi_symmetry() {
        let (_, z, l) = instance(4);
        let psi = compute_psi(&z, l, false).unwrap();
        let c = PhiPsiCache { phi: Array3::zeros((2, 1, l)), psi };
        for k in 0..2 {
            for m in 0..2 {
                for s in -(l as isize - 1)..(l as isize) {
                    assert!((c.psi_at(k, m, s) - c.psi_at(m, k, -s)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let (x, z, l) = instance(5);
        assert_eq!(compute_cache(&x, &z, l, true).unwrap(), compute_cache(&x, &z, l, false).unwrap());
    }
}
