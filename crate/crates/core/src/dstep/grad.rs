use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};

use super::cache::PhiPsiCache;
use crate::dictionary::Dictionary;
use crate::error::{contract, Result};

/// `w[k][l][tau] = sum_tau' psi[k][l][tau - tau'] v_l[tau']`, the rank-1 building block.
fn psi_times_temporal(cache: &PhiPsiCache, v: ArrayView2<'_, f64>) -> Array3<f64> {
    let k_atoms = cache.n_atoms();
    let l = cache.atom_len();
    let mut w = Array3::zeros((k_atoms, k_atoms, l));
    for k in 0..k_atoms {
        for m in 0..k_atoms {
            let lane = cache.psi.slice(ndarray::s![k, m, ..]);
            let vm = v.row(m);
            for tau in 0..l {
                // psi index of lag tau - tau' is (L - 1) + tau - tau'
                let mut acc = 0.0;
                for (tp, vv) in vm.iter().enumerate() {
                    acc += lane[l - 1 + tau - tp] * vv;
                }
                w[[k, m, tau]] = acc;
            }
        }
    }
    w
}

fn check(d: &Dictionary, cache: &PhiPsiCache) -> Result<()> {
    if d.n_atoms() != cache.n_atoms() || d.n_channels() != cache.n_channels() || d.atom_len() != cache.atom_len() {
        return contract(format!(
            "dictionary (K={}, P={}, L={}) does not match cache {:?}",
            d.n_atoms(),
            d.n_channels(),
            d.atom_len(),
            cache.phi.dim()
        ));
    }
    Ok(())
}

/// Gradients of the D-step loss w.r.t. every full atom, `K x P x L`.
///
/// `grad_k = sum_l psi_{k,l} * D_l - phi_k`. Only the cache is read, never the signals.
pub fn grad_all_atoms(d: &Dictionary, cache: &PhiPsiCache) -> Result<Array3<f64>> {
    check(d, cache)?;
    let (k_atoms, p, l) = cache.phi.dim();
    let mut grad = -&cache.phi;
    match d {
        Dictionary::Rank1 { u, v } => {
            let w = psi_times_temporal(cache, v.view());
            for k in 0..k_atoms {
                for m in 0..k_atoms {
                    for pp in 0..p {
                        let um = u[[m, pp]];
                        if um == 0.0 {
                            continue;
                        }
                        for tau in 0..l {
                            grad[[k, pp, tau]] += um * w[[k, m, tau]];
                        }
                    }
                }
            }
        }
        Dictionary::Full { atoms } => {
            for k in 0..k_atoms {
                for m in 0..k_atoms {
                    let lane = cache.psi.slice(ndarray::s![k, m, ..]);
                    for pp in 0..p {
                        let dm = atoms.slice(ndarray::s![m, pp, ..]);
                        for tau in 0..l {
                            let mut acc = 0.0;
                            for (tp, dv) in dm.iter().enumerate() {
                                acc += lane[l - 1 + tau - tp] * dv;
                            }
                            grad[[k, pp, tau]] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Gradient w.r.t. the full atom `k`, `P x L`.
pub fn grad_full_atom(k: usize, d: &Dictionary, cache: &PhiPsiCache) -> Result<Array2<f64>> {
    if k >= d.n_atoms() {
        return contract(format!("atom {k} out of range"));
    }
    Ok(grad_all_atoms(d, cache)?.index_axis(ndarray::Axis(0), k).to_owned())
}

/// Chain rule through `D_k = u_k v_k^T`: `(grad_D v_k, grad_D^T u_k)`.
pub fn grad_uv(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    grad_d: ArrayView2<'_, f64>,
) -> (Array1<f64>, Array1<f64>) {
    (grad_d.dot(&v), grad_d.t().dot(&u))
}

/// D-step loss up to a constant that depends only on `X` and `Z`:
/// `1/2 sum_{k,l} <D_k, psi_{k,l} * D_l> - sum_k <D_k, phi_k>`.
pub fn objective_upto_constant(d: &Dictionary, cache: &PhiPsiCache) -> Result<f64> {
    Ok(value_and_grad(d, cache)?.0)
}

/// Loss and full-atom gradient from a single `psi * D` product.
pub(crate) fn value_and_grad(d: &Dictionary, cache: &PhiPsiCache) -> Result<(f64, Array3<f64>)> {
    let grad = grad_all_atoms(d, cache)?;
    let atoms = d.materialize();
    // <D, grad> = <D, psi D> - <D, phi>
    let mut dg = 0.0;
    let mut dphi = 0.0;
    for ((a, g), f) in atoms.iter().zip(grad.iter()).zip(cache.phi.iter()) {
        dg += a * g;
        dphi += a * f;
    }
    Ok((0.5 * dg - 0.5 * dphi, grad))
}
