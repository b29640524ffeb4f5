//! Atom representations: rank-1 factors `u_k v_k^T` or full `P x L` matrices.

use ndarray::{Array2, Array3, ArrayBase, Axis, DataMut, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryKind {
    Rank1,
    Full,
}

/// `K` atoms sharing `P` channels and `L` samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Dictionary {
    /// `u` is `K x P` (spatial maps), `v` is `K x L` (temporal patterns).
    Rank1 { u: Array2<f64>, v: Array2<f64> },
    /// `K x P x L`; the univariate model is the `P = 1` case.
    Full { atoms: Array3<f64> },
}

impl Dictionary {
    pub fn rank1(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.nrows() != v.nrows() {
            return contract(format!(
                "u has {} atoms but v has {}",
                u.nrows(),
                v.nrows()
            ));
        }
        if u.is_empty() || v.is_empty() {
            return contract("rank-1 dictionary must have K, P, L >= 1");
        }
        Ok(Dictionary::Rank1 {
            u: u.as_standard_layout().to_owned(),
            v: v.as_standard_layout().to_owned(),
        })
    }

    pub fn full(atoms: Array3<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return contract("dictionary must have K, P, L >= 1");
        }
        Ok(Dictionary::Full {
            atoms: atoms.as_standard_layout().to_owned(),
        })
    }

    pub fn kind(&self) -> DictionaryKind {
        match self {
            Dictionary::Rank1 { .. } => DictionaryKind::Rank1,
            Dictionary::Full { .. } => DictionaryKind::Full,
        }
    }

    pub fn n_atoms(&self) -> usize {
        match self {
            Dictionary::Rank1 { u, .. } => u.nrows(),
            Dictionary::Full { atoms } => atoms.dim().0,
        }
    }

    pub fn n_channels(&self) -> usize {
        match self {
            Dictionary::Rank1 { u, .. } => u.ncols(),
            Dictionary::Full { atoms } => atoms.dim().1,
        }
    }

    pub fn atom_len(&self) -> usize {
        match self {
            Dictionary::Rank1 { v, .. } => v.ncols(),
            Dictionary::Full { atoms } => atoms.dim().2,
        }
    }

    /// Full `K x P x L` atoms; for rank-1 atoms entry `[k][p][t]` is `u[k][p] * v[k][t]`.
    pub fn materialize(&self) -> Array3<f64> {
        match self {
            Dictionary::Full { atoms } => atoms.clone(),
            Dictionary::Rank1 { u, v } => {
                let (k, p) = u.dim();
                let l = v.ncols();
                Array3::from_shape_fn((k, p, l), |(k, p, t)| u[[k, p]] * v[[k, t]])
            }
        }
    }

    /// `||D_k||_2^2` for every atom.
    pub fn norms_sq(&self) -> Vec<f64> {
        match self {
            Dictionary::Rank1 { u, v } => u
                .outer_iter()
                .zip(v.outer_iter())
                .map(|(u, v)| u.dot(&u) * v.dot(&v))
                .collect(),
            Dictionary::Full { atoms } => atoms
                .outer_iter()
                .map(|d| d.iter().map(|x| x * x).sum())
                .collect(),
        }
    }

    /// Temporal patterns, `K x L`. Full atoms are reduced to their leading right singular vector.
    pub fn temporal_patterns(&self) -> Array2<f64> {
        match self {
            Dictionary::Rank1 { v, .. } => v.clone(),
            Dictionary::Full { atoms } => {
                let (k, _, l) = atoms.dim();
                let mut out = Array2::zeros((k, l));
                for (kk, atom) in atoms.outer_iter().enumerate() {
                    let (_, _, v) = crate::linalg::leading_singular_pair(atom.view());
                    out.row_mut(kk).assign(&v);
                }
                out
            }
        }
    }

    /// True when every atom (and, for rank-1, each factor) lies in the unit ball up to `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        match self {
            Dictionary::Rank1 { u, v } => u
                .outer_iter()
                .chain(v.outer_iter())
                .all(|x| x.dot(&x).sqrt() <= 1.0 + tol),
            Dictionary::Full { atoms } => atoms
                .outer_iter()
                .all(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + tol),
        }
    }

    /// Reorders atoms so that new atom `i` is old atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        match self {
            Dictionary::Rank1 { u, v } => Dictionary::Rank1 {
                u: u.select(Axis(0), perm),
                v: v.select(Axis(0), perm),
            },
            Dictionary::Full { atoms } => Dictionary::Full {
                atoms: atoms.select(Axis(0), perm),
            },
        }
    }

    /// Keeps the first `p` channels of every atom, renormalizing rank-1 spatial maps.
    pub fn truncate_channels(&self, p: usize) -> Result<Self> {
        if p == 0 || p > self.n_channels() {
            return contract(format!(
                "cannot keep {p} channels out of {}",
                self.n_channels()
            ));
        }
        match self {
            Dictionary::Rank1 { u, v } => {
                let mut u = u.slice(ndarray::s![.., ..p]).to_owned();
                for mut row in u.outer_iter_mut() {
                    let norm = row.dot(&row).sqrt();
                    if norm > 0.0 {
                        row /= norm;
                    }
                }
                Dictionary::rank1(u, v.clone())
            }
            Dictionary::Full { atoms } => {
                let mut atoms = atoms.slice(ndarray::s![.., ..p, ..]).to_owned();
                for mut d in atoms.outer_iter_mut() {
                    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        d /= norm;
                    }
                }
                Dictionary::full(atoms)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Dictionary::Rank1 { u, v } => u.iter().chain(v.iter()).all(|x| x.is_finite()),
            Dictionary::Full { atoms } => atoms.iter().all(|x| x.is_finite()),
        }
    }
}

/// Euclidean projection onto the unit ball, treating the array as one flat vector.
pub fn project_unit_ball<S, D>(x: &mut ArrayBase<S, D>)
where
    S: DataMut<Elem = f64>,
    D: Dimension,
{
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 {
        x.mapv_inplace(|v| v / norm);
    }
}

/// Slice version of [`project_unit_ball`].
pub fn project_unit_ball_slice(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
}
