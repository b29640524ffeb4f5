use ndarray::{Array3, ArrayView3};

use crate::conv::correlate_rows_add;
use crate::dictionary::Dictionary;

/// Atom cross-correlations `(D~_k ~* D_l)` for every pair, indexed by lag in `[-(L-1), L-1]`.
///
/// `table[k][l][L - 1 + s] = sum_p sum_tau D_k[p][tau] D_l[p][tau + s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtdTable {
    table: Array3<f64>,
    atom_len: usize,
}

impl DtdTable {
    pub fn n_atoms(&self) -> usize {
        self.table.dim().0
    }

    pub fn atom_len(&self) -> usize {
        self.atom_len
    }

    pub fn center(&self) -> usize {
        self.atom_len - 1
    }

    pub fn table(&self) -> &Array3<f64> {
        &self.table
    }

    /// Value at lag `s`; zero outside `|s| < L`.
    pub fn at(&self, k: usize, l: usize, s: isize) -> f64 {
        let idx = self.center() as isize + s;
        if idx < 0 || idx >= self.table.dim().2 as isize {
            0.0
        } else {
            self.table[[k, l, idx as usize]]
        }
    }

    /// Contiguous row `table[k][l][..]`.
    pub(crate) fn row(&self, k: usize, l: usize) -> &[f64] {
        let width = self.table.dim().2;
        let flat = self.table.as_slice().expect("standard layout");
        let start = (k * self.n_atoms() + l) * width;
        &flat[start..start + width]
    }

    /// `||D_k||^2` for every atom (the zero-lag diagonal).
    pub fn norms_sq(&self) -> Vec<f64> {
        (0..self.n_atoms())
            .map(|k| self.table[[k, k, self.center()]])
            .collect()
    }
}

/// Builds the table, using the factorized `(u_k . u_l) (v_k ~* v_l)` form for rank-1 atoms.
pub fn compute_dtd(d: &Dictionary) -> DtdTable {
    match d {
        Dictionary::Full { atoms } => compute_dtd_direct(atoms.view()),
        Dictionary::Rank1 { u, v } => {
            let (k, _) = u.dim();
            let l = v.ncols();
            let width = 2 * l - 1;
            let mut table = Array3::zeros((k, k, width));
            for a in 0..k {
                for b in 0..k {
                    let spatial = u.row(a).dot(&u.row(b));
                    let mut lane = table.slice_mut(ndarray::s![a, b, ..]);
                    correlate_rows_add(
                        v.row(a),
                        v.row(b),
                        spatial,
                        lane.as_slice_mut().expect("contiguous"),
                    );
                }
            }
            DtdTable { table, atom_len: l }
        }
    }
}

/// Direct `O(K^2 L^2 P)` evaluation on full `K x P x L` atoms.
pub fn compute_dtd_direct(atoms: ArrayView3<'_, f64>) -> DtdTable {
    let (k, _, l) = atoms.dim();
    let width = 2 * l - 1;
    let mut table = Array3::zeros((k, k, width));
    for a in 0..k {
        for b in 0..k {
            let mut lane = table.slice_mut(ndarray::s![a, b, ..]);
            let out = lane.as_slice_mut().expect("contiguous");
            for (ra, rb) in atoms
                .index_axis(ndarray::Axis(0), a)
                .outer_iter()
                .zip(atoms.index_axis(ndarray::Axis(0), b).outer_iter())
            {
                correlate_rows_add(ra, rb, 1.0, out);
            }
        }
    }
    DtdTable { table, atom_len: l }
}
