//! Direct time-domain convolution and correlation kernels.
//!
//! Atoms are short compared with signals, so everything here is a plain
//! `O(P L T)` loop over contiguous rows.

use std::cell::Cell;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut2};

use crate::error::{contract, Result};

thread_local! {
    static TIME_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of kernel calls on this thread that iterated over the full signal length.
///
/// Used to check that cached D-step evaluations never touch the `T` axis.
pub fn time_passes() -> u64 {
    TIME_PASSES.with(|c| c.get())
}

pub(crate) fn record_time_pass() {
    TIME_PASSES.with(|c| c.set(c.get() + 1));
}

/// `z * D`: every row of the `P x L` atom convolved with `z`, giving `P x (len(z) + L - 1)`.
pub fn convolve(z: ArrayView1<'_, f64>, atom: ArrayView2<'_, f64>) -> Array2<f64> {
    let (p, l) = atom.dim();
    let mut out = Array2::zeros((p, z.len() + l - 1));
    convolve_add(z, atom, 1.0, out.view_mut()).expect("shapes are consistent");
    out
}

/// `out += scale * (z * D)`.
pub fn convolve_add(
    z: ArrayView1<'_, f64>,
    atom: ArrayView2<'_, f64>,
    scale: f64,
    mut out: ArrayViewMut2<'_, f64>,
) -> Result<()> {
    let (p, l) = atom.dim();
    if out.dim() != (p, z.len() + l - 1) {
        return contract(format!(
            "convolution of {} activations with a {p}x{l} atom needs a {p}x{} output, got {:?}",
            z.len(),
            z.len() + l - 1,
            out.dim()
        ));
    }
    record_time_pass();
    for (tau, &zt) in z.iter().enumerate() {
        if zt == 0.0 {
            continue;
        }
        let w = scale * zt;
        for (d_row, mut o_row) in atom.outer_iter().zip(out.outer_iter_mut()) {
            let o = &mut o_row.as_slice_mut().expect("contiguous row")[tau..tau + l];
            for (o, d) in o.iter_mut().zip(d_row.iter()) {
                *o += w * d;
            }
        }
    }
    Ok(())
}

/// `sum_k z_k * D_k` for `K x T~` activations and `K x P x L` atoms.
pub fn reconstruct(z: ArrayView2<'_, f64>, atoms: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
    let (k, p, l) = atoms.dim();
    if z.nrows() != k {
        return contract(format!("{} activation rows for {k} atoms", z.nrows()));
    }
    let mut out = Array2::zeros((p, z.ncols() + l - 1));
    for (zk, dk) in z.outer_iter().zip(atoms.outer_iter()) {
        convolve_add(zk, dk, 1.0, out.view_mut())?;
    }
    Ok(out)
}

/// Multichannel cross-correlation of a `P x L` and a `P x L'` block, length `L + L' - 1`.
///
/// Entry `L - 1 + s` is the lag-`s` value `sum_p sum_tau a[p][tau] b[p][tau + s]`,
/// so the zero lag sits at index `L - 1`.
pub fn cross_correlate(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let (p, la) = a.dim();
    let (pb, lb) = b.dim();
    if p != pb {
        return contract(format!("channel mismatch: {p} vs {pb}"));
    }
    let mut out = Array1::zeros(la + lb - 1);
    for (ra, rb) in a.outer_iter().zip(b.outer_iter()) {
        correlate_rows_add(ra, rb, 1.0, out.as_slice_mut().expect("contiguous"));
    }
    Ok(out)
}

/// `out[la - 1 + s] += scale * sum_tau a[tau] b[tau + s]` for every lag.
pub(crate) fn correlate_rows_add(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, scale: f64, out: &mut [f64]) {
    let la = a.len() as isize;
    let lb = b.len() as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let s = i as isize - (la - 1);
        let lo = 0.max(-s);
        let hi = la.min(lb - s);
        let mut acc = 0.0;
        for tau in lo..hi {
            acc += a[tau as usize] * b[(tau + s) as usize];
        }
        *o += scale * acc;
    }
}

/// `(D~ ~* X)[t] = sum_p sum_tau D[p][tau] X[p][t + tau]` for `t < T - L + 1`.
pub fn correlate_signal(atom: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let (p, l) = atom.dim();
    let (px, t) = x.dim();
    if p != px {
        return contract(format!("channel mismatch: atom {p} vs signal {px}"));
    }
    if t < l {
        return contract(format!("signal length {t} shorter than atom length {l}"));
    }
    record_time_pass();
    let n_valid = t - l + 1;
    let mut out = Array1::zeros(n_valid);
    let o = out.as_slice_mut().expect("contiguous");
    for (d_row, x_row) in atom.outer_iter().zip(x.outer_iter()) {
        correlate_valid_add(d_row, x_row, o);
    }
    Ok(out)
}

/// Rank-1 shortcut: `(u v^T)~ ~* X = v~ ~* (u^T X)`, costing `T (P + L)` instead of `T P L`.
pub fn correlate_signal_rank1(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    let (px, t) = x.dim();
    if u.len() != px {
        return contract(format!("channel mismatch: atom {} vs signal {px}", u.len()));
    }
    if t < v.len() {
        return contract(format!("signal length {t} shorter than atom length {}", v.len()));
    }
    record_time_pass();
    let projected = x.t().dot(&u);
    let mut out = Array1::zeros(t - v.len() + 1);
    correlate_valid_add(v, projected.view(), out.as_slice_mut().expect("contiguous"));
    Ok(out)
}

fn correlate_valid_add(d: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>, out: &mut [f64]) {
    let d = d.as_slice().expect("contiguous atom row");
    let x = x.as_slice().expect("contiguous signal row");
    for (t, o) in out.iter_mut().enumerate() {
        let window = &x[t..t + d.len()];
        *o += window.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn naive_convolve(z: &[f64], d: &Array2<f64>) -> Array2<f64> {
        let (p, l) = d.dim();
        let t_len = z.len() + l - 1;
        let mut out = Array2::zeros((p, t_len));
        for pp in 0..p {
            for t in 0..t_len {
                for (tau, zv) in z.iter().enumerate() {
                    if t >= tau && t - tau < l {
                        out[[pp, t]] += zv * d[[pp, t - tau]];
                    }
                }
            }
        }
        out
    }

    fn naive_xcorr(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
        let (p, la) = a.dim();
        let lb = b.ncols();
        let mut out = vec![0.0; la + lb - 1];
        // 1-based definition: out[t] = sum_p sum_tau A[p][tau] B[p][t + tau - la]
        for t in 1..=(la + lb - 1) {
            for pp in 0..p {
                for tau in 1..=la {
                    let j = t as isize + tau as isize - la as isize;
                    if j >= 1 && j <= lb as isize {
                        out[t - 1] += a[[pp, tau - 1]] * b[[pp, j as usize - 1]];
                    }
                }
            }
        }
        out
    }

    fn matrix(p: usize, l: usize) -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(-2.0f64..2.0, p * l)
            .prop_map(move |v| Array2::from_shape_vec((p, l), v).unwrap())
    }

    #[test]
    fn delta_activation_copies_atom() {
        let d = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let z = array![1.0, 0.0, 0.0, 0.0];
        let out = convolve(z.view(), d.view());
        assert_eq!(out.slice(ndarray::s![.., ..3]), d);
        assert!(out.slice(ndarray::s![.., 3..]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_activation_gives_zero() {
        let d = array![[1.0, 2.0]];
        let out = convolve(Array1::zeros(5).view(), d.view());
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn convolve_matches_naive_small_case() {
        let z = array![0.3, -1.2, 0.0, 2.0, 0.7];
        let d = array![[0.1, -0.4, 0.9], [1.5, 0.2, -0.3]];
        let fast = convolve(z.view(), d.view());
        let slow = naive_convolve(z.as_slice().unwrap(), &d);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn autocorrelation_center_is_squared_norm() {
        let a = array![[0.6, 0.0], [0.0, 0.8]];
        let c = cross_correlate(a.view(), a.view()).unwrap();
        assert!((c[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn correlation_with_zero_is_zero() {
        let a = array![[0.6, 0.1, 3.0]];
        let c = cross_correlate(a.view(), Array2::zeros((1, 4)).view()).unwrap();
        assert_eq!(c.len(), 6);
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((3, 3));
        assert!(cross_correlate(a.view(), b.view()).is_err());
        assert!(correlate_signal(a.view(), Array2::zeros((3, 10)).view()).is_err());
    }

    #[test]
    fn xcorr_matches_naive_p3_l4() {
        let a = array![[0.2, -1.0, 0.5, 0.3], [1.1, 0.0, -0.7, 0.4], [0.9, 0.9, -0.2, 0.1]];
        let b = array![[-0.3, 0.8, 0.1, 0.6], [0.5, -0.5, 1.2, 0.0], [0.7, 0.2, 0.3, -1.0]];
        let fast = cross_correlate(a.view(), b.view()).unwrap();
        let slow = naive_xcorr(&a, &b);
        for (x, y) in fast.iter().zip(slow.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn convolve_agrees_with_naive(
            (z, d) in (1usize..5, 1usize..9, 1usize..40).prop_flat_map(|(p, l, tv)| {
                (proptest::collection::vec(-2.0f64..2.0, tv), matrix(p, l))
            })
        ) {
            let fast = convolve(ArrayView1::from(&z), d.view());
            let slow = naive_convolve(&z, &d);
            for (a, b) in fast.iter().zip(slow.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn xcorr_agrees_with_naive(
            (a, b) in (1usize..5, 1usize..12, 1usize..12).prop_flat_map(|(p, la, lb)| {
                (matrix(p, la), matrix(p, lb))
            })
        ) {
            let fast = cross_correlate(a.view(), b.view()).unwrap();
            let slow = naive_xcorr(&a, &b);
            for (x, y) in fast.iter().zip(slow.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn signal_correlation_agrees_with_naive(
            (d, x) in (1usize..4, 1usize..8, 0usize..40).prop_flat_map(|(p, l, extra)| {
                (matrix(p, l), matrix(p, l + extra))
            })
        ) {
            let fast = correlate_signal(d.view(), x.view()).unwrap();
            let (p, l) = d.dim();
            for t in 0..fast.len() {
                let mut acc = 0.0;
                for pp in 0..p {
                    for tau in 0..l {
                        acc += d[[pp, tau]] * x[[pp, t + tau]];
                    }
                }
                prop_assert!((fast[t] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank1_correlation_matches_materialized() {
        let u = array![0.6, -0.8];
        let v = array![0.5, 0.5, -0.5, 0.5];
        let x = Array2::from_shape_fn((2, 12), |(p, t)| ((p * 7 + t * 3) % 5) as f64 - 2.0);
        let d = Array2::from_shape_fn((2, 4), |(p, t)| u[p] * v[t]);
        let a = correlate_signal(d.view(), x.view()).unwrap();
        let b = correlate_signal_rank1(u.view(), v.view(), x.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}
