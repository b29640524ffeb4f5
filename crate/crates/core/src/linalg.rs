//! Small dense helpers.

use ndarray::{Array1, ArrayView2};

const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-12;

/// Leading singular triple `(sigma, u, v)` of a `P x L` matrix by power iteration.
///
/// `u` and `v` are unit-norm. A zero matrix returns `sigma = 0` with `u = e_0`, `v = e_0`.
pub fn leading_singular_pair(c: ArrayView2<'_, f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (p, l) = c.dim();
    // start from the row with the largest energy; it is never orthogonal to the top right vector
    // unless the matrix is zero
    let mut v = c
        .outer_iter()
        .max_by(|a, b| a.dot(a).total_cmp(&b.dot(b)))
        .map(|r| r.to_owned())
        .unwrap_or_else(|| Array1::zeros(l));
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        let mut u = Array1::zeros(p);
        let mut v = Array1::zeros(l);
        u[0] = 1.0;
        v[0] = 1.0;
        return (0.0, u, v);
    }
    v /= norm;
    let mut u = c.dot(&v);
    let mut sigma = u.dot(&u).sqrt();
    u /= sigma;
    for _ in 0..POWER_ITERS {
        let mut v_new = c.t().dot(&u);
        let s = v_new.dot(&v_new).sqrt();
        v_new /= s;
        let mut u_new = c.dot(&v_new);
        sigma = u_new.dot(&u_new).sqrt();
        u_new /= sigma;
        let delta = (&v_new - &v).iter().map(|x| x.abs()).fold(0.0, f64::max);
        u = u_new;
        v = v_new;
        if delta < POWER_TOL {
            break;
        }
    }
    (sigma, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn recovers_rank_one_factors() {
        let c = array![[2.0, 4.0, 0.0], [1.0, 2.0, 0.0]];
        let (s, u, v) = leading_singular_pair(c.view());
        let expect = 5.0;
        assert!((s - expect).abs() < 1e-12);
        let rebuilt = ndarray::Array2::from_shape_fn((2, 3), |(i, j)| s * u[i] * v[j]);
        for (a, b) in rebuilt.iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_is_handled() {
        let c = ndarray::Array2::<f64>::zeros((3, 4));
        let (s, u, v) = leading_singular_pair(c.view());
        assert_eq!(s, 0.0);
        assert_eq!(u.dot(&u), 1.0);
        assert_eq!(v.dot(&v), 1.0);
    }
}
