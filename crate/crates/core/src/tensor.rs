//! Signal and activation containers.

use ndarray::{Array3, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{contract, Result};

/// `N` multivariate signals sharing `P` channels and `T` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    data: Array3<f64>,
}

impl SignalSet {
    /// Wraps an `[n][p][t]` array. The array is copied into standard layout if needed.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.is_empty() {
            return contract("signal set must have non-zero N, P and T");
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Self { data })
    }

    pub fn zeros(n_signals: usize, n_channels: usize, n_times: usize) -> Self {
        Self {
            data: Array3::zeros((n_signals, n_channels, n_times)),
        }
    }

    pub fn n_signals(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_times(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// The `P x T` matrix of signal `n`.
    pub fn signal(&self, n: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), n)
    }

    /// Keeps the first `p` channels of every signal.
    pub fn truncate_channels(&self, p: usize) -> Result<Self> {
        if p == 0 || p > self.n_channels() {
            return contract(format!(
                "cannot keep {p} channels out of {}",
                self.n_channels()
            ));
        }
        Self::new(
            self.data
                .slice(ndarray::s![.., ..p, ..])
                .to_owned(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `sum_n ||X^n||_2^2`
    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Nonnegative activations `z_k^n[t]`, stored densely as `[n][k][t]` with `t < T - L + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    data: Array3<f64>,
}

impl ActivationSet {
    pub fn zeros(n_signals: usize, n_atoms: usize, n_valid: usize) -> Self {
        Self {
            data: Array3::zeros((n_signals, n_atoms, n_valid)),
        }
    }

    /// Wraps an `[n][k][t]` array; every entry must be finite and nonnegative.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if let Some(bad) = data.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return contract(format!("activations must be finite and >= 0, found {bad}"));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Self { data })
    }

    pub fn n_signals(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_atoms(&self) -> usize {
        self.data.dim().1
    }

    /// `T~ = T - L + 1`
    pub fn n_valid(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// The `K x T~` activations of signal `n`.
    pub fn signal(&self, n: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), n)
    }

    pub(crate) fn signal_mut(&mut self, n: usize) -> ArrayViewMut2<'_, f64> {
        self.data.index_axis_mut(Axis(0), n)
    }

    /// Iterates `(k, t, value)` over the nonzero activations of signal `n`.
    pub fn nonzeros(&self, n: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n_valid = self.n_valid();
        let z = self.data.index_axis(Axis(0), n);
        let flat = z.to_slice().expect("standard layout");
        flat.iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(move |(i, v)| (i / n_valid, i % n_valid, *v))
    }

    pub fn count_nonzeros(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// `sum_n ||z_k^n||_1` for every atom `k`.
    pub fn atom_l1(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_atoms()];
        for n in 0..self.n_signals() {
            for (k, row) in self.signal(n).outer_iter().enumerate() {
                out[k] += row.sum();
            }
        }
        out
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.sum()
    }

    /// Replaces signal `n` with `z`, which must be `K x T~` and nonnegative.
    pub fn set_signal(&mut self, n: usize, z: ArrayView2<'_, f64>) -> Result<()> {
        if z.dim() != (self.n_atoms(), self.n_valid()) {
            return contract(format!(
                "activation block {:?} does not match {:?}",
                z.dim(),
                (self.n_atoms(), self.n_valid())
            ));
        }
        if z.iter().any(|v| !(*v >= 0.0)) {
            return contract("activations must be >= 0");
        }
        self.signal_mut(n).assign(&z);
        Ok(())
    }
}
