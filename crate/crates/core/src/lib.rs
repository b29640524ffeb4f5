//! Convolutional sparse coding for long multivariate time series.
//!
//! Signals `X^n` (`P` channels x `T` samples) are modeled as
//! `sum_k z_k^n * D_k` with nonnegative sparse activations `z_k^n` and
//! short atoms `D_k`, either rank-1 (`u_k v_k^T`) or full `P x L` matrices.
//! Learning alternates a Z-step solved by locally greedy coordinate descent
//! and a D-step solved by projected gradient on precomputed statistics.

pub mod bench;
pub mod conv;
pub mod csct;
pub mod dictionary;
pub mod dstep;
pub mod error;
pub mod learner;
pub mod linalg;
pub mod objective;
pub mod par;
pub mod plot;
pub mod simulate;
pub mod tensor;
pub mod zstep;

pub use dictionary::{project_unit_ball, Dictionary, DictionaryKind};
pub use error::{CscError, Result};
pub use objective::objective;
pub use tensor::{ActivationSet, SignalSet};
