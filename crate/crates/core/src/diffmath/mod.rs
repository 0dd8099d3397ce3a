//! Dense arrays with reverse-mode differentiation and the kernels the model zoo needs.

mod activation;
mod conv;
mod optim;
mod spectral;
mod tape;
mod tensor;

pub use activation::{Activation, STANDARDIZE_EPS};
pub use conv::{conv2d, conv2d_backward, conv_transpose2x2, conv_transpose2x2_backward, max_pool2};
pub use optim::{adam_step, AdamState};
pub use spectral::{retained_rows, spectral_conv, spectral_conv_backward, Modes, SpectralCache, SpectralPlan};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

/// Plain matrix product of two rank-2 tensors, outside any tape.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, DiffError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(DiffError::Dimension { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(T::one(), MatRef::rm(a.data(), m, k), MatRef::rm(b.data(), k, n), T::zero(), &mut out);
    Tensor::new([m, n], out)
}
