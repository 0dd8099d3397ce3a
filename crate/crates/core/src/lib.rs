//! Desk-scale CFD benchmark toolkit: flow generation, dataset containers,
//! neural-operator baselines, training and evaluation.

pub mod bench;
pub mod datakit;
pub mod diffmath;
pub mod flowgen;
pub mod operators;
pub mod trainer;
mod scalar;

pub use scalar::Scalar;

pub type Tensor32 = diffmath::Tensor<f32>;
pub type Tensor64 = diffmath::Tensor<f64>;
pub type Tape32 = diffmath::Tape<f32>;
pub type Tape64 = diffmath::Tape<f64>;
