use super::{DiffError, Tensor};
use crate::scalar::Scalar;

/// Bias-corrected Adam moments for an ordered parameter list.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], base_lr: f64) -> Self {
        Self::with_betas(params, base_lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor<T>], base_lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self { m: zeros(), v: zeros(), step: 0, beta1, beta2, eps, base_lr }
    }
}

/// One Adam update at learning rate `lr`. A missing gradient counts as zero.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DiffError::Dimension {
            op: "adam_step",
            lhs: vec![params.len(), state.m.len()],
            rhs: vec![grads.len()],
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(DiffError::Dimension { op: "adam_step", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
            }
        }
        if m.shape() != p.shape() {
            return Err(DiffError::Dimension { op: "adam_step", lhs: p.shape().to_vec(), rhs: m.shape().to_vec() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].as_ref().map(|g| g.data());
        for j in 0..p.numel() {
            let gj = g.map_or(0.0, |g| g[j].as_f64());
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
            m[j] = T::lit(mj);
            v[j] = T::lit(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + state.eps);
            let pj = &mut p.data_mut()[j];
            *pj = T::lit(pj.as_f64() - update);
        }
    }
    Ok(())
}
