use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Epsilon for the variance guard in activation pre-normalization.
pub const STANDARDIZE_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Gelu,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x < T::zero() {
                    T::zero()
                } else {
                    x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Gelu => {
                let v = x.as_f64();
                T::lit(v * std_normal_cdf(v))
            }
        }
    }

    /// Derivative at the pre-activation `x` (with output `y`).
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Gelu => {
                let v = x.as_f64();
                T::lit(std_normal_cdf(v) + v * std_normal_pdf(v))
            }
        }
    }
}

/// Standardizes every contiguous group of `group` values to zero mean and
/// unit variance. Returns the per-group inverse standard deviations.
pub(crate) fn standardize<T: Scalar>(x: &[T], group: usize, out: &mut [T]) -> Vec<T> {
    let eps = T::lit(STANDARDIZE_EPS);
    let n = T::lit(group as f64);
    x.chunks(group)
        .zip(out.chunks_mut(group))
        .map(|(src, dst)| {
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
            inv
        })
        .collect()
}

pub(crate) fn standardize_backward<T: Scalar>(y: &[T], dy: &[T], group: usize, inv_std: &[T], dx: &mut [T]) {
    let n = T::lit(group as f64);
    for (((yg, dyg), dxg), &inv) in y.chunks(group).zip(dy.chunks(group)).zip(dx.chunks_mut(group)).zip(inv_std) {
        let mean_dy = dyg.iter().copied().sum::<T>() / n;
        let mean_dyy = yg.iter().zip(dyg).map(|(&a, &b)| a * b).sum::<T>() / n;
        for ((d, &yv), &g) in dxg.iter_mut().zip(yg).zip(dyg) {
            *d += inv * (g - mean_dy - yv * mean_dyy);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_tanh_definitions() {
        assert_eq!(Activation::Relu.apply(-1.0_f64), 0.0);
        assert_eq!(Activation::Relu.apply(2.0_f64), 2.0);
        assert_eq!(Activation::Tanh.apply(0.0_f64), 0.0);
    }

    #[test]
    fn gelu_matches_high_precision_value() {
        // x * Phi(x) at x = 1, evaluated with 30-digit arithmetic.
        let reference = 0.841_344_746_068_542_948_6_f64;
        assert!((Activation::Gelu.apply(1.0_f64) - reference).abs() < 1e-9);
    }

    #[test]
    fn standardized_groups_have_unit_moments() {
        let x = [1.0_f64, 2.0, 3.0, 4.0, -5.0, 5.0, 0.0, 0.0];
        let mut y = [0.0; 8];
        standardize(&x, 4, &mut y);
        for g in y.chunks(4) {
            let mean: f64 = g.iter().sum::<f64>() / 4.0;
            let var: f64 = g.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
