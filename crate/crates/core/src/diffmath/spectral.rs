//! Truncated spectral convolution: forward 2-D DFT, per-mode complex channel
//! mixing over the retained low modes, inverse DFT.
//!
//! The last axis (W) uses the real-input half spectrum (`W/2 + 1` bins); the
//! row axis (H) keeps the lowest frequencies by magnitude in standard FFT index
//! order. Transforms are evaluated as dense products against cached twiddle
//! tables, so their cost scales with the retained mode count rather than the
//! full spectrum.

use std::f64::consts::PI;

use super::{DiffError, Tensor};
use crate::scalar::{gemm, MatRef, Scalar};

/// Retained mode counts along the row axis (full spectrum) and the column
/// axis (half spectrum).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Modes {
    pub rows: usize,
    pub cols: usize,
}

impl Modes {
    pub fn square(m: usize) -> Self {
        Self { rows: m, cols: m }
    }

    /// Every non-redundant mode of an `h x w` real grid.
    pub fn full(h: usize, w: usize) -> Self {
        Self { rows: h, cols: w / 2 + 1 }
    }
}

/// Row-axis DFT indices kept for `m` modes on an axis of length `n`.
pub fn retained_rows(n: usize, m: usize) -> Vec<usize> {
    let pos = m.div_ceil(2);
    let neg = m / 2;
    (0..pos).chain(n - neg..n).collect()
}

/// Cached twiddle tables for one grid size and mode selection.
#[derive(Clone, Debug)]
pub struct SpectralPlan<T> {
    h: usize,
    w: usize,
    modes: Modes,
    // [W, mc]
    cos_w: Vec<T>,
    sin_w: Vec<T>,
    // [mr, H]
    cos_h: Vec<T>,
    sin_h: Vec<T>,
    // Hermitian multiplicity of each retained column bin.
    hermitian: Vec<T>,
}

impl<T: Scalar> SpectralPlan<T> {
    pub fn new(h: usize, w: usize, modes: Modes) -> Result<Self, DiffError> {
        if modes.rows == 0 || modes.cols == 0 || modes.rows > h || modes.cols > w / 2 + 1 {
            return Err(DiffError::Config(format!(
                "spectral modes {}x{} exceed the capacity of a {h}x{w} grid (max {h}x{})",
                modes.rows,
                modes.cols,
                w / 2 + 1
            )));
        }
        let (mr, mc) = (modes.rows, modes.cols);
        let mut cos_w = vec![T::zero(); w * mc];
        let mut sin_w = vec![T::zero(); w * mc];
        for x in 0..w {
            for k in 0..mc {
                // Reduce the phase index first to keep tables exact for large grids.
                let ang = 2.0 * PI * ((x * k) % w) as f64 / w as f64;
                cos_w[x * mc + k] = T::lit(ang.cos());
                sin_w[x * mc + k] = T::lit(ang.sin());
            }
        }
        let rows = retained_rows(h, mr);
        let mut cos_h = vec![T::zero(); mr * h];
        let mut sin_h = vec![T::zero(); mr * h];
        for (r, &f) in rows.iter().enumerate() {
            for y in 0..h {
                let ang = 2.0 * PI * ((f * y) % h) as f64 / h as f64;
                cos_h[r * h + y] = T::lit(ang.cos());
                sin_h[r * h + y] = T::lit(ang.sin());
            }
        }
        let hermitian = (0..mc)
            .map(|k| if k == 0 || (w % 2 == 0 && k == w / 2) { T::one() } else { T::lit(2.0) })
            .collect();
        Ok(Self { h, w, modes, cos_w, sin_w, cos_h, sin_h, hermitian })
    }

    pub fn modes(&self) -> Modes {
        self.modes
    }

    fn mode_count(&self) -> usize {
        self.modes.rows * self.modes.cols
    }

    /// `X[k] = sum_{y,x} plane[y,x] e^{-i theta}` for the retained modes.
    fn forward(&self, plane: &[T], re: &mut [T], im: &mut [T], scratch: &mut Scratch<T>) {
        let (h, w, mr, mc) = (self.h, self.w, self.modes.rows, self.modes.cols);
        let xm = MatRef::rm(plane, h, w);
        gemm(T::one(), xm, MatRef::rm(&self.cos_w, w, mc), T::zero(), &mut scratch.zr);
        gemm(-T::one(), xm, MatRef::rm(&self.sin_w, w, mc), T::zero(), &mut scratch.zi);
        let ch = MatRef::rm(&self.cos_h, mr, h);
        let sh = MatRef::rm(&self.sin_h, mr, h);
        let zr = MatRef::rm(&scratch.zr, h, mc);
        let zi = MatRef::rm(&scratch.zi, h, mc);
        gemm(T::one(), ch, zr, T::zero(), re);
        gemm(T::one(), sh, zi, T::one(), re);
        gemm(T::one(), ch, zi, T::zero(), im);
        gemm(-T::one(), sh, zr, T::one(), im);
    }

    /// `plane[y,x] = scale * sum_k weight_k Re(Y[k] e^{+i theta})`.
    fn inverse(&self, re: &[T], im: &[T], weights: &[T], scale: T, plane: &mut [T], scratch: &mut Scratch<T>) {
        let (h, w, mr, mc) = (self.h, self.w, self.modes.rows, self.modes.cols);
        let cht = MatRef::rm(&self.cos_h, mr, h).t();
        let sht = MatRef::rm(&self.sin_h, mr, h).t();
        let yr = MatRef::rm(re, mr, mc);
        let yi = MatRef::rm(im, mr, mc);
        gemm(T::one(), cht, yr, T::zero(), &mut scratch.zr);
        gemm(-T::one(), sht, yi, T::one(), &mut scratch.zr);
        gemm(T::one(), cht, yi, T::zero(), &mut scratch.zi);
        gemm(T::one(), sht, yr, T::one(), &mut scratch.zi);
        for row in 0..h {
            for k in 0..mc {
                let f = weights[k] * scale;
                scratch.zr[row * mc + k] *= f;
                scratch.zi[row * mc + k] *= f;
            }
        }
        let cwt = MatRef::rm(&self.cos_w, w, mc).t();
        let swt = MatRef::rm(&self.sin_w, w, mc).t();
        gemm(T::one(), MatRef::rm(&scratch.zr, h, mc), cwt, T::zero(), plane);
        gemm(-T::one(), MatRef::rm(&scratch.zi, h, mc), swt, T::one(), plane);
    }
}

struct Scratch<T> {
    zr: Vec<T>,
    zi: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(h: usize, mc: usize) -> Self {
        Self { zr: vec![T::zero(); h * mc], zi: vec![T::zero(); h * mc] }
    }
}

/// Retained spectrum of the input, kept for the weight adjoint.
#[derive(Clone, Debug)]
pub struct SpectralCache<T> {
    re: Vec<T>,
    im: Vec<T>,
}

fn check_shapes(x: &[usize], wr: &[usize], wi: &[usize], plan_hw: (usize, usize), modes: Modes) -> Result<(), DiffError> {
    let ok = x.len() == 4
        && wr.len() == 4
        && wr == wi
        && wr[1] == x[1]
        && wr[2] == modes.rows
        && wr[3] == modes.cols
        && (x[2], x[3]) == plan_hw;
    if ok {
        Ok(())
    } else {
        Err(DiffError::Dimension { op: "spectral_conv", lhs: x.to_vec(), rhs: wr.to_vec() })
    }
}

/// `x: [B, C_in, H, W]`, weights (real and imaginary parts) `[C_out, C_in, m_rows, m_cols]`.
pub fn spectral_conv<T: Scalar>(
    plan: &SpectralPlan<T>,
    x: &Tensor<T>,
    wr: &Tensor<T>,
    wi: &Tensor<T>,
) -> Result<(Tensor<T>, SpectralCache<T>), DiffError> {
    check_shapes(x.shape(), wr.shape(), wi.shape(), (plan.h, plan.w), plan.modes)?;
    let (batch, cin, h, w) = (x.shape()[0], x.shape()[1], plan.h, plan.w);
    let cout = wr.shape()[0];
    let nm = plan.mode_count();
    let mut scratch = Scratch::new(h, plan.modes.cols);
    let mut xr = vec![T::zero(); batch * cin * nm];
    let mut xi = vec![T::zero(); batch * cin * nm];
    for p in 0..batch * cin {
        plan.forward(&x.data()[p * h * w..(p + 1) * h * w], &mut xr[p * nm..(p + 1) * nm], &mut xi[p * nm..(p + 1) * nm], &mut scratch);
    }
    let (wrd, wid) = (wr.data(), wi.data());
    let mut out = vec![T::zero(); batch * cout * h * w];
    let mut yr = vec![T::zero(); nm];
    let mut yi = vec![T::zero(); nm];
    let scale = T::one() / T::lit((h * w) as f64);
    for b in 0..batch {
        for o in 0..cout {
            yr.fill(T::zero());
            yi.fill(T::zero());
            for i in 0..cin {
                let xo = (b * cin + i) * nm;
                let wo = (o * cin + i) * nm;
                for k in 0..nm {
                    let (ar, ai) = (xr[xo + k], xi[xo + k]);
                    let (br, bi) = (wrd[wo + k], wid[wo + k]);
                    yr[k] += ar * br - ai * bi;
                    yi[k] += ar * bi + ai * br;
                }
            }
            let dst = &mut out[(b * cout + o) * h * w..(b * cout + o + 1) * h * w];
            plan.inverse(&yr, &yi, &plan.hermitian, scale, dst, &mut scratch);
        }
    }
    Ok((Tensor::new([batch, cout, h, w], out)?, SpectralCache { re: xr, im: xi }))
}

/// Adjoints of [`spectral_conv`] for the input and both weight parts.
#[allow(clippy::type_complexity)]
pub fn spectral_conv_backward<T: Scalar>(
    plan: &SpectralPlan<T>,
    cache: &SpectralCache<T>,
    x_shape: &[usize],
    wr: &Tensor<T>,
    wi: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<T>>, Option<(Tensor<T>, Tensor<T>)>), DiffError> {
    let (batch, cin, h, w) = (x_shape[0], x_shape[1], plan.h, plan.w);
    let cout = wr.shape()[0];
    let nm = plan.mode_count();
    let mc = plan.modes.cols;
    let mut scratch = Scratch::new(h, mc);
    // Adjoint of the scaled Hermitian inverse: a forward transform of dy with the
    // same per-bin weights.
    let scale = T::one() / T::lit((h * w) as f64);
    let mut gr = vec![T::zero(); batch * cout * nm];
    let mut gi = vec![T::zero(); batch * cout * nm];
    for p in 0..batch * cout {
        let (r, i) = (&mut gr[p * nm..(p + 1) * nm], &mut gi[p * nm..(p + 1) * nm]);
        plan.forward(&dy.data()[p * h * w..(p + 1) * h * w], r, i, &mut scratch);
        for k in 0..nm {
            let f = plan.hermitian[k % mc] * scale;
            r[k] *= f;
            i[k] *= f;
        }
    }
    let (wrd, wid) = (wr.data(), wi.data());
    let dw = if need_dw {
        let mut dwr = vec![T::zero(); wr.numel()];
        let mut dwi = vec![T::zero(); wi.numel()];
        for b in 0..batch {
            for o in 0..cout {
                let go = (b * cout + o) * nm;
                for i in 0..cin {
                    let xo = (b * cin + i) * nm;
                    let wo = (o * cin + i) * nm;
                    for k in 0..nm {
                        let (ar, ai) = (cache.re[xo + k], cache.im[xo + k]);
                        let (g_r, g_i) = (gr[go + k], gi[go + k]);
                        dwr[wo + k] += ar * g_r + ai * g_i;
                        dwi[wo + k] += ar * g_i - ai * g_r;
                    }
                }
            }
        }
        Some((Tensor::new(wr.shape().to_vec(), dwr)?, Tensor::new(wi.shape().to_vec(), dwi)?))
    } else {
        None
    };
    let dx = if need_dx {
        let mut dx = vec![T::zero(); batch * cin * h * w];
        let ones = vec![T::one(); mc];
        let mut sr = vec![T::zero(); nm];
        let mut si = vec![T::zero(); nm];
        for b in 0..batch {
            for i in 0..cin {
                sr.fill(T::zero());
                si.fill(T::zero());
                for o in 0..cout {
                    let go = (b * cout + o) * nm;
                    let wo = (o * cin + i) * nm;
                    for k in 0..nm {
                        let (br, bi) = (wrd[wo + k], wid[wo + k]);
                        let (g_r, g_i) = (gr[go + k], gi[go + k]);
                        sr[k] += br * g_r + bi * g_i;
                        si[k] += br * g_i - bi * g_r;
                    }
                }
                let dst = &mut dx[(b * cin + i) * h * w..(b * cin + i + 1) * h * w];
                plan.inverse(&sr, &si, &ones, T::one(), dst, &mut scratch);
            }
        }
        Some(Tensor::new(x_shape.to_vec(), dx)?)
    } else {
        None
    };
    Ok((dx, dw))
}
