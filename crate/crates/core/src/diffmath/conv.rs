//! Batched 2-D convolution kernels on `[B, C, H, W]` arrays.

use super::{DiffError, Tensor};
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn direct(&self) -> bool {
        self.k == 1 && self.pad == 0
    }
}

fn conv_geom(x: &[usize], w: &[usize], pad: usize) -> Result<Geom, DiffError> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[1] || w[2] != w[3] {
        return Err(DiffError::Dimension { op: "conv2d", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    let k = w[2];
    if k % 2 == 0 {
        return Err(DiffError::Config(format!("conv2d kernel size must be odd, got {k}")));
    }
    let (h, wd) = (x[2], x[3]);
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(DiffError::Dimension { op: "conv2d (kernel exceeds padded input)", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    Ok(Geom {
        batch: x[0],
        cin: x[1],
        h,
        w: wd,
        cout: w[0],
        k,
        pad,
        ho: h + 2 * pad - k + 1,
        wo: wd + 2 * pad - k + 1,
    })
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = (oi + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &src[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize { T::zero() } else { srow[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geom, dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = (oi + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            drow[jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding, stride 1, no bias.
///
/// `x: [B, C_in, H, W]`, `w: [C_out, C_in, k, k]` with odd `k`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, pad: usize) -> Result<Tensor<T>, DiffError> {
    let g = conv_geom(x.shape(), w.shape(), pad)?;
    let mut out = vec![T::zero(); g.batch * g.cout * g.out_plane()];
    let mut cols = if g.direct() { Vec::new() } else { vec![T::zero(); g.patch() * g.out_plane()] };
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * g.out_plane();
    let wm = MatRef::rm(w.data(), g.cout, g.patch());
    for b in 0..g.batch {
        let xb = &x.data()[b * in_sz..(b + 1) * in_sz];
        let colm = if g.direct() {
            MatRef::rm(xb, g.patch(), g.out_plane())
        } else {
            im2col(xb, &g, &mut cols);
            MatRef::rm(&cols, g.patch(), g.out_plane())
        };
        gemm(T::one(), wm, colm, T::zero(), &mut out[b * out_sz..(b + 1) * out_sz]);
    }
    Tensor::new([g.batch, g.cout, g.ho, g.wo], out)
}

/// Adjoints of [`conv2d`] with respect to the input and the kernel.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    pad: usize,
    dy: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>), DiffError> {
    let g = conv_geom(x.shape(), w.shape(), pad)?;
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * g.out_plane();
    let mut dx = need_dx.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.numel()]);
    let mut cols = if g.direct() { Vec::new() } else { vec![T::zero(); g.patch() * g.out_plane()] };
    let mut dcols = if g.direct() || !need_dx { Vec::new() } else { vec![T::zero(); g.patch() * g.out_plane()] };
    let wm = MatRef::rm(w.data(), g.cout, g.patch());
    for b in 0..g.batch {
        let dyb = MatRef::rm(&dy.data()[b * out_sz..(b + 1) * out_sz], g.cout, g.out_plane());
        if let Some(dw) = dw.as_mut() {
            let xb = &x.data()[b * in_sz..(b + 1) * in_sz];
            let colm = if g.direct() {
                MatRef::rm(xb, g.patch(), g.out_plane())
            } else {
                im2col(xb, &g, &mut cols);
                MatRef::rm(&cols, g.patch(), g.out_plane())
            };
            gemm(T::one(), dyb, colm.t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_sz..(b + 1) * in_sz];
            if g.direct() {
                gemm(T::one(), wm.t(), dyb, T::one(), dxb);
            } else {
                gemm(T::one(), wm.t(), dyb, T::zero(), &mut dcols);
                col2im(&dcols, &g, dxb);
            }
        }
    }
    let dx = dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?;
    let dw = dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?;
    Ok((dx, dw))
}

fn up_geom(x: &[usize], w: &[usize]) -> Result<(usize, usize, usize, usize, usize), DiffError> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[0] || w[2] != 2 || w[3] != 2 {
        return Err(DiffError::Dimension { op: "conv_transpose2x2", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    Ok((x[0], x[1], w[1], x[2], x[3]))
}

/// Transposed convolution with a 2x2 kernel and stride 2 (exact 2x up-sampling).
///
/// `x: [B, C_in, H, W]`, `w: [C_in, C_out, 2, 2]` -> `[B, C_out, 2H, 2W]`.
pub fn conv_transpose2x2<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>, DiffError> {
    let (batch, cin, cout, h, wd) = up_geom(x.shape(), w.shape())?;
    let plane = h * wd;
    let mut tmp = vec![T::zero(); cout * 4 * plane];
    let mut out = vec![T::zero(); batch * cout * 4 * plane];
    let wm = MatRef::rm(w.data(), cin, cout * 4);
    for b in 0..batch {
        let xb = MatRef::rm(&x.data()[b * cin * plane..(b + 1) * cin * plane], cin, plane);
        gemm(T::one(), wm.t(), xb, T::zero(), &mut tmp);
        let ob = &mut out[b * cout * 4 * plane..(b + 1) * cout * 4 * plane];
        for o in 0..cout {
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let src = &tmp[(o * 4 + d) * plane..(o * 4 + d + 1) * plane];
                for i in 0..h {
                    for j in 0..wd {
                        ob[(o * 2 * h + 2 * i + di) * 2 * wd + 2 * j + dj] = src[i * wd + j];
                    }
                }
            }
        }
    }
    Tensor::new([batch, cout, 2 * h, 2 * wd], out)
}

pub fn conv_transpose2x2_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>), DiffError> {
    let (batch, cin, cout, h, wd) = up_geom(x.shape(), w.shape())?;
    let plane = h * wd;
    let mut gathered = vec![T::zero(); cout * 4 * plane];
    let mut dx = need_dx.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.numel()]);
    let wm = MatRef::rm(w.data(), cin, cout * 4);
    for b in 0..batch {
        let db = &dy.data()[b * cout * 4 * plane..(b + 1) * cout * 4 * plane];
        for o in 0..cout {
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let dst = &mut gathered[(o * 4 + d) * plane..(o * 4 + d + 1) * plane];
                for i in 0..h {
                    for j in 0..wd {
                        dst[i * wd + j] = db[(o * 2 * h + 2 * i + di) * 2 * wd + 2 * j + dj];
                    }
                }
            }
        }
        let gm = MatRef::rm(&gathered, cout * 4, plane);
        if let Some(dx) = dx.as_mut() {
            gemm(T::one(), wm, gm, T::zero(), &mut dx[b * cin * plane..(b + 1) * cin * plane]);
        }
        if let Some(dw) = dw.as_mut() {
            let xb = MatRef::rm(&x.data()[b * cin * plane..(b + 1) * cin * plane], cin, plane);
            gemm(T::one(), xb, gm.t(), T::one(), dw);
        }
    }
    let dx = dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?;
    let dw = dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?;
    Ok((dx, dw))
}

/// 2x2 max pooling with stride 2. Returns the pooled array and flat argmax indices.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), DiffError> {
    let s = x.shape();
    if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(DiffError::Dimension { op: "max_pool2 (needs even extents)", lhs: s.to_vec(), rhs: vec![2, 2] });
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    let xd = x.data();
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [base + 2 * i * w + 2 * j + 1, base + (2 * i + 1) * w + 2 * j, base + (2 * i + 1) * w + 2 * j + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new([s[0], s[1], ho, wo], out)?, arg))
}
