//! Stencil systems in the `a_P phi_P = sum a_nb phi_nb + b` form and their solvers.

use super::FlowError;

/// One discretized conservation equation per unknown.
#[derive(Clone, Debug, Default)]
pub struct LinearSystem {
    pub a_p: Vec<f64>,
    pub b: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    a_nb: Vec<f64>,
    /// Parity class of each unknown for red-black sweeps.
    color: Vec<u8>,
}

impl LinearSystem {
    pub fn new() -> Self {
        Self { offsets: vec![0], ..Default::default() }
    }

    /// Appends an equation. `neighbors` holds `(unknown index, a_nb)` pairs.
    pub fn push(&mut self, a_p: f64, b: f64, neighbors: &[(usize, f64)], color: u8) {
        self.a_p.push(a_p);
        self.b.push(b);
        for &(j, a) in neighbors {
            self.cols.push(j);
            self.a_nb.push(a);
        }
        self.offsets.push(self.cols.len());
        self.color.push(color);
    }

    pub fn len(&self) -> usize {
        self.a_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_p.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.a_nb[r].iter().copied())
    }

    fn imbalance(&self, i: usize, phi: &[f64]) -> f64 {
        self.neighbors(i).map(|(j, a)| a * phi[j]).sum::<f64>() + self.b[i] - self.a_p[i] * phi[i]
    }

    /// Largest index distance between coupled unknowns.
    pub fn bandwidth(&self) -> usize {
        (0..self.len()).flat_map(|i| self.neighbors(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
    }
}

/// Global scaled residual `sum |sum a_nb phi_nb + b - a_P phi_P| / sum |a_P phi_P|`.
///
/// A zero denominator yields 0 when the numerator also vanishes, otherwise `+inf`.
pub fn scaled_residual(system: &LinearSystem, phi: &[f64]) -> f64 {
    let num: f64 = (0..system.len()).map(|i| system.imbalance(i, phi).abs()).sum();
    let den: f64 = system.a_p.iter().zip(phi).map(|(a, p)| (a * p).abs()).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            log::warn!("scaled residual has a zero denominator with numerator {num:e}");
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Cholesky factor of a symmetric positive-definite banded matrix
/// `A = diag(a_P) - offdiag(a_nb)`.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // Row i holds L[i][i - bw ..= i].
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(system: &LinearSystem) -> Result<Self, FlowError> {
        let n = system.len();
        let bw = system.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            l[i * w + bw] = system.a_p[i];
            for (j, a) in system.neighbors(i) {
                if j < i {
                    l[i * w + bw - (i - j)] -= a;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(bw));
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                let mut s = l[ri + j];
                for k in k0..j {
                    s -= l[ri + k] * l[rj + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(FlowError::Numerical(format!("matrix not positive definite at row {i}")));
                    }
                    l[ri + i] = s.sqrt();
                } else {
                    l[ri + j] = s / l[rj + j];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let mut s = rhs[i];
            for k in lo..i {
                s -= self.l[ri + k] * x[k];
            }
            x[i] = s / self.l[ri + i];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = x[i];
            for k in i + 1..=hi {
                s -= self.l[k * w + bw - k + i] * x[k];
            }
            x[i] = s / self.l[i * w + bw - i + i];
        }
    }
}

/// Red-black Gauss-Seidel until the scaled residual reaches `target`.
/// Returns the final residual and the sweep count.
pub fn red_black_gauss_seidel(
    system: &LinearSystem,
    phi: &mut [f64],
    target: f64,
    max_iters: usize,
) -> Result<(f64, usize), FlowError> {
    let mut r = scaled_residual(system, phi);
    if r <= target {
        return Ok((r, 0));
    }
    for it in 1..=max_iters {
        for color in [0u8, 1] {
            for i in 0..system.len() {
                if system.color[i] == color {
                    let s: f64 = system.neighbors(i).map(|(j, a)| a * phi[j]).sum::<f64>() + system.b[i];
                    phi[i] = s / system.a_p[i];
                }
            }
        }
        if it % 4 == 0 || it == max_iters {
            r = scaled_residual(system, phi);
            if r <= target {
                return Ok((r, it));
            }
        }
    }
    Err(FlowError::IterationLimit { step: None, iterations: max_iters, residual: r })
}
