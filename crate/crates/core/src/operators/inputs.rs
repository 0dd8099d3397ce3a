use super::spec::sample_lattice;
use crate::diffmath::Tensor;
use crate::scalar::Scalar;

/// Normalized centre of flat cell `k` on an `h x w` grid as `(x, y)` in `[0, 1]`.
pub fn cell_coord(k: usize, h: usize, w: usize) -> (f64, f64) {
    ((((k % w) as f64) + 0.5) / w as f64, (((k / w) as f64) + 0.5) / h as f64)
}

/// Appends the `[3 + |omega|, H, W]` image-model channels: `u, v, mask`, then
/// one constant plane per parameter. `frame` is `[C, H, W]` with `u, v` first.
pub fn push_field_channels<T: Scalar>(frame: &[f32], mask: &[u8], omega: &[f64], out: &mut Vec<T>) {
    let plane = mask.len();
    out.extend(frame[..2 * plane].iter().map(|&v| T::lit(v as f64)));
    out.extend(mask.iter().map(|&m| T::lit(m as f64)));
    for &o in omega {
        out.extend(std::iter::repeat_n(T::lit(o), plane));
    }
}

/// `[N, 3 + |omega|, H, W]` batch from `(frame, mask, omega)` triples.
pub fn field_batch<T: Scalar>(items: &[(&[f32], &[u8], &[f64])], h: usize, w: usize) -> Tensor<T> {
    let c = 3 + items.first().map_or(0, |i| i.2.len());
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for (frame, mask, omega) in items {
        push_field_channels(frame, mask, omega, &mut data);
    }
    Tensor::new([items.len(), c, h, w], data).expect("consistent field batch")
}

/// `u` then `v` read on the stride-2 sub-lattice of a `[C, H, W]` frame.
pub fn u_sample<T: Scalar>(frame: &[f32], h: usize, w: usize) -> Vec<T> {
    let lattice = sample_lattice(h, w);
    let plane = h * w;
    (0..2).flat_map(|c| lattice.iter().map(move |&k| T::lit(frame[c * plane + k] as f64))).collect()
}
