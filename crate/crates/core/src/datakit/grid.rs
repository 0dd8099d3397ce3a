use super::record::CaseRecord;
use super::DataError;
use crate::flowgen::Problem;

/// Averages scattered `(x, y, value)` samples into an `h x w` cell grid over
/// `[0, width_m] x [0, height_m]`. Cells without samples are `None`.
pub fn interpolate_to_grid(
    points: &[(f64, f64, f64)],
    extents_m: (f64, f64),
    resolution: (usize, usize),
) -> Result<Vec<Option<f64>>, DataError> {
    if points.is_empty() {
        return Err(DataError::EmptyInput("no points to interpolate".into()));
    }
    let (hm, wm) = extents_m;
    let (h, w) = resolution;
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0usize; h * w];
    for &(x, y, value) in points {
        if !(0.0..=wm).contains(&x) || !(0.0..=hm).contains(&y) || !value.is_finite() {
            return Err(DataError::Invalid(format!("point ({x}, {y}, {value}) outside the {hm} x {wm} m domain or non-finite")));
        }
        let i = ((x / wm * w as f64) as usize).min(w - 1);
        let j = ((y / hm * h as f64) as usize).min(h - 1);
        sum[j * w + i] += value;
        count[j * w + i] += 1;
    }
    Ok(sum.iter().zip(&count).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect())
}

/// Fills empty cells layer by layer from the boundary of each empty region:
/// every empty cell touching a valued cell takes the mean of its valued
/// 4-neighbours, then the next layer proceeds from the updated grid.
pub fn fill_empty_cells(grid: &[Option<f64>], resolution: (usize, usize)) -> Result<Vec<f64>, DataError> {
    let (h, w) = resolution;
    if grid.len() != h * w {
        return Err(DataError::ShapeMismatch(format!("{} cells for a {h} x {w} grid", grid.len())));
    }
    if grid.iter().all(Option::is_none) {
        return Err(DataError::EmptyInput("every cell is empty".into()));
    }
    let mut cur = grid.to_vec();
    loop {
        let mut layer = Vec::new();
        for j in 0..h {
            for i in 0..w {
                if cur[j * w + i].is_some() {
                    continue;
                }
                let mut acc = 0.0;
                let mut n = 0;
                let mut visit = |jj: usize, ii: usize| {
                    if let Some(v) = cur[jj * w + ii] {
                        acc += v;
                        n += 1;
                    }
                };
                if i > 0 {
                    visit(j, i - 1);
                }
                if i + 1 < w {
                    visit(j, i + 1);
                }
                if j > 0 {
                    visit(j - 1, i);
                }
                if j + 1 < h {
                    visit(j + 1, i);
                }
                if n > 0 {
                    layer.push((j * w + i, acc / n as f64));
                }
            }
        }
        if layer.is_empty() {
            break;
        }
        for (c, v) in layer {
            cur[c] = Some(v);
        }
    }
    Ok(cur.into_iter().map(|v| v.unwrap_or(0.0)).collect())
}

/// Pads a `[C][H][W]` frame with the known constant-velocity wall values.
///
/// Tube: a zero row below and above. Cavity: zero columns on both sides and
/// a zero bottom row, plus a lid row carrying `(u_b, 0)`. Other problems are
/// returned unchanged. Returns the padded frame and its `(H, W)`.
pub fn pad_constant_bc(frame: &[f32], channels: usize, resolution: (usize, usize), problem: Problem, u_b: f64) -> (Vec<f32>, (usize, usize)) {
    let (h, w) = resolution;
    let (top, bottom, side) = match problem {
        Problem::Tube => (1, 1, 0),
        Problem::Cavity => (1, 1, 1),
        Problem::Dam | Problem::Cylinder => return (frame.to_vec(), resolution),
    };
    let (ph, pw) = (h + top + bottom, w + 2 * side);
    let mut out = vec![0.0f32; channels * ph * pw];
    for c in 0..channels {
        for j in 0..h {
            let src = &frame[(c * h + j) * w..(c * h + j + 1) * w];
            let row = c * ph * pw + (j + bottom) * pw + side;
            out[row..row + w].copy_from_slice(src);
        }
        if problem == Problem::Cavity && c == 0 {
            let lid = c * ph * pw + (ph - 1) * pw;
            out[lid..lid + pw].fill(u_b as f32);
        }
    }
    (out, (ph, pw))
}

/// Padding applied to a whole record; padded wall cells are marked 0 in the mask.
pub fn pad_record(record: &CaseRecord) -> Result<CaseRecord, DataError> {
    let (h, w) = (record.height(), record.width());
    let c = record.channels();
    let problem = record.problem();
    let u_b = record.meta.params.u_b;
    let mut frames = Vec::new();
    let mut shape = (h, w);
    for t in 0..record.n_frames() {
        let (padded, s) = pad_constant_bc(record.frame(t), c, (h, w), problem, u_b);
        frames.extend(padded);
        shape = s;
    }
    let mask_f: Vec<f32> = record.mask().iter().map(|&m| m as f32 + 1.0).collect();
    let (mask_p, _) = pad_constant_bc(&mask_f, 1, (h, w), problem, 0.0);
    // Shifted by one so that padding (0) is distinguishable from solid (1).
    let mask = mask_p.iter().map(|&m| if m >= 2.0 { 1 } else { 0 }).collect();
    let mut meta = record.meta.clone();
    meta.resolution = [shape.0, shape.1];
    meta.flags.insert("padded".into(), true.into());
    CaseRecord::new(meta, frames, mask)
}
