use super::loss::sample_queries;
use super::TrainError;
use crate::datakit::{normalize_params, CaseRecord, NormalizationStats};
use crate::diffmath::Tensor;
use crate::operators::{cell_coord, field_batch, u_sample, InputStyle, Model, ModelInput, ModelKind};
use crate::scalar::Scalar;

/// Target frame `t` of case `case`. Autoregressive examples read frame `t - 1` as input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Example {
    pub case: usize,
    pub t: usize,
}

/// All training examples of a set of cases for one model kind.
#[derive(Clone, Debug)]
pub struct ExampleSet<'a> {
    cases: Vec<&'a CaseRecord>,
    omegas: Vec<Vec<f64>>,
    kind: ModelKind,
    pub examples: Vec<Example>,
}

fn mix(seed: u64, a: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the queries of one example in one pass.
pub(crate) fn example_seed(seed: u64, pass: u64, index: usize) -> u64 {
    mix(mix(seed, pass), index as u64)
}

impl<'a> ExampleSet<'a> {
    /// Consecutive frame pairs for autoregressive kinds, every frame otherwise.
    pub fn new(cases: Vec<&'a CaseRecord>, stats: &NormalizationStats, kind: ModelKind) -> Self {
        let first = usize::from(kind.autoregressive());
        let examples = cases
            .iter()
            .enumerate()
            .flat_map(|(c, r)| (first..r.n_frames()).map(move |t| Example { case: c, t }))
            .collect();
        let omegas = cases.iter().map(|c| normalize_params(&c.omega(), stats)).collect();
        Self { cases, omegas, kind, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn case(&self, i: usize) -> &'a CaseRecord {
        self.cases[i]
    }

    /// Input, label and (for image models) the fluid mask of the examples at `idx`.
    /// Query models read `k` fresh fluid cells per example, seeded by `(seed, pass, index)`.
    pub fn batch<T: Scalar>(
        &self,
        idx: &[usize],
        k: usize,
        seed: u64,
        pass: u64,
    ) -> Result<(ModelInput<T>, Tensor<T>, Option<Tensor<T>>), TrainError> {
        let n = idx.len();
        let first = self.cases[self.examples[idx[0]].case];
        let (h, w) = (first.height(), first.width());
        let plane = h * w;
        let style = self.kind.style();
        if style == InputStyle::Field {
            let items: Vec<(&[f32], &[u8], &[f64])> = idx
                .iter()
                .map(|&i| {
                    let e = self.examples[i];
                    let c = self.cases[e.case];
                    (c.velocity(e.t - 1), c.mask(), self.omegas[e.case].as_slice())
                })
                .collect();
            let input = field_batch::<T>(&items, h, w);
            let mut label = Vec::with_capacity(n * 2 * plane);
            let mut mask = Vec::with_capacity(n * 2 * plane);
            for &i in idx {
                let e = self.examples[i];
                let c = self.cases[e.case];
                for ch in 0..2 {
                    for (cell, &m) in c.mask().iter().enumerate() {
                        let keep = f64::from(m);
                        label.push(T::lit(keep * c.velocity(e.t)[ch * plane + cell] as f64));
                        mask.push(T::lit(keep));
                    }
                }
            }
            return Ok((ModelInput::Field(input), Tensor::new([n, 2, h, w], label)?, Some(Tensor::new([n, 2, h, w], mask)?)));
        }
        let cd = style.coord_dim();
        let mut omega = Vec::new();
        let mut coords = Vec::with_capacity(n * k * cd);
        let mut label = Vec::with_capacity(n * k * 2);
        let mut context = Vec::new();
        let mut grid_items = Vec::new();
        for &i in idx {
            let e = self.examples[i];
            let c = self.cases[e.case];
            omega.extend(self.omegas[e.case].iter().map(|&o| T::lit(o)));
            for q in sample_queries(c.velocity(e.t), c.mask(), h, w, k, example_seed(seed, pass, i))? {
                coords.push(T::lit(q.x));
                coords.push(T::lit(q.y));
                if cd == 3 {
                    coords.push(T::lit(e.t as f64 * c.meta.dt));
                }
                label.push(T::lit(q.value[0] as f64));
                label.push(T::lit(q.value[1] as f64));
            }
            match style {
                InputStyle::SampledQuery => context.extend(u_sample::<T>(c.velocity(e.t - 1), h, w)),
                InputStyle::GridQuery => grid_items.push((c.velocity(e.t - 1), c.mask(), self.omegas[e.case].as_slice())),
                _ => {}
            }
        }
        let d = self.omegas[0].len();
        let context = match style {
            InputStyle::SampledQuery => Some(Tensor::new([n, context.len() / n], context)?),
            InputStyle::GridQuery => Some(field_batch::<T>(&grid_items, h, w)),
            _ => None,
        };
        let input = ModelInput::Query { omega: Tensor::new([n, d], omega)?, coords: Tensor::new([n * k, cd], coords)?, queries: k, context };
        Ok((input, Tensor::new([n * k, 2], label)?, None))
    }
}

/// Full-grid input for predicting frame `t` of `case` from the velocity `prev`
/// (`[2, H, W]`, ignored by non-autoregressive kinds). `omega` is normalized.
pub fn frame_input<T: Scalar>(kind: ModelKind, case: &CaseRecord, prev: &[f32], t: usize, omega: &[f64]) -> ModelInput<T> {
    let (h, w) = (case.height(), case.width());
    let style = kind.style();
    if style == InputStyle::Field {
        return ModelInput::Field(field_batch(&[(prev, case.mask(), omega)], h, w));
    }
    let cd = style.coord_dim();
    let time = t as f64 * case.meta.dt;
    let mut coords = Vec::with_capacity(h * w * cd);
    for cell in 0..h * w {
        let (x, y) = cell_coord(cell, h, w);
        coords.extend([T::lit(x), T::lit(y)]);
        if cd == 3 {
            coords.push(T::lit(time));
        }
    }
    let context = match style {
        InputStyle::SampledQuery => {
            let s = u_sample(prev, h, w);
            Some(Tensor::new([1, s.len()], s).expect("lattice length"))
        }
        InputStyle::GridQuery => Some(field_batch(&[(prev, case.mask(), omega)], h, w)),
        _ => None,
    };
    ModelInput::Query {
        omega: Tensor::new([1, omega.len()], omega.iter().map(|&o| T::lit(o)).collect()).expect("omega row"),
        coords: Tensor::new([h * w, cd], coords).expect("coordinate rows"),
        queries: h * w,
        context,
    }
}

/// Predicted velocity `[2, H, W]` for frame `t`.
pub fn predict_frame<T: Scalar>(model: &Model<T>, case: &CaseRecord, prev: &[f32], t: usize, omega: &[f64]) -> Result<Vec<f32>, TrainError> {
    let out = model.predict(&frame_input(model.kind(), case, prev, t, omega))?;
    let plane = case.height() * case.width();
    let d = out.data();
    Ok(match model.kind().style() {
        InputStyle::Field => d.iter().map(|v| v.as_f64() as f32).collect(),
        _ => (0..2).flat_map(|ch| (0..plane).map(move |cell| d[cell * 2 + ch].as_f64() as f32)).collect(),
    })
}
