use std::sync::Arc;

use super::layers::{Builder, Conv, DoubleConv, Mlp, UpConv};
use super::spec::{Architecture, InputStyle, ModelKind, ModelSpec};
use super::OpError;
use crate::diffmath::{SpectralPlan, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// A batch of model inputs.
#[derive(Clone, Debug)]
pub enum ModelInput<T> {
    /// `N` samples with `queries` points each.
    Query {
        /// `[N, omega_dim]` normalized parameters.
        omega: Tensor<T>,
        /// `[N * queries, coord_dim]`; row `n * queries + q` is query `q` of sample `n`.
        coords: Tensor<T>,
        queries: usize,
        /// Previous field: `[N, sample_len]` for sampled-query models,
        /// `[N, in_channels, H, W]` for the grid-branch model.
        context: Option<Tensor<T>>,
    },
    /// `[N, in_channels, H, W]` holding `u, v, mask` then one constant channel per parameter.
    Field(Tensor<T>),
}

impl<T: Scalar> ModelInput<T> {
    pub fn style_name(&self) -> &'static str {
        match self {
            ModelInput::Query { context: None, .. } => "query",
            ModelInput::Query { context: Some(c), .. } if c.rank() == 4 => "grid-query",
            ModelInput::Query { .. } => "sampled-query",
            ModelInput::Field(_) => "field",
        }
    }

    /// Number of samples in the batch.
    pub fn batch(&self) -> usize {
        match self {
            ModelInput::Query { omega, .. } => omega.shape().first().copied().unwrap_or(0),
            ModelInput::Field(f) => f.shape().first().copied().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug)]
struct BranchTrunk {
    trunk: Mlp,
    bias: usize,
    width: usize,
}

#[derive(Clone, Debug)]
struct FnoBlock {
    wr: usize,
    wi: usize,
    mix: Conv,
}

#[derive(Clone, Debug)]
enum Net<T: Scalar> {
    Ffn(Mlp),
    DeepOnet { branch: Mlp, head: BranchTrunk },
    AutoEdeepOnet { sample: Mlp, omega: Mlp, head: BranchTrunk },
    Cnn { convs: Vec<Conv>, dense: Mlp, head: BranchTrunk },
    ResNet { lift: Conv, blocks: Vec<(Conv, Conv)>, out: Conv },
    UNet { inc: DoubleConv, down: Vec<DoubleConv>, up: Vec<(UpConv, DoubleConv)>, out: Conv },
    Fno { lift: Conv, blocks: Vec<FnoBlock>, proj: Conv, out: Conv, plan: Arc<SpectralPlan<T>> },
}

/// A built model: spec, named parameters in declaration order, and layer wiring.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    net: Net<T>,
}

fn sizes(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut v = vec![first];
    v.extend_from_slice(hidden);
    v.push(last);
    v
}

fn head<T: Scalar>(bd: &mut Builder<T>, spec: &ModelSpec, width: usize, trunk_hidden: &[usize]) -> BranchTrunk {
    let coord = spec.kind().style().coord_dim();
    let trunk = Mlp::new(bd, "trunk", &sizes(coord, trunk_hidden, width), spec.activation, spec.pre_normalize);
    let bias = bd.constant("bias".into(), vec![spec.outputs], 0.0);
    BranchTrunk { trunk, bias, width }
}

/// Builds a model with parameters initialized from `spec.seed`.
pub fn build_model<T: Scalar>(spec: &ModelSpec) -> Result<Model<T>, OpError> {
    spec.validate()?;
    let mut bd = Builder::<T>::new(spec.seed);
    let (act, pn) = (spec.activation, spec.pre_normalize);
    let (d, out, cin) = (spec.omega_dim, spec.outputs, spec.in_channels);
    let [h, w] = spec.resolution;
    let net = match &spec.arch {
        Architecture::Ffn { hidden } => Net::Ffn(Mlp::new(&mut bd, "ffn", &sizes(d + 3, hidden, out), act, pn)),
        Architecture::AutoFfn { hidden } => {
            Net::Ffn(Mlp::new(&mut bd, "ffn", &sizes(spec.sample_len() + d + 2, hidden, out), act, pn))
        }
        Architecture::DeepOnet { width, branch_hidden, trunk_hidden } => {
            let branch = Mlp::new(&mut bd, "branch", &sizes(d, branch_hidden, width * out), act, pn);
            Net::DeepOnet { branch, head: head(&mut bd, spec, *width, trunk_hidden) }
        }
        Architecture::AutoDeepOnet { width, branch_hidden, trunk_hidden } => {
            let branch = Mlp::new(&mut bd, "branch", &sizes(spec.sample_len() + d, branch_hidden, width * out), act, pn);
            Net::DeepOnet { branch, head: head(&mut bd, spec, *width, trunk_hidden) }
        }
        Architecture::AutoEdeepOnet { width, sample_hidden, omega_hidden, trunk_hidden } => {
            let sample = Mlp::new(&mut bd, "branch_field", &sizes(spec.sample_len(), sample_hidden, width * out), act, pn);
            let omega = Mlp::new(&mut bd, "branch_params", &sizes(d, omega_hidden, width * out), act, pn);
            Net::AutoEdeepOnet { sample, omega, head: head(&mut bd, spec, *width, trunk_hidden) }
        }
        Architecture::AutoDeepOnetCnn { width, conv_channels, dense_hidden, trunk_hidden } => {
            let mut convs = Vec::new();
            let mut c = cin;
            for (i, &co) in conv_channels.iter().enumerate() {
                convs.push(Conv::new(&mut bd, &format!("branch.conv{i}"), c, co, 3));
                c = co;
            }
            let f = 1 << conv_channels.len();
            let flat = c * (h / f) * (w / f);
            let dense = Mlp::new(&mut bd, "branch.dense", &sizes(flat, dense_hidden, width * out), act, pn);
            Net::Cnn { convs, dense, head: head(&mut bd, spec, *width, trunk_hidden) }
        }
        Architecture::ResNet { hidden, blocks } => {
            let lift = Conv::new(&mut bd, "lift", cin, *hidden, 3);
            let blocks = (0..*blocks)
                .map(|i| {
                    (Conv::new(&mut bd, &format!("block{i}.conv1"), *hidden, *hidden, 3), Conv::new(&mut bd, &format!("block{i}.conv2"), *hidden, *hidden, 3))
                })
                .collect();
            let out_conv = Conv::new(&mut bd, "out", *hidden, out, 3);
            Net::ResNet { lift, blocks, out: out_conv }
        }
        Architecture::UNet { base, depth } => {
            let inc = DoubleConv::new(&mut bd, "inc", cin, *base);
            let down = (0..*depth).map(|i| DoubleConv::new(&mut bd, &format!("down{i}"), base << i, base << (i + 1))).collect();
            let up = (0..*depth)
                .rev()
                .map(|i| {
                    let c = base << (i + 1);
                    (UpConv::new(&mut bd, &format!("up{i}.upsample"), c, c / 2), DoubleConv::new(&mut bd, &format!("up{i}.conv"), c, c / 2))
                })
                .collect();
            let out_conv = Conv::new(&mut bd, "out", *base, out, 1);
            Net::UNet { inc, down, up, out: out_conv }
        }
        Architecture::Fno { hidden, blocks, projection, .. } => {
            let modes = spec.spectral_modes().expect("fno");
            let lift = Conv::new(&mut bd, "lift", cin, *hidden, 1);
            let scale = 1.0 / (hidden * hidden) as f64;
            let blocks = (0..*blocks)
                .map(|i| {
                    let shape = vec![*hidden, *hidden, modes.rows, modes.cols];
                    let wr = bd.positive(format!("block{i}.spectral.real"), shape.clone(), scale);
                    let wi = bd.positive(format!("block{i}.spectral.imag"), shape, scale);
                    let mix = Conv::new(&mut bd, &format!("block{i}.mix"), *hidden, *hidden, 1);
                    FnoBlock { wr, wi, mix }
                })
                .collect();
            let proj = Conv::new(&mut bd, "project", *hidden, *projection, 1);
            let out_conv = Conv::new(&mut bd, "out", *projection, out, 1);
            let plan = Arc::new(SpectralPlan::new(h, w, modes)?);
            Net::Fno { lift, blocks, proj, out: out_conv, plan }
        }
    };
    Ok(Model { spec: spec.clone(), names: bd.names, params: bd.tensors, net })
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Exact number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Replaces parameter `name` with `value` of the same shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<(), OpError> {
        let i = self.names.iter().position(|n| n == name).ok_or_else(|| OpError::Config(format!("no parameter '{name}'")))?;
        if value.shape() != self.params[i].shape() {
            return Err(OpError::Input(format!("parameter '{name}' has shape {:?}, got {:?}", self.params[i].shape(), value.shape())));
        }
        self.params[i] = value;
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    /// Places every parameter on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone(), trainable)).collect()
    }

    /// Records the forward pass on `tape` with parameters bound as `vars`.
    ///
    /// Query inputs give `[N * queries, outputs]`; field inputs give `[N, outputs, H, W]`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], input: &ModelInput<T>) -> Result<Var, OpError> {
        self.check_input(input)?;
        let p = vars;
        match (&self.net, input) {
            (Net::Ffn(mlp), ModelInput::Query { omega, coords, queries, context }) => {
                let x = tape.constant(ffn_rows(omega, coords, *queries, context.as_ref())?);
                mlp.apply(tape, p, x)
            }
            (Net::DeepOnet { branch, head }, ModelInput::Query { omega, coords, queries, context }) => {
                let bin = match context {
                    Some(s) => concat_rows(s, omega)?,
                    None => omega.clone(),
                };
                let bin = tape.constant(bin);
                let b = branch.apply(tape, p, bin)?;
                self.aggregate(tape, p, head, b, coords, *queries)
            }
            (Net::AutoEdeepOnet { sample, omega: om, head }, ModelInput::Query { omega, coords, queries, context }) => {
                let s = tape.constant(context.clone().expect("checked"));
                let o = tape.constant(omega.clone());
                let b1 = sample.apply(tape, p, s)?;
                let b2 = om.apply(tape, p, o)?;
                let b = tape.mul(b1, b2)?;
                self.aggregate(tape, p, head, b, coords, *queries)
            }
            (Net::Cnn { convs, dense, head }, ModelInput::Query { coords, queries, context, .. }) => {
                let mut x = tape.constant(context.clone().expect("checked"));
                for c in convs {
                    x = c.apply(tape, p, x)?;
                    x = tape.activate(x, self.spec.activation);
                    x = tape.max_pool2(x)?;
                }
                let n = tape.shape(x)[0];
                let flat = tape.value(x).numel() / n;
                let x = tape.reshape(x, [n, flat])?;
                let b = dense.apply(tape, p, x)?;
                self.aggregate(tape, p, head, b, coords, *queries)
            }
            (Net::ResNet { lift, blocks, out }, ModelInput::Field(f)) => {
                let x = tape.constant(f.clone());
                let mut x = lift.apply(tape, p, x)?;
                for (c1, c2) in blocks {
                    let y = c1.apply(tape, p, x)?;
                    let y = tape.activate(y, self.spec.activation);
                    let y = c2.apply(tape, p, y)?;
                    x = tape.add(x, y)?;
                }
                out.apply(tape, p, x)
            }
            (Net::UNet { inc, down, up, out }, ModelInput::Field(f)) => {
                let x = tape.constant(f.clone());
                let mut skips = vec![inc.apply(tape, p, x)?];
                for dc in down {
                    let pooled = tape.max_pool2(*skips.last().expect("nonempty"))?;
                    skips.push(dc.apply(tape, p, pooled)?);
                }
                let mut y = skips.pop().expect("nonempty");
                for (upc, dc) in up {
                    let skip = skips.pop().expect("one skip per level");
                    let u = upc.apply(tape, p, y)?;
                    let cat = tape.concat(skip, u)?;
                    y = dc.apply(tape, p, cat)?;
                }
                out.apply(tape, p, y)
            }
            (Net::Fno { lift, blocks, proj, out, plan }, ModelInput::Field(f)) => {
                let x = tape.constant(f.clone());
                let mut x = lift.apply(tape, p, x)?;
                for b in blocks {
                    let k = tape.spectral_conv(x, p[b.wr], p[b.wi], Arc::clone(plan))?;
                    let m = b.mix.apply(tape, p, x)?;
                    let s = tape.add(k, m)?;
                    let s = tape.activate(s, self.spec.activation);
                    x = tape.add(x, s)?;
                }
                let y = proj.apply(tape, p, x)?;
                let y = tape.activate(y, self.spec.activation);
                out.apply(tape, p, y)
            }
            _ => Err(OpError::Contract(format!("{} does not accept {} input", self.kind(), input.style_name()))),
        }
    }

    fn aggregate(&self, tape: &mut Tape<T>, p: &[Var], head: &BranchTrunk, branch: Var, coords: &Tensor<T>, queries: usize) -> Result<Var, OpError> {
        let c = tape.constant(coords.clone());
        let t = head.trunk.apply(tape, p, c)?;
        debug_assert_eq!(tape.shape(t)[1], head.width);
        let y = tape.branch_trunk(branch, t, queries, self.spec.outputs)?;
        Ok(tape.add_bias(y, p[head.bias])?)
    }

    fn check_input(&self, input: &ModelInput<T>) -> Result<(), OpError> {
        let style = self.kind().style();
        let mismatch = || OpError::Contract(format!("{} expects {} input, got {} input", self.kind(), style.name(), input.style_name()));
        let [h, w] = self.spec.resolution;
        match input {
            ModelInput::Field(f) => {
                if style != InputStyle::Field {
                    return Err(mismatch());
                }
                let s = f.shape();
                if s.len() != 4 || s[1] != self.spec.in_channels || s[2] != h || s[3] != w {
                    return Err(OpError::Input(format!("{} expects [N, {}, {h}, {w}] fields, got {s:?}", self.kind(), self.spec.in_channels)));
                }
            }
            ModelInput::Query { omega, coords, queries, context } => {
                let ok = match style {
                    InputStyle::Query => context.is_none(),
                    InputStyle::SampledQuery => context.as_ref().is_some_and(|c| c.rank() == 2),
                    InputStyle::GridQuery => context.as_ref().is_some_and(|c| c.rank() == 4),
                    InputStyle::Field => false,
                };
                if !ok {
                    return Err(mismatch());
                }
                let n = omega.shape()[0];
                if omega.rank() != 2 || omega.shape()[1] != self.spec.omega_dim {
                    return Err(OpError::Input(format!("parameters of shape {:?}, expected [N, {}]", omega.shape(), self.spec.omega_dim)));
                }
                if *queries == 0 || coords.shape() != [n * queries, style.coord_dim()] {
                    return Err(OpError::Input(format!(
                        "query coordinates of shape {:?}, expected [{}, {}]",
                        coords.shape(),
                        n * queries,
                        style.coord_dim()
                    )));
                }
                if let Some(c) = context {
                    let expect: Vec<usize> = match style {
                        InputStyle::SampledQuery => vec![n, self.spec.sample_len()],
                        _ => vec![n, self.spec.in_channels, h, w],
                    };
                    if c.shape() != expect.as_slice() {
                        return Err(OpError::Input(format!("previous field of shape {:?}, expected {expect:?}", c.shape())));
                    }
                }
                if omega.data().iter().any(|v| v.as_f64().abs() > 2.0) {
                    log::warn!("operating parameters outside the normalized range reached {}", self.kind());
                }
            }
        }
        Ok(())
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, input: &ModelInput<T>) -> Result<Tensor<T>, OpError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let y = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(y).clone())
    }

    /// Predicts several inputs in order.
    pub fn predict_many(&self, inputs: &[ModelInput<T>]) -> Result<Vec<Tensor<T>>, OpError> {
        inputs.iter().map(|i| self.predict(i)).collect()
    }
}

/// Row `n * Q + q` = `context[n] || omega[n] || coords[n * Q + q]`.
fn ffn_rows<T: Scalar>(omega: &Tensor<T>, coords: &Tensor<T>, queries: usize, context: Option<&Tensor<T>>) -> Result<Tensor<T>, OpError> {
    let n = omega.shape()[0];
    let (d, cd) = (omega.shape()[1], coords.shape()[1]);
    let s = context.map_or(0, |c| c.shape()[1]);
    let width = s + d + cd;
    let mut out = Vec::with_capacity(n * queries * width);
    for i in 0..n {
        for q in 0..queries {
            if let Some(c) = context {
                out.extend_from_slice(&c.data()[i * s..(i + 1) * s]);
            }
            out.extend_from_slice(&omega.data()[i * d..(i + 1) * d]);
            let r = i * queries + q;
            out.extend_from_slice(&coords.data()[r * cd..(r + 1) * cd]);
        }
    }
    Ok(Tensor::new([n * queries, width], out)?)
}

fn concat_rows<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, OpError> {
    let n = a.shape()[0];
    let (wa, wb) = (a.shape()[1], b.shape()[1]);
    let mut out = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * wa..(i + 1) * wa]);
        out.extend_from_slice(&b.data()[i * wb..(i + 1) * wb]);
    }
    Ok(Tensor::new([n, wa + wb], out)?)
}
