use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::OpError;
use crate::diffmath::{Activation, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Registers named parameters in declaration order with seeded initialization.
pub(crate) struct Builder<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    pub fn new(seed: u64) -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// He-style uniform initialization on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
    pub fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)));
        self.push(name, t)
    }

    /// Uniform on `[0, scale)`.
    pub fn positive(&mut self, name: String, shape: Vec<usize>, scale: f64) -> usize {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::lit(scale * rng.random::<f64>()));
        self.push(name, t)
    }

    pub fn constant(&mut self, name: String, shape: Vec<usize>, value: f64) -> usize {
        self.push(name, Tensor::full(shape, T::lit(value)))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = bd.weight(format!("{name}.weight"), vec![fan_in, fan_out], fan_in);
        let b = bd.constant(format!("{name}.bias"), vec![fan_out], 0.0);
        Self { w, b }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, OpError> {
        let y = tape.matmul(x, p[self.w])?;
        Ok(tape.add_bias(y, p[self.b])?)
    }
}

/// Fully connected stack with a nonlinearity after every layer but the last.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
    pub pre_normalize: bool,
}

impl Mlp {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, sizes: &[usize], act: Activation, pre_normalize: bool) -> Self {
        let layers = sizes.windows(2).enumerate().map(|(i, s)| Linear::new(bd, &format!("{name}.{i}"), s[0], s[1])).collect();
        Self { layers, act, pre_normalize }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], mut x: Var) -> Result<Var, OpError> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.apply(tape, p, x)?;
            if i < last {
                x = tape.activation(x, self.act, self.pre_normalize)?;
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: usize,
    pub b: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let w = bd.weight(format!("{name}.weight"), vec![cout, cin, k, k], cin * k * k);
        let b = bd.constant(format!("{name}.bias"), vec![cout], 0.0);
        Self { w, b, pad: k / 2 }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, OpError> {
        let y = tape.conv2d(x, p[self.w], self.pad)?;
        Ok(tape.add_bias(y, p[self.b])?)
    }
}

/// Per-sample plane standardization with a learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub scale: usize,
    pub shift: usize,
}

impl Norm {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, c: usize) -> Self {
        let scale = bd.constant(format!("{name}.scale"), vec![c], 1.0);
        let shift = bd.constant(format!("{name}.shift"), vec![c], 0.0);
        Self { scale, shift }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, OpError> {
        let z = tape.standardize(x)?;
        let z = tape.mul_channel(z, p[self.scale])?;
        Ok(tape.add_bias(z, p[self.shift])?)
    }
}

/// (conv3x3, norm, ReLU) twice.
#[derive(Clone, Debug)]
pub(crate) struct DoubleConv {
    pub c1: Conv,
    pub n1: Norm,
    pub c2: Conv,
    pub n2: Norm,
}

impl DoubleConv {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            c1: Conv::new(bd, &format!("{name}.conv1"), cin, cout, 3),
            n1: Norm::new(bd, &format!("{name}.norm1"), cout),
            c2: Conv::new(bd, &format!("{name}.conv2"), cout, cout, 3),
            n2: Norm::new(bd, &format!("{name}.norm2"), cout),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, OpError> {
        let y = self.c1.apply(tape, p, x)?;
        let y = self.n1.apply(tape, p, y)?;
        let y = tape.activate(y, Activation::Relu);
        let y = self.c2.apply(tape, p, y)?;
        let y = self.n2.apply(tape, p, y)?;
        Ok(tape.activate(y, Activation::Relu))
    }
}

/// Stride-2 transposed 2x2 convolution with bias.
#[derive(Clone, Debug)]
pub(crate) struct UpConv {
    pub w: usize,
    pub b: usize,
}

impl UpConv {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Self {
        let w = bd.weight(format!("{name}.weight"), vec![cin, cout, 2, 2], cin);
        let b = bd.constant(format!("{name}.bias"), vec![cout], 0.0);
        Self { w, b }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, OpError> {
        let y = tape.conv_transpose2x2(x, p[self.w])?;
        Ok(tape.add_bias(y, p[self.b])?)
    }
}
