use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OpError;
use crate::diffmath::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ffn,
    DeepOnet,
    AutoFfn,
    AutoDeepOnet,
    AutoEdeepOnet,
    AutoDeepOnetCnn,
    ResNet,
    UNet,
    Fno,
}

/// How a model consumes its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputStyle {
    /// Parameters plus `(x, y, t)` queries.
    Query,
    /// Sampled previous field, parameters and `(x, y)` queries.
    SampledQuery,
    /// Previous field on the grid plus `(x, y)` queries.
    GridQuery,
    /// Whole-grid field in, whole-grid field out.
    Field,
}

impl InputStyle {
    pub fn name(self) -> &'static str {
        match self {
            InputStyle::Query => "query",
            InputStyle::SampledQuery => "sampled-query",
            InputStyle::GridQuery => "grid-query",
            InputStyle::Field => "field",
        }
    }

    /// Coordinate width of a query row.
    pub fn coord_dim(self) -> usize {
        match self {
            InputStyle::Query => 3,
            InputStyle::Field => 0,
            _ => 2,
        }
    }
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Ffn,
        ModelKind::DeepOnet,
        ModelKind::AutoFfn,
        ModelKind::AutoDeepOnet,
        ModelKind::AutoEdeepOnet,
        ModelKind::AutoDeepOnetCnn,
        ModelKind::ResNet,
        ModelKind::UNet,
        ModelKind::Fno,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ffn => "ffn",
            ModelKind::DeepOnet => "deeponet",
            ModelKind::AutoFfn => "auto_ffn",
            ModelKind::AutoDeepOnet => "auto_deeponet",
            ModelKind::AutoEdeepOnet => "auto_edeeponet",
            ModelKind::AutoDeepOnetCnn => "auto_deeponet_cnn",
            ModelKind::ResNet => "resnet",
            ModelKind::UNet => "unet",
            ModelKind::Fno => "fno",
        }
    }

    pub fn autoregressive(self) -> bool {
        !matches!(self, ModelKind::Ffn | ModelKind::DeepOnet)
    }

    pub fn style(self) -> InputStyle {
        match self {
            ModelKind::Ffn | ModelKind::DeepOnet => InputStyle::Query,
            ModelKind::AutoFfn | ModelKind::AutoDeepOnet | ModelKind::AutoEdeepOnet => InputStyle::SampledQuery,
            ModelKind::AutoDeepOnetCnn => InputStyle::GridQuery,
            ModelKind::ResNet | ModelKind::UNet | ModelKind::Fno => InputStyle::Field,
        }
    }

    /// Base learning rate used when none is configured.
    pub fn default_lr(self) -> f64 {
        match self {
            ModelKind::Ffn | ModelKind::DeepOnet => 1e-3,
            ModelKind::AutoFfn | ModelKind::AutoDeepOnet | ModelKind::AutoEdeepOnet | ModelKind::AutoDeepOnetCnn => 5e-4,
            ModelKind::ResNet | ModelKind::UNet | ModelKind::Fno => 1e-3,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = OpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| OpError::Config(format!("unknown model '{s}'")))
    }
}

/// Layer sizes of each architecture. Widths listed as `*_hidden` exclude the
/// input and output layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Ffn { hidden: Vec<usize> },
    DeepOnet { width: usize, branch_hidden: Vec<usize>, trunk_hidden: Vec<usize> },
    AutoFfn { hidden: Vec<usize> },
    AutoDeepOnet { width: usize, branch_hidden: Vec<usize>, trunk_hidden: Vec<usize> },
    AutoEdeepOnet { width: usize, sample_hidden: Vec<usize>, omega_hidden: Vec<usize>, trunk_hidden: Vec<usize> },
    AutoDeepOnetCnn { width: usize, conv_channels: Vec<usize>, dense_hidden: Vec<usize>, trunk_hidden: Vec<usize> },
    ResNet { hidden: usize, blocks: usize },
    UNet { base: usize, depth: usize },
    Fno { hidden: usize, blocks: usize, modes: usize, projection: usize },
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Ffn { .. } => ModelKind::Ffn,
            Architecture::DeepOnet { .. } => ModelKind::DeepOnet,
            Architecture::AutoFfn { .. } => ModelKind::AutoFfn,
            Architecture::AutoDeepOnet { .. } => ModelKind::AutoDeepOnet,
            Architecture::AutoEdeepOnet { .. } => ModelKind::AutoEdeepOnet,
            Architecture::AutoDeepOnetCnn { .. } => ModelKind::AutoDeepOnetCnn,
            Architecture::ResNet { .. } => ModelKind::ResNet,
            Architecture::UNet { .. } => ModelKind::UNet,
            Architecture::Fno { .. } => ModelKind::Fno,
        }
    }

    /// Standard sizes for each kind.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Ffn => Architecture::Ffn { hidden: vec![128; 5] },
            ModelKind::DeepOnet => Architecture::DeepOnet { width: 100, branch_hidden: vec![100; 11], trunk_hidden: vec![100; 15] },
            ModelKind::AutoFfn => Architecture::AutoFfn { hidden: vec![448, 448] },
            ModelKind::AutoDeepOnet => Architecture::AutoDeepOnet { width: 200, branch_hidden: vec![200], trunk_hidden: vec![200, 200] },
            ModelKind::AutoEdeepOnet => Architecture::AutoEdeepOnet {
                width: 200,
                sample_hidden: vec![200],
                omega_hidden: vec![200],
                trunk_hidden: vec![200, 200],
            },
            ModelKind::AutoDeepOnetCnn => Architecture::AutoDeepOnetCnn {
                width: 100,
                conv_channels: vec![32, 64, 64, 64],
                dense_hidden: vec![512],
                trunk_hidden: vec![100, 100, 100],
            },
            ModelKind::ResNet => Architecture::ResNet { hidden: 16, blocks: 4 },
            ModelKind::UNet => Architecture::UNet { base: 12, depth: 4 },
            ModelKind::Fno => Architecture::Fno { hidden: 32, blocks: 4, modes: 12, projection: 128 },
        }
    }
}

/// Everything needed to rebuild a model bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Length of the operating-parameter vector.
    pub omega_dim: usize,
    /// Input channels of grid-consuming models (`u, v, mask` plus one per parameter by default).
    pub in_channels: usize,
    /// Predicted components per location.
    pub outputs: usize,
    /// Grid `[H, W]` the model is built for.
    pub resolution: [usize; 2],
    pub activation: Activation,
    /// Standardize each pre-activation before the nonlinearity.
    pub pre_normalize: bool,
    pub seed: u64,
}

impl ModelSpec {
    /// Default spec predicting `(u, v)` for `omega_dim` parameters on an `[H, W]` grid.
    pub fn new(kind: ModelKind, omega_dim: usize, resolution: [usize; 2], seed: u64) -> Self {
        let (activation, pre_normalize) = match kind {
            ModelKind::Fno => (Activation::Gelu, false),
            ModelKind::ResNet | ModelKind::UNet => (Activation::Relu, false),
            _ => (Activation::Relu, true),
        };
        Self {
            arch: Architecture::default_for(kind),
            omega_dim,
            in_channels: 3 + omega_dim,
            outputs: 2,
            resolution,
            activation,
            pre_normalize,
            seed,
        }
    }

    /// Sizes published for the three reference models, each with a single output.
    pub fn paper_reference(kind: ModelKind) -> Option<Self> {
        let mut spec = Self::new(kind, 5, [64, 64], 0);
        spec.outputs = 1;
        match kind {
            ModelKind::DeepOnet => spec.omega_dim = 6,
            ModelKind::UNet => spec.in_channels = 8,
            ModelKind::Fno => spec.in_channels = 9,
            _ => return None,
        }
        Some(spec)
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind()
    }

    /// Length of the flattened previous-field sample fed to sampled-query models.
    /// Retained spectral modes: `modes` rows, and columns clipped to the half spectrum.
    pub fn spectral_modes(&self) -> Option<crate::diffmath::Modes> {
        match self.arch {
            Architecture::Fno { modes, .. } => {
                Some(crate::diffmath::Modes { rows: modes, cols: modes.min(self.resolution[1] / 2 + 1) })
            }
            _ => None,
        }
    }

    pub fn sample_len(&self) -> usize {
        2 * sample_lattice(self.resolution[0], self.resolution[1]).len()
    }

    pub fn validate(&self) -> Result<(), OpError> {
        let bad = |m: String| Err(OpError::Config(m));
        let [h, w] = self.resolution;
        if h == 0 || w == 0 || self.outputs == 0 || self.omega_dim == 0 {
            return bad("resolution, outputs and parameter count must be positive".into());
        }
        let widths_ok = |v: &[usize]| v.iter().all(|&x| x > 0);
        match &self.arch {
            Architecture::Ffn { hidden } | Architecture::AutoFfn { hidden } => {
                if !widths_ok(hidden) {
                    return bad("hidden widths must be positive".into());
                }
            }
            Architecture::DeepOnet { width, branch_hidden, trunk_hidden }
            | Architecture::AutoDeepOnet { width, branch_hidden, trunk_hidden } => {
                if *width == 0 || !widths_ok(branch_hidden) || !widths_ok(trunk_hidden) {
                    return bad("branch and trunk widths must be positive".into());
                }
            }
            Architecture::AutoEdeepOnet { width, sample_hidden, omega_hidden, trunk_hidden } => {
                if *width == 0 || !widths_ok(sample_hidden) || !widths_ok(omega_hidden) || !widths_ok(trunk_hidden) {
                    return bad("branch and trunk widths must be positive".into());
                }
            }
            Architecture::AutoDeepOnetCnn { width, conv_channels, dense_hidden, trunk_hidden } => {
                let f = 1usize << conv_channels.len();
                if *width == 0 || conv_channels.is_empty() || !widths_ok(conv_channels) || !widths_ok(dense_hidden) || !widths_ok(trunk_hidden) {
                    return bad("convolution, dense and trunk sizes must be positive".into());
                }
                if h % f != 0 || w % f != 0 {
                    return bad(format!("{h}x{w} grid is not divisible by {f} for {} pooling stages", conv_channels.len()));
                }
            }
            Architecture::ResNet { hidden, blocks } => {
                if *hidden == 0 || *blocks == 0 {
                    return bad("resnet width and block count must be positive".into());
                }
            }
            Architecture::UNet { base, depth } => {
                let f = 1usize << depth;
                if *base == 0 || *depth == 0 {
                    return bad("unet base width and depth must be positive".into());
                }
                if h % f != 0 || w % f != 0 {
                    return bad(format!("{h}x{w} grid is not divisible by 2^{depth}"));
                }
            }
            Architecture::Fno { hidden, blocks, modes, projection } => {
                if *hidden == 0 || *blocks == 0 || *modes == 0 || *projection == 0 {
                    return bad("fno sizes must be positive".into());
                }
                if *modes > h {
                    return bad(format!("{modes} modes exceed the capacity of a {h}x{w} grid"));
                }
            }
        }
        if self.kind().style() != InputStyle::Query && self.kind().style() != InputStyle::SampledQuery && self.in_channels < 3 {
            return bad("grid inputs need at least the u, v and mask channels".into());
        }
        Ok(())
    }
}

/// Flat cell indices of the stride-2 sub-lattice used as the previous-field sample.
pub fn sample_lattice(h: usize, w: usize) -> Vec<usize> {
    (0..h).step_by(2).flat_map(|j| (0..w).step_by(2).map(move |i| j * w + i)).collect()
}
