//! The pVAD classifier: two strided 1-D convolutions over the mel axis, two
//! small GRUs across frames, and a two-layer fully connected head.

mod backward;
mod forward;
mod io;
mod train;

pub use backward::{accumulate_gradient, backward};
pub use forward::{
    bce_loss, forward_frame, forward_sequence, sigmoid, FrameTrace, GruState, GruTrace, PROB_CLAMP,
};
pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use train::{
    adam_step, evaluate_loss, predict_clip, train, AdamState, EpochRecord, PlateauScheduler,
    SchedulerAction, TrainConfig, TrainLog,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvConfig {
    /// Output positions of a valid (unpadded) convolution.
    pub fn out_len(&self, in_len: usize) -> usize {
        if in_len < self.kernel {
            0
        } else {
            (in_len - self.kernel) / self.stride + 1
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel + self.out_ch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_mels: usize,
    pub conv1: ConvConfig,
    pub conv2: ConvConfig,
    pub gru1_units: usize,
    pub gru2_units: usize,
    pub fc1_out: usize,
    pub fc2_out: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_mels: 32,
            conv1: ConvConfig {
                in_ch: 1,
                out_ch: 16,
                kernel: 3,
                stride: 2,
            },
            conv2: ConvConfig {
                in_ch: 16,
                out_ch: 32,
                kernel: 3,
                stride: 2,
            },
            gru1_units: 4,
            gru2_units: 4,
            fc1_out: 16,
            fc2_out: 1,
        }
    }
}

impl NetConfig {
    /// Small variant used by the finite-difference gradient check.
    pub fn reduced() -> Self {
        Self {
            n_mels: 8,
            gru1_units: 2,
            gru2_units: 2,
            ..Self::default()
        }
    }

    pub fn conv1_len(&self) -> usize {
        self.conv1.out_len(self.n_mels)
    }

    pub fn conv2_len(&self) -> usize {
        self.conv2.out_len(self.conv1_len())
    }

    /// Width of the flattened conv output fed to the first GRU.
    pub fn flat_len(&self) -> usize {
        self.conv2.out_ch * self.conv2_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv1.in_ch != 1 {
            return Err(Error::Config("conv1.in_ch must be 1".into()));
        }
        if self.conv2.in_ch != self.conv1.out_ch {
            return Err(Error::Config("conv2.in_ch must equal conv1.out_ch".into()));
        }
        if self.conv1.stride == 0 || self.conv2.stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        if self.conv2_len() == 0 {
            return Err(Error::Config(format!("n_mels {} too small for the conv stack", self.n_mels)));
        }
        if self.gru1_units == 0 || self.gru2_units == 0 || self.fc1_out == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.fc2_out != 1 {
            return Err(Error::Config("fc2_out must be 1 (single probability)".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// A contiguous tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Gate order everywhere: update `z`, reset `r`, candidate `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruSpans {
    pub input: usize,
    pub units: usize,
    pub w: [Span; 3],
    pub u: [Span; 3],
    pub b: [Span; 3],
}

pub const GATE_NAMES: [&str; 3] = ["z", "r", "h"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv1_w: Span,
    pub conv1_b: Span,
    pub conv2_w: Span,
    pub conv2_b: Span,
    pub gru1: GruSpans,
    pub gru2: GruSpans,
    pub fc1_w: Span,
    pub fc1_b: Span,
    pub fc2_w: Span,
    pub fc2_b: Span,
    pub total: usize,
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            let span = Span { offset, len };
            offset += len;
            tensors.push(TensorSpec { name, shape, span });
            span
        };
        let c1 = cfg.conv1;
        let c2 = cfg.conv2;
        let conv1_w = push("conv1.weight".into(), vec![c1.out_ch, c1.in_ch, c1.kernel]);
        let conv1_b = push("conv1.bias".into(), vec![c1.out_ch]);
        let conv2_w = push("conv2.weight".into(), vec![c2.out_ch, c2.in_ch, c2.kernel]);
        let conv2_b = push("conv2.bias".into(), vec![c2.out_ch]);
        let mut gru = |prefix: &str, input: usize, units: usize| {
            let w = GATE_NAMES.map(|g| push(format!("{prefix}.w_{g}"), vec![units, input]));
            let u = GATE_NAMES.map(|g| push(format!("{prefix}.u_{g}"), vec![units, units]));
            let b = GATE_NAMES.map(|g| push(format!("{prefix}.b_{g}"), vec![units]));
            GruSpans { input, units, w, u, b }
        };
        let gru1 = gru("gru1", cfg.flat_len(), cfg.gru1_units);
        let gru2 = gru("gru2", cfg.gru1_units, cfg.gru2_units);
        let fc1_w = push("fc1.weight".into(), vec![cfg.fc1_out, cfg.gru2_units]);
        let fc1_b = push("fc1.bias".into(), vec![cfg.fc1_out]);
        let fc2_w = push("fc2.weight".into(), vec![cfg.fc2_out, cfg.fc1_out]);
        let fc2_b = push("fc2.bias".into(), vec![cfg.fc2_out]);
        Self {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            gru1,
            gru2,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            total: offset,
            tensors,
        }
    }
}

/// All trainable weights, stored flat in layout order. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    config: NetConfig,
    layout: Layout,
    pub values: Vec<f64>,
}

impl NetParams {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        Ok(Self {
            values: vec![0.0; layout.total],
            layout,
            config,
        })
    }

    pub fn from_values(config: NetConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::Shape(format!(
                "{} parameter values for a network of {}",
                values.len(),
                p.values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn slice(&self, span: Span) -> &[f64] {
        &self.values[span.range()]
    }

    pub fn slice_mut(&mut self, span: Span) -> &mut [f64] {
        &mut self.values[span.range()]
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| self.slice(t.span))
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn same_shape(&self, other: &NetParams) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Shape("parameter sets have different configurations".into()));
        }
        Ok(())
    }
}

pub fn param_count(params: &NetParams) -> usize {
    params.param_count()
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(config: NetConfig, seed: u64) -> Result<NetParams> {
    let mut p = NetParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = p.layout.clone();
    let c1 = config.conv1;
    let c2 = config.conv2;
    let mut fill = |p: &mut NetParams, span: Span, fan_in: usize, fan_out: usize| {
        let bound = glorot_bound(fan_in, fan_out);
        for v in p.slice_mut(span) {
            *v = rng.random_range(-bound..=bound);
        }
    };
    fill(&mut p, l.conv1_w, c1.in_ch * c1.kernel, c1.out_ch * c1.kernel);
    fill(&mut p, l.conv2_w, c2.in_ch * c2.kernel, c2.out_ch * c2.kernel);
    for g in [l.gru1, l.gru2] {
        for k in 0..3 {
            fill(&mut p, g.w[k], g.input, g.units);
            fill(&mut p, g.u[k], g.units, g.units);
        }
    }
    fill(&mut p, l.fc1_w, config.gru2_units, config.fc1_out);
    fill(&mut p, l.fc2_w, config.fc1_out, config.fc2_out);
    Ok(p)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
