//! Layer graph with resolved shapes, shared by the float network, the
//! complexity analyzer and the quantized interpreter.

use crate::error::{Error, Result};
use crate::numcore::kernels::conv_out_len;
use crate::numcore::{Axis, Conv1dSpec};

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    /// Uniform in `±1 / sqrt(fan_in)`.
    LinearUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Stored as int32 after quantization.
    pub is_bias: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub weight: usize,
    pub spec: Conv1dSpec,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvLayer {
    pub fn weight_shape(&self) -> Vec<usize> {
        let ci = self.c_in / self.spec.groups;
        match self.spec.axis {
            Axis::Freq => vec![self.c_out, ci, self.kernel, 1],
            Axis::Time => vec![self.c_out, ci, 1, self.kernel],
        }
    }
}

/// Separable block: the first `split` channels go through a depthwise
/// frequency kernel, the rest through a depthwise time kernel; the halves
/// are concatenated, merged pointwise, residual-normalized, optionally
/// added to the block input, and rectified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayer {
    pub freq: ConvLayer,
    pub time: ConvLayer,
    pub merge: usize,
    pub lambda: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub split: usize,
    pub residual: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv(ConvLayer),
    ResNorm { lambda: usize },
    Relu,
    MaxPool { window: (usize, usize) },
    Block(BlockLayer),
    GlobalPool,
    Linear { weight: usize, bias: usize, d_in: usize, d_out: usize },
}

impl Layer {
    /// Number of quantized activation sites (one per integer-kernel input).
    pub fn activation_sites(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Linear { .. } => 1,
            Layer::Block(_) => 3,
            _ => 0,
        }
    }
}

/// Shape after each layer. Activations are `(C, F, T)`; after global
/// pooling and the classifier only `C` is meaningful and `F = T = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub layers: Vec<Layer>,
    pub params: Vec<ParamSpec>,
    pub input_shape: [usize; 3],
    pub shapes: Vec<[usize; 3]>,
}

/// Quantized file header: magic plus payload length.
pub const QUANT_HEADER_BYTES: usize = 8;
/// Per-tensor scale (f32) and zero point (stored widened to 4 bytes).
pub const QUANT_TENSOR_META_BYTES: usize = 8;
/// Per-site activation scale and zero point.
pub const QUANT_SITE_BYTES: usize = 8;

struct Builder {
    layers: Vec<Layer>,
    params: Vec<ParamSpec>,
    shapes: Vec<[usize; 3]>,
    shape: [usize; 3],
}

impl Builder {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init, is_bias: bool) -> usize {
        self.params.push(ParamSpec { name, shape, init, is_bias });
        self.params.len() - 1
    }

    fn push(&mut self, layer: Layer, shape: [usize; 3]) {
        self.layers.push(layer);
        self.shapes.push(shape);
        self.shape = shape;
    }

    fn conv_layer(&mut self, name: &str, c_in: usize, c_out: usize, shape: [usize; 3], spec: Conv1dSpec, kernel: usize) -> Result<(ConvLayer, [usize; 3])> {
        let [_, f, t] = shape;
        let out = match spec.axis {
            Axis::Freq => conv_out_len(f, kernel, spec.stride, spec.padding).map(|of| [c_out, of, t]),
            Axis::Time => conv_out_len(t, kernel, spec.stride, spec.padding).map(|ot| [c_out, f, ot]),
        }
        .ok_or_else(|| Error::Config(format!("{name}: non-positive output extent from input {shape:?}")))?;
        let mut layer = ConvLayer { weight: 0, spec, c_in, c_out, kernel };
        let fan_in = (c_in / spec.groups) * kernel;
        layer.weight = self.param(format!("{name}.weight"), layer.weight_shape(), Init::KaimingUniform { fan_in }, false);
        Ok((layer, out))
    }

    fn conv(&mut self, name: &str, c_out: usize, spec: Conv1dSpec, kernel: usize) -> Result<()> {
        let c_in = self.shape[0];
        let (layer, out) = self.conv_layer(name, c_in, c_out, self.shape, spec, kernel)?;
        self.push(Layer::Conv(layer), out);
        Ok(())
    }

    fn resnorm(&mut self, name: &str) {
        let lambda = self.param(format!("{name}.lambda"), vec![1], Init::Ones, false);
        self.push(Layer::ResNorm { lambda }, self.shape);
    }

    /// 2x2 max pool; an axis of extent 1 is left unpooled.
    fn pool(&mut self) {
        let [c, f, t] = self.shape;
        let window = (f.min(2), t.min(2));
        self.push(Layer::MaxPool { window }, [c, f / window.0, t / window.1]);
    }

    fn block(&mut self, name: &str, c_out: usize, kernel: usize, residual: bool) -> Result<()> {
        let shape = self.shape;
        let c_in = shape[0];
        if c_in < 2 {
            return Err(Error::Config(format!("{name}: separable block needs at least 2 input channels")));
        }
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("{name}: kernel size must be odd, got {kernel}")));
        }
        let split = c_in - c_in / 2;
        let pad = kernel / 2;
        let fspec = Conv1dSpec { axis: Axis::Freq, stride: 1, padding: pad, groups: split };
        let (freq, _) = self.conv_layer(&format!("{name}.freq"), split, split, shape, fspec, kernel)?;
        let tspec = Conv1dSpec { axis: Axis::Time, stride: 1, padding: pad, groups: c_in - split };
        let (time, _) = self.conv_layer(&format!("{name}.time"), c_in - split, c_in - split, shape, tspec, kernel)?;
        let merge = self.param(format!("{name}.merge.weight"), vec![c_out, c_in], Init::KaimingUniform { fan_in: c_in }, false);
        let lambda = self.param(format!("{name}.norm.lambda"), vec![1], Init::Ones, false);
        let block = BlockLayer {
            freq,
            time,
            merge,
            lambda,
            c_in,
            c_out,
            split,
            residual: residual && c_in == c_out,
        };
        self.push(Layer::Block(block), [c_out, shape[1], shape[2]]);
        Ok(())
    }
}

fn channels(base: usize, mult: f64) -> usize {
    ((base as f64 * mult).round() as usize).max(1)
}

impl Architecture {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (mel, frames) = cfg.input_shape;
        let input_shape = [1, mel, frames];
        let mut b = Builder { layers: Vec::new(), params: Vec::new(), shapes: Vec::new(), shape: input_shape };

        let stem = &cfg.stem;
        let c0 = channels(cfg.base_channels, stem.channel_multiplier);
        let pad = stem.kernel / 2;
        b.conv("stem.freq", c0, Conv1dSpec { axis: Axis::Freq, stride: stem.stride, padding: pad, groups: 1 }, stem.kernel)?;
        b.resnorm("stem.norm1");
        b.push(Layer::Relu, b.shape);
        b.conv("stem.time", c0, Conv1dSpec { axis: Axis::Time, stride: stem.stride, padding: pad, groups: c0 }, stem.kernel)?;
        b.resnorm("stem.norm2");
        b.push(Layer::Relu, b.shape);
        if stem.pool {
            b.pool();
        }

        let last = cfg.stages.len() - 1;
        for (si, stage) in cfg.stages.iter().enumerate() {
            if si > 0 {
                b.pool();
            }
            if si == last && cfg.extra_maxpool_before_last_block {
                b.pool();
            }
            let c_out = channels(cfg.base_channels, stage.channel_multiplier);
            for bi in 0..stage.blocks {
                b.block(&format!("stage{si}.block{bi}"), c_out, stage.kernel, cfg.residual)?;
            }
        }

        let c = b.shape[0];
        b.push(Layer::GlobalPool, [c, 1, 1]);
        let k = cfg.n_classes;
        let weight = b.param("classifier.weight".into(), vec![k, c], Init::Zeros, false);
        let bias = b.param("classifier.bias".into(), vec![k], Init::Zeros, true);
        b.push(Layer::Linear { weight, bias, d_in: c, d_out: k }, [k, 1, 1]);

        let arch = Self { layers: b.layers, params: b.params, input_shape, shapes: b.shapes };
        let mut names = std::collections::HashSet::new();
        for p in &arch.params {
            if !names.insert(p.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter name {}", p.name)));
            }
        }
        Ok(arch)
    }

    /// No layers and no parameters.
    pub fn empty() -> Self {
        Self { layers: Vec::new(), params: Vec::new(), input_shape: [0, 1, 1], shapes: Vec::new() }
    }

    /// A lone classifier over a `d_in` vector.
    pub fn linear(d_in: usize, d_out: usize) -> Self {
        let params = vec![
            ParamSpec {
                name: "classifier.weight".into(),
                shape: vec![d_out, d_in],
                init: Init::LinearUniform { fan_in: d_in },
                is_bias: false,
            },
            ParamSpec { name: "classifier.bias".into(), shape: vec![d_out], init: Init::Zeros, is_bias: true },
        ];
        Self {
            layers: vec![Layer::Linear { weight: 0, bias: 1, d_in, d_out }],
            params,
            input_shape: [d_in, 1, 1],
            shapes: vec![[d_out, 1, 1]],
        }
    }

    pub fn input_of(&self, layer: usize) -> [usize; 3] {
        if layer == 0 {
            self.input_shape
        } else {
            self.shapes[layer - 1]
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers
            .iter()
            .zip(&self.shapes)
            .find(|(l, _)| matches!(l, Layer::GlobalPool))
            .map_or(0, |(_, s)| s[0])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamSpec::numel).sum()
    }

    /// Multiply-accumulates per inference: `C_out * (C_in / groups) * k *
    /// output positions` for convolutions, `C_out * C_in * positions` for
    /// pointwise merges and `D * K` for the classifier.
    pub fn macs(&self) -> usize {
        fn conv_macs(c: &ConvLayer, out_positions: usize) -> usize {
            c.c_out * (c.c_in / c.spec.groups) * c.kernel * out_positions
        }
        self.layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let [_, f, t] = self.shapes[i];
                match layer {
                    Layer::Conv(c) => conv_macs(c, f * t),
                    Layer::Block(b) => {
                        conv_macs(&b.freq, f * t) + conv_macs(&b.time, f * t) + b.c_out * b.c_in * f * t
                    }
                    Layer::Linear { d_in, d_out, .. } => d_in * d_out,
                    _ => 0,
                }
            })
            .sum()
    }

    pub fn activation_sites(&self) -> usize {
        self.layers.iter().map(Layer::activation_sites).sum()
    }

    /// Serialized quantized payload: header, then per tensor its metadata
    /// and codes (1 byte, or 4 for biases), then per-site activation
    /// parameters.
    pub fn int8_size_bytes(&self) -> usize {
        let tensors: usize = self
            .params
            .iter()
            .map(|p| QUANT_TENSOR_META_BYTES + p.numel() * if p.is_bias { 4 } else { 1 })
            .sum();
        QUANT_HEADER_BYTES + tensors + QUANT_SITE_BYTES * self.activation_sites()
    }
}
