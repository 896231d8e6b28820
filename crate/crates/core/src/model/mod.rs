//! Separable time/frequency CNN student, its complexity analyzer and
//! checkpoint format.

mod arch;
pub(crate) mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use arch::{
    Architecture, BlockLayer, ConvLayer, Init, Layer, ParamSpec, QUANT_HEADER_BYTES, QUANT_SITE_BYTES,
    QUANT_TENSOR_META_BYTES,
};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, NormStats};
use crate::numcore::{Parameter, Tape, Tensor, Var};

/// Size budget in bytes (decimal kilobytes).
pub const SIZE_BUDGET_BYTES: usize = 128_000;
/// Size budget when 128 kB is read as 128 KiB.
pub const SIZE_BUDGET_KIB_BYTES: usize = 131_072;
pub const MAC_BUDGET: usize = 30_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StemConfig {
    pub channel_multiplier: f64,
    pub kernel: usize,
    pub stride: usize,
    pub pool: bool,
}

impl Default for StemConfig {
    fn default() -> Self {
        Self { channel_multiplier: 1.0, kernel: 3, stride: 2, pool: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Output channels as a multiple of `base_channels`.
    pub channel_multiplier: f64,
    pub blocks: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_kernel() -> usize {
    3
}

impl StageConfig {
    pub fn new(channel_multiplier: f64, blocks: usize) -> Self {
        Self { channel_multiplier, blocks, kernel: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub n_classes: usize,
    pub extra_maxpool_before_last_block: bool,
    /// Identity shortcut around blocks whose width is unchanged.
    pub residual: bool,
    /// Reject configurations outside the size and MAC budget at build time.
    pub challenge_mode: bool,
    /// `(mel_bins, frames)`.
    pub input_shape: (usize, usize),
    pub stem: StemConfig,
    pub stages: Vec<StageConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            n_classes: 10,
            extra_maxpool_before_last_block: true,
            residual: true,
            challenge_mode: false,
            input_shape: (512, 64),
            stem: StemConfig::default(),
            stages: vec![
                StageConfig::new(1.0, 2),
                StageConfig::new(1.0, 2),
                StageConfig::new(1.5, 2),
                StageConfig::new(4.0, 2),
            ],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.base_channels == 0 {
            return bad("base_channels must be at least 1".into());
        }
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1".into());
        }
        if self.input_shape.0 == 0 || self.input_shape.1 == 0 {
            return bad(format!("input_shape {:?} has an empty axis", self.input_shape));
        }
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        let s = &self.stem;
        if !(s.channel_multiplier > 0.0) || s.kernel % 2 == 0 || s.stride == 0 {
            return bad("stem needs a positive multiplier, odd kernel and positive stride".into());
        }
        for (i, st) in self.stages.iter().enumerate() {
            if !(st.channel_multiplier > 0.0) || st.blocks == 0 || st.kernel % 2 == 0 {
                return bad(format!("stage {i} needs a positive multiplier, at least one block and an odd kernel"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub param_count: usize,
    pub macs_per_inference: usize,
    pub int8_size_bytes: usize,
    pub size_limit_bytes: usize,
    pub budget_ok: bool,
}

impl ComplexityReport {
    pub fn from_architecture(arch: &Architecture, size_limit_bytes: usize) -> Self {
        let int8_size_bytes = arch.int8_size_bytes();
        let macs_per_inference = arch.macs();
        Self {
            param_count: arch.param_count(),
            macs_per_inference,
            int8_size_bytes,
            size_limit_bytes,
            budget_ok: int8_size_bytes <= size_limit_bytes && macs_per_inference <= MAC_BUDGET,
        }
    }
}

/// Complexity of `cfg` against the decimal 128 kB budget.
pub fn analyze(cfg: &ModelConfig) -> Result<ComplexityReport> {
    analyze_with_limit(cfg, SIZE_BUDGET_BYTES)
}

pub fn analyze_with_limit(cfg: &ModelConfig, size_limit_bytes: usize) -> Result<ComplexityReport> {
    Ok(ComplexityReport::from_architecture(&Architecture::from_config(cfg)?, size_limit_bytes))
}

/// Output of one forward pass recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    pub embedding: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub loss: f64,
    pub logits: Vec<f64>,
    /// One gradient per parameter, in parameter order.
    pub grads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    config: ModelConfig,
    arch: Architecture,
    pub params: Vec<Parameter>,
    /// Input standardization applied by [`StudentModel::prepare`].
    pub norm: NormStats,
}

impl StudentModel {
    /// Seeded initialization: Kaiming-uniform convolution and merge weights,
    /// zero classifier weights and biases, unit ResNorm scales. Untrained
    /// logits are therefore all zero.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::from_config(&config)?;
        if config.challenge_mode {
            let report = ComplexityReport::from_architecture(&arch, SIZE_BUDGET_BYTES);
            if !report.budget_ok {
                return Err(Error::Budget(format!(
                    "{} bytes / {} MACs exceeds {} bytes / {} MACs",
                    report.int8_size_bytes, report.macs_per_inference, SIZE_BUDGET_BYTES, MAC_BUDGET
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .params
            .iter()
            .map(|spec| {
                let n = spec.numel();
                let data: Vec<f64> = match spec.init {
                    Init::KaimingUniform { fan_in } => uniform(&mut rng, n, (6.0 / fan_in as f64).sqrt()),
                    Init::LinearUniform { fan_in } => uniform(&mut rng, n, 1.0 / (fan_in as f64).sqrt()),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Ok(Parameter::new(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, arch, params, norm: NormStats::identity() })
    }

    /// Rebuilds a model from stored parameters; names and shapes must match
    /// the architecture of `config` in order.
    pub fn from_parameters(config: ModelConfig, tensors: Vec<(String, Tensor)>, norm: NormStats) -> Result<Self> {
        let arch = Architecture::from_config(&config)?;
        if tensors.len() != arch.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                arch.params.len(),
                tensors.len()
            )));
        }
        let params = arch
            .params
            .iter()
            .zip(tensors)
            .map(|(spec, (name, t))| {
                if name != spec.name || t.shape() != spec.shape.as_slice() {
                    return Err(Error::Format(format!(
                        "parameter {name} {:?} does not match {} {:?}",
                        t.shape(),
                        spec.name,
                        spec.shape
                    )));
                }
                Ok(Parameter::new(name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, arch, params, norm })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn complexity(&self) -> ComplexityReport {
        ComplexityReport::from_architecture(&self.arch, SIZE_BUDGET_BYTES)
    }

    /// Standardized `(1, F, T)` input for a feature map of the configured size.
    pub fn prepare(&self, features: &FeatureMap) -> Result<Tensor> {
        let want = self.config.input_shape;
        if (features.mel_bins, features.frames) != want {
            return Err(Error::Shape(format!(
                "features of {} are ({}, {}), model expects {want:?}",
                features.clip_id, features.mel_bins, features.frames
            )));
        }
        Ok(features.to_tensor(Some(self.norm)))
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn leaves(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone().with_requires_grad(requires_grad)))
            .collect()
    }

    /// Records the network on `tape` given parameter leaves from [`Self::leaves`].
    pub fn forward_on_tape(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Forward> {
        let want = self.arch.input_shape;
        if tape.value(input).shape() != want {
            return Err(Error::Shape(format!(
                "input {:?}, model expects {want:?}",
                tape.value(input).shape()
            )));
        }
        let mut x = input;
        let mut embedding = None;
        for layer in &self.arch.layers {
            x = match *layer {
                Layer::Conv(c) => tape.conv1d(x, params[c.weight], c.spec)?,
                Layer::ResNorm { lambda } => tape.residual_norm(x, params[lambda])?,
                Layer::Relu => tape.relu(x)?,
                Layer::MaxPool { window } => tape.max_pool2d(x, window, window)?,
                Layer::Block(b) => {
                    let f = tape.slice_channels(x, 0, b.split)?;
                    let f = tape.conv1d(f, params[b.freq.weight], b.freq.spec)?;
                    let t = tape.slice_channels(x, b.split, b.c_in - b.split)?;
                    let t = tape.conv1d(t, params[b.time.weight], b.time.spec)?;
                    let m = tape.concat_channels(&[f, t])?;
                    let m = tape.pointwise_conv(m, params[b.merge])?;
                    let mut m = tape.residual_norm(m, params[b.lambda])?;
                    if b.residual {
                        m = tape.add(m, x)?;
                    }
                    tape.relu(m)?
                }
                Layer::GlobalPool => {
                    let g = tape.global_avg_pool(x)?;
                    embedding = Some(g);
                    g
                }
                Layer::Linear { weight, bias, .. } => tape.linear(x, params[weight], params[bias])?,
            };
        }
        let embedding = embedding.ok_or_else(|| Error::Shape("network has no pooling layer".into()))?;
        Ok(Forward { logits: x, embedding })
    }

    fn infer(&self, input: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let params = self.leaves(&mut tape, false);
        let x = tape.leaf(input.clone().with_requires_grad(false));
        let out = self.forward_on_tape(&mut tape, &params, x)?;
        Ok((tape.value(out.logits).data().to_vec(), tape.value(out.embedding).data().to_vec()))
    }

    /// Logits for an already standardized `(1, F, T)` input.
    pub fn forward_tensor(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.infer(input)?.0)
    }

    pub fn forward(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        self.forward_tensor(&self.prepare(features)?)
    }

    /// Logits for every map; runs in parallel, output in input order.
    pub fn forward_batch(&self, batch: &[FeatureMap]) -> Result<Vec<Vec<f64>>> {
        batch.par_iter().map(|f| self.forward(f)).collect()
    }

    /// Pooled features feeding the classifier.
    pub fn embedding(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        Ok(self.infer(&self.prepare(features)?)?.1)
    }

    pub fn embeddings(&self, batch: &[FeatureMap]) -> Result<Vec<Vec<f64>>> {
        batch.par_iter().map(|f| self.embedding(f)).collect()
    }

    /// Loss and parameter gradients for one standardized input; `loss`
    /// maps logits to `(value, d value / d logits)`.
    pub fn sample_gradient<F>(&self, input: &Tensor, loss: F) -> Result<SampleGradient>
    where
        F: FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let mut tape = Tape::new();
        let params = self.leaves(&mut tape, true);
        let x = tape.leaf(input.clone().with_requires_grad(false));
        let out = self.forward_on_tape(&mut tape, &params, x)?;
        let logits = tape.value(out.logits).data().to_vec();
        let (value, seed) = loss(&logits)?;
        tape.backward(out.logits, &seed)?;
        let grads = params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        Ok(SampleGradient { loss: value, logits, grads })
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}
