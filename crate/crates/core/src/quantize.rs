//! Post-training static INT8 quantization: min/max calibration of the
//! activation feeding every integer kernel, symmetric per-tensor weights,
//! asymmetric per-site activations, int32 classifier bias, and an
//! interpreter that runs convolutions in integer arithmetic with `f32`
//! requantization.
//!
//! The `TFSQ` file starts with the deployable payload whose length is
//! exactly [`Architecture::int8_size_bytes`]: magic, `u32` payload length,
//! per tensor an `f32` scale, `i32` zero point and the codes (`i8`, or
//! `i32` little-endian for biases), then per site an `f32` scale and `i32`
//! zero point. A directory follows: a `u32`-prefixed TOML header with mode,
//! model config and input normalization, a `u32` tensor count and per
//! tensor its `u32`-prefixed name, `u32` rank and `u32` dims.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, NormStats};
use crate::model::checkpoint::{put_str, put_u32, Reader};
use crate::model::{Architecture, ConvLayer, Layer, ModelConfig, StudentModel, QUANT_HEADER_BYTES};
use crate::numcore::kernels::{
    global_avg_pool, linear_forward, pointwise_forward, pointwise_forward_i32, relu_forward, resnorm_forward,
    ConvGeometry, PoolGeometry,
};
use crate::numcore::Tensor;

pub const QUANT_MAGIC: &[u8; 4] = b"TFSQ";
/// Smallest scale assigned to an all-zero tensor or range.
pub const SCALE_FLOOR: f32 = 1e-12;
/// Width given to a calibrated range whose min equals its max.
pub const RANGE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    /// Integer weights and activations.
    #[default]
    Full,
    /// Integer weights, float activations; no activation sites are stored.
    WeightsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: &[f64]) -> Option<Self> {
        values.iter().fold(None, |acc, &v| {
            Some(acc.map_or(Range { min: v, max: v }, |r: Range| Range { min: r.min.min(v), max: r.max.max(v) }))
        })
    }

    fn merge(a: Option<Self>, b: Option<Self>) -> Option<Self> {
        match (a, b) {
            (Some(a), Some(b)) => Some(Range { min: a.min.min(b.min), max: a.max.max(b.max) }),
            (a, b) => a.or(b),
        }
    }

    /// `max` raised by [`RANGE_EPS`] when the range is a single point.
    pub fn widened(self) -> Self {
        if self.max - self.min < RANGE_EPS {
            Range { min: self.min, max: self.min + RANGE_EPS }
        } else {
            self
        }
    }
}

/// Calibrated range of every activation site, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRanges {
    pub sites: Vec<Range>,
}

/// Running per-site min/max over calibration batches.
#[derive(Debug, Clone)]
pub struct Calibrator {
    raw: Vec<Option<Range>>,
    batches: usize,
}

impl Calibrator {
    pub fn new(model: &StudentModel) -> Self {
        Self { raw: vec![None; model.architecture().activation_sites()], batches: 0 }
    }

    pub fn observe(&mut self, model: &StudentModel, batch: &[FeatureMap]) -> Result<()> {
        if self.raw.len() != model.architecture().activation_sites() {
            return Err(Error::Shape("calibrator was created for a different architecture".into()));
        }
        let weights: Vec<&[f64]> = model.params.iter().map(|p| p.tensor.data()).collect();
        let per_sample: Vec<Vec<Option<Range>>> = batch
            .par_iter()
            .map(|f| {
                let input = model.prepare(f)?;
                let mut k = FloatKernels { arch: model.architecture(), weights: &weights, seen: Some(vec![None; self.raw.len()]) };
                execute(model.architecture(), &mut k, input.into_data())?;
                Ok(k.seen.expect("recording"))
            })
            .collect::<Result<_>>()?;
        for sample in per_sample {
            for (acc, r) in self.raw.iter_mut().zip(sample) {
                *acc = Range::merge(*acc, r);
            }
        }
        self.batches += 1;
        Ok(())
    }

    /// Unwidened running ranges; `None` for sites not yet observed.
    pub fn raw(&self) -> &[Option<Range>] {
        &self.raw
    }

    pub fn ranges(&self) -> Result<ActivationRanges> {
        if self.batches == 0 {
            return Err(Error::InvalidArgument("calibration needs at least one batch".into()));
        }
        let sites = self
            .raw
            .iter()
            .map(|r| r.map(Range::widened).ok_or_else(|| Error::Data("activation site never observed".into())))
            .collect::<Result<_>>()?;
        Ok(ActivationRanges { sites })
    }
}

pub fn calibrate<'a>(model: &StudentModel, batches: impl IntoIterator<Item = &'a [FeatureMap]>) -> Result<ActivationRanges> {
    let mut c = Calibrator::new(model);
    for b in batches {
        c.observe(model, b)?;
    }
    c.ranges()
}

/// Asymmetric activation quantizer over `[-128, 127]`; the represented
/// range always contains zero so padding maps to the zero point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActQuant {
    pub scale: f32,
    pub zero_point: i8,
}

impl ActQuant {
    pub fn from_range(r: Range) -> Self {
        let (lo, hi) = (r.min.min(0.0), r.max.max(0.0));
        let scale = (((hi - lo) / 255.0) as f32).max(SCALE_FLOOR);
        let zp = (-128.0 - lo / f64::from(scale)).round().clamp(-128.0, 127.0);
        Self { scale, zero_point: zp as i8 }
    }

    pub fn code(&self, x: f64) -> i8 {
        ((x / f64::from(self.scale)).round() + f64::from(self.zero_point)).clamp(-128.0, 127.0) as i8
    }

    /// Codes minus the zero point.
    pub fn shifted(&self, xs: &[f64]) -> Vec<i32> {
        xs.iter().map(|&x| i32::from(self.code(x)) - i32::from(self.zero_point)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Codes {
    I8(Vec<i8>),
    I32(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub zero_point: i8,
    pub codes: Codes,
}

impl QuantTensor {
    /// Symmetric: `scale = max|w| / 127` (floored), zero point 0, codes in `[-127, 127]`.
    pub fn weight(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        Self::weight_with_scale(name, shape, data, SCALE_FLOOR)
    }

    /// As [`Self::weight`] with the scale raised to at least `min_scale`.
    pub fn weight_with_scale(name: impl Into<String>, shape: Vec<usize>, data: &[f64], min_scale: f32) -> Self {
        let peak = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = ((peak / 127.0) as f32).max(min_scale).max(SCALE_FLOOR);
        let s = f64::from(scale);
        let codes = data.iter().map(|&w| (w / s).round().clamp(-127.0, 127.0) as i8).collect();
        Self { name: name.into(), shape, scale, zero_point: 0, codes: Codes::I8(codes) }
    }

    /// Int32 codes at a given scale.
    pub fn bias(name: impl Into<String>, shape: Vec<usize>, data: &[f64], scale: f32) -> Self {
        let scale = scale.max(SCALE_FLOOR);
        let s = f64::from(scale);
        let lim = f64::from(i32::MAX);
        let codes = data.iter().map(|&b| (b / s).round().clamp(-lim, lim) as i32).collect();
        Self { name: name.into(), shape, scale, zero_point: 0, codes: Codes::I32(codes) }
    }

    pub fn numel(&self) -> usize {
        match &self.codes {
            Codes::I8(c) => c.len(),
            Codes::I32(c) => c.len(),
        }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let s = f64::from(self.scale);
        let z = i32::from(self.zero_point);
        match &self.codes {
            Codes::I8(c) => c.iter().map(|&q| f64::from(i32::from(q) - z) * s).collect(),
            Codes::I32(c) => c.iter().map(|&q| f64::from(q - z) * s).collect(),
        }
    }

    fn i8_codes(&self) -> Result<&[i8]> {
        match &self.codes {
            Codes::I8(c) => Ok(c),
            Codes::I32(_) => Err(Error::Format(format!("{} holds int32 codes where int8 are expected", self.name))),
        }
    }

    fn i32_codes(&self) -> Result<&[i32]> {
        match &self.codes {
            Codes::I32(c) => Ok(c),
            Codes::I8(_) => Err(Error::Format(format!("{} holds int8 codes where int32 are expected", self.name))),
        }
    }
}

/// Integer classifier: `scale_w * scale_a * (W_q x_q + b_q)` with
/// `bias.scale == weight.scale * act.scale`.
pub fn quantized_linear(weight: &QuantTensor, bias: &QuantTensor, act: &ActQuant, x: &[f64]) -> Result<Vec<f64>> {
    let w = weight.i8_codes()?;
    let b = bias.i32_codes()?;
    let d = x.len();
    if w.len() != b.len() * d {
        return Err(Error::Shape(format!("classifier of {} weights for {} outputs and {d} inputs", w.len(), b.len())));
    }
    let xq = act.shifted(x);
    Ok(b.iter()
        .enumerate()
        .map(|(k, &bk)| {
            let acc = w[k * d..(k + 1) * d].iter().zip(&xq).map(|(&wi, &xi)| i32::from(wi) * xi).sum::<i32>() + bk;
            f64::from(acc as f32 * bias.scale)
        })
        .collect())
}

/// Operations that differ between the float and the integer network.
trait Kernels {
    fn conv(&mut self, site: usize, layer: &ConvLayer, shape: [usize; 3], x: &[f64]) -> Result<Vec<f64>>;
    fn pointwise(&mut self, site: usize, weight: usize, c_in: usize, c_out: usize, x: &[f64]) -> Result<Vec<f64>>;
    fn linear(&mut self, site: usize, weight: usize, bias: usize, x: &[f64]) -> Result<Vec<f64>>;
    fn scalar(&self, index: usize) -> f64;
}

/// Logits and pooled embedding of one standardized input.
fn execute(arch: &Architecture, k: &mut impl Kernels, input: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = input;
    let mut shape = arch.input_shape;
    let mut site = 0;
    let mut embedding = Vec::new();
    for (layer, &out_shape) in arch.layers.iter().zip(&arch.shapes) {
        x = match *layer {
            Layer::Conv(c) => {
                site += 1;
                k.conv(site - 1, &c, shape, &x)?
            }
            Layer::ResNorm { lambda } => resnorm_forward(&x, shape, k.scalar(lambda)).0,
            Layer::Relu => relu_forward(&x),
            Layer::MaxPool { window } => PoolGeometry::new(shape, window, window)?.forward(&x).0,
            Layer::Block(b) => {
                let [_, f, t] = shape;
                let cut = b.split * f * t;
                let mut m = k.conv(site, &b.freq, [b.split, f, t], &x[..cut])?;
                m.extend(k.conv(site + 1, &b.time, [b.c_in - b.split, f, t], &x[cut..])?);
                let m = k.pointwise(site + 2, b.merge, b.c_in, b.c_out, &m)?;
                site += 3;
                let (mut m, _) = resnorm_forward(&m, out_shape, k.scalar(b.lambda));
                if b.residual {
                    m.iter_mut().zip(&x).for_each(|(a, v)| *a += v);
                }
                relu_forward(&m)
            }
            Layer::GlobalPool => {
                embedding = global_avg_pool(&x, shape);
                embedding.clone()
            }
            Layer::Linear { weight, bias, .. } => {
                site += 1;
                k.linear(site - 1, weight, bias, &x)?
            }
        };
        shape = out_shape;
    }
    Ok((x, embedding))
}

struct FloatKernels<'a> {
    arch: &'a Architecture,
    weights: &'a [&'a [f64]],
    /// Per-site ranges of kernel inputs when recording.
    seen: Option<Vec<Option<Range>>>,
}

impl FloatKernels<'_> {
    fn record(&mut self, site: usize, x: &[f64]) {
        if let Some(seen) = self.seen.as_mut() {
            seen[site] = Range::merge(seen[site], Range::of(x));
        }
    }
}

impl Kernels for FloatKernels<'_> {
    fn conv(&mut self, site: usize, layer: &ConvLayer, shape: [usize; 3], x: &[f64]) -> Result<Vec<f64>> {
        self.record(site, x);
        let geom = ConvGeometry::new(shape, &self.arch.params[layer.weight].shape, layer.spec)?;
        Ok(geom.forward(x, self.weights[layer.weight]))
    }

    fn pointwise(&mut self, site: usize, weight: usize, c_in: usize, c_out: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.record(site, x);
        Ok(pointwise_forward(x, self.weights[weight], c_in, c_out, x.len() / c_in))
    }

    fn linear(&mut self, site: usize, weight: usize, bias: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.record(site, x);
        Ok(linear_forward(x, self.weights[weight], self.weights[bias]))
    }

    fn scalar(&self, index: usize) -> f64 {
        self.weights[index][0]
    }
}

struct IntKernels<'a> {
    q: &'a QuantizedModel,
    scalars: Vec<f64>,
}

impl IntKernels<'_> {
    fn requantize(acc: &[i32], scale: f32) -> Vec<f64> {
        acc.iter().map(|&a| f64::from(a as f32 * scale)).collect()
    }
}

impl Kernels for IntKernels<'_> {
    fn conv(&mut self, site: usize, layer: &ConvLayer, shape: [usize; 3], x: &[f64]) -> Result<Vec<f64>> {
        let w = &self.q.tensors[layer.weight];
        let a = &self.q.sites[site];
        let geom = ConvGeometry::new(shape, &w.shape, layer.spec)?;
        Ok(Self::requantize(&geom.forward_i32(&a.shifted(x), w.i8_codes()?), w.scale * a.scale))
    }

    fn pointwise(&mut self, site: usize, weight: usize, c_in: usize, c_out: usize, x: &[f64]) -> Result<Vec<f64>> {
        let w = &self.q.tensors[weight];
        let a = &self.q.sites[site];
        let acc = pointwise_forward_i32(&a.shifted(x), w.i8_codes()?, c_in, c_out, x.len() / c_in);
        Ok(Self::requantize(&acc, w.scale * a.scale))
    }

    fn linear(&mut self, site: usize, weight: usize, bias: usize, x: &[f64]) -> Result<Vec<f64>> {
        quantized_linear(&self.q.tensors[weight], &self.q.tensors[bias], &self.q.sites[site], x)
    }

    fn scalar(&self, index: usize) -> f64 {
        self.scalars[index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    config: ModelConfig,
    arch: Architecture,
    pub norm: NormStats,
    pub mode: QuantMode,
    /// One per model parameter, in parameter order.
    pub tensors: Vec<QuantTensor>,
    /// One per activation site in [`QuantMode::Full`], otherwise empty.
    pub sites: Vec<ActQuant>,
}

/// Index of the activation site feeding each linear layer.
fn linear_sites(arch: &Architecture) -> Vec<(usize, usize, usize)> {
    let mut site = 0;
    let mut out = Vec::new();
    for layer in &arch.layers {
        if let Layer::Linear { weight, bias, .. } = *layer {
            out.push((site, weight, bias));
        }
        site += layer.activation_sites();
    }
    out
}

/// Integer weights and activations from calibrated ranges. A classifier
/// weight scale is raised when needed so its bias codes stay within half
/// the int32 range.
pub fn quantize_model(model: &StudentModel, ranges: &ActivationRanges) -> Result<QuantizedModel> {
    let arch = model.architecture();
    if ranges.sites.len() != arch.activation_sites() {
        return Err(Error::Shape(format!(
            "{} calibrated sites for {} activation sites",
            ranges.sites.len(),
            arch.activation_sites()
        )));
    }
    let sites: Vec<ActQuant> = ranges.sites.iter().map(|&r| ActQuant::from_range(r)).collect();
    let mut tensors = quantize_weights(model);
    for (site, weight, bias) in linear_sites(arch) {
        let p = &model.params[bias];
        let sa = sites[site].scale;
        let peak = p.tensor.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let need = (peak / (f64::from(sa) * f64::from(i32::MAX >> 1))) as f32;
        if tensors[weight].scale < need {
            let w = &model.params[weight];
            tensors[weight] = QuantTensor::weight_with_scale(w.name.clone(), w.tensor.shape().to_vec(), w.tensor.data(), need);
        }
        let scale = tensors[weight].scale * sa;
        tensors[bias] = QuantTensor::bias(p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data(), scale);
    }
    Ok(QuantizedModel { config: model.config().clone(), arch: arch.clone(), norm: model.norm, mode: QuantMode::Full, tensors, sites })
}

/// Integer weights only; biases get their own symmetric int32 scale.
pub fn quantize_weights_only(model: &StudentModel) -> QuantizedModel {
    QuantizedModel {
        config: model.config().clone(),
        arch: model.architecture().clone(),
        norm: model.norm,
        mode: QuantMode::WeightsOnly,
        tensors: quantize_weights(model),
        sites: Vec::new(),
    }
}

fn quantize_weights(model: &StudentModel) -> Vec<QuantTensor> {
    model
        .architecture()
        .params
        .iter()
        .zip(&model.params)
        .map(|(spec, p)| {
            let shape = p.tensor.shape().to_vec();
            if spec.is_bias {
                let peak = p.tensor.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                QuantTensor::bias(p.name.clone(), shape, p.tensor.data(), (peak / f64::from(i32::MAX)) as f32)
            } else {
                QuantTensor::weight(p.name.clone(), shape, p.tensor.data())
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Directory {
    mode: QuantMode,
    normalization: NormStats,
    model: ModelConfig,
}

impl QuantizedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Length of the deployable payload.
    pub fn size_bytes(&self) -> usize {
        let tensors: usize = self
            .tensors
            .iter()
            .map(|t| 8 + t.numel() * if matches!(t.codes, Codes::I32(_)) { 4 } else { 1 })
            .sum();
        QUANT_HEADER_BYTES + tensors + 8 * self.sites.len()
    }

    /// Float model carrying the dequantized parameters.
    pub fn dequantized(&self) -> Result<StudentModel> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| Ok((t.name.clone(), Tensor::new(t.shape.clone(), t.dequantize())?)))
            .collect::<Result<Vec<_>>>()?;
        StudentModel::from_parameters(self.config.clone(), tensors, self.norm)
    }

    /// Logits for an already standardized `(1, F, T)` input.
    pub fn forward_tensor(&self, input: &Tensor) -> Result<Vec<f64>> {
        if input.shape() != self.arch.input_shape {
            return Err(Error::Shape(format!("input {:?}, model expects {:?}", input.shape(), self.arch.input_shape)));
        }
        let x = input.data().to_vec();
        let logits = match self.mode {
            QuantMode::Full => {
                let scalars = self.tensors.iter().map(|t| t.dequantize().first().copied().unwrap_or(0.0)).collect();
                execute(&self.arch, &mut IntKernels { q: self, scalars }, x)?.0
            }
            QuantMode::WeightsOnly => {
                let deq: Vec<Vec<f64>> = self.tensors.iter().map(QuantTensor::dequantize).collect();
                let weights: Vec<&[f64]> = deq.iter().map(Vec::as_slice).collect();
                execute(&self.arch, &mut FloatKernels { arch: &self.arch, weights: &weights, seen: None }, x)?.0
            }
        };
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantized logits".into()));
        }
        Ok(logits)
    }

    pub fn forward(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        let want = self.config.input_shape;
        if (features.mel_bins, features.frames) != want {
            return Err(Error::Shape(format!(
                "features of {} are ({}, {}), model expects {want:?}",
                features.clip_id, features.mel_bins, features.frames
            )));
        }
        self.forward_tensor(&features.to_tensor(Some(self.norm)))
    }

    pub fn forward_batch(&self, batch: &[FeatureMap]) -> Result<Vec<Vec<f64>>> {
        batch.par_iter().map(|f| self.forward(f)).collect()
    }

    /// The deployable bytes; their length is [`Self::size_bytes`].
    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes());
        out.extend_from_slice(QUANT_MAGIC);
        put_u32(&mut out, self.size_bytes() - QUANT_HEADER_BYTES);
        for t in &self.tensors {
            out.extend_from_slice(&t.scale.to_le_bytes());
            out.extend_from_slice(&i32::from(t.zero_point).to_le_bytes());
            match &t.codes {
                Codes::I8(c) => out.extend(c.iter().map(|&q| q as u8)),
                Codes::I32(c) => c.iter().for_each(|q| out.extend_from_slice(&q.to_le_bytes())),
            }
        }
        for s in &self.sites {
            out.extend_from_slice(&s.scale.to_le_bytes());
            out.extend_from_slice(&i32::from(s.zero_point).to_le_bytes());
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = self.payload();
        let dir = Directory { mode: self.mode, normalization: self.norm, model: self.config.clone() };
        put_str(&mut out, &toml::to_string(&dir).map_err(|e| Error::Format(format!("cannot encode directory: {e}")))?);
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            put_u32(&mut out, t.shape.len());
            t.shape.iter().for_each(|&d| put_u32(&mut out, d));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != QUANT_MAGIC {
            return Err(Error::Format("not a TFSQ quantized model".into()));
        }
        let payload_len = r.u32()? as usize;
        let mut body = Reader::new(r.take(payload_len)?);
        let dir: Directory =
            toml::from_str(&r.string()?).map_err(|e| Error::Format(format!("bad quantized directory: {e}")))?;
        let arch = Architecture::from_config(&dir.model)?;
        let n = r.u32()? as usize;
        if n != arch.params.len() {
            return Err(Error::Format(format!("{n} tensors for {} parameters", arch.params.len())));
        }
        let mut tensors = Vec::with_capacity(n);
        for spec in &arch.params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != spec.name || shape != spec.shape {
                return Err(Error::Format(format!("tensor {name} {shape:?} does not match {} {:?}", spec.name, spec.shape)));
            }
            let scale = body.f32()?;
            let zero_point = i32_to_i8(body.u32()? as i32)?;
            let numel = spec.numel();
            let codes = if spec.is_bias {
                Codes::I32((0..numel).map(|_| body.u32().map(|v| v as i32)).collect::<Result<_>>()?)
            } else {
                Codes::I8(body.take(numel)?.iter().map(|&b| b as i8).collect())
            };
            tensors.push(QuantTensor { name, shape, scale, zero_point, codes });
        }
        let n_sites = match dir.mode {
            QuantMode::Full => arch.activation_sites(),
            QuantMode::WeightsOnly => 0,
        };
        let sites = (0..n_sites)
            .map(|_| Ok(ActQuant { scale: body.f32()?, zero_point: i32_to_i8(body.u32()? as i32)? }))
            .collect::<Result<_>>()?;
        body.finish()?;
        r.finish()?;
        Ok(Self { config: dir.model, arch, norm: dir.normalization, mode: dir.mode, tensors, sites })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn i32_to_i8(v: i32) -> Result<i8> {
    i8::try_from(v).map_err(|_| Error::Format(format!("zero point {v} outside int8")))
}

/// Float forward through the same interpreter the integer path uses.
pub fn reference_forward(model: &StudentModel, features: &FeatureMap) -> Result<Vec<f64>> {
    let weights: Vec<&[f64]> = model.params.iter().map(|p| p.tensor.data()).collect();
    let mut k = FloatKernels { arch: model.architecture(), weights: &weights, seen: None };
    Ok(execute(model.architecture(), &mut k, model.prepare(features)?.into_data())?.0)
}
