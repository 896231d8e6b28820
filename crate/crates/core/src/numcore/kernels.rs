//! Slice-level forward/backward kernels shared by the autodiff tape and the
//! quantized interpreter. Activations are laid out `(C, F, T)` row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Freq,
    Time,
}

/// Geometry of a 1D convolution applied along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub axis: Axis,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Output extent of a strided, padded window; `None` when non-positive.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    let padded = len + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Resolved strides for walking a `(F, T)` plane as a set of lines along the
/// convolved axis.
#[derive(Debug, Clone, Copy)]
struct LineLayout {
    in_len: usize,
    in_step: usize,
    out_len: usize,
    out_step: usize,
    lines: usize,
    in_line_step: usize,
    out_line_step: usize,
    in_plane: usize,
    out_plane: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub in_f: usize,
    pub in_t: usize,
    pub out_f: usize,
    pub out_t: usize,
    pub spec: Conv1dSpec,
    layout: LineLayout,
}

impl ConvGeometry {
    /// `weight_shape` is `(C_out, C_in / groups, k, 1)` for frequency kernels
    /// and `(C_out, C_in / groups, 1, k)` for time kernels.
    pub fn new(input_shape: [usize; 3], weight_shape: &[usize], spec: Conv1dSpec) -> Result<Self> {
        let [c_in, in_f, in_t] = input_shape;
        let (c_out, cpg, kf, kt) = match weight_shape {
            &[a, b, c, d] => (a, b, c, d),
            other => {
                return Err(Error::Shape(format!("conv weight must be 4D, got {other:?}")));
            }
        };
        let kernel = match spec.axis {
            Axis::Freq if kt == 1 => kf,
            Axis::Time if kf == 1 => kt,
            _ => {
                return Err(Error::Shape(format!(
                    "{:?} kernel must have unit extent on the other axis, got ({kf}, {kt})",
                    spec.axis
                )));
            }
        };
        if spec.groups == 0 || c_in % spec.groups != 0 || c_out % spec.groups != 0 {
            return Err(Error::Shape(format!(
                "groups {} must divide C_in {c_in} and C_out {c_out}",
                spec.groups
            )));
        }
        if cpg != c_in / spec.groups {
            return Err(Error::Shape(format!(
                "weight expects {cpg} input channels per group, input has {}",
                c_in / spec.groups
            )));
        }
        let conv_len = match spec.axis {
            Axis::Freq => in_f,
            Axis::Time => in_t,
        };
        let out_len = conv_out_len(conv_len, kernel, spec.stride, spec.padding).ok_or_else(|| {
            Error::Shape(format!(
                "kernel {kernel} stride {} padding {} leaves no output on extent {conv_len}",
                spec.stride, spec.padding
            ))
        })?;
        let (out_f, out_t) = match spec.axis {
            Axis::Freq => (out_len, in_t),
            Axis::Time => (in_f, out_len),
        };
        let layout = match spec.axis {
            Axis::Time => LineLayout {
                in_len: in_t,
                in_step: 1,
                out_len: out_t,
                out_step: 1,
                lines: in_f,
                in_line_step: in_t,
                out_line_step: out_t,
                in_plane: in_f * in_t,
                out_plane: out_f * out_t,
            },
            Axis::Freq => LineLayout {
                in_len: in_f,
                in_step: in_t,
                out_len: out_f,
                out_step: out_t,
                lines: in_t,
                in_line_step: 1,
                out_line_step: 1,
                in_plane: in_f * in_t,
                out_plane: out_f * out_t,
            },
        };
        Ok(Self {
            c_in,
            c_out,
            kernel,
            in_f,
            in_t,
            out_f,
            out_t,
            spec,
            layout,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.c_out, self.out_f, self.out_t]
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * (self.c_in / self.spec.groups) * self.kernel
    }

    /// Output positions `o` for which tap `j` reads inside the input.
    fn valid_range(&self, tap: usize) -> std::ops::Range<usize> {
        let l = &self.layout;
        let s = self.spec.stride;
        let p = self.spec.padding;
        let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
        // o*s + tap - p <= in_len - 1
        let hi = if l.in_len + p > tap {
            ((l.in_len - 1 + p - tap) / s + 1).min(l.out_len)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    /// Visits every (input channel, output channel, weight index) triple in a
    /// fixed order; all conv loops share it so sums are order-identical.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let groups = self.spec.groups;
        let cpg = self.c_in / groups;
        let opg = self.c_out / groups;
        for co in 0..self.c_out {
            let g = co / opg;
            for cl in 0..cpg {
                let ci = g * cpg + cl;
                for j in 0..self.kernel {
                    f(co, ci, (co * cpg + cl) * self.kernel + j, j);
                }
            }
        }
    }

    pub fn forward(&self, input: &[f64], weight: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let s = self.spec.stride;
        let p = self.spec.padding;
        let mut out = vec![0.0; self.c_out * l.out_plane];
        self.for_each_tap(|co, ci, wi, j| {
            let w = weight[wi];
            let range = self.valid_range(j);
            let x = &input[ci * l.in_plane..(ci + 1) * l.in_plane];
            let y = &mut out[co * l.out_plane..(co + 1) * l.out_plane];
            for m in 0..l.lines {
                let xb = m * l.in_line_step;
                let yb = m * l.out_line_step;
                for o in range.clone() {
                    let pos = o * s + j - p;
                    y[yb + o * l.out_step] += w * x[xb + pos * l.in_step];
                }
            }
        });
        out
    }

    /// Returns `(d input, d weight)`.
    pub fn backward(&self, input: &[f64], weight: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let s = self.spec.stride;
        let p = self.spec.padding;
        let mut gin = vec![0.0; self.c_in * l.in_plane];
        let mut gw = vec![0.0; weight.len()];
        self.for_each_tap(|co, ci, wi, j| {
            let w = weight[wi];
            let range = self.valid_range(j);
            let x = &input[ci * l.in_plane..(ci + 1) * l.in_plane];
            let gx = &mut gin[ci * l.in_plane..(ci + 1) * l.in_plane];
            let gy = &grad_out[co * l.out_plane..(co + 1) * l.out_plane];
            let mut acc = 0.0;
            for m in 0..l.lines {
                let xb = m * l.in_line_step;
                let yb = m * l.out_line_step;
                for o in range.clone() {
                    let pos = xb + (o * s + j - p) * l.in_step;
                    let g = gy[yb + o * l.out_step];
                    gx[pos] += w * g;
                    acc += g * x[pos];
                }
            }
            gw[wi] += acc;
        });
        (gin, gw)
    }

    /// Integer version of [`forward`](Self::forward): `input` carries
    /// zero-point-shifted activation codes, so padding contributes zero.
    pub fn forward_i32(&self, input: &[i32], weight: &[i8]) -> Vec<i32> {
        let l = self.layout;
        let s = self.spec.stride;
        let p = self.spec.padding;
        let mut out = vec![0i32; self.c_out * l.out_plane];
        self.for_each_tap(|co, ci, wi, j| {
            let w = weight[wi] as i32;
            let range = self.valid_range(j);
            let x = &input[ci * l.in_plane..(ci + 1) * l.in_plane];
            let y = &mut out[co * l.out_plane..(co + 1) * l.out_plane];
            for m in 0..l.lines {
                let xb = m * l.in_line_step;
                let yb = m * l.out_line_step;
                for o in range.clone() {
                    let pos = o * s + j - p;
                    y[yb + o * l.out_step] += w * x[xb + pos * l.in_step];
                }
            }
        });
        out
    }
}

/// `(C_out, C_in) x (C_in, P) -> (C_out, P)`.
pub fn pointwise_forward(input: &[f64], weight: &[f64], c_in: usize, c_out: usize, positions: usize) -> Vec<f64> {
    let mut out = vec![0.0; c_out * positions];
    for co in 0..c_out {
        let y = &mut out[co * positions..(co + 1) * positions];
        for ci in 0..c_in {
            let w = weight[co * c_in + ci];
            let x = &input[ci * positions..(ci + 1) * positions];
            for (yv, xv) in y.iter_mut().zip(x) {
                *yv += w * xv;
            }
        }
    }
    out
}

pub fn pointwise_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    c_in: usize,
    c_out: usize,
    positions: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut gin = vec![0.0; c_in * positions];
    let mut gw = vec![0.0; c_out * c_in];
    for co in 0..c_out {
        let gy = &grad_out[co * positions..(co + 1) * positions];
        for ci in 0..c_in {
            let w = weight[co * c_in + ci];
            let x = &input[ci * positions..(ci + 1) * positions];
            let gx = &mut gin[ci * positions..(ci + 1) * positions];
            let mut acc = 0.0;
            for p in 0..positions {
                gx[p] += w * gy[p];
                acc += gy[p] * x[p];
            }
            gw[co * c_in + ci] = acc;
        }
    }
    (gin, gw)
}

pub fn pointwise_forward_i32(input: &[i32], weight: &[i8], c_in: usize, c_out: usize, positions: usize) -> Vec<i32> {
    let mut out = vec![0i32; c_out * positions];
    for co in 0..c_out {
        let y = &mut out[co * positions..(co + 1) * positions];
        for ci in 0..c_in {
            let w = weight[co * c_in + ci] as i32;
            let x = &input[ci * positions..(ci + 1) * positions];
            for (yv, xv) in y.iter_mut().zip(x) {
                *yv += w * xv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub channels: usize,
    pub in_f: usize,
    pub in_t: usize,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub out_f: usize,
    pub out_t: usize,
}

impl PoolGeometry {
    pub fn new(input_shape: [usize; 3], window: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        let [channels, in_f, in_t] = input_shape;
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("pool window and stride must be positive".into()));
        }
        if window.0 > in_f || window.1 > in_t {
            return Err(Error::Shape(format!(
                "pool window {window:?} larger than input extent ({in_f}, {in_t})"
            )));
        }
        Ok(Self {
            channels,
            in_f,
            in_t,
            window,
            stride,
            out_f: (in_f - window.0) / stride.0 + 1,
            out_t: (in_t - window.1) / stride.1 + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.channels, self.out_f, self.out_t]
    }

    /// Max values and the flat input index each came from. Ties resolve to
    /// the lowest linear index.
    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let n = self.channels * self.out_f * self.out_t;
        let mut out = Vec::with_capacity(n);
        let mut arg = Vec::with_capacity(n);
        for c in 0..self.channels {
            let base = c * self.in_f * self.in_t;
            for of in 0..self.out_f {
                for ot in 0..self.out_t {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for wf in 0..self.window.0 {
                        let row = base + (of * self.stride.0 + wf) * self.in_t;
                        for wt in 0..self.window.1 {
                            let idx = row + ot * self.stride.1 + wt;
                            let v = input[idx];
                            if best_idx == usize::MAX || v > best || (v == best && idx < best_idx) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
        (out, arg)
    }
}

/// Per-frequency statistics over channels and time, saved for backward.
#[derive(Debug, Clone)]
pub struct ResNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Flat offsets of frequency bin `bin`: every channel, every frame.
fn bin_offsets(shape: [usize; 3], bin: usize) -> impl Iterator<Item = usize> {
    let [c, f, t] = shape;
    (0..c).flat_map(move |ci| {
        let row = (ci * f + bin) * t;
        row..row + t
    })
}

/// `lambda * x + (x - mean_f) / sqrt(var_f + eps)`, statistics per
/// frequency bin over channels and time.
pub fn resnorm_forward(input: &[f64], shape: [usize; 3], lambda: f64) -> (Vec<f64>, ResNormCache) {
    let [c, f, t] = shape;
    let n = (c * t) as f64;
    let mut out = vec![0.0; input.len()];
    let mut normalized = vec![0.0; input.len()];
    let mut inv_std = vec![0.0; f];
    for (bin, inv_slot) in inv_std.iter_mut().enumerate() {
        let mean = bin_offsets(shape, bin).map(|i| input[i]).sum::<f64>() / n;
        let var = bin_offsets(shape, bin).map(|i| (input[i] - mean) * (input[i] - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + RESNORM_EPS).sqrt();
        *inv_slot = inv;
        for i in bin_offsets(shape, bin) {
            let z = (input[i] - mean) * inv;
            normalized[i] = z;
            out[i] = lambda * input[i] + z;
        }
    }
    (out, ResNormCache { normalized, inv_std })
}

/// Returns `(d input, d lambda)`.
pub fn resnorm_backward(
    input: &[f64],
    shape: [usize; 3],
    lambda: f64,
    cache: &ResNormCache,
    grad_out: &[f64],
) -> (Vec<f64>, f64) {
    let [c, _, t] = shape;
    let n = (c * t) as f64;
    let mut gin = vec![0.0; input.len()];
    let glambda = grad_out.iter().zip(input).map(|(g, x)| g * x).sum();
    for (bin, &inv) in cache.inv_std.iter().enumerate() {
        let gmean = bin_offsets(shape, bin).map(|i| grad_out[i]).sum::<f64>() / n;
        let gn_mean = bin_offsets(shape, bin).map(|i| grad_out[i] * cache.normalized[i]).sum::<f64>() / n;
        for i in bin_offsets(shape, bin) {
            gin[i] = lambda * grad_out[i] + inv * (grad_out[i] - gmean - cache.normalized[i] * gn_mean);
        }
    }
    (gin, glambda)
}

pub fn relu_forward(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn global_avg_pool(input: &[f64], shape: [usize; 3]) -> Vec<f64> {
    let [c, f, t] = shape;
    let plane = f * t;
    (0..c)
        .map(|ch| input[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

/// `weight (K, D) . input (D) + bias (K)`.
pub fn linear_forward(input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = input.len();
    bias.iter()
        .enumerate()
        .map(|(k, b)| {
            let row = &weight[k * d..(k + 1) * d];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_arithmetic() {
        assert_eq!(conv_out_len(5, 3, 1, 1), Some(5));
        assert_eq!(conv_out_len(512, 3, 2, 1), Some(256));
        assert_eq!(conv_out_len(2, 5, 1, 1), None);
        assert_eq!(conv_out_len(1, 3, 1, 1), Some(1));
    }

    #[test]
    fn valid_range_covers_padding() {
        let spec = Conv1dSpec { axis: Axis::Time, stride: 2, padding: 1, groups: 1 };
        let g = ConvGeometry::new([1, 1, 5], &[1, 1, 1, 3], spec).unwrap();
        assert_eq!(g.out_t, 3);
        // positions o*2 + j - 1 in [0, 5)
        assert_eq!(g.valid_range(0), 1..3);
        assert_eq!(g.valid_range(1), 0..3);
        assert_eq!(g.valid_range(2), 0..2);
    }

    #[test]
    fn pool_ties_pick_lowest_index() {
        let g = PoolGeometry::new([1, 2, 2], (2, 2), (2, 2)).unwrap();
        let (v, a) = g.forward(&[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(v, vec![5.0]);
        assert_eq!(a, vec![0]);
    }
}
