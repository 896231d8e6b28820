use super::kernels::{self, Axis, Conv1dSpec, ConvGeometry, PoolGeometry, ResNormCache};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { input: Var, weight: Var, geom: ConvGeometry },
    Pointwise { input: Var, weight: Var, c_in: usize, c_out: usize, positions: usize },
    MaxPool { input: Var, argmax: Vec<usize> },
    ResNorm { input: Var, lambda: Var, cache: ResNormCache },
    Linear { input: Var, weight: Var, bias: Var },
    Relu { input: Var },
    Add { lhs: Var, rhs: Var },
    SliceChannels { input: Var, offset: usize },
    ConcatChannels { parts: Vec<Var> },
    GlobalAvgPool { input: Var, plane: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape over the fixed op vocabulary the student network uses.
///
/// Every recorded op checks its output for NaN/Inf. After [`Tape::backward`],
/// leaves created with `requires_grad` carry their gradient in
/// [`Tensor::grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node { value: tensor, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    pub fn take_grad(&mut self, var: Var) -> Option<Vec<f64>> {
        self.nodes[var.0].value.take_grad()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, what: &str) -> Result<Var> {
        let value = Tensor::new(shape, data)?;
        value.check_finite(what)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims3(&self, var: Var) -> Result<[usize; 3]> {
        self.value(var).dims3()
    }

    pub fn conv1d(&mut self, input: Var, weight: Var, spec: Conv1dSpec) -> Result<Var> {
        let geom = ConvGeometry::new(self.dims3(input)?, self.value(weight).shape(), spec)?;
        let out = geom.forward(self.value(input).data(), self.value(weight).data());
        self.push(geom.output_shape().to_vec(), out, Op::Conv { input, weight, geom }, "conv1d")
    }

    /// Convolution along time; `weight` is `(C_out, C_in, 1, k)`.
    pub fn conv1d_time(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv1d(input, weight, Conv1dSpec { axis: Axis::Time, stride, padding, groups: 1 })
    }

    /// Convolution along frequency; `weight` is `(C_out, C_in, k, 1)`.
    pub fn conv1d_freq(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv1d(input, weight, Conv1dSpec { axis: Axis::Freq, stride, padding, groups: 1 })
    }

    /// Channel mixing with a `(C_out, C_in)` weight.
    pub fn pointwise_conv(&mut self, input: Var, weight: Var) -> Result<Var> {
        let [c_in, f, t] = self.dims3(input)?;
        let (c_out, w_in) = match self.value(weight).shape() {
            &[a, b] => (a, b),
            other => return Err(Error::Shape(format!("pointwise weight must be 2D, got {other:?}"))),
        };
        if w_in != c_in {
            return Err(Error::Shape(format!(
                "pointwise weight expects {w_in} channels, input has {c_in}"
            )));
        }
        let positions = f * t;
        let out = kernels::pointwise_forward(self.value(input).data(), self.value(weight).data(), c_in, c_out, positions);
        self.push(
            vec![c_out, f, t],
            out,
            Op::Pointwise { input, weight, c_in, c_out, positions },
            "pointwise_conv",
        )
    }

    pub fn max_pool2d(&mut self, input: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let geom = PoolGeometry::new(self.dims3(input)?, window, stride)?;
        let (out, argmax) = geom.forward(self.value(input).data());
        self.push(geom.output_shape().to_vec(), out, Op::MaxPool { input, argmax }, "max_pool2d")
    }

    /// `lambda * x + frequency-wise instance norm of x`; `lambda` is a scalar leaf.
    pub fn residual_norm(&mut self, input: Var, lambda: Var) -> Result<Var> {
        let shape = self.dims3(input)?;
        let lam = match self.value(lambda).data() {
            [v] => *v,
            _ => return Err(Error::Shape("residual_norm lambda must be a scalar".into())),
        };
        let (out, cache) = kernels::resnorm_forward(self.value(input).data(), shape, lam);
        self.push(shape.to_vec(), out, Op::ResNorm { input, lambda, cache }, "residual_norm")
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let d = self.value(input).numel();
        let (k, wd) = match self.value(weight).shape() {
            &[a, b] => (a, b),
            other => return Err(Error::Shape(format!("linear weight must be 2D, got {other:?}"))),
        };
        if wd != d || self.value(bias).numel() != k {
            return Err(Error::Shape(format!(
                "linear ({k}, {wd}) with bias {} applied to input of length {d}",
                self.value(bias).numel()
            )));
        }
        let out = kernels::linear_forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        self.push(vec![k], out, Op::Linear { input, weight, bias }, "linear")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        let out = kernels::relu_forward(self.value(input).data());
        self.push(shape, out, Op::Relu { input }, "relu")
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", a.shape(), b.shape())));
        }
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let shape = a.shape().to_vec();
        self.push(shape, out, Op::Add { lhs, rhs }, "add")
    }

    /// Channels `offset..offset + count` of a `(C, F, T)` tensor.
    pub fn slice_channels(&mut self, input: Var, offset: usize, count: usize) -> Result<Var> {
        let [c, f, t] = self.dims3(input)?;
        if offset + count > c || count == 0 {
            return Err(Error::Shape(format!("channel slice {offset}+{count} of {c}")));
        }
        let plane = f * t;
        let out = self.value(input).data()[offset * plane..(offset + count) * plane].to_vec();
        self.push(vec![count, f, t], out, Op::SliceChannels { input, offset }, "slice_channels")
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [_, f, t] = self.dims3(first)?;
        let mut c_total = 0;
        let mut out = Vec::new();
        for &p in parts {
            let [c, pf, pt] = self.dims3(p)?;
            if (pf, pt) != (f, t) {
                return Err(Error::Shape(format!("concat ({f}, {t}) with ({pf}, {pt})")));
            }
            c_total += c;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(vec![c_total, f, t], out, Op::ConcatChannels { parts: parts.to_vec() }, "concat_channels")
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.dims3(input)?;
        let out = kernels::global_avg_pool(self.value(input).data(), shape);
        self.push(vec![shape[0]], out, Op::GlobalAvgPool { input, plane: shape[1] * shape[2] }, "global_avg_pool")
    }

    /// Back-propagates `seed = dL/d output` and stores gradients on every
    /// `requires_grad` leaf reachable from `output`.
    pub fn backward(&mut self, output: Var, seed: &[f64]) -> Result<()> {
        if seed.len() != self.value(output).numel() {
            return Err(Error::Shape(format!(
                "seed of length {} for output of {} elements",
                seed.len(),
                self.value(output).numel()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let leaf = &mut self.nodes[idx].value;
                if leaf.requires_grad() {
                    match leaf.take_grad() {
                        Some(mut prev) => {
                            prev.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                            leaf.set_grad(prev)?;
                        }
                        None => leaf.set_grad(g)?,
                    }
                }
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { input, weight, geom } => {
                    let (gi, gw) = geom.backward(self.value(*input).data(), self.value(*weight).data(), &g);
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *weight, gw);
                }
                Op::Pointwise { input, weight, c_in, c_out, positions } => {
                    let (gi, gw) = kernels::pointwise_backward(
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        &g,
                        *c_in,
                        *c_out,
                        *positions,
                    );
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *weight, gw);
                }
                Op::MaxPool { input, argmax } => {
                    let mut gi = vec![0.0; self.value(*input).numel()];
                    for (&src, gv) in argmax.iter().zip(&g) {
                        gi[src] += gv;
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::ResNorm { input, lambda, cache } => {
                    let x = self.value(*input);
                    let lam = self.value(*lambda).data()[0];
                    let (gi, gl) = kernels::resnorm_backward(x.data(), x.dims3()?, lam, cache, &g);
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *lambda, vec![gl]);
                }
                Op::Linear { input, weight, bias } => {
                    let x = self.value(*input).data();
                    let w = self.value(*weight).data();
                    let d = x.len();
                    let mut gi = vec![0.0; d];
                    let mut gw = vec![0.0; w.len()];
                    for (k, gk) in g.iter().enumerate() {
                        let row = &w[k * d..(k + 1) * d];
                        for i in 0..d {
                            gi[i] += gk * row[i];
                            gw[k * d + i] = gk * x[i];
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, g);
                }
                Op::Relu { input } => {
                    let x = self.value(*input).data();
                    let gi = x.iter().zip(&g).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::Add { lhs, rhs } => {
                    let (lhs, rhs) = (*lhs, *rhs);
                    accumulate(&mut grads, lhs, g.clone());
                    accumulate(&mut grads, rhs, g);
                }
                Op::SliceChannels { input, offset } => {
                    let src = self.value(*input);
                    let plane = src.shape()[1] * src.shape()[2];
                    let mut gi = vec![0.0; src.numel()];
                    gi[offset * plane..offset * plane + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::ConcatChannels { parts } => {
                    let mut start = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let n = self.value(p).numel();
                        accumulate(&mut grads, p, g[start..start + n].to_vec());
                        start += n;
                    }
                }
                Op::GlobalAvgPool { input, plane } => {
                    let scale = 1.0 / *plane as f64;
                    let mut gi = Vec::with_capacity(g.len() * plane);
                    for gv in &g {
                        gi.extend(std::iter::repeat_n(gv * scale, *plane));
                    }
                    accumulate(&mut grads, *input, gi);
                }
            }
        }
        for node in &self.nodes[..=output.0] {
            if let Some(gr) = node.value.grad() {
                if !gr.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("backward".into()));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, g: Vec<f64>) {
    match &mut grads[var.0] {
        Some(prev) => prev.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
