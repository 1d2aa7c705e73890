//! Recorded computation tape with reverse-mode gradient evaluation.
//!
//! Every op appends a node holding the forward value and enough structure to
//! replay the chain rule in reverse. Construction order is the topological
//! order: an op's inputs always precede it on the tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{broadcast_shape, broadcast_strides, lane_dims, strides_of, Tensor};
use crate::error::{Error, Result};

/// Variance stabilizer added inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`ValueGraph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId },
    AddScalar { a: NodeId },
    MulScalar { a: NodeId, s: f64 },
    Neg { a: NodeId },
    Relu { a: NodeId },
    Tanh { a: NodeId },
    Exp { a: NodeId },
    Log { a: NodeId },
    Softplus { a: NodeId },
    Softmax { a: NodeId, axis: usize },
    LogSoftmax { a: NodeId, axis: usize },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    SumAll { a: NodeId },
    SumAxis { a: NodeId, axis: usize },
    MeanAxis { a: NodeId, axis: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize },
    Permute { a: NodeId, perm: Vec<usize> },
    Reshape { a: NodeId },
    BroadcastTo { a: NodeId },
    Dropout { a: NodeId, mask: Vec<f64> },
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, stride: usize, pad: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations over tensors.
#[derive(Debug, Default)]
pub struct ValueGraph {
    nodes: Vec<Node>,
}

impl ValueGraph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts an input tensor on the tape.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Inserts a tensor that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push(value, op, requires)
    }

    // ---- elementwise binary ops (broadcasting) ----

    fn binary(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shape(op_name, va.shape(), vb.shape())?;
        let data = if va.shape() == vb.shape() {
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let sa = broadcast_strides(va.shape(), &out_shape);
            let sb = broadcast_strides(vb.shape(), &out_shape);
            let numel: usize = out_shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut coords = vec![0usize; out_shape.len()];
            let (da, db) = (va.data(), vb.data());
            let (mut oa, mut ob) = (0usize, 0usize);
            for _ in 0..numel {
                data.push(f(da[oa], db[ob]));
                // odometer increment
                for d in (0..out_shape.len()).rev() {
                    coords[d] += 1;
                    oa += sa[d];
                    ob += sb[d];
                    if coords[d] < out_shape[d] {
                        break;
                    }
                    coords[d] = 0;
                    oa -= sa[d] * out_shape[d];
                    ob -= sb[d] * out_shape[d];
                }
            }
            data
        };
        let value = Tensor::from_vec(out_shape, data)?;
        Ok(self.push_op(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div { a, b })
    }

    // ---- matmul ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(va.data(), vb.data(), m, k, n);
        let value = Tensor::from_vec(vec![m, n], data)?;
        Ok(self.push_op(value, Op::MatMul { a, b }, &[a, b]))
    }

    // ---- scalar and unary ops ----

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.map_unary(a, |x| x + s);
        self.push_op(value, Op::AddScalar { a }, &[a])
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.map_unary(a, |x| x * s);
        self.push_op(value, Op::MulScalar { a, s }, &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, |x| -x);
        self.push_op(value, Op::Neg { a }, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, |x| x.max(0.0));
        self.push_op(value, Op::Relu { a }, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, f64::tanh);
        self.push_op(value, Op::Tanh { a }, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, f64::exp);
        self.push_op(value, Op::Exp { a }, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, f64::ln);
        self.push_op(value, Op::Log { a }, &[a])
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, softplus);
        self.push_op(value, Op::Softplus { a }, &[a])
    }

    fn map_unary(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let va = &self.nodes[a.0].value;
        Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().map(|&x| f(x)).collect(),
        }
    }

    // ---- normalizers ----

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        self.check_axis("softmax", va.shape(), axis)?;
        if !va.is_finite() {
            return Err(Error::Numeric(
                "softmax input contains non-finite values".into(),
            ));
        }
        let shape = va.shape().to_vec();
        let mut data = va.data().to_vec();
        let (outer, extent, inner) = lane_dims(&shape, axis);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..extent {
                    max = max.max(data[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..extent {
                    let e = (data[base + j * inner] - max).exp();
                    data[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..extent {
                    data[base + j * inner] /= sum;
                }
            }
        }
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push_op(value, Op::Softmax { a, axis }, &[a]))
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        self.check_axis("log_softmax", va.shape(), axis)?;
        if !va.is_finite() {
            return Err(Error::Numeric(
                "log_softmax input contains non-finite values".into(),
            ));
        }
        let shape = va.shape().to_vec();
        let mut data = va.data().to_vec();
        let (outer, extent, inner) = lane_dims(&shape, axis);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..extent {
                    max = max.max(data[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..extent {
                    sum += (data[base + j * inner] - max).exp();
                }
                let lse = max + sum.ln();
                for j in 0..extent {
                    data[base + j * inner] -= lse;
                }
            }
        }
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push_op(value, Op::LogSoftmax { a, axis }, &[a]))
    }

    /// Normalizes the trailing axis to zero mean / unit variance, then applies
    /// the affine map `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        let d = *vx.shape().last().ok_or(Error::Contract(
            "layer_norm requires rank >= 1".into(),
        ))?;
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let s = self.nodes[id.0].value.shape();
            if s != [d] {
                return Err(Error::ShapeMismatch {
                    op: if name == "gain" {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    lhs: self.nodes[x.0].value.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let vx = &self.nodes[x.0].value;
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let shape = vx.shape().to_vec();
        let rows = vx.numel() / d;
        let mut data = vec![0.0; vx.numel()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                data[r * d + j] = (row[j] - mean) * istd * g[j] + b[j];
            }
        }
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push_op(value, Op::LayerNorm { x, gain, bias }, &[x, gain, bias]))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::SumAll { a }, &[a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.numel() as f64;
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce_axis(a, axis, true)
    }

    fn reduce_axis(&mut self, a: NodeId, axis: usize, mean: bool) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        self.check_axis("sum_axis", va.shape(), axis)?;
        let shape = va.shape().to_vec();
        let (outer, extent, inner) = lane_dims(&shape, axis);
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, &e)| e)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let scale = if mean { 1.0 / extent as f64 } else { 1.0 };
        let mut data = vec![0.0; outer * inner];
        let src = self.nodes[a.0].value.data();
        for o in 0..outer {
            for j in 0..extent {
                let base = o * extent * inner + j * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    dst[i] += src[base + i];
                }
            }
        }
        if mean {
            for v in &mut data {
                *v *= scale;
            }
        }
        let value = Tensor::from_vec(out_shape, data)?;
        let op = if mean {
            Op::MeanAxis { a, axis }
        } else {
            Op::SumAxis { a, axis }
        };
        Ok(self.push_op(value, op, &[a]))
    }

    // ---- structural ops ----

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Contract("concat requires at least one input".into()));
        }
        let first = self.nodes[inputs[0].0].value.shape().to_vec();
        self.check_axis("concat", &first, axis)?;
        let mut total = 0usize;
        for &id in inputs {
            let s = self.nodes[id.0].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &e)| d != axis && e != first[d])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = lane_dims(&out_shape, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut written = 0usize;
        for &id in inputs {
            let v = &self.nodes[id.0].value;
            let extent = v.shape()[axis];
            for o in 0..outer {
                let src = &v.data()[o * extent * inner..(o + 1) * extent * inner];
                let dst_base = o * total * inner + written * inner;
                data[dst_base..dst_base + extent * inner].copy_from_slice(src);
            }
            written += extent;
        }
        let value = Tensor::from_vec(out_shape, data)?;
        Ok(self.push_op(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let shape = va.shape().to_vec();
        self.check_axis("slice", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Contract(format!(
                "slice range {start}..{} out of bounds for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, extent, inner) = lane_dims(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        let src = self.nodes[a.0].value.data();
        for o in 0..outer {
            let src_base = o * extent * inner + start * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let value = Tensor::from_vec(out_shape, data)?;
        Ok(self.push_op(value, Op::Slice { a, axis, start }, &[a]))
    }

    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let shape = va.shape().to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Contract(format!(
                "invalid permutation {perm:?} for rank {rank}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides_of(&shape);
        let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let numel = va.numel();
        let mut data = Vec::with_capacity(numel);
        let mut coords = vec![0usize; rank];
        let mut off = 0usize;
        let src = va.data();
        for _ in 0..numel {
            data.push(src[off]);
            for d in (0..rank).rev() {
                coords[d] += 1;
                off += step[d];
                if coords[d] < out_shape[d] {
                    break;
                }
                coords[d] = 0;
                off -= step[d] * out_shape[d];
            }
        }
        let value = Tensor::from_vec(out_shape, data)?;
        Ok(self.push_op(
            value,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != va.numel() {
            return Err(Error::Contract(format!(
                "reshape from {:?} to {:?} changes element count",
                va.shape(),
                shape
            )));
        }
        let value = Tensor::from_vec(shape.to_vec(), va.data().to_vec())?;
        Ok(self.push_op(value, Op::Reshape { a }, &[a]))
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let joint = broadcast_shape("broadcast_to", va.shape(), shape)?;
        if joint != shape {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                lhs: va.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let strides = broadcast_strides(va.shape(), shape);
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut coords = vec![0usize; shape.len()];
        let mut off = 0usize;
        let src = va.data();
        for _ in 0..numel {
            data.push(src[off]);
            for d in (0..shape.len()).rev() {
                coords[d] += 1;
                off += strides[d];
                if coords[d] < shape[d] {
                    break;
                }
                coords[d] = 0;
                off -= strides[d] * shape[d];
            }
        }
        let value = Tensor::from_vec(shape.to_vec(), data)?;
        Ok(self.push_op(value, Op::BroadcastTo { a }, &[a]))
    }

    /// Inverted dropout: at train time zeroes each element with probability
    /// `rate` and scales survivors by `1/(1-rate)`; identity at eval.
    pub fn dropout(
        &mut self,
        a: NodeId,
        rate: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let va = &self.nodes[a.0].value;
        let mask: Vec<f64> = (0..va.numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<f64> = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::from_vec(va.shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::Dropout { a, mask }, &[a]))
    }

    /// 2-D convolution over an input of shape (C, H, W) with a weight of
    /// shape (O, C, kh, kw) and bias of shape (O).
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let vi = self.nodes[input.0].value.shape().to_vec();
        let vw = self.nodes[weight.0].value.shape().to_vec();
        let vb = self.nodes[bias.0].value.shape().to_vec();
        if vi.len() != 3 || vw.len() != 4 || vi[0] != vw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: vi,
                rhs: vw,
            });
        }
        if vb != [vw[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vw,
                rhs: vb,
            });
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (c_in, h, w) = (vi[0], vi[1], vi[2]);
        let (c_out, kh, kw) = (vw[0], vw[2], vw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Config(format!(
                "conv2d kernel ({kh}, {kw}) larger than padded input ({}, {})",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let xin = self.nodes[input.0].value.data();
        let wt = self.nodes[weight.0].value.data();
        let bs = self.nodes[bias.0].value.data();
        let mut data = vec![0.0; c_out * ho * wo];
        for o in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bs[o];
                    for c in 0..c_in {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += xin[(c * h + iy as usize) * w + ix as usize]
                                    * wt[((o * c_in + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    data[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        let value = Tensor::from_vec(vec![c_out, ho, wo], data)?;
        Ok(self.push_op(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            &[input, weight, bias],
        ))
    }

    fn check_axis(&self, op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op,
                axis,
                shape: shape.to_vec(),
            });
        }
        Ok(())
    }

    // ---- backward ----

    /// Reverse-mode gradients of a scalar loss with respect to `params`.
    /// Parameters the loss does not depend on receive zero gradients.
    pub fn gradients(&self, loss: NodeId, params: &[NodeId]) -> Result<Vec<Tensor>> {
        let grads = self.backward(loss)?;
        Ok(params
            .iter()
            .map(|&p| {
                let shape = self.nodes[p.0].value.shape().to_vec();
                match &grads[p.0] {
                    Some(g) => Tensor::from_vec(shape, g.clone()).expect("grad shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }

    /// Runs the reverse pass and returns the per-node gradient buffers.
    fn backward(&self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "gradients require a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.step_backward(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Like `accumulate` but with the delta produced in-place to avoid a copy.
    fn accumulate_owned(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta),
        }
    }

    fn step_backward(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out_shape = self.nodes[i].value.shape();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.backprop_broadcast(grads, *a, out_shape, g, |_, _| 1.0, *a, *b);
                self.backprop_broadcast(grads, *b, out_shape, g, |_, _| 1.0, *a, *b);
            }
            Op::Sub { a, b } => {
                self.backprop_broadcast(grads, *a, out_shape, g, |_, _| 1.0, *a, *b);
                self.backprop_broadcast(grads, *b, out_shape, g, |_, _| -1.0, *a, *b);
            }
            Op::Mul { a, b } => {
                self.backprop_broadcast(grads, *a, out_shape, g, |_, vb| vb, *a, *b);
                self.backprop_broadcast(grads, *b, out_shape, g, |va, _| va, *a, *b);
            }
            Op::Div { a, b } => {
                self.backprop_broadcast(grads, *a, out_shape, g, |_, vb| 1.0 / vb, *a, *b);
                self.backprop_broadcast(grads, *b, out_shape, g, |va, vb| -va / (vb * vb), *a, *b);
            }
            Op::MatMul { a, b } => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.nodes[a.0].requires_grad {
                    // dA[i,p] = dot(G[i,:], B[p,:])
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        let darow = &mut da[r * k..(r + 1) * k];
                        for p in 0..k {
                            let brow = &vb.data()[p * n..(p + 1) * n];
                            darow[p] = dot(grow, brow);
                        }
                    }
                    self.accumulate_owned(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB[p,:] += A[i,p] * G[i,:]
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        let arow = &va.data()[r * k..(r + 1) * k];
                        for p in 0..k {
                            let ap = arow[p];
                            if ap == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                dbrow[j] += ap * grow[j];
                            }
                        }
                    }
                    self.accumulate_owned(grads, *b, db);
                }
            }
            Op::AddScalar { a } => self.accumulate(grads, *a, g),
            Op::MulScalar { a, s } => {
                let d: Vec<f64> = g.iter().map(|&x| x * s).collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Neg { a } => {
                let d: Vec<f64> = g.iter().map(|&x| -x).collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Relu { a } => {
                let va = self.nodes[a.0].value.data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(va)
                    .map(|(&x, &v)| if v > 0.0 { x } else { 0.0 })
                    .collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Tanh { a } => {
                let y = self.nodes[i].value.data();
                let d: Vec<f64> = g.iter().zip(y).map(|(&x, &t)| x * (1.0 - t * t)).collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Exp { a } => {
                let y = self.nodes[i].value.data();
                let d: Vec<f64> = g.iter().zip(y).map(|(&x, &e)| x * e).collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Log { a } => {
                let va = self.nodes[a.0].value.data();
                let d: Vec<f64> = g.iter().zip(va).map(|(&x, &v)| x / v).collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Softplus { a } => {
                let va = self.nodes[a.0].value.data();
                let d: Vec<f64> = g.iter().zip(va).map(|(&x, &v)| x * sigmoid(v)).collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Softmax { a, axis } => {
                let y = self.nodes[i].value.data();
                let (outer, extent, inner) = lane_dims(out_shape, *axis);
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let base = o * extent * inner + ii;
                        let mut dotgy = 0.0;
                        for j in 0..extent {
                            let idx = base + j * inner;
                            dotgy += g[idx] * y[idx];
                        }
                        for j in 0..extent {
                            let idx = base + j * inner;
                            d[idx] = y[idx] * (g[idx] - dotgy);
                        }
                    }
                }
                self.accumulate_owned(grads, *a, d);
            }
            Op::LogSoftmax { a, axis } => {
                let y = self.nodes[i].value.data();
                let (outer, extent, inner) = lane_dims(out_shape, *axis);
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let base = o * extent * inner + ii;
                        let mut gsum = 0.0;
                        for j in 0..extent {
                            gsum += g[base + j * inner];
                        }
                        for j in 0..extent {
                            let idx = base + j * inner;
                            d[idx] = g[idx] - y[idx].exp() * gsum;
                        }
                    }
                }
                self.accumulate_owned(grads, *a, d);
            }
            Op::LayerNorm { x, gain, bias } => {
                let vx = &self.nodes[x.0].value;
                let d = *vx.shape().last().unwrap();
                let rows = vx.numel() / d;
                let gv = self.nodes[gain.0].value.data();
                let mut dx = vec![0.0; vx.numel()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let row = &vx.data()[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let mut m1 = 0.0; // mean of gain * grad
                    let mut m2 = 0.0; // mean of gain * grad * xhat
                    for j in 0..d {
                        let xh = (row[j] - mean) * istd;
                        let gg = gv[j] * grow[j];
                        m1 += gg;
                        m2 += gg * xh;
                        dgain[j] += grow[j] * xh;
                        dbias[j] += grow[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        let xh = (row[j] - mean) * istd;
                        dx[r * d + j] = istd * (gv[j] * grow[j] - m1 - xh * m2);
                    }
                }
                self.accumulate_owned(grads, *x, dx);
                self.accumulate_owned(grads, *gain, dgain);
                self.accumulate_owned(grads, *bias, dbias);
            }
            Op::SumAll { a } => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate_owned(grads, *a, vec![g[0]; n]);
            }
            Op::SumAxis { a, axis } | Op::MeanAxis { a, axis } => {
                let shape = self.nodes[a.0].value.shape();
                let (outer, extent, inner) = lane_dims(shape, *axis);
                let scale = match &self.nodes[i].op {
                    Op::MeanAxis { .. } => 1.0 / extent as f64,
                    _ => 1.0,
                };
                let mut d = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    for j in 0..extent {
                        let base = o * extent * inner + j * inner;
                        for ii in 0..inner {
                            d[base + ii] = g[o * inner + ii] * scale;
                        }
                    }
                }
                self.accumulate_owned(grads, *a, d);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = lane_dims(out_shape, *axis);
                let mut written = 0usize;
                for &id in inputs {
                    let extent = self.nodes[id.0].value.shape()[*axis];
                    if self.nodes[id.0].requires_grad {
                        let mut d = vec![0.0; outer * extent * inner];
                        for o in 0..outer {
                            let src_base = o * total * inner + written * inner;
                            d[o * extent * inner..(o + 1) * extent * inner]
                                .copy_from_slice(&g[src_base..src_base + extent * inner]);
                        }
                        self.accumulate_owned(grads, id, d);
                    }
                    written += extent;
                }
            }
            Op::Slice { a, axis, start } => {
                let shape = self.nodes[a.0].value.shape();
                let (outer, extent, inner) = lane_dims(shape, *axis);
                let len = out_shape[*axis];
                let mut d = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let dst_base = o * extent * inner + start * inner;
                    d[dst_base..dst_base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate_owned(grads, *a, d);
            }
            Op::Permute { a, perm } => {
                let in_shape = self.nodes[a.0].value.shape();
                let in_strides = strides_of(in_shape);
                let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let rank = in_shape.len();
                let mut d = vec![0.0; self.nodes[a.0].value.numel()];
                let mut coords = vec![0usize; rank];
                let mut off = 0usize;
                for &gv in g {
                    d[off] += gv;
                    for dim in (0..rank).rev() {
                        coords[dim] += 1;
                        off += step[dim];
                        if coords[dim] < out_shape[dim] {
                            break;
                        }
                        coords[dim] = 0;
                        off -= step[dim] * out_shape[dim];
                    }
                }
                self.accumulate_owned(grads, *a, d);
            }
            Op::Reshape { a } => self.accumulate(grads, *a, g),
            Op::BroadcastTo { a } => {
                let in_shape = self.nodes[a.0].value.shape();
                let strides = broadcast_strides(in_shape, out_shape);
                let rank = out_shape.len();
                let mut d = vec![0.0; self.nodes[a.0].value.numel()];
                let mut coords = vec![0usize; rank];
                let mut off = 0usize;
                for &gv in g {
                    d[off] += gv;
                    for dim in (0..rank).rev() {
                        coords[dim] += 1;
                        off += strides[dim];
                        if coords[dim] < out_shape[dim] {
                            break;
                        }
                        coords[dim] = 0;
                        off -= strides[dim] * out_shape[dim];
                    }
                }
                self.accumulate_owned(grads, *a, d);
            }
            Op::Dropout { a, mask } => {
                let d: Vec<f64> = g.iter().zip(mask).map(|(&x, &m)| x * m).collect();
                self.accumulate_owned(grads, *a, d);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let vi = self.nodes[input.0].value.shape();
                let vw = self.nodes[weight.0].value.shape();
                let (c_in, h, w) = (vi[0], vi[1], vi[2]);
                let (c_out, kh, kw) = (vw[0], vw[2], vw[3]);
                let (ho, wo) = (out_shape[1], out_shape[2]);
                let xin = self.nodes[input.0].value.data();
                let wt = self.nodes[weight.0].value.data();
                let want_in = self.nodes[input.0].requires_grad;
                let want_w = self.nodes[weight.0].requires_grad;
                let want_b = self.nodes[bias.0].requires_grad;
                let mut din = vec![0.0; c_in * h * w];
                let mut dw = vec![0.0; c_out * c_in * kh * kw];
                let mut db = vec![0.0; c_out];
                for o in 0..c_out {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = g[(o * ho + oy) * wo + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            db[o] += gv;
                            for c in 0..c_in {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - *pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let in_idx = (c * h + iy as usize) * w + ix as usize;
                                        let w_idx = ((o * c_in + c) * kh + ky) * kw + kx;
                                        if want_w {
                                            dw[w_idx] += gv * xin[in_idx];
                                        }
                                        if want_in {
                                            din[in_idx] += gv * wt[w_idx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if want_in {
                    self.accumulate_owned(grads, *input, din);
                }
                if want_w {
                    self.accumulate_owned(grads, *weight, dw);
                }
                if want_b {
                    self.accumulate_owned(grads, *bias, db);
                }
            }
        }
    }

    /// Backprop helper for broadcasting binary ops: the local derivative is a
    /// function of the two (broadcast) operand values.
    #[allow(clippy::too_many_arguments)]
    fn backprop_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: NodeId,
        out_shape: &[usize],
        g: &[f64],
        local: impl Fn(f64, f64) -> f64,
        a: NodeId,
        b: NodeId,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let vt = &self.nodes[target.0].value;
        if va.shape() == vb.shape() {
            let d: Vec<f64> = g
                .iter()
                .zip(va.data().iter().zip(vb.data()))
                .map(|(&gv, (&x, &y))| gv * local(x, y))
                .collect();
            self.accumulate_owned(grads, target, d);
            return;
        }
        let sa = broadcast_strides(va.shape(), out_shape);
        let sb = broadcast_strides(vb.shape(), out_shape);
        let st = broadcast_strides(vt.shape(), out_shape);
        let rank = out_shape.len();
        let mut d = vec![0.0; vt.numel()];
        let mut coords = vec![0usize; rank];
        let (mut oa, mut ob, mut ot) = (0usize, 0usize, 0usize);
        let (da, dbv) = (va.data(), vb.data());
        for &gv in g {
            d[ot] += gv * local(da[oa], dbv[ob]);
            for dim in (0..rank).rev() {
                coords[dim] += 1;
                oa += sa[dim];
                ob += sb[dim];
                ot += st[dim];
                if coords[dim] < out_shape[dim] {
                    break;
                }
                coords[dim] = 0;
                oa -= sa[dim] * out_shape[dim];
                ob -= sb[dim] * out_shape[dim];
                ot -= st[dim] * out_shape[dim];
            }
        }
        self.accumulate_owned(grads, target, d);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut g = ValueGraph::new();
        let eye = g.constant(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let prod = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(prod).data(), g.value(b).data());

        let zero = g.constant(Tensor::zeros(&[2, 2]));
        let prod = g.matmul(zero, b).unwrap();
        assert!(g.value(prod).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_expansion() {
        let mut g = ValueGraph::new();
        let a = g.constant(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t2(2, 1, &[5.0, 6.0]));
        let prod = g.matmul(a, b).unwrap();
        assert_eq!(g.value(prod).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = ValueGraph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 5]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn softmax_constant_slice_is_uniform() {
        let mut g = ValueGraph::new();
        let x = g.constant(Tensor::full(&[5], 3.7));
        let y = g.softmax(x, 0).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_hand_case() {
        let mut g = ValueGraph::new();
        let x = g.constant(Tensor::from_vec(vec![2], vec![0.0, 2.0f64.ln()]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let d = g.value(y).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_slices_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = ValueGraph::new();
        let x = g.constant(Tensor::from_fn(&[3, 4, 5], |_| rng.gen_range(-8.0..8.0)));
        for axis in 0..3 {
            let y = g.softmax(x, axis).unwrap();
            let v = g.value(y);
            let (outer, extent, inner) = lane_dims(v.shape(), axis);
            for o in 0..outer {
                for i in 0..inner {
                    let sum: f64 = (0..extent)
                        .map(|j| v.data()[o * extent * inner + j * inner + i])
                        .sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                    for j in 0..extent {
                        let p = v.data()[o * extent * inner + j * inner + i];
                        assert!((0.0..=1.0).contains(&p));
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut g = ValueGraph::new();
        let x = g.constant(Tensor::from_vec(vec![2], vec![f64::NAN, 0.0]).unwrap());
        assert!(matches!(g.softmax(x, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = ValueGraph::new();
        let gain = g.constant(Tensor::full(&[2], 1.0));
        let bias = g.constant(Tensor::zeros(&[2]));

        // constant row -> zero row (eps-stabilized)
        let x = g.constant(Tensor::full(&[1, 2], 4.2));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v.abs() < 1e-9));

        // [1, 3] -> [-1, 1] up to eps
        let x = g.constant(t2(1, 2, &[1.0, 3.0]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        let d = g.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-4 && (d[1] - 1.0).abs() < 1e-4);

        // affine identity: gain = sqrt(var + eps), bias = mean recovers input
        let x_vals = [2.0, -1.0, 0.5];
        let mean = x_vals.iter().sum::<f64>() / 3.0;
        let var = x_vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        let gain2 = g.constant(Tensor::full(&[3], (var + LAYER_NORM_EPS).sqrt()));
        let bias2 = g.constant(Tensor::full(&[3], mean));
        let x = g.constant(Tensor::from_vec(vec![1, 3], x_vals.to_vec()).unwrap());
        let y = g.layer_norm(x, gain2, bias2).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&x_vals) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_square() {
        let mut g = ValueGraph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).unwrap();
        let loss = g.sum_all(y);
        let grads = g.gradients(loss, &[x]).unwrap();
        assert!((grads[0].data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_unused_param_is_zero() {
        let mut g = ValueGraph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let p = g.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let loss = g.mul(x, x).unwrap();
        let grads = g.gradients(loss, &[p]).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = ValueGraph::new();
        let x = g.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        assert!(matches!(g.gradients(x, &[x]), Err(Error::Contract(_))));
    }

    #[test]
    fn dropout_deterministic_under_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut g = ValueGraph::new();
            let x = g.constant(Tensor::from_fn(&[4, 8], |i| i as f64));
            let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
            g.value(y).data().to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        // eval mode passes through unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = ValueGraph::new();
        let x = g.constant(Tensor::from_fn(&[4], |i| i as f64 + 1.0));
        let y = g.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut g = ValueGraph::new();
        let a = g.constant(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t2(2, 3, &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 5]);
        assert_eq!(
            g.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]
        );
        let back = g.slice(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(back).data(), g.value(b).data());
    }

    #[test]
    fn permute_transposes() {
        let mut g = ValueGraph::new();
        let a = g.constant(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let at = g.permute(a, &[1, 0]).unwrap();
        assert_eq!(g.shape(at), &[3, 2]);
        assert_eq!(g.value(at).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn broadcast_to_tiles() {
        let mut g = ValueGraph::new();
        let a = g.constant(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = g.broadcast_to(a, &[2, 3]).unwrap();
        assert_eq!(g.value(b).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }
}
