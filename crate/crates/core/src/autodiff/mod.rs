//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of nodes built define-by-run: every operation
//! appends a node whose parents have strictly smaller indices, so reverse
//! index order is a reverse topological order and [`Graph::backward`]
//! visits each node exactly once. Parameters live outside the graph as
//! plain [`Tensor`]s and are bound per forward pass via [`Graph::leaf`];
//! gradients accumulate across repeated backward calls until read.
//!
//! All math is in f64 so finite-difference checks can run at tight
//! tolerances.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;

#[cfg(test)]
mod tests;

pub use layers::{Layer, Stack};
pub use optim::AdamState;

use crate::error::{Result, SxlError};

/// BCE probabilities are clamped to this window before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// A plain numeric array with shape; the host-side value type for
/// parameters, inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SxlError::invalid(format!(
                "tensor shape {shape:?} wants {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Exp(NodeId),
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    BiasRows {
        a: NodeId,
        b: NodeId,
        rows: usize,
        cols: usize,
    },
    BiasChannels {
        a: NodeId,
        b: NodeId,
        c: usize,
        spatial: usize,
    },
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        dims: ConvDims,
    },
    Deconv2d {
        x: NodeId,
        w: NodeId,
        dims: ConvDims,
    },
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        c: usize,
        spatial: usize,
        // cached at forward time for the backward pass
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        c: usize,
        spatial: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    UpsampleNn {
        x: NodeId,
        factor: usize,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    PadChannels {
        x: NodeId,
        cin: usize,
        cout: usize,
        spatial: usize,
    },
    Reshape(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    Mse {
        pred: NodeId,
        target: NodeId,
    },
    L1 {
        pred: NodeId,
        target: NodeId,
    },
    Bce {
        p: NodeId,
        y: NodeId,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Define-by-run computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> NodeId {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            shape,
            value,
            grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    /// Copies a node's value into a fresh leaf; no gradient flows back.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let (shape, value) = {
            let n = &self.nodes[x.0];
            (n.shape.clone(), n.value.clone())
        };
        self.push(shape, value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(SxlError::invalid(format!(
                "{what}: shape {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x + c).collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::Exp(a))
    }

    /// [m,k] x [k,n] -> [m,n]
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SxlError::invalid(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut v = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let vrow = &mut v[i * n..(i + 1) * n];
                for (out, &bj) in vrow.iter_mut().zip(brow) {
                    *out += x * bj;
                }
            }
        }
        Ok(self.push(vec![m, n], v, Op::MatMul { a, b, m, k, n }))
    }

    /// Adds a length-F bias to every row of an [N,F] matrix.
    pub fn bias_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb != vec![sa[1]] {
            return Err(SxlError::invalid(format!(
                "bias_rows: {sa:?} with bias {sb:?}"
            )));
        }
        let (rows, cols) = (sa[0], sa[1]);
        let bv = self.nodes[b.0].value.clone();
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % cols])
            .collect();
        Ok(self.push(sa, v, Op::BiasRows { a, b, rows, cols }))
    }

    /// Adds a length-C bias to every (h,w) position of an [N,C,H,W] tensor.
    pub fn bias_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 4 || sb != vec![sa[1]] {
            return Err(SxlError::invalid(format!(
                "bias_channels: {sa:?} with bias {sb:?}"
            )));
        }
        let (c, spatial) = (sa[1], sa[2] * sa[3]);
        let bv = self.nodes[b.0].value.clone();
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[(i / spatial) % c])
            .collect();
        Ok(self.push(sa, v, Op::BiasChannels { a, b, c, spatial }))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.tanh()).collect();
        self.push(self.nodes[a.0].shape.clone(), v, Op::Tanh(a))
    }

    /// 2-d convolution: x [N,Cin,H,W], w [Cout,Cin,K,K].
    /// Output spatial size is floor((in + 2*pad - k)/stride) + 1.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let sx = self.nodes[x.0].shape.clone();
        let sw = self.nodes[w.0].shape.clone();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] {
            return Err(SxlError::invalid(format!(
                "conv2d: input {sx:?} with weight {sw:?}"
            )));
        }
        let (n, cin, h, wi) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sw[0], sw[2]);
        if h + 2 * pad < k || wi + 2 * pad < k {
            return Err(SxlError::invalid("conv2d: kernel larger than padded input"));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wi + 2 * pad - k) / stride + 1;
        let dims = ConvDims {
            n,
            cin,
            h,
            w: wi,
            cout,
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![0.0; n * cout * oh * ow];
        for b in 0..n {
            for co in 0..cout {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                let ih = (i * stride + ki) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for kj in 0..k {
                                    let iw = (j * stride + kj) as isize - pad as isize;
                                    if iw < 0 || iw >= wi as isize {
                                        continue;
                                    }
                                    acc += xv[((b * cin + ci) * h + ih as usize) * wi
                                        + iw as usize]
                                        * wv[((co * cin + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        out[((b * cout + co) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        Ok(self.push(vec![n, cout, oh, ow], out, Op::Conv2d { x, w, dims }))
    }

    /// Transposed 2-d convolution: x [N,Cin,H,W], w [Cin,Cout,K,K].
    /// Output spatial size is (in - 1)*stride - 2*pad + k.
    pub fn deconv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let sx = self.nodes[x.0].shape.clone();
        let sw = self.nodes[w.0].shape.clone();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] || sw[2] != sw[3] {
            return Err(SxlError::invalid(format!(
                "deconv2d: input {sx:?} with weight {sw:?}"
            )));
        }
        let (n, cin, h, wi) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sw[1], sw[2]);
        let oh = (h - 1) * stride + k;
        let ow = (wi - 1) * stride + k;
        if oh < 2 * pad || ow < 2 * pad {
            return Err(SxlError::invalid("deconv2d: padding exceeds output"));
        }
        let (oh, ow) = (oh - 2 * pad, ow - 2 * pad);
        let dims = ConvDims {
            n,
            cin,
            h,
            w: wi,
            cout,
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![0.0; n * cout * oh * ow];
        for b in 0..n {
            for ci in 0..cin {
                for i in 0..h {
                    for j in 0..wi {
                        let xval = xv[((b * cin + ci) * h + i) * wi + j];
                        if xval == 0.0 {
                            continue;
                        }
                        for co in 0..cout {
                            for ki in 0..k {
                                let o_i = (i * stride + ki) as isize - pad as isize;
                                if o_i < 0 || o_i >= oh as isize {
                                    continue;
                                }
                                for kj in 0..k {
                                    let o_j = (j * stride + kj) as isize - pad as isize;
                                    if o_j < 0 || o_j >= ow as isize {
                                        continue;
                                    }
                                    out[((b * cout + co) * oh + o_i as usize) * ow + o_j as usize] +=
                                        xval * wv[((ci * cout + co) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![n, cout, oh, ow], out, Op::Deconv2d { x, w, dims }))
    }

    /// Batch normalization with statistics taken from the current batch.
    /// Returns the output node plus the batch mean/var (biased) per channel
    /// so the caller can maintain running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let (c, spatial) = self.bn_dims(x, gamma, beta)?;
        let xv = self.nodes[x.0].value.clone();
        let m = xv.len() / c; // elements per channel
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, &v) in xv.iter().enumerate() {
            mean[(i / spatial) % c] += v;
        }
        for mu in &mut mean {
            *mu /= m as f64;
        }
        for (i, &v) in xv.iter().enumerate() {
            let ch = (i / spatial) % c;
            var[ch] += (v - mean[ch]) * (v - mean[ch]);
        }
        for va in &mut var {
            *va /= m as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.nodes[gamma.0].value.clone();
        let bv = self.nodes[beta.0].value.clone();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, &v) in xv.iter().enumerate() {
            let ch = (i / spatial) % c;
            xhat[i] = (v - mean[ch]) * inv_std[ch];
            out[i] = gv[ch] * xhat[i] + bv[ch];
        }
        let id = self.push(
            self.nodes[x.0].shape.clone(),
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                c,
                spatial,
                xhat,
                inv_std,
            },
        );
        Ok((id, mean, var))
    }

    /// Batch normalization with frozen statistics: a deterministic affine map.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let (c, spatial) = self.bn_dims(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(SxlError::invalid("batch_norm_eval: stats length mismatch"));
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.nodes[gamma.0].value.clone();
        let bv = self.nodes[beta.0].value.clone();
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / spatial) % c;
                gv[ch] * (v - mean[ch]) * inv_std[ch] + bv[ch]
            })
            .collect();
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                c,
                spatial,
                mean: mean.to_vec(),
                inv_std,
            },
        ))
    }

    fn bn_dims(&self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(usize, usize)> {
        let sx = &self.nodes[x.0].shape;
        let (c, spatial) = match sx.len() {
            2 => (sx[1], 1),
            4 => (sx[1], sx[2] * sx[3]),
            _ => {
                return Err(SxlError::invalid(format!(
                    "batch_norm: expected [N,F] or [N,C,H,W], got {sx:?}"
                )))
            }
        };
        if self.nodes[gamma.0].shape != vec![c] || self.nodes[beta.0].shape != vec![c] {
            return Err(SxlError::invalid("batch_norm: gamma/beta length mismatch"));
        }
        Ok((c, spatial))
    }

    /// Nearest-neighbor upsampling of an [N,C,H,W] tensor.
    pub fn upsample_nn(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 4 || factor == 0 {
            return Err(SxlError::invalid("upsample_nn: need [N,C,H,W] and factor >= 1"));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h * factor, w * factor);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; n * c * oh * ow];
        for b in 0..n {
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        out[((b * c + ch) * oh + i) * ow + j] =
                            xv[((b * c + ch) * h + i / factor) * w + j / factor];
                    }
                }
            }
        }
        Ok(self.push(
            vec![n, c, oh, ow],
            out,
            Op::UpsampleNn {
                x,
                factor,
                n,
                c,
                h,
                w,
            },
        ))
    }

    /// Extends an [N,C,H,W] tensor to `cout` channels, zero-filling the
    /// channels beyond the existing ones.
    pub fn pad_channels(&mut self, x: NodeId, cout: usize) -> Result<NodeId> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 4 || cout < sx[1] {
            return Err(SxlError::invalid(format!(
                "pad_channels: need [N,C,H,W] with C <= {cout}, got {sx:?}"
            )));
        }
        let (n, cin, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let spatial = h * w;
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; n * cout * spatial];
        for b in 0..n {
            for c in 0..cin {
                let src = (b * cin + c) * spatial;
                let dst = (b * cout + c) * spatial;
                out[dst..dst + spatial].copy_from_slice(&xv[src..src + spatial]);
            }
        }
        Ok(self.push(
            vec![n, cout, h, w],
            out,
            Op::PadChannels {
                x,
                cin,
                cout,
                spatial,
            },
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].value.len() {
            return Err(SxlError::invalid(format!(
                "reshape: {:?} -> {shape:?}",
                self.nodes[x.0].shape
            )));
        }
        let v = self.nodes[x.0].value.clone();
        Ok(self.push(shape, v, Op::Reshape(x)))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.iter().sum::<f64>() / self.nodes[x.0].value.len() as f64;
        self.push(vec![1], vec![v], Op::MeanAll(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.iter().sum::<f64>();
        self.push(vec![1], vec![v], Op::SumAll(x))
    }

    /// Mean squared error, reduced over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape(pred, target, "mse")?;
        let n = self.nodes[pred.0].value.len() as f64;
        let v = self.nodes[pred.0]
            .value
            .iter()
            .zip(&self.nodes[target.0].value)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(vec![1], vec![v], Op::Mse { pred, target }))
    }

    /// Mean absolute error with the usual subgradient convention at 0.
    pub fn l1(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape(pred, target, "l1")?;
        let n = self.nodes[pred.0].value.len() as f64;
        let v = self.nodes[pred.0]
            .value
            .iter()
            .zip(&self.nodes[target.0].value)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / n;
        Ok(self.push(vec![1], vec![v], Op::L1 { pred, target }))
    }

    /// Binary cross entropy, mean-reduced, with probabilities clamped to
    /// [BCE_CLAMP, 1 - BCE_CLAMP] before the log.
    pub fn bce(&mut self, p: NodeId, y: NodeId) -> Result<NodeId> {
        self.same_shape(p, y, "bce")?;
        let n = self.nodes[p.0].value.len() as f64;
        let v = self.nodes[p.0]
            .value
            .iter()
            .zip(&self.nodes[y.0].value)
            .map(|(&p, &y)| {
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        Ok(self.push(vec![1], vec![v], Op::Bce { p, y }))
    }

    /// BCE against a constant label broadcast over the whole prediction.
    pub fn bce_const(&mut self, p: NodeId, label: f64) -> Result<NodeId> {
        let t = Tensor::new(
            self.nodes[p.0].shape.clone(),
            vec![label; self.nodes[p.0].value.len()],
        )?;
        let y = self.leaf(&t);
        self.bce(p, y)
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Reverse pass from a scalar output. Adjoints are computed fresh each
    /// call and added into the stored gradients, so calling backward twice
    /// without zeroing doubles every gradient.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.nodes[out.0].value.len() != 1 {
            return Err(SxlError::invalid(format!(
                "backward requires a scalar output, got shape {:?}",
                self.nodes[out.0].shape
            )));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[out.0][0] = 1.0;
        for idx in (0..=out.0).rev() {
            if adj[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            self.propagate(idx, &mut adj);
        }
        for (n, a) in self.nodes.iter_mut().zip(adj) {
            for (g, ai) in n.grad.iter_mut().zip(a) {
                *g += ai;
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, adj: &mut [Vec<f64>]) {
        // Parents always have smaller indices than idx (tape invariant), so
        // split_at_mut gives disjoint access to their adjoints.
        let (padj, rest) = adj.split_at_mut(idx);
        let g = &rest[0];
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (i, &gi) in g.iter().enumerate() {
                    padj[a.0][i] += gi;
                    padj[b.0][i] += gi;
                }
            }
            Op::Sub(a, b) => {
                for (i, &gi) in g.iter().enumerate() {
                    padj[a.0][i] += gi;
                    padj[b.0][i] -= gi;
                }
            }
            Op::Mul(a, b) => {
                let (ai, bi) = (a.0, b.0);
                for (i, &gi) in g.iter().enumerate() {
                    let av = self.nodes[ai].value[i];
                    let bv = self.nodes[bi].value[i];
                    padj[ai][i] += gi * bv;
                    padj[bi][i] += gi * av;
                }
            }
            Op::Scale(a, c) => {
                for (i, &gi) in g.iter().enumerate() {
                    padj[a.0][i] += gi * c;
                }
            }
            Op::AddScalar(a) => {
                for (i, &gi) in g.iter().enumerate() {
                    padj[a.0][i] += gi;
                }
            }
            Op::Exp(a) => {
                for (i, &gi) in g.iter().enumerate() {
                    padj[a.0][i] += gi * node.value[i];
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av: Vec<f64> = self.nodes[a.0].value.clone();
                let bv: Vec<f64> = self.nodes[b.0].value.clone();
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bv[p * n + j];
                        }
                        padj[a.0][i * k + p] += acc;
                    }
                }
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += av[i * k + p] * g[i * n + j];
                        }
                        padj[b.0][p * n + j] += acc;
                    }
                }
            }
            Op::BiasRows { a, b, rows, cols } => {
                for i in 0..*rows {
                    for j in 0..*cols {
                        let gi = g[i * cols + j];
                        padj[a.0][i * cols + j] += gi;
                        padj[b.0][j] += gi;
                    }
                }
            }
            Op::BiasChannels { a, b, c, spatial } => {
                for (i, &gi) in g.iter().enumerate() {
                    padj[a.0][i] += gi;
                    padj[b.0][(i / spatial) % c] += gi;
                }
            }
            Op::Relu(a) => {
                for (i, &gi) in g.iter().enumerate() {
                    if self.nodes[a.0].value[i] > 0.0 {
                        padj[a.0][i] += gi;
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                for (i, &gi) in g.iter().enumerate() {
                    let d = if self.nodes[a.0].value[i] > 0.0 { 1.0 } else { *slope };
                    padj[a.0][i] += gi * d;
                }
            }
            Op::Sigmoid(a) => {
                for (i, &gi) in g.iter().enumerate() {
                    let s = node.value[i];
                    padj[a.0][i] += gi * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                for (i, &gi) in g.iter().enumerate() {
                    let t = node.value[i];
                    padj[a.0][i] += gi * (1.0 - t * t);
                }
            }
            Op::Conv2d { x, w, dims } => {
                let d = *dims;
                let xv: Vec<f64> = self.nodes[x.0].value.clone();
                let wv: Vec<f64> = self.nodes[w.0].value.clone();
                for b in 0..d.n {
                    for co in 0..d.cout {
                        for i in 0..d.oh {
                            for j in 0..d.ow {
                                let go = g[((b * d.cout + co) * d.oh + i) * d.ow + j];
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..d.cin {
                                    for ki in 0..d.k {
                                        let ih = (i * d.stride + ki) as isize - d.pad as isize;
                                        if ih < 0 || ih >= d.h as isize {
                                            continue;
                                        }
                                        for kj in 0..d.k {
                                            let iw =
                                                (j * d.stride + kj) as isize - d.pad as isize;
                                            if iw < 0 || iw >= d.w as isize {
                                                continue;
                                            }
                                            let xi = ((b * d.cin + ci) * d.h + ih as usize)
                                                * d.w
                                                + iw as usize;
                                            let wi = ((co * d.cin + ci) * d.k + ki) * d.k + kj;
                                            padj[x.0][xi] += go * wv[wi];
                                            padj[w.0][wi] += go * xv[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Deconv2d { x, w, dims } => {
                let d = *dims;
                let xv: Vec<f64> = self.nodes[x.0].value.clone();
                let wv: Vec<f64> = self.nodes[w.0].value.clone();
                for b in 0..d.n {
                    for ci in 0..d.cin {
                        for i in 0..d.h {
                            for j in 0..d.w {
                                let xi = ((b * d.cin + ci) * d.h + i) * d.w + j;
                                for co in 0..d.cout {
                                    for ki in 0..d.k {
                                        let o_i = (i * d.stride + ki) as isize - d.pad as isize;
                                        if o_i < 0 || o_i >= d.oh as isize {
                                            continue;
                                        }
                                        for kj in 0..d.k {
                                            let o_j =
                                                (j * d.stride + kj) as isize - d.pad as isize;
                                            if o_j < 0 || o_j >= d.ow as isize {
                                                continue;
                                            }
                                            let oi = ((b * d.cout + co) * d.oh + o_i as usize)
                                                * d.ow
                                                + o_j as usize;
                                            let wi = ((ci * d.cout + co) * d.k + ki) * d.k + kj;
                                            padj[x.0][xi] += g[oi] * wv[wi];
                                            padj[w.0][wi] += g[oi] * xv[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                c,
                spatial,
                xhat,
                inv_std,
            } => {
                let (c, spatial) = (*c, *spatial);
                let m = g.len() / c;
                let gv: Vec<f64> = self.nodes[gamma.0].value.clone();
                // per-channel reductions
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (i, &gi) in g.iter().enumerate() {
                    let ch = (i / spatial) % c;
                    sum_g[ch] += gi;
                    sum_gx[ch] += gi * xhat[i];
                }
                for (i, &gi) in g.iter().enumerate() {
                    let ch = (i / spatial) % c;
                    padj[gamma.0][ch] += gi * xhat[i];
                    padj[beta.0][ch] += gi;
                    let dx = gv[ch] * inv_std[ch]
                        * (gi - sum_g[ch] / m as f64 - xhat[i] * sum_gx[ch] / m as f64);
                    padj[x.0][i] += dx;
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                c,
                spatial,
                mean,
                inv_std,
            } => {
                let (c, spatial) = (*c, *spatial);
                let gv: Vec<f64> = self.nodes[gamma.0].value.clone();
                let xv: Vec<f64> = self.nodes[x.0].value.clone();
                for (i, &gi) in g.iter().enumerate() {
                    let ch = (i / spatial) % c;
                    let xhat = (xv[i] - mean[ch]) * inv_std[ch];
                    padj[x.0][i] += gi * gv[ch] * inv_std[ch];
                    padj[gamma.0][ch] += gi * xhat;
                    padj[beta.0][ch] += gi;
                }
            }
            Op::UpsampleNn {
                x,
                factor,
                n,
                c,
                h,
                w,
            } => {
                let (factor, n, c, h, w) = (*factor, *n, *c, *h, *w);
                let (oh, ow) = (h * factor, w * factor);
                for b in 0..n {
                    for ch in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                padj[x.0][((b * c + ch) * h + i / factor) * w + j / factor] +=
                                    g[((b * c + ch) * oh + i) * ow + j];
                            }
                        }
                    }
                }
            }
            Op::PadChannels {
                x,
                cin,
                cout,
                spatial,
            } => {
                let (cin, cout, spatial) = (*cin, *cout, *spatial);
                let n = g.len() / (cout * spatial);
                for b in 0..n {
                    for c in 0..cin {
                        let src = (b * cout + c) * spatial;
                        let dst = (b * cin + c) * spatial;
                        for k in 0..spatial {
                            padj[x.0][dst + k] += g[src + k];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                for (i, &gi) in g.iter().enumerate() {
                    padj[a.0][i] += gi;
                }
            }
            Op::MeanAll(a) => {
                let n = padj[a.0].len() as f64;
                let gi = g[0] / n;
                for ga in padj[a.0].iter_mut() {
                    *ga += gi;
                }
            }
            Op::SumAll(a) => {
                let gi = g[0];
                for ga in padj[a.0].iter_mut() {
                    *ga += gi;
                }
            }
            Op::Mse { pred, target } => {
                let n = self.nodes[pred.0].value.len() as f64;
                let g0 = g[0];
                let tv: Vec<f64> = self.nodes[target.0].value.clone();
                for i in 0..tv.len() {
                    let diff = self.nodes[pred.0].value[i] - tv[i];
                    padj[pred.0][i] += g0 * 2.0 * diff / n;
                    padj[target.0][i] -= g0 * 2.0 * diff / n;
                }
            }
            Op::L1 { pred, target } => {
                let n = self.nodes[pred.0].value.len() as f64;
                let g0 = g[0];
                let tv: Vec<f64> = self.nodes[target.0].value.clone();
                for i in 0..tv.len() {
                    let diff = self.nodes[pred.0].value[i] - tv[i];
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    padj[pred.0][i] += g0 * s / n;
                    padj[target.0][i] -= g0 * s / n;
                }
            }
            Op::Bce { p, y } => {
                let n = self.nodes[p.0].value.len() as f64;
                let g0 = g[0];
                let yv: Vec<f64> = self.nodes[y.0].value.clone();
                for i in 0..yv.len() {
                    let pv = self.nodes[p.0].value[i];
                    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pv) {
                        continue; // clamped region: zero gradient
                    }
                    let yi = yv[i];
                    padj[p.0][i] += g0 * (-(yi / pv) + (1.0 - yi) / (1.0 - pv)) / n;
                }
            }
        }
    }
}
