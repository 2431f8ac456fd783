//! Layer stacks for the models used in the experiments.
//!
//! Weights are initialized i.i.d. uniform in ±1/sqrt(fan_in), biases zero;
//! batch norm uses momentum 0.1 and eps 1e-5 with running statistics
//! maintained during training and frozen in inference mode.

use rand::Rng;

use super::{Graph, NodeId, Tensor};
use crate::error::{Result, SxlError};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor, // [in, out]
    pub b: Tensor, // [out]
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Tensor, // [cout, cin, k, k]
    pub b: Tensor, // [cout]
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct Deconv2d {
    pub w: Tensor, // [cin, cout, k, k]
    pub b: Tensor, // [cout]
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::new(vec![features], vec![1.0; features]).unwrap(),
            beta: Tensor::zeros(vec![features]),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }
}

fn uniform_init(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor { shape, data }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Conv2d(Conv2d),
    Deconv2d(Deconv2d),
    BatchNorm1d(BatchNorm),
    BatchNorm2d(BatchNorm),
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    UpsampleNn(usize),
    /// Flatten [N, ...] to [N, F].
    Flatten,
    /// Reshape [N, F] to [N, ...] with the given per-sample shape.
    Reshape(Vec<usize>),
}

impl Layer {
    pub fn linear(rng: &mut impl Rng, in_features: usize, out_features: usize) -> Layer {
        Layer::Linear(Linear {
            w: uniform_init(rng, vec![in_features, out_features], in_features),
            b: Tensor::zeros(vec![out_features]),
            in_features,
            out_features,
        })
    }

    pub fn conv2d(rng: &mut impl Rng, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Layer {
        Layer::Conv2d(Conv2d {
            w: uniform_init(rng, vec![cout, cin, k, k], cin * k * k),
            b: Tensor::zeros(vec![cout]),
            stride,
            pad,
        })
    }

    pub fn deconv2d(rng: &mut impl Rng, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Layer {
        Layer::Deconv2d(Deconv2d {
            w: uniform_init(rng, vec![cin, cout, k, k], cin * k * k),
            b: Tensor::zeros(vec![cout]),
            stride,
            pad,
        })
    }

    pub fn batchnorm1d(features: usize) -> Layer {
        Layer::BatchNorm1d(BatchNorm::new(features))
    }

    pub fn batchnorm2d(features: usize) -> Layer {
        Layer::BatchNorm2d(BatchNorm::new(features))
    }
}

/// An ordered stack of layers applied in sequence.
#[derive(Debug, Clone, Default)]
pub struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Stack { layers }
    }

    /// Runs the stack, binding every parameter as a graph leaf. Returns the
    /// output node and the parameter leaf ids in [`Stack::params`] order.
    /// In training mode batch-norm layers use batch statistics and update
    /// their running buffers.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        input: NodeId,
        train: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let mut x = input;
        let mut param_ids = Vec::new();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            x = forward_layer(layer, g, x, train, &mut param_ids)
                .map_err(|e| SxlError::invalid(format!("layer {li}: {e}")))?;
        }
        Ok((x, param_ids))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(&l.w);
                    out.push(&l.b);
                }
                Layer::Conv2d(l) => {
                    out.push(&l.w);
                    out.push(&l.b);
                }
                Layer::Deconv2d(l) => {
                    out.push(&l.w);
                    out.push(&l.b);
                }
                Layer::BatchNorm1d(l) | Layer::BatchNorm2d(l) => {
                    out.push(&l.gamma);
                    out.push(&l.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
                Layer::Conv2d(l) => {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
                Layer::Deconv2d(l) => {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
                Layer::BatchNorm1d(l) | Layer::BatchNorm2d(l) => {
                    out.push(&mut l.gamma);
                    out.push(&mut l.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Named tensors for checkpointing, including batch-norm running stats.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let name = |suffix: &str| format!("{prefix}.{li}.{suffix}");
            match layer {
                Layer::Linear(l) => {
                    out.push((name("w"), l.w.clone()));
                    out.push((name("b"), l.b.clone()));
                }
                Layer::Conv2d(l) => {
                    out.push((name("w"), l.w.clone()));
                    out.push((name("b"), l.b.clone()));
                }
                Layer::Deconv2d(l) => {
                    out.push((name("w"), l.w.clone()));
                    out.push((name("b"), l.b.clone()));
                }
                Layer::BatchNorm1d(l) | Layer::BatchNorm2d(l) => {
                    out.push((name("gamma"), l.gamma.clone()));
                    out.push((name("beta"), l.beta.clone()));
                    out.push((
                        name("running_mean"),
                        Tensor::new(vec![l.running_mean.len()], l.running_mean.clone()).unwrap(),
                    ));
                    out.push((
                        name("running_var"),
                        Tensor::new(vec![l.running_var.len()], l.running_var.clone()).unwrap(),
                    ));
                }
                _ => {}
            }
        }
        out
    }

    /// Restores tensors written by [`Stack::state`].
    pub fn load_state(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        let find = |name: &str| -> Result<&Tensor> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| SxlError::invalid(format!("missing checkpoint entry {name}")))
        };
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let name = |suffix: &str| format!("{prefix}.{li}.{suffix}");
            match layer {
                Layer::Linear(l) => {
                    l.w = find(&name("w"))?.clone();
                    l.b = find(&name("b"))?.clone();
                }
                Layer::Conv2d(l) => {
                    l.w = find(&name("w"))?.clone();
                    l.b = find(&name("b"))?.clone();
                }
                Layer::Deconv2d(l) => {
                    l.w = find(&name("w"))?.clone();
                    l.b = find(&name("b"))?.clone();
                }
                Layer::BatchNorm1d(l) | Layer::BatchNorm2d(l) => {
                    l.gamma = find(&name("gamma"))?.clone();
                    l.beta = find(&name("beta"))?.clone();
                    l.running_mean = find(&name("running_mean"))?.data.clone();
                    l.running_var = find(&name("running_var"))?.data.clone();
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn forward_layer(
    layer: &mut Layer,
    g: &mut Graph,
    x: NodeId,
    train: bool,
    param_ids: &mut Vec<NodeId>,
) -> Result<NodeId> {
    match layer {
        Layer::Linear(l) => {
            let w = g.leaf(&l.w);
            let b = g.leaf(&l.b);
            param_ids.push(w);
            param_ids.push(b);
            let y = g.matmul(x, w)?;
            g.bias_rows(y, b)
        }
        Layer::Conv2d(l) => {
            let w = g.leaf(&l.w);
            let b = g.leaf(&l.b);
            param_ids.push(w);
            param_ids.push(b);
            let y = g.conv2d(x, w, l.stride, l.pad)?;
            g.bias_channels(y, b)
        }
        Layer::Deconv2d(l) => {
            let w = g.leaf(&l.w);
            let b = g.leaf(&l.b);
            param_ids.push(w);
            param_ids.push(b);
            let y = g.deconv2d(x, w, l.stride, l.pad)?;
            g.bias_channels(y, b)
        }
        Layer::BatchNorm1d(l) | Layer::BatchNorm2d(l) => {
            let gamma = g.leaf(&l.gamma);
            let beta = g.leaf(&l.beta);
            param_ids.push(gamma);
            param_ids.push(beta);
            if train {
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, BN_EPS)?;
                for (rm, &m) in l.running_mean.iter_mut().zip(&mean) {
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
                }
                for (rv, &v) in l.running_var.iter_mut().zip(&var) {
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v;
                }
                Ok(y)
            } else {
                g.batch_norm_eval(x, gamma, beta, &l.running_mean, &l.running_var, BN_EPS)
            }
        }
        Layer::Relu => Ok(g.relu(x)),
        Layer::LeakyRelu(slope) => Ok(g.leaky_relu(x, *slope)),
        Layer::Sigmoid => Ok(g.sigmoid(x)),
        Layer::Tanh => Ok(g.tanh(x)),
        Layer::UpsampleNn(f) => g.upsample_nn(x, *f),
        Layer::Flatten => {
            let shape = g.shape(x).to_vec();
            let n = shape[0];
            let f: usize = shape[1..].iter().product();
            g.reshape(x, vec![n, f])
        }
        Layer::Reshape(per_sample) => {
            let n = g.shape(x)[0];
            let mut shape = vec![n];
            shape.extend_from_slice(per_sample);
            g.reshape(x, shape)
        }
    }
}
