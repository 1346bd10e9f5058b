use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor, Unary};

use super::spec::{LayerSpec, NetworkSpec, OutputKind};

#[derive(Clone, Debug)]
enum Layer<T> {
    Dense {
        weights: Tensor<T>,
        bias: Tensor<T>,
    },
    Conv2d {
        kernels: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: usize,
    },
    Inception {
        branches: Vec<(Tensor<T>, Tensor<T>)>,
    },
    MaxPool(usize),
    Flatten,
    Reshape(Vec<usize>),
    Activation(Unary),
    Softmax,
}

/// Whether a forward pass differentiates the network's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    /// Parameters become differentiable leaves.
    Train,
    /// Parameters enter as constants; gradients still flow to the input.
    Frozen,
}

/// Nodes produced by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// Head output (probabilities, image or scalar probability).
    pub output: NodeId,
    /// Input of the head activation (logits).
    pub logits: NodeId,
    /// Parameter leaves in [`Network::params`] order.
    pub params: Vec<NodeId>,
}

/// Ordered stack of layers with a softmax or sigmoid head.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    output_kind: OutputKind,
    output_shape: Vec<usize>,
    head: usize,
}

/// Uniform(−1/√fan_in, 1/√fan_in).
fn init_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
    Tensor::from_parts(shape.to_vec(), data).with_requires_grad()
}

fn zero_param<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::zeros(&[n]).with_requires_grad()
}

impl<T: Scalar> Network<T> {
    /// Validates shapes with a dry run and initializes parameters: weights
    /// uniform in ±1/√fan_in, biases zero.
    pub fn build<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        let (shapes, output_kind) = spec.infer_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut in_shape = spec.input_shape.clone();
        for (i, ls) in spec.layers.iter().enumerate() {
            let layer = match ls {
                LayerSpec::Dense { units, .. } => Layer::Dense {
                    weights: init_uniform(&[in_shape[0], *units], in_shape[0], rng),
                    bias: zero_param(*units),
                },
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let fan_in = in_shape[0] * kernel * kernel;
                    Layer::Conv2d {
                        kernels: init_uniform(&[*filters, in_shape[0], *kernel, *kernel], fan_in, rng),
                        bias: zero_param(*filters),
                        stride: *stride,
                        padding: *padding,
                    }
                }
                LayerSpec::Inception { branches } => Layer::Inception {
                    branches: branches
                        .iter()
                        .map(|b| {
                            let fan_in = in_shape[0] * b.kernel * b.kernel;
                            let k = init_uniform(&[b.filters, in_shape[0], b.kernel, b.kernel], fan_in, rng);
                            (k, zero_param(b.filters))
                        })
                        .collect(),
                },
                LayerSpec::MaxPool { size } => Layer::MaxPool(*size),
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Reshape { shape } => Layer::Reshape(shape.clone()),
                LayerSpec::Relu => Layer::Activation(Unary::Relu),
                LayerSpec::LeakyRelu { alpha } => Layer::Activation(Unary::LeakyRelu(*alpha)),
                LayerSpec::Sigmoid => Layer::Activation(Unary::Sigmoid),
                LayerSpec::Tanh => Layer::Activation(Unary::Tanh),
                LayerSpec::Softmax => Layer::Softmax,
            };
            layers.push(layer);
            in_shape = shapes[i].clone();
        }
        let head = spec
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Softmax | LayerSpec::Sigmoid))
            .expect("validated head");
        Ok(Self {
            spec: spec.clone(),
            layers,
            output_kind,
            output_shape: in_shape,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output_kind
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Number of classes of a softmax classifier.
    pub fn class_count(&self) -> Option<usize> {
        (self.output_kind == OutputKind::Probabilities).then(|| self.output_shape[0])
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { weights, bias } => out.extend([weights, bias]),
                Layer::Conv2d { kernels, bias, .. } => out.extend([kernels, bias]),
                Layer::Inception { branches } => {
                    for (k, b) in branches {
                        out.extend([k, b]);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weights, bias } => out.extend([weights, bias]),
                Layer::Conv2d { kernels, bias, .. } => out.extend([kernels, bias]),
                Layer::Inception { branches } => {
                    for (k, b) in branches {
                        out.extend([k, b]);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.take_grad();
        }
    }

    /// Records a forward pass of the batch node `x` (shape `[N, ..input]`).
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId, mode: ParamMode) -> Result<Forward> {
        let xs = g.shape(x);
        if xs.len() != self.spec.input_shape.len() + 1 || xs[1..] != self.spec.input_shape[..] {
            return Err(Error::Dimension(format!(
                "network `{}` expects samples of shape {:?}, got batch {:?}",
                self.spec.name, self.spec.input_shape, xs
            )));
        }
        let n = xs[0];
        let trainable = mode == ParamMode::Train;
        let mut params = Vec::new();
        let mut bind = |g: &mut Graph<T>, t: &Tensor<T>| {
            let id = g.leaf(t, trainable);
            params.push(id);
            id
        };
        let mut h = x;
        let mut logits = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == self.head {
                logits = h;
            }
            h = match layer {
                Layer::Dense { weights, bias } => {
                    let w = bind(g, weights);
                    let b = bind(g, bias);
                    let y = g.matmul(h, w)?;
                    g.add_row_bias(y, b)?
                }
                Layer::Conv2d {
                    kernels,
                    bias,
                    stride,
                    padding,
                } => {
                    let k = bind(g, kernels);
                    let b = bind(g, bias);
                    let y = g.conv2d(h, k, *stride, *padding)?;
                    g.add_channel_bias(y, b)?
                }
                Layer::Inception { branches } => {
                    let mut outs = Vec::with_capacity(branches.len());
                    for (kt, bt) in branches {
                        let k = bind(g, kt);
                        let b = bind(g, bt);
                        let y = g.conv2d(h, k, 1, kt.shape()[2] / 2)?;
                        outs.push(g.add_channel_bias(y, b)?);
                    }
                    g.concat_channels(&outs)?
                }
                Layer::MaxPool(size) => g.maxpool2d(h, *size)?,
                Layer::Flatten => g.flatten(h)?,
                Layer::Reshape(shape) => {
                    let mut full = vec![n];
                    full.extend_from_slice(shape);
                    g.reshape(h, &full)?
                }
                Layer::Activation(kind) => g.unary(h, *kind)?,
                Layer::Softmax => g.softmax(h)?,
            };
        }
        Ok(Forward {
            output: h,
            logits,
            params,
        })
    }

    /// Adds the graph's gradients for `params` (from [`Forward::params`]) into
    /// the parameters' gradient buffers.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, params: &[NodeId]) -> Result<()> {
        let mut targets = self.params_mut();
        if targets.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} parameter nodes for {} parameters",
                params.len(),
                targets.len()
            )));
        }
        for (t, &id) in targets.iter_mut().zip(params) {
            g.write_grad(id, t)?;
        }
        Ok(())
    }

    fn run_batches(&self, x: &Tensor<T>, want_logits: bool) -> Result<Tensor<T>> {
        const CHUNK: usize = 256;
        let n = x.shape()[0];
        let mut parts = Vec::new();
        for start in (0..n).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
            let mut g = Graph::new();
            let input = g.input(x.select(&idx));
            let fwd = self.forward(&mut g, input, ParamMode::Frozen)?;
            let id = if want_logits { fwd.logits } else { fwd.output };
            parts.push(g.value(id).clone());
        }
        Tensor::concat(&parts.iter().collect::<Vec<_>>())
    }

    /// Head output for a batch, evaluated in chunks without gradients.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run_batches(x, false)
    }

    /// Pre-head activations for a batch.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run_batches(x, true)
    }

    /// A network with the same spec and freshly initialized parameters.
    pub fn reinitialized<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self> {
        Self::build(&self.spec, rng)
    }

    /// Writes every parameter as `u32` rank, `u32` extents, then
    /// little-endian `f32` values.
    pub fn write_params<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let params = self.params();
        out.write_all(&(params.len() as u32).to_le_bytes())?;
        for p in params {
            out.write_all(&(p.shape().len() as u32).to_le_bytes())?;
            for &d in p.shape() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in p.data() {
                out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads parameters written by [`Self::write_params`]; shapes must match.
    pub fn read_params<R: Read>(&mut self, input: &mut R) -> Result<()> {
        let fmt = |m: String| Error::Format(m);
        let mut word = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> Result<u32> {
            input
                .read_exact(&mut word)
                .map_err(|e| fmt(format!("truncated parameter block: {e}")))?;
            Ok(u32::from_le_bytes(word))
        };
        let count = read_u32(input)? as usize;
        let mut params = self.params_mut();
        if count != params.len() {
            return Err(fmt(format!(
                "checkpoint holds {count} tensors, network has {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let rank = read_u32(input)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(input).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != p.shape() {
                return Err(fmt(format!(
                    "checkpoint tensor {shape:?} does not match parameter {:?}",
                    p.shape()
                )));
            }
            let mut raw = vec![0u8; 4 * p.len()];
            input
                .read_exact(&mut raw)
                .map_err(|e| fmt(format!("truncated parameter values: {e}")))?;
            for (dst, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                if !v.is_finite() {
                    return Err(fmt("non-finite parameter value".into()));
                }
                *dst = T::of(f64::from(v));
            }
        }
        Ok(())
    }
}
