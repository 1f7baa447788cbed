//! Declarative layer configs and the sequential network built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry, Padding};
use super::ops;
use super::{NnError, Param, Result, Scalar, Tensor};

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
        #[serde(default = "default_true")]
        bias: bool,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Dense {
        units: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Relu,
    Flatten,
    Softmax,
    Residual {
        inner: Vec<LayerConfig>,
    },
}

impl LayerConfig {
    pub fn conv(out_channels: usize, kernel_h: usize, kernel_w: usize, padding: Padding) -> Self {
        Self::Conv2d {
            out_channels,
            kernel_h,
            kernel_w,
            stride: 1,
            padding,
            bias: true,
        }
    }

    pub fn dense(units: usize) -> Self {
        Self::Dense { units, bias: true }
    }

    /// Per-sample output shape (no batch axis) for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Self::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                ..
            } => {
                let geom = ConvGeometry::new(
                    chw(input)?,
                    *out_channels,
                    *kernel_h,
                    *kernel_w,
                    *stride,
                    *padding,
                )?;
                Ok(vec![geom.out_channels, geom.out_h, geom.out_w])
            }
            Self::MaxPool { kernel, stride } => {
                let [c, h, w] = chw(input)?;
                let [_, _, oh, ow] = ops::pool_output_shape(&[1, c, h, w], *kernel, *stride)?;
                Ok(vec![c, oh, ow])
            }
            Self::Dropout { rate } => {
                ops::check_dropout_rate(*rate)?;
                Ok(input.to_vec())
            }
            Self::Dense { units, .. } => {
                if input.len() != 1 {
                    return Err(NnError::Shape(format!(
                        "dense layer needs a flat input, got {input:?}; add a flatten layer"
                    )));
                }
                if *units == 0 {
                    return Err(NnError::Config(
                        "dense layer needs at least one unit".into(),
                    ));
                }
                Ok(vec![*units])
            }
            Self::Relu => Ok(input.to_vec()),
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::Softmax => {
                if input.len() != 1 {
                    return Err(NnError::Shape(format!(
                        "softmax needs a flat input, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            Self::Residual { inner } => {
                let out = stack_output_shape(inner, input)?;
                if out != input {
                    return Err(NnError::Shape(format!(
                        "residual inner stack maps {input:?} to {out:?}; shapes must match"
                    )));
                }
                Ok(out)
            }
        }
    }

    /// Learnable scalars (weights plus biases) for a per-sample input shape.
    pub fn param_count(&self, input: &[usize]) -> Result<usize> {
        Ok(match self {
            Self::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                bias,
                ..
            } => {
                self.output_shape(input)?;
                out_channels * input[0] * kernel_h * kernel_w
                    + if *bias { *out_channels } else { 0 }
            }
            Self::Dense { units, bias } => {
                self.output_shape(input)?;
                input[0] * units + if *bias { *units } else { 0 }
            }
            Self::Residual { inner } => {
                self.output_shape(input)?;
                param_count(inner, input)?
            }
            _ => {
                self.output_shape(input)?;
                0
            }
        })
    }
}

fn chw(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(NnError::Shape(format!("expected a C×H×W input, got {s:?}"))),
    }
}

pub fn stack_output_shape(stack: &[LayerConfig], input: &[usize]) -> Result<Vec<usize>> {
    stack
        .iter()
        .try_fold(input.to_vec(), |shape, layer| layer.output_shape(&shape))
}

/// Total learnable scalars in a layer stack applied to `input` (per-sample shape).
pub fn param_count(stack: &[LayerConfig], input: &[usize]) -> Result<usize> {
    let mut shape = input.to_vec();
    let mut total = 0;
    for layer in stack {
        total += layer.param_count(&shape)?;
        shape = layer.output_shape(&shape)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    HeNormal,
    GlorotUniform,
}

impl Init {
    fn sample<T: Scalar>(
        self,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let values: Vec<T> = match self {
            Init::HeNormal => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n)
                    .map(|_| T::from_f64_lossy(normal.sample(rng)))
                    .collect()
            }
            Init::GlorotUniform => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let uniform = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                (0..n)
                    .map(|_| T::from_f64_lossy(uniform.sample(rng)))
                    .collect()
            }
        };
        Tensor::from_vec(shape, values).expect("sampled to shape")
    }
}

/// A layer with its parameters and whatever the backward pass needs from the
/// last forward call.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d {
        geom: ConvGeometry,
        weight: Param<T>,
        bias: Option<Param<T>>,
        input: Option<Tensor<T>>,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        cache: Option<(Vec<usize>, Vec<usize>)>,
    },
    Dropout {
        rate: f64,
        mask: Option<Vec<T>>,
    },
    Dense {
        weight: Param<T>,
        bias: Option<Param<T>>,
        input: Option<Tensor<T>>,
    },
    Relu {
        /// Which inputs were positive.
        active: Option<Vec<bool>>,
    },
    Flatten {
        input_shape: Option<Vec<usize>>,
    },
    Softmax {
        output: Option<Tensor<T>>,
    },
    Residual {
        inner: Vec<Layer<T>>,
    },
}

fn missing_cache() -> NnError {
    NnError::State("backward called without a preceding forward".into())
}

fn build_layers<T: Scalar>(
    stack: &[LayerConfig],
    input: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Layer<T>>> {
    let mut shape = input.to_vec();
    let mut layers = Vec::with_capacity(stack.len());
    for (i, cfg) in stack.iter().enumerate() {
        let feeds_relu = stack[i + 1..]
            .iter()
            .find(|l| !matches!(l, LayerConfig::Dropout { .. }))
            .is_some_and(|l| matches!(l, LayerConfig::Relu));
        let init = if feeds_relu {
            Init::HeNormal
        } else {
            Init::GlorotUniform
        };
        let out_shape = cfg.output_shape(&shape)?;
        let layer = match cfg {
            LayerConfig::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                bias,
            } => {
                let geom = ConvGeometry::new(
                    chw(&shape)?,
                    *out_channels,
                    *kernel_h,
                    *kernel_w,
                    *stride,
                    *padding,
                )?;
                let receptive = kernel_h * kernel_w;
                let weight = init.sample(
                    &geom.weight_shape(),
                    geom.in_channels * receptive,
                    out_channels * receptive,
                    rng,
                );
                Layer::Conv2d {
                    geom,
                    weight: Param::new(weight),
                    bias: bias.then(|| Param::new(Tensor::zeros(&[*out_channels]))),
                    input: None,
                }
            }
            LayerConfig::MaxPool { kernel, stride } => Layer::MaxPool {
                kernel: *kernel,
                stride: *stride,
                cache: None,
            },
            LayerConfig::Dropout { rate } => Layer::Dropout {
                rate: *rate,
                mask: None,
            },
            LayerConfig::Dense { units, bias } => {
                let fan_in = shape[0];
                Layer::Dense {
                    weight: Param::new(init.sample(&[fan_in, *units], fan_in, *units, rng)),
                    bias: bias.then(|| Param::new(Tensor::zeros(&[*units]))),
                    input: None,
                }
            }
            LayerConfig::Relu => Layer::Relu { active: None },
            LayerConfig::Flatten => Layer::Flatten { input_shape: None },
            LayerConfig::Softmax => Layer::Softmax { output: None },
            LayerConfig::Residual { inner } => Layer::Residual {
                inner: build_layers(inner, &shape, rng)?,
            },
        };
        layers.push(layer);
        shape = out_shape;
    }
    Ok(layers)
}

impl<T: Scalar> Layer<T> {
    /// Forward pass that records what backward needs.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d {
                geom,
                weight,
                bias,
                input,
            } => {
                let out = conv2d_forward(&x, &weight.value, bias.as_ref().map(|b| &b.value), geom)?;
                *input = Some(x);
                Ok(out)
            }
            Layer::MaxPool {
                kernel,
                stride,
                cache,
            } => {
                let (out, argmax) = ops::maxpool_forward(&x, *kernel, *stride)?;
                *cache = Some((x.shape().to_vec(), argmax));
                Ok(out)
            }
            Layer::Dropout { rate, mask } => match mode {
                Mode::Infer => {
                    *mask = None;
                    Ok(x)
                }
                Mode::Train => {
                    let m: Vec<T> = ops::dropout_mask(x.len(), *rate, rng)?;
                    let mut out = x;
                    out.data_mut()
                        .iter_mut()
                        .zip(&m)
                        .for_each(|(v, &k)| *v *= k);
                    *mask = Some(m);
                    Ok(out)
                }
            },
            Layer::Dense {
                weight,
                bias,
                input,
            } => {
                let out = ops::dense_forward(&x, &weight.value, bias.as_ref().map(|b| &b.value))?;
                *input = Some(x);
                Ok(out)
            }
            Layer::Relu { active } => {
                *active = Some(x.data().iter().map(|&v| v > T::zero()).collect());
                Ok(ops::relu_in_place(x))
            }
            Layer::Flatten { input_shape } => {
                let n = x.batch();
                let item = x.item_len();
                *input_shape = Some(x.shape().to_vec());
                x.reshape(&[n, item])
            }
            Layer::Softmax { output } => {
                let out = ops::softmax(&x);
                *output = Some(out.clone());
                Ok(out)
            }
            Layer::Residual { inner } => {
                let mut y = x.clone();
                for layer in inner.iter_mut() {
                    y = layer.forward(y, mode, rng)?;
                }
                add_skip(y, &x)
            }
        }
    }

    /// Inference-only forward pass; leaves the layer untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d {
                geom, weight, bias, ..
            } => conv2d_forward(x, &weight.value, bias.as_ref().map(|b| &b.value), geom),
            Layer::MaxPool { kernel, stride, .. } => {
                Ok(ops::maxpool_forward(x, *kernel, *stride)?.0)
            }
            Layer::Dropout { .. } => Ok(x.clone()),
            Layer::Dense { weight, bias, .. } => {
                ops::dense_forward(x, &weight.value, bias.as_ref().map(|b| &b.value))
            }
            Layer::Relu { .. } => Ok(ops::relu(x)),
            Layer::Flatten { .. } => x.clone().reshape(&[x.batch(), x.item_len()]),
            Layer::Softmax { .. } => Ok(ops::softmax(x)),
            Layer::Residual { inner } => {
                let mut y = x.clone();
                for layer in inner {
                    y = layer.infer(&y)?;
                }
                add_skip(y, x)
            }
        }
    }

    /// Backward pass: accumulates parameter gradients, returns the input gradient.
    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d {
                geom,
                weight,
                bias,
                input,
            } => {
                let x = input.as_ref().ok_or_else(missing_cache)?;
                conv2d_backward(
                    x,
                    &weight.value,
                    &grad,
                    geom,
                    &mut weight.grad,
                    bias.as_mut().map(|b| &mut b.grad),
                )
            }
            Layer::MaxPool { cache, .. } => {
                let (shape, argmax) = cache.as_ref().ok_or_else(missing_cache)?;
                Ok(ops::maxpool_backward(shape, argmax, &grad))
            }
            Layer::Dropout { mask, .. } => {
                let mut g = grad;
                if let Some(m) = mask {
                    g.data_mut()
                        .iter_mut()
                        .zip(m.iter())
                        .for_each(|(v, &k)| *v *= k);
                }
                Ok(g)
            }
            Layer::Dense {
                weight,
                bias,
                input,
            } => {
                let x = input.as_ref().ok_or_else(missing_cache)?;
                ops::dense_backward(
                    x,
                    &weight.value,
                    &grad,
                    &mut weight.grad,
                    bias.as_mut().map(|b| &mut b.grad),
                )
            }
            Layer::Relu { active } => {
                let active = active.as_ref().ok_or_else(missing_cache)?;
                let mut g = grad;
                g.data_mut()
                    .iter_mut()
                    .zip(active)
                    .filter(|(_, &a)| !a)
                    .for_each(|(v, _)| *v = T::zero());
                Ok(g)
            }
            Layer::Flatten { input_shape } => {
                grad.reshape(input_shape.as_ref().ok_or_else(missing_cache)?)
            }
            Layer::Softmax { output } => Ok(ops::softmax_backward(
                output.as_ref().ok_or_else(missing_cache)?,
                &grad,
            )),
            Layer::Residual { inner } => {
                let mut g = grad.clone();
                for layer in inner.iter_mut().rev() {
                    g = layer.backward(g)?;
                }
                add_skip(g, &grad)
            }
        }
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                out.push((format!("{prefix}.weight"), weight));
                if let Some(b) = bias {
                    out.push((format!("{prefix}.bias"), b));
                }
            }
            Layer::Residual { inner } => {
                for (i, layer) in inner.iter().enumerate() {
                    layer.collect_params(&format!("{prefix}.inner{i}"), out);
                }
            }
            _ => {}
        }
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                out.push(weight);
                if let Some(b) = bias {
                    out.push(b);
                }
            }
            Layer::Residual { inner } => {
                for layer in inner.iter_mut() {
                    layer.collect_params_mut(out);
                }
            }
            _ => {}
        }
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d {
                geom, weight, bias, ..
            } => Layer::Conv2d {
                geom: *geom,
                weight: weight.cast(),
                bias: bias.as_ref().map(Param::cast),
                input: None,
            },
            Layer::MaxPool { kernel, stride, .. } => Layer::MaxPool {
                kernel: *kernel,
                stride: *stride,
                cache: None,
            },
            Layer::Dropout { rate, .. } => Layer::Dropout {
                rate: *rate,
                mask: None,
            },
            Layer::Dense { weight, bias, .. } => Layer::Dense {
                weight: weight.cast(),
                bias: bias.as_ref().map(Param::cast),
                input: None,
            },
            Layer::Relu { .. } => Layer::Relu { active: None },
            Layer::Flatten { .. } => Layer::Flatten { input_shape: None },
            Layer::Softmax { .. } => Layer::Softmax { output: None },
            Layer::Residual { inner } => Layer::Residual {
                inner: inner.iter().map(Layer::cast).collect(),
            },
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d { input, .. } | Layer::Dense { input, .. } => *input = None,
            Layer::Relu { active } => *active = None,
            Layer::MaxPool { cache, .. } => *cache = None,
            Layer::Dropout { mask, .. } => *mask = None,
            Layer::Flatten { input_shape } => *input_shape = None,
            Layer::Softmax { output } => *output = None,
            Layer::Residual { inner } => inner.iter_mut().for_each(Layer::clear_cache),
        }
    }

    fn push_pattern(&self, out: &mut Vec<usize>) {
        match self {
            Layer::Relu { active: Some(a) } => out.extend(a.iter().map(|&b| b as usize)),
            Layer::MaxPool {
                cache: Some((_, argmax)),
                ..
            } => out.extend_from_slice(argmax),
            Layer::Residual { inner } => inner.iter().for_each(|l| l.push_pattern(out)),
            _ => {}
        }
    }
}

fn add_skip<T: Scalar>(mut y: Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != x.shape() {
        return Err(NnError::Shape(format!(
            "residual branch produced {:?} for input {:?}",
            y.shape(),
            x.shape()
        )));
    }
    y.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(a, &b)| *a += b);
    Ok(y)
}

/// Sequential stack of layers over a fixed per-sample input shape.
#[derive(Debug, Clone)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    configs: Vec<LayerConfig>,
    layers: Vec<Layer<T>>,
}

/// Result of one training forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchLoss<T> {
    pub probs: Tensor<T>,
    pub mean_loss: f64,
    /// Gradient of the mean loss with respect to the network input.
    pub input_grad: Tensor<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes a network. Weights feeding a ReLU are He-normal,
    /// all others Glorot-uniform; biases start at zero. Initial values are
    /// drawn in `f64` so `f32` and `f64` builds from one seed agree.
    pub fn build(stack: &[LayerConfig], input_shape: &[usize], seed: u64) -> Result<Self> {
        stack_output_shape(stack, input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            input_shape: input_shape.to_vec(),
            configs: stack.to_vec(),
            layers: build_layers(stack, input_shape, &mut rng)?,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn configs(&self) -> &[LayerConfig] {
        &self.configs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn output_shape(&self) -> Vec<usize> {
        stack_output_shape(&self.configs, &self.input_shape).expect("validated at build")
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.configs, &self.input_shape).expect("validated at build")
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::Shape(format!(
                "network expects N×{:?} input, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn ends_in_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Softmax { .. }))
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        self.check_input(&x)?;
        self.layers
            .iter_mut()
            .try_fold(x, |y, layer| layer.forward(y, mode, rng))
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        self.layers
            .iter_mut()
            .rev()
            .try_fold(grad, |g, layer| layer.backward(g))
    }

    /// Pure inference: safe to call concurrently on a shared network.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut y = x.clone();
        for layer in &self.layers {
            y = layer.infer(&y)?;
        }
        Ok(y)
    }

    /// Mean categorical cross-entropy over a batch, with gradients accumulated
    /// into every parameter. A trailing softmax is fused with the loss.
    pub fn loss_and_backward<R: Rng + ?Sized>(
        &mut self,
        x: Tensor<T>,
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<BatchLoss<T>> {
        if !self.ends_in_softmax() {
            return Err(NnError::Config(
                "cross-entropy training needs a trailing softmax layer".into(),
            ));
        }
        self.check_input(&x)?;
        let body = self.layers.len() - 1;
        let logits = self.layers[..body]
            .iter_mut()
            .try_fold(x, |y, layer| layer.forward(y, mode, rng))?;
        let (probs, mean_loss, grad) = ops::softmax_cross_entropy(&logits, labels)?;
        let input_grad = self.layers[..body]
            .iter_mut()
            .rev()
            .try_fold(grad, |g, layer| layer.backward(g))?;
        Ok(BatchLoss {
            probs,
            mean_loss,
            input_grad,
        })
    }

    /// Parameters with stable hierarchical names such as `layer3.weight`.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&format!("layer{i}"), &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            layer.collect_params_mut(&mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Drops activations kept for backward.
    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            configs: self.configs.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// ReLU on/off states and max-pool winners from the last forward pass.
    /// Within one pattern the network is smooth in its input and parameters.
    pub fn switch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.push_pattern(&mut out));
        out
    }

    pub fn all_params_finite(&self) -> bool {
        self.named_params()
            .iter()
            .all(|(_, p)| p.value.all_finite())
    }
}
