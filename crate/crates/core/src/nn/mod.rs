//! Encoder-decoder networks for striation recovery, with explicit forward and
//! backward passes, binary cross-entropy and Adam.
//!
//! A network is a fixed op list over per-sample feature maps. The U-Net
//! contracting path repeats two 3×3 conv + ReLU then a 2×2 max pool, doubling
//! channels per level; the expansive path repeats a 2×2 up-convolution + ReLU
//! halving channels, concatenation with the matching contracting map (skip
//! first), and two 3×3 conv + ReLU. A 1×1 conv and a sigmoid finish it.
//! Counting rule: every 3×3 conv, every up-convolution and the final 1×1
//! count as convolutional layers, which gives `4·levels + 2 + 3·levels + 1`
//! (23 at four levels).
//!
//! The VGG-style net has the same endings but no skips: stage `s` holds
//! `[2, 2, 4, 4, 4][s]` conv + ReLU layers of `base·[1, 2, 4, 8, 8][s]`
//! channels followed by a stride-2 pool, then one up-convolution + ReLU per
//! stage back up.
//!
//! Batches are processed one sample per task; per-sample gradients are summed
//! in sample order, so results do not depend on the thread count.

mod io;
pub mod ops;

pub use io::{load_network, save_network, NETWORK_MAGIC, NETWORK_VERSION};

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::StriationImage;
use crate::rng::{sample_stream, standard_normal};
use crate::scalar::Real;
use ops::{Dims, BCE_CLAMP};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: [usize; 4], got: [usize; 4] },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { loss: f64, step: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("weight file spec {file:?} does not match {expected:?}")]
    SpecMismatch { file: NetworkSpec, expected: NetworkSpec },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Unet,
    Vgg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub levels: usize,
    pub base_channels: usize,
    pub input_size: usize,
}

const VGG_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
const VGG_WIDTH: [usize; 5] = [1, 2, 4, 8, 8];

impl NetworkSpec {
    pub fn unet(levels: usize, base_channels: usize, input_size: usize) -> Self {
        Self { architecture: Architecture::Unet, levels, base_channels, input_size }
    }

    pub fn vgg(levels: usize, base_channels: usize, input_size: usize) -> Self {
        Self { architecture: Architecture::Vgg, levels, base_channels, input_size }
    }

    /// Four levels, 64 base channels, 112 × 112 inputs.
    pub fn paper() -> Self {
        Self::unet(4, 64, 112)
    }

    /// Two levels, 8 base channels, 32 × 32 inputs.
    pub fn desk() -> Self {
        Self::unet(2, 8, 32)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidSpec(m));
        if self.levels == 0 {
            return bad("at least one level".into());
        }
        if self.architecture == Architecture::Vgg && self.levels > VGG_CONVS.len() {
            return bad(format!("the VGG net has at most {} stages", VGG_CONVS.len()));
        }
        if self.base_channels == 0 {
            return bad("base channels must be positive".into());
        }
        let factor = 1usize << self.levels;
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return bad(format!("input size {} not divisible by 2^{}", self.input_size, self.levels));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { kernel: usize },
    UpConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Layer { index: usize, relu: bool },
    Pool,
    /// Prepends activation `skip` (an index into the activation list).
    Concat { skip: usize },
}

/// One row of the layer/shape table.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    /// Output `(channels, height, width)`.
    pub output: (usize, usize, usize),
    pub kernel: usize,
    pub stride: usize,
    pub activation: &'static str,
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    fn weight_len(kind: LayerKind, cin: usize, cout: usize) -> usize {
        match kind {
            LayerKind::Conv { kernel } => cout * cin * kernel * kernel,
            LayerKind::UpConv => cin * cout * 4,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel } => self.cin * kernel * kernel,
            LayerKind::UpConv => self.cin,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Layer skeleton and op list for a spec, without weights.
struct Plan {
    layers: Vec<(String, LayerKind, usize, usize)>,
    ops: Vec<Op>,
    dims: Vec<Dims>,
}

fn plan(spec: &NetworkSpec) -> Plan {
    let mut layers = Vec::new();
    let mut ops = Vec::new();
    let mut dims = vec![Dims::new(1, spec.input_size, spec.input_size)];
    let cur = |dims: &Vec<Dims>| *dims.last().expect("input dims");
    let add = |layers: &mut Vec<_>, ops: &mut Vec<Op>, dims: &mut Vec<Dims>, name: String, kind, cout: usize, relu| {
        let d = cur(dims);
        layers.push((name, kind, d.channels, cout));
        ops.push(Op::Layer { index: layers.len() - 1, relu });
        dims.push(match kind {
            LayerKind::Conv { .. } => Dims::new(cout, d.height, d.width),
            LayerKind::UpConv => Dims::new(cout, 2 * d.height, 2 * d.width),
        });
    };
    let pool = |ops: &mut Vec<Op>, dims: &mut Vec<Dims>| {
        let d = cur(dims);
        ops.push(Op::Pool);
        dims.push(Dims::new(d.channels, d.height / 2, d.width / 2));
    };
    let conv3 = LayerKind::Conv { kernel: 3 };
    let b = spec.base_channels;
    match spec.architecture {
        Architecture::Unet => {
            let mut skips = Vec::new();
            for level in 0..spec.levels {
                let c = b << level;
                add(&mut layers, &mut ops, &mut dims, format!("down{}_conv1", level + 1), conv3, c, true);
                add(&mut layers, &mut ops, &mut dims, format!("down{}_conv2", level + 1), conv3, c, true);
                skips.push(dims.len() - 1);
                pool(&mut ops, &mut dims);
            }
            let c = b << spec.levels;
            add(&mut layers, &mut ops, &mut dims, "bottom_conv1".into(), conv3, c, true);
            add(&mut layers, &mut ops, &mut dims, "bottom_conv2".into(), conv3, c, true);
            for level in (0..spec.levels).rev() {
                let c = b << level;
                add(&mut layers, &mut ops, &mut dims, format!("up{}_upconv", level + 1), LayerKind::UpConv, c, true);
                let skip = skips[level];
                let d = cur(&dims);
                ops.push(Op::Concat { skip });
                dims.push(Dims::new(d.channels + dims[skip].channels, d.height, d.width));
                add(&mut layers, &mut ops, &mut dims, format!("up{}_conv1", level + 1), conv3, c, true);
                add(&mut layers, &mut ops, &mut dims, format!("up{}_conv2", level + 1), conv3, c, true);
            }
            add(&mut layers, &mut ops, &mut dims, "output".into(), LayerKind::Conv { kernel: 1 }, 1, false);
        }
        Architecture::Vgg => {
            let mut n = 0;
            for stage in 0..spec.levels {
                for _ in 0..VGG_CONVS[stage] {
                    n += 1;
                    add(&mut layers, &mut ops, &mut dims, format!("Conv2D_{n}"), conv3, b * VGG_WIDTH[stage], true);
                }
                pool(&mut ops, &mut dims);
            }
            for (i, stage) in (0..spec.levels).rev().enumerate() {
                add(&mut layers, &mut ops, &mut dims, format!("DeConv2D_{}", i + 1), LayerKind::UpConv, b * VGG_WIDTH[stage], true);
            }
            let name = format!("DeConv2D_{}", spec.levels + 1);
            add(&mut layers, &mut ops, &mut dims, name, LayerKind::Conv { kernel: 1 }, 1, false);
        }
    }
    Plan { layers, ops, dims }
}

/// Layer/shape table for a spec; cheap even at full scale.
pub fn describe(spec: &NetworkSpec) -> Result<Vec<LayerInfo>, NnError> {
    spec.validate()?;
    let p = plan(spec);
    let mut rows = Vec::new();
    for (i, op) in p.ops.iter().enumerate() {
        let d = p.dims[i + 1];
        let output = (d.channels, d.height, d.width);
        rows.push(match *op {
            Op::Layer { index, relu } => {
                let (name, kind, cin, cout) = &p.layers[index];
                let params = Layer::<f32>::weight_len(*kind, *cin, *cout) + cout;
                let (kind_name, kernel, stride) = match kind {
                    LayerKind::Conv { kernel } => ("conv", *kernel, 1),
                    LayerKind::UpConv => ("upconv", 2, 2),
                };
                let activation = if relu { "relu" } else { "sigmoid" };
                LayerInfo { name: name.clone(), kind: kind_name, output, kernel, stride, activation, parameters: params }
            }
            Op::Pool => LayerInfo { name: "maxpool".into(), kind: "maxpool", output, kernel: 2, stride: 2, activation: "", parameters: 0 },
            Op::Concat { .. } => LayerInfo { name: "concat".into(), kind: "concat", output, kernel: 0, stride: 0, activation: "", parameters: 0 },
        });
    }
    Ok(rows)
}

/// Fixed-width text rendering of [`describe`].
pub fn describe_table(spec: &NetworkSpec) -> Result<String, NnError> {
    let rows = describe(spec)?;
    let mut out = format!("{:<16} {:<8} {:>18} {:>6} {:>6} {:<8} {:>10}\n", "layer", "kind", "output (c,h,w)", "kernel", "stride", "act", "params");
    let mut total = 0;
    for r in &rows {
        total += r.parameters;
        let shape = format!("({},{},{})", r.output.0, r.output.1, r.output.2);
        out.push_str(&format!(
            "{:<16} {:<8} {:>18} {:>6} {:>6} {:<8} {:>10}\n",
            r.name, r.kind, shape, r.kernel, r.stride, r.activation, r.parameters
        ));
    }
    let convs = rows.iter().filter(|r| r.kind == "conv" || r.kind == "upconv").count();
    out.push_str(&format!("convolutional layers: {convs}, parameters: {total}\n"));
    Ok(out)
}

/// Batch of feature maps `(batch, channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self, NnError> {
        if dims.contains(&0) || data.len() != dims.iter().product::<usize>() {
            return Err(NnError::ShapeMismatch { expected: dims, got: [data.len(), 0, 0, 0] });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    /// Single-channel batch from equally sized images.
    pub fn from_images(images: &[&StriationImage<T>]) -> Result<Self, NnError> {
        let first = images.first().ok_or_else(|| NnError::InvalidSpec("empty batch".into()))?;
        let (h, w) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if (img.rows(), img.cols()) != (h, w) {
                return Err(NnError::ShapeMismatch { expected: [1, 1, h, w], got: [1, 1, img.rows(), img.cols()] });
            }
            data.extend_from_slice(img.values());
        }
        Self::new([images.len(), 1, h, w], data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }
}

/// Mean binary cross-entropy, predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn loss_bce<T: Real>(pred: &Tensor4<T>, label: &Tensor4<T>) -> Result<f64, NnError> {
    if pred.dims != label.dims {
        return Err(NnError::ShapeMismatch { expected: pred.dims, got: label.dims });
    }
    let total: f64 = pred.data.iter().zip(&label.data).map(|(p, t)| ops::bce(*p, *t)).sum();
    Ok(total / pred.data.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments per parameter, laid out like the layers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    ops: Vec<Op>,
    dims: Vec<Dims>,
    pub layers: Vec<Layer<T>>,
    pub adam: AdamState<T>,
}

/// Weight and bias gradients, one pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    fn zeros(layers: &[Layer<T>]) -> Self {
        Self {
            weight: layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            bias: layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.weight.iter_mut().chain(self.bias.iter_mut()).zip(other.weight.iter().chain(&other.bias)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

impl<T: Real> Network<T> {
    /// He-normal weights and zero biases, drawn in layer order from `seed`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let p = plan(&spec);
        let mut rng = sample_stream(seed, 0);
        let mut layers = Vec::with_capacity(p.layers.len());
        for (name, kind, cin, cout) in p.layers {
            let mut layer = Layer { name, kind, cin, cout, weight: Vec::new(), bias: vec![T::zero(); cout] };
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            layer.weight = (0..Layer::<T>::weight_len(kind, cin, cout)).map(|_| T::lit(std * standard_normal(&mut rng))).collect();
            layers.push(layer);
        }
        let adam = AdamState {
            step: 0,
            m: layers.iter().flat_map(|l| [vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]]).collect(),
            v: layers.iter().flat_map(|l| [vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]]).collect(),
        };
        Ok(Self { spec, ops: p.ops, dims: p.dims, layers, adam })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers.len()
    }

    fn input_dims(&self) -> [usize; 4] {
        [0, 1, self.spec.input_size, self.spec.input_size]
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<(), NnError> {
        let mut expected = self.input_dims();
        expected[0] = x.dims[0];
        if x.dims != expected {
            return Err(NnError::ShapeMismatch { expected, got: x.dims });
        }
        Ok(())
    }

    /// Activations of one sample: `acts[0]` is the input, `acts[i + 1]` the
    /// output of op `i`; the last entry holds logits.
    fn activations(&self, input: &[T]) -> Vec<Vec<T>> {
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.ops.len() + 1);
        acts.push(input.to_vec());
        for (i, op) in self.ops.iter().enumerate() {
            let d = self.dims[i];
            let x = &acts[i];
            let mut out = vec![T::zero(); self.dims[i + 1].len()];
            match *op {
                Op::Layer { index, relu } => {
                    let l = &self.layers[index];
                    match l.kind {
                        LayerKind::Conv { kernel } => ops::conv_forward(x, d, &l.weight, &l.bias, l.cout, kernel, &mut out),
                        LayerKind::UpConv => ops::upconv_forward(x, d, &l.weight, &l.bias, l.cout, &mut out),
                    }
                    if relu {
                        ops::relu_inplace(&mut out);
                    }
                }
                Op::Pool => ops::pool_forward(x, d, &mut out),
                Op::Concat { skip } => {
                    let s = &acts[skip];
                    out[..s.len()].copy_from_slice(s);
                    out[s.len()..].copy_from_slice(x);
                }
            }
            acts.push(out);
        }
        acts
    }

    fn predict_sample(&self, input: &[T]) -> Vec<T> {
        let mut acts = self.activations(input);
        acts.pop().expect("output").into_iter().map(ops::sigmoid).collect()
    }

    /// Sigmoid outputs, shape `(batch, 1, L, L)`.
    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        self.check_input(input)?;
        let outs: Vec<Vec<T>> = (0..input.dims[0]).into_par_iter().map(|b| self.predict_sample(input.sample(b))).collect();
        Ok(Tensor4 { dims: input.dims, data: outs.concat() })
    }

    /// Summed BCE and parameter gradients of one sample, with the output
    /// gradient scaled by `scale`.
    fn sample_gradients(&self, input: &[T], label: &[T], scale: T) -> (f64, Gradients<T>) {
        let acts = self.activations(input);
        let logits = acts.last().expect("output");
        let mut loss = 0.0;
        let mut grad: Vec<T> = logits
            .iter()
            .zip(label)
            .map(|(z, t)| {
                let y = ops::sigmoid(*z);
                loss += ops::bce(y, *t);
                (y - *t) * scale
            })
            .collect();
        let mut grads = Gradients::zeros(&self.layers);
        let mut pending: Vec<Option<Vec<T>>> = vec![None; acts.len()];
        for (i, op) in self.ops.iter().enumerate().rev() {
            if let Some(extra) = pending[i + 1].take() {
                for (g, e) in grad.iter_mut().zip(extra) {
                    *g += e;
                }
            }
            let d = self.dims[i];
            let x = &acts[i];
            let mut gin = vec![T::zero(); d.len()];
            match *op {
                Op::Layer { index, relu } => {
                    if relu {
                        ops::relu_backward(&acts[i + 1], &mut grad);
                    }
                    let l = &self.layers[index];
                    let (gw, gb) = (&mut grads.weight[index], &mut grads.bias[index]);
                    match l.kind {
                        LayerKind::Conv { kernel } => ops::conv_backward(x, d, &l.weight, l.cout, kernel, &grad, &mut gin, gw, gb),
                        LayerKind::UpConv => ops::upconv_backward(x, d, &l.weight, l.cout, &grad, &mut gin, gw, gb),
                    }
                }
                Op::Pool => ops::pool_backward(x, d, &grad, &mut gin),
                Op::Concat { skip } => {
                    let n = acts[skip].len();
                    gin.copy_from_slice(&grad[n..]);
                    let part = grad[..n].to_vec();
                    match &mut pending[skip] {
                        Some(p) => p.iter_mut().zip(&part).for_each(|(a, b)| *a += *b),
                        slot => *slot = Some(part),
                    }
                }
            }
            grad = gin;
        }
        (loss, grads)
    }

    /// Mean BCE of a batch and its gradients, without updating weights.
    pub fn gradients(&self, input: &Tensor4<T>, label: &Tensor4<T>) -> Result<(f64, Gradients<T>), NnError> {
        self.check_input(input)?;
        if label.dims != input.dims {
            return Err(NnError::ShapeMismatch { expected: input.dims, got: label.dims });
        }
        let n = input.data.len();
        let scale = T::lit(1.0 / n as f64);
        let per: Vec<(f64, Gradients<T>)> = (0..input.dims[0])
            .into_par_iter()
            .map(|b| self.sample_gradients(input.sample(b), label.sample(b), scale))
            .collect();
        let mut total = Gradients::zeros(&self.layers);
        let mut loss = 0.0;
        for (l, g) in &per {
            loss += l;
            total.add(g);
        }
        Ok((loss / n as f64, total))
    }

    pub fn apply_adam(&mut self, grads: &Gradients<T>, config: &AdamConfig) {
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let (b1, b2) = (config.beta1, config.beta2);
        let lr_t = config.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let (b1, b2, lr_t, eps) = (T::lit(b1), T::lit(b2), T::lit(lr_t), T::lit(config.epsilon));
        let one = T::one();
        let params = self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]);
        let gs = grads.weight.iter().zip(&grads.bias).flat_map(|(w, b)| [w, b]);
        for (((p, g), m), v) in params.zip(gs).zip(&mut self.adam.m).zip(&mut self.adam.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }

    /// One Adam step on a batch; returns the loss before the update.
    pub fn backward_and_step(&mut self, input: &Tensor4<T>, label: &Tensor4<T>, config: &AdamConfig) -> Result<f64, NnError> {
        let (loss, grads) = self.gradients(input, label)?;
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss { loss, step: self.adam.step });
        }
        self.apply_adam(&grads, config);
        Ok(loss)
    }

    /// Recovered image, strictly inside `(0, 1)`, axes and meta kept.
    pub fn infer(&self, image: &StriationImage<T>) -> Result<StriationImage<T>, NnError> {
        let x = Tensor4::from_images(&[image])?;
        self.check_input(&x)?;
        let lo = T::lit(BCE_CLAMP);
        let hi = T::one() - lo;
        let values = self.predict_sample(x.sample(0)).into_iter().map(|v| v.max(lo).min(hi)).collect();
        let mut out = StriationImage::new(image.rows(), image.cols(), values, image.axes).expect("same shape");
        out.meta = image.meta.clone();
        Ok(out)
    }

    pub fn infer_all(&self, images: &[StriationImage<T>]) -> Result<Vec<StriationImage<T>>, NnError> {
        images.par_iter().map(|img| self.infer(img)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the best loss has not improved by `plateau_tolerance`
    /// within this many epochs.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 64, max_epochs: 1000, plateau_window: 20, plateau_tolerance: 1e-4, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.adam.learning_rate >= 0.0) || !self.adam.learning_rate.is_finite() {
            return Err(NnError::InvalidConfig(format!("learning rate {}", self.adam.learning_rate)));
        }
        Ok(())
    }
}

/// Input and label images flattened to network order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet<T> {
    pub size: usize,
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<Vec<T>>,
}

impl<T: Real> TrainingSet<T> {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a StriationImage<T>, &'a StriationImage<T>)>) -> Result<Self, NnError> {
        let mut set = Self { size: 0, inputs: Vec::new(), labels: Vec::new() };
        for (x, y) in pairs {
            if x.rows() != x.cols() || (y.rows(), y.cols()) != (x.rows(), x.cols()) || (set.size != 0 && x.rows() != set.size) {
                return Err(NnError::ShapeMismatch { expected: [1, 1, set.size, set.size], got: [1, 1, x.rows(), x.cols()] });
            }
            set.size = x.rows();
            set.inputs.push(x.values().to_vec());
            set.labels.push(y.values().to_vec());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor4<T>, Tensor4<T>) {
        let dims = [indices.len(), 1, self.size, self.size];
        let gather = |v: &Vec<Vec<T>>| indices.iter().flat_map(|i| v[*i].iter().copied()).collect();
        (Tensor4 { dims, data: gather(&self.inputs) }, Tensor4 { dims, data: gather(&self.labels) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub best: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Plateau,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,best,wall_s\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.6},{:.6},{:.3}\n", e.epoch, e.loss, e.best, e.wall_seconds));
        }
        out
    }
}

/// Mean loss of the whole set, in batches, without updating.
pub fn evaluate<T: Real>(net: &Network<T>, data: &TrainingSet<T>, batch_size: usize) -> Result<f64, NnError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        total += loss_bce(&net.forward(&x)?, &y)? * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Epoch loop with per-epoch shuffles drawn from `config.seed`. The epoch
/// loss is the sample-weighted mean of the pre-update batch losses. Epoch
/// numbering continues from `first_epoch` so resumed runs keep their shuffles.
pub fn train<T: Real>(
    net: &mut Network<T>,
    data: &TrainingSet<T>,
    config: &TrainConfig,
    first_epoch: usize,
    mut on_epoch: impl FnMut(&EpochLog, &Network<T>),
) -> Result<TrainReport, NnError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NnError::InvalidConfig("empty training set".into()));
    }
    if data.size != net.spec.input_size {
        return Err(NnError::ShapeMismatch { expected: [1, 1, net.spec.input_size, net.spec.input_size], got: [1, 1, data.size, data.size] });
    }
    let start = Instant::now();
    let mut epochs = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    let mut stop = StopReason::MaxEpochs;
    for epoch in first_epoch..first_epoch + config.max_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut sample_stream(config.seed, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = data.batch(chunk);
            total += net.backward_and_step(&x, &y, &config.adam)? * chunk.len() as f64;
        }
        let loss = total / data.len() as f64;
        if loss < best - config.plateau_tolerance {
            best_at = epoch;
        }
        best = best.min(loss);
        let log = EpochLog { epoch, loss, best, wall_seconds: start.elapsed().as_secs_f64() };
        on_epoch(&log, net);
        epochs.push(log);
        if config.plateau_window > 0 && epoch - best_at >= config.plateau_window {
            stop = StopReason::Plateau;
            break;
        }
    }
    Ok(TrainReport { epochs, stop })
}
