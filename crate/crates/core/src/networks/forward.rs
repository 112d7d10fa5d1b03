use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::params::{bind, Conv, ConvNorm, Discriminator, DiscriminatorParams, GeneratorParams, DecoderParams, TranslatorNet};

pub const NORM_EPS: f32 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.2;

/// A 1-based occupation index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Occupation(usize);

impl Occupation {
    pub fn new(index: usize, count: usize) -> Result<Self> {
        if index == 0 || index > count {
            return Err(Error::Domain(format!(
                "occupation index {index} outside 1..={count}"
            )));
        }
        Ok(Occupation(index))
    }

    /// All occupations `1..=count`.
    pub fn all(count: usize) -> impl Iterator<Item = Occupation> {
        (1..=count).map(Occupation)
    }

    pub fn index(self) -> usize {
        self.0
    }

    /// Zero-based channel of this occupation in a condition cube.
    pub fn channel(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-hot occupation label broadcast over a spatial grid, with the hot
/// channel at +1 and every other channel at -1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionCube {
    pub occupation: Occupation,
    pub tensor: Tensor,
}

pub fn make_condition_cube(p: usize, count: usize, h: usize, w: usize) -> Result<ConditionCube> {
    condition_cube_batch(p, count, 1, h, w)
}

pub fn condition_cube_batch(p: usize, count: usize, n: usize, h: usize, w: usize) -> Result<ConditionCube> {
    let occupation = Occupation::new(p, count)?;
    let shape = Shape::new(n, count, h, w);
    let mut tensor = Tensor::full(shape, -1.0);
    let plane = h * w;
    for sample in tensor.data_mut().chunks_exact_mut(count * plane) {
        sample[occupation.channel() * plane..(occupation.channel() + 1) * plane].fill(1.0);
    }
    Ok(ConditionCube { occupation, tensor })
}

fn conv(g: &mut Graph, c: &Conv<Var>, x: Var, stride: usize, padding: Padding) -> Result<Var> {
    g.conv2d(x, c.weight, c.bias, stride, padding)
}

fn conv_norm(g: &mut Graph, l: &ConvNorm<Var>, x: Var, stride: usize, padding: Padding) -> Result<Var> {
    let y = conv(g, &l.conv, x, stride, padding)?;
    g.instance_norm(y, l.norm.gamma, l.norm.beta, NORM_EPS)
}

fn conv_norm_relu(g: &mut Graph, l: &ConvNorm<Var>, x: Var, stride: usize, padding: Padding) -> Result<Var> {
    let y = conv_norm(g, l, x, stride, padding)?;
    Ok(g.relu(y))
}

fn reflect_pad(kernel: &Tensor) -> Padding {
    Padding::Reflect(kernel.shape().h / 2)
}

/// Encoder half of a translator network: 7x7 stride 1, then two 3x3 stride 2.
pub fn encode_graph(g: &mut Graph, net: &TranslatorNet<Var>, y: Var) -> Result<Var> {
    let s = g.value(y).shape();
    if !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "input spatial size {}x{} must be divisible by 4",
            s.h, s.w
        )));
    }
    if s.c != 3 {
        return Err(Error::dim("input C", format!("expected 3 channels, got {}", s.c)));
    }
    let strides = [1, 2, 2];
    let mut x = y;
    for (layer, stride) in net.encoder.iter().zip(strides) {
        let pad = reflect_pad(g.value(layer.conv.weight));
        x = conv_norm_relu(g, layer, x, stride, pad)?;
    }
    Ok(x)
}

/// Merge projection before its activation, applied to bottleneck features
/// optionally joined with a condition cube.
pub fn merge_preactivation_graph(g: &mut Graph, net: &TranslatorNet<Var>, features: Var, cube: Option<Var>) -> Result<Var> {
    let x = match cube {
        Some(c) => g.concat_channels(features, c)?,
        None => features,
    };
    conv(g, &net.merge, x, 1, Padding::Reflect(1))
}

/// Everything after the encoder: merge, residual stack, two bilinear
/// upsampling stages and the tanh head.
pub fn decode_graph(g: &mut Graph, net: &TranslatorNet<Var>, features: Var, cube: Option<Var>) -> Result<Var> {
    let merged = merge_preactivation_graph(g, net, features, cube)?;
    let mut x = g.relu(merged);
    for block in &net.blocks {
        let h = conv_norm_relu(g, &block.first, x, 1, Padding::Reflect(1))?;
        let h = conv_norm(g, &block.second, h, 1, Padding::Reflect(1))?;
        x = g.add(x, h)?;
    }
    for layer in &net.up {
        let up = g.upsample2x(x);
        x = conv_norm_relu(g, layer, up, 1, Padding::Reflect(1))?;
    }
    let out = conv_norm(g, &net.head, x, 1, Padding::Reflect(3))?;
    Ok(g.tanh(out))
}

/// `G(y, l^p)`: `cube` must match the bottleneck's batch and spatial size.
pub fn generate_graph(g: &mut Graph, net: &TranslatorNet<Var>, y: Var, cube: Var) -> Result<Var> {
    let features = encode_graph(g, net, y)?;
    decode_graph(g, net, features, Some(cube))
}

/// `F(o)`: the unconditioned translator.
pub fn reconstruct_graph(g: &mut Graph, net: &TranslatorNet<Var>, o: Var) -> Result<Var> {
    let features = encode_graph(g, net, o)?;
    decode_graph(g, net, features, None)
}

/// Patch scores for `image` under a full-resolution condition layer.
pub fn discriminate_graph(g: &mut Graph, net: &Discriminator<Var>, image: Var, condition: Var) -> Result<Var> {
    let strides = [2, 2, 2, 1];
    let mut x = g.concat_channels(image, condition)?;
    for (stage, stride) in net.stages.iter().zip(strides) {
        x = conv(g, &stage.conv, x, stride, Padding::Zero(1))?;
        if let Some(norm) = &stage.norm {
            x = g.instance_norm(x, norm.gamma, norm.beta, NORM_EPS)?;
        }
        x = g.activation(x, Activation::LeakyRelu(LEAKY_SLOPE));
    }
    conv(g, &net.head, x, 1, Padding::Zero(1))
}

/// Kernel/stride chain of the discriminator, input side first.
pub fn discriminator_layers(net: &DiscriminatorParams) -> Vec<(usize, usize)> {
    let strides = [2, 2, 2, 1];
    let mut layers: Vec<(usize, usize)> = net
        .stages
        .iter()
        .zip(strides)
        .map(|(s, stride)| (s.conv.weight.shape().h, stride))
        .collect();
    layers.push((net.head.weight.shape().h, 1));
    layers
}

/// Input pixels seen by one output unit of a stacked conv chain.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    layers
        .iter()
        .rev()
        .fold(1, |field, &(kernel, stride)| (field - 1) * stride + kernel)
}

impl TranslatorNet<Tensor> {
    /// Width of the condition block consumed by the merge layer.
    pub fn condition_channels(&self) -> usize {
        let bottleneck = self.encoder.last().map_or(0, |l| l.conv.weight.shape().n);
        self.merge.weight.shape().c - bottleneck
    }
}

impl Discriminator<Tensor> {
    pub fn condition_channels(&self) -> usize {
        self.stages[0].conv.weight.shape().c - 3
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&discriminator_layers(self))
    }
}

pub fn encode_g1(params: &GeneratorParams, y: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let net = bind(params, &mut g, false);
    let y = g.constant(y.clone());
    let out = encode_graph(&mut g, &net, y)?;
    Ok(g.value(out).clone())
}

fn bottleneck_cube(params: &GeneratorParams, y: Shape, p: usize) -> Result<Tensor> {
    Ok(condition_cube_batch(p, params.condition_channels(), y.n, y.h / 4, y.w / 4)?.tensor)
}

pub fn generate(params: &GeneratorParams, y: &Tensor, p: usize) -> Result<Tensor> {
    let cube = bottleneck_cube(params, y.shape(), p)?;
    let mut g = Graph::new();
    let net = bind(params, &mut g, false);
    let (yv, cv) = (g.constant(y.clone()), g.constant(cube));
    let out = generate_graph(&mut g, &net, yv, cv)?;
    Ok(g.value(out).clone())
}

pub fn reconstruct(params: &DecoderParams, o: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let net = bind(params, &mut g, false);
    let ov = g.constant(o.clone());
    let out = reconstruct_graph(&mut g, &net, ov)?;
    Ok(g.value(out).clone())
}

pub fn discriminate(params: &DiscriminatorParams, image: &Tensor, p: usize) -> Result<Tensor> {
    let s = image.shape();
    let cond = condition_cube_batch(p, params.condition_channels(), s.n, s.h, s.w)?.tensor;
    let mut g = Graph::new();
    let net = bind(params, &mut g, false);
    let (iv, cv) = (g.constant(image.clone()), g.constant(cond));
    let out = discriminate_graph(&mut g, &net, iv, cv)?;
    Ok(g.value(out).clone())
}

/// Merge-layer pre-activation of `G` for condition `p`.
pub fn merge_preactivation(params: &GeneratorParams, y: &Tensor, p: usize) -> Result<Tensor> {
    let cube = bottleneck_cube(params, y.shape(), p)?;
    let mut g = Graph::new();
    let net = bind(params, &mut g, false);
    let (yv, cv) = (g.constant(y.clone()), g.constant(cube));
    let features = encode_graph(&mut g, &net, yv)?;
    let out = merge_preactivation_graph(&mut g, &net, features, Some(cv))?;
    Ok(g.value(out).clone())
}

/// First discriminator stage before normalization and activation.
pub fn discriminator_stage1_preactivation(params: &DiscriminatorParams, image: &Tensor, p: usize) -> Result<Tensor> {
    let s = image.shape();
    let cond = condition_cube_batch(p, params.condition_channels(), s.n, s.h, s.w)?.tensor;
    let mut g = Graph::new();
    let net = bind(params, &mut g, false);
    let (iv, cv) = (g.constant(image.clone()), g.constant(cond));
    let x = g.concat_channels(iv, cv)?;
    let out = conv(&mut g, &net.stages[0].conv, x, 2, Padding::Zero(1))?;
    Ok(g.value(out).clone())
}
