//! Parameter containers, generic over the stored value so the same layout
//! holds tensors at rest and graph handles during a forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::config::ModelConfig;

/// Number of residual blocks in the generator and decoder.
pub const RESIDUAL_BLOCKS: usize = 12;

/// Standard deviation of the zero-mean normal used for conv weights.
pub const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub weight: T,
    pub bias: T,
}

/// Affine parameters of an instance-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gamma: T,
    pub beta: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNorm<T> {
    pub conv: Conv<T>,
    pub norm: Norm<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub first: ConvNorm<T>,
    pub second: ConvNorm<T>,
}

/// Layer inventory shared by the generator and the decoder: a three-layer
/// encoder, a merge projection, the residual stack, two upsampling stages
/// and a 7x7 head.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorNet<T> {
    pub encoder: Vec<ConvNorm<T>>,
    pub merge: Conv<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub up: Vec<ConvNorm<T>>,
    pub head: ConvNorm<T>,
}

/// Generator `G`: the merge layer also consumes the condition cube.
pub type GeneratorParams = TranslatorNet<Tensor>;

/// Decoder `F`: same pipeline without condition channels.
pub type DecoderParams = TranslatorNet<Tensor>;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscStage<T> {
    pub conv: Conv<T>,
    pub norm: Option<Norm<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub stages: Vec<DiscStage<T>>,
    pub head: Conv<T>,
}

pub type DiscriminatorParams = Discriminator<Tensor>;

/// Visits every parameter with its stable name, in a fixed order.
pub trait NamedParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T));
    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Self::Mapped<U>;

    type Mapped<U>;
}

impl<T> NamedParams<T> for Conv<T> {
    type Mapped<U> = Conv<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Conv<U> {
        Conv {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> NamedParams<T> for Norm<T> {
    type Mapped<U> = Norm<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Norm<U> {
        Norm {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }
}

impl<T> NamedParams<T> for ConvNorm<T> {
    type Mapped<U> = ConvNorm<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.norm.visit(&format!("{prefix}.norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        self.conv.visit_mut(&format!("{prefix}.conv"), f);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ConvNorm<U> {
        ConvNorm {
            conv: self.conv.map(f),
            norm: self.norm.map(f),
        }
    }
}

impl<T> NamedParams<T> for ResidualBlock<T> {
    type Mapped<U> = ResidualBlock<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.first.visit(&format!("{prefix}.0"), f);
        self.second.visit(&format!("{prefix}.1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        self.first.visit_mut(&format!("{prefix}.0"), f);
        self.second.visit_mut(&format!("{prefix}.1"), f);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ResidualBlock<U> {
        ResidualBlock {
            first: self.first.map(f),
            second: self.second.map(f),
        }
    }
}

impl<T> NamedParams<T> for TranslatorNet<T> {
    type Mapped<U> = TranslatorNet<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit(&format!("{prefix}.encoder.{i}"), f);
        }
        self.merge.visit(&format!("{prefix}.merge"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.res.{i}"), f);
        }
        for (i, l) in self.up.iter().enumerate() {
            l.visit(&format!("{prefix}.up.{i}"), f);
        }
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.encoder.{i}"), f);
        }
        self.merge.visit_mut(&format!("{prefix}.merge"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.res.{i}"), f);
        }
        for (i, l) in self.up.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.up.{i}"), f);
        }
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> TranslatorNet<U> {
        TranslatorNet {
            encoder: self.encoder.iter().map(|l| l.map(f)).collect(),
            merge: self.merge.map(f),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            up: self.up.iter().map(|l| l.map(f)).collect(),
            head: self.head.map(f),
        }
    }
}

impl<T> NamedParams<T> for Discriminator<T> {
    type Mapped<U> = Discriminator<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.conv.visit(&format!("{prefix}.stage.{i}.conv"), f);
            if let Some(n) = &s.norm {
                n.visit(&format!("{prefix}.stage.{i}.norm"), f);
            }
        }
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.conv.visit_mut(&format!("{prefix}.stage.{i}.conv"), f);
            if let Some(n) = &mut s.norm {
                n.visit_mut(&format!("{prefix}.stage.{i}.norm"), f);
            }
        }
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Discriminator<U> {
        Discriminator {
            stages: self
                .stages
                .iter()
                .map(|s| DiscStage {
                    conv: s.conv.map(f),
                    norm: s.norm.as_ref().map(|n| n.map(f)),
                })
                .collect(),
            head: self.head.map(f),
        }
    }
}

/// Flattens a parameter set into `(name, value)` pairs in visit order.
pub fn named_tensors<'a, P: NamedParams<Tensor>>(params: &'a P, prefix: &str) -> Vec<(String, &'a Tensor)> {
    let mut out = Vec::new();
    params.visit(prefix, &mut |name, t| out.push((name, t)));
    out
}

pub fn parameter_count<P: NamedParams<Tensor>>(params: &P) -> usize {
    let mut total = 0;
    params.visit("", &mut |_, t| total += t.numel());
    total
}

/// Records every tensor of `params` on `graph` as a trainable leaf or a
/// constant, returning the same layout with graph handles.
pub fn bind<P>(params: &P, graph: &mut Graph, trainable: bool) -> P::Mapped<Var>
where
    P: NamedParams<Tensor>,
{
    params.map(&mut |t| graph.leaf(t.clone(), trainable))
}

/// Collects gradients for a bound parameter set, zero where none arrived.
pub fn gradients<P>(bound: &P, graph: &Graph) -> P::Mapped<Tensor>
where
    P: NamedParams<Var>,
{
    bound.map(&mut |&v| graph.grad(v).unwrap_or_else(|| Tensor::zeros(graph.value(v).shape())))
}

/// All three networks trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub generator: GeneratorParams,
    pub decoder: DecoderParams,
    pub discriminator: DiscriminatorParams,
}

impl ModelParams {
    pub const GENERATOR: &'static str = "G";
    pub const DECODER: &'static str = "F";
    pub const DISCRIMINATOR: &'static str = "D";

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = named_tensors(&self.generator, Self::GENERATOR);
        out.extend(named_tensors(&self.decoder, Self::DECODER));
        out.extend(named_tensors(&self.discriminator, Self::DISCRIMINATOR));
        out
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.generator) + parameter_count(&self.decoder) + parameter_count(&self.discriminator)
    }

    /// Replaces every tensor from `lookup`, checking that shapes agree.
    pub fn load_from(&mut self, lookup: &mut dyn FnMut(&str) -> Option<Tensor>) -> Result<()> {
        let mut failure = None;
        let mut fill = |name: String, slot: &mut Tensor| {
            if failure.is_some() {
                return;
            }
            match lookup(&name) {
                Some(t) if t.shape() == slot.shape() => *slot = t,
                Some(t) => {
                    failure = Some(Error::dim(
                        name.clone(),
                        format!("expected {}, found {}", slot.shape(), t.shape()),
                    ))
                }
                None => failure = Some(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        };
        self.generator.visit_mut(Self::GENERATOR, &mut fill);
        self.decoder.visit_mut(Self::DECODER, &mut fill);
        self.discriminator.visit_mut(Self::DISCRIMINATOR, &mut fill);
        failure.map_or(Ok(()), Err)
    }
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f32>,
}

impl Init {
    fn conv(&mut self, cin: usize, cout: usize, k: usize) -> Conv<Tensor> {
        let shape = Shape::new(cout, cin, k, k);
        let data = (0..shape.numel()).map(|_| self.normal.sample(&mut self.rng)).collect();
        Conv {
            weight: Tensor::from_parts(shape, data),
            bias: Tensor::vector(vec![0.0; cout]),
        }
    }

    fn norm(c: usize) -> Norm<Tensor> {
        Norm {
            gamma: Tensor::vector(vec![1.0; c]),
            beta: Tensor::vector(vec![0.0; c]),
        }
    }

    fn conv_norm(&mut self, cin: usize, cout: usize, k: usize) -> ConvNorm<Tensor> {
        ConvNorm {
            conv: self.conv(cin, cout, k),
            norm: Init::norm(cout),
        }
    }

    fn translator(&mut self, cfg: &ModelConfig, condition_channels: usize) -> TranslatorNet<Tensor> {
        let [e0, e1, e2] = cfg.encoder_widths;
        let [u0, u1] = cfg.up_widths;
        let rw = cfg.residual_width;
        TranslatorNet {
            encoder: vec![self.conv_norm(3, e0, 7), self.conv_norm(e0, e1, 3), self.conv_norm(e1, e2, 3)],
            merge: self.conv(e2 + condition_channels, rw, 3),
            blocks: (0..RESIDUAL_BLOCKS)
                .map(|_| ResidualBlock {
                    first: self.conv_norm(rw, rw, 3),
                    second: self.conv_norm(rw, rw, 3),
                })
                .collect(),
            up: vec![self.conv_norm(rw, u0, 3), self.conv_norm(u0, u1, 3)],
            head: self.conv_norm(u1, 3, 7),
        }
    }

    fn discriminator(&mut self, cfg: &ModelConfig) -> Discriminator<Tensor> {
        let widths = cfg.disc_widths;
        let mut cin = 3 + cfg.occupations;
        let mut stages = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            stages.push(DiscStage {
                conv: self.conv(cin, w, 4),
                norm: (i > 0).then(|| Init::norm(w)),
            });
            cin = w;
        }
        Discriminator {
            stages,
            head: self.conv(cin, 1, 4),
        }
    }
}

/// Draws all three networks from one seeded stream (G, then F, then D).
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        normal: Normal::new(0.0, INIT_STD).expect("valid normal"),
    };
    let generator = init.translator(cfg, cfg.occupations);
    let decoder = init.translator(cfg, 0);
    let discriminator = init.discriminator(cfg);
    Ok(ModelParams {
        generator,
        decoder,
        discriminator,
    })
}
