//! Define-by-run tape with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::kernels::{self, Activation, ConvGeometry, ConvGrads, NormCache, Padding};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Norm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    Upsample {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f32,
    },
    AddScalar {
        input: Var,
    },
    Mean {
        input: Var,
    },
    L1 {
        a: Var,
        b: Var,
    },
    SquaredError {
        input: Var,
        target: f32,
    },
    BatchMean {
        input: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Accumulated gradients of leaves, persisted across `backward` calls.
    leaf_grads: Vec<Option<Vec<f32>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A constant copy of `v`: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeometry::new(
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
            stride,
            padding,
        )?;
        let out = kernels::conv2d_forward(&geom, self.value(input), self.value(weight), self.value(bias));
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let c = self.value(input).shape().c;
        let (gl, bl) = (self.value(gamma).numel(), self.value(beta).numel());
        if gl != c || bl != c {
            return Err(Error::dim(
                "C / gamma / beta",
                format!("input has {c} channels, gamma {gl}, beta {bl}"),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Domain(format!("instance norm eps must be > 0, got {eps}")));
        }
        let (out, cache) = kernels::instance_norm_forward(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::Norm {
                input,
                gamma,
                beta,
                cache,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        if let Activation::LeakyRelu(slope) = kind {
            debug_assert!(slope > 0.0 && slope < 1.0, "leaky slope {slope} outside (0,1)");
        }
        let out = kernels::activation_forward(self.value(input), kind);
        let rg = self.rg(&[input]);
        self.push(out, Op::Act { input, kind }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    pub fn upsample2x(&mut self, input: Var) -> Var {
        let out = kernels::upsample2x_forward(self.value(input));
        let rg = self.rg(&[input]);
        self.push(out, Op::Upsample { input }, rg)
    }

    /// Channel concatenation with `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::dim("N/H/W", format!("cannot concatenate {sa} with {sb}")));
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let (pa, pb) = (sa.c * sa.plane(), sb.c * sb.plane());
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&self.value(a).data()[n * pa..(n + 1) * pa]);
            data.extend_from_slice(&self.value(b).data()[n * pb..(n + 1) * pb]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Concat { a, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim("N/C/H/W", format!("{sa} vs {sb}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.rg(&[input]);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    pub fn add_scalar(&mut self, input: Var, offset: f32) -> Var {
        let out = self.value(input).map(|v| v + offset);
        let rg = self.rg(&[input]);
        self.push(out, Op::AddScalar { input }, rg)
    }

    /// Sum of equally shaped values; `None` for an empty slice.
    pub fn sum(&mut self, vars: &[Var]) -> Result<Option<Var>> {
        let mut iter = vars.iter().copied();
        let Some(mut acc) = iter.next() else {
            return Ok(None);
        };
        for v in iter {
            acc = self.add(acc, v)?;
        }
        Ok(Some(acc))
    }

    /// Mean over every element, as a scalar.
    pub fn mean(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).mean());
        let rg = self.rg(&[input]);
        self.push(out, Op::Mean { input }, rg)
    }

    /// Mean absolute difference, as a scalar.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let d = self.value(a).mean_abs_diff(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(d), Op::L1 { a, b }, rg))
    }

    /// Mean of `(x - target)^2`, as a scalar.
    pub fn squared_error(&mut self, input: Var, target: f32) -> Var {
        let t = self.value(input);
        let sum: f64 = t.data().iter().map(|&v| ((v - target) as f64).powi(2)).sum();
        let out = Tensor::scalar((sum / t.numel() as f64) as f32);
        let rg = self.rg(&[input]);
        self.push(out, Op::SquaredError { input, target }, rg)
    }

    /// Mean over the batch axis, producing an `N = 1` tensor.
    pub fn batch_mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let s = t.shape();
        let per = s.c * s.plane();
        let mut acc = vec![0.0f64; per];
        for sample in t.data().chunks_exact(per) {
            for (a, &v) in acc.iter_mut().zip(sample) {
                *a += v as f64;
            }
        }
        let data = acc.into_iter().map(|v| (v / s.n as f64) as f32).collect();
        let out = Tensor::from_parts(Shape::new(1, s.c, s.h, s.w), data);
        let rg = self.rg(&[input]);
        self.push(out, Op::BatchMean { input }, rg)
    }

    /// Accumulated gradient of a leaf, if it received any.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.leaf_grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.nodes[v.0].value.shape(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Back-propagates from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape.numel() != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {shape}")));
        }
        self.sweep(loss, vec![1.0]);
        Ok(())
    }

    /// Vector-Jacobian product: back-propagates an explicit upstream
    /// gradient `seed` from a tensor-valued `output`.
    pub fn backward_with_seed(&mut self, output: Var, seed: &Tensor) -> Result<()> {
        let shape = self.value(output).shape();
        if seed.shape() != shape {
            return Err(Error::dim(
                "seed",
                format!("seed shape {} does not match output {shape}", seed.shape()),
            ));
        }
        self.sweep(output, seed.data().to_vec());
        Ok(())
    }

    fn sweep(&mut self, root: Var, seed: Vec<f32>) {
        if !self.nodes[root.0].requires_grad {
            return;
        }
        let mut pending: Vec<Option<Vec<f32>>> = vec![None; root.0 + 1];
        pending[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(grad) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                accumulate(&mut self.leaf_grads, idx, grad);
                continue;
            }
            self.propagate(idx, &grad, &mut pending);
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn zeros_for(&self, v: Var) -> Option<Vec<f32>> {
        self.wants(v).then(|| vec![0.0; self.nodes[v.0].value.numel()])
    }

    fn propagate(&self, idx: usize, grad: &[f32], pending: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => unreachable!("leaves are handled by the caller"),
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            } => {
                let mut gi = self.zeros_for(*input);
                let mut gw = self.zeros_for(*weight);
                let mut gb = self.zeros_for(*bias);
                kernels::conv2d_backward(
                    geom,
                    self.value(*input),
                    self.value(*weight),
                    grad,
                    ConvGrads {
                        input: gi.as_deref_mut(),
                        weight: gw.as_deref_mut(),
                        bias: gb.as_deref_mut(),
                    },
                );
                send(pending, *input, gi);
                send(pending, *weight, gw);
                send(pending, *bias, gb);
            }
            Op::Norm {
                input,
                gamma,
                beta,
                cache,
            } => {
                let mut gi = self.zeros_for(*input);
                let mut gg = self.zeros_for(*gamma);
                let mut gb = self.zeros_for(*beta);
                kernels::instance_norm_backward(
                    node.value.shape(),
                    cache,
                    self.value(*gamma).data(),
                    grad,
                    gi.as_deref_mut(),
                    gg.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                send(pending, *input, gi);
                send(pending, *gamma, gg);
                send(pending, *beta, gb);
            }
            Op::Act { input, kind } => {
                if let Some(mut gi) = self.zeros_for(*input) {
                    kernels::activation_backward(*kind, self.value(*input).data(), node.value.data(), grad, &mut gi);
                    send(pending, *input, Some(gi));
                }
            }
            Op::Upsample { input } => {
                if let Some(mut gi) = self.zeros_for(*input) {
                    kernels::upsample2x_backward(self.value(*input).shape(), grad, &mut gi);
                    send(pending, *input, Some(gi));
                }
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (pa, pb) = (sa.c * sa.plane(), sb.c * sb.plane());
                let split = |first: bool| -> Vec<f32> {
                    let mut out = Vec::with_capacity(if first { pa } else { pb } * sa.n);
                    for chunk in grad.chunks_exact(pa + pb) {
                        out.extend_from_slice(if first { &chunk[..pa] } else { &chunk[pa..] });
                    }
                    out
                };
                if self.wants(*a) {
                    send(pending, *a, Some(split(true)));
                }
                if self.wants(*b) {
                    send(pending, *b, Some(split(false)));
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    send(pending, *a, Some(grad.to_vec()));
                }
                if self.wants(*b) {
                    send(pending, *b, Some(grad.to_vec()));
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    send(pending, *a, Some(grad.to_vec()));
                }
                if self.wants(*b) {
                    send(pending, *b, Some(grad.iter().map(|g| -g).collect()));
                }
            }
            Op::Scale { input, factor } => {
                send(pending, *input, Some(grad.iter().map(|g| g * factor).collect()));
            }
            Op::AddScalar { input } => {
                send(pending, *input, Some(grad.to_vec()));
            }
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                send(pending, *input, Some(vec![grad[0] / n as f32; n]));
            }
            Op::L1 { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let scale = grad[0] / va.len() as f32;
                let signs: Vec<f32> = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| {
                        let d = x - y;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.wants(*b) {
                    send(pending, *b, Some(signs.iter().map(|g| -g).collect()));
                }
                if self.wants(*a) {
                    send(pending, *a, Some(signs));
                }
            }
            Op::SquaredError { input, target } => {
                let v = self.value(*input).data();
                let scale = 2.0 * grad[0] / v.len() as f32;
                send(pending, *input, Some(v.iter().map(|x| scale * (x - target)).collect()));
            }
            Op::BatchMean { input } => {
                let s = self.value(*input).shape();
                let inv = 1.0 / s.n as f32;
                let mut gi = Vec::with_capacity(s.numel());
                for _ in 0..s.n {
                    gi.extend(grad.iter().map(|g| g * inv));
                }
                send(pending, *input, Some(gi));
            }
        }
    }
}

fn accumulate(slots: &mut [Option<Vec<f32>>], idx: usize, grad: Vec<f32>) {
    match &mut slots[idx] {
        Some(existing) => existing.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(grad),
    }
}

fn send(pending: &mut [Option<Vec<f32>>], v: Var, grad: Option<Vec<f32>>) {
    if let Some(g) = grad {
        accumulate(pending, v.0, g);
    }
}
