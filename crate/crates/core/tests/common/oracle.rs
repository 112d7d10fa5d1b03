//! Independent `f64` reference implementations and a finite-difference
//! harness. Nothing here calls into the engine's kernels.

#![allow(dead_code)]

use oafa_core::{Graph, Padding, Result, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Ref {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Ref {
    pub fn from_tensor(t: &Tensor) -> Ref {
        Ref {
            dims: t.shape().dims(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn zeros(dims: [usize; 4]) -> Ref {
        Ref {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Ref {
        Ref {
            dims: [1, 1, 1, 1],
            data: vec![v],
        }
    }

    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, h, w] = self.dims;
        ((n * cc + c) * h + y) * w + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Random values with magnitude at least `gap`, keeping kinks out of reach
/// of the finite-difference step.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: Shape, gap: f32) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.random_range(gap..1.0f32);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Naive nested-loop cross-correlation over an explicitly padded copy.
pub fn conv2d_ref(x: &Ref, w: &Ref, b: &Ref, stride: usize, padding: Padding) -> Ref {
    let [n, cin, h, wd] = x.dims;
    let [cout, _, k, _] = w.dims;
    let (pad, reflect) = match padding {
        Padding::Zero(p) => (p, false),
        Padding::Reflect(p) => (p, true),
    };
    let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
    let mut padded = Ref::zeros([n, cin, ph, pw]);
    for ni in 0..n {
        for c in 0..cin {
            for y in 0..ph {
                for xx in 0..pw {
                    let sy = y as i64 - pad as i64;
                    let sx = xx as i64 - pad as i64;
                    let v = if reflect {
                        let ry = mirror(sy, h as i64);
                        let rx = mirror(sx, wd as i64);
                        x.get(ni, c, ry, rx)
                    } else if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                        x.get(ni, c, sy as usize, sx as usize)
                    } else {
                        0.0
                    };
                    padded.set(ni, c, y, xx, v);
                }
            }
        }
    }
    let oh = (ph - k) / stride + 1;
    let ow = (pw - k) / stride + 1;
    let mut out = Ref::zeros([n, cout, oh, ow]);
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += w.get(co, ci, ky, kx) * padded.get(ni, ci, oy * stride + ky, ox * stride + kx);
                            }
                        }
                    }
                    out.set(ni, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

fn mirror(i: i64, len: i64) -> usize {
    let r = if i < 0 {
        -i
    } else if i >= len {
        2 * len - 2 - i
    } else {
        i
    };
    r as usize
}

pub fn instance_norm_ref(x: &Ref, gamma: &Ref, beta: &Ref, eps: f64) -> Ref {
    let [n, c, h, w] = x.dims;
    let mut out = Ref::zeros(x.dims);
    let count = (h * w) as f64;
    for ni in 0..n {
        for ci in 0..c {
            let mut mean = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    mean += x.get(ni, ci, y, xx);
                }
            }
            mean /= count;
            let mut var = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    var += (x.get(ni, ci, y, xx) - mean).powi(2);
                }
            }
            var /= count;
            for y in 0..h {
                for xx in 0..w {
                    let v = (x.get(ni, ci, y, xx) - mean) / (var + eps).sqrt();
                    out.set(ni, ci, y, xx, gamma.data[ci] * v + beta.data[ci]);
                }
            }
        }
    }
    out
}

pub fn map_ref(x: &Ref, f: impl Fn(f64) -> f64) -> Ref {
    Ref {
        dims: x.dims,
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

/// Scalar-loop bilinear 2x upsampling with half-pixel centres and edge clamp.
pub fn upsample_ref(x: &Ref) -> Ref {
    let [n, c, h, w] = x.dims;
    let mut out = Ref::zeros([n, c, 2 * h, 2 * w]);
    let coord = |o: usize, len: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0).min((len - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, s - lo as f64)
    };
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..2 * h {
                let (y0, y1, fy) = coord(oy, h);
                for ox in 0..2 * w {
                    let (x0, x1, fx) = coord(ox, w);
                    let v = (1.0 - fy) * ((1.0 - fx) * x.get(ni, ci, y0, x0) + fx * x.get(ni, ci, y0, x1))
                        + fy * ((1.0 - fx) * x.get(ni, ci, y1, x0) + fx * x.get(ni, ci, y1, x1));
                    out.set(ni, ci, oy, ox, v);
                }
            }
        }
    }
    out
}

pub fn concat_ref(a: &Ref, b: &Ref) -> Ref {
    let [n, ca, h, w] = a.dims;
    let cb = b.dims[1];
    let mut out = Ref::zeros([n, ca + cb, h, w]);
    for ni in 0..n {
        for c in 0..ca + cb {
            for y in 0..h {
                for x in 0..w {
                    let v = if c < ca { a.get(ni, c, y, x) } else { b.get(ni, c - ca, y, x) };
                    out.set(ni, c, y, x, v);
                }
            }
        }
    }
    out
}

pub fn batch_mean_ref(x: &Ref) -> Ref {
    let [n, c, h, w] = x.dims;
    let mut out = Ref::zeros([1, c, h, w]);
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let s: f64 = (0..n).map(|ni| x.get(ni, ci, y, xx)).sum();
                out.set(0, ci, y, xx, s / n as f64);
            }
        }
    }
    out
}

pub fn mean_ref(x: &Ref) -> Ref {
    Ref::scalar(x.data.iter().sum::<f64>() / x.data.len() as f64)
}

pub fn l1_ref(a: &Ref, b: &Ref) -> Ref {
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ref::scalar(s / a.data.len() as f64)
}

pub fn squared_error_ref(x: &Ref, target: f64) -> Ref {
    let s: f64 = x.data.iter().map(|v| (v - target).powi(2)).sum();
    Ref::scalar(s / x.data.len() as f64)
}

pub const FD_STEP: f64 = 1e-3;

/// Central-difference vector-Jacobian product of `f` at `inputs` with
/// upstream weights `seed`.
pub fn finite_difference_vjp(inputs: &[Tensor], seed: &[f64], f: &dyn Fn(&[Ref]) -> Ref) -> Vec<Vec<f64>> {
    let base: Vec<Ref> = inputs.iter().map(Ref::from_tensor).collect();
    let objective = |args: &[Ref]| -> f64 {
        let out = f(args);
        assert_eq!(out.data.len(), seed.len());
        out.data.iter().zip(seed).map(|(o, s)| o * s).sum()
    };
    let mut grads = Vec::with_capacity(inputs.len());
    for which in 0..base.len() {
        let mut g = vec![0.0; base[which].data.len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut args = base.clone();
            args[which].data[i] += FD_STEP;
            let plus = objective(&args);
            args[which].data[i] -= 2.0 * FD_STEP;
            let minus = objective(&args);
            *gi = (plus - minus) / (2.0 * FD_STEP);
        }
        grads.push(g);
    }
    grads
}

/// Engine forward value and vector-Jacobian product for every input.
pub fn engine_vjp(
    inputs: &[Tensor],
    seed: &[f64],
    build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> (Tensor, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let value = g.value(out).clone();
    let seed_t = Tensor::new(value.shape(), seed.iter().map(|&v| v as f32).collect()).unwrap();
    g.backward_with_seed(out, &seed_t).unwrap();
    let grads = vars
        .iter()
        .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();
    (value, grads)
}

/// `max |analytic - numeric| / max |numeric|` over one gradient buffer.
pub fn relative_deviation(analytic: &Tensor, numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let worst = analytic
        .data()
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((*a as f64 - n).abs()));
    worst / scale
}

pub fn random_seed_vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub type EngineFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
pub type ReferenceFn = Box<dyn Fn(&[Ref]) -> Ref>;

/// One primitive under gradient test: an engine builder and its reference.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub engine: EngineFn,
    pub reference: ReferenceFn,
}

/// Worst relative deviation across all inputs of a case, for one seed vector.
pub fn check_case(case: &GradCase, rng: &mut ChaCha8Rng) -> f64 {
    let out_len = (case.reference)(&case.inputs.iter().map(Ref::from_tensor).collect::<Vec<_>>())
        .data
        .len();
    let seed = random_seed_vector(rng, out_len);
    let (_, analytic) = engine_vjp(&case.inputs, &seed, &*case.engine);
    let numeric = finite_difference_vjp(&case.inputs, &seed, &*case.reference);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_deviation(a, n))
        .fold(0.0, f64::max)
}

/// The standard battery of primitive cases on random `2x3x4x4` inputs.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    use oafa_core::Activation;
    let mut r = rng(seed);
    let x_shape = Shape::new(2, 3, 4, 4);
    let mut cases = Vec::new();

    // Narrow stride-1 convolutions take the direct kernel, the rest im2col.
    for (name, cout, k, stride, padding) in [
        ("conv2d 3x3 s1 zero(1)", 2, 3, 1, Padding::Zero(1)),
        ("conv2d 3x3 s1 reflect(1) wide", 6, 3, 1, Padding::Reflect(1)),
        ("conv2d 3x3 s2 reflect(1)", 2, 3, 2, Padding::Reflect(1)),
        ("conv2d 4x4 s2 zero(1)", 5, 4, 2, Padding::Zero(1)),
    ] {
        let x = random_tensor(&mut r, x_shape, -1.0, 1.0);
        let w = random_tensor(&mut r, Shape::new(cout, 3, k, k), -0.5, 0.5);
        let b = Tensor::vector((0..cout).map(|_| r.random_range(-0.5..0.5)).collect());
        cases.push(GradCase {
            name,
            inputs: vec![x, w, b],
            engine: Box::new(move |g, v| g.conv2d(v[0], v[1], v[2], stride, padding)),
            reference: Box::new(move |a| conv2d_ref(&a[0], &a[1], &a[2], stride, padding)),
        });
    }

    // Discriminator tail geometry: a 4x4 kernel over a 2x2 map, where some
    // taps never touch the interior.
    for (name, cout) in [("conv2d 4x4 s1 zero(1) tiny", 2), ("conv2d 4x4 s1 zero(1) tiny wide", 6)] {
        let x = random_tensor(&mut r, Shape::new(2, 3, 2, 2), -1.0, 1.0);
        let w = random_tensor(&mut r, Shape::new(cout, 3, 4, 4), -0.5, 0.5);
        let b = Tensor::vector((0..cout).map(|_| r.random_range(-0.5..0.5)).collect());
        cases.push(GradCase {
            name,
            inputs: vec![x, w, b],
            engine: Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, Padding::Zero(1))),
            reference: Box::new(|a| conv2d_ref(&a[0], &a[1], &a[2], 1, Padding::Zero(1))),
        });
    }

    let x = random_tensor(&mut r, x_shape, -1.0, 1.0);
    let gamma = Tensor::vector((0..3).map(|_| r.random_range(0.5..1.5)).collect());
    let beta = Tensor::vector((0..3).map(|_| r.random_range(-0.5..0.5)).collect());
    cases.push(GradCase {
        name: "instance_norm",
        inputs: vec![x, gamma, beta],
        engine: Box::new(|g, v| g.instance_norm(v[0], v[1], v[2], 1e-5)),
        reference: Box::new(|a| instance_norm_ref(&a[0], &a[1], &a[2], 1e-5)),
    });

    let gap = 0.05;
    cases.push(GradCase {
        name: "relu",
        inputs: vec![random_away_from_zero(&mut r, x_shape, gap)],
        engine: Box::new(|g, v| Ok(g.activation(v[0], Activation::Relu))),
        reference: Box::new(|a| map_ref(&a[0], |v| v.max(0.0))),
    });
    cases.push(GradCase {
        name: "leaky_relu(0.2)",
        inputs: vec![random_away_from_zero(&mut r, x_shape, gap)],
        engine: Box::new(|g, v| Ok(g.activation(v[0], Activation::LeakyRelu(0.2)))),
        reference: Box::new(|a| map_ref(&a[0], |v| if v > 0.0 { v } else { 0.2 * v })),
    });
    cases.push(GradCase {
        name: "tanh",
        inputs: vec![random_tensor(&mut r, x_shape, -2.0, 2.0)],
        engine: Box::new(|g, v| Ok(g.activation(v[0], Activation::Tanh))),
        reference: Box::new(|a| map_ref(&a[0], f64::tanh)),
    });
    cases.push(GradCase {
        name: "bilinear_upsample2x",
        inputs: vec![random_tensor(&mut r, x_shape, -1.0, 1.0)],
        engine: Box::new(|g, v| Ok(g.upsample2x(v[0]))),
        reference: Box::new(|a| upsample_ref(&a[0])),
    });
    cases.push(GradCase {
        name: "concat_channels",
        inputs: vec![
            random_tensor(&mut r, x_shape, -1.0, 1.0),
            random_tensor(&mut r, Shape::new(2, 2, 4, 4), -1.0, 1.0),
        ],
        engine: Box::new(|g, v| g.concat_channels(v[0], v[1])),
        reference: Box::new(|a| concat_ref(&a[0], &a[1])),
    });
    cases.push(GradCase {
        name: "add",
        inputs: vec![random_tensor(&mut r, x_shape, -1.0, 1.0), random_tensor(&mut r, x_shape, -1.0, 1.0)],
        engine: Box::new(|g, v| g.add(v[0], v[1])),
        reference: Box::new(|a| Ref {
            dims: a[0].dims,
            data: a[0].data.iter().zip(&a[1].data).map(|(x, y)| x + y).collect(),
        }),
    });
    cases.push(GradCase {
        name: "sub",
        inputs: vec![random_tensor(&mut r, x_shape, -1.0, 1.0), random_tensor(&mut r, x_shape, -1.0, 1.0)],
        engine: Box::new(|g, v| g.sub(v[0], v[1])),
        reference: Box::new(|a| Ref {
            dims: a[0].dims,
            data: a[0].data.iter().zip(&a[1].data).map(|(x, y)| x - y).collect(),
        }),
    });
    cases.push(GradCase {
        name: "scale + add_scalar",
        inputs: vec![random_tensor(&mut r, x_shape, -1.0, 1.0)],
        engine: Box::new(|g, v| {
            let s = g.scale(v[0], -1.7);
            Ok(g.add_scalar(s, 0.3))
        }),
        reference: Box::new(|a| map_ref(&a[0], |v| -1.7 * v + 0.3)),
    });
    cases.push(GradCase {
        name: "batch_mean",
        inputs: vec![random_tensor(&mut r, x_shape, -1.0, 1.0)],
        engine: Box::new(|g, v| Ok(g.batch_mean(v[0]))),
        reference: Box::new(|a| batch_mean_ref(&a[0])),
    });
    cases.push(GradCase {
        name: "reduce mean",
        inputs: vec![random_tensor(&mut r, x_shape, -1.0, 1.0)],
        engine: Box::new(|g, v| Ok(g.mean(v[0]))),
        reference: Box::new(|a| mean_ref(&a[0])),
    });
    let a = random_tensor(&mut r, x_shape, -1.0, 1.0);
    let offset = random_away_from_zero(&mut r, x_shape, gap);
    let b = Tensor::new(
        x_shape,
        a.data().iter().zip(offset.data()).map(|(x, d)| x + d).collect(),
    )
    .unwrap();
    cases.push(GradCase {
        name: "reduce l1_distance",
        inputs: vec![a, b],
        engine: Box::new(|g, v| g.l1_distance(v[0], v[1])),
        reference: Box::new(|a| l1_ref(&a[0], &a[1])),
    });
    let target = r.random_range(-1.0..1.0f32);
    cases.push(GradCase {
        name: "reduce squared_error",
        inputs: vec![random_tensor(&mut r, x_shape, -1.0, 1.0)],
        engine: Box::new(move |g, v| Ok(g.squared_error(v[0], target))),
        reference: Box::new(move |a| squared_error_ref(&a[0], target as f64)),
    });
    cases
}
