use crate::error::{Error, Result};
use crate::networks::NamedParams;
use crate::tensor::Tensor;

/// Step size, decay rates and denominator guard of the optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

/// First and second moment estimates, one tensor per parameter in visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamMoments {
    pub fn zeros_like<P: NamedParams<Tensor>>(params: &P) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(Tensor::zeros(t.shape())));
        AdamMoments { v: m.clone(), m }
    }
}

/// Bias-corrected update of one tensor at 1-based step `t`.
pub fn adam_tensor(theta: &mut [f32], grad: &[f32], m: &mut [f32], v: &mut [f32], t: u64, cfg: &AdamConfig) {
    let c1 = (1.0 - f64::from(cfg.beta1).powf(t as f64)) as f32;
    let c2 = (1.0 - f64::from(cfg.beta2).powf(t as f64)) as f32;
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Applies one optimizer step to every tensor of `params`. `grads` must
/// share the parameter layout; `t` is the 1-based step count.
pub fn adam_update<P, G>(params: &mut P, grads: &G, moments: &mut AdamMoments, t: u64, cfg: &AdamConfig) -> Result<()>
where
    P: NamedParams<Tensor>,
    G: NamedParams<Tensor>,
{
    let mut flat = Vec::new();
    grads.visit("", &mut |_, g| flat.push(g));
    let mut shapes = Vec::new();
    params.visit("", &mut |name, p| shapes.push((name, p.shape())));
    if flat.len() != shapes.len() || moments.m.len() != shapes.len() || moments.v.len() != shapes.len() {
        return Err(Error::dim(
            "parameters",
            format!(
                "{} parameters, {} gradients, {}/{} moments",
                shapes.len(),
                flat.len(),
                moments.m.len(),
                moments.v.len()
            ),
        ));
    }
    for (i, (name, shape)) in shapes.iter().enumerate() {
        if flat[i].shape() != *shape || moments.m[i].shape() != *shape || moments.v[i].shape() != *shape {
            return Err(Error::dim(name.clone(), "parameter, gradient and moment shapes differ"));
        }
    }
    let mut i = 0;
    params.visit_mut("", &mut |_, p| {
        adam_tensor(
            p.data_mut(),
            flat[i].data(),
            moments.m[i].data_mut(),
            moments.v[i].data_mut(),
            t,
            cfg,
        );
        i += 1;
    });
    Ok(())
}
