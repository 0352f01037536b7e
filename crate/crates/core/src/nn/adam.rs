use super::{Model, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `value` from `grad`, with step count `t ≥ 1`.
pub fn adam_step(
    value: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    t: u64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..value.len() {
        let g = grad[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[k] / bc1;
        let vhat = v[k] / bc2;
        value[k] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Optimizer state for every parameter of a [`Model`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(model: &Model, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Adam {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the gradients currently stored in the model's parameters.
    pub fn step(&mut self, model: &mut Model) {
        self.t += 1;
        for (k, p) in model.params_mut().iter_mut().enumerate() {
            let grad = p.grad.data().to_vec();
            adam_step(
                p.value.data_mut(),
                &grad,
                self.m[k].data_mut(),
                self.v[k].data_mut(),
                &self.cfg,
                self.t,
            );
        }
    }
}
