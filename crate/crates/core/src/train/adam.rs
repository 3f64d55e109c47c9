use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `value` in place. `t` is the 1-based
/// step number.
pub fn adam_step(
    value: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    lr: f64,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("Adam step counter starts at 1".into()));
    }
    if value.len() != grad.len() || m.len() != grad.len() || v.len() != grad.len() {
        return Err(Error::shape("adam_step", format!("{} values, {} grads", value.len(), grad.len())));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "adam_step" });
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        value[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam with separate learning rates for body and head parameters and
/// optional global-norm gradient clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub lr_body: f64,
    pub lr_head: f64,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer {
            lr_body: 1e-3,
            lr_head: 1e-3,
            adam: AdamConfig::default(),
            clip_norm: None,
        }
    }
}

impl Optimizer {
    /// Applies one step. `grads[i]` is the gradient of parameter `i`;
    /// parameters with `None` are left untouched, moments included.
    pub fn step(&self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape("optimizer", format!("{} grads for {} params", grads.len(), store.len())));
        }
        let mut scale = 1.0;
        if let Some(max) = self.clip_norm {
            let norm = grads
                .iter()
                .flatten()
                .flat_map(|g| g.data())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if norm > max {
                scale = max / norm;
            }
        }
        store.step += 1;
        let t = store.step;
        let precision = store.precision;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = store.get_mut(i);
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("{}: grad {:?} vs value {:?}", p.name, g.shape(), p.value.shape()),
                ));
            }
            let lr = match p.group {
                ParamGroup::Body => self.lr_body,
                ParamGroup::Head => self.lr_head,
            };
            let scaled: Vec<f64>;
            let gd = if scale != 1.0 {
                scaled = g.data().iter().map(|x| x * scale).collect();
                &scaled[..]
            } else {
                g.data()
            };
            adam_step(p.value.data_mut(), p.m.data_mut(), p.v.data_mut(), gd, lr, t, &self.adam)?;
            p.value.data_mut().iter_mut().for_each(|x| *x = precision.round(*x));
        }
        Ok(())
    }
}
