use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 5e-3,
            batch_size: 16,
            dropout_rate: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Zero epochs is allowed (no-op training); every rate must be positive.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("train config: {what}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("adam eps must be positive");
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every convolution. Increments
/// `net.step` first, so the first call uses t = 1.
pub fn adam_step<T: Real>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let convs = net.layers().iter().filter(|l| l.conv.is_some()).count();
    if grads.layers.iter().flatten().count() != convs || grads.layers.len() != net.layers().len() {
        return Err(Error::Shape("gradient list does not match network".into()));
    }
    net.step += 1;
    let t = net.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    let eps = cfg.eps;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        let (Some(conv), Some(g)) = (layer.conv.as_mut(), g.as_ref()) else {
            continue;
        };
        for (p, grad) in [(&mut conv.weight, &g.weight), (&mut conv.bias, &g.bias)] {
            if p.len() != grad.len() {
                return Err(Error::Shape("parameter gradient length mismatch".into()));
            }
            for i in 0..p.len() {
                let gi = grad[i].to_f64();
                let m = b1 * p.m[i].to_f64() + (1.0 - b1) * gi;
                let v = b2 * p.v[i].to_f64() + (1.0 - b2) * gi * gi;
                p.m[i] = T::from_f64(m);
                p.v[i] = T::from_f64(v);
                let step = lr * (m / c1) / ((v / c2).sqrt() + eps);
                p.value[i] = T::from_f64(p.value[i].to_f64() - step);
            }
        }
    }
    Ok(())
}
