use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub lr0: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay: f64,
    pub epochs: usize,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr0: 0.005,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: 0.01,
            epochs: 400,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.batch_size >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.decay >= 0.0
            && self.epochs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }

    /// Step size of update `t` (1-based): base rate `lr0 / batch_size` with inverse-time decay.
    pub fn lr_at(&self, t: u64) -> f64 {
        (self.lr0 / self.batch_size as f64) / (1.0 + self.decay * t as f64)
    }
}

/// Bias-corrected Adam update of one parameter tensor at step `t ≥ 1`.
pub fn adam_update(p: &mut Param, hyper: &AdamHyper, t: u64) {
    debug_assert!(t >= 1);
    let lr = hyper.lr_at(t);
    let c1 = 1.0 - hyper.beta1.powf(t as f64);
    let c2 = 1.0 - hyper.beta2.powf(t as f64);
    for i in 0..p.value.len() {
        let g = p.grad[i];
        p.m[i] = hyper.beta1 * p.m[i] + (1.0 - hyper.beta1) * g;
        p.v[i] = hyper.beta2 * p.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = p.m[i] / c1;
        let v_hat = p.v[i] / c2;
        p.value[i] -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decayed_rate() {
        let h = AdamHyper::default();
        assert!((h.lr_at(100) - 0.000625).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let h = AdamHyper::default();
        let mut p = Param::new(vec![1.0, -2.0, 0.5]);
        p.grad = vec![0.3, -7.0, 0.0];
        adam_update(&mut p, &h, 1);
        let lr = h.lr_at(1);
        assert!((p.value[0] - (1.0 - lr)).abs() < 1e-10);
        assert!((p.value[1] - (-2.0 + lr)).abs() < 1e-10);
        assert_eq!(p.value[2], 0.5);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let h = AdamHyper::default();
        let mut p = Param::new(vec![0.25; 4]);
        for t in 1..5 {
            adam_update(&mut p, &h, t);
        }
        assert_eq!(p.value, vec![0.25; 4]);
    }

    #[test]
    fn validation() {
        assert!(AdamHyper::default().validate().is_ok());
        assert!(AdamHyper { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamHyper { lr0: 0.0, ..Default::default() }.validate().is_err());
    }
}
