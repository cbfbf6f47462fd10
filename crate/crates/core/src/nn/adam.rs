use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: store.zero_grads(),
            v: store.zero_grads(),
        }
    }

    /// One bias-corrected update. Non-finite gradients abort before any parameter changes.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Divergence {
                    step: self.step + 1,
                    reason: format!("non-finite gradient for {}", store.name(i)),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            let p = store.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
