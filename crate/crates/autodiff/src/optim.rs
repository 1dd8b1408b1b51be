use crate::error::{Result, TensorError};
use crate::params::ParamStore;

/// Adam moments for every trainable tensor of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One bias-corrected Adam update of every trainable parameter from its
    /// accumulated gradient. Gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(TensorError::shape(
                "adam_step",
                format!("state tracks {} tensors, store has {}", self.m.len(), store.len()),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            if m.len() != p.value.len() {
                return Err(TensorError::shape(
                    "adam_step",
                    format!("moment buffer for {} has wrong length", p.name),
                ));
            }
            let g = p.grad.data().to_vec();
            for (((x, mi), vi), gi) in p.value.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Constant learning rate for `delay_epochs`, then linear decay to zero at `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub delay_epochs: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_epochs: usize, delay_epochs: usize) -> Result<Self> {
        if base_lr < 0.0 || delay_epochs > total_epochs {
            return Err(TensorError::Config(format!(
                "invalid schedule lr={} total={} delay={}",
                base_lr, total_epochs, delay_epochs
            )));
        }
        Ok(Self {
            base_lr,
            total_epochs,
            delay_epochs,
        })
    }

    /// Learning rate for zero-based epoch `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.delay_epochs {
            return self.base_lr;
        }
        if epoch >= self.total_epochs {
            return 0.0;
        }
        let span = (self.total_epochs - self.delay_epochs) as f64;
        self.base_lr * (self.total_epochs - epoch) as f64 / span
    }
}
