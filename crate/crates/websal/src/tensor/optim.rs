//! Gradient-descent updates over a parameter store.
//!
//! One `Optimizer` owns the first/second-moment state for the parameters it
//! updates; the generator and discriminator each get their own instance
//! with a name filter. Aliased parameters are stepped once per call no
//! matter how many names point at them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Method {
    /// Adam with the usual (0.9, 0.999, 1e-8) constants.
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Optimizer {
    pub lr: f64,
    method: Method,
    t: u64,
    slots: HashMap<String, Slot>,
}

/// Plain-data image of an optimizer, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub method: Method,
    pub t: u64,
    /// (canonical parameter name, first moment, second moment)
    pub slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(method: Method, lr: f64) -> Self {
        Optimizer {
            lr,
            method,
            t: 0,
            slots: HashMap::new(),
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one update to every distinct trainable parameter whose
    /// canonical name passes `select`. Every selected parameter must carry
    /// a gradient; its grad buffer is cleared once the update lands.
    pub fn step(
        &mut self,
        store: &ParamStore,
        select: impl Fn(&str) -> bool,
    ) -> Result<(), TensorError> {
        self.t += 1;
        for (name, tensor) in store.unique() {
            if !tensor.requires_grad() || !select(name) {
                continue;
            }
            let grad = tensor.grad().ok_or_else(|| TensorError::MissingGrad {
                name: name.to_string(),
            })?;
            match self.method {
                Method::Sgd => {
                    let lr = self.lr;
                    tensor.update_data(|d| {
                        for (p, g) in d.iter_mut().zip(&grad) {
                            *p -= lr * g;
                        }
                    });
                }
                Method::Adam { beta1, beta2, eps } => {
                    let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
                        m: vec![0.0; grad.len()],
                        v: vec![0.0; grad.len()],
                    });
                    let bc1 = 1.0 - beta1.powi(self.t as i32);
                    let bc2 = 1.0 - beta2.powi(self.t as i32);
                    let lr = self.lr;
                    tensor.update_data(|d| {
                        for i in 0..d.len() {
                            let g = grad[i];
                            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                            let m_hat = slot.m[i] / bc1;
                            let v_hat = slot.v[i] / bc2;
                            d[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    });
                }
            }
            tensor.zero_grad();
        }
        Ok(())
    }

    /// Round moment buffers to f32, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for slot in self.slots.values_mut() {
            for v in slot.m.iter_mut().chain(slot.v.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Snapshot for checkpointing; slots come out sorted by name.
    pub fn export_state(&self) -> OptimizerState {
        let mut slots: Vec<_> = self
            .slots
            .iter()
            .map(|(n, s)| (n.clone(), s.m.clone(), s.v.clone()))
            .collect();
        slots.sort_by(|a, b| a.0.cmp(&b.0));
        OptimizerState {
            lr: self.lr,
            method: self.method,
            t: self.t,
            slots,
        }
    }

    pub fn from_state(state: OptimizerState) -> Self {
        Optimizer {
            lr: state.lr,
            method: state.method,
            t: state.t,
            slots: state
                .slots
                .into_iter()
                .map(|(n, m, v)| (n, Slot { m, v }))
                .collect(),
        }
    }
}
