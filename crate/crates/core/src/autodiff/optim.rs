use std::collections::BTreeMap;

use super::params::{Gradients, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam with optional L2 weight decay (added to the gradient).
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every entry of `params` that has a gradient. Gradients for
    /// names outside `params` are rejected, which is what keeps parameter
    /// groups from leaking into each other.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        for (name, _) in grads.iter() {
            if !params.contains(name) {
                return Err(Error::Config(format!(
                    "gradient for {name} does not belong to this optimizer's group"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let Some(g) = grads.get(&name) else { continue };
            let p = params.get(&name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            let mut updated = Vec::with_capacity(p.len());
            for (i, (&pv, &gv)) in p.data().iter().zip(g.data()).enumerate() {
                let gv = gv + self.weight_decay * pv;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                updated.push(pv - self.lr * mhat / (vhat.sqrt() + self.eps));
            }
            let t = Tensor::new(p.rows(), p.cols(), updated)?;
            params.set(&name, t)?;
        }
        Ok(())
    }
}
