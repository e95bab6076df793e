//! Adam with named, serialisable moment state.

use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64)) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter in `stores` that has a gradient in `grads`.
    pub fn step(&mut self, stores: &[&ParamStore], grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for store in stores {
            for (name, var) in store.iter() {
                let Some(g) = grads.get(var.as_tensor()) else {
                    continue;
                };
                let g = g.detach();
                let m = match self.first.get(name) {
                    Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                    None => (&g * (1.0 - self.beta1))?,
                };
                let v = match self.second.get(name) {
                    Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                    None => (g.sqr()? * (1.0 - self.beta2))?,
                };
                let m_hat = (&m / c1)?;
                let v_hat = (&v / c2)?;
                let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
                let next = (var.as_tensor().detach() - (update * self.lr)?)?;
                var.set(&next)?;
                self.first.insert(name.clone(), m);
                self.second.insert(name.clone(), v);
            }
        }
        Ok(())
    }

    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.first.len() * 2);
        for (name, m) in &self.first {
            out.push((format!("{prefix}m/{name}"), m.clone()));
        }
        for (name, v) in &self.second {
            out.push((format!("{prefix}v/{name}"), v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, tensors: &HashMap<String, Tensor>, prefix: &str, steps: u64) -> Result<()> {
        self.first.clear();
        self.second.clear();
        for (key, t) in tensors {
            let Some(rest) = key.strip_prefix(prefix) else {
                continue;
            };
            if let Some(name) = rest.strip_prefix("m/") {
                self.first.insert(name.to_string(), t.clone());
            } else if let Some(name) = rest.strip_prefix("v/") {
                self.second.insert(name.to_string(), t.clone());
            } else {
                return Err(Error::Shape(format!("unrecognised optimizer tensor `{key}`")));
            }
        }
        self.steps = steps;
        Ok(())
    }
}
