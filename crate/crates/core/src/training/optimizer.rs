use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction. Moments are keyed by parameter name and created
/// on first use.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }

    /// Applies one update. Every gradient is checked before any parameter
    /// changes, so a non-finite gradient leaves all parameters untouched.
    /// Parameters without a gradient entry are treated as having zero gradient.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor)>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        let params: Vec<(String, &'a mut Tensor)> = params.into_iter().collect();
        for (name, p) in &params {
            if let Some(g) = grads.get(name) {
                if g.shape() != p.shape() {
                    return Err(Error::Shape(format!(
                        "gradient for `{name}` has shape {:?}, parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(name.clone()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            let (rows, cols) = p.shape();
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(rows, cols));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(rows, cols));
            let g = grads.get(&name);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                p.data_mut()[i] -= update;
            }
        }
        Ok(())
    }
}
