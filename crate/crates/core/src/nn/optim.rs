use ndarray::{Array2, Zip};

use super::params::{Gradients, ParamId, ParameterSet};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        check_shapes(params, grads)?;
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            Zip::from(params.get_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads.0[i])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Plain gradient descent `θ ← θ − lr · g`, restricted to `only` when given.
pub fn sgd_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    lr: f64,
    only: Option<&[ParamId]>,
) -> Result<()> {
    check_shapes(params, grads)?;
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    for id in ids {
        params.get_mut(id).scaled_add(-lr, grads.get(id));
    }
    Ok(())
}

fn check_shapes(params: &ParameterSet, grads: &Gradients) -> Result<()> {
    if grads.0.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.0.len(),
            params.len()
        )));
    }
    for (id, g) in params.ids().zip(&grads.0) {
        if params.get(id).dim() != g.dim() {
            return Err(Error::Shape(format!(
                "gradient of {} has shape {:?}, expected {:?}",
                params.name(id),
                g.dim(),
                params.get(id).dim()
            )));
        }
    }
    Ok(())
}
