//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm bound on the gradient. Off unless set.
    pub clip_norm: Option<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }

    /// One update of every non-frozen parameter in `params`.
    pub fn step(&self, params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
        if grads.len() != params.len() || state.m.len() != params.len() {
            return Err(Error::contract(format!(
                "adam: {} params, {} gradients, {} state slots",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "{}: param {:?}, grad {:?}, state {:?}",
                        params.name(crate::params::ParamId(i)),
                        p.shape(),
                        g.shape(),
                        state.m[i].shape()
                    ),
                ));
            }
        }

        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            if params.is_frozen(crate::params::ParamId(i)) {
                continue;
            }
            let p = params.tensors_mut()[i].data_mut();
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            for (((pj, &gj), mj), vj) in p.iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = gj * scale;
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * g;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * g * g;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *pj -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Per-parameter first and second moment accumulators plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}
