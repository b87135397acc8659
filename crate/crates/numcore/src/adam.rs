use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::param::ParamSet;
use crate::tensor::{Real, Tensor};

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamSet<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |p: &crate::param::Param<T>| Tensor::zeros(p.value.rows(), p.value.cols());
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter, then zeroes grads.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(NumError::ShapeMismatch {
                op: "adam_step",
                left: vec![self.m.len()],
                right: vec![params.len()],
            });
        }
        if let Some(p) = params.iter().find(|p| p.requires_grad && p.grad.is_none()) {
            return Err(NumError::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            let g = p.grad.as_mut().expect("checked above");
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = b1 * md[i] + (T::one() - b1) * gd[i];
                vd[i] = b2 * vd[i] + (T::one() - b2) * gd[i] * gd[i];
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            g.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
        Ok(())
    }
}
