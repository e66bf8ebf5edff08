use serde::{Deserialize, Serialize};

use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

/// Optimizer hyper-parameters plus per-parameter accumulators. Weight
/// decay is L2 regularisation folded into the gradient.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub lr0: f64,
    pub weight_decay: f64,
    steps: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, lr0: f64, weight_decay: f64) -> Result<Self> {
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::invalid("adam betas", format!("({beta1}, {beta2}) not in [0, 1)")));
            }
            if epsilon <= 0.0 {
                return Err(Error::invalid("adam epsilon", "must be positive"));
            }
        }
        if let OptimizerKind::Sgd { momentum } = kind {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::invalid("momentum", format!("{momentum} not in [0, 1)")));
            }
        }
        Ok(OptimizerState {
            kind,
            lr0,
            weight_decay,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn sgd(lr0: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd { momentum }, lr0, weight_decay)
    }

    /// Adam with β1 = 0.9, β2 = 0.99.
    pub fn adam(lr0: f64, weight_decay: f64) -> Result<Self> {
        Self::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.99,
                epsilon: 1e-8,
            },
            lr0,
            weight_decay,
        )
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn check(&mut self, params: &ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        params.ensure_mutable()?;
        if grads.len() != params.len() {
            return Err(Error::invalid(
                "gradients",
                format!("{} tensors for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::invalid(
                    "gradients",
                    format!("`{name}`: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if self.first.is_empty() {
            self.first = params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.tensors()).any(|(a, p)| a.len() != p.len())
        {
            return Err(Error::invalid("optimizer", "accumulators do not match the parameters"));
        }
        Ok(())
    }

    /// One update with learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        self.check(params, grads)?;
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } => self.sgd_step(params, grads, lr, momentum),
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                self.adam_step(params, grads, lr, beta1, beta2, epsilon)
            }
        }
        Ok(())
    }

    fn sgd_step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64, momentum: f64) {
        let (lr, wd, mu) = (T::of(lr), T::of(self.weight_decay), T::of(momentum));
        let first_step = self.steps == 1;
        for ((p, g), buf) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.first) {
            for ((theta, &gi), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
                let d = gi + wd * *theta;
                let v = if momentum == 0.0 {
                    d
                } else {
                    *b = if first_step { d } else { mu * *b + d };
                    *b
                };
                *theta -= lr * v;
            }
        }
    }

    fn adam_step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64, b1: f64, b2: f64, eps: f64) {
        let t = self.steps as i32;
        let c1 = T::of(1.0 - b1.powi(t));
        let c2 = T::of(1.0 - b2.powi(t));
        let (lr, wd, eps) = (T::of(lr), T::of(self.weight_decay), T::of(eps));
        let (b1, b2) = (T::of(b1), T::of(b2));
        let one = T::one();
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let d = gi + wd * *theta;
                *mi = b1 * *mi + (one - b1) * d;
                *vi = b2 * *vi + (one - b2) * d * d;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// `lr0 * (1 - iter / maxiter)^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySchedule {
    pub lr0: f64,
    pub power: f64,
    pub maxiter: usize,
}

impl PolySchedule {
    pub fn new(lr0: f64, power: f64, maxiter: usize) -> Result<Self> {
        if power <= 0.0 {
            return Err(Error::invalid("power", "must be positive"));
        }
        if maxiter == 0 {
            return Err(Error::invalid("maxiter", "must be at least 1"));
        }
        Ok(PolySchedule { lr0, power, maxiter })
    }

    pub fn rate(&self, iter: usize) -> Result<f64> {
        if iter > self.maxiter {
            return Err(Error::invalid("iter", format!("{iter} beyond maxiter {}", self.maxiter)));
        }
        Ok(self.lr0 * (1.0 - iter as f64 / self.maxiter as f64).powf(self.power))
    }
}
