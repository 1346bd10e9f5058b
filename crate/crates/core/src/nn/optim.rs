use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::network::Network;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state for one network.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moments: Vec<Vec<T>>,
    second_moments: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
            steps: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients, then clears them.
    ///
    /// Every parameter must carry a gradient; otherwise nothing is updated and
    /// a contract error is returned.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<()> {
        let mut params = net.params_mut();
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::Contract(format!("parameter {i} has no gradient")));
        }
        if self.kind == OptimizerKind::Adam && self.first_moments.is_empty() {
            self.first_moments = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second_moments = self.first_moments.clone();
        }
        if self.kind == OptimizerKind::Adam {
            let shapes_match = self.first_moments.len() == params.len()
                && self.first_moments.iter().zip(&params).all(|(m, p)| m.len() == p.len());
            if !shapes_match {
                return Err(Error::Contract(
                    "optimizer moment buffers do not match the network's parameters".into(),
                ));
            }
        }
        self.steps += 1;
        let lr = T::of(self.learning_rate);
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let g = p.take_grad().expect("checked above");
                    p.data_mut().iter_mut().zip(&g).for_each(|(v, &g)| *v -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
                let t = self.steps as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let eps = T::of(ADAM_EPSILON);
                for ((p, m), v) in params
                    .iter_mut()
                    .zip(self.first_moments.iter_mut())
                    .zip(self.second_moments.iter_mut())
                {
                    let g = p.take_grad().expect("checked above");
                    for (((w, &g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("optimizer step".into()));
        }
        Ok(())
    }
}
