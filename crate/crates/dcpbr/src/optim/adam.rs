//! Bias-corrected first and second moment gradient descent over a fixed
//! set of named parameter buffers.

use crate::{Error, Result};

pub const DEFAULT_LR: f64 = 5e-4;

/// Optimizer state. Moment buffers are laid out once at construction and
/// every [`AdamState::step`] call must pass the same buffers in the same
/// order; one call advances the shared step count once regardless of how
/// many buffers it updates.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, sizes: &[usize]) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Applies one update to every buffer. A non-finite gradient aborts,
    /// naming the buffer, before any of its elements move.
    pub fn step<'a, I>(&mut self, buffers: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut [f64], &'a [f64])>,
    {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut seen = 0;
        for (name, param, grad) in buffers {
            let Some((m, v)) = self.m.get_mut(seen).zip(self.v.get_mut(seen)) else {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("buffer `{name}` at position {seen} was never registered"),
                });
            };
            seen += 1;
            if param.len() != m.len() || grad.len() != param.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "`{name}` has {} parameters and {} gradients, moments hold {}",
                        param.len(),
                        grad.len(),
                        m.len()
                    ),
                });
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of `{name}` is {} at element {i}",
                    grad[i]
                )));
            }
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                param[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        if seen != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("{seen} buffers passed, {} registered", self.m.len()),
            });
        }
        Ok(())
    }
}
