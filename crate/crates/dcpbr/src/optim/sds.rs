//! Noisy-gradient surrogate for render-space synthesis. Each iteration
//! draws one timestep from a linearly narrowing window and one shared
//! noise image, then hands every view the gradient "residual toward a
//! fixed target plus timestep-scaled noise". The noise factor follows the
//! inverse signal-to-noise ratio of a cosine noising schedule, so early
//! iterations (large timesteps) are dominated by noise and late ones by
//! the data term.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

/// Timestep window, linearly narrowed from the start bounds to the end
/// bounds over `total_iters` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdsSchedule {
    pub t_min_start: f64,
    pub t_max_start: f64,
    pub t_min_end: f64,
    pub t_max_end: f64,
    pub total_iters: usize,
}

impl SdsSchedule {
    pub fn new(total_iters: usize) -> SdsSchedule {
        SdsSchedule {
            t_min_start: 0.2,
            t_max_start: 0.98,
            t_min_end: 0.3,
            t_max_end: 0.5,
            total_iters,
        }
    }

    /// Both window edges are linear in the iteration, so validity at the
    /// two ends covers every interpolated point.
    pub fn validate(&self) -> Result<()> {
        for (lo, hi, end) in
            [(self.t_min_start, self.t_max_start, "start"), (self.t_min_end, self.t_max_end, "end")]
        {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::Config(format!(
                    "timestep window at {end} is [{lo}, {hi}], needs 0 <= min < max <= 1"
                )));
            }
        }
        Ok(())
    }

    /// `[t_min, t_max]` for iteration `iter`.
    pub fn window(&self, iter: usize) -> Result<(f64, f64)> {
        self.validate()?;
        if iter >= self.total_iters {
            return Err(Error::Config(format!(
                "iteration {iter} outside a schedule of {} iterations",
                self.total_iters
            )));
        }
        let f =
            if self.total_iters > 1 { iter as f64 / (self.total_iters - 1) as f64 } else { 0.0 };
        let lerp = |a: f64, b: f64| a + (b - a) * f;
        Ok((lerp(self.t_min_start, self.t_min_end), lerp(self.t_max_start, self.t_max_end)))
    }
}

/// One synchronized draw: per-view upstream gradients plus the shared
/// timestep and the noise factor that was applied.
#[derive(Clone, Debug)]
pub struct SdsSample {
    pub grads: Vec<Tensor>,
    pub t: f64,
    pub noise_gain: f64,
}

/// Upstream gradients `g_v = (x_v - target_v) + gain * eps` with one
/// timestep `t ~ U(window(iter))` and one noise image `eps ~ N(0, I)`
/// shared by every view. `gain = noise_scale * sqrt(1 - abar) / sqrt(abar)`
/// with `abar = cos^2(pi t / 2)`, which vanishes as `t -> 0` and leaves
/// the pure data term. The draw is stateless: it depends only on
/// `(seed, iter)`, with `t` drawn before `eps`.
pub fn sds_surrogate(
    images: &[Tensor],
    targets: &[Tensor],
    iter: usize,
    sched: &SdsSchedule,
    seed: u64,
    noise_scale: f64,
) -> Result<SdsSample> {
    if images.is_empty() || images.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "sds_surrogate",
            detail: format!("{} images for {} targets", images.len(), targets.len()),
        });
    }
    if !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(Error::Config(format!(
            "noise scale {noise_scale} must be finite and non-negative"
        )));
    }
    let shape = images[0].shape();
    for (x, tgt) in images.iter().zip(targets) {
        if x.shape() != shape || tgt.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "sds_surrogate",
                detail: format!(
                    "all views must share shape {:?}, got image {:?} / target {:?}",
                    shape,
                    x.shape(),
                    tgt.shape()
                ),
            });
        }
    }

    let (lo, hi) = sched.window(iter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter as u64);
    let t = rng.random_range(lo..hi);
    let root_abar = (PI * t / 2.0).cos();
    let abar = root_abar * root_abar;
    let noise_gain = noise_scale * ((1.0 - abar) / abar).sqrt();
    let eps: Vec<f64> = (0..images[0].numel()).map(|_| StandardNormal.sample(&mut rng)).collect();

    let grads = images
        .iter()
        .zip(targets)
        .map(|(x, tgt)| {
            let data: Vec<f64> = x
                .data()
                .iter()
                .zip(tgt.data())
                .zip(&eps)
                .map(|((&xv, &tv), &e)| (xv - tv) + noise_gain * e)
                .collect();
            Tensor::from_vec(shape.to_vec(), data)
        })
        .collect();
    Ok(SdsSample { grads, t, noise_gain })
}

/// Scalar node whose gradient with respect to each `x_v` is exactly the
/// matching `g_v`: the sum over views of `sum(x_v * const(g_v))`. Its
/// value carries no meaning of its own; it exists because the tape pulls
/// gradients from a scalar root.
pub fn surrogate_loss(tape: &mut Tape, images: &[Tensor], grads: &[Tensor]) -> Result<Tensor> {
    if images.is_empty() || images.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            op: "surrogate_loss",
            detail: format!("{} images for {} gradients", images.len(), grads.len()),
        });
    }
    let mut total: Option<Tensor> = None;
    for (x, g) in images.iter().zip(grads) {
        let prod = tape.mul(x, &g.detach())?;
        let s = tape.sum_all(&prod);
        total = Some(match total {
            Some(acc) => tape.add(&acc, &s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one view"))
}
