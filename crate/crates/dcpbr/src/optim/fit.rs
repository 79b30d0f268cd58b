//! Direct fitting: minimize the mean absolute difference between decoded
//! maps and a fixed target under any parameterization.

use serde::{Deserialize, Serialize};

use crate::analysis::{band_energies, NUM_BANDS};
use crate::net::TextureSet;
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

use super::adam::AdamState;
use super::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Pixel,
    Reparam,
    ReparamNoskip,
}

/// Direct texels tolerate a far larger step than network weights, whose
/// effect on the output compounds through the layers.
pub fn default_fit_lr(kind: FitKind) -> f64 {
    match kind {
        FitKind::Pixel => 2e-2,
        FitKind::Reparam | FitKind::ReparamNoskip => 5e-4,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub kind: FitKind,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub snapshot_every: usize,
}

impl FitOptions {
    pub fn new(kind: FitKind, iters: usize, seed: u64) -> FitOptions {
        FitOptions { kind, iters, lr: default_fit_lr(kind), seed, snapshot_every: 10 }
    }
}

/// One trajectory sample: the decoded maps, their joint L1 to the target,
/// and the diffuse map's spectral band energies.
#[derive(Clone, Debug)]
pub struct FitRecord {
    pub iteration: usize,
    pub loss: f64,
    pub bands: [f64; NUM_BANDS],
    pub textures: TextureSet,
}

#[derive(Debug)]
pub struct FitResult {
    /// Snapshots at every `snapshot_every` iterations plus the final state.
    pub records: Vec<FitRecord>,
    /// Joint L1 before each update, one entry per iteration.
    pub losses: Vec<f64>,
}

impl FitResult {
    pub fn final_textures(&self) -> &TextureSet {
        &self.records.last().expect("a run always records its final state").textures
    }
}

/// Mean absolute difference over all eight decoded channels, assembled as
/// the channel-count weighted mean of the three per-map means.
pub fn texture_l1(tape: &mut Tape, a: &TextureSet, b: &TextureSet) -> Result<Tensor> {
    let parts = [
        (&a.diffuse, &b.diffuse, 3.0),
        (&a.rough_metal, &b.rough_metal, 2.0),
        (&a.normal, &b.normal, 3.0),
    ];
    let mut total: Option<Tensor> = None;
    for (x, y, channels) in parts {
        let term = tape.l1(x, y)?;
        let term = tape.mul(&term, &Tensor::scalar(channels / 8.0))?;
        total = Some(match total {
            Some(acc) => tape.add(&acc, &term)?,
            None => term,
        });
    }
    Ok(total.expect("three maps"))
}

pub fn optimize_fit(target: &TextureSet, opts: &FitOptions) -> Result<FitResult> {
    validate_run(opts.lr, opts.snapshot_every)?;
    let (h, w) = target.resolution();
    if h == 0 || w == 0 {
        return Err(Error::Config("fit target has an empty resolution".into()));
    }
    let target = target.detach();
    let mut params = match opts.kind {
        FitKind::Pixel => ParamSet::pixel(h, w),
        FitKind::Reparam => ParamSet::net(opts.seed, h, w, true)?,
        FitKind::ReparamNoskip => ParamSet::net(opts.seed, h, w, false)?,
    };
    let mut adam = AdamState::new(opts.lr, &params.buffer_sizes());
    let mut losses = Vec::with_capacity(opts.iters);
    let mut records = Vec::new();

    for iter in 0..opts.iters {
        let mut tape = Tape::new();
        let (set, leaves) = params.forward(&mut tape)?;
        let loss = texture_l1(&mut tape, &set, &target)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("fit loss at iteration {iter} is {value}")));
        }
        losses.push(value);
        if iter % opts.snapshot_every == 0 {
            records.push(record(iter, value, &set)?);
        }
        let grads = tape.backward(&loss)?;
        params.apply(&mut adam, &leaves, &grads)?;
    }

    let mut tape = Tape::new();
    let (set, _) = params.forward(&mut tape)?;
    let value = texture_l1(&mut tape, &set, &target)?.item();
    records.push(record(opts.iters, value, &set)?);
    Ok(FitResult { records, losses })
}

fn record(iteration: usize, loss: f64, set: &TextureSet) -> Result<FitRecord> {
    let (h, w) = set.resolution();
    let bands = band_energies(set.diffuse.data(), 3, h, w)?;
    Ok(FitRecord { iteration, loss, bands, textures: set.detach() })
}

pub(super) fn validate_run(lr: f64, snapshot_every: usize) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Config(format!("learning rate {lr} must be positive and finite")));
    }
    if snapshot_every == 0 {
        return Err(Error::Config("snapshot interval must be at least 1".into()));
    }
    Ok(())
}
