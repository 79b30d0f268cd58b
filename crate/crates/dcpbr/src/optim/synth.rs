//! Render-space synthesis: optimize texture maps so their shaded views
//! match fixed target renders under the noisy surrogate gradient. The
//! run draws a few views per iteration from a fixed seeded pool, which
//! bounds rasterization cost while keeping the per-iteration gradients
//! multi-view.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{band_energies, NUM_BANDS};
use crate::net::TextureSet;
use crate::render::{
    rasterize, sample_cameras, shade, tonemap, Camera, EnvLight, GBuffer, Mesh, PoseRule,
};
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

use super::adam::AdamState;
use super::fit::validate_run;
use super::params::ParamSet;
use super::sds::{sds_surrogate, surrogate_loss, SdsSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    PixelTv,
    Dcpbr,
}

pub fn default_synth_lr(kind: SynthKind) -> f64 {
    match kind {
        SynthKind::PixelTv => 2e-2,
        SynthKind::Dcpbr => 5e-4,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthOptions {
    pub kind: SynthKind,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub snapshot_every: usize,
    /// Weight of the diffuse smoothness penalty; only the raw-texel
    /// baseline applies it.
    pub tv_weight: f64,
    /// Multiplier on the surrogate's noise term; zero degenerates the run
    /// to multi-view regression.
    pub noise_scale: f64,
    pub views_per_iter: usize,
    /// Timestep window; must cover exactly `iters` iterations.
    pub schedule: SdsSchedule,
}

impl SynthOptions {
    pub fn new(kind: SynthKind, iters: usize, seed: u64) -> SynthOptions {
        SynthOptions {
            kind,
            iters,
            lr: default_synth_lr(kind),
            seed,
            snapshot_every: 10,
            tv_weight: 0.1,
            noise_scale: 1.0,
            views_per_iter: 4,
            schedule: SdsSchedule::new(iters),
        }
    }
}

/// Fixed set of camera poses with their rasterized geometry buffers and
/// the display-space target renders the surrogate pulls toward.
pub struct ViewPool {
    pub cameras: Vec<Camera>,
    pub gbuffers: Vec<GBuffer>,
    pub targets: Vec<Tensor>,
}

impl ViewPool {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Rasterizes `count` seeded full-body poses of `mesh` at `res` and
/// renders the reference textures through each, producing the pool every
/// synthesis run draws its views from.
pub fn build_view_pool(
    mesh: &Mesh,
    env: &EnvLight,
    reference: &TextureSet,
    count: usize,
    res: usize,
    seed: u64,
) -> Result<ViewPool> {
    if count == 0 || res == 0 {
        return Err(Error::Config(format!(
            "view pool needs at least one camera and a positive resolution, got {count} at {res}"
        )));
    }
    let mut cameras = sample_cameras(count, PoseRule::FullBody, seed);
    for cam in &mut cameras {
        cam.res = res;
    }
    let reference = reference.detach();
    let gbuffers: Vec<GBuffer> = cameras.iter().map(|cam| rasterize(mesh, cam)).collect();
    let mut targets = Vec::with_capacity(count);
    for g in &gbuffers {
        let mut tape = Tape::new();
        let linear = shade(&mut tape, &reference, g, env)?;
        targets.push(tonemap(&mut tape, &linear)?);
    }
    Ok(ViewPool { cameras, gbuffers, targets })
}

/// One trajectory sample: the decoded maps, the mean per-pixel L1 between
/// display-space renders and their targets, and the diffuse map's band
/// energies.
#[derive(Clone, Debug)]
pub struct SynthRecord {
    pub iteration: usize,
    pub render_l1: f64,
    pub bands: [f64; NUM_BANDS],
    pub textures: TextureSet,
}

#[derive(Debug)]
pub struct SynthResult {
    /// Snapshots every `snapshot_every` iterations plus the final state.
    /// The final row's `render_l1` aggregates every pool view; earlier
    /// rows cover only that iteration's draw.
    pub records: Vec<SynthRecord>,
    /// Render L1 over each iteration's drawn views, one entry per
    /// iteration.
    pub losses: Vec<f64>,
}

impl SynthResult {
    pub fn final_textures(&self) -> &TextureSet {
        &self.records.last().expect("a run always records its final state").textures
    }
}

pub fn optimize_synth(
    pool: &ViewPool,
    env: &EnvLight,
    height: usize,
    width: usize,
    opts: &SynthOptions,
) -> Result<SynthResult> {
    validate_run(opts.lr, opts.snapshot_every)?;
    if height == 0 || width == 0 {
        return Err(Error::Config("synthesis texture resolution is empty".into()));
    }
    if opts.views_per_iter == 0 || opts.views_per_iter > pool.len() {
        return Err(Error::Config(format!(
            "cannot draw {} views from a pool of {}",
            opts.views_per_iter,
            pool.len()
        )));
    }
    if !(opts.tv_weight.is_finite() && opts.tv_weight >= 0.0) {
        return Err(Error::Config(format!(
            "smoothness weight {} must be finite and non-negative",
            opts.tv_weight
        )));
    }
    if opts.schedule.total_iters != opts.iters {
        return Err(Error::Config(format!(
            "schedule covers {} iterations but the run has {}",
            opts.schedule.total_iters, opts.iters
        )));
    }
    let sched = opts.schedule;
    let mut params = match opts.kind {
        SynthKind::PixelTv => ParamSet::pixel(height, width),
        SynthKind::Dcpbr => ParamSet::net(opts.seed, height, width, true)?,
    };
    let mut adam = AdamState::new(opts.lr, &params.buffer_sizes());
    // Offset the view-draw seed so the pick sequence cannot replay the
    // surrogate's noise stream.
    let mut view_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut losses = Vec::with_capacity(opts.iters);
    let mut records = Vec::new();

    for iter in 0..opts.iters {
        let picks = rand::seq::index::sample(&mut view_rng, pool.len(), opts.views_per_iter);
        let mut tape = Tape::new();
        let (set, leaves) = params.forward(&mut tape)?;
        let mut images = Vec::with_capacity(opts.views_per_iter);
        let mut targets = Vec::with_capacity(opts.views_per_iter);
        for vi in picks.iter() {
            let linear = shade(&mut tape, &set, &pool.gbuffers[vi], env)?;
            images.push(tonemap(&mut tape, &linear)?);
            targets.push(pool.targets[vi].clone());
        }
        let sample = sds_surrogate(&images, &targets, iter, &sched, opts.seed, opts.noise_scale)?;
        let mut loss = surrogate_loss(&mut tape, &images, &sample.grads)?;
        if matches!(opts.kind, SynthKind::PixelTv) {
            let smooth = tape.tv(&set.diffuse)?;
            let weighted = tape.mul(&smooth, &Tensor::scalar(opts.tv_weight))?;
            loss = tape.add(&loss, &weighted)?;
        }
        let l1 = mean_l1(&images, &targets);
        if !l1.is_finite() {
            return Err(Error::NonFinite(format!("render L1 at iteration {iter} is {l1}")));
        }
        losses.push(l1);
        if iter % opts.snapshot_every == 0 {
            records.push(record(iter, l1, &set)?);
        }
        let grads = tape.backward(&loss)?;
        params.apply(&mut adam, &leaves, &grads)?;
    }

    // Final state, measured over the whole pool with an untracked pass so
    // no graph is kept alive.
    let mut tape = Tape::new();
    let (set, _) = params.forward(&mut tape)?;
    let set = set.detach();
    drop(tape);
    let mut images = Vec::with_capacity(pool.len());
    for g in &pool.gbuffers {
        let mut tape = Tape::new();
        let linear = shade(&mut tape, &set, g, env)?;
        images.push(tonemap(&mut tape, &linear)?);
    }
    let l1 = mean_l1(&images, &pool.targets);
    records.push(record(opts.iters, l1, &set)?);
    Ok(SynthResult { records, losses })
}

fn mean_l1(images: &[Tensor], targets: &[Tensor]) -> f64 {
    let total: f64 = images
        .iter()
        .zip(targets)
        .map(|(x, t)| x.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()).sum::<f64>())
        .sum();
    let count: usize = images.iter().map(|x| x.numel()).sum();
    total / count as f64
}

fn record(iteration: usize, render_l1: f64, set: &TextureSet) -> Result<SynthRecord> {
    let (h, w) = set.resolution();
    let bands = band_energies(set.diffuse.data(), 3, h, w)?;
    Ok(SynthRecord { iteration, render_l1, bands, textures: set.detach() })
}
