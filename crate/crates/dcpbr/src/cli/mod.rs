//! The `lab` experiment harness: JSON configs in, inventoried artifact
//! directories out. Every input is resolved and validated before the
//! output directory is created, so an invalid run writes nothing.

mod assets;
mod emit;
mod fit;
mod inspect;
mod rundir;
mod synth;


use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::net::UNetConfig;
use crate::optim::{FitKind, SdsSchedule, SynthKind};
use crate::render::DEFAULT_RES;
use crate::{Error, Result};

pub use assets::{
    pattern_band_energies, pattern_frequencies, pattern_texture, resolve_env, resolve_mesh,
    PATTERN_MIN_RES,
};
pub use fit::CONVERGENCE_TOL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fit,
    Synth,
    Freq,
    Coherence,
    Render,
    Relight,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fit => "fit",
            ExperimentKind::Synth => "synth",
            ExperimentKind::Freq => "freq",
            ExperimentKind::Coherence => "coherence",
            ExperimentKind::Render => "render",
            ExperimentKind::Relight => "relight",
        }
    }
}

/// A parameterization requested in a config: fit runs take the texel and
/// network kinds, synthesis runs the surrogate pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamKind {
    Fit(FitKind),
    Synth(SynthKind),
}

pub fn fit_kind_name(kind: FitKind) -> &'static str {
    match kind {
        FitKind::Pixel => "pixel",
        FitKind::Reparam => "reparam",
        FitKind::ReparamNoskip => "reparam_noskip",
    }
}

pub fn synth_kind_name(kind: SynthKind) -> &'static str {
    match kind {
        SynthKind::PixelTv => "pixel_tv",
        SynthKind::Dcpbr => "dcpbr",
    }
}

/// Texture maps the freq command can analyze.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapName {
    Diffuse,
    RoughMetal,
    Normal,
}

impl MapName {
    pub fn name(self) -> &'static str {
        match self {
            MapName::Diffuse => "diffuse",
            MapName::RoughMetal => "rough_metal",
            MapName::Normal => "normal",
        }
    }
}

/// Timestep window endpoints of a synthesis config; the iteration count
/// comes from `iterations`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleWindows {
    pub t_min_start: f64,
    pub t_max_start: f64,
    pub t_min_end: f64,
    pub t_max_end: f64,
}

impl ScheduleWindows {
    pub fn with_iters(self, total_iters: usize) -> SdsSchedule {
        SdsSchedule {
            t_min_start: self.t_min_start,
            t_max_start: self.t_max_start,
            t_min_end: self.t_min_end,
            t_max_end: self.t_max_end,
            total_iters,
        }
    }
}

/// One experiment as parsed from a JSON config file. Unknown fields are
/// rejected; fields a command does not consult are ignored by it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Texture side length. Decode experiments need a power of two
    /// divisible by the network's total downsampling factor.
    #[serde(default = "ExperimentConfig::default_resolution")]
    pub resolution: usize,
    /// Optimization steps; defaults to 1000 for fit and 500 for synth.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "ExperimentConfig::default_seeds")]
    pub seeds: Vec<u64>,
    /// Parameterizations to run; defaults to pixel + reparam for fit and
    /// pixel_tv + dcpbr for synth.
    #[serde(default)]
    pub param_kinds: Vec<ParamKind>,
    /// Learning-rate override applied to every requested kind.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "ExperimentConfig::default_snapshot_every")]
    pub snapshot_every: usize,
    /// Directory holding a PNG texture triplet; the built-in pattern at
    /// `resolution` when omitted.
    #[serde(default)]
    pub textures: Option<PathBuf>,
    /// `sphere | plane` or a path to an OBJ file.
    #[serde(default = "ExperimentConfig::default_mesh")]
    pub mesh: String,
    /// `daylight | studio | sunset` or a path to a lat-long PNG.
    #[serde(default = "ExperimentConfig::default_env")]
    pub env: String,
    /// Environments for relight; defaults to daylight + sunset.
    #[serde(default)]
    pub envs: Vec<String>,
    /// Timestep window override for synthesis.
    #[serde(default)]
    pub schedule: Option<ScheduleWindows>,
    #[serde(default = "ExperimentConfig::default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "ExperimentConfig::default_tv_weight")]
    pub tv_weight: f64,
    #[serde(default = "ExperimentConfig::default_views_per_iter")]
    pub views_per_iter: usize,
    #[serde(default = "ExperimentConfig::default_view_pool")]
    pub view_pool: usize,
    /// Square size of rendered views: synthesis targets, turntable frames
    /// and coherence strips.
    #[serde(default = "ExperimentConfig::default_render_resolution")]
    pub render_resolution: usize,
    /// Adjacent cameras for coherence.
    #[serde(default = "ExperimentConfig::default_n_views")]
    pub n_views: usize,
    /// Repeat one pose instead of sampling nearby ones (coherence control).
    #[serde(default)]
    pub identical_views: bool,
    #[serde(default = "ExperimentConfig::default_turntable_frames")]
    pub turntable_frames: usize,
    /// Maps the freq command analyzes.
    #[serde(default = "ExperimentConfig::default_analyze_maps")]
    pub analyze_maps: Vec<MapName>,
    /// Defaults to `runs/<experiment>`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    fn default_resolution() -> usize {
        64
    }

    fn default_seeds() -> Vec<u64> {
        vec![0]
    }

    fn default_snapshot_every() -> usize {
        10
    }

    fn default_mesh() -> String {
        "sphere".into()
    }

    fn default_env() -> String {
        "daylight".into()
    }

    fn default_noise_scale() -> f64 {
        1.0
    }

    fn default_tv_weight() -> f64 {
        0.1
    }

    fn default_views_per_iter() -> usize {
        4
    }

    fn default_view_pool() -> usize {
        16
    }

    fn default_render_resolution() -> usize {
        DEFAULT_RES
    }

    fn default_n_views() -> usize {
        5
    }

    fn default_turntable_frames() -> usize {
        8
    }

    fn default_analyze_maps() -> Vec<MapName> {
        vec![MapName::Diffuse]
    }

    /// All defaults for the given experiment, as if parsed from
    /// `{"experiment": ...}`.
    pub fn new(experiment: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment,
            resolution: Self::default_resolution(),
            iterations: None,
            seeds: Self::default_seeds(),
            param_kinds: Vec::new(),
            lr: None,
            snapshot_every: Self::default_snapshot_every(),
            textures: None,
            mesh: Self::default_mesh(),
            env: Self::default_env(),
            envs: Vec::new(),
            schedule: None,
            noise_scale: Self::default_noise_scale(),
            tv_weight: Self::default_tv_weight(),
            views_per_iter: Self::default_views_per_iter(),
            view_pool: Self::default_view_pool(),
            render_resolution: Self::default_render_resolution(),
            n_views: Self::default_n_views(),
            identical_views: false,
            turntable_frames: Self::default_turntable_frames(),
            analyze_maps: Self::default_analyze_maps(),
            output_dir: None,
        }
    }

    pub fn iters(&self) -> usize {
        self.iterations.unwrap_or(match self.experiment {
            ExperimentKind::Fit => 1000,
            ExperimentKind::Synth => 500,
            _ => 0,
        })
    }

    pub fn fit_kinds(&self) -> Result<Vec<FitKind>> {
        if self.param_kinds.is_empty() {
            return Ok(vec![FitKind::Pixel, FitKind::Reparam]);
        }
        let mut out = Vec::with_capacity(self.param_kinds.len());
        for kind in &self.param_kinds {
            match kind {
                ParamKind::Fit(f) => out.push(*f),
                ParamKind::Synth(s) => {
                    return Err(Error::Config(format!(
                        "param_kinds entry `{}` is a synthesis kind; fit takes pixel | reparam | reparam_noskip",
                        synth_kind_name(*s)
                    )));
                }
            }
        }
        if has_duplicates(&out) {
            return Err(Error::Config("param_kinds lists a kind twice".into()));
        }
        Ok(out)
    }

    pub fn synth_kinds(&self) -> Result<Vec<SynthKind>> {
        if self.param_kinds.is_empty() {
            return Ok(vec![SynthKind::PixelTv, SynthKind::Dcpbr]);
        }
        let mut out = Vec::with_capacity(self.param_kinds.len());
        for kind in &self.param_kinds {
            match kind {
                ParamKind::Synth(s) => out.push(*s),
                ParamKind::Fit(f) => {
                    return Err(Error::Config(format!(
                        "param_kinds entry `{}` is a fit kind; synth takes pixel_tv | dcpbr",
                        fit_kind_name(*f)
                    )));
                }
            }
        }
        if has_duplicates(&out) {
            return Err(Error::Config("param_kinds lists a kind twice".into()));
        }
        Ok(out)
    }

    pub fn relight_envs(&self) -> Vec<String> {
        if self.envs.is_empty() {
            vec!["daylight".into(), "sunset".into()]
        } else {
            self.envs.clone()
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.experiment.name()))
    }

    /// Decode experiments run the network at `resolution`; each of its
    /// pooling levels halves the size.
    fn check_decode_resolution(&self) -> Result<()> {
        let factor = 1usize << UNetConfig::with_seed(0).levels;
        if !self.resolution.is_power_of_two() || !self.resolution.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "resolution {} must be a power of two divisible by {factor}",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Structural checks; every failure happens before any output exists.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be at least 1".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("lr {lr} must be finite and positive")));
            }
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config(format!(
                "noise_scale {} must be finite and non-negative",
                self.noise_scale
            )));
        }
        if !(self.tv_weight.is_finite() && self.tv_weight >= 0.0) {
            return Err(Error::Config(format!(
                "tv_weight {} must be finite and non-negative",
                self.tv_weight
            )));
        }
        match self.experiment {
            ExperimentKind::Fit => {
                self.check_decode_resolution()?;
                self.fit_kinds()?;
            }
            ExperimentKind::Synth => {
                self.check_decode_resolution()?;
                self.synth_kinds()?;
                if self.view_pool == 0
                    || self.views_per_iter == 0
                    || self.views_per_iter > self.view_pool
                {
                    return Err(Error::Config(format!(
                        "cannot draw {} views per iteration from a pool of {}",
                        self.views_per_iter, self.view_pool
                    )));
                }
                if self.render_resolution == 0 {
                    return Err(Error::Config("render_resolution must be positive".into()));
                }
                if let Some(windows) = self.schedule {
                    windows.with_iters(self.iters()).validate()?;
                }
            }
            ExperimentKind::Freq => {
                if self.analyze_maps.is_empty() {
                    return Err(Error::Config("analyze_maps must name at least one map".into()));
                }
                if has_duplicates(&self.analyze_maps) {
                    return Err(Error::Config("analyze_maps lists a map twice".into()));
                }
            }
            ExperimentKind::Coherence => {
                self.check_decode_resolution()?;
                if self.n_views < 2 {
                    return Err(Error::Config(format!(
                        "coherence needs at least 2 views, got {}",
                        self.n_views
                    )));
                }
                if self.render_resolution == 0 {
                    return Err(Error::Config("render_resolution must be positive".into()));
                }
            }
            ExperimentKind::Render | ExperimentKind::Relight => {
                if self.turntable_frames == 0 {
                    return Err(Error::Config("turntable_frames must be at least 1".into()));
                }
                if self.render_resolution == 0 {
                    return Err(Error::Config("render_resolution must be positive".into()));
                }
                if self.experiment == ExperimentKind::Relight && self.relight_envs().len() < 2 {
                    return Err(Error::Config("relight needs at least two environments".into()));
                }
            }
        }
        Ok(())
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

/// Validates the config and executes its experiment.
pub fn run(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::Fit => fit::cmd_fit(config),
        ExperimentKind::Synth => synth::cmd_synth(config),
        ExperimentKind::Freq => inspect::cmd_freq(config),
        ExperimentKind::Coherence => inspect::cmd_coherence(config),
        ExperimentKind::Render => inspect::cmd_render(config),
        ExperimentKind::Relight => inspect::cmd_relight(config),
    }
}
