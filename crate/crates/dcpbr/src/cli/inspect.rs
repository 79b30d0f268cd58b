//! Measurement commands with no optimization loop: spectral analysis of a
//! texture set, gradient coherence across adjacent views, and the plain
//! render / relight turntables.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::analysis::{band_energies, gradient_coherence, CoherenceOptions};
use crate::net::TextureSet;
use crate::render::{sample_cameras, PoseRule};
use crate::tensor::Tensor;
use crate::Result;

use super::assets::{
    pattern_band_energies, resolve_env, resolve_mesh, resolve_textures, ResolutionRule,
};
use super::emit;
use super::rundir::RunDir;
use super::{ExperimentConfig, MapName};

fn map_plane(set: &TextureSet, map: MapName) -> (&Tensor, usize) {
    match map {
        MapName::Diffuse => (&set.diffuse, 3),
        MapName::RoughMetal => (&set.rough_metal, 2),
        MapName::Normal => (&set.normal, 3),
    }
}

pub(super) fn cmd_freq(config: &ExperimentConfig) -> Result<()> {
    let set = resolve_textures(config, ResolutionRule::Native)?;
    let (h, w) = set.resolution();
    if !(h.is_power_of_two() && w.is_power_of_two()) {
        return Err(crate::Error::Config(format!(
            "spectral analysis needs power-of-two texture sides, got {h}x{w}"
        )));
    }
    let mut measured = Vec::with_capacity(config.analyze_maps.len());
    for &map in &config.analyze_maps {
        let (tensor, channels) = map_plane(&set, map);
        measured.push((map, band_energies(tensor.data(), channels, h, w)?));
    }
    // The builtin pattern's diffuse energies have a closed form; echo it so
    // a reader can check the measurement without rerunning anything.
    let analytic = match config.textures {
        None => Some(pattern_band_energies(h)?),
        Some(_) => None,
    };

    let mut run = RunDir::create(&config.out_dir())?;
    let mut csv = String::from("map,E1,E2,E3,E4,E5\n");
    let mut maps = Map::new();
    for (map, energies) in &measured {
        csv.push_str(map.name());
        for e in energies {
            csv.push_str(&format!(",{e}"));
        }
        csv.push('\n');
        maps.insert(
            map.name().into(),
            json!({ "energies": energies.to_vec(), "total": energies.iter().sum::<f64>() }),
        );
    }
    std::fs::write(run.file("bands.csv"), csv)?;
    let report = json!({
        "resolution": [h, w],
        "maps": maps,
        "analytic_diffuse": analytic.map(|e| e.to_vec()),
    });
    std::fs::write(run.file("bands.json"), format!("{report:#}\n"))?;
    run.finish(config, report)
}

pub(super) fn cmd_coherence(config: &ExperimentConfig) -> Result<()> {
    let reference = resolve_textures(config, ResolutionRule::MatchConfig)?;
    let mesh = resolve_mesh(&config.mesh)?;
    let env = resolve_env(&config.env)?;

    let mut run = RunDir::create(&config.out_dir())?;
    let mut metrics = Map::new();
    for &seed in &config.seeds {
        let opts = CoherenceOptions {
            n_views: config.n_views,
            seed,
            noise_scale: config.noise_scale,
            identical_views: config.identical_views,
            render_res: config.render_resolution,
        };
        let report = run.time(&format!("coherence_seed{seed}"), || {
            gradient_coherence(&mesh, &env, &reference, &opts)
        })?;

        // The same pose sequence the measurement used, rendered with the
        // reference maps so the strip shows how little the views differ.
        let mut cameras = sample_cameras(config.n_views, PoseRule::Adjacent, seed);
        if config.identical_views {
            cameras = vec![cameras[0]; config.n_views];
        }
        for cam in &mut cameras {
            cam.res = config.render_resolution;
        }
        emit::view_strip(
            &run.file(format!("strip_seed{seed}.png")),
            &mesh,
            &env,
            &reference,
            &cameras,
        )?;

        let high_rank = !report.rank_deficient && report.ratios[0] < 10.0;
        let out = json!({
            "seed": seed,
            "n_views": config.n_views,
            "noise_scale": config.noise_scale,
            "identical_views": config.identical_views,
            "singular_values": report.singular_values,
            "ratios": report.ratios,
            "rank_deficient": report.rank_deficient,
            "high_rank": high_rank,
        });
        std::fs::write(run.file(format!("report_seed{seed}.json")), format!("{out:#}\n"))?;
        metrics.insert(
            format!("seed{seed}"),
            json!({ "high_rank": high_rank, "max_ratio": report.ratios[0] }),
        );
    }
    run.finish(config, Value::Object(metrics))
}

pub(super) fn cmd_render(config: &ExperimentConfig) -> Result<()> {
    let set = resolve_textures(config, ResolutionRule::Native)?;
    let mesh = resolve_mesh(&config.mesh)?;
    let env = resolve_env(&config.env)?;

    let mut run = RunDir::create(&config.out_dir())?;
    emit::turntable(
        &mut run,
        "frames",
        &mesh,
        &env,
        &set,
        config.turntable_frames,
        config.render_resolution,
    )?;
    run.finish(config, json!({ "frames": config.turntable_frames }))
}

pub(super) fn cmd_relight(config: &ExperimentConfig) -> Result<()> {
    let set = resolve_textures(config, ResolutionRule::Native)?;
    let mesh = resolve_mesh(&config.mesh)?;
    let mut rigs = Vec::new();
    for (i, source) in config.relight_envs().iter().enumerate() {
        rigs.push((format!("env_{i}_{}", env_tag(source)), resolve_env(source)?));
    }

    let mut run = RunDir::create(&config.out_dir())?;
    for (name, env) in &rigs {
        emit::turntable(
            &mut run,
            name,
            &mesh,
            env,
            &set,
            config.turntable_frames,
            config.render_resolution,
        )?;
    }
    let names: Vec<&String> = rigs.iter().map(|(name, _)| name).collect();
    run.finish(config, json!({ "environments": names, "frames": config.turntable_frames }))
}

/// Directory-safe tag for an environment source: the file stem of a path,
/// builtin names as-is, anything unusual flattened to underscores.
fn env_tag(source: &str) -> String {
    let stem = Path::new(source).file_stem().and_then(|s| s.to_str()).unwrap_or(source);
    stem.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}
