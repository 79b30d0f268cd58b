//! Synthesis experiment: render-space optimization against views of a
//! reference texture under the noisy surrogate, for the raw-texel and
//! network parameterizations.

use serde_json::{json, Map, Value};

use crate::analysis::{band_energies, NUM_BANDS};
use crate::net::TextureSet;
use crate::optim::{build_view_pool, optimize_synth, SynthKind, SynthOptions};
use crate::Result;

use super::assets::{resolve_env, resolve_mesh, resolve_textures, ResolutionRule};
use super::emit;
use super::rundir::RunDir;
use super::{synth_kind_name, ExperimentConfig};

struct RunRow {
    tag: String,
    kind: SynthKind,
    seed: u64,
    final_l1: f64,
    final_bands: [f64; NUM_BANDS],
}

pub(super) fn cmd_synth(config: &ExperimentConfig) -> Result<()> {
    let kinds = config.synth_kinds()?;
    let iters = config.iters();
    let reference = resolve_textures(config, ResolutionRule::MatchConfig)?;
    let (h, w) = reference.resolution();
    let mesh = resolve_mesh(&config.mesh)?;
    let env = resolve_env(&config.env)?;
    let reference_bands = band_energies(reference.diffuse.data(), 3, h, w)?;

    let mut run = RunDir::create(&config.out_dir())?;
    emit::save_textures(&mut run, "reference", &reference)?;

    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let pool = run.time(&format!("view_pool_seed{seed}"), || {
            build_view_pool(
                &mesh,
                &env,
                &reference,
                config.view_pool,
                config.render_resolution,
                seed,
            )
        })?;
        for &kind in &kinds {
            let tag = format!("{}_seed{}", synth_kind_name(kind), seed);
            let mut opts = SynthOptions::new(kind, iters, seed);
            opts.snapshot_every = config.snapshot_every;
            opts.tv_weight = config.tv_weight;
            opts.noise_scale = config.noise_scale;
            opts.views_per_iter = config.views_per_iter;
            if let Some(lr) = config.lr {
                opts.lr = lr;
            }
            if let Some(windows) = config.schedule {
                opts.schedule = windows.with_iters(iters);
            }
            let result = run.time(&tag, || optimize_synth(&pool, &env, h, w, &opts))?;

            emit::write_trajectory_csv(
                &run.file(format!("trajectory_{tag}.csv")),
                result.records.iter().map(|r| (r.iteration, r.render_l1, r.bands)),
            )?;
            emit::band_trace(result.records.iter().map(|r| (r.iteration, r.bands)))
                .write_csv(&run.file(format!("bands_{tag}.csv")))?;
            let snaps: Vec<&TextureSet> = result.records.iter().map(|r| &r.textures).collect();
            emit::snapshot_grid(&run.file(format!("snapshots_{tag}.png")), &snaps)?;
            let final_set = result.final_textures();
            emit::save_textures(&mut run, &format!("final_{tag}"), final_set)?;
            emit::turntable(
                &mut run,
                &format!("turntable_{tag}"),
                &mesh,
                &env,
                final_set,
                config.turntable_frames,
                config.render_resolution,
            )?;

            let last = result.records.last().expect("a run always records its final state");
            rows.push(RunRow {
                tag,
                kind,
                seed,
                final_l1: last.render_l1,
                final_bands: last.bands,
            });
        }
    }

    let summary = summarize(config, iters, &reference_bands, &rows);
    std::fs::write(run.file("summary.json"), format!("{summary:#}\n"))?;

    let mut metrics = Map::new();
    for row in &rows {
        metrics.insert(row.tag.clone(), json!(row.final_l1));
    }
    run.finish(config, json!({ "final_render_l1": metrics }))
}

fn summarize(
    config: &ExperimentConfig,
    iters: usize,
    reference_bands: &[f64; NUM_BANDS],
    rows: &[RunRow],
) -> Value {
    let band5_ratio =
        |row: &RunRow| row.final_bands[NUM_BANDS - 1] / reference_bands[NUM_BANDS - 1];
    let runs: Vec<Value> = rows
        .iter()
        .map(|row| {
            json!({
                "tag": row.tag,
                "kind": row.kind,
                "seed": row.seed,
                "final_render_l1": row.final_l1,
                "final_band_energies": row.final_bands.to_vec(),
                "band5_to_reference_ratio": band5_ratio(row),
            })
        })
        .collect();

    // Head-to-head per seed: the network run should match the targets more
    // closely while injecting far less top-band energy.
    let mut comparisons = Vec::new();
    for &seed in &config.seeds {
        let find = |kind| rows.iter().find(|r| r.kind == kind && r.seed == seed);
        let (Some(pixel), Some(dcpbr)) = (find(SynthKind::PixelTv), find(SynthKind::Dcpbr)) else {
            continue;
        };
        comparisons.push(json!({
            "seed": seed,
            "pixel_tv_final_render_l1": pixel.final_l1,
            "dcpbr_final_render_l1": dcpbr.final_l1,
            "dcpbr_l1_below_pixel_tv": dcpbr.final_l1 < pixel.final_l1,
            "pixel_tv_band5_ratio": band5_ratio(pixel),
            "dcpbr_band5_ratio": band5_ratio(dcpbr),
        }));
    }

    json!({
        "iterations": iters,
        "reference_band_energies": reference_bands.to_vec(),
        "runs": runs,
        "comparisons": comparisons,
    })
}
