//! Fit experiment: direct optimization toward a fixed texture target for
//! each requested parameterization, with per-band convergence analysis.

use serde_json::{json, Map, Value};

use crate::analysis::{band_energies, convergence_iteration, spearman, NUM_BANDS};
use crate::net::TextureSet;
use crate::optim::{optimize_fit, FitKind, FitOptions};
use crate::Result;

use super::assets::{resolve_textures, ResolutionRule};
use super::emit;
use super::rundir::RunDir;
use super::{fit_kind_name, ExperimentConfig};

/// A band counts as converged from the first iteration whose energy stays
/// within this fraction of the target's for the rest of the run.
pub const CONVERGENCE_TOL: f64 = 0.1;

const BAND_INDEX: [f64; NUM_BANDS] = [1.0, 2.0, 3.0, 4.0, 5.0];

struct RunRow {
    tag: String,
    kind: FitKind,
    seed: u64,
    final_loss: f64,
    final_bands: [f64; NUM_BANDS],
    convergence: [f64; NUM_BANDS],
    /// `(t_5 - t_1) / iterations`; None when either band never settles.
    spread: Option<f64>,
    correlation: f64,
}

pub(super) fn cmd_fit(config: &ExperimentConfig) -> Result<()> {
    let kinds = config.fit_kinds()?;
    let iters = config.iters();
    let target = resolve_textures(config, ResolutionRule::MatchConfig)?;
    let (h, w) = target.resolution();
    let target_bands = band_energies(target.diffuse.data(), 3, h, w)?;

    let mut run = RunDir::create(&config.out_dir())?;
    emit::save_textures(&mut run, "target", &target)?;

    let mut rows = Vec::new();
    for &kind in &kinds {
        for &seed in &config.seeds {
            let tag = format!("{}_seed{}", fit_kind_name(kind), seed);
            let mut opts = FitOptions::new(kind, iters, seed);
            opts.snapshot_every = config.snapshot_every;
            if let Some(lr) = config.lr {
                opts.lr = lr;
            }
            let result = run.time(&tag, || optimize_fit(&target, &opts))?;

            emit::write_trajectory_csv(
                &run.file(format!("trajectory_{tag}.csv")),
                result.records.iter().map(|r| (r.iteration, r.loss, r.bands)),
            )?;
            let trace = emit::band_trace(result.records.iter().map(|r| (r.iteration, r.bands)));
            trace.write_csv(&run.file(format!("bands_{tag}.csv")))?;
            let snaps: Vec<&TextureSet> = result.records.iter().map(|r| &r.textures).collect();
            emit::snapshot_grid(&run.file(format!("snapshots_{tag}.png")), &snaps)?;
            emit::save_textures(&mut run, &format!("final_{tag}"), result.final_textures())?;

            let convergence = convergence_iteration(&trace, &target_bands, CONVERGENCE_TOL);
            let spread = (convergence[0].is_finite() && convergence[NUM_BANDS - 1].is_finite())
                .then(|| (convergence[NUM_BANDS - 1] - convergence[0]) / iters as f64);
            let last = result.records.last().expect("a run always records its final state");
            rows.push(RunRow {
                tag,
                kind,
                seed,
                final_loss: last.loss,
                final_bands: last.bands,
                convergence,
                spread,
                correlation: spearman(&BAND_INDEX, &convergence),
            });
        }
    }

    write_convergence_csv(&run.file("convergence.csv"), &rows)?;
    let summary = summarize(config, iters, &target_bands, &rows);
    std::fs::write(run.file("summary.json"), format!("{:#}\n", summary))?;

    let mut metrics = Map::new();
    for row in &rows {
        metrics.insert(row.tag.clone(), json!(row.final_loss));
    }
    run.finish(config, json!({ "final_loss": metrics }))
}

/// One line per run: tag then the five convergence iterations, infinite
/// when a band never settled.
fn write_convergence_csv(path: &std::path::Path, rows: &[RunRow]) -> Result<()> {
    let mut s = String::from("run,t1,t2,t3,t4,t5\n");
    for row in rows {
        s.push_str(&row.tag);
        for t in row.convergence {
            s.push_str(&format!(",{t}"));
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn summarize(
    config: &ExperimentConfig,
    iters: usize,
    target_bands: &[f64; NUM_BANDS],
    rows: &[RunRow],
) -> Value {
    let runs: Vec<Value> = rows
        .iter()
        .map(|row| {
            json!({
                "tag": row.tag,
                "kind": row.kind,
                "seed": row.seed,
                "final_loss": row.final_loss,
                "final_band_energies": row.final_bands.to_vec(),
                "convergence_iterations": row.convergence.to_vec(),
                "spread_fraction": row.spread,
                "band_order_correlation": row.correlation,
            })
        })
        .collect();

    // Head-to-head per seed: does the network fit low bands first, and how
    // much tighter is the texel fit's convergence spread.
    let mut comparisons = Vec::new();
    for &seed in &config.seeds {
        let find = |kind| rows.iter().find(|r| r.kind == kind && r.seed == seed);
        let (Some(pixel), Some(reparam)) = (find(FitKind::Pixel), find(FitKind::Reparam)) else {
            continue;
        };
        let ratio = match (pixel.spread, reparam.spread) {
            (Some(p), Some(r)) if r > 0.0 => Some(p / r),
            _ => None,
        };
        comparisons.push(json!({
            "seed": seed,
            "reparam_low_band_first":
                reparam.convergence[0] < reparam.convergence[NUM_BANDS - 1],
            "pixel_spread_fraction": pixel.spread,
            "reparam_spread_fraction": reparam.spread,
            "pixel_to_reparam_spread_ratio": ratio,
        }));
    }

    json!({
        "tolerance": CONVERGENCE_TOL,
        "iterations": iters,
        "target_band_energies": target_bands.to_vec(),
        "runs": runs,
        "comparisons": comparisons,
    })
}
