//! Artifact writers shared by the commands: trajectory CSVs, texture and
//! snapshot PNGs, turntable and strip renders.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::analysis::{BandTrace, NUM_BANDS};
use crate::net::{save_texture_set, TextureSet};
use crate::render::{rasterize, save_render_png, shade, tonemap_scalar, Camera, EnvLight, Mesh};
use crate::tensor::Tape;
use crate::Result;

use super::rundir::RunDir;

/// Orbit elevation for turntable frames: high enough to see the top of a
/// shape, low enough to keep the silhouette wide.
const TURNTABLE_ELEVATION: f64 = 0.35;

pub(super) fn write_trajectory_csv(
    path: &Path,
    rows: impl Iterator<Item = (usize, f64, [f64; NUM_BANDS])>,
) -> Result<()> {
    let mut s = String::from("iter,loss,E1,E2,E3,E4,E5\n");
    for (iter, loss, e) in rows {
        s.push_str(&format!("{iter},{loss},{},{},{},{},{}\n", e[0], e[1], e[2], e[3], e[4]));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub(super) fn band_trace(rows: impl Iterator<Item = (usize, [f64; NUM_BANDS])>) -> BandTrace {
    let mut trace = BandTrace::new();
    for (iter, e) in rows {
        trace.push(iter, e);
    }
    trace
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tiles the diffuse maps of a snapshot sequence into one reading-order
/// grid image.
pub(super) fn snapshot_grid(path: &Path, snapshots: &[&TextureSet]) -> Result<()> {
    assert!(!snapshots.is_empty(), "a run always records at least its final state");
    let (h, w) = snapshots[0].resolution();
    let cols = (snapshots.len() as f64).sqrt().ceil() as usize;
    let rows = snapshots.len().div_ceil(cols);
    let img = RgbImage::from_fn((cols * w) as u32, (rows * h) as u32, |x, y| {
        let cell = (y as usize / h) * cols + x as usize / w;
        if cell >= snapshots.len() {
            return Rgb([0, 0, 0]);
        }
        let data = snapshots[cell].diffuse.data();
        let plane = h * w;
        let i = (y as usize % h) * w + x as usize % w;
        Rgb([quantize(data[i]), quantize(data[plane + i]), quantize(data[2 * plane + i])])
    });
    img.save(path)?;
    Ok(())
}

/// Saves a texture triplet under `rel` and registers the three files.
pub(super) fn save_textures(run: &mut RunDir, rel: &str, set: &TextureSet) -> Result<()> {
    let dir = run.subdir(rel)?;
    save_texture_set(&dir, set)?;
    for name in ["diffuse.png", "rough_metal.png", "normal.png"] {
        run.file(format!("{rel}/{name}"));
    }
    Ok(())
}

/// Renders `frames` orbit views of the textured mesh under one light rig.
pub(super) fn turntable(
    run: &mut RunDir,
    rel: &str,
    mesh: &Mesh,
    env: &EnvLight,
    set: &TextureSet,
    frames: usize,
    res: usize,
) -> Result<()> {
    run.subdir(rel)?;
    let set = set.detach();
    for i in 0..frames {
        let mut cam =
            Camera::new(TURNTABLE_ELEVATION, std::f64::consts::TAU * i as f64 / frames as f64);
        cam.res = res;
        let g = rasterize(mesh, &cam);
        let mut tape = Tape::new();
        let linear = shade(&mut tape, &set, &g, env)?;
        save_render_png(&run.file(format!("{rel}/frame_{i:02}.png")), &linear)?;
    }
    Ok(())
}

/// One row of tonemapped views, left to right in camera order. All
/// cameras must share one resolution.
pub(super) fn view_strip(
    path: &Path,
    mesh: &Mesh,
    env: &EnvLight,
    set: &TextureSet,
    cameras: &[Camera],
) -> Result<()> {
    assert!(!cameras.is_empty(), "a strip needs at least one view");
    let res = cameras[0].res;
    let set = set.detach();
    let mut views = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let g = rasterize(mesh, cam);
        let mut tape = Tape::new();
        views.push(shade(&mut tape, &set, &g, env)?);
    }
    let img = RgbImage::from_fn((cameras.len() * res) as u32, res as u32, |x, y| {
        let (view, x) = (x as usize / res, x as usize % res);
        let data = views[view].data();
        let plane = res * res;
        let i = y as usize * res + x;
        let px = |c: usize| quantize(tonemap_scalar(data[c * plane + i]));
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path)?;
    Ok(())
}
