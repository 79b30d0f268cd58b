//! Directional-light environments. A lat-long map turns into one light
//! per texel at the texel's center direction, weighted by the texel's
//! exact solid angle, so the weights of a full map sum to 4 pi and the
//! lighting integral becomes a deterministic finite sum.

use std::path::Path;

use super::vec3::{self, Vec3};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Light {
    /// Unit direction from the surface toward the light.
    pub dir: Vec3,
    /// Linear radiance, non-negative per channel.
    pub radiance: [f64; 3],
    /// Solid-angle factor.
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct EnvLight {
    pub lights: Vec<Light>,
    /// Texels whose radiance had to be clamped up to zero on load.
    pub clamped_texels: usize,
}

impl EnvLight {
    /// Single directional light with unit weight.
    pub fn single(dir: Vec3, radiance: [f64; 3]) -> EnvLight {
        EnvLight {
            lights: vec![Light { dir: vec3::normalize(dir), radiance, weight: 1.0 }],
            clamped_texels: 0,
        }
    }

    /// Constant-radiance full-sphere environment on a `cols x rows` grid.
    pub fn uniform(cols: usize, rows: usize, radiance: [f64; 3]) -> EnvLight {
        let data = vec![radiance; cols * rows].concat();
        build_env(cols, rows, &data).expect("uniform grid is always valid")
    }

    /// Small fixed daylight rig used by the built-in experiments: a warm
    /// key light, a cool six-light sky ring and a dim ground bounce.
    /// Deterministic and cheap (8 lights).
    pub fn daylight() -> EnvLight {
        let mut lights = vec![Light {
            dir: vec3::normalize([0.4, 0.8, 0.45]),
            radiance: [3.2, 3.0, 2.6],
            weight: 1.2,
        }];
        for k in 0..6 {
            let phi = std::f64::consts::TAU * k as f64 / 6.0;
            let elev: f64 = 0.5;
            lights.push(Light {
                dir: [elev.cos() * phi.cos(), elev.sin(), elev.cos() * phi.sin()],
                radiance: [0.35, 0.42, 0.55],
                weight: 1.6,
            });
        }
        lights.push(Light { dir: [0.0, -1.0, 0.0], radiance: [0.18, 0.16, 0.14], weight: 1.5 });
        EnvLight { lights, clamped_texels: 0 }
    }
}

/// Builds the light list from a linear-radiance lat-long map given as
/// row-major RGB triples, row 0 at the north pole (+y). Negative radiance
/// is clamped to zero and counted.
pub fn build_env(cols: usize, rows: usize, rgb: &[f64]) -> Result<EnvLight> {
    if cols < 2 || rows < 1 {
        return Err(Error::Config(format!("environment map {cols}x{rows} is below 2x1")));
    }
    if rgb.len() != cols * rows * 3 {
        return Err(Error::ShapeMismatch {
            op: "build_env",
            detail: format!(
                "{}x{} map needs {} values, got {}",
                cols,
                rows,
                cols * rows * 3,
                rgb.len()
            ),
        });
    }
    let d_phi = std::f64::consts::TAU / cols as f64;
    let mut lights = Vec::with_capacity(cols * rows);
    let mut clamped = 0usize;
    for row in 0..rows {
        let theta_top = std::f64::consts::PI * row as f64 / rows as f64;
        let theta_bot = std::f64::consts::PI * (row + 1) as f64 / rows as f64;
        let theta = (theta_top + theta_bot) / 2.0;
        // exact texel solid angle, so a full map integrates to 4 pi
        let weight = d_phi * (theta_top.cos() - theta_bot.cos());
        for col in 0..cols {
            let phi = d_phi * (col as f64 + 0.5);
            let dir = [theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()];
            let i = (row * cols + col) * 3;
            let mut radiance = [rgb[i], rgb[i + 1], rgb[i + 2]];
            if radiance.iter().any(|&v| v < 0.0) {
                clamped += 1;
                radiance = radiance.map(|v| v.max(0.0));
            }
            // black texels cannot contribute; culling them keeps the
            // light list (and the shading cost) proportional to the lit
            // part of the map
            if radiance != [0.0; 3] {
                lights.push(Light { dir, radiance, weight });
            }
        }
    }
    Ok(EnvLight { lights, clamped_texels: clamped })
}

/// Loads a PNG lat-long map, linearizing the 8-bit values by gamma 2.2.
pub fn load_env_png(path: &Path) -> Result<EnvLight> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    for px in img.pixels() {
        for c in 0..3 {
            rgb.push((px.0[c] as f64 / 255.0).powf(2.2));
        }
    }
    build_env(w as usize, h as usize, &rgb)
}
