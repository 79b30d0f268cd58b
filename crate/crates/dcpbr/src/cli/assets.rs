//! Built-in inputs so every experiment runs with zero external assets: a
//! synthetic texture set whose diffuse spectrum is known in closed form,
//! two handcrafted light rigs beside the daylight default, and
//! name-or-path resolution for meshes, environments and texture sets.

use std::f64::consts::TAU;
use std::path::Path;

use crate::analysis::NUM_BANDS;
use crate::net::{load_texture_set, TextureSet};
use crate::render::{build_env, load_env_png, load_obj, EnvLight, Mesh};
use crate::{Error, Result};

use super::ExperimentConfig;

/// Smallest side length at which the five probe waves of the built-in
/// pattern stay distinct and land mid-band.
pub const PATTERN_MIN_RES: usize = 16;

/// Amplitude of each probe wave; five of them on top of the channel means
/// keep every texel inside (0, 1).
const AMPLITUDE: f64 = 0.055;

/// Diffuse channel means. All are offset from the 0.5 a fresh decode
/// starts at, so even the DC-dominated lowest band has fitting work to do.
const MEANS: [f64; 3] = [0.3, 0.35, 0.4];

/// Diagonal probe frequency per band: `u_k = round((k - 0.5) res / 10)`
/// puts the wave's spectral ring in the middle of band `k`.
pub fn pattern_frequencies(res: usize) -> Result<[usize; NUM_BANDS]> {
    if res < PATTERN_MIN_RES {
        return Err(Error::Config(format!(
            "the built-in pattern needs a resolution of at least {PATTERN_MIN_RES}, got {res}"
        )));
    }
    let mut out = [0usize; NUM_BANDS];
    for (k, u) in out.iter_mut().enumerate() {
        *u = ((k as f64 + 0.5) * res as f64 / 10.0).round() as usize;
    }
    Ok(out)
}

/// Golden-angle phases keep the three channels visually distinct without
/// touching the energies (a delta pair's magnitude is phase-free).
fn phase(channel: usize, band: usize) -> f64 {
    TAU * (0.618_033_988_749_895 * (5 * channel + band + 1) as f64).fract()
}

/// Synthetic texture set: each diffuse channel is its mean plus five
/// diagonal sine waves, one per frequency band; roughness ramps across x,
/// metalness is zero and normals are flat. Integer frequencies make the
/// diffuse spectrum five pairs of delta bins, giving the band energies the
/// closed form in [`pattern_band_energies`].
pub fn pattern_texture(res: usize) -> Result<TextureSet> {
    let freqs = pattern_frequencies(res)?;
    let plane = res * res;
    let mut diffuse = vec![0.0; 3 * plane];
    for c in 0..3 {
        for y in 0..res {
            for x in 0..res {
                let mut v = MEANS[c];
                for (k, &u) in freqs.iter().enumerate() {
                    v += AMPLITUDE * (TAU * (u * (x + y)) as f64 / res as f64 + phase(c, k)).sin();
                }
                diffuse[c * plane + y * res + x] = v;
            }
        }
    }
    let mut rough_metal = vec![0.0; 2 * plane];
    for y in 0..res {
        for x in 0..res {
            rough_metal[y * res + x] = 0.3 + 0.4 * x as f64 / (res - 1) as f64;
        }
    }
    let mut normal = vec![0.0; 3 * plane];
    normal[2 * plane..].fill(1.0);
    TextureSet::from_maps(res, res, diffuse, rough_metal, normal)
}

/// Closed-form diffuse band energies of [`pattern_texture`]: a sine at
/// integer frequency contributes two conjugate bins of squared magnitude
/// `(A res^2 / 2)^2` each, and the channel means sit in band 1's DC bin.
pub fn pattern_band_energies(res: usize) -> Result<[f64; NUM_BANDS]> {
    pattern_frequencies(res)?;
    let r4 = (res as f64).powi(4);
    let wave = 3.0 * AMPLITUDE * AMPLITUDE / 2.0 * r4;
    let dc: f64 = MEANS.iter().map(|&m| m * m).sum::<f64>() * r4;
    let mut out = [wave; NUM_BANDS];
    out[0] += dc;
    Ok(out)
}

/// Eight-by-four studio rig: dim gray base with a warm key, a cool fill
/// and a bright rim texel.
fn studio_env() -> EnvLight {
    let (cols, rows) = (8, 4);
    let mut rgb = vec![0.05; cols * rows * 3];
    let mut put = |row: usize, col: usize, c: [f64; 3]| {
        rgb[(row * cols + col) * 3..][..3].copy_from_slice(&c);
    };
    put(1, 1, [3.5, 3.2, 2.8]);
    put(1, 5, [1.0, 1.1, 1.4]);
    put(2, 7, [1.8, 1.8, 1.8]);
    build_env(cols, rows, &rgb).expect("studio grid is always valid")
}

/// Warm-horizon rig: dim blue zenith, bright orange horizon band with a
/// sun texel, dark warm ground.
fn sunset_env() -> EnvLight {
    let (cols, rows) = (8, 4);
    let band = [[0.05, 0.08, 0.2], [0.5, 0.3, 0.25], [2.2, 1.1, 0.45], [0.12, 0.07, 0.04]];
    let mut rgb = Vec::with_capacity(cols * rows * 3);
    for row in band {
        for _ in 0..cols {
            rgb.extend_from_slice(&row);
        }
    }
    rgb[(2 * cols + 2) * 3..][..3].copy_from_slice(&[6.0, 3.0, 1.2]);
    build_env(cols, rows, &rgb).expect("sunset grid is always valid")
}

/// `daylight | studio | sunset`, or a path to a lat-long PNG.
pub fn resolve_env(source: &str) -> Result<EnvLight> {
    if source.ends_with(".png") {
        return load_env_png(Path::new(source));
    }
    match source {
        "daylight" => Ok(EnvLight::daylight()),
        "studio" => Ok(studio_env()),
        "sunset" => Ok(sunset_env()),
        other => Err(Error::Config(format!(
            "unknown environment `{other}`; use daylight | studio | sunset or a .png path"
        ))),
    }
}

/// `sphere | plane`, or a path to an OBJ file.
pub fn resolve_mesh(source: &str) -> Result<Mesh> {
    if source.ends_with(".obj") {
        return load_obj(Path::new(source));
    }
    match source {
        "sphere" => Ok(Mesh::sphere(32, 16)),
        "plane" => Ok(Mesh::plane()),
        other => Err(Error::Config(format!(
            "unknown mesh `{other}`; use sphere | plane or an .obj path"
        ))),
    }
}

/// How a loaded texture set's size must relate to the configured
/// resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum ResolutionRule {
    /// Experiments that decode at the configured resolution.
    MatchConfig,
    /// Passive commands that accept the file's native size.
    Native,
}

/// The configured texture source: a PNG triplet directory, or the built-in
/// pattern at the configured resolution when none is given.
pub(super) fn resolve_textures(
    config: &ExperimentConfig,
    rule: ResolutionRule,
) -> Result<TextureSet> {
    let Some(dir) = &config.textures else {
        return pattern_texture(config.resolution);
    };
    let set = load_texture_set(dir)?;
    let (h, w) = set.resolution();
    if rule == ResolutionRule::MatchConfig && (h, w) != (config.resolution, config.resolution) {
        return Err(Error::Config(format!(
            "texture set {} is {h}x{w} but the run is configured for {res}x{res}",
            dir.display(),
            res = config.resolution
        )));
    }
    Ok(set)
}
