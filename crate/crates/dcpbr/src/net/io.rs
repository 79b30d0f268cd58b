//! PNG exchange format for texture sets: `diffuse.png` (RGB),
//! `rough_metal.png` (roughness in R, metalness in G, B zero) and
//! `normal.png` (unit vector mapped by (n+1)/2). All three are 8-bit.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::{Error, Result};

use super::TextureSet;

const DIFFUSE: &str = "diffuse.png";
const ROUGH_METAL: &str = "rough_metal.png";
const NORMAL: &str = "normal.png";

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the triplet into `dir`, which must already exist.
pub fn save_texture_set(dir: &Path, set: &TextureSet) -> Result<()> {
    let (h, w) = set.resolution();
    let plane = h * w;
    let d = set.diffuse.data();
    let rm = set.rough_metal.data();
    let n = set.normal.data();

    let at = |data: &[f64], c: usize, x: u32, y: u32| data[c * plane + y as usize * w + x as usize];
    let diffuse = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb([quantize(at(d, 0, x, y)), quantize(at(d, 1, x, y)), quantize(at(d, 2, x, y))])
    });
    let rough_metal = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb([quantize(at(rm, 0, x, y)), quantize(at(rm, 1, x, y)), 0])
    });
    let normal = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb([
            quantize((at(n, 0, x, y) + 1.0) / 2.0),
            quantize((at(n, 1, x, y) + 1.0) / 2.0),
            quantize((at(n, 2, x, y) + 1.0) / 2.0),
        ])
    });
    diffuse.save(dir.join(DIFFUSE))?;
    rough_metal.save(dir.join(ROUGH_METAL))?;
    normal.save(dir.join(NORMAL))?;
    Ok(())
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

/// Loads a triplet written by [`save_texture_set`]. Normals are
/// re-normalized after dequantization; a texel whose z component does not
/// stay positive is rejected as corrupt.
pub fn load_texture_set(dir: &Path) -> Result<TextureSet> {
    let diffuse = read_rgb(&dir.join(DIFFUSE))?;
    let rough_metal = read_rgb(&dir.join(ROUGH_METAL))?;
    let normal = read_rgb(&dir.join(NORMAL))?;
    let (w, h) = diffuse.dimensions();
    for (name, img) in [(ROUGH_METAL, &rough_metal), (NORMAL, &normal)] {
        if img.dimensions() != (w, h) {
            return Err(Error::Config(format!(
                "{name} is {}x{} but {DIFFUSE} is {w}x{h}",
                img.dimensions().0,
                img.dimensions().1
            )));
        }
    }
    let (h, w) = (h as usize, w as usize);
    let plane = h * w;

    let mut d = vec![0.0; 3 * plane];
    let mut rm = vec![0.0; 2 * plane];
    let mut n = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dp = diffuse.get_pixel(x as u32, y as u32).0;
            let rp = rough_metal.get_pixel(x as u32, y as u32).0;
            let np = normal.get_pixel(x as u32, y as u32).0;
            for c in 0..3 {
                d[c * plane + i] = dp[c] as f64 / 255.0;
            }
            for c in 0..2 {
                rm[c * plane + i] = rp[c] as f64 / 255.0;
            }
            let v = [
                np[0] as f64 / 255.0 * 2.0 - 1.0,
                np[1] as f64 / 255.0 * 2.0 - 1.0,
                np[2] as f64 / 255.0 * 2.0 - 1.0,
            ];
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if v[2] <= 0.0 || len == 0.0 {
                return Err(Error::Config(format!(
                    "{NORMAL} texel ({x},{y}) does not decode to an upward normal"
                )));
            }
            for c in 0..3 {
                n[c * plane + i] = v[c] / len;
            }
        }
    }
    TextureSet::from_maps(h, w, d, rm, n)
}
