//! Fixed-geometry rendering: meshes are rasterized once per camera into
//! G-buffers, and only the shading of those buffers is differentiable.
//! Texture-map gradients never need geometry derivatives, so the
//! rasterizer stays a plain fixed-function pass.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

mod env;
mod mesh;
mod obj;
mod raster;
mod shade;
mod vec3;

#[cfg(test)]
mod tests;

pub use env::{build_env, load_env_png, EnvLight, Light};
pub use mesh::{Mesh, Vertex};
pub use obj::load_obj;
pub use raster::{rasterize, GBuffer};
pub use shade::{shade, tonemap, tonemap_scalar, SPECULAR_GUARD};

pub const DEFAULT_DISTANCE: f64 = 2.5;
pub const DEFAULT_FOV: f64 = std::f64::consts::FRAC_PI_4;
pub const DEFAULT_RES: usize = 64;

/// Pinhole camera orbiting the origin with +y up.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    /// Elevation above the horizon, radians.
    pub elevation: f64,
    /// Azimuth around +y, radians.
    pub azimuth: f64,
    pub distance: f64,
    /// Vertical field of view, radians, in (0, pi).
    pub fov: f64,
    /// Square image resolution.
    pub res: usize,
}

impl Camera {
    pub fn new(elevation: f64, azimuth: f64) -> Camera {
        Camera {
            elevation,
            azimuth,
            distance: DEFAULT_DISTANCE,
            fov: DEFAULT_FOV,
            res: DEFAULT_RES,
        }
    }

    pub fn eye(&self) -> [f64; 3] {
        [
            self.distance * self.elevation.cos() * self.azimuth.sin(),
            self.distance * self.elevation.sin(),
            self.distance * self.elevation.cos() * self.azimuth.cos(),
        ]
    }

    /// Right, up and backward unit axes of the view frame; the camera
    /// looks along -backward at the origin.
    pub fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let back = vec3::normalize(self.eye());
        let world_up = if back[1].abs() < 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let right = vec3::normalize(vec3::cross(world_up, back));
        let up = vec3::cross(back, right);
        (right, up, back)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseRule {
    /// Elevation uniform in (-pi/3, pi/3), azimuth uniform over the circle.
    FullBody,
    /// Elevation and azimuth both within two degrees of straight-on, for
    /// views that look almost identical.
    Adjacent,
}

pub fn sample_cameras(n: usize, rule: PoseRule, seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_deg = 2.0f64.to_radians();
    (0..n)
        .map(|_| match rule {
            PoseRule::FullBody => {
                let elevation =
                    rng.random_range(-std::f64::consts::FRAC_PI_3..std::f64::consts::FRAC_PI_3);
                let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
                Camera::new(elevation, azimuth)
            }
            PoseRule::Adjacent => {
                let elevation = rng.random_range(-two_deg..two_deg);
                let azimuth = rng.random_range(-two_deg..two_deg);
                Camera::new(elevation, azimuth)
            }
        })
        .collect()
}

/// Tonemaps a linear `[1,3,R,R]` image and writes it as an 8-bit PNG.
pub fn save_render_png(path: &Path, image: &crate::tensor::Tensor) -> Result<()> {
    let shape = image.shape();
    assert_eq!(shape.len(), 4, "expected an image tensor");
    let (h, w) = (shape[2], shape[3]);
    let plane = h * w;
    let data = image.data();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| (tonemap_scalar(data[c * plane + i]) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path)?;
    Ok(())
}
