//! Differentiable Cook-Torrance shading of a G-buffer. The graph treats
//! lights as the batch dimension, so every intermediate is a tensor of
//! shape [L,*,1,P] over the P covered pixels and the whole light sum is a
//! single batched reduction.

use crate::net::TextureSet;
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

use super::env::EnvLight;
use super::raster::GBuffer;

/// Guard added to the specular denominator; keeps grazing pixels finite
/// at the cost of a tiny documented bias.
pub const SPECULAR_GUARD: f64 = 1e-6;

fn per_pixel_const(g: &GBuffer, pick: impl Fn(usize) -> [f64; 3]) -> Tensor {
    let p = g.covered.len();
    let mut data = vec![0.0; 3 * p];
    for (j, &idx) in g.covered.iter().enumerate() {
        let v = pick(idx);
        data[j] = v[0];
        data[p + j] = v[1];
        data[2 * p + j] = v[2];
    }
    Tensor::from_vec(vec![1, 3, 1, p], data)
}

fn schlick_g1(tape: &mut Tape, cos: &Tensor, k: &Tensor, one: &Tensor) -> Result<Tensor> {
    // cos / (cos (1 - k) + k)
    let omk = tape.sub(one, k)?;
    let denom = tape.mul(cos, &omk)?;
    let denom = tape.add(&denom, k)?;
    tape.div(cos, &denom)
}

/// Renders the covered pixels of `g` from `tex` under `env` and scatters
/// them into a linear-radiance image `[1,3,R,R]`; background stays zero.
/// Differentiable in all three texture maps. A camera that covers no
/// pixels yields a constant zero image.
///
/// Per covered pixel the radiance is
/// `sum_i w_i (kd (1-km)/pi + D F G / (4 (n.v)(n.l) + guard)) L_i max(n.l, 0)`
/// with the shading normal taken from the normal map through the
/// per-pixel tangent frame. View- and light-side cosines are clamped to
/// zero first, so silhouette pixels whose interpolated normal tips away
/// from the camera shade to zero instead of going negative.
pub fn shade(tape: &mut Tape, tex: &TextureSet, g: &GBuffer, env: &EnvLight) -> Result<Tensor> {
    let p = g.covered.len();
    let res = g.res;
    if p == 0 || env.lights.is_empty() {
        return Ok(Tensor::zeros(vec![1, 3, res, res]));
    }
    let one = Tensor::scalar(1.0);

    let uvs: Vec<[f64; 2]> = g.covered.iter().map(|&i| g.uv[i]).collect();
    let kd = tape.sample_bilinear(&tex.diffuse, &uvs)?;
    let rm = tape.sample_bilinear(&tex.rough_metal, &uvs)?;
    let nmap = tape.sample_bilinear(&tex.normal, &uvs)?;

    // shading normal: tangent frame times the sampled normal, renormalized
    let t = per_pixel_const(g, |i| g.tangent[i]);
    let b = per_pixel_const(g, |i| g.bitangent[i]);
    let n = per_pixel_const(g, |i| g.normal[i]);
    let mut world = Tensor::zeros(vec![1, 3, 1, p]);
    for (axis, frame) in [&t, &b, &n].into_iter().enumerate() {
        let comp = tape.slice_channels(&nmap, axis, 1)?;
        let part = tape.mul(frame, &comp)?;
        world = tape.add(&world, &part)?;
    }
    let sq = tape.mul(&world, &world)?;
    let len = tape.sum_channels(&sq)?;
    let len = tape.sqrt(&len);
    let n_shade = tape.div(&world, &len)?;

    let view = per_pixel_const(g, |i| g.view[i]);
    let rough = tape.slice_channels(&rm, 0, 1)?;
    let metal = tape.slice_channels(&rm, 1, 1)?;
    let alpha = tape.mul(&rough, &rough)?;
    let alpha2 = tape.mul(&alpha, &alpha)?;
    let k_geom = tape.mul(&alpha, &Tensor::scalar(0.5))?;

    // k_s = 0.04 (1 - km) + km kd
    let one_m_metal = tape.sub(&one, &metal)?;
    let ks_base = tape.mul(&one_m_metal, &Tensor::scalar(0.04))?;
    let ks_metal = tape.mul(&metal, &kd)?;
    let ks = tape.add(&ks_base, &ks_metal)?;
    let one_m_ks = tape.sub(&one, &ks)?;

    // diffuse lobe: kd (1 - km) / pi
    let diff = tape.mul(&kd, &one_m_metal)?;
    let diff = tape.mul(&diff, &Tensor::scalar(1.0 / std::f64::consts::PI))?;

    let nv_raw = tape.mul(&n_shade, &view)?;
    let nv_raw = tape.sum_channels(&nv_raw)?;
    let nv = tape.clamp(&nv_raw, 0.0, f64::INFINITY);

    // lights occupy the batch dimension: [L,3,1,1] against [1,*,1,P]
    let l = env.lights.len();
    let mut dirs = vec![0.0; l * 3];
    let mut radiance = vec![0.0; l * 3];
    let mut weights = vec![0.0; l];
    for (i, light) in env.lights.iter().enumerate() {
        for c in 0..3 {
            dirs[i * 3 + c] = light.dir[c];
            radiance[i * 3 + c] = light.radiance[c];
        }
        weights[i] = light.weight;
    }
    let wi = Tensor::from_vec(vec![l, 3, 1, 1], dirs);
    let li = Tensor::from_vec(vec![l, 3, 1, 1], radiance);
    let wt = Tensor::from_vec(vec![l, 1, 1, 1], weights);

    let ni_raw = tape.mul(&wi, &n_shade)?;
    let ni_raw = tape.sum_channels(&ni_raw)?;
    let ni = tape.clamp(&ni_raw, 0.0, f64::INFINITY);

    // half vector h = normalize(v + l)
    let h = tape.add(&view, &wi)?;
    let h_sq = tape.mul(&h, &h)?;
    let h_len = tape.sum_channels(&h_sq)?;
    let h_len = tape.sqrt(&h_len);
    let h = tape.div(&h, &h_len)?;

    // GGX distribution: a^2 / (pi ((n.h)^2 (a^2 - 1) + 1)^2)
    let nh = tape.mul(&n_shade, &h)?;
    let nh = tape.sum_channels(&nh)?;
    let nh2 = tape.mul(&nh, &nh)?;
    let a2m1 = tape.sub(&alpha2, &one)?;
    let core = tape.mul(&nh2, &a2m1)?;
    let core = tape.add(&core, &one)?;
    let core2 = tape.mul(&core, &core)?;
    let d_denom = tape.mul(&core2, &Tensor::scalar(std::f64::consts::PI))?;
    let ggx = tape.div(&alpha2, &d_denom)?;

    // Schlick Fresnel: ks + (1 - ks)(1 - h.v)^5
    let hv = tape.mul(&h, &view)?;
    let hv = tape.sum_channels(&hv)?;
    let base = tape.sub(&one, &hv)?;
    let base = tape.clamp(&base, 0.0, 1.0);
    let base5 = tape.pow_scalar(&base, 5.0);
    let fresnel = tape.mul(&one_m_ks, &base5)?;
    let fresnel = tape.add(&ks, &fresnel)?;

    let g_view = schlick_g1(tape, &nv, &k_geom, &one)?;
    let g_light = schlick_g1(tape, &ni, &k_geom, &one)?;
    let geom = tape.mul(&g_view, &g_light)?;

    let denom = tape.mul(&nv, &ni)?;
    let denom = tape.mul(&denom, &Tensor::scalar(4.0))?;
    let denom = tape.add(&denom, &Tensor::scalar(SPECULAR_GUARD))?;
    let spec = tape.mul(&ggx, &geom)?;
    let spec = tape.div(&spec, &denom)?;
    let spec = tape.mul(&spec, &fresnel)?;

    let brdf = tape.add(&diff, &spec)?;
    let lit = tape.mul(&brdf, &li)?;
    let lit = tape.mul(&lit, &ni)?;
    let lit = tape.mul(&lit, &wt)?;
    let total = tape.sum_batch(&lit)?;

    let image = tape.scatter_pixels(&total, &g.covered, res, res)?;
    for (i, &v) in image.data().iter().enumerate() {
        if !v.is_finite() {
            let px = i % (res * res);
            return Err(Error::NonFinite(format!(
                "shading produced {v} at pixel ({}, {})",
                px % res,
                px / res
            )));
        }
    }
    Ok(image)
}

/// Clamp, Reinhard `x/(1+x)`, gamma 1/2.2. Maps linear radiance into the
/// display range [0,1); losses consume this space.
pub fn tonemap(tape: &mut Tape, linear: &Tensor) -> Result<Tensor> {
    let clamped = tape.clamp(linear, 0.0, f64::INFINITY);
    let denom = tape.add(&clamped, &Tensor::scalar(1.0))?;
    let reinhard = tape.div(&clamped, &denom)?;
    Ok(tape.pow_scalar(&reinhard, 1.0 / 2.2))
}

/// Scalar twin of [`tonemap`] for image export.
pub fn tonemap_scalar(v: f64) -> f64 {
    let x = v.max(0.0);
    (x / (1.0 + x)).powf(1.0 / 2.2)
}
