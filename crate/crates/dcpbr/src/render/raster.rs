//! Fixed-function rasterization of a mesh into per-pixel geometry
//! buffers. This stage is deliberately non-differentiable: it runs once
//! per camera and everything downstream reads the frozen result.

use rayon::prelude::*;

use super::mesh::Mesh;
use super::vec3::{self, Vec3};
use super::Camera;

/// Per-pixel geometry at pixel centers. Arrays are row-major `res x res`;
/// entries where `mask` is false are zeroed and must not be read.
pub struct GBuffer {
    pub res: usize,
    pub mask: Vec<bool>,
    pub uv: Vec<[f64; 2]>,
    pub normal: Vec<Vec3>,
    pub tangent: Vec<Vec3>,
    pub bitangent: Vec<Vec3>,
    /// Unit direction from the surface point toward the camera.
    pub view: Vec<Vec3>,
    /// Indices of covered pixels in row-major order.
    pub covered: Vec<usize>,
    /// Triangles dropped for having (near-)zero screen area or vertices
    /// behind the camera.
    pub skipped_triangles: usize,
}

struct Projected {
    screen: [f64; 2],
    /// Positive distance along the view axis.
    depth: f64,
}

/// Interpolated attributes of one covered pixel: uv, then the shading
/// frame (normal, tangent, bitangent), then the view direction.
type PixelAttrs = ([f64; 2], Vec3, Vec3, Vec3, Vec3);

pub fn rasterize(mesh: &Mesh, cam: &Camera) -> GBuffer {
    let res = cam.res;
    let n_px = res * res;
    let (right, up, back) = cam.basis();
    let eye = cam.eye();
    let half = (cam.fov / 2.0).tan();
    let scale = res as f64 / 2.0;

    let project = |p: Vec3| -> Projected {
        let rel = vec3::sub(p, eye);
        let x = vec3::dot(rel, right);
        let y = vec3::dot(rel, up);
        let depth = -vec3::dot(rel, back);
        let sx = (x / (depth * half) + 1.0) * scale;
        let sy = (1.0 - y / (depth * half)) * scale;
        Projected { screen: [sx, sy], depth }
    };

    let mut depth_buf = vec![f64::INFINITY; n_px];
    let mut tri_buf = vec![usize::MAX; n_px];
    let mut bary_buf = vec![[0.0f64; 3]; n_px];
    let mut skipped = 0usize;

    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let p: Vec<Projected> = tri.iter().map(|&v| project(mesh.vertices[v].position)).collect();
        if p.iter().any(|q| q.depth < 1e-9) {
            skipped += 1;
            continue;
        }
        let (a, b, c) = (p[0].screen, p[1].screen, p[2].screen);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if area.abs() < 1e-12 {
            skipped += 1;
            continue;
        }
        let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let max_x = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(res.saturating_sub(1));
        let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let max_y = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(res.saturating_sub(1));
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let inv_area = 1.0 / area;
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                let q = [px as f64 + 0.5, py as f64 + 0.5];
                let w0 = ((b[0] - q[0]) * (c[1] - q[1]) - (c[0] - q[0]) * (b[1] - q[1])) * inv_area;
                let w1 = ((c[0] - q[0]) * (a[1] - q[1]) - (a[0] - q[0]) * (c[1] - q[1])) * inv_area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // perspective-correct weights from screen-space ones
                let l = [w0 / p[0].depth, w1 / p[1].depth, w2 / p[2].depth];
                let inv_sum = 1.0 / (l[0] + l[1] + l[2]);
                let depth = inv_sum;
                let idx = py * res + px;
                if depth < depth_buf[idx] {
                    depth_buf[idx] = depth;
                    tri_buf[idx] = ti;
                    bary_buf[idx] = [l[0] * inv_sum, l[1] * inv_sum, l[2] * inv_sum];
                }
            }
        }
    }

    let mut g = GBuffer {
        res,
        mask: vec![false; n_px],
        uv: vec![[0.0; 2]; n_px],
        normal: vec![[0.0; 3]; n_px],
        tangent: vec![[0.0; 3]; n_px],
        bitangent: vec![[0.0; 3]; n_px],
        view: vec![[0.0; 3]; n_px],
        covered: Vec::new(),
        skipped_triangles: skipped,
    };

    let rows: Vec<(usize, Vec<Option<PixelAttrs>>)> = (0..res)
        .into_par_iter()
        .map(|py| {
            let mut row = Vec::with_capacity(res);
            for px in 0..res {
                let idx = py * res + px;
                let ti = tri_buf[idx];
                if ti == usize::MAX {
                    row.push(None);
                    continue;
                }
                let tri = mesh.triangles[ti];
                let w = bary_buf[idx];
                let mut uv = [0.0; 2];
                let mut normal = [0.0; 3];
                let mut tangent = [0.0; 3];
                let mut world = [0.0; 3];
                for (k, &vi) in tri.iter().enumerate() {
                    let vert = &mesh.vertices[vi];
                    uv[0] += w[k] * vert.uv[0];
                    uv[1] += w[k] * vert.uv[1];
                    normal = vec3::add(normal, vec3::scale(vert.normal, w[k]));
                    tangent = vec3::add(tangent, vec3::scale(vert.tangent, w[k]));
                    world = vec3::add(world, vec3::scale(vert.position, w[k]));
                }
                let normal = vec3::normalize(normal);
                let tangent = vec3::sub(tangent, vec3::scale(normal, vec3::dot(normal, tangent)));
                let tangent = vec3::try_normalize(tangent)
                    .unwrap_or_else(|| super::mesh::fallback_tangent(normal));
                let bitangent = vec3::cross(normal, tangent);
                let view = vec3::normalize(vec3::sub(eye, world));
                row.push(Some((uv, normal, tangent, bitangent, view)));
            }
            (py, row)
        })
        .collect();

    for (py, row) in rows {
        for (px, cell) in row.into_iter().enumerate() {
            if let Some((uv, normal, tangent, bitangent, view)) = cell {
                let idx = py * res + px;
                g.mask[idx] = true;
                g.uv[idx] = uv;
                g.normal[idx] = normal;
                g.tangent[idx] = tangent;
                g.bitangent[idx] = bitangent;
                g.view[idx] = view;
                g.covered.push(idx);
            }
        }
    }
    g
}
