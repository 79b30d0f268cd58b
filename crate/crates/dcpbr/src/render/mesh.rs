//! Triangle meshes with per-vertex UVs, normals and tangent frames. The
//! frames drive tangent-space normal mapping, so they are orthonormalized
//! against the vertex normal and kept right-handed (b = n x t).

use super::vec3::{self, Vec3};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Vertex {
    pub position: Vec3,
    pub uv: [f64; 2],
    pub normal: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Vertex>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Unit sphere centered at the origin, poles on the y axis. UVs wrap
    /// azimuth in u and run v from the north pole (0) to the south (1).
    pub fn sphere(sectors: usize, stacks: usize) -> Mesh {
        assert!(sectors >= 3 && stacks >= 2, "sphere needs at least 3x2 subdivisions");
        let mut vertices = Vec::with_capacity((stacks + 1) * (sectors + 1));
        for row in 0..=stacks {
            let v = row as f64 / stacks as f64;
            let theta = std::f64::consts::PI * v;
            for col in 0..=sectors {
                let u = col as f64 / sectors as f64;
                let phi = std::f64::consts::TAU * u;
                let p = [theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()];
                vertices.push(Vertex {
                    position: p,
                    uv: [u, v],
                    normal: p,
                    tangent: [0.0; 3],
                    bitangent: [0.0; 3],
                });
            }
        }
        let cols = sectors + 1;
        let mut triangles = Vec::new();
        for row in 0..stacks {
            for col in 0..sectors {
                let a = row * cols + col;
                let b = a + 1;
                let c = a + cols;
                let d = c + 1;
                // the pole rows collapse one triangle of each quad
                if row > 0 {
                    triangles.push([a, d, b]);
                }
                if row + 1 < stacks {
                    triangles.push([a, c, d]);
                }
            }
        }
        let mut mesh = Mesh { vertices, triangles };
        mesh.compute_tangents();
        mesh
    }

    /// 2x2 quad in the xy plane facing +z, UVs spanning [0,1]^2.
    pub fn plane() -> Mesh {
        let n = [0.0, 0.0, 1.0];
        let corners = [
            ([-1.0, -1.0, 0.0], [0.0, 1.0]),
            ([1.0, -1.0, 0.0], [1.0, 1.0]),
            ([1.0, 1.0, 0.0], [1.0, 0.0]),
            ([-1.0, 1.0, 0.0], [0.0, 0.0]),
        ];
        let vertices = corners
            .iter()
            .map(|&(position, uv)| Vertex {
                position,
                uv,
                normal: n,
                tangent: [0.0; 3],
                bitangent: [0.0; 3],
            })
            .collect();
        let mut mesh = Mesh { vertices, triangles: vec![[0, 1, 2], [0, 2, 3]] };
        mesh.compute_tangents();
        mesh
    }

    pub fn validate(&self) -> Result<()> {
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::Config(format!(
                    "triangle {i} references vertex {} of {}",
                    tri.iter().max().unwrap(),
                    self.vertices.len()
                )));
            }
        }
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.uv.iter().all(|c| c.is_finite()) || !v.position.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite(format!("vertex {i} has non-finite data")));
            }
        }
        Ok(())
    }

    /// Rebuilds tangent frames from the UV parameterization: accumulates
    /// the per-triangle dp/du direction at each vertex, Gram-Schmidts it
    /// against the vertex normal and closes the frame with b = n x t.
    pub fn compute_tangents(&mut self) {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for tri in &self.triangles {
            let [i0, i1, i2] = *tri;
            let (v0, v1, v2) = (self.vertices[i0], self.vertices[i1], self.vertices[i2]);
            let e1 = vec3::sub(v1.position, v0.position);
            let e2 = vec3::sub(v2.position, v0.position);
            let du1 = [v1.uv[0] - v0.uv[0], v1.uv[1] - v0.uv[1]];
            let du2 = [v2.uv[0] - v0.uv[0], v2.uv[1] - v0.uv[1]];
            let det = du1[0] * du2[1] - du2[0] * du1[1];
            if det.abs() < 1e-12 {
                continue;
            }
            let t =
                vec3::scale(vec3::sub(vec3::scale(e1, du2[1]), vec3::scale(e2, du1[1])), 1.0 / det);
            for &i in tri {
                acc[i] = vec3::add(acc[i], t);
            }
        }
        for (v, t) in self.vertices.iter_mut().zip(acc) {
            let n = vec3::normalize(v.normal);
            v.normal = n;
            let projected = vec3::sub(t, vec3::scale(n, vec3::dot(n, t)));
            v.tangent = vec3::try_normalize(projected).unwrap_or_else(|| fallback_tangent(n));
            v.bitangent = vec3::cross(n, v.tangent);
        }
    }
}

/// Any unit vector orthogonal to n, for vertices whose UVs give no
/// usable derivative.
pub(crate) fn fallback_tangent(n: Vec3) -> Vec3 {
    let axis = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    vec3::normalize(vec3::sub(axis, vec3::scale(n, vec3::dot(n, axis))))
}
