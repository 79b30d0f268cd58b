//! Wavefront OBJ import. Supports v/vt/vn and f statements, fan
//! triangulation of polygons, and the usual index forms (absolute or
//! negative). UVs are required on every face corner; normals are rebuilt
//! from geometry when the file carries none.

use std::path::Path;

use super::mesh::{Mesh, Vertex};
use super::vec3;
use crate::{Error, Result};

fn bad(line_no: usize, what: impl std::fmt::Display) -> Error {
    Error::Config(format!("obj line {line_no}: {what}"))
}

fn parse_floats(line_no: usize, parts: &[&str], n: usize) -> Result<Vec<f64>> {
    if parts.len() < n {
        return Err(bad(line_no, format!("expected {n} numbers")));
    }
    parts[..n]
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| bad(line_no, format!("bad number {p:?}"))))
        .collect()
}

fn resolve(line_no: usize, idx: i64, len: usize, what: &str) -> Result<usize> {
    let resolved = if idx > 0 { idx - 1 } else { len as i64 + idx };
    if idx == 0 || resolved < 0 || resolved as usize >= len {
        return Err(bad(line_no, format!("{what} index {idx} out of range (have {len})")));
    }
    Ok(resolved as usize)
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;

    let mut positions: Vec<vec3::Vec3> = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut normals: Vec<vec3::Vec3> = Vec::new();
    // corner = (position, uv, normal) index triple, deduplicated
    let mut corner_ids: std::collections::HashMap<(usize, usize, i64), usize> =
        std::collections::HashMap::new();
    let mut vertices: Vec<Vertex> = Vec::new();
    let mut corner_refs: Vec<(usize, i64)> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let keyword = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match keyword {
            "v" => {
                let c = parse_floats(line_no, &rest, 3)?;
                positions.push([c[0], c[1], c[2]]);
            }
            "vt" => {
                let c = parse_floats(line_no, &rest, 2)?;
                uvs.push([c[0], c[1]]);
            }
            "vn" => {
                let c = parse_floats(line_no, &rest, 3)?;
                normals.push([c[0], c[1], c[2]]);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(bad(line_no, "face needs at least 3 corners"));
                }
                let mut ids = Vec::with_capacity(rest.len());
                for corner in &rest {
                    let mut fields = corner.split('/');
                    let vi: i64 = fields
                        .next()
                        .and_then(|f| f.parse().ok())
                        .ok_or_else(|| bad(line_no, format!("bad corner {corner:?}")))?;
                    let ti: Option<i64> = fields
                        .next()
                        .filter(|f| !f.is_empty())
                        .map(|f| f.parse())
                        .transpose()
                        .map_err(|_| bad(line_no, format!("bad corner {corner:?}")))?;
                    let ni: Option<i64> = fields
                        .next()
                        .filter(|f| !f.is_empty())
                        .map(|f| f.parse())
                        .transpose()
                        .map_err(|_| bad(line_no, format!("bad corner {corner:?}")))?;
                    let ti = ti.ok_or_else(|| {
                        bad(line_no, "face corner has no uv; meshes must ship uv coordinates")
                    })?;
                    let v = resolve(line_no, vi, positions.len(), "vertex")?;
                    let t = resolve(line_no, ti, uvs.len(), "uv")?;
                    let n = match ni {
                        Some(n) => resolve(line_no, n, normals.len(), "normal")? as i64,
                        None => -1,
                    };
                    let id = *corner_ids.entry((v, t, n)).or_insert_with(|| {
                        vertices.push(Vertex {
                            position: positions[v],
                            uv: uvs[t],
                            normal: if n >= 0 { normals[n as usize] } else { [0.0; 3] },
                            tangent: [0.0; 3],
                            bitangent: [0.0; 3],
                        });
                        corner_refs.push((v, n));
                        vertices.len() - 1
                    });
                    ids.push(id);
                }
                for k in 1..ids.len() - 1 {
                    triangles.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
            // groups, materials, smoothing and the rest are irrelevant here
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(Error::Config(format!("{} contains no faces", path.display())));
    }

    let mut mesh = Mesh { vertices, triangles };
    fill_missing_normals(&mut mesh, &corner_refs);
    mesh.compute_tangents();
    mesh.validate()?;
    Ok(mesh)
}

/// Area-weighted face-normal accumulation for corners without a vn
/// reference. Corners sharing a position share the accumulated normal.
fn fill_missing_normals(mesh: &mut Mesh, corner_refs: &[(usize, i64)]) {
    if corner_refs.iter().all(|&(_, n)| n >= 0) {
        return;
    }
    let max_pos = corner_refs.iter().map(|&(v, _)| v).max().unwrap_or(0) + 1;
    let mut acc = vec![[0.0; 3]; max_pos];
    for tri in &mesh.triangles {
        let [a, b, c] = *tri;
        let face = vec3::cross(
            vec3::sub(mesh.vertices[b].position, mesh.vertices[a].position),
            vec3::sub(mesh.vertices[c].position, mesh.vertices[a].position),
        );
        for &i in tri {
            let pos = corner_refs[i].0;
            acc[pos] = vec3::add(acc[pos], face);
        }
    }
    for (vert, &(pos, n)) in mesh.vertices.iter_mut().zip(corner_refs) {
        if n < 0 {
            vert.normal = vec3::try_normalize(acc[pos]).unwrap_or([0.0, 1.0, 0.0]);
        }
    }
}
