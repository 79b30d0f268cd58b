use std::f64::consts::{FRAC_PI_3, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vec3;
use super::*;
use crate::net::{PixelParams, TextureSet};
use crate::tensor::{Tape, Tensor};

fn random_textures(seed: u64, h: usize, w: usize) -> TextureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..8 * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut tape = Tape::new();
    let (set, _) = PixelParams { raw, height: h, width: w }.decode(&mut tape).unwrap();
    set.detach()
}

// ---- scalar reference shading ------------------------------------------

fn sample_ref(data: &[f64], channels: usize, ht: usize, wt: usize, uv: [f64; 2]) -> Vec<f64> {
    let x = (uv[0] * wt as f64 - 0.5).clamp(0.0, (wt - 1) as f64);
    let y = (uv[1] * ht as f64 - 0.5).clamp(0.0, (ht - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(wt - 1), (y0 + 1).min(ht - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let plane = ht * wt;
    (0..channels)
        .map(|c| {
            let t = &data[c * plane..][..plane];
            (1.0 - fy) * ((1.0 - fx) * t[y0 * wt + x0] + fx * t[y0 * wt + x1])
                + fy * ((1.0 - fx) * t[y1 * wt + x0] + fx * t[y1 * wt + x1])
        })
        .collect()
}

fn g1_ref(cos: f64, k: f64) -> f64 {
    cos / (cos * (1.0 - k) + k)
}

/// Direct per-pixel evaluation of the shading model, no tensors involved.
fn shade_reference(tex: &TextureSet, g: &GBuffer, env: &EnvLight) -> Vec<f64> {
    let (th, tw) = tex.resolution();
    let n_px = g.res * g.res;
    let mut img = vec![0.0; 3 * n_px];
    for &idx in &g.covered {
        let uv = g.uv[idx];
        let kd = sample_ref(tex.diffuse.data(), 3, th, tw, uv);
        let rm = sample_ref(tex.rough_metal.data(), 2, th, tw, uv);
        let nm = sample_ref(tex.normal.data(), 3, th, tw, uv);
        let mut world = [0.0; 3];
        for c in 0..3 {
            world[c] =
                g.tangent[idx][c] * nm[0] + g.bitangent[idx][c] * nm[1] + g.normal[idx][c] * nm[2];
        }
        let n = vec3::normalize(world);
        let v = g.view[idx];
        let nv = vec3::dot(n, v).max(0.0);
        let alpha = rm[0] * rm[0];
        let alpha2 = alpha * alpha;
        let k = alpha / 2.0;
        let ks: Vec<f64> = (0..3).map(|c| 0.04 * (1.0 - rm[1]) + rm[1] * kd[c]).collect();
        let mut out = [0.0; 3];
        for light in &env.lights {
            let ni = vec3::dot(light.dir, n).max(0.0);
            let h = vec3::normalize(vec3::add(v, light.dir));
            let nh = vec3::dot(n, h);
            let hv = vec3::dot(h, v);
            let core = nh * nh * (alpha2 - 1.0) + 1.0;
            let d = alpha2 / (PI * core * core);
            let geom = g1_ref(nv, k) * g1_ref(ni, k);
            let denom = 4.0 * nv * ni + SPECULAR_GUARD;
            let base = (1.0 - hv).clamp(0.0, 1.0).powi(5);
            for c in 0..3 {
                let f = ks[c] + (1.0 - ks[c]) * base;
                let spec = d * f * geom / denom;
                let diff = kd[c] * (1.0 - rm[1]) / PI;
                out[c] += light.weight * (diff + spec) * light.radiance[c] * ni;
            }
        }
        for c in 0..3 {
            img[c * n_px + idx] = out[c];
        }
    }
    img
}

// ---- meshes -------------------------------------------------------------

#[test]
fn builtin_meshes_have_orthonormal_right_handed_frames() {
    for mesh in [Mesh::sphere(24, 12), Mesh::plane()] {
        mesh.validate().unwrap();
        for (i, v) in mesh.vertices.iter().enumerate() {
            assert!((vec3::length(v.normal) - 1.0).abs() < 1e-9, "vertex {i} normal");
            assert!((vec3::length(v.tangent) - 1.0).abs() < 1e-9, "vertex {i} tangent");
            assert!((vec3::length(v.bitangent) - 1.0).abs() < 1e-9, "vertex {i} bitangent");
            assert!(vec3::dot(v.normal, v.tangent).abs() < 1e-9, "vertex {i} t.n");
            assert!(vec3::dot(v.normal, v.bitangent).abs() < 1e-9, "vertex {i} b.n");
            let det = vec3::dot(vec3::cross(v.tangent, v.bitangent), v.normal);
            assert!((det - 1.0).abs() < 1e-9, "vertex {i} frame not right-handed: {det}");
        }
    }
}

#[test]
fn sphere_has_no_degenerate_triangles() {
    let mesh = Mesh::sphere(16, 8);
    for tri in &mesh.triangles {
        let [a, b, c] = *tri;
        let area = vec3::length(vec3::cross(
            vec3::sub(mesh.vertices[b].position, mesh.vertices[a].position),
            vec3::sub(mesh.vertices[c].position, mesh.vertices[a].position),
        ));
        assert!(area > 1e-6);
    }
    // closed sphere: pole rows emit one triangle per quad, the rest two
    assert_eq!(mesh.triangles.len(), 16 * (2 * 8 - 2));
}

#[test]
fn plane_tangents_follow_uv_axes() {
    let mesh = Mesh::plane();
    for v in &mesh.vertices {
        // u grows with +x; the frame closes right-handed, so b = n x t
        // points along +y even though v itself grows downward
        assert!(vec3::dot(v.tangent, [1.0, 0.0, 0.0]) > 0.999);
        assert!(vec3::dot(v.bitangent, [0.0, 1.0, 0.0]) > 0.999);
    }
}

// ---- obj import ---------------------------------------------------------

fn write_obj(content: &str) -> tempfile::NamedTempFile {
    use std::io::Write;
    let mut f = tempfile::NamedTempFile::with_suffix(".obj").unwrap();
    f.write_all(content.as_bytes()).unwrap();
    f
}

#[test]
fn obj_quads_triangulate_and_share_corners() {
    let f = write_obj(
        "v -1 -1 0\nv 1 -1 0\nv 1 1 0\nv -1 1 0\n\
         vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n\
         vn 0 0 1\n\
         f 1/1/1 2/2/1 3/3/1 4/4/1\n",
    );
    let mesh = load_obj(f.path()).unwrap();
    assert_eq!(mesh.triangles.len(), 2);
    assert_eq!(mesh.vertices.len(), 4);
    assert!(mesh.vertices.iter().all(|v| vec3::dot(v.normal, [0.0, 0.0, 1.0]) > 0.999));
}

#[test]
fn obj_supports_negative_indices_and_missing_normals() {
    let f = write_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/-3 -2/-2 -1/-1\n");
    let mesh = load_obj(f.path()).unwrap();
    assert_eq!(mesh.triangles.len(), 1);
    // counter-clockwise in the xy plane: rebuilt normal faces +z
    assert!(mesh.vertices.iter().all(|v| v.normal[2] > 0.999));
}

#[test]
fn obj_without_uvs_is_rejected() {
    let f = write_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    let err = load_obj(f.path()).unwrap_err().to_string();
    assert!(err.contains("uv"), "unhelpful error: {err}");
}

#[test]
fn obj_with_out_of_range_index_is_rejected() {
    let f = write_obj("v 0 0 0\nvt 0 0\nf 1/1 2/1 3/1\n");
    assert!(load_obj(f.path()).is_err());
}

// ---- cameras and rasterization ------------------------------------------

#[test]
fn camera_sampling_is_seeded_and_in_range() {
    let a = sample_cameras(4, PoseRule::FullBody, 17);
    let b = sample_cameras(4, PoseRule::FullBody, 17);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.elevation, y.elevation);
        assert_eq!(x.azimuth, y.azimuth);
    }
    for cam in sample_cameras(100, PoseRule::FullBody, 3) {
        assert!(cam.elevation.abs() < FRAC_PI_3);
        assert!((0.0..TAU).contains(&cam.azimuth));
    }
    let adj = sample_cameras(5, PoseRule::Adjacent, 23);
    let four_deg = 4.0f64.to_radians();
    for i in 0..adj.len() {
        for j in i + 1..adj.len() {
            assert!((adj[i].elevation - adj[j].elevation).abs() < four_deg);
            assert!((adj[i].azimuth - adj[j].azimuth).abs() < four_deg);
        }
    }
}

#[test]
fn identical_cameras_rasterize_identically() {
    let mesh = Mesh::sphere(24, 12);
    let cam = Camera::new(0.3, 1.1);
    let a = rasterize(&mesh, &cam);
    let b = rasterize(&mesh, &cam);
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.uv, b.uv);
    assert_eq!(a.normal, b.normal);
    assert_eq!(a.view, b.view);
    assert_eq!(a.covered, b.covered);
}

#[test]
fn quad_coverage_matches_projected_area() {
    let cam = Camera::new(0.0, 0.0);
    let g = rasterize(&Mesh::plane(), &cam);
    assert_eq!(g.skipped_triangles, 0);
    // the quad's corners project to +-1/distance in camera tangent space
    let ndc = (1.0 / cam.distance) / (cam.fov / 2.0).tan();
    let expected = (ndc * cam.res as f64).powi(2);
    let covered = g.covered.len() as f64;
    assert!(
        (covered - expected).abs() / expected < 0.02,
        "covered {covered} vs projected {expected}"
    );
}

#[test]
fn sphere_center_pixel_faces_the_camera() {
    let mut cam = Camera::new(0.0, 0.0);
    cam.res = 65;
    let g = rasterize(&Mesh::sphere(48, 24), &cam);
    let center = (cam.res / 2) * cam.res + cam.res / 2;
    assert!(g.mask[center]);
    let cos = vec3::dot(g.normal[center], g.view[center]);
    assert!(cos > 1.0 - 5e-5, "center normal tilted: cos {cos}");
    assert!(g.normal[center][2] > 0.999);
}

#[test]
fn gbuffer_frames_are_orthonormal_everywhere() {
    let g = rasterize(&Mesh::sphere(24, 12), &Camera::new(0.4, 2.0));
    assert!(g.covered.len() > 200);
    for &i in &g.covered {
        let (t, b, n) = (g.tangent[i], g.bitangent[i], g.normal[i]);
        assert!((vec3::length(t) - 1.0).abs() < 1e-4);
        assert!((vec3::length(b) - 1.0).abs() < 1e-4);
        assert!((vec3::length(n) - 1.0).abs() < 1e-4);
        assert!(vec3::dot(t, n).abs() < 1e-4);
        assert!(vec3::dot(t, b).abs() < 1e-4);
        let det = vec3::dot(vec3::cross(t, b), n);
        assert!((det - 1.0).abs() < 1e-4, "left-handed or skewed frame: det {det}");
        assert!((vec3::length(g.view[i]) - 1.0).abs() < 1e-9);
    }
    for (i, m) in g.mask.iter().enumerate() {
        if !m {
            assert_eq!(g.normal[i], [0.0; 3], "masked pixel {i} carries geometry");
        }
    }
}

#[test]
fn edge_on_plane_covers_nothing() {
    let cam = Camera::new(0.0, std::f64::consts::FRAC_PI_2);
    let g = rasterize(&Mesh::plane(), &cam);
    assert!(g.covered.is_empty());
    assert_eq!(g.skipped_triangles, 2);

    let tex = random_textures(1, 4, 4);
    let mut tape = Tape::new();
    let img = shade(&mut tape, &tex, &g, &EnvLight::daylight()).unwrap();
    assert!(img.data().iter().all(|&v| v == 0.0));
    assert!(img.node().is_none(), "zero-coverage image should not be tracked");
}

// ---- environments -------------------------------------------------------

#[test]
fn full_latlong_weights_sum_to_sphere_solid_angle() {
    let env = EnvLight::uniform(16, 8, [1.0; 3]);
    assert_eq!(env.lights.len(), 128);
    let total: f64 = env.lights.iter().map(|l| l.weight).sum();
    assert!((total - 4.0 * PI).abs() < 1e-3, "weights sum to {total}");
    for l in &env.lights {
        assert!((vec3::length(l.dir) - 1.0).abs() < 1e-12);
        assert!(l.weight > 0.0);
    }
}

#[test]
fn single_texel_map_becomes_one_directional_light() {
    let mut rgb = vec![0.0; 8 * 4 * 3];
    let (row, col) = (1, 2);
    for c in 0..3 {
        rgb[(row * 8 + col) * 3 + c] = 1.0;
    }
    let env = build_env(8, 4, &rgb).unwrap();
    assert_eq!(env.lights.len(), 1);
    let l = &env.lights[0];
    let theta = PI * (row as f64 + 0.5) / 4.0;
    let phi = TAU * (col as f64 + 0.5) / 8.0;
    let expected = [theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()];
    for c in 0..3 {
        assert!((l.dir[c] - expected[c]).abs() < 1e-12);
    }
    let expected_weight = (TAU / 8.0) * ((PI * 0.25).cos() - (PI * 0.5).cos());
    assert!((l.weight - expected_weight).abs() < 1e-12);
}

#[test]
fn upper_hemisphere_map_lights_from_above() {
    let mut rgb = vec![0.0; 8 * 4 * 3];
    for row in 0..2 {
        for col in 0..8 {
            for c in 0..3 {
                rgb[(row * 8 + col) * 3 + c] = 0.7;
            }
        }
    }
    let env = build_env(8, 4, &rgb).unwrap();
    assert_eq!(env.lights.len(), 16);
    assert!(env.lights.iter().all(|l| l.dir[1] >= 0.0));
}

#[test]
fn negative_radiance_is_clamped_and_counted() {
    let mut rgb = vec![0.5; 4 * 2 * 3];
    rgb[0] = -1.0;
    rgb[4] = -0.25;
    let env = build_env(4, 2, &rgb).unwrap();
    assert_eq!(env.clamped_texels, 2);
    assert!(env.lights.iter().all(|l| l.radiance.iter().all(|&v| v >= 0.0)));
}

#[test]
fn env_png_loads_with_gamma_linearization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("env.png");
    let img = image::RgbImage::from_pixel(4, 2, image::Rgb([128, 255, 0]));
    img.save(&path).unwrap();
    let env = load_env_png(&path).unwrap();
    assert_eq!(env.lights.len(), 8);
    let expected = (128.0 / 255.0f64).powf(2.2);
    for l in &env.lights {
        assert!((l.radiance[0] - expected).abs() < 1e-12);
        assert!((l.radiance[1] - 1.0).abs() < 1e-12);
        assert_eq!(l.radiance[2], 0.0);
    }
    assert!(load_env_png(&dir.path().join("missing.png")).is_err());
}

// ---- shading ------------------------------------------------------------

/// One fabricated pixel with a hand-picked frame, for closed-form checks.
fn one_pixel_gbuffer(view: [f64; 3]) -> GBuffer {
    GBuffer {
        res: 1,
        mask: vec![true],
        uv: vec![[0.5, 0.5]],
        normal: vec![[0.0, 0.0, 1.0]],
        tangent: vec![[1.0, 0.0, 0.0]],
        bitangent: vec![[0.0, 1.0, 0.0]],
        view: vec![vec3::normalize(view)],
        covered: vec![0],
        skipped_triangles: 0,
    }
}

fn const_textures(kd: [f64; 3], rough: f64, metal: f64) -> TextureSet {
    TextureSet::from_maps(1, 1, kd.to_vec(), vec![rough, metal], vec![0.0, 0.0, 1.0]).unwrap()
}

#[test]
fn lambert_term_is_one_over_pi() {
    // view perpendicular to the normal kills the specular lobe entirely,
    // light along the normal leaves pure white Lambert
    let g = one_pixel_gbuffer([1.0, 0.0, 0.0]);
    let tex = const_textures([1.0; 3], 1.0, 0.0);
    let env = EnvLight::single([0.0, 0.0, 1.0], [1.0; 3]);
    let mut tape = Tape::new();
    let img = shade(&mut tape, &tex, &g, &env).unwrap();
    for c in 0..3 {
        assert!(
            (img.data()[c] - 1.0 / PI).abs() < 1e-15,
            "channel {c}: {} vs {}",
            img.data()[c],
            1.0 / PI
        );
    }
}

#[test]
fn metal_specular_inherits_diffuse_color() {
    // head-on view and light: h = n, so F collapses to k_s, and with
    // metalness 1 the diffuse lobe vanishes and k_s = k_d
    let kd = [0.8, 0.3, 0.1];
    let rough = 0.5;
    let g = one_pixel_gbuffer([0.0, 0.0, 1.0]);
    let tex = const_textures(kd, rough, 1.0);
    let env = EnvLight::single([0.0, 0.0, 1.0], [1.0; 3]);
    let mut tape = Tape::new();
    let img = shade(&mut tape, &tex, &g, &env).unwrap();
    let alpha = rough * rough;
    let d = 1.0 / (PI * alpha * alpha);
    for c in 0..3 {
        let expected = d * kd[c] / (4.0 + SPECULAR_GUARD);
        assert!(
            (img.data()[c] - expected).abs() < 1e-12,
            "channel {c}: {} vs {expected}",
            img.data()[c]
        );
    }
}

#[test]
fn dielectric_specular_is_neutral() {
    // with metalness 0 the specular lobe uses k_s = 0.04 on every
    // channel, so image minus the analytic diffuse part must be gray
    let kd = [0.8, 0.2, 0.1];
    let g = one_pixel_gbuffer([0.0, 0.0, 1.0]);
    let tex = const_textures(kd, 0.5, 0.0);
    let env = EnvLight::single([0.0, 0.0, 1.0], [1.0; 3]);
    let mut tape = Tape::new();
    let img = shade(&mut tape, &tex, &g, &env).unwrap();
    let residual: Vec<f64> = (0..3).map(|c| img.data()[c] - kd[c] / PI).collect();
    assert!(residual[0] > 1e-4, "specular part unexpectedly tiny");
    for c in 1..3 {
        assert!((residual[c] - residual[0]).abs() < 1e-15, "specular tint differs: {residual:?}");
    }
}

#[test]
fn shading_matches_scalar_reference() {
    let mesh = Mesh::sphere(24, 12);
    let tex = random_textures(7, 16, 16);
    for (i, cam) in sample_cameras(3, PoseRule::FullBody, 77).iter().enumerate() {
        let mut cam = *cam;
        cam.res = 32;
        let g = rasterize(&mesh, &cam);
        assert!(!g.covered.is_empty());
        let mut tape = Tape::new();
        let img = shade(&mut tape, &tex, &g, &EnvLight::daylight()).unwrap();
        let reference = shade_reference(&tex, &g, &EnvLight::daylight());
        let max_ref = reference.iter().cloned().fold(0.0, f64::max);
        for (j, (a, b)) in img.data().iter().zip(&reference).enumerate() {
            assert!(
                (a - b).abs() <= 1e-9 * max_ref.max(1.0),
                "camera {i}, value {j}: graph {a} vs reference {b}"
            );
        }
    }
}

#[test]
fn radiance_scaling_is_exactly_linear() {
    let mesh = Mesh::sphere(16, 8);
    let mut cam = Camera::new(0.2, 0.7);
    cam.res = 24;
    let g = rasterize(&mesh, &cam);
    let tex = random_textures(13, 8, 8);

    let scaled_env = |c: f64| {
        let mut env = EnvLight::daylight();
        for l in &mut env.lights {
            l.radiance = l.radiance.map(|v| v * c);
        }
        env
    };
    let mut tape = Tape::new();
    let base = shade(&mut tape, &tex, &g, &scaled_env(1.0)).unwrap();
    let doubled = shade(&mut tape, &tex, &g, &scaled_env(2.0)).unwrap();
    for (a, b) in base.data().iter().zip(doubled.data()) {
        assert_eq!(2.0 * a, *b, "doubling radiance must double the image bit-for-bit");
    }
    let odd = shade(&mut tape, &tex, &g, &scaled_env(1.7)).unwrap();
    for (a, b) in base.data().iter().zip(odd.data()) {
        assert!((1.7 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
    }
}

#[test]
fn shading_gradients_match_finite_differences() {
    let mesh = Mesh::sphere(24, 12);
    let mut cam = Camera::new(0.35, 1.4);
    cam.res = 24;
    let g = rasterize(&mesh, &cam);
    let env = EnvLight::daylight();
    let base = random_textures(19, 8, 8);
    let maps: [Vec<f64>; 3] = [
        base.diffuse.data().to_vec(),
        base.rough_metal.data().to_vec(),
        base.normal.data().to_vec(),
    ];

    let eval = |maps: &[Vec<f64>; 3], want_grads: bool| {
        let mut tape = Tape::new();
        let d = tape.leaf(vec![1, 3, 8, 8], maps[0].clone());
        let rm = tape.leaf(vec![1, 2, 8, 8], maps[1].clone());
        let nm = tape.leaf(vec![1, 3, 8, 8], maps[2].clone());
        let tex = TextureSet { diffuse: d.clone(), rough_metal: rm.clone(), normal: nm.clone() };
        let img = shade(&mut tape, &tex, &g, &env).unwrap();
        let loss = tape.sum_all(&img);
        let value = loss.item();
        if !want_grads {
            return (value, Vec::new());
        }
        let grads = tape.backward(&loss).unwrap();
        let all = [&d, &rm, &nm].map(|t| grads.get(t).unwrap().to_vec());
        (value, all.to_vec())
    };

    let (_, grads) = eval(&maps, true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for map in 0..3 {
        for _ in 0..10 {
            let i = rng.random_range(0..maps[map].len());
            let mut up = maps.clone();
            up[map][i] += h;
            let mut down = maps.clone();
            down[map][i] -= h;
            let fd = (eval(&up, false).0 - eval(&down, false).0) / (2.0 * h);
            let got = grads[map][i];
            let denom = fd.abs().max(got.abs()).max(1e-6);
            assert!(
                ((fd - got) / denom).abs() < 1e-3,
                "map {map} [{i}]: fd {fd} vs autodiff {got}"
            );
        }
    }
}

#[test]
fn rough_dielectric_sphere_keeps_diffuse_chroma() {
    // moderately saturated albedo: the neutral Fresnel lift at grazing
    // silhouette pixels shifts chroma in proportion to saturation, and
    // extreme albedos would exceed the 2% bound there
    let kd = [0.65, 0.4, 0.25];
    let tex =
        TextureSet::from_maps(1, 1, kd.to_vec(), vec![1.0, 0.0], vec![0.0, 0.0, 1.0]).unwrap();
    let mesh = Mesh::sphere(32, 16);
    let mut cam = Camera::new(0.25, 0.9);
    cam.res = 48;
    let g = rasterize(&mesh, &cam);
    let env = EnvLight::uniform(16, 8, [1.0; 3]);
    let mut tape = Tape::new();
    let img = shade(&mut tape, &tex, &g, &env).unwrap();
    let n_px = cam.res * cam.res;
    let data = img.data();
    let kd_sum: f64 = kd.iter().sum();
    for &i in &g.covered {
        let px = [data[i], data[n_px + i], data[2 * n_px + i]];
        let total: f64 = px.iter().sum();
        assert!(total > 0.0, "covered pixel {i} is black under a full white dome");
        for c in 0..3 {
            let chroma = px[c] / total;
            let expected = kd[c] / kd_sum;
            assert!(
                (chroma - expected).abs() < 0.02,
                "pixel {i} channel {c}: chroma {chroma} vs {expected}"
            );
        }
    }
}

#[test]
fn non_finite_shading_aborts_with_pixel_coordinates() {
    // roughness 0 with exact normal incidence drives the GGX division to
    // 0/0; the shader must refuse to return such an image
    let g = one_pixel_gbuffer([0.0, 0.0, 1.0]);
    let tex = const_textures([0.5; 3], 0.0, 0.0);
    let env = EnvLight::single([0.0, 0.0, 1.0], [1.0; 3]);
    let mut tape = Tape::new();
    assert!(shade(&mut tape, &tex, &g, &env).is_err());
}

// ---- tonemap ------------------------------------------------------------

#[test]
fn tonemap_hits_known_values_and_is_monotone() {
    let mut tape = Tape::new();
    let x = Tensor::from_vec(vec![1, 1, 1, 4], vec![0.0, 1.0, 50.0, -0.5]);
    let y = tonemap(&mut tape, &x).unwrap();
    let d = y.data();
    assert_eq!(d[0], 0.0);
    assert!((d[1] - 0.5f64.powf(1.0 / 2.2)).abs() < 1e-12);
    assert!(d[2] > 0.97 && d[2] < 1.0);
    assert_eq!(d[3], 0.0, "negative radiance must clamp to black");

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut v = 0.0;
    let mut prev = tonemap_scalar(v);
    for _ in 0..50 {
        v += rng.random_range(0.001..0.3);
        let t = tonemap_scalar(v);
        assert!(t > prev, "not monotone at {v}");
        prev = t;
    }
    // graph and scalar tonemap agree
    for (input, out) in x.data().iter().zip(d) {
        assert!((tonemap_scalar(*input) - out).abs() < 1e-15);
    }
}

#[test]
fn tonemap_gradient_is_finite_at_black_pixels() {
    let mut tape = Tape::new();
    let leaf = tape.leaf(vec![1, 1, 1, 3], vec![0.0, 0.5, 2.0]);
    let y = tonemap(&mut tape, &leaf).unwrap();
    let loss = tape.sum_all(&y);
    let grads = tape.backward(&loss).unwrap();
    let g = grads.get(&leaf).unwrap();
    assert_eq!(g[0], 0.0, "black pixels must not emit gradient spikes");
    assert!(g[1].is_finite() && g[1] > 0.0);
    assert!(g[2].is_finite() && g[2] > 0.0);
}

#[test]
fn render_png_export_writes_a_file() {
    let mesh = Mesh::sphere(16, 8);
    let mut cam = Camera::new(0.1, 0.4);
    cam.res = 16;
    let g = rasterize(&mesh, &cam);
    let tex = random_textures(3, 4, 4);
    let mut tape = Tape::new();
    let img = shade(&mut tape, &tex, &g, &EnvLight::daylight()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("render.png");
    save_render_png(&path, &img).unwrap();
    let back = image::open(&path).unwrap().to_rgb8();
    assert_eq!(back.dimensions(), (16, 16));
}
