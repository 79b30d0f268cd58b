//! Singular-value structure of per-view gradient matrices.
//!
//! The gradient rows are long (F = H*W*3) but few (N <= 8), so singular
//! values come from a Jacobi eigendecomposition of the small N x N Gram
//! matrix G*G'.

use serde::Serialize;

use crate::net::{decode_head, init_unet, TextureSet, UNetConfig};
use crate::optim::{sds_surrogate, surrogate_loss, SdsSchedule};
use crate::render::{rasterize, sample_cameras, shade, tonemap, EnvLight, Mesh, PoseRule};
use crate::tensor::Tape;
use crate::{Error, Result};

/// Cutoff under which the smallest singular value counts as zero,
/// relative to the largest.
pub const RANK_EPS: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct CoherenceReport {
    /// Descending singular values of the gradient matrix.
    pub singular_values: Vec<f64>,
    /// `sigma_i / sigma_min`, descending, last entry 1. When the matrix is
    /// rank deficient the divisor is floored at `RANK_EPS * sigma_max` so
    /// the ratios stay finite; `rank_deficient` records that this engaged.
    pub ratios: Vec<f64>,
    pub rank_deficient: bool,
}

/// Singular values and spread ratios of a row-major gradient matrix.
pub fn singular_value_ratios(rows: &[Vec<f64>]) -> Result<CoherenceReport> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::ShapeMismatch {
            op: "singular_value_ratios",
            detail: format!("need at least 2 gradient rows, got {n}"),
        });
    }
    let f = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != f {
            return Err(Error::ShapeMismatch {
                op: "singular_value_ratios",
                detail: format!("row {i} has {} entries, expected {f}", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient row {i} contains a non-finite value")));
        }
    }
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            gram[i][j] = dot;
            gram[j][i] = dot;
        }
    }
    let eigs = symmetric_eigenvalues(gram);
    let singular_values: Vec<f64> = eigs.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let s_max = singular_values[0];
    if s_max == 0.0 {
        return Err(Error::NonFinite("gradient matrix is identically zero".into()));
    }
    let s_min = singular_values[n - 1];
    let rank_deficient = s_min < RANK_EPS * s_max;
    let denom = s_min.max(RANK_EPS * s_max);
    let ratios = singular_values.iter().map(|&s| s / denom).collect();
    Ok(CoherenceReport { singular_values, ratios, rank_deficient })
}

/// Setup for the adjacent-view gradient agreement measurement.
#[derive(Clone, Copy, Debug)]
pub struct CoherenceOptions {
    pub n_views: usize,
    pub seed: u64,
    /// Multiplier on the surrogate's noise term.
    pub noise_scale: f64,
    /// Repeat one pose instead of sampling nearby ones; together with a
    /// disabled noise term this is the rank-1 control.
    pub identical_views: bool,
    /// Square render resolution per view.
    pub render_res: usize,
}

impl CoherenceOptions {
    pub fn new(seed: u64) -> CoherenceOptions {
        CoherenceOptions {
            n_views: 5,
            seed,
            noise_scale: 1.0,
            identical_views: false,
            render_res: crate::render::DEFAULT_RES,
        }
    }
}

/// Measures how much the surrogate gradient agrees across barely moved
/// cameras: a freshly seeded network output is shaded from `n_views`
/// adjacent poses, each view's surrogate gradient with respect to the
/// diffuse map (one shared noise draw and timestep) becomes one row of
/// the gradient matrix, and the spread of that matrix's singular values
/// is the coherence measure. Near-identical rows would collapse the
/// spread toward rank 1.
pub fn gradient_coherence(
    mesh: &Mesh,
    env: &EnvLight,
    reference: &TextureSet,
    opts: &CoherenceOptions,
) -> Result<CoherenceReport> {
    if opts.n_views < 2 {
        return Err(Error::Config(format!(
            "coherence needs at least 2 views, got {}",
            opts.n_views
        )));
    }
    if opts.render_res == 0 {
        return Err(Error::Config("render resolution must be positive".into()));
    }
    let (h, w) = reference.resolution();
    let net = init_unet(UNetConfig::with_seed(opts.seed), h, w)?;
    let mut tape = Tape::new();
    let (raw, _) = net.forward(&mut tape)?;
    let current = decode_head(&mut tape, &raw)?.detach();
    drop(tape);

    let mut cameras = sample_cameras(opts.n_views, PoseRule::Adjacent, opts.seed);
    if opts.identical_views {
        cameras = vec![cameras[0]; opts.n_views];
    }
    for cam in &mut cameras {
        cam.res = opts.render_res;
    }

    // Only the diffuse map is a leaf; the other maps shade as constants,
    // so each backward sweep isolates the diffuse gradient of one view.
    let mut tape = Tape::new();
    let diffuse = tape.leaf(vec![1, 3, h, w], current.diffuse.data().to_vec());
    let set = TextureSet {
        diffuse: diffuse.clone(),
        rough_metal: current.rough_metal.clone(),
        normal: current.normal.clone(),
    };
    let reference = reference.detach();
    let mut images = Vec::with_capacity(opts.n_views);
    let mut targets = Vec::with_capacity(opts.n_views);
    for cam in &cameras {
        let g = rasterize(mesh, cam);
        let linear = shade(&mut tape, &set, &g, env)?;
        images.push(tonemap(&mut tape, &linear)?);
        let target_linear = shade(&mut tape, &reference, &g, env)?;
        targets.push(tonemap(&mut tape, &target_linear)?);
    }

    let sched = SdsSchedule::new(1);
    let sample = sds_surrogate(&images, &targets, 0, &sched, opts.seed, opts.noise_scale)?;
    let mut rows = Vec::with_capacity(opts.n_views);
    for (x, g) in images.iter().zip(&sample.grads) {
        let pseudo = surrogate_loss(&mut tape, std::slice::from_ref(x), std::slice::from_ref(g))?;
        let grads = tape.backward(&pseudo)?;
        rows.push(grads.get(&diffuse).expect("the diffuse leaf feeds every render").to_vec());
    }
    singular_value_ratios(&rows)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// descending. Intended for the small Gram matrices here (n <= 8).
pub(crate) fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let frob: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).expect("non-finite eigenvalue"));
    eigs
}
