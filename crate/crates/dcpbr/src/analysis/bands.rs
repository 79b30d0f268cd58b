//! Radial frequency-band energies and band-wise convergence of a
//! snapshot trace.

use std::path::Path;

use serde::Serialize;

use crate::{Error, Result};

use super::fft::fft2;

pub const NUM_BANDS: usize = 5;

/// Spectral energy per radial band, lowest (including DC) to highest.
///
/// Each bin of the centered spectrum goes to band
/// `min(5, 1 + floor(5 * rho / rho_max))` where `rho` is the distance from
/// the DC bin and `rho_max = (min(H,W)/2) * sqrt(2)` reaches the spectrum
/// corners, so the bands partition the spectrum exactly. Energy is the
/// squared magnitude, summed over channels; by Parseval the five bands add
/// up to `H*W` times the signal energy.
pub fn band_energies(map: &[f64], channels: usize, h: usize, w: usize) -> Result<[f64; NUM_BANDS]> {
    if map.len() != channels * h * w {
        return Err(Error::ShapeMismatch {
            op: "band_energies",
            detail: format!("{} values for {channels} channels of {h}x{w}", map.len()),
        });
    }
    let rho_max = (h.min(w) as f64 / 2.0) * std::f64::consts::SQRT_2;
    let mut energies = [0.0; NUM_BANDS];
    for plane in map.chunks_exact(h * w) {
        let spec = fft2(plane, h, w)?;
        for ky in 0..h {
            let dy = ky as f64 - h as f64 / 2.0;
            for kx in 0..w {
                let dx = kx as f64 - w as f64 / 2.0;
                let rho = (dy * dy + dx * dx).sqrt();
                let band = if rho_max == 0.0 {
                    1
                } else {
                    ((5.0 * rho / rho_max).floor() as usize + 1).min(NUM_BANDS)
                };
                energies[band - 1] += spec[ky * w + kx].norm_sqr();
            }
        }
    }
    Ok(energies)
}

#[derive(Clone, Debug, Serialize)]
pub struct BandRow {
    pub iteration: usize,
    pub energies: [f64; NUM_BANDS],
}

/// Band energies sampled along an optimization run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BandTrace {
    pub rows: Vec<BandRow>,
}

impl BandTrace {
    pub fn new() -> Self {
        BandTrace::default()
    }

    pub fn push(&mut self, iteration: usize, energies: [f64; NUM_BANDS]) {
        self.rows.push(BandRow { iteration, energies });
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("iter,E1,E2,E3,E4,E5\n");
        for row in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.iteration,
                row.energies[0],
                row.energies[1],
                row.energies[2],
                row.energies[3],
                row.energies[4]
            ));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Fraction of the total target energy below which a band's tolerance
/// window switches from relative to this absolute floor; keeps bands with
/// (near-)zero target energy from demanding exact zeros.
const ENERGY_FLOOR_FRACTION: f64 = 1e-6;

/// First iteration from which each band's energy stays within
/// `tol * max(target_k, floor)` of its target for the rest of the trace.
/// Bands that never settle report `f64::INFINITY`.
pub fn convergence_iteration(
    trace: &BandTrace,
    target: &[f64; NUM_BANDS],
    tol: f64,
) -> [f64; NUM_BANDS] {
    let floor = ENERGY_FLOOR_FRACTION * target.iter().sum::<f64>();
    let mut out = [f64::INFINITY; NUM_BANDS];
    for k in 0..NUM_BANDS {
        let allow = tol * target[k].max(floor);
        let mut settled: Option<usize> = None;
        for (i, row) in trace.rows.iter().enumerate().rev() {
            if (row.energies[k] - target[k]).abs() <= allow {
                settled = Some(i);
            } else {
                break;
            }
        }
        if let Some(i) = settled {
            out[k] = trace.rows[i].iteration as f64;
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Inputs may
/// contain infinities but not NaN. Returns 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..ra.len() {
        let (da, db) = (ra[i] - mean, rb[i] - mean);
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return 0.0;
    }
    cov / (var_a * var_b).sqrt()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).expect("NaN in rank input"));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
