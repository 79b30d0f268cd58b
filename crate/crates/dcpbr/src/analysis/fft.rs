//! Radix-2 FFT and the centered 2-D spectrum.

use num_complex::Complex64;

use crate::{Error, Result};

/// Iterative in-place radix-2 forward DFT, unnormalized. Length must be a
/// power of two.
fn fft_inplace(buf: &mut [Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let wl = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * w;
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
                w *= wl;
            }
        }
        len <<= 1;
    }
}

/// Centered 2-D spectrum of a real `H x W` map (row-major). The DC bin
/// lands at `(H/2, W/2)`; bin `(ky, kx)` holds frequency
/// `(ky - H/2, kx - W/2)`. Centering is the exact `(-1)^(x+y)` premultiply,
/// so magnitudes and Parseval sums are untouched.
pub fn fft2(map: &[f64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::ShapeMismatch {
            op: "fft2",
            detail: format!("spectrum size {h}x{w} must be a power of two"),
        });
    }
    if map.len() != h * w {
        return Err(Error::ShapeMismatch {
            op: "fft2",
            detail: format!("{} values for a {h}x{w} map", map.len()),
        });
    }
    let mut spec: Vec<Complex64> = map
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let parity = (i / w + i % w) % 2;
            Complex64::new(if parity == 0 { v } else { -v }, 0.0)
        })
        .collect();
    for row in spec.chunks_exact_mut(w) {
        fft_inplace(row);
    }
    let mut col = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = spec[y * w + x];
        }
        fft_inplace(&mut col);
        for y in 0..h {
            spec[y * w + x] = col[y];
        }
    }
    Ok(spec)
}
