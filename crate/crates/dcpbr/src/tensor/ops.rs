//! Operation set: forward kernels, tape recording, backward rules.
//!
//! Every method validates shapes up front and computes the forward value;
//! the node is recorded only when at least one operand is tracked, so
//! constant subgraphs cost nothing on the backward sweep.

use std::sync::Arc;

use rayon::prelude::*;

use crate::{Error, Result};

use super::tape::{accumulate, Op, Src, Tape};
use super::{dims4, Tensor};

/// Denominators smaller than this abort a division instead of producing
/// huge gradients.
pub const DIV_GUARD: f64 = 1e-12;

impl Tape {
    fn record(
        &mut self,
        tracked: bool,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: impl FnOnce(&Tensor) -> Op,
    ) -> Tensor {
        let mut t = Tensor::untracked(shape, data);
        if tracked {
            let op = op(&t);
            t.node = Some(self.push(op, t.shape.clone()));
        }
        t
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Src, Src) -> Op,
    ) -> Result<Tensor> {
        let (shape, data) = ew_forward(name, a, b, f)?;
        let tracked = a.node().is_some() || b.node().is_some();
        Ok(self.record(tracked, shape, data, |_| op(Src::of(a), Src::of(b))))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    /// Fails with a runtime error if any denominator magnitude is below
    /// [`DIV_GUARD`].
    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if let Some(i) = b.data().iter().position(|v| v.abs() < DIV_GUARD) {
            return Err(Error::DivisionNearZero { magnitude: b.data()[i].abs(), index: i });
        }
        self.binary("div", a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    pub fn pow_scalar(&mut self, a: &Tensor, exponent: f64) -> Tensor {
        let data = a.data().iter().map(|&v| v.powf(exponent)).collect();
        self.record(a.node().is_some(), a.shape().to_vec(), data, |_| Op::PowScalar {
            a: Src::of(a),
            exponent,
        })
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Tensor {
        let data = a.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        self.record(a.node().is_some(), a.shape().to_vec(), data, |t| Op::Sigmoid {
            a: Src::of(a),
            out: t.data_arc(),
        })
    }

    pub fn tanh(&mut self, a: &Tensor) -> Tensor {
        let data = a.data().iter().map(|&v| v.tanh()).collect();
        self.record(a.node().is_some(), a.shape().to_vec(), data, |t| Op::Tanh {
            a: Src::of(a),
            out: t.data_arc(),
        })
    }

    /// Gradient at exactly zero is defined as zero, so the square root of a
    /// hard zero never produces an infinite derivative.
    pub fn sqrt(&mut self, a: &Tensor) -> Tensor {
        let data = a.data().iter().map(|&v| v.sqrt()).collect();
        self.record(a.node().is_some(), a.shape().to_vec(), data, |t| Op::Sqrt {
            a: Src::of(a),
            out: t.data_arc(),
        })
    }

    /// Subgradient 1 on the closed interval `[lo, hi]`, 0 outside.
    pub fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        let data = a.data().iter().map(|&v| v.clamp(lo, hi)).collect();
        self.record(a.node().is_some(), a.shape().to_vec(), data, |_| Op::Clamp {
            a: Src::of(a),
            lo,
            hi,
        })
    }

    pub fn leaky_relu(&mut self, a: &Tensor, slope: f64) -> Tensor {
        let data = a.data().iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        self.record(a.node().is_some(), a.shape().to_vec(), data, |_| Op::LeakyRelu {
            a: Src::of(a),
            slope,
        })
    }

    /// 2-D convolution of `[B,Ci,H,W]` with `[Co,Ci,kh,kw]` weights plus a
    /// `[Co]` bias. Zero padding, floor output size.
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (b, ci, h, w) = dims4(input.shape(), "conv2d input")?;
        let (co, wci, kh, kw) = dims4(weight.shape(), "conv2d weight")?;
        if wci != ci {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {ci} channels but weight expects {wci}"),
            });
        }
        if bias.shape() != [co] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "bias shape {:?} does not match {co} output channels",
                    bias.shape()
                ),
            });
        }
        if stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: "stride must be at least 1".into(),
            });
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "kernel {kh}x{kw} exceeds padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            });
        }
        let h2 = (h + 2 * padding - kh) / stride + 1;
        let w2 = (w + 2 * padding - kw) / stride + 1;
        let data = conv2d_forward(
            input.data(),
            (b, ci, h, w),
            weight.data(),
            (co, kh, kw),
            bias.data(),
            stride,
            padding,
            (h2, w2),
        );
        let tracked = input.node().is_some() || weight.node().is_some() || bias.node().is_some();
        Ok(self.record(tracked, vec![b, co, h2, w2], data, |_| Op::Conv2d {
            input: Src::of(input),
            weight: Src::of(weight),
            bias: Src::of(bias),
            stride,
            padding,
        }))
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, a: &Tensor, factor: usize) -> Result<Tensor> {
        let (b, c, h, w) = dims4(a.shape(), "upsample_nearest")?;
        if factor == 0 {
            return Err(Error::ShapeMismatch {
                op: "upsample_nearest",
                detail: "factor must be at least 1".into(),
            });
        }
        let (h2, w2) = (h * factor, w * factor);
        let mut data = Vec::with_capacity(b * c * h2 * w2);
        for plane in a.data().chunks_exact(h * w) {
            for iy in 0..h {
                let row = &plane[iy * w..][..w];
                for _ in 0..factor {
                    for &v in row {
                        for _ in 0..factor {
                            data.push(v);
                        }
                    }
                }
            }
        }
        Ok(self.record(a.node().is_some(), vec![b, c, h2, w2], data, |_| Op::UpsampleNearest {
            a: Src::of(a),
            factor,
        }))
    }

    pub fn concat_channels(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ba, ca, h, w) = dims4(a.shape(), "concat_channels")?;
        let (bb, cb, hb, wb) = dims4(b.shape(), "concat_channels")?;
        if ba != bb || h != hb || w != wb {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                detail: format!("incompatible shapes {:?} and {:?}", a.shape(), b.shape()),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(ba * (ca + cb) * plane);
        for bi in 0..ba {
            data.extend_from_slice(&a.data()[bi * ca * plane..][..ca * plane]);
            data.extend_from_slice(&b.data()[bi * cb * plane..][..cb * plane]);
        }
        let tracked = a.node().is_some() || b.node().is_some();
        Ok(self.record(tracked, vec![ba, ca + cb, h, w], data, |_| Op::ConcatChannels {
            a: Src::of(a),
            b: Src::of(b),
        }))
    }

    pub fn slice_channels(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (b, c, h, w) = dims4(a.shape(), "slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::ShapeMismatch {
                op: "slice_channels",
                detail: format!("channels {start}..{} out of range for {c}", start + len),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            data.extend_from_slice(&a.data()[(bi * c + start) * plane..][..len * plane]);
        }
        Ok(self.record(a.node().is_some(), vec![b, len, h, w], data, |_| Op::SliceChannels {
            a: Src::of(a),
            start,
        }))
    }

    /// Normalizes each `(batch, channel)` plane to zero mean and unit
    /// variance, then applies a learned per-channel affine: `y = scale[c] *
    /// xhat + shift[c]`. Variance is the biased estimate.
    pub fn channel_norm(
        &mut self,
        a: &Tensor,
        scale: &Tensor,
        shift: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let (b, c, h, w) = dims4(a.shape(), "channel_norm")?;
        if scale.shape() != [c] || shift.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "channel_norm",
                detail: format!(
                    "scale {:?} and shift {:?} must both be [{c}]",
                    scale.shape(),
                    shift.shape()
                ),
            });
        }
        let m = h * w;
        let n_planes = b * c;
        let mut out = vec![0.0; n_planes * m];
        let mut xhat = vec![0.0; n_planes * m];
        let mut inv_std = vec![0.0; n_planes];
        for p in 0..n_planes {
            let ch = p % c;
            let x = &a.data()[p * m..][..m];
            let mean = x.iter().sum::<f64>() / m as f64;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[p] = istd;
            let (g, s) = (scale.data()[ch], shift.data()[ch]);
            for i in 0..m {
                let xh = (x[i] - mean) * istd;
                xhat[p * m + i] = xh;
                out[p * m + i] = g * xh + s;
            }
        }
        let tracked = a.node().is_some() || scale.node().is_some() || shift.node().is_some();
        let (xhat, inv_std) = (Arc::new(xhat), Arc::new(inv_std));
        Ok(self.record(tracked, a.shape().to_vec(), out, |_| Op::ChannelNorm {
            a: Src::of(a),
            scale: Src::of(scale),
            shift: Src::of(shift),
            xhat,
            inv_std,
        }))
    }

    /// Sum of every element, as a `[1]` scalar.
    pub fn sum_all(&mut self, a: &Tensor) -> Tensor {
        let total: f64 = a.data().iter().sum();
        self.record(a.node().is_some(), vec![1], vec![total], |_| Op::SumAll { a: Src::of(a) })
    }

    /// `[B,C,H,W] -> [B,1,H,W]`.
    pub fn sum_channels(&mut self, a: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = dims4(a.shape(), "sum_channels")?;
        let plane = h * w;
        let mut data = vec![0.0; b * plane];
        for bi in 0..b {
            let dst = &mut data[bi * plane..][..plane];
            for ci in 0..c {
                let src = &a.data()[(bi * c + ci) * plane..][..plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(self.record(a.node().is_some(), vec![b, 1, h, w], data, |_| Op::SumChannels {
            a: Src::of(a),
        }))
    }

    /// `[B,C,H,W] -> [1,C,H,W]`.
    pub fn sum_batch(&mut self, a: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = dims4(a.shape(), "sum_batch")?;
        let vol = c * h * w;
        let mut data = vec![0.0; vol];
        for bi in 0..b {
            let src = &a.data()[bi * vol..][..vol];
            for (d, s) in data.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(self
            .record(a.node().is_some(), vec![1, c, h, w], data, |_| Op::SumBatch { a: Src::of(a) }))
    }

    /// Bilinear texture lookup. `tex` is `[1,C,Ht,Wt]`; each `(u,v)` in
    /// `[0,1]^2` addresses texel centers at `(i+0.5)/extent`, with `v`
    /// increasing down the rows. Output is `[1,C,1,P]`. The sample
    /// positions are fixed; only the texture receives gradient.
    pub fn sample_bilinear(&mut self, tex: &Tensor, uvs: &[[f64; 2]]) -> Result<Tensor> {
        let (b, c, ht, wt) = dims4(tex.shape(), "sample_bilinear")?;
        if b != 1 {
            return Err(Error::ShapeMismatch {
                op: "sample_bilinear",
                detail: format!("texture batch must be 1, got {b}"),
            });
        }
        if uvs.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "sample_bilinear",
                detail: "no sample positions".into(),
            });
        }
        let p = uvs.len();
        let mut taps = Vec::with_capacity(p);
        for &[u, v] in uvs {
            let x = (u * wt as f64 - 0.5).clamp(0.0, (wt - 1) as f64);
            let y = (v * ht as f64 - 0.5).clamp(0.0, (ht - 1) as f64);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(wt - 1), (y0 + 1).min(ht - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            taps.push([
                (y0 * wt + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * wt + x1, (1.0 - fy) * fx),
                (y1 * wt + x0, fy * (1.0 - fx)),
                (y1 * wt + x1, fy * fx),
            ]);
        }
        let plane = ht * wt;
        let mut data = vec![0.0; c * p];
        for ci in 0..c {
            let texp = &tex.data()[ci * plane..][..plane];
            let dst = &mut data[ci * p..][..p];
            for (j, tap) in taps.iter().enumerate() {
                dst[j] = tap.iter().map(|&(i, w)| w * texp[i]).sum();
            }
        }
        let taps = Arc::new(taps);
        Ok(self.record(tex.node().is_some(), vec![1, c, 1, p], data, |_| Op::SampleBilinear {
            tex: Src::of(tex),
            taps,
        }))
    }

    /// Writes a `[1,C,1,P]` sample vector into a zero-filled `[1,C,H,W]`
    /// image at the given flat pixel positions. Duplicate positions add.
    pub fn scatter_pixels(
        &mut self,
        src: &Tensor,
        pixels: &[usize],
        height: usize,
        width: usize,
    ) -> Result<Tensor> {
        let (b, c, h1, p) = dims4(src.shape(), "scatter_pixels")?;
        if b != 1 || h1 != 1 {
            return Err(Error::ShapeMismatch {
                op: "scatter_pixels",
                detail: format!("source must be [1,C,1,P], got {:?}", src.shape()),
            });
        }
        if pixels.len() != p {
            return Err(Error::ShapeMismatch {
                op: "scatter_pixels",
                detail: format!("{} pixel positions for {p} samples", pixels.len()),
            });
        }
        let hw = height * width;
        if let Some(&bad) = pixels.iter().find(|&&i| i >= hw) {
            return Err(Error::ShapeMismatch {
                op: "scatter_pixels",
                detail: format!("pixel index {bad} outside {height}x{width} image"),
            });
        }
        let mut data = vec![0.0; c * hw];
        for ci in 0..c {
            let srcp = &src.data()[ci * p..][..p];
            let dst = &mut data[ci * hw..][..hw];
            for (j, &pix) in pixels.iter().enumerate() {
                dst[pix] += srcp[j];
            }
        }
        let pixels = Arc::new(pixels.to_vec());
        Ok(self.record(src.node().is_some(), vec![1, c, height, width], data, |_| {
            Op::ScatterPixels { src: Src::of(src), pixels }
        }))
    }

    /// Mean absolute difference over all elements. Subgradient of `|x|` at
    /// zero is zero.
    pub fn l1(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "l1",
                detail: format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
            });
        }
        let n = a.numel() as f64;
        let total: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let tracked = a.node().is_some() || b.node().is_some();
        Ok(self
            .record(tracked, vec![1], vec![total / n], |_| Op::L1 { a: Src::of(a), b: Src::of(b) }))
    }

    /// Anisotropic total variation: mean absolute difference between
    /// vertically and horizontally adjacent elements, averaged over the
    /// number of adjacent pairs across all planes.
    pub fn tv(&mut self, a: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = dims4(a.shape(), "tv")?;
        let pairs = b * c * ((h - 1) * w + h * (w - 1));
        let mut total = 0.0;
        for plane in a.data().chunks_exact(h * w) {
            for y in 0..h - 1 {
                for x in 0..w {
                    total += (plane[(y + 1) * w + x] - plane[y * w + x]).abs();
                }
            }
            for y in 0..h {
                for x in 0..w - 1 {
                    total += (plane[y * w + x + 1] - plane[y * w + x]).abs();
                }
            }
        }
        let value = if pairs == 0 { 0.0 } else { total / pairs as f64 };
        Ok(self.record(a.node().is_some(), vec![1], vec![value], |_| Op::Tv { a: Src::of(a) }))
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("cannot broadcast {a:?} with {b:?}"),
            });
        };
    }
    Ok(out)
}

/// Flat strides of `shape` right-aligned against a broadcast result, zero
/// on stretched dimensions.
fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut s = vec![0usize; out.len()];
    let pad = out.len() - shape.len();
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        s[pad + d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    s
}

/// Calls `f(flat_out, flat_a, flat_b)` for every element of a broadcast
/// pair, with a tight inner loop over the last dimension.
fn broadcast_zip(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let inner = out_shape[rank - 1];
    let (ja, jb) = (sa[rank - 1], sb[rank - 1]);
    let outer_shape = &out_shape[..rank - 1];
    let n_outer: usize = outer_shape.iter().product();
    let mut idx = vec![0usize; outer_shape.len()];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut i = 0usize;
    for _ in 0..n_outer {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner {
            f(i, ia, ib);
            i += 1;
            ia += ja;
            ib += jb;
        }
        for d in (0..outer_shape.len()).rev() {
            idx[d] += 1;
            base_a += sa[d];
            base_b += sb[d];
            if idx[d] < outer_shape[d] {
                break;
            }
            idx[d] = 0;
            base_a -= sa[d] * outer_shape[d];
            base_b -= sb[d] * outer_shape[d];
        }
    }
}

fn ew_forward(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok((a.shape().to_vec(), data));
    }
    if b.numel() == 1 && b.shape().len() <= a.shape().len() {
        let y = b.data()[0];
        return Ok((a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect()));
    }
    if a.numel() == 1 && a.shape().len() <= b.shape().len() {
        let x = a.data()[0];
        return Ok((b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect()));
    }
    let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
    let sa = bcast_strides(a.shape(), &out_shape);
    let sb = bcast_strides(b.shape(), &out_shape);
    let mut data = vec![0.0; out_shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    broadcast_zip(&out_shape, &sa, &sb, |i, ia, ib| data[i] = f(ad[ia], bd[ib]));
    Ok((out_shape, data))
}

/// Accumulates `sum_i g[i] * df(target[i], co[i])` into the gradient slot
/// of `target`, summing over any dimensions `target` was broadcast along.
/// `df` is the partial derivative of the output with respect to `target`
/// as a function of `(target value, co-operand value)`.
fn ew_backward_into(
    g: &[f64],
    out_shape: &[usize],
    target: &Src,
    co: &Src,
    df: impl Fn(f64, f64) -> f64,
    grads: &mut [Option<Vec<f64>>],
) {
    if !target.tracked() {
        return;
    }
    let mut acc = vec![0.0; target.data.len()];
    if target.shape == out_shape && co.shape == out_shape {
        for i in 0..g.len() {
            acc[i] = g[i] * df(target.data[i], co.data[i]);
        }
    } else {
        let st = bcast_strides(&target.shape, out_shape);
        let sc = bcast_strides(&co.shape, out_shape);
        let (td, cd) = (&target.data, &co.data);
        broadcast_zip(out_shape, &st, &sc, |i, it, ic| acc[it] += g[i] * df(td[it], cd[ic]));
    }
    accumulate(grads, target, acc);
}

fn unary_backward_into(
    g: &[f64],
    src: &Src,
    df: impl Fn(usize) -> f64,
    grads: &mut [Option<Vec<f64>>],
) {
    if !src.tracked() {
        return;
    }
    let acc = g.iter().enumerate().map(|(i, &gv)| gv * df(i)).collect();
    accumulate(grads, src, acc);
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(super) fn backward_op(op: &Op, out_shape: &[usize], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            ew_backward_into(g, out_shape, a, b, |_, _| 1.0, grads);
            ew_backward_into(g, out_shape, b, a, |_, _| 1.0, grads);
        }
        Op::Sub { a, b } => {
            ew_backward_into(g, out_shape, a, b, |_, _| 1.0, grads);
            ew_backward_into(g, out_shape, b, a, |_, _| -1.0, grads);
        }
        Op::Mul { a, b } => {
            ew_backward_into(g, out_shape, a, b, |_, bv| bv, grads);
            ew_backward_into(g, out_shape, b, a, |_, av| av, grads);
        }
        Op::Div { a, b } => {
            ew_backward_into(g, out_shape, a, b, |_, bv| 1.0 / bv, grads);
            ew_backward_into(g, out_shape, b, a, |bv, av| -av / (bv * bv), grads);
        }
        Op::PowScalar { a, exponent } => {
            let (e, ad) = (*exponent, &a.data);
            unary_backward_into(
                g,
                a,
                |i| if ad[i] == 0.0 { 0.0 } else { e * ad[i].powf(e - 1.0) },
                grads,
            );
        }
        Op::Sigmoid { a, out } => {
            unary_backward_into(g, a, |i| out[i] * (1.0 - out[i]), grads);
        }
        Op::Tanh { a, out } => {
            unary_backward_into(g, a, |i| 1.0 - out[i] * out[i], grads);
        }
        Op::Sqrt { a, out } => {
            unary_backward_into(g, a, |i| if out[i] == 0.0 { 0.0 } else { 0.5 / out[i] }, grads);
        }
        Op::Clamp { a, lo, hi } => {
            let ad = &a.data;
            unary_backward_into(
                g,
                a,
                |i| if ad[i] >= *lo && ad[i] <= *hi { 1.0 } else { 0.0 },
                grads,
            );
        }
        Op::LeakyRelu { a, slope } => {
            let ad = &a.data;
            unary_backward_into(g, a, |i| if ad[i] >= 0.0 { 1.0 } else { *slope }, grads);
        }
        Op::Conv2d { input, weight, bias, stride, padding } => {
            let xs = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
            let ks = (weight.shape[0], weight.shape[2], weight.shape[3]);
            let os = (out_shape[2], out_shape[3]);
            if input.tracked() {
                let dx = conv2d_backward_input(g, &weight.data, xs, ks, *stride, *padding, os);
                accumulate(grads, input, dx);
            }
            if weight.tracked() {
                let dw = conv2d_backward_weight(g, &input.data, xs, ks, *stride, *padding, os);
                accumulate(grads, weight, dw);
            }
            if bias.tracked() {
                let plane = os.0 * os.1;
                let mut db = vec![0.0; ks.0];
                for (p, chunk) in g.chunks_exact(plane).enumerate() {
                    db[p % ks.0] += chunk.iter().sum::<f64>();
                }
                accumulate(grads, bias, db);
            }
        }
        Op::UpsampleNearest { a, factor } => {
            if !a.tracked() {
                return;
            }
            let (_, _, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
            let f = *factor;
            let (h2, w2) = (h * f, w * f);
            let mut acc = vec![0.0; a.data.len()];
            for (p, gplane) in g.chunks_exact(h2 * w2).enumerate() {
                let dst = &mut acc[p * h * w..][..h * w];
                for oy in 0..h2 {
                    let grow = &gplane[oy * w2..][..w2];
                    let drow = &mut dst[(oy / f) * w..][..w];
                    for ox in 0..w2 {
                        drow[ox / f] += grow[ox];
                    }
                }
            }
            accumulate(grads, a, acc);
        }
        Op::ConcatChannels { a, b } => {
            let (ca, cb) = (a.shape[1], b.shape[1]);
            let plane = a.shape[2] * a.shape[3];
            let batches = a.shape[0];
            for (src, off, cn) in [(a, 0, ca), (b, ca, cb)] {
                if !src.tracked() {
                    continue;
                }
                let mut acc = Vec::with_capacity(batches * cn * plane);
                for bi in 0..batches {
                    let base = (bi * (ca + cb) + off) * plane;
                    acc.extend_from_slice(&g[base..][..cn * plane]);
                }
                accumulate(grads, src, acc);
            }
        }
        Op::SliceChannels { a, start } => {
            if !a.tracked() {
                return;
            }
            let (b, c, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
            let len = out_shape[1];
            let plane = h * w;
            let mut acc = vec![0.0; a.data.len()];
            for bi in 0..b {
                let dst = &mut acc[(bi * c + start) * plane..][..len * plane];
                dst.copy_from_slice(&g[bi * len * plane..][..len * plane]);
            }
            accumulate(grads, a, acc);
        }
        Op::ChannelNorm { a, scale, shift, xhat, inv_std } => {
            let (b, c, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
            let m = h * w;
            if scale.tracked() || shift.tracked() {
                let mut dscale = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                for p in 0..b * c {
                    let ch = p % c;
                    for i in 0..m {
                        dscale[ch] += g[p * m + i] * xhat[p * m + i];
                        dshift[ch] += g[p * m + i];
                    }
                }
                if scale.tracked() {
                    accumulate(grads, scale, dscale);
                }
                if shift.tracked() {
                    accumulate(grads, shift, dshift);
                }
            }
            if a.tracked() {
                let mut acc = vec![0.0; a.data.len()];
                for p in 0..b * c {
                    let gamma = scale.data[p % c];
                    let gp = &g[p * m..][..m];
                    let xp = &xhat[p * m..][..m];
                    let gmean = gp.iter().sum::<f64>() / m as f64;
                    let gxmean =
                        gp.iter().zip(xp).map(|(&gv, &xv)| gv * xv).sum::<f64>() / m as f64;
                    let k = gamma * inv_std[p];
                    let dst = &mut acc[p * m..][..m];
                    for i in 0..m {
                        dst[i] = k * (gp[i] - gmean - xp[i] * gxmean);
                    }
                }
                accumulate(grads, a, acc);
            }
        }
        Op::SumAll { a } => {
            if a.tracked() {
                accumulate(grads, a, vec![g[0]; a.data.len()]);
            }
        }
        Op::SumChannels { a } => {
            if !a.tracked() {
                return;
            }
            let (b, c, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
            let plane = h * w;
            let mut acc = Vec::with_capacity(a.data.len());
            for bi in 0..b {
                for _ in 0..c {
                    acc.extend_from_slice(&g[bi * plane..][..plane]);
                }
            }
            accumulate(grads, a, acc);
        }
        Op::SumBatch { a } => {
            if a.tracked() {
                let b = a.shape[0];
                let mut acc = Vec::with_capacity(a.data.len());
                for _ in 0..b {
                    acc.extend_from_slice(g);
                }
                accumulate(grads, a, acc);
            }
        }
        Op::SampleBilinear { tex, taps } => {
            if !tex.tracked() {
                return;
            }
            let plane = tex.shape[2] * tex.shape[3];
            let c = tex.shape[1];
            let p = taps.len();
            let mut acc = vec![0.0; tex.data.len()];
            for ci in 0..c {
                let dst = &mut acc[ci * plane..][..plane];
                let gp = &g[ci * p..][..p];
                for (j, tap) in taps.iter().enumerate() {
                    for &(i, w) in tap {
                        dst[i] += w * gp[j];
                    }
                }
            }
            accumulate(grads, tex, acc);
        }
        Op::ScatterPixels { src, pixels } => {
            if !src.tracked() {
                return;
            }
            let c = src.shape[1];
            let p = pixels.len();
            let hw = out_shape[2] * out_shape[3];
            let mut acc = vec![0.0; src.data.len()];
            for ci in 0..c {
                let gp = &g[ci * hw..][..hw];
                let dst = &mut acc[ci * p..][..p];
                for (j, &pix) in pixels.iter().enumerate() {
                    dst[j] = gp[pix];
                }
            }
            accumulate(grads, src, acc);
        }
        Op::L1 { a, b } => {
            let n = a.data.len() as f64;
            let scale = g[0] / n;
            let (ad, bd) = (&a.data, &b.data);
            if a.tracked() {
                let acc = ad.iter().zip(bd.iter()).map(|(&x, &y)| scale * sign(x - y)).collect();
                accumulate(grads, a, acc);
            }
            if b.tracked() {
                let acc = ad.iter().zip(bd.iter()).map(|(&x, &y)| -scale * sign(x - y)).collect();
                accumulate(grads, b, acc);
            }
        }
        Op::Tv { a } => {
            if !a.tracked() {
                return;
            }
            let (b, c, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
            let pairs = b * c * ((h - 1) * w + h * (w - 1));
            if pairs == 0 {
                return;
            }
            let scale = g[0] / pairs as f64;
            let mut acc = vec![0.0; a.data.len()];
            for (p, plane) in a.data.chunks_exact(h * w).enumerate() {
                let dst = &mut acc[p * h * w..][..h * w];
                for y in 0..h - 1 {
                    for x in 0..w {
                        let s = scale * sign(plane[(y + 1) * w + x] - plane[y * w + x]);
                        dst[(y + 1) * w + x] += s;
                        dst[y * w + x] -= s;
                    }
                }
                for y in 0..h {
                    for x in 0..w - 1 {
                        let s = scale * sign(plane[y * w + x + 1] - plane[y * w + x]);
                        dst[y * w + x + 1] += s;
                        dst[y * w + x] -= s;
                    }
                }
            }
            accumulate(grads, a, acc);
        }
    }
}

/// Output column range `[lo, hi)` with `0 <= ox*stride + k - pad < w_in`.
#[inline]
fn ox_range(stride: usize, k: usize, pad: usize, w_in: usize, w_out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let max_i = w_in as isize - 1 + pad as isize - k as isize;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = (max_i as usize / stride + 1).min(w_out);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f64],
    (b, ci, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    padding: usize,
    (h2, w2): (usize, usize),
) -> Vec<f64> {
    let plane = h2 * w2;
    let mut out = vec![0.0; b * co * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(pi, op)| {
        let (bi, coi) = (pi / co, pi % co);
        op.fill(bias[coi]);
        for cii in 0..ci {
            let xplane = &x[(bi * ci + cii) * h * w..][..h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wgt[((coi * ci + cii) * kh + ky) * kw + kx];
                    let (lo, hi) = ox_range(stride, kx, padding, w, w2);
                    for oy in 0..h2 {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * w..][..w];
                        let orow = &mut op[oy * w2..][..w2];
                        if stride == 1 {
                            let base = lo + kx - padding;
                            for (o, &xv) in
                                orow[lo..hi].iter_mut().zip(&xrow[base..base + (hi - lo)])
                            {
                                *o += wv * xv;
                            }
                        } else {
                            for ox in lo..hi {
                                orow[ox] += wv * xrow[ox * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv2d_backward_input(
    g: &[f64],
    wgt: &[f64],
    (b, ci, h, w): (usize, usize, usize, usize),
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    padding: usize,
    (h2, w2): (usize, usize),
) -> Vec<f64> {
    let plane = h2 * w2;
    let mut dx = vec![0.0; b * ci * h * w];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(pi, dxp)| {
        let (bi, cii) = (pi / ci, pi % ci);
        for coi in 0..co {
            let gplane = &g[(bi * co + coi) * plane..][..plane];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wgt[((coi * ci + cii) * kh + ky) * kw + kx];
                    let (lo, hi) = ox_range(stride, kx, padding, w, w2);
                    for oy in 0..h2 {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dxrow = &mut dxp[iy as usize * w..][..w];
                        let grow = &gplane[oy * w2..][..w2];
                        if stride == 1 {
                            let base = lo + kx - padding;
                            for (d, &gv) in
                                dxrow[base..base + (hi - lo)].iter_mut().zip(&grow[lo..hi])
                            {
                                *d += wv * gv;
                            }
                        } else {
                            for ox in lo..hi {
                                dxrow[ox * stride + kx - padding] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

fn conv2d_backward_weight(
    g: &[f64],
    x: &[f64],
    (b, ci, h, w): (usize, usize, usize, usize),
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    padding: usize,
    (h2, w2): (usize, usize),
) -> Vec<f64> {
    let plane = h2 * w2;
    let mut dw = vec![0.0; co * ci * kh * kw];
    dw.par_chunks_mut(ci * kh * kw).enumerate().for_each(|(coi, dwc)| {
        for bi in 0..b {
            let gplane = &g[(bi * co + coi) * plane..][..plane];
            for cii in 0..ci {
                let xplane = &x[(bi * ci + cii) * h * w..][..h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let (lo, hi) = ox_range(stride, kx, padding, w, w2);
                        let mut acc = 0.0;
                        for oy in 0..h2 {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[iy as usize * w..][..w];
                            let grow = &gplane[oy * w2..][..w2];
                            if stride == 1 {
                                let base = lo + kx - padding;
                                acc += grow[lo..hi]
                                    .iter()
                                    .zip(&xrow[base..base + (hi - lo)])
                                    .map(|(&gv, &xv)| gv * xv)
                                    .sum::<f64>();
                            } else {
                                for ox in lo..hi {
                                    acc += grow[ox] * xrow[ox * stride + kx - padding];
                                }
                            }
                        }
                        dwc[(cii * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    });
    dw
}
