//! Texture parameterizations: a randomly initialized skip-connected
//! encoder-decoder that maps a fixed noise image to the PBR maps, and the
//! raw per-texel parameterization used as the baseline. Both decode
//! through the same activation head, so the value spaces are identical
//! and comparisons isolate the re-parameterization itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

mod io;
pub use io::{load_texture_set, save_texture_set};


pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct UNetConfig {
    pub levels: usize,
    /// Output channels of each encoder level, shallowest first.
    pub down_channels: Vec<usize>,
    /// Channels each skip branch contributes to its decoder level.
    pub skip_channels: Vec<usize>,
    /// Square kernel extent of the 3x3-class convolutions; must be odd.
    pub kernel: usize,
    /// Negative-side slope of the activations.
    pub slope: f64,
    pub seed: u64,
    pub skip_enabled: bool,
}

impl UNetConfig {
    pub fn with_seed(seed: u64) -> Self {
        UNetConfig {
            levels: 5,
            down_channels: vec![16, 32, 64, 128, 128],
            skip_channels: vec![4; 5],
            kernel: 3,
            slope: 0.2,
            seed,
            skip_enabled: true,
        }
    }
}

/// One named, optimizable weight buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
struct NormIdx {
    scale: usize,
    shift: usize,
}

#[derive(Debug)]
struct EncBlock {
    down: ConvIdx,
    norm1: NormIdx,
    conv: ConvIdx,
    norm2: NormIdx,
}

#[derive(Debug)]
struct SkipBlock {
    conv: ConvIdx,
    norm: NormIdx,
}

#[derive(Debug)]
struct DecBlock {
    norm_in: NormIdx,
    conv3: ConvIdx,
    norm_mid: NormIdx,
    conv1: ConvIdx,
    norm_out: NormIdx,
}

/// The re-parameterization network. Parameters live here as plain
/// buffers; every [`UNet::forward`] registers them as fresh leaves on the
/// given tape, so one instance can drive any number of optimization steps.
#[derive(Debug)]
pub struct UNet {
    pub cfg: UNetConfig,
    height: usize,
    width: usize,
    params: Vec<Param>,
    enc: Vec<EncBlock>,
    skip: Vec<SkipBlock>,
    dec: Vec<DecBlock>,
    head: ConvIdx,
    /// Fixed noise input, never optimized.
    z: Vec<f64>,
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Param>,
}

impl Builder {
    /// He-uniform weights: U(-b, b) with b = sqrt(6 / fan_in); zero bias.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvIdx {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        let weight: Vec<f64> =
            (0..cout * cin * k * k).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.params.push(Param {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            data: weight,
        });
        self.params.push(Param {
            name: format!("{name}.bias"),
            shape: vec![cout],
            data: vec![0.0; cout],
        });
        ConvIdx { weight: self.params.len() - 2, bias: self.params.len() - 1 }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormIdx {
        self.params.push(Param {
            name: format!("{name}.scale"),
            shape: vec![c],
            data: vec![1.0; c],
        });
        self.params.push(Param {
            name: format!("{name}.shift"),
            shape: vec![c],
            data: vec![0.0; c],
        });
        NormIdx { scale: self.params.len() - 2, shift: self.params.len() - 1 }
    }
}

/// Builds the network for an `height x width` output and draws its weights
/// and the frozen noise input from the config seed.
pub fn init_unet(cfg: UNetConfig, height: usize, width: usize) -> Result<UNet> {
    let l = cfg.levels;
    if l == 0 {
        return Err(Error::Config("network needs at least one level".into()));
    }
    if cfg.down_channels.len() != l || cfg.skip_channels.len() != l {
        return Err(Error::Config(format!(
            "channel lists must have {l} entries, got {} and {}",
            cfg.down_channels.len(),
            cfg.skip_channels.len()
        )));
    }
    if cfg.kernel == 0 || cfg.kernel.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel extent must be odd, got {}", cfg.kernel)));
    }
    let multiple = 1usize << l;
    if !height.is_multiple_of(multiple) || !width.is_multiple_of(multiple) {
        return Err(Error::Config(format!(
            "resolution {height}x{width} must be divisible by {multiple} for {l} levels"
        )));
    }

    let mut b = Builder { rng: ChaCha8Rng::seed_from_u64(cfg.seed), params: Vec::new() };
    let k = cfg.kernel;
    // channel count entering each encoder level (and its skip branch)
    let mut enc_in = vec![3];
    enc_in.extend_from_slice(&cfg.down_channels[..l - 1]);

    let enc: Vec<EncBlock> = (0..l)
        .map(|i| {
            let c = cfg.down_channels[i];
            EncBlock {
                down: b.conv(&format!("enc{i}.down"), enc_in[i], c, k),
                norm1: b.norm(&format!("enc{i}.norm1"), c),
                conv: b.conv(&format!("enc{i}.conv"), c, c, k),
                norm2: b.norm(&format!("enc{i}.norm2"), c),
            }
        })
        .collect();
    let skip: Vec<SkipBlock> = if cfg.skip_enabled {
        (0..l)
            .map(|i| {
                let c = cfg.skip_channels[i];
                SkipBlock {
                    conv: b.conv(&format!("skip{i}.conv"), enc_in[i], c, 1),
                    norm: b.norm(&format!("skip{i}.norm"), c),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let dec: Vec<DecBlock> = (0..l)
        .map(|i| {
            let below = if i + 1 < l { cfg.down_channels[i + 1] } else { cfg.down_channels[l - 1] };
            let cin = below + if cfg.skip_enabled { cfg.skip_channels[i] } else { 0 };
            let c = cfg.down_channels[i];
            DecBlock {
                norm_in: b.norm(&format!("dec{i}.norm_in"), cin),
                conv3: b.conv(&format!("dec{i}.conv3"), cin, c, k),
                norm_mid: b.norm(&format!("dec{i}.norm_mid"), c),
                conv1: b.conv(&format!("dec{i}.conv1"), c, c, 1),
                norm_out: b.norm(&format!("dec{i}.norm_out"), c),
            }
        })
        .collect();
    let head = b.conv("head", cfg.down_channels[0], 8, 1);

    let mut zrng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let z: Vec<f64> = (0..3 * height * width).map(|_| StandardNormal.sample(&mut zrng)).collect();

    Ok(UNet { cfg, height, width, params: b.params, enc, skip, dec, head, z })
}

impl UNet {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Noise input as a constant tensor.
    pub fn z(&self) -> Tensor {
        Tensor::from_vec(vec![1, 3, self.height, self.width], self.z.clone())
    }

    fn conv(
        &self,
        tape: &mut Tape,
        lv: &[Tensor],
        idx: ConvIdx,
        x: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        tape.conv2d(x, &lv[idx.weight], &lv[idx.bias], stride, pad)
    }

    fn norm(&self, tape: &mut Tape, lv: &[Tensor], idx: NormIdx, x: &Tensor) -> Result<Tensor> {
        tape.channel_norm(x, &lv[idx.scale], &lv[idx.shift], NORM_EPS)
    }

    /// Runs the network on its frozen input, registering every parameter
    /// as a leaf on `tape`. Returns the raw 8-channel head `[1,8,H,W]` and
    /// the leaves, aligned with [`UNet::params`].
    pub fn forward(&self, tape: &mut Tape) -> Result<(Tensor, Vec<Tensor>)> {
        let lv: Vec<Tensor> =
            self.params.iter().map(|p| tape.leaf(p.shape.clone(), p.data.clone())).collect();
        let pad = self.cfg.kernel / 2;
        let slope = self.cfg.slope;

        let mut x = self.z();
        let mut skips = Vec::with_capacity(self.skip.len());
        for (i, blk) in self.enc.iter().enumerate() {
            if let Some(sb) = self.skip.get(i) {
                let s = self.conv(tape, &lv, sb.conv, &x, 1, 0)?;
                let s = self.norm(tape, &lv, sb.norm, &s)?;
                skips.push(tape.leaky_relu(&s, slope));
            }
            x = self.conv(tape, &lv, blk.down, &x, 2, pad)?;
            x = self.norm(tape, &lv, blk.norm1, &x)?;
            x = tape.leaky_relu(&x, slope);
            x = self.conv(tape, &lv, blk.conv, &x, 1, pad)?;
            x = self.norm(tape, &lv, blk.norm2, &x)?;
            x = tape.leaky_relu(&x, slope);
        }
        for i in (0..self.dec.len()).rev() {
            let blk = &self.dec[i];
            x = tape.upsample_nearest(&x, 2)?;
            if let Some(s) = skips.get(i) {
                x = tape.concat_channels(&x, s)?;
            }
            x = self.norm(tape, &lv, blk.norm_in, &x)?;
            x = self.conv(tape, &lv, blk.conv3, &x, 1, pad)?;
            x = self.norm(tape, &lv, blk.norm_mid, &x)?;
            x = tape.leaky_relu(&x, slope);
            x = self.conv(tape, &lv, blk.conv1, &x, 1, 0)?;
            x = self.norm(tape, &lv, blk.norm_out, &x)?;
            x = tape.leaky_relu(&x, slope);
        }
        let raw = self.conv(tape, &lv, self.head, &x, 1, 0)?;
        Ok((raw, lv))
    }
}

/// The three optimizable texture maps, as (possibly tracked) tensors:
/// `diffuse [1,3,H,W]`, `rough_metal [1,2,H,W]` (roughness, metalness),
/// `normal [1,3,H,W]` unit tangent-space vectors with positive z.
#[derive(Clone, Debug)]
pub struct TextureSet {
    pub diffuse: Tensor,
    pub rough_metal: Tensor,
    pub normal: Tensor,
}

impl TextureSet {
    pub fn resolution(&self) -> (usize, usize) {
        (self.diffuse.shape()[2], self.diffuse.shape()[3])
    }

    pub fn detach(&self) -> TextureSet {
        TextureSet {
            diffuse: self.diffuse.detach(),
            rough_metal: self.rough_metal.detach(),
            normal: self.normal.detach(),
        }
    }

    /// Constant set from raw map data, validating every invariant.
    pub fn from_maps(
        h: usize,
        w: usize,
        diffuse: Vec<f64>,
        rough_metal: Vec<f64>,
        normal: Vec<f64>,
    ) -> Result<TextureSet> {
        for (name, data, c) in
            [("diffuse", &diffuse, 3), ("rough_metal", &rough_metal, 2), ("normal", &normal, 3)]
        {
            if data.len() != c * h * w {
                return Err(Error::ShapeMismatch {
                    op: "texture_set",
                    detail: format!("{name} has {} values, expected {}x{h}x{w}", data.len(), c),
                });
            }
        }
        if diffuse.iter().chain(&rough_metal).any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Config("diffuse and rough_metal texels must lie in [0,1]".into()));
        }
        let plane = h * w;
        for i in 0..plane {
            let (x, y, z) = (normal[i], normal[plane + i], normal[2 * plane + i]);
            let n = (x * x + y * y + z * z).sqrt();
            if (n - 1.0).abs() > 1e-6 || z <= 0.0 {
                return Err(Error::Config(format!(
                    "normal texel {i} is not a unit upward vector: ({x}, {y}, {z})"
                )));
            }
        }
        Ok(TextureSet {
            diffuse: Tensor::from_vec(vec![1, 3, h, w], diffuse),
            rough_metal: Tensor::from_vec(vec![1, 2, h, w], rough_metal),
            normal: Tensor::from_vec(vec![1, 3, h, w], normal),
        })
    }
}

/// Shared activation head turning a raw 8-channel field into texture maps.
///
/// Channels 0-2 sigmoid to diffuse, 3-4 sigmoid to roughness/metalness,
/// 5-7 build the tangent-space normal as
/// `(2*sigmoid(c5)-1, 2*sigmoid(c6)-1, 0.9*sigmoid(c7)+0.1)` normalized;
/// the pre-normalization z floor of 0.1 keeps every normal above the
/// surface.
pub fn decode_head(tape: &mut Tape, raw: &Tensor) -> Result<TextureSet> {
    if raw.shape().len() != 4 || raw.shape()[0] != 1 || raw.shape()[1] != 8 {
        return Err(Error::ShapeMismatch {
            op: "decode_head",
            detail: format!("expected [1,8,H,W] raw field, got {:?}", raw.shape()),
        });
    }
    let one = Tensor::scalar(1.0);
    let two = Tensor::scalar(2.0);

    let d = tape.slice_channels(raw, 0, 3)?;
    let diffuse = tape.sigmoid(&d);
    let rm = tape.slice_channels(raw, 3, 2)?;
    let rough_metal = tape.sigmoid(&rm);

    let tangent = tape.slice_channels(raw, 5, 2)?;
    let ts = tape.sigmoid(&tangent);
    let ts = tape.mul(&ts, &two)?;
    let ts = tape.sub(&ts, &one)?;
    let up = tape.slice_channels(raw, 7, 1)?;
    let us = tape.sigmoid(&up);
    let us = tape.mul(&us, &Tensor::scalar(0.9))?;
    let us = tape.add(&us, &Tensor::scalar(0.1))?;
    let pre = tape.concat_channels(&ts, &us)?;
    let sq = tape.mul(&pre, &pre)?;
    let len_sq = tape.sum_channels(&sq)?;
    let len = tape.sqrt(&len_sq);
    let normal = tape.div(&pre, &len)?;

    Ok(TextureSet { diffuse, rough_metal, normal })
}

/// Raw per-texel parameters, the direct-optimization baseline. Decodes
/// through [`decode_head`], so both parameterizations share one value
/// space.
#[derive(Clone, Debug)]
pub struct PixelParams {
    pub raw: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

impl PixelParams {
    pub fn zeros(height: usize, width: usize) -> PixelParams {
        PixelParams { raw: vec![0.0; 8 * height * width], height, width }
    }

    /// Registers the raw field as a leaf and decodes it. Returns the maps
    /// and the leaf the gradients attach to.
    pub fn decode(&self, tape: &mut Tape) -> Result<(TextureSet, Tensor)> {
        let leaf = tape.leaf(vec![1, 8, self.height, self.width], self.raw.clone());
        let set = decode_head(tape, &leaf)?;
        Ok((set, leaf))
    }
}
