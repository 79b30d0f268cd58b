//! Shared parameter-set abstraction: both experiment loops optimize
//! either raw texels or network weights through one interface.

use crate::net::{decode_head, init_unet, PixelParams, TextureSet, UNet, UNetConfig};
use crate::tensor::{Gradients, Tape, Tensor};
use crate::Result;

use super::adam::AdamState;

pub(super) enum ParamSet {
    Pixel(PixelParams),
    Net(UNet),
}

impl ParamSet {
    pub fn pixel(height: usize, width: usize) -> ParamSet {
        ParamSet::Pixel(PixelParams::zeros(height, width))
    }

    pub fn net(seed: u64, height: usize, width: usize, skip: bool) -> Result<ParamSet> {
        let mut cfg = UNetConfig::with_seed(seed);
        cfg.skip_enabled = skip;
        Ok(ParamSet::Net(init_unet(cfg, height, width)?))
    }

    pub fn buffer_sizes(&self) -> Vec<usize> {
        match self {
            ParamSet::Pixel(p) => vec![p.raw.len()],
            ParamSet::Net(n) => n.params().iter().map(|p| p.data.len()).collect(),
        }
    }

    /// Decodes the current parameters into texture maps, registering every
    /// optimizable buffer as a leaf on `tape`.
    pub fn forward(&self, tape: &mut Tape) -> Result<(TextureSet, Vec<Tensor>)> {
        match self {
            ParamSet::Pixel(p) => {
                let (set, leaf) = p.decode(tape)?;
                Ok((set, vec![leaf]))
            }
            ParamSet::Net(n) => {
                let (raw, leaves) = n.forward(tape)?;
                Ok((decode_head(tape, &raw)?, leaves))
            }
        }
    }

    /// One optimizer update from the gradients of the leaves returned by
    /// the matching [`ParamSet::forward`] call.
    pub fn apply(
        &mut self,
        adam: &mut AdamState,
        leaves: &[Tensor],
        grads: &Gradients,
    ) -> Result<()> {
        let bufs: Vec<&[f64]> = leaves
            .iter()
            .map(|l| grads.get(l).expect("every parameter leaf is reachable from the loss"))
            .collect();
        match self {
            ParamSet::Pixel(p) => adam.step([("raw", p.raw.as_mut_slice(), bufs[0])]),
            ParamSet::Net(n) => adam.step(
                n.params_mut()
                    .iter_mut()
                    .zip(bufs)
                    .map(|(p, g)| (p.name.as_str(), p.data.as_mut_slice(), g)),
            ),
        }
    }
}
