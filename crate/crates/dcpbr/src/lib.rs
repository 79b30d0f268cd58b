//! Laboratory for studying deep convolutional re-parameterization of PBR
//! texture maps under noisy optimization signals.
//!
//! The pipeline is fully self-contained and CPU-only: a reverse-mode
//! autodiff engine over dense `f64` tensors ([`tensor`]), a randomly
//! initialized skip-connected U-Net that maps a fixed noise image to
//! diffuse / roughness-metalness / normal maps ([`net`]), a fixed-geometry
//! rasterizer with differentiable Cook-Torrance shading ([`render`]),
//! losses and the Adam optimizer driving the experiments ([`optim`]), and
//! the frequency-band / gradient-coherence measurement instruments
//! ([`analysis`]). The [`cli`] module ties everything into the `lab`
//! command-line harness.

// Index loops dominate here on purpose: the kernels walk multiple parallel
// buffers with shared arithmetic on the index, which iterator chains obscure.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod net;
pub mod optim;
pub mod render;
pub mod tensor;

pub use error::{Error, Result};
