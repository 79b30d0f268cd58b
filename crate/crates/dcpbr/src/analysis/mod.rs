//! Measurement instruments for texture optimization runs.
//!
//! Two views of what an optimizer is doing: where in the frequency
//! spectrum a texture's energy lives as it evolves ([`band_energies`],
//! [`BandTrace`], [`convergence_iteration`]), and how aligned the per-view
//! gradients of a noisy multi-view objective are ([`gradient_coherence`],
//! [`singular_value_ratios`]).

mod bands;
mod coherence;
mod fft;

pub use bands::{band_energies, convergence_iteration, spearman, BandRow, BandTrace, NUM_BANDS};
pub use coherence::{
    gradient_coherence, singular_value_ratios, CoherenceOptions, CoherenceReport, RANK_EPS,
};
pub use fft::fft2;
