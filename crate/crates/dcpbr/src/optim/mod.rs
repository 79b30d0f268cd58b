//! Optimization layer: the Adam step, the joint texture L1 objective,
//! the timestep-scheduled noisy-gradient surrogate, and the two
//! experiment loops (direct map fitting and render-space synthesis) that
//! compare the parameterizations under identical conditions.

mod adam;
mod fit;
mod params;
mod sds;
mod synth;

pub use adam::{AdamState, DEFAULT_LR};
pub use fit::{
    default_fit_lr, optimize_fit, texture_l1, FitKind, FitOptions, FitRecord, FitResult,
};
pub use sds::{sds_surrogate, surrogate_loss, SdsSample, SdsSchedule};
pub use synth::{
    build_view_pool, default_synth_lr, optimize_synth, SynthKind, SynthOptions, SynthRecord,
    SynthResult, ViewPool,
};

#[cfg(test)]
mod tests;
