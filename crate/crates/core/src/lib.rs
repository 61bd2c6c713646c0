//! Refraction-corrected delay-and-sum beamforming for focused linear-array
//! ultrasound.
//!
//! Round-trip delays come either from a constant sound speed
//! ([`delays::GeometricDelays`]) or from first-arrival travel times solved on
//! a speed-of-sound map with the fast marching method
//! ([`delays::FmDelays`]). The remaining modules build numerical phantoms,
//! simulate RF data, beamform it and score the images.

pub mod beamform;
pub mod config;
pub mod delays;
pub mod eikonal;
pub mod error;
pub mod medium;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod rf;
pub mod rfsim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/medium.md")]
    mod medium {}
    #[doc = include_str!("../../../book/src/eikonal.md")]
    mod eikonal {}
    #[doc = include_str!("../../../book/src/delays.md")]
    mod delays {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/beamforming.md")]
    mod beamforming {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
