//! Photomultiplier-tube receivers for optical on-off keying.
//!
//! The analytic routines are generic over [`scalar::Real`] (`f32`, `f64`);
//! the aliases below fix the scalar to `f64`, which is what the experiments
//! and the command-line tool use.

// `!(a > b)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod counting;
pub mod detector;
pub mod error;
pub mod experiments;
pub mod quadrature;
pub mod rates;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PmtParams = channel::PmtParams<f64>;
pub type ChannelConfig = channel::ChannelConfig<f64>;
pub type SymbolSample = channel::SymbolSample<f64>;
pub type CrossoverPair = rates::CrossoverPair<f64>;
pub type RateBoundsReport = rates::RateBoundsReport<f64>;
pub type LlrCoefficients = detector::LlrCoefficients<f64>;
pub type LlrFunction = detector::LlrFunction<f64>;
pub type PiecewiseDetector = detector::PiecewiseDetector<f64>;
pub type MapDetector = detector::MapDetector<f64>;
pub type HardDecisionModel = counting::HardDecisionModel<f64>;
pub type CountDetector = counting::CountDetector<f64>;
pub type KlProfile = counting::KlProfile<f64>;
pub type TrialConfig = sim::TrialConfig<f64>;
pub type DetectorSpec = sim::DetectorSpec<f64>;

/// Single-precision aliases.
pub mod f32 {
    pub type PmtParams = crate::channel::PmtParams<f32>;
    pub type ChannelConfig = crate::channel::ChannelConfig<f32>;
    pub type PiecewiseDetector = crate::detector::PiecewiseDetector<f32>;
    pub type HardDecisionModel = crate::counting::HardDecisionModel<f32>;
}
