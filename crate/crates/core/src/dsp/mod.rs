//! Signal-processing building blocks shared by synthesis and analysis.

pub mod filter;
pub mod lpc;
pub mod resample;
pub mod roots;
pub mod window;

pub use filter::{Biquad, OnePole, Resonator};
pub use lpc::{burg, covariance, inverse_filter, LpcFrame};
pub use resample::resample;
