//! Observation models for the limit experiment: the linear IV design, the
//! finite parameter-grid design, and the deterministic stream-addressed RNG
//! that all sampling is keyed by.

mod finite;
mod iv;
mod rng;

pub use finite::{draw_finite, FiniteThetaModel};
pub use iv::{draw_iv, g_eval, sigma_kernel, IvDesign, MomentDraw};
pub use rng::RngStream;
