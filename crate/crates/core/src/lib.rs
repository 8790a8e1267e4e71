//! Adaptive regulation of linear-quadratic systems driven by optimism in the
//! face of uncertainty, together with the closed-loop identification and
//! Monte Carlo verification machinery around it.

pub mod confidence;
pub mod error;
pub mod linalg;
pub mod identify;
pub mod lqmodel;
pub mod noise;
pub mod riccati;
pub mod simulate;
pub mod synth;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use lqmodel::{CostPair, DynamicsParameter, JordanData};
