//! Wasserstein distributionally robust sampled-data control of
//! multiplicative (portfolio-type) systems.
//!
//! A discrete-time wealth process is controlled with piecewise-constant
//! weights held for `n` periods. For each candidate `n` a convex relaxation
//! of the worst-case expected log-growth over a Wasserstein ball is solved
//! by cutting planes, the horizon with the best certified rate is chosen,
//! and the relaxation gap is bounded a posteriori.

pub mod backtest;
pub mod calibrate;
pub mod certificate;
pub mod data;
pub mod dro;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod transport;
