//! Prediction of half-hourly minima and maxima of high-resolution electricity
//! load from half-hourly inputs.
//!
//! The crate models the per-slot differences between the high-resolution
//! extremes and the known half-hourly load, using penalized B-spline
//! additive models and a small multilayer perceptron, and evaluates them in a
//! rolling monthly backtest against a naive benchmark.

pub mod features;
pub mod gam;
pub mod linalg;
pub mod mlp;
pub mod spline;
pub mod synthgen;
pub mod timeseries;
