//! Forecasting of human-driven vehicle dynamics from the recent past and the
//! road geometry ahead.
//!
//! The crate is organized bottom-up:
//!
//! - [`track_geometry`]: quintic spline road model and road features
//! - [`signal_pipeline`]: filtering, decimation, normalization, windowing
//! - [`neural_core`]: dense/LSTM layers with exact gradients, dropout, Adam
//! - [`forecaster`]: encoder-decoder network, WMSE loss, training
//! - [`hyperopt`]: Gaussian-process Bayesian optimization
//! - [`synth_world`]: synthetic tracks and driver-vehicle laps

pub mod forecaster;
pub mod hyperopt;
pub mod linalg;
pub mod neural_core;
pub mod signal_pipeline;
pub mod synth_world;
pub mod track_geometry;
