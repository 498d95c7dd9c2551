//! Mixed-numerology OFDM PAPR toolkit: frame synthesis, Monte Carlo PAPR
//! statistics, closed-form CCDFs and power allocation.

pub mod allocate;
pub mod analytic;
pub mod config;
pub mod dump;
pub mod papr;
pub mod waveform;
