//! PAPR measurement, seeded Monte Carlo campaigns and CCDF curves.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{self, BaselineKind, BaselineParams, LambdaFactor};
use crate::config::SystemLayout;
use crate::waveform::{trial_stream, SampledSignal, Synthesizer, WaveformError};

pub const DEFAULT_GAMMA_MIN_DB: f64 = 4.0;
pub const DEFAULT_GAMMA_MAX_DB: f64 = 13.0;
pub const DEFAULT_GAMMA_STEP_DB: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum PaprError {
    #[error("average power must be positive, got {0}")]
    AveragePower(f64),
    #[error("frame is empty")]
    EmptyFrame,
    #[error("no PAPR samples")]
    EmptySamples,
    #[error("gamma grid must be non-empty and strictly ascending")]
    Grid,
    #[error("a campaign needs at least one trial")]
    ZeroTrials,
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

/// Peak-to-average power ratio of one frame, linear.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PaprSample {
    pub gamma: f64,
}

impl PaprSample {
    pub fn gamma_db(&self) -> f64 {
        10.0 * self.gamma.log10()
    }
}

/// `max |z[m]|² / average_power` over the whole frame, CP samples included.
pub fn measure_papr(frame: &SampledSignal, average_power: f64) -> Result<PaprSample, PaprError> {
    papr_of(&frame.samples, average_power)
}

/// [`measure_papr`] on raw samples.
pub fn papr_of(samples: &[Complex64], average_power: f64) -> Result<PaprSample, PaprError> {
    if !(average_power > 0.0) {
        return Err(PaprError::AveragePower(average_power));
    }
    if samples.is_empty() {
        return Err(PaprError::EmptyFrame);
    }
    let peak = samples.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    Ok(PaprSample {
        gamma: peak / average_power,
    })
}

/// Number of indices with `|z[m]| < r <= |z[m+1]|`.
pub fn count_level_upcrossings(frame: &SampledSignal, r: f64) -> usize {
    count_upcrossings(&frame.samples, r)
}

pub fn count_upcrossings(samples: &[Complex64], r: f64) -> usize {
    let r2 = r * r;
    samples
        .windows(2)
        .filter(|w| w[0].norm_sqr() < r2 && r2 <= w[1].norm_sqr())
        .count()
}

/// A seeded Monte Carlo campaign over one layout.
///
/// Trial `t` draws from the sub-stream `(seed, t)`, so results do not depend
/// on how trials are spread over workers.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub layout: SystemLayout,
    pub oversample: usize,
    pub trials: u64,
    pub seed: u64,
    /// Worker cap; `None` or `Some(0)` lets rayon decide.
    pub threads: Option<usize>,
}

impl Campaign {
    pub fn new(layout: &SystemLayout, trials: u64, seed: u64) -> Self {
        Self {
            layout: layout.clone(),
            oversample: layout.oversample,
            trials,
            seed,
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    pub fn with_oversample(mut self, oversample: usize) -> Self {
        self.oversample = oversample;
        self
    }

    /// Applies `f` to every trial's frame and returns the results in trial
    /// order.
    pub fn map<T, F>(&self, f: F) -> Result<Vec<T>, PaprError>
    where
        T: Send,
        F: Fn(u64, &[Complex64]) -> T + Sync,
    {
        if self.trials == 0 {
            return Err(PaprError::ZeroTrials);
        }
        let synth = Synthesizer::new(&self.layout, self.oversample)?;
        let work = || {
            (0..self.trials)
                .into_par_iter()
                .map_init(
                    || (synth.scratch(), Vec::new()),
                    |(scratch, buf), t| {
                        let mut rng = trial_stream(self.seed, t);
                        synth.frame_into(&mut rng, scratch, buf);
                        f(t, buf)
                    },
                )
                .collect::<Vec<T>>()
        };
        match self.threads {
            None | Some(0) => Ok(work()),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PaprError::Pool(e.to_string()))
                .map(|pool| pool.install(work)),
        }
    }

    /// PAPR of every trial against the analytical average power of one.
    pub fn run(&self) -> Result<Vec<PaprSample>, PaprError> {
        self.map(|_, z| papr_of(z, 1.0).expect("frames are never empty"))
    }
}

/// PAPR samples of `trials` frames of `layout` at its oversampling factor.
pub fn run_monte_carlo(layout: &SystemLayout, trials: u64, seed: u64) -> Result<Vec<PaprSample>, PaprError> {
    Campaign::new(layout, trials, seed).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcdfKind {
    Empirical,
    Proposed,
    Ochiai,
    ExtremeValue,
    PowerWeighted,
    Nyquist,
    Empirical2p8,
}

impl CcdfKind {
    /// Analytical curves in CSV column order.
    pub const ANALYTICAL: [CcdfKind; 6] = [
        CcdfKind::Proposed,
        CcdfKind::Ochiai,
        CcdfKind::ExtremeValue,
        CcdfKind::PowerWeighted,
        CcdfKind::Nyquist,
        CcdfKind::Empirical2p8,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CcdfKind::Empirical => "empirical",
            CcdfKind::Proposed => "proposed",
            CcdfKind::Ochiai => "ochiai",
            CcdfKind::ExtremeValue => "extreme_value",
            CcdfKind::PowerWeighted => "power_weighted",
            CcdfKind::Nyquist => "nyquist",
            CcdfKind::Empirical2p8 => "empirical_2p8",
        }
    }

    /// The baseline formula behind this curve, if it is one.
    pub fn baseline(&self) -> Option<BaselineKind> {
        match self {
            CcdfKind::Ochiai => Some(BaselineKind::Ochiai),
            CcdfKind::ExtremeValue => Some(BaselineKind::ExtremeValue),
            CcdfKind::PowerWeighted => Some(BaselineKind::PowerWeighted),
            CcdfKind::Nyquist => Some(BaselineKind::Nyquist),
            CcdfKind::Empirical2p8 => Some(BaselineKind::Empirical2p8),
            _ => None,
        }
    }
}

impl fmt::Display for CcdfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CcdfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        std::iter::once(CcdfKind::Empirical)
            .chain(CcdfKind::ANALYTICAL)
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown CCDF kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfCurve {
    pub gamma_db_grid: Vec<f64>,
    pub prob: Vec<f64>,
    pub kind: CcdfKind,
    pub trials: Option<usize>,
}

impl CcdfCurve {
    /// `γ` (dB) where the curve falls to `prob`, interpolating linearly in
    /// `log10(prob)` between grid points. `None` if the curve never brackets
    /// `prob`.
    pub fn gamma_db_at(&self, prob: f64) -> Option<f64> {
        let i = self.prob.iter().position(|&p| p <= prob)?;
        if i == 0 {
            return (self.prob[0] == prob).then(|| self.gamma_db_grid[0]);
        }
        let (p0, p1) = (self.prob[i - 1], self.prob[i]);
        let (g0, g1) = (self.gamma_db_grid[i - 1], self.gamma_db_grid[i]);
        let t = if p1 > 0.0 {
            (p0.ln() - prob.ln()) / (p0.ln() - p1.ln())
        } else {
            (p0 - prob) / (p0 - p1)
        };
        Some(g0 + t * (g1 - g0))
    }
}

/// `n` points from `min_db` in steps of `step_db`, last point `<= max_db`.
pub fn gamma_grid(min_db: f64, max_db: f64, step_db: f64) -> Vec<f64> {
    if !(step_db > 0.0) || !(max_db >= min_db) {
        return Vec::new();
    }
    let n = ((max_db - min_db) / step_db + 1e-9).floor() as usize + 1;
    (0..n).map(|k| min_db + k as f64 * step_db).collect()
}

pub fn default_gamma_grid() -> Vec<f64> {
    gamma_grid(DEFAULT_GAMMA_MIN_DB, DEFAULT_GAMMA_MAX_DB, DEFAULT_GAMMA_STEP_DB)
}

fn check_grid(grid: &[f64]) -> Result<(), PaprError> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(PaprError::Grid);
    }
    Ok(())
}

fn sorted_db(samples: &[PaprSample]) -> Vec<f64> {
    let mut db: Vec<f64> = samples.iter().map(PaprSample::gamma_db).collect();
    db.sort_by(f64::total_cmp);
    db
}

/// `prob[g] = #(gamma_db > grid[g]) / trials`.
pub fn empirical_ccdf(samples: &[PaprSample], gamma_db_grid: &[f64]) -> Result<CcdfCurve, PaprError> {
    if samples.is_empty() {
        return Err(PaprError::EmptySamples);
    }
    check_grid(gamma_db_grid)?;
    let db = sorted_db(samples);
    let n = db.len() as f64;
    let prob = gamma_db_grid
        .iter()
        .map(|&g| (db.len() - db.partition_point(|&x| x <= g)) as f64 / n)
        .collect();
    Ok(CcdfCurve {
        gamma_db_grid: gamma_db_grid.to_vec(),
        prob,
        kind: CcdfKind::Empirical,
        trials: Some(samples.len()),
    })
}

/// Sample `γ` (dB) exceeded with frequency `prob`: the `(1 - prob)` quantile
/// with linear interpolation between order statistics.
pub fn empirical_quantile_db(samples: &[PaprSample], prob: f64) -> Result<f64, PaprError> {
    if samples.is_empty() {
        return Err(PaprError::EmptySamples);
    }
    let db = sorted_db(samples);
    let pos = (1.0 - prob).clamp(0.0, 1.0) * (db.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(db.len() - 1);
    Ok(db[lo] + (pos - lo as f64) * (db[hi] - db[lo]))
}

/// Analytical curve `kind` on a dB grid.
///
/// Points below the proposed formula's validity floor are reported as one.
pub fn analytical_ccdf(
    kind: CcdfKind,
    lambda: &LambdaFactor,
    params: &BaselineParams,
    gamma_db_grid: &[f64],
) -> Result<CcdfCurve, PaprError> {
    check_grid(gamma_db_grid)?;
    let prob = gamma_db_grid
        .iter()
        .map(|&g_db| {
            let g = 10f64.powf(g_db / 10.0);
            match kind.baseline() {
                Some(b) => analytic::ccdf_baseline(b, g, params).unwrap_or(f64::NAN),
                None if g < analytic::PROPOSED_VALIDITY_FLOOR => 1.0,
                None => analytic::ccdf_proposed(g, lambda),
            }
        })
        .collect();
    Ok(CcdfCurve {
        gamma_db_grid: gamma_db_grid.to_vec(),
        prob,
        kind,
        trials: None,
    })
}

/// Mean of per-frame PAPR in dB.
pub fn mean_papr_db(samples: &[PaprSample]) -> Option<f64> {
    (!samples.is_empty())
        .then(|| samples.iter().map(PaprSample::gamma_db).sum::<f64>() / samples.len() as f64)
}
