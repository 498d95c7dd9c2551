//! System specification, validation and layout derivation.
//!
//! A [`SystemSpec`] is what the user writes (usually as JSON). It is checked by
//! [`validate_spec`] and turned into an immutable [`SystemLayout`] by
//! [`derive_layout`]. All frequencies inside the layout are kept in multiples
//! of the base spacing `f1`; Hz values are produced by accessor methods.
//!
//! JSON example:
//!
//! ```json
//! {
//!   "base_spacing_hz": 15000.0,
//!   "mode": "synchronized",
//!   "qam_order": 16,
//!   "oversample": 8,
//!   "seed": 1,
//!   "subbands": [
//!     { "spacing_ratio": 1, "cp_fraction": 0.07, "n": 600, "eta": 0.5, "guard_after": 20.0 },
//!     { "spacing_ratio": 2, "cp_fraction": 0.07, "n": 300, "eta": 0.5 }
//!   ]
//! }
//! ```
//!
//! `spacing_ratio` accepts an integer, a decimal, or a `"p/q"` string.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::Shaping;

/// Tolerance on the total power normalization.
pub const POWER_SUM_TOLERANCE: f64 = 1e-12;

/// Snapping tolerance for symbol boundaries that land on integer sample indices.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid system spec: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("base subcarrier spacing must be positive, got {0}")]
    ZeroBaseSpacing(f64),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One violated invariant of a [`SystemSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// JSON path of the offending key, e.g. `subbands[1].eta`.
    pub key: String,
    pub message: String,
}

impl Violation {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Subcarrier spacing of a numerology relative to the base spacing, `f_i / f_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpacingRatio(Ratio<i64>);

impl SpacingRatio {
    pub fn new(num: i64, den: i64) -> Self {
        Self(Ratio::new(num, den))
    }

    pub fn integer(n: i64) -> Self {
        Self(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn as_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_positive(&self) -> bool {
        self.numer() > 0
    }

    /// `Some(L)` when the ratio equals `2^L` for a non-negative integer `L`.
    pub fn power_of_two_exponent(&self) -> Option<u32> {
        if self.denom() == 1 && self.numer() > 0 && (self.numer() as u64).is_power_of_two() {
            Some(self.numer().trailing_zeros())
        } else {
            None
        }
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }
}

impl fmt::Display for SpacingRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for SpacingRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(r) = s.parse::<Ratio<i64>>() {
            if *r.denom() == 0 {
                return Err(format!("zero denominator in spacing ratio {s:?}"));
            }
            return Ok(Self(r));
        }
        let x: f64 = s
            .parse()
            .map_err(|_| format!("cannot parse spacing ratio {s:?}"))?;
        Self::try_from(x)
    }
}

impl TryFrom<f64> for SpacingRatio {
    type Error = String;

    fn try_from(x: f64) -> Result<Self, Self::Error> {
        if !x.is_finite() {
            return Err(format!("spacing ratio {x} is not finite"));
        }
        if x.fract() == 0.0 && x.abs() < 1e15 {
            return Ok(Self::integer(x as i64));
        }
        let r = Ratio::<i64>::approximate_float(x)
            .ok_or_else(|| format!("cannot represent spacing ratio {x} as a fraction"))?;
        if *r.denom() > 1_000_000 {
            return Err(format!(
                "spacing ratio {x} is not a simple fraction; write it as \"p/q\""
            ));
        }
        Ok(Self(r))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RatioRepr {
    Number(f64),
    Text(String),
}

impl Serialize for SpacingRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.denom() == 1 {
            s.serialize_i64(self.numer())
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for SpacingRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RatioRepr::deserialize(d)? {
            RatioRepr::Number(x) => SpacingRatio::try_from(x).map_err(serde::de::Error::custom),
            RatioRepr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumerologySpec {
    pub spacing_ratio: SpacingRatio,
    /// `T_CP / T_sys` for this numerology.
    pub cp_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubbandSpec {
    #[serde(flatten)]
    pub numerology: NumerologySpec,
    #[serde(rename = "n")]
    pub subcarrier_count: usize,
    /// Share of the total average power.
    #[serde(rename = "eta")]
    pub power: f64,
    /// Guard to the next subband, in multiples of the base spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_after: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// All subbands share an integral LCM frame and a common start.
    #[default]
    Synchronized,
    /// Arbitrary rational spacings; each subband starts at a random offset.
    Asynchronous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub base_spacing_hz: f64,
    pub subbands: Vec<SubbandSpec>,
    #[serde(default)]
    pub mode: SyncMode,
    #[serde(default = "default_qam_order")]
    pub qam_order: u32,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default)]
    pub seed: u64,
    /// Optional spectrum confinement (filtered or windowed OFDM).
    #[serde(default, skip_serializing_if = "Shaping::is_none")]
    pub shaping: Shaping,
}

fn default_qam_order() -> u32 {
    16
}

fn default_oversample() -> usize {
    8
}

impl SystemSpec {
    /// Synchronized spec with the common settings used throughout the crate:
    /// 16-QAM, 7% CP, 8x oversampling, equal power split, seed 0.
    ///
    /// `subbands` holds `(spacing_ratio, subcarrier_count)` pairs; every
    /// adjacent pair is separated by `guard` base spacings.
    pub fn synchronized(subbands: &[(i64, usize)], guard: f64) -> Self {
        let m = subbands.len();
        let subbands = subbands
            .iter()
            .enumerate()
            .map(|(i, &(ratio, n))| SubbandSpec {
                numerology: NumerologySpec {
                    spacing_ratio: SpacingRatio::integer(ratio),
                    cp_fraction: 0.07,
                },
                subcarrier_count: n,
                power: 1.0 / m as f64,
                guard_after: (i + 1 < m).then_some(guard),
            })
            .collect();
        Self {
            base_spacing_hz: 15_000.0,
            subbands,
            mode: SyncMode::Synchronized,
            qam_order: 16,
            oversample: 8,
            seed: 0,
            shaping: Shaping::None,
        }
    }

    /// Replaces the subband powers.
    pub fn with_powers(mut self, powers: &[f64]) -> Self {
        for (sb, &p) in self.subbands.iter_mut().zip(powers) {
            sb.power = p;
        }
        self
    }
}

/// Returns every violated invariant; an empty list means the spec is consistent.
pub fn validate_spec(spec: &SystemSpec) -> Vec<Violation> {
    let mut out = Vec::new();

    if !(spec.base_spacing_hz.is_finite() && spec.base_spacing_hz > 0.0) {
        out.push(Violation::new(
            "base_spacing_hz",
            format!("must be positive, got {}", spec.base_spacing_hz),
        ));
    }
    if !matches!(spec.qam_order, 4 | 16 | 64) {
        out.push(Violation::new(
            "qam_order",
            format!("unsupported constellation order {} (expected 4, 16 or 64)", spec.qam_order),
        ));
    }
    if spec.oversample < 1 {
        out.push(Violation::new("oversample", "must be at least 1"));
    }
    if spec.subbands.is_empty() {
        out.push(Violation::new("subbands", "at least one subband is required"));
        return out;
    }

    let m = spec.subbands.len();
    let mut power_sum = 0.0;
    let mut any_base = false;
    for (i, sb) in spec.subbands.iter().enumerate() {
        let key = |k: &str| format!("subbands[{i}].{k}");
        let ratio = sb.numerology.spacing_ratio;
        if !ratio.is_positive() {
            out.push(Violation::new(key("spacing_ratio"), format!("{ratio} is not positive")));
        } else if ratio.as_f64() < 1.0 {
            out.push(Violation::new(
                key("spacing_ratio"),
                format!("{ratio} is below 1; the base spacing must be the minimum spacing"),
            ));
        } else if spec.mode == SyncMode::Synchronized && ratio.power_of_two_exponent().is_none() {
            out.push(Violation::new(
                key("spacing_ratio"),
                format!("{ratio} is not a power of two (required in synchronized mode)"),
            ));
        }
        if ratio == SpacingRatio::integer(1) {
            any_base = true;
        }
        let cp = sb.numerology.cp_fraction;
        if !(cp.is_finite() && (0.0..1.0).contains(&cp)) {
            out.push(Violation::new(key("cp_fraction"), format!("{cp} is outside [0, 1)")));
        }
        if sb.subcarrier_count < 1 {
            out.push(Violation::new(key("n"), "subcarrier count must be at least 1"));
        }
        if !(sb.power.is_finite() && sb.power >= 0.0) {
            out.push(Violation::new(key("eta"), format!("power {} is negative or not finite", sb.power)));
        }
        power_sum += sb.power;
        match sb.guard_after {
            Some(g) if i + 1 == m => out.push(Violation::new(
                key("guard_after"),
                format!("last subband cannot carry a guard (got {g})"),
            )),
            Some(g) if !(g.is_finite() && g >= 0.0) => out.push(Violation::new(
                key("guard_after"),
                format!("guard {g} is negative or not finite"),
            )),
            _ => {}
        }
    }
    if !any_base {
        out.push(Violation::new(
            "subbands",
            "no subband uses the base spacing (spacing_ratio 1)",
        ));
    }
    if (power_sum - 1.0).abs() > POWER_SUM_TOLERANCE {
        out.push(Violation::new(
            "subbands[].eta",
            format!("powers sum to {} ≠ 1", fmt_sum(power_sum)),
        ));
    }
    if spec.mode == SyncMode::Synchronized {
        let cp0 = spec.subbands[0].numerology.cp_fraction;
        for (i, sb) in spec.subbands.iter().enumerate().skip(1) {
            if sb.numerology.cp_fraction != cp0 {
                out.push(Violation::new(
                    format!("subbands[{i}].cp_fraction"),
                    format!(
                        "{} differs from the base cp_fraction {cp0} (synchronized numerologies share it)",
                        sb.numerology.cp_fraction
                    ),
                ));
            }
        }
    }
    match spec.shaping {
        Shaping::Window { rolloff_fraction } => {
            if !(rolloff_fraction.is_finite() && (0.0..=0.5).contains(&rolloff_fraction)) {
                out.push(Violation::new(
                    "shaping.rolloff_fraction",
                    format!("{rolloff_fraction} is outside [0, 0.5] (taper must fit twice in the CP)"),
                ));
            }
        }
        Shaping::Filter(f) => {
            if f.order < 2 || f.order % 2 != 0 {
                out.push(Violation::new(
                    "shaping.order",
                    format!("filter order {} must be even and at least 2", f.order),
                ));
            }
            if !(f.transition_spacings.is_finite() && f.transition_spacings >= 0.0) {
                out.push(Violation::new("shaping.transition_spacings", "must be non-negative"));
            }
        }
        Shaping::None => {}
    }
    out
}

fn fmt_sum(x: f64) -> String {
    // Trim representation noise such as 1.4000000000000001.
    let s = format!("{:.12}", x);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Derived geometry of one subband. Frequencies are in multiples of `f1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandLayout {
    pub spacing_ratio: SpacingRatio,
    pub subcarrier_count: usize,
    pub power: f64,
    pub cp_fraction: f64,
    /// `B_i / f1`.
    pub bandwidth: f64,
    /// `delta_i / f1`, the lowest subcarrier frequency.
    pub offset: f64,
    /// Guard to the next subband in multiples of `f1` (zero for the last one).
    pub guard_after: f64,
    /// `d_i = delta_i / f_i`.
    pub normalized_offset: f64,
    /// `n_i = T0 / T_i`; an integer power of two in synchronized mode.
    pub symbols_per_frame: f64,
}

impl SubbandLayout {
    pub fn spacing(&self) -> f64 {
        self.spacing_ratio.as_f64()
    }

    /// `T_i / T0`, the symbol duration as a fraction of the observation window.
    pub fn symbol_duration_ratio(&self) -> f64 {
        1.0 / self.symbols_per_frame
    }

    /// Frequency of the subband center in multiples of `f1`.
    pub fn center(&self) -> f64 {
        self.offset + 0.5 * self.bandwidth
    }
}

/// Immutable description of a mixed-numerology LCM frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemLayout {
    pub base_spacing_hz: f64,
    pub mode: SyncMode,
    pub qam_order: u32,
    pub oversample: usize,
    pub seed: u64,
    pub shaping: Shaping,
    pub subbands: Vec<SubbandLayout>,
    /// `B / f1`.
    pub total_bandwidth: f64,
    /// `T0 / T_sys,1 = 1 + cp_fraction` of the base numerology.
    pub mu: f64,
    /// Samples per base useful symbol `T_sys,1` at unit oversampling.
    ///
    /// Smallest integer `>= B / f1` divisible by every spacing-ratio numerator,
    /// so each numerology's IFFT length is an integer on the common clock.
    pub nominal_grid_len: usize,
}

impl SystemLayout {
    pub fn num_subbands(&self) -> usize {
        self.subbands.len()
    }

    pub fn total_subcarriers(&self) -> usize {
        self.subbands.iter().map(|s| s.subcarrier_count).sum()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.subbands.iter().map(|s| s.power).collect()
    }

    /// Copy of this layout with the subband powers replaced.
    pub fn with_powers(&self, powers: &[f64]) -> SystemLayout {
        let mut out = self.clone();
        for (sb, &p) in out.subbands.iter_mut().zip(powers) {
            sb.power = p;
        }
        out
    }

    pub fn total_bandwidth_hz(&self) -> f64 {
        self.total_bandwidth * self.base_spacing_hz
    }

    pub fn bandwidth_hz(&self, i: usize) -> f64 {
        self.subbands[i].bandwidth * self.base_spacing_hz
    }

    pub fn offset_hz(&self, i: usize) -> f64 {
        self.subbands[i].offset * self.base_spacing_hz
    }

    pub fn spacing_hz(&self, i: usize) -> f64 {
        self.subbands[i].spacing() * self.base_spacing_hz
    }

    /// Observation window `T0` in seconds.
    pub fn frame_duration_s(&self) -> f64 {
        self.mu / self.base_spacing_hz
    }

    /// Sample interval of the nominal (unit oversampling) grid in seconds.
    pub fn base_sample_interval_s(&self) -> f64 {
        1.0 / (self.nominal_grid_len as f64 * self.base_spacing_hz)
    }

    /// Sampling geometry at oversampling factor `oversample`.
    pub fn grid(&self, oversample: usize) -> SampleGrid {
        let fft_len = self.nominal_grid_len * oversample;
        let frame_len = (fft_len as f64 * self.mu).round() as usize;
        SampleGrid {
            fft_len,
            frame_len,
            sample_rate_hz: fft_len as f64 * self.base_spacing_hz,
        }
    }
}

/// Sample-level geometry of the common synthesis clock.
///
/// With base IFFT length `K1 = J * nominal_grid_len`, the frame holds
/// `round(K1 * mu)` samples at rate `K1 * f1`. Subband `i` uses an IFFT of
/// length `K1 / spacing_ratio_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrid {
    pub fft_len: usize,
    pub frame_len: usize,
    pub sample_rate_hz: f64,
}

impl SampleGrid {
    /// IFFT length of a subband with the given spacing ratio.
    pub fn subband_fft_len(&self, ratio: SpacingRatio) -> usize {
        let k = self.fft_len as i64 * ratio.denom();
        debug_assert_eq!(k % ratio.numer(), 0);
        (k / ratio.numer()) as usize
    }
}

/// Index of the first sample at or after the (possibly fractional) position `x`.
pub(crate) fn first_sample_at(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() < BOUNDARY_EPS {
        r as i64
    } else {
        x.ceil() as i64
    }
}

fn lcm(a: i64, b: i64) -> i64 {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

pub fn derive_layout(spec: &SystemSpec) -> Result<SystemLayout, ConfigError> {
    if spec.base_spacing_hz == 0.0 {
        return Err(ConfigError::ZeroBaseSpacing(spec.base_spacing_hz));
    }
    let violations = validate_spec(spec);
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }

    let base = spec
        .subbands
        .iter()
        .find(|s| s.numerology.spacing_ratio == SpacingRatio::integer(1))
        .expect("validated: a base-spacing subband exists");
    let mu = 1.0 + base.numerology.cp_fraction;
    let m = spec.subbands.len();
    let mut offset = 0.0;
    let mut subbands = Vec::with_capacity(m);
    for (i, sb) in spec.subbands.iter().enumerate() {
        let ratio = sb.numerology.spacing_ratio;
        let r = ratio.as_f64();
        let bandwidth = sb.subcarrier_count as f64 * r;
        let guard = if i + 1 < m { sb.guard_after.unwrap_or(0.0) } else { 0.0 };
        // T0 = mu / f1 and T_i = (1 + cp_i) / f_i.
        let symbols_per_frame = r * mu / (1.0 + sb.numerology.cp_fraction);
        subbands.push(SubbandLayout {
            spacing_ratio: ratio,
            subcarrier_count: sb.subcarrier_count,
            power: sb.power,
            cp_fraction: sb.numerology.cp_fraction,
            bandwidth,
            offset,
            guard_after: guard,
            normalized_offset: offset / r,
            symbols_per_frame,
        });
        offset += bandwidth + guard;
    }
    let last = subbands.last().expect("non-empty");
    let total_bandwidth = last.offset + last.bandwidth;

    let step = spec
        .subbands
        .iter()
        .map(|s| s.numerology.spacing_ratio.numer())
        .fold(1, lcm);
    let min_len = (total_bandwidth - BOUNDARY_EPS).ceil().max(1.0) as i64;
    let nominal_grid_len = ((min_len + step - 1) / step * step) as usize;

    Ok(SystemLayout {
        base_spacing_hz: spec.base_spacing_hz,
        mode: spec.mode,
        qam_order: spec.qam_order,
        oversample: spec.oversample,
        seed: spec.seed,
        shaping: spec.shaping,
        subbands,
        total_bandwidth,
        mu,
        nominal_grid_len,
    })
}
