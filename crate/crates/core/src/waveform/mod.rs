//! Oversampled complex baseband synthesis of mixed-numerology LCM frames.
//!
//! Every subband is rendered on one common sampling clock `Fs = K1 * f1`, where
//! `K1 = J * nominal_grid_len`. A subband with spacing `f_i = r_i f1` uses an
//! IFFT of length `K_i = K1 / r_i`, so its useful part is exactly periodic on
//! the grid. Symbol boundaries and cyclic-prefix origins generally fall between
//! samples; the fractional part of the time origin is applied as a per-bin phase
//! ramp before the IFFT, and a fractional normalized offset `d_i` as a
//! per-sample rotation after it. The returned samples are therefore exact
//! samples of the continuous-time signal, independent of `J`.

mod shaping;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{first_sample_at, SampleGrid, SyncMode, SystemLayout};

pub use shaping::{
    apply_edge_window, apply_subband_filter, raised_cosine_ramp, FilterSpec, FilterWindow,
    SubbandFilter,
};

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error("unsupported constellation order {0} (expected 4, 16 or 64)")]
    UnsupportedOrder(u32),
    #[error("symbol count must be at least 1")]
    EmptyBlock,
    #[error("subband {subband} expects {expected} symbols, block has {actual}")]
    BlockLength {
        subband: usize,
        expected: usize,
        actual: usize,
    },
    #[error("oversampling factor must be at least 1")]
    Oversample,
    #[error("subband index {0} out of range")]
    SubbandIndex(usize),
    #[error("filter with {taps} taps does not fit in a {frame} sample frame")]
    FilterTooLong { taps: usize, frame: usize },
    #[error("rolloff of {rolloff} samples needs a cyclic prefix of {needed}, have {cp}")]
    RolloffTooLong {
        rolloff: usize,
        needed: usize,
        cp: usize,
    },
}

/// Spectrum confinement applied per subband before summation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shaping {
    #[default]
    None,
    /// Filtered OFDM: each subband passes through its own bandpass FIR.
    Filter(FilterSpec),
    /// Windowed OFDM: raised-cosine taper on the edges of every symbol,
    /// `rolloff_fraction` of that symbol's cyclic prefix long.
    Window { rolloff_fraction: f64 },
}

impl Shaping {
    pub fn is_none(&self) -> bool {
        matches!(self, Shaping::None)
    }
}

/// Deterministic random stream for Monte Carlo trial `trial` under `seed`.
///
/// ChaCha8 keyed by the seed with the trial index as stream id; distinct
/// trials never share a stream.
pub fn trial_stream(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Unit-average-power square QAM constellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constellation {
    order: u32,
    side: u32,
    scale: f64,
}

impl Constellation {
    pub fn new(order: u32) -> Result<Self, WaveformError> {
        let (side, energy) = match order {
            4 => (2, 2.0),
            16 => (4, 10.0),
            64 => (8, 42.0),
            _ => return Err(WaveformError::UnsupportedOrder(order)),
        };
        Ok(Self {
            order,
            side,
            scale: 1.0 / f64::sqrt(energy),
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    fn level(&self, i: u32) -> f64 {
        (2.0 * i as f64 - (self.side as f64 - 1.0)) * self.scale
    }

    /// All points, row-major over (in-phase, quadrature) level index.
    pub fn points(&self) -> Vec<Complex64> {
        (0..self.side)
            .flat_map(|i| (0..self.side).map(move |q| (i, q)))
            .map(|(i, q)| Complex64::new(self.level(i), self.level(q)))
            .collect()
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let i = rng.random_range(0..self.side);
        let q = rng.random_range(0..self.side);
        Complex64::new(self.level(i), self.level(q))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoSymbolBlock {
    pub symbols: Vec<Complex64>,
    pub constellation_order: u32,
}

/// Draws `count` i.i.d. uniform constellation points.
pub fn draw_info_symbols<R: Rng + ?Sized>(
    order: u32,
    count: usize,
    rng: &mut R,
) -> Result<InfoSymbolBlock, WaveformError> {
    let c = Constellation::new(order)?;
    if count == 0 {
        return Err(WaveformError::EmptyBlock);
    }
    Ok(InfoSymbolBlock {
        symbols: (0..count).map(|_| c.sample(rng)).collect(),
        constellation_order: order,
    })
}

/// Complex baseband samples with their sampling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Cyclic-prefix length in samples when the signal is a single OFDM symbol.
    pub cyclic_prefix_len: usize,
}

impl SampledSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn envelope(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|z| z.norm())
    }
}

/// Precomputed rendering parameters for one subband on the common clock.
struct SubbandPlan {
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    n: usize,
    /// `sqrt(eta_i / N_i)`.
    scale: f64,
    /// Normalized offset `d_i`, split into bin and residual.
    d: f64,
    bin_offset: usize,
    d_frac: f64,
    /// Symbol period `T_i` in samples.
    period: f64,
    /// Cyclic prefix `T_CP,i` in samples.
    cp: f64,
    /// Number of symbols rendered per frame.
    symbols: usize,
    /// Taper length in samples when windowing.
    rolloff: usize,
}

impl SubbandPlan {
    /// Adds one symbol to `out[m0..m1]`, where `origin` is the (fractional)
    /// sample position at which the phase reference `t - T_CP - u T_i`
    /// vanishes and `seg` spans the full symbol `[start, end)` for windowing.
    fn render(
        &self,
        symbols: &[Complex64],
        origin: f64,
        (m0, m1): (i64, i64),
        seg: (i64, i64),
        buf: &mut [Complex64],
        scratch: &mut [Complex64],
        out: &mut [Complex64],
    ) {
        let k_len = self.fft_len;
        let c_int = origin.floor();
        let c_frac = origin - c_int;
        let c_int = c_int as i64;

        buf.fill(Complex64::new(0.0, 0.0));
        let w = -2.0 * PI * c_frac / k_len as f64;
        for (k, &a) in symbols.iter().enumerate() {
            let bin = (self.bin_offset + k) % k_len;
            let phase = w * (k as f64 + self.d);
            buf[bin] += a * Complex64::from_polar(self.scale, phase);
        }
        self.fft.process_with_scratch(buf, scratch);

        let rot = 2.0 * PI * self.d_frac / k_len as f64;
        let seg_len = (seg.1 - seg.0) as usize;
        let ramp = self.rolloff.min(seg_len / 2);
        for m in m0..m1 {
            let mp = m - c_int;
            let mut v = buf[mp.rem_euclid(k_len as i64) as usize];
            if self.d_frac != 0.0 {
                v *= Complex64::from_polar(1.0, rot * mp as f64);
            }
            if ramp > 0 {
                let p = (m - seg.0) as usize;
                let from_end = seg_len - 1 - p;
                let edge = p.min(from_end);
                if edge < ramp {
                    v *= raised_cosine_ramp(edge, ramp);
                }
            }
            out[m as usize] += v;
        }
    }
}

/// Reusable buffers for [`Synthesizer`]; one per worker thread.
pub struct Scratch {
    buf: Vec<Complex64>,
    fft: Vec<Complex64>,
    symbols: Vec<Complex64>,
    subband: Vec<Complex64>,
    conv: Vec<Complex64>,
}

/// Frame synthesizer for a fixed layout and oversampling factor.
///
/// Cheap to share across threads: all state is read-only after construction.
pub struct Synthesizer {
    layout: SystemLayout,
    grid: SampleGrid,
    constellation: Constellation,
    plans: Vec<SubbandPlan>,
    filters: Option<Vec<shaping::FilterPlan>>,
    max_fft: usize,
    max_scratch: usize,
}

impl Synthesizer {
    pub fn new(layout: &SystemLayout, oversample: usize) -> Result<Self, WaveformError> {
        if oversample < 1 {
            return Err(WaveformError::Oversample);
        }
        let constellation = Constellation::new(layout.qam_order)?;
        let grid = layout.grid(oversample);
        let mut planner = FftPlanner::<f64>::new();
        let mut plans = Vec::with_capacity(layout.num_subbands());
        for sb in &layout.subbands {
            let fft_len = grid.subband_fft_len(sb.spacing_ratio);
            let d = sb.normalized_offset;
            let d_floor = d.floor();
            let symbols = match layout.mode {
                SyncMode::Synchronized => sb.symbols_per_frame.round() as usize,
                SyncMode::Asynchronous => sb.symbols_per_frame.ceil() as usize + 1,
            };
            let cp = sb.cp_fraction * fft_len as f64;
            let rolloff = match layout.shaping {
                Shaping::Window { rolloff_fraction } => (rolloff_fraction * cp).floor() as usize,
                _ => 0,
            };
            plans.push(SubbandPlan {
                fft: planner.plan_fft_inverse(fft_len),
                fft_len,
                n: sb.subcarrier_count,
                scale: (sb.power / sb.subcarrier_count as f64).sqrt(),
                d,
                bin_offset: (d_floor as usize) % fft_len,
                d_frac: d - d_floor,
                period: fft_len as f64 * (1.0 + sb.cp_fraction),
                cp,
                symbols,
                rolloff,
            });
        }
        let filters = match layout.shaping {
            Shaping::Filter(spec) => Some(
                (0..layout.num_subbands())
                    .map(|i| {
                        let f = SubbandFilter::design(layout, i, oversample, &spec);
                        shaping::FilterPlan::new(f, grid.frame_len, &mut planner)
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            _ => None,
        };
        let max_fft = plans.iter().map(|p| p.fft_len).max().unwrap_or(0);
        let max_scratch = plans
            .iter()
            .map(|p| p.fft.get_inplace_scratch_len())
            .chain(filters.iter().flatten().map(|f| f.scratch_len()))
            .max()
            .unwrap_or(0);
        Ok(Self {
            layout: layout.clone(),
            grid,
            constellation,
            plans,
            filters,
            max_fft,
            max_scratch,
        })
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn grid(&self) -> SampleGrid {
        self.grid
    }

    pub fn frame_len(&self) -> usize {
        self.grid.frame_len
    }

    pub fn scratch(&self) -> Scratch {
        let conv = self
            .filters
            .as_ref()
            .map(|f| f[0].fft_len())
            .unwrap_or(0);
        Scratch {
            buf: vec![Complex64::default(); self.max_fft],
            fft: vec![Complex64::default(); self.max_scratch],
            symbols: Vec::new(),
            subband: vec![Complex64::default(); self.grid.frame_len],
            conv: vec![Complex64::default(); conv],
        }
    }

    fn wrap(&self, samples: Vec<Complex64>) -> SampledSignal {
        SampledSignal {
            samples,
            sample_rate_hz: self.grid.sample_rate_hz,
            duration_s: self.layout.frame_duration_s(),
            cyclic_prefix_len: 0,
        }
    }

    /// Renders subband `i`'s contribution to one frame into `out` (added).
    fn render_subband<R: Rng + ?Sized>(
        &self,
        i: usize,
        rng: &mut R,
        scratch: &mut Scratch,
        out: &mut [Complex64],
    ) {
        let plan = &self.plans[i];
        let frame_len = self.grid.frame_len as i64;
        let origin = match self.layout.mode {
            SyncMode::Synchronized => 0.0,
            SyncMode::Asynchronous => -rng.random::<f64>() * plan.period,
        };
        let Scratch {
            buf,
            fft,
            symbols,
            ..
        } = scratch;
        let buf = &mut buf[..plan.fft_len];
        let fft = &mut fft[..plan.fft.get_inplace_scratch_len()];
        for u in 0..plan.symbols {
            symbols.clear();
            symbols.extend((0..plan.n).map(|_| self.constellation.sample(rng)));
            let start = origin + u as f64 * plan.period;
            let seg = (
                first_sample_at(start),
                first_sample_at(start + plan.period),
            );
            // ceil(n_i * P_i) >= round(K1 * mu), so the last synchronized symbol
            // always reaches the end of the frame.
            let m0 = seg.0.max(0);
            let m1 = seg.1.min(frame_len);
            if m0 >= m1 {
                continue;
            }
            plan.render(symbols, start + plan.cp, (m0, m1), seg, buf, fft, out);
        }
    }

    /// Synthesizes one composite frame into `out` (resized to the frame length).
    pub fn frame_into<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        scratch: &mut Scratch,
        out: &mut Vec<Complex64>,
    ) {
        out.clear();
        out.resize(self.grid.frame_len, Complex64::default());
        match &self.filters {
            None => {
                for i in 0..self.plans.len() {
                    self.render_subband(i, rng, scratch, out);
                }
            }
            Some(filters) => {
                let mut part = std::mem::take(&mut scratch.subband);
                for (i, filter) in filters.iter().enumerate() {
                    part.fill(Complex64::default());
                    self.render_subband(i, rng, scratch, &mut part);
                    filter.apply_add(&part, &mut scratch.conv, &mut scratch.fft, out);
                }
                scratch.subband = part;
            }
        }
    }

    pub fn frame<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledSignal {
        let mut scratch = self.scratch();
        let mut out = Vec::new();
        self.frame_into(rng, &mut scratch, &mut out);
        self.wrap(out)
    }

    /// Frame for Monte Carlo trial `trial` under `seed`.
    pub fn trial_frame(&self, seed: u64, trial: u64) -> SampledSignal {
        self.frame(&mut trial_stream(seed, trial))
    }

    /// Per-subband signals of one frame, shaped but not summed.
    ///
    /// Consumes the random stream exactly like [`Synthesizer::frame`], so the
    /// parts of a given stream state sum to that frame.
    pub fn subband_frames<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<SampledSignal> {
        let mut scratch = self.scratch();
        (0..self.plans.len())
            .map(|i| {
                let mut part = vec![Complex64::default(); self.grid.frame_len];
                self.render_subband(i, rng, &mut scratch, &mut part);
                if let Some(filters) = &self.filters {
                    let mut out = vec![Complex64::default(); self.grid.frame_len];
                    filters[i].apply_add(&part, &mut scratch.conv, &mut scratch.fft, &mut out);
                    part = out;
                }
                self.wrap(part)
            })
            .collect()
    }
}

/// Synthesizes one LCM frame at the layout's oversampling factor.
pub fn synthesize_lcm_frame<R: Rng + ?Sized>(
    layout: &SystemLayout,
    rng: &mut R,
) -> Result<SampledSignal, WaveformError> {
    Ok(Synthesizer::new(layout, layout.oversample)?.frame(rng))
}

/// One OFDM symbol of subband `i` (cyclic prefix included), starting at its
/// own time origin.
///
/// Length is `K_i + round(cp_fraction * K_i)` samples with `K_i` the
/// subband IFFT length at oversampling `oversample`.
pub fn synthesize_subband_symbol(
    i: usize,
    layout: &SystemLayout,
    block: &InfoSymbolBlock,
    oversample: usize,
) -> Result<SampledSignal, WaveformError> {
    if oversample < 1 {
        return Err(WaveformError::Oversample);
    }
    let sb = layout.subbands.get(i).ok_or(WaveformError::SubbandIndex(i))?;
    if block.symbols.len() != sb.subcarrier_count {
        return Err(WaveformError::BlockLength {
            subband: i,
            expected: sb.subcarrier_count,
            actual: block.symbols.len(),
        });
    }
    let grid = layout.grid(oversample);
    let fft_len = grid.subband_fft_len(sb.spacing_ratio);
    let cp = sb.cp_fraction * fft_len as f64;
    let cp_len = cp.round() as usize;
    let len = fft_len + cp_len;
    let d = sb.normalized_offset;
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(fft_len);
    let plan = SubbandPlan {
        fft_len,
        n: sb.subcarrier_count,
        scale: (sb.power / sb.subcarrier_count as f64).sqrt(),
        d,
        bin_offset: (d.floor() as usize) % fft_len,
        d_frac: d - d.floor(),
        period: fft_len as f64 * (1.0 + sb.cp_fraction),
        cp,
        symbols: 1,
        rolloff: 0,
        fft,
    };
    let mut buf = vec![Complex64::default(); fft_len];
    let mut scratch = vec![Complex64::default(); plan.fft.get_inplace_scratch_len()];
    let mut out = vec![Complex64::default(); len];
    let span = (0, len as i64);
    plan.render(&block.symbols, cp, span, span, &mut buf, &mut scratch, &mut out);
    Ok(SampledSignal {
        samples: out,
        sample_rate_hz: grid.sample_rate_hz,
        duration_s: len as f64 / grid.sample_rate_hz,
        cyclic_prefix_len: cp_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{derive_layout, SpacingRatio, SystemSpec};

    fn layout(spec: &SystemSpec) -> SystemLayout {
        derive_layout(spec).unwrap()
    }

    /// Direct evaluation of the subband signal at continuous time `t` (seconds
    /// from the symbol start), with no FFT involved.
    fn direct_symbol(l: &SystemLayout, i: usize, a: &[Complex64], t: f64) -> Complex64 {
        let sb = &l.subbands[i];
        let f_i = l.spacing_hz(i);
        let t_cp = sb.cp_fraction / f_i;
        let scale = (sb.power / sb.subcarrier_count as f64).sqrt();
        a.iter()
            .enumerate()
            .map(|(k, &ak)| {
                let f = k as f64 * f_i + l.offset_hz(i);
                ak * Complex64::from_polar(scale, 2.0 * PI * f * (t - t_cp))
            })
            .sum()
    }

    #[test]
    fn qpsk_points_have_unit_modulus() {
        let c = Constellation::new(4).unwrap();
        for p in c.points() {
            assert!((p.norm_sqr() - 1.0).abs() < 1e-15);
            assert!((p.re.abs() - 0.5f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn constellations_have_unit_average_power() {
        for order in [4, 16, 64] {
            let pts = Constellation::new(order).unwrap().points();
            assert_eq!(pts.len(), order as usize);
            let p = pts.iter().map(|z| z.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((p - 1.0).abs() < 1e-14, "order {order}: {p}");
        }
    }

    #[test]
    fn qam16_sample_power_near_one() {
        let mut rng = trial_stream(11, 0);
        let block = draw_info_symbols(16, 1_000_000, &mut rng).unwrap();
        let p = block.symbols.iter().map(|z| z.norm_sqr()).sum::<f64>() / 1e6;
        assert!((p - 1.0).abs() < 0.005, "{p}");
        let cross = block.symbols.iter().map(|z| z.re * z.im).sum::<f64>() / 1e6;
        assert!(cross.abs() < 0.005, "{cross}");
    }

    #[test]
    fn draw_is_reproducible_and_checks_order() {
        let a = draw_info_symbols(64, 100, &mut trial_stream(3, 5)).unwrap();
        let b = draw_info_symbols(64, 100, &mut trial_stream(3, 5)).unwrap();
        assert_eq!(a, b);
        let c = draw_info_symbols(64, 100, &mut trial_stream(3, 6)).unwrap();
        assert_ne!(a, c);
        assert_eq!(
            draw_info_symbols(8, 4, &mut trial_stream(0, 0)),
            Err(WaveformError::UnsupportedOrder(8))
        );
        assert_eq!(
            draw_info_symbols(16, 0, &mut trial_stream(0, 0)),
            Err(WaveformError::EmptyBlock)
        );
    }

    #[test]
    fn single_tone_has_constant_modulus() {
        let l = layout(&SystemSpec::synchronized(&[(1, 1)], 0.0));
        let block = InfoSymbolBlock {
            symbols: vec![Complex64::new(1.0, 0.0)],
            constellation_order: 4,
        };
        let s = synthesize_subband_symbol(0, &l, &block, 8).unwrap();
        for z in &s.samples {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coherent_peak_at_cp_origin() {
        // A quarter-symbol CP puts the useful-part origin on a sample.
        let mut spec = SystemSpec::synchronized(&[(1, 4)], 0.0);
        spec.subbands[0].numerology.cp_fraction = 0.25;
        let l = layout(&spec);
        let block = InfoSymbolBlock {
            symbols: vec![Complex64::new(1.0, 0.0); 4],
            constellation_order: 4,
        };
        let s = synthesize_subband_symbol(0, &l, &block, 8).unwrap();
        let peak = s.envelope().fold(0.0, f64::max);
        assert!((peak - 2.0).abs() < 1e-12, "{peak}");
        assert!((s.samples[s.cyclic_prefix_len].norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cyclic_prefix_copies_the_tail() {
        let spec = SystemSpec::synchronized(&[(1, 24), (2, 12)], 4.0);
        let l = layout(&spec);
        for i in 0..2 {
            let n = l.subbands[i].subcarrier_count;
            let block = draw_info_symbols(16, n, &mut trial_stream(1, i as u64)).unwrap();
            let s = synthesize_subband_symbol(i, &l, &block, 4).unwrap();
            let cp = s.cyclic_prefix_len;
            let k = s.len() - cp;
            assert_eq!(cp, (0.07 * k as f64).round() as usize);
            assert!(cp > 0);
            assert_eq!(&s.samples[..cp], &s.samples[k..]);
        }
    }

    #[test]
    fn symbol_matches_direct_evaluation() {
        // Guard 3 gives a fractional normalized offset (d_2 = 27 / 2).
        let spec = SystemSpec::synchronized(&[(1, 24), (2, 6)], 3.0);
        let l = layout(&spec);
        assert_eq!(l.subbands[1].normalized_offset, 13.5);
        for i in 0..2 {
            let n = l.subbands[i].subcarrier_count;
            let block = draw_info_symbols(16, n, &mut trial_stream(2, i as u64)).unwrap();
            let s = synthesize_subband_symbol(i, &l, &block, 3).unwrap();
            for (m, z) in s.samples.iter().enumerate() {
                let want = direct_symbol(&l, i, &block.symbols, m as f64 / s.sample_rate_hz);
                assert!((z - want).norm() < 1e-10, "subband {i} sample {m}");
            }
        }
    }

    #[test]
    fn frame_matches_direct_evaluation() {
        let spec = SystemSpec::synchronized(&[(1, 16), (2, 6)], 3.0);
        let l = layout(&spec);
        let synth = Synthesizer::new(&l, 2).unwrap();
        let frame = synth.trial_frame(9, 4);

        // Replay the same draws: subband by subband, symbol by symbol.
        let mut rng = trial_stream(9, 4);
        let c = Constellation::new(16).unwrap();
        let mut want = vec![Complex64::default(); frame.len()];
        let t0 = l.frame_duration_s();
        for i in 0..2 {
            let sb = &l.subbands[i];
            let n_sym = sb.symbols_per_frame.round() as usize;
            let t_i = t0 / sb.symbols_per_frame;
            for u in 0..n_sym {
                let a: Vec<_> = (0..sb.subcarrier_count).map(|_| c.sample(&mut rng)).collect();
                for (m, w) in want.iter_mut().enumerate() {
                    let t = m as f64 / frame.sample_rate_hz;
                    let owner = ((t / t_i) as usize).min(n_sym - 1);
                    if owner == u {
                        *w += direct_symbol(&l, i, &a, t - u as f64 * t_i);
                    }
                }
            }
        }
        for (m, (z, w)) in frame.samples.iter().zip(&want).enumerate() {
            assert!((z - w).norm() < 1e-10, "sample {m}: {z} vs {w}");
        }
    }

    #[test]
    fn symbol_errors() {
        let l = layout(&SystemSpec::synchronized(&[(1, 8)], 0.0));
        let block = InfoSymbolBlock {
            symbols: vec![Complex64::new(1.0, 0.0); 7],
            constellation_order: 4,
        };
        assert!(matches!(
            synthesize_subband_symbol(0, &l, &block, 1),
            Err(WaveformError::BlockLength { expected: 8, actual: 7, .. })
        ));
        let block = InfoSymbolBlock {
            symbols: vec![Complex64::new(1.0, 0.0); 8],
            constellation_order: 4,
        };
        assert_eq!(
            synthesize_subband_symbol(0, &l, &block, 0),
            Err(WaveformError::Oversample)
        );
    }

    #[test]
    fn single_band_frame_is_one_symbol() {
        let l = layout(&SystemSpec::synchronized(&[(1, 32)], 0.0));
        let synth = Synthesizer::new(&l, 4).unwrap();
        let frame = synth.frame(&mut trial_stream(5, 0));
        let block = draw_info_symbols(16, 32, &mut trial_stream(5, 0)).unwrap();
        let sym = synthesize_subband_symbol(0, &l, &block, 4).unwrap();
        assert_eq!(frame.samples, sym.samples);
    }

    #[test]
    fn second_numerology_contributes_two_symbols() {
        let spec = SystemSpec::synchronized(&[(1, 20), (2, 10)], 2.0);
        let l = layout(&spec);
        let synth = Synthesizer::new(&l, 4).unwrap();
        assert_eq!(synth.plans[1].symbols, 2);
        let parts = synth.subband_frames(&mut trial_stream(1, 1));
        // Subband 2 is cyclic within each of its two symbols: each half holds
        // its own CP copy.
        let k2 = synth.plans[1].fft_len;
        let cp2 = synth.plans[1].cp;
        let p2 = synth.plans[1].period;
        for u in 0..2 {
            let start = first_sample_at(u as f64 * p2) as usize;
            let cp_end = first_sample_at(u as f64 * p2 + cp2) as usize;
            for m in start..cp_end {
                let a = parts[1].samples[m];
                let b = parts[1].samples[m + k2];
                assert!((a - b).norm() < 1e-12);
            }
        }
        // Different symbols are different draws.
        let half = first_sample_at(p2) as usize;
        assert_ne!(parts[1].samples[5], parts[1].samples[half + 5]);
    }

    #[test]
    fn subband_parts_sum_to_frame() {
        let spec = SystemSpec::synchronized(&[(1, 40), (2, 20), (4, 8)], 5.0);
        let l = layout(&spec);
        let synth = Synthesizer::new(&l, 2).unwrap();
        let frame = synth.trial_frame(4, 2);
        let parts = synth.subband_frames(&mut trial_stream(4, 2));
        for m in 0..frame.len() {
            let s: Complex64 = parts.iter().map(|p| p.samples[m]).sum();
            assert!((s - frame.samples[m]).norm() < 1e-12);
        }
    }

    #[test]
    fn oversampled_grid_contains_the_coarse_grid() {
        let mut spec = SystemSpec::synchronized(&[(1, 30), (1, 20), (1, 12)], 4.0);
        spec.mode = SyncMode::Asynchronous;
        spec.subbands[1].numerology.spacing_ratio = SpacingRatio::new(5, 4);
        spec.subbands[2].numerology.spacing_ratio = SpacingRatio::new(5, 3);
        spec.subbands[2].power = 1.0 - 2.0 / 3.0;
        let l = layout(&spec);
        let coarse = Synthesizer::new(&l, 1).unwrap().trial_frame(8, 1);
        let fine = Synthesizer::new(&l, 8).unwrap().trial_frame(8, 1);
        for (m, z) in coarse.samples.iter().enumerate() {
            assert!((z - fine.samples[8 * m]).norm() < 1e-10, "sample {m}");
        }
    }

    #[test]
    fn asynchronous_frames_differ_per_trial_offset() {
        let mut spec = SystemSpec::synchronized(&[(1, 16), (1, 12)], 2.0);
        spec.mode = SyncMode::Asynchronous;
        spec.subbands[1].numerology.spacing_ratio = SpacingRatio::new(5, 4);
        let l = layout(&spec);
        let synth = Synthesizer::new(&l, 2).unwrap();
        assert_eq!(synth.plans[1].symbols, 3);
        let a = synth.trial_frame(1, 0);
        let b = synth.trial_frame(1, 0);
        assert_eq!(a, b);
        assert_ne!(a, synth.trial_frame(1, 1));
    }

    #[test]
    fn ensemble_power_is_normalized() {
        let spec = SystemSpec::synchronized(&[(1, 60), (2, 30)], 20.0);
        let l = layout(&spec);
        let synth = Synthesizer::new(&l, 2).unwrap();
        let mut scratch = synth.scratch();
        let mut buf = Vec::new();
        let mut total = 0.0;
        let trials = 10_000;
        for t in 0..trials {
            synth.frame_into(&mut trial_stream(21, t), &mut scratch, &mut buf);
            total += buf.iter().map(|z| z.norm_sqr()).sum::<f64>() / buf.len() as f64;
        }
        let p = total / trials as f64;
        assert!((p - 1.0).abs() < 0.01, "{p}");
    }
}
