//! Spectrum confinement: per-subband windowed-sinc filtering (F-OFDM) and
//! raised-cosine symbol-edge tapering (W-OFDM).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{SampledSignal, WaveformError};
use crate::config::SystemLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterWindow {
    Rectangular,
    #[default]
    Hann,
    Hamming,
    Blackman,
}

impl FilterWindow {
    /// Window of `len` points (symmetric).
    pub fn coefficients(&self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let x = 2.0 * PI * n as f64 / denom;
                match self {
                    FilterWindow::Rectangular => 1.0,
                    FilterWindow::Hann => 0.5 - 0.5 * x.cos(),
                    FilterWindow::Hamming => 0.54 - 0.46 * x.cos(),
                    FilterWindow::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Filter order; the filter has `order + 1` taps.
    #[serde(default = "default_order")]
    pub order: usize,
    /// Passband width beyond the subband bandwidth, in that subband's spacings.
    #[serde(default = "default_transition")]
    pub transition_spacings: f64,
    #[serde(default)]
    pub window: FilterWindow,
}

fn default_order() -> usize {
    512
}

fn default_transition() -> f64 {
    2.0
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: default_order(),
            transition_spacings: default_transition(),
            window: FilterWindow::default(),
        }
    }
}

/// Complex bandpass FIR centered on one subband.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandFilter {
    pub taps: Vec<Complex64>,
    /// Half-width of the passband in cycles per sample.
    pub cutoff: f64,
    /// Passband center in cycles per sample.
    pub center: f64,
}

impl SubbandFilter {
    /// Windowed-sinc lowpass of half-width `(B_i + t * f_i) / 2`, normalized to
    /// unit DC gain and modulated to the subband center.
    pub fn design(layout: &SystemLayout, i: usize, oversample: usize, spec: &FilterSpec) -> Self {
        let sb = &layout.subbands[i];
        let fs = layout.grid(oversample).fft_len as f64;
        let cutoff = 0.5 * (sb.bandwidth + spec.transition_spacings * sb.spacing()) / fs;
        let center = sb.center() / fs;
        Self::bandpass(spec.order, cutoff, center, spec.window)
    }

    pub fn bandpass(order: usize, cutoff: f64, center: f64, window: FilterWindow) -> Self {
        let len = order + 1;
        let half = order as f64 / 2.0;
        let win = window.coefficients(len);
        let proto: Vec<f64> = win
            .iter()
            .enumerate()
            .map(|(n, w)| {
                let x = n as f64 - half;
                let s = if x == 0.0 {
                    2.0 * cutoff
                } else {
                    (2.0 * PI * cutoff * x).sin() / (PI * x)
                };
                w * s
            })
            .collect();
        let gain: f64 = proto.iter().sum();
        let taps = proto
            .iter()
            .enumerate()
            .map(|(n, h)| Complex64::from_polar(h / gain, 2.0 * PI * center * (n as f64 - half)))
            .collect();
        Self {
            taps,
            cutoff,
            center,
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Frequency response at `freq` cycles per sample.
    pub fn response(&self, freq: f64) -> Complex64 {
        let half = self.delay() as f64;
        self.taps
            .iter()
            .enumerate()
            .map(|(n, h)| h * Complex64::from_polar(1.0, -2.0 * PI * freq * (n as f64 - half)))
            .sum()
    }
}

/// Linear convolution with `filter`, delay-compensated and cropped to the
/// input window, so the output covers the same `T0` as the input.
pub fn apply_subband_filter(
    signal: &SampledSignal,
    filter: &SubbandFilter,
) -> Result<SampledSignal, WaveformError> {
    let len = signal.samples.len();
    if filter.len() >= len {
        return Err(WaveformError::FilterTooLong {
            taps: filter.len(),
            frame: len,
        });
    }
    let delay = filter.delay() as i64;
    let x = &signal.samples;
    let samples = (0..len as i64)
        .map(|m| {
            filter
                .taps
                .iter()
                .enumerate()
                .filter_map(|(n, h)| {
                    let j = m + delay - n as i64;
                    (0..len as i64).contains(&j).then(|| h * x[j as usize])
                })
                .sum()
        })
        .collect();
    Ok(SampledSignal {
        samples,
        ..signal.clone()
    })
}

/// FFT-based equivalent of [`apply_subband_filter`] for repeated use on frames
/// of one length.
pub(crate) struct FilterPlan {
    spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    delay: usize,
    frame_len: usize,
}

impl FilterPlan {
    pub(crate) fn new(
        filter: SubbandFilter,
        frame_len: usize,
        planner: &mut FftPlanner<f64>,
    ) -> Result<Self, WaveformError> {
        if filter.len() >= frame_len {
            return Err(WaveformError::FilterTooLong {
                taps: filter.len(),
                frame: frame_len,
            });
        }
        let n = (frame_len + filter.len() - 1).next_power_of_two();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spectrum = vec![Complex64::default(); n];
        spectrum[..filter.len()].copy_from_slice(&filter.taps);
        forward.process(&mut spectrum);
        let norm = 1.0 / n as f64;
        spectrum.iter_mut().for_each(|h| *h *= norm);
        Ok(Self {
            spectrum,
            forward,
            inverse,
            delay: filter.delay(),
            frame_len,
        })
    }

    pub(crate) fn fft_len(&self) -> usize {
        self.spectrum.len()
    }

    pub(crate) fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    /// Adds the filtered `input` to `out`.
    pub(crate) fn apply_add(
        &self,
        input: &[Complex64],
        buf: &mut [Complex64],
        scratch: &mut [Complex64],
        out: &mut [Complex64],
    ) {
        let buf = &mut buf[..self.spectrum.len()];
        buf.fill(Complex64::default());
        buf[..self.frame_len].copy_from_slice(&input[..self.frame_len]);
        let scratch = &mut scratch[..self.scratch_len()];
        self.forward.process_with_scratch(buf, scratch);
        buf.iter_mut().zip(&self.spectrum).for_each(|(x, h)| *x *= h);
        self.inverse.process_with_scratch(buf, scratch);
        for (o, y) in out.iter_mut().zip(&buf[self.delay..self.delay + self.frame_len]) {
            *o += y;
        }
    }
}

/// Raised-cosine weight of the sample `edge` samples in from a symbol edge,
/// for a taper `rolloff` samples long. Always in `(0, 1)`.
pub fn raised_cosine_ramp(edge: usize, rolloff: usize) -> f64 {
    0.5 * (1.0 - (PI * (edge as f64 + 0.5) / rolloff as f64).cos())
}

/// Tapers the first and last `rolloff` samples of one OFDM symbol.
pub fn apply_edge_window(
    symbol: &SampledSignal,
    rolloff: usize,
) -> Result<SampledSignal, WaveformError> {
    if 2 * rolloff > symbol.cyclic_prefix_len {
        return Err(WaveformError::RolloffTooLong {
            rolloff,
            needed: 2 * rolloff,
            cp: symbol.cyclic_prefix_len,
        });
    }
    let mut out = symbol.clone();
    let len = out.samples.len();
    for edge in 0..rolloff {
        let w = raised_cosine_ramp(edge, rolloff);
        out.samples[edge] *= w;
        out.samples[len - 1 - edge] *= w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{derive_layout, SystemSpec};
    use crate::waveform::{
        draw_info_symbols, synthesize_subband_symbol, trial_stream, Shaping, Synthesizer,
    };

    fn signal(samples: Vec<Complex64>) -> SampledSignal {
        SampledSignal {
            samples,
            sample_rate_hz: 1.0,
            duration_s: 1.0,
            cyclic_prefix_len: 0,
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let f = SubbandFilter::bandpass(32, 0.1, 0.2, FilterWindow::Hann);
        let y = apply_subband_filter(&signal(vec![Complex64::default(); 100]), &f).unwrap();
        assert!(y.samples.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn impulse_returns_taps_with_passband_energy() {
        // NC-OFDM subband at J = 2: passband (200 + 2) / 1024 of the band.
        let spec = SystemSpec::synchronized(&[(1, 200), (1, 200)], 112.0);
        let layout = derive_layout(&spec).unwrap();
        let f = SubbandFilter::design(&layout, 1, 2, &FilterSpec::default());
        let len = 1100;
        let mut x = vec![Complex64::default(); len];
        x[f.delay()] = Complex64::new(1.0, 0.0);
        let y = apply_subband_filter(&signal(x), &f).unwrap();
        for (n, h) in f.taps.iter().enumerate() {
            assert!((y.samples[n] - h).norm() < 1e-15);
        }
        // Parseval: a unit-gain ideal bandpass keeps 2 * cutoff of white energy.
        let energy: f64 = f.taps.iter().map(|h| h.norm_sqr()).sum();
        let ideal = 2.0 * f.cutoff;
        assert!((energy / ideal - 1.0).abs() < 0.02, "{energy} vs {ideal}");
    }

    #[test]
    fn centered_tone_passes_with_unit_gain() {
        let f = SubbandFilter::bandpass(512, 0.05, 0.3, FilterWindow::Hann);
        assert!((f.response(0.3) - 1.0).norm() < 1e-12);
        let len = 2000;
        let x: Vec<_> = (0..len)
            .map(|m| Complex64::from_polar(1.0, 2.0 * PI * 0.3 * m as f64))
            .collect();
        let y = apply_subband_filter(&signal(x.clone()), &f).unwrap();
        for (a, b) in y.samples[600..1400].iter().zip(&x[600..1400]) {
            assert!((a.norm() - 1.0).abs() < 0.01);
            assert!((a - b).norm() < 0.01);
        }
    }

    #[test]
    fn filter_longer_than_frame_is_rejected() {
        let f = SubbandFilter::bandpass(512, 0.1, 0.0, FilterWindow::Hann);
        let err = apply_subband_filter(&signal(vec![Complex64::default(); 400]), &f).unwrap_err();
        assert_eq!(err, WaveformError::FilterTooLong { taps: 513, frame: 400 });
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let f = SubbandFilter::bandpass(64, 0.08, 0.15, FilterWindow::Blackman);
        let mut rng = trial_stream(1, 1);
        let x = draw_info_symbols(16, 300, &mut rng).unwrap().symbols;
        let direct = apply_subband_filter(&signal(x.clone()), &f).unwrap();
        let mut planner = FftPlanner::new();
        let plan = FilterPlan::new(f, x.len(), &mut planner).unwrap();
        let mut buf = vec![Complex64::default(); plan.fft_len()];
        let mut scratch = vec![Complex64::default(); plan.scratch_len()];
        let mut out = vec![Complex64::default(); x.len()];
        plan.apply_add(&x, &mut buf, &mut scratch, &mut out);
        for (a, b) in out.iter().zip(&direct.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn filtered_frames_sum_filtered_parts() {
        let mut spec = SystemSpec::synchronized(&[(1, 60), (2, 30)], 20.0);
        spec.shaping = Shaping::Filter(FilterSpec {
            order: 128,
            ..FilterSpec::default()
        });
        let layout = derive_layout(&spec).unwrap();
        let synth = Synthesizer::new(&layout, 4).unwrap();
        let frame = synth.trial_frame(3, 3);
        let parts = synth.subband_frames(&mut trial_stream(3, 3));
        for m in 0..frame.len() {
            let s: Complex64 = parts.iter().map(|p| p.samples[m]).sum();
            assert!((s - frame.samples[m]).norm() < 1e-12);
        }
        // Filtering keeps nearly all in-band power.
        let unfiltered = {
            let mut plain = layout.clone();
            plain.shaping = Shaping::None;
            Synthesizer::new(&plain, 4).unwrap().trial_frame(3, 3)
        };
        let ratio = frame.mean_power() / unfiltered.mean_power();
        assert!(ratio > 0.9 && ratio < 1.05, "{ratio}");
    }

    #[test]
    fn edge_window_behaviour() {
        let spec = SystemSpec::synchronized(&[(1, 64)], 0.0);
        let layout = derive_layout(&spec).unwrap();
        let block = draw_info_symbols(16, 64, &mut trial_stream(2, 0)).unwrap();
        let sym = synthesize_subband_symbol(0, &layout, &block, 4).unwrap();
        let cp = sym.cyclic_prefix_len;

        assert_eq!(apply_edge_window(&sym, 0).unwrap(), sym);

        let r = cp / 2;
        let w = apply_edge_window(&sym, r).unwrap();
        let len = sym.len();
        assert_eq!(&w.samples[r..len - r], &sym.samples[r..len - r]);
        assert!(w.mean_power() <= sym.mean_power());
        assert!(w.samples[0].norm() < sym.samples[0].norm());

        assert!(matches!(
            apply_edge_window(&sym, r + 1),
            Err(WaveformError::RolloffTooLong { .. })
        ));
    }

    #[test]
    fn windowed_frames_touch_only_symbol_edges() {
        let mut spec = SystemSpec::synchronized(&[(1, 40), (2, 20)], 4.0);
        let plain = derive_layout(&spec).unwrap();
        spec.shaping = Shaping::Window {
            rolloff_fraction: 0.5,
        };
        let windowed = derive_layout(&spec).unwrap();
        let a = Synthesizer::new(&plain, 4).unwrap().trial_frame(6, 0);
        let b = Synthesizer::new(&windowed, 4).unwrap().trial_frame(6, 0);
        assert_eq!(a.len(), b.len());
        let changed = a
            .samples
            .iter()
            .zip(&b.samples)
            .filter(|(x, y)| x != y)
            .count();
        assert!(changed > 0 && changed < a.len() / 5, "{changed}");
        assert!(b.mean_power() <= a.mean_power());
    }

    #[test]
    fn ramp_is_bounded_and_monotone() {
        let r = 10;
        let w: Vec<f64> = (0..r).map(|e| raised_cosine_ramp(e, r)).collect();
        assert!(w.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        // Symmetric about the midpoint of the ramp.
        for e in 0..r {
            assert!((w[e] + w[r - 1 - e] - 1.0).abs() < 1e-12);
        }
    }
}
