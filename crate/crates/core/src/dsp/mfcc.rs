use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wav::{resample_linear, AudioClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Hamming,
}

/// MFCC front-end parameters. Inputs at other rates are resampled to `sample_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_hop_ms: f64,
    pub pre_emphasis: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    pub n_coeffs: usize,
    pub log_floor: f64,
    pub window: WindowKind,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length_ms: 25.0,
            frame_hop_ms: 10.0,
            pre_emphasis: 0.97,
            n_fft: 512,
            n_mels: 26,
            f_min: 20.0,
            f_max: None,
            n_coeffs: 20,
            log_floor: 1e-10,
            window: WindowKind::Hann,
        }
    }
}

impl MfccConfig {
    pub fn frame_length_samples(&self) -> usize {
        (self.frame_length_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.frame_hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// Number of frames produced for a clip of `num_samples` at the target rate.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        let len = self.frame_length_samples();
        if num_samples < len {
            0
        } else {
            (num_samples - len) / self.hop_samples() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("mfcc: {msg}")));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if !(self.frame_length_ms > 0.0) || !(self.frame_hop_ms > 0.0) {
            return bad("frame length and hop must be positive");
        }
        if self.hop_samples() == 0 || self.frame_length_samples() == 0 {
            return bad("frame length and hop must span at least one sample");
        }
        if self.n_coeffs == 0 || self.n_mels == 0 {
            return bad("n_coeffs and n_mels must be positive");
        }
        if self.n_coeffs > self.n_mels {
            return bad("n_coeffs must not exceed n_mels");
        }
        if self.n_fft < self.frame_length_samples() {
            return bad("n_fft must be at least the frame length");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let f_max = self.f_max.unwrap_or(nyquist);
        if !(self.f_min >= 0.0 && self.f_min < f_max && f_max <= nyquist) {
            return bad("filterbank edges must satisfy 0 <= f_min < f_max <= nyquist");
        }
        Ok(())
    }
}

/// Frames x coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix {
    pub frames: usize,
    pub n_coeffs: usize,
    pub values: Vec<f64>,
    pub frame_length_ms: f64,
    pub frame_hop_ms: f64,
}

impl MfccMatrix {
    pub fn new(
        frames: usize,
        n_coeffs: usize,
        values: Vec<f64>,
        frame_length_ms: f64,
        frame_hop_ms: f64,
    ) -> Result<Self> {
        if values.len() != frames * n_coeffs {
            return Err(Error::Shape {
                expected: format!("{frames}x{n_coeffs} values"),
                got: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite MFCC value".into()));
        }
        Ok(Self {
            frames,
            n_coeffs,
            values,
            frame_length_ms,
            frame_hop_ms,
        })
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_coeffs..(frame + 1) * self.n_coeffs]
    }

    pub fn get(&self, frame: usize, coeff: usize) -> f64 {
        self.values[frame * self.n_coeffs + coeff]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_coeffs];
        for f in 0..self.frames {
            for (m, v) in means.iter_mut().zip(self.row(f)) {
                *m += v;
            }
        }
        let n = self.frames.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Population variance per coefficient.
    pub fn column_variances(&self) -> Vec<f64> {
        let means = self.column_means();
        let mut vars = vec![0.0; self.n_coeffs];
        for f in 0..self.frames {
            for ((acc, v), m) in vars.iter_mut().zip(self.row(f)).zip(&means) {
                *acc += (v - m) * (v - m);
            }
        }
        let n = self.frames.max(1) as f64;
        vars.iter_mut().for_each(|v| *v /= n);
        vars
    }

    /// Round every value to single precision, matching the on-disk cache.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one config.
pub struct MfccExtractor {
    config: MfccConfig,
    window: Vec<f64>,
    /// n_mels rows of (first_bin, weights)
    filters: Vec<(usize, Vec<f64>)>,
    /// n_coeffs x n_mels orthonormal DCT-II basis
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Result<Self> {
        config.validate()?;
        let len = config.frame_length_samples();
        let window = (0..len)
            .map(|n| {
                let denom = (len.max(2) - 1) as f64;
                let c = (2.0 * PI * n as f64 / denom).cos();
                match config.window {
                    WindowKind::Hann => 0.5 - 0.5 * c,
                    WindowKind::Hamming => 0.54 - 0.46 * c,
                }
            })
            .collect();

        let sr = config.sample_rate as f64;
        let f_max = config.f_max.unwrap_or(sr / 2.0);
        let mel_lo = hz_to_mel(config.f_min);
        let mel_hi = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let n_bins = config.n_fft / 2 + 1;
        let bin_hz = sr / config.n_fft as f64;
        let filters = (0..config.n_mels)
            .map(|m| {
                let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - lo) / (centre - lo)).min((hi - f) / (hi - centre));
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |&(k, _)| k);
                (first, weights.into_iter().map(|(_, w)| w).collect())
            })
            .collect();

        let n_mels = config.n_mels;
        let mut dct = Vec::with_capacity(config.n_coeffs * n_mels);
        for k in 0..config.n_coeffs {
            let scale = if k == 0 {
                (1.0 / n_mels as f64).sqrt()
            } else {
                (2.0 / n_mels as f64).sqrt()
            };
            for n in 0..n_mels {
                dct.push(scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_mels) as f64).cos());
            }
        }

        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(Self {
            config,
            window,
            filters,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MfccMatrix> {
        let cfg = &self.config;
        let resampled;
        let clip = if clip.sample_rate != cfg.sample_rate {
            resampled = resample_linear(clip, cfg.sample_rate);
            &resampled
        } else {
            clip
        };
        let len = cfg.frame_length_samples();
        let hop = cfg.hop_samples();
        let x = &clip.samples;
        if x.len() < len {
            return Err(Error::ClipTooShort {
                samples: x.len(),
                needed: len,
            });
        }

        let emphasized: Vec<f64> = std::iter::once(x[0])
            .chain(x.windows(2).map(|w| w[1] - cfg.pre_emphasis * w[0]))
            .collect();

        let frames = cfg.frame_count(x.len());
        let n_bins = cfg.n_fft / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; cfg.n_mels];
        let mut values = Vec::with_capacity(frames * cfg.n_coeffs);

        for f in 0..frames {
            let start = f * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < len {
                    Complex::new(emphasized[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (out, (first, weights)) in log_mel.iter_mut().zip(&self.filters) {
                let energy: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                *out = energy.max(cfg.log_floor).ln();
            }
            for k in 0..cfg.n_coeffs {
                let basis = &self.dct[k * cfg.n_mels..(k + 1) * cfg.n_mels];
                values.push(basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum());
            }
        }
        MfccMatrix::new(
            frames,
            cfg.n_coeffs,
            values,
            cfg.frame_length_ms,
            cfg.frame_hop_ms,
        )
    }
}

/// Pre-emphasis, Hann framing, power spectrum, mel filterbank, log and DCT-II.
pub fn compute_mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<MfccMatrix> {
    MfccExtractor::new(config.clone())?.compute(clip)
}

/// Per-coefficient mean removal and unit-variance scaling over frames.
/// Zero-variance columns are only centred.
pub fn mean_variance_normalize(m: &MfccMatrix) -> Result<MfccMatrix> {
    if m.frames < 2 {
        return Err(Error::Data(format!(
            "mean/variance normalisation needs at least 2 frames, got {}",
            m.frames
        )));
    }
    let means = m.column_means();
    let stds: Vec<f64> = m.column_variances().iter().map(|v| v.sqrt()).collect();
    let mut values = m.values.clone();
    for row in values.chunks_exact_mut(m.n_coeffs) {
        for ((v, mean), std) in row.iter_mut().zip(&means).zip(&stds) {
            *v -= mean;
            if *std > 0.0 {
                *v /= std;
            }
        }
    }
    Ok(MfccMatrix { values, ..m.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, amp: f64) -> AudioClip {
        let sr = 16_000u32;
        let n = (secs * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect();
        AudioClip::new(samples, sr, "sine").unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let clip = sine(440.0, 1.0, 0.5);
        let m = compute_mfcc(&clip, &MfccConfig::default()).unwrap();
        assert_eq!(m.frames, 98);
        assert_eq!(m.n_coeffs, 20);
    }

    #[test]
    fn silence_is_constant_per_coefficient() {
        let clip = AudioClip::new(vec![0.0; 8000], 16_000, "zeros").unwrap();
        let cfg = MfccConfig::default();
        let m = compute_mfcc(&clip, &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        let c0 = floor * (cfg.n_mels as f64).sqrt();
        for f in 0..m.frames {
            assert!((m.get(f, 0) - c0).abs() < 1e-9);
            for k in 1..m.n_coeffs {
                assert!(m.get(f, k).abs() < 1e-9);
            }
        }
        assert!(m.column_variances().iter().all(|&v| v < 1e-18));
    }

    #[test]
    fn distinct_tones_separate() {
        let cfg = MfccConfig::default();
        let a = compute_mfcc(&sine(440.0, 0.5, 0.5), &cfg).unwrap().column_means();
        let b = compute_mfcc(&sine(3000.0, 0.5, 0.5), &cfg).unwrap().column_means();
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 1.0, "distance {dist}");
    }

    #[test]
    fn amplitude_only_moves_c0() {
        let cfg = MfccConfig::default();
        // broadband so no filter sits on the log floor
        let mut state = 12345u64;
        let samples = (0..4800)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.6
            })
            .collect();
        let clip = AudioClip::new(samples, 16_000, "noise").unwrap();
        let a = compute_mfcc(&clip, &cfg).unwrap();
        let b = compute_mfcc(&clip.scaled(0.25), &cfg).unwrap();
        let shift = 2.0 * 0.25f64.ln() * (cfg.n_mels as f64).sqrt();
        for f in 0..a.frames {
            assert!((b.get(f, 0) - a.get(f, 0) - shift).abs() < 1e-6);
            for k in 1..a.n_coeffs {
                assert!((a.get(f, k) - b.get(f, k)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn short_clip_and_bad_config_rejected() {
        let clip = AudioClip::new(vec![0.1; 100], 16_000, "short").unwrap();
        assert!(matches!(
            compute_mfcc(&clip, &MfccConfig::default()),
            Err(Error::ClipTooShort { samples: 100, needed: 400 })
        ));
        let cfg = MfccConfig {
            n_coeffs: 30,
            ..MfccConfig::default()
        };
        assert!(matches!(compute_mfcc(&sine(100.0, 0.1, 0.1), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn resamples_foreign_rates() {
        let sr = 8000u32;
        let samples = (0..8000).map(|i| (i as f64 * 0.3).sin() * 0.3).collect();
        let clip = AudioClip::new(samples, sr, "8k").unwrap();
        let m = compute_mfcc(&clip, &MfccConfig::default()).unwrap();
        // 8000 samples at 8 kHz become 16000 at 16 kHz.
        assert_eq!(m.frames, 98);
    }

    #[test]
    fn mvn_hand_case() {
        let m = MfccMatrix::new(2, 1, vec![1.0, 3.0], 25.0, 10.0).unwrap();
        let n = mean_variance_normalize(&m).unwrap();
        assert_eq!(n.values, vec![-1.0, 1.0]);
    }

    #[test]
    fn mvn_constant_column_centres_only() {
        let m = MfccMatrix::new(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 6.0], 25.0, 10.0).unwrap();
        let n = mean_variance_normalize(&m).unwrap();
        for f in 0..3 {
            assert_eq!(n.get(f, 0), 0.0);
        }
        let means = n.column_means();
        assert!(means.iter().all(|m| m.abs() < 1e-9));
        assert!((n.column_variances()[1] - 1.0).abs() < 1e-12);
        let one = MfccMatrix::new(1, 2, vec![1.0, 2.0], 25.0, 10.0).unwrap();
        assert!(mean_variance_normalize(&one).is_err());
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 20.0, 700.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }
}
