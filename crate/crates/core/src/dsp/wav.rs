use std::path::Path;

use crate::error::{Error, Result};

/// Mono PCM waveform. Samples are nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::Data(format!("non-finite sample {bad}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Multiply every sample by `gain`, clamping to `[-1, 1]`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| (s * gain).clamp(-1.0, 1.0))
                .collect(),
            sample_rate: self.sample_rate,
            source_id: self.source_id.clone(),
        }
    }
}

/// Read a 16-bit PCM RIFF/WAVE file, averaging channels down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedAudio {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio {
            path: path.to_path_buf(),
            reason: format!(
                "expected 16-bit integer PCM, found {:?} with {} bits",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::UnsupportedAudio {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if raw.len() < channels {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64 / 32768.0).sum();
            sum / channels as f64
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        source_id: path.to_string_lossy().into_owned(),
    })
}

/// Write a mono 16-bit PCM file. Samples are scaled by 32768 and saturated.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format("wav output", other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Linear-interpolation resampler. Returns the input unchanged when rates agree.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> AudioClip {
    if clip.sample_rate == target_rate || clip.samples.is_empty() {
        return AudioClip {
            sample_rate: target_rate,
            ..clip.clone()
        };
    }
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let n_out = ((clip.samples.len() as f64) / ratio).floor().max(1.0) as usize;
    let last = clip.samples.len() - 1;
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            clip.samples[lo] * (1.0 - frac) + clip.samples[hi] * frac
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    }
}
