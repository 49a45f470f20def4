//! Waveform ingestion and deterministic Gaussian-noise distortion.
//!
//! Audio is mono PCM held as floats in [-1, 1]. Distortion targets a
//! signal-to-noise ratio in dB and is reproducible from its seed.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio has no samples")]
    Empty,
    #[error("signal power is zero; cannot scale noise against silence")]
    DegenerateSignal,
    #[error("target snr {0} dB is not finite")]
    InvalidSnr(f64),
    #[error("sample {index} is {value}; samples must lie in [-1, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("sample rates differ: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },
    #[error("sample counts differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("distortion requires clean audio, got {0}")]
    NotClean(&'static str),
    #[error("audio is absent where a waveform is required")]
    Absent,
    #[error("unsupported wav encoding: {0}; expected 16-bit PCM mono")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

/// Provenance of the samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AudioTag {
    /// Original, undistorted signal.
    Clean,
    /// Noise-corrupted copy, carrying the distortion parameters.
    Distorted { snr_db: f64, seed: u64 },
    /// No audio at all.
    Absent,
}

impl AudioTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            AudioTag::Clean => "clean",
            AudioTag::Distorted { .. } => "distorted",
            AudioTag::Absent => "absent",
        }
    }
}

/// Mono audio plus its provenance. Absent audio carries zero samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioInput {
    samples: Vec<f64>,
    sample_rate: u32,
    tag: AudioTag,
}

impl AudioInput {
    /// The no-audio input.
    pub fn absent() -> Self {
        Self {
            samples: Vec::new(),
            sample_rate: 0,
            tag: AudioTag::Absent,
        }
    }

    pub fn clean(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        for (index, &value) in samples.iter().enumerate() {
            if !value.is_finite() || value.abs() > 1.0 {
                return Err(AudioError::OutOfRange { index, value });
            }
        }
        Ok(Self {
            samples,
            sample_rate,
            tag: AudioTag::Clean,
        })
    }

    /// Pure tone, useful as a deterministic reference signal.
    pub fn sine(freq_hz: f64, amplitude: f64, duration_secs: f64, sample_rate: u32) -> Self {
        let n = ((duration_secs * sample_rate as f64).round() as usize).max(1);
        let samples = (0..n)
            .map(|i| {
                amplitude
                    * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / sample_rate as f64).sin()
            })
            .collect();
        Self {
            samples,
            sample_rate,
            tag: AudioTag::Clean,
        }
    }

    pub fn tag(&self) -> AudioTag {
        self.tag
    }

    pub fn is_absent(&self) -> bool {
        matches!(self.tag, AudioTag::Absent)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Adds white Gaussian noise with power `signal_power / 10^(snr_db/10)`,
/// then clips back into [-1, 1]. The same seed always yields the same output.
pub fn distort(audio: &AudioInput, snr_db: f64, seed: u64) -> Result<AudioInput, AudioError> {
    match audio.tag {
        AudioTag::Clean => {}
        other => return Err(AudioError::NotClean(other.as_str())),
    }
    if !snr_db.is_finite() {
        return Err(AudioError::InvalidSnr(snr_db));
    }
    let signal_power = audio.power();
    if signal_power <= 0.0 {
        return Err(AudioError::DegenerateSignal);
    }
    let noise_std = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = audio
        .samples
        .iter()
        .map(|&s| {
            let n: f64 = StandardNormal.sample(&mut rng);
            (s + noise_std * n).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AudioInput {
        samples,
        sample_rate: audio.sample_rate,
        tag: AudioTag::Distorted { snr_db, seed },
    })
}

/// Signal-to-noise ratio of `candidate` relative to `reference`, in dB.
/// Returns `+inf` when the residual is exactly zero.
pub fn measure_snr_db(reference: &AudioInput, candidate: &AudioInput) -> Result<f64, AudioError> {
    if reference.is_absent() || candidate.is_absent() {
        return Err(AudioError::Absent);
    }
    if reference.sample_rate != candidate.sample_rate {
        return Err(AudioError::SampleRateMismatch {
            left: reference.sample_rate,
            right: candidate.sample_rate,
        });
    }
    if reference.samples.len() != candidate.samples.len() {
        return Err(AudioError::LengthMismatch {
            left: reference.samples.len(),
            right: candidate.samples.len(),
        });
    }
    let signal_power = reference.power();
    if signal_power <= 0.0 {
        return Err(AudioError::DegenerateSignal);
    }
    let residual_power = reference
        .samples
        .iter()
        .zip(&candidate.samples)
        .map(|(r, c)| (c - r) * (c - r))
        .sum::<f64>()
        / reference.samples.len() as f64;
    if residual_power == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal_power / residual_power).log10())
}

/// Reads a 16-bit PCM mono WAV, scaling samples into [-1, 1]. The result is
/// tagged clean. Stereo or non-PCM-16 input is rejected.
pub fn load_wav(path: &Path) -> Result<AudioInput, AudioError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{:?} at {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples: Vec<f64> = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<_, _>>()?;
    if samples.is_empty() {
        return Err(AudioError::Empty);
    }
    AudioInput::clean(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono WAV.
pub fn save_wav(path: &Path, audio: &AudioInput) -> Result<(), AudioError> {
    if audio.is_absent() || audio.samples.is_empty() {
        return Err(AudioError::Empty);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
