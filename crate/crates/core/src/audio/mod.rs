//! Audio clips, WAV I/O, resampling and level/SNR scaling.
//!
//! Samples are stored as `f32`; every energy or level computation
//! accumulates in `f64`.

mod resample;
mod wav;

pub use resample::{resample_to_16k, Resampler, SUPPORTED_RATES};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Which microphone a clip was captured by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// In-ear bone conduction.
    Bc,
    /// In-ear air conduction.
    Ac,
    /// External reference air conduction microphone facing the wearer.
    AcRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    TargetSpeech,
    ExternalSpeech,
    ExternalNoise,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelMode {
    PeakDbfs,
    RmsDbfs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub channel: Channel,
    pub role: Role,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32, channel: Channel, role: Role) -> Self {
        Self {
            samples,
            sample_rate_hz,
            channel,
            role,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    /// Returns a copy multiplied by `gain`, computed in `f64`.
    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: self
                .samples
                .iter()
                .map(|&x| (x as f64 * gain) as f32)
                .collect(),
            ..self.clone()
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }
}

pub fn energy(samples: &[f32]) -> f64 {
    samples.iter().map(|&x| (x as f64) * (x as f64)).sum()
}

/// `10·log10(signal_energy / noise_energy)`.
pub fn snr_db_from_energies(signal_energy: f64, noise_energy: f64) -> f64 {
    10.0 * (signal_energy / noise_energy).log10()
}

/// SNR of `signal` against `gain·noise`, with the gain applied analytically.
pub fn measure_snr_db(signal: &[f32], noise: &[f32], gain: f64) -> f64 {
    snr_db_from_energies(energy(signal), gain * gain * energy(noise))
}

pub fn measure_level(clip: &AudioClip, mode: LevelMode) -> Result<f64> {
    level_of(&clip.samples, mode)
}

pub(crate) fn level_of(samples: &[f32], mode: LevelMode) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::UndefinedLevel);
    }
    let value = match mode {
        LevelMode::PeakDbfs => samples.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs())),
        LevelMode::RmsDbfs => (energy(samples) / samples.len() as f64).sqrt(),
    };
    if value == 0.0 {
        return Err(Error::UndefinedLevel);
    }
    Ok(20.0 * value.log10())
}

/// Gain that moves `samples` to `target_dbfs` under `mode`.
pub fn level_gain(samples: &[f32], target_dbfs: f64, mode: LevelMode) -> Result<f64> {
    let current = level_of(samples, mode)?;
    Ok(10f64.powf((target_dbfs - current) / 20.0))
}

pub fn rescale_to_level(clip: &AudioClip, target_dbfs: f64, mode: LevelMode) -> Result<AudioClip> {
    let gain = level_gain(&clip.samples, target_dbfs, mode)?;
    Ok(clip.scaled(gain))
}

/// Noise gain γ such that `signal + γ·noise` sits at `target_snr_db`.
pub fn snr_gain(signal: &AudioClip, noise: &AudioClip, target_snr_db: f64) -> Result<f64> {
    snr_gain_samples(&signal.samples, &noise.samples, target_snr_db)
}

pub(crate) fn snr_gain_samples(signal: &[f32], noise: &[f32], target_snr_db: f64) -> Result<f64> {
    if signal.len() != noise.len() {
        return Err(Error::Shape(format!(
            "signal has {} samples, noise has {}",
            signal.len(),
            noise.len()
        )));
    }
    let es = energy(signal);
    let en = energy(noise);
    if es == 0.0 || en == 0.0 {
        return Err(Error::DegenerateInput(
            "zero-energy signal or noise".to_string(),
        ));
    }
    Ok((es / (en * 10f64.powf(target_snr_db / 10.0))).sqrt())
}
