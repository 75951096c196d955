//! Frame-based spectral front end: framing, Hamming window, real FFT,
//! mel warping, log compression and spectral frame energy.

mod fft;
mod mel;

pub use fft::{Complex, Fft, RealFft};
pub use mel::{build_mel_filterbank, hz_to_mel, mel_to_hz, MelFilterbank};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Floor added before the log and inside the energy dB.
pub const LOG_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub n_mels: usize,
    pub sample_rate_hz: u32,
}

impl Default for FrameConfig {
    /// 20 ms frames, 10 ms hop, 512-point FFT, 32 mel bands at 16 kHz.
    fn default() -> Self {
        Self {
            frame_len: 320,
            hop: 160,
            fft_len: 512,
            n_mels: 32,
            sample_rate_hz: 16_000,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_len > self.fft_len {
            return Err(Error::Config(format!(
                "frame_len {} must be in 1..=fft_len ({})",
                self.frame_len, self.fft_len
            )));
        }
        if self.hop * 2 != self.frame_len {
            return Err(Error::Config(format!(
                "hop {} must be half of frame_len {}",
                self.hop, self.frame_len
            )));
        }
        if !self.fft_len.is_power_of_two() {
            return Err(Error::Config(format!("fft_len {} is not a power of two", self.fft_len)));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn hop_ms(&self) -> f64 {
        self.hop as f64 * 1000.0 / self.sample_rate_hz as f64
    }

    /// `floor((n - frame_len)/hop) + 1`, or 0 when the clip is shorter than a frame.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            (n_samples - self.frame_len) / self.hop + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub frame_index: usize,
    pub energy_db: f64,
}

/// Full frames of `clip`; a trailing partial frame is dropped.
pub fn frame_stream<'a>(clip: &'a AudioClip, cfg: &FrameConfig) -> Vec<&'a [f32]> {
    let n = cfg.frame_count(clip.len());
    (0..n)
        .map(|k| &clip.samples[k * cfg.hop..k * cfg.hop + cfg.frame_len])
        .collect()
}

pub fn hamming_coefficients(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub fn hamming_window(frame: &[f32], cfg: &FrameConfig) -> Result<Vec<f64>> {
    if frame.len() != cfg.frame_len {
        return Err(Error::Shape(format!(
            "frame has {} samples, expected {}",
            frame.len(),
            cfg.frame_len
        )));
    }
    Ok(frame
        .iter()
        .zip(hamming_coefficients(cfg.frame_len))
        .map(|(&x, w)| x as f64 * w)
        .collect())
}

/// Magnitudes of the one-sided DFT of `windowed` zero-padded to `fft_len`.
pub fn rfft_mag(windowed: &[f64], cfg: &FrameConfig) -> Result<Vec<f64>> {
    if windowed.len() != cfg.frame_len {
        return Err(Error::Shape(format!(
            "frame has {} samples, expected {}",
            windowed.len(),
            cfg.frame_len
        )));
    }
    Ok(RealFft::new(cfg.fft_len)
        .forward(windowed)
        .into_iter()
        .map(Complex::abs)
        .collect())
}

/// Two-sided `Σ|X|²/N` from a one-sided magnitude spectrum; equals the
/// time-domain energy of the (windowed, padded) frame.
pub fn spectral_energy(mag: &[f64], fft_len: usize) -> f64 {
    let last = mag.len() - 1;
    let two_sided: f64 = mag
        .iter()
        .enumerate()
        .map(|(k, &m)| if k == 0 || k == last { m * m } else { 2.0 * m * m })
        .sum();
    two_sided / fft_len as f64
}

/// Reusable feature extractor holding the window, FFT plan and filterbank.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FrameConfig,
    window: Vec<f64>,
    fft: RealFft,
    filterbank: MelFilterbank,
    log_compress: bool,
}

impl FeatureExtractor {
    pub fn new(cfg: FrameConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            window: hamming_coefficients(cfg.frame_len),
            fft: RealFft::new(cfg.fft_len),
            filterbank: MelFilterbank::new(&cfg),
            cfg,
            log_compress: true,
        })
    }

    /// Disables the log for ablation runs; features are then raw mel magnitudes.
    pub fn with_log_compress(mut self, enabled: bool) -> Self {
        self.log_compress = enabled;
        self
    }

    pub fn config(&self) -> &FrameConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn extract(&self, frame: &[f32], frame_index: usize) -> Result<FeatureVector> {
        if frame.len() != self.cfg.frame_len {
            return Err(Error::Shape(format!(
                "frame has {} samples, expected {}",
                frame.len(),
                self.cfg.frame_len
            )));
        }
        let windowed: Vec<f64> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, w)| x as f64 * w)
            .collect();
        let mag: Vec<f64> = self.fft.forward(&windowed).into_iter().map(Complex::abs).collect();
        let energy_db = 10.0 * (spectral_energy(&mag, self.cfg.fft_len) + LOG_EPS).log10();
        let mut values = self.filterbank.apply(&mag);
        if self.log_compress {
            values.iter_mut().for_each(|v| *v = (*v + LOG_EPS).ln());
        }
        Ok(FeatureVector {
            values,
            frame_index,
            energy_db,
        })
    }

    /// Features for every full frame of `samples`.
    pub fn extract_all(&self, samples: &[f32]) -> Vec<FeatureVector> {
        let n = self.cfg.frame_count(samples.len());
        (0..n)
            .map(|k| {
                let start = k * self.cfg.hop;
                self.extract(&samples[start..start + self.cfg.frame_len], k)
                    .expect("frame length matches config")
            })
            .collect()
    }
}

/// `log(fb · |rfft(hamming(frame))| + ε)` plus the spectral frame energy in dB.
pub fn extract_features(
    frame: &[f32],
    fb: &MelFilterbank,
    cfg: &FrameConfig,
) -> Result<FeatureVector> {
    let windowed = hamming_window(frame, cfg)?;
    let mag = rfft_mag(&windowed, cfg)?;
    let energy_db = 10.0 * (spectral_energy(&mag, cfg.fft_len) + LOG_EPS).log10();
    let values = fb.apply(&mag).into_iter().map(|v| (v + LOG_EPS).ln()).collect();
    Ok(FeatureVector {
        values,
        frame_index: 0,
        energy_db,
    })
}
