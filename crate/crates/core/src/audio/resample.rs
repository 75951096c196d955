//! Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use super::{AudioClip, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const SUPPORTED_RATES: [u32; 5] = [8000, 16000, 22050, 44100, 48000];

/// Zero crossings of the lower-rate sinc covered by one phase.
const ZERO_CROSSINGS: usize = 32;
const KAISER_BETA: f64 = 8.0;
/// Cutoff as a fraction of the lower of the two Nyquist frequencies.
const ROLLOFF: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    taps_per_phase: usize,
    /// `phases[p][k]` weights input sample `i + 1 - half + k` for an output
    /// instant `i + p/up`.
    phases: Vec<Vec<f64>>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Self {
        let g = gcd(from_hz as usize, to_hz as usize);
        let up = to_hz as usize / g;
        let down = from_hz as usize / g;
        let ratio = (up as f64 / down as f64).min(1.0);
        let cutoff = ratio * ROLLOFF;
        let half = (ZERO_CROSSINGS as f64 / 2.0 / ratio).ceil() as usize;
        let taps_per_phase = 2 * half;
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps: Vec<f64> = (0..taps_per_phase)
                    .map(|k| {
                        let tau = (k as f64 + 1.0 - half as f64) - frac;
                        let u = tau / half as f64;
                        if u.abs() >= 1.0 {
                            return 0.0;
                        }
                        let w = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta;
                        cutoff * sinc(cutoff * tau) * w
                    })
                    .collect();
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        Self {
            up,
            down,
            taps_per_phase,
            phases,
        }
    }

    pub fn taps_per_phase(&self) -> usize {
        self.taps_per_phase
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        let half = self.taps_per_phase / 2;
        let n_out = self.output_len(input.len());
        (0..n_out)
            .map(|n| {
                let pos = n * self.down;
                let i = pos / self.up;
                let p = pos % self.up;
                let taps = &self.phases[p];
                let first = i as isize + 1 - half as isize;
                let mut acc = 0.0f64;
                for (k, &t) in taps.iter().enumerate() {
                    let j = first + k as isize;
                    if j >= 0 && (j as usize) < input.len() {
                        acc += t * input[j as usize] as f64;
                    }
                }
                acc as f32
            })
            .collect()
    }
}

/// Converts a clip at any supported rate to 16 kHz. 16 kHz input is returned unchanged.
pub fn resample_to_16k(clip: &AudioClip) -> Result<AudioClip> {
    if !SUPPORTED_RATES.contains(&clip.sample_rate_hz) {
        return Err(Error::UnsupportedRate(clip.sample_rate_hz));
    }
    if clip.sample_rate_hz == SAMPLE_RATE_HZ {
        return Ok(clip.clone());
    }
    let r = Resampler::new(clip.sample_rate_hz, SAMPLE_RATE_HZ);
    Ok(AudioClip {
        samples: r.process(&clip.samples),
        sample_rate_hz: SAMPLE_RATE_HZ,
        ..clip.clone()
    })
}
