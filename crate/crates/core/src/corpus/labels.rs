use crate::audio::AudioClip;
use crate::dsp::{hamming_coefficients, spectral_energy, Complex, FrameConfig, RealFft};
use crate::error::{Error, Result};

/// Threshold weight on the mean frame norm.
pub const LABEL_ALPHA: f64 = 0.3;
/// Length of the causal label-smoothing window in seconds.
pub const SMOOTHING_S: f64 = 0.2;

/// L2 norm of each STFT frame (Hamming window, zero-padded FFT).
pub fn frame_norms(clip: &AudioClip, cfg: &FrameConfig) -> Vec<f64> {
    let window = hamming_coefficients(cfg.frame_len);
    let fft = RealFft::new(cfg.fft_len);
    (0..cfg.frame_count(clip.len()))
        .map(|k| {
            let frame = &clip.samples[k * cfg.hop..k * cfg.hop + cfg.frame_len];
            let x: Vec<f64> = frame.iter().zip(&window).map(|(&s, w)| s as f64 * w).collect();
            let mag: Vec<f64> = fft.forward(&x).into_iter().map(Complex::abs).collect();
            // Σ|X|² over the full two-sided spectrum.
            (spectral_energy(&mag, cfg.fft_len) * cfg.fft_len as f64).sqrt()
        })
        .collect()
}

/// `1` where the norm exceeds `min + alpha·mean`.
pub fn labels_from_norms(norms: &[f64], alpha: f64) -> Result<Vec<u8>> {
    if norms.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "label generation needs at least 2 frames, got {}",
            norms.len()
        )));
    }
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let threshold = min + alpha * mean;
    Ok(norms.iter().map(|&n| u8::from(n > threshold)).collect())
}

/// Raw per-frame voice activity from the clean reference channel.
pub fn generate_labels(s_ref: &AudioClip, cfg: &FrameConfig) -> Result<Vec<u8>> {
    labels_from_norms(&frame_norms(s_ref, cfg), LABEL_ALPHA)
}

pub fn smoothing_window(cfg: &FrameConfig) -> usize {
    ((SMOOTHING_S * 1000.0 / cfg.hop_ms()).round() as usize).max(1)
}

/// Causal moving average over the last 0.2 s of frames, truncated at the start.
pub fn smooth_labels(raw: &[u8], cfg: &FrameConfig) -> Vec<f64> {
    let w = smoothing_window(cfg);
    let mut running = 0u32;
    (0..raw.len())
        .map(|n| {
            running += raw[n] as u32;
            if n >= w {
                running -= raw[n - w] as u32;
            }
            let len = (n + 1).min(w);
            running as f64 / len as f64
        })
        .collect()
}

/// Binary targets used by the accuracy-style metrics.
pub fn binarize(smoothed: &[f64]) -> Vec<u8> {
    smoothed.iter().map(|&v| u8::from(v > 0.5)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(labels_from_norms(&[0.0, 1.0, 2.0, 3.0], 0.3).unwrap(), vec![0, 1, 1, 1]);
        assert_eq!(labels_from_norms(&[2.0; 5], 0.3).unwrap(), vec![0; 5]);
        assert!(matches!(
            labels_from_norms(&[1.0], 0.3),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn smoothing_of_ones_and_steps() {
        let cfg = FrameConfig::default();
        assert_eq!(smoothing_window(&cfg), 20);
        assert!(smooth_labels(&[1; 50], &cfg).iter().all(|&v| v == 1.0));

        let k = 30;
        let mut raw = vec![0u8; 80];
        raw[k..].iter_mut().for_each(|v| *v = 1);
        let s = smooth_labels(&raw, &cfg);
        for j in 0..20 {
            assert!((s[k + j] - (j + 1) as f64 / 20.0).abs() < 1e-12);
        }
        assert_eq!(s[k + 19], 1.0);
        assert!(s[k + 18] < 1.0);
    }

    proptest! {
        #[test]
        fn smoothing_matches_direct_mean(raw in prop::collection::vec(0u8..=1, 1..200)) {
            let cfg = FrameConfig::default();
            let s = smooth_labels(&raw, &cfg);
            for n in 0..raw.len() {
                let lo = n.saturating_sub(19);
                let window = &raw[lo..=n];
                let mean = window.iter().map(|&v| v as f64).sum::<f64>() / window.len() as f64;
                prop_assert!((s[n] - mean).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&s[n]));
            }
        }
    }
}
