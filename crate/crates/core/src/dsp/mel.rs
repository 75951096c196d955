use super::FrameConfig;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Overlapping unnormalized triangular filters, equally spaced in mel from
/// 0 Hz to Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Row-major `n_mels × n_bins`.
    pub weights: Vec<f64>,
    pub band_edges_hz: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
}

impl MelFilterbank {
    pub fn new(cfg: &FrameConfig) -> Self {
        let n_bins = cfg.fft_len / 2 + 1;
        let nyquist = cfg.sample_rate_hz as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let band_edges_hz: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_len as f64;
        let mut weights = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (lo, center, hi) = (
                band_edges_hz[m],
                band_edges_hz[m + 1],
                band_edges_hz[m + 2],
            );
            for b in 0..n_bins {
                let f = b as f64 * bin_hz;
                let w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                weights[m * n_bins + b] = w;
            }
        }
        Self {
            weights,
            band_edges_hz,
            n_mels: cfg.n_mels,
            n_bins,
        }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.band_edges_hz[m + 1]
    }

    /// `out[m] = Σ_b weights[m][b]·spectrum[b]`.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        assert_eq!(spectrum.len(), self.n_bins);
        (0..self.n_mels)
            .map(|m| {
                self.row(m)
                    .iter()
                    .zip(spectrum)
                    .map(|(w, s)| w * s)
                    .sum()
            })
            .collect()
    }
}

pub fn build_mel_filterbank(cfg: &FrameConfig) -> MelFilterbank {
    MelFilterbank::new(cfg)
}
