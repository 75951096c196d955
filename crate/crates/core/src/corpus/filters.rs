//! Small IIR building blocks for the channel and vocal-tract models.

use std::f64::consts::PI;

/// Transposed direct-form II biquad.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    /// RBJ cookbook low-pass.
    pub fn lowpass(cutoff_hz: f64, q: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cos) / 2.0 / a0,
            b1: (1.0 - cos) / a0,
            b2: (1.0 - cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Cascaded Butterworth low-pass of even order.
#[derive(Debug, Clone)]
pub struct ButterworthLowpass {
    sections: Vec<Biquad>,
}

impl ButterworthLowpass {
    pub fn new(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        assert!(order >= 2 && order % 2 == 0, "order must be even");
        let sections = (0..order / 2)
            .map(|k| {
                let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
                Biquad::lowpass(cutoff_hz, 1.0 / (2.0 * theta.sin()), sample_rate_hz)
            })
            .collect();
        Self { sections }
    }

    pub fn filter(&mut self, input: &[f32]) -> Vec<f32> {
        input
            .iter()
            .map(|&x| {
                self.sections
                    .iter_mut()
                    .fold(x as f64, |acc, s| s.process(acc)) as f32
            })
            .collect()
    }
}

/// Two-pole resonator with unity gain at DC (Klatt form), retunable per sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    #[inline]
    pub fn process(&mut self, x: f64, freq_hz: f64, bandwidth_hz: f64, sample_rate_hz: f64) -> f64 {
        let r = (-PI * bandwidth_hz / sample_rate_hz).exp();
        let b = 2.0 * r * (2.0 * PI * freq_hz / sample_rate_hz).cos();
        let c = -r * r;
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_gain(filter: &mut ButterworthLowpass, freq: f64) -> f64 {
        let n = 16000;
        let x: Vec<f32> = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / 16000.0).sin() as f32)
            .collect();
        let y = filter.filter(&x);
        let e_in: f64 = x[n / 2..].iter().map(|&v| (v as f64).powi(2)).sum();
        let e_out: f64 = y[n / 2..].iter().map(|&v| (v as f64).powi(2)).sum();
        10.0 * (e_out / e_in).log10()
    }

    #[test]
    fn butterworth_response() {
        assert!(tone_gain(&mut ButterworthLowpass::new(4, 2000.0, 16000.0), 200.0).abs() < 0.1);
        let at_cut = tone_gain(&mut ButterworthLowpass::new(4, 2000.0, 16000.0), 2000.0);
        assert!((at_cut + 3.01).abs() < 0.2, "{at_cut}");
        let octave = tone_gain(&mut ButterworthLowpass::new(4, 2000.0, 16000.0), 4000.0);
        assert!(octave < -22.0, "{octave}");
    }

    #[test]
    fn resonator_unity_dc() {
        let mut r = Resonator::default();
        let mut y = 0.0;
        for _ in 0..5000 {
            y = r.process(1.0, 500.0, 80.0, 16000.0);
        }
        assert!((y - 1.0).abs() < 1e-9);
    }
}
