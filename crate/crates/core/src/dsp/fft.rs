//! Iterative radix-2 FFT and a packed real-input transform built on it.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn from_polar(r: f64, theta: f64) -> Self {
        Self::new(r * theta.cos(), r * theta.sin())
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.re * k, self.im * k)
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

/// Complex FFT plan for a power-of-two length.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "FFT length must be a power of two, got {n}");
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if n == 1 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self {
            n,
            twiddles,
            bitrev,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform in place: `X[k] = Σ x[n]·e^{-2πikn/N}`.
    pub fn forward(&self, data: &mut [Complex]) {
        self.transform(data, false);
    }

    /// Unnormalized inverse transform in place (caller divides by N).
    pub fn inverse(&self, data: &mut [Complex]) {
        self.transform(data, true);
    }

    fn transform(&self, data: &mut [Complex], inverse: bool) {
        assert_eq!(data.len(), self.n);
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let step = self.n / len;
            for start in (0..self.n).step_by(len) {
                for k in 0..len / 2 {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + len / 2] * w;
                    data[start + k] = a + b;
                    data[start + k + len / 2] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Real-input FFT of length `n` computed with one complex FFT of length `n/2`.
#[derive(Debug, Clone)]
pub struct RealFft {
    n: usize,
    half: Fft,
    post: Vec<Complex>,
}

impl RealFft {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2 && n.is_power_of_two());
        let post = (0..n / 2)
            .map(|k| Complex::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self {
            n,
            half: Fft::new(n / 2),
            post,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// One-sided spectrum `X[0..=n/2]` of `input`, zero-padded to `n`.
    pub fn forward(&self, input: &[f64]) -> Vec<Complex> {
        assert!(input.len() <= self.n);
        let m = self.n / 2;
        let at = |i: usize| input.get(i).copied().unwrap_or(0.0);
        let mut z: Vec<Complex> = (0..m).map(|i| Complex::new(at(2 * i), at(2 * i + 1))).collect();
        self.half.forward(&mut z);
        let mut out = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let zk = z[k % m];
            let zc = z[(m - k) % m].conj();
            let even = (zk + zc).scale(0.5);
            let odd = (zk - zc) * Complex::new(0.0, -0.5);
            let w = if k == m {
                Complex::new(-1.0, 0.0)
            } else {
                self.post[k]
            };
            out.push(even + w * odd);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[Complex]) -> Vec<Complex> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex::default(), |acc, (t, &v)| {
                    acc + v * Complex::from_polar(1.0, -2.0 * PI * (k * t % n) as f64 / n as f64)
                })
            })
            .collect()
    }

    #[test]
    fn complex_fft_matches_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 4, 8, 64, 256] {
            let x: Vec<Complex> = (0..n)
                .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let mut y = x.clone();
            Fft::new(n).forward(&mut y);
            for (a, b) in y.iter().zip(naive_dft(&x)) {
                assert!((*a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 128;
        let x: Vec<Complex> = (0..n)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let plan = Fft::new(n);
        let mut y = x.clone();
        plan.forward(&mut y);
        plan.inverse(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a.scale(1.0 / n as f64) - *b).abs() < 1e-12);
        }
    }

    #[test]
    fn real_fft_matches_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2usize, 4, 16, 512] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xc: Vec<Complex> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
            let full = naive_dft(&xc);
            let half = RealFft::new(n).forward(&x);
            assert_eq!(half.len(), n / 2 + 1);
            for (a, b) in half.iter().zip(&full) {
                assert!((*a - *b).abs() < 1e-9, "n={n}");
            }
        }
    }
}
