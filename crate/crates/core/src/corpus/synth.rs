//! Speech and noise surrogates for the three recording sets (target speech,
//! external speech, external noise) and the BC/AC channel model.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::filters::{ButterworthLowpass, Resonator};
use super::{derive_seed, SynthSpec};
use crate::audio::{energy, AudioClip, Channel, Role, SAMPLE_RATE_HZ};
use crate::dsp::{Complex, Fft};

const FS: f64 = SAMPLE_RATE_HZ as f64;
/// RMS of the active part of a rendered utterance stream (-20 dBFS).
const ACTIVE_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerVoice {
    pub f0_hz: f64,
    /// Vocal-tract length factor applied to formant targets.
    pub formant_scale: f64,
    pub f3_hz: f64,
    pub breathiness: f64,
}

impl SpeakerVoice {
    pub fn for_speaker(spec: &SynthSpec, speaker_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x5EA4_E400 + speaker_id as u64));
        let (lo, hi) = spec.speech_f0_range_hz;
        let f0_hz = rng.random_range(lo..hi);
        // Higher voices tend to come with shorter vocal tracts.
        let t = (f0_hz - lo) / (hi - lo);
        let formant_scale = 0.9 + 0.22 * t + rng.random_range(-0.04..0.04);
        Self {
            f0_hz,
            formant_scale,
            f3_hz: 2500.0 * formant_scale + rng.random_range(-150.0..150.0),
            breathiness: rng.random_range(0.01..0.04),
        }
    }
}

/// A rendered utterance stream plus its ground-truth burst intervals (sample ranges).
#[derive(Debug, Clone)]
pub struct SpeechSurrogate {
    pub samples: Vec<f32>,
    pub bursts: Vec<(usize, usize)>,
}

impl SpeechSurrogate {
    pub fn active_fraction(&self) -> f64 {
        let active: usize = self.bursts.iter().map(|(a, b)| b - a).sum();
        active as f64 / self.samples.len().max(1) as f64
    }
}

struct Syllable {
    start: usize,
    len: usize,
    f1: f64,
    f2: f64,
}

/// Alternating silences (0.2–1 s) and utterance bursts (0.3–2 s), starting with silence.
fn burst_timeline(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut bursts = Vec::new();
    let mut t = 0usize;
    loop {
        // Skewed draws keep the active share near one half.
        let gap = 0.2 + 0.8 * rng.random::<f64>().sqrt();
        let burst = 0.3 + 1.7 * rng.random::<f64>().powi(2);
        let start = t + (gap * FS) as usize;
        if start >= n {
            break;
        }
        let end = (start + (burst * FS) as usize).min(n);
        bursts.push((start, end));
        t = end;
        if t >= n {
            break;
        }
    }
    bursts
}

fn rosenberg_flow(phase: f64) -> f64 {
    const OPEN: f64 = 0.4;
    const CLOSE: f64 = 0.16;
    if phase < OPEN {
        0.5 * (1.0 - (PI * phase / OPEN).cos())
    } else if phase < OPEN + CLOSE {
        (PI * (phase - OPEN) / (2.0 * CLOSE)).cos()
    } else {
        0.0
    }
}

/// Renders a speech-like stream: pulse-train source with jittered intonation,
/// three formant resonators, syllabic amplitude modulation inside bursts.
pub fn render_speech(voice: &SpeakerVoice, n_samples: usize, rng: &mut ChaCha8Rng) -> SpeechSurrogate {
    let bursts = burst_timeline(n_samples, rng);
    let mut envelope = vec![0.0f64; n_samples];
    let mut syllables: Vec<Syllable> = Vec::new();
    for &(start, end) in &bursts {
        let len = end - start;
        let attack = (0.02 * FS) as usize;
        let release = (0.04 * FS) as usize;
        let mut s = start;
        while s < end {
            let slen = ((rng.random_range(0.10..0.25) * FS) as usize).min(end - s);
            syllables.push(Syllable {
                start: s,
                len: slen,
                f1: rng.random_range(300.0..850.0) * voice.formant_scale,
                f2: rng.random_range(850.0..2400.0) * voice.formant_scale,
            });
            s += slen;
        }
        for i in 0..len {
            let edge = if i < attack {
                0.5 * (1.0 - (PI * i as f64 / attack as f64).cos())
            } else if len - i <= release {
                0.5 * (1.0 - (PI * (len - i) as f64 / release as f64).cos())
            } else {
                1.0
            };
            envelope[start + i] = edge;
        }
    }
    for syl in &syllables {
        for i in 0..syl.len {
            let tau = i as f64 / syl.len.max(1) as f64;
            envelope[syl.start + i] *= 0.55 + 0.45 * (PI * tau).sin();
        }
    }

    // Formant tracks glide toward each syllable's targets.
    let mut f1_track = vec![500.0 * voice.formant_scale; n_samples];
    let mut f2_track = vec![1500.0 * voice.formant_scale; n_samples];
    let (mut prev_f1, mut prev_f2) = (f1_track[0], f2_track[0]);
    for syl in &syllables {
        let glide = (syl.len as f64 * 0.3).max(1.0);
        for i in 0..syl.len {
            let w = (i as f64 / glide).min(1.0);
            f1_track[syl.start + i] = prev_f1 + (syl.f1 - prev_f1) * w;
            f2_track[syl.start + i] = prev_f2 + (syl.f2 - prev_f2) * w;
        }
        prev_f1 = syl.f1;
        prev_f2 = syl.f2;
    }

    let intonation_rate = rng.random_range(0.4..1.5);
    let intonation_phase = rng.random_range(0.0..2.0 * PI);
    let mut phase = 0.0f64;
    let mut jitter = 1.0f64;
    let mut prev_flow = 0.0f64;
    let (mut r1, mut r2, mut r3) = (Resonator::default(), Resonator::default(), Resonator::default());
    let mut out = Vec::with_capacity(n_samples);
    for n in 0..n_samples {
        let t = n as f64 / FS;
        let f0 = voice.f0_hz
            * (1.0 + 0.08 * (2.0 * PI * intonation_rate * t + intonation_phase).sin())
            * jitter;
        phase += f0 / FS;
        if phase >= 1.0 {
            phase -= 1.0;
            jitter = 1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal);
        }
        let flow = rosenberg_flow(phase);
        let excitation = (flow - prev_flow) + voice.breathiness * rng.sample::<f64, _>(StandardNormal) * flow;
        prev_flow = flow;
        let x = excitation * envelope[n];
        let y = r1.process(x, f1_track[n], 70.0, FS);
        let y = r2.process(y, f2_track[n], 110.0, FS);
        let y = r3.process(y, voice.f3_hz, 180.0, FS);
        out.push(y);
    }

    let active: usize = bursts.iter().map(|(a, b)| b - a).sum();
    let active_energy: f64 = out.iter().map(|v| v * v).sum();
    let gain = if active_energy > 0.0 {
        ACTIVE_RMS / (active_energy / active.max(1) as f64).sqrt()
    } else {
        0.0
    };
    SpeechSurrogate {
        samples: out.into_iter().map(|v| (v * gain) as f32).collect(),
        bursts,
    }
}

pub fn white_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect()
}

/// 1/f noise shaped in the frequency domain; PSD falls 3 dB per octave.
pub fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let size = n.next_power_of_two().max(2);
    let mut spectrum = vec![Complex::default(); size];
    for k in 1..size / 2 {
        let amp = 1.0 / (k as f64).sqrt();
        let c = Complex::new(
            rng.sample::<f64, _>(StandardNormal) * amp,
            rng.sample::<f64, _>(StandardNormal) * amp,
        );
        spectrum[k] = c;
        spectrum[size - k] = c.conj();
    }
    Fft::new(size).inverse(&mut spectrum);
    let raw: Vec<f64> = spectrum[..n].iter().map(|c| c.re).collect();
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-30);
    raw.into_iter().map(|v| (v / rms) as f32).collect()
}

fn normalize_rms(samples: &mut [f32], target: f64) {
    let e = energy(samples);
    if e > 0.0 {
        let g = target / (e / samples.len() as f64).sqrt();
        samples.iter_mut().for_each(|x| *x = (*x as f64 * g) as f32);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExternalKind {
    ExternalSpeech,
    ExternalNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NoiseType {
    White,
    Pink,
    Babble,
}

/// Clean target speech as seen by the three microphones.
#[derive(Debug, Clone)]
pub struct TargetStems {
    pub bc: AudioClip,
    pub ac: AudioClip,
    pub reference: AudioClip,
    /// Ground-truth utterance intervals in samples.
    pub bursts: Vec<(usize, usize)>,
}

/// Wearer's speech: AC and reference carry the surrogate, BC carries it
/// through the bone-conduction low-pass.
pub fn synth_target_speech(spec: &SynthSpec, speaker_id: u32, duration_s: f64, seed: u64) -> TargetStems {
    let n = (duration_s * FS).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voice = SpeakerVoice::for_speaker(spec, speaker_id);
    let speech = render_speech(&voice, n, &mut rng);
    let bc = ButterworthLowpass::new(4, spec.bc_lowpass_cutoff_hz, FS).filter(&speech.samples);
    let make = |samples: Vec<f32>, channel| AudioClip::new(samples, SAMPLE_RATE_HZ, channel, Role::TargetSpeech);
    TargetStems {
        bc: make(bc, Channel::Bc),
        ac: make(speech.samples.clone(), Channel::Ac),
        reference: make(speech.samples, Channel::AcRef),
        bursts: speech.bursts,
    }
}

/// BC pickup of an airborne source: attenuation followed by the weak-coupling low-pass.
pub fn couple_external_to_bc(ac: &[f32], spec: &SynthSpec) -> Vec<f32> {
    let attenuated = attenuate(ac, spec.bc_external_attenuation_db);
    ButterworthLowpass::new(2, spec.bc_external_lowpass_hz, FS).filter(&attenuated)
}

pub(crate) fn attenuate(samples: &[f32], db: f64) -> Vec<f32> {
    let g = 10f64.powf(-db / 20.0);
    samples.iter().map(|&x| (x as f64 * g) as f32).collect()
}

/// External speech or noise as captured by AC and BC: concatenated 3–10 s segments.
///
/// `speaker_pool` supplies the voices for external speech and babble.
pub fn synth_external(
    spec: &SynthSpec,
    kind: ExternalKind,
    speaker_pool: &[u32],
    duration_s: f64,
    seed: u64,
) -> (AudioClip, AudioClip) {
    assert!(!speaker_pool.is_empty(), "external speaker pool is empty");
    let n = (duration_s * FS).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ac = Vec::with_capacity(n);
    while ac.len() < n {
        let seg = ((rng.random_range(3.0..10.0) * FS) as usize).min(n - ac.len());
        let mut samples = match kind {
            ExternalKind::ExternalSpeech => {
                let who = speaker_pool[rng.random_range(0..speaker_pool.len())];
                render_speech(&SpeakerVoice::for_speaker(spec, who), seg, &mut rng).samples
            }
            ExternalKind::ExternalNoise => {
                let ty = match rng.random_range(0..3) {
                    0 => NoiseType::White,
                    1 => NoiseType::Pink,
                    _ => NoiseType::Babble,
                };
                let mut s = match ty {
                    NoiseType::White => white_noise(seg, &mut rng),
                    NoiseType::Pink => pink_noise(seg, &mut rng),
                    NoiseType::Babble => {
                        let mut acc = vec![0.0f32; seg];
                        for _ in 0..4 {
                            let who = speaker_pool[rng.random_range(0..speaker_pool.len())];
                            let talker = render_speech(&SpeakerVoice::for_speaker(spec, who), seg, &mut rng);
                            acc.iter_mut().zip(&talker.samples).for_each(|(a, b)| *a += b);
                        }
                        acc
                    }
                };
                normalize_rms(&mut s, ACTIVE_RMS);
                s
            }
        };
        let gain_db: f64 = rng.random_range(-12.0..0.0);
        let g = 10f64.powf(gain_db / 20.0);
        samples.iter_mut().for_each(|x| *x = (*x as f64 * g) as f32);
        ac.extend_from_slice(&samples);
    }
    let role = match kind {
        ExternalKind::ExternalSpeech => Role::ExternalSpeech,
        ExternalKind::ExternalNoise => Role::ExternalNoise,
    };
    let bc = couple_external_to_bc(&ac, spec);
    (
        AudioClip::new(bc, SAMPLE_RATE_HZ, Channel::Bc, role),
        AudioClip::new(ac, SAMPLE_RATE_HZ, Channel::Ac, role),
    )
}
