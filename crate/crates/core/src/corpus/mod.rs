//! Synthetic dual-channel corpus: speech/noise surrogates, SNR-controlled
//! mixing, voice-activity labels and dataset manifests.

mod dataset;
pub mod filters;
mod labels;
mod synth;

pub use dataset::{
    build_dataset, load_clip, load_manifest, plan_dataset, render_clip, ActiveDistribution, ClipEntry,
    ClipFeatures, ClipFiles, DatasetBuild, Manifest, Split, MANIFEST_VERSION,
};
pub use labels::{
    binarize, frame_norms, generate_labels, labels_from_norms, smooth_labels, smoothing_window,
    LABEL_ALPHA,
};
pub use synth::{
    couple_external_to_bc, pink_noise, render_speech, synth_external, synth_target_speech, white_noise,
    ExternalKind, SpeakerVoice, SpeechSurrogate, TargetStems,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{energy, level_gain, snr_gain_samples, AudioClip, Channel, LevelMode, Role};
use crate::dsp::FrameConfig;
use crate::error::{Error, Result};

/// SplitMix64 finalizer; derives independent stream seeds.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    /// Target speakers across both splits.
    pub n_speakers: u32,
    pub n_test_speakers: u32,
    pub n_external_speakers: u32,
    pub n_test_external_speakers: u32,
    pub clip_len_s: f64,
    pub speech_f0_range_hz: (f64, f64),
    /// Bone-conduction low-pass applied to the wearer's speech (4th order).
    pub bc_lowpass_cutoff_hz: f64,
    /// Low-pass applied to airborne sources reaching the bone channel (2nd order).
    pub bc_external_lowpass_hz: f64,
    /// Extra attenuation of airborne sources on the bone channel.
    pub bc_external_attenuation_db: f64,
    pub train_hours: f64,
    pub test_hours: f64,
    pub snr_mean_db: f64,
    pub snr_std_db: f64,
    pub snr_clamp_db: (f64, f64),
    pub level_mean_dbfs: f64,
    pub level_std_dbfs: f64,
    pub level_clamp_dbfs: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_speakers: 20,
            n_test_speakers: 4,
            n_external_speakers: 10,
            n_test_external_speakers: 2,
            clip_len_s: 30.0,
            speech_f0_range_hz: (85.0, 255.0),
            bc_lowpass_cutoff_hz: 2000.0,
            bc_external_lowpass_hz: 1000.0,
            // Calibrated so the mean BC-over-AC SNR advantage is ~15 dB.
            bc_external_attenuation_db: 13.0,
            train_hours: 0.5,
            test_hours: 0.1,
            snr_mean_db: 15.0,
            snr_std_db: 5.0,
            snr_clamp_db: (0.0, 30.0),
            level_mean_dbfs: -28.0,
            level_std_dbfs: 10.0,
            level_clamp_dbfs: (-50.0, -10.0),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("invalid value for `{field}`")))
            }
        };
        check(self.n_test_speakers >= 1 && self.n_test_speakers < self.n_speakers, "n_test_speakers")?;
        check(
            self.n_test_external_speakers >= 1 && self.n_test_external_speakers < self.n_external_speakers,
            "n_test_external_speakers",
        )?;
        check(self.clip_len_s >= 1.0, "clip_len_s")?;
        let (lo, hi) = self.speech_f0_range_hz;
        check(lo > 0.0 && lo < hi, "speech_f0_range_hz")?;
        check(self.bc_lowpass_cutoff_hz > 0.0 && self.bc_lowpass_cutoff_hz < 8000.0, "bc_lowpass_cutoff_hz")?;
        check(self.bc_external_lowpass_hz > 0.0 && self.bc_external_lowpass_hz < 8000.0, "bc_external_lowpass_hz")?;
        check(self.bc_external_attenuation_db.is_finite(), "bc_external_attenuation_db")?;
        check(self.train_hours > 0.0, "train_hours")?;
        check(self.test_hours > 0.0, "test_hours")?;
        check(self.snr_clamp_db.0 <= self.snr_clamp_db.1, "snr_clamp_db")?;
        check(self.level_clamp_dbfs.0 <= self.level_clamp_dbfs.1, "level_clamp_dbfs")?;
        Ok(())
    }

    pub fn train_speakers(&self) -> Vec<u32> {
        (0..self.n_speakers - self.n_test_speakers).collect()
    }

    pub fn test_speakers(&self) -> Vec<u32> {
        (self.n_speakers - self.n_test_speakers..self.n_speakers).collect()
    }

    pub fn external_pool(&self, split: Split) -> Vec<u32> {
        let n_train = self.n_external_speakers - self.n_test_external_speakers;
        let base = 10_000;
        match split {
            Split::Train => (base..base + n_train).collect(),
            Split::Test => (base + n_train..base + self.n_external_speakers).collect(),
        }
    }

    pub fn clips_for_hours(&self, hours: f64) -> usize {
        (hours * 3600.0 / self.clip_len_s).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub target_snr_db: f64,
    pub level_dbfs: f64,
    /// Noise gain resolved on the BC channel; 0 until the mixture is built.
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl MixSpec {
    pub fn new(target_snr_db: f64, level_dbfs: f64) -> Self {
        Self {
            target_snr_db,
            level_dbfs,
            gamma: 0.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }

    /// Draws SNR ~ N(15, 5) and level ~ N(-28, 10) (clamped) under `spec`.
    pub fn draw<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Self {
        let snr = Normal::new(spec.snr_mean_db, spec.snr_std_db)
            .expect("finite std")
            .sample(rng)
            .clamp(spec.snr_clamp_db.0, spec.snr_clamp_db.1);
        let level = Normal::new(spec.level_mean_dbfs, spec.level_std_dbfs)
            .expect("finite std")
            .sample(rng)
            .clamp(spec.level_clamp_dbfs.0, spec.level_clamp_dbfs.1);
        Self::new(snr, level)
    }
}

/// Separated, unscaled components of one mixture.
#[derive(Debug, Clone)]
pub struct Stems {
    pub s_bc: AudioClip,
    pub s_ac: AudioClip,
    /// External speech plus external noise, before γ.
    pub noise_bc: AudioClip,
    pub noise_ac: AudioClip,
}

impl Stems {
    pub fn speech(&self, channel: Channel) -> &AudioClip {
        match channel {
            Channel::Bc => &self.s_bc,
            _ => &self.s_ac,
        }
    }

    pub fn noise(&self, channel: Channel) -> &AudioClip {
        match channel {
            Channel::Bc => &self.noise_bc,
            _ => &self.noise_ac,
        }
    }

    /// Native `10·log10(||s||²/||η||²)` of one channel.
    pub fn native_snr_db(&self, channel: Channel) -> f64 {
        10.0 * (self.speech(channel).energy() / self.noise(channel).energy()).log10()
    }

    /// `α·s + β·η` on one channel.
    pub fn mix(&self, channel: Channel, alpha: f64, beta: f64) -> AudioClip {
        let s = self.speech(channel);
        let n = self.noise(channel);
        let samples = s
            .samples
            .iter()
            .zip(&n.samples)
            .map(|(&a, &b)| (alpha * a as f64 + beta * b as f64) as f32)
            .collect();
        AudioClip::new(samples, s.sample_rate_hz, channel, Role::Mixture)
    }
}

#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub id: String,
    pub y_bc: AudioClip,
    pub y_ac: AudioClip,
    pub s_ref: AudioClip,
    /// Smoothed per-frame targets in [0, 1].
    pub labels: Vec<f64>,
    pub raw_labels: Vec<u8>,
    pub stems: Stems,
    pub mix: MixSpec,
    /// Level gains applied to `s + γ·η` to obtain `y_bc` and `y_ac`.
    pub gain_bc: f64,
    pub gain_ac: f64,
}

impl LabeledClip {
    pub fn mixture(&self, channel: Channel) -> &AudioClip {
        match channel {
            Channel::Bc => &self.y_bc,
            _ => &self.y_ac,
        }
    }

    /// Binary targets (smoothed labels re-binarized at 0.5).
    pub fn binary_labels(&self) -> Vec<u8> {
        binarize(&self.labels)
    }

    pub fn active_fraction(&self) -> f64 {
        let n = self.raw_labels.len().max(1);
        self.raw_labels.iter().map(|&v| v as usize).sum::<usize>() as f64 / n as f64
    }

    /// Fills `raw_labels` and `labels` from the clean reference.
    pub fn label(&mut self, cfg: &FrameConfig) -> Result<()> {
        self.raw_labels = generate_labels(&self.s_ref, cfg)?;
        self.labels = smooth_labels(&self.raw_labels, cfg);
        Ok(())
    }
}

/// Mixes `s + γ·(e + η̃)` per channel, γ resolved on BC and reused on AC,
/// then rescales each mixture to the drawn RMS level. Labels are left empty.
pub fn make_mixture(
    id: impl Into<String>,
    target: &TargetStems,
    external_speech: (&AudioClip, &AudioClip),
    external_noise: (&AudioClip, &AudioClip),
    mix: &MixSpec,
) -> Result<LabeledClip> {
    let n = target.bc.len();
    let lens = [
        target.ac.len(),
        target.reference.len(),
        external_speech.0.len(),
        external_speech.1.len(),
        external_noise.0.len(),
        external_noise.1.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Shape("mixture components differ in length".into()));
    }
    let sum = |a: &AudioClip, b: &AudioClip, channel| {
        let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
        AudioClip::new(samples, a.sample_rate_hz, channel, Role::ExternalNoise)
    };
    let noise_bc = sum(external_speech.0, external_noise.0, Channel::Bc);
    let noise_ac = sum(external_speech.1, external_noise.1, Channel::Ac);
    for (what, e) in [
        ("target BC speech", target.bc.energy()),
        ("target AC speech", target.ac.energy()),
        ("BC noise", energy(&noise_bc.samples)),
        ("AC noise", energy(&noise_ac.samples)),
    ] {
        if e == 0.0 {
            return Err(Error::DegenerateInput(format!("{what} has zero energy")));
        }
    }
    let gamma = snr_gain_samples(&target.bc.samples, &noise_bc.samples, mix.target_snr_db)?;
    let stems = Stems {
        s_bc: target.bc.clone(),
        s_ac: target.ac.clone(),
        noise_bc,
        noise_ac,
    };
    let raw_bc = stems.mix(Channel::Bc, 1.0, gamma);
    let raw_ac = stems.mix(Channel::Ac, 1.0, gamma);
    let gain_bc = level_gain(&raw_bc.samples, mix.level_dbfs, LevelMode::RmsDbfs)?;
    let gain_ac = level_gain(&raw_ac.samples, mix.level_dbfs, LevelMode::RmsDbfs)?;
    Ok(LabeledClip {
        id: id.into(),
        y_bc: stems.mix(Channel::Bc, gain_bc, gain_bc * gamma),
        y_ac: stems.mix(Channel::Ac, gain_ac, gain_ac * gamma),
        s_ref: target.reference.clone(),
        labels: Vec::new(),
        raw_labels: Vec::new(),
        stems,
        mix: MixSpec { gamma, ..*mix },
        gain_bc,
        gain_ac,
    })
}

/// Mean over clips of `SNR_BC − SNR_AC` for identical noise realizations.
pub fn snr_advantage_db(clips: &[Stems]) -> f64 {
    clips
        .iter()
        .map(|s| s.native_snr_db(Channel::Bc) - s.native_snr_db(Channel::Ac))
        .sum::<f64>()
        / clips.len().max(1) as f64
}
