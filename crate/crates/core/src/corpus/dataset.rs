use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    derive_seed, make_mixture, smooth_labels, synth_external, synth_target_speech, ExternalKind,
    LabeledClip, MixSpec, Stems, SynthSpec,
};
use crate::audio::{read_wav, write_wav, AudioClip, Channel, Role};
use crate::dsp::{FeatureExtractor, FeatureVector, FrameConfig};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Paths relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFiles {
    pub y_bc: String,
    pub y_ac: String,
    pub s_ref: String,
    pub s_bc: String,
    pub s_ac: String,
    pub noise_bc: String,
    pub noise_ac: String,
    pub labels: String,
}

impl ClipFiles {
    fn for_id(id: &str) -> Self {
        let p = |stem: &str| format!("clips/{id}/{stem}.wav");
        Self {
            y_bc: p("y_bc"),
            y_ac: p("y_ac"),
            s_ref: p("s_ref"),
            s_bc: p("s_bc"),
            s_ac: p("s_ac"),
            noise_bc: p("noise_bc"),
            noise_ac: p("noise_ac"),
            labels: format!("clips/{id}/labels.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub speaker_id: u32,
    pub mix: MixSpec,
    pub files: ClipFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: SynthSpec,
    pub frame: FrameConfig,
    pub train: Vec<ClipEntry>,
    pub test: Vec<ClipEntry>,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> &[ClipEntry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} (expected {MANIFEST_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

/// Share of clips with low (<25%), medium (25–60%) and high (>60%) speech content.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActiveDistribution {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl ActiveDistribution {
    pub fn from_fractions(fractions: &[f64]) -> Self {
        let n = fractions.len().max(1) as f64;
        let count = |f: &dyn Fn(f64) -> bool| fractions.iter().filter(|&&x| f(x)).count() as f64 / n;
        Self {
            low: count(&|x| x < 0.25),
            medium: count(&|x| (0.25..=0.60).contains(&x)),
            high: count(&|x| x > 0.60),
        }
    }
}

/// Clip list with seeds, speakers and mix draws; no audio is rendered.
pub fn plan_dataset(spec: &SynthSpec) -> Result<Manifest> {
    spec.validate()?;
    let plan = |split: Split, n: usize, speakers: Vec<u32>| -> Vec<ClipEntry> {
        let tag = match split {
            Split::Train => 1u64 << 32,
            Split::Test => 2u64 << 32,
        };
        (0..n)
            .map(|i| {
                let seed = derive_seed(spec.seed, tag + i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let speaker_id = speakers[rng.random_range(0..speakers.len())];
                let mix = MixSpec::draw(spec, &mut rng);
                let id = format!("{}-{i:05}", match split {
                    Split::Train => "train",
                    Split::Test => "test",
                });
                ClipEntry {
                    files: ClipFiles::for_id(&id),
                    id,
                    split,
                    seed,
                    speaker_id,
                    mix,
                }
            })
            .collect()
    };
    let train = plan(Split::Train, spec.clips_for_hours(spec.train_hours), spec.train_speakers());
    let test = plan(Split::Test, spec.clips_for_hours(spec.test_hours), spec.test_speakers());
    Ok(Manifest {
        format_version: MANIFEST_VERSION,
        spec: spec.clone(),
        frame: FrameConfig::default(),
        train,
        test,
    })
}

/// Deterministically renders one clip (audio, stems and labels) from its entry.
pub fn render_clip(spec: &SynthSpec, entry: &ClipEntry, cfg: &FrameConfig) -> Result<LabeledClip> {
    let pool = spec.external_pool(entry.split);
    let target = synth_target_speech(spec, entry.speaker_id, spec.clip_len_s, derive_seed(entry.seed, 1));
    let speech = synth_external(spec, ExternalKind::ExternalSpeech, &pool, spec.clip_len_s, derive_seed(entry.seed, 2));
    let noise = synth_external(spec, ExternalKind::ExternalNoise, &pool, spec.clip_len_s, derive_seed(entry.seed, 3));
    let mut clip = make_mixture(
        entry.id.clone(),
        &target,
        (&speech.0, &speech.1),
        (&noise.0, &noise.1),
        &entry.mix,
    )?;
    clip.label(cfg)?;
    Ok(clip)
}

#[derive(Debug, Clone)]
pub struct DatasetBuild {
    pub manifest: Manifest,
    pub distribution: ActiveDistribution,
}

/// Renders every planned clip. With `out_dir`, writes per-stem WAVs, label
/// CSVs and `manifest.json` there.
pub fn build_dataset(spec: &SynthSpec, out_dir: Option<&Path>) -> Result<DatasetBuild> {
    let mut manifest = plan_dataset(spec)?;
    let cfg = manifest.frame;
    let mut fractions = Vec::new();
    for split in [Split::Train, Split::Test] {
        let entries = match split {
            Split::Train => &mut manifest.train,
            Split::Test => &mut manifest.test,
        };
        for entry in entries.iter_mut() {
            let clip = render_clip(spec, entry, &cfg)?;
            entry.mix = clip.mix;
            fractions.push(clip.active_fraction());
            if let Some(dir) = out_dir {
                write_clip(dir, entry, &clip)?;
            }
            log::debug!("rendered {}", entry.id);
        }
    }
    if let Some(dir) = out_dir {
        manifest.save(dir.join("manifest.json"))?;
    }
    Ok(DatasetBuild {
        manifest,
        distribution: ActiveDistribution::from_fractions(&fractions),
    })
}

fn write_clip(root: &Path, entry: &ClipEntry, clip: &LabeledClip) -> Result<()> {
    let dir = root.join("clips").join(&entry.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let f = &entry.files;
    write_wav(&clip.y_bc, root.join(&f.y_bc))?;
    write_wav(&clip.y_ac, root.join(&f.y_ac))?;
    write_wav(&clip.s_ref, root.join(&f.s_ref))?;
    write_wav(&clip.stems.s_bc, root.join(&f.s_bc))?;
    write_wav(&clip.stems.s_ac, root.join(&f.s_ac))?;
    write_wav(&clip.stems.noise_bc, root.join(&f.noise_bc))?;
    write_wav(&clip.stems.noise_ac, root.join(&f.noise_ac))?;
    let mut csv = String::from("frame_index,raw,smoothed\n");
    for (i, (r, s)) in clip.raw_labels.iter().zip(&clip.labels).enumerate() {
        let _ = writeln!(csv, "{i},{r},{s}");
    }
    let path = root.join(&f.labels);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<u8>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad label row `{line}`", path.display())))
        })
        .collect()
}

/// Loads a written clip (mixtures, stems, labels) from disk.
pub fn load_clip(root: &Path, entry: &ClipEntry, cfg: &FrameConfig) -> Result<LabeledClip> {
    let load = |rel: &str, channel: Channel, role: Role| -> Result<AudioClip> {
        let path: PathBuf = root.join(rel);
        if !path.exists() {
            return Err(Error::Manifest(format!("clip {}: missing file {}", entry.id, path.display())));
        }
        let mut c = read_wav(&path)?;
        c.channel = channel;
        c.role = role;
        Ok(c)
    };
    let f = &entry.files;
    let stems = Stems {
        s_bc: load(&f.s_bc, Channel::Bc, Role::TargetSpeech)?,
        s_ac: load(&f.s_ac, Channel::Ac, Role::TargetSpeech)?,
        noise_bc: load(&f.noise_bc, Channel::Bc, Role::ExternalNoise)?,
        noise_ac: load(&f.noise_ac, Channel::Ac, Role::ExternalNoise)?,
    };
    let label_path = root.join(&f.labels);
    if !label_path.exists() {
        return Err(Error::Manifest(format!("clip {}: missing labels {}", entry.id, label_path.display())));
    }
    let raw_labels = read_labels(&label_path)?;
    let labels = smooth_labels(&raw_labels, cfg);
    Ok(LabeledClip {
        id: entry.id.clone(),
        y_bc: load(&f.y_bc, Channel::Bc, Role::Mixture)?,
        y_ac: load(&f.y_ac, Channel::Ac, Role::Mixture)?,
        s_ref: load(&f.s_ref, Channel::AcRef, Role::TargetSpeech)?,
        labels,
        raw_labels,
        stems,
        mix: entry.mix,
        gain_bc: 1.0,
        gain_ac: 1.0,
    })
}

/// Network-ready view of one clip on one channel.
#[derive(Debug, Clone)]
pub struct ClipFeatures {
    pub id: String,
    pub features: Vec<FeatureVector>,
    /// Smoothed soft targets.
    pub targets: Vec<f64>,
    /// Targets re-binarized at 0.5.
    pub labels: Vec<u8>,
}

impl ClipFeatures {
    pub fn from_samples(id: impl Into<String>, samples: &[f32], targets: &[f64], fx: &FeatureExtractor) -> Self {
        let features = fx.extract_all(samples);
        let n = features.len().min(targets.len());
        let targets = targets[..n].to_vec();
        Self {
            id: id.into(),
            features: features.into_iter().take(n).collect(),
            labels: super::binarize(&targets),
            targets,
        }
    }

    pub fn from_clip(clip: &LabeledClip, channel: Channel, fx: &FeatureExtractor) -> Self {
        Self::from_samples(clip.id.clone(), &clip.mixture(channel).samples, &clip.labels, fx)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}
