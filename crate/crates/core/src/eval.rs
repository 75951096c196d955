//! Detection metrics and the SNR evaluation harnesses.
//!
//! All rates are frame-weighted and pooled over every clip of a grid point.

use serde::{Deserialize, Serialize};

use crate::audio::{energy, level_gain, snr_gain, snr_db_from_energies, Channel, LevelMode};
use crate::corpus::{LabeledClip, Stems};
use crate::dsp::FrameConfig;
use crate::error::{Error, Result};
use crate::pipeline::{Engine, GateConfig, Pipeline};

pub const MISS_WEIGHT: f64 = 0.75;
pub const FA_WEIGHT: f64 = 0.25;

pub fn dcf(miss_rate: f64, fa_rate: f64) -> f64 {
    MISS_WEIGHT * miss_rate + FA_WEIGHT * fa_rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    pub dcf: f64,
    pub acc: f64,
    pub miss_rate: f64,
    pub fa_rate: f64,
    pub n_frames: usize,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData("no frames to score".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

/// Area under the ROC curve traced over every unique score threshold.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Frame-level metrics at `threshold` (a frame is speech when `p > threshold`).
pub fn compute_metrics(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    check_inputs(probabilities, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probabilities.iter().zip(labels) {
        match (p > threshold, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let miss_rate = rate(fn_, tp + fn_);
    let fa_rate = rate(fp, fp + tn);
    let auc = match roc_auc(probabilities, labels) {
        Ok(a) => Some(a),
        Err(Error::AucUndefined) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        auc,
        dcf: dcf(miss_rate, fa_rate),
        acc: rate(tp + tn, labels.len()),
        miss_rate,
        fa_rate,
        n_frames: labels.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarnessMode {
    /// AC stems scaled to the grid SNR; the same gains applied to BC.
    EqualEnvironment,
    /// Each channel scaled independently to the grid SNR.
    EqualSnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub mode: HarnessMode,
    pub snr_grid_db: Vec<f64>,
    pub threshold: f64,
}

impl HarnessConfig {
    pub fn new(mode: HarnessMode, snr_grid_db: Vec<f64>) -> Self {
        Self {
            mode,
            snr_grid_db,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(Error::Config("snr_grid_db must not be empty".into()));
        }
        if let Some(v) = self.snr_grid_db.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("snr_grid_db contains non-finite value {v}")));
        }
        Ok(())
    }
}

/// Speech and noise coefficients applied to one channel's stems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGains {
    pub alpha: f64,
    pub beta: f64,
}

/// Gains putting `channel` at `snr_db` with the mixture at `level_dbfs` RMS.
pub fn gains_for_snr(stems: &Stems, channel: Channel, snr_db: f64, level_dbfs: f64) -> Result<ChannelGains> {
    let gamma = snr_gain(stems.speech(channel), stems.noise(channel), snr_db)?;
    let raw = stems.mix(channel, 1.0, gamma);
    let g = level_gain(&raw.samples, level_dbfs, LevelMode::RmsDbfs)?;
    Ok(ChannelGains {
        alpha: g,
        beta: g * gamma,
    })
}

/// `10·log10(||α·s||² / ||β·η||²)` with the gains applied to the samples.
pub fn realized_snr_db(stems: &Stems, channel: Channel, g: ChannelGains) -> f64 {
    let scaled = |x: &[f32], k: f64| x.iter().map(|&v| (k * v as f64) as f32).collect::<Vec<f32>>();
    let s = scaled(&stems.speech(channel).samples, g.alpha);
    let n = scaled(&stems.noise(channel).samples, g.beta);
    snr_db_from_energies(energy(&s), energy(&n))
}

/// Per-channel gains for one clip at one grid point.
pub fn harness_gains(clip: &LabeledClip, mode: HarnessMode, snr_db: f64) -> Result<(ChannelGains, ChannelGains)> {
    let level = clip.mix.level_dbfs;
    let ac = gains_for_snr(&clip.stems, Channel::Ac, snr_db, level)?;
    let bc = match mode {
        HarnessMode::EqualEnvironment => ac,
        HarnessMode::EqualSnr => gains_for_snr(&clip.stems, Channel::Bc, snr_db, level)?,
    };
    Ok((bc, ac))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessRow {
    pub snr_db: f64,
    pub model: Channel,
    pub metrics: MetricsReport,
    /// Mean realized SNR of this model's input channel over the batch.
    pub mean_snr_db: f64,
    /// Mean over clips of `SNR_BC − SNR_AC` at this grid point.
    pub mean_snr_advantage_db: f64,
}

fn clip_predictions(pipe: &Pipeline, samples: &[f32], n_labels: usize) -> Result<Vec<f64>> {
    let (preds, _) = pipe.run(samples)?;
    Ok(preds.into_iter().take(n_labels).map(|p| p.probability).collect())
}

/// Evaluates the BC and AC models on remixed test clips at every grid SNR.
/// Rows come in grid order, BC before AC.
pub fn run_harness(
    bc_model: &Engine,
    ac_model: &Engine,
    clips: &[LabeledClip],
    frame: FrameConfig,
    cfg: &HarnessConfig,
) -> Result<Vec<HarnessRow>> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Config("harness needs at least one test clip".into()));
    }
    let bc_pipe = Pipeline::new(bc_model.clone(), frame, GateConfig::default())?;
    let ac_pipe = Pipeline::new(ac_model.clone(), frame, GateConfig::default())?;
    let mut rows = Vec::with_capacity(cfg.snr_grid_db.len() * 2);
    for &snr in &cfg.snr_grid_db {
        let (mut pb, mut pa, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        let (mut snr_bc, mut snr_ac) = (0.0, 0.0);
        for clip in clips {
            let (gb, ga) = harness_gains(clip, cfg.mode, snr)?;
            let y = clip.binary_labels();
            let bc = clip.stems.mix(Channel::Bc, gb.alpha, gb.beta);
            let ac = clip.stems.mix(Channel::Ac, ga.alpha, ga.beta);
            let b = clip_predictions(&bc_pipe, &bc.samples, y.len())?;
            let a = clip_predictions(&ac_pipe, &ac.samples, y.len())?;
            let n = b.len().min(a.len());
            pb.extend_from_slice(&b[..n]);
            pa.extend_from_slice(&a[..n]);
            labels.extend_from_slice(&y[..n]);
            snr_bc += realized_snr_db(&clip.stems, Channel::Bc, gb);
            snr_ac += realized_snr_db(&clip.stems, Channel::Ac, ga);
        }
        let k = clips.len() as f64;
        let (snr_bc, snr_ac) = (snr_bc / k, snr_ac / k);
        for (model, probs, mean_snr) in [(Channel::Bc, &pb, snr_bc), (Channel::Ac, &pa, snr_ac)] {
            rows.push(HarnessRow {
                snr_db: snr,
                model,
                metrics: compute_metrics(probs, &labels, cfg.threshold)?,
                mean_snr_db: mean_snr,
                mean_snr_advantage_db: snr_bc - snr_ac,
            });
        }
    }
    Ok(rows)
}

pub fn equal_environment_harness(
    bc_model: &Engine,
    ac_model: &Engine,
    clips: &[LabeledClip],
    frame: FrameConfig,
    snr_ac_grid: &[f64],
) -> Result<Vec<HarnessRow>> {
    run_harness(bc_model, ac_model, clips, frame, &HarnessConfig::new(HarnessMode::EqualEnvironment, snr_ac_grid.to_vec()))
}

pub fn equal_snr_harness(
    bc_model: &Engine,
    ac_model: &Engine,
    clips: &[LabeledClip],
    frame: FrameConfig,
    snr_grid: &[f64],
) -> Result<Vec<HarnessRow>> {
    run_harness(bc_model, ac_model, clips, frame, &HarnessConfig::new(HarnessMode::EqualSnr, snr_grid.to_vec()))
}

pub fn harness_to_csv(rows: &[HarnessRow]) -> String {
    let mut out = String::from("snr_db,model,auc,dcf,acc,miss,fa,mean_snr_db,snr_advantage_db\n");
    for r in rows {
        let m = &r.metrics;
        let auc = m.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        let model = match r.model {
            Channel::Bc => "bc",
            _ => "ac",
        };
        out.push_str(&format!(
            "{},{model},{auc},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}\n",
            r.snr_db, m.dcf, m.acc, m.miss_rate, m.fa_rate, r.mean_snr_db, r.mean_snr_advantage_db
        ));
    }
    out
}
