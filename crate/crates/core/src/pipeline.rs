//! Streaming engine: sample ingestion, per-hop features, energy gating and
//! inference dispatch to the float or int8 network.

use serde::{Deserialize, Serialize};

use crate::audio::{level_gain, snr_gain, Channel, LevelMode};
use crate::corpus::LabeledClip;
use crate::dsp::{FeatureExtractor, FeatureVector, FrameConfig};
use crate::error::{Error, Result};
use crate::net::{forward_frame, GruState, NetParams};
use crate::power::SocProfile;
use crate::quant::{q_forward_frame, FixedMultiplier, QNetParams, QState};

/// What happens to the recurrent state on a skipped frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipPolicy {
    Hold,
    /// Scale the hidden state toward zero by `factor` per skipped frame.
    Decay { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub enabled: bool,
    pub threshold_db: f64,
    /// Probability emitted for skipped frames.
    pub skip_output: f64,
    pub policy: SkipPolicy,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            threshold_db: -60.0,
            skip_output: 0.0,
            policy: SkipPolicy::Hold,
        }
    }
}

impl GateConfig {
    pub fn at(threshold_db: f64) -> Self {
        Self {
            enabled: true,
            threshold_db,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && self.threshold_db.is_nan() {
            return Err(Error::Config("gate threshold_db is NaN".into()));
        }
        if !(0.0..=1.0).contains(&self.skip_output) {
            return Err(Error::Config(format!("skip_output {} outside [0, 1]", self.skip_output)));
        }
        if let SkipPolicy::Decay { factor } = self.policy {
            if !(0.0..=1.0).contains(&factor) {
                return Err(Error::Config(format!("decay factor {factor} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Process,
    Skip,
}

pub fn gate_decision(energy_db: f64, cfg: &GateConfig) -> GateDecision {
    if cfg.enabled && energy_db < cfg.threshold_db {
        GateDecision::Skip
    } else {
        GateDecision::Process
    }
}

/// Delay from speech onset to the prediction covering it: speech arriving just
/// after a hop boundary waits a full hop, then one frame of processing.
pub fn worst_case_latency_ms(soc: &SocProfile) -> f64 {
    soc.hop_ms + (soc.t_fft_ms + soc.t_infer_ms)
}

#[derive(Debug, Clone)]
pub enum Engine {
    Float(NetParams),
    Int8(QNetParams<i8>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineState {
    Float(GruState),
    Int8(QState<i8>),
}

impl Engine {
    pub fn n_mels(&self) -> usize {
        match self {
            Engine::Float(p) => p.config().n_mels,
            Engine::Int8(q) => q.config.n_mels,
        }
    }

    pub fn initial_state(&self) -> EngineState {
        match self {
            Engine::Float(p) => EngineState::Float(GruState::zeros(p)),
            Engine::Int8(q) => EngineState::Int8(QState::zeros(q)),
        }
    }

    pub fn step(&self, state: &EngineState, x: &FeatureVector) -> Result<(f64, EngineState)> {
        match (self, state) {
            (Engine::Float(p), EngineState::Float(s)) => {
                let (prob, _, next) = forward_frame(p, s, x)?;
                Ok((prob, EngineState::Float(next)))
            }
            (Engine::Int8(q), EngineState::Int8(s)) => {
                let (prob, next) = q_forward_frame(q, s, x)?;
                Ok((prob, EngineState::Int8(next)))
            }
            _ => Err(Error::Contract("engine and state kinds differ".into())),
        }
    }

    fn decay(&self, state: &mut EngineState, factor: f64) -> Result<()> {
        match (self, state) {
            (Engine::Float(_), EngineState::Float(s)) => {
                s.h1.iter_mut().chain(s.h2.iter_mut()).for_each(|h| *h *= factor);
            }
            (Engine::Int8(q), EngineState::Int8(s)) => {
                let m = FixedMultiplier::new(factor)?;
                for (h, zp) in [(&mut s.h1, q.gru1.hidden.zero_point), (&mut s.h2, q.gru2.hidden.zero_point)] {
                    for v in h.iter_mut() {
                        let d = m.apply(*v as i64 - zp as i64);
                        *v = (zp as i64 + d).clamp(i8::MIN as i64, i8::MAX as i64) as i8;
                    }
                }
            }
            _ => return Err(Error::Contract("engine and state kinds differ".into())),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub frame_index: usize,
    pub probability: f64,
    pub label: u8,
    pub skipped: bool,
    pub latency_ms: f64,
    pub energy_db: f64,
}

/// Per-stream mutable state.
#[derive(Debug, Clone)]
pub struct StreamState {
    /// Samples from the start of the next frame onward.
    buffer: Vec<f32>,
    frame_index: usize,
    recurrent: EngineState,
    frames_total: usize,
    frames_skipped: usize,
}

impl StreamState {
    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn recurrent(&self) -> &EngineState {
        &self.recurrent
    }

    pub fn frames_total(&self) -> usize {
        self.frames_total
    }

    pub fn frames_skipped(&self) -> usize {
        self.frames_skipped
    }

    pub fn skip_fraction(&self) -> f64 {
        if self.frames_total == 0 {
            0.0
        } else {
            self.frames_skipped as f64 / self.frames_total as f64
        }
    }

    /// New samples not yet covered by an emitted prediction.
    pub fn pending_samples(&self, cfg: &FrameConfig) -> usize {
        if self.frame_index == 0 {
            self.buffer.len()
        } else {
            self.buffer.len() - (cfg.frame_len - cfg.hop)
        }
    }
}

/// Immutable engine plus front end; one [`StreamState`] per audio stream.
#[derive(Debug, Clone)]
pub struct Pipeline {
    engine: Engine,
    fx: FeatureExtractor,
    gate: GateConfig,
    soc: SocProfile,
}

impl Pipeline {
    pub fn new(engine: Engine, frame: FrameConfig, gate: GateConfig) -> Result<Self> {
        gate.validate()?;
        let fx = FeatureExtractor::new(frame)?;
        if engine.n_mels() != frame.n_mels {
            return Err(Error::Config(format!(
                "model expects {} mel bands, front end produces {}",
                engine.n_mels(),
                frame.n_mels
            )));
        }
        Ok(Self {
            engine,
            fx,
            gate,
            soc: SocProfile::apollo4(),
        })
    }

    /// Timing profile used for the per-prediction latency model.
    pub fn with_profile(mut self, soc: SocProfile) -> Self {
        self.soc = soc;
        self
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn gate(&self) -> &GateConfig {
        &self.gate
    }

    pub fn frame_config(&self) -> &FrameConfig {
        self.fx.config()
    }

    pub fn new_stream(&self) -> StreamState {
        StreamState {
            buffer: Vec::with_capacity(2 * self.fx.config().frame_len),
            frame_index: 0,
            recurrent: self.engine.initial_state(),
            frames_total: 0,
            frames_skipped: 0,
        }
    }

    /// Appends samples and emits one prediction per completed frame.
    pub fn push_samples(&self, st: &mut StreamState, samples: &[f32]) -> Result<Vec<Prediction>> {
        let cfg = *self.fx.config();
        st.buffer.extend_from_slice(samples);
        let mut out = Vec::new();
        let mut start = 0;
        while st.buffer.len() - start >= cfg.frame_len {
            let frame = &st.buffer[start..start + cfg.frame_len];
            let features = self.fx.extract(frame, st.frame_index)?;
            out.push(self.process(st, &features)?);
            start += cfg.hop;
        }
        st.buffer.drain(..start);
        Ok(out)
    }

    fn process(&self, st: &mut StreamState, x: &FeatureVector) -> Result<Prediction> {
        st.frames_total += 1;
        let skipped = gate_decision(x.energy_db, &self.gate) == GateDecision::Skip;
        let (probability, latency_ms) = if skipped {
            st.frames_skipped += 1;
            if let SkipPolicy::Decay { factor } = self.gate.policy {
                self.engine.decay(&mut st.recurrent, factor)?;
            }
            (self.gate.skip_output, self.soc.hop_ms + self.soc.t_fft_ms)
        } else {
            let (p, next) = self.engine.step(&st.recurrent, x)?;
            st.recurrent = next;
            (p, worst_case_latency_ms(&self.soc))
        };
        let pred = Prediction {
            frame_index: x.frame_index,
            probability,
            label: (probability > 0.5) as u8,
            skipped,
            latency_ms,
            energy_db: x.energy_db,
        };
        st.frame_index += 1;
        Ok(pred)
    }

    /// Runs a whole clip through a fresh stream.
    pub fn run(&self, samples: &[f32]) -> Result<(Vec<Prediction>, StreamState)> {
        let mut st = self.new_stream();
        let preds = self.push_samples(&mut st, samples)?;
        Ok((preds, st))
    }
}

pub fn predictions_to_csv(preds: &[Prediction]) -> String {
    let mut out = String::from("frame_index,probability,label,skipped,energy_db\n");
    for p in preds {
        out.push_str(&format!(
            "{},{:.6},{},{},{:.3}\n",
            p.frame_index, p.probability, p.label, p.skipped as u8, p.energy_db
        ));
    }
    out
}

/// Remixes one clip's stems on `channel` at `snr_db`, normalized to `peak_dbfs`.
pub fn normalized_mixture(clip: &LabeledClip, channel: Channel, snr_db: f64, peak_dbfs: f64) -> Result<Vec<f32>> {
    let stems = &clip.stems;
    let gamma = snr_gain(stems.speech(channel), stems.noise(channel), snr_db)?;
    let raw = stems.mix(channel, 1.0, gamma);
    let g = level_gain(&raw.samples, peak_dbfs, LevelMode::PeakDbfs)?;
    Ok(stems.mix(channel, g, g * gamma).samples)
}

/// Audio plus per-frame binary labels for one evaluation clip.
#[derive(Debug, Clone)]
pub struct SweepClip {
    pub samples: Vec<f32>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold_db: f64,
    pub skip_fraction: f64,
    pub accuracy: f64,
}

/// Runs the gated pipeline over `clips` once per threshold.
pub fn gate_sweep(
    engine: &Engine,
    frame: FrameConfig,
    base: GateConfig,
    clips: &[SweepClip],
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(Error::Config("gate sweep needs at least one threshold".into()));
    }
    if clips.is_empty() {
        return Err(Error::Config("gate sweep needs at least one clip".into()));
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let gate = GateConfig {
            enabled: true,
            threshold_db: t,
            ..base
        };
        let pipe = Pipeline::new(engine.clone(), frame, gate)?;
        let (mut total, mut skipped, mut correct, mut scored) = (0usize, 0usize, 0usize, 0usize);
        for clip in clips {
            let (preds, st) = pipe.run(&clip.samples)?;
            total += st.frames_total();
            skipped += st.frames_skipped();
            for (p, &y) in preds.iter().zip(&clip.labels) {
                correct += (p.label == y) as usize;
                scored += 1;
            }
        }
        rows.push(SweepRow {
            threshold_db: t,
            skip_fraction: skipped as f64 / total.max(1) as f64,
            accuracy: correct as f64 / scored.max(1) as f64,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold_db,skip_fraction,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.threshold_db, r.skip_fraction, r.accuracy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NetConfig};
    use crate::quant::{calibrate, quantize_net, CalibrationMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn engine() -> Engine {
        Engine::Float(init_params(NetConfig::default(), 5).unwrap())
    }

    fn noise(n: usize, seed: u64, amp: f32) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-amp..amp)).collect()
    }

    /// Quiet noise with louder bursts, so frame energies spread over a wide range.
    fn bursty(n: usize, seed: u64) -> Vec<f32> {
        let base = noise(n, seed, 1.0);
        base.iter()
            .enumerate()
            .map(|(i, &x)| x * if (i / 2000) % 3 == 0 { 0.3 } else { 0.001 })
            .collect()
    }

    #[test]
    fn framing_arithmetic() {
        let pipe = Pipeline::new(engine(), FrameConfig::default(), GateConfig::default()).unwrap();
        let cfg = *pipe.frame_config();
        let mut st = pipe.new_stream();
        assert_eq!(pipe.push_samples(&mut st, &noise(319, 1, 0.1)).unwrap().len(), 0);
        assert_eq!(st.pending_samples(&cfg), 319);
        assert_eq!(pipe.push_samples(&mut st, &noise(1, 2, 0.1)).unwrap().len(), 1);
        assert_eq!(st.pending_samples(&cfg), 0);
        assert_eq!(pipe.push_samples(&mut st, &noise(160, 3, 0.1)).unwrap().len(), 1);
        let preds = pipe.push_samples(&mut st, &noise(170, 4, 0.1)).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].frame_index, 2);
        assert_eq!(st.pending_samples(&cfg), 10);
    }

    #[test]
    fn gate_decisions() {
        let off = GateConfig::default();
        assert_eq!(gate_decision(-200.0, &off), GateDecision::Process);
        assert_eq!(gate_decision(-80.0, &GateConfig::at(-60.0)), GateDecision::Skip);
        assert_eq!(gate_decision(-40.0, &GateConfig::at(-60.0)), GateDecision::Process);
        assert_eq!(gate_decision(-1e300, &GateConfig::at(f64::NEG_INFINITY)), GateDecision::Process);
    }

    #[test]
    fn latency_model() {
        let a = SocProfile::apollo4();
        assert!((worst_case_latency_ms(&a) - 12.8).abs() < 1e-12);
        let n = SocProfile::nrf5340();
        assert!((worst_case_latency_ms(&n) - 12.99).abs() < 1e-12);
        let idle = SocProfile {
            t_fft_ms: 0.0,
            t_infer_ms: 0.0,
            ..a
        };
        assert_eq!(worst_case_latency_ms(&idle), 10.0);
    }

    #[test]
    fn vacuous_gate_matches_ungated() {
        let x = bursty(16000, 9);
        let off = Pipeline::new(engine(), FrameConfig::default(), GateConfig::default()).unwrap();
        let inf = Pipeline::new(engine(), FrameConfig::default(), GateConfig::at(f64::NEG_INFINITY)).unwrap();
        let (a, _) = off.run(&x).unwrap();
        let (b, st) = inf.run(&x).unwrap();
        assert_eq!(st.frames_skipped(), 0);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.probability.to_bits(), q.probability.to_bits());
        }
    }

    #[test]
    fn ungated_equals_direct_inference() {
        let x = bursty(8000, 3);
        let params = init_params(NetConfig::default(), 5).unwrap();
        let pipe = Pipeline::new(Engine::Float(params.clone()), FrameConfig::default(), GateConfig::default()).unwrap();
        let (preds, _) = pipe.run(&x).unwrap();
        let fx = FeatureExtractor::new(FrameConfig::default()).unwrap();
        let direct = crate::net::predict_clip(&params, &fx.extract_all(&x)).unwrap();
        assert_eq!(preds.len(), direct.len());
        for (p, d) in preds.iter().zip(&direct) {
            assert_eq!(p.probability.to_bits(), d.to_bits());
        }
    }

    #[test]
    fn skipped_frames_hold_state() {
        let mut x = noise(3200, 1, 0.3);
        x.extend(vec![0.0f32; 3200]);
        // Digital silence sits exactly on the -60 dB energy floor.
        let pipe = Pipeline::new(engine(), FrameConfig::default(), GateConfig::at(-59.0)).unwrap();
        let mut st = pipe.new_stream();
        pipe.push_samples(&mut st, &x[..3200]).unwrap();
        let preds = pipe.push_samples(&mut st, &x[3200..]).unwrap();
        let silent: Vec<_> = preds.iter().filter(|p| p.skipped).collect();
        assert!(silent.len() >= 15);
        assert!(silent.iter().all(|p| p.probability == 0.0 && p.label == 0));
        assert!(silent.iter().all(|p| (p.latency_ms - 10.73).abs() < 1e-9));
        assert!(preds.last().unwrap().skipped);
        // Every frame after the first fully silent one was skipped, so the state is untouched since then.
        let first_silent = preds.iter().position(|p| p.skipped).unwrap();
        assert!(preds[first_silent..].iter().all(|p| p.skipped));
        let mut st2 = pipe.new_stream();
        pipe.push_samples(&mut st2, &x[..3200 + (first_silent + 1) * 160]).unwrap();
        assert_eq!(st.recurrent(), st2.recurrent());
    }

    #[test]
    fn decay_policy_shrinks_state() {
        let mut x = noise(3200, 2, 0.3);
        x.extend(vec![0.0f32; 8000]);
        let gate = GateConfig {
            policy: SkipPolicy::Decay { factor: 0.5 },
            ..GateConfig::at(-59.0)
        };
        let pipe = Pipeline::new(engine(), FrameConfig::default(), gate).unwrap();
        let (_, st) = pipe.run(&x).unwrap();
        match st.recurrent() {
            EngineState::Float(s) => assert!(s.h1.iter().chain(&s.h2).all(|h| h.abs() < 1e-6)),
            _ => unreachable!(),
        }
        let bad = GateConfig {
            policy: SkipPolicy::Decay { factor: 2.0 },
            ..gate
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn int8_engine_streams() {
        let params = init_params(NetConfig::default(), 5).unwrap();
        let fx = FeatureExtractor::new(FrameConfig::default()).unwrap();
        let x = bursty(32000, 4);
        let feats = fx.extract_all(&x);
        let stats = calibrate(&params, &[&feats], CalibrationMode::default()).unwrap();
        let q = quantize_net(&params, &stats).unwrap();
        let pipe = Pipeline::new(Engine::Int8(q.clone()), FrameConfig::default(), GateConfig::default()).unwrap();
        let (preds, _) = pipe.run(&x).unwrap();
        let direct = crate::quant::q_predict_clip(&q, &feats).unwrap();
        assert!(preds.iter().zip(&direct).all(|(p, d)| p.probability == *d));
        let gate = GateConfig {
            policy: SkipPolicy::Decay { factor: 0.0 },
            ..GateConfig::at(f64::INFINITY)
        };
        let pipe = Pipeline::new(Engine::Int8(q.clone()), FrameConfig::default(), gate).unwrap();
        let (_, st) = pipe.run(&x).unwrap();
        assert_eq!(st.recurrent(), &EngineState::Int8(QState::zeros(&q)));
    }

    #[test]
    fn mismatched_front_end_rejected() {
        let cfg = FrameConfig {
            n_mels: 8,
            ..FrameConfig::default()
        };
        assert!(matches!(Pipeline::new(engine(), cfg, GateConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_is_monotone_with_degenerate_ends() {
        let clips: Vec<SweepClip> = (0..3)
            .map(|s| {
                let samples = bursty(16000, s);
                let n = FrameConfig::default().frame_count(samples.len());
                let labels = (0..n).map(|k| ((k * 160 / 2000) % 3 == 0) as u8).collect();
                SweepClip { samples, labels }
            })
            .collect();
        let thresholds = [f64::NEG_INFINITY, -80.0, -60.0, -40.0, -20.0, 0.0, f64::INFINITY];
        let rows = gate_sweep(&engine(), FrameConfig::default(), GateConfig::default(), &clips, &thresholds).unwrap();
        assert_eq!(rows[0].skip_fraction, 0.0);
        assert_eq!(rows.last().unwrap().skip_fraction, 1.0);
        for w in rows.windows(2) {
            assert!(w[1].skip_fraction >= w[0].skip_fraction);
        }
        // All-skip accuracy is that of the constant "no speech" predictor.
        let negatives: usize = clips.iter().map(|c| c.labels.iter().filter(|&&y| y == 0).count()).sum();
        let total: usize = clips.iter().map(|c| c.labels.len()).sum();
        assert!((rows.last().unwrap().accuracy - negatives as f64 / total as f64).abs() < 1e-12);
        assert!(matches!(
            gate_sweep(&engine(), FrameConfig::default(), GateConfig::default(), &clips, &[]),
            Err(Error::Config(_))
        ));
        assert_eq!(sweep_to_csv(&rows).lines().count(), 8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn chunking_invariance(cuts in prop::collection::vec(0usize..16000, 0..12), gated in any::<bool>()) {
            let x = bursty(16000, 11);
            let gate = if gated { GateConfig::at(-45.0) } else { GateConfig::default() };
            let pipe = Pipeline::new(engine(), FrameConfig::default(), gate).unwrap();
            let (whole, st_whole) = pipe.run(&x).unwrap();
            let mut cuts = cuts;
            cuts.push(0);
            cuts.push(x.len());
            cuts.sort_unstable();
            let mut st = pipe.new_stream();
            let mut pieces = Vec::new();
            for w in cuts.windows(2) {
                pieces.extend(pipe.push_samples(&mut st, &x[w[0]..w[1]]).unwrap());
            }
            prop_assert_eq!(&pieces, &whole);
            prop_assert_eq!(st.recurrent(), st_whole.recurrent());
            prop_assert!(st.frames_skipped() <= st.frames_total());
        }

        #[test]
        fn raising_threshold_never_reduces_skips(a in -100.0f64..0.0, b in -100.0f64..0.0) {
            let x = bursty(8000, 5);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let run = |t| Pipeline::new(engine(), FrameConfig::default(), GateConfig::at(t)).unwrap().run(&x).unwrap().1.frames_skipped();
            prop_assert!(run(hi) >= run(lo));
        }
    }
}
