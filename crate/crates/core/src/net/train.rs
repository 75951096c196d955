use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::accumulate_gradient;
use super::forward::{bce_loss, forward_values, FrameTrace, GruState};
use super::NetParams;
use crate::corpus::ClipFeatures;
use crate::dsp::FeatureVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub lr_halve_patience: usize,
    pub early_stop_patience: usize,
    /// Frames per training excerpt (300 = 3 s).
    pub bptt_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            steps_per_epoch: 2000,
            lr_halve_patience: 3,
            early_stop_patience: 5,
            bptt_len: 300,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
            max_epochs: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("steps_per_epoch", self.steps_per_epoch),
            ("lr_halve_patience", self.lr_halve_patience),
            ("early_stop_patience", self.early_stop_patience),
            ("bptt_len", self.bptt_len),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("`lr` and `eps` must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr`.
pub fn adam_step(params: &mut NetParams, grads: &NetParams, state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    let n = params.values.len();
    if grads.values.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape("Adam parameter/gradient/moment lengths differ".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..n {
        let g = grads.values[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerAction {
    Improved,
    Continue,
    HalveLr,
    Stop,
}

/// Halves the learning rate after `halve_patience` epochs without a new best
/// test loss and stops after `stop_patience`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: f64,
    halve_patience: usize,
    stop_patience: usize,
    since_best: usize,
    since_halve: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, initial_loss: f64, halve_patience: usize, stop_patience: usize) -> Self {
        Self {
            lr,
            best: initial_loss,
            halve_patience,
            stop_patience,
            since_best: 0,
            since_halve: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> SchedulerAction {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            self.since_halve = 0;
            return SchedulerAction::Improved;
        }
        self.since_best += 1;
        self.since_halve += 1;
        if self.since_best >= self.stop_patience {
            return SchedulerAction::Stop;
        }
        if self.since_halve >= self.halve_patience {
            self.since_halve = 0;
            self.lr *= 0.5;
            return SchedulerAction::HalveLr;
        }
        SchedulerAction::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` for the initial evaluation before any update.
    pub train_loss: Option<f64>,
    pub test_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn initial_test_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.test_loss)
    }

    pub fn best_test_loss(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch).map(|e| e.test_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss,lr\n");
        for e in &self.epochs {
            let train = e.train_loss.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.6},{:e}", e.epoch, train, e.test_loss, e.lr);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per-frame probabilities for one stream, starting from zero state.
pub fn predict_clip(params: &NetParams, frames: &[FeatureVector]) -> Result<Vec<f64>> {
    let mut state = GruState::zeros(params);
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let t = forward_values(params, &state, &f.values)?;
        out.push(t.p);
        state = GruState { h1: t.g1.h, h2: t.g2.h };
    }
    Ok(out)
}

/// Frame-pooled mean BCE over whole clips.
pub fn evaluate_loss(params: &NetParams, clips: &[ClipFeatures]) -> Result<f64> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for c in clips {
        preds.extend(predict_clip(params, &c.features)?);
        targets.extend_from_slice(&c.targets);
    }
    bce_loss(&preds, &targets)
}

fn excerpt_traces(params: &NetParams, frames: &[FeatureVector]) -> Result<Vec<FrameTrace>> {
    let mut state = GruState::zeros(params);
    let mut traces = Vec::with_capacity(frames.len());
    for f in frames {
        let t = forward_values(params, &state, &f.values)?;
        state = GruState {
            h1: t.g1.h.clone(),
            h2: t.g2.h.clone(),
        };
        traces.push(t);
    }
    Ok(traces)
}

/// Trains from `initial` on random excerpts of `train_set`, scheduling on
/// `test_set` loss. Returns the parameters of the best epoch.
pub fn train(
    initial: NetParams,
    train_set: &[ClipFeatures],
    test_set: &[ClipFeatures],
    cfg: &TrainConfig,
) -> Result<(NetParams, TrainLog)> {
    cfg.validate()?;
    let usable: Vec<&ClipFeatures> = train_set.iter().filter(|c| !c.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if test_set.iter().all(|c| c.is_empty()) {
        return Err(Error::Config("test split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial;
    let mut adam = AdamState::new(params.param_count());
    let initial_loss = evaluate_loss(&params, test_set)?;
    check_finite(initial_loss, 0)?;
    let mut sched = PlateauScheduler::new(cfg.lr, initial_loss, cfg.lr_halve_patience, cfg.early_stop_patience);
    let mut log = TrainLog::default();
    log.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: None,
        test_loss: initial_loss,
        lr: cfg.lr,
    });
    log::info!("epoch 0: test loss {initial_loss:.4}");
    let mut best = params.clone();

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr;
        let mut loss_sum = 0.0;
        let mut frame_sum = 0usize;
        for _ in 0..cfg.steps_per_epoch {
            let excerpts: Vec<(&[FeatureVector], &[f64])> = (0..cfg.batch_size)
                .map(|_| {
                    let clip = usable[rng.random_range(0..usable.len())];
                    let len = cfg.bptt_len.min(clip.len());
                    let start = rng.random_range(0..=clip.len() - len);
                    (&clip.features[start..start + len], &clip.targets[start..start + len])
                })
                .collect();
            let total: usize = excerpts.iter().map(|(f, _)| f.len()).sum();
            let scale = 1.0 / total as f64;
            let mut grad = NetParams::zeros(*params.config())?;
            for (frames, targets) in excerpts {
                let traces = excerpt_traces(&params, frames)?;
                let preds: Vec<f64> = traces.iter().map(|t| t.p).collect();
                loss_sum += bce_loss(&preds, targets)? * frames.len() as f64;
                frame_sum += frames.len();
                accumulate_gradient(&params, &traces, targets, scale, &mut grad)?;
            }
            adam_step(&mut params, &grad, &mut adam, lr, cfg)?;
        }
        let train_loss = loss_sum / frame_sum.max(1) as f64;
        check_finite(train_loss, epoch)?;
        if !params.is_finite() {
            return Err(Error::Numeric(format!("parameters diverged in epoch {epoch}")));
        }
        let test_loss = evaluate_loss(&params, test_set)?;
        check_finite(test_loss, epoch)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            test_loss,
            lr,
        });
        log::info!("epoch {epoch}: train {train_loss:.4} test {test_loss:.4} lr {lr:e}");
        match sched.observe(test_loss) {
            SchedulerAction::Improved => {
                best = params.clone();
                log.best_epoch = epoch;
            }
            SchedulerAction::Stop => {
                log.stopped_early = true;
                break;
            }
            SchedulerAction::HalveLr | SchedulerAction::Continue => {}
        }
    }
    Ok((best, log))
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NetConfig};

    #[test]
    fn adam_zero_gradient() {
        let cfg = TrainConfig::default();
        let mut p = init_params(NetConfig::reduced(), 1).unwrap();
        let before = p.clone();
        let g = NetParams::zeros(*p.config()).unwrap();
        let mut s = AdamState::new(p.param_count());
        s.m.iter_mut().for_each(|m| *m = 0.5);
        adam_step(&mut p, &g, &mut s, 1e-3, &cfg).unwrap();
        // m decays, so the update is non-zero unless m started at zero.
        assert!(s.m.iter().all(|&m| (m - 0.45).abs() < 1e-12));
        let mut s = AdamState::new(p.param_count());
        let mut q = before.clone();
        adam_step(&mut q, &g, &mut s, 1e-3, &cfg).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let cfg = TrainConfig::default();
        let mut p = NetParams::zeros(NetConfig::reduced()).unwrap();
        let mut g = NetParams::zeros(NetConfig::reduced()).unwrap();
        g.values.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 0.3 } else { -2.0 });
        let mut s = AdamState::new(p.param_count());
        let lr = 1e-3;
        for _ in 0..2000 {
            adam_step(&mut p, &g, &mut s, lr, &cfg).unwrap();
        }
        let before = p.clone();
        adam_step(&mut p, &g, &mut s, lr, &cfg).unwrap();
        for (a, b) in p.values.iter().zip(&before.values) {
            let step = (a - b).abs();
            assert!((step - lr).abs() / lr < 0.01, "{step}");
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let cfg = TrainConfig::default();
        let mut p = NetParams::zeros(NetConfig::reduced()).unwrap();
        let g = NetParams::zeros(NetConfig::reduced()).unwrap();
        let mut s = AdamState::new(3);
        assert!(matches!(adam_step(&mut p, &g, &mut s, 1e-3, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn scheduler_counts_non_improving_epochs() {
        let mut s = PlateauScheduler::new(1e-3, f64::INFINITY, 3, 5);
        let actions: Vec<_> = [1.0, 0.9, 0.91, 0.92, 0.93].iter().map(|&l| s.observe(l)).collect();
        use SchedulerAction::*;
        assert_eq!(actions, vec![Improved, Improved, Continue, Continue, HalveLr]);
        assert_eq!(s.lr, 5e-4);
    }

    #[test]
    fn scheduler_stops_after_five_stale_epochs() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 3, 5);
        let actions: Vec<_> = (0..5).map(|_| s.observe(0.6)).collect();
        assert_eq!(actions[4], SchedulerAction::Stop);
        assert_eq!(actions[2], SchedulerAction::HalveLr);
        assert!(!actions[..4].contains(&SchedulerAction::Stop));
    }

    #[test]
    fn log_csv_format() {
        let log = TrainLog {
            epochs: vec![
                EpochRecord {
                    epoch: 0,
                    train_loss: None,
                    test_loss: 0.7,
                    lr: 1e-3,
                },
                EpochRecord {
                    epoch: 1,
                    train_loss: Some(0.5),
                    test_loss: 0.6,
                    lr: 1e-3,
                },
            ],
            best_epoch: 1,
            stopped_early: false,
        };
        let csv = log.to_csv();
        assert_eq!(csv.lines().next(), Some("epoch,train_loss,test_loss,lr"));
        assert_eq!(csv.lines().nth(1), Some("0,,0.700000,1e-3"));
        assert_eq!(log.best_test_loss(), Some(0.6));
    }

    #[test]
    fn empty_splits_rejected() {
        let p = init_params(NetConfig::reduced(), 0).unwrap();
        let r = train(p, &[], &[], &TrainConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
