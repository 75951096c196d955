use std::fs;
use std::path::Path;

use pvad_core::audio::{read_wav, resample_to_16k, Channel};
use pvad_core::corpus::{build_dataset, load_clip, load_manifest, ClipFeatures, LabeledClip, Manifest, Split};
use pvad_core::dsp::FeatureExtractor;
use pvad_core::eval::{harness_to_csv, run_harness, HarnessConfig, HarnessMode};
use pvad_core::net::{init_params, load_model, predict_clip, save_model, train, NetParams};
use pvad_core::pipeline::{
    gate_sweep, normalized_mixture, predictions_to_csv, sweep_to_csv, Engine, GateConfig, Pipeline, SkipPolicy,
    SweepClip,
};
use pvad_core::power::{builtin_profile, load_profile, reports_to_csv, skip_sweep, BUILTIN_PROFILES};
use pvad_core::quant::{
    accuracy_delta, binary_accuracy, calibrate, load_qmodel, quantize_net, quantize_net_16, save_qmodel,
    CalibrationMode,
};
use pvad_core::{Error, Result};
use serde::Serialize;

use crate::config::{write_snapshot, RunConfig};
use crate::{
    CalibrationArg, Cli, Command, EvalArgs, FeaturesArgs, GateSweepArgs, InferArgs, ModeArg, PolicyArg, PowerArgs,
    QuantizeArgs, SynthArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed(cli.seed);
    match cli.command {
        Command::Synth(a) => synth(a, cfg),
        Command::Features(a) => features(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Quantize(a) => quantize(a, cfg),
        Command::Infer(a) => infer(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::GateSweep(a) => gate_sweep_cmd(a, cfg),
        Command::Power(a) => power(a, cfg),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &serde_json::to_string_pretty(value)?)
}

fn manifest_root(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

fn load_split(manifest_path: &Path, split: Split, limit: Option<usize>) -> Result<(Manifest, Vec<LabeledClip>)> {
    let manifest = load_manifest(manifest_path)?;
    let root = manifest_root(manifest_path);
    let entries = manifest.entries(split);
    let n = limit.unwrap_or(entries.len()).min(entries.len());
    let clips = entries[..n]
        .iter()
        .map(|e| load_clip(root, e, &manifest.frame))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, clips))
}

fn clip_features(clips: &[LabeledClip], channel: Channel, fx: &FeatureExtractor) -> Vec<ClipFeatures> {
    clips.iter().map(|c| ClipFeatures::from_clip(c, channel, fx)).collect()
}

/// Float `model.json` or int8 `qmodel.json`, told apart by the `bits` key.
fn load_engine(path: &Path) -> Result<Engine> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("bits").and_then(|b| b.as_u64()) {
        None => Ok(Engine::Float(load_model(path)?)),
        Some(8) => Ok(Engine::Int8(load_qmodel::<i8>(path)?)),
        Some(b) => Err(Error::Format(format!(
            "{}: {b}-bit models are diagnostic only; streaming needs an int8 or float model",
            path.display()
        ))),
    }
}

fn synth(a: SynthArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(h) = a.train_hours {
        cfg.synth.train_hours = h;
    }
    if let Some(h) = a.test_hours {
        cfg.synth.test_hours = h;
    }
    if let Some(s) = a.clip_len {
        cfg.synth.clip_len_s = s;
    }
    cfg.synth.validate()?;
    create_dir(&a.out)?;
    let build = build_dataset(&cfg.synth, Some(&a.out))?;
    write_snapshot(&a.out, "synth", &a, &cfg)?;
    let d = build.distribution;
    println!("train clips: {}", build.manifest.train.len());
    println!("test clips:  {}", build.manifest.test.len());
    println!(
        "active-frame distribution: low {:.3}  medium {:.3}  high {:.3}",
        d.low, d.medium, d.high
    );
    println!("manifest: {}", a.out.join("manifest.json").display());
    Ok(())
}

fn features(a: FeaturesArgs, cfg: RunConfig) -> Result<()> {
    let clip = resample_to_16k(&read_wav(&a.wav)?)?;
    let fx = FeatureExtractor::new(cfg.frame)?;
    create_dir(&a.out)?;
    let mut csv = String::from("frame_index,energy_db");
    for m in 0..cfg.frame.n_mels {
        csv.push_str(&format!(",mel{m}"));
    }
    csv.push('\n');
    let frames = fx.extract_all(&clip.samples);
    for f in &frames {
        csv.push_str(&format!("{},{:.6}", f.frame_index, f.energy_db));
        for v in &f.values {
            csv.push_str(&format!(",{v:.6}"));
        }
        csv.push('\n');
    }
    write_file(&a.out.join("features.csv"), &csv)?;
    write_snapshot(&a.out, "features", &a, &cfg)?;
    println!("{} frames", frames.len());
    Ok(())
}

fn train_cmd(a: TrainArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(s) = a.steps_per_epoch {
        cfg.train.steps_per_epoch = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.train.validate()?;
    let channel: Channel = a.channel.into();
    let (manifest, train_clips) = load_split(&a.manifest, Split::Train, None)?;
    let (_, test_clips) = load_split(&a.manifest, Split::Test, None)?;
    cfg.frame = manifest.frame;
    if cfg.net.n_mels != cfg.frame.n_mels {
        return Err(Error::Config(format!(
            "net.n_mels {} does not match the corpus front end ({})",
            cfg.net.n_mels, cfg.frame.n_mels
        )));
    }
    let fx = FeatureExtractor::new(cfg.frame)?;
    let tr = clip_features(&train_clips, channel, &fx);
    let te = clip_features(&test_clips, channel, &fx);
    let init = init_params(cfg.net, cfg.train.seed)?;
    create_dir(&a.out)?;
    let (params, log) = train(init, &tr, &te, &cfg.train)?;
    save_model(&params, a.out.join("model.json"))?;
    log.write_csv(a.out.join("train_log.csv"))?;
    write_snapshot(&a.out, "train", &a, &cfg)?;

    let acc = split_accuracy(&params, &te)?;
    println!("parameters: {}", params.param_count());
    println!("initial test loss: {:.6}", log.initial_test_loss().unwrap_or(f64::NAN));
    println!("best test loss:    {:.6} (epoch {})", log.best_test_loss().unwrap_or(f64::NAN), log.best_epoch);
    println!("test accuracy:     {acc:.4}");
    Ok(())
}

fn split_accuracy(params: &NetParams, clips: &[ClipFeatures]) -> Result<f64> {
    let (mut probs, mut labels) = (Vec::new(), Vec::new());
    for c in clips {
        probs.extend(predict_clip(params, &c.features)?);
        labels.extend_from_slice(&c.labels);
    }
    Ok(binary_accuracy(&probs, &labels, 0.5))
}

#[derive(Serialize)]
struct QuantReport {
    bits: u32,
    calibration_frames: usize,
    acc_float: f64,
    acc_quantized: f64,
    delta_points: f64,
}

fn quantize(a: QuantizeArgs, mut cfg: RunConfig) -> Result<()> {
    if a.bits != 8 && a.bits != 16 {
        return Err(Error::Config(format!("--bits must be 8 or 16, got {}", a.bits)));
    }
    match a.calibration {
        Some(CalibrationArg::Minmax) => cfg.calibration = CalibrationMode::MinMax,
        Some(CalibrationArg::Percentile) => cfg.calibration = CalibrationMode::default(),
        None => {}
    }
    let params = load_model(&a.model)?;
    let channel: Channel = a.channel.into();
    let (manifest, calib_clips) = load_split(&a.manifest, Split::Train, Some(a.calib_clips))?;
    let (_, test_clips) = load_split(&a.manifest, Split::Test, None)?;
    cfg.frame = manifest.frame;
    let fx = FeatureExtractor::new(cfg.frame)?;
    let calib = clip_features(&calib_clips, channel, &fx);
    let streams: Vec<&[_]> = calib.iter().map(|c| c.features.as_slice()).collect();
    let stats = calibrate(&params, &streams, cfg.calibration)?;
    let te = clip_features(&test_clips, channel, &fx);
    create_dir(&a.out)?;
    let path = a.out.join("qmodel.json");
    let delta = if a.bits == 8 {
        let q = quantize_net(&params, &stats)?;
        save_qmodel(&q, &path)?;
        accuracy_delta(&params, &q, &te, 0.5)?
    } else {
        let q = quantize_net_16(&params, &stats)?;
        save_qmodel(&q, &path)?;
        accuracy_delta(&params, &q, &te, 0.5)?
    };
    let report = QuantReport {
        bits: a.bits,
        calibration_frames: stats.n_frames,
        acc_float: delta.acc_float,
        acc_quantized: delta.acc_q,
        delta_points: 100.0 * delta.delta,
    };
    write_json(&a.out.join("quant_report.json"), &report)?;
    write_json(&a.out.join("calibration.json"), &stats)?;
    write_snapshot(&a.out, "quantize", &a, &cfg)?;
    println!("float accuracy:     {:.4}", report.acc_float);
    println!("quantized accuracy: {:.4}", report.acc_quantized);
    println!("drop:               {:.2} points", report.delta_points);
    Ok(())
}

fn resolve_profile(name: &str) -> Result<(pvad_core::power::SocProfile, pvad_core::power::BatteryModel)> {
    if BUILTIN_PROFILES.contains(&name) {
        builtin_profile(name)
    } else {
        load_profile(name)
    }
}

fn infer(a: InferArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(t) = a.gate_db {
        cfg.gate.enabled = true;
        cfg.gate.threshold_db = t;
    }
    if let Some(s) = a.skip_output {
        cfg.gate.skip_output = s;
    }
    match a.policy {
        Some(PolicyArg::Hold) => cfg.gate.policy = SkipPolicy::Hold,
        Some(PolicyArg::Decay) => cfg.gate.policy = SkipPolicy::Decay { factor: a.decay_factor },
        None => {}
    }
    let engine = load_engine(&a.model)?;
    let (soc, _) = resolve_profile(&a.profile)?;
    let clip = resample_to_16k(&read_wav(&a.wav)?)?;
    let pipe = Pipeline::new(engine, cfg.frame, cfg.gate)?.with_profile(soc);
    let (preds, st) = pipe.run(&clip.samples)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("predictions.csv"), &predictions_to_csv(&preds))?;
    write_snapshot(&a.out, "infer", &a, &cfg)?;
    let speech = preds.iter().filter(|p| p.label == 1).count();
    println!("frames:  {}", st.frames_total());
    println!("skipped: {} ({:.1}%)", st.frames_skipped(), 100.0 * st.skip_fraction());
    println!("speech:  {speech}");
    Ok(())
}

fn eval(a: EvalArgs, mut cfg: RunConfig) -> Result<()> {
    let bc = load_engine(&a.bc_model)?;
    let ac = load_engine(&a.ac_model)?;
    let (manifest, clips) = load_split(&a.manifest, Split::Test, None)?;
    cfg.frame = manifest.frame;
    let mode = match a.mode {
        ModeArg::EqualEnv => HarnessMode::EqualEnvironment,
        ModeArg::EqualSnr => HarnessMode::EqualSnr,
    };
    let hc = HarnessConfig::new(mode, a.snr_grid.clone());
    let rows = run_harness(&bc, &ac, &clips, cfg.frame, &hc)?;
    create_dir(&a.out)?;
    let csv = harness_to_csv(&rows);
    write_file(&a.out.join("eval.csv"), &csv)?;
    write_json(&a.out.join("eval.json"), &rows)?;
    write_snapshot(&a.out, "eval", &a, &cfg)?;
    print!("{csv}");
    Ok(())
}

/// Default sweep: every dB from −80 to −10 plus both degenerate ends.
fn default_thresholds() -> Vec<f64> {
    let mut t = vec![f64::NEG_INFINITY];
    t.extend((-80..=-10).map(|v| v as f64));
    t.push(f64::INFINITY);
    t
}

fn gate_sweep_cmd(a: GateSweepArgs, mut cfg: RunConfig) -> Result<()> {
    let engine = load_engine(&a.model)?;
    let (manifest, clips) = load_split(&a.manifest, Split::Test, None)?;
    cfg.frame = manifest.frame;
    let channel: Channel = a.channel.into();
    let sweep_clips = clips
        .iter()
        .map(|c| {
            Ok(SweepClip {
                samples: normalized_mixture(c, channel, a.snr_db, a.peak_dbfs)?,
                labels: c.binary_labels(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let thresholds = a.thresholds.clone().unwrap_or_else(default_thresholds);
    let base = GateConfig { enabled: true, ..cfg.gate };
    let rows = gate_sweep(&engine, cfg.frame, base, &sweep_clips, &thresholds)?;
    create_dir(&a.out)?;
    let csv = sweep_to_csv(&rows);
    write_file(&a.out.join("gate_sweep.csv"), &csv)?;
    write_snapshot(&a.out, "gate-sweep", &a, &cfg)?;
    print!("{csv}");
    Ok(())
}

fn power(a: PowerArgs, cfg: RunConfig) -> Result<()> {
    let mut reports = Vec::new();
    for name in &a.profile {
        let (soc, bat) = resolve_profile(name)?;
        reports.extend(skip_sweep(&soc, &bat, &a.skip)?);
    }
    let csv = reports_to_csv(&reports);
    print!("{csv}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("power.csv"), &csv)?;
        write_json(&out.join("power.json"), &reports)?;
        write_snapshot(out, "power", &a, &cfg)?;
    }
    Ok(())
}
