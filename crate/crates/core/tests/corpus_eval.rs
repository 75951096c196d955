use pvad_core::audio::{energy, Channel};
use pvad_core::corpus::{build_dataset, load_clip, load_manifest, render_clip, LabeledClip, Split, SynthSpec};
use pvad_core::dsp::{FeatureExtractor, FrameConfig};
use pvad_core::eval::{harness_gains, realized_snr_db, ChannelGains, HarnessMode};
use pvad_core::net::{init_params, NetConfig};
use pvad_core::pipeline::{Engine, GateConfig, Pipeline};

fn small_spec() -> SynthSpec {
    SynthSpec {
        clip_len_s: 2.0,
        train_hours: 4.0 / 3600.0,
        test_hours: 2.0 / 3600.0,
        seed: 19,
        ..SynthSpec::default()
    }
}

fn rendered(n: usize) -> Vec<LabeledClip> {
    let spec = small_spec();
    let m = pvad_core::corpus::plan_dataset(&spec).unwrap();
    let cfg = FrameConfig::default();
    m.train.iter().take(n).map(|e| render_clip(&spec, e, &cfg).unwrap()).collect()
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let build = build_dataset(&spec, Some(dir.path())).unwrap();
    let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.train.len(), 2);
    assert_eq!(manifest.test.len(), 1);
    assert_eq!(manifest.train, build.manifest.train);
    let cfg = manifest.frame;
    for split in [Split::Train, Split::Test] {
        for entry in manifest.entries(split) {
            let mem = render_clip(&spec, entry, &cfg).unwrap();
            let disk = load_clip(dir.path(), entry, &cfg).unwrap();
            assert_eq!(mem.raw_labels, disk.raw_labels);
            assert_eq!(mem.labels, disk.labels);
            assert_eq!(mem.y_bc.len(), disk.y_bc.len());
            // 16-bit PCM quantization bounds the per-sample error.
            for (a, b) in mem.y_bc.samples.iter().zip(&disk.y_bc.samples) {
                assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-7);
            }
        }
    }
}

#[test]
fn equal_snr_gains_hit_target_on_both_channels() {
    for clip in rendered(2) {
        for snr in [-10.0, 0.0, 10.0, 30.0] {
            let (bc, ac) = harness_gains(&clip, HarnessMode::EqualSnr, snr).unwrap();
            assert!((realized_snr_db(&clip.stems, Channel::Bc, bc) - snr).abs() < 1e-6);
            assert!((realized_snr_db(&clip.stems, Channel::Ac, ac) - snr).abs() < 1e-6);
        }
    }
}

#[test]
fn equal_environment_keeps_native_advantage() {
    for clip in rendered(2) {
        let native = clip.stems.native_snr_db(Channel::Bc) - clip.stems.native_snr_db(Channel::Ac);
        for snr in [-10.0, 0.0, 10.0] {
            let (bc, ac) = harness_gains(&clip, HarnessMode::EqualEnvironment, snr).unwrap();
            assert_eq!(bc, ac);
            let snr_ac = realized_snr_db(&clip.stems, Channel::Ac, ac);
            let snr_bc = realized_snr_db(&clip.stems, Channel::Bc, bc);
            assert!((snr_ac - snr).abs() < 1e-6);
            assert!((snr_bc - snr_ac - native).abs() < 1e-3);
        }
    }
}

#[test]
fn common_gain_leaves_snr_unchanged() {
    let clip = &rendered(1)[0];
    let unit = ChannelGains { alpha: 1.0, beta: 1.0 };
    for ch in [Channel::Bc, Channel::Ac] {
        let base = realized_snr_db(&clip.stems, ch, unit);
        assert!((base - clip.stems.native_snr_db(ch)).abs() < 1e-6);
        for k in [0.01, 0.5, 3.0] {
            let scaled = realized_snr_db(&clip.stems, ch, ChannelGains { alpha: k, beta: k });
            assert!((scaled - base).abs() < 1e-4);
        }
    }
}

#[test]
fn stored_mixture_matches_pipeline_on_memory_clip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    build_dataset(&spec, Some(dir.path())).unwrap();
    let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
    let entry = &manifest.train[0];
    let cfg = manifest.frame;
    let from_wav = pvad_core::audio::read_wav(dir.path().join(&entry.files.y_bc)).unwrap();
    let disk = load_clip(dir.path(), entry, &cfg).unwrap();
    assert_eq!(from_wav.samples, disk.y_bc.samples);
    assert!(energy(&from_wav.samples) > 0.0);

    let params = init_params(NetConfig::default(), 3).unwrap();
    let pipe = Pipeline::new(Engine::Float(params.clone()), cfg, GateConfig::default()).unwrap();
    let (preds, _) = pipe.run(&from_wav.samples).unwrap();
    let fx = FeatureExtractor::new(cfg).unwrap();
    let direct = pvad_core::net::predict_clip(&params, &fx.extract_all(&from_wav.samples)).unwrap();
    assert_eq!(preds.len(), direct.len());
    assert_eq!(preds.len(), disk.raw_labels.len());
}
