use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureVector;
use crate::error::{Error, Result};
use crate::net::{forward_frame, FrameTrace, GruState, NetParams};

/// Every recorded activation boundary, in network order.
pub const BOUNDARIES: [&str; 20] = [
    "input",
    "conv1",
    "conv2",
    "gru1.pre_z",
    "gru1.pre_r",
    "gru1.pre_h",
    "gru1.z",
    "gru1.r",
    "gru1.hc",
    "gru1.h",
    "gru2.pre_z",
    "gru2.pre_r",
    "gru2.pre_h",
    "gru2.z",
    "gru2.r",
    "gru2.hc",
    "gru2.h",
    "fc1",
    "logit",
    "output",
];

const MIN_FRAMES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Lower/upper percentiles (e.g. 0.1 and 99.9).
    Percentile { lo: f64, hi: f64 },
    MinMax,
}

impl Default for CalibrationMode {
    fn default() -> Self {
        CalibrationMode::Percentile { lo: 0.1, hi: 99.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStats {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub mode: CalibrationMode,
    pub n_frames: usize,
    pub boundaries: BTreeMap<String, BoundaryStats>,
}

impl CalibrationStats {
    pub fn get(&self, name: &str) -> Result<BoundaryStats> {
        self.boundaries
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("calibration stats do not cover boundary `{name}`")))
    }
}

fn record(values: &mut BTreeMap<String, Vec<f32>>, name: &str, xs: &[f64]) {
    values
        .entry(name.to_string())
        .or_default()
        .extend(xs.iter().map(|&v| v as f32));
}

fn record_trace(values: &mut BTreeMap<String, Vec<f32>>, t: &FrameTrace) {
    record(values, "input", &t.x);
    record(values, "conv1", &t.a1);
    record(values, "conv2", &t.a2);
    for (prefix, g) in [("gru1", &t.g1), ("gru2", &t.g2)] {
        for (gate, pre) in ["z", "r", "h"].iter().zip(&g.pre) {
            record(values, &format!("{prefix}.pre_{gate}"), pre);
        }
        record(values, &format!("{prefix}.z"), &g.z);
        record(values, &format!("{prefix}.r"), &g.r);
        record(values, &format!("{prefix}.hc"), &g.hc);
        record(values, &format!("{prefix}.h"), &g.h);
    }
    record(values, "fc1", &t.f1);
    record(values, "logit", &[t.logit]);
    record(values, "output", &[t.p]);
}

fn percentile(sorted_source: &mut [f32], pct: f64) -> f64 {
    let n = sorted_source.len();
    let idx = ((pct / 100.0) * (n - 1) as f64).round() as usize;
    let (_, v, _) = sorted_source.select_nth_unstable_by(idx.min(n - 1), |a, b| a.total_cmp(b));
    *v as f64
}

/// Runs the float network statefully over each stream and records activation
/// ranges at every boundary, including GRU gate pre-activations and states.
pub fn calibrate(params: &NetParams, streams: &[&[FeatureVector]], mode: CalibrationMode) -> Result<CalibrationStats> {
    let n_frames: usize = streams.iter().map(|s| s.len()).sum();
    if n_frames < MIN_FRAMES {
        return Err(Error::Config(format!(
            "calibration needs at least {MIN_FRAMES} frames, got {n_frames}"
        )));
    }
    let mut values: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for stream in streams {
        let mut state = GruState::zeros(params);
        for f in stream.iter() {
            let (_, trace, next) = forward_frame(params, &state, f)?;
            record_trace(&mut values, &trace);
            state = next;
        }
    }
    let mut boundaries = BTreeMap::new();
    for (name, mut xs) in values {
        let stats = match mode {
            CalibrationMode::MinMax => BoundaryStats {
                min: xs.iter().fold(f64::INFINITY, |m, &v| m.min(v as f64)),
                max: xs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64)),
            },
            CalibrationMode::Percentile { lo, hi } => BoundaryStats {
                min: percentile(&mut xs, lo),
                max: percentile(&mut xs, hi),
            },
        };
        boundaries.insert(name, stats);
    }
    Ok(CalibrationStats {
        mode,
        n_frames,
        boundaries,
    })
}
