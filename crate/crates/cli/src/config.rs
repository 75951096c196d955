//! Layered run configuration: built-in defaults, then an optional config file
//! (TOML, or a JSON snapshot from an earlier run), then command-line flags.

use std::fs;
use std::path::Path;

use pvad_core::corpus::SynthSpec;
use pvad_core::dsp::FrameConfig;
use pvad_core::net::{NetConfig, TrainConfig};
use pvad_core::pipeline::GateConfig;
use pvad_core::quant::CalibrationMode;
use pvad_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Overrides the synth and train seeds when set.
    pub seed: Option<u64>,
    pub synth: SynthSpec,
    pub frame: FrameConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub gate: GateConfig,
    pub calibration: CalibrationMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            let value: serde_json::Value = serde_json::from_str(&text)?;
            // Snapshots nest the configuration under "config".
            let inner = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.synth.seed = s;
            self.train.seed = s;
        }
    }
}

#[derive(Serialize)]
struct Snapshot<'a, A: Serialize> {
    command: &'a str,
    args: &'a A,
    config: &'a RunConfig,
}

/// Writes `<dir>/<command>.config.json` with the arguments and resolved config.
pub fn write_snapshot<A: Serialize>(dir: &Path, command: &str, args: &A, config: &RunConfig) -> Result<()> {
    let path = dir.join(format!("{command}.config.json"));
    let snap = Snapshot { command, args, config };
    fs::write(&path, serde_json::to_string_pretty(&snap)?).map_err(|e| Error::Io { path, source: e })
}
