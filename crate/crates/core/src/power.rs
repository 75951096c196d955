//! Analytic duty-cycle power, energy and battery-life model for embedded targets.
//!
//! A frame costs `t_fft` (always) plus `t_infer` (unless the frame is gated out)
//! at `p_compute` above the sleep floor; the rest of the hop is spent asleep.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::worst_case_latency_ms;

const APOLLO4_TOML: &str = include_str!("../profiles/apollo4.toml");
const NRF5340_TOML: &str = include_str!("../profiles/nrf5340.toml");

/// Names accepted by [`builtin_profile`].
pub const BUILTIN_PROFILES: [&str; 2] = ["apollo4", "nrf5340"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocProfile {
    pub name: String,
    pub p_sleep_mw: f64,
    pub p_compute_mw: f64,
    pub t_fft_ms: f64,
    pub t_infer_ms: f64,
    pub hop_ms: f64,
}

impl SocProfile {
    pub fn apollo4() -> Self {
        builtin_profile("apollo4").expect("built-in profile").0
    }

    pub fn nrf5340() -> Self {
        builtin_profile("nrf5340").expect("built-in profile").0
    }

    pub fn t_total_ms(&self) -> f64 {
        self.t_fft_ms + self.t_infer_ms
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("p_sleep_mw", self.p_sleep_mw),
            ("p_compute_mw", self.p_compute_mw),
            ("t_fft_ms", self.t_fft_ms),
            ("t_infer_ms", self.t_infer_ms),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{}: {name} must be finite and non-negative, got {v}", self.name)));
            }
        }
        if !self.hop_ms.is_finite() || self.hop_ms <= 0.0 {
            return Err(Error::Config(format!("{}: hop_ms must be positive", self.name)));
        }
        if self.t_total_ms() > self.hop_ms {
            return Err(Error::Config(format!(
                "{}: frame time {} ms exceeds the {} ms hop",
                self.name,
                self.t_total_ms(),
                self.hop_ms
            )));
        }
        Ok(())
    }

    /// Fraction of the hop spent computing when a fraction `f` of inferences is skipped.
    pub fn duty_cycle(&self, f: f64) -> Result<f64> {
        check_fraction(f)?;
        Ok((self.t_fft_ms + (1.0 - f) * self.t_infer_ms) / self.hop_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub capacity_mah: f64,
    pub voltage_v: f64,
    pub converter_efficiency: f64,
}

impl Default for BatteryModel {
    /// 32 mAh Li-ion cell at 3.8 V behind a 95% efficient converter.
    fn default() -> Self {
        Self {
            capacity_mah: 32.0,
            voltage_v: 3.8,
            converter_efficiency: 0.95,
        }
    }
}

impl BatteryModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_mah > 0.0) || !self.capacity_mah.is_finite() {
            return Err(Error::Config("battery capacity_mah must be positive".into()));
        }
        if !(self.voltage_v > 0.0) || !self.voltage_v.is_finite() {
            return Err(Error::Config("battery voltage_v must be positive".into()));
        }
        if !(self.converter_efficiency > 0.0 && self.converter_efficiency <= 1.0) {
            return Err(Error::Config("converter_efficiency must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    #[serde(flatten)]
    soc: SocProfile,
    #[serde(default)]
    battery: BatteryModel,
}

/// Parses a profile in TOML form: SoC fields at the top level, optional `[battery]`.
pub fn parse_profile(text: &str) -> Result<(SocProfile, BatteryModel)> {
    let f: ProfileFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    f.soc.validate()?;
    f.battery.validate()?;
    Ok((f.soc, f.battery))
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<(SocProfile, BatteryModel)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profile(&text)
}

pub fn builtin_profile(name: &str) -> Result<(SocProfile, BatteryModel)> {
    match name {
        "apollo4" => parse_profile(APOLLO4_TOML),
        "nrf5340" => parse_profile(NRF5340_TOML),
        other => Err(Error::Config(format!(
            "unknown profile `{other}` (built-ins: {})",
            BUILTIN_PROFILES.join(", ")
        ))),
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Range(format!("skip fraction {f} outside [0, 1]")))
    }
}

/// Average platform power in mW with a fraction `f` of inferences gated out.
pub fn avg_power(soc: &SocProfile, f: f64) -> Result<f64> {
    Ok(soc.p_sleep_mw + soc.duty_cycle(f)? * soc.p_compute_mw)
}

/// Compute energy above the sleep floor for one fully processed frame, in µJ.
pub fn energy_per_inference(soc: &SocProfile) -> f64 {
    soc.p_compute_mw * soc.t_total_ms()
}

/// Battery-side current in mA for a load of `avg_power_mw`.
pub fn battery_current_ma(avg_power_mw: f64, bat: &BatteryModel) -> Result<f64> {
    if !(avg_power_mw > 0.0) || !avg_power_mw.is_finite() {
        return Err(Error::Range(format!("average power {avg_power_mw} mW must be positive")));
    }
    Ok(avg_power_mw / (bat.voltage_v * bat.converter_efficiency))
}

/// Hours of operation on one charge.
pub fn battery_life(avg_power_mw: f64, bat: &BatteryModel) -> Result<f64> {
    Ok(bat.capacity_mah / battery_current_ma(avg_power_mw, bat)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub profile: String,
    pub skip_fraction: f64,
    pub duty_cycle: f64,
    pub avg_power_mw: f64,
    /// Load current at the battery voltage, before converter losses.
    pub avg_current_ua: f64,
    pub energy_per_inference_uj: f64,
    pub worst_latency_ms: f64,
    pub battery_life_h: f64,
    /// Battery life relative to running every inference.
    pub battery_gain_h: f64,
}

pub fn power_report(soc: &SocProfile, bat: &BatteryModel, f: f64) -> Result<PowerReport> {
    soc.validate()?;
    bat.validate()?;
    let p = avg_power(soc, f)?;
    let life = battery_life(p, bat)?;
    let base = battery_life(avg_power(soc, 0.0)?, bat)?;
    Ok(PowerReport {
        profile: soc.name.clone(),
        skip_fraction: f,
        duty_cycle: soc.duty_cycle(f)?,
        avg_power_mw: p,
        avg_current_ua: p / bat.voltage_v * 1000.0,
        energy_per_inference_uj: energy_per_inference(soc),
        worst_latency_ms: worst_case_latency_ms(soc),
        battery_life_h: life,
        battery_gain_h: life - base,
    })
}

pub fn skip_sweep(soc: &SocProfile, bat: &BatteryModel, fractions: &[f64]) -> Result<Vec<PowerReport>> {
    fractions.iter().map(|&f| power_report(soc, bat, f)).collect()
}

pub fn reports_to_csv(reports: &[PowerReport]) -> String {
    let mut out = String::from(
        "profile,skip_fraction,duty_cycle,avg_power_mw,avg_current_ua,energy_per_inference_uj,worst_latency_ms,battery_life_h,battery_gain_h\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.3},{:.4},{:.4},{:.4},{:.4}\n",
            r.profile,
            r.skip_fraction,
            r.duty_cycle,
            r.avg_power_mw,
            r.avg_current_ua,
            r.energy_per_inference_uj,
            r.worst_latency_ms,
            r.battery_life_h,
            r.battery_gain_h
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn builtins_parse_and_validate() {
        let (a, bat) = builtin_profile("apollo4").unwrap();
        assert_eq!(a.name, "apollo4");
        assert!((a.t_total_ms() - 2.80).abs() < 1e-12);
        assert_eq!(bat, BatteryModel::default());
        let n = SocProfile::nrf5340();
        assert!((n.t_total_ms() - 2.99).abs() < 1e-12);
        assert!(matches!(builtin_profile("esp32"), Err(Error::Config(_))));
    }

    #[test]
    fn average_power_arithmetic() {
        let a = SocProfile::apollo4();
        let p = avg_power(&a, 0.0).unwrap();
        assert!((p - (1.21 + 0.28 * 5.01)).abs() < 1e-12);
        assert!(rel(p, 2.64) < 0.02);
        let n = SocProfile::nrf5340();
        assert!((avg_power(&n, 0.0).unwrap() - (2.065 + 0.299 * 24.64)).abs() < 1e-12);
        assert!((n.duty_cycle(0.0).unwrap() - 0.299).abs() < 1e-12);
        let full = avg_power(&a, 1.0).unwrap();
        assert!((full - (a.p_sleep_mw + a.t_fft_ms / a.hop_ms * a.p_compute_mw)).abs() < 1e-12);
        assert!(matches!(avg_power(&a, 1.5), Err(Error::Range(_))));
        assert!(matches!(avg_power(&a, -0.1), Err(Error::Range(_))));
    }

    #[test]
    fn energy_and_battery() {
        let a = SocProfile::apollo4();
        assert!((energy_per_inference(&a) - 14.028).abs() < 1e-9);
        let n = SocProfile::nrf5340();
        assert!((energy_per_inference(&n) - 24.64 * 2.99).abs() < 1e-9);
        let zero = SocProfile { p_compute_mw: 0.0, ..a.clone() };
        assert_eq!(energy_per_inference(&zero), 0.0);

        let bat = BatteryModel::default();
        let life = battery_life(2.64, &bat).unwrap();
        assert!((battery_current_ma(2.64, &bat).unwrap() - 0.731).abs() < 1e-3);
        assert!((life - 32.0 * 3.8 * 0.95 / 2.64).abs() < 1e-9);
        assert!((life - 43.76).abs() < 0.01);
        assert!((battery_life(9.20, &bat).unwrap() - 12.56).abs() < 0.01);
        assert!((battery_life(1.32, &bat).unwrap() - 2.0 * life).abs() < 1e-9);
        assert!(matches!(battery_life(0.0, &bat), Err(Error::Range(_))));
    }

    #[test]
    fn average_current_consistency() {
        // 694 µA at 3.8 V is 2.637 mW.
        assert!(rel(0.694 * 3.8, 2.64) < 0.002);
        let r = power_report(&SocProfile::apollo4(), &BatteryModel::default(), 0.0).unwrap();
        assert!(rel(r.avg_current_ua, 694.0) < 0.02);
        assert!((r.worst_latency_ms - 12.8).abs() < 1e-12);
    }

    #[test]
    fn skip_gains() {
        let rows = skip_sweep(&SocProfile::apollo4(), &BatteryModel::default(), &[0.0, 0.2, 0.4]).unwrap();
        assert_eq!(rows[0].battery_gain_h, 0.0);
        assert!(rel(rows[1].battery_gain_h, 4.0) <= 0.15, "{}", rows[1].battery_gain_h);
        assert!(rel(rows[2].battery_gain_h, 8.0) <= 0.15, "{}", rows[2].battery_gain_h);
        let csv = reports_to_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let bad = SocProfile {
            t_infer_ms: 9.5,
            ..SocProfile::apollo4()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let text = APOLLO4_TOML.replace("p_sleep_mw = 1.21", "p_sleep_mw = -1.0");
        assert!(matches!(parse_profile(&text), Err(Error::Config(_))));
        let no_battery = APOLLO4_TOML.split("[battery]").next().unwrap();
        assert_eq!(parse_profile(no_battery).unwrap().1, BatteryModel::default());
    }

    proptest! {
        #[test]
        fn life_increases_with_skip(f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
            let (soc, bat) = builtin_profile("nrf5340").unwrap();
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let pl = avg_power(&soc, lo).unwrap();
            let ph = avg_power(&soc, hi).unwrap();
            prop_assert!(ph <= pl);
            if hi > lo {
                prop_assert!(battery_life(ph, &bat).unwrap() > battery_life(pl, &bat).unwrap());
            }
            // Affine in f.
            let mid = avg_power(&soc, 0.5 * (lo + hi)).unwrap();
            prop_assert!((mid - 0.5 * (pl + ph)).abs() < 1e-12);
        }
    }
}
