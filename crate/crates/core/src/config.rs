//! Configuration file: TOML sections mirroring the crate's parameter types.
//!
//! An empty file is a valid configuration. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evo::{FitnessConfig, GaConfig, SafeRegion};
use crate::harness::ScenarioSettings;
use crate::lqg::{synthesize, LqgWeights};
use crate::plant::{PlantParams, SensorModel};
use crate::sim::SimSetup;
use crate::switch::Hypercube;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    /// RK4 steps per control period.
    pub substeps: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { substeps: 10 }
    }
}

/// Safe region bounds relative to the regulation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafeSettings {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl Default for SafeSettings {
    fn default() -> Self {
        let h = SafeRegion::default().0;
        Self { lo: h.lo, hi: h.hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchSettings {
    /// Region files, relative to the output directory.
    pub nhc_file: String,
    pub lhc_file: String,
    /// Dwell time, s. `inf` disables the neural controller.
    pub t_sw: f64,
    /// Fraction of logged values each calibrated box must contain.
    pub coverage: f64,
    pub nhc_margin: f64,
    pub lhc_margin: f64,
    /// Leading seconds of a calibration log that are ignored.
    pub calibration_skip: f64,
    /// Length of the steady-state runs used for calibration, s.
    pub calibration_duration: f64,
}

impl Default for SwitchSettings {
    fn default() -> Self {
        Self {
            nhc_file: "omega_nhc.region".into(),
            lhc_file: "omega_lhc.region".into(),
            t_sw: 1.0,
            coverage: 0.99,
            nhc_margin: 1.0,
            lhc_margin: 12.0,
            calibration_skip: 5.0,
            calibration_duration: 1000.0,
        }
    }
}

impl SwitchSettings {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.t_sw.is_nan() || self.t_sw < 0.0 {
            return Err(("t_sw", format!("must be >= 0, got {}", self.t_sw)));
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err((
                "coverage",
                format!("must lie in (0, 1], got {}", self.coverage),
            ));
        }
        for (name, v) in [
            ("nhc_margin", self.nhc_margin),
            ("lhc_margin", self.lhc_margin),
            ("calibration_duration", self.calibration_duration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.calibration_skip.is_finite() && self.calibration_skip >= 0.0) {
            return Err(("calibration_skip", "must be finite and >= 0".into()));
        }
        for (name, v) in [("nhc_file", &self.nhc_file), ("lhc_file", &self.lhc_file)] {
            if v.trim().is_empty() {
                return Err((name, "must not be empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed for every random stream.
    pub seed: u64,
    pub plant: PlantParams,
    pub sensors: SensorModel,
    pub lqg: LqgWeights,
    pub sim: SimSettings,
    pub ga: GaConfig,
    pub fitness: FitnessConfig,
    pub safe: SafeSettings,
    pub switch: SwitchSettings,
    pub scenario: ScenarioSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            plant: PlantParams::default(),
            sensors: SensorModel::default(),
            lqg: LqgWeights::default(),
            sim: SimSettings::default(),
            ga: GaConfig::default(),
            fitness: FitnessConfig::default(),
            safe: SafeSettings::default(),
            switch: SwitchSettings::default(),
            scenario: ScenarioSettings::default(),
        }
    }
}

fn field(section: &str, r: std::result::Result<(), (&'static str, String)>) -> Result<()> {
    r.map_err(|(f, message)| Error::ConfigValidation {
        path: format!("{section}.{f}"),
        message,
    })
}

impl Config {
    /// Checks every section against the invariants of the type it feeds.
    pub fn validate(&self) -> Result<()> {
        field("plant", self.plant.check())?;
        field("sensors", self.sensors.check())?;
        field("lqg", self.lqg.check())?;
        if self.sim.substeps == 0 {
            return Err(Error::ConfigValidation {
                path: "sim.substeps".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.lqg.ts / self.sim.substeps as f64 > 0.02 {
            return Err(Error::ConfigValidation {
                path: "sim.substeps".into(),
                message: "integration step lqg.ts / substeps must be <= 0.02 s".into(),
            });
        }
        field("ga", self.ga.check())?;
        field("fitness", self.fitness.check())?;
        field("switch", self.switch.check())?;
        field("scenario", self.scenario.check())?;
        let safe = self.safe_region().map_err(|e| Error::ConfigValidation {
            path: "safe".into(),
            message: e.to_string(),
        })?;
        safe.check_within(self.plant.rail_half_length, self.plant.angle_limit)
            .map_err(|e| Error::ConfigValidation {
                path: "safe".into(),
                message: e.to_string(),
            })
    }

    pub fn safe_region(&self) -> Result<SafeRegion> {
        Ok(SafeRegion(Hypercube::new(self.safe.lo, self.safe.hi)?))
    }

    /// GA settings with the master seed applied.
    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            seed: self.seed,
            ..self.ga
        }
    }

    /// Synthesizes the LQG design and bundles it with the plant.
    pub fn sim_setup(&self) -> Result<SimSetup> {
        Ok(SimSetup {
            plant: self.plant,
            sensors: self.sensors,
            design: synthesize(&self.plant, &self.sensors, &self.lqg)?,
            substeps: self.sim.substeps,
        })
    }

    /// The full default configuration as TOML.
    pub fn reference_text() -> String {
        let body = toml::to_string(&Config::default()).expect("default config serializes");
        let mut out = String::from(
            "# Reference configuration. Every key is optional; omitted keys take\n\
             # the values shown here. Units are SI, with angles in radians except\n\
             # fitness.angle_weight (degrees).\n\n",
        );
        out.push_str(&body);
        out
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text).map_err(|e| Error::ConfigSyntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a configuration file; the name `default` gives the defaults.
pub fn load_config(path: &str) -> Result<Config> {
    if path == "default" {
        return Ok(Config::default());
    }
    let text = std::fs::read_to_string(Path::new(path)).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), Config::default());
        Config::default().validate().unwrap();
    }

    #[test]
    fn reference_round_trip() {
        let text = Config::reference_text();
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg, Config::default());
        let again = toml::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&again).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg =
            parse_config("seed = 9\n[plant]\ncart_mass = 2.0\n[switch]\nt_sw = inf\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.plant.cart_mass, 2.0);
        assert_eq!(cfg.plant.rod_mass, 0.1);
        assert!(cfg.switch.t_sw.is_infinite());
        assert_eq!(cfg.ga_config().seed, 9);
    }

    #[test]
    fn partial_sensor_section_keeps_rig_defaults() {
        let cfg = parse_config("[sensors]\nnoise_std_p = 0.001\n").unwrap();
        assert_eq!(cfg.sensors.noise_std_p, 0.001);
        assert_eq!(cfg.sensors.quant_p, SensorModel::rig().quant_p);
    }

    #[test]
    fn validation_names_field() {
        match parse_config("plant.cart_mass = -1") {
            Err(Error::ConfigValidation { path, .. }) => assert_eq!(path, "plant.cart_mass"),
            other => panic!("{other:?}"),
        }
        match parse_config("[switch]\ncoverage = 1.5\n") {
            Err(Error::ConfigValidation { path, .. }) => assert_eq!(path, "switch.coverage"),
            other => panic!("{other:?}"),
        }
        match parse_config("[safe]\nhi = [0.6, 2.0, 0.25, 2.0]\n") {
            Err(Error::ConfigValidation { path, .. }) => assert_eq!(path, "safe"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_syntax_errors_carry_lines() {
        match parse_config("seed = 1\n[plant]\ncart_mas = 1.0\n") {
            Err(Error::ConfigSyntax { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("cart_mas"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match parse_config("seed = 1\n\n[plant\n") {
            Err(Error::ConfigSyntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config("[bogus]\nx = 1\n"),
            Err(Error::ConfigSyntax { .. })
        ));
    }
}
