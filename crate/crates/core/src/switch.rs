//! Hypercube regions, region calibration, the dwell-time switching supervisor
//! and the composed hybrid controller.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector4;

use crate::error::{Error, Result};
use crate::lqg::{reference_state, LqgRuntime};
use crate::neural::{mlp_forward, MlpArchitecture, MlpWeights};
use crate::plant::Measurement;
use crate::sim::{ActiveController, ControlOutput, Controller};

pub const DIMENSIONS: [&str; 4] = ["p", "p_dot", "theta", "theta_dot"];

/// Closed axis-aligned box over `[p, p_dot, theta, theta_dot]`, relative to
/// the regulation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypercube {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl Hypercube {
    pub fn new(lo: [f64; 4], hi: [f64; 4]) -> Result<Self> {
        for i in 0..4 {
            if !(lo[i].is_finite() && hi[i].is_finite()) {
                return Err(Error::Region(format!(
                    "{} bounds are not finite",
                    DIMENSIONS[i]
                )));
            }
            if lo[i] > hi[i] {
                return Err(Error::Region(format!(
                    "{} lower bound {} exceeds upper bound {}",
                    DIMENSIONS[i], lo[i], hi[i]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Box `[-h, h]` per dimension.
    pub fn symmetric(half_widths: [f64; 4]) -> Result<Self> {
        Self::new(half_widths.map(|h| -h), half_widths)
    }

    pub fn contains_relative(&self, e: &Vector4<f64>) -> bool {
        (0..4).all(|i| e[i] >= self.lo[i] && e[i] <= self.hi[i])
    }

    /// Membership of `state - [r, 0, 0, 0]`, boundary included.
    pub fn contains(&self, state: &Vector4<f64>, r: f64) -> bool {
        self.contains_relative(&(state - reference_state(r)))
    }

    pub fn is_subset_of(&self, other: &Hypercube) -> bool {
        (0..4).all(|i| self.lo[i] >= other.lo[i] && self.hi[i] <= other.hi[i])
    }

    /// Scales every side about its centre.
    pub fn inflate(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Region(format!("inflation factor {factor}")));
        }
        let mut lo = [0.0; 4];
        let mut hi = [0.0; 4];
        for i in 0..4 {
            let c = 0.5 * (self.lo[i] + self.hi[i]);
            let h = 0.5 * (self.hi[i] - self.lo[i]) * factor;
            lo[i] = c - h;
            hi[i] = c + h;
        }
        Self::new(lo, hi)
    }

    pub fn intersect(&self, other: &Hypercube) -> Result<Self> {
        let mut lo = [0.0; 4];
        let mut hi = [0.0; 4];
        for i in 0..4 {
            lo[i] = self.lo[i].max(other.lo[i]);
            hi[i] = self.hi[i].min(other.hi[i]);
        }
        Self::new(lo, hi).map_err(|_| Error::Region("regions do not overlap".into()))
    }
}

/// 1-based nearest rank of quantile `q` in `n` sorted samples.
fn nearest_rank(q: f64, n: usize) -> usize {
    // the epsilon keeps (1 - 0.99) / 2 * 1000 at rank 5 instead of 6
    let rank = (q * n as f64 - 1e-9).ceil();
    (rank.max(1.0) as usize).min(n)
}

pub const MIN_CALIBRATION_SAMPLES: usize = 100;

/// Per-dimension nearest-rank quantile box holding `coverage` of the
/// samples in each dimension.
pub fn calibrate_region(log: &[Vector4<f64>], coverage: f64) -> Result<Hypercube> {
    if log.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::Calibration(format!(
            "{} samples, need at least {MIN_CALIBRATION_SAMPLES}",
            log.len()
        )));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Calibration(format!(
            "coverage {coverage} outside (0, 1]"
        )));
    }
    let n = log.len();
    let tail = (1.0 - coverage) / 2.0;
    let lo_idx = nearest_rank(tail, n) - 1;
    let hi_idx = nearest_rank(1.0 - tail, n) - 1;
    let mut lo = [0.0; 4];
    let mut hi = [0.0; 4];
    for d in 0..4 {
        let mut col: Vec<f64> = log.iter().map(|x| x[d]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Calibration(format!(
                "non-finite {} sample",
                DIMENSIONS[d]
            )));
        }
        col.sort_by(f64::total_cmp);
        lo[d] = col[lo_idx];
        hi[d] = col[hi_idx];
    }
    Hypercube::new(lo, hi)
}

/// A calibrated region as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFile {
    pub region: Hypercube,
    pub coverage: f64,
    pub source: String,
    pub samples: usize,
    pub margin: f64,
}

impl RegionFile {
    /// Four `lo hi` lines in state order, then `key = value` metadata.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..4 {
            let _ = writeln!(out, "{:.16e} {:.16e}", self.region.lo[i], self.region.hi[i]);
        }
        let _ = writeln!(out, "coverage = {}", self.coverage);
        let _ = writeln!(out, "margin = {}", self.margin);
        let _ = writeln!(out, "samples = {}", self.samples);
        let _ = writeln!(out, "source = {}", self.source);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut lo = [0.0; 4];
        let mut hi = [0.0; 4];
        for i in 0..4 {
            let line = lines
                .next()
                .ok_or_else(|| Error::Region(format!("missing bounds for {}", DIMENSIONS[i])))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Region(format!("{} bounds: {e}", DIMENSIONS[i])))?;
            if vals.len() != 2 {
                return Err(Error::Region(format!(
                    "{} bounds need two values, got {}",
                    DIMENSIONS[i],
                    vals.len()
                )));
            }
            lo[i] = vals[0];
            hi[i] = vals[1];
        }
        let mut file = RegionFile {
            region: Hypercube::new(lo, hi)?,
            coverage: 1.0,
            source: String::new(),
            samples: 0,
            margin: 1.0,
        };
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Region(format!("bad metadata line '{line}'")))?;
            let v = v.trim();
            let bad = |e: &dyn std::fmt::Display| Error::Region(format!("{}: {e}", k.trim()));
            match k.trim() {
                "coverage" => file.coverage = v.parse().map_err(|e| bad(&e))?,
                "margin" => file.margin = v.parse().map_err(|e| bad(&e))?,
                "samples" => file.samples = v.parse().map_err(|e| bad(&e))?,
                "source" => file.source = v.to_string(),
                other => return Err(Error::Region(format!("unknown metadata key '{other}'"))),
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchConfig {
    /// LQG to neural entry region.
    pub omega_nhc: Hypercube,
    /// Neural operating region; leaving it hands control back to LQG.
    pub omega_lhc: Hypercube,
    /// Dwell time inside `omega_nhc` before handing over, s.
    pub t_sw: f64,
}

impl SwitchConfig {
    pub fn new(omega_nhc: Hypercube, omega_lhc: Hypercube, t_sw: f64) -> Result<Self> {
        if t_sw.is_nan() || t_sw < 0.0 {
            return Err(Error::Region(format!("dwell time {t_sw} must be >= 0")));
        }
        Ok(Self {
            omega_nhc,
            omega_lhc,
            t_sw,
        })
    }

    /// Both switching regions must lie inside the region the neural
    /// controller was trained in.
    pub fn validate_against(&self, safe: &Hypercube) -> Result<()> {
        if !self.omega_nhc.is_subset_of(safe) {
            return Err(Error::Region(
                "entry region is not a subset of the safe region".into(),
            ));
        }
        if !self.omega_lhc.is_subset_of(safe) {
            return Err(Error::Region(
                "neural region is not a subset of the safe region".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub to: ActiveController,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchState {
    pub active: ActiveController,
    /// Time since the first consecutive sample inside `omega_nhc`; `None`
    /// while outside it or while the network is active.
    pub dwell: Option<f64>,
    pub events: Vec<SwitchEvent>,
}

impl Default for SwitchState {
    fn default() -> Self {
        Self {
            active: ActiveController::Lqg,
            dwell: None,
            events: Vec::new(),
        }
    }
}

impl SwitchState {
    pub fn step(&mut self, cfg: &SwitchConfig, x_hat: &Vector4<f64>, r: f64, dt: f64, t: f64) {
        match self.active {
            ActiveController::Lqg => {
                if cfg.omega_nhc.contains(x_hat, r) {
                    let elapsed = self.dwell.map_or(0.0, |d| d + dt);
                    // tolerate the rounding of summed sample periods
                    if elapsed >= cfg.t_sw - 1e-9 * dt {
                        self.active = ActiveController::Neural;
                        self.dwell = None;
                        self.events.push(SwitchEvent {
                            t,
                            to: ActiveController::Neural,
                        });
                    } else {
                        self.dwell = Some(elapsed);
                    }
                } else {
                    self.dwell = None;
                }
            }
            ActiveController::Neural => {
                if !cfg.omega_lhc.contains(x_hat, r) {
                    self.active = ActiveController::Lqg;
                    self.events.push(SwitchEvent {
                        t,
                        to: ActiveController::Lqg,
                    });
                }
            }
        }
    }
}

/// LQG and neural controllers behind the switching supervisor, sharing one
/// Kalman estimator.
#[derive(Debug, Clone)]
pub struct HybridRuntime {
    pub lqg: LqgRuntime,
    pub arch: MlpArchitecture,
    pub weights: MlpWeights,
    pub switch: SwitchState,
    pub config: SwitchConfig,
}

impl HybridRuntime {
    pub fn new(lqg: LqgRuntime, weights: MlpWeights, config: SwitchConfig) -> Self {
        Self {
            lqg,
            arch: MlpArchitecture::default(),
            weights,
            switch: SwitchState::default(),
            config,
        }
    }

    pub fn step(&mut self, meas: &Measurement, r: f64) -> Result<(f64, ActiveController)> {
        let design = self.lqg.design;
        let x_hat = self.lqg.estimator.update(&design, meas)?;
        self.lqg.reference = r;
        self.switch.step(&self.config, &x_hat, r, design.ts, meas.t);
        let v = match self.switch.active {
            ActiveController::Lqg => design.voltage(&x_hat, r),
            ActiveController::Neural => mlp_forward(&self.arch, &self.weights, &x_hat, r),
        };
        self.lqg.estimator.commit(&design, v);
        Ok((v, self.switch.active))
    }
}

impl Controller for HybridRuntime {
    fn control(&mut self, meas: &Measurement, r: f64) -> Result<ControlOutput> {
        let (voltage, active) = self.step(meas, r)?;
        Ok(ControlOutput {
            voltage,
            x_hat: self.lqg.estimator.x_hat,
            active,
        })
    }
}
