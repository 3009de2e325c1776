//! Experiment scenarios, RMS metrics, trajectory CSV and report rendering.

use std::fmt::Write as _;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqg::{reference_state, Estimator, LqgRuntime};
use crate::neural::{MlpWeights, NeuralRuntime};
use crate::plant::PlantState;
use crate::rng::{derive_seed, purpose, RngStream};
use crate::sim::{simulate, ActiveController, RunEnd, Sample, SimSetup, Trajectory};
use crate::switch::{calibrate_region, HybridRuntime, Hypercube, SwitchConfig, SwitchEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    ZeroIc,
    OffsetIc,
    SquareLow,
    SquareHigh,
    Custom,
}

impl ScenarioKind {
    pub const TABLE: [ScenarioKind; 4] = [
        ScenarioKind::ZeroIc,
        ScenarioKind::OffsetIc,
        ScenarioKind::SquareLow,
        ScenarioKind::SquareHigh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ZeroIc => "zero_ic",
            ScenarioKind::OffsetIc => "offset_ic",
            ScenarioKind::SquareLow => "square_low",
            ScenarioKind::SquareHigh => "square_high",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "zero_ic" => ScenarioKind::ZeroIc,
            "offset_ic" => ScenarioKind::OffsetIc,
            "square_low" => ScenarioKind::SquareLow,
            "square_high" => ScenarioKind::SquareHigh,
            "custom" => ScenarioKind::Custom,
            other => return Err(Error::InvalidInput(format!("unknown scenario '{other}'"))),
        })
    }

    fn is_square(self) -> bool {
        matches!(self, ScenarioKind::SquareLow | ScenarioKind::SquareHigh)
    }

    fn title(self) -> &'static str {
        match self {
            ScenarioKind::ZeroIc => "Balancing, zero IC",
            ScenarioKind::OffsetIc => "Balancing, offset IC",
            ScenarioKind::SquareLow => "Tracking, low-freq square",
            ScenarioKind::SquareHigh => "Tracking, high-freq square",
            ScenarioKind::Custom => "Custom",
        }
    }
}

/// Scenario defaults shared by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSettings {
    /// Run length, s.
    pub duration: f64,
    pub repeats: usize,
    /// Square-wave amplitude, m.
    pub amplitude: f64,
    pub low_frequency: f64,
    pub high_frequency: f64,
    /// Initial cart offset for the offset scenario, m.
    pub offset: f64,
    /// Half-width of the random initial `p` and `theta` in the zero scenario.
    pub zero_ic_spread: f64,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        Self {
            duration: 100.0,
            repeats: 5,
            amplitude: 0.15,
            low_frequency: 0.05,
            high_frequency: 0.5,
            offset: 0.15,
            zero_ic_spread: 0.01,
        }
    }
}

impl ScenarioSettings {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in [
            ("duration", self.duration),
            ("low_frequency", self.low_frequency),
            ("high_frequency", self.high_frequency),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("offset", self.offset),
            ("zero_ic_spread", self.zero_ic_spread),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err((name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.repeats == 0 {
            return Err(("repeats", "must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub initial: PlantState,
    /// Square-wave frequency, Hz.
    pub frequency: f64,
    /// Square-wave amplitude, m.
    pub amplitude: f64,
    pub duration: f64,
    /// Half-width of the seeded initial `p` and `theta` for the zero scenario.
    pub ic_spread: f64,
    pub seed: u64,
}

impl Scenario {
    /// One of the four standard experiments. The zero scenario draws its
    /// small initial perturbation from `seed`.
    pub fn standard(kind: ScenarioKind, settings: &ScenarioSettings, seed: u64) -> Result<Self> {
        let mut sc = Scenario {
            kind,
            initial: PlantState::new(0.0, 0.0, 0.0, 0.0),
            frequency: 0.0,
            amplitude: 0.0,
            duration: settings.duration,
            ic_spread: settings.zero_ic_spread,
            seed,
        };
        match kind {
            ScenarioKind::ZeroIc => sc = sc.with_seed(seed),
            ScenarioKind::OffsetIc => sc.initial.p = settings.offset,
            ScenarioKind::SquareLow => {
                sc.frequency = settings.low_frequency;
                sc.amplitude = settings.amplitude;
            }
            ScenarioKind::SquareHigh => {
                sc.frequency = settings.high_frequency;
                sc.amplitude = settings.amplitude;
            }
            ScenarioKind::Custom => {
                return Err(Error::InvalidInput(
                    "custom scenarios are built with Scenario::custom".into(),
                ))
            }
        }
        sc.check()?;
        Ok(sc)
    }

    /// Free-form scenario. A positive frequency gives a square reference.
    pub fn custom(
        initial: PlantState,
        frequency: f64,
        amplitude: f64,
        duration: f64,
        seed: u64,
    ) -> Result<Self> {
        let sc = Scenario {
            kind: ScenarioKind::Custom,
            initial,
            frequency,
            amplitude,
            duration,
            ic_spread: 0.0,
            seed,
        };
        sc.check()?;
        Ok(sc)
    }

    /// Same scenario under another seed. The zero scenario redraws its
    /// initial perturbation.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut sc = Scenario { seed, ..*self };
        if sc.kind == ScenarioKind::ZeroIc {
            let s = sc.ic_spread;
            let mut rng = RngStream::new(seed, purpose::SCENARIO_IC, &[]);
            let p = rng.uniform(-s, s);
            let theta = rng.uniform(-s, s);
            sc.initial = PlantState::new(p, 0.0, theta, 0.0);
        }
        sc
    }

    pub fn check(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidInput(format!(
                "duration {} must be > 0",
                self.duration
            )));
        }
        if self.kind.is_square() && !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(Error::InvalidInput(format!(
                "square-wave frequency {} must be > 0",
                self.frequency
            )));
        }
        if !self.initial.is_finite() {
            return Err(Error::InvalidInput("initial state must be finite".into()));
        }
        Ok(())
    }

    fn is_square(&self) -> bool {
        self.kind.is_square() || (self.kind == ScenarioKind::Custom && self.frequency > 0.0)
    }
}

/// Cart position reference at time `t`: zero for balancing, a square wave
/// starting at `+amplitude` otherwise.
pub fn reference_signal(sc: &Scenario, t: f64) -> f64 {
    if !sc.is_square() {
        return 0.0;
    }
    if (t * sc.frequency).fract() < 0.5 {
        sc.amplitude
    } else {
        -sc.amplitude
    }
}

/// `(pos_rms m, angle_rms deg)` over every sample.
pub fn compute_rms(samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Metric("cannot compute RMS of an empty log".into()));
    }
    let n = samples.len() as f64;
    let (sp, sa) = samples.iter().fold((0.0, 0.0), |(sp, sa), s| {
        let e = s.state.p - s.r;
        (sp + e * e, sa + s.state.theta * s.state.theta)
    });
    Ok(((sp / n).sqrt(), (sa / n).sqrt().to_degrees()))
}

/// Controller under test.
#[derive(Debug, Clone)]
pub enum ControllerSpec {
    Lqg,
    Neural(MlpWeights),
    Hybrid {
        weights: MlpWeights,
        switch: SwitchConfig,
    },
}

impl ControllerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerSpec::Lqg => "lqg",
            ControllerSpec::Neural(_) => "neural",
            ControllerSpec::Hybrid { .. } => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scenario: Scenario,
    pub controller: &'static str,
    pub trajectory: Trajectory,
    pub pos_rms: f64,
    pub angle_rms: f64,
    pub switch_events: Vec<SwitchEvent>,
}

impl RunResult {
    /// Failure time and reason, if the run did not complete.
    pub fn failure(&self) -> Option<(f64, &str)> {
        match &self.trajectory.end {
            RunEnd::Failed { t, reason } => Some((*t, reason.as_str())),
            _ => None,
        }
    }
}

/// Controller changes read off the logged active flags. The supervisor
/// starts on LQG.
pub fn switch_events(samples: &[Sample]) -> Vec<SwitchEvent> {
    let mut prev = ActiveController::Lqg;
    let mut out = Vec::new();
    for s in samples {
        if s.active != prev {
            out.push(SwitchEvent {
                t: s.t,
                to: s.active,
            });
            prev = s.active;
        }
    }
    out
}

/// Runs one closed-loop experiment. Sensor noise and the scenario's own
/// randomness come from `sc.seed`, so different controllers on the same
/// scenario see the same noise sequence.
pub fn run_experiment(sc: &Scenario, ctrl: &ControllerSpec, setup: &SimSetup) -> Result<RunResult> {
    sc.check()?;
    let mut noise = RngStream::new(sc.seed, purpose::SENSOR_NOISE, &[]);
    let reference = |t: f64| reference_signal(sc, t);
    let never = |_: &PlantState, _: f64| false;
    let trajectory = match ctrl {
        ControllerSpec::Lqg => simulate(
            setup,
            |m| LqgRuntime::new(setup.design, Estimator::from_measurement(m)),
            sc.initial,
            &reference,
            sc.duration,
            &mut noise,
            never,
        ),
        ControllerSpec::Neural(w) => simulate(
            setup,
            |m| NeuralRuntime::new(w.clone(), setup.design, Estimator::from_measurement(m)),
            sc.initial,
            &reference,
            sc.duration,
            &mut noise,
            never,
        ),
        ControllerSpec::Hybrid { weights, switch } => simulate(
            setup,
            |m| {
                HybridRuntime::new(
                    LqgRuntime::new(setup.design, Estimator::from_measurement(m)),
                    weights.clone(),
                    *switch,
                )
            },
            sc.initial,
            &reference,
            sc.duration,
            &mut noise,
            never,
        ),
    };
    let (pos_rms, angle_rms) = if trajectory.samples.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        compute_rms(&trajectory.samples)?
    };
    Ok(RunResult {
        scenario: *sc,
        controller: ctrl.name(),
        switch_events: switch_events(&trajectory.samples),
        trajectory,
        pos_rms,
        angle_rms,
    })
}

/// Per-run numbers kept by a repeated experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub pos_rms: f64,
    pub angle_rms: f64,
    pub switches: usize,
    /// Seconds spent on the neural controller.
    pub neural_time: f64,
    pub failed_at: Option<f64>,
}

impl RunSummary {
    pub fn of(run: &RunResult, ts: f64) -> Self {
        let neural = run
            .trajectory
            .samples
            .iter()
            .filter(|s| s.active == ActiveController::Neural)
            .count();
        RunSummary {
            seed: run.scenario.seed,
            pos_rms: run.pos_rms,
            angle_rms: run.angle_rms,
            switches: run.switch_events.len(),
            neural_time: neural as f64 * ts,
            failed_at: run.failure().map(|(t, _)| t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSummary {
    pub kind: ScenarioKind,
    pub controller: String,
    pub runs: Vec<RunSummary>,
    pub mean_pos_rms: f64,
    pub mean_angle_rms: f64,
    pub mean_switches: f64,
    pub failures: usize,
}

impl RepeatSummary {
    pub fn from_runs(kind: ScenarioKind, controller: &str, runs: Vec<RunSummary>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Metric("no runs to summarize".into()));
        }
        let n = runs.len() as f64;
        Ok(RepeatSummary {
            kind,
            controller: controller.to_string(),
            mean_pos_rms: runs.iter().map(|r| r.pos_rms).sum::<f64>() / n,
            mean_angle_rms: runs.iter().map(|r| r.angle_rms).sum::<f64>() / n,
            mean_switches: runs.iter().map(|r| r.switches as f64).sum::<f64>() / n,
            failures: runs.iter().filter(|r| r.failed_at.is_some()).count(),
            runs,
        })
    }

    /// Per-run CSV followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# scenario = {}\n# controller = {}\nrun,seed,pos_rms_m,angle_rms_deg,switches,neural_time_s,failed_at_s\n",
            self.kind.name(),
            self.controller
        );
        for (i, r) in self.runs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{:.12e},{:.12e},{},{:.2},{}",
                i,
                r.seed,
                r.pos_rms,
                r.angle_rms,
                r.switches,
                r.neural_time,
                r.failed_at.map(|t| format!("{t:.2}")).unwrap_or_default()
            );
        }
        let _ = writeln!(
            out,
            "mean,,{:.12e},{:.12e},{},,{}",
            self.mean_pos_rms, self.mean_angle_rms, self.mean_switches, self.failures
        );
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Report(format!("run summary: {m}"));
        let mut kind = None;
        let mut controller = None;
        let mut runs = Vec::new();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    match k.trim() {
                        "scenario" => kind = Some(ScenarioKind::parse(v.trim())?),
                        "controller" => controller = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            if line.starts_with("run,") || line.starts_with("mean,") || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
            runs.push(RunSummary {
                seed: f[1]
                    .parse()
                    .map_err(|e| bad(format!("seed '{}': {e}", f[1])))?,
                pos_rms: num(f[2])?,
                angle_rms: num(f[3])?,
                switches: f[4]
                    .parse()
                    .map_err(|e| bad(format!("switches '{}': {e}", f[4])))?,
                neural_time: num(f[5])?,
                failed_at: if f[6].is_empty() {
                    None
                } else {
                    Some(num(f[6])?)
                },
            });
        }
        let kind = kind.ok_or_else(|| bad("missing scenario header".into()))?;
        let controller = controller.ok_or_else(|| bad("missing controller header".into()))?;
        Self::from_runs(kind, &controller, runs)
    }
}

/// Seed of repeat `i` of a scenario seeded with `seed`.
pub fn repeat_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, "repeat", &[i as u64])
}

/// Runs `repeats` independently seeded copies of `sc` and averages them.
pub fn run_repeated(
    sc: &Scenario,
    ctrl: &ControllerSpec,
    setup: &SimSetup,
    repeats: usize,
) -> Result<RepeatSummary> {
    let runs = run_repeated_full(sc, ctrl, setup, repeats)?;
    RepeatSummary::from_runs(
        sc.kind,
        ctrl.name(),
        runs.iter().map(|r| RunSummary::of(r, setup.ts())).collect(),
    )
}

/// Like [`run_repeated`] but keeps every trajectory.
pub fn run_repeated_full(
    sc: &Scenario,
    ctrl: &ControllerSpec,
    setup: &SimSetup,
    repeats: usize,
) -> Result<Vec<RunResult>> {
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be >= 1".into()));
    }
    (0..repeats)
        .map(|i| run_experiment(&sc.with_seed(repeat_seed(sc.seed, i)), ctrl, setup))
        .collect()
}

pub const TRAJECTORY_HEADER: &str = "t,p,p_dot,theta,theta_dot,p_hat,pdot_hat,theta_hat,thetadot_hat,p_meas,theta_meas,r,voltage,active";

/// Trajectory CSV, one row per control period.
pub fn trajectory_csv(samples: &[Sample]) -> String {
    let mut out = String::with_capacity(samples.len() * 260 + 128);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for s in samples {
        let cols = [
            s.t,
            s.state.p,
            s.state.p_dot,
            s.state.theta,
            s.state.theta_dot,
            s.x_hat[0],
            s.x_hat[1],
            s.x_hat[2],
            s.x_hat[3],
            s.meas.p_meas,
            s.meas.theta_meas,
            s.r,
            s.voltage,
        ];
        for c in cols {
            let _ = write!(out, "{c:.12e},");
        }
        let _ = writeln!(out, "{}", s.active.flag());
    }
    out
}

/// One parsed trajectory CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub state: Vector4<f64>,
    pub x_hat: Vector4<f64>,
    pub p_meas: f64,
    pub theta_meas: f64,
    pub r: f64,
    pub voltage: f64,
    pub active: ActiveController,
}

impl CsvRow {
    /// Estimated state relative to the reference equilibrium.
    pub fn estimate_error(&self) -> Vector4<f64> {
        self.x_hat - reference_state(self.r)
    }
}

pub fn read_trajectory_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(Error::InvalidInput(
                "trajectory CSV must start with the standard header".into(),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::InvalidInput(format!("trajectory CSV line {}: {m}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(bad(format!("expected 14 columns, got {}", f.len())));
        }
        let mut v = [0.0; 13];
        for (k, x) in v.iter_mut().enumerate() {
            *x = f[k]
                .trim()
                .parse()
                .map_err(|e| bad(format!("'{}': {e}", f[k])))?;
        }
        let active = match f[13].trim() {
            "0" => ActiveController::Lqg,
            "1" => ActiveController::Neural,
            other => return Err(bad(format!("active flag '{other}' must be 0 or 1"))),
        };
        rows.push(CsvRow {
            t: v[0],
            state: Vector4::new(v[1], v[2], v[3], v[4]),
            x_hat: Vector4::new(v[5], v[6], v[7], v[8]),
            p_meas: v[9],
            theta_meas: v[10],
            r: v[11],
            voltage: v[12],
            active,
        });
    }
    Ok(rows)
}

/// Reference-relative state estimates logged at or after `skip` seconds.
pub fn steady_state_log<'a, I>(rows: I, skip: f64) -> Vec<Vector4<f64>>
where
    I: IntoIterator<Item = &'a CsvRow>,
{
    rows.into_iter()
        .filter(|r| r.t >= skip)
        .map(CsvRow::estimate_error)
        .collect()
}

/// Calibrated box inflated by `margin` about its centre and clipped to the
/// safe region.
pub fn calibrated_region(
    log: &[Vector4<f64>],
    coverage: f64,
    margin: f64,
    safe: &Hypercube,
) -> Result<Hypercube> {
    calibrate_region(log, coverage)?
        .inflate(margin)?
        .intersect(safe)
}

/// Samples of a run as trajectory CSV rows, without the text round trip.
pub fn csv_rows(samples: &[Sample]) -> Vec<CsvRow> {
    samples
        .iter()
        .map(|s| CsvRow {
            t: s.t,
            state: s.state.vector(),
            x_hat: s.x_hat,
            p_meas: s.meas.p_meas,
            theta_meas: s.meas.theta_meas,
            r: s.r,
            voltage: s.voltage,
            active: s.active,
        })
        .collect()
}

/// One cell pair of the comparison grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table2Cell {
    pub hybrid: bool,
    pub kind: ScenarioKind,
    pub pos_rms: f64,
    pub angle_rms: f64,
    pub switch_events: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Report {
    pub text: String,
    pub csv: String,
}

/// Two significant figures, keeping trailing zeros.
pub fn format_sig2(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.1}");
    }
    let decimals = (1 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn percent_delta(hybrid: f64, lqg: f64) -> f64 {
    100.0 * (hybrid - lqg) / lqg
}

fn find_cell(cells: &[Table2Cell], hybrid: bool, kind: ScenarioKind) -> Result<Table2Cell> {
    cells
        .iter()
        .find(|c| c.hybrid == hybrid && c.kind == kind)
        .copied()
        .ok_or_else(|| {
            Error::Report(format!(
                "missing {} result for {}",
                if hybrid { "hybrid" } else { "LQG" },
                kind.name()
            ))
        })
}

/// Renders the LQG versus hybrid grid over the four standard scenarios:
/// position RMS to two significant figures, angle RMS to two decimals,
/// percent deltas and switch-event counts.
pub fn report_table2(cells: &[Table2Cell]) -> Result<Table2Report> {
    let mut lqg = Vec::new();
    let mut hyb = Vec::new();
    for kind in ScenarioKind::TABLE {
        lqg.push(find_cell(cells, false, kind)?);
        hyb.push(find_cell(cells, true, kind)?);
    }

    let w0 = 12;
    let w1 = 22;
    let wc = 27;
    let mut text = format!("{:<w0$}{:<w1$}", "Controller", "Parameter");
    for kind in ScenarioKind::TABLE {
        let _ = write!(text, "{:>wc$}", kind.title());
    }
    text.push('\n');
    let mut row = |label: &str, param: &str, vals: Vec<String>| {
        let _ = write!(text, "{label:<w0$}{param:<w1$}");
        for v in vals {
            let _ = write!(text, "{v:>wc$}");
        }
        text.push('\n');
    };
    row(
        "LQG",
        "Cart position RMS, m",
        lqg.iter().map(|c| format_sig2(c.pos_rms)).collect(),
    );
    row(
        "",
        "Rod angle RMS, dgr",
        lqg.iter().map(|c| format!("{:.2}", c.angle_rms)).collect(),
    );
    row(
        "Hybrid",
        "Cart position RMS, m",
        hyb.iter().map(|c| format_sig2(c.pos_rms)).collect(),
    );
    row(
        "",
        "Rod angle RMS, dgr",
        hyb.iter().map(|c| format!("{:.2}", c.angle_rms)).collect(),
    );
    row(
        "Delta",
        "Cart position RMS, %",
        lqg.iter()
            .zip(&hyb)
            .map(|(l, h)| format!("{:+.1}%", percent_delta(h.pos_rms, l.pos_rms)))
            .collect(),
    );
    row(
        "",
        "Rod angle RMS, %",
        lqg.iter()
            .zip(&hyb)
            .map(|(l, h)| format!("{:+.1}%", percent_delta(h.angle_rms, l.angle_rms)))
            .collect(),
    );
    row(
        "Hybrid",
        "Switch events",
        hyb.iter()
            .map(|c| {
                c.switch_events
                    .map(|n| format!("{n:.1}"))
                    .unwrap_or_else(|| "-".into())
            })
            .collect(),
    );

    let mut csv = String::from(
        "controller,scenario,pos_rms_m,angle_rms_deg,pos_delta_pct,angle_delta_pct,switch_events\n",
    );
    for (l, h) in lqg.iter().zip(&hyb) {
        let _ = writeln!(
            csv,
            "lqg,{},{},{},,,{}",
            l.kind.name(),
            l.pos_rms,
            l.angle_rms,
            l.switch_events.map(|n| n.to_string()).unwrap_or_default()
        );
        let _ = writeln!(
            csv,
            "hybrid,{},{},{},{:.1},{:.1},{}",
            h.kind.name(),
            h.pos_rms,
            h.angle_rms,
            percent_delta(h.pos_rms, l.pos_rms),
            percent_delta(h.angle_rms, l.angle_rms),
            h.switch_events.map(|n| n.to_string()).unwrap_or_default()
        );
    }
    Ok(Table2Report { text, csv })
}

/// Reads cells from a grid CSV (the format [`report_table2`] writes; the
/// delta columns are ignored).
pub fn parse_table2_csv(text: &str) -> Result<Vec<Table2Cell>> {
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Report(format!("grid CSV line {}: {m}", i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 columns, got {}", f.len())));
        }
        let hybrid = match f[0] {
            "lqg" => false,
            "hybrid" => true,
            other => return Err(bad(format!("unknown controller '{other}'"))),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
        cells.push(Table2Cell {
            hybrid,
            kind: ScenarioKind::parse(f[1])?,
            pos_rms: num(f[2])?,
            angle_rms: num(f[3])?,
            switch_events: if f[6].is_empty() {
                None
            } else {
                Some(num(f[6])?)
            },
        });
    }
    Ok(cells)
}
