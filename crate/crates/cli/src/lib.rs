//! Command-line front end: design, train, calibrate, run, report, sweep.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use pendulum_hybrid::config::{load_config, Config};
use pendulum_hybrid::evo::{evolve, sweep_table1, FitnessConfig};
use pendulum_hybrid::harness::{
    calibrated_region, read_trajectory_csv, report_table2, run_repeated_full, steady_state_log,
    trajectory_csv, ControllerSpec, RepeatSummary, RunSummary, Scenario, ScenarioKind, Table2Cell,
};
use pendulum_hybrid::neural::{bang_bang_fraction, decode_genome, MlpGenome};
use pendulum_hybrid::switch::{RegionFile, SwitchConfig};
use pendulum_hybrid::{Error, Result};

pub const GENOME_FILE: &str = "genome.txt";

#[derive(Debug, Parser)]
#[command(
    name = "pendulum",
    version,
    about = "Hybrid LQG / neural inverted-pendulum lab"
)]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Config file, or `default`.
    #[arg(long, global = true, default_value = "default")]
    config: String,

    /// Output directory. Relative artifact paths resolve against it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegionKind {
    /// LQG to neural entry region, from an LQG log.
    Nhc,
    /// Neural operating region, from a neural log.
    Lhc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ControllerArg {
    Lqg,
    Neural,
    Hybrid,
}

impl ControllerArg {
    fn name(self) -> &'static str {
        match self {
            ControllerArg::Lqg => "lqg",
            ControllerArg::Neural => "neural",
            ControllerArg::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    #[value(name = "zero_ic")]
    ZeroIc,
    #[value(name = "offset_ic")]
    OffsetIc,
    #[value(name = "square_low")]
    SquareLow,
    #[value(name = "square_high")]
    SquareHigh,
}

impl ScenarioArg {
    fn kind(self) -> ScenarioKind {
        match self {
            ScenarioArg::ZeroIc => ScenarioKind::ZeroIc,
            ScenarioArg::OffsetIc => ScenarioKind::OffsetIc,
            ScenarioArg::SquareLow => ScenarioKind::SquareLow,
            ScenarioArg::SquareHigh => ScenarioKind::SquareHigh,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the default configuration as a starting point for a config file.
    Config,
    /// Synthesize the LQG design and print gains, radii and residuals.
    Design,
    /// Train the neural controller and write the genome file.
    Train {
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        population: Option<usize>,
    },
    /// Calibrate a switching region from a trajectory CSV.
    Calibrate {
        trajectory: PathBuf,
        #[arg(long, value_enum)]
        region: RegionKind,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        coverage: Option<f64>,
        /// Leading seconds to ignore.
        #[arg(long)]
        skip: Option<f64>,
    },
    /// Run one scenario with one controller.
    Run {
        #[arg(value_enum)]
        scenario: ScenarioArg,
        #[arg(value_enum)]
        controller: ControllerArg,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Build the LQG versus hybrid grid from run summaries.
    Report,
    /// Train one controller per weight pair and tabulate balancing RMS.
    Sweep {
        /// Comma-separated `P_w:A_w` pairs, centimetres and degrees.
        #[arg(long, default_value = "0.5:2,0.5:1,0.5:0.5,1:0.5,2:0.5")]
        pairs: String,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_to(args, &mut std::io::stdout())
}

/// As [`run_cli`], with command output sent to `out`. Usage and error
/// messages still go to stderr.
pub fn run_cli_to<I, T, W>(args: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: std::io::Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path, what: &str) -> Result<String> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!(
            "missing {what} '{}'",
            path.display()
        )));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_genome(out: &Path) -> Result<MlpGenome> {
    let path = out.join(GENOME_FILE);
    if !path.exists() {
        return Err(Error::InvalidInput(format!(
            "missing genome file '{}' (run `train` first)",
            path.display()
        )));
    }
    MlpGenome::load(&path)
}

fn load_region(out: &Path, name: &str) -> Result<RegionFile> {
    let path = out.join(name);
    if !path.exists() {
        return Err(Error::InvalidInput(format!(
            "missing region file '{}' (run `calibrate` first)",
            path.display()
        )));
    }
    RegionFile::load(&path)
}

fn execute(cli: Cli) -> Result<String> {
    if let Command::Config = cli.command {
        return Ok(Config::reference_text());
    }
    let mut cfg = load_config(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Config => unreachable!("handled above"),
        Command::Design => design(&cfg, out),
        Command::Train {
            generations,
            population,
        } => train(&cfg, out, generations, population),
        Command::Calibrate {
            trajectory,
            region,
            margin,
            coverage,
            skip,
        } => calibrate(&cfg, out, &trajectory, region, margin, coverage, skip),
        Command::Run {
            scenario,
            controller,
            duration,
            repeats,
        } => run(&cfg, out, scenario, controller, duration, repeats),
        Command::Report => report(out),
        Command::Sweep {
            pairs,
            generations,
            repeats,
        } => sweep(&cfg, out, &pairs, generations, repeats),
    }
}

fn design(cfg: &Config, out: &Path) -> Result<String> {
    let d = cfg.sim_setup()?.design;
    let mut s = String::new();
    let _ = writeln!(s, "LQG design (Ts = {} s)", d.ts);
    let _ = writeln!(
        s,
        "K = [{:.6}, {:.6}, {:.6}, {:.6}]",
        d.k[0], d.k[1], d.k[2], d.k[3]
    );
    let _ = writeln!(s, "L =");
    for i in 0..4 {
        let _ = writeln!(s, "  [{:.6}, {:.6}]", d.l[(i, 0)], d.l[(i, 1)]);
    }
    let _ = writeln!(
        s,
        "closed-loop spectral radius = {:.6}",
        d.closed_loop_radius
    );
    let _ = writeln!(s, "estimator spectral radius = {:.6}", d.estimator_radius);
    let _ = writeln!(
        s,
        "LQR Riccati residual = {:.3e} ({} iterations)",
        d.lqr_residual, d.lqr_iterations
    );
    let _ = writeln!(
        s,
        "Kalman Riccati residual = {:.3e} ({} iterations)",
        d.kalman_residual, d.kalman_iterations
    );
    write(&out.join("design.txt"), &s)?;
    Ok(s)
}

fn train(
    cfg: &Config,
    out: &Path,
    generations: Option<usize>,
    population: Option<usize>,
) -> Result<String> {
    let setup = cfg.sim_setup()?;
    let mut ga = cfg.ga_config();
    if let Some(g) = generations {
        ga.generations = g;
    }
    if let Some(p) = population {
        ga.population = p;
    }
    let result = evolve(&ga, &cfg.fitness, &cfg.safe_region()?, &setup)?;
    result.best.save(&out.join(GENOME_FILE))?;
    write(&out.join("training_history.csv"), &result.history_csv())?;

    // bang-bang statistic on a balancing run of the trained network
    let sc = Scenario::standard(ScenarioKind::ZeroIc, &cfg.scenario, cfg.seed)?;
    let run = &run_repeated_full(
        &sc,
        &ControllerSpec::Neural(decode_genome(&result.best)),
        &setup,
        1,
    )?[0];
    let volts: Vec<f64> = run.trajectory.samples.iter().map(|s| s.voltage).collect();
    let bang = bang_bang_fraction(&volts, cfg.plant.voltage_mid, 2.0);

    let r = &result.best_record;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "generations = {}, population = {}",
        ga.generations, ga.population
    );
    let _ = writeln!(s, "initial best F = {:.6}", result.initial_best_f());
    let _ = writeln!(s, "final best F = {:.6}", r.f);
    let _ = writeln!(s, "best survived all episodes = {}", r.survived);
    let _ = writeln!(
        s,
        "best episode RMS: position {:.6} m, angle {:.6} deg",
        r.pos_rms, r.angle_rms
    );
    let _ = writeln!(
        s,
        "balancing run: position RMS {:.6} m, angle RMS {:.6} deg{}",
        run.pos_rms,
        run.angle_rms,
        match run.failure() {
            Some((t, _)) => format!(", FAILED at {t:.2} s"),
            None => String::new(),
        }
    );
    let _ = writeln!(s, "bang-bang fraction (|V - 2.5| > 2.0 V) = {bang:.4}");
    write(&out.join("training_report.txt"), &s)?;
    Ok(s)
}

fn calibrate(
    cfg: &Config,
    out: &Path,
    trajectory: &Path,
    region: RegionKind,
    margin: Option<f64>,
    coverage: Option<f64>,
    skip: Option<f64>,
) -> Result<String> {
    let sw = &cfg.switch;
    let (file, default_margin) = match region {
        RegionKind::Nhc => (&sw.nhc_file, sw.nhc_margin),
        RegionKind::Lhc => (&sw.lhc_file, sw.lhc_margin),
    };
    let margin = margin.unwrap_or(default_margin);
    let coverage = coverage.unwrap_or(sw.coverage);
    let path = resolve(out, trajectory);
    let rows = read_trajectory_csv(&read(&path, "trajectory")?)?;
    let log = steady_state_log(&rows, skip.unwrap_or(sw.calibration_skip));
    let safe = cfg.safe_region()?;
    let region_box = calibrated_region(&log, coverage, margin, &safe.0)?;
    let rf = RegionFile {
        region: region_box,
        coverage,
        source: trajectory.display().to_string(),
        samples: log.len(),
        margin,
    };
    rf.save(&out.join(file))?;
    let mut s = format!("wrote {} from {} samples\n", file, log.len());
    s.push_str(&rf.to_text());
    Ok(s)
}

fn run(
    cfg: &Config,
    out: &Path,
    scenario: ScenarioArg,
    controller: ControllerArg,
    duration: Option<f64>,
    repeats: Option<usize>,
) -> Result<String> {
    let mut settings = cfg.scenario;
    if let Some(d) = duration {
        settings.duration = d;
    }
    let repeats = repeats.unwrap_or(settings.repeats);
    let setup = cfg.sim_setup()?;
    let spec = match controller {
        ControllerArg::Lqg => ControllerSpec::Lqg,
        ControllerArg::Neural => ControllerSpec::Neural(decode_genome(&load_genome(out)?)),
        ControllerArg::Hybrid => {
            let weights = decode_genome(&load_genome(out)?);
            let nhc = load_region(out, &cfg.switch.nhc_file)?;
            let lhc = load_region(out, &cfg.switch.lhc_file)?;
            let switch = SwitchConfig::new(nhc.region, lhc.region, cfg.switch.t_sw)?;
            switch.validate_against(&cfg.safe_region()?.0)?;
            ControllerSpec::Hybrid { weights, switch }
        }
    };
    let kind = scenario.kind();
    let sc = Scenario::standard(kind, &settings, cfg.seed)?;
    let runs = run_repeated_full(&sc, &spec, &setup, repeats)?;
    let stem = format!("{}_{}", kind.name(), controller.name());
    write(
        &out.join(format!("traj_{stem}.csv")),
        &trajectory_csv(&runs[0].trajectory.samples),
    )?;
    let summary = RepeatSummary::from_runs(
        kind,
        controller.name(),
        runs.iter().map(|r| RunSummary::of(r, setup.ts())).collect(),
    )?;
    write(&out.join(format!("summary_{stem}.csv")), &summary.to_csv())?;

    let mut s = format!(
        "{} / {}: {} run(s) of {} s\n",
        kind.name(),
        controller.name(),
        repeats,
        settings.duration
    );
    for (i, r) in summary.runs.iter().enumerate() {
        let _ = writeln!(
            s,
            "  run {i}: position RMS {:.6} m, angle RMS {:.6} deg, {} switch events{}",
            r.pos_rms,
            r.angle_rms,
            r.switches,
            r.failed_at
                .map(|t| format!(", FAILED at {t:.2} s"))
                .unwrap_or_default()
        );
    }
    let _ = writeln!(
        s,
        "  mean: position RMS {:.6} m, angle RMS {:.6} deg, {:.1} switch events",
        summary.mean_pos_rms, summary.mean_angle_rms, summary.mean_switches
    );
    Ok(s)
}

fn report(out: &Path) -> Result<String> {
    let mut cells = Vec::new();
    for kind in ScenarioKind::TABLE {
        for (hybrid, name) in [(false, "lqg"), (true, "hybrid")] {
            let path = out.join(format!("summary_{}_{}.csv", kind.name(), name));
            if !path.exists() {
                return Err(Error::Report(format!(
                    "missing {name} result for {} ('{}')",
                    kind.name(),
                    path.display()
                )));
            }
            let sum = RepeatSummary::from_csv(&read(&path, "run summary")?)?;
            cells.push(Table2Cell {
                hybrid,
                kind,
                pos_rms: sum.mean_pos_rms,
                angle_rms: sum.mean_angle_rms,
                switch_events: Some(sum.mean_switches),
            });
        }
    }
    let rep = report_table2(&cells)?;
    write(&out.join("table2.txt"), &rep.text)?;
    write(&out.join("table2.csv"), &rep.csv)?;
    Ok(rep.text)
}

fn parse_pairs(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput(format!("pair '{p}' must be P_w:A_w")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("'{s}': {e}")))
            };
            // centimetres on the command line, metres inside
            Ok((num(a)? / 100.0, num(b)?))
        })
        .collect()
}

fn sweep(
    cfg: &Config,
    out: &Path,
    pairs: &str,
    generations: Option<usize>,
    repeats: Option<usize>,
) -> Result<String> {
    let pairs = parse_pairs(pairs)?;
    for (pw, aw) in &pairs {
        FitnessConfig {
            position_weight: *pw,
            angle_weight: *aw,
            ..cfg.fitness
        }
        .check()
        .map_err(|(f, m)| Error::InvalidInput(format!("{f}: {m}")))?;
    }
    let mut ga = cfg.ga_config();
    if let Some(g) = generations {
        ga.generations = g;
    }
    let setup = cfg.sim_setup()?;
    let balance = Scenario::standard(ScenarioKind::ZeroIc, &cfg.scenario, cfg.seed)?;
    let rep = sweep_table1(
        &pairs,
        &ga,
        &cfg.fitness,
        &cfg.safe_region()?,
        &setup,
        &balance,
        repeats.unwrap_or(cfg.scenario.repeats),
    )?;
    let text = rep.to_text();
    write(&out.join("table1.txt"), &text)?;
    write(&out.join("table1.csv"), &rep.to_csv())?;
    Ok(text)
}
