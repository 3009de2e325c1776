use std::fs;
use std::path::{Path, PathBuf};

use pendulum_cli::{run_cli, run_cli_to};

const SMALL: &str = "\
seed = 1

[ga]
generations = 30

[scenario]
duration = 6.0
repeats = 2
";

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn cli(out: &Path, config: &Path, args: &[&str]) -> i32 {
    let mut v = vec![
        "pendulum".to_string(),
        "--out".into(),
        out.display().to_string(),
        "--config".into(),
        config.display().to_string(),
    ];
    v.extend(args.iter().map(|s| s.to_string()));
    run_cli_to(v, &mut std::io::sink())
}

fn pipeline(dir: &Path) {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.join("out");
    assert_eq!(cli(&out, &cfg, &["design"]), 0);
    assert_eq!(cli(&out, &cfg, &["train"]), 0);
    assert!(out.join("genome.txt").exists());
    assert_eq!(
        cli(
            &out,
            &cfg,
            &[
                "run",
                "zero_ic",
                "lqg",
                "--duration",
                "20",
                "--repeats",
                "1"
            ]
        ),
        0
    );
    assert_eq!(
        cli(
            &out,
            &cfg,
            &[
                "run",
                "zero_ic",
                "neural",
                "--duration",
                "20",
                "--repeats",
                "1"
            ]
        ),
        0
    );
    assert_eq!(
        cli(
            &out,
            &cfg,
            &["calibrate", "traj_zero_ic_lqg.csv", "--region", "nhc"]
        ),
        0
    );
    assert_eq!(
        cli(
            &out,
            &cfg,
            &["calibrate", "traj_zero_ic_neural.csv", "--region", "lhc"]
        ),
        0
    );
    for sc in ["zero_ic", "offset_ic", "square_low", "square_high"] {
        for c in ["lqg", "hybrid"] {
            assert_eq!(cli(&out, &cfg, &["run", sc, c]), 0, "{sc} {c}");
        }
    }
    assert_eq!(cli(&out, &cfg, &["report"]), 0);
}

#[test]
fn usage_error_exits_2() {
    assert_eq!(run_cli(["pendulum"]), 2);
    assert_eq!(
        run_cli(["pendulum", "calibrate", "x.csv", "--region", "mid"]),
        2
    );
    assert_eq!(run_cli(["pendulum", "--help"]), 0);
}

#[test]
fn design_writes_report() {
    let dir = workdir("design");
    let code = run_cli(["pendulum", "--out", dir.to_str().unwrap(), "design"]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(dir.join("design.txt")).unwrap();
    assert!(text.contains("K = ["));
    assert!(text.contains("spectral radius"));
}

#[test]
fn bad_config_exits_1() {
    let dir = workdir("badcfg");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "[plant]\ncart_mass = -1.0\n").unwrap();
    assert_eq!(cli(&dir, &cfg, &["design"]), 1);
    assert!(!dir.join("design.txt").exists());
}

#[test]
fn hybrid_without_genome_exits_1() {
    let dir = workdir("nogenome");
    let code = run_cli([
        "pendulum",
        "--out",
        dir.to_str().unwrap(),
        "run",
        "zero_ic",
        "hybrid",
    ]);
    assert_eq!(code, 1);
    assert!(
        fs::read_dir(&dir).unwrap().next().is_none(),
        "no partial output"
    );
}

#[test]
fn report_names_missing_cell() {
    let dir = workdir("noreport");
    let code = run_cli(["pendulum", "--out", dir.to_str().unwrap(), "report"]);
    assert_eq!(code, 1);
}

#[test]
fn pipeline_is_deterministic() {
    let a = workdir("pipe_a");
    let b = workdir("pipe_b");
    pipeline(&a);
    pipeline(&b);
    let table = fs::read_to_string(a.join("out/table2.txt")).unwrap();
    assert!(table.contains("Switch events"));
    let mut compared = 0;
    for entry in fs::read_dir(a.join("out")).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_str().unwrap().to_string();
        if name.ends_with(".csv") || name.ends_with(".region") || name == "genome.txt" {
            let x = fs::read(a.join("out").join(&name)).unwrap();
            let y = fs::read(b.join("out").join(&name)).unwrap();
            assert!(x == y, "{name} differs between runs");
            compared += 1;
        }
    }
    // 9 trajectories, 9 summaries, history, table, genome, two regions
    assert_eq!(compared, 23);
}
