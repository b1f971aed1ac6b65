use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use engage_cli::ExperimentConfig;
use engage_core::cohort::load_cohort;
use engage_core::experiments::parse_runs_csv;

const SMOKE: &str = r#"
experiment_id = "smoke"
seed = 11

[ablation]
rho2 = [1.0, 2.0]
c_scale = [2.0]
horizon = [40]
patients = 3
replications = 2
baseline_reps = 4

[[algorithms]]
kind = "ucb-bold"

[[algorithms]]
kind = "fixed"
arm = 1

[[algorithms]]
kind = "random"

[sysid]
reps = 8
checkpoints = [64, 256, 1024]
"#;

fn engage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engage"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn smoke_config(dir: &Path) -> PathBuf {
    let p = dir.join("smoke.cfg");
    std::fs::write(&p, SMOKE).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn experiment1_config_is_the_four_by_four_grid() {
    let cfg = ExperimentConfig::load(&shipped("experiment1.cfg")).unwrap();
    let a = cfg.ablation_config();
    assert_eq!(a.grid.rho2, vec![0.5, 1.0, 1.5, 2.0]);
    assert_eq!(a.grid.c_scale, vec![0.0, 1.0, 2.0, 3.0]);
    assert_eq!(a.grid.cells().len(), 16);
    assert_eq!(a.grid.horizon, vec![730]);
    assert_eq!(
        a.labels(),
        vec!["UCB-BOLD", "GLM-Bandit", "LFA-Q", "TC-Q", "Fixed1", "Fixed2", "Random", "Optimal"]
    );
}

#[test]
fn shipped_configs_parse() {
    let cells: Vec<usize> = (1..=4)
        .map(|n| {
            ExperimentConfig::load(&shipped(&format!("experiment{n}.cfg")))
                .unwrap()
                .ablation_config()
                .grid
                .cells()
                .len()
        })
        .collect();
    assert_eq!(cells, vec![16, 16, 6, 8]);
    for n in 1..=4 {
        let cfg = ExperimentConfig::load(&shipped(&format!("experiment{n}.cfg"))).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
    let e2 = ExperimentConfig::load(&shipped("experiment2.cfg")).unwrap();
    assert_eq!(e2.ablation_config().grid.horizon, vec![180]);
}

#[test]
fn empty_config_fails_with_required_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.cfg");
    std::fs::write(&p, "").unwrap();
    let out = engage(&["ablate", "--config", s(&p), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for f in ["experiment_id", "seed", "ablation", "algorithms"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn ablate_then_summarize_reproduces_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let run = dir.path().join("run");
    let out = engage(&["ablate", "--config", s(&cfg), "--profile", "desk", "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["runs.csv", "cvar.csv", "ecdf.csv", "summary.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }

    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 11);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(summary["artifact_version"], env!("CARGO_PKG_VERSION"));
    assert!(summary["wall_time"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["partial"], false);

    let rows = parse_runs_csv(&std::fs::read(run.join("runs.csv")).unwrap()).unwrap();
    let finals = rows.iter().filter(|r| r.t == r.horizon).count();
    assert_eq!(finals, 2 * 3 * 2 * 3);

    let again = dir.path().join("again");
    let out = engage(&[
        "summarize",
        "--runs",
        s(&run.join("runs.csv")),
        "--out",
        s(&again),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["cvar.csv", "ecdf.csv"] {
        assert_eq!(
            std::fs::read(run.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let mut bytes = Vec::new();
    for w in ["1", "3"] {
        let o = dir.path().join(format!("w{w}"));
        let out = engage(&["ablate", "--config", s(&cfg), "--workers", w, "--out", s(&o)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push((
            std::fs::read(o.join("runs.csv")).unwrap(),
            std::fs::read(o.join("cvar.csv")).unwrap(),
        ));
    }
    assert!(bytes[0] == bytes[1]);
}

#[test]
fn seed_flag_and_env_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let a = dir.path().join("a");
    let out = engage(&["cohort-sample", "--config", s(&cfg), "--seed", "5", "--out", s(&a)]);
    assert!(out.status.success());
    let b = dir.path().join("b");
    let out = Command::new(env!("CARGO_BIN_EXE_engage"))
        .args(["cohort-sample", "--config", s(&cfg), "--out", s(&b)])
        .env("ENGAGE_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    let ca = load_cohort(&a.join("cohort.json")).unwrap();
    assert_eq!(ca, load_cohort(&b.join("cohort.json")).unwrap());
    assert_eq!(ca.len(), 3);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(b.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 5);
}

#[test]
fn sysid_reports_both_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = engage(&["sysid", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("slopes.json")).unwrap()).unwrap();
    assert!(report["theta_slope"].as_f64().unwrap().is_finite());
    assert!(report["mu_slope"].as_f64().unwrap().is_finite());
    assert_eq!(report["checkpoints"].as_array().unwrap().len(), 3);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("theta slope") && stdout.contains("mu slope"));
}

#[test]
fn simulate_matches_the_sweep_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let run = dir.path().join("run");
    assert!(engage(&["ablate", "--config", s(&cfg), "--out", s(&run)]).status.success());
    let sim = dir.path().join("sim");
    let out = engage(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&sim),
        "--cell",
        "1",
        "--patient",
        "2",
        "--replication",
        "1",
        "--algorithm",
        "Fixed1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut traj = csv::Reader::from_path(sim.join("trajectory.csv")).unwrap();
    let last = traj.records().map(|r| r.unwrap()).last().unwrap();
    assert_eq!(&last[0], "40");
    let rows = parse_runs_csv(&std::fs::read(run.join("runs.csv")).unwrap()).unwrap();
    let row = rows
        .iter()
        .find(|r| r.rho2_scale == 2.0 && r.patient_id == 2 && r.replication == 1 && r.algorithm == "Fixed1" && r.t == 40)
        .unwrap();
    assert_eq!(last[5].parse::<f64>().unwrap(), row.cum_regret);
    assert_eq!(last[6].parse::<f64>().unwrap(), row.norm_regret);
}

#[test]
fn commands_without_config_fail() {
    let out = engage(&["ablate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}
