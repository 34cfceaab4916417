use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gdnls(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdnls"))
        .args(args)
        .current_dir(dir)
        .env_remove("GDNLS_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn run_cmd(dir: &Path, command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    gdnls(dir, &args)
}

const RANDOM_SIM: &str = r#"
command = "simulate"
seed = 11
[model]
sigma = 2.0
[grid]
n_points = 256
domain_length = 60.0
[initial_condition]
family = "random_smooth"
h1_norm = 0.3
[stepper]
dt = 0.01
t_end = 1.0
record_every = 20
"#;

#[test]
fn same_config_and_seed_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.toml", RANDOM_SIM);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(code(&run_cmd(tmp.path(), "simulate", &cfg, &a, &[])), 0);
    assert_eq!(code(&run_cmd(tmp.path(), "simulate", &cfg, &b, &[])), 0);
    assert_eq!(code(&run_cmd(tmp.path(), "simulate", &cfg, &c, &["--seed", "12"])), 0);
    for name in ["timeseries.csv", "report.json"] {
        let first = std::fs::read(a.join(name)).unwrap();
        assert_eq!(first, std::fs::read(b.join(name)).unwrap(), "{name}");
        assert_ne!(first, std::fs::read(c.join(name)).unwrap(), "{name}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(c.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 12);
    assert_eq!(report["config"]["seed"], 12);
    assert_eq!(report["status"], "ok");
}

#[test]
fn unknown_key_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[stepper]\ndt = 0.01\nstepsize = 2\n");
    let out = run_cmd(tmp.path(), "simulate", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stepsize"), "{stderr}");
}

#[test]
fn waveop_rejects_small_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "w.toml", "[model]\nsigma = 2.0\n");
    let out = run_cmd(tmp.path(), "waveop", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.sigma"));
}

#[test]
fn mismatched_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.toml", RANDOM_SIM);
    let out = run_cmd(tmp.path(), "scatter", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn blow_up_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "blow.toml",
        r#"
[model]
sigma = 3.0
[grid]
n_points = 256
domain_length = 40.0
[initial_condition]
family = "gaussian"
amplitude = 3.0
phase_velocity = 2.0
[stepper]
dt = 0.002
t_end = 2.0
max_linf_growth = 2.0
"#,
    );
    let out_dir = tmp.path().join("o");
    let out = run_cmd(tmp.path(), "simulate", &cfg, &out_dir, &[]);
    assert_eq!(code(&out), 3);
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"blow_up\""));
}

#[test]
fn boundary_mass_taints_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "wide.toml",
        r#"
[grid]
n_points = 128
domain_length = 20.0
[initial_condition]
family = "gaussian"
amplitude = 0.3
width = 3.0
[stepper]
dt = 0.01
t_end = 0.2
record_every = 10
"#,
    );
    let out = run_cmd(tmp.path(), "simulate", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(code(&out), 4);
}

#[test]
fn large_scatter_data_leaves_the_small_regime() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "big.toml",
        r#"
[model]
sigma = 3.0
[grid]
n_points = 256
domain_length = 60.0
[initial_condition]
family = "gaussian"
amplitude = 1.0
[scatter]
horizon = 16.0
"#,
    );
    let out = run_cmd(tmp.path(), "scatter", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(code(&out), 5);
}

#[test]
fn output_root_variable_anchors_relative_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let cfg = write_config(
        tmp.path(),
        "f.toml",
        "[outputs]\ndirectory = \"results\"\n[grid]\nn_points = 128\ndomain_length = 40.0\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_gdnls"))
        .args(["functionals", "--config", cfg.to_str().unwrap()])
        .current_dir(tmp.path())
        .env("GDNLS_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("results/report.json").is_file());
    assert!(root.join("results/functionals.csv").is_file());
}

#[test]
fn snapshot_feeds_back_as_initial_data() {
    let tmp = tempfile::tempdir().unwrap();
    let first = write_config(
        tmp.path(),
        "f.toml",
        r#"
seed = 3
[grid]
n_points = 128
domain_length = 40.0
[initial_condition]
family = "random_smooth"
h1_norm = 0.2
[outputs]
formats = ["snapshots"]
"#,
    );
    let out_dir = tmp.path().join("first");
    assert_eq!(code(&run_cmd(tmp.path(), "functionals", &first, &out_dir, &[])), 0);
    let snap = out_dir.join("snapshots/u.gdnls");
    let bytes = std::fs::read(&snap).unwrap();
    assert_eq!(&bytes[..6], b"GDNLS1");

    let second = write_config(
        tmp.path(),
        "s.toml",
        r#"
[grid]
n_points = 128
domain_length = 40.0
[initial_condition]
family = "file"
path = "first/snapshots/u.gdnls"
[outputs]
formats = ["snapshots"]
"#,
    );
    let again = tmp.path().join("second");
    assert_eq!(code(&run_cmd(tmp.path(), "functionals", &second, &again, &[])), 0);
    assert_eq!(std::fs::read(again.join("snapshots/u.gdnls")).unwrap(), bytes);

    let mismatch = write_config(
        tmp.path(),
        "m.toml",
        "[grid]\nn_points = 256\ndomain_length = 40.0\n[initial_condition]\nfamily = \"file\"\npath = \"first/snapshots/u.gdnls\"\n",
    );
    assert_eq!(code(&run_cmd(tmp.path(), "functionals", &mismatch, &tmp.path().join("m"), &[])), 2);
}

#[test]
fn sweep_isolates_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sweep.toml",
        r#"
[model]
sigma = 3.0
[grid]
n_points = 256
domain_length = 40.0
[initial_condition]
family = "gaussian"
amplitude = 0.3
phase_velocity = 2.0
[stepper]
dt = 0.002
t_end = 0.5
record_every = 50
max_linf_growth = 2.0
[sweep]
command = "simulate"
amplitude = [0.3, 3.0]
"#,
    );
    let out_dir = tmp.path().join("o");
    let out = run_cmd(tmp.path(), "sweep", &cfg, &out_dir, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,,3e-1,,ok,0"), "{}", lines[1]);
    assert!(lines[2].contains("blow_up,3"), "{}", lines[2]);
    assert!(out_dir.join("row_000/timeseries.csv").is_file());
    assert!(out_dir.join("row_001/report.json").is_file());
}

#[test]
fn empty_sweep_gives_an_empty_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", "[sweep]\ncommand = \"functionals\"\nomega = []\n");
    let out_dir = tmp.path().join("o");
    assert_eq!(code(&run_cmd(tmp.path(), "sweep", &cfg, &out_dir, &[])), 0);
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);
}

#[test]
fn waveop_table_carries_the_relation_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "w.toml",
        r#"
[model]
sigma = 3.0
[grid]
n_points = 1024
domain_length = 320.0
[initial_condition]
family = "gaussian"
amplitude = 1.0
width = 2.0
h1_norm = 0.1
[stepper]
dt = 0.02
record_every = 10
[waveop]
t0 = 1.0
tn = 16.0
"#,
    );
    let out_dir = tmp.path().join("o");
    let out = run_cmd(tmp.path(), "waveop", &cfg, &out_dir, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("timeseries.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert_eq!(header, "t,mass,energy,momentum,l2,h1,linf,boundary_mass,relation_residual");
    assert!(table.lines().count() > 10);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let fits = report["fits"].as_array().unwrap();
    assert!(!fits.is_empty());
    for fit in fits {
        assert!(fit["window"].is_array() && fit["points"].as_u64().unwrap() >= 8, "{fit}");
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = gdnls::config::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 6);
}
