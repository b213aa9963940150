//! End-to-end tests of the `fedsim` binary: config validation, run outputs,
//! the no-overwrite rule, sweeps, and output determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fedsim")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fedsim_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(
        &path,
        "\
[data]
source = blobs
samples = 400
test_samples = 120
classes = 3
features = 2
spread = 0.5

[partition]
kind = dirichlet
beta = 1.0

[noise]
kind = symmetric
rate_lo = 0.0
rate_hi = 0.4

[engine]
clients = 8
participants = 4
rounds = 6
eval_window = 3
seed = 5
",
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn fedsim")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn validate_accepts_good_config_and_echoes_it() {
    let dir = fresh_dir("validate");
    let cfg = write_config(&dir);
    let out = run(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("config OK"));
    assert!(text.contains("\"clients\": 8"));
}

#[test]
fn validate_rejects_unknown_key_with_path() {
    let dir = fresh_dir("badkey");
    let path = dir.join("bad.cfg");
    std::fs::write(
        &path,
        "[data]\nsource = blobs\nsamples = 100\nclasses = 3\nfeatures = 2\n[engine]\nruonds = 4\n",
    )
    .unwrap();
    let out = run(&["validate", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("engine.ruonds"), "{}", stderr(&out));
}

#[test]
fn run_writes_reports_and_summary_for_repeats() {
    let dir = fresh_dir("repeats");
    let cfg = write_config(&dir);
    let out_dir = dir.join("out");
    let out = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--repeat",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    for i in 0..3 {
        assert!(out_dir.join(format!("report_{i}.json")).exists());
        assert!(out_dir.join(format!("rounds_{i}.csv")).exists());
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "repeat,seed,final_f1");
    assert_eq!(rows.len(), 4);

    // The printed mean matches the three reported repeats.
    let text = stdout(&out);
    assert_eq!(text.matches("repeat ").count(), 3);
    assert!(text.contains("final_f1 mean"));

    // Derived seeds: base 5, then 6 and 7.
    assert!(rows[1].starts_with("0,5,"));
    assert!(rows[2].starts_with("1,6,"));
    assert!(rows[3].starts_with("2,7,"));
}

#[test]
fn rerun_into_same_directory_is_refused() {
    let dir = fresh_dir("norerun");
    let cfg = write_config(&dir);
    let out_dir = dir.join("out");
    let first = run(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = run(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!second.status.success());
    assert!(stderr(&second).contains("refusing to overwrite"), "{}", stderr(&second));
}

#[test]
fn identical_invocations_produce_identical_bytes() {
    let dir = fresh_dir("deterministic");
    let cfg = write_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (out_dir, threads) in [(&out_a, "1"), (&out_b, "3")] {
        let out = run(&[
            "run",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["report.json", "rounds.csv", "summary.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across runs");
    }
}

#[test]
fn report_json_echoes_the_effective_config() {
    let dir = fresh_dir("echo");
    let cfg = write_config(&dir);
    let out_dir = dir.join("out");
    let out = run(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    let validate = run(&["validate", cfg.to_str().unwrap()]);
    let echoed = stdout(&validate);
    let json_start = echoed.find('{').unwrap();
    let effective: serde_json::Value = serde_json::from_str(&echoed[json_start..]).unwrap();
    assert_eq!(report["config"], effective);
}

#[test]
fn rounds_csv_rows_are_ordered_and_complete() {
    let dir = fresh_dir("rounds");
    let cfg = write_config(&dir);
    let out_dir = dir.join("out");
    let out = run(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("rounds.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "round,test_macro_f1,test_accuracy,mean_train_loss,selection_clean_fraction,selected,client_sizes"
    );
    assert_eq!(lines.len(), 7); // header + 6 rounds
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{i},")), "row {i}: {line}");
    }
}

#[test]
fn sweep_produces_combined_summary() {
    let dir = fresh_dir("sweep");
    let cfg = write_config(&dir);
    let out_dir = dir.join("sw");
    let out = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--axis",
        "noise.rate_hi",
        "--values",
        "0.0,0.4,0.8",
        "--repeat",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "axis,value,repeat,seed,final_f1");
    assert_eq!(lines.len(), 1 + 3 * 2); // len(values) * repeat rows
    for value in ["0.0", "0.4", "0.8"] {
        assert!(out_dir.join(format!("noise.rate_hi={value}")).join("report_0.json").exists());
        assert!(lines.iter().any(|l| l.starts_with(&format!("noise.rate_hi,{value},0,"))));
    }
}

#[test]
fn sweep_rejects_unknown_axis() {
    let dir = fresh_dir("badaxis");
    let cfg = write_config(&dir);
    let out = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("sw").to_str().unwrap(),
        "--axis",
        "noise.rate_high",
        "--values",
        "0.1",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("noise.rate_high"), "{}", stderr(&out));
}

#[test]
fn spectrum_subcommand_reads_a_saved_model() {
    let dir = fresh_dir("spectrum");
    let cfg = write_config(&dir);
    let out_dir = dir.join("out");
    let run_out = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--emit-model",
    ]);
    assert!(run_out.status.success(), "{}", stderr(&run_out));
    assert!(out_dir.join("model.json").exists());

    let spec_dir = dir.join("spec");
    let out = run(&[
        "spectrum",
        "--model",
        out_dir.join("model.json").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        spec_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(spec_dir.join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("round,sigma_1,sigma_2"));
    assert!(stdout(&out).contains("collapse gap"));
}

#[test]
fn emit_spectrum_writes_per_round_series() {
    let dir = fresh_dir("emitspec");
    let cfg = write_config(&dir);
    let out_dir = dir.join("out");
    let out = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--emit-spectrum",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("spectrum.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,sigma_1,sigma_2");
    assert_eq!(lines.len(), 7); // header + one row per round
}

#[test]
fn out_root_env_var_redirects_relative_outputs() {
    let dir = fresh_dir("outroot");
    let cfg = write_config(&dir);
    let out = Command::new(bin())
        .args(["run", cfg.to_str().unwrap(), "--out", "nested/run"])
        .env("FEDSIM_OUT_ROOT", &dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.join("nested/run/report.json").exists());
}
