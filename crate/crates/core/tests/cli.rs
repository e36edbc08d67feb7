//! End-to-end checks of the command-line surface: determinism, the
//! generate -> fit -> eval pipeline, and error exit codes
//! (1 usage, 2 data, 3 internal).

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tcclust"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn tcclust")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn init_config_is_parseable_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    assert_ok(&run(&["init-config", "--out", cfg.to_str().unwrap()]));
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("kappa1"));
    assert!(text.contains("[synthesis]"));

    // an unknown key must be rejected with a usage exit code
    std::fs::write(&cfg, format!("{text}\nturbo = true\n")).unwrap();
    let out = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x.tcd").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("turbo"));
}

#[test]
fn generate_fit_eval_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.tcd");
    let truth = dir.path().join("toy.truth.tcr");
    let gen_args = [
        "generate", "--mode", "tccrp", "--n", "300", "--dim", "6", "--seed", "7",
        "--out", data.to_str().unwrap(), "--truth-out", truth.to_str().unwrap(),
    ];
    assert_ok(&run(&gen_args));
    let bytes_data = read(&data);
    let bytes_truth = read(&truth);

    // identical seeds give identical checksums
    assert_ok(&run(&gen_args));
    assert_eq!(bytes_data, read(&data));
    assert_eq!(bytes_truth, read(&truth));

    let result = dir.path().join("fit.tcr");
    let fit_args = [
        "fit", "--data", data.to_str().unwrap(), "--out", result.to_str().unwrap(),
        "--sweeps", "30", "--burn-in", "10", "--seed", "3",
    ];
    assert_ok(&run(&fit_args));
    let bytes_fit = read(&result);
    let trace = dir.path().join("fit.tcr.trace.csv");
    let bytes_trace = read(&trace);
    assert!(String::from_utf8_lossy(&bytes_trace).starts_with("sweep,log_prob"));

    assert_ok(&run(&fit_args));
    assert_eq!(bytes_fit, read(&result));
    assert_eq!(bytes_trace, read(&trace));

    // evaluating the fit produces both report files
    let report = dir.path().join("report");
    assert_ok(&run(&[
        "eval", "--result", result.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
    ]));
    let txt = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(txt.contains("purity "));
    assert!(txt.contains("shot_frame_coverage "));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!(json.get("purity").is_some());
    assert!(json.get("shot").is_some());
}

#[test]
fn eval_of_truth_against_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.tcd");
    assert_ok(&run(&[
        "generate", "--mode", "tccrf", "--n", "400", "--dim", "5", "--seed", "21",
        "--segments", "4", "--out", data.to_str().unwrap(),
    ]));
    let truth = dir.path().join("toy.truth.tcr"); // default sidecar location
    assert!(truth.exists());
    let report = dir.path().join("self");
    assert_ok(&run(&[
        "eval", "--result", truth.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
    ]));
    let txt = std::fs::read_to_string(dir.path().join("self.txt")).unwrap();
    let purity_line = txt.lines().find(|l| l.starts_with("purity ")).unwrap();
    assert_eq!(purity_line, "purity 1.000000");
    let linking = txt.lines().find(|l| l.starts_with("linking_fraction ")).unwrap();
    assert_eq!(linking, "linking_fraction 1.000000");
}

#[test]
fn summarize_emits_segment_index() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.tcd");
    assert_ok(&run(&[
        "generate", "--n", "250", "--dim", "4", "--seed", "9",
        "--out", data.to_str().unwrap(),
    ]));
    let truth = dir.path().join("toy.truth.tcr");
    let base = dir.path().join("sum");
    assert_ok(&run(&[
        "summarize", "--result", truth.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", base.to_str().unwrap(),
    ]));
    let txt = std::fs::read_to_string(dir.path().join("sum.txt")).unwrap();
    assert!(txt.contains("conciseness "));
    assert!(txt.contains("shot_representativeness_x100 "));
    let csv = std::fs::read_to_string(dir.path().join("sum.segments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("start_frame,end_frame,significant,labels"));
    assert!(lines.next().is_some());
}

#[test]
fn online_and_baseline_modes_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.tcd");
    assert_ok(&run(&[
        "generate", "--n", "200", "--dim", "4", "--seed", "2",
        "--out", data.to_str().unwrap(),
    ]));
    let online = dir.path().join("online.tcr");
    assert_ok(&run(&[
        "fit", "--data", data.to_str().unwrap(), "--out", online.to_str().unwrap(),
        "--online", "--samples-per-point", "5", "--seed", "1",
    ]));
    let text = std::fs::read_to_string(&online).unwrap();
    assert!(text.starts_with("tcr 1\nmode tccrp"));

    let base = dir.path().join("baseline.tcr");
    assert_ok(&run(&[
        "fit", "--data", data.to_str().unwrap(), "--out", base.to_str().unwrap(),
        "--mode", "crp-baseline", "--sweeps", "10", "--burn-in", "2", "--seed", "1",
    ]));
    assert!(std::fs::read_to_string(&base).unwrap().starts_with("tcr 1\nmode crp-baseline"));
}

#[test]
fn chains_write_one_result_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.tcd");
    assert_ok(&run(&[
        "generate", "--n", "150", "--dim", "3", "--seed", "4",
        "--out", data.to_str().unwrap(),
    ]));
    let out = dir.path().join("multi.tcr");
    assert_ok(&run(&[
        "fit", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--sweeps", "10", "--burn-in", "2", "--seed", "5", "--chains", "3",
    ]));
    for c in 0..3 {
        assert!(dir.path().join(format!("multi.tcr.chain{c}")).exists(), "chain {c} output");
    }
}

#[test]
fn data_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    // missing dataset
    let out = run(&[
        "fit", "--data", dir.path().join("absent.tcd").to_str().unwrap(),
        "--out", dir.path().join("r.tcr").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // corrupt dataset
    let bad = dir.path().join("bad.tcd");
    std::fs::write(&bad, "tcd 1 text\ndim 2\nlen 10\nframes 100\ncount 1\nrecords\n0 0 9 - - -\nend\n").unwrap();
    let out = run(&[
        "fit", "--data", bad.to_str().unwrap(),
        "--out", dir.path().join("r.tcr").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));

    // missing truth file for eval
    let data = dir.path().join("toy.tcd");
    assert_ok(&run(&["generate", "--n", "120", "--dim", "3", "--seed", "1", "--out", data.to_str().unwrap()]));
    let out = run(&[
        "eval", "--result", dir.path().join("absent.tcr").to_str().unwrap(),
        "--data", data.to_str().unwrap(), "--out", dir.path().join("rep").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_reports_first_offending_id_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("a.tcd");
    assert_ok(&run(&["generate", "--n", "120", "--dim", "3", "--seed", "1", "--out", data.to_str().unwrap()]));
    let other = dir.path().join("b.tcd");
    assert_ok(&run(&["generate", "--n", "100", "--dim", "3", "--seed", "2", "--out", other.to_str().unwrap()]));
    let out = run(&[
        "eval",
        "--result", dir.path().join("b.truth.tcr").to_str().unwrap(),
        "--data", data.to_str().unwrap(),
        "--out", dir.path().join("rep").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("offending id"), "{err}");
}

#[test]
fn usage_errors_exit_with_code_one() {
    let out = run(&["fit"]); // missing required flags
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["generate", "--mode", "nonsense", "--out", "/tmp/x.tcd"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn binary_encoding_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bin.tcd");
    let args = [
        "generate", "--n", "100", "--dim", "4", "--seed", "6", "--binary",
        "--out", data.to_str().unwrap(),
    ];
    assert_ok(&run(&args));
    let first = read(&data);
    assert_ok(&run(&args));
    assert_eq!(first, read(&data));
    // the binary file fits fine
    assert_ok(&run(&[
        "fit", "--data", data.to_str().unwrap(),
        "--out", dir.path().join("r.tcr").to_str().unwrap(),
        "--sweeps", "5", "--burn-in", "1", "--seed", "1",
    ]));
}
