//! Binary-level behavior: artifact determinism, report values, exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn loralab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loralab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY: &[&str] = &[
    "--d-model", "8", "--n-heads", "2", "--n-layers", "1", "--d-ff", "16",
    "--max-seq-len", "8", "--n-per-class", "8", "--n-eval-per-class", "8",
];

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.lads", "b.lads"] {
        let mut args = vec!["gen-data", "--seed", "7", "--out", name];
        args.extend_from_slice(TINY);
        assert_exit(&loralab(&args, dir.path()), 0);
    }
    let a = std::fs::read(dir.path().join("a.lads")).unwrap();
    let b = std::fs::read(dir.path().join("b.lads")).unwrap();
    assert_eq!(a, b, "same seed must produce identical dataset files");

    let mut args = vec!["gen-data", "--seed", "8", "--out", "c.lads"];
    args.extend_from_slice(TINY);
    assert_exit(&loralab(&args, dir.path()), 0);
    let c = std::fs::read(dir.path().join("c.lads")).unwrap();
    assert_ne!(a, c, "different seeds must differ");
}

#[test]
fn count_params_reports_the_expected_trainable_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = loralab(
        &[
            "count-params", "--method", "lora", "--rank", "4", "--targets", "q,v",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let payload: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("count-params prints JSON");
    // Default geometry: 2 layers x 2 targets x 2 x 4 x 64 + head (130).
    assert_eq!(payload["trainable"], 2178);
}

#[test]
fn evaluate_reads_a_score_file_and_reports_eer() {
    let dir = tempfile::tempdir().unwrap();
    let scores = "\
g1,genuine,0.8\ng2,genuine,0.6\ng3,genuine,0.4\n\
s1,spoof,0.7\ns2,spoof,0.5\ns3,spoof,0.3\n";
    std::fs::write(dir.path().join("s.csv"), scores).unwrap();
    let out = loralab(
        &["evaluate", "--scores", "s.csv", "--report", "eer.json"],
        dir.path(),
    );
    assert_exit(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eer.json")).unwrap())
            .unwrap();
    let eer = report["eer"].as_f64().unwrap();
    assert!((eer - 1.0 / 3.0).abs() < 1e-12, "eer {eer}");
    assert_eq!(report["n_genuine"], 3);
    assert_eq!(report["n_spoof"], 3);
}

#[test]
fn grad_check_subcommand_passes_on_the_tiny_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = loralab(
        &["grad-check", "--method", "lora", "--rank", "2", "--seed", "3"],
        dir.path(),
    );
    assert_exit(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max relative error"), "{text}");
}

#[test]
fn missing_input_file_is_exit_2_with_the_path_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = loralab(
        &["evaluate", "--scores", "does-not-exist.csv"],
        dir.path(),
    );
    assert_exit(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does-not-exist.csv"), "{err}");
}

#[test]
fn malformed_score_file_is_exit_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "g1,genuine,0.8\nbroken line\n").unwrap();
    let out = loralab(&["evaluate", "--scores", "bad.csv"], dir.path());
    assert_exit(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn malformed_dataset_file_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.lads"), b"NOTLADS-GARBAGE").unwrap();
    // A valid checkpoint is needed so the failure is attributable to the data.
    let mut args = vec!["pretrain", "--out", "base.ckpt", "--seed", "1", "--epochs", "1"];
    args.extend_from_slice(TINY);
    assert_exit(&loralab(&args, dir.path()), 0);
    let out = loralab(
        &["evaluate", "--checkpoint", "base.ckpt", "--data", "junk.lads"],
        dir.path(),
    );
    assert_exit(&out, 2);
}

#[test]
fn unknown_sweep_axis_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = loralab(&["sweep", "--axis", "flux", "--out-dir", "sw"], dir.path());
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown sweep axis"));
}

#[test]
fn unknown_method_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = loralab(&["count-params", "--method", "prefix"], dir.path());
    assert_exit(&out, 2);
}

#[test]
fn unwritable_output_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "gen-data", "--seed", "1", "--out", "missing-dir/nested/x.lads",
    ];
    args.extend_from_slice(TINY);
    let out = loralab(&args, dir.path());
    assert_exit(&out, 3);
}

#[test]
fn pretrain_adapt_evaluate_pipeline_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "pretrain", "--out", "base.ckpt", "--seed", "5", "--epochs", "2",
        "--report", "pre.json", "--log", "pre.jsonl",
    ];
    args.extend_from_slice(TINY);
    assert_exit(&loralab(&args, dir.path()), 0);

    let mut args = vec![
        "adapt", "--base", "base.ckpt", "--out", "delta.ckpt", "--seed", "5",
        "--epochs", "2", "--method", "lora", "--rank", "2",
        "--scores", "adapted.csv", "--report", "run.json",
    ];
    args.extend_from_slice(TINY);
    assert_exit(&loralab(&args, dir.path()), 0);

    // The run report is valid JSON with the promised fields.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap())
            .unwrap();
    assert!(report["eer"].is_number());
    assert!(report["trainable_params"].is_number());
    assert!(report["float_footprint"].is_number());

    // Score the eval data explicitly through base + delta.
    let mut args = vec![
        "gen-data", "--seed", "77", "--task", "target", "--split", "eval",
        "--out", "eval.lads",
    ];
    args.extend_from_slice(TINY);
    assert_exit(&loralab(&args, dir.path()), 0);
    let mut args = vec![
        "evaluate", "--checkpoint", "base.ckpt", "--delta", "delta.ckpt",
        "--data", "eval.lads", "--scores", "eval.csv", "--report", "eer.json",
    ];
    args.extend_from_slice(TINY);
    let out = loralab(&args, dir.path());
    assert_exit(&out, 0);
    assert!(dir.path().join("eval.csv").exists());

    // Epoch log lines parse as JSON.
    let log = std::fs::read_to_string(dir.path().join("pre.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["mean_loss"].is_number());
    }
}

#[test]
fn rank_sweep_emits_csv_and_json_with_linear_param_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep", "--axis", "rank", "--values", "2,4", "--out-dir", "sw",
        "--seed", "3", "--epochs", "2",
    ];
    args.extend_from_slice(TINY);
    assert_exit(&loralab(&args, dir.path()), 0);
    let csv = std::fs::read_to_string(dir.path().join("sw/sweep_rank.csv")).unwrap();
    assert!(csv.starts_with("r,#Parameters,EER%\n"), "{csv}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sw/sweep_rank.json")).unwrap())
            .unwrap();
    let points = json["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    // d_model 8, 1 layer, targets q,v: c = 1*2*2*8 = 32 per rank unit; head = 18.
    let p2 = points[0]["report"]["trainable_params"].as_u64().unwrap();
    let p4 = points[1]["report"]["trainable_params"].as_u64().unwrap();
    assert_eq!(p2, 18 + 32 * 2);
    assert_eq!(p4, 18 + 32 * 4);
}
