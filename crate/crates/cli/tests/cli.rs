use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "--styles",
    "2",
    "--text",
    "an ah",
    "--text",
    "he",
    "--seeds-per-condition",
    "2",
    "--units",
    "6",
    "--sequences-per-style",
    "4",
    "--epochs",
    "2",
    "--latent-dim",
    "3",
    "--gpfa-max-iter",
    "10",
];

/// `SMALL` with some flag values replaced.
fn small<'a>(replace: &[(&str, &'a str)]) -> Vec<&'a str> {
    let mut args: Vec<&'a str> = SMALL.to_vec();
    for (flag, value) in replace {
        let i = args.iter().position(|a| a == flag).expect("flag in SMALL");
        args[i + 1] = value;
    }
    args
}

fn neurotraj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurotraj"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(out: &Path, sub: &str, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    neurotraj(&args)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn help_exits_zero() {
    assert_eq!(neurotraj(&["--help"]).status.code(), Some(0));
    assert_eq!(neurotraj(&["pipeline", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(neurotraj(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(neurotraj(&["pipeline", "--bogus"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "pipeline", &["--seeds-per-condition", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir.path(), "pipeline", &["--top-k", "9", "--latent-dim", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("report.json").exists());

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_key = 3\n").unwrap();
    let out = run_in(dir.path(), "pipeline", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad config"));
}

#[test]
fn stage_failure_exits_two_and_flags_report() {
    let dir = tempfile::tempdir().unwrap();
    let args = small(&[("--latent-dim", "7"), ("--units", "3")]);
    let out = run_in(dir.path(), "pipeline", &args);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage"), "{stderr}");
    let r = report(dir.path());
    assert_eq!(r["complete"], Value::Bool(false));
    assert!(r["error"].as_str().unwrap().contains("stage"));

    let missing = dir.path().join("nowhere");
    let out = run_in(dir.path(), "preprocess", &["--bundle", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"seed = 11
styles = 2
texts = ["an ah", "he"]
seeds_per_condition = 5
latent_dim = 3

[synth]
units_per_layer = 6

[corpus]
sequences_per_style = 4

[train]
epochs = 2

[gpfa]
max_iter = 10
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = run_in(
        &out_dir,
        "pipeline",
        &["--config", cfg.to_str().unwrap(), "--seeds-per-condition", "2"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_dir);
    assert_eq!(r["config"]["seed"], 11);
    assert_eq!(r["config"]["seeds_per_condition"], 2);
    // Partial tables keep the run defaults for keys they omit.
    assert_eq!(r["config"]["gpfa"]["max_iter"], 10);
    assert_eq!(r["config"]["gpfa"]["seg_length"], 20);
    assert_eq!(r["config"]["train"]["optimizer"]["kind"], "adam");
    assert_eq!(r["trials_per_layer"], 3 * 2 * 2);
    assert_eq!(r["complete"], Value::Bool(true));
    assert_eq!(r["layers"].as_array().unwrap().len(), 3);
    for artifact in r["artifacts"].as_array().unwrap() {
        assert!(out_dir.join(artifact.as_str().unwrap()).exists(), "{artifact}");
    }
    assert!(out_dir.join("timings.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("report.json"));
}

#[test]
fn single_style_reports_empty_group() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = small(&[("--styles", "1")]);
    args.push("--no-unprimed");
    let out = run_in(dir.path(), "pipeline", &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    for layer in r["layers"].as_array().unwrap() {
        let err = layer["style_separation"]["error"].as_str().unwrap();
        assert!(err.contains("a group empty"), "{err}");
    }
}

#[test]
fn subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    let ok = |out: Output| {
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };

    ok(run_in(&d.join("corpus"), "corpus", SMALL));
    assert!(d.join("corpus/held_out.json").exists());

    let mut args = SMALL.to_vec();
    let corpus = p("corpus/corpus.json");
    args.extend_from_slice(&["--corpus", &corpus]);
    ok(run_in(&d.join("train"), "train", &args));

    let net = p("train/net.txt");
    let mut args = SMALL.to_vec();
    args.extend_from_slice(&["--net", &net, "--style", "1", "--count", "3"]);
    ok(run_in(&d.join("sample"), "sample", &args));
    let bundle = p("sample/bundle");
    assert!(Path::new(&bundle).join("manifest.json").exists());

    ok(run_in(&d.join("pre"), "preprocess", &["--bundle", &bundle, "--layer", "1"]));
    assert!(d.join("pre/preprocess.json").exists());

    let mut args = SMALL.to_vec();
    args.extend_from_slice(&["--bundle", &bundle, "--layer", "1"]);
    ok(run_in(&d.join("fit"), "gpfa-fit", &args));
    let model = p("fit/gpfa_model.txt");

    ok(run_in(&d.join("proj"), "project", &["--bundle", &bundle, "--model", &model, "--k", "2"]));
    let csv = std::fs::read_to_string(d.join("proj/trajectories.csv")).unwrap();
    assert!(csv.starts_with("trial,t,dim1,dim2\n"));

    ok(run_in(
        &d.join("plot"),
        "plot",
        &["--kind", "trajectories", "--bundle", &bundle, "--model", &model, "--text-id", "0"],
    ));
    let svg = std::fs::read_to_string(d.join("plot/trajectories.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3 * 3);

    let out = run_in(
        &d.join("none"),
        "plot",
        &["--kind", "trajectories", "--bundle", &bundle, "--model", &model, "--style", "4"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("none/trajectories.svg").exists());

    ok(run_in(
        &d.join("plot"),
        "plot",
        &["--kind", "chars", "--bundle", &bundle, "--model", &model, "--chars", "ah"],
    ));
    assert!(d.join("plot/chars.svg").exists());

    // One style only, so the separation test reports an empty group.
    let mut args = SMALL.to_vec();
    args.extend_from_slice(&["--bundle", &bundle, "--model", &model]);
    ok(run_in(&d.join("an"), "analyze", &args));
    let analysis = std::fs::read_to_string(d.join("an/analysis.json")).unwrap();
    assert!(analysis.contains("a group empty"));

    let kl = p("an/kl.csv");
    ok(run_in(&d.join("plot"), "plot", &["--kind", "kl", "--kl-csv", &kl]));
    assert!(d.join("plot/kl.svg").exists());
}
