use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use drivecast::commands::{trace_svg, window_svg};
use drivecast::eval::{scores_from_csv, EvaluationReport};
use drivecast::manifest::{sha256_hex, RunManifest};
use serde_json::Value;

const SUBCOMMANDS: [&str; 9] = [
    "track-fit",
    "gen",
    "prepare",
    "train",
    "tune",
    "crossval",
    "evaluate",
    "predict",
    "bench",
];

fn drivecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivecast"))
        .args(args)
        .arg("-q")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = drivecast(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The JSON error record of a failed run.
fn failure(args: &[&str]) -> Value {
    let out = drivecast(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line:?} is not JSON: {e}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// gen → track-fit → prepare → train on three short laps, built once.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        let laps = root.join("laps");
        let track = root.join("track.json");
        let data = root.join("data");
        let model = root.join("model");
        ok(&["gen", "--laps", "3", "--seed", "3", "--out", s(&laps)]);
        ok(&[
            "track-fit",
            "--in",
            s(&laps.join("margins.csv")),
            "--out",
            s(&track),
        ]);
        ok(&[
            "prepare",
            "--manifest",
            s(&laps.join("laps.json")),
            "--track",
            s(&track),
            "--split",
            "1,1,1",
            "--out",
            s(&data),
        ]);
        ok(&[
            "train",
            "--data",
            s(&data),
            "--budget",
            "tiny",
            "--u-ed",
            "20",
            "--out",
            s(&model),
        ]);
        root
    })
}

fn model_path() -> PathBuf {
    fixture().join("model/model.bin")
}

fn data_path() -> PathBuf {
    fixture().join("data")
}

#[test]
fn help_on_every_subcommand() {
    for sub in SUBCOMMANDS {
        let out = Command::new(env!("CARGO_BIN_EXE_drivecast"))
            .args([sub, "--help"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage"), "{sub}: {text}");
        assert!(text.contains("--seed") && text.contains("--out") && text.contains("--config"));
    }
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/margins.csv");
    let err = failure(&[
        "track-fit",
        "--in",
        s(&missing),
        "--out",
        s(&dir.path().join("t.json")),
    ]);
    assert_eq!(err["error"], "MissingInput");
    assert!(err["message"].as_str().unwrap().contains(s(&missing)));
}

#[test]
fn usage_errors_are_single_line_json() {
    let err = failure(&["prepare", "--tp", "many"]);
    assert_eq!(err["error"], "Usage");
    let err = failure(&[
        "gen",
        "--scenario",
        "rain",
        "--out",
        "/tmp/never-written-drivecast",
    ]);
    assert_eq!(err["error"], "UnknownScenario");
}

#[test]
fn explicit_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"laps": 2, "seed": 5, "gen": {"scenario": "new_driver"}}"#,
    )
    .unwrap();
    let out = dir.path().join("gen");
    ok(&["gen", "--config", s(&cfg), "--laps", "1", "--out", s(&out)]);
    let rep = json(&out.join("gen_report.json"));
    assert_eq!(rep["laps"], 1);
    assert_eq!(rep["scenario"], "new_driver");
    let run = RunManifest::load(&out.join("run_manifest.json")).unwrap();
    assert_eq!(run.seeds["seed"], 5);
    assert!(run.inputs.iter().any(|d| d.path == s(&cfg)));
}

#[test]
fn manifests_record_output_digests() {
    let data = data_path();
    let run = RunManifest::load(&data.join("run_manifest.json")).unwrap();
    assert_eq!(run.command, "prepare");
    assert!(run.outputs.len() >= 10);
    for d in &run.outputs {
        let bytes = fs::read(data.join(&d.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), d.sha256, "{}", d.path);
        assert_eq!(bytes.len() as u64, d.bytes);
    }
    let train = RunManifest::load(&fixture().join("model/run_manifest.json")).unwrap();
    let digest_of = |name: &str| {
        run.outputs
            .iter()
            .find(|d| d.path == name)
            .unwrap()
            .sha256
            .clone()
    };
    assert!(train
        .inputs
        .iter()
        .any(|d| d.path.ends_with("train.bin") && d.sha256 == digest_of("train.bin")));
    assert_eq!(train.flags["command"]["train"]["budget"]["budget"], "tiny");
}

#[test]
fn tampered_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("data");
    fs::create_dir_all(&copy).unwrap();
    for e in fs::read_dir(data_path()).unwrap() {
        let e = e.unwrap();
        if e.path().is_file() {
            fs::copy(e.path(), copy.join(e.file_name())).unwrap();
        }
    }
    let bin = copy.join("test.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes[0] ^= 1;
    fs::write(&bin, bytes).unwrap();
    let err = failure(&[
        "evaluate",
        "--model",
        s(&model_path()),
        "--data",
        s(&copy),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(err["error"], "DigestMismatch");
}

fn evaluate_into(dir: &Path, extra: &[&str]) -> Value {
    let model = model_path();
    let data = data_path();
    let mut args = vec![
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    json(&dir.join("report.json"))
}

#[test]
fn report_recomputes_from_window_table() {
    let dir = tempfile::tempdir().unwrap();
    let report = evaluate_into(dir.path(), &["--window-at", "40", "--window-at", "200"]);
    let scores =
        scores_from_csv(&fs::read_to_string(dir.path().join("windows.csv")).unwrap()).unwrap();
    let again = EvaluationReport::from_scores("model", &scores, "test");
    assert_eq!(serde_json::to_value(&again).unwrap(), report);
    let test = &report["splits"]["test"];
    assert!(test["metric"].as_f64().unwrap().is_finite());
    assert!(dir.path().join("per_feature.csv").is_file());
}

#[test]
fn plots_are_a_function_of_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    evaluate_into(dir.path(), &["--window-at", "60"]);
    let traces: Vec<PathBuf> = fs::read_dir(dir.path().join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert_eq!(traces.len(), 1);
    let lap = traces[0].file_stem().unwrap().to_str().unwrap().to_string();
    let csv = fs::read_to_string(&traces[0]).unwrap();
    let svg = fs::read_to_string(traces[0].with_extension("svg")).unwrap();
    assert_eq!(
        trace_svg(&csv, &format!("{lap}: forecast made 30 steps earlier")).unwrap(),
        svg
    );
    let wcsv = fs::read_to_string(dir.path().join(format!("windows/{lap}_k60.csv"))).unwrap();
    let wsvg = fs::read_to_string(dir.path().join(format!("windows/{lap}_k60.svg"))).unwrap();
    assert_eq!(
        window_svg(&wcsv, &format!("{lap}, window at k = 60")).unwrap(),
        wsvg
    );
}

#[test]
fn oracle_scores_zero_and_traces_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let report = evaluate_into(dir.path(), &["--predictor", "oracle"]);
    assert_eq!(report["splits"]["test"]["metric"], 0.0);
    assert_eq!(report["splits"]["test"]["loss"], 0.0);
    let trace = fs::read_dir(dir.path().join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let mut rdr = csv::Reader::from_path(trace).unwrap();
    for rec in rdr.records() {
        let r = rec.unwrap();
        assert_eq!(&r[2], &r[3]);
        assert_eq!(&r[4], &r[5]);
        assert_eq!(&r[6], &r[7]);
    }
}

#[test]
fn constant_hold_as_model_equals_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let report = evaluate_into(dir.path(), &["--predictor", "hold"]);
    let t = &report["splits"]["test"];
    assert_eq!(t["metric"], t["baseline_metric"]);
    assert_eq!(t["loss"], t["baseline_loss"]);
    assert_eq!(t["metric_ratio"], 1.0);
}

#[test]
fn window_outside_the_lap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = failure(&[
        "evaluate",
        "--model",
        s(&model_path()),
        "--data",
        s(&data_path()),
        "--window-at",
        "5",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(err["error"], "InvalidArgument");
}

#[test]
fn shape_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("data_tf20");
    let laps = fixture().join("laps/laps.json");
    let track = fixture().join("track.json");
    ok(&[
        "prepare",
        "--manifest",
        s(&laps),
        "--track",
        s(&track),
        "--split",
        "1,1,1",
        "--tf",
        "20",
        "--out",
        s(&other),
    ]);
    let err = failure(&[
        "evaluate",
        "--model",
        s(&model_path()),
        "--data",
        s(&other),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(err["error"], "ShapeMismatch");
}

#[test]
fn raw_laps_of_another_scenario_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let laps = dir.path().join("rev");
    ok(&[
        "gen",
        "--scenario",
        "reversed_track",
        "--laps",
        "1",
        "--seed",
        "9",
        "--out",
        s(&laps),
    ]);
    let out = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        s(&model_path()),
        "--manifest",
        s(&laps.join("laps.json")),
        "--out",
        s(&out),
    ]);
    let rep = json(&out.join("report.json"));
    let m = rep["splits"]["reversed_track"]["metric"].as_f64().unwrap();
    assert!(m.is_finite() && m > 0.0);
    assert!(out.join("traces/lap_001.svg").is_file());
}

#[test]
fn predict_writes_one_table_per_lap() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "predict",
        "--model",
        s(&model_path()),
        "--data",
        s(&data_path()),
        "--split",
        "validation",
        "--out",
        s(dir.path()),
    ]);
    let files: Vec<_> = fs::read_dir(dir.path().join("predictions"))
        .unwrap()
        .collect();
    assert_eq!(files.len(), 1);
}

#[test]
fn bench_emits_one_row_per_window() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "bench",
        "--model",
        s(&model_path()),
        "--data",
        s(&data_path()),
        "--out",
        s(dir.path()),
    ]);
    let rows = csv::Reader::from_path(dir.path().join("bench.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, 40);
    let rep = json(&dir.path().join("bench.json"));
    let t = &rep["timing"];
    assert_eq!(t["windows"], 40);
    assert!(t["mean_ms"].as_f64().unwrap() > 0.0);
    assert!(t["std_ms"].as_f64().is_some());
}

#[test]
fn crossval_spread_needs_two_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_path();
    let base = [
        "crossval",
        "--data",
        s(&data),
        "--budget",
        "tiny",
        "--u-ed",
        "20",
        "--split",
        "1,1,1",
        "--train-stride",
        "3",
    ];
    let one = dir.path().join("one");
    let mut args = base.to_vec();
    args.extend(["--repeats", "1", "--out", s(&one)]);
    ok(&args);
    let rep = json(&one.join("crossval.json"));
    let cv = &rep["crossval"];
    assert_eq!(cv["repeats"], 1);
    assert!(cv["validation_metric"].get("std").is_none());
    let row_metric = {
        let mut r = csv::Reader::from_path(one.join("crossval.csv")).unwrap();
        let rec = r.records().next().unwrap().unwrap();
        rec[5].parse::<f64>().unwrap()
    };
    assert_eq!(
        cv["validation_metric"]["mean"].as_f64().unwrap(),
        row_metric
    );

    let same = dir.path().join("same");
    let mut args = base.to_vec();
    args.extend(["--repeats", "2", "--seed-stride", "0", "--out", s(&same)]);
    ok(&args);
    let cv = json(&same.join("crossval.json"))["crossval"].clone();
    assert_eq!(cv["validation_metric"]["std"], 0.0);
    assert_eq!(cv["train_loss"]["std"], 0.0);
}

#[test]
fn tune_records_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trials.json");
    ok(&[
        "tune",
        "--data",
        s(&data_path()),
        "--n-random",
        "2",
        "--n-bayes",
        "1",
        "--budget",
        "tiny",
        "--phase1-epochs",
        "1",
        "--train-stride",
        "6",
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    let t = json(&out);
    let trials = t["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 3);
    for tr in trials {
        let hp = &tr["hp"];
        assert!(hp["t_p"].is_u64() && hp["u_ed"].is_u64());
        assert!(tr["metric"].as_f64().unwrap().is_finite());
        let hist = tr["history"].as_str().unwrap();
        assert!(dir.path().join(hist).is_file(), "{hist}");
    }
    assert!(t["incumbent"].is_u64());
    assert!(dir.path().join("trials.best.json").is_file());
    assert!(dir.path().join("trials.run_manifest.json").is_file());
}

#[test]
fn too_few_laps_cannot_be_split() {
    let dir = tempfile::tempdir().unwrap();
    let laps = dir.path().join("laps");
    ok(&["gen", "--laps", "2", "--out", s(&laps)]);
    let err = failure(&[
        "prepare",
        "--manifest",
        s(&laps.join("laps.json")),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(err["error"], "InsufficientLaps");
}
