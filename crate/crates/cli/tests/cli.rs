use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

use movefit_core::distributions::NegBinParams;
use movefit_core::report;
use movefit_core::synthgen::{CorpusSpec, LevelSpec};

fn movefit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_movefit")).args(args).output().unwrap()
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn spec(dir: &Path) -> PathBuf {
    let level = |id: &str, n: f64, p: f64, move_limit: u32, seed: u64| LevelSpec {
        level_id: id.into(),
        params: NegBinParams::new(n, p).unwrap(),
        move_limit,
        num_players: 3000,
        max_attempts_per_player: 200,
        booster_contamination_rate: 0.05,
        seed,
    };
    let corpus = CorpusSpec {
        levels: vec![
            level("B", 12.0, 0.6, 18, 2),
            level("A", 20.0, 0.5, 22, 1),
            level("C", 8.0, 0.7, 20, 3),
        ],
        shared_p: None,
        planted_loglinear: None,
        seed: 9,
    };
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&corpus).unwrap()).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = spec(d);
    let attempts = d.join("attempts.csv");
    let hist = d.join("levels.json");
    ok(&movefit(&[
        "simulate",
        "--spec",
        s(&spec),
        "--out",
        s(&attempts),
        "--histograms",
        s(&hist),
    ]));
    let truth = d.join("attempts.truth.json");
    assert!(truth.is_file());
    assert!(d.join("attempts.csv.run.json").is_file());

    let fits_csv_input = d.join("fits_a.json");
    ok(&movefit(&[
        "fit",
        "--input",
        s(&attempts),
        "--limits",
        s(&truth),
        "--out",
        s(&fits_csv_input),
        "--grid",
        "6x6",
    ]));
    let fits_hist_input = d.join("fits_h.json");
    ok(&movefit(&[
        "fit",
        "--input",
        s(&hist),
        "--out",
        s(&fits_hist_input),
        "--grid",
        "6x6",
        "--tables",
        s(&d.join("t")),
    ]));
    // Attempts cleaned by the CLI and histograms cleaned during simulation agree.
    assert_eq!(
        std::fs::read(&fits_csv_input).unwrap(),
        std::fs::read(&fits_hist_input).unwrap()
    );

    let fits = report::read_fits(&std::fs::read_to_string(&fits_hist_input).unwrap()).unwrap();
    let ids: Vec<&str> = fits.iter().map(|f| f.level_id.as_str()).collect();
    assert_eq!(ids, ["A", "B", "C"]);
    for table in ["np_scatter.csv", "overlay.csv", "d_vs_mean.csv"] {
        let mut reader = csv::Reader::from_path(d.join("t").join(table)).unwrap();
        assert!(!reader.headers().unwrap().is_empty());
        assert!(reader.records().map(Result::unwrap).count() > 0, "{table}");
    }

    let validation = d.join("validation.json");
    let out = movefit(&[
        "validate",
        "--input",
        s(&hist),
        "--fits",
        s(&fits_hist_input),
        "--out",
        s(&validation),
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("condition1_pass 3/3"));
    let reports = json(&validation);
    assert_eq!(reports.as_array().unwrap().len(), 3);
    for (r, fit) in reports.as_array().unwrap().iter().zip(&fits) {
        assert_eq!(r["ks_distance"].as_f64().unwrap(), fit.ks_distance);
    }

    let analytics = d.join("analytics.json");
    ok(&movefit(&[
        "analyze",
        "--input",
        s(&hist),
        "--fits",
        s(&fits_hist_input),
        "--out",
        s(&analytics),
        "--tables",
        s(&d.join("a")),
        "--deltas=-2,-1,1,2",
    ]));
    let report = json(&analytics);
    assert!(report.get("mean_variance").is_some());
    let mut sensitivity = csv::Reader::from_path(d.join("a").join("sensitivity.csv")).unwrap();
    assert!(sensitivity.records().count() > 0);

    let out = movefit(&["whatif", "--fits", s(&fits_hist_input), "--level", "B", "--delta=-1"]);
    ok(&out);
    let answer: Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = &fits[1];
    let expected = b.params.mass_in_moves(u64::from(b.move_limit) - 1);
    assert_eq!(answer["predicted"].as_f64().unwrap(), expected);
    assert_eq!(answer["baseline"].as_f64().unwrap(), b.fitted_completion);

    let out = movefit(&[
        "whatif",
        "--fits",
        s(&fits_hist_input),
        "--delta",
        "2",
        "--format",
        "csv",
    ]);
    ok(&out);
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(reader.records().count(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = spec(d);
    let mut outputs = Vec::new();
    for run in 0..2 {
        let hist = d.join(format!("levels{run}.json"));
        let fits = d.join(format!("fits{run}.csv"));
        ok(&movefit(&[
            "simulate",
            "--spec",
            s(&spec),
            "--histograms",
            s(&hist),
            "--truth",
            s(&d.join("truth.json")),
        ]));
        ok(&movefit(&[
            "fit",
            "--input",
            s(&hist),
            "--out",
            s(&fits),
            "--grid",
            "4x4",
            "--format",
            "csv",
            "--jobs",
            "2",
        ]));
        outputs.push((std::fs::read(&hist).unwrap(), std::fs::read(&fits).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let mut reader = csv::Reader::from_reader(outputs[0].1.as_slice());
    assert_eq!(&reader.headers().unwrap()[3], "D");
}

#[test]
fn manifest_records_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let hist = d.join("levels.json");
    let manifest = d.join("sim.json");
    ok(&movefit(&[
        "simulate",
        "--spec",
        s(&spec(d)),
        "--histograms",
        s(&hist),
        "--run-manifest",
        s(&manifest),
    ]));
    let m = json(&manifest);
    assert_eq!(m["command"], "simulate");
    let outputs = m["outputs"].as_array().unwrap();
    let entry = outputs
        .iter()
        .find(|o| o["path"].as_str().unwrap().ends_with("levels.json"))
        .unwrap();
    let bytes = std::fs::read(&hist).unwrap();
    assert_eq!(entry["bytes"].as_u64().unwrap(), bytes.len() as u64);
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(entry["sha256"].as_str().unwrap(), digest);
    // A different file must hash differently.
    let truth = outputs
        .iter()
        .find(|o| o["path"].as_str().unwrap().ends_with("truth.json"))
        .unwrap();
    assert_ne!(truth["sha256"], entry["sha256"]);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = movefit(&["fit", "--input", s(&missing), "--out", s(&dir.path().join("f.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(s(&missing)), "{stderr}");
}

#[test]
fn bad_flags_are_usage_errors() {
    for args in [
        vec!["fit", "--input", "x.json"],
        vec!["whatif", "--fits", "f.json", "--delta", "1", "--grid", "1x9"],
        vec!["whatif", "--fits", "f.json", "--delta", "soon"],
        vec!["frobnicate"],
    ] {
        assert_eq!(movefit(&args).status.code(), Some(2), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("levels.json");
    ok(&movefit(&[
        "simulate",
        "--spec",
        s(&spec(dir.path())),
        "--histograms",
        s(&hist),
    ]));
    let out = movefit(&[
        "fit",
        "--input",
        s(&hist),
        "--out",
        s(&dir.path().join("f.json")),
        "--delta-threshold",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn partial_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let hist = d.join("levels.json");
    let fine: Vec<(u32, u64)> = {
        let params = NegBinParams::new(10.0, 0.6).unwrap();
        (1..=15u32)
            .map(|m| (m, (params.pmf(u64::from(m)) * 1e5).round() as u64))
            .collect()
    };
    let counts: serde_json::Map<String, Value> = fine.iter().map(|(m, c)| (m.to_string(), Value::from(*c))).collect();
    let levels = serde_json::json!([
        {"level_id": "good", "move_limit": 15, "counts": counts, "total_attempts": 100000},
        {"level_id": "empty", "move_limit": 15, "counts": {}, "total_attempts": 500},
    ]);
    std::fs::write(&hist, serde_json::to_vec(&levels).unwrap()).unwrap();
    let fits = d.join("fits.json");
    let out = movefit(&["fit", "--input", s(&hist), "--out", s(&fits), "--grid", "4x4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    let written = report::read_fits(&std::fs::read_to_string(&fits).unwrap()).unwrap();
    assert_eq!(written.len(), 1);
    let manifest = json(&d.join("fits.json.run.json"));
    assert_eq!(manifest["failures"][0]["level_id"], "empty");

    let out = movefit(&["whatif", "--fits", s(&fits), "--level", "missing", "--delta", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn untruncated_fit_reports_at_move_limit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let params = NegBinParams::new(6.0, 0.7).unwrap();
    let total = 1_000_000u64;
    let counts: serde_json::Map<String, Value> = (1..=120u64)
        .map(|m| {
            (
                m.to_string(),
                Value::from((params.pmf(m) * total as f64).round() as u64),
            )
        })
        .filter(|(_, c)| c.as_u64().unwrap() > 0)
        .collect();
    let sum: u64 = counts.values().map(|c| c.as_u64().unwrap()).sum();
    let hist = d.join("full.json");
    let level = serde_json::json!([{"level_id": "U", "move_limit": 12, "counts": counts, "total_attempts": sum}]);
    std::fs::write(&hist, serde_json::to_vec(&level).unwrap()).unwrap();
    let fits = d.join("fits.json");
    ok(&movefit(&[
        "fit",
        "--input",
        s(&hist),
        "--out",
        s(&fits),
        "--untruncated",
    ]));
    let fit = &report::read_fits(&std::fs::read_to_string(&fits).unwrap()).unwrap()[0];
    assert_eq!(fit.move_limit, 12);
    assert_eq!(fit.fit_range, 120);
    assert!(fit.ks_distance < 1e-3);
    assert!((fit.params.n() - 6.0).abs() < 0.05 && (fit.params.p() - 0.7).abs() < 0.005);
}
