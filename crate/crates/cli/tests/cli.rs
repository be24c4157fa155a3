use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use somnet_data::{CohortManifest, Split};
use tempfile::TempDir;

fn somnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_somnet")).args(args).env("RUST_LOG", "warn").output().expect("spawn somnet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn synth(dir: &Path, subjects: usize, epochs: &str) -> PathBuf {
    let data = dir.join("data");
    let out = somnet(&["synth", "--out", s(&data), "--seed", "7", "--subjects", &subjects.to_string(), "--epochs", epochs]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data.join("manifest.json")
}

const TINY_MODEL: &str = r#"{"blocks": 2, "base_filters": 1, "hidden": 2, "alpha": 1}"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn run_config(passes: usize) -> String {
    format!(r#"{{"model": {TINY_MODEL}, "batch_size": 8, "passes": {passes}, "seed": 3, "optimizer": {{"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "weight_decay": 0.0}}}}"#)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn synth_is_deterministic_in_its_seed() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let ma = synth(a.path(), 3, "3,4");
    synth(b.path(), 3, "3,4");
    assert!(ma.is_file());
    let m = CohortManifest::load(&ma).unwrap();
    assert_eq!(m.cohorts().len(), 5);
    assert!(!m.splits.is_empty());
    assert_eq!(snapshot(&a.path().join("data")), snapshot(&b.path().join("data")));
}

#[test]
fn invalid_spec_fails_with_a_diagnostic() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"cohorts": []}"#).unwrap();
    let out = somnet(&["synth", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert_ne!(code(&out), 0);
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&somnet(&[])), 1);
    assert_eq!(code(&somnet(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&somnet(&["predict", "a", "b", "c", "--tau", "seven"])), 1);
    assert_eq!(code(&somnet(&["--help"])), 0);

    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &run_config(1));
    let out = somnet(&["train", s(&cfg), "m.json", s(&dir.path().join("o")), "--fraction", "0.05", "--cohorts", "SSC"]);
    assert_eq!(code(&out), 1);
    let out = somnet(&["train", s(&cfg), "m.json", s(&dir.path().join("o")), "--fraction", "0.3"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_data_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &run_config(1));
    let out = somnet(&["train", s(&cfg), s(&dir.path().join("absent.json")), s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_predict_and_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(dir.path(), 3, "3,3");
    let cfg = write_config(dir.path(), &run_config(50));
    let out_a = dir.path().join("run-a");
    let out = somnet(&["train", s(&cfg), s(&manifest), s(&out_a)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let log = std::fs::read_to_string(out_a.join("train.ndjson")).unwrap();
    let events: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let passes: Vec<&serde_json::Value> = events.iter().filter(|e| e["event"] == "pass").collect();
    assert_eq!(passes.len(), 50);
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_a.join("model.json")).unwrap()).unwrap();
    let selected = sidecar["selected_pass"].as_u64().unwrap() as usize;
    let kappas: Vec<f64> = passes.iter().map(|p| p["val_kappa"].as_f64().unwrap()).collect();
    let best = kappas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(kappas.iter().position(|k| *k == best).unwrap() + 1, selected);

    let out_b = dir.path().join("run-b");
    assert_eq!(code(&somnet(&["train", s(&cfg), s(&manifest), s(&out_b)])), 0);
    assert_eq!(log, std::fs::read_to_string(out_b.join("train.ndjson")).unwrap());

    let m = CohortManifest::load(&manifest).unwrap();
    let entry = m.select(&m.cohorts(), Split::Test)[0];
    let (edf, hyp) = (m.resolve(&entry.edf), m.resolve(&entry.hypnogram));
    let pred = dir.path().join("pred").join("night.txt");
    let out = somnet(&["predict", s(&out_a.join("model.snck")), s(&edf), s(&pred), "--tau", "30", "--reference", s(&hyp)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let csv = pred.with_extension("hypnodensity.csv");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 3 * 30);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row[0], t.to_string());
        let sum: f64 = row[1..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() <= 1e-6, "row {t} sums to {sum}");
    }
    let header = csv::Reader::from_path(&csv).unwrap().headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["time_s", "p_W", "p_N1", "p_N2", "p_N3", "p_REM"]);
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 3);
    let svg = std::fs::read_to_string(pred.with_extension("svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<path").count() == 2);

    let fine = dir.path().join("pred").join("fine.txt");
    assert_eq!(code(&somnet(&["predict", s(&out_a.join("model.snck")), s(&edf), s(&fine), "--tau", "5"])), 0);
    assert_eq!(std::fs::read_to_string(&fine).unwrap().lines().count(), 3 * 6);
    assert_eq!(code(&somnet(&["predict", s(&out_a.join("model.snck")), s(&edf), s(&fine), "--tau", "7"])), 1);

    let eval = dir.path().join("eval");
    let out = somnet(&["evaluate", s(&out_a.join("model.snck")), s(&manifest), s(&eval)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["primary"]["window_seconds"], 30);
    assert_eq!(report["primary"]["subjects"].as_array().unwrap().len(), m.select(&m.cohorts(), Split::Test).len());
    assert_eq!(report["secondary"][0]["window_seconds"], 1);
}

#[test]
fn predict_rejects_a_short_recording() {
    let dir = TempDir::new().unwrap();
    let long = synth(&dir.path().join("long"), 3, "4,4");
    let short = synth(&dir.path().join("short"), 3, "3,3");
    let cfg = write_config(dir.path(), &run_config(1));
    let run = dir.path().join("run");
    let out = somnet(&["train", s(&cfg), s(&long), s(&run), "--alpha", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = CohortManifest::load(&short).unwrap();
    let edf = m.resolve(&m.select(&m.cohorts(), Split::Test)[0].edf);
    let out = somnet(&["predict", s(&run.join("model.snck")), s(&edf), s(&dir.path().join("p.txt"))]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

fn experiment_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("experiment.json");
    std::fs::write(&p, format!(r#"{{"run": {}{extra}}}"#, run_config(1))).unwrap();
    p
}

#[test]
fn combination_experiment_emits_25_rows() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(dir.path(), 4, "2,2");
    let cfg = experiment_config(dir.path(), r#", "total_psgs": 4"#);
    let out_dir = dir.path().join("combos");
    let out = somnet(&["experiment", "combos", s(&cfg), s(&manifest), s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out_dir.join("combinations.csv"));
    assert_eq!(rows.len(), 25);
    let ks: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ks.iter().filter(|k| **k == "2").count(), 10);
    assert_eq!(ks.iter().filter(|k| **k == "3").count(), 10);
    assert_eq!(ks.iter().filter(|k| **k == "4").count(), 5);
}

#[test]
fn insufficient_psgs_fail_before_training() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(dir.path(), 4, "2,2");
    let cfg = experiment_config(dir.path(), r#", "total_psgs": 500"#);
    let out_dir = dir.path().join("combos");
    let out = somnet(&["experiment", "combos", s(&cfg), s(&manifest), s(&out_dir)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("250 requested"));
    assert!(!out_dir.join("results.json").exists());
}

#[test]
fn single_cohort_grid_is_five_by_five() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(dir.path(), 3, "2,2");
    let cfg = experiment_config(dir.path(), "");
    let out_dir = dir.path().join("loci");
    let out = somnet(&["experiment", "loci", s(&cfg), s(&manifest), s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(out_dir.join("grid.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 2 + 5 + 1);
    let rows = csv_rows(&out_dir.join("grid.csv"));
    let acc: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "accuracy").collect();
    assert_eq!(acc.len(), 5);
    assert!(acc.iter().all(|r| r[0].starts_with("LOCI-")));
}

#[test]
fn fraction_experiment_follows_the_grid_order() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(dir.path(), 3, "2,2");
    let cfg = experiment_config(dir.path(), "");
    let out_dir = dir.path().join("fractions");
    let out = somnet(&["experiment", "fractions", s(&cfg), s(&manifest), s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out_dir.join("fractions.csv"));
    let fractions: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(fractions, somnet_train::FRACTIONS);
    let subjects: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(subjects.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*subjects.last().unwrap(), 5);
}
