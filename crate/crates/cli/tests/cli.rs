use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use usmnet_cli::stages::{load_model, predict_points, GenerationReport, TrainSummary, PREDICTIONS_FILE};
use usmnet_cli::ExperimentConfig;
use usmnet_core::dataset::{build_training_table, Corpus, GeometryRef, LandmarkSet, MANIFEST_FILE};
use usmnet_core::network::CoordinateMode;
use usmnet_fom::provider::CavityProvider;

fn usmnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usmnet"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = usmnet(dir, args);
    assert!(out.status.success(), "usmnet {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), config).unwrap();
    dir
}

const TINY_CAVITY: &str = r#"{"case": "cavity", "seed": 4,
    "cavity": {"n_snapshots": 4, "h": 0.0625, "n_points": 40},
    "split": [0.5, 0.25, 0.25],
    "model": {"hidden": [6, 4]},
    "loss": {"bc_penalty": null},
    "optimizer": {"adam": {"iterations": 20}, "bfgs": {"iterations": 20}}}"#;

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn cavity_generation_is_deterministic() {
    let dir = workspace(TINY_CAVITY);
    ok(dir.path(), &["--config", "c.json", "--out", "a", "generate-data"]);
    ok(dir.path(), &["--config", "c.json", "--out", "b", "generate-data"]);
    let corpus = Corpus::read(&dir.path().join("a/corpus")).unwrap();
    assert_eq!(corpus.len(), 4);
    assert!(corpus.snapshots.iter().all(|s| s.n_points() == 40 && s.mu_p.len() == 1));
    for f in [MANIFEST_FILE, "arrays.bin"] {
        assert_eq!(read(dir.path().join("a/corpus").join(f)), read(dir.path().join("b/corpus").join(f)), "{f}");
    }
    let report: GenerationReport = serde_json::from_slice(&read(dir.path().join("a/generation.json"))).unwrap();
    assert_eq!(report.generated.len(), 4);
    assert!(report.failures.is_empty());
}

#[test]
fn invalid_reynolds_range_is_rejected_before_solving() {
    let dir = workspace(&TINY_CAVITY.replace(r#""h": 0.0625"#, r#""h": 0.0625, "re_range": [-5, 100]"#));
    let out = usmnet(dir.path(), &["--config", "c.json", "generate-data"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Reynolds"));
    assert!(!dir.path().join("corpus").exists());
    assert!(!dir.path().join("generation.json").exists());
}

#[test]
fn unknown_flag_and_key_are_validation_errors() {
    let dir = workspace(&TINY_CAVITY.replace(r#""seed": 4"#, r#""seed": 4, "sede": 5"#));
    assert_eq!(usmnet(dir.path(), &["--config", "c.json", "generate-data"]).status.code(), Some(1));
    assert_eq!(usmnet(dir.path(), &["--bogus", "generate-data"]).status.code(), Some(1));
}

#[test]
fn bifurcation_generation_writes_cases() {
    let dir = workspace(
        r#"{"case": "bifurcation", "seed": 2, "bifurcation": {"n_geometries": 10, "mesh_h": 0.5, "n_points": 50},
            "model": {"landmarks": "wall26"}}"#,
    );
    ok(dir.path(), &["--config", "c.json", "generate-data"]);
    let corpus = Corpus::read(&dir.path().join("corpus")).unwrap();
    assert_eq!(corpus.len(), 10);
    let provider = usmnet_fom::provider::BifurcationProvider::load_dir(&dir.path().join("geometries")).unwrap();
    assert_eq!(provider.len(), 10);
    let table = build_training_table(&corpus, CoordinateMode::Universal, LandmarkSet::Wall26, &provider).unwrap();
    assert_eq!(table.arity(), 2 + 26);
    assert_eq!(table.n_rows(), 500);
    for i in 0..table.n_rows() {
        let r = table.row(i);
        assert!((0.0..=1.0).contains(&r[0]) && (-1.0..=1.0).contains(&r[1]), "row {i}: {r:?}");
    }
}

fn trained(config: &str) -> tempfile::TempDir {
    let dir = workspace(config);
    ok(dir.path(), &["--config", "c.json", "generate-data"]);
    ok(dir.path(), &["--config", "c.json", "train"]);
    dir
}

fn summaries(dir: &Path) -> Vec<TrainSummary> {
    serde_json::from_slice(&read(dir.join("checkpoints/train_summary.json"))).unwrap()
}

#[test]
fn training_is_repeatable_and_checkpoints_load() {
    let dir = trained(TINY_CAVITY);
    let first = summaries(dir.path());
    assert_eq!(first.len(), 1);
    let model = load_model(&dir.path().join("checkpoints/model_seed0.usmn")).unwrap();
    assert_eq!(model.spec().n_outputs, 2);
    ok(dir.path(), &["--config", "c.json", "train"]);
    assert_eq!(summaries(dir.path())[0].loss.to_bits(), first[0].loss.to_bits());
}

#[test]
fn seed_sweep_writes_one_checkpoint_per_seed() {
    let dir = trained(&TINY_CAVITY.replace(r#""seed": 4"#, r#""seed": 4, "train_seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]"#));
    let s = summaries(dir.path());
    assert_eq!(s.iter().map(|t| t.seed).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
    for t in &s {
        assert!(dir.path().join(format!("checkpoints/model_seed{}.usmn", t.seed)).is_file());
        assert!(dir.path().join(format!("checkpoints/train_log_seed{}.csv", t.seed)).is_file());
    }
    let distinct: std::collections::BTreeSet<u64> = s.iter().map(|t| t.loss.to_bits()).collect();
    assert!(distinct.len() > 1);
}

#[test]
fn overfit_model_evaluates_near_zero() {
    let dir = trained(
        r#"{"case": "cavity", "seed": 1,
            "cavity": {"n_snapshots": 3, "h": 0.0625, "n_points": 5},
            "split": [0.34, 0.33, 0.33],
            "model": {"hidden": [10]},
            "loss": {"discrepancy": {"kind": "squared_l2"}, "bc_penalty": null},
            "optimizer": {"adam": {"iterations": 300}, "bfgs": {"iterations": 3000}}}"#,
    );
    ok(dir.path(), &["--config", "c.json", "evaluate", "--partition", "train"]);
    let csv = dir.path().join("reports/model_seed0_train.csv");
    let first = read(&csv);
    let json: serde_json::Value = serde_json::from_slice(&read(dir.path().join("reports/model_seed0_train.json"))).unwrap();
    let rmse = json["snapshots"][0]["rmse_magnitude"].as_f64().unwrap();
    assert!(rmse < 1e-3, "training RMSE {rmse}");
    ok(dir.path(), &["--config", "c.json", "evaluate", "--partition", "train"]);
    assert_eq!(read(&csv), first);
}

#[test]
fn missing_checkpoint_is_a_validation_error() {
    let dir = workspace(TINY_CAVITY);
    ok(dir.path(), &["--config", "c.json", "generate-data"]);
    let out = usmnet(dir.path(), &["--config", "c.json", "evaluate", "--checkpoint", "nope.usmn"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.usmn"));
}

fn parse_predictions(path: &Path) -> Vec<(Vec<f64>, String)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let n = rec.len();
            let values = rec.iter().take(n - 1).skip(2).filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
            (values, rec[n - 1].to_string())
        })
        .collect()
}

#[test]
fn inference_matches_table_evaluation() {
    let dir = trained(TINY_CAVITY);
    let corpus = Corpus::read(&dir.path().join("corpus")).unwrap();
    let snap = &corpus.snapshots[0];
    let GeometryRef::Cavity { height } = snap.geometry else { panic!() };
    let mut pts = String::from("x,y\n");
    for j in 0..snap.n_points() {
        let p = snap.point(j);
        pts.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    pts.push_str("0.5,9.0\n");
    fs::write(dir.path().join("pts.csv"), pts).unwrap();
    let (h, re) = (height.to_string(), snap.mu_p[0].to_string());
    ok(dir.path(), &["--config", "c.json", "infer", "--checkpoint", "checkpoints/model_seed0.usmn", "--geometry", &h, "--mu-p", &re, "--points", "pts.csv"]);
    let rows = parse_predictions(&dir.path().join(PREDICTIONS_FILE));
    assert_eq!(rows.len(), snap.n_points() + 1);

    let model = load_model(&dir.path().join("checkpoints/model_seed0.usmn")).unwrap();
    let table = build_training_table(&corpus.subset(&[0]).unwrap(), CoordinateMode::Universal, LandmarkSet::Height, &CavityProvider).unwrap();
    for (i, (values, err)) in rows.iter().take(snap.n_points()).enumerate() {
        assert!(err.is_empty());
        let expect = model.evaluate_row(table.row(i)).unwrap();
        for (a, b) in values.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "row {i}: {a} vs {b}");
        }
    }
    let (values, err) = rows.last().unwrap();
    assert!(values.is_empty());
    assert!(err.contains("outside"), "{err}");
}

#[test]
fn ten_thousand_points_infer_within_a_second() {
    let dir = trained(TINY_CAVITY);
    let model = load_model(&dir.path().join("checkpoints/model_seed0.usmn")).unwrap();
    let pts: Vec<[f64; 2]> = (0..10_000).map(|i| [(i % 100) as f64 / 99.0, (i / 100) as f64 / 99.0 * 1.5]).collect();
    let g = GeometryRef::Cavity { height: 1.5 };
    let start = Instant::now();
    let out = predict_points(&model, &CavityProvider, &g, &[300.0], &[1.5], &pts);
    let secs = start.elapsed().as_secs_f64();
    assert!(out.iter().all(|r| r.is_ok()));
    assert!(secs < 1.0, "{secs} s");
}

#[test]
fn solver_failures_above_tolerance_are_runtime_errors() {
    let dir = workspace(&TINY_CAVITY.replace(
        r#""n_points": 40}"#,
        r#""n_points": 40, "re_range": [900, 1000], "solver": {"max_newton": 1, "min_step": 0.5}}, "max_failure_rate": 0.0"#,
    ));
    let out = usmnet(dir.path(), &["--config", "c.json", "generate-data"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let report: GenerationReport = serde_json::from_slice(&read(dir.path().join("generation.json"))).unwrap();
    assert!(!report.failures.is_empty());
    assert!(!dir.path().join("corpus").exists());
}

#[test]
fn diverging_training_keeps_the_log() {
    let dir = workspace(&TINY_CAVITY.replace(r#""adam": {"iterations": 20}"#, r#""adam": {"iterations": 200, "lr": 1e200}"#));
    ok(dir.path(), &["--config", "c.json", "generate-data"]);
    let out = usmnet(dir.path(), &["--config", "c.json", "train"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let log: PathBuf = dir.path().join("checkpoints/train_log_seed0.csv");
    assert!(read(&log).len() > 0);
    assert!(!dir.path().join("checkpoints/model_seed0.usmn").exists());
}

#[test]
fn seed_flag_overrides_the_training_seed() {
    let dir = trained(TINY_CAVITY);
    ok(dir.path(), &["--config", "c.json", "--seed", "7", "train"]);
    assert!(dir.path().join("checkpoints/model_seed7.usmn").is_file());
    let cfg: ExperimentConfig = serde_json::from_slice(&read(dir.path().join("config.train.json"))).unwrap();
    assert_eq!(cfg.train_seeds, vec![7]);
}
