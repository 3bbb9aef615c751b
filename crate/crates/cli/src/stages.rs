//! Pipeline stages. Each reads the configuration and earlier outputs and
//! writes its own files plus a resolved copy of the configuration.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use usmnet_core::dataset::{build_training_table, input_row, split, CaseType, Corpus, GeometryProvider, GeometryRef, LandmarkSet, Snapshot, Split, TrainingTable, MANIFEST_FILE};
use usmnet_core::eval::{evaluate_table, nearest_landmark_pair, trace_streamlines, velocity_raster, EvalReport, ModelField};
use usmnet_core::network::{build, Model, ModelParams, Network};
use usmnet_core::training::{self, LossConfig, Regularizer, TrainLog};
use usmnet_fom::cavity::{bc_samples, sample_cases, sample_snapshot, solve_cavity_with, CavityCase};
use usmnet_fom::flow::{sample_flow_snapshot, solve_flow};
use usmnet_fom::provider::{BifurcationCase, BifurcationProvider, CavityProvider};

use crate::config::{ExperimentConfig, Paths};
use crate::{CliError, Result};

pub const GENERATION_REPORT: &str = "generation.json";
pub const SPLIT_FILE: &str = "split.json";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const STREAMLINES_FILE: &str = "streamlines.csv";
pub const RASTER_STEM: &str = "velocity_raster";
pub const TRACE_SUMMARY: &str = "trace_summary.json";
pub const NEAREST_PAIR_FILE: &str = "nearest_pair.json";

/// Independent per-item seed: word 0 of ChaCha stream `index + 1`.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

pub fn checkpoint_path(paths: &Paths, seed: u64) -> PathBuf {
    paths.checkpoints.join(format!("model_seed{seed}.usmn"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_resolved_config(cfg: &ExperimentConfig, out: &Path, stage: &str) -> Result<()> {
    write_json(&out.join(format!("config.{stage}.json")), cfg)
}

/// Names of the solution components in output files.
pub fn component_names(k: usize) -> Vec<String> {
    match k {
        2 => vec!["vx".into(), "vy".into()],
        3 => vec!["vx".into(), "vy".into(), "p".into()],
        _ => (0..k).map(|i| format!("u{i}")).collect(),
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Issue {
    pub id: String,
    pub reason: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct GenerationReport {
    pub case: CaseType,
    pub requested: usize,
    pub generated: Vec<String>,
    /// Excluded solves.
    pub failures: Vec<Issue>,
    /// Kept snapshots with a warning, such as diverged Picard iterations.
    pub flagged: Vec<Issue>,
}

type Outcome = (String, std::result::Result<(Snapshot, Option<String>), String>);

fn cavity_outcomes(cfg: &ExperimentConfig) -> Vec<Outcome> {
    let c = &cfg.cavity;
    let cases = sample_cases(c.n_snapshots, c.height_range, c.re_range, cfg.seed);
    cases
        .par_iter()
        .enumerate()
        .map(|(i, &(h, re))| {
            let id = format!("c{i:04}");
            let r = CavityCase::new(h, re, c.h)
                .and_then(|case| solve_cavity_with(&case, &c.solver))
                .and_then(|field| sample_snapshot(&field, c.n_points, item_seed(cfg.seed, i as u64), &id))
                .map(|s| (s, None))
                .map_err(|e| format!("H = {h}, Re = {re}: {e}"));
            log::info!("cavity {id}: H = {h:.4}, Re = {re:.1} {}", if r.is_ok() { "solved" } else { "failed" });
            (id, r)
        })
        .collect()
}

fn is_generated_geometry(name: &str) -> bool {
    let Some((stem, ext)) = name.rsplit_once('.') else { return false };
    matches!(ext, "json" | "mesh") && stem.len() > 1 && stem.starts_with('g') && stem[1..].bytes().all(|b| b.is_ascii_digit())
}

fn bifurcation_outcomes(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<Outcome>> {
    fs::create_dir_all(dir)?;
    // stale cases of an earlier, larger run would otherwise be picked up
    for e in fs::read_dir(dir)? {
        let e = e?;
        if e.file_name().to_str().is_some_and(is_generated_geometry) {
            fs::remove_file(e.path())?;
        }
    }
    let b = &cfg.bifurcation;
    Ok((0..b.n_geometries)
        .into_par_iter()
        .map(|i| {
            let id = format!("g{i:04}");
            let seed = item_seed(cfg.seed, i as u64);
            let r = (|| {
                let case = BifurcationCase::generate(id.as_str(), seed, &b.ranges, b.mesh_h)?;
                let sol = solve_flow(&case.domain.mesh, &b.flow)?;
                let snap = sample_flow_snapshot(&case.domain.mesh, case.domain.locator(), &sol, b.n_points, item_seed(seed, 0), &id)?;
                case.save(dir, Some(&sol))?;
                let flag = (b.flow.picard_iterations > 0 && !sol.picard_converged)
                    .then(|| format!("Picard iterations diverged after {}; Stokes solution kept", sol.picard_iterations));
                Ok::<_, usmnet_fom::FomError>((snap, flag))
            })()
            .map_err(|e| format!("geometry seed {seed}: {e}"));
            log::info!("bifurcation {id}: {}", if r.is_ok() { "solved" } else { "failed" });
            (id, r)
        })
        .collect())
}

/// Runs the full-order solves and writes the corpus (and, for bifurcations,
/// geometry and mesh files).
pub fn generate_data(cfg: &ExperimentConfig, out: &Path) -> Result<GenerationReport> {
    let paths = cfg.resolve_paths(out);
    write_resolved_config(cfg, out, "generate-data")?;
    let (outcomes, mut corpus) = match cfg.case {
        CaseType::Cavity => (cavity_outcomes(cfg), Corpus::new(CaseType::Cavity, 2, 2, 1)),
        CaseType::Bifurcation => (bifurcation_outcomes(cfg, &paths.geometries)?, Corpus::new(CaseType::Bifurcation, 2, 3, 0)),
    };
    let mut report = GenerationReport {
        case: cfg.case,
        requested: outcomes.len(),
        generated: Vec::new(),
        failures: Vec::new(),
        flagged: Vec::new(),
    };
    for (id, r) in outcomes {
        match r {
            Ok((snap, flag)) => {
                if let Some(reason) = flag {
                    log::warn!("{id}: {reason}");
                    report.flagged.push(Issue { id: id.clone(), reason });
                }
                corpus.push(snap)?;
                report.generated.push(id);
            }
            Err(reason) => {
                log::warn!("{id} excluded: {reason}");
                report.failures.push(Issue { id, reason });
            }
        }
    }
    write_json(&out.join(GENERATION_REPORT), &report)?;
    let rate = report.failures.len() as f64 / report.requested as f64;
    if corpus.is_empty() || rate > cfg.max_failure_rate {
        return Err(CliError::Runtime(format!(
            "{} of {} full-order solves failed, above the tolerated fraction {}",
            report.failures.len(),
            report.requested,
            cfg.max_failure_rate
        )));
    }
    corpus.write(&paths.corpus)?;
    Ok(report)
}

/// Geometry services for one case type.
pub enum Provider {
    Cavity(CavityProvider),
    Bifurcation(BifurcationProvider),
}

impl Provider {
    pub fn as_dyn(&self) -> &dyn GeometryProvider {
        match self {
            Provider::Cavity(p) => p,
            Provider::Bifurcation(p) => p,
        }
    }
}

fn load_provider(cfg: &ExperimentConfig, paths: &Paths) -> Result<Provider> {
    match cfg.case {
        CaseType::Cavity => Ok(Provider::Cavity(CavityProvider)),
        CaseType::Bifurcation => {
            if !paths.geometries.is_dir() {
                return Err(CliError::Input(format!("no geometry directory at {}", paths.geometries.display())));
            }
            Ok(Provider::Bifurcation(BifurcationProvider::load_dir(&paths.geometries)?))
        }
    }
}

fn read_corpus(cfg: &ExperimentConfig, paths: &Paths) -> Result<Corpus> {
    if !paths.corpus.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Input(format!("no corpus at {} (run generate-data first)", paths.corpus.display())));
    }
    let corpus = Corpus::read(&paths.corpus)?;
    if corpus.case_type != cfg.case {
        return Err(CliError::Input(format!("corpus holds {:?} snapshots but the config is for {:?}", corpus.case_type, cfg.case)));
    }
    Ok(corpus)
}

fn corpus_split(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Split> {
    split(corpus.len(), cfg.split, cfg.seed).map_err(|e| CliError::Config(e.to_string()))
}

/// Table of the given snapshots in the configured coordinates and landmarks.
pub fn table_for(cfg: &ExperimentConfig, corpus: &Corpus, indices: &[usize], provider: &dyn GeometryProvider) -> Result<TrainingTable> {
    Ok(build_training_table(&corpus.subset(indices)?, cfg.model.coordinates, cfg.model.landmarks, provider)?)
}

/// Loss of the configuration, including the sampled boundary penalty.
pub fn loss_config(cfg: &ExperimentConfig) -> Result<LossConfig> {
    let mut lc = LossConfig::new(cfg.loss.discrepancy);
    lc.parallel = cfg.loss.parallel;
    if let Some(bc) = &cfg.loss.bc_penalty {
        let c = &cfg.cavity;
        let samples = bc_samples(bc.n_pairs, bc.n_points, c.height_range, c.re_range, cfg.model.coordinates, item_seed(cfg.seed, u64::MAX - 1))?;
        lc.regularizers.push(Regularizer::BcPenalty { samples, weight: bc.weight });
    }
    if cfg.loss.tikhonov > 0.0 {
        lc.regularizers.push(Regularizer::Tikhonov { lambda: cfg.loss.tikhonov });
    }
    Ok(lc)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub loss: f64,
    pub grad_norm: f64,
    pub bfgs_iterations: usize,
    pub fallbacks: usize,
}

/// Trains one model per configured seed on the training partition.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TrainSummary>> {
    let paths = cfg.resolve_paths(out);
    write_resolved_config(cfg, out, "train")?;
    let corpus = read_corpus(cfg, &paths)?;
    let provider = load_provider(cfg, &paths)?;
    let sp = corpus_split(cfg, &corpus)?;
    let ids = |v: &[usize]| v.iter().map(|&i| corpus.snapshots[i].id.clone()).collect();
    write_json(
        &paths.checkpoints.join(SPLIT_FILE),
        &SplitIds { train: ids(&sp.train), validation: ids(&sp.validation), test: ids(&sp.test) },
    )?;
    let table = table_for(cfg, &corpus, &sp.train, provider.as_dyn())?;
    let mut spec = cfg.model_spec();
    spec.fit_normalization(&table.inputs, &table.targets)?;
    let net = Network::new(spec.clone())?;
    let lc = loss_config(cfg)?;
    let mut summaries = Vec::with_capacity(cfg.train_seeds.len());
    for &seed in &cfg.train_seeds {
        log::info!("training seed {seed}: {} rows, {} parameters", table.n_rows(), net.param_count());
        let w0 = build(&spec, seed)?.w;
        let mut log = TrainLog::default();
        let result = training::train(&net, &w0, &table, &lc, &cfg.optimizer, &mut log);
        // the log is kept even when training aborts
        let log_path = paths.checkpoints.join(format!("train_log_seed{seed}.csv"));
        log.write_csv(BufWriter::new(File::create(&log_path)?), cfg.reproducible)?;
        for e in &log.events {
            log::debug!("seed {seed}: {e}");
        }
        let outcome = result.map_err(|e| CliError::Runtime(format!("training with seed {seed} aborted: {e}")))?;
        let checkpoint = checkpoint_path(&paths, seed);
        Model::new(spec.clone(), ModelParams { w: outcome.params })?.write_checkpoint(&checkpoint)?;
        log::info!("seed {seed}: loss {:e} after {} BFGS iterations", outcome.loss, outcome.iterations);
        summaries.push(TrainSummary {
            seed,
            checkpoint,
            loss: outcome.loss,
            grad_norm: outcome.grad_norm,
            bfgs_iterations: outcome.iterations,
            fallbacks: outcome.fallbacks,
        });
    }
    write_json(&paths.checkpoints.join(TRAIN_SUMMARY), &summaries)?;
    Ok(summaries)
}

/// Snapshot partition addressed by `evaluate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Partition {
    Train,
    Validation,
    Test,
    All,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
            Partition::All => "all",
        }
    }

    fn select(self, s: &Split, n: usize) -> Vec<usize> {
        match self {
            Partition::Train => s.train.clone(),
            Partition::Validation => s.validation.clone(),
            Partition::Test => s.test.clone(),
            Partition::All => (0..n).collect(),
        }
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    if !path.is_file() {
        return Err(CliError::Input(format!("checkpoint {} not found", path.display())));
    }
    Ok(Model::read_checkpoint(path)?)
}

fn check_model(cfg: &ExperimentConfig, model: &Model, path: &Path) -> Result<()> {
    let s = model.spec();
    if s.coordinates != cfg.model.coordinates || s.n_landmarks != cfg.model.landmarks.dim() || s.n_outputs != cfg.n_outputs() {
        return Err(CliError::Input(format!("checkpoint {} does not match the configured model inputs", path.display())));
    }
    Ok(())
}

fn seed_from_stem(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.rsplit_once("seed")?.1.parse().ok()
}

/// Metrics of the given checkpoint (or of every configured seed's
/// checkpoint) on one partition.
pub fn evaluate(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, partition: Partition) -> Result<Vec<EvalReport>> {
    let paths = cfg.resolve_paths(out);
    let targets: Vec<(PathBuf, u64)> = match checkpoint {
        Some(p) => vec![(p.to_path_buf(), seed_from_stem(p).unwrap_or(cfg.train_seeds[0]))],
        None => cfg.train_seeds.iter().map(|&s| (checkpoint_path(&paths, s), s)).collect(),
    };
    let models = targets
        .iter()
        .map(|(p, _)| load_model(p).and_then(|m| check_model(cfg, &m, p).map(|_| m)))
        .collect::<Result<Vec<_>>>()?;
    write_resolved_config(cfg, out, "evaluate")?;
    let corpus = read_corpus(cfg, &paths)?;
    let provider = load_provider(cfg, &paths)?;
    let indices = partition.select(&corpus_split(cfg, &corpus)?, corpus.len());
    let table = table_for(cfg, &corpus, &indices, provider.as_dyn())?;
    let label = format!("{:?}-{:?}", cfg.model.coordinates, cfg.model.landmarks).to_lowercase();
    let mut reports = Vec::with_capacity(models.len());
    for ((path, seed), model) in targets.iter().zip(&models) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let report = evaluate_table(model, &table, stem, *seed, partition.name())?;
        let base = paths.reports.join(format!("{stem}_{}", partition.name()));
        fs::create_dir_all(&paths.reports)?;
        report.write_csv(BufWriter::new(File::create(base.with_extension("csv"))?))?;
        let mut json = BufWriter::new(File::create(base.with_extension("json"))?);
        report.write_json(&mut json)?;
        json.flush()?;
        let boxplot = paths.reports.join(format!("{stem}_{}_boxplot.csv", partition.name()));
        report.write_boxplot_csv(BufWriter::new(File::create(boxplot)?), &label, true)?;
        if let Some(a) = report.aggregate("rmse_magnitude") {
            log::info!("{stem} on {}: median velocity-magnitude RMSE {:e}", partition.name(), a.median);
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Provider holding just the queried geometry, plus its reference.
fn resolve_geometry(cfg: &ExperimentConfig, paths: &Paths, geometry: &str) -> Result<(GeometryRef, Provider)> {
    match cfg.case {
        CaseType::Cavity => {
            let height: f64 = geometry
                .parse()
                .ok()
                .filter(|h: &f64| *h > 0.0)
                .ok_or_else(|| CliError::Input(format!("cavity geometry must be a positive height, got {geometry:?}")))?;
            Ok((GeometryRef::Cavity { height }, Provider::Cavity(CavityProvider)))
        }
        CaseType::Bifurcation => {
            if !paths.geometries.join(format!("{geometry}.json")).is_file() {
                return Err(CliError::Input(format!("geometry {geometry} not found in {}", paths.geometries.display())));
            }
            let mut p = BifurcationProvider::new();
            p.insert(BifurcationCase::load(&paths.geometries, geometry)?);
            Ok((GeometryRef::Bifurcation { id: geometry.to_string() }, Provider::Bifurcation(p)))
        }
    }
}

fn read_points(path: &Path) -> Result<Vec<[f64; 2]>> {
    if !path.is_file() {
        return Err(CliError::Input(format!("points file {} not found", path.display())));
    }
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    r.deserialize::<(f64, f64)>()
        .enumerate()
        .map(|(i, row)| row.map(|(x, y)| [x, y]).map_err(|e| CliError::Input(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect()
}

/// Online evaluation at physical points: coordinates are mapped per point,
/// the landmarks are shared. Points that cannot be mapped yield an error
/// message instead of a prediction.
pub fn predict_points(
    model: &Model,
    provider: &dyn GeometryProvider,
    geometry: &GeometryRef,
    mu_p: &[f64],
    mu_g: &[f64],
    points: &[[f64; 2]],
) -> Vec<std::result::Result<Vec<f64>, String>> {
    let coords = model.spec().coordinates;
    points
        .iter()
        .map(|p| {
            let row = input_row(provider, geometry, coords, p, mu_p, mu_g).map_err(|e| e.to_string())?;
            model.evaluate_row(&row).map_err(|e| e.to_string())
        })
        .collect()
}

fn check_mu_p(model: &Model, mu_p: &[f64]) -> Result<()> {
    if mu_p.len() != model.spec().n_physical {
        return Err(CliError::Input(format!("model expects {} physical parameters, got {}", model.spec().n_physical, mu_p.len())));
    }
    Ok(())
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct InferSummary {
    pub output: PathBuf,
    pub n_points: usize,
    pub n_failed: usize,
}

/// Predictions at the points of a CSV file (`x,y` header) for one geometry.
pub fn infer(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path, geometry: &str, mu_p: &[f64], points: &Path) -> Result<InferSummary> {
    let paths = cfg.resolve_paths(out);
    let model = load_model(checkpoint)?;
    check_model(cfg, &model, checkpoint)?;
    check_mu_p(&model, mu_p)?;
    let pts = read_points(points)?;
    let (geom, provider) = resolve_geometry(cfg, &paths, geometry)?;
    write_resolved_config(cfg, out, "infer")?;
    let mu_g = provider.as_dyn().landmarks(&geom, cfg.model.landmarks)?;
    let preds = predict_points(&model, provider.as_dyn(), &geom, mu_p, &mu_g, &pts);
    let output = out.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&output)?));
    let k = model.spec().n_outputs;
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend(component_names(k));
    header.push("error".into());
    w.write_record(&header)?;
    let mut n_failed = 0;
    for (p, r) in pts.iter().zip(&preds) {
        let mut rec = vec![p[0].to_string(), p[1].to_string()];
        match r {
            Ok(u) => {
                rec.extend(u.iter().map(f64::to_string));
                rec.push(String::new());
            }
            Err(e) => {
                n_failed += 1;
                rec.extend(std::iter::repeat(String::new()).take(k));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if n_failed > 0 {
        log::warn!("{n_failed} of {} points could not be evaluated", pts.len());
    }
    Ok(InferSummary { output, n_points: pts.len(), n_failed })
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TraceSummary {
    pub n_lines: usize,
    pub skipped: Vec<Issue>,
}

/// Seeds on a vertical line: mid-width of the cavity, or just inside the
/// bifurcation inlet.
fn default_seeds(provider: &Provider, geometry: &GeometryRef, n: usize) -> Vec<[f64; 2]> {
    let (x, lo, hi) = match (provider, geometry) {
        (Provider::Bifurcation(p), GeometryRef::Bifurcation { id }) => {
            let g = &p.get(id).expect("resolved geometry").geometry;
            let x = 0.02 * g.x_end;
            let iv = g.lumen(x).first().copied().unwrap_or(g.inlet());
            (x, iv[0], iv[1])
        }
        (_, GeometryRef::Cavity { height }) => (0.5, 0.0, *height),
        _ => unreachable!("provider matches geometry"),
    };
    (0..n).map(|k| [x, lo + (k as f64 + 0.5) / n as f64 * (hi - lo)]).collect()
}

fn bounding_box(provider: &Provider, geometry: &GeometryRef) -> ([f64; 2], [f64; 2]) {
    match (provider, geometry) {
        (Provider::Bifurcation(p), GeometryRef::Bifurcation { id }) => {
            let nodes = &p.get(id).expect("resolved geometry").domain.mesh.nodes;
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for n in nodes {
                for k in 0..2 {
                    lo[k] = lo[k].min(n[k]);
                    hi[k] = hi[k].max(n[k]);
                }
            }
            ([lo[0], hi[0]], [lo[1], hi[1]])
        }
        (_, GeometryRef::Cavity { height }) => ([0.0, 1.0], [0.0, *height]),
        _ => unreachable!("provider matches geometry"),
    }
}

/// Streamlines of the predicted velocity and a raster of it.
pub fn trace(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path, geometry: &str, mu_p: &[f64], seeds: Option<&Path>) -> Result<TraceSummary> {
    let paths = cfg.resolve_paths(out);
    let model = load_model(checkpoint)?;
    check_model(cfg, &model, checkpoint)?;
    check_mu_p(&model, mu_p)?;
    let (geom, provider) = resolve_geometry(cfg, &paths, geometry)?;
    let seed_points = match seeds {
        Some(p) => read_points(p)?,
        None => default_seeds(&provider, &geom, cfg.streamlines.n_seeds),
    };
    write_resolved_config(cfg, out, "trace-streamlines")?;
    let mu_g = provider.as_dyn().landmarks(&geom, cfg.model.landmarks)?;
    let coords = model.spec().coordinates;
    let pd = provider.as_dyn();
    let g2 = geom.clone();
    let field = ModelField {
        model: &model,
        mu_p: mu_p.to_vec(),
        mu_g,
        coords: Box::new(move |p| {
            // mapping also decides whether the point lies in the domain
            let uc = pd.universal_coordinates(&g2, &p).ok()?;
            Some(match coords {
                usmnet_core::network::CoordinateMode::Physical => p,
                usmnet_core::network::CoordinateMode::Universal => [uc[0], uc[1]],
            })
        }),
    };
    let s = &cfg.streamlines;
    let set = trace_streamlines(&field, &seed_points, s.step, s.max_steps)?;
    set.write_csv(BufWriter::new(File::create(out.join(STREAMLINES_FILE))?))?;
    let (xr, yr) = bounding_box(&provider, &geom);
    let mut raster = velocity_raster(&field, s.raster[0], s.raster[1], xr, yr);
    if let GeometryRef::Cavity { height } = geom {
        raster.meta.insert("H".into(), height);
    }
    for (i, v) in mu_p.iter().enumerate() {
        raster.meta.insert(if cfg.case == CaseType::Cavity { "Re".into() } else { format!("mu_p{i}") }, *v);
    }
    raster.write_binary(BufWriter::new(File::create(out.join(format!("{RASTER_STEM}.bin")))?))?;
    raster.write_csv(BufWriter::new(File::create(out.join(format!("{RASTER_STEM}.csv")))?))?;
    let summary = TraceSummary {
        n_lines: set.lines.len(),
        skipped: set.skipped.into_iter().map(|(i, reason)| Issue { id: i.to_string(), reason }).collect(),
    };
    write_json(&out.join(TRACE_SUMMARY), &summary)?;
    Ok(summary)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct NearestPair {
    pub first: String,
    pub second: String,
    pub distance: f64,
    pub landmarks: LandmarkSet,
}

/// The two geometries of the corpus with the closest landmark vectors.
pub fn nearest_pair(cfg: &ExperimentConfig, out: &Path) -> Result<NearestPair> {
    let paths = cfg.resolve_paths(out);
    let set = cfg.model.landmarks;
    let provider = load_provider(cfg, &paths)?;
    let items: Vec<(String, Vec<f64>)> = match &provider {
        Provider::Cavity(p) => read_corpus(cfg, &paths)?
            .snapshots
            .iter()
            .map(|s| Ok((s.id.clone(), p.landmarks(&s.geometry, set)?)))
            .collect::<Result<_>>()?,
        Provider::Bifurcation(p) => p
            .ids()
            .map(|id| Ok((id.to_string(), p.landmarks(&GeometryRef::Bifurcation { id: id.to_string() }, set)?)))
            .collect::<Result<_>>()?,
    };
    if items.len() < 2 {
        return Err(CliError::Input("the nearest pair needs at least two geometries".into()));
    }
    write_resolved_config(cfg, out, "nearest-pair")?;
    let (first, second, distance) = nearest_landmark_pair(&items)?;
    let pair = NearestPair { first, second, distance, landmarks: set };
    write_json(&out.join(NEAREST_PAIR_FILE), &pair)?;
    Ok(pair)
}
