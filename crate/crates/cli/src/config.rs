//! Experiment configuration. Every section has defaults; unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use usmnet_core::dataset::{CaseType, LandmarkSet};
use usmnet_core::network::{CoordinateMode, Head, InputTransform, ModelSpec};
use usmnet_core::training::{Discrepancy, OptSchedule, DIRECTION_EPS};
use usmnet_fom::cavity::{SolverOptions, HEIGHT_RANGE};
use usmnet_fom::flow::FlowProblem;
use usmnet_fom::geometry::GeometryRanges;

use crate::{CliError, Result};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub case: CaseType,
    /// Seed of data generation and of the train/validation/test split.
    pub seed: u64,
    /// Worker threads for per-snapshot stages; 0 uses all cores.
    pub workers: usize,
    /// Byte-identical outputs for identical inputs (no timings in files).
    pub reproducible: bool,
    pub paths: Paths,
    pub cavity: CavityData,
    pub bifurcation: BifurcationData,
    /// Largest tolerated fraction of failed full-order solves.
    pub max_failure_rate: f64,
    /// Train / validation / test fractions, by snapshot.
    pub split: [f64; 3],
    pub model: ModelConfig,
    pub loss: LossSettings,
    pub optimizer: OptSchedule,
    /// One checkpoint is trained per seed.
    pub train_seeds: Vec<u64>,
    pub streamlines: StreamlineSettings,
}

/// Output locations, relative to the `--out` directory unless absolute.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub geometries: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CavityData {
    pub n_snapshots: usize,
    pub height_range: [f64; 2],
    pub re_range: [f64; 2],
    /// Grid spacing.
    pub h: f64,
    pub n_points: usize,
    pub solver: SolverOptions,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcationData {
    pub n_geometries: usize,
    pub ranges: GeometryRanges,
    /// Target mesh spacing, mm.
    pub mesh_h: f64,
    pub n_points: usize,
    pub flow: FlowProblem,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub head: Head,
    pub coordinates: CoordinateMode,
    pub landmarks: LandmarkSet,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossSettings {
    pub discrepancy: Discrepancy,
    /// Cavity only: penalty on the Dirichlet data at sampled boundary points.
    pub bc_penalty: Option<BcPenaltySettings>,
    pub tikhonov: f64,
    /// Evaluate snapshot terms on the worker pool.
    pub parallel: bool,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BcPenaltySettings {
    pub weight: f64,
    /// Latin-hypercube `(Re, H)` pairs.
    pub n_pairs: usize,
    /// Boundary points per pair.
    pub n_points: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct StreamlineSettings {
    pub n_seeds: usize,
    pub step: f64,
    pub max_steps: usize,
    /// Raster of predicted velocity, `[nx, ny]` nodes.
    pub raster: [usize; 2],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: CaseType::Cavity,
            seed: 0,
            workers: 0,
            reproducible: false,
            paths: Paths::default(),
            cavity: CavityData::default(),
            bifurcation: BifurcationData::default(),
            max_failure_rate: 0.1,
            split: [0.8, 0.1, 0.1],
            model: ModelConfig::default(),
            loss: LossSettings::default(),
            optimizer: OptSchedule::default(),
            train_seeds: vec![0],
            streamlines: StreamlineSettings::default(),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            geometries: "geometries".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

impl Default for CavityData {
    fn default() -> Self {
        Self {
            n_snapshots: 60,
            height_range: HEIGHT_RANGE,
            re_range: [1e2, 1e3],
            h: 1.0 / 64.0,
            n_points: 360,
            solver: SolverOptions::default(),
        }
    }
}

impl Default for BifurcationData {
    fn default() -> Self {
        Self {
            n_geometries: 60,
            ranges: GeometryRanges::default(),
            mesh_h: 0.2,
            n_points: 1000,
            flow: FlowProblem::default(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![30, 20, 10],
            head: Head::Velocity,
            coordinates: CoordinateMode::Universal,
            landmarks: LandmarkSet::Height,
        }
    }
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            discrepancy: Discrepancy::DirectionAugmented { eps: DIRECTION_EPS },
            bc_penalty: None,
            tikhonov: 0.0,
            parallel: false,
        }
    }
}

impl Default for BcPenaltySettings {
    fn default() -> Self {
        Self {
            weight: 1.0,
            n_pairs: 20,
            n_points: 200,
        }
    }
}

impl Default for StreamlineSettings {
    fn default() -> Self {
        Self {
            n_seeds: 12,
            step: 0.01,
            max_steps: 2000,
            raster: [65, 65],
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi {
        Ok(())
    } else {
        Err(invalid(format!("{name} {r:?} must be an ordered range within [{lo}, {hi}]")))
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cavity;
        check_range("cavity height range", c.height_range, HEIGHT_RANGE[0], HEIGHT_RANGE[1])?;
        if !(c.re_range[0] > 0.0 && c.re_range[0] <= c.re_range[1] && c.re_range[1].is_finite()) {
            return Err(invalid(format!("Reynolds range {:?} must be positive and ordered", c.re_range)));
        }
        if c.n_snapshots == 0 || c.n_points == 0 || !(c.h > 0.0 && c.h <= 0.25) {
            return Err(invalid("cavity corpus needs snapshots, points and a grid spacing in (0, 1/4]"));
        }
        if !(c.solver.tol > 0.0 && c.solver.max_newton > 0 && c.solver.min_step > 0.0 && c.solver.min_step < 1.0) {
            return Err(invalid(format!("invalid cavity solver options {:?}", c.solver)));
        }
        let b = &self.bifurcation;
        b.ranges.validate().map_err(|e| invalid(e.to_string()))?;
        b.flow.validate().map_err(|e| invalid(e.to_string()))?;
        if b.n_geometries == 0 || b.n_points == 0 || !(b.mesh_h > 0.0) {
            return Err(invalid("bifurcation corpus needs geometries, points and a positive mesh spacing"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(invalid("max_failure_rate must lie in [0, 1]"));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("split fractions {:?} must be non-negative and sum to 1", self.split)));
        }
        let lm_ok = match self.case {
            CaseType::Cavity => self.model.landmarks == LandmarkSet::Height,
            CaseType::Bifurcation => self.model.landmarks != LandmarkSet::Height,
        };
        if !lm_ok {
            return Err(invalid(format!("landmark set {:?} does not fit the {:?} case", self.model.landmarks, self.case)));
        }
        self.model_spec().validate().map_err(|e| invalid(e.to_string()))?;
        self.loss.discrepancy.validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.loss.tikhonov >= 0.0) {
            return Err(invalid("tikhonov weight must be non-negative"));
        }
        if let Some(bc) = &self.loss.bc_penalty {
            if self.case != CaseType::Cavity {
                return Err(invalid("the boundary penalty is only defined for the cavity case"));
            }
            if !(bc.weight >= 0.0) || bc.n_pairs == 0 || bc.n_points == 0 {
                return Err(invalid("boundary penalty needs a non-negative weight, pairs and points"));
            }
        }
        self.optimizer.adam.validate().map_err(|e| invalid(e.to_string()))?;
        self.optimizer.bfgs.validate().map_err(|e| invalid(e.to_string()))?;
        if self.train_seeds.is_empty() {
            return Err(invalid("train_seeds must not be empty"));
        }
        let s = &self.streamlines;
        if s.n_seeds == 0 || !(s.step > 0.0) || s.raster[0] < 2 || s.raster[1] < 2 {
            return Err(invalid("streamlines need seeds, a positive step and a raster of at least 2 x 2"));
        }
        Ok(())
    }

    pub fn spatial_dim(&self) -> usize {
        2
    }

    pub fn n_physical(&self) -> usize {
        match self.case {
            CaseType::Cavity => 1,
            CaseType::Bifurcation => 0,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self.case {
            CaseType::Cavity => 2,
            CaseType::Bifurcation => 3,
        }
    }

    /// Network topology with identity normalization. The Reynolds number
    /// enters through its logarithm.
    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(
            self.spatial_dim(),
            self.n_physical(),
            self.model.landmarks.dim(),
            self.n_outputs(),
            self.model.hidden.clone(),
            self.model.head.clone(),
            self.model.coordinates,
        );
        if self.case == CaseType::Cavity {
            spec.input_transforms[self.spatial_dim()] = InputTransform::Log10;
        }
        spec
    }

    /// Resolves the configured paths against `out`.
    pub fn resolve_paths(&self, out: &Path) -> Paths {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { out.join(p) };
        Paths {
            corpus: r(&self.paths.corpus),
            geometries: r(&self.paths.geometries),
            checkpoints: r(&self.paths.checkpoints),
            reports: r(&self.paths.reports),
        }
    }
}
