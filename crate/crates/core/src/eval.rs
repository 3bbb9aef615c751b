//! Error metrics, evaluation reports, streamline tracing and raster exports.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::TrainingTable;
use crate::error::{check_len, Error, Result};
use crate::network::Model;
use crate::training::DIRECTION_EPS;

/// Streamline tracing stops where `|v|` drops below this.
pub const STAGNATION_SPEED: f64 = 1e-6;

fn check_shapes(truth: &[f64], pred: &[f64], dim: usize) -> Result<usize> {
    check_len("prediction length", truth.len(), pred.len())?;
    if dim == 0 || truth.is_empty() || truth.len() % dim != 0 {
        return Err(Error::InvalidInput(format!(
            "metric needs a nonempty n x {dim} field, got {} values",
            truth.len()
        )));
    }
    Ok(truth.len() / dim)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Root mean square of `|u| - |u_tilde|` over points of a flat `n x dim` field.
pub fn rmse_magnitude(truth: &[f64], pred: &[f64], dim: usize) -> Result<f64> {
    let n = check_shapes(truth, pred, dim)?;
    let s: f64 = truth
        .chunks(dim)
        .zip(pred.chunks(dim))
        .map(|(u, p)| (norm(u) - norm(p)).powi(2))
        .sum();
    Ok((s / n as f64).sqrt())
}

/// Root mean square of `|u / (eps + |u|) - u_tilde / (eps + |u_tilde|)|`.
pub fn rmse_direction(truth: &[f64], pred: &[f64], dim: usize, eps: f64) -> Result<f64> {
    let n = check_shapes(truth, pred, dim)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("direction eps must be positive".into()));
    }
    let s: f64 = truth
        .chunks(dim)
        .zip(pred.chunks(dim))
        .map(|(u, p)| {
            let (a, b) = (eps + norm(u), eps + norm(p));
            u.iter().zip(p).map(|(x, y)| (x / a - y / b).powi(2)).sum::<f64>()
        })
        .sum();
    Ok((s / n as f64).sqrt())
}

/// Root mean square angle (radians) between `u` and `u_tilde`. A zero vector
/// against a nonzero one counts as a right angle; two zero vectors as aligned.
pub fn rmse_angle(truth: &[f64], pred: &[f64], dim: usize) -> Result<f64> {
    let n = check_shapes(truth, pred, dim)?;
    let s: f64 = truth
        .chunks(dim)
        .zip(pred.chunks(dim))
        .map(|(u, p)| {
            let (a, b) = (norm(u), norm(p));
            let angle = match (a > 0.0, b > 0.0) {
                (true, true) => {
                    let c: f64 = u.iter().zip(p).map(|(x, y)| x * y).sum::<f64>() / (a * b);
                    c.clamp(-1.0, 1.0).acos()
                }
                (false, false) => 0.0,
                _ => std::f64::consts::FRAC_PI_2,
            };
            angle * angle
        })
        .sum();
    Ok((s / n as f64).sqrt())
}

/// Plain root mean square error over all entries.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    let n = check_shapes(truth, pred, 1)?;
    let s: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((s / n as f64).sqrt())
}

/// `sqrt(sum |u - u_tilde|^2 / sum |u|^2)` over all entries.
pub fn relative_rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_shapes(truth, pred, 1)?;
    let den: f64 = truth.iter().map(|a| a * a).sum();
    if !(den > 0.0) {
        return Err(Error::InvalidInput("relative RMSE of a zero truth field".into()));
    }
    let num: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Columns `cols` of a flat `n x k` array.
pub fn columns(values: &[f64], k: usize, cols: std::ops::Range<usize>) -> Vec<f64> {
    values
        .chunks(k)
        .flat_map(|row| row[cols.clone()].iter().copied())
        .collect()
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SnapshotMetrics {
    pub id: String,
    pub n_points: usize,
    pub rmse_magnitude: f64,
    pub rmse_direction: f64,
    pub rmse_angle: f64,
    pub relative_rmse_v: f64,
    /// Present when the solution carries a pressure component.
    pub rmse_pressure: Option<f64>,
    pub relative_rmse_p: Option<f64>,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Self {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            min: v[0],
            max: v[n - 1],
        })
    }
}

/// Median of a sample (NaN for an empty one).
pub fn median(values: &[f64]) -> f64 {
    Aggregate::of(values).map_or(f64::NAN, |a| a.median)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub seed: u64,
    pub partition: String,
    pub snapshots: Vec<SnapshotMetrics>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

impl EvalReport {
    pub fn new(model_id: &str, seed: u64, partition: &str, snapshots: Vec<SnapshotMetrics>) -> Self {
        let mut aggregates = BTreeMap::new();
        let mut add = |name: &str, f: &dyn Fn(&SnapshotMetrics) -> Option<f64>| {
            let v: Vec<f64> = snapshots.iter().filter_map(f).collect();
            if let Some(a) = Aggregate::of(&v) {
                aggregates.insert(name.to_string(), a);
            }
        };
        add("rmse_magnitude", &|s| Some(s.rmse_magnitude));
        add("rmse_direction", &|s| Some(s.rmse_direction));
        add("rmse_angle", &|s| Some(s.rmse_angle));
        add("relative_rmse_v", &|s| Some(s.relative_rmse_v));
        add("rmse_pressure", &|s| s.rmse_pressure);
        add("relative_rmse_p", &|s| s.relative_rmse_p);
        Self {
            model_id: model_id.to_string(),
            seed,
            partition: partition.to_string(),
            snapshots,
            aggregates,
        }
    }

    pub fn aggregate(&self, metric: &str) -> Option<Aggregate> {
        self.aggregates.get(metric).copied()
    }

    fn opt(v: Option<f64>) -> String {
        v.map(|x| format!("{x:e}")).unwrap_or_default()
    }

    /// One row per snapshot.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "model_id", "seed", "partition", "snapshot", "n_points", "rmse_magnitude", "rmse_direction",
            "rmse_angle", "relative_rmse_v", "rmse_pressure", "relative_rmse_p",
        ])?;
        for s in &self.snapshots {
            out.write_record([
                self.model_id.clone(),
                self.seed.to_string(),
                self.partition.clone(),
                s.id.clone(),
                s.n_points.to_string(),
                format!("{:e}", s.rmse_magnitude),
                format!("{:e}", s.rmse_direction),
                format!("{:e}", s.rmse_angle),
                format!("{:e}", s.relative_rmse_v),
                Self::opt(s.rmse_pressure),
                Self::opt(s.relative_rmse_p),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Long-format rows `(config, seed, snapshot, metric, value)` for boxplots.
    pub fn write_boxplot_csv(&self, w: impl Write, config: &str, header: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if header {
            out.write_record(["config", "seed", "snapshot", "metric", "value"])?;
        }
        for s in &self.snapshots {
            let mut rows = vec![
                ("rmse_magnitude", Some(s.rmse_magnitude)),
                ("rmse_direction", Some(s.rmse_direction)),
                ("relative_rmse_v", Some(s.relative_rmse_v)),
                ("relative_rmse_p", s.relative_rmse_p),
            ];
            rows.retain(|r| r.1.is_some());
            for (name, v) in rows {
                out.write_record([
                    config.to_string(),
                    self.seed.to_string(),
                    s.id.clone(),
                    name.to_string(),
                    format!("{:e}", v.unwrap_or_default()),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Metrics of one snapshot. Velocity is the first `dim` components; a
/// component after them, if present, is the pressure.
pub fn snapshot_metrics(id: &str, truth: &[f64], pred: &[f64], k: usize, dim: usize) -> Result<SnapshotMetrics> {
    check_shapes(truth, pred, k)?;
    if k < dim {
        return Err(Error::InvalidInput(format!("{k} components cannot hold a {dim}-d velocity")));
    }
    let (tv, pv) = (columns(truth, k, 0..dim), columns(pred, k, 0..dim));
    let (rmse_pressure, relative_rmse_p) = if k > dim {
        let (tp, pp) = (columns(truth, k, dim..dim + 1), columns(pred, k, dim..dim + 1));
        (Some(rmse(&tp, &pp)?), Some(relative_rmse(&tp, &pp)?))
    } else {
        (None, None)
    };
    Ok(SnapshotMetrics {
        id: id.to_string(),
        n_points: truth.len() / k,
        rmse_magnitude: rmse_magnitude(&tv, &pv, dim)?,
        rmse_direction: rmse_direction(&tv, &pv, dim, DIRECTION_EPS)?,
        rmse_angle: rmse_angle(&tv, &pv, dim)?,
        relative_rmse_v: relative_rmse(&tv, &pv)?,
        rmse_pressure,
        relative_rmse_p,
    })
}

/// Evaluates a model on every snapshot of a table.
pub fn evaluate_table(model: &Model, table: &TrainingTable, model_id: &str, seed: u64, partition: &str) -> Result<EvalReport> {
    check_len("table arity", model.spec().arity(), table.arity())?;
    check_len("table components", model.spec().n_outputs, table.k)?;
    let a = table.arity();
    let mut out = Vec::with_capacity(table.snapshots.len());
    for s in &table.snapshots {
        let pred = model.evaluate_batch(&table.inputs[s.rows.start * a..s.rows.end * a])?;
        let truth = &table.targets[s.rows.start * table.k..s.rows.end * table.k];
        out.push(snapshot_metrics(&s.id, truth, &pred, table.k, table.d)?);
    }
    Ok(EvalReport::new(model_id, seed, partition, out))
}

/// Pair of items with minimal Euclidean landmark distance (exhaustive search).
pub fn nearest_landmark_pair(items: &[(String, Vec<f64>)]) -> Result<(String, String, f64)> {
    if items.len() < 2 {
        return Err(Error::InvalidInput("nearest pair needs at least two geometries".into()));
    }
    let mut best = (0, 1, f64::INFINITY);
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            check_len("landmark vectors", items[i].1.len(), items[j].1.len())?;
            let d = items[i]
                .1
                .iter()
                .zip(&items[j].1)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    Ok((items[best.0].0.clone(), items[best.1].0.clone(), best.2))
}

/// A planar velocity field defined on some domain.
pub trait VelocitySource {
    /// Velocity at `x`, or `None` outside the domain.
    fn velocity(&self, x: [f64; 2]) -> Option<[f64; 2]>;
}

impl<F: Fn([f64; 2]) -> Option<[f64; 2]>> VelocitySource for F {
    fn velocity(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        self(x)
    }
}

/// Model predictions for fixed parameters and landmarks. `coords` maps a
/// physical point to the network's spatial input (`None` outside the domain).
pub struct ModelField<'a> {
    pub model: &'a Model,
    pub mu_p: Vec<f64>,
    pub mu_g: Vec<f64>,
    pub coords: Box<dyn Fn([f64; 2]) -> Option<[f64; 2]> + 'a>,
}

impl VelocitySource for ModelField<'_> {
    fn velocity(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        let xh = (self.coords)(x)?;
        let u = self.model.evaluate(&xh, &self.mu_p, &self.mu_g).ok()?;
        Some([u[0], u[1]])
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    DomainExit,
    Stagnation,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Streamline {
    pub seed_index: usize,
    pub points: Vec<[f64; 2]>,
    /// Arclength at each point.
    pub arclength: Vec<f64>,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct StreamlineSet {
    pub lines: Vec<Streamline>,
    /// Seeds that were not traced, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl StreamlineSet {
    /// CSV polylines with columns `id,s,x,y`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "s", "x", "y"])?;
        for l in &self.lines {
            for (p, s) in l.points.iter().zip(&l.arclength) {
                out.write_record([
                    l.seed_index.to_string(),
                    format!("{s:e}"),
                    format!("{:e}", p[0]),
                    format!("{:e}", p[1]),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn unit(src: &dyn VelocitySource, x: [f64; 2]) -> std::result::Result<[f64; 2], Termination> {
    let v = src.velocity(x).ok_or(Termination::DomainExit)?;
    let n = v[0].hypot(v[1]);
    if !(n >= STAGNATION_SPEED) {
        return Err(Termination::Stagnation);
    }
    Ok([v[0] / n, v[1] / n])
}

/// Fixed-step RK4 integration of `dx/ds = v / |v|` from each seed.
pub fn trace_streamlines(src: &dyn VelocitySource, seeds: &[[f64; 2]], step: f64, max_steps: usize) -> Result<StreamlineSet> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput("streamline step must be positive".into()));
    }
    let mut set = StreamlineSet::default();
    for (i, &seed) in seeds.iter().enumerate() {
        if src.velocity(seed).is_none() {
            set.skipped.push((i, format!("seed ({}, {}) lies outside the domain", seed[0], seed[1])));
            continue;
        }
        let mut points = vec![seed];
        let mut arclength = vec![0.0];
        let mut x = seed;
        let mut termination = Termination::MaxSteps;
        for _ in 0..max_steps {
            let stage = |x: [f64; 2], k: [f64; 2], c: f64| [x[0] + c * step * k[0], x[1] + c * step * k[1]];
            let next = (|| {
                let k1 = unit(src, x)?;
                let k2 = unit(src, stage(x, k1, 0.5))?;
                let k3 = unit(src, stage(x, k2, 0.5))?;
                let k4 = unit(src, stage(x, k3, 1.0))?;
                let y = [
                    x[0] + step / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    x[1] + step / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ];
                src.velocity(y).ok_or(Termination::DomainExit)?;
                Ok(y)
            })();
            match next {
                Ok(y) => {
                    x = y;
                    points.push(x);
                    arclength.push(arclength.last().copied().unwrap_or(0.0) + step);
                }
                Err(t) => {
                    termination = t;
                    break;
                }
            }
        }
        set.lines.push(Streamline {
            seed_index: i,
            points,
            arclength,
            termination,
        });
    }
    Ok(set)
}

/// Scalar fields on a regular grid of `nx x ny` nodes (row-major, x fastest).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Raster {
    pub nx: usize,
    pub ny: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub meta: BTreeMap<String, f64>,
    #[serde(skip)]
    pub fields: Vec<(String, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct RasterHeader {
    nx: usize,
    ny: usize,
    x_range: [f64; 2],
    y_range: [f64; 2],
    meta: BTreeMap<String, f64>,
    fields: Vec<String>,
}

impl Raster {
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let t = |a: [f64; 2], k: usize, n: usize| {
            if n > 1 {
                a[0] + (a[1] - a[0]) * k as f64 / (n - 1) as f64
            } else {
                a[0]
            }
        };
        [t(self.x_range, i, self.nx), t(self.y_range, j, self.ny)]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in &self.fields {
            if f.len() != self.nx * self.ny {
                return Err(Error::InvalidInput(format!("raster field {name} has {} values", f.len())));
            }
        }
        Ok(())
    }

    /// Columns `i,j,x,y,<fields...>`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        self.validate()?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["i".to_string(), "j".into(), "x".into(), "y".into()];
        header.extend(self.fields.iter().map(|f| f.0.clone()));
        out.write_record(&header)?;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let p = self.node(i, j);
                let mut rec = vec![i.to_string(), j.to_string(), format!("{:e}", p[0]), format!("{:e}", p[1])];
                rec.extend(self.fields.iter().map(|f| format!("{:e}", f.1[j * self.nx + i])));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// One JSON header line (dimensions, ranges, metadata, field names), then
    /// each field as little-endian f64.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        let header = RasterHeader {
            nx: self.nx,
            ny: self.ny,
            x_range: self.x_range,
            y_range: self.y_range,
            meta: self.meta.clone(),
            fields: self.fields.iter().map(|f| f.0.clone()).collect(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (_, f) in &self.fields {
            for v in f {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Raster> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Format("raster header line missing".into()))?;
        let h: RasterHeader = serde_json::from_slice(&bytes[..nl])?;
        let n = h.nx * h.ny;
        let data = &bytes[nl + 1..];
        check_len("raster payload bytes", 8 * n * h.fields.len(), data.len())?;
        let fields = h
            .fields
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let vals = data[8 * n * k..8 * n * (k + 1)]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                (name.clone(), vals)
            })
            .collect();
        Ok(Raster {
            nx: h.nx,
            ny: h.ny,
            x_range: h.x_range,
            y_range: h.y_range,
            meta: h.meta,
            fields,
        })
    }
}

/// Samples a velocity source on a raster (NaN outside the domain).
pub fn velocity_raster(src: &dyn VelocitySource, nx: usize, ny: usize, x_range: [f64; 2], y_range: [f64; 2]) -> Raster {
    let mut r = Raster {
        nx,
        ny,
        x_range,
        y_range,
        meta: BTreeMap::new(),
        fields: Vec::new(),
    };
    let (mut vx, mut vy) = (Vec::with_capacity(nx * ny), Vec::with_capacity(nx * ny));
    for j in 0..ny {
        for i in 0..nx {
            let v = src.velocity(r.node(i, j)).unwrap_or([f64::NAN; 2]);
            vx.push(v[0]);
            vy.push(v[1]);
        }
    }
    r.fields = vec![("vx".into(), vx), ("vy".into(), vy)];
    r
}
