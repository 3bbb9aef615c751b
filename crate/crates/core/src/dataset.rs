//! Snapshot corpora, the flattened training table and snapshot-level splits.
//!
//! A corpus directory holds `manifest.json` (metadata, array offsets and
//! SHA-256 checksums) and `arrays.bin`, a little-endian f64 sidecar with the
//! point and value arrays of every snapshot.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::network::CoordinateMode;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARRAYS_FILE: &str = "arrays.bin";

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CaseType {
    Cavity,
    Bifurcation,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryRef {
    Cavity { height: f64 },
    Bifurcation { id: String },
}

/// Which landmark vector a model is conditioned on.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkSet {
    /// Cavity height.
    Height,
    /// Top and bottom wall ordinates at 13 stations.
    Wall26,
    /// Top and bottom wall ordinates at 3 stations.
    Wall6,
}

impl LandmarkSet {
    pub fn dim(self) -> usize {
        match self {
            LandmarkSet::Height => 1,
            LandmarkSet::Wall26 => 26,
            LandmarkSet::Wall6 => 6,
        }
    }
}

/// Geometry-side services needed to assemble network inputs.
pub trait GeometryProvider: Sync {
    fn landmarks(&self, geometry: &GeometryRef, set: LandmarkSet) -> Result<Vec<f64>>;
    /// Universal coordinates of one physical point.
    fn universal_coordinates(&self, geometry: &GeometryRef, point: &[f64]) -> Result<Vec<f64>>;
}

/// One full-order solution sampled at scattered observation points.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub id: String,
    pub mu_p: Vec<f64>,
    pub geometry: GeometryRef,
    pub d: usize,
    pub k: usize,
    /// `n x d`, row-major.
    pub points: Vec<f64>,
    /// `n x k`, row-major.
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn new(
        id: impl Into<String>,
        mu_p: Vec<f64>,
        geometry: GeometryRef,
        d: usize,
        k: usize,
        points: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            mu_p,
            geometry,
            d,
            k,
            points,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::InvalidInput(format!(
                "snapshot {}: d and k must be positive",
                self.id
            )));
        }
        if self.points.is_empty() || self.points.len() % self.d != 0 {
            return Err(Error::InvalidInput(format!(
                "snapshot {} needs at least one observation point",
                self.id
            )));
        }
        check_len("snapshot values", self.n_points() * self.k, self.values.len())?;
        if self
            .points
            .iter()
            .chain(&self.values)
            .chain(&self.mu_p)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(format!("snapshot {}", self.id)));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.d..(j + 1) * self.d]
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.k..(j + 1) * self.k]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub case_type: CaseType,
    pub d: usize,
    pub k: usize,
    pub n_p: usize,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    case_type: CaseType,
    d: usize,
    k: usize,
    n_p: usize,
    snapshots: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    mu_p: Vec<f64>,
    geometry: GeometryRef,
    n_points: usize,
    /// Byte offsets into the sidecar.
    points_offset: u64,
    values_offset: u64,
    points_sha256: String,
    values_sha256: String,
}

fn le_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Corpus {
    pub fn new(case_type: CaseType, d: usize, k: usize, n_p: usize) -> Self {
        Self {
            case_type,
            d,
            k,
            n_p,
            snapshots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn push(&mut self, s: Snapshot) -> Result<()> {
        s.validate()?;
        check_len("snapshot spatial dimension", self.d, s.d)?;
        check_len("snapshot components", self.k, s.k)?;
        check_len("snapshot physical parameters", self.n_p, s.mu_p.len())?;
        let geometry_ok = matches!(
            (&s.geometry, self.case_type),
            (GeometryRef::Cavity { .. }, CaseType::Cavity)
                | (GeometryRef::Bifurcation { .. }, CaseType::Bifurcation)
        );
        if !geometry_ok {
            return Err(Error::InvalidInput(format!(
                "snapshot {} geometry does not match a {:?} corpus",
                s.id, self.case_type
            )));
        }
        if self.snapshots.iter().any(|o| o.id == s.id) {
            return Err(Error::InvalidInput(format!("duplicate snapshot id {}", s.id)));
        }
        self.snapshots.push(s);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.id == id)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Corpus> {
        let mut out = Corpus::new(self.case_type, self.d, self.k, self.n_p);
        for &i in indices {
            let s = self.snapshots.get(i).ok_or_else(|| {
                Error::InvalidInput(format!("snapshot index {i} out of range"))
            })?;
            out.snapshots.push(s.clone());
        }
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut arrays = Vec::new();
        let mut entries = Vec::with_capacity(self.len());
        for s in &self.snapshots {
            let p = le_bytes(&s.points);
            let v = le_bytes(&s.values);
            let points_offset = arrays.len() as u64;
            arrays.extend_from_slice(&p);
            let values_offset = arrays.len() as u64;
            arrays.extend_from_slice(&v);
            entries.push(ManifestEntry {
                id: s.id.clone(),
                mu_p: s.mu_p.clone(),
                geometry: s.geometry.clone(),
                n_points: s.n_points(),
                points_offset,
                values_offset,
                points_sha256: sha256_hex(&p),
                values_sha256: sha256_hex(&v),
            });
        }
        let manifest = Manifest {
            format_version: CORPUS_FORMAT_VERSION,
            case_type: self.case_type,
            d: self.d,
            k: self.k,
            n_p: self.n_p,
            snapshots: entries,
        };
        fs::write(dir.join(ARRAYS_FILE), &arrays)?;
        let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Corpus> {
        let manifest: Manifest =
            serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.format_version != CORPUS_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "corpus format version {} is not supported (expected {})",
                manifest.format_version, CORPUS_FORMAT_VERSION
            )));
        }
        let arrays = fs::read(dir.join(ARRAYS_FILE))?;
        let mut corpus = Corpus::new(manifest.case_type, manifest.d, manifest.k, manifest.n_p);
        for e in manifest.snapshots {
            let points = read_block(&arrays, e.points_offset, e.n_points * manifest.d, &e.points_sha256, &e.id)?;
            let values = read_block(&arrays, e.values_offset, e.n_points * manifest.k, &e.values_sha256, &e.id)?;
            corpus.push(Snapshot {
                id: e.id,
                mu_p: e.mu_p,
                geometry: e.geometry,
                d: manifest.d,
                k: manifest.k,
                points,
                values,
            })?;
        }
        Ok(corpus)
    }

    /// Imports externally generated snapshots. The CSV needs a header and the
    /// columns `snapshot, geometry, mu_p (n_p), x (d), u (k)`; rows of one
    /// snapshot share `geometry` and `mu_p`. For cavity corpora the geometry
    /// column is the height, otherwise a geometry id.
    pub fn import_csv(path: &Path, case_type: CaseType, d: usize, k: usize, n_p: usize) -> Result<Corpus> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let width = 2 + n_p + d + k;
        check_len("CSV columns", width, reader.headers()?.len())?;
        let mut corpus = Corpus::new(case_type, d, k, n_p);
        let mut order: Vec<Snapshot> = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            check_len("CSV columns", width, rec.len())?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| {
                    Error::Format(format!("row {}: column {} is not a number", line + 1, i))
                })
            };
            let geometry = match case_type {
                CaseType::Cavity => GeometryRef::Cavity { height: num(1)? },
                CaseType::Bifurcation => GeometryRef::Bifurcation {
                    id: rec[1].to_string(),
                },
            };
            let mu_p = (2..2 + n_p).map(num).collect::<Result<Vec<_>>>()?;
            let x = (2 + n_p..2 + n_p + d).map(num).collect::<Result<Vec<_>>>()?;
            let u = (2 + n_p + d..width).map(num).collect::<Result<Vec<_>>>()?;
            let id = &rec[0];
            match order.iter_mut().find(|s| s.id == id) {
                Some(s) => {
                    if s.mu_p != mu_p || s.geometry != geometry {
                        return Err(Error::Format(format!(
                            "row {}: snapshot {id} changes its parameters or geometry",
                            line + 1
                        )));
                    }
                    s.points.extend(x);
                    s.values.extend(u);
                }
                None => order.push(Snapshot {
                    id: id.to_string(),
                    mu_p,
                    geometry,
                    d,
                    k,
                    points: x,
                    values: u,
                }),
            }
        }
        for s in order {
            corpus.push(s)?;
        }
        Ok(corpus)
    }
}

fn read_block(arrays: &[u8], offset: u64, count: usize, sha: &str, id: &str) -> Result<Vec<f64>> {
    let start = offset as usize;
    let end = start + 8 * count;
    let bytes = arrays.get(start..end).ok_or_else(|| {
        Error::Format(format!("snapshot {id}: array block lies outside the sidecar"))
    })?;
    if sha256_hex(bytes) != sha {
        return Err(Error::Checksum(format!("snapshot {id}")));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableSnapshot {
    pub id: String,
    pub geometry: GeometryRef,
    pub rows: Range<usize>,
}

/// Flattened rows `(x or x_hat, mu_p, mu_g) -> u` with per-snapshot row ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTable {
    pub coordinates: CoordinateMode,
    pub landmarks: LandmarkSet,
    pub d: usize,
    pub n_p: usize,
    pub n_g: usize,
    pub k: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub snapshots: Vec<TableSnapshot>,
}

impl TrainingTable {
    pub fn arity(&self) -> usize {
        self.d + self.n_p + self.n_g
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let a = self.arity();
        &self.inputs[i * a..(i + 1) * a]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.k..(i + 1) * self.k]
    }
}

/// Assembles one input row for a single point.
pub fn input_row(
    provider: &dyn GeometryProvider,
    geometry: &GeometryRef,
    coordinates: CoordinateMode,
    point: &[f64],
    mu_p: &[f64],
    mu_g: &[f64],
) -> Result<Vec<f64>> {
    let mut row = match coordinates {
        CoordinateMode::Physical => point.to_vec(),
        CoordinateMode::Universal => provider.universal_coordinates(geometry, point)?,
    };
    check_len("coordinates", point.len(), row.len())?;
    row.extend_from_slice(mu_p);
    row.extend_from_slice(mu_g);
    Ok(row)
}

pub fn build_training_table(
    corpus: &Corpus,
    coordinates: CoordinateMode,
    landmarks: LandmarkSet,
    provider: &dyn GeometryProvider,
) -> Result<TrainingTable> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("training table needs at least one snapshot".into()));
    }
    let n_g = landmarks.dim();
    let mut table = TrainingTable {
        coordinates,
        landmarks,
        d: corpus.d,
        n_p: corpus.n_p,
        n_g,
        k: corpus.k,
        inputs: Vec::new(),
        targets: Vec::new(),
        snapshots: Vec::with_capacity(corpus.len()),
    };
    for s in &corpus.snapshots {
        let mu_g = provider.landmarks(&s.geometry, landmarks)?;
        check_len("landmarks", n_g, mu_g.len())?;
        let start = table.n_rows();
        for j in 0..s.n_points() {
            let row = input_row(provider, &s.geometry, coordinates, s.point(j), &s.mu_p, &mu_g)
                .map_err(|e| Error::InvalidInput(format!("snapshot {} point {j}: {e}", s.id)))?;
            table.inputs.extend(row);
            table.targets.extend_from_slice(s.value(j));
        }
        table.snapshots.push(TableSnapshot {
            id: s.id.clone(),
            geometry: s.geometry.clone(),
            rows: start..table.n_rows(),
        });
    }
    Ok(table)
}

/// Snapshot indices of a train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded partition of `n` snapshots by the given fractions.
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n.saturating_sub(n_train));
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidInput(format!(
            "split of {n} snapshots by {fractions:?} leaves a partition empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part = |r: Range<usize>| {
        let mut v = idx[r].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        train: part(0..n_train),
        validation: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    })
}

/// Checks that no index appears in two partitions.
pub fn is_partition(s: &Split, n: usize) -> bool {
    let mut seen = HashSet::new();
    s.train
        .iter()
        .chain(&s.validation)
        .chain(&s.test)
        .all(|i| *i < n && seen.insert(*i))
        && seen.len() == n
}
