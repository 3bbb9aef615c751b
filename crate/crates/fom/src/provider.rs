//! Geometry services for building network inputs: landmarks and universal
//! coordinates of cavities and bifurcations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use usmnet_core::dataset::{GeometryProvider, GeometryRef, LandmarkSet};

use crate::cavity::{cavity_landmark, cavity_uc_map};
use crate::flow::FlowSolution;
use crate::geometry::{extract_landmarks, generate_geometry, BifurcationGeometry, GeometryRanges};
use crate::mesh::{mesh_geometry, read_mesh, write_mesh};
use crate::uc::{UcDomain, UcFields, ALPHA};
use crate::{FomError, Result};

/// Cavities are fully described by their height.
#[derive(Clone, Copy, Debug, Default)]
pub struct CavityProvider;

impl GeometryProvider for CavityProvider {
    fn landmarks(&self, geometry: &GeometryRef, set: LandmarkSet) -> usmnet_core::Result<Vec<f64>> {
        match (geometry, set) {
            (GeometryRef::Cavity { height }, LandmarkSet::Height) => Ok(cavity_landmark(*height)),
            _ => Err(usmnet_core::Error::InvalidInput(format!("no {set:?} landmarks for {geometry:?}"))),
        }
    }

    fn universal_coordinates(&self, geometry: &GeometryRef, point: &[f64]) -> usmnet_core::Result<Vec<f64>> {
        match geometry {
            GeometryRef::Cavity { height } if point.len() == 2 => Ok(cavity_uc_map([point[0], point[1]], *height)?.to_vec()),
            _ => Err(usmnet_core::Error::InvalidInput(format!("cavity map cannot handle {geometry:?} / {point:?}"))),
        }
    }
}

/// One bifurcation with its mesh and coordinate fields.
#[derive(Clone, Debug)]
pub struct BifurcationCase {
    pub id: String,
    pub geometry: BifurcationGeometry,
    pub domain: UcDomain,
}

impl BifurcationCase {
    pub fn new(id: impl Into<String>, geometry: BifurcationGeometry, mesh_h: f64) -> Result<Self> {
        let mesh = mesh_geometry(&geometry, mesh_h)?;
        Ok(Self { id: id.into(), geometry, domain: UcDomain::solve(mesh)? })
    }

    pub fn generate(id: impl Into<String>, seed: u64, ranges: &GeometryRanges, mesh_h: f64) -> Result<Self> {
        Self::new(id, generate_geometry(seed, ranges)?, mesh_h)
    }

    /// Writes `<id>.json` (geometry) and `<id>.mesh` (mesh, coordinate
    /// fields and, if given, the flow solution) into `dir`.
    pub fn save(&self, dir: &Path, solution: Option<&FlowSolution>) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut g = BufWriter::new(File::create(dir.join(format!("{}.json", self.id)))?);
        serde_json::to_writer_pretty(&mut g, &self.geometry)?;
        g.write_all(b"\n")?;
        g.flush()?;
        let f = &self.domain.fields;
        let mut fields: Vec<(&str, Vec<f64>)> = vec![("psi_lr", f.psi_lr.clone()), ("psi_td", f.psi_td.clone())];
        if let Some(s) = solution {
            fields.push(("vx", s.velocity.iter().map(|v| v[0]).collect()));
            fields.push(("vy", s.velocity.iter().map(|v| v[1]).collect()));
            fields.push(("p", s.pressure.clone()));
        }
        let refs: Vec<(&str, &[f64])> = fields.iter().map(|(n, v)| (*n, v.as_slice())).collect();
        let mut m = BufWriter::new(File::create(dir.join(format!("{}.mesh", self.id)))?);
        write_mesh(&mut m, &self.domain.mesh, &refs)?;
        m.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path, id: &str) -> Result<Self> {
        let geometry: BifurcationGeometry = serde_json::from_reader(BufReader::new(File::open(dir.join(format!("{id}.json")))?))?;
        let (mesh, fields) = read_mesh(&mut BufReader::new(File::open(dir.join(format!("{id}.mesh")))?))?;
        let get = |name: &str| {
            fields
                .iter()
                .find(|f| f.0 == name)
                .map(|f| f.1.clone())
                .ok_or_else(|| FomError::Format(format!("mesh file of {id} lacks field {name}")))
        };
        let uc = UcFields {
            psi_lr: get("psi_lr")?,
            psi_td: get("psi_td")?,
            alpha: ALPHA,
            x_range: geometry.x_extent(),
        };
        Ok(Self { id: id.to_string(), geometry, domain: UcDomain::new(mesh, uc)? })
    }
}

/// Bifurcations keyed by snapshot geometry id.
#[derive(Clone, Debug, Default)]
pub struct BifurcationProvider {
    cases: BTreeMap<String, BifurcationCase>,
}

impl BifurcationProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, case: BifurcationCase) {
        self.cases.insert(case.id.clone(), case);
    }

    pub fn get(&self, id: &str) -> Option<&BifurcationCase> {
        self.cases.get(id)
    }

    /// Geometry ids in sorted order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cases.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Loads every `<id>.json` / `<id>.mesh` pair of a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut ids: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
            .collect();
        ids.sort();
        let mut p = Self::new();
        for id in ids {
            p.insert(BifurcationCase::load(dir, &id)?);
        }
        Ok(p)
    }

    fn case(&self, geometry: &GeometryRef) -> usmnet_core::Result<&BifurcationCase> {
        match geometry {
            GeometryRef::Bifurcation { id } => self
                .cases
                .get(id)
                .ok_or_else(|| usmnet_core::Error::InvalidInput(format!("unknown bifurcation {id}"))),
            other => Err(usmnet_core::Error::InvalidInput(format!("not a bifurcation: {other:?}"))),
        }
    }
}

impl GeometryProvider for BifurcationProvider {
    fn landmarks(&self, geometry: &GeometryRef, set: LandmarkSet) -> usmnet_core::Result<Vec<f64>> {
        Ok(extract_landmarks(&self.case(geometry)?.geometry, set)?)
    }

    fn universal_coordinates(&self, geometry: &GeometryRef, point: &[f64]) -> usmnet_core::Result<Vec<f64>> {
        if point.len() != 2 {
            return Err(usmnet_core::Error::InvalidInput(format!("expected a 2D point, got {point:?}")));
        }
        Ok(self.case(geometry)?.domain.uc_map([point[0], point[1]])?.to_vec())
    }
}
