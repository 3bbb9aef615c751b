//! Steady incompressible flow on a tagged triangulation.
//!
//! Equal-order P1 velocity and pressure with Brezzi-Pitkaranta pressure
//! stabilization. The Stokes problem is solved directly; optional Picard
//! (Oseen) iterations add the convective term. Lengths are in mm, velocities
//! in mm/s and the kinematic viscosity in mm^2/s, so the solved kinematic
//! pressure is in mm^2/s^2 and is reported in Pa through the density.
//!
//! Boundary conditions: parabolic inflow on `In`, no slip on `Top`, `Bottom`
//! and `Front`, and the natural (do-nothing) condition on `Out`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use usmnet_core::dataset::{GeometryRef, Snapshot};

use crate::linalg::{bandwidth, rcm, BandMatrix};
use crate::mesh::{BoundaryTag, Locator, TriMesh};
use crate::uc::p1_gradients;
use crate::{FomError, Result};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FlowProblem {
    /// Kinematic viscosity, mm^2/s.
    pub viscosity: f64,
    /// Density, kg/m^3.
    pub density: f64,
    /// Peak inflow speed, mm/s.
    pub peak_velocity: f64,
    /// 0 solves Stokes; otherwise the maximum number of Picard iterations.
    pub picard_iterations: usize,
    /// Relative update at which Picard iterations stop.
    pub picard_tol: f64,
    /// Pressure stabilization constant.
    pub stabilization: f64,
}

impl Default for FlowProblem {
    fn default() -> Self {
        Self {
            viscosity: 4.72,
            density: 1060.0,
            peak_velocity: 140.0,
            picard_iterations: 0,
            picard_tol: 1e-6,
            stabilization: 0.02,
        }
    }
}

impl FlowProblem {
    pub fn validate(&self) -> Result<()> {
        if self.viscosity > 0.0 && self.density > 0.0 && self.peak_velocity > 0.0 && self.stabilization > 0.0 && self.picard_tol > 0.0 {
            Ok(())
        } else {
            Err(FomError::InvalidCase(format!("flow parameters must be positive: {self:?}")))
        }
    }

    /// Pa per unit kinematic pressure (mm^2/s^2).
    pub fn pressure_scale(&self) -> f64 {
        self.density * 1e-6
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct FlowSolution {
    pub velocity: Vec<[f64; 2]>,
    /// Nodal pressure, Pa.
    pub pressure: Vec<f64>,
    /// Relative residual of the final linear solve.
    pub residual: f64,
    pub picard_iterations: usize,
    /// False when Picard iterations diverged and the Stokes solution was kept.
    pub picard_converged: bool,
}

/// Relative linear-system residual required of every solve.
pub const LINEAR_TOL: f64 = 1e-10;

struct Layout {
    /// Position of each node in the band ordering.
    pos: Vec<usize>,
    half_band: usize,
}

impl Layout {
    fn new(mesh: &TriMesh) -> Self {
        let adj = mesh.adjacency();
        let perm = rcm(&adj);
        let bw = bandwidth(&adj, &perm);
        let mut pos = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            pos[old] = new;
        }
        Self { pos, half_band: 3 * bw + 2 }
    }

    fn dof(&self, node: usize, comp: usize) -> usize {
        3 * self.pos[node] + comp
    }
}

fn inflow_profile(mesh: &TriMesh, tags: &[Vec<BoundaryTag>], peak: f64) -> Result<impl Fn([f64; 2]) -> f64> {
    let inlet: Vec<[f64; 2]> = mesh.nodes.iter().zip(tags).filter(|(_, t)| t.contains(&BoundaryTag::In)).map(|(p, _)| *p).collect();
    if inlet.len() < 2 {
        return Err(FomError::InvalidCase("mesh has no inlet".into()));
    }
    let x0 = inlet[0][0];
    if inlet.iter().any(|p| (p[0] - x0).abs() > 1e-9 * (1.0 + x0.abs())) {
        return Err(FomError::InvalidCase("inlet must be a vertical segment".into()));
    }
    let lo = inlet.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let hi = inlet.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let (c, hw) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    Ok(move |p: [f64; 2]| {
        let s = (p[1] - c) / hw;
        (peak * (1.0 - s * s)).max(0.0)
    })
}

/// Velocity Dirichlet data per node; `None` where the velocity is free.
fn velocity_data(mesh: &TriMesh, problem: &FlowProblem) -> Result<Vec<Option<[f64; 2]>>> {
    let tags = mesh.node_tags();
    let profile = inflow_profile(mesh, &tags, problem.peak_velocity)?;
    Ok(mesh
        .nodes
        .iter()
        .zip(&tags)
        .map(|(p, t)| {
            if t.iter().any(|t| matches!(t, BoundaryTag::Top | BoundaryTag::Bottom | BoundaryTag::Front)) {
                Some([0.0, 0.0])
            } else if t.contains(&BoundaryTag::In) {
                Some([profile(*p), 0.0])
            } else {
                None
            }
        })
        .collect())
}

fn assemble(mesh: &TriMesh, problem: &FlowProblem, layout: &Layout, data: &[Option<[f64; 2]>], wind: Option<&[[f64; 2]]>) -> (BandMatrix, Vec<f64>) {
    let n = 3 * mesh.n_nodes();
    let hb = layout.half_band;
    let mut a = BandMatrix::zeros(n, hb, hb);
    let mut b = vec![0.0; n];
    let nu = problem.viscosity;
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let (g, area) = p1_gradients(mesh.vertices(e));
        let h = mesh.diameter(e);
        let tau = problem.stabilization * h * h / nu;
        for i in 0..3 {
            let (ui, vi, pi) = (layout.dof(tri[i], 0), layout.dof(tri[i], 1), layout.dof(tri[i], 2));
            for j in 0..3 {
                let (uj, vj, pj) = (layout.dof(tri[j], 0), layout.dof(tri[j], 1), layout.dof(tri[j], 2));
                let mut k = nu * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                if let Some(w) = wind {
                    // exact integral of (w . grad phi_j) phi_i for linear w
                    for (m, &node) in tri.iter().enumerate() {
                        let c = if m == i { 2.0 } else { 1.0 } * area / 12.0;
                        k += c * (w[node][0] * g[j][0] + w[node][1] * g[j][1]);
                    }
                }
                a.add(ui, uj, k);
                a.add(vi, vj, k);
                a.add(ui, pj, -g[i][0] * area / 3.0);
                a.add(vi, pj, -g[i][1] * area / 3.0);
                a.add(pi, uj, -g[j][0] * area / 3.0);
                a.add(pi, vj, -g[j][1] * area / 3.0);
                a.add(pi, pj, -tau * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
            }
        }
    }
    for (node, d) in data.iter().enumerate() {
        if let Some(v) = d {
            for comp in 0..2 {
                let r = layout.dof(node, comp);
                a.clear_row(r);
                a.add(r, r, 1.0);
                b[r] = v[comp];
            }
        }
    }
    (a, b)
}

fn solve_linear(a: BandMatrix, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let reference = a.clone();
    let lu = a.factorize()?;
    let mut x = b.to_vec();
    lu.solve(&mut x);
    let mut rel = f64::INFINITY;
    // iterative refinement guards against pivot growth
    for _ in 0..3 {
        let mut r: Vec<f64> = reference.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        rel = norm(&r) / bnorm;
        if rel < LINEAR_TOL {
            break;
        }
        lu.solve(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
    }
    if !(rel < LINEAR_TOL) {
        let r: Vec<f64> = reference.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        rel = norm(&r) / bnorm;
    }
    if !(rel < LINEAR_TOL) {
        return Err(FomError::NoConvergence(format!("linear residual {rel:e} above {LINEAR_TOL:e}")));
    }
    Ok((x, rel))
}

/// Splits the solution; Dirichlet values are copied from the data so they
/// hold exactly rather than up to the solver residual.
fn unpack(x: &[f64], layout: &Layout, data: &[Option<[f64; 2]>]) -> (Vec<[f64; 2]>, Vec<f64>) {
    let n = data.len();
    let vel = (0..n).map(|i| data[i].unwrap_or([x[layout.dof(i, 0)], x[layout.dof(i, 1)]])).collect();
    let p = (0..n).map(|i| x[layout.dof(i, 2)]).collect();
    (vel, p)
}

pub fn solve_flow(mesh: &TriMesh, problem: &FlowProblem) -> Result<FlowSolution> {
    problem.validate()?;
    let layout = Layout::new(mesh);
    let data = velocity_data(mesh, problem)?;
    let (a, b) = assemble(mesh, problem, &layout, &data, None);
    let (x, mut residual) = solve_linear(a, &b)?;
    let (stokes_v, stokes_p) = unpack(&x, &layout, &data);
    let (mut vel, mut p) = (stokes_v.clone(), stokes_p.clone());
    let mut iterations = 0;
    let mut converged = true;
    if problem.picard_iterations > 0 {
        converged = false;
        let scale = |v: &[[f64; 2]]| v.iter().map(|u| u[0].hypot(u[1])).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for it in 1..=problem.picard_iterations {
            let (a, b) = assemble(mesh, problem, &layout, &data, Some(&vel));
            let Ok((x, res)) = solve_linear(a, &b) else { break };
            let (nv, np) = unpack(&x, &layout, &data);
            let change = nv.iter().zip(&vel).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).fold(0.0, f64::max) / scale(&nv);
            if !change.is_finite() || change > 1e3 {
                break;
            }
            vel = nv;
            p = np;
            residual = res;
            iterations = it;
            if change < problem.picard_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("Picard iterations did not converge; keeping the Stokes solution");
            vel = stokes_v;
            p = stokes_p;
        }
    }
    let ps = problem.pressure_scale();
    Ok(FlowSolution {
        velocity: vel,
        pressure: p.iter().map(|v| v * ps).collect(),
        residual,
        picard_iterations: iterations,
        picard_converged: converged,
    })
}

/// Outward volume flux (mm^2/s) through the edges carrying `tag`.
pub fn boundary_flux(mesh: &TriMesh, velocity: &[[f64; 2]], tag: BoundaryTag) -> f64 {
    let mut opposite: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            opposite.insert((a.min(b), a.max(b)), tri[(k + 2) % 3]);
        }
    }
    mesh.edges_with(tag)
        .map(|e| {
            let [a, b] = e.nodes;
            let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
            let mut nrm = [pb[1] - pa[1], pa[0] - pb[0]];
            let c = mesh.nodes[opposite[&(a.min(b), a.max(b))]];
            if nrm[0] * (c[0] - pa[0]) + nrm[1] * (c[1] - pa[1]) > 0.0 {
                nrm = [-nrm[0], -nrm[1]];
            }
            // nrm has the edge length as magnitude
            let (ua, ub) = (velocity[a], velocity[b]);
            0.5 * ((ua[0] + ub[0]) * nrm[0] + (ua[1] + ub[1]) * nrm[1])
        })
        .sum()
}

/// Velocity and pressure (Pa) at uniformly random points of the meshed
/// domain, drawn by rejection against point location.
pub fn sample_flow_snapshot(
    mesh: &TriMesh,
    locator: &Locator,
    solution: &FlowSolution,
    n_points: usize,
    seed: u64,
    id: &str,
) -> Result<Snapshot> {
    if n_points == 0 {
        return Err(FomError::InvalidCase("snapshot needs at least one point".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &mesh.nodes {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(2 * n_points);
    let mut values = Vec::with_capacity(3 * n_points);
    let vx: Vec<f64> = solution.velocity.iter().map(|v| v[0]).collect();
    let vy: Vec<f64> = solution.velocity.iter().map(|v| v[1]).collect();
    let mut attempts = 0usize;
    while points.len() < 2 * n_points {
        attempts += 1;
        if attempts > 1000 * n_points + 10_000 {
            return Err(FomError::InvalidCase("rejection sampling found too few interior points".into()));
        }
        let p = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
        let Some((t, l)) = locator.locate(mesh, p) else { continue };
        points.extend(p);
        values.extend([mesh.interpolate(&vx, t, l), mesh.interpolate(&vy, t, l), mesh.interpolate(&solution.pressure, t, l)]);
    }
    Ok(Snapshot::new(id, Vec::new(), GeometryRef::Bifurcation { id: id.to_string() }, 2, 3, points, values)?)
}
