//! Steady lid-driven cavity flow on `(0, 1) x (0, H)`.
//!
//! Streamfunction-vorticity finite differences on a uniform grid: the Poisson
//! equation `-lap(psi) = omega` and steady vorticity transport with hybrid
//! (central / first-order upwind) convection, Thom wall vorticity, solved by
//! Newton's method with an adaptive continuation ramp on the lid speed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use usmnet_core::dataset::{GeometryRef, Snapshot};
use usmnet_core::eval::Raster;
use usmnet_core::training::BcSamples;
use usmnet_core::network::CoordinateMode;

use crate::linalg::BandMatrix;
use crate::{FomError, Result};

pub const HEIGHT_RANGE: [f64; 2] = [0.5, 2.0];
pub const DEFAULT_H: f64 = 1.0 / 64.0;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct CavityCase {
    pub height: f64,
    pub re: f64,
    /// Target grid spacing; the grid has `round(1/h) x round(H/h)` cells.
    pub h: f64,
}

impl CavityCase {
    pub fn new(height: f64, re: f64, h: f64) -> Result<Self> {
        let c = Self { height, re, h };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(HEIGHT_RANGE[0] - 1e-12..=HEIGHT_RANGE[1] + 1e-12).contains(&self.height) {
            return Err(FomError::InvalidCase(format!("height {} outside [0.5, 2]", self.height)));
        }
        if !(self.re > 0.0) || !self.re.is_finite() {
            return Err(FomError::InvalidCase(format!("Reynolds number {} must be positive", self.re)));
        }
        if !(self.h > 0.0 && self.h <= 0.25) {
            return Err(FomError::InvalidCase(format!("grid spacing {} must lie in (0, 0.25]", self.h)));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        let nx = (1.0 / self.h).round().max(4.0) as usize;
        let ny = (self.height / self.h).round().max(4.0) as usize;
        (nx, ny)
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Max-norm of the nonlinear residual at convergence.
    pub tol: f64,
    pub max_newton: usize,
    /// Smallest continuation step, as a fraction of the full lid speed.
    pub min_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_newton: 30,
            min_step: 1e-3,
        }
    }
}

/// Converged nodal fields, row-major with `x` fastest: `(i, j) -> j (nx+1) + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityField {
    pub height: f64,
    pub re: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub psi: Vec<f64>,
    pub omega: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub residual: f64,
    pub newton_iterations: usize,
    pub continuation_steps: usize,
}

struct Grid {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    /// Interior nodes along the fast index.
    m: usize,
    x_fast: bool,
}

impl Grid {
    fn n_nodes(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    fn interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i < self.nx && j < self.ny
    }

    fn node(&self, i: usize, j: usize) -> usize {
        if self.x_fast {
            (j - 1) * self.m + (i - 1)
        } else {
            (i - 1) * self.m + (j - 1)
        }
    }

    fn band(&self) -> usize {
        2 * self.m + 1
    }
}

/// Residual of the discrete equations, and optionally the Newton Jacobian.
fn assemble(g: &Grid, re: f64, lid: f64, z: &[f64], mut jac: Option<&mut BandMatrix>) -> Vec<f64> {
    let (hx, hy) = (g.hx, g.hy);
    let (ihx2, ihy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let psi = |i: usize, j: usize| if g.interior(i, j) { z[2 * g.node(i, j)] } else { 0.0 };
    // Thom's formula on walls; corners are never referenced by the 5-point stencil
    let omega = |i: usize, j: usize| -> f64 {
        if g.interior(i, j) {
            z[2 * g.node(i, j) + 1]
        } else if j == 0 {
            -2.0 * psi(i, 1) * ihy2
        } else if j == g.ny {
            -2.0 * psi(i, g.ny - 1) * ihy2 - 2.0 * lid / hy
        } else if i == 0 {
            -2.0 * psi(1, j) * ihx2
        } else {
            -2.0 * psi(g.nx - 1, j) * ihx2
        }
    };
    let wall_slope = |i: usize, j: usize| if j == 0 || j == g.ny { -2.0 * ihy2 } else if i == 0 || i == g.nx { -2.0 * ihx2 } else { 0.0 };
    let mut r = vec![0.0; 2 * g.n_nodes()];
    let nu = 1.0 / re;
    // below Re = 1 the vorticity row is rescaled so its entries stay O(1/h^2)
    let sw = re.min(1.0);
    for j in 1..g.ny {
        for i in 1..g.nx {
            let p = g.node(i, j);
            let (rp, rw) = (2 * p, 2 * p + 1);
            let nbrs = [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)];
            let (e, w, n, s) = (nbrs[0], nbrs[1], nbrs[2], nbrs[3]);
            let (pp, pe, pw, pn, ps) = (psi(i, j), psi(e.0, e.1), psi(w.0, w.1), psi(n.0, n.1), psi(s.0, s.1));
            let (op, oe, ow, on, os) = (omega(i, j), omega(e.0, e.1), omega(w.0, w.1), omega(n.0, n.1), omega(s.0, s.1));

            r[rp] = (2.0 * pp - pe - pw) * ihx2 + (2.0 * pp - pn - ps) * ihy2 - op;

            let u = (pn - ps) / (2.0 * hy);
            let v = -(pe - pw) / (2.0 * hx);
            let (dx, ddx) = hybrid(u, hx, re, nu);
            let (dy, ddy) = hybrid(v, hy, re, nu);
            let lap_x = (oe - 2.0 * op + ow) * ihx2;
            let lap_y = (on - 2.0 * op + os) * ihy2;
            r[rw] = sw * (u * (oe - ow) / (2.0 * hx) + v * (on - os) / (2.0 * hy) - dx * lap_x - dy * lap_y);

            let Some(jm) = jac.as_deref_mut() else { continue };
            jm.add(rp, rp, 2.0 * ihx2 + 2.0 * ihy2);
            jm.add(rp, rw, -1.0);
            for (q, c) in [(e, ihx2), (w, ihx2), (n, ihy2), (s, ihy2)] {
                if g.interior(q.0, q.1) {
                    jm.add(rp, 2 * g.node(q.0, q.1), -c);
                }
            }
            let ce = u / (2.0 * hx) - dx * ihx2;
            let cw = -u / (2.0 * hx) - dx * ihx2;
            let cn = v / (2.0 * hy) - dy * ihy2;
            let cs = -v / (2.0 * hy) - dy * ihy2;
            jm.add(rw, rw, sw * (2.0 * dx * ihx2 + 2.0 * dy * ihy2));
            for (q, c) in [(e, ce), (w, cw), (n, cn), (s, cs)] {
                if g.interior(q.0, q.1) {
                    jm.add(rw, 2 * g.node(q.0, q.1) + 1, sw * c);
                } else {
                    // wall vorticity depends on psi at this node
                    jm.add(rw, rp, sw * c * wall_slope(q.0, q.1));
                }
            }
            let dr_du = (oe - ow) / (2.0 * hx) - ddx * lap_x;
            let dr_dv = (on - os) / (2.0 * hy) - ddy * lap_y;
            for (q, c) in [(n, dr_du / (2.0 * hy)), (s, -dr_du / (2.0 * hy)), (e, -dr_dv / (2.0 * hx)), (w, dr_dv / (2.0 * hx))] {
                if g.interior(q.0, q.1) {
                    jm.add(rw, 2 * g.node(q.0, q.1), sw * c);
                }
            }
        }
    }
    r
}

/// Diffusion coefficient with hybrid upwinding and its derivative in `u`.
fn hybrid(u: f64, h: f64, re: f64, nu: f64) -> (f64, f64) {
    let excess = u.abs() - 2.0 / (re * h);
    if excess > 0.0 {
        (nu + 0.5 * h * excess, 0.5 * h * u.signum())
    } else {
        (nu, 0.0)
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Newton iterations at fixed lid speed. Returns the iteration count, or
/// `None` on divergence.
fn newton(g: &Grid, re: f64, lid: f64, z: &mut Vec<f64>, opts: &SolverOptions) -> Result<Option<(usize, f64)>> {
    let n = z.len();
    let band = g.band();
    let mut r = assemble(g, re, lid, z, None);
    let r0 = max_norm(&r);
    for it in 0..opts.max_newton {
        let res = max_norm(&r);
        if !res.is_finite() || res > 1e8 * r0.max(1.0) {
            return Ok(None);
        }
        if res < opts.tol {
            return Ok(Some((it, res)));
        }
        let mut jac = BandMatrix::zeros(n, band, band);
        assemble(g, re, lid, z, Some(&mut jac));
        let lu = match jac.factorize() {
            Ok(lu) => lu,
            Err(_) => return Ok(None),
        };
        let mut dz: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve(&mut dz);
        for (a, b) in z.iter_mut().zip(&dz) {
            *a += b;
        }
        r = assemble(g, re, lid, z, None);
    }
    let res = max_norm(&r);
    Ok((res < opts.tol).then_some((opts.max_newton, res)))
}

pub fn solve_cavity(case: &CavityCase) -> Result<CavityField> {
    solve_cavity_with(case, &SolverOptions::default())
}

pub fn solve_cavity_with(case: &CavityCase, opts: &SolverOptions) -> Result<CavityField> {
    case.validate()?;
    let (nx, ny) = case.grid();
    let (hx, hy) = (1.0 / nx as f64, case.height / ny as f64);
    let x_fast = nx <= ny;
    let m = if x_fast { nx - 1 } else { ny - 1 };
    let g = Grid { nx, ny, hx, hy, m, x_fast };
    let mut z = vec![0.0; 2 * g.n_nodes()];
    let (mut reached, mut step) = (0.0f64, 1.0f64);
    let (mut total_iters, mut steps, mut last_res) = (0, 0, f64::NAN);
    while reached < 1.0 {
        let target = (reached + step).min(1.0);
        // the flow scales linearly with the lid speed at leading order
        let mut trial: Vec<f64> = if reached > 0.0 { z.iter().map(|v| v * target / reached).collect() } else { z.clone() };
        match newton(&g, case.re, target, &mut trial, opts)? {
            Some((iters, res)) => {
                z = trial;
                reached = target;
                total_iters += iters;
                steps += 1;
                last_res = res;
                step *= 2.0;
            }
            None => {
                step *= 0.5;
                log::debug!("cavity H={} Re={}: continuation step halved to {step}", case.height, case.re);
                if step < opts.min_step {
                    return Err(FomError::ContinuationUnderflow { reached, step, residual: last_res });
                }
            }
        }
    }
    Ok(fields(&g, case, z, last_res, total_iters, steps))
}

fn fields(g: &Grid, case: &CavityCase, z: Vec<f64>, residual: f64, iters: usize, steps: usize) -> CavityField {
    let (nx, ny) = (g.nx, g.ny);
    let stride = nx + 1;
    let mut psi = vec![0.0; stride * (ny + 1)];
    let mut omega = vec![0.0; stride * (ny + 1)];
    for j in 1..ny {
        for i in 1..nx {
            let p = g.node(i, j);
            psi[j * stride + i] = z[2 * p];
            omega[j * stride + i] = z[2 * p + 1];
        }
    }
    let (ihx2, ihy2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    for i in 1..nx {
        omega[i] = -2.0 * psi[stride + i] * ihy2;
        omega[ny * stride + i] = -2.0 * psi[(ny - 1) * stride + i] * ihy2 - 2.0 / g.hy;
    }
    for j in 1..ny {
        omega[j * stride] = -2.0 * psi[j * stride + 1] * ihx2;
        omega[j * stride + nx] = -2.0 * psi[j * stride + nx - 1] * ihx2;
    }
    let mut vx = vec![0.0; psi.len()];
    let mut vy = vec![0.0; psi.len()];
    for j in 1..ny {
        for i in 1..nx {
            let k = j * stride + i;
            vx[k] = (psi[k + stride] - psi[k - stride]) / (2.0 * g.hy);
            vy[k] = -(psi[k + 1] - psi[k - 1]) / (2.0 * g.hx);
        }
    }
    // lid datum on every top node, corners included
    for i in 0..=nx {
        vx[ny * stride + i] = 1.0;
    }
    CavityField {
        height: case.height,
        re: case.re,
        nx,
        ny,
        hx: g.hx,
        hy: g.hy,
        psi,
        omega,
        vx,
        vy,
        residual,
        newton_iterations: iters,
        continuation_steps: steps,
    }
}

impl CavityField {
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [i as f64 * self.hx, j as f64 * self.hy]
    }

    fn bilinear(&self, f: &[f64], x: f64, y: f64) -> Option<f64> {
        let tol = 1e-12;
        if !(x >= -tol && x <= 1.0 + tol && y >= -tol && y <= self.height + tol) {
            return None;
        }
        let (sx, sy) = (x / self.hx, y / self.hy);
        let i = (sx.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (sy.floor().max(0.0) as usize).min(self.ny - 1);
        let (tx, ty) = ((sx - i as f64).clamp(0.0, 1.0), (sy - j as f64).clamp(0.0, 1.0));
        let k = self.index(i, j);
        let s = self.nx + 1;
        Some(
            (1.0 - tx) * (1.0 - ty) * f[k]
                + tx * (1.0 - ty) * f[k + 1]
                + (1.0 - tx) * ty * f[k + s]
                + tx * ty * f[k + s + 1],
        )
    }

    /// Bilinearly interpolated velocity, `None` outside the cavity.
    pub fn velocity_at(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        Some([self.bilinear(&self.vx, x, y)?, self.bilinear(&self.vy, x, y)?])
    }

    pub fn psi_at(&self, x: f64, y: f64) -> Option<f64> {
        self.bilinear(&self.psi, x, y)
    }

    /// Minimum of the streamfunction (primary vortex), refined by a local
    /// quadratic fit around the minimal node. Returns `(value, [x, y])`.
    pub fn psi_min(&self) -> (f64, [f64; 2]) {
        let mut best = (f64::INFINITY, 1, 1);
        for j in 1..self.ny {
            for i in 1..self.nx {
                let v = self.psi[self.index(i, j)];
                if v < best.0 {
                    best = (v, i, j);
                }
            }
        }
        let (v0, i, j) = best;
        let p = |di: isize, dj: isize| self.psi[self.index((i as isize + di) as usize, (j as isize + dj) as usize)];
        let (hx, hy) = (self.hx, self.hy);
        let gx = (p(1, 0) - p(-1, 0)) / (2.0 * hx);
        let gy = (p(0, 1) - p(0, -1)) / (2.0 * hy);
        let hxx = (p(1, 0) - 2.0 * v0 + p(-1, 0)) / (hx * hx);
        let hyy = (p(0, 1) - 2.0 * v0 + p(0, -1)) / (hy * hy);
        let hxy = (p(1, 1) - p(1, -1) - p(-1, 1) + p(-1, -1)) / (4.0 * hx * hy);
        let det = hxx * hyy - hxy * hxy;
        let at = self.node(i, j);
        if !(hxx > 0.0 && det > 0.0) {
            return (v0, at);
        }
        let dx = -(hyy * gx - hxy * gy) / det;
        let dy = -(hxx * gy - hxy * gx) / det;
        if dx.abs() > hx || dy.abs() > hy {
            return (v0, at);
        }
        let value = v0 + 0.5 * (gx * dx + gy * dy);
        (value, [at[0] + dx, at[1] + dy])
    }

    /// Volume flux across the grid segment between two nodes.
    pub fn edge_flux(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        self.psi[self.index(b.0, b.1)] - self.psi[self.index(a.0, a.1)]
    }

    /// Central-difference divergence of the nodal velocity at an interior node
    /// at least two cells from the walls.
    pub fn divergence(&self, i: usize, j: usize) -> f64 {
        let s = self.nx + 1;
        let k = self.index(i, j);
        (self.vx[k + 1] - self.vx[k - 1]) / (2.0 * self.hx) + (self.vy[k + s] - self.vy[k - s]) / (2.0 * self.hy)
    }

    /// Raster of `psi`, `vx`, `vy` with `H` and `Re` as metadata.
    pub fn to_raster(&self) -> Raster {
        let mut meta = BTreeMap::new();
        meta.insert("H".to_string(), self.height);
        meta.insert("Re".to_string(), self.re);
        Raster {
            nx: self.nx + 1,
            ny: self.ny + 1,
            x_range: [0.0, 1.0],
            y_range: [0.0, self.height],
            meta,
            fields: vec![
                ("psi".into(), self.psi.clone()),
                ("vx".into(), self.vx.clone()),
                ("vy".into(), self.vy.clone()),
            ],
        }
    }
}

/// Velocity at uniformly random interior points.
pub fn sample_snapshot(field: &CavityField, n_points: usize, seed: u64, id: &str) -> Result<Snapshot> {
    if n_points == 0 {
        return Err(FomError::InvalidCase("snapshot needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(2 * n_points);
    let mut values = Vec::with_capacity(2 * n_points);
    while points.len() < 2 * n_points {
        let x: f64 = rng.gen();
        let y: f64 = rng.gen::<f64>() * field.height;
        if x <= 0.0 || y <= 0.0 {
            continue;
        }
        let v = field.velocity_at(x, y).expect("sampled point inside cavity");
        points.extend([x, y]);
        values.extend(v);
    }
    Ok(Snapshot::new(
        id,
        vec![field.re],
        GeometryRef::Cavity { height: field.height },
        2,
        2,
        points,
        values,
    )?)
}

/// The cavity height is the single landmark.
pub fn cavity_landmark(height: f64) -> Vec<f64> {
    vec![height]
}

/// Map to the unit square: `(x, y / H)`.
pub fn cavity_uc_map(p: [f64; 2], height: f64) -> Result<[f64; 2]> {
    let tol = 1e-12;
    if !(p[0] >= -tol && p[0] <= 1.0 + tol && p[1] >= -tol && p[1] <= height + tol) {
        let dx = (-p[0]).max(p[0] - 1.0).max(0.0);
        let dy = (-p[1]).max(p[1] - height).max(0.0);
        return Err(FomError::Outside { x: p[0], y: p[1], distance: dx.hypot(dy) });
    }
    Ok([p[0], p[1] / height])
}

/// Monte Carlo parameter draws: uniform height, log-uniform Reynolds number.
pub fn sample_cases(n: usize, height_range: [f64; 2], re_range: [f64; 2], seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l0, l1) = (re_range[0].ln(), re_range[1].ln());
    (0..n)
        .map(|_| {
            let h = height_range[0] + (height_range[1] - height_range[0]) * rng.gen::<f64>();
            let re = (l0 + (l1 - l0) * rng.gen::<f64>()).exp();
            (h, re)
        })
        .collect()
}

/// Latin hypercube over `(log Re, H)`: `n_pairs` parameter pairs, each with
/// `n_points` boundary points spread uniformly along the perimeter. Rows use
/// the network layout `[x or x_hat, Re, H]`; the datum is `(1, 0)` on the lid
/// and zero on the other walls.
pub fn bc_samples(
    n_pairs: usize,
    n_points: usize,
    height_range: [f64; 2],
    re_range: [f64; 2],
    coordinates: CoordinateMode,
    seed: u64,
) -> Result<BcSamples> {
    if n_pairs == 0 || n_points == 0 {
        return Err(FomError::InvalidCase("BC sampling needs pairs and points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata = |n: usize| {
        let mut v: Vec<f64> = (0..n).map(|k| (k as f64 + rng.gen::<f64>()) / n as f64).collect();
        rand::seq::SliceRandom::shuffle(v.as_mut_slice(), &mut rng);
        v
    };
    let (a, b) = (strata(n_pairs), strata(n_pairs));
    let (l0, l1) = (re_range[0].ln(), re_range[1].ln());
    let mut inputs = Vec::with_capacity(n_pairs * n_points * 4);
    let mut datum = Vec::with_capacity(n_pairs * n_points * 2);
    for k in 0..n_pairs {
        let re = (l0 + (l1 - l0) * a[k]).exp();
        let h = height_range[0] + (height_range[1] - height_range[0]) * b[k];
        let perimeter = 2.0 + 2.0 * h;
        for _ in 0..n_points {
            let s = rng.gen::<f64>() * perimeter;
            let (p, lid) = if s < 1.0 {
                ([s, 0.0], false)
            } else if s < 1.0 + h {
                ([1.0, s - 1.0], false)
            } else if s < 2.0 + h {
                ([2.0 + h - s, h], true)
            } else {
                ([0.0, perimeter - s], false)
            };
            let x = match coordinates {
                CoordinateMode::Physical => p,
                CoordinateMode::Universal => cavity_uc_map(p, h)?,
            };
            inputs.extend([x[0], x[1], re, h]);
            datum.extend(if lid { [1.0, 0.0] } else { [0.0, 0.0] });
        }
    }
    Ok(BcSamples { inputs, datum })
}
