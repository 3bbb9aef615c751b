//! Universal coordinates for bifurcations from two Laplace fields.
//!
//! `psi_lr` runs from 0 on the inlet to 1 on the outlets and the front
//! (carina) wall, with a linear ramp in x on the top and bottom walls.
//! `psi_td` equals `+(alpha + (1 - alpha) ramp)` on the top wall,
//! `-(alpha + (1 - alpha) ramp)` on the bottom wall and has zero normal
//! derivative elsewhere. The map of a point is `(psi_lr, psi_td)` there.

use serde::{Deserialize, Serialize};

use crate::linalg::{pcg, Csr};
use crate::mesh::{BoundaryTag, Locator, TriMesh};
use crate::{FomError, Result};

/// Offset keeping `psi_td` away from zero on the walls.
pub const ALPHA: f64 = 0.1;
/// Relative residual of the conjugate-gradient solves.
pub const CG_TOL: f64 = 1e-10;

/// Gradients of the three barycentric functions and the area.
pub fn p1_gradients(v: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = v;
    let two_area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let g = [
        [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
        [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
        [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
    ];
    (g, 0.5 * two_area)
}

/// P1 stiffness matrix of the Laplacian as triplets.
pub fn stiffness_triplets(mesh: &TriMesh) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(9 * mesh.triangles.len());
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let (g, area) = p1_gradients(mesh.vertices(e));
        for i in 0..3 {
            for j in 0..3 {
                t.push((tri[i], tri[j], area * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
            }
        }
    }
    t
}

/// Solves `-lap u = 0` with Dirichlet values where given and homogeneous
/// Neumann conditions on the rest of the boundary.
pub fn solve_laplace(mesh: &TriMesh, dirichlet: &[Option<f64>]) -> Result<Vec<f64>> {
    let n = mesh.n_nodes();
    if dirichlet.len() != n {
        return Err(FomError::InvalidCase(format!("{} Dirichlet entries for {n} nodes", dirichlet.len())));
    }
    if dirichlet.iter().all(Option::is_none) {
        return Err(FomError::Singular("Laplace problem without Dirichlet nodes".into()));
    }
    let mut free = vec![usize::MAX; n];
    let mut n_free = 0;
    for (i, d) in dirichlet.iter().enumerate() {
        if d.is_none() {
            free[i] = n_free;
            n_free += 1;
        }
    }
    let mut u: Vec<f64> = dirichlet.iter().map(|d| d.unwrap_or(0.0)).collect();
    if n_free == 0 {
        return Ok(u);
    }
    let mut rhs = vec![0.0; n_free];
    let mut reduced = Vec::new();
    for (i, j, v) in stiffness_triplets(mesh) {
        if free[i] == usize::MAX {
            continue;
        }
        match dirichlet[j] {
            Some(g) => rhs[free[i]] -= v * g,
            None => reduced.push((free[i], free[j], v)),
        }
    }
    let a = Csr::from_triplets(n_free, reduced);
    let mut x = vec![0.0; n_free];
    let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    pcg(&a, &rhs, &mut x, CG_TOL * bnorm.max(f64::MIN_POSITIVE), 20 * n_free + 100)?;
    for (i, &f) in free.iter().enumerate() {
        if f != usize::MAX {
            u[i] = x[f];
        }
    }
    Ok(u)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct UcFields {
    pub psi_lr: Vec<f64>,
    pub psi_td: Vec<f64>,
    pub alpha: f64,
    /// `[x_min, x_max]` over the top and bottom wall nodes.
    pub x_range: [f64; 2],
}

/// Boundary data of both fields at the tagged nodes.
pub fn uc_boundary_values(mesh: &TriMesh, alpha: f64) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>, [f64; 2])> {
    let tags = mesh.node_tags();
    let walls = |t: &Vec<BoundaryTag>| t.contains(&BoundaryTag::Top) || t.contains(&BoundaryTag::Bottom);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (p, t) in mesh.nodes.iter().zip(&tags) {
        if walls(t) {
            lo = lo.min(p[0]);
            hi = hi.max(p[0]);
        }
    }
    if !(hi > lo) {
        return Err(FomError::Singular("mesh has no top/bottom wall extent".into()));
    }
    let ramp = |x: f64| (x - lo) / (hi - lo);
    let mut lr = vec![None; mesh.n_nodes()];
    let mut td = vec![None; mesh.n_nodes()];
    for (i, (p, t)) in mesh.nodes.iter().zip(&tags).enumerate() {
        // inlet first, then outlet/front, then the wall ramp; the data agree
        // at shared corners except for rounding
        lr[i] = if t.contains(&BoundaryTag::In) {
            Some(0.0)
        } else if t.contains(&BoundaryTag::Out) || t.contains(&BoundaryTag::Front) {
            Some(1.0)
        } else if walls(t) {
            Some(ramp(p[0]))
        } else {
            None
        };
        td[i] = if t.contains(&BoundaryTag::Top) {
            Some(alpha + (1.0 - alpha) * ramp(p[0]))
        } else if t.contains(&BoundaryTag::Bottom) {
            Some(-alpha - (1.0 - alpha) * ramp(p[0]))
        } else {
            None
        };
    }
    Ok((lr, td, [lo, hi]))
}

pub fn solve_uc_fields(mesh: &TriMesh) -> Result<UcFields> {
    let (lr, td, x_range) = uc_boundary_values(mesh, ALPHA)?;
    Ok(UcFields {
        psi_lr: solve_laplace(mesh, &lr)?,
        psi_td: solve_laplace(mesh, &td)?,
        alpha: ALPHA,
        x_range,
    })
}

/// A meshed domain with its coordinate fields, ready for point queries.
#[derive(Clone, Debug)]
pub struct UcDomain {
    pub mesh: TriMesh,
    pub fields: UcFields,
    locator: Locator,
}

impl UcDomain {
    pub fn new(mesh: TriMesh, fields: UcFields) -> Result<Self> {
        if fields.psi_lr.len() != mesh.n_nodes() || fields.psi_td.len() != mesh.n_nodes() {
            return Err(FomError::InvalidCase("coordinate fields do not match the mesh".into()));
        }
        let locator = Locator::new(&mesh);
        Ok(Self { mesh, fields, locator })
    }

    pub fn solve(mesh: TriMesh) -> Result<Self> {
        let fields = solve_uc_fields(&mesh)?;
        Self::new(mesh, fields)
    }

    pub fn locator(&self) -> &Locator {
        &self.locator
    }

    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, [f64; 3])> {
        self.locator.locate(&self.mesh, p).ok_or_else(|| FomError::Outside {
            x: p[0],
            y: p[1],
            distance: self.mesh.boundary_distance(p),
        })
    }

    /// `(psi_lr, psi_td)` at a point by barycentric interpolation.
    pub fn uc_map(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let (t, l) = self.locate(p)?;
        Ok([self.mesh.interpolate(&self.fields.psi_lr, t, l), self.mesh.interpolate(&self.fields.psi_td, t, l)])
    }
}

/// Degree-4 symmetric quadrature on the reference triangle: barycentric
/// points and weights summing to one.
const QUAD4: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.445948490915965;
    const B1: f64 = 1.0 - 2.0 * A1;
    const W1: f64 = 0.223381589678011;
    const A2: f64 = 0.091576213509771;
    const B2: f64 = 1.0 - 2.0 * A2;
    const W2: f64 = 0.109951743655322;
    [([A1, A1, B1], W1), ([A1, B1, A1], W1), ([B1, A1, A1], W1), ([A2, A2, B2], W2), ([A2, B2, A2], W2), ([B2, A2, A2], W2)]
};

/// `L2` norm of `u_h - exact` over the mesh.
pub fn l2_error(mesh: &TriMesh, field: &[f64], exact: impl Fn([f64; 2]) -> f64) -> f64 {
    let mut s = 0.0;
    for t in 0..mesh.triangles.len() {
        let v = mesh.vertices(t);
        let area = mesh.area(t);
        for (l, w) in QUAD4 {
            let p = [l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0], l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1]];
            let e = mesh.interpolate(field, t, l) - exact(p);
            s += w * area * e * e;
        }
    }
    s.sqrt()
}

/// `L2` norm of a function over the mesh.
pub fn l2_norm(mesh: &TriMesh, f: impl Fn([f64; 2]) -> f64) -> f64 {
    let zero = vec![0.0; mesh.n_nodes()];
    l2_error(mesh, &zero, f)
}
