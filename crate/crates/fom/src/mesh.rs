//! Patch-structured triangulations of channels and bifurcations, point
//! location and the binary mesh file.
//!
//! Bifurcation meshes consist of three transfinite patches (trunk, upper and
//! lower branch) built column by column along x. Neighbouring patches share
//! their interface nodes by construction. Each quad is split along its shorter
//! diagonal and the result is made Delaunay by edge flips, which keeps the
//! P1 Laplacian an M-matrix.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::BifurcationGeometry;
use crate::{FomError, Result};

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    In,
    Out,
    Top,
    Bottom,
    Front,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 5] = [Self::In, Self::Out, Self::Top, Self::Bottom, Self::Front];

    fn code(self) -> u64 {
        self as u64
    }

    fn from_code(c: u64) -> Result<Self> {
        Self::ALL.get(c as usize).copied().ok_or_else(|| FomError::Format(format!("unknown boundary tag code {c}")))
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryEdge>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl TriMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        signed_area(a, b, c)
    }

    /// Longest edge of a triangle.
    pub fn diameter(&self, t: usize) -> f64 {
        let v = self.vertices(t);
        (0..3).map(|k| dist(v[k], v[(k + 1) % 3])).fold(0.0, f64::max)
    }

    /// Tags touching each node (a node at a corner carries two).
    pub fn node_tags(&self) -> Vec<Vec<BoundaryTag>> {
        let mut tags = vec![Vec::new(); self.nodes.len()];
        for e in &self.boundary {
            for &n in &e.nodes {
                if !tags[n].contains(&e.tag) {
                    tags[n].push(e.tag);
                }
            }
        }
        for t in &mut tags {
            t.sort();
        }
        tags
    }

    pub fn edges_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary.iter().filter(move |e| e.tag == tag)
    }

    /// Node adjacency through triangle edges.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Checks orientation, conformity and boundary tagging. Errors name the
    /// first offending element.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.nodes.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(FomError::Mesh { message: "non-finite node coordinate".into(), element: None });
        }
        let mut scale = 0.0f64;
        for p in &self.nodes {
            scale = scale.max(p[0].abs()).max(p[1].abs());
        }
        let min_area = 1e-12 * scale.max(1.0).powi(2);
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) || tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(FomError::Mesh { message: "invalid vertex index".into(), element: Some(t) });
            }
            let a = self.area(t);
            if !(a > min_area) {
                return Err(FomError::Mesh { message: format!("inverted or degenerate triangle (area {a:e})"), element: Some(t) });
            }
            for k in 0..3 {
                *count.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        if let Some((e, c)) = count.iter().find(|(_, &c)| c > 2) {
            return Err(FomError::Mesh { message: format!("edge {e:?} shared by {c} triangles"), element: None });
        }
        let mut tagged: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.boundary {
            *tagged.entry(edge_key(e.nodes[0], e.nodes[1])).or_default() += 1;
        }
        for (e, c) in &tagged {
            if *c != 1 {
                return Err(FomError::Mesh { message: format!("boundary edge {e:?} carries {c} tags"), element: None });
            }
            if count.get(e) != Some(&1) {
                return Err(FomError::Mesh { message: format!("tagged edge {e:?} is not on the boundary"), element: None });
            }
        }
        if let Some((e, _)) = count.iter().find(|(e, &c)| c == 1 && !tagged.contains_key(e)) {
            return Err(FomError::Mesh { message: format!("boundary edge {e:?} has no tag"), element: None });
        }
        Ok(())
    }

    /// Flips interior edges until every pair of neighbours is locally Delaunay.
    pub fn make_delaunay(&mut self) -> usize {
        let mut flips = 0;
        let boundary: std::collections::HashSet<(usize, usize)> = self.boundary.iter().map(|e| edge_key(e.nodes[0], e.nodes[1])).collect();
        for _sweep in 0..100 {
            let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
            for (t, tri) in self.triangles.iter().enumerate() {
                for k in 0..3 {
                    owners.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default().push(t);
                }
            }
            let mut keys: Vec<_> = owners.keys().copied().filter(|e| !boundary.contains(e)).collect();
            keys.sort_unstable();
            let mut touched = vec![false; self.triangles.len()];
            let mut changed = false;
            for e in keys {
                let ts = &owners[&e];
                if ts.len() != 2 || touched[ts[0]] || touched[ts[1]] {
                    continue;
                }
                let (t1, t2) = (ts[0], ts[1]);
                let opp = |t: &[usize; 3]| *t.iter().find(|&&v| v != e.0 && v != e.1).unwrap();
                let (r, s) = (opp(&self.triangles[t1]), opp(&self.triangles[t2]));
                // orient (p, q, r) counter-clockwise
                let (p, q) = {
                    let tri = self.triangles[t1];
                    let k = tri.iter().position(|&v| v == r).unwrap();
                    (tri[(k + 1) % 3], tri[(k + 2) % 3])
                };
                let [pp, qq, rr, ss] = [self.nodes[p], self.nodes[q], self.nodes[r], self.nodes[s]];
                if opposite_angle_sum(pp, qq, rr, ss) <= std::f64::consts::PI * (1.0 + 1e-10) {
                    continue;
                }
                if signed_area(rr, pp, ss) <= 0.0 || signed_area(ss, qq, rr) <= 0.0 {
                    continue;
                }
                self.triangles[t1] = [r, p, s];
                self.triangles[t2] = [s, q, r];
                touched[t1] = true;
                touched[t2] = true;
                changed = true;
                flips += 1;
            }
            if !changed {
                break;
            }
        }
        flips
    }

    /// Interpolation of a nodal field at barycentric coordinates.
    pub fn interpolate(&self, field: &[f64], t: usize, bary: [f64; 3]) -> f64 {
        let tri = self.triangles[t];
        (0..3).map(|k| bary[k] * field[tri[k]]).sum()
    }

    /// Distance from a point to the nearest boundary edge.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        self.boundary
            .iter()
            .map(|e| segment_distance(p, self.nodes[e.nodes[0]], self.nodes[e.nodes[1]]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn angle_at(v: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (u, w) = ([a[0] - v[0], a[1] - v[1]], [b[0] - v[0], b[1] - v[1]]);
    (u[0] * w[1] - u[1] * w[0]).abs().atan2(u[0] * w[0] + u[1] * w[1])
}

/// Sum of the angles at `r` and `s` opposite the shared edge `pq`.
fn opposite_angle_sum(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> f64 {
    angle_at(r, p, q) + angle_at(s, p, q)
}

pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Nodes of a structured block of columns, with optional reuse of existing
/// node ids per column (for patch interfaces).
struct Builder {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
}

impl Builder {
    fn node(&mut self, p: [f64; 2]) -> usize {
        self.nodes.push(p);
        self.nodes.len() - 1
    }

    /// Splits the quads between consecutive columns (bottom to top ids).
    fn fill(&mut self, left: &[usize], right: &[usize]) {
        for j in 0..left.len() - 1 {
            let (a, b, c, d) = (left[j], right[j], right[j + 1], left[j + 1]);
            let (pa, pb, pc, pd) = (self.nodes[a], self.nodes[b], self.nodes[c], self.nodes[d]);
            if dist(pa, pc) <= dist(pb, pd) {
                self.triangles.push([a, b, c]);
                self.triangles.push([a, c, d]);
            } else {
                self.triangles.push([a, b, d]);
                self.triangles.push([b, c, d]);
            }
        }
    }

    fn tag(&mut self, a: usize, b: usize, tag: BoundaryTag) {
        self.boundary.push(BoundaryEdge { nodes: [a, b], tag });
    }

    fn tag_column(&mut self, col: &[usize], tag: BoundaryTag) {
        for w in col.windows(2) {
            self.tag(w[0], w[1], tag);
        }
    }

    fn finish(self) -> Result<TriMesh> {
        let mut m = TriMesh { nodes: self.nodes, triangles: self.triangles, boundary: self.boundary };
        m.validate()?;
        m.make_delaunay();
        m.validate()?;
        Ok(m)
    }
}

fn divisions(length: f64, h: f64) -> usize {
    ((length / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// `a + (b - a) t` with both endpoints reproduced exactly.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 1.0 {
        b
    } else {
        a + (b - a) * t
    }
}

fn stations(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lerp(a, b, k as f64 / n as f64)).collect()
}

/// Structured mesh of `[0, length] x [-width/2, width/2]` with inlet on the
/// left and outlet on the right.
pub fn channel_mesh(length: f64, width: f64, h: f64) -> Result<TriMesh> {
    if !(length > 0.0 && width > 0.0 && h > 0.0) {
        return Err(FomError::InvalidCase(format!("channel {length} x {width} with h = {h}")));
    }
    let (nx, ny) = (divisions(length, h), divisions(width, h));
    let mut b = Builder { nodes: Vec::new(), triangles: Vec::new(), boundary: Vec::new() };
    let ys = stations(-0.5 * width, 0.5 * width, ny);
    let cols: Vec<Vec<usize>> = stations(0.0, length, nx).iter().map(|&x| ys.iter().map(|&y| b.node([x, y])).collect()).collect();
    for w in cols.windows(2) {
        b.fill(&w[0], &w[1]);
        b.tag(w[0][0], w[1][0], BoundaryTag::Bottom);
        b.tag(w[0][ny], w[1][ny], BoundaryTag::Top);
    }
    b.tag_column(&cols[0], BoundaryTag::In);
    b.tag_column(&cols[nx], BoundaryTag::Out);
    b.finish()
}

/// Meshes a bifurcation with target element size `h` (mm).
pub fn mesh_geometry(g: &BifurcationGeometry, h: f64) -> Result<TriMesh> {
    if !(h > 0.0 && h < g.x_end) {
        return Err(FomError::InvalidCase(format!("target element size {h}")));
    }
    let (xb, xc, xe) = (g.split_x, g.carina_x, g.x_end);
    let trunk_x = stations(0.0, xb, divisions(xb, h));
    let mut branch_x = stations(xb, xc, divisions(xc - xb, h));
    let n_split = branch_x.len() - 1;
    branch_x.pop();
    branch_x.extend(stations(xc, xe, divisions(xe - xc, h)));

    let upper_lo = |x: f64| if x <= xc { g.carina_y } else { g.front_upper.eval(x) };
    let lower_hi = |x: f64| if x <= xc { g.carina_y } else { g.front_lower.eval(x) };
    let max_width = |f: &dyn Fn(f64) -> f64| branch_x.iter().map(|&x| f(x)).fold(0.0, f64::max);
    let n_u = divisions(max_width(&|x| g.top.eval(x) - upper_lo(x)), h).max(2);
    let n_l = divisions(max_width(&|x| lower_hi(x) - g.bottom.eval(x)), h).max(2);
    let n_y = n_u + n_l;

    let mut b = Builder { nodes: Vec::new(), triangles: Vec::new(), boundary: Vec::new() };
    let (top_b, bot_b) = (g.top.eval(xb), g.bottom.eval(xb));
    let split = (g.carina_y - bot_b) / (top_b - bot_b);
    let eta_split = |j: usize| {
        if j <= n_l {
            split * j as f64 / n_l as f64
        } else {
            split + (1.0 - split) * (j - n_l) as f64 / n_u as f64
        }
    };

    // trunk: node distribution blends from uniform at the inlet to the
    // branch split at the interface
    let mut trunk_cols = Vec::with_capacity(trunk_x.len());
    for &x in &trunk_x {
        let xi = x / xb;
        let (t, bo) = (g.top.eval(x), g.bottom.eval(x));
        let col: Vec<usize> = (0..=n_y)
            .map(|j| {
                let eta = if j == n_y { 1.0 } else { (1.0 - xi) * j as f64 / n_y as f64 + xi * eta_split(j) };
                b.node([x, lerp(bo, t, eta)])
            })
            .collect();
        trunk_cols.push(col);
    }
    for w in trunk_cols.windows(2) {
        b.fill(&w[0], &w[1]);
        b.tag(w[0][0], w[1][0], BoundaryTag::Bottom);
        b.tag(w[0][n_y], w[1][n_y], BoundaryTag::Top);
    }
    b.tag_column(&trunk_cols[0], BoundaryTag::In);

    let interface = trunk_cols.last().unwrap().clone();
    let mut lower_prev: Vec<usize> = interface[..=n_l].to_vec();
    let mut upper_prev: Vec<usize> = interface[n_l..].to_vec();
    for (i, &x) in branch_x.iter().enumerate().skip(1) {
        let (t, bo) = (g.top.eval(x), g.bottom.eval(x));
        let (ul, lh) = (upper_lo(x), lower_hi(x));
        let lower: Vec<usize> = (0..=n_l).map(|j| b.node([x, lerp(bo, lh, j as f64 / n_l as f64)])).collect();
        let mut upper: Vec<usize> = Vec::with_capacity(n_u + 1);
        // up to the carina the two patches share the split-line node
        upper.push(if i <= n_split { lower[n_l] } else { b.node([x, ul]) });
        upper.extend((1..=n_u).map(|j| b.node([x, lerp(ul, t, j as f64 / n_u as f64)])));

        b.fill(&lower_prev, &lower);
        b.fill(&upper_prev, &upper);
        b.tag(lower_prev[0], lower[0], BoundaryTag::Bottom);
        b.tag(upper_prev[n_u], upper[n_u], BoundaryTag::Top);
        if i > n_split {
            b.tag(lower_prev[n_l], lower[n_l], BoundaryTag::Front);
            b.tag(upper_prev[0], upper[0], BoundaryTag::Front);
        }
        lower_prev = lower;
        upper_prev = upper;
    }
    b.tag_column(&lower_prev, BoundaryTag::Out);
    b.tag_column(&upper_prev, BoundaryTag::Out);
    b.finish()
}

/// Uniform bin grid over triangle bounding boxes.
#[derive(Clone, Debug)]
pub struct Locator {
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    start: Vec<usize>,
    items: Vec<usize>,
}

/// Barycentric tolerance for points on edges.
pub const LOCATE_TOL: f64 = 1e-12;

impl Locator {
    pub fn new(mesh: &TriMesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &mesh.nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let n_bins = (mesh.triangles.len() as f64 / 2.0).sqrt().ceil().max(1.0);
        let span = [(hi[0] - lo[0]).max(1e-300), (hi[1] - lo[1]).max(1e-300)];
        let aspect = (span[0] / span[1]).sqrt();
        let dims = [((n_bins * aspect).ceil() as usize).max(1), ((n_bins / aspect).ceil() as usize).max(1)];
        let cell = [span[0] / dims[0] as f64, span[1] / dims[1] as f64];
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1]];
        let bin = |v: f64, k: usize| (((v - lo[k]) / cell[k]).floor().max(0.0) as usize).min(dims[k] - 1);
        for t in 0..mesh.triangles.len() {
            let v = mesh.vertices(t);
            let (x0, x1) = (v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max));
            let (y0, y1) = (v.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min), v.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max));
            for by in bin(y0, 1)..=bin(y1, 1) {
                for bx in bin(x0, 0)..=bin(x1, 0) {
                    buckets[by * dims[0] + bx].push(t);
                }
            }
        }
        let mut start = Vec::with_capacity(buckets.len() + 1);
        let mut items = Vec::new();
        for bk in buckets {
            start.push(items.len());
            items.extend(bk);
        }
        start.push(items.len());
        Self { origin: lo, cell, dims, start, items }
    }

    /// Containing triangle and barycentric coordinates.
    pub fn locate(&self, mesh: &TriMesh, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for k in 0..2 {
            let f = (p[k] - self.origin[k]) / self.cell[k];
            if !(f >= -1e-9 && f <= self.dims[k] as f64 + 1e-9) {
                return None;
            }
        }
        let bx = (((p[0] - self.origin[0]) / self.cell[0]).floor().max(0.0) as usize).min(self.dims[0] - 1);
        let by = (((p[1] - self.origin[1]) / self.cell[1]).floor().max(0.0) as usize).min(self.dims[1] - 1);
        let b = by * self.dims[0] + bx;
        for &t in &self.items[self.start[b]..self.start[b + 1]] {
            let [a, bb, c] = mesh.vertices(t);
            let area = signed_area(a, bb, c);
            let l = [signed_area(p, bb, c) / area, signed_area(a, p, c) / area, signed_area(a, bb, p) / area];
            let worst = l.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            if worst >= 0.0 {
                return Some((t, l));
            }
            if worst >= -LOCATE_TOL && best.map_or(true, |bst| worst > bst.2) {
                best = Some((t, l, worst));
            }
        }
        best.map(|(t, l, _)| (t, l))
    }
}

#[derive(Serialize, Deserialize)]
struct MeshHeader {
    format: String,
    version: u32,
    n_nodes: usize,
    n_triangles: usize,
    n_boundary_edges: usize,
    fields: Vec<String>,
}

const MESH_FORMAT: &str = "usmnet-mesh";

/// Writes a JSON header line, then little-endian arrays: node coordinates
/// (f64), triangles (u64 triples), boundary edges (u64 node, node, tag) and
/// one f64 array per nodal field.
pub fn write_mesh<W: Write>(w: &mut W, mesh: &TriMesh, fields: &[(&str, &[f64])]) -> Result<()> {
    for (name, f) in fields {
        if f.len() != mesh.n_nodes() {
            return Err(FomError::Format(format!("field {name} has {} values for {} nodes", f.len(), mesh.n_nodes())));
        }
    }
    let header = MeshHeader {
        format: MESH_FORMAT.into(),
        version: 1,
        n_nodes: mesh.n_nodes(),
        n_triangles: mesh.triangles.len(),
        n_boundary_edges: mesh.boundary.len(),
        fields: fields.iter().map(|f| f.0.to_string()).collect(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for p in &mesh.nodes {
        w.write_all(&p[0].to_le_bytes())?;
        w.write_all(&p[1].to_le_bytes())?;
    }
    for t in &mesh.triangles {
        for &v in t {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
    }
    for e in &mesh.boundary {
        for v in [e.nodes[0] as u64, e.nodes[1] as u64, e.tag.code()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for (_, f) in fields {
        for v in *f {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub type NamedFields = Vec<(String, Vec<f64>)>;

pub fn read_mesh<R: BufRead>(r: &mut R) -> Result<(TriMesh, NamedFields)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: MeshHeader = serde_json::from_str(line.trim_end()).map_err(|e| FomError::Format(format!("mesh header: {e}")))?;
    if h.format != MESH_FORMAT || h.version != 1 {
        return Err(FomError::Format(format!("unsupported mesh file {} v{}", h.format, h.version)));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word).map_err(|e| FomError::Format(format!("truncated mesh file: {e}")))?;
        Ok(word)
    };
    let mut nodes = Vec::with_capacity(h.n_nodes);
    for _ in 0..h.n_nodes {
        nodes.push([f64::from_le_bytes(next(r)?), f64::from_le_bytes(next(r)?)]);
    }
    let mut index = |r: &mut R, n: usize| -> Result<usize> {
        let v = u64::from_le_bytes(next(r)?) as usize;
        if v >= n {
            return Err(FomError::Format(format!("node index {v} out of range")));
        }
        Ok(v)
    };
    let nn = h.n_nodes;
    let mut triangles = Vec::with_capacity(h.n_triangles);
    for _ in 0..h.n_triangles {
        triangles.push([index(r, nn)?, index(r, nn)?, index(r, nn)?]);
    }
    let mut boundary = Vec::with_capacity(h.n_boundary_edges);
    for _ in 0..h.n_boundary_edges {
        let nodes = [index(r, nn)?, index(r, nn)?];
        let tag = BoundaryTag::from_code(index(r, usize::MAX)? as u64)?;
        boundary.push(BoundaryEdge { nodes, tag });
    }
    let mut fields = Vec::with_capacity(h.fields.len());
    for name in h.fields {
        let mut f = Vec::with_capacity(nn);
        for _ in 0..nn {
            r.read_exact(&mut word).map_err(|e| FomError::Format(format!("truncated field {name}: {e}")))?;
            f.push(f64::from_le_bytes(word));
        }
        fields.push((name, f));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(FomError::Format(format!("{} trailing bytes after mesh data", rest.len())));
    }
    let mesh = TriMesh { nodes, triangles, boundary };
    mesh.validate()?;
    Ok((mesh, fields))
}
