//! Vector-valued tape for automatic differentiation.
//!
//! A [`Tape`] is a topologically ordered list of vector nodes over a flat
//! parameter vector. Evaluation and reverse sweeps run in a caller-owned
//! [`Workspace`], so a single tape can be shared between threads.
//!
//! Spatial derivatives are obtained by *recording* forward tangents: the tape
//! returned by [`Tape::with_tangents`] contains the primal computation plus one
//! tangent copy per selected input slot, expressed in the same primitive set.
//! Parameter gradients of anything built from those tangents (a curl head, for
//! instance) then come out of an ordinary reverse sweep.

use crate::error::{check_len, Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// The whole input vector. Always node 0.
    Input,
    Const(Vec<f64>),
    Select {
        src: NodeId,
        indices: Vec<usize>,
    },
    Concat(Vec<NodeId>),
    /// `W x (+ b)` with `W` stored row-major at `params[weights..]`.
    Affine {
        src: NodeId,
        weights: usize,
        bias: Option<usize>,
        rows: usize,
        cols: usize,
    },
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId, f64),
    Square(NodeId),
    /// `sqrt(x + floor)`.
    SqrtFloor {
        src: NodeId,
        floor: f64,
    },
    Reciprocal(NodeId),
    Sum(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    len: usize,
    offset: usize,
}

#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    n_inputs: usize,
    n_params: usize,
    outputs: Vec<NodeId>,
    n_outputs: usize,
    buffer_len: usize,
}

/// Incremental constructor for a [`Tape`]. Node 0 is the input vector.
#[derive(Clone, Debug)]
pub struct TapeBuilder {
    nodes: Vec<Node>,
    n_inputs: usize,
    n_params: usize,
    buffer_len: usize,
}

impl TapeBuilder {
    pub fn new(n_inputs: usize, n_params: usize) -> Self {
        let mut b = Self {
            nodes: Vec::new(),
            n_inputs,
            n_params,
            buffer_len: 0,
        };
        b.push(Op::Input, n_inputs);
        b
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn len_of(&self, id: NodeId) -> Result<usize> {
        self.nodes
            .get(id)
            .map(|n| n.len)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown tape node {id}")))
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        self.nodes.push(Node {
            op,
            len,
            offset: self.buffer_len,
        });
        self.buffer_len += len;
        self.nodes.len() - 1
    }

    fn same_len(&self, a: NodeId, b: NodeId) -> Result<usize> {
        let (la, lb) = (self.len_of(a)?, self.len_of(b)?);
        check_len("elementwise operands", la, lb)?;
        Ok(la)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        let len = values.len();
        self.push(Op::Const(values), len)
    }

    pub fn select(&mut self, src: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let len = self.len_of(src)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::InvalidSpec(format!(
                "select index {bad} out of range for node of length {len}"
            )));
        }
        let n = indices.len();
        Ok(self.push(Op::Select { src, indices }, n))
    }

    pub fn concat(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let mut len = 0;
        for &p in &parts {
            len += self.len_of(p)?;
        }
        Ok(self.push(Op::Concat(parts), len))
    }

    pub fn affine(
        &mut self,
        src: NodeId,
        weights: usize,
        bias: Option<usize>,
        rows: usize,
    ) -> Result<NodeId> {
        let cols = self.len_of(src)?;
        let mut end = weights + rows * cols;
        if let Some(b) = bias {
            end = end.max(b + rows);
        }
        if end > self.n_params {
            return Err(Error::InvalidSpec(format!(
                "affine node reads parameters up to {end}, only {} available",
                self.n_params
            )));
        }
        Ok(self.push(
            Op::Affine {
                src,
                weights,
                bias,
                rows,
                cols,
            },
            rows,
        ))
    }

    pub fn tanh(&mut self, src: NodeId) -> Result<NodeId> {
        let len = self.len_of(src)?;
        Ok(self.push(Op::Tanh(src), len))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let len = self.same_len(a, b)?;
        Ok(self.push(Op::Add(a, b), len))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let len = self.same_len(a, b)?;
        Ok(self.push(Op::Mul(a, b), len))
    }

    pub fn scale(&mut self, src: NodeId, factor: f64) -> Result<NodeId> {
        let len = self.len_of(src)?;
        Ok(self.push(Op::Scale(src, factor), len))
    }

    pub fn shift(&mut self, src: NodeId, offset: f64) -> Result<NodeId> {
        let len = self.len_of(src)?;
        Ok(self.push(Op::Shift(src, offset), len))
    }

    pub fn square(&mut self, src: NodeId) -> Result<NodeId> {
        let len = self.len_of(src)?;
        Ok(self.push(Op::Square(src), len))
    }

    pub fn sqrt_floor(&mut self, src: NodeId, floor: f64) -> Result<NodeId> {
        let len = self.len_of(src)?;
        Ok(self.push(Op::SqrtFloor { src, floor }, len))
    }

    pub fn reciprocal(&mut self, src: NodeId) -> Result<NodeId> {
        let len = self.len_of(src)?;
        Ok(self.push(Op::Reciprocal(src), len))
    }

    pub fn sum(&mut self, src: NodeId) -> Result<NodeId> {
        self.len_of(src)?;
        Ok(self.push(Op::Sum(src), 1))
    }

    pub fn finish(self, outputs: Vec<NodeId>) -> Result<Tape> {
        let mut n_outputs = 0;
        for &o in &outputs {
            n_outputs += self.len_of(o)?;
        }
        Ok(Tape {
            nodes: self.nodes,
            n_inputs: self.n_inputs,
            n_params: self.n_params,
            outputs,
            n_outputs,
            buffer_len: self.buffer_len,
        })
    }
}

/// Per-call evaluation and adjoint buffers.
#[derive(Clone, Debug)]
pub struct Workspace {
    values: Vec<f64>,
    adjoints: Vec<f64>,
}

/// Primal outputs together with their derivatives with respect to a subset of
/// the inputs. `tangents[c][i]` is `d out_i / d in_{spatial[c]}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBatch {
    pub primal: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
}

impl DualBatch {
    pub fn jacobian(&self, output: usize, column: usize) -> f64 {
        self.tangents[column][output]
    }
}

impl Tape {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            values: vec![0.0; self.buffer_len],
            adjoints: vec![0.0; self.buffer_len],
        }
    }

    fn check_workspace(&self, ws: &Workspace) -> Result<()> {
        check_len("workspace", self.buffer_len, ws.values.len())
    }

    /// Runs the primal sweep, filling `ws`.
    pub fn eval(&self, params: &[f64], inputs: &[f64], ws: &mut Workspace) -> Result<()> {
        check_len("tape inputs", self.n_inputs, inputs.len())?;
        check_len("tape parameters", self.n_params, params.len())?;
        self.check_workspace(ws)?;
        for node in &self.nodes {
            let (before, rest) = ws.values.split_at_mut(node.offset);
            let out = &mut rest[..node.len];
            let val = |id: NodeId| {
                let n = &self.nodes[id];
                &before[n.offset..n.offset + n.len]
            };
            match &node.op {
                Op::Input => out.copy_from_slice(inputs),
                Op::Const(v) => out.copy_from_slice(v),
                Op::Select { src, indices } => {
                    let s = val(*src);
                    for (o, &i) in out.iter_mut().zip(indices) {
                        *o = s[i];
                    }
                }
                Op::Concat(parts) => {
                    let mut k = 0;
                    for &p in parts {
                        let s = val(p);
                        out[k..k + s.len()].copy_from_slice(s);
                        k += s.len();
                    }
                }
                Op::Affine {
                    src,
                    weights,
                    bias,
                    rows,
                    cols,
                } => {
                    let x = val(*src);
                    let w = &params[*weights..*weights + rows * cols];
                    for (r, o) in out.iter_mut().enumerate() {
                        let row = &w[r * cols..(r + 1) * cols];
                        let mut acc = bias.map_or(0.0, |b| params[b + r]);
                        for (a, b) in row.iter().zip(x) {
                            acc += a * b;
                        }
                        *o = acc;
                    }
                }
                Op::Tanh(a) => {
                    for (o, x) in out.iter_mut().zip(val(*a)) {
                        *o = x.tanh();
                    }
                }
                Op::Add(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(val(*a)).zip(val(*b)) {
                        *o = x + y;
                    }
                }
                Op::Mul(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(val(*a)).zip(val(*b)) {
                        *o = x * y;
                    }
                }
                Op::Scale(a, c) => {
                    for (o, x) in out.iter_mut().zip(val(*a)) {
                        *o = c * x;
                    }
                }
                Op::Shift(a, c) => {
                    for (o, x) in out.iter_mut().zip(val(*a)) {
                        *o = x + c;
                    }
                }
                Op::Square(a) => {
                    for (o, x) in out.iter_mut().zip(val(*a)) {
                        *o = x * x;
                    }
                }
                Op::SqrtFloor { src, floor } => {
                    for (o, x) in out.iter_mut().zip(val(*src)) {
                        *o = (x + floor).sqrt();
                    }
                }
                Op::Reciprocal(a) => {
                    for (o, x) in out.iter_mut().zip(val(*a)) {
                        *o = 1.0 / x;
                    }
                }
                Op::Sum(a) => out[0] = val(*a).iter().sum(),
            }
        }
        Ok(())
    }

    /// Copies the outputs of the last [`Tape::eval`] into `out`.
    pub fn read_outputs(&self, ws: &Workspace, out: &mut [f64]) {
        let mut k = 0;
        for &o in &self.outputs {
            let n = &self.nodes[o];
            out[k..k + n.len].copy_from_slice(&ws.values[n.offset..n.offset + n.len]);
            k += n.len;
        }
    }

    /// Reverse sweep for the inputs of the last [`Tape::eval`]. The gradient of
    /// `seed · outputs` with respect to the parameters is *added* to `grad`.
    /// Input adjoints are afterwards available through [`Tape::input_adjoint`].
    pub fn backward(
        &self,
        params: &[f64],
        ws: &mut Workspace,
        seed: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        check_len("output seed", self.n_outputs, seed.len())?;
        check_len("gradient buffer", self.n_params, grad.len())?;
        check_len("tape parameters", self.n_params, params.len())?;
        self.check_workspace(ws)?;
        ws.adjoints.fill(0.0);
        let mut k = 0;
        for &o in &self.outputs {
            let n = &self.nodes[o];
            for i in 0..n.len {
                ws.adjoints[n.offset + i] += seed[k + i];
            }
            k += n.len;
        }
        let values = &ws.values;
        for node in self.nodes.iter().rev() {
            let (adj_before, rest) = ws.adjoints.split_at_mut(node.offset);
            let adj_out = &rest[..node.len];
            let y = &values[node.offset..node.offset + node.len];
            let val = |id: NodeId| {
                let n = &self.nodes[id];
                &values[n.offset..n.offset + n.len]
            };
            let range = |id: NodeId| {
                let n = &self.nodes[id];
                n.offset..n.offset + n.len
            };
            match &node.op {
                Op::Input | Op::Const(_) => {}
                Op::Select { src, indices } => {
                    let r = range(*src);
                    for (g, &i) in adj_out.iter().zip(indices) {
                        adj_before[r.start + i] += g;
                    }
                }
                Op::Concat(parts) => {
                    let mut k = 0;
                    for &p in parts {
                        let r = range(p);
                        let len = r.len();
                        for (a, g) in adj_before[r].iter_mut().zip(&adj_out[k..k + len]) {
                            *a += g;
                        }
                        k += len;
                    }
                }
                Op::Affine {
                    src,
                    weights,
                    bias,
                    rows,
                    cols,
                } => {
                    let x = val(*src);
                    let w = &params[*weights..*weights + rows * cols];
                    let r = range(*src);
                    let adj_x = &mut adj_before[r];
                    let gw = &mut grad[*weights..*weights + rows * cols];
                    for (row, &g) in adj_out.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let wrow = &w[row * cols..(row + 1) * cols];
                        let gwrow = &mut gw[row * cols..(row + 1) * cols];
                        for j in 0..*cols {
                            adj_x[j] += wrow[j] * g;
                            gwrow[j] += x[j] * g;
                        }
                    }
                    if let Some(b) = bias {
                        for (gb, g) in grad[*b..*b + rows].iter_mut().zip(adj_out) {
                            *gb += g;
                        }
                    }
                }
                Op::Tanh(a) => {
                    for ((ad, g), t) in adj_before[range(*a)].iter_mut().zip(adj_out).zip(y) {
                        *ad += g * (1.0 - t * t);
                    }
                }
                Op::Add(a, b) => {
                    for (ad, g) in adj_before[range(*a)].iter_mut().zip(adj_out) {
                        *ad += g;
                    }
                    for (ad, g) in adj_before[range(*b)].iter_mut().zip(adj_out) {
                        *ad += g;
                    }
                }
                Op::Mul(a, b) => {
                    let (ra, rb) = (range(*a), range(*b));
                    for i in 0..node.len {
                        let g = adj_out[i];
                        adj_before[ra.start + i] += g * values[rb.start + i];
                        adj_before[rb.start + i] += g * values[ra.start + i];
                    }
                }
                Op::Scale(a, c) => {
                    for (ad, g) in adj_before[range(*a)].iter_mut().zip(adj_out) {
                        *ad += c * g;
                    }
                }
                Op::Shift(a, _) => {
                    for (ad, g) in adj_before[range(*a)].iter_mut().zip(adj_out) {
                        *ad += g;
                    }
                }
                Op::Square(a) => {
                    let ra = range(*a);
                    for i in 0..node.len {
                        adj_before[ra.start + i] += 2.0 * values[ra.start + i] * adj_out[i];
                    }
                }
                Op::SqrtFloor { src, .. } => {
                    for ((ad, g), s) in adj_before[range(*src)].iter_mut().zip(adj_out).zip(y) {
                        *ad += g * 0.5 / s;
                    }
                }
                Op::Reciprocal(a) => {
                    for ((ad, g), r) in adj_before[range(*a)].iter_mut().zip(adj_out).zip(y) {
                        *ad -= g * r * r;
                    }
                }
                Op::Sum(a) => {
                    let g = adj_out[0];
                    for ad in adj_before[range(*a)].iter_mut() {
                        *ad += g;
                    }
                }
            }
        }
        Ok(())
    }

    /// Adjoints of the inputs after [`Tape::backward`].
    pub fn input_adjoint<'a>(&self, ws: &'a Workspace) -> &'a [f64] {
        &ws.adjoints[..self.n_inputs]
    }

    pub fn forward(&self, params: &[f64], inputs: &[f64]) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        self.eval(params, inputs, &mut ws)?;
        let mut out = vec![0.0; self.n_outputs];
        self.read_outputs(&ws, &mut out);
        Ok(out)
    }

    /// Gradient of `seed · outputs` with respect to the parameters.
    pub fn grad_params(&self, params: &[f64], inputs: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
        check_len("output seed", self.n_outputs, seed.len())?;
        let mut ws = self.workspace();
        self.eval(params, inputs, &mut ws)?;
        let mut grad = vec![0.0; self.n_params];
        self.backward(params, &mut ws, seed, &mut grad)?;
        Ok(grad)
    }

    /// Gradient of `seed · outputs` with respect to the inputs (reverse mode).
    pub fn grad_inputs(&self, params: &[f64], inputs: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
        check_len("output seed", self.n_outputs, seed.len())?;
        let mut ws = self.workspace();
        self.eval(params, inputs, &mut ws)?;
        let mut grad = vec![0.0; self.n_params];
        self.backward(params, &mut ws, seed, &mut grad)?;
        Ok(self.input_adjoint(&ws).to_vec())
    }

    /// Builds a tape whose outputs are the original outputs followed by one
    /// block of tangents per entry of `spatial` (derivatives with respect to
    /// `inputs[spatial[c]]`). Every tangent is itself recorded on the tape.
    pub fn with_tangents(&self, spatial: &[usize]) -> Result<Tape> {
        if let Some(&bad) = spatial.iter().find(|&&i| i >= self.n_inputs) {
            return Err(Error::InvalidInput(format!(
                "spatial index {bad} out of range for {} inputs",
                self.n_inputs
            )));
        }
        let ncols = spatial.len();
        let mut b = TapeBuilder::new(self.n_inputs, self.n_params);
        let mut primal: Vec<NodeId> = Vec::with_capacity(self.nodes.len());
        let mut tangent: Vec<Vec<Option<NodeId>>> = Vec::with_capacity(self.nodes.len());

        for node in &self.nodes {
            let mut t: Vec<Option<NodeId>> = vec![None; ncols];
            let p = match &node.op {
                Op::Input => {
                    for (c, &s) in spatial.iter().enumerate() {
                        let mut e = vec![0.0; self.n_inputs];
                        e[s] = 1.0;
                        t[c] = Some(b.constant(e));
                    }
                    b.input()
                }
                Op::Const(v) => b.constant(v.clone()),
                Op::Select { src, indices } => {
                    for c in 0..ncols {
                        if let Some(ts) = tangent[*src][c] {
                            t[c] = Some(b.select(ts, indices.clone())?);
                        }
                    }
                    b.select(primal[*src], indices.clone())?
                }
                Op::Concat(parts) => {
                    for c in 0..ncols {
                        if parts.iter().any(|&q| tangent[q][c].is_some()) {
                            let mut tp = Vec::with_capacity(parts.len());
                            for &q in parts {
                                tp.push(match tangent[q][c] {
                                    Some(id) => id,
                                    None => b.constant(vec![0.0; self.nodes[q].len]),
                                });
                            }
                            t[c] = Some(b.concat(tp)?);
                        }
                    }
                    b.concat(parts.iter().map(|&q| primal[q]).collect())?
                }
                Op::Affine {
                    src,
                    weights,
                    bias,
                    rows,
                    ..
                } => {
                    for c in 0..ncols {
                        if let Some(ts) = tangent[*src][c] {
                            t[c] = Some(b.affine(ts, *weights, None, *rows)?);
                        }
                    }
                    b.affine(primal[*src], *weights, *bias, *rows)?
                }
                Op::Tanh(a) => {
                    let y = b.tanh(primal[*a])?;
                    let active: Vec<usize> =
                        (0..ncols).filter(|&c| tangent[*a][c].is_some()).collect();
                    if !active.is_empty() {
                        let sq = b.square(y)?;
                        let neg = b.scale(sq, -1.0)?;
                        let dydx = b.shift(neg, 1.0)?;
                        for c in active {
                            t[c] = Some(b.mul(dydx, tangent[*a][c].unwrap())?);
                        }
                    }
                    y
                }
                Op::Add(x, y) => {
                    for c in 0..ncols {
                        t[c] = match (tangent[*x][c], tangent[*y][c]) {
                            (Some(tx), Some(ty)) => Some(b.add(tx, ty)?),
                            (Some(tx), None) => Some(tx),
                            (None, Some(ty)) => Some(ty),
                            (None, None) => None,
                        };
                    }
                    b.add(primal[*x], primal[*y])?
                }
                Op::Mul(x, y) => {
                    let (px, py) = (primal[*x], primal[*y]);
                    for c in 0..ncols {
                        let lhs = match tangent[*x][c] {
                            Some(tx) => Some(b.mul(tx, py)?),
                            None => None,
                        };
                        let rhs = match tangent[*y][c] {
                            Some(ty) => Some(b.mul(px, ty)?),
                            None => None,
                        };
                        t[c] = match (lhs, rhs) {
                            (Some(l), Some(r)) => Some(b.add(l, r)?),
                            (l, r) => l.or(r),
                        };
                    }
                    b.mul(px, py)?
                }
                Op::Scale(a, f) => {
                    for c in 0..ncols {
                        if let Some(ta) = tangent[*a][c] {
                            t[c] = Some(b.scale(ta, *f)?);
                        }
                    }
                    b.scale(primal[*a], *f)?
                }
                Op::Shift(a, f) => {
                    t = tangent[*a].clone();
                    b.shift(primal[*a], *f)?
                }
                Op::Square(a) => {
                    let pa = primal[*a];
                    for c in 0..ncols {
                        if let Some(ta) = tangent[*a][c] {
                            let m = b.mul(pa, ta)?;
                            t[c] = Some(b.scale(m, 2.0)?);
                        }
                    }
                    b.square(pa)?
                }
                Op::SqrtFloor { src, floor } => {
                    let y = b.sqrt_floor(primal[*src], *floor)?;
                    let active: Vec<usize> =
                        (0..ncols).filter(|&c| tangent[*src][c].is_some()).collect();
                    if !active.is_empty() {
                        let r = b.reciprocal(y)?;
                        let dydx = b.scale(r, 0.5)?;
                        for c in active {
                            t[c] = Some(b.mul(dydx, tangent[*src][c].unwrap())?);
                        }
                    }
                    y
                }
                Op::Reciprocal(a) => {
                    let y = b.reciprocal(primal[*a])?;
                    let active: Vec<usize> =
                        (0..ncols).filter(|&c| tangent[*a][c].is_some()).collect();
                    if !active.is_empty() {
                        let sq = b.square(y)?;
                        let dydx = b.scale(sq, -1.0)?;
                        for c in active {
                            t[c] = Some(b.mul(dydx, tangent[*a][c].unwrap())?);
                        }
                    }
                    y
                }
                Op::Sum(a) => {
                    for c in 0..ncols {
                        if let Some(ta) = tangent[*a][c] {
                            t[c] = Some(b.sum(ta)?);
                        }
                    }
                    b.sum(primal[*a])?
                }
            };
            primal.push(p);
            tangent.push(t);
        }

        let mut outputs: Vec<NodeId> = self.outputs.iter().map(|&o| primal[o]).collect();
        for c in 0..ncols {
            for &o in &self.outputs {
                let id = match tangent[o][c] {
                    Some(id) => id,
                    None => b.constant(vec![0.0; self.nodes[o].len]),
                };
                outputs.push(id);
            }
        }
        b.finish(outputs)
    }

    /// Exact Jacobian of the outputs with respect to `inputs[spatial[..]]`.
    pub fn spatial_jacobian(
        &self,
        params: &[f64],
        inputs: &[f64],
        spatial: &[usize],
    ) -> Result<DualBatch> {
        let aug = self.with_tangents(spatial)?;
        let flat = aug.forward(params, inputs)?;
        Ok(split_dual(&flat, self.n_outputs, spatial.len()))
    }
}

/// Splits the flat output of a tangent tape into a [`DualBatch`].
pub fn split_dual(flat: &[f64], n_outputs: usize, ncols: usize) -> DualBatch {
    DualBatch {
        primal: flat[..n_outputs].to_vec(),
        tangents: (0..ncols)
            .map(|c| flat[n_outputs * (c + 1)..n_outputs * (c + 2)].to_vec())
            .collect(),
    }
}

/// Builds a fully connected tanh network `widths[0] -> ... -> widths.last()`
/// starting at `params[offset]`, returning the final (linear) node and the
/// number of parameters used. Weights precede biases in each layer.
pub fn mlp(
    b: &mut TapeBuilder,
    src: NodeId,
    widths: &[usize],
    offset: usize,
) -> Result<(NodeId, usize)> {
    let mut cur = src;
    let mut off = offset;
    let n_layers = widths.len().saturating_sub(1);
    for l in 0..n_layers {
        let (cols, rows) = (widths[l], widths[l + 1]);
        check_len("mlp layer input", cols, b.len_of(cur)?)?;
        let w = off;
        let bias = off + rows * cols;
        off = bias + rows;
        cur = b.affine(cur, w, Some(bias), rows)?;
        if l + 1 < n_layers {
            cur = b.tanh(cur)?;
        }
    }
    Ok((cur, off - offset))
}
