//! USM-Net model assembly.
//!
//! Input rows are laid out as `[x (d), mu_p (n_p), mu_g (n_g)]`, where `x` is
//! either the physical point or its universal coordinates. Rows are transformed
//! (even reflection for symmetric heads, optional `log10`), mapped affinely to
//! `[-1, 1]`, passed through a tanh MLP and finally through an output head that
//! maps the core outputs back to physical units.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{mlp, Tape, TapeBuilder, Workspace};
use crate::error::{check_len, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"USMN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Inputs whose normalized value leaves `[-1 - tol, 1 + tol]` count as extrapolated.
const EXTRAPOLATION_TOL: f64 = 1e-9;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    Linear,
    Log10,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    Physical,
    Universal,
}

/// Named mask functions for strongly imposed Dirichlet data. Each vanishes on
/// its boundary portion and nowhere else inside the (reference) domain.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MaskId {
    /// `(H - y) / H` with `H = mu_g[0]`: zero on the cavity lid.
    CavityLidPhysical,
    /// `1 - y_hat`: zero on the lid of the unit reference square.
    CavityLidUniversal,
    /// `x (1 - x) y / H`: zero on the cavity's side and bottom walls.
    CavityNoSlipPhysical,
    /// `x_hat (1 - x_hat) y_hat`.
    CavityNoSlipUniversal,
}

impl MaskId {
    pub fn eval(self, spatial: &[f64], landmarks: &[f64]) -> f64 {
        let (x, y) = (spatial[0], spatial[1]);
        match self {
            MaskId::CavityLidPhysical => (landmarks[0] - y) / landmarks[0],
            MaskId::CavityLidUniversal => 1.0 - y,
            MaskId::CavityNoSlipPhysical => x * (1.0 - x) * (y / landmarks[0]),
            MaskId::CavityNoSlipUniversal => x * (1.0 - x) * y,
        }
    }

    fn needs_landmark(self) -> bool {
        matches!(
            self,
            MaskId::CavityLidPhysical | MaskId::CavityNoSlipPhysical
        )
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct SymmetryAxis {
    /// Input slot reflected about `center`.
    pub input: usize,
    pub center: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Plain de-normalized outputs.
    Velocity,
    /// Scalar potential; the velocity is its curl `(d psi/dy, -d psi/dx)`.
    Potential,
    /// `u = datum + mask(x) * core(x)`.
    DirichletMask { mask: MaskId, datum: Vec<f64> },
    /// `u = s * core(x)^2`.
    Nonnegative,
    /// Inputs listed in `axes` enter through `|x_i - c_i|`.
    Symmetric { axes: Vec<SymmetryAxis> },
}

/// Affine normalization ranges. Input bounds are stored *after* the input
/// transform (e.g. in decades for `log10` inputs).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct Normalization {
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
    pub output_lo: Vec<f64>,
    pub output_hi: Vec<f64>,
}

impl Normalization {
    /// Unit ranges: inputs and outputs pass through unchanged.
    pub fn identity(n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            input_lo: vec![-1.0; n_inputs],
            input_hi: vec![1.0; n_inputs],
            output_lo: vec![-1.0; n_outputs],
            output_hi: vec![1.0; n_outputs],
        }
    }

    pub fn normalize_output(&self, i: usize, u: f64) -> f64 {
        2.0 * (u - self.output_lo[i]) / (self.output_hi[i] - self.output_lo[i]) - 1.0
    }

    pub fn denormalize_output(&self, i: usize, y: f64) -> f64 {
        self.output_lo[i] + (y + 1.0) * self.output_half_width(i)
    }

    fn output_half_width(&self, i: usize) -> f64 {
        0.5 * (self.output_hi[i] - self.output_lo[i])
    }

    fn input_slope(&self, i: usize) -> f64 {
        2.0 / (self.input_hi[i] - self.input_lo[i])
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Widens a degenerate (constant-column) range so the map stays invertible.
fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo > 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub spatial_dim: usize,
    pub n_physical: usize,
    pub n_landmarks: usize,
    /// Number of solution components `k`.
    pub n_outputs: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
    pub coordinates: CoordinateMode,
    /// One entry per input slot.
    pub input_transforms: Vec<InputTransform>,
    #[serde(skip)]
    pub normalization: Normalization,
}

impl ModelSpec {
    /// Spec with linear transforms everywhere except the listed `log10` slots,
    /// and identity normalization (call [`ModelSpec::fit_normalization`]).
    pub fn new(
        spatial_dim: usize,
        n_physical: usize,
        n_landmarks: usize,
        n_outputs: usize,
        hidden: Vec<usize>,
        head: Head,
        coordinates: CoordinateMode,
    ) -> Self {
        let arity = spatial_dim + n_physical + n_landmarks;
        Self {
            spatial_dim,
            n_physical,
            n_landmarks,
            n_outputs,
            hidden,
            head,
            coordinates,
            input_transforms: vec![InputTransform::Linear; arity],
            normalization: Normalization::identity(arity, n_outputs),
        }
    }

    pub fn arity(&self) -> usize {
        self.spatial_dim + self.n_physical + self.n_landmarks
    }

    /// Width of the fully connected core's output layer.
    pub fn core_outputs(&self) -> usize {
        match self.head {
            Head::Potential => 1,
            _ => self.n_outputs,
        }
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.arity()];
        w.extend(&self.hidden);
        w.push(self.core_outputs());
        w
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.hidden.is_empty() {
            return bad("at least one hidden layer is required".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if self.spatial_dim == 0 || self.n_outputs == 0 {
            return bad("spatial dimension and output count must be positive".into());
        }
        let arity = self.arity();
        check_len("input transforms", arity, self.input_transforms.len())?;
        let n = &self.normalization;
        check_len("input normalization (lo)", arity, n.input_lo.len())?;
        check_len("input normalization (hi)", arity, n.input_hi.len())?;
        check_len("output normalization (lo)", self.n_outputs, n.output_lo.len())?;
        check_len("output normalization (hi)", self.n_outputs, n.output_hi.len())?;
        for (i, (lo, hi)) in n.input_lo.iter().zip(&n.input_hi).enumerate() {
            if !(hi - lo > 0.0) {
                return bad(format!("input normalization interval {i} has non-positive width"));
            }
        }
        for (i, (lo, hi)) in n.output_lo.iter().zip(&n.output_hi).enumerate() {
            if !(hi - lo > 0.0) {
                return bad(format!("output normalization interval {i} has non-positive width"));
            }
        }
        match &self.head {
            Head::Potential => {
                if self.spatial_dim != 2 || self.n_outputs != 2 {
                    return bad("potential head needs d = 2 and k = 2".into());
                }
                if self.input_transforms[..2]
                    .iter()
                    .any(|t| *t != InputTransform::Linear)
                {
                    return bad("potential head needs linear spatial inputs".into());
                }
            }
            Head::DirichletMask { mask, datum } => {
                check_len("Dirichlet datum", self.n_outputs, datum.len())?;
                if self.spatial_dim != 2 {
                    return bad("mask functions are defined for d = 2".into());
                }
                if mask.needs_landmark() && self.n_landmarks == 0 {
                    return bad(format!("mask {mask:?} reads the height landmark"));
                }
            }
            Head::Symmetric { axes } => {
                if axes.is_empty() {
                    return bad("symmetric head needs at least one axis".into());
                }
                if let Some(a) = axes.iter().find(|a| a.input >= arity) {
                    return bad(format!("symmetry axis input {} out of range", a.input));
                }
            }
            Head::Velocity | Head::Nonnegative => {}
        }
        Ok(())
    }

    /// Transform pipeline up to (excluding) the affine normalization.
    fn pre_transform(&self, raw: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(raw);
        if let Head::Symmetric { axes } = &self.head {
            for a in axes {
                out[a.input] = (raw[a.input] - a.center).abs();
            }
        }
        for (i, t) in self.input_transforms.iter().enumerate() {
            if *t == InputTransform::Log10 {
                if !(out[i] > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "input {i} = {} is not positive under log10 transform",
                        out[i]
                    )));
                }
                out[i] = out[i].log10();
            }
        }
        Ok(())
    }

    /// Maps a raw input row to the network's normalized inputs.
    pub fn apply_input_transform(&self, raw: &[f64]) -> Result<Vec<f64>> {
        check_len("input row", self.arity(), raw.len())?;
        let mut out = vec![0.0; raw.len()];
        self.normalize_into(raw, &mut out)?;
        Ok(out)
    }

    fn normalize_into(&self, raw: &[f64], out: &mut [f64]) -> Result<()> {
        self.pre_transform(raw, out)?;
        let n = &self.normalization;
        for i in 0..out.len() {
            out[i] = 2.0 * (out[i] - n.input_lo[i]) / (n.input_hi[i] - n.input_lo[i]) - 1.0;
        }
        Ok(())
    }

    /// Sets input range `i` from raw (untransformed) bounds.
    pub fn set_input_range(&mut self, i: usize, lo: f64, hi: f64) -> Result<()> {
        let (mut a, mut b) = (lo, hi);
        if self.input_transforms[i] == InputTransform::Log10 {
            if !(lo > 0.0 && hi > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "log10 range for input {i} must be positive"
                )));
            }
            a = lo.log10();
            b = hi.log10();
        }
        self.normalization.input_lo[i] = a;
        self.normalization.input_hi[i] = b;
        Ok(())
    }

    /// Computes all normalization ranges from training rows (`inputs`: n x arity,
    /// `targets`: n x k). Constant columns get a padded range.
    pub fn fit_normalization(&mut self, inputs: &[f64], targets: &[f64]) -> Result<()> {
        let arity = self.arity();
        let k = self.n_outputs;
        if inputs.is_empty() || inputs.len() % arity != 0 {
            return Err(Error::InvalidInput(
                "normalization needs a nonempty n x arity input block".into(),
            ));
        }
        let n_rows = inputs.len() / arity;
        check_len("normalization targets", n_rows * k, targets.len())?;
        let mut transformed = vec![0.0; inputs.len()];
        for (raw, out) in inputs.chunks(arity).zip(transformed.chunks_mut(arity)) {
            self.pre_transform(raw, out)?;
        }
        let mut norm = Normalization::default();
        for i in 0..arity {
            let (lo, hi) = widen_pair(min_max(transformed.iter().skip(i).step_by(arity).copied()));
            norm.input_lo.push(lo);
            norm.input_hi.push(hi);
        }
        for i in 0..k {
            let (lo, hi) = widen_pair(min_max(targets.iter().skip(i).step_by(k).copied()));
            norm.output_lo.push(lo);
            norm.output_hi.push(hi);
        }
        self.normalization = norm;
        Ok(())
    }

    /// Scale of the potential so that its curl has the spread of the velocity data.
    pub fn potential_scale(&self) -> f64 {
        let n = &self.normalization;
        0.5 * (n.output_half_width(0) / n.input_slope(1) + n.output_half_width(1) / n.input_slope(0))
    }
}

fn widen_pair((lo, hi): (f64, f64)) -> (f64, f64) {
    widen(lo, hi)
}

/// Flat trainable parameter vector (weights and biases).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w: Vec<f64>,
}

/// Glorot-uniform weights, zero biases.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::with_capacity(spec.param_count());
    for pair in spec.layer_widths().windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            w.push(rng.gen_range(-limit..limit));
        }
        w.extend(std::iter::repeat(0.0).take(fan_out));
    }
    Ok(ModelParams { w })
}

/// A validated spec compiled into tapes. Parameter vectors are passed per call
/// so the same network can be evaluated along an optimizer trajectory.
#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    tape: Tape,
    potential_scale: f64,
}

/// Per-row scratch state shared between the forward and backward passes.
#[derive(Clone, Debug)]
pub struct RowContext {
    ws: Workspace,
    normalized: Vec<f64>,
    tape_out: Vec<f64>,
    seed: Vec<f64>,
    mask: f64,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n_params = spec.param_count();
        let mut b = TapeBuilder::new(spec.arity(), n_params);
        let input = b.input();
        let (mut out, used) = mlp(&mut b, input, &spec.layer_widths(), 0)?;
        debug_assert_eq!(used, n_params);
        if spec.head == Head::Nonnegative {
            out = b.square(out)?;
        }
        let mut tape = b.finish(vec![out])?;
        if spec.head == Head::Potential {
            tape = tape.with_tangents(&[0, 1])?;
        }
        let potential_scale = match spec.head {
            Head::Potential => spec.potential_scale(),
            _ => 1.0,
        };
        Ok(Self {
            spec,
            tape,
            potential_scale,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.tape.n_params()
    }

    pub fn context(&self) -> RowContext {
        RowContext {
            ws: self.tape.workspace(),
            normalized: vec![0.0; self.spec.arity()],
            tape_out: vec![0.0; self.tape.n_outputs()],
            seed: vec![0.0; self.tape.n_outputs()],
            mask: 0.0,
        }
    }

    /// Evaluates one raw input row into `out` (length `k`), keeping the state
    /// needed by [`Network::backward_row`].
    pub fn forward_row(
        &self,
        params: &[f64],
        raw: &[f64],
        ctx: &mut RowContext,
        out: &mut [f64],
    ) -> Result<()> {
        let spec = &self.spec;
        check_len("input row", spec.arity(), raw.len())?;
        check_len("output buffer", spec.n_outputs, out.len())?;
        spec.normalize_into(raw, &mut ctx.normalized)?;
        self.tape.eval(params, &ctx.normalized, &mut ctx.ws)?;
        self.tape.read_outputs(&ctx.ws, &mut ctx.tape_out);
        let norm = &spec.normalization;
        let y = &ctx.tape_out;
        match &spec.head {
            Head::Velocity | Head::Symmetric { .. } => {
                for i in 0..spec.n_outputs {
                    out[i] = norm.denormalize_output(i, y[i]);
                }
            }
            Head::Nonnegative => {
                for i in 0..spec.n_outputs {
                    out[i] = norm.output_half_width(i) * y[i];
                }
            }
            Head::DirichletMask { mask, datum } => {
                let landmarks = &raw[spec.spatial_dim + spec.n_physical..];
                ctx.mask = mask.eval(&raw[..spec.spatial_dim], landmarks);
                for i in 0..spec.n_outputs {
                    out[i] = datum[i] + ctx.mask * norm.denormalize_output(i, y[i]);
                }
            }
            Head::Potential => {
                // tape outputs: [psi, dpsi/dx_n, dpsi/dy_n]
                let s = self.potential_scale;
                out[0] = s * norm.input_slope(1) * y[2];
                out[1] = -s * norm.input_slope(0) * y[1];
            }
        }
        Ok(())
    }

    /// Adds `d(du · u)/dw` for the row last passed to [`Network::forward_row`].
    pub fn backward_row(
        &self,
        params: &[f64],
        ctx: &mut RowContext,
        du: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let spec = &self.spec;
        check_len("output adjoint", spec.n_outputs, du.len())?;
        let norm = &spec.normalization;
        match &spec.head {
            Head::Velocity | Head::Symmetric { .. } | Head::Nonnegative => {
                for i in 0..spec.n_outputs {
                    ctx.seed[i] = du[i] * norm.output_half_width(i);
                }
            }
            Head::DirichletMask { .. } => {
                for i in 0..spec.n_outputs {
                    ctx.seed[i] = du[i] * ctx.mask * norm.output_half_width(i);
                }
            }
            Head::Potential => {
                let s = self.potential_scale;
                ctx.seed[0] = 0.0;
                ctx.seed[1] = -du[1] * s * norm.input_slope(0);
                ctx.seed[2] = du[0] * s * norm.input_slope(1);
            }
        }
        self.tape.backward(params, &mut ctx.ws, &ctx.seed, grad)
    }

    /// Spatial Jacobian `d u_i / d x_j` of the de-normalized outputs at a raw
    /// row, computed from recorded tangents (`jac[i][j]`).
    pub fn output_jacobian(&self, params: &[f64], raw: &[f64]) -> Result<Vec<Vec<f64>>> {
        let spec = &self.spec;
        let d = spec.spatial_dim;
        if let Head::Symmetric { .. } = spec.head {
            return Err(Error::InvalidInput(
                "symmetric head has no spatial Jacobian at its reflection axis".into(),
            ));
        }
        if spec.input_transforms[..d]
            .iter()
            .any(|t| *t != InputTransform::Linear)
        {
            return Err(Error::InvalidInput("spatial inputs must be linear".into()));
        }
        let normalized = spec.apply_input_transform(raw)?;
        let spatial: Vec<usize> = (0..d).collect();
        let norm = &spec.normalization;
        let mut jac = vec![vec![0.0; d]; spec.n_outputs];
        match &spec.head {
            Head::Potential => {
                // u = s (a_y psi_y, -a_x psi_x); differentiate the tangent tape once more
                let tt = self.tape.with_tangents(&spatial)?;
                let flat = tt.forward(params, &normalized)?;
                // layout: 3 primal outputs, then 3 per column
                let s = self.potential_scale;
                let (ax, ay) = (norm.input_slope(0), norm.input_slope(1));
                for j in 0..d {
                    let aj = norm.input_slope(j);
                    let base = 3 * (j + 1);
                    jac[0][j] = s * ay * flat[base + 2] * aj;
                    jac[1][j] = -s * ax * flat[base + 1] * aj;
                }
            }
            _ => {
                let dual = self.tape.spatial_jacobian(params, &normalized, &spatial)?;
                let y = &dual.primal;
                for i in 0..spec.n_outputs {
                    for j in 0..d {
                        let dy = dual.jacobian(i, j) * norm.input_slope(j);
                        jac[i][j] = match &spec.head {
                            Head::Nonnegative => norm.output_half_width(i) * dy,
                            Head::DirichletMask { mask, .. } => {
                                let lm = &raw[d + spec.n_physical..];
                                let m = mask.eval(&raw[..d], lm);
                                let h = 1e-7;
                                let mut xp = raw[..d].to_vec();
                                let mut xm = raw[..d].to_vec();
                                xp[j] += h;
                                xm[j] -= h;
                                let dm = (mask.eval(&xp, lm) - mask.eval(&xm, lm)) / (2.0 * h);
                                dm * norm.denormalize_output(i, y[i])
                                    + m * norm.output_half_width(i) * dy
                            }
                            _ => norm.output_half_width(i) * dy,
                        };
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Indices of inputs whose normalized value lies outside the training range.
    pub fn extrapolated_inputs(&self, raw: &[f64]) -> Result<Vec<usize>> {
        let n = self.spec.apply_input_transform(raw)?;
        Ok(n
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > 1.0 + EXTRAPOLATION_TOL)
            .map(|(i, _)| i)
            .collect())
    }
}

/// A network together with its trained parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub network: Network,
    pub params: ModelParams,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Result<Self> {
        let network = Network::new(spec)?;
        check_len("model parameters", network.param_count(), params.w.len())?;
        Ok(Self { network, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.network.spec()
    }

    fn assemble_row(&self, x: &[f64], mu_p: &[f64], mu_g: &[f64]) -> Result<Vec<f64>> {
        let spec = self.spec();
        check_len("spatial input", spec.spatial_dim, x.len())?;
        check_len("physical parameters", spec.n_physical, mu_p.len())?;
        check_len("landmarks", spec.n_landmarks, mu_g.len())?;
        let mut row = Vec::with_capacity(spec.arity());
        row.extend_from_slice(x);
        row.extend_from_slice(mu_p);
        row.extend_from_slice(mu_g);
        Ok(row)
    }

    /// `u ≈ NN(x or x_hat, mu_p, mu_g; w)` in physical units.
    pub fn evaluate(&self, x: &[f64], mu_p: &[f64], mu_g: &[f64]) -> Result<Vec<f64>> {
        let row = self.assemble_row(x, mu_p, mu_g)?;
        self.evaluate_row(&row)
    }

    pub fn evaluate_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let mut ctx = self.network.context();
        let mut out = vec![0.0; self.spec().n_outputs];
        self.network
            .forward_row(&self.params.w, raw, &mut ctx, &mut out)?;
        Ok(out)
    }

    /// Row-wise evaluation of a flat `n x arity` block; returns `n x k`.
    pub fn evaluate_batch(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let arity = self.spec().arity();
        let k = self.spec().n_outputs;
        if rows.len() % arity != 0 {
            return Err(Error::InvalidInput(format!(
                "batch length {} is not a multiple of the input arity {arity}",
                rows.len()
            )));
        }
        let mut out = vec![0.0; rows.len() / arity * k];
        let mut ctx = self.network.context();
        for (raw, o) in rows.chunks(arity).zip(out.chunks_mut(k)) {
            self.network
                .forward_row(&self.params.w, raw, &mut ctx, o)?;
        }
        Ok(out)
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut f, self.spec(), &self.params)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let (spec, params) = read_checkpoint(&mut f)?;
        Model::new(spec, params)
    }
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 32 {
        return Err(Error::Format(format!("implausible array length {n}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Checkpoint layout: `USMN`, u32 version, u64 length + JSON spec, then
/// length-prefixed little-endian f64 arrays: weights, input lo/hi, output lo/hi.
pub fn write_checkpoint(w: &mut impl Write, spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    let json = serde_json::to_vec(spec)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    write_f64s(w, &params.w)?;
    let n = &spec.normalization;
    write_f64s(w, &n.input_lo)?;
    write_f64s(w, &n.input_hi)?;
    write_f64s(w, &n.output_lo)?;
    write_f64s(w, &n.output_hi)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ModelSpec, ModelParams)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a USM-Net checkpoint (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = read_u64(r)? as usize;
    if len > 1 << 24 {
        return Err(Error::Format("implausible spec length".into()));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let mut spec: ModelSpec = serde_json::from_slice(&json)?;
    let w = read_f64s(r)?;
    spec.normalization = Normalization {
        input_lo: read_f64s(r)?,
        input_hi: read_f64s(r)?,
        output_lo: read_f64s(r)?,
        output_hi: read_f64s(r)?,
    };
    spec.validate()?;
    check_len("checkpoint parameters", spec.param_count(), w.len())?;
    Ok((spec, ModelParams { w }))
}
