//! Loss assembly and full-batch optimizers.
//!
//! The data term is a mean over snapshots of per-snapshot mean discrepancies,
//! so snapshots with many observation points do not dominate. Regularizers
//! (boundary-condition penalty, Tikhonov) are added on top.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingTable;
use crate::error::{check_len, Error, Result};
use crate::network::Network;

/// Regularization constant of the direction term.
pub const DIRECTION_EPS: f64 = 1e-4;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Discrepancy {
    SquaredL2,
    /// Squared residual plus squared residual of `v / (eps + |v|)`.
    DirectionAugmented { eps: f64 },
}

/// `|u - u_tilde|^2`.
pub fn discrepancy_l2(u: &[f64], u_tilde: &[f64]) -> Result<f64> {
    check_len("discrepancy operands", u.len(), u_tilde.len())?;
    Ok(u.iter().zip(u_tilde).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|u - u_tilde|^2 + |u / (eps + |u|) - u_tilde / (eps + |u_tilde|)|^2`.
pub fn discrepancy_direction(u: &[f64], u_tilde: &[f64], eps: f64) -> Result<f64> {
    check_len("discrepancy operands", u.len(), u_tilde.len())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("direction eps must be positive".into()));
    }
    let (nu, nt) = (eps + norm(u), eps + norm(u_tilde));
    let dir: f64 = u
        .iter()
        .zip(u_tilde)
        .map(|(a, b)| {
            let r = a / nu - b / nt;
            r * r
        })
        .sum();
    Ok(discrepancy_l2(u, u_tilde)? + dir)
}

impl Discrepancy {
    pub fn validate(&self) -> Result<()> {
        match self {
            Discrepancy::DirectionAugmented { eps } if !(*eps > 0.0) => {
                Err(Error::InvalidSpec("direction eps must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, u: &[f64], u_tilde: &[f64]) -> Result<f64> {
        match *self {
            Discrepancy::SquaredL2 => discrepancy_l2(u, u_tilde),
            Discrepancy::DirectionAugmented { eps } => discrepancy_direction(u, u_tilde, eps),
        }
    }

    /// Value and gradient with respect to the prediction `u_tilde` (written to `g`).
    fn value_grad(&self, u: &[f64], ut: &[f64], g: &mut [f64]) -> f64 {
        let mut val = 0.0;
        for i in 0..u.len() {
            let r = ut[i] - u[i];
            val += r * r;
            g[i] = 2.0 * r;
        }
        if let Discrepancy::DirectionAugmented { eps } = *self {
            let (nu, nt) = (norm(u), norm(ut));
            let (du, dt) = (eps + nu, eps + nt);
            // r = a(u) - a(ut); d|r|^2/d ut = -2 J_a(ut)^T r, J_a symmetric
            let mut ut_dot_r = 0.0;
            for i in 0..u.len() {
                let r = u[i] / du - ut[i] / dt;
                val += r * r;
                ut_dot_r += ut[i] * r;
            }
            for i in 0..u.len() {
                let r = u[i] / du - ut[i] / dt;
                let mut jr = r / dt;
                if nt > 0.0 {
                    jr -= ut[i] * ut_dot_r / (nt * dt * dt);
                }
                g[i] -= 2.0 * jr;
            }
        }
        val
    }
}

/// Boundary rows (network input layout) with their Dirichlet data.
#[derive(Clone, Debug, PartialEq)]
pub struct BcSamples {
    pub inputs: Vec<f64>,
    pub datum: Vec<f64>,
}

impl BcSamples {
    pub fn len(&self) -> usize {
        self.datum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datum.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    /// `weight * mean |NN(x_bc) - v_bc|^2`.
    BcPenalty { samples: BcSamples, weight: f64 },
    /// `lambda * |w|^2`.
    Tikhonov { lambda: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub discrepancy: Discrepancy,
    pub regularizers: Vec<Regularizer>,
    /// Optional per-snapshot weights on the inner means (default 1).
    pub snapshot_weights: Option<Vec<f64>>,
    /// Evaluate snapshots on the rayon pool. Partial results are always summed
    /// in snapshot order, so the result does not depend on this flag.
    pub parallel: bool,
}

impl LossConfig {
    pub fn new(discrepancy: Discrepancy) -> Self {
        Self {
            discrepancy,
            regularizers: Vec::new(),
            snapshot_weights: None,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.discrepancy.validate()?;
        for r in &self.regularizers {
            match r {
                Regularizer::BcPenalty { weight, samples } => {
                    if !(*weight >= 0.0) {
                        return Err(Error::InvalidSpec("BC penalty weight must be non-negative".into()));
                    }
                    if samples.is_empty() {
                        return Err(Error::InvalidInput("BC penalty needs boundary samples".into()));
                    }
                }
                Regularizer::Tikhonov { lambda } if !(*lambda >= 0.0) => {
                    return Err(Error::InvalidSpec("Tikhonov weight must be non-negative".into()));
                }
                _ => {}
            }
        }
        if let Some(w) = &self.snapshot_weights {
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::InvalidSpec("snapshot weights must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Mean squared misfit over `rows` (flat, network layout) against `targets`,
/// adding its gradient to `grad` when given.
fn mean_misfit(
    net: &Network,
    params: &[f64],
    rows: &[f64],
    targets: &[f64],
    metric: Discrepancy,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let arity = net.spec().arity();
    let k = net.spec().n_outputs;
    let n = targets.len() / k;
    if n == 0 {
        return Err(Error::InvalidInput("misfit over zero points".into()));
    }
    check_len("misfit rows", n * arity, rows.len())?;
    let mut ctx = net.context();
    let mut pred = vec![0.0; k];
    let mut du = vec![0.0; k];
    let mut sum = 0.0;
    let inv_n = 1.0 / n as f64;
    let mut grad = grad;
    for (row, u) in rows.chunks(arity).zip(targets.chunks(k)) {
        net.forward_row(params, row, &mut ctx, &mut pred)?;
        sum += metric.value_grad(u, &pred, &mut du);
        if let Some(g) = grad.as_deref_mut() {
            for v in du.iter_mut() {
                *v *= scale * inv_n;
            }
            net.backward_row(params, &mut ctx, &du, g)?;
        }
    }
    let m = sum * inv_n;
    if !m.is_finite() {
        return Err(Error::NonFinite("loss evaluation".into()));
    }
    Ok(scale * m)
}

/// Mean squared boundary misfit `mean |NN(x_bc) - v_bc|^2`.
pub fn bc_penalty(net: &Network, params: &[f64], samples: &BcSamples) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("BC penalty needs boundary samples".into()));
    }
    mean_misfit(net, params, &samples.inputs, &samples.datum, Discrepancy::SquaredL2, 1.0, None)
}

/// Loss value and parameter gradient.
pub fn loss(
    net: &Network,
    params: &[f64],
    table: &TrainingTable,
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    config.validate()?;
    let spec = net.spec();
    check_len("parameters", net.param_count(), params.len())?;
    check_len("table input arity", spec.arity(), table.arity())?;
    check_len("table components", spec.n_outputs, table.k)?;
    let n_sn = table.snapshots.len();
    if n_sn == 0 {
        return Err(Error::InvalidInput("training table has no snapshots".into()));
    }
    if let Some(w) = &config.snapshot_weights {
        check_len("snapshot weights", n_sn, w.len())?;
    }
    let arity = table.arity();
    let np = params.len();
    let per_snapshot = |i: usize| -> Result<(f64, Vec<f64>)> {
        let s = &table.snapshots[i];
        if s.rows.is_empty() {
            return Err(Error::InvalidInput(format!("snapshot {} has no points", s.id)));
        }
        let w = config.snapshot_weights.as_ref().map_or(1.0, |w| w[i]);
        let mut g = vec![0.0; np];
        let rows = &table.inputs[s.rows.start * arity..s.rows.end * arity];
        let targets = &table.targets[s.rows.start * table.k..s.rows.end * table.k];
        let v = mean_misfit(net, params, rows, targets, config.discrepancy, w / n_sn as f64, Some(&mut g))?;
        Ok((v, g))
    };
    let parts: Vec<Result<(f64, Vec<f64>)>> = if config.parallel {
        (0..n_sn).into_par_iter().map(per_snapshot).collect()
    } else {
        (0..n_sn).map(per_snapshot).collect()
    };
    let mut total = 0.0;
    let mut grad = vec![0.0; np];
    for p in parts {
        let (v, g) = p?;
        total += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for r in &config.regularizers {
        match r {
            Regularizer::BcPenalty { samples, weight } => {
                check_len("BC sample arity", samples.len() / spec.n_outputs * arity, samples.inputs.len())?;
                total += mean_misfit(net, params, &samples.inputs, &samples.datum, Discrepancy::SquaredL2, *weight, Some(&mut grad))?;
            }
            Regularizer::Tikhonov { lambda } => {
                for (g, w) in grad.iter_mut().zip(params) {
                    total += lambda * w * w;
                    *g += 2.0 * lambda * w;
                }
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((total, grad))
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Bfgs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

/// Optimization trajectory.
#[derive(Clone, Debug)]
pub struct TrainLog {
    start: Instant,
    pub records: Vec<LogRecord>,
    /// Line-search failures recovered by a steepest-descent step.
    pub events: Vec<String>,
}

impl Default for TrainLog {
    fn default() -> Self {
        Self {
            start: Instant::now(),
            records: Vec::new(),
            events: Vec::new(),
        }
    }
}

impl TrainLog {
    fn push(&mut self, phase: Phase, iteration: usize, loss: f64, grad: &[f64]) {
        self.records.push(LogRecord {
            phase,
            iteration,
            loss,
            grad_norm: norm(grad),
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
    }

    /// CSV with columns `phase,iteration,loss,grad_norm,wall_time_s`. With
    /// `reproducible` the wall-clock column is written as zero.
    pub fn write_csv(&self, w: impl Write, reproducible: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["phase", "iteration", "loss", "grad_norm", "wall_time_s"])?;
        for r in &self.records {
            let phase = match r.phase {
                Phase::Adam => "adam",
                Phase::Bfgs => "bfgs",
            };
            let t = if reproducible { 0.0 } else { r.wall_time_s };
            out.write_record([
                phase.to_string(),
                r.iteration.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.grad_norm),
                format!("{t:.6}"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BfgsMemory {
    /// Dense inverse Hessian up to 5000 parameters, limited memory (m = 20) above.
    Auto,
    Full,
    Limited(usize),
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BfgsConfig {
    pub iterations: usize,
    pub c1: f64,
    pub c2: f64,
    pub grad_tol: f64,
    pub memory: BfgsMemory,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-9,
            memory: BfgsMemory::Auto,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptSchedule {
    pub adam: AdamConfig,
    pub bfgs: BfgsConfig,
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidSpec("Adam needs lr > 0, betas in [0, 1), eps > 0".into()));
        }
        Ok(())
    }
}

impl BfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidSpec("Wolfe constants need 0 < c1 < c2 < 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidSpec("gradient tolerance must be non-negative".into()));
        }
        if self.memory == BfgsMemory::Limited(0) {
            return Err(Error::InvalidSpec("limited-memory BFGS needs m >= 1".into()));
        }
        Ok(())
    }
}

fn check_finite(f: f64, g: &[f64], phase: &str, it: usize) -> Result<()> {
    if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{phase} iteration {it}: loss {f}")));
    }
    Ok(())
}

/// Full-batch Adam with bias correction. `objective` returns `(value, gradient)`.
pub fn adam_run<F>(objective: &mut F, params0: &[f64], cfg: &AdamConfig, log: &mut TrainLog) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut w = params0.to_vec();
    let mut m = vec![0.0; w.len()];
    let mut v = vec![0.0; w.len()];
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for it in 0..cfg.iterations {
        let (f, g) = objective(&w)?;
        check_len("objective gradient", w.len(), g.len())?;
        check_finite(f, &g, "adam", it)?;
        log.push(Phase::Adam, it, f, &g);
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            w[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfgsOutcome {
    pub params: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fallbacks: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse Hessian approximation.
enum InverseHessian {
    Dense { n: usize, h: Vec<f64>, initialized: bool },
    Limited { m: usize, pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, gamma: f64 },
}

impl InverseHessian {
    fn new(n: usize, memory: BfgsMemory) -> Self {
        let limited = match memory {
            BfgsMemory::Auto if n > 5000 => Some(20),
            BfgsMemory::Auto | BfgsMemory::Full => None,
            BfgsMemory::Limited(m) => Some(m),
        };
        match limited {
            None => InverseHessian::Dense { n, h: identity(n), initialized: false },
            Some(m) => InverseHessian::Limited { m, pairs: Default::default(), gamma: 1.0 },
        }
    }

    fn reset(&mut self) {
        match self {
            InverseHessian::Dense { n, h, initialized } => {
                *h = identity(*n);
                *initialized = false;
            }
            InverseHessian::Limited { pairs, gamma, .. } => {
                pairs.clear();
                *gamma = 1.0;
            }
        }
    }

    /// `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        match self {
            InverseHessian::Dense { n, h, .. } => (0..*n).map(|i| -dot(&h[i * n..(i + 1) * n], g)).collect(),
            InverseHessian::Limited { pairs, gamma, .. } => {
                let mut q = g.to_vec();
                let mut alpha = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    for (qi, yi) in q.iter_mut().zip(y) {
                        *qi -= a * yi;
                    }
                    alpha.push(a);
                }
                for v in q.iter_mut() {
                    *v *= gamma;
                }
                for ((s, y, rho), a) in pairs.iter().zip(alpha.iter().rev()) {
                    let b = rho * dot(y, &q);
                    for (qi, si) in q.iter_mut().zip(s) {
                        *qi += (a - b) * si;
                    }
                }
                q.iter().map(|v| -v).collect()
            }
        }
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > 1e-12 * (dot(&s, &s) * yy).sqrt()) {
            return;
        }
        let rho = 1.0 / sy;
        match self {
            InverseHessian::Dense { n, h, initialized } => {
                let n = *n;
                if !*initialized {
                    let scale = sy / yy;
                    for v in h.iter_mut() {
                        *v *= scale;
                    }
                    *initialized = true;
                }
                let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
                let yhy = dot(&y, &hy);
                let c = rho * rho * yhy + rho;
                for i in 0..n {
                    let row = &mut h[i * n..(i + 1) * n];
                    let (si, hyi) = (s[i], hy[i]);
                    for j in 0..n {
                        row[j] += c * si * s[j] - rho * (hyi * s[j] + si * hy[j]);
                    }
                }
            }
            InverseHessian::Limited { m, pairs, gamma } => {
                *gamma = sy / yy;
                if pairs.len() == *m {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

struct LinePoint {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` on failure.
fn wolfe_search<F>(
    objective: &mut F,
    w: &[f64],
    f0: f64,
    slope0: f64,
    p: &[f64],
    alpha0: f64,
    cfg: &BfgsConfig,
) -> Result<Option<LinePoint>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    const MAX_EVALS: usize = 30;
    let mut evals = 0;
    let mut eval = |alpha: f64, evals: &mut usize| -> Result<LinePoint> {
        *evals += 1;
        let trial: Vec<f64> = w.iter().zip(p).map(|(a, b)| a + alpha * b).collect();
        let (f, g) = objective(&trial)?;
        let slope = dot(&g, p);
        Ok(LinePoint { alpha, f, g, slope })
    };
    let accept = |pt: &LinePoint| pt.f.is_finite() && pt.slope.abs() <= -cfg.c2 * slope0;
    let armijo = |pt: &LinePoint| pt.f.is_finite() && pt.f <= f0 + cfg.c1 * pt.alpha * slope0;

    let mut prev = LinePoint { alpha: 0.0, f: f0, g: Vec::new(), slope: slope0 };
    let mut alpha = alpha0;
    let (mut lo, mut hi);
    loop {
        let cur = eval(alpha, &mut evals)?;
        if !armijo(&cur) || (evals > 1 && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if accept(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if evals >= MAX_EVALS {
            return Ok(None);
        }
        prev = cur;
        alpha *= 2.0;
    }
    // zoom: lo satisfies Armijo with the lowest value seen; hi brackets
    while evals < MAX_EVALS {
        let a = interpolate(&lo, &hi);
        let cur = eval(a, &mut evals)?;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if accept(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
    }
    // Wolfe curvature never met; an Armijo point with decrease is still usable
    if lo.alpha > 0.0 && lo.f < f0 {
        return Ok(Some(lo));
    }
    Ok(None)
}

/// Safeguarded cubic interpolation between two line points.
fn interpolate(a: &LinePoint, b: &LinePoint) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let bisect = 0.5 * (lo + hi);
    if !a.f.is_finite() || !b.f.is_finite() {
        return bisect;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        bisect
    }
}

/// Steepest-descent backtracking step used when the Wolfe search fails.
fn backtrack<F>(objective: &mut F, w: &[f64], f0: f64, g0: &[f64], c1: f64) -> Result<Option<LinePoint>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let gn = norm(g0);
    let mut alpha = 1.0 / gn.max(1e-300);
    for _ in 0..60 {
        let trial: Vec<f64> = w.iter().zip(g0).map(|(a, b)| a - alpha * b).collect();
        let (f, g) = objective(&trial)?;
        if f.is_finite() && f <= f0 - c1 * alpha * gn * gn && f < f0 {
            return Ok(Some(LinePoint { alpha, f, g, slope: 0.0 }));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// BFGS (dense or limited memory) with a strong-Wolfe line search.
pub fn bfgs_run<F>(objective: &mut F, params0: &[f64], cfg: &BfgsConfig, log: &mut TrainLog) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let n = params0.len();
    let mut w = params0.to_vec();
    let (mut f, mut g) = objective(&w)?;
    check_len("objective gradient", n, g.len())?;
    check_finite(f, &g, "bfgs", 0)?;
    let mut hinv = InverseHessian::new(n, cfg.memory);
    let mut fallbacks = 0;
    let mut first = true;
    for it in 0..cfg.iterations {
        log.push(Phase::Bfgs, it, f, &g);
        let gn = norm(&g);
        if gn <= cfg.grad_tol {
            return Ok(BfgsOutcome { params: w, loss: f, grad_norm: gn, iterations: it, converged: true, fallbacks });
        }
        let mut p = hinv.direction(&g);
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            hinv.reset();
            p = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
            first = true;
        }
        let alpha0 = if first { (1.0 / norm(&p)).min(1.0) } else { 1.0 };
        let step = match wolfe_search(objective, &w, f, slope, &p, alpha0, cfg)? {
            Some(pt) => {
                first = false;
                let s: Vec<f64> = p.iter().map(|v| pt.alpha * v).collect();
                Some((pt, s))
            }
            None => {
                fallbacks += 1;
                log.events.push(format!("bfgs iteration {it}: line search failed, steepest-descent step"));
                log::debug!("bfgs iteration {it}: line search failed, falling back to steepest descent");
                hinv.reset();
                first = true;
                backtrack(objective, &w, f, &g, cfg.c1)?.map(|pt| {
                    let s: Vec<f64> = g.iter().map(|v| -pt.alpha * v).collect();
                    (pt, s)
                })
            }
        };
        let Some((pt, s)) = step else {
            // no descent possible at working precision
            return Ok(BfgsOutcome { params: w, loss: f, grad_norm: gn, iterations: it, converged: false, fallbacks });
        };
        check_finite(pt.f, &pt.g, "bfgs", it + 1)?;
        let y: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (wi, si) in w.iter_mut().zip(&s) {
            *wi += si;
        }
        f = pt.f;
        g = pt.g;
        hinv.update(s, y);
    }
    let gn = norm(&g);
    log.push(Phase::Bfgs, cfg.iterations, f, &g);
    Ok(BfgsOutcome {
        params: w,
        loss: f,
        grad_norm: gn,
        iterations: cfg.iterations,
        converged: gn <= cfg.grad_tol,
        fallbacks,
    })
}

/// Adam followed by BFGS on the full-batch loss.
pub fn train(
    net: &Network,
    params0: &[f64],
    table: &TrainingTable,
    loss_cfg: &LossConfig,
    schedule: &OptSchedule,
    log: &mut TrainLog,
) -> Result<BfgsOutcome> {
    let mut objective = |w: &[f64]| loss(net, w, table, loss_cfg);
    let w = adam_run(&mut objective, params0, &schedule.adam, log)?;
    bfgs_run(&mut objective, &w, &schedule.bfgs, log)
}
