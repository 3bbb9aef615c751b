//! Random planar coronary-like bifurcations.
//!
//! A geometry is a trunk along the x axis from the inlet at `x = 0` to the
//! split line at `x = split_x`, followed by two branches ending at vertical
//! outlets on `x = x_end`. Each wall is a monotone cubic (PCHIP) spline
//! `y(x)`:
//!
//! * `top`: trunk top wall continued by the outer wall of the upper branch,
//! * `bottom`: trunk bottom wall continued by the outer wall of the lower branch,
//! * `front_upper`, `front_lower`: the inner branch walls, both starting at
//!   the carina tip `(carina_x, carina_y)`.
//!
//! Lengths are in millimetres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use usmnet_core::dataset::LandmarkSet;

use crate::{FomError, Result};

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(try_from = "Knots", into = "Knots")]
pub struct Pchip {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Knots {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl TryFrom<Knots> for Pchip {
    type Error = FomError;
    fn try_from(k: Knots) -> Result<Self> {
        Pchip::new(k.xs, k.ys)
    }
}

impl From<Pchip> for Knots {
    fn from(p: Pchip) -> Self {
        Knots { xs: p.xs, ys: p.ys }
    }
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(FomError::Geometry(format!("spline needs >= 2 matching knots, got {} / {}", xs.len(), ys.len())));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || ys.iter().any(|y| !y.is_finite()) {
            return Err(FomError::Geometry("spline knots must be finite and strictly increasing".into()));
        }
        let mut s = Self { xs, ys, slopes: Vec::new() };
        s.slopes = s.compute_slopes();
        Ok(s)
    }

    fn compute_slopes(&self) -> Vec<f64> {
        let n = self.xs.len();
        let h: Vec<f64> = self.xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (self.ys[k + 1] - self.ys[k]) / h[k]).collect();
        if n == 2 {
            return vec![delta[0]; 2];
        }
        let mut d = vec![0.0; n];
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] > 0.0 {
                let (w1, w2) = (2.0 * h[k] + h[k - 1], h[k] + 2.0 * h[k - 1]);
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= 0.0 {
                0.0
            } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                s
            }
        };
        d[0] = end(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        d
    }

    pub fn x_range(&self) -> [f64; 2] {
        [self.xs[0], self.xs[self.xs.len() - 1]]
    }

    /// Value at `x`, clamped to the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let k = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }
}

/// Ranges of the random generator. Defaults are chosen for coronary-like
/// proportions; every range may be degenerate (`[a, a]`).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryRanges {
    /// Inlet-to-split length (fixed across a corpus so landmark stations agree).
    pub trunk_length: f64,
    /// Split-to-outlet horizontal extent (fixed across a corpus).
    pub branch_extent: f64,
    pub trunk_radius: [f64; 2],
    pub branch_radius: [f64; 2],
    /// Angle of each branch axis to the x axis, degrees.
    pub branch_angle_deg: [f64; 2],
    /// Distance from the split line to the carina tip.
    pub carina_offset: [f64; 2],
    /// Relative amplitude of the random radius perturbation.
    pub wall_perturbation: f64,
    /// Probability of a stenosis in each of trunk, upper and lower branch.
    pub stenosis_probability: f64,
    /// Fraction of the local lumen width removed at the stenosis throat.
    pub stenosis_severity: [f64; 2],
    pub stenosis_length: [f64; 2],
    pub max_retries: usize,
}

impl Default for GeometryRanges {
    fn default() -> Self {
        Self {
            trunk_length: 10.0,
            branch_extent: 10.0,
            trunk_radius: [1.2, 2.0],
            branch_radius: [0.8, 1.6],
            branch_angle_deg: [20.0, 50.0],
            carina_offset: [0.5, 1.5],
            wall_perturbation: 0.08,
            stenosis_probability: 0.5,
            stenosis_severity: [0.0, 0.6],
            stenosis_length: [2.0, 4.0],
            max_retries: 100,
        }
    }
}

impl GeometryRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2], lo: f64, hi: f64| r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi;
        let ok = self.trunk_length > 0.0
            && self.branch_extent > 0.0
            && ordered(self.trunk_radius, 1e-3, f64::MAX)
            && ordered(self.branch_radius, 1e-3, f64::MAX)
            && ordered(self.branch_angle_deg, 1.0, 75.0)
            && ordered(self.carina_offset, 0.0, self.branch_extent / 2.0)
            && (0.0..0.5).contains(&self.wall_perturbation)
            && (0.0..=1.0).contains(&self.stenosis_probability)
            && ordered(self.stenosis_severity, 0.0, 0.9)
            && ordered(self.stenosis_length, 1e-3, self.trunk_length.min(self.branch_extent) / 2.0)
            && self.max_retries > 0;
        if ok {
            Ok(())
        } else {
            Err(FomError::Geometry(format!("invalid generator ranges: {self:?}")))
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Trunk,
    Upper,
    Lower,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Stenosis {
    pub segment: Segment,
    /// Throat position along x.
    pub center: f64,
    pub length: f64,
    /// Fraction of the lumen width removed at the throat.
    pub severity: f64,
    /// Share of the narrowing taken by the inner (or, in the trunk, top) wall.
    pub inner_share: f64,
}

/// Parameters drawn by the generator, kept for provenance.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DrawnParameters {
    pub trunk_radius: f64,
    pub upper_radius: f64,
    pub lower_radius: f64,
    pub upper_angle_deg: f64,
    pub lower_angle_deg: f64,
    pub stenoses: Vec<Stenosis>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BifurcationGeometry {
    pub seed: Option<u64>,
    pub split_x: f64,
    pub x_end: f64,
    pub carina_x: f64,
    pub carina_y: f64,
    pub top: Pchip,
    pub bottom: Pchip,
    pub front_upper: Pchip,
    pub front_lower: Pchip,
    pub params: Option<DrawnParameters>,
}

/// Smallest lumen gap accepted anywhere, mm.
pub const MIN_GAP: f64 = 0.2;

impl BifurcationGeometry {
    /// Assembles a geometry from wall splines and checks its invariants.
    pub fn from_walls(split_x: f64, carina_x: f64, top: Pchip, bottom: Pchip, front_upper: Pchip, front_lower: Pchip) -> Result<Self> {
        let x_end = top.x_range()[1];
        let g = Self {
            seed: None,
            split_x,
            x_end,
            carina_x,
            carina_y: front_upper.ys[0],
            top,
            bottom,
            front_upper,
            front_lower,
            params: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FomError::Geometry(m));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        if !(0.0 < self.split_x && self.split_x < self.carina_x && self.carina_x < self.x_end) {
            return bad(format!("need 0 < split {} < carina {} < end {}", self.split_x, self.carina_x, self.x_end));
        }
        for (name, s, lo) in [("top", &self.top, 0.0), ("bottom", &self.bottom, 0.0), ("front_upper", &self.front_upper, self.carina_x), ("front_lower", &self.front_lower, self.carina_x)] {
            let [a, b] = s.x_range();
            if !close(a, lo) || !close(b, self.x_end) {
                return bad(format!("{name} wall spans [{a}, {b}], expected [{lo}, {}]", self.x_end));
            }
        }
        if !close(self.front_upper.ys[0], self.carina_y) || !close(self.front_lower.ys[0], self.carina_y) {
            return bad("inner walls must start at the carina tip".into());
        }
        let n = 400;
        for k in 0..=n {
            let x = self.x_end * k as f64 / n as f64;
            let (t, b) = (self.top.eval(x), self.bottom.eval(x));
            if x <= self.carina_x {
                // the split segment must stay inside the lumen
                let split_ok = x < self.split_x || (t - self.carina_y >= 0.5 * MIN_GAP && self.carina_y - b >= 0.5 * MIN_GAP);
                if !(split_ok && t - b >= MIN_GAP) {
                    return bad(format!("walls too close or crossing at x = {x}"));
                }
            } else {
                let (fu, fl) = (self.front_upper.eval(x), self.front_lower.eval(x));
                if !(t - fu >= MIN_GAP && fl - b >= MIN_GAP && fu >= fl) {
                    return bad(format!("branch walls too close or crossing at x = {x}"));
                }
            }
        }
        // inner walls must separate right after the carina
        let x1 = self.carina_x + 0.05 * (self.x_end - self.carina_x);
        if !(self.front_upper.eval(x1) > self.front_lower.eval(x1)) {
            return bad("inner walls do not separate after the carina".into());
        }
        Ok(())
    }

    /// `[x_min, x_max]` over the top and bottom walls.
    pub fn x_extent(&self) -> [f64; 2] {
        [0.0, self.x_end]
    }

    /// Lumen intervals `[y_lo, y_hi]` at a vertical line.
    pub fn lumen(&self, x: f64) -> Vec<[f64; 2]> {
        if !(0.0..=self.x_end).contains(&x) {
            return Vec::new();
        }
        let (t, b) = (self.top.eval(x), self.bottom.eval(x));
        if x <= self.carina_x {
            vec![[b, t]]
        } else {
            vec![[self.front_upper.eval(x), t], [b, self.front_lower.eval(x)]]
        }
    }

    /// Whether a point lies in the closed fluid domain.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.lumen(p[0]).iter().any(|iv| iv[0] <= p[1] && p[1] <= iv[1])
    }

    /// Inlet endpoints `(bottom, top)`.
    pub fn inlet(&self) -> [f64; 2] {
        [self.bottom.eval(0.0), self.top.eval(0.0)]
    }

    /// Returns a copy with a stenosis on one inner wall only, so the top and
    /// bottom walls (and hence the landmarks) are unchanged.
    pub fn narrow_front(&self, upper: bool, center: f64, length: f64, severity: f64) -> Result<Self> {
        let mut g = self.clone();
        let (wall, outer) = if upper { (&self.front_upper, &self.top) } else { (&self.front_lower, &self.bottom) };
        let ys: Vec<f64> = wall
            .xs
            .iter()
            .zip(&wall.ys)
            .map(|(&x, &y)| y + (outer.eval(x) - y) * severity * bump(x, center, length))
            .collect();
        let s = Pchip::new(wall.xs.clone(), ys)?;
        if upper {
            g.front_upper = s;
        } else {
            g.front_lower = s;
        }
        g.seed = None;
        g.validate()?;
        Ok(g)
    }
}

/// Smooth `cos^2` bump of unit height and total support `length`.
fn bump(x: f64, center: f64, length: f64) -> f64 {
    let t = (x - center) / length;
    if t.abs() >= 0.5 {
        0.0
    } else {
        (std::f64::consts::PI * t).cos().powi(2)
    }
}

fn hermite(x0: f64, y0: f64, d0: f64, x1: f64, y1: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * d1
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Draws a valid geometry; invalid draws are resampled up to the retry cap.
pub fn generate_geometry(seed: u64, ranges: &GeometryRanges) -> Result<BifurcationGeometry> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..ranges.max_retries {
        match draw(&mut rng, ranges) {
            Ok(mut g) => {
                g.seed = Some(seed);
                return Ok(g);
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(FomError::Geometry(format!("no valid geometry after {} draws for seed {seed}: {last}", ranges.max_retries)))
}

fn draw(rng: &mut ChaCha8Rng, r: &GeometryRanges) -> Result<BifurcationGeometry> {
    let xb = r.trunk_length;
    let x_end = xb + r.branch_extent;
    let rt = uniform(rng, r.trunk_radius);
    let (ru, rl) = (uniform(rng, r.branch_radius), uniform(rng, r.branch_radius));
    let (au, al) = (uniform(rng, r.branch_angle_deg), uniform(rng, r.branch_angle_deg));
    let (tu, tl) = (au.to_radians().tan(), al.to_radians().tan());
    let (cu, cl) = (au.to_radians().cos(), al.to_radians().cos());
    let xc = xb + uniform(rng, r.carina_offset);

    let mut perturbation = |x0: f64, x1: f64| -> Result<Pchip> {
        let n = 5;
        let xs: Vec<f64> = (0..n).map(|k| x0 + (x1 - x0) * k as f64 / (n - 1) as f64).collect();
        let ys = (0..n).map(|_| r.wall_perturbation * rng.gen_range(-1.0..=1.0)).collect();
        Pchip::new(xs, ys)
    };
    let p_top = perturbation(0.0, xb)?;
    let p_bot = perturbation(0.0, xb)?;
    let p_up = perturbation(xc, x_end)?;
    let p_lo = perturbation(xc, x_end)?;

    // the outer walls bend from the trunk into the branches over this span
    let xq = xc + (2.0 * ru.max(rl)).max(1.0);
    let mut stenoses = Vec::new();
    for (segment, lo, hi) in [(Segment::Trunk, 0.0, xb), (Segment::Upper, xq, x_end), (Segment::Lower, xq, x_end)] {
        if rng.gen::<f64>() >= r.stenosis_probability {
            continue;
        }
        let length = uniform(rng, r.stenosis_length);
        let (a, b) = (lo + 0.5 * length, hi - 0.5 * length);
        if b <= a {
            continue;
        }
        stenoses.push(Stenosis {
            segment,
            center: rng.gen_range(a..b),
            length,
            severity: uniform(rng, r.stenosis_severity),
            inner_share: rng.gen(),
        });
    }
    let narrowing = |seg: Segment, x: f64| -> (f64, f64) {
        stenoses
            .iter()
            .filter(|s| s.segment == seg)
            .map(|s| {
                let f = s.severity * bump(x, s.center, s.length);
                (f * s.inner_share, f * (1.0 - s.inner_share))
            })
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
    };

    let trunk = |x: f64| -> (f64, f64) {
        let (t, b) = (rt * (1.0 + p_top.eval(x)), -rt * (1.0 + p_bot.eval(x)));
        let (ft, fb) = narrowing(Segment::Trunk, x);
        let w = t - b;
        (t - ft * w, b + fb * w)
    };
    let (top_b, bot_b) = trunk(xb);
    let yc = (top_b * rl + bot_b * ru) / (ru + rl);
    // branch walls: (inner, outer) on the straight part
    let upper = |x: f64| -> (f64, f64) {
        let inner = yc + tu * (x - xc);
        let w = 2.0 * ru / cu * (1.0 + p_up.eval(x));
        let (fi, fo) = narrowing(Segment::Upper, x);
        (inner + fi * w, inner + w - fo * w)
    };
    let lower = |x: f64| -> (f64, f64) {
        let inner = yc - tl * (x - xc);
        let w = 2.0 * rl / cl * (1.0 + p_lo.eval(x));
        let (fi, fo) = narrowing(Segment::Lower, x);
        (inner - fi * w, inner - w + fo * w)
    };

    let dx = 0.1;
    let knots = |a: f64, b: f64| -> Vec<f64> {
        let n = ((b - a) / dx).ceil() as usize;
        (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
    };
    let mut xs = knots(0.0, xb);
    xs.pop();
    let mut xs_b = knots(xb, xq);
    xs_b.pop();
    xs.extend(xs_b);
    xs.extend(knots(xq, x_end));
    let (uq, lq) = (upper(xq).1, lower(xq).1);
    let top: Vec<f64> = xs
        .iter()
        .map(|&x| if x <= xb { trunk(x).0 } else if x < xq { hermite(xb, top_b, 0.0, xq, uq, tu, x) } else { upper(x).1 })
        .collect();
    let bottom: Vec<f64> = xs
        .iter()
        .map(|&x| if x <= xb { trunk(x).1 } else if x < xq { hermite(xb, bot_b, 0.0, xq, lq, -tl, x) } else { lower(x).1 })
        .collect();
    let fx = knots(xc, x_end);
    let fu: Vec<f64> = fx.iter().map(|&x| upper(x).0).collect();
    let fl: Vec<f64> = fx.iter().map(|&x| lower(x).0).collect();

    let mut g = BifurcationGeometry::from_walls(
        xb,
        xc,
        Pchip::new(xs.clone(), top)?,
        Pchip::new(xs, bottom)?,
        Pchip::new(fx.clone(), fu)?,
        Pchip::new(fx, fl)?,
    )?;
    g.params = Some(DrawnParameters {
        trunk_radius: rt,
        upper_radius: ru,
        lower_radius: rl,
        upper_angle_deg: au,
        lower_angle_deg: al,
        stenoses,
    });
    Ok(g)
}

/// Fixed x stations of a landmark set for a corpus layout: uniform along the
/// trunk, then uniform along the branch region.
pub fn landmark_stations(set: LandmarkSet, split_x: f64, x_end: f64) -> Result<Vec<f64>> {
    let (n_trunk, n_branch) = match set {
        LandmarkSet::Wall26 => (6, 7),
        LandmarkSet::Wall6 => (1, 2),
        LandmarkSet::Height => return Err(FomError::Geometry("height landmark applies to the cavity only".into())),
    };
    let trunk = (0..n_trunk).map(|k| split_x * (k as f64 + 0.5) / n_trunk as f64);
    let branch = (0..n_branch).map(|k| split_x + (x_end - split_x) * (k as f64 + 0.5) / n_branch as f64);
    Ok(trunk.chain(branch).collect())
}

/// Wall y coordinates at the stations: top wall first, then bottom wall.
pub fn extract_landmarks(g: &BifurcationGeometry, set: LandmarkSet) -> Result<Vec<f64>> {
    let stations = landmark_stations(set, g.split_x, g.x_end)?;
    extract_at(g, &stations)
}

pub fn extract_at(g: &BifurcationGeometry, stations: &[f64]) -> Result<Vec<f64>> {
    if let Some(&x) = stations.iter().find(|&&x| !(0.0..=g.x_end).contains(&x)) {
        return Err(FomError::Geometry(format!("landmark station {x} outside wall extent [0, {}]", g.x_end)));
    }
    Ok(stations.iter().map(|&x| g.top.eval(x)).chain(stations.iter().map(|&x| g.bottom.eval(x))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(x0: f64, x1: f64, y0: f64, y1: f64) -> Pchip {
        Pchip::new(vec![x0, x1], vec![y0, y1]).unwrap()
    }

    pub(crate) fn straight() -> BifurcationGeometry {
        BifurcationGeometry::from_walls(10.0, 11.0, line(0.0, 20.0, 1.5, 1.5), line(0.0, 20.0, -1.5, -1.5), line(11.0, 20.0, 0.0, 0.5), line(11.0, 20.0, 0.0, -0.5))
            .unwrap()
    }

    #[test]
    fn pchip_reproduces_lines_and_knots() {
        let s = Pchip::new(vec![0.0, 1.0, 3.0, 4.0], vec![1.0, 2.0, 4.0, 5.0]).unwrap();
        for x in [0.0, 0.3, 1.7, 3.9] {
            assert!((s.eval(x) - (1.0 + x)).abs() < 1e-14);
        }
        let s = Pchip::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.eval(2.0), 1.0);
        // no overshoot on monotone data
        for k in 0..=300 {
            let v = s.eval(k as f64 / 100.0);
            assert!((-1e-15..=1.0 + 1e-15).contains(&v));
        }
        assert!(Pchip::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn pchip_serde_round_trip() {
        let s = Pchip::new(vec![0.0, 1.0, 2.5], vec![0.2, -1.0, 3.0]).unwrap();
        let back: Pchip = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Pchip>(r#"{"xs":[1,0],"ys":[0,0]}"#).is_err());
    }

    #[test]
    fn straight_channel_landmarks() {
        let g = straight();
        let l = extract_landmarks(&g, LandmarkSet::Wall26).unwrap();
        assert_eq!(l.len(), 26);
        assert!(l[..13].iter().all(|&y| y == 1.5));
        assert!(l[13..].iter().all(|&y| y == -1.5));
        assert_eq!(extract_landmarks(&g, LandmarkSet::Wall6).unwrap().len(), 6);
        assert!(extract_landmarks(&g, LandmarkSet::Height).is_err());
        assert!(extract_at(&g, &[25.0]).is_err());
    }

    #[test]
    fn zero_severity_gives_symmetric_bifurcation() {
        let r = GeometryRanges {
            trunk_radius: [1.6, 1.6],
            branch_radius: [1.2, 1.2],
            branch_angle_deg: [30.0, 30.0],
            carina_offset: [1.0, 1.0],
            wall_perturbation: 0.0,
            stenosis_severity: [0.0, 0.0],
            ..Default::default()
        };
        let g = generate_geometry(3, &r).unwrap();
        assert_eq!(g.carina_y, 0.0);
        for k in 0..=200 {
            let x = g.x_end * k as f64 / 200.0;
            assert!((g.top.eval(x) + g.bottom.eval(x)).abs() < 1e-12);
            if x > g.carina_x {
                assert!((g.front_upper.eval(x) + g.front_lower.eval(x)).abs() < 1e-12);
            }
        }
        // trunk walls are straight
        assert!((g.top.eval(3.3) - 1.6).abs() < 1e-12);
    }

    #[test]
    fn generator_is_deterministic() {
        let r = GeometryRanges::default();
        assert_eq!(generate_geometry(11, &r).unwrap(), generate_geometry(11, &r).unwrap());
        assert_ne!(generate_geometry(11, &r).unwrap().top, generate_geometry(12, &r).unwrap().top);
    }

    #[test]
    fn front_narrowing_keeps_landmarks() {
        let g = generate_geometry(5, &GeometryRanges::default()).unwrap();
        let h = g.narrow_front(true, 16.0, 3.0, 0.5).unwrap();
        assert_ne!(g.front_upper, h.front_upper);
        for set in [LandmarkSet::Wall26, LandmarkSet::Wall6] {
            assert_eq!(extract_landmarks(&g, set).unwrap(), extract_landmarks(&h, set).unwrap());
        }
    }

    #[test]
    fn invalid_walls_rejected() {
        // bottom wall crosses the top
        let r = BifurcationGeometry::from_walls(10.0, 11.0, line(0.0, 20.0, 1.5, 1.5), line(0.0, 20.0, -1.5, 2.0), line(11.0, 20.0, 0.0, 0.5), line(11.0, 20.0, 0.0, -0.5));
        assert!(r.is_err());
        let mut bad = GeometryRanges::default();
        bad.branch_angle_deg = [50.0, 20.0];
        assert!(generate_geometry(0, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn generated_geometries_are_valid(seed in 0u64..1_000_000) {
            let g = generate_geometry(seed, &GeometryRanges::default()).unwrap();
            prop_assert!(g.validate().is_ok());
            let [b, t] = g.inlet();
            prop_assert!(t > b);
        }
    }
}
