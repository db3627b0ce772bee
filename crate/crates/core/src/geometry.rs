//! Cable centerlines, rotation-minimizing frames, tube charts and the collar map.
//!
//! Every centerline is parametrized over `eta in [0, 1]` with constant speed
//! `|alpha'(eta)| = l`. Outside `[0, 1]` curves are continued analytically
//! (segments, arcs, helices) or along the end tangent (splines) so that the
//! collar map is defined slightly past the cable ends.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cable {cable}: closed curves are not supported")]
    ClosedCurve { cable: usize },
    #[error("cable {cable}: degenerate curve ({reason})")]
    Degenerate { cable: usize, reason: String },
    #[error("cable {cable}: speed deviates from constant length by {dev:.3e} at eta={eta}")]
    NonConstantSpeed { cable: usize, eta: f64, dev: f64 },
    #[error("cable {cable}: curvature too large at eta={eta} (|alpha''|={acc:.4e}, limit {limit:.4e})")]
    Curvature { cable: usize, eta: f64, acc: f64, limit: f64 },
    #[error("cable {cable}: declared length {declared} differs from computed {computed}")]
    LengthMismatch { cable: usize, declared: f64, computed: f64 },
    #[error("cable {cable}: tube with collar leaves the domain")]
    NotContained { cable: usize },
    #[error("cables {a} and {b} overlap (distance {dist:.4e} < {min:.4e})")]
    Overlap { a: usize, b: usize, dist: f64, min: f64 },
    #[error("cable {cable}: line index {line} invalid or reused")]
    LineIndex { cable: usize, line: usize },
    #[error("invalid geometry parameter: {0}")]
    Invalid(String),
    #[error("cable {cable}: collar inversion did not converge")]
    InversionFailed { cable: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CurveSpec {
    Segment { start: [f64; 3], end: [f64; 3] },
    /// Circular arc starting at `start`, turning about `normal` through `sweep` radians.
    Arc { center: [f64; 3], start: [f64; 3], normal: [f64; 3], sweep: f64 },
    Helix { center: [f64; 3], axis: [f64; 3], start_dir: [f64; 3], radius: f64, pitch: f64, turns: f64 },
    /// Natural cubic spline through the points, reparametrized by arclength.
    Spline { points: Vec<[f64; 3]> },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CableSpec {
    pub curve: CurveSpec,
    pub radius: f64,
    #[serde(default)]
    pub length: Option<f64>,
    /// Transmission line driven by this cable; defaults to the cable's position.
    #[serde(default)]
    pub line: Option<usize>,
    /// Optional direction used to seed the first normal of the frame.
    #[serde(default)]
    pub frame_hint: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Domain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Domain {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] > self.lo[a] && p[a] < self.hi[a])
    }
}

fn default_collar() -> f64 {
    0.5
}
fn default_n_eta() -> usize {
    256
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeometrySpec {
    pub domain: Domain,
    pub cables: Vec<CableSpec>,
    /// Relative collar half-width `eps` in `(0, 1)`.
    #[serde(default = "default_collar")]
    pub collar: f64,
    /// Number of frame samples along each cable.
    #[serde(default = "default_n_eta")]
    pub n_eta: usize,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[derive(Clone, Debug)]
struct CubicSpline {
    knots: Vec<f64>,
    pts: Vec<Vec3>,
    m: Vec<Vec3>,
}

impl CubicSpline {
    fn natural(points: &[Vec3]) -> Self {
        let n = points.len();
        let mut knots = vec![0.0];
        for i in 1..n {
            knots.push(knots[i - 1] + (points[i] - points[i - 1]).norm());
        }
        // Natural end conditions: second derivative zero at both ends.
        let mut m = vec![Vec3::zeros(); n];
        if n > 2 {
            let h: Vec<f64> = (0..n - 1).map(|i| knots[i + 1] - knots[i]).collect();
            let mut diag = vec![0.0; n - 2];
            let mut rhs = vec![Vec3::zeros(); n - 2];
            let mut sub = vec![0.0; n - 2];
            for i in 1..n - 1 {
                diag[i - 1] = 2.0 * (h[i - 1] + h[i]);
                sub[i - 1] = h[i - 1];
                rhs[i - 1] = 6.0 * ((points[i + 1] - points[i]) / h[i] - (points[i] - points[i - 1]) / h[i - 1]);
            }
            // Thomas algorithm; super-diagonal entry of row i is h[i+1]... equal to sub of next row.
            let mut c = vec![0.0; n - 2];
            let mut d = rhs.clone();
            for i in 0..n - 2 {
                let sup = if i + 1 < n - 2 { h[i + 1] } else { 0.0 };
                let denom = if i == 0 { diag[0] } else { diag[i] - sub[i] * c[i - 1] };
                c[i] = sup / denom;
                d[i] = if i == 0 { rhs[0] / denom } else { (rhs[i] - d[i - 1] * sub[i]) / denom };
            }
            for i in (0..n - 2).rev() {
                let next = if i + 1 < n - 2 { m[i + 2] } else { Vec3::zeros() };
                m[i + 1] = d[i] - next * c[i];
            }
        }
        CubicSpline { knots, pts: points.to_vec(), m }
    }

    fn span(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Value, first and second derivative in the chord-length parameter.
    fn eval(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let i = self.segment(t);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - t) / h;
        let b = (t - self.knots[i]) / h;
        let (p0, p1, m0, m1) = (self.pts[i], self.pts[i + 1], self.m[i], self.m[i + 1]);
        let p = p0 * a + p1 * b + (m0 * (a * a * a - a) + m1 * (b * b * b - b)) * (h * h / 6.0);
        let d = (p1 - p0) / h + (m1 * (3.0 * b * b - 1.0) - m0 * (3.0 * a * a - 1.0)) * (h / 6.0);
        let dd = m0 * a + m1 * b;
        (p, d, dd)
    }
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

#[derive(Clone, Debug)]
struct ArclengthSpline {
    s: CubicSpline,
    cum: Vec<f64>,
    length: f64,
}

impl ArclengthSpline {
    fn speed_integral(&self, a: f64, b: f64) -> f64 {
        // Composite Gauss-Legendre on 4 subintervals.
        let n = 4;
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for j in 0..n {
            let c = a + (j as f64 + 0.5) * h;
            for &(x, w) in &GL5 {
                acc += w * self.s.eval(c + 0.5 * h * x).1.norm() * 0.5 * h;
            }
        }
        acc
    }

    fn new(points: &[Vec3]) -> Self {
        let s = CubicSpline::natural(points);
        let mut me = ArclengthSpline { s, cum: vec![0.0], length: 0.0 };
        for i in 0..points.len() - 1 {
            let l = me.speed_integral(me.s.knots[i], me.s.knots[i + 1]);
            let last = *me.cum.last().unwrap();
            me.cum.push(last + l);
        }
        me.length = *me.cum.last().unwrap();
        me
    }

    fn param_of_arclength(&self, sigma: f64) -> f64 {
        let n = self.cum.len();
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&sigma).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let (ta, tb) = (self.s.knots[i], self.s.knots[i + 1]);
        let target = sigma - self.cum[i];
        let mut t = ta + (tb - ta) * (target / (self.cum[i + 1] - self.cum[i])).clamp(0.0, 1.0);
        for _ in 0..50 {
            let f = self.speed_integral(ta, t) - target;
            let step = f / self.s.eval(t).1.norm();
            t = (t - step).clamp(ta, tb);
            if step.abs() < 1e-14 * self.s.span() {
                break;
            }
        }
        t
    }
}

#[derive(Clone, Debug)]
enum CurveKind {
    Segment { a: Vec3, d: Vec3 },
    Arc { c: Vec3, u: Vec3, v: Vec3, rho: f64, sweep: f64 },
    Helix { c: Vec3, a: Vec3, u: Vec3, v: Vec3, radius: f64, pitch: f64, turns: f64 },
    Spline(Box<ArclengthSpline>),
}

/// Constant-speed centerline `alpha(eta)`.
#[derive(Clone, Debug)]
pub struct Curve {
    kind: CurveKind,
    length: f64,
}

impl Curve {
    pub fn from_spec(spec: &CurveSpec, cable: usize) -> Result<Self, GeometryError> {
        let deg = |reason: &str| GeometryError::Degenerate { cable, reason: reason.to_string() };
        let kind = match spec {
            CurveSpec::Segment { start, end } => {
                let (a, b) = (v3(*start), v3(*end));
                if (b - a).norm() == 0.0 {
                    return Err(deg("zero-length segment"));
                }
                CurveKind::Segment { a, d: b - a }
            }
            CurveSpec::Arc { center, start, normal, sweep } => {
                let c = v3(*center);
                let r0 = v3(*start) - c;
                let rho = r0.norm();
                let n = v3(*normal);
                if rho == 0.0 || n.norm() == 0.0 || *sweep == 0.0 {
                    return Err(deg("arc needs nonzero radius, normal and sweep"));
                }
                let n = n.normalize();
                if r0.dot(&n).abs() > 1e-12 * rho {
                    return Err(deg("arc normal must be orthogonal to the start radius"));
                }
                if sweep.abs() >= 2.0 * PI - 1e-12 {
                    return Err(GeometryError::ClosedCurve { cable });
                }
                let u = r0 / rho;
                CurveKind::Arc { c, u, v: n.cross(&u), rho, sweep: *sweep }
            }
            CurveSpec::Helix { center, axis, start_dir, radius, pitch, turns } => {
                let a = v3(*axis);
                if a.norm() == 0.0 || *radius <= 0.0 || *turns == 0.0 {
                    return Err(deg("helix needs axis, radius and turns"));
                }
                let a = a.normalize();
                let s = v3(*start_dir);
                let u = s - a * a.dot(&s);
                if u.norm() < 1e-12 {
                    return Err(deg("helix start direction parallel to axis"));
                }
                let u = u.normalize();
                if *pitch == 0.0 && turns.abs() >= 1.0 - 1e-12 {
                    return Err(GeometryError::ClosedCurve { cable });
                }
                CurveKind::Helix { c: v3(*center), a, u, v: a.cross(&u), radius: *radius, pitch: *pitch, turns: *turns }
            }
            CurveSpec::Spline { points } => {
                if points.len() < 2 {
                    return Err(deg("spline needs at least two points"));
                }
                let pts: Vec<Vec3> = points.iter().map(|p| v3(*p)).collect();
                if pts.windows(2).any(|w| (w[1] - w[0]).norm() == 0.0) {
                    return Err(deg("repeated spline points"));
                }
                CurveKind::Spline(Box::new(ArclengthSpline::new(&pts)))
            }
        };
        let length = match &kind {
            CurveKind::Segment { d, .. } => d.norm(),
            CurveKind::Arc { rho, sweep, .. } => rho * sweep.abs(),
            CurveKind::Helix { radius, pitch, turns, .. } => {
                2.0 * PI * turns.abs() * (radius * radius + (pitch / (2.0 * PI)).powi(2)).sqrt()
            }
            CurveKind::Spline(s) => s.length,
        };
        let curve = Curve { kind, length };
        if (curve.eval(0.0).0 - curve.eval(1.0).0).norm() < 1e-9 * length {
            return Err(GeometryError::ClosedCurve { cable });
        }
        Ok(curve)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// `(alpha, alpha', alpha'')` at `eta`, derivatives with respect to `eta`.
    pub fn eval(&self, eta: f64) -> (Vec3, Vec3, Vec3) {
        match &self.kind {
            CurveKind::Segment { a, d } => (a + d * eta, *d, Vec3::zeros()),
            CurveKind::Arc { c, u, v, rho, sweep } => {
                let phi = sweep * eta;
                let (s, co) = phi.sin_cos();
                let p = c + (u * co + v * s) * *rho;
                let d1 = (v * co - u * s) * (rho * sweep);
                let d2 = -(u * co + v * s) * (rho * sweep * sweep);
                (p, d1, d2)
            }
            CurveKind::Helix { c, a, u, v, radius, pitch, turns } => {
                let w = 2.0 * PI * turns;
                let phi = w * eta;
                let (s, co) = phi.sin_cos();
                let p = c + (u * co + v * s) * *radius + a * (pitch * phi / (2.0 * PI));
                let d1 = (v * co - u * s) * (radius * w) + a * (pitch * w / (2.0 * PI));
                let d2 = -(u * co + v * s) * (radius * w * w);
                (p, d1, d2)
            }
            CurveKind::Spline(sp) => {
                let l = sp.length;
                let at = |e: f64| {
                    let t = sp.param_of_arclength(e * l);
                    let (p, d, dd) = sp.s.eval(t);
                    let sp2 = d.norm_squared();
                    let tang = d / sp2.sqrt();
                    let a1 = tang * l;
                    let a2 = (dd - tang * dd.dot(&tang)) * (l * l / sp2);
                    (p, a1, a2)
                };
                if eta < 0.0 {
                    let (p, a1, _) = at(0.0);
                    (p + a1 * eta, a1, Vec3::zeros())
                } else if eta > 1.0 {
                    let (p, a1, _) = at(1.0);
                    (p + a1 * (eta - 1.0), a1, Vec3::zeros())
                } else {
                    at(eta)
                }
            }
        }
    }
}

/// Orthonormal frame (tangent, kappa1, kappa2), positively oriented.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePoint {
    pub t: Vec3,
    pub k1: Vec3,
    pub k2: Vec3,
}

fn reflect(v: &Vec3, n: &Vec3, nn: f64) -> Vec3 {
    v - n * (2.0 * n.dot(v) / nn)
}

/// One double-reflection step transporting `r` from `(x0, t0)` to `(x1, t1)`.
fn double_reflection(x0: &Vec3, t0: &Vec3, r0: &Vec3, x1: &Vec3, t1: &Vec3) -> Vec3 {
    let v1 = x1 - x0;
    let c1 = v1.norm_squared();
    let (r_l, t_l) = if c1 > 1e-300 { (reflect(r0, &v1, c1), reflect(t0, &v1, c1)) } else { (*r0, *t0) };
    let v2 = t1 - t_l;
    let c2 = v2.norm_squared();
    let r1 = if c2 > 1e-300 { reflect(&r_l, &v2, c2) } else { r_l };
    // Re-orthonormalize against drift.
    (r1 - t1 * t1.dot(&r1)).normalize()
}

/// Rotation-minimizing frame sampled on a uniform grid over the extended range.
#[derive(Clone, Debug)]
pub struct Frame {
    pub eta0: f64,
    pub step: f64,
    pub samples: Vec<(Vec3, Vec3, Vec3)>, // (point, tangent, kappa1)
}

impl Frame {
    pub fn build(curve: &Curve, n_eta: usize, pad: f64, hint: Option<Vec3>) -> Frame {
        let step = 1.0 / n_eta as f64;
        let n_pad = (pad / step).ceil() as usize;
        let eta0 = -(n_pad as f64) * step;
        let total = n_eta + 2 * n_pad;
        let (p0, d0, _) = curve.eval(0.0);
        let t0 = d0.normalize();
        let seed = hint.map(|h| h - t0 * t0.dot(&h)).filter(|h| h.norm() > 1e-8).unwrap_or_else(|| {
            // Least-aligned coordinate axis, earliest index wins ties.
            let mut best = 0;
            for a in 1..3 {
                if t0[a].abs() < t0[best].abs() - 1e-12 {
                    best = a;
                }
            }
            let e = Vec3::ith(best, 1.0);
            e - t0 * t0.dot(&e)
        });
        let k1_0 = seed.normalize();
        // March forward from eta=0 and backward into the padding.
        let mut samples = vec![(Vec3::zeros(), Vec3::zeros(), Vec3::zeros()); total + 1];
        samples[n_pad] = (p0, t0, k1_0);
        for i in n_pad + 1..=total {
            let (p, d, _) = curve.eval(eta0 + i as f64 * step);
            let t = d.normalize();
            let (pp, tp, rp) = samples[i - 1];
            samples[i] = (p, t, double_reflection(&pp, &tp, &rp, &p, &t));
        }
        for i in (0..n_pad).rev() {
            let (p, d, _) = curve.eval(eta0 + i as f64 * step);
            let t = d.normalize();
            let (pn, tn, rn) = samples[i + 1];
            samples[i] = (p, t, double_reflection(&pn, &tn, &rn, &p, &t));
        }
        Frame { eta0, step, samples }
    }

    pub fn at(&self, curve: &Curve, eta: f64) -> FramePoint {
        let x = ((eta - self.eta0) / self.step).floor();
        let i = (x.max(0.0) as usize).min(self.samples.len() - 1);
        let (ps, ts, rs) = self.samples[i];
        let (p, d, _) = curve.eval(eta);
        let t = d.normalize();
        let k1 = double_reflection(&ps, &ts, &rs, &p, &t);
        FramePoint { t, k1, k2: t.cross(&k1) }
    }
}

/// Validated cable: centerline, radius, frame and the line it drives.
#[derive(Clone, Debug)]
pub struct Cable {
    pub curve: Curve,
    pub radius: f64,
    pub line: usize,
    pub frame: Frame,
}

/// Local coordinates of a point in a collar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollarCoords {
    pub eta: f64,
    pub theta: f64,
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Exterior,
    InsideTube { cable: usize },
    Collar { cable: usize, coords: CollarCoords },
    Field,
}

/// Tube surface sample with chart derivatives and quadrature weight.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub eta: f64,
    pub theta: f64,
    pub p: Vec3,
    pub normal: Vec3,
    pub d_eta: Vec3,
    pub d_theta: Vec3,
    /// Tangent vector `A (A^T A)^{-1} e_1` with `A = [d_eta, d_theta]`.
    pub dual_eta: Vec3,
    pub weight: f64,
}

/// Midpoint-in-eta, periodic-trapezoid-in-theta sampling of one tube surface.
#[derive(Clone, Debug)]
pub struct TubeChart {
    pub cable: usize,
    pub n_eta: usize,
    pub n_theta: usize,
    pub points: Vec<SurfacePoint>,
}

impl TubeChart {
    pub fn ring(&self, i: usize) -> &[SurfacePoint] {
        &self.points[i * self.n_theta..(i + 1) * self.n_theta]
    }
}

#[derive(Clone, Debug)]
pub struct Geometry {
    pub domain: Domain,
    pub cables: Vec<Cable>,
    pub collar: f64,
}

impl Cable {
    pub fn length(&self) -> f64 {
        self.curve.length()
    }

    pub fn frame_at(&self, eta: f64) -> FramePoint {
        self.frame.at(&self.curve, eta)
    }

    /// Collar map `alpha(eta) + (1+s) beta(eta, theta)` and its Jacobian columns.
    pub fn collar_map(&self, eta: f64, theta: f64, s: f64) -> (Vec3, Matrix3<f64>) {
        let (a, a1, a2) = self.curve.eval(eta);
        let f = self.frame_at(eta);
        let l2 = a1.norm_squared();
        // Rotation-minimizing: kappa' = -(kappa . alpha'') alpha' / |alpha'|^2.
        let dk1 = -a1 * (f.k1.dot(&a2) / l2);
        let dk2 = -a1 * (f.k2.dot(&a2) / l2);
        let (st, ct) = theta.sin_cos();
        let r = self.radius;
        let beta = (f.k1 * st + f.k2 * ct) * r;
        let p = a + beta * (1.0 + s);
        let j_eta = a1 + (dk1 * st + dk2 * ct) * (r * (1.0 + s));
        let j_theta = (f.k1 * ct - f.k2 * st) * (r * (1.0 + s));
        (p, Matrix3::from_columns(&[j_eta, j_theta, beta]))
    }

    pub fn surface_point(&self, eta: f64, theta: f64) -> SurfacePoint {
        let (p, j) = self.collar_map(eta, theta, 0.0);
        let (a1, a2) = (j.column(0).into_owned(), j.column(1).into_owned());
        let cr = a1.cross(&a2);
        let area = cr.norm();
        let normal = cr / area;
        let dual_eta = a2.cross(&normal) / area;
        SurfacePoint { eta, theta, p, normal, d_eta: a1, d_theta: a2, dual_eta, weight: area }
    }

    /// Closest centerline parameter within `[lo, hi]`, if it is an interior critical point.
    pub fn project(&self, p: &Vec3, lo: f64, hi: f64, cable: usize) -> Result<Option<f64>, GeometryError> {
        let fr = &self.frame;
        let mut best = (f64::INFINITY, 0usize);
        for (i, s) in fr.samples.iter().enumerate() {
            let eta = fr.eta0 + i as f64 * fr.step;
            if eta < lo - fr.step || eta > hi + fr.step {
                continue;
            }
            let d = (s.0 - p).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        let e_best = fr.eta0 + best.1 as f64 * fr.step;
        let g = |eta: f64| {
            let (a, a1, a2) = self.curve.eval(eta);
            ((a - p).dot(&a1), a1.norm_squared() + (a - p).dot(&a2))
        };
        let mut a = (e_best - fr.step).max(lo);
        let mut b = (e_best + fr.step).min(hi);
        let (ga, gb) = (g(a).0, g(b).0);
        if ga > 0.0 || gb < 0.0 {
            // Minimum sits on the boundary of the admissible range.
            return Ok(None);
        }
        let mut x = e_best.clamp(a, b);
        for _ in 0..200 {
            let (gx, dgx) = g(x);
            if gx < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let mut nx = if dgx > 0.0 { x - gx / dgx } else { 0.5 * (a + b) };
            if !(nx > a && nx < b) {
                nx = 0.5 * (a + b);
            }
            if (nx - x).abs() <= 1e-13 || (b - a) <= 1e-13 {
                return Ok(Some(nx));
            }
            x = nx;
        }
        Err(GeometryError::InversionFailed { cable })
    }

    /// Inverse of the collar map for a point near this cable.
    pub fn collar_coords(&self, p: &Vec3, eps: f64, cable: usize) -> Result<Option<CollarCoords>, GeometryError> {
        let Some(eta) = self.project(p, -eps, 1.0 + eps, cable)? else { return Ok(None) };
        let (a, _, _) = self.curve.eval(eta);
        let f = self.frame_at(eta);
        let d = p - a;
        let theta = d.dot(&f.k1).atan2(d.dot(&f.k2));
        Ok(Some(CollarCoords { eta, theta, s: d.norm() / self.radius - 1.0 }))
    }
}

/// Builds curves and frames and checks every geometric assumption.
pub fn validate_geometry(spec: &GeometrySpec) -> Result<Geometry, GeometryError> {
    let eps = spec.collar;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(GeometryError::Invalid(format!("collar width {eps} not in (0,1)")));
    }
    if spec.n_eta < 8 {
        return Err(GeometryError::Invalid("n_eta must be at least 8".into()));
    }
    let d = &spec.domain;
    if (0..3).any(|a| d.hi[a] <= d.lo[a]) {
        return Err(GeometryError::Invalid("empty domain box".into()));
    }
    let mut cables = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for (i, cs) in spec.cables.iter().enumerate() {
        if cs.radius <= 0.0 || !cs.radius.is_finite() {
            return Err(GeometryError::Invalid(format!("cable {i}: radius must be positive")));
        }
        let curve = Curve::from_spec(&cs.curve, i)?;
        let l = curve.length();
        if let Some(dl) = cs.length {
            if (dl - l).abs() > 1e-8 * l {
                return Err(GeometryError::LengthMismatch { cable: i, declared: dl, computed: l });
            }
        }
        let line = cs.line.unwrap_or(i);
        if !used.insert(line) {
            return Err(GeometryError::LineIndex { cable: i, line });
        }
        let limit = (1.0 - 1e-6) * l * l / cs.radius;
        for j in 0..=spec.n_eta {
            let eta = j as f64 / spec.n_eta as f64;
            let (_, a1, a2) = curve.eval(eta);
            let dev = (a1.norm() - l).abs() / l;
            if dev > 1e-8 {
                return Err(GeometryError::NonConstantSpeed { cable: i, eta, dev });
            }
            if a2.norm() > limit {
                return Err(GeometryError::Curvature { cable: i, eta, acc: a2.norm(), limit });
            }
        }
        let frame = Frame::build(&curve, spec.n_eta, eps, cs.frame_hint.map(v3));
        cables.push(Cable { curve, radius: cs.radius, line, frame });
    }
    // Containment of every tube together with its collar.
    for (i, c) in cables.iter().enumerate() {
        let n_th = 16;
        for j in 0..=spec.n_eta {
            let eta = j as f64 / spec.n_eta as f64;
            let (a, _, _) = c.curve.eval(eta);
            let f = c.frame_at(eta);
            for m in 0..n_th {
                let th = 2.0 * PI * m as f64 / n_th as f64;
                let q = a + (f.k1 * th.sin() + f.k2 * th.cos()) * ((1.0 + eps) * c.radius);
                if !d.contains(&q) {
                    return Err(GeometryError::NotContained { cable: i });
                }
            }
        }
    }
    // Pairwise disjointness using polyline segment distances.
    let polys: Vec<Vec<Vec3>> = cables
        .iter()
        .map(|c| (0..=spec.n_eta).map(|j| c.curve.eval(j as f64 / spec.n_eta as f64).0).collect())
        .collect();
    for i in 0..cables.len() {
        for j in i + 1..cables.len() {
            let min = (1.0 + eps) * (cables[i].radius + cables[j].radius);
            let mut dist = f64::INFINITY;
            for a in polys[i].windows(2) {
                for b in polys[j].windows(2) {
                    dist = dist.min(segment_distance(&a[0], &a[1], &b[0], &b[1]));
                }
            }
            if dist <= min {
                return Err(GeometryError::Overlap { a: i, b: j, dist, min });
            }
        }
    }
    Ok(Geometry { domain: *d, cables, collar: eps })
}

/// Minimum distance between segments `[p0,p1]` and `[q0,q1]`.
pub fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

impl Geometry {
    pub fn classify_point(&self, p: &Vec3) -> Result<Region, GeometryError> {
        if !self.domain.contains(p) {
            return Ok(Region::Exterior);
        }
        let eps = self.collar;
        for (i, c) in self.cables.iter().enumerate() {
            // Cheap reject: farther than the collar from every frame sample.
            let reach = (1.0 + eps) * c.radius + c.length() * c.frame.step;
            if c.frame.samples.iter().all(|s| (s.0 - p).norm() > reach) {
                continue;
            }
            if let Some(cc) = c.collar_coords(p, eps, i)? {
                if cc.s.abs() < eps {
                    return Ok(Region::Collar { cable: i, coords: cc });
                }
                if cc.s <= -eps && (0.0..=1.0).contains(&cc.eta) {
                    return Ok(Region::InsideTube { cable: i });
                }
            }
        }
        Ok(Region::Field)
    }

    /// Is `p` inside the solid tube `{alpha + delta beta : delta < 1, eta in [0,1]}`?
    pub fn inside_tube(&self, p: &Vec3) -> Result<Option<usize>, GeometryError> {
        for (i, c) in self.cables.iter().enumerate() {
            let reach = c.radius + c.length() * c.frame.step;
            if c.frame.samples.iter().all(|s| (s.0 - p).norm() > reach) {
                continue;
            }
            // No interior critical point means p lies beyond an end plane.
            if let Some(eta) = c.project(p, 0.0, 1.0, i)? {
                let d = (p - c.curve.eval(eta).0).norm();
                if d < c.radius {
                    return Ok(Some(i));
                }
            }
        }
        Ok(None)
    }

    /// Tube chart with `n_eta` midpoint rings and `n_theta` angles per ring.
    pub fn tube_chart(&self, cable: usize, n_eta: usize, n_theta: usize) -> TubeChart {
        let c = &self.cables[cable];
        let de = 1.0 / n_eta as f64;
        let dt = 2.0 * PI / n_theta as f64;
        let mut points = Vec::with_capacity(n_eta * n_theta);
        for i in 0..n_eta {
            let eta = (i as f64 + 0.5) * de;
            for m in 0..n_theta {
                let theta = -PI + (m as f64 + 0.5) * dt;
                let mut sp = c.surface_point(eta, theta);
                sp.weight *= de * dt;
                points.push(sp);
            }
        }
        TubeChart { cable, n_eta, n_theta, points }
    }
}
