//! Boundary-condition algebra on the port space `C^{4k}`.
//!
//! The port vector is `z = (B1 e, B2 e) = (I_tot(0), I_tot(1), V(0), -V(1))` and
//! `W_B = [W1 W2]` acts on it. Thresholds are absolute on `W_B / ||W_B||_2`.

use crate::assembly::PhNode;
use crate::linalg::{
    adjoint, block, cmat, cond2, herm_eigvals, hermitian_part, hstack, identity, inverse, norm2, null_space, rank, scaled,
    singular_values, svd, vstack, CMat, Sparse, SparseLu, C64, ONE, ZERO,
};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

pub const TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("W_B is not admissible (sigma_min = {sigma_min:.3e}, lambda_min = {lambda_min:.3e})")]
    NotAdmissible { sigma_min: f64, lambda_min: f64 },
    #[error("strict positivity required (lambda_min = {0:.3e})")]
    NotStrict(f64),
    #[error("W2 numerically singular (sigma_min = {0:.3e})")]
    SingularW2(f64),
    #[error("co-located output construction failed: {0}")]
    Construction(String),
    #[error("spectral solve failed: {0}")]
    Solver(String),
}

/// `[[0, I_n], [I_n, 0]]`
pub fn sigma(n: usize) -> CMat {
    cmat(2 * n, 2 * n, |i, j| if (i < n && j == i + n) || (i >= n && j + n == i) { ONE } else { ZERO })
}

/// Boundary inputs `W_B = [W_inp; W_0]` and outputs `W_out`, all acting on `z`.
#[derive(Clone, Debug)]
pub struct PortSpec {
    pub k: usize,
    pub w_inp: CMat,
    pub w_zero: CMat,
    pub w_out: CMat,
}

impl PortSpec {
    pub fn new(k: usize, w_inp: CMat, w_zero: CMat, w_out: CMat) -> Result<Self, CertificateError> {
        let n = 4 * k;
        for (name, w) in [("W_B,inp", &w_inp), ("W_B,0", &w_zero), ("W_C,out", &w_out)] {
            if w.ncols() != n {
                return Err(CertificateError::Shape(format!("{name} has {} columns, expected {n}", w.ncols())));
            }
        }
        if w_inp.nrows() + w_zero.nrows() != 2 * k {
            return Err(CertificateError::Shape(format!(
                "W_B,inp and W_B,0 have {} rows in total, expected {}",
                w_inp.nrows() + w_zero.nrows(),
                2 * k
            )));
        }
        Ok(PortSpec { k, w_inp, w_zero, w_out })
    }

    /// Square input/output split `W_B = w_b`, with outputs taken from the co-located builder.
    pub fn colocated(k: usize, w_b: &CMat, m: usize) -> Result<Self, CertificateError> {
        let wc = build_colocated_output(w_b)?;
        let n = 4 * k;
        Self::new(k, block(w_b, 0, 0, m, n), block(w_b, m, 0, 2 * k - m, n), block(&wc, 0, 0, m, n))
    }

    pub fn m(&self) -> usize {
        self.w_inp.nrows()
    }

    pub fn p(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn w_b(&self) -> CMat {
        vstack(&self.w_inp, &self.w_zero)
    }

    pub fn w1(&self) -> CMat {
        block(&self.w_b(), 0, 0, 2 * self.k, 2 * self.k)
    }

    pub fn w2(&self) -> CMat {
        block(&self.w_b(), 0, 2 * self.k, 2 * self.k, 2 * self.k)
    }

    /// Right-hand side `(u, 0)` of the boundary constraint.
    pub fn constraint_rhs(&self, u: &[C64]) -> Vec<C64> {
        let mut v = u.to_vec();
        v.resize(2 * self.k, ZERO);
        v
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Admissibility {
    pub full_rank: bool,
    pub psd: bool,
    pub strict: bool,
    pub skew: bool,
    pub admissible: bool,
    /// Smallest singular value of the normalized `W_B`.
    pub sigma_min: f64,
    /// Eigenvalue extremes of the normalized `W1 W2^H + W2 W1^H`.
    pub lambda_min: f64,
    pub lambda_max: f64,
}

fn normalized(w: &CMat) -> CMat {
    let s = norm2(w);
    if s == 0.0 {
        w.clone()
    } else {
        scaled(w, C64::new(1.0 / s, 0.0))
    }
}

/// `W1 W2^H + W2 W1^H = W_B Sigma W_B^H`
pub fn sym_form(w1: &CMat, w2: &CMat) -> CMat {
    hermitian_part(&(scaled(&(w1 * adjoint(w2)), C64::new(2.0, 0.0))))
}

pub fn check_admissible(w_b: &CMat) -> Admissibility {
    let l = w_b.ncols() / 2;
    let w = normalized(w_b);
    let sv = singular_values(&w);
    let sigma_min = if w.nrows() > w.ncols() { 0.0 } else { sv.last().copied().unwrap_or(0.0) };
    let s = sym_form(&block(&w, 0, 0, w.nrows(), l), &block(&w, 0, l, w.nrows(), l));
    let ev = herm_eigvals(&s);
    let (lambda_min, lambda_max) = (ev[0], *ev.last().unwrap());
    let full_rank = sigma_min > TOL;
    let psd = lambda_min >= -TOL;
    let admissible = full_rank && psd;
    Admissibility {
        full_rank,
        psd,
        strict: admissible && lambda_min > TOL,
        skew: admissible && lambda_min.abs().max(lambda_max.abs()) <= TOL,
        admissible,
        sigma_min,
        lambda_min,
        lambda_max,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxDissipative {
    /// Sufficient criterion: `[W1 W2]` full row rank and `W1 W2^H + W2 W1^H >= 0`.
    pub lemma: bool,
    /// `ker [W1 W2]` is dissipative.
    pub kernel_dissipative: bool,
    pub kernel_dim: usize,
    /// Dissipative with dimension `l`.
    pub oracle: bool,
    pub agree: bool,
}

pub fn check_max_dissipative(w1: &CMat, w2: &CMat) -> MaxDissipative {
    let l = w1.nrows();
    assert!(w1.ncols() == l && w2.nrows() == l && w2.ncols() == l, "square blocks expected");
    let w = normalized(&hstack(w1, w2));
    let a = check_admissible(&w);
    let lemma = a.admissible;
    let kb = null_space(&w, TOL);
    let dim = kb.ncols();
    let kx = block(&kb, 0, 0, l, dim);
    let ky = block(&kb, l, 0, l, dim);
    // Re <x, y> over the kernel: Hermitian part of Ky^H Kx.
    let kernel_dissipative = dim == 0 || *herm_eigvals(&(adjoint(&ky) * &kx)).last().unwrap() <= TOL;
    let oracle = kernel_dissipative && dim == l;
    MaxDissipative { lemma, kernel_dissipative, kernel_dim: dim, oracle, agree: lemma == oracle }
}

/// Completes an admissible `W_B` with `W_C` such that `[W_B; W_C]` is invertible and
/// `Sigma - M^H Sigma M <= 0`, `M = [W_B; W_C]`.
///
/// In the coordinates `T = [[I, I], [I, -I]]/sqrt2` the form becomes `diag(I, -I)`;
/// `W_B T = [Va, Vb]` with `Va` invertible and `K = Va^{-1} Vb` a contraction. The
/// unitary `U = -Z W^H` from `K = W Lambda Z^H` spans a neutral complement. The result has
/// `M Sigma M^H = [[S, I], [I, 0]]`, equality in the Sigma-form iff `S = 0`.
pub fn build_colocated_output(w_b: &CMat) -> Result<CMat, CertificateError> {
    let l = w_b.nrows();
    if w_b.ncols() != 2 * l {
        return Err(CertificateError::Shape(format!("W_B is {}x{}, expected l x 2l", w_b.nrows(), w_b.ncols())));
    }
    let a = check_admissible(w_b);
    if !a.admissible {
        return Err(CertificateError::NotAdmissible { sigma_min: a.sigma_min, lambda_min: a.lambda_min });
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let t = cmat(2 * l, 2 * l, |i, j| {
        if i % l != j % l {
            ZERO
        } else if i >= l && j >= l {
            C64::new(-h, 0.0)
        } else {
            C64::new(h, 0.0)
        }
    });
    let v = w_b * &t;
    let va = block(&v, 0, 0, l, l);
    let vb = block(&v, 0, l, l, l);
    let va_inv = inverse(&va).ok_or_else(|| CertificateError::Construction("Va singular".into()))?;
    let kk = &va_inv * &vb;
    let (wu, _, z) = svd(&kk);
    let u = scaled(&(&z * adjoint(&wu)), C64::new(-1.0, 0.0));
    let cb = &t * vstack(&identity(l), &u);
    let pm = &va - &vb * &u;
    let pm_inv = inverse(&pm).ok_or_else(|| CertificateError::Construction("completion singular".into()))?;
    let wc = adjoint(&pm_inv) * adjoint(&cb);
    let chk = colocation_check(w_b, &wc);
    if !chk.invertible || chk.max_eig > TOL {
        return Err(CertificateError::Construction(format!(
            "check failed: max eigenvalue {:.3e}, condition {:.3e}",
            chk.max_eig, chk.cond
        )));
    }
    Ok(wc)
}

#[derive(Clone, Debug, Serialize)]
pub struct ColocationCheck {
    pub invertible: bool,
    pub cond: f64,
    /// Largest eigenvalue of `Sigma - M^H Sigma M` (relative to `||M||^2`).
    pub max_eig: f64,
    /// `||M^H Sigma M - Sigma||` relative.
    pub unitary_defect: f64,
    pub ok: bool,
}

pub fn colocation_check(w_b: &CMat, w_c: &CMat) -> ColocationCheck {
    let l = w_b.nrows();
    let m = vstack(w_b, w_c);
    let cond = cond2(&m);
    let invertible = m.nrows() == m.ncols() && cond < 1e12;
    let sg = sigma(l);
    let scale = norm2(&m).powi(2).max(1.0);
    let d = &sg - adjoint(&m) * &sg * &m;
    let ev = herm_eigvals(&d);
    let max_eig = *ev.last().unwrap() / scale;
    let unitary_defect = ev.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
    ColocationCheck { invertible, cond, max_eig, unitary_defect, ok: invertible && max_eig <= TOL }
}

/// Full `W_C` whose first `p` rows are the configured outputs, remaining rows from the builder.
pub fn complete_output(spec: &PortSpec) -> Result<CMat, CertificateError> {
    let wb = spec.w_b();
    let built = build_colocated_output(&wb)?;
    let p = spec.p().min(2 * spec.k);
    let rest = block(&built, p, 0, 2 * spec.k - p, 4 * spec.k);
    Ok(vstack(&block(&spec.w_out, 0, 0, p, 4 * spec.k), &rest))
}

#[derive(Clone, Debug, Serialize)]
pub struct WellPosedness {
    /// `lambda_min(W2^{-1} (W1 W2^H + W2 W1^H) W2^{-H})`
    pub delta: f64,
    /// `||W_out [W_B; W2^{-H}, 0]^{-1}||_2`
    pub gamma: f64,
    /// Constant of the auxiliary system bound.
    pub c: f64,
    /// `sqrt(lambda_max(H) / lambda_min(H))`
    pub c_norm: f64,
    pub c_t: f64,
}

/// Constants of the bound `||x(t)|| + ||y|| <= c_t (||x0|| + ||u||)`.
///
/// With `s = lambda_min(W1 W2^H + W2 W1^H)` and the auxiliary output
/// `y~ = W2^{-H} B1 e`, the energy estimate gives
/// `c = max(sqrt(l+/l-) + sqrt(2 l+/s), sqrt(2/(s l-)) + 2/s)`.
pub fn wellposedness_constants(spec: &PortSpec, h_bounds: (f64, f64)) -> Result<WellPosedness, CertificateError> {
    let wb = spec.w_b();
    let a = check_admissible(&wb);
    if !a.admissible {
        return Err(CertificateError::NotAdmissible { sigma_min: a.sigma_min, lambda_min: a.lambda_min });
    }
    if !a.strict {
        return Err(CertificateError::NotStrict(a.lambda_min));
    }
    let (w1, w2) = (spec.w1(), spec.w2());
    let l = w1.nrows();
    let s2 = singular_values(&w2);
    let smin = s2.last().copied().unwrap_or(0.0) / s2[0].max(f64::MIN_POSITIVE);
    let w2_inv = inverse(&w2).filter(|_| smin > TOL).ok_or(CertificateError::SingularW2(smin))?;
    let s = sym_form(&w1, &w2);
    let w = &w2_inv * &s * adjoint(&w2_inv);
    let delta = herm_eigvals(&w)[0];
    let s_min = herm_eigvals(&s)[0];
    let wt = hstack(&adjoint(&w2_inv), &CMat::zeros(l, l));
    let mt = vstack(&wb, &wt);
    let mt_inv = inverse(&mt).ok_or_else(|| CertificateError::Construction("[W_B; W~_C] singular".into()))?;
    let gamma = norm2(&(&spec.w_out * &mt_inv));
    let (lm, lp) = h_bounds;
    let c_norm = (lp / lm).sqrt();
    let c = (c_norm + (2.0 * lp / s_min).sqrt()).max((2.0 / (s_min * lm)).sqrt() + 2.0 / s_min);
    let c_t = c.max(1.0) * gamma.max(1.0) * (1.0 + gamma);
    Ok(WellPosedness { delta, gamma, c, c_norm, c_t })
}

#[derive(Clone, Debug, Serialize)]
pub struct Flags {
    pub admissible: bool,
    pub strict: bool,
    pub skew: bool,
    pub max_dissipative: bool,
    pub colocated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub flags: Flags,
    pub admissibility: Admissibility,
    pub lemma: MaxDissipative,
    pub colocation: Option<ColocationCheck>,
    pub constants: Option<WellPosedness>,
    pub h_bounds: (f64, f64),
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.flags.admissible && self.flags.max_dissipative
    }
}

pub fn certify(spec: &PortSpec, h_bounds: (f64, f64)) -> Certificate {
    let wb = spec.w_b();
    let adm = check_admissible(&wb);
    let lemma = check_max_dissipative(&spec.w1(), &spec.w2());
    let mut notes = vec![];
    if !lemma.agree {
        notes.push(format!(
            "lemma criterion ({}) and kernel oracle ({}) disagree; the criterion is only sufficient",
            lemma.lemma, lemma.oracle
        ));
    }
    let colocation = if adm.admissible && spec.p() == spec.m() {
        match complete_output(spec) {
            Ok(wc) => Some(colocation_check(&wb, &wc)),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        }
    } else {
        None
    };
    let constants = if adm.strict {
        match wellposedness_constants(spec, h_bounds) {
            Ok(c) => Some(c),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        }
    } else {
        None
    };
    Certificate {
        flags: Flags {
            admissible: adm.admissible,
            strict: adm.strict,
            skew: adm.skew,
            max_dissipative: lemma.oracle,
            colocated: colocation.as_ref().map(|c| c.ok).unwrap_or(false),
        },
        admissibility: adm,
        lemma,
        colocation,
        constants,
        h_bounds,
        notes,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    /// `||V|| < 1`
    Strict,
    /// `V` unitary
    Skew,
    /// Contraction with a singular value exactly 1 and an eigenvalue at `-1` (singular `W1`).
    Boundary,
    /// Some singular value above 1.
    Violating,
}

fn random_unitary<R: Rng>(l: usize, rng: &mut R) -> CMat {
    let g = cmat(l, l, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let (u, _, v) = svd(&g);
    &u * adjoint(&v)
}

/// Random `W_B = T0 [I + V, I - V]`; admissible iff `V` is a contraction.
pub fn sample_w_b<R: Rng>(l: usize, kind: SampleKind, rng: &mut R) -> CMat {
    let v = match kind {
        SampleKind::Skew => random_unitary(l, rng),
        SampleKind::Strict | SampleKind::Violating => {
            let (u1, u2) = (random_unitary(l, rng), random_unitary(l, rng));
            let sv: Vec<f64> = (0..l)
                .map(|i| if kind == SampleKind::Violating && i == 0 { rng.gen_range(1.2..3.0) } else { rng.gen_range(0.0..0.9) })
                .collect();
            &u1 * cmat(l, l, |i, j| if i == j { C64::new(sv[i], 0.0) } else { ZERO }) * adjoint(&u2)
        }
        SampleKind::Boundary => {
            let q = random_unitary(l, rng);
            let d: Vec<C64> = (0..l).map(|i| if i == 0 { C64::new(-1.0, 0.0) } else { C64::new(rng.gen_range(-0.9..0.9), 0.0) }).collect();
            &q * cmat(l, l, |i, j| if i == j { d[i] } else { ZERO }) * adjoint(&q)
        }
    };
    let mut t0 = cmat(l, l, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    for i in 0..l {
        t0[(i, i)] += C64::new(2.0, 0.0);
    }
    let i = identity(l);
    &t0 * hstack(&(&i + &v), &(&i - &v))
}

/// Eigenvalues of `(J - R) H` restricted to `{W1 I_b + W2 Pi_H x = 0}`.
///
/// The pencil `([[A, Jb], [W2 Pi_H, W1]], diag(I, 0))` is shifted by `s = ||A||_inf` and
/// inverted; infinite eigenvalues appear as zeros of the top-left block and are dropped.
pub fn constrained_spectrum(node: &PhNode, spec: &PortSpec) -> Result<Vec<C64>, CertificateError> {
    require_admissible(spec)?;
    let lay = node.layout;
    let (ns, nb) = (lay.n_state, 2 * lay.k);
    let jx = node.jd.col_block(0, ns);
    let jb = node.jd.col_block(ns, nb);
    let a = jx.add(&node.rd, C64::new(-1.0, 0.0)).mul(&node.hd);
    let shift = (0..ns).map(|i| a.row(i).map(|(_, v)| v.norm()).sum::<f64>()).fold(0.0, f64::max).max(1.0);
    let w2 = Sparse::from_dense(&spec.w2());
    let w1 = spec.w1();
    let mut t = vec![];
    for (i, j, v) in a.triplets() {
        t.push((i, j, v));
    }
    for i in 0..ns {
        t.push((i, i, C64::new(-shift, 0.0)));
    }
    for (i, j, v) in jb.triplets() {
        t.push((i, ns + j, v));
    }
    for (i, j, v) in w2.mul(&node.pi_h).triplets() {
        t.push((ns + i, j, v));
    }
    for i in 0..nb {
        for j in 0..nb {
            if w1[(i, j)] != ZERO {
                t.push((ns + i, ns + j, w1[(i, j)]));
            }
        }
    }
    let big = Sparse::from_triplets(ns + nb, ns + nb, &t);
    let lu = SparseLu::new(&big).ok_or_else(|| CertificateError::Solver("shifted pencil singular".into()))?;
    let mut x = cmat(ns + nb, ns, |i, j| if i == j { ONE } else { ZERO });
    lu.solve_mat(&mut x);
    let xt = block(&x, 0, 0, ns, ns);
    let mu = crate::linalg::eigvals(&xt);
    let floor = 1e-8 / shift;
    Ok(mu.into_iter().filter(|m| m.norm() > floor).map(|m| C64::new(shift, 0.0) + ONE / m).collect())
}

fn require_admissible(spec: &PortSpec) -> Result<(), CertificateError> {
    let a = check_admissible(&spec.w_b());
    if !a.admissible {
        return Err(CertificateError::NotAdmissible { sigma_min: a.sigma_min, lambda_min: a.lambda_min });
    }
    Ok(())
}

/// Discrete range condition: solves `(I - (J - R) H) x - J_b I_b = f`, `W1 I_b + W2 Pi_H x = 0`
/// for a fixed right-hand side and returns the relative residual.
pub fn range_condition(node: &PhNode, spec: &PortSpec) -> Result<f64, CertificateError> {
    require_admissible(spec)?;
    let lay = node.layout;
    let (ns, nb) = (lay.n_state, 2 * lay.k);
    let jx = node.jd.col_block(0, ns);
    let jb = node.jd.col_block(ns, nb);
    let a = jx.add(&node.rd, C64::new(-1.0, 0.0)).mul(&node.hd);
    let w1 = spec.w1();
    let mut t: Vec<(usize, usize, C64)> = (0..ns).map(|i| (i, i, ONE)).collect();
    t.extend(a.triplets().into_iter().map(|(i, j, v)| (i, j, -v)));
    t.extend(jb.triplets().into_iter().map(|(i, j, v)| (i, ns + j, -v)));
    t.extend(Sparse::from_dense(&spec.w2()).mul(&node.pi_h).triplets().into_iter().map(|(i, j, v)| (ns + i, j, v)));
    for i in 0..nb {
        for j in 0..nb {
            t.push((ns + i, ns + j, w1[(i, j)]));
        }
    }
    let m = Sparse::from_triplets(ns + nb, ns + nb, &t);
    let lu = SparseLu::new(&m).ok_or_else(|| CertificateError::Solver("resolvent singular".into()))?;
    let f: Vec<C64> = (0..ns + nb).map(|i| if i < ns { C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()) } else { ZERO }).collect();
    let x = lu.solve(&f);
    let r: Vec<C64> = m.matvec(&x).iter().zip(&f).map(|(p, q)| p - q).collect();
    let norm = |v: &[C64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let res = norm(&r) / norm(&f);
    if !res.is_finite() {
        return Err(CertificateError::Solver("resolvent solve produced non-finite values".into()));
    }
    Ok(res)
}

/// Expected number of infinite eigenvalues of the constrained pencil.
pub fn infinite_count(spec: &PortSpec) -> usize {
    2 * spec.k - rank(&spec.w1(), TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fro_norm, re};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blocks(l: usize, a: f64, b: f64) -> CMat {
        hstack(&scaled(&identity(l), re(a)), &scaled(&identity(l), re(b)))
    }

    #[test]
    fn sigma_shape() {
        let s = sigma(2);
        assert_eq!(s[(0, 2)], ONE);
        assert_eq!(s[(3, 1)], ONE);
        assert_eq!(s[(0, 0)], ZERO);
    }

    #[test]
    fn admissibility_examples() {
        let a = check_admissible(&blocks(2, 1.0, 1.0));
        assert!(a.admissible && a.strict && !a.skew);
        // unnormalized form is 2 I; normalized by ||W_B|| = sqrt2 gives 1
        assert!((a.lambda_min - 1.0).abs() < 1e-12);
        let b = check_admissible(&blocks(2, 1.0, 0.0));
        assert!(b.admissible && b.skew && !b.strict);
        let mut dup = blocks(2, 1.0, 1.0);
        for j in 0..4 {
            dup[(1, j)] = dup[(0, j)];
        }
        assert!(!check_admissible(&dup).admissible);
    }

    #[test]
    fn lemma_counterexample_rejected() {
        let i = identity(2);
        let r = check_max_dissipative(&i, &scaled(&i, re(-1.0)));
        assert!(!r.lemma && !r.oracle && !r.kernel_dissipative);
        let r = check_max_dissipative(&i, &i);
        assert!(r.lemma && r.oracle);
    }

    #[test]
    fn lemma_agrees_with_kernel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [SampleKind::Strict, SampleKind::Skew, SampleKind::Boundary, SampleKind::Violating] {
            for _ in 0..25 {
                let w = sample_w_b(4, kind, &mut rng);
                let r = check_max_dissipative(&block(&w, 0, 0, 4, 4), &block(&w, 0, 4, 4, 4));
                assert!(r.agree, "{kind:?}: {r:?}");
                assert_eq!(r.lemma, kind != SampleKind::Violating);
            }
        }
    }

    #[test]
    fn colocated_block_swap() {
        let wb = blocks(2, 1.0, 0.0);
        let wc = build_colocated_output(&wb).unwrap();
        assert!(fro_norm(&(&wc - blocks(2, 0.0, 1.0))) < 1e-12);
        let chk = colocation_check(&wb, &wc);
        assert!(chk.ok && chk.unitary_defect < 1e-12);
    }

    #[test]
    fn colocated_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [SampleKind::Strict, SampleKind::Skew, SampleKind::Boundary] {
            let wb = sample_w_b(4, kind, &mut rng);
            let wc = build_colocated_output(&wb).unwrap();
            let m = vstack(&wb, &wc);
            let p = &m * sigma(4) * adjoint(&m);
            let s = &wb * sigma(4) * adjoint(&wb);
            assert!(fro_norm(&(&block(&p, 0, 0, 4, 4) - &s)) < 1e-9);
            assert!(fro_norm(&(&block(&p, 0, 4, 4, 4) - identity(4))) < 1e-9);
            assert!(fro_norm(&block(&p, 4, 4, 4, 4)) < 1e-9);
        }
    }

    #[test]
    fn strict_half_sum_has_no_sigma_unitary_completion() {
        // W_B Sigma W_B^H = I, so M^H Sigma M = Sigma is impossible; the best completion
        // leaves Sigma - M^H Sigma M negative semidefinite but nonzero.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let wb = blocks(2, h, h);
        let wc = build_colocated_output(&wb).unwrap();
        let chk = colocation_check(&wb, &wc);
        assert!(chk.ok);
        assert!(chk.unitary_defect > 0.1);
        let naive = colocation_check(&wb, &blocks(2, h, -h));
        assert!(naive.max_eig > 0.5);
    }

    #[test]
    fn delta_for_identity_pair() {
        let spec = PortSpec::new(1, blocks(2, 1.0, 1.0), CMat::zeros(0, 4), blocks(2, 1.0, 1.0)).unwrap();
        let wp = wellposedness_constants(&spec, (1.0, 1.0)).unwrap();
        assert!((wp.delta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_explicit_inverse() {
        // [W_B; W~_C] = [[I, I], [I, 0]] has inverse [[0, I], [I, -I]].
        let wt = blocks(2, 1.0, 0.0);
        let spec = PortSpec::new(1, blocks(2, 1.0, 1.0), CMat::zeros(0, 4), wt).unwrap();
        let wp = wellposedness_constants(&spec, (1.0, 1.0)).unwrap();
        assert!((wp.gamma - 1.0).abs() < 1e-12);
        assert!(wp.c_t >= wp.c);
    }

    #[test]
    fn skew_fails_wellposedness() {
        let spec = PortSpec::new(1, blocks(2, 1.0, 0.0), CMat::zeros(0, 4), blocks(2, 0.0, 1.0)).unwrap();
        assert!(matches!(wellposedness_constants(&spec, (1.0, 1.0)), Err(CertificateError::NotStrict(_))));
    }

    #[test]
    fn certificate_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [SampleKind::Strict, SampleKind::Skew, SampleKind::Boundary, SampleKind::Violating] {
            let wb = sample_w_b(2, kind, &mut rng);
            let spec = PortSpec::new(1, wb, CMat::zeros(0, 4), CMat::zeros(0, 4)).unwrap();
            let c = certify(&spec, (0.5, 2.0));
            assert!(!c.flags.strict || c.flags.admissible);
            assert!(!c.flags.skew || c.flags.admissible);
            assert_eq!(c.constants.as_ref().map(|w| w.delta > 0.0).unwrap_or(false), c.flags.strict);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn row_scaling_keeps_flags(seed in 0u64..1000, kind in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind = [SampleKind::Strict, SampleKind::Skew, SampleKind::Boundary, SampleKind::Violating][kind];
            let wb = sample_w_b(2, kind, &mut rng);
            let mut t = random_unitary(2, &mut rng);
            for i in 0..2 { t[(i, i)] += re(1.5); }
            let a = check_admissible(&wb);
            let b = check_admissible(&(&t * &wb));
            prop_assert_eq!(a.admissible, b.admissible);
            prop_assert_eq!(a.full_rank, b.full_rank);
        }
    }
}
