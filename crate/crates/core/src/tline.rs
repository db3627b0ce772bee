//! Staggered finite-volume discretization of k coupled telegrapher lines.
//!
//! Flux `psi` lives on the `n` cells, charge `q` on the `n+1` nodes. The
//! boundary currents are separate port unknowns that feed the end nodes,
//! so the discrete generator satisfies the Green identity exactly.

use crate::linalg::{cmat, herm_eigvals, hermitian_part, inverse, scaled, CMat, C64, ZERO};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("{name}[{index}]: expected {k}x{k} matrix, got {rows}x{cols}")]
    Shape { name: String, index: usize, k: usize, rows: usize, cols: usize },
    #[error("{name}[{index}] is not Hermitian (defect {defect:.3e})")]
    NotHermitian { name: String, index: usize, defect: f64 },
    #[error("{name}[{index}] is not positive definite (min eigenvalue {min:.3e})")]
    NotPositive { name: String, index: usize, min: f64 },
    #[error("{name}[{index}] is not positive semidefinite (min eigenvalue {min:.3e})")]
    NotSemidefinite { name: String, index: usize, min: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Uniform line grid on `eta in [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineGrid {
    pub k: usize,
    pub n: usize,
    pub h: f64,
}

impl LineGrid {
    pub fn new(k: usize, n: usize) -> Result<Self, MaterialError> {
        if k == 0 || n < 2 {
            return Err(MaterialError::Invalid(format!("line grid needs k>=1 and n>=2, got k={k} n={n}")));
        }
        Ok(LineGrid { k, n, h: 1.0 / n as f64 })
    }

    /// Trapezoid node weights: half cells at both ends.
    pub fn node_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.n {
            0.5 * self.h
        } else {
            self.h
        }
    }

    pub fn cell_center(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.h
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.h
    }
}

/// A k x k material coefficient along the line.
#[derive(Clone, Debug)]
pub enum MaterialField {
    Constant(CMat),
    /// Samples at uniformly spaced `eta` in `[0, 1]`, linearly interpolated.
    Profile(Vec<CMat>),
}

impl MaterialField {
    pub fn sample(&self, eta: f64) -> CMat {
        match self {
            MaterialField::Constant(m) => m.clone(),
            MaterialField::Profile(v) if v.len() == 1 => v[0].clone(),
            MaterialField::Profile(v) => {
                let x = eta.clamp(0.0, 1.0) * (v.len() - 1) as f64;
                let i = (x.floor() as usize).min(v.len() - 2);
                let t = x - i as f64;
                let (a, b) = (&v[i], &v[i + 1]);
                cmat(a.nrows(), a.ncols(), |r, c| a[(r, c)] * (1.0 - t) + b[(r, c)] * t)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LineMaterials {
    pub l: MaterialField,
    pub c: MaterialField,
    pub r: MaterialField,
    pub g: MaterialField,
}

/// Per-cell and per-node material samples with the inverse blocks of the Hamiltonian.
#[derive(Clone, Debug)]
pub struct LineBlock {
    pub grid: LineGrid,
    pub l: Vec<CMat>,
    pub l_inv: Vec<CMat>,
    pub r: Vec<CMat>,
    pub c: Vec<CMat>,
    pub c_inv: Vec<CMat>,
    pub g: Vec<CMat>,
}

/// `definite` checks a Hermitian positive definite matrix; otherwise only `m + m^H >= 0` is required.
fn check_matrix(name: &str, index: usize, m: &CMat, k: usize, definite: bool) -> Result<(), MaterialError> {
    if m.nrows() != k || m.ncols() != k {
        return Err(MaterialError::Shape { name: name.into(), index, k, rows: m.nrows(), cols: m.ncols() });
    }
    let mut scale = 0.0f64;
    let mut defect = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            scale = scale.max(m[(i, j)].norm());
            defect = defect.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    if !(0..k).all(|i| (0..k).all(|j| m[(i, j)].re.is_finite() && m[(i, j)].im.is_finite())) {
        return Err(MaterialError::Invalid(format!("{name}[{index}] has non-finite entries")));
    }
    if definite && defect > 1e-12 * scale.max(1e-300) {
        return Err(MaterialError::NotHermitian { name: name.into(), index, defect });
    }
    let min = herm_eigvals(&hermitian_part(m))[0];
    if definite && min <= 0.0 {
        return Err(MaterialError::NotPositive { name: name.into(), index, min });
    }
    if !definite && min < -1e-12 * scale {
        return Err(MaterialError::NotSemidefinite { name: name.into(), index, min });
    }
    Ok(())
}

/// Samples materials at cell midpoints (L, R) and nodes (C, G) and validates them.
pub fn build_line_block(grid: LineGrid, mat: &LineMaterials) -> Result<LineBlock, MaterialError> {
    let k = grid.k;
    let mut out = LineBlock { grid, l: vec![], l_inv: vec![], r: vec![], c: vec![], c_inv: vec![], g: vec![] };
    for cell in 0..grid.n {
        let eta = grid.cell_center(cell);
        let l = mat.l.sample(eta);
        let r = mat.r.sample(eta);
        check_matrix("L", cell, &l, k, true)?;
        check_matrix("R", cell, &r, k, false)?;
        out.l_inv.push(inverse(&l).ok_or_else(|| MaterialError::Invalid(format!("L[{cell}] singular")))?);
        out.l.push(l);
        out.r.push(r);
    }
    for j in 0..=grid.n {
        let eta = grid.node(j);
        let c = mat.c.sample(eta);
        let g = mat.g.sample(eta);
        check_matrix("C", j, &c, k, true)?;
        check_matrix("G", j, &g, k, false)?;
        out.c_inv.push(inverse(&c).ok_or_else(|| MaterialError::Invalid(format!("C[{j}] singular")))?);
        out.c.push(c);
        out.g.push(g);
    }
    Ok(out)
}

/// Index helpers for the line part of a state vector.
#[derive(Clone, Copy, Debug)]
pub struct LineOffsets {
    pub psi: usize,
    pub q: usize,
    /// First of the 2k port currents in the extended effort.
    pub port: usize,
}

impl LineBlock {
    pub fn n_psi(&self) -> usize {
        self.grid.n * self.grid.k
    }

    pub fn n_q(&self) -> usize {
        (self.grid.n + 1) * self.grid.k
    }

    fn push_block(t: &mut Vec<(usize, usize, C64)>, r0: usize, c0: usize, m: &CMat) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != ZERO {
                    t.push((r0 + i, c0 + j, m[(i, j)]));
                }
            }
        }
    }

    /// Hamiltonian blocks `L^{-1}` on cells, `C^{-1}` on nodes.
    pub fn hamiltonian_triplets(&self, off: LineOffsets, t: &mut Vec<(usize, usize, C64)>) {
        let k = self.grid.k;
        for (c, m) in self.l_inv.iter().enumerate() {
            Self::push_block(t, off.psi + c * k, off.psi + c * k, m);
        }
        for (j, m) in self.c_inv.iter().enumerate() {
            Self::push_block(t, off.q + j * k, off.q + j * k, m);
        }
    }

    /// Series resistance on the flux rows, shunt conductance on the charge rows (Hermitian parts).
    pub fn dissipation_triplets(&self, off: LineOffsets, t: &mut Vec<(usize, usize, C64)>) {
        self.loss_triplets(off, t, |m| hermitian_part(m));
    }

    /// Skew parts of R and G, which belong to the structure matrix as `-(R - R^H)/2`.
    pub fn lossless_triplets(&self, off: LineOffsets, t: &mut Vec<(usize, usize, C64)>) {
        self.loss_triplets(off, t, |m| scaled(&(m - hermitian_part(m)), C64::new(-1.0, 0.0)));
    }

    fn loss_triplets(&self, off: LineOffsets, t: &mut Vec<(usize, usize, C64)>, part: impl Fn(&CMat) -> CMat) {
        let k = self.grid.k;
        for (c, m) in self.r.iter().enumerate() {
            Self::push_block(t, off.psi + c * k, off.psi + c * k, &part(m));
        }
        for (j, m) in self.g.iter().enumerate() {
            Self::push_block(t, off.q + j * k, off.q + j * k, &part(m));
        }
    }

    /// Skew part: `psi_c' = -(V_{c+1}-V_c)/h`, `w_j q_j' = -(I_j - I_{j-1})`
    /// with the port currents standing in for `I_{-1}` and `I_n`.
    pub fn generator_triplets(&self, off: LineOffsets, t: &mut Vec<(usize, usize, C64)>) {
        let (k, n, h) = (self.grid.k, self.grid.n, self.grid.h);
        for c in 0..n {
            for a in 0..k {
                t.push((off.psi + c * k + a, off.q + (c + 1) * k + a, C64::new(-1.0 / h, 0.0)));
                t.push((off.psi + c * k + a, off.q + c * k + a, C64::new(1.0 / h, 0.0)));
            }
        }
        for j in 0..=n {
            let w = self.grid.node_weight(j);
            for a in 0..k {
                let row = off.q + j * k + a;
                if j < n {
                    t.push((row, off.psi + j * k + a, C64::new(-1.0 / w, 0.0)));
                } else {
                    t.push((row, off.port + k + a, C64::new(-1.0 / w, 0.0)));
                }
                if j > 0 {
                    t.push((row, off.psi + (j - 1) * k + a, C64::new(1.0 / w, 0.0)));
                } else {
                    t.push((row, off.port + a, C64::new(1.0 / w, 0.0)));
                }
            }
        }
    }

    /// Quadrature weights of the line unknowns: `h` on cells, trapezoid on nodes.
    pub fn mass(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.grid.k;
        let psi = vec![self.grid.h; self.n_psi()];
        let q = (0..self.n_q()).map(|i| self.grid.node_weight(i / k)).collect();
        (psi, q)
    }
}

/// Boundary values `(V(0), I_tot(0), V(1), -I_tot(1))` of the lines.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryValues {
    pub v0: Vec<C64>,
    pub itot0: Vec<C64>,
    pub v1: Vec<C64>,
    pub m_itot1: Vec<C64>,
}

impl BoundaryValues {
    /// Boundary-triple vector `z = (B1 e, B2 e) = (I_tot(0), I_tot(1), V(0), -V(1))`.
    pub fn port_vector(&self) -> Vec<C64> {
        let mut z = self.itot0.clone();
        z.extend(self.m_itot1.iter().map(|v| -v));
        z.extend(self.v0.iter().copied());
        z.extend(self.v1.iter().map(|v| -v));
        z
    }
}

/// Reads the end voltages from nodal voltages and the end currents from the port slots.
pub fn extract_boundary(grid: &LineGrid, v_nodes: &[C64], port_currents: &[C64]) -> BoundaryValues {
    let (k, n) = (grid.k, grid.n);
    assert_eq!(v_nodes.len(), (n + 1) * k);
    assert_eq!(port_currents.len(), 2 * k);
    BoundaryValues {
        v0: v_nodes[..k].to_vec(),
        itot0: port_currents[..k].to_vec(),
        v1: v_nodes[n * k..].to_vec(),
        m_itot1: port_currents[k..].iter().map(|v| -v).collect(),
    }
}

/// Second-order one-sided extrapolation of cell currents to both line ends.
pub fn extrapolate_end_currents(grid: &LineGrid, i_cells: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let (k, n) = (grid.k, grid.n);
    let at = |c: usize, a: usize| i_cells[c * k + a];
    let left = (0..k).map(|a| at(0, a) * 1.5 - at(1, a) * 0.5).collect();
    let right = (0..k).map(|a| at(n - 1, a) * 1.5 - at(n - 2, a) * 0.5).collect();
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{re, Sparse};

    fn scalar(v: f64) -> MaterialField {
        MaterialField::Constant(cmat(1, 1, |_, _| re(v)))
    }

    fn unit_line(n: usize) -> LineBlock {
        let m = LineMaterials { l: scalar(1.0), c: scalar(1.0), r: scalar(0.0), g: scalar(0.0) };
        build_line_block(LineGrid::new(1, n).unwrap(), &m).unwrap()
    }

    #[test]
    fn rejects_indefinite_inductance() {
        let m = LineMaterials { l: scalar(-1.0), c: scalar(1.0), r: scalar(0.0), g: scalar(0.0) };
        let err = build_line_block(LineGrid::new(1, 4).unwrap(), &m).unwrap_err();
        assert!(matches!(err, MaterialError::NotPositive { .. }));
        let m = LineMaterials { l: scalar(1.0), c: scalar(1.0), r: scalar(-0.1), g: scalar(0.0) };
        assert!(build_line_block(LineGrid::new(1, 4).unwrap(), &m).is_err());
    }

    #[test]
    fn rejects_non_hermitian_capacitance() {
        let c = cmat(2, 2, |i, j| if i == j { re(2.0) } else if i < j { C64::new(0.5, 0.1) } else { C64::new(0.5, 0.1) });
        let m = LineMaterials {
            l: MaterialField::Constant(crate::linalg::identity(2)),
            c: MaterialField::Constant(c),
            r: MaterialField::Constant(CMat::zeros(2, 2)),
            g: MaterialField::Constant(CMat::zeros(2, 2)),
        };
        assert!(matches!(
            build_line_block(LineGrid::new(2, 4).unwrap(), &m),
            Err(MaterialError::NotHermitian { .. })
        ));
    }

    #[test]
    fn skew_resistance_is_accepted_and_lossless() {
        let r = cmat(2, 2, |i, j| if i == j { ZERO } else if i < j { re(1.0) } else { re(-1.0) });
        let m = LineMaterials {
            l: MaterialField::Constant(crate::linalg::identity(2)),
            c: MaterialField::Constant(crate::linalg::identity(2)),
            r: MaterialField::Constant(r),
            g: MaterialField::Constant(CMat::zeros(2, 2)),
        };
        let b = build_line_block(LineGrid::new(2, 4).unwrap(), &m).unwrap();
        let off = LineOffsets { psi: 0, q: 8, port: 18 };
        let (mut td, mut tj) = (vec![], vec![]);
        b.dissipation_triplets(off, &mut td);
        b.lossless_triplets(off, &mut tj);
        assert!(td.is_empty());
        assert_eq!(tj.len(), 8);
        let bad = LineMaterials { r: MaterialField::Constant(cmat(2, 2, |i, j| if i == j { re(-0.1) } else { ZERO })), ..m };
        assert!(matches!(build_line_block(LineGrid::new(2, 4).unwrap(), &bad), Err(MaterialError::NotSemidefinite { .. })));
    }

    #[test]
    fn constant_voltage_gives_zero_flux_rate() {
        let b = unit_line(8);
        let off = LineOffsets { psi: 0, q: 8, port: 17 };
        let mut t = vec![];
        b.generator_triplets(off, &mut t);
        let j = Sparse::from_triplets(17, 19, &t);
        let mut e = vec![ZERO; 19];
        for v in e.iter_mut().take(17).skip(8) {
            *v = re(2.5);
        }
        let r = j.matvec(&e);
        assert!(r[..8].iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn boundary_extraction_of_linear_voltage() {
        let g = LineGrid::new(1, 10).unwrap();
        let v: Vec<C64> = (0..=10).map(|j| re(g.node(j))).collect();
        let bv = extract_boundary(&g, &v, &[re(0.3), re(0.7)]);
        assert_eq!(bv.v0, vec![re(0.0)]);
        assert!((bv.v1[0] - re(1.0)).norm() < 1e-15);
        assert_eq!(bv.itot0, vec![re(0.3)]);
        assert_eq!(bv.m_itot1, vec![re(-0.7)]);
        assert_eq!(bv.port_vector(), vec![re(0.3), re(0.7), re(0.0), re(-1.0)]);
    }

    #[test]
    fn end_current_extrapolation_is_second_order() {
        let f = |x: f64| (2.0 * x).sin() + 1.0;
        let err = |n: usize| {
            let g = LineGrid::new(1, n).unwrap();
            let cells: Vec<C64> = (0..n).map(|c| re(f(g.cell_center(c)))).collect();
            let (l, r) = extrapolate_end_currents(&g, &cells);
            (l[0].re - f(0.0)).abs().max((r[0].re - f(1.0)).abs())
        };
        let p = (err(16) / err(32)).log2();
        assert!(p > 1.9, "order {p}");
    }

    #[test]
    fn green_identity_for_bare_line() {
        let b = unit_line(6);
        let (n, k) = (6, 1);
        let off = LineOffsets { psi: 0, q: n * k, port: n * k + (n + 1) * k };
        let ns = off.port;
        let mut t = vec![];
        b.generator_triplets(off, &mut t);
        let j = Sparse::from_triplets(ns, ns + 2, &t);
        let (mp, mq) = b.mass();
        let w: Vec<f64> = mp.into_iter().chain(mq).collect();
        let e1: Vec<C64> = (0..ns + 2).map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64).cos())).collect();
        let e2: Vec<C64> = (0..ns + 2).map(|i| C64::new((i as f64 * 1.3).cos(), 0.2 * i as f64)).collect();
        let ip = |a: &[C64], b: &[C64]| -> C64 { (0..ns).map(|i| a[i] * b[i].conj() * w[i]).sum() };
        let lhs = ip(&j.matvec(&e1), &e2) + ip(&e1, &j.matvec(&e2));
        let bnd = |e: &[C64]| {
            let v: Vec<C64> = e[off.q..off.port].to_vec();
            extract_boundary(&b.grid, &v, &e[ns..]).port_vector()
        };
        let (z1, z2) = (bnd(&e1), bnd(&e2));
        let rhs: C64 = (0..2).map(|i| z1[i] * z2[2 + i].conj() + z1[2 + i] * z2[i].conj()).sum();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
    }
}
