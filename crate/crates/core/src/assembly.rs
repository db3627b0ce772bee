//! Global state layout and the coupled port-Hamiltonian operators.
//!
//! State `x = (psi, B, q, D)`, effort `e = H x = (I, H, V, E)`. The generator
//! acts on the extended effort `(e, I_b)` whose last `2k` entries are the port
//! currents at both line ends. With the quadrature mass `M`,
//! `<J e1, e2>_M + <e1, J e2>_M = <B1 e1, B2 e2> + <B2 e1, B1 e2>` holds exactly.

use crate::certify::PortSpec;
use crate::linalg::{dot, herm_eigvals, mat_vec, vnorm, wdot, CMat, Sparse, C64, ZERO};
use crate::maxwell::{MaxwellMaterials, YeeGrid};
use crate::tline::{extract_boundary, BoundaryValues, LineBlock, LineOffsets};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("boundary constraint violated: residual {residual:.3e} > bc_tol {tol:.3e}")]
    Domain { residual: f64, tol: f64 },
    #[error("discrete Green identity residual {0:.3e} above tolerance")]
    Green(f64),
    #[error("input has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub k: usize,
    pub n: usize,
    pub n_face: usize,
    pub n_edge: usize,
    pub off_b: usize,
    pub off_q: usize,
    pub off_d: usize,
    pub n_state: usize,
}

impl Layout {
    pub fn new(k: usize, n: usize, n_face: usize, n_edge: usize) -> Self {
        let off_b = n * k;
        let off_q = off_b + n_face;
        let off_d = off_q + (n + 1) * k;
        Layout { k, n, n_face, n_edge, off_b, off_q, off_d, n_state: off_d + n_edge }
    }

    pub fn n_ext(&self) -> usize {
        self.n_state + 2 * self.k
    }

    pub fn psi(&self, c: usize, a: usize) -> usize {
        c * self.k + a
    }

    pub fn q(&self, j: usize, a: usize) -> usize {
        self.off_q + j * self.k + a
    }

    pub fn port(&self, side: usize, a: usize) -> usize {
        self.n_state + side * self.k + a
    }

    fn line_offsets(&self) -> LineOffsets {
        LineOffsets { psi: 0, q: self.off_q, port: self.n_state }
    }
}

/// Maxwell part of a coupled node.
#[derive(Clone, Debug)]
pub struct FieldPart {
    pub grid: YeeGrid,
    pub materials: MaxwellMaterials,
    /// Node voltages (all lines) to lateral edge values.
    pub t_map: Sparse,
}

#[derive(Clone, Debug)]
pub struct PhNode {
    pub layout: Layout,
    /// `n_state x n_ext`
    pub jd: Sparse,
    pub rd: Sparse,
    pub hd: Sparse,
    pub mass: Vec<f64>,
    /// `(V(0), -V(n))` as a function of the state: `2k x n_state`.
    pub pi_h: Sparse,
    pub line: LineBlock,
    pub field: Option<FieldPart>,
    /// Extreme eigenvalues of the Hamiltonian blocks.
    pub h_bounds: (f64, f64),
}

/// Assembles the coupled operators; `field = None` gives the bare lines.
pub fn assemble(line: LineBlock, field: Option<FieldPart>) -> PhNode {
    let (k, n) = (line.grid.k, line.grid.n);
    let (n_face, n_edge) = field.as_ref().map(|f| (f.grid.active_faces.len(), f.grid.free_edges.len())).unwrap_or((0, 0));
    let lay = Layout::new(k, n, n_face, n_edge);
    let off = lay.line_offsets();
    let (mut tj, mut tr, mut th) = (vec![], vec![], vec![]);
    line.generator_triplets(off, &mut tj);
    line.lossless_triplets(off, &mut tj);
    line.dissipation_triplets(off, &mut tr);
    line.hamiltonian_triplets(off, &mut th);
    let (mp, mq) = line.mass();
    let mut mass = vec![0.0; lay.n_state];
    mass[..mp.len()].copy_from_slice(&mp);
    mass[lay.off_q..lay.off_q + mq.len()].copy_from_slice(&mq);

    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for m in line.l_inv.iter().chain(&line.c_inv) {
        let ev = herm_eigvals(m);
        lo = lo.min(ev[0]);
        hi = hi.max(*ev.last().unwrap());
    }

    if let Some(f) = &field {
        let g = &f.grid;
        let dv = g.cell_volume();
        let (cf, cl) = g.curl_split();
        let (hb, hdd) = g.hodge(&f.materials);
        let sigma = g.conductivity(&f.materials);
        for v in hb.iter().chain(&hdd) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        for (i, &v) in hb.iter().enumerate() {
            th.push((lay.off_b + i, lay.off_b + i, C64::new(v, 0.0)));
            mass[lay.off_b + i] = dv;
        }
        for (i, &v) in hdd.iter().enumerate() {
            th.push((lay.off_d + i, lay.off_d + i, C64::new(v, 0.0)));
            tr.push((lay.off_d + i, lay.off_d + i, C64::new(sigma[i], 0.0)));
            mass[lay.off_d + i] = dv;
        }
        // B' = -C_f E - C_l T V ; D' = C_f^T H ; w_j q_j' += dV (C_l T)^T H
        for (fi, e, v) in cf.triplets() {
            tj.push((lay.off_b + fi, lay.off_d + e, -v));
            tj.push((lay.off_d + e, lay.off_b + fi, v.conj()));
        }
        let ct = cl.mul(&f.t_map);
        for (fi, j, v) in ct.triplets() {
            let w = line.grid.node_weight(j / k);
            tj.push((lay.off_b + fi, lay.off_q + j, -v));
            tj.push((lay.off_q + j, lay.off_b + fi, v.conj() * (dv / w)));
        }
    }

    let jd = Sparse::from_triplets(lay.n_state, lay.n_ext(), &tj);
    let rd = Sparse::from_triplets(lay.n_state, lay.n_state, &tr);
    let hd = Sparse::from_triplets(lay.n_state, lay.n_state, &th);
    let mut tp = vec![];
    for a in 0..k {
        for (j, v) in hd.row(lay.q(0, a)) {
            tp.push((a, j, v));
        }
        for (j, v) in hd.row(lay.q(n, a)) {
            tp.push((k + a, j, -v));
        }
    }
    let pi_h = Sparse::from_triplets(2 * k, lay.n_state, &tp);
    PhNode { layout: lay, jd, rd, hd, mass, pi_h, line, field, h_bounds: (lo, hi) }
}

impl PhNode {
    pub fn effort(&self, x: &[C64]) -> Vec<C64> {
        self.hd.matvec(x)
    }

    pub fn extend(&self, e: &[C64], port: &[C64]) -> Vec<C64> {
        let mut v = e.to_vec();
        v.extend_from_slice(port);
        v
    }

    pub fn energy(&self, x: &[C64]) -> f64 {
        0.5 * wdot(&self.mass, x, &self.effort(x)).re
    }

    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        wdot(&self.mass, &a[..self.layout.n_state], &b[..self.layout.n_state])
    }

    pub fn norm(&self, x: &[C64]) -> f64 {
        self.inner(x, x).re.max(0.0).sqrt()
    }

    /// `Re <R e, e>_M`
    pub fn dissipation(&self, e: &[C64]) -> f64 {
        let e = &e[..self.layout.n_state];
        wdot(&self.mass, &self.rd.matvec(e), e).re
    }

    /// `(V(0), I_tot(0), V(1), -I_tot(1))` of an extended effort.
    pub fn extract_boundary(&self, ext: &[C64]) -> BoundaryValues {
        let l = &self.layout;
        let v = &ext[l.off_q..l.off_q + (l.n + 1) * l.k];
        extract_boundary(&self.line.grid, v, &ext[l.n_state..])
    }

    /// Boundary-triple vector `(B1 e, B2 e)`.
    pub fn port_vector(&self, ext: &[C64]) -> Vec<C64> {
        self.extract_boundary(ext).port_vector()
    }

    /// Both sides of the discrete Green identity.
    pub fn green_sides(&self, e1: &[C64], e2: &[C64]) -> (C64, C64) {
        let lhs = self.inner(&self.jd.matvec(e1), e2) + self.inner(e1, &self.jd.matvec(e2));
        let (z1, z2) = (self.port_vector(e1), self.port_vector(e2));
        let m = 2 * self.layout.k;
        let rhs = dot(&z1[..m], &z2[m..]) + dot(&z1[m..], &z2[..m]);
        (lhs, rhs)
    }

    /// Dense `(J_x - R) H`, `J_b` split of the generator.
    pub fn dense_blocks(&self) -> (CMat, CMat) {
        let ns = self.layout.n_state;
        let jx = self.jd.col_block(0, ns);
        let jb = self.jd.col_block(ns, 2 * self.layout.k);
        let a = jx.add(&self.rd, C64::new(-1.0, 0.0)).mul(&self.hd);
        (a.to_dense(), jb.to_dense())
    }

    /// Largest deviation of `M H` and `M R` from Hermitian, relative.
    pub fn symmetry_defects(&self) -> (f64, f64) {
        let defect = |s: &Sparse| {
            let ms = s.scale_rows(&self.mass);
            let d = ms.add(&ms.adjoint(), C64::new(-1.0, 0.0));
            d.max_abs() / ms.max_abs().max(1e-300)
        };
        (defect(&self.hd), defect(&self.rd))
    }

    pub fn zero_state(&self) -> Vec<C64> {
        vec![ZERO; self.layout.n_state]
    }

    /// `(J - R) e` for an extended effort with `W_B z = (u, 0)` up to `bc_tol`.
    pub fn apply_fg(&self, spec: &PortSpec, ext: &[C64], u: &[C64], bc_tol: f64) -> Result<Vec<C64>, AssemblyError> {
        let l = &self.layout;
        if ext.len() != l.n_ext() {
            return Err(AssemblyError::Length { got: ext.len(), expected: l.n_ext() });
        }
        if u.len() != spec.m() {
            return Err(AssemblyError::Length { got: u.len(), expected: spec.m() });
        }
        let z = self.port_vector(ext);
        let rhs = spec.constraint_rhs(u);
        let wz = mat_vec(&spec.w_b(), &z);
        let residual = wz.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let scale = vnorm(&z).max(vnorm(&rhs)).max(1.0);
        if residual > bc_tol * scale {
            return Err(AssemblyError::Domain { residual, tol: bc_tol });
        }
        let mut out = self.jd.matvec(ext);
        self.rd.matvec_acc(&ext[..l.n_state], &mut out, C64::new(-1.0, 0.0));
        Ok(out)
    }

    /// `y = W_out z`
    pub fn apply_kl(&self, spec: &PortSpec, ext: &[C64]) -> Vec<C64> {
        mat_vec(&spec.w_out, &self.port_vector(ext))
    }

    /// Largest relative Green residual over random effort pairs.
    pub fn verify_green(&self, trials: usize, seed: u64, tol: f64) -> Result<f64, AssemblyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.layout.n_ext();
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let e1: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let e2: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let (lhs, rhs) = self.green_sides(&e1, &e2);
            let scale = self.norm(&self.jd.matvec(&e1)) * self.norm(&e2)
                + self.norm(&e1) * self.norm(&self.jd.matvec(&e2))
                + 2.0 * vnorm(&self.port_vector(&e1)) * vnorm(&self.port_vector(&e2));
            worst = worst.max((lhs - rhs).norm() / scale);
        }
        if worst > tol {
            return Err(AssemblyError::Green(worst));
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::coupling_map;
    use crate::geometry::{validate_geometry, CableSpec, CurveSpec, Domain, GeometrySpec};
    use crate::linalg::{cmat, identity, re, scaled};
    use crate::maxwell::build_grid;
    use crate::tline::{build_line_block, LineGrid, LineMaterials, MaterialField};

    fn node(k: usize, n: usize, lossy: bool) -> PhNode {
        let geo = validate_geometry(&GeometrySpec {
            domain: Domain { lo: [0.0; 3], hi: [1.0, 1.0, 1.4] },
            cables: vec![CableSpec {
                curve: CurveSpec::Segment { start: [0.5, 0.5, 0.2], end: [0.5, 0.5, 1.2] },
                radius: 0.2,
                length: None,
                line: None,
                frame_hint: None,
            }],
            collar: 0.4,
            n_eta: 32,
        })
        .unwrap();
        let grid = build_grid(&geo, [10, 10, 14]).unwrap();
        let t_map = coupling_map(&geo, &grid, k, n).unwrap();
        let l = cmat(k, k, |i, j| if i == j { re(1.0) } else { C64::new(0.2, 0.1 * (j as f64 - i as f64)) });
        let r = if lossy { scaled(&identity(k), re(0.1)) } else { CMat::zeros(k, k) };
        let mats = LineMaterials {
            l: MaterialField::Constant(l),
            c: MaterialField::Constant(scaled(&identity(k), re(2.0))),
            r: MaterialField::Constant(r.clone()),
            g: MaterialField::Constant(r),
        };
        let line = build_line_block(LineGrid::new(k, n).unwrap(), &mats).unwrap();
        let mut m = MaxwellMaterials::vacuum_like();
        if lossy {
            m.sigma = [0.05; 3];
        }
        assemble(line, Some(FieldPart { grid, materials: m, t_map }))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn green_identity_coupled() {
        let nd = node(2, 12, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let e1 = rand_vec(&mut rng, nd.layout.n_ext());
            let e2 = rand_vec(&mut rng, nd.layout.n_ext());
            let (lhs, rhs) = nd.green_sides(&e1, &e2);
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(rhs.norm()).max(1.0));
        }
    }

    #[test]
    fn hamiltonian_and_dissipation_are_hermitian() {
        let nd = node(2, 8, true);
        let (dh, dr) = nd.symmetry_defects();
        assert!(dh < 1e-14 && dr < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_vec(&mut rng, nd.layout.n_state);
        assert!(nd.energy(&x) > 0.0);
        assert!(nd.dissipation(&nd.effort(&x)) >= 0.0);
    }

    #[test]
    fn coupling_is_present() {
        let nd = node(1, 8, false);
        let l = nd.layout;
        let coupled = nd.jd.triplets().iter().any(|&(i, j, _)| i >= l.off_b && i < l.off_q && j >= l.off_q && j < l.off_d);
        assert!(coupled);
    }

    #[test]
    fn bare_line_layout() {
        let mats = LineMaterials {
            l: MaterialField::Constant(identity(1)),
            c: MaterialField::Constant(identity(1)),
            r: MaterialField::Constant(CMat::zeros(1, 1)),
            g: MaterialField::Constant(CMat::zeros(1, 1)),
        };
        let nd = assemble(build_line_block(LineGrid::new(1, 4).unwrap(), &mats).unwrap(), None);
        assert_eq!(nd.layout.n_state, 4 + 5);
        assert_eq!(nd.layout.n_ext(), 11);
        assert_eq!(nd.pi_h.nrows, 2);
    }

    fn unit_spec() -> PortSpec {
        // k = 1 with W_B = [I, I]: I_tot + (V(0), -V(1)) = (u, 0)
        let w = cmat(2, 4, |i, j| if j % 2 == i { re(1.0) } else { ZERO });
        let wo = cmat(2, 4, |i, j| if j == i + 2 { re(1.0) } else { ZERO });
        PortSpec::new(1, cmat(1, 4, |_, j| w[(0, j)]), cmat(1, 4, |_, j| w[(1, j)]), wo).unwrap()
    }

    fn bare(n: usize) -> PhNode {
        let mats = LineMaterials {
            l: MaterialField::Constant(identity(1)),
            c: MaterialField::Constant(identity(1)),
            r: MaterialField::Constant(CMat::zeros(1, 1)),
            g: MaterialField::Constant(CMat::zeros(1, 1)),
        };
        assemble(build_line_block(LineGrid::new(1, n).unwrap(), &mats).unwrap(), None)
    }

    #[test]
    fn apply_fg_domain_check() {
        let nd = bare(4);
        let spec = unit_spec();
        let zero = vec![ZERO; nd.layout.n_ext()];
        assert!(nd.apply_fg(&spec, &zero, &[ZERO], 1e-8).unwrap().iter().all(|v| *v == ZERO));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut e = rand_vec(&mut rng, nd.layout.n_ext());
        let z = nd.port_vector(&e);
        // make the W_B,0 row hold and read u from the input row
        let l = nd.layout;
        e[l.port(1, 0)] = -z[3];
        let z = nd.port_vector(&e);
        let u = z[0] + z[2];
        assert!(nd.apply_fg(&spec, &e, &[u], 1e-8).is_ok());
        assert!(matches!(nd.apply_fg(&spec, &e, &[u + re(1.0)], 1e-8), Err(AssemblyError::Domain { .. })));
    }

    #[test]
    fn apply_kl_reads_voltages() {
        let nd = bare(4);
        let spec = unit_spec();
        let mut e = vec![ZERO; nd.layout.n_ext()];
        e[nd.layout.q(0, 0)] = re(2.5);
        let y = nd.apply_kl(&spec, &e);
        assert_eq!(y[0], re(2.5));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (rand_vec(&mut rng, nd.layout.n_ext()), rand_vec(&mut rng, nd.layout.n_ext()));
        let s: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (ya, yb, ys) = (nd.apply_kl(&spec, &a), nd.apply_kl(&spec, &b), nd.apply_kl(&spec, &s));
        for i in 0..2 {
            assert!((ya[i] + yb[i] - ys[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn unit_hamiltonian_maps_ones_to_ones() {
        let nd = bare(6);
        let ones = vec![re(1.0); nd.layout.n_state];
        assert!(nd.effort(&ones).iter().all(|v| (*v - re(1.0)).norm() < 1e-15));
        assert!(nd.verify_green(20, 0, 1e-12).is_ok());
    }
}
