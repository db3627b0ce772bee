//! Thin layer over faer: a CSR matrix type used during assembly and a few
//! dense helpers for the small boundary matrices.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use num_complex::Complex64;
use std::io::Write;

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Compressed sparse row matrix with complex entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Sparse {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<C64>,
}

impl Sparse {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Sparse { nrows, ncols, indptr: vec![0; nrows + 1], indices: vec![], data: vec![] }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, ONE)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn diag(d: &[C64]) -> Self {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &t)
    }

    /// Duplicates are summed; entries that sum to exactly zero are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, trips: &[(usize, usize, C64)]) -> Self {
        let mut t: Vec<(usize, usize, C64)> = trips.to_vec();
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut data: Vec<C64> = Vec::with_capacity(t.len());
        let mut rows = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds {nrows}x{ncols}");
            if let (Some(&lr), Some(&lc)) = (rows.last(), indices.last()) {
                if lr == r && lc == c {
                    *data.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            indices.push(c);
            data.push(v);
        }
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_idx = Vec::with_capacity(rows.len());
        let mut keep_dat = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(indices).zip(data) {
            if v != ZERO {
                keep_rows.push(r);
                keep_idx.push(c);
                keep_dat.push(v);
            }
        }
        for &r in &keep_rows {
            indptr[r + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Sparse { nrows, ncols, indptr, indices: keep_idx, data: keep_dat }
    }

    pub fn from_dense(a: &CMat) -> Self {
        let mut t = vec![];
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                t.push((i, j, a[(i, j)]));
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &t)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, C64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out.push((i, j, v));
            }
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(ZERO)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.nrows];
        self.matvec_acc(x, &mut y, ONE);
        y
    }

    /// y += alpha * A x
    pub fn matvec_acc(&self, x: &[C64], y: &mut [C64], alpha: C64) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = ZERO;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            *yi += alpha * s;
        }
    }

    pub fn adjoint(&self) -> Sparse {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v.conj())).collect();
        Sparse::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn transpose(&self) -> Sparse {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Sparse::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scale(&self, a: C64) -> Sparse {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= a);
        out
    }

    pub fn scale_rows(&self, d: &[f64]) -> Sparse {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.data[k] *= d[i];
            }
        }
        out
    }

    pub fn mul(&self, b: &Sparse) -> Sparse {
        assert_eq!(self.ncols, b.nrows);
        let mut t = Vec::new();
        let mut acc = vec![ZERO; b.ncols];
        let mut mark = vec![usize::MAX; b.ncols];
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, v) in b.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = ZERO;
                        cols.push(j);
                    }
                    acc[j] += a * v;
                }
            }
            for &j in &cols {
                t.push((i, j, acc[j]));
            }
        }
        Sparse::from_triplets(self.nrows, b.ncols, &t)
    }

    pub fn add(&self, b: &Sparse, alpha: C64) -> Sparse {
        assert_eq!((self.nrows, self.ncols), (b.nrows, b.ncols));
        let mut t = self.triplets();
        t.extend(b.triplets().into_iter().map(|(i, j, v)| (i, j, alpha * v)));
        Sparse::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Columns `start..start+len` as a new matrix.
    pub fn col_block(&self, start: usize, len: usize) -> Sparse {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .filter(|&(_, j, _)| j >= start && j < start + len)
            .map(|(i, j, v)| (i, j - start, v))
            .collect();
        Sparse::from_triplets(self.nrows, len, &t)
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn to_faer(&self) -> SparseColMat<usize, C64> {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t).expect("valid triplets")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn write_matrix_market(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "%%MatrixMarket matrix coordinate complex general")?;
        writeln!(f, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(f, "{} {} {:.17e} {:.17e}", i + 1, j + 1, v.re, v.im)?;
        }
        Ok(())
    }
}

/// Factored sparse system.
pub struct SparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, C64>,
    n: usize,
}

impl SparseLu {
    pub fn new(a: &Sparse) -> Option<Self> {
        assert_eq!(a.nrows, a.ncols);
        let lu = a.to_faer().sp_lu().ok()?;
        Some(SparseLu { lu, n: a.nrows })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut m = CMat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    pub fn solve_mat(&self, b: &mut CMat) {
        self.lu.solve_in_place(b.as_mut());
    }
}

pub fn cmat(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> CMat {
    CMat::from_fn(rows, cols, f)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn scaled(a: &CMat, s: C64) -> CMat {
    cmat(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn fro_norm(a: &CMat) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return vec![];
    }
    a.singular_values().expect("svd converged")
}

pub fn norm2(a: &CMat) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

pub fn cond2(a: &CMat) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Full SVD: returns (U, s, V) with A = U diag(s) V^H.
pub fn svd(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let d = a.svd().expect("svd converged");
    let s = d.S().column_vector().iter().map(|v| v.re).collect();
    (d.U().to_owned(), s, d.V().to_owned())
}

/// Eigen-decomposition of the Hermitian part of `a`; ascending eigenvalues.
pub fn herm_eig(a: &CMat) -> (Vec<f64>, CMat) {
    let h = hermitian_part(a);
    let e = h.self_adjoint_eigen(Side::Lower).expect("hermitian eigen converged");
    let vals = e.S().column_vector().iter().map(|v| v.re).collect();
    (vals, e.U().to_owned())
}

pub fn herm_eigvals(a: &CMat) -> Vec<f64> {
    herm_eig(a).0
}

pub fn hermitian_part(a: &CMat) -> CMat {
    let n = a.nrows();
    cmat(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

pub fn eigvals(a: &CMat) -> Vec<C64> {
    if a.nrows() == 0 {
        return vec![];
    }
    a.eigenvalues().expect("eigenvalues converged")
}

pub fn inverse(a: &CMat) -> Option<CMat> {
    let n = a.nrows();
    if n == 0 {
        return Some(CMat::zeros(0, 0));
    }
    let s = singular_values(a);
    if s[n - 1] <= 1e-14 * s[0] {
        return None;
    }
    let lu = a.partial_piv_lu();
    let mut inv = identity(n);
    lu.solve_in_place(inv.as_mut());
    Some(inv)
}

/// Orthonormal basis of the null space (columns), using relative tolerance.
pub fn null_space(a: &CMat, rtol: f64) -> CMat {
    let n = a.ncols();
    if a.nrows() == 0 {
        return identity(n);
    }
    let (_, s, v) = svd(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&x| x > rtol * smax.max(f64::MIN_POSITIVE)).count();
    cmat(n, n - rank, |i, j| v[(i, rank + j)])
}

pub fn rank(a: &CMat, rtol: f64) -> usize {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rtol * smax).count()
}

pub fn hstack(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.nrows(), b.nrows());
    let na = a.ncols();
    cmat(a.nrows(), na + b.ncols(), |i, j| if j < na { a[(i, j)] } else { b[(i, j - na)] })
}

pub fn vstack(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.ncols());
    let ma = a.nrows();
    cmat(ma + b.nrows(), a.ncols(), |i, j| if i < ma { a[(i, j)] } else { b[(i - ma, j)] })
}

pub fn block(a: &CMat, r0: usize, c0: usize, nr: usize, nc: usize) -> CMat {
    cmat(nr, nc, |i, j| a[(r0 + i, c0 + j)])
}

pub fn mat_vec(a: &CMat, x: &[C64]) -> Vec<C64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    // <a, b> = sum a_i conj(b_i)
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub fn wdot(w: &[f64], a: &[C64], b: &[C64]) -> C64 {
    w.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| x * y.conj() * *w).sum()
}

pub fn vnorm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let s = Sparse::from_triplets(2, 2, &[(0, 0, re(1.0)), (0, 0, re(2.0)), (1, 1, re(1.0)), (1, 1, re(-1.0))]);
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.get(0, 0), re(3.0));
    }

    #[test]
    fn sparse_product_matches_dense() {
        let a = Sparse::from_triplets(2, 3, &[(0, 0, re(1.0)), (0, 2, C64::new(0.0, 2.0)), (1, 1, re(3.0))]);
        let b = Sparse::from_triplets(3, 2, &[(0, 1, re(1.0)), (2, 0, re(1.0)), (1, 0, re(-1.0))]);
        let c = a.mul(&b).to_dense();
        let d = &a.to_dense() * &b.to_dense();
        assert!(fro_norm(&(&c - &d)) < 1e-15);
    }

    #[test]
    fn sparse_lu_solves() {
        let a = Sparse::from_triplets(3, 3, &[(0, 0, re(2.0)), (1, 1, C64::new(1.0, 1.0)), (2, 2, re(4.0)), (0, 2, re(1.0))]);
        let lu = SparseLu::new(&a).unwrap();
        let x = vec![re(1.0), C64::new(0.0, 1.0), re(-2.0)];
        let b = a.matvec(&x);
        let y = lu.solve(&b);
        assert!(y.iter().zip(&x).all(|(p, q)| (p - q).norm() < 1e-14));
    }

    #[test]
    fn null_space_is_orthogonal_to_rows() {
        let a = cmat(1, 3, |_, j| re(j as f64 + 1.0));
        let n = null_space(&a, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!(fro_norm(&(&a * &n)) < 1e-13);
    }
}
