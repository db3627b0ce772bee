//! Yee grid on the domain box with staircased tubes and PEC walls.
//!
//! Edges carry `E`/`D` tangential components, faces carry `B`/`H` normal
//! components. All edge and face weights equal the cell volume, so the
//! discrete curl on faces is exactly the transpose of the curl on edges.

use crate::geometry::{Geometry, GeometryError, Region, Vec3};
use crate::linalg::{Sparse, C64};
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("cable {cable}: only {cells:.2} cells across the tube diameter (need at least 4)")]
    Resolution { cable: usize, cells: f64 },
    #[error("grid needs at least 2 cells per axis, got {0:?}")]
    TooSmall([usize; 3]),
    #[error("non-positive material parameter: {0}")]
    Material(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Free,
    /// Tangential field on the wall or a tube end cap, eliminated.
    Pec,
    /// On the staircased lateral surface of the given cable.
    Lateral(usize),
    /// Inside a tube.
    Solid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Field,
    Collar(usize),
    Tube(usize),
}

/// Per-axis constant permittivity, permeability and conductivity.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct MaxwellMaterials {
    pub eps: [f64; 3],
    pub mu: [f64; 3],
    #[serde(default)]
    pub sigma: [f64; 3],
}

impl MaxwellMaterials {
    pub fn vacuum_like() -> Self {
        MaxwellMaterials { eps: [1.0; 3], mu: [1.0; 3], sigma: [0.0; 3] }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        for a in 0..3 {
            if !(self.eps[a] > 0.0 && self.mu[a] > 0.0) {
                return Err(GridError::Material(format!("eps/mu axis {a}")));
            }
            if !(self.sigma[a] >= 0.0) {
                return Err(GridError::Material(format!("sigma axis {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct YeeGrid {
    pub dims: [usize; 3],
    pub lo: [f64; 3],
    pub h: [f64; 3],
    pub cells: Vec<CellKind>,
    pub edge_kind: Vec<EdgeKind>,
    pub free_edges: Vec<usize>,
    pub lat_edges: Vec<usize>,
    pub edge_free_slot: Vec<Option<usize>>,
    pub edge_lat_slot: Vec<Option<usize>>,
    pub active_faces: Vec<usize>,
    pub face_slot: Vec<Option<usize>>,
    edge_offset: [usize; 4],
    face_offset: [usize; 4],
}

fn cyc(a: usize) -> (usize, usize) {
    ((a + 1) % 3, (a + 2) % 3)
}

impl YeeGrid {
    fn edge_shape(dims: [usize; 3], a: usize) -> [usize; 3] {
        let mut s = [dims[0] + 1, dims[1] + 1, dims[2] + 1];
        s[a] = dims[a];
        s
    }

    fn face_shape(dims: [usize; 3], a: usize) -> [usize; 3] {
        let mut s = dims;
        s[a] = dims[a] + 1;
        s
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    pub fn n_edges(&self) -> usize {
        self.edge_offset[3]
    }

    pub fn n_faces(&self) -> usize {
        self.face_offset[3]
    }

    pub fn edge_id(&self, a: usize, idx: [i64; 3]) -> Option<usize> {
        let s = Self::edge_shape(self.dims, a);
        lin(idx, s).map(|l| self.edge_offset[a] + l)
    }

    pub fn face_id(&self, a: usize, idx: [i64; 3]) -> Option<usize> {
        let s = Self::face_shape(self.dims, a);
        lin(idx, s).map(|l| self.face_offset[a] + l)
    }

    pub fn cell_id(&self, idx: [i64; 3]) -> Option<usize> {
        lin(idx, self.dims)
    }

    /// Axis and lower node index of an edge.
    pub fn edge_index(&self, id: usize) -> (usize, [i64; 3]) {
        let a = (0..3).find(|&a| id < self.edge_offset[a + 1]).unwrap();
        (a, delin(id - self.edge_offset[a], Self::edge_shape(self.dims, a)))
    }

    pub fn face_index(&self, id: usize) -> (usize, [i64; 3]) {
        let a = (0..3).find(|&a| id < self.face_offset[a + 1]).unwrap();
        (a, delin(id - self.face_offset[a], Self::face_shape(self.dims, a)))
    }

    fn point(&self, idx: [f64; 3]) -> Vec3 {
        Vec3::new(
            self.lo[0] + idx[0] * self.h[0],
            self.lo[1] + idx[1] * self.h[1],
            self.lo[2] + idx[2] * self.h[2],
        )
    }

    pub fn edge_midpoint(&self, id: usize) -> Vec3 {
        let (a, i) = self.edge_index(id);
        let mut f = [i[0] as f64, i[1] as f64, i[2] as f64];
        f[a] += 0.5;
        self.point(f)
    }

    pub fn face_center(&self, id: usize) -> Vec3 {
        let (a, i) = self.face_index(id);
        let mut f = [i[0] as f64 + 0.5, i[1] as f64 + 0.5, i[2] as f64 + 0.5];
        f[a] -= 0.5;
        self.point(f)
    }

    pub fn cell_center(&self, idx: [i64; 3]) -> Vec3 {
        self.point([idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5])
    }

    fn cell(&self, idx: [i64; 3]) -> Option<CellKind> {
        self.cell_id(idx).map(|c| self.cells[c])
    }

    /// The up to four cells sharing an edge; `None` marks a cell outside the box.
    pub fn edge_cells(&self, id: usize) -> [Option<[i64; 3]>; 4] {
        let (a, i) = self.edge_index(id);
        let (b, c) = cyc(a);
        let mut out = [None; 4];
        for (n, (db, dc)) in [(0, 0), (-1, 0), (0, -1), (-1, -1)].into_iter().enumerate() {
            let mut j = i;
            j[b] += db;
            j[c] += dc;
            out[n] = self.cell_id(j).map(|_| j);
        }
        out
    }

    /// Signed edges bounding a face: `(edge id, coefficient)` of the curl row.
    pub fn face_edges(&self, id: usize) -> [(usize, f64); 4] {
        let (a, i) = self.face_index(id);
        let (b, c) = cyc(a);
        let shift = |d: usize| {
            let mut j = i;
            j[d] += 1;
            j
        };
        [
            (self.edge_id(c, shift(b)).unwrap(), 1.0 / self.h[b]),
            (self.edge_id(c, i).unwrap(), -1.0 / self.h[b]),
            (self.edge_id(b, shift(c)).unwrap(), -1.0 / self.h[c]),
            (self.edge_id(b, i).unwrap(), 1.0 / self.h[c]),
        ]
    }

    /// Curl from all edges to active faces.
    pub fn curl(&self) -> Sparse {
        let mut t = vec![];
        for (row, &f) in self.active_faces.iter().enumerate() {
            for (e, v) in self.face_edges(f) {
                t.push((row, e, C64::new(v, 0.0)));
            }
        }
        Sparse::from_triplets(self.active_faces.len(), self.n_edges(), &t)
    }

    /// Columns of `curl` restricted to the free edges and to the lateral edges.
    pub fn curl_split(&self) -> (Sparse, Sparse) {
        let c = self.curl();
        let (mut tf, mut tl) = (vec![], vec![]);
        for (i, e, v) in c.triplets() {
            if let Some(s) = self.edge_free_slot[e] {
                tf.push((i, s, v));
            } else if let Some(s) = self.edge_lat_slot[e] {
                tl.push((i, s, v));
            }
        }
        (
            Sparse::from_triplets(c.nrows, self.free_edges.len(), &tf),
            Sparse::from_triplets(c.nrows, self.lat_edges.len(), &tl),
        )
    }

    /// Hodge diagonals: `1/mu` per active face and `1/eps` per free edge.
    pub fn hodge(&self, m: &MaxwellMaterials) -> (Vec<f64>, Vec<f64>) {
        let hb = self.active_faces.iter().map(|&f| 1.0 / m.mu[self.face_index(f).0]).collect();
        let hd = self.free_edges.iter().map(|&e| 1.0 / m.eps[self.edge_index(e).0]).collect();
        (hb, hd)
    }

    pub fn conductivity(&self, m: &MaxwellMaterials) -> Vec<f64> {
        self.free_edges.iter().map(|&e| m.sigma[self.edge_index(e).0]).collect()
    }

    /// Sparse trace operators onto the tube surface samples.
    ///
    /// `r_tan` maps all edge values (global ids) to `(I - nu nu^T) E` at each
    /// sample, `r_nu` maps active-face values to `nu x H`. Three rows per sample.
    pub fn surface_trace(&self, points: &[(Vec3, Vec3)]) -> (Sparse, Sparse) {
        let (mut tt, mut tn) = (vec![], vec![]);
        for (q, (p, nu)) in points.iter().enumerate() {
            for a in 0..3 {
                let we = self.interp_weights(p, a, true);
                let wf = self.interp_weights(p, a, false);
                for b in 0..3 {
                    // (I - nu nu^T)_{ba}
                    let proj = if a == b { 1.0 } else { 0.0 } - nu[b] * nu[a];
                    for &(e, w) in &we {
                        if proj != 0.0 {
                            tt.push((3 * q + b, e, C64::new(proj * w, 0.0)));
                        }
                    }
                    // (nu x H)_b = eps_{bca} nu_c H_a
                    let (b1, b2) = cyc(b);
                    let cross = if a == b2 {
                        nu[b1]
                    } else if a == b1 {
                        -nu[b2]
                    } else {
                        0.0
                    };
                    for &(f, w) in &wf {
                        if cross != 0.0 {
                            tn.push((3 * q + b, self.face_slot[f].unwrap(), C64::new(cross * w, 0.0)));
                        }
                    }
                }
            }
        }
        (
            Sparse::from_triplets(3 * points.len(), self.n_edges(), &tt),
            Sparse::from_triplets(3 * points.len(), self.active_faces.len(), &tn),
        )
    }

    /// Interpolation weights for component `a` at `p` from edges or active faces.
    /// Trilinear when the full stencil is available, affine least squares otherwise.
    fn interp_weights(&self, p: &Vec3, a: usize, edges: bool) -> Vec<(usize, f64)> {
        // Sample lattice offset for this component.
        let mut off = [0.0; 3];
        if edges {
            off[a] = 0.5;
        } else {
            off = [0.5; 3];
            off[a] = 0.0;
        }
        let frac: Vec<f64> = (0..3).map(|d| (p[d] - self.lo[d]) / self.h[d] - off[d]).collect();
        let base: Vec<i64> = frac.iter().map(|f| f.floor() as i64).collect();
        let sample = |idx: [i64; 3]| -> Option<usize> {
            if edges {
                let id = self.edge_id(a, idx)?;
                (self.edge_kind[id] != EdgeKind::Solid).then_some(id)
            } else {
                let id = self.face_id(a, idx)?;
                self.face_slot[id].map(|_| id)
            }
        };
        let pos = |idx: [i64; 3]| -> [f64; 3] { [idx[0] as f64 - frac[0], idx[1] as f64 - frac[1], idx[2] as f64 - frac[2]] };
        let mut corners = vec![];
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let idx = [base[0] + dx, base[1] + dy, base[2] + dz];
                    corners.push((idx, sample(idx)));
                }
            }
        }
        if corners.iter().all(|c| c.1.is_some()) {
            return corners
                .iter()
                .map(|(idx, id)| {
                    let d = pos(*idx);
                    let w: f64 = (0..3).map(|k| 1.0 - d[k].abs()).product();
                    (id.unwrap(), w)
                })
                .collect();
        }
        for ring in 1..4i64 {
            let mut pts = vec![];
            for dz in -(ring - 1)..=ring {
                for dy in -(ring - 1)..=ring {
                    for dx in -(ring - 1)..=ring {
                        let idx = [base[0] + dx, base[1] + dy, base[2] + dz];
                        if let Some(id) = sample(idx) {
                            pts.push((id, pos(idx)));
                        }
                    }
                }
            }
            if let Some(w) = affine_weights(&pts) {
                return w;
            }
        }
        vec![]
    }
}

/// Weights `w` with `sum w_i f(x_i) = f(0)` for every affine `f`, distance weighted.
fn affine_weights(pts: &[(usize, [f64; 3])]) -> Option<Vec<(usize, f64)>> {
    if pts.len() < 4 {
        return None;
    }
    let mut ata = Matrix4::<f64>::zeros();
    let rows: Vec<(Vector4<f64>, f64)> = pts
        .iter()
        .map(|(_, x)| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            (Vector4::new(1.0, x[0], x[1], x[2]), 1.0 / (1.0 + r2))
        })
        .collect();
    for (r, w) in &rows {
        ata += r * r.transpose() * *w;
    }
    let sv = ata.singular_values();
    if sv.min() < 1e-10 * sv.max() {
        return None;
    }
    let inv = ata.try_inverse()?;
    let e1 = inv.column(0).into_owned();
    Some(pts.iter().zip(&rows).map(|((id, _), (r, w))| (*id, r.dot(&e1) * w)).collect())
}

fn lin(idx: [i64; 3], s: [usize; 3]) -> Option<usize> {
    if (0..3).any(|d| idx[d] < 0 || idx[d] >= s[d] as i64) {
        return None;
    }
    Some(idx[0] as usize + s[0] * (idx[1] as usize + s[1] * idx[2] as usize))
}

fn delin(l: usize, s: [usize; 3]) -> [i64; 3] {
    [(l % s[0]) as i64, ((l / s[0]) % s[1]) as i64, (l / (s[0] * s[1])) as i64]
}

/// Builds the staircased Yee grid for `dims` cells on the geometry's domain.
pub fn build_grid(geo: &Geometry, dims: [usize; 3]) -> Result<YeeGrid, GridError> {
    if dims.iter().any(|&d| d < 2) {
        return Err(GridError::TooSmall(dims));
    }
    let d = &geo.domain;
    let h = [
        (d.hi[0] - d.lo[0]) / dims[0] as f64,
        (d.hi[1] - d.lo[1]) / dims[1] as f64,
        (d.hi[2] - d.lo[2]) / dims[2] as f64,
    ];
    let hmax = h.iter().cloned().fold(0.0, f64::max);
    for (i, c) in geo.cables.iter().enumerate() {
        let cells = 2.0 * c.radius / hmax;
        if cells < 4.0 - 1e-12 {
            return Err(GridError::Resolution { cable: i, cells });
        }
    }
    let mut edge_offset = [0; 4];
    let mut face_offset = [0; 4];
    for a in 0..3 {
        edge_offset[a + 1] = edge_offset[a] + YeeGrid::edge_shape(dims, a).iter().product::<usize>();
        face_offset[a + 1] = face_offset[a] + YeeGrid::face_shape(dims, a).iter().product::<usize>();
    }
    let mut g = YeeGrid {
        dims,
        lo: d.lo,
        h,
        cells: vec![],
        edge_kind: vec![],
        free_edges: vec![],
        lat_edges: vec![],
        edge_free_slot: vec![],
        edge_lat_slot: vec![],
        active_faces: vec![],
        face_slot: vec![],
        edge_offset,
        face_offset,
    };
    let n_cells = dims.iter().product::<usize>();
    let mut cells = Vec::with_capacity(n_cells);
    for l in 0..n_cells {
        let idx = delin(l, dims);
        let p = g.cell_center(idx);
        let kind = match geo.inside_tube(&p)? {
            Some(i) => CellKind::Tube(i),
            None => match geo.classify_point(&p)? {
                Region::Collar { cable, .. } => CellKind::Collar(cable),
                _ => CellKind::Field,
            },
        };
        cells.push(kind);
    }
    g.cells = cells;

    let n_edges = g.n_edges();
    let mut kinds = Vec::with_capacity(n_edges);
    for e in 0..n_edges {
        let nb = g.edge_cells(e);
        if nb.iter().any(|c| c.is_none()) {
            kinds.push(EdgeKind::Pec);
            continue;
        }
        let nb: Vec<[i64; 3]> = nb.iter().map(|c| c.unwrap()).collect();
        let solid: Vec<usize> = nb
            .iter()
            .filter_map(|&c| match g.cell(c) {
                Some(CellKind::Tube(i)) => Some(i),
                _ => None,
            })
            .collect();
        if solid.is_empty() {
            kinds.push(EdgeKind::Free);
        } else if solid.len() == 4 {
            kinds.push(EdgeKind::Solid);
        } else {
            // Lateral unless a fluid neighbour sits beyond a cable end.
            let cable = solid[0];
            let mut beyond = false;
            for &c in &nb {
                if matches!(g.cell(c), Some(CellKind::Tube(_))) {
                    continue;
                }
                let p = g.cell_center(c);
                if geo.cables[cable].project(&p, 0.0, 1.0, cable)?.is_none() {
                    beyond = true;
                }
            }
            kinds.push(if beyond || solid.iter().any(|&s| s != cable) { EdgeKind::Pec } else { EdgeKind::Lateral(cable) });
        }
    }
    g.edge_free_slot = vec![None; n_edges];
    g.edge_lat_slot = vec![None; n_edges];
    for (e, k) in kinds.iter().enumerate() {
        match k {
            EdgeKind::Free => {
                g.edge_free_slot[e] = Some(g.free_edges.len());
                g.free_edges.push(e);
            }
            EdgeKind::Lateral(_) => {
                g.edge_lat_slot[e] = Some(g.lat_edges.len());
                g.lat_edges.push(e);
            }
            _ => {}
        }
    }
    g.edge_kind = kinds;

    let n_faces = g.n_faces();
    g.face_slot = vec![None; n_faces];
    for f in 0..n_faces {
        let (a, i) = g.face_index(f);
        let mut below = i;
        below[a] -= 1;
        let fluid = [i, below].iter().any(|&c| matches!(g.cell(c), Some(CellKind::Field) | Some(CellKind::Collar(_))));
        let driven = g
            .face_edges(f)
            .iter()
            .any(|&(e, _)| matches!(g.edge_kind[e], EdgeKind::Free | EdgeKind::Lateral(_)));
        if fluid && driven {
            g.face_slot[f] = Some(g.active_faces.len());
            g.active_faces.push(f);
        }
    }
    Ok(g)
}
