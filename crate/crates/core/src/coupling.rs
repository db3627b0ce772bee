//! Line/field coupling: the electric lift `P_el`, its magnetic counterpart
//! `P_mag`, the collar extension of the line voltage and the discrete map
//! from nodal voltages to prescribed lateral edge fields.

use crate::geometry::{Geometry, GeometryError, TubeChart, Vec3};
use crate::linalg::{Sparse, C64, ZERO};
use crate::maxwell::{EdgeKind, YeeGrid};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("cable {cable}: collar thickness {thickness:.3e} is below two grid cells ({min:.3e})")]
    CollarUnderresolved { cable: usize, thickness: f64, min: f64 },
    #[error("chart has {n_eta} rings, not a multiple of {cells} line cells")]
    ChartMismatch { n_eta: usize, cells: usize },
    #[error("input has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PmagMode {
    /// Weighted adjoint of `P_el` under the surface and line quadratures.
    Adjoint,
    /// Loop integral of `g x nu` on the ring through each cell midpoint.
    Quadrature,
}

fn rings_per_cell(chart: &TubeChart, n_cells: usize) -> Result<usize, CouplingError> {
    if n_cells == 0 || chart.n_eta % n_cells != 0 {
        return Err(CouplingError::ChartMismatch { n_eta: chart.n_eta, cells: n_cells });
    }
    Ok(chart.n_eta / n_cells)
}

/// Tangential surface field `A (A^T A)^{-1} (f, 0)` from cell-wise `f = dV/deta`.
/// Output holds three components per chart point.
pub fn pel(chart: &TubeChart, f: &[C64]) -> Result<Vec<C64>, CouplingError> {
    let rpc = rings_per_cell(chart, f.len())?;
    let mut out = vec![ZERO; 3 * chart.points.len()];
    for (q, sp) in chart.points.iter().enumerate() {
        let c = (q / chart.n_theta) / rpc;
        for b in 0..3 {
            out[3 * q + b] = f[c] * sp.dual_eta[b];
        }
    }
    Ok(out)
}

/// Cell-wise current from a tangential surface field `g` (three components per point).
pub fn pmag(chart: &TubeChart, g: &[C64], n_cells: usize, mode: PmagMode) -> Result<Vec<C64>, CouplingError> {
    let rpc = rings_per_cell(chart, n_cells)?;
    if g.len() != 3 * chart.points.len() {
        return Err(CouplingError::Length { got: g.len(), expected: 3 * chart.points.len() });
    }
    let gv = |q: usize| -> [C64; 3] { [g[3 * q], g[3 * q + 1], g[3 * q + 2]] };
    let h = 1.0 / n_cells as f64;
    let mut out = vec![ZERO; n_cells];
    match mode {
        PmagMode::Adjoint => {
            for (q, sp) in chart.points.iter().enumerate() {
                let c = (q / chart.n_theta) / rpc;
                let v = gv(q);
                let dot: C64 = (0..3).map(|b| v[b] * sp.dual_eta[b]).sum();
                out[c] += dot * (sp.weight / h);
            }
        }
        PmagMode::Quadrature => {
            let dth = 2.0 * std::f64::consts::PI / chart.n_theta as f64;
            // Right-handed loop about the tangent runs towards decreasing theta.
            let ring_integral = |ring: usize| -> C64 {
                let mut s = ZERO;
                for m in 0..chart.n_theta {
                    let q = ring * chart.n_theta + m;
                    let sp = &chart.points[q];
                    let v = gv(q);
                    let nu = sp.normal;
                    let ds = -sp.d_theta * dth;
                    // (g x nu) . ds
                    let cx = [v[1] * nu[2] - v[2] * nu[1], v[2] * nu[0] - v[0] * nu[2], v[0] * nu[1] - v[1] * nu[0]];
                    s += cx[0] * ds[0] + cx[1] * ds[1] + cx[2] * ds[2];
                }
                s
            };
            for (c, o) in out.iter_mut().enumerate() {
                *o = if rpc % 2 == 1 {
                    ring_integral(c * rpc + rpc / 2)
                } else {
                    (ring_integral(c * rpc + rpc / 2 - 1) + ring_integral(c * rpc + rpc / 2)) * 0.5
                };
            }
        }
    }
    Ok(out)
}

/// C^2 cut-off: 1 for `|s| <= eps/3`, 0 for `|s| >= 2 eps/3`.
pub fn cutoff(s: f64, eps: f64) -> f64 {
    let a = s.abs();
    if a <= eps / 3.0 {
        1.0
    } else if a >= 2.0 * eps / 3.0 {
        0.0
    } else {
        let x = (2.0 * eps / 3.0 - a) / (eps / 3.0);
        x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

/// Cell gradients `(V_{c+1} - V_c) / h` of nodal values on a uniform grid of `[0,1]`.
pub fn cell_gradient(v_nodes: &[C64]) -> Vec<C64> {
    let n = v_nodes.len() - 1;
    v_nodes.windows(2).map(|w| (w[1] - w[0]) * n as f64).collect()
}

fn grad_eta(geo: &Geometry, cable: usize, eta: f64, theta: f64, s: f64) -> Vec3 {
    let (_, j) = geo.cables[cable].collar_map(eta, theta, s);
    let inv = j.try_inverse().expect("collar map is a local diffeomorphism");
    inv.row(0).transpose()
}

/// Edge values of `chi * grad(V o Psi)` for every non-solid edge (global ids).
///
/// `voltages[i]` are the nodal voltages of cable `i`'s line.
pub fn lift_voltage(geo: &Geometry, grid: &YeeGrid, voltages: &[Vec<C64>]) -> Result<Vec<C64>, CouplingError> {
    let eps = geo.collar;
    let hmax = grid.h.iter().cloned().fold(0.0, f64::max);
    for (i, c) in geo.cables.iter().enumerate() {
        let thickness = 2.0 * eps * c.radius;
        if thickness < 2.0 * hmax {
            return Err(CouplingError::CollarUnderresolved { cable: i, thickness, min: 2.0 * hmax });
        }
    }
    let mut out = vec![ZERO; grid.n_edges()];
    for e in 0..grid.n_edges() {
        if matches!(grid.edge_kind[e], EdgeKind::Solid | EdgeKind::Pec) {
            continue;
        }
        let p = grid.edge_midpoint(e);
        let (axis, _) = grid.edge_index(e);
        for (i, c) in geo.cables.iter().enumerate() {
            let Some(cc) = c.collar_coords(&p, eps, i)? else { continue };
            if cc.s.abs() >= eps || !(0.0..=1.0).contains(&cc.eta) {
                continue;
            }
            let f = cell_gradient(&voltages[i]);
            let n = f.len();
            let cell = ((cc.eta * n as f64).floor() as usize).min(n - 1);
            let g = grad_eta(geo, i, cc.eta, cc.theta, cc.s);
            out[e] += f[cell] * (cutoff(cc.s, eps) * g[axis]);
        }
    }
    Ok(out)
}

/// Map from line node voltages (all `k` lines, node-major) to lateral edge values.
///
/// Each lateral edge takes the tangential `P_el` field of its cable evaluated at
/// the surface point closest to the edge midpoint, projected on the edge direction.
pub fn coupling_map(geo: &Geometry, grid: &YeeGrid, k: usize, n: usize) -> Result<Sparse, CouplingError> {
    let mut t = vec![];
    let nf = n as f64;
    for (slot, &e) in grid.lat_edges.iter().enumerate() {
        let EdgeKind::Lateral(ci) = grid.edge_kind[e] else { unreachable!() };
        let cable = &geo.cables[ci];
        let p = grid.edge_midpoint(e);
        let (axis, _) = grid.edge_index(e);
        let eta = cable.project(&p, 0.0, 1.0, ci)?.unwrap_or_else(|| {
            // Endpoint projection: use the nearer end.
            let d0 = (cable.curve.eval(0.0).0 - p).norm();
            let d1 = (cable.curve.eval(1.0).0 - p).norm();
            if d0 < d1 { 0.0 } else { 1.0 }
        });
        let (a, _, _) = cable.curve.eval(eta);
        let fr = cable.frame_at(eta);
        let d = p - a;
        let theta = d.dot(&fr.k1).atan2(d.dot(&fr.k2));
        let sp = cable.surface_point(eta, theta);
        let w = sp.dual_eta[axis];
        let cell = ((eta * nf).floor() as usize).min(n - 1);
        let line = cable.line;
        // (V_{c+1} - V_c) * n
        t.push((slot, (cell + 1) * k + line, C64::new(w * nf, 0.0)));
        t.push((slot, cell * k + line, C64::new(-w * nf, 0.0)));
    }
    Ok(Sparse::from_triplets(grid.lat_edges.len(), (n + 1) * k, &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{validate_geometry, CableSpec, CurveSpec, Domain, GeometrySpec};
    use crate::linalg::re;
    use crate::maxwell::build_grid;
    use std::f64::consts::PI;

    fn cyl(r: f64, l: f64) -> Geometry {
        validate_geometry(&GeometrySpec {
            domain: Domain { lo: [-1.0, -1.0, -0.5], hi: [1.0, 1.0, l + 0.5] },
            cables: vec![CableSpec {
                curve: CurveSpec::Segment { start: [0.0, 0.0, 0.0], end: [0.0, 0.0, l] },
                radius: r,
                length: None,
                line: None,
                frame_hint: None,
            }],
            collar: 0.5,
            n_eta: 64,
        })
        .unwrap()
    }

    fn bent() -> Geometry {
        validate_geometry(&GeometrySpec {
            domain: Domain { lo: [-3.0; 3], hi: [3.0; 3] },
            cables: vec![CableSpec {
                curve: CurveSpec::Arc { center: [0.0; 3], start: [1.0, 0.0, 0.0], normal: [0.0, 0.3, 1.0], sweep: 1.8 },
                radius: 0.2,
                length: None,
                line: None,
                frame_hint: None,
            }],
            collar: 0.3,
            n_eta: 256,
        })
        .unwrap()
    }

    #[test]
    fn pel_on_straight_cylinder_is_axial() {
        let (r, l) = (0.1, 2.0);
        let g = cyl(r, l);
        let ch = g.tube_chart(0, 8, 12);
        let f = vec![re(3.0); 8];
        let out = pel(&ch, &f).unwrap();
        for q in 0..ch.points.len() {
            assert!((out[3 * q + 2] - re(3.0 / l)).norm() < 1e-14);
            assert!(out[3 * q].norm() < 1e-14 && out[3 * q + 1].norm() < 1e-14);
        }
    }

    #[test]
    fn pmag_of_axial_field_is_circumference() {
        let (r, l) = (0.1, 2.0);
        let g = cyl(r, l);
        let ch = g.tube_chart(0, 12, 12);
        let hz = 0.7;
        let field: Vec<C64> = ch.points.iter().flat_map(|_| [re(0.0), re(0.0), re(hz)]).collect();
        for mode in [PmagMode::Adjoint, PmagMode::Quadrature] {
            let out = pmag(&ch, &field, 12, mode).unwrap();
            for v in out {
                assert!((v - re(2.0 * PI * r * hz)).norm() < 1e-12, "{mode:?}");
            }
        }
    }

    #[test]
    fn azimuthal_field_carries_no_current() {
        let g = cyl(0.1, 2.0);
        let ch = g.tube_chart(0, 6, 16);
        let field: Vec<C64> = ch.points.iter().flat_map(|sp| {
            let u = sp.d_theta.normalize();
            [re(u.x), re(u.y), re(u.z)]
        }).collect();
        let out = pmag(&ch, &field, 6, PmagMode::Quadrature).unwrap();
        assert!(out.iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn pmag_adjoint_identity_on_bent_cable() {
        let g = bent();
        let n = 10;
        let ch = g.tube_chart(0, 3 * n, 16);
        let f: Vec<C64> = (0..n).map(|c| C64::new((c as f64).sin(), 0.3 * c as f64)).collect();
        let gs: Vec<C64> = (0..3 * ch.points.len()).map(|i| C64::new((0.1 * i as f64).cos(), (0.07 * i as f64).sin())).collect();
        let lhs: C64 = pel(&ch, &f)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, v)| v * gs[i].conj() * ch.points[i / 3].weight)
            .sum();
        let pm = pmag(&ch, &gs, n, PmagMode::Adjoint).unwrap();
        let rhs: C64 = f.iter().zip(&pm).map(|(a, b)| a * b.conj() / n as f64).sum();
        assert!((lhs - rhs).norm() < 1e-13 * lhs.norm().max(1.0));
    }

    #[test]
    fn cutoff_profile() {
        let eps = 0.6;
        assert_eq!(cutoff(0.1, eps), 1.0);
        assert_eq!(cutoff(-0.45, eps), 0.0);
        let mid = cutoff(0.3, eps);
        assert!(mid > 0.0 && mid < 1.0);
        // C^1 at the junctions.
        let h = 1e-6;
        assert!(((cutoff(0.2 + h, eps) - cutoff(0.2, eps)) / h).abs() < 1e-4);
        assert!(((cutoff(0.4 - h, eps) - cutoff(0.4, eps)) / h).abs() < 1e-4);
    }

    fn grid_geo() -> Geometry {
        grid_geo_with(0.5)
    }

    fn grid_geo_with(collar: f64) -> Geometry {
        validate_geometry(&GeometrySpec {
            domain: Domain { lo: [0.0; 3], hi: [1.0, 1.0, 1.4] },
            cables: vec![CableSpec {
                curve: CurveSpec::Segment { start: [0.5, 0.5, 0.2], end: [0.5, 0.5, 1.2] },
                radius: 0.2,
                length: None,
                line: None,
                frame_hint: None,
            }],
            collar,
            n_eta: 32,
        })
        .unwrap()
    }

    #[test]
    fn lift_of_linear_voltage_is_axial() {
        let geo = grid_geo();
        let grid = build_grid(&geo, [10, 10, 14]).unwrap();
        let n = 8;
        let v: Vec<C64> = (0..=n).map(|j| re(j as f64 / n as f64)).collect();
        let lift = lift_voltage(&geo, &grid, &[v]).unwrap();
        let l = 1.0;
        let mut checked = 0;
        for e in 0..grid.n_edges() {
            let (axis, _) = grid.edge_index(e);
            let p = grid.edge_midpoint(e);
            if let Some(cc) = geo.cables[0].collar_coords(&p, 0.5, 0).unwrap() {
                if cc.s.abs() < 0.5 / 3.0 && cc.eta > 0.0 && cc.eta < 1.0 && grid.edge_kind[e] != EdgeKind::Solid {
                    let expect = if axis == 2 { 1.0 / l } else { 0.0 };
                    assert!((lift[e] - re(expect)).norm() < 1e-12);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn lift_requires_resolved_collar() {
        let geo = grid_geo_with(0.3);
        let grid = build_grid(&geo, [10, 10, 14]).unwrap();
        let v = vec![ZERO; 9];
        assert!(matches!(lift_voltage(&geo, &grid, &[v]), Err(CouplingError::CollarUnderresolved { .. })));
    }

    #[test]
    fn coupling_map_annihilates_constants() {
        let geo = grid_geo();
        let grid = build_grid(&geo, [10, 10, 14]).unwrap();
        let t = coupling_map(&geo, &grid, 1, 8).unwrap();
        let v = vec![re(4.0); 9];
        assert!(t.matvec(&v).iter().all(|x| x.norm() < 1e-12));
        // Linear voltage: axial lateral edges see 1/l, transverse ones see nothing.
        let v: Vec<C64> = (0..=8).map(|j| re(j as f64 / 8.0)).collect();
        let tv = t.matvec(&v);
        for (slot, &e) in grid.lat_edges.iter().enumerate() {
            let expect = if grid.edge_index(e).0 == 2 { 1.0 } else { 0.0 };
            assert!((tv[slot] - re(expect)).norm() < 1e-12);
        }
    }
}
