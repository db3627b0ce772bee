//! Refinement studies: magnetic coupling against a closed form, trace exactness for
//! constant fields, and the time order of the energy-ledger residual.

use crate::assembly::PhNode;
use crate::certify::PortSpec;
use crate::coupling::{pmag, CouplingError, PmagMode};
use crate::geometry::{validate_geometry, CableSpec, CurveSpec, Domain, Geometry, GeometrySpec};
use crate::linalg::C64;
use crate::maxwell::YeeGrid;
use crate::sim::{run, SimConfig, SimError};
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub study: String,
    pub level: usize,
    /// Mesh parameter (`1/n` or `dt`).
    pub h: f64,
    pub error: f64,
    /// `log2(e_{i-1} / e_i)` against the previous level.
    pub order: Option<f64>,
}

fn with_orders(study: &str, hs: &[f64], errs: &[f64]) -> Vec<Row> {
    (0..hs.len())
        .map(|i| Row {
            study: study.into(),
            level: i,
            h: hs[i],
            error: errs[i],
            order: (i > 0).then(|| (errs[i - 1] / errs[i]).ln() / (hs[i - 1] / hs[i]).ln()),
        })
        .collect()
}

pub fn straight_cylinder(radius: f64, length: f64) -> Geometry {
    let pad = 4.0 * radius;
    validate_geometry(&GeometrySpec {
        domain: Domain { lo: [-pad, -pad, -pad], hi: [pad, pad, length + pad] },
        cables: vec![CableSpec {
            curve: CurveSpec::Segment { start: [0.0; 3], end: [0.0, 0.0, length] },
            radius,
            length: None,
            line: None,
            frame_hint: None,
        }],
        collar: 0.5,
        n_eta: 8,
    })
    .expect("straight cylinder is valid")
}

/// Axial field `H_z = exp(z / l)`: the loop integral per cell averages to
/// `2 pi r (e^{(c+1)h} - e^{ch}) / h`.
pub fn pmag_study(radius: f64, length: f64, cells: &[usize], rings_per_cell: usize, n_theta: usize) -> Result<Vec<Row>, CouplingError> {
    let geo = straight_cylinder(radius, length);
    let (mut eq, mut ea, mut ed, mut hs) = (vec![], vec![], vec![], vec![]);
    for &n in cells {
        let ch = geo.tube_chart(0, rings_per_cell * n, n_theta);
        let g: Vec<C64> = ch.points.iter().flat_map(|sp| [C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new((sp.p.z / length).exp(), 0.0)]).collect();
        let h = 1.0 / n as f64;
        let exact: Vec<f64> = (0..n).map(|c| 2.0 * PI * radius * (((c + 1) as f64 * h).exp() - (c as f64 * h).exp()) / h).collect();
        let scale = exact.iter().cloned().fold(0.0, f64::max);
        let q = pmag(&ch, &g, n, PmagMode::Quadrature)?;
        let a = pmag(&ch, &g, n, PmagMode::Adjoint)?;
        let err = |v: &[C64]| v.iter().zip(&exact).map(|(x, e)| (x.re - e).abs().max(x.im.abs())).fold(0.0, f64::max) / scale;
        eq.push(err(&q));
        ea.push(err(&a));
        ed.push(q.iter().zip(&a).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale);
        hs.push(h);
    }
    let mut rows = with_orders("pmag_quadrature_vs_closed_form", &hs, &eq);
    rows.extend(with_orders("pmag_adjoint_vs_closed_form", &hs, &ea));
    rows.extend(with_orders("pmag_adjoint_vs_quadrature", &hs, &ed));
    Ok(rows)
}

/// Tangential trace of a constant edge field on the chart of every cable; returns the max error.
pub fn trace_exactness(geo: &Geometry, grid: &YeeGrid, n_eta: usize, n_theta: usize) -> f64 {
    let e0 = [0.3, -1.1, 0.7];
    let edges: Vec<C64> = (0..grid.n_edges()).map(|e| C64::new(e0[grid.edge_index(e).0], 0.0)).collect();
    let mut worst = 0.0f64;
    for ci in 0..geo.cables.len() {
        let ch = geo.tube_chart(ci, n_eta, n_theta);
        let pts: Vec<_> = ch.points.iter().map(|sp| (sp.p, sp.normal)).collect();
        let (r_tan, _) = grid.surface_trace(&pts);
        let t = r_tan.matvec(&edges);
        for (q, sp) in ch.points.iter().enumerate() {
            let nu = sp.normal;
            let en: f64 = (0..3).map(|b| e0[b] * nu[b]).sum();
            for b in 0..3 {
                worst = worst.max((t[3 * q + b] - C64::new(e0[b] - en * nu[b], 0.0)).norm());
            }
        }
    }
    worst
}

/// Max ledger residual for `dt, dt/2, ...`.
pub fn ledger_study(node: &PhNode, spec: &PortSpec, cfg: &SimConfig, x0: &[C64], levels: usize) -> Result<Vec<Row>, SimError> {
    let (mut hs, mut es) = (vec![], vec![]);
    for i in 0..levels {
        let mut c = cfg.clone();
        c.dt = cfg.dt / 2f64.powi(i as i32);
        c.stride = 1;
        c.snapshot_stride = 0;
        let tr = run(node, spec, &c, x0.to_vec())?;
        hs.push(c.dt);
        es.push(tr.max_residual() / tr.peak_energy().max(f64::MIN_POSITIVE));
    }
    Ok(with_orders("ledger_residual_relative", &hs, &es))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmag_orders_are_two() {
        let rows = pmag_study(0.1, 1.0, &[8, 16, 32], 3, 24).unwrap();
        for r in rows.iter().filter(|r| r.study.contains("closed_form") && r.level > 0) {
            assert!(r.order.unwrap() > 1.9, "{r:?}");
        }
    }
}
