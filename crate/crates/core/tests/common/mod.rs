#![allow(dead_code)]

use cable_ph::assembly::{assemble, FieldPart, PhNode};
use cable_ph::coupling::coupling_map;
use cable_ph::geometry::{validate_geometry, CableSpec, CurveSpec, Domain, Geometry, GeometrySpec};
use cable_ph::linalg::{cmat, identity, scaled, CMat, C64, ZERO};
use cable_ph::maxwell::{build_grid, MaxwellMaterials};
use cable_ph::tline::{build_line_block, LineGrid, LineMaterials, MaterialField};

pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// One straight tube along z in a box.
pub fn straight_tube(hi: [f64; 3], z: (f64, f64), radius: f64, collar: f64) -> Geometry {
    validate_geometry(&GeometrySpec {
        domain: Domain { lo: [0.0; 3], hi },
        cables: vec![CableSpec {
            curve: CurveSpec::Segment { start: [hi[0] / 2.0, hi[1] / 2.0, z.0], end: [hi[0] / 2.0, hi[1] / 2.0, z.1] },
            radius,
            length: None,
            line: Some(0),
            frame_hint: None,
        }],
        collar,
        n_eta: 64,
    })
    .expect("valid tube")
}

pub struct Materials {
    pub r: f64,
    pub g: f64,
    pub sigma: f64,
}

pub const LOSSLESS: Materials = Materials { r: 0.0, g: 0.0, sigma: 0.0 };
pub const LOSSY: Materials = Materials { r: 0.2, g: 0.1, sigma: 0.3 };

pub fn line_materials(k: usize, m: &Materials) -> LineMaterials {
    let l = cmat(k, k, |i, j| if i == j { re(1.0) } else { C64::new(0.2, 0.05 * (j as f64 - i as f64)) });
    let c = cmat(k, k, |i, j| if i == j { re(1.0) } else { re(-0.1) });
    LineMaterials {
        l: MaterialField::Constant(l),
        c: MaterialField::Constant(c),
        r: MaterialField::Constant(scaled(&identity(k), re(m.r))),
        g: MaterialField::Constant(scaled(&identity(k), re(m.g))),
    }
}

pub fn coupled(geo: &Geometry, dims: [usize; 3], k: usize, n: usize, m: &Materials) -> PhNode {
    let grid = build_grid(geo, dims).expect("grid");
    let t_map = coupling_map(geo, &grid, k, n).expect("coupling");
    let line = build_line_block(LineGrid::new(k, n).unwrap(), &line_materials(k, m)).unwrap();
    let mut mm = MaxwellMaterials::vacuum_like();
    mm.sigma = [m.sigma; 3];
    assemble(line, Some(FieldPart { grid, materials: mm, t_map }))
}

/// Desk-size coupled node: grid 10 x 10 x 14, tube of radius 0.2.
pub fn reference_geometry() -> Geometry {
    straight_tube([1.0, 1.0, 1.4], (0.2, 1.2), 0.2, 0.5)
}

/// Reduced node: grid 6 x 6 x 10.
pub fn reduced_geometry() -> Geometry {
    straight_tube([1.0, 1.0, 1.6], (0.3, 1.3), 0.34, 0.3)
}

pub fn blocks(l: usize, a: f64, b: f64) -> CMat {
    cmat(l, 2 * l, |i, j| {
        if j == i {
            re(a)
        } else if j == i + l {
            re(b)
        } else {
            ZERO
        }
    })
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
