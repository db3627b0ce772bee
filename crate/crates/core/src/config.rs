//! Scenario files (JSON) and the build pipeline from a scenario to an assembled node.
//!
//! Matrices are a scalar, nested arrays of reals, or nested arrays of `[re, im]` pairs.
//! Line materials also accept `{"profile": [m0, m1, ...]}` sampled uniformly in `eta`.

use crate::assembly::{assemble, AssemblyError, FieldPart, PhNode};
use crate::certify::{build_colocated_output, CertificateError, PortSpec};
use crate::coupling::{coupling_map, CouplingError};
use crate::geometry::{validate_geometry, Geometry, GeometryError, GeometrySpec};
use crate::linalg::{block, cmat, vstack, CMat, C64, ZERO};
use crate::maxwell::{build_grid, GridError, MaxwellMaterials};
use crate::sim::{SimConfig, SimError};
use crate::tline::{build_line_block, LineGrid, LineMaterials, MaterialError, MaterialField};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("line materials: {0}")]
    Material(#[from] MaterialError),
    #[error("field grid: {0}")]
    Grid(#[from] GridError),
    #[error("coupling: {0}")]
    Coupling(#[from] CouplingError),
    #[error("boundary: {0}")]
    Certificate(#[from] CertificateError),
    #[error("assembly: {0}")]
    Assembly(#[from] AssemblyError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 1 validation or certification failure, 2 usage or parse error, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Read { .. } | Error::Parse(_) => 2,
            Error::Assembly(AssemblyError::Green(_)) => 3,
            Error::Sim(SimError::Solver(_)) => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub k: usize,
    pub n: usize,
    pub l: Value,
    pub c: Value,
    #[serde(default)]
    pub r: Option<Value>,
    #[serde(default)]
    pub g: Option<Value>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dims: [usize; 3],
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    /// `m x 4k`
    pub w_inp: Value,
    /// `(2k - m) x 4k`; omitted when `m = 2k`.
    #[serde(default)]
    pub w_zero: Option<Value>,
    /// `p x 4k`, or the string `"colocated"`.
    pub w_out: Value,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub lines: LineSection,
    #[serde(default)]
    pub geometry: Option<GeometrySpec>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub field: Option<MaxwellMaterials>,
    pub boundary: BoundarySection,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, Error> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn load(path: &Path) -> Result<Scenario, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

fn number(v: &Value, what: &str) -> Result<C64, String> {
    match v {
        Value::Number(x) => Ok(C64::new(x.as_f64().unwrap_or(f64::NAN), 0.0)),
        Value::Array(p) if p.len() == 2 && p.iter().all(Value::is_number) => {
            Ok(C64::new(p[0].as_f64().unwrap_or(f64::NAN), p[1].as_f64().unwrap_or(f64::NAN)))
        }
        _ => Err(format!("{what}: expected a number or [re, im]")),
    }
}

/// Parses a matrix; a scalar becomes `scalar * I_k` when `k` is given.
pub fn parse_matrix(v: &Value, what: &str, k: Option<usize>) -> Result<CMat, Error> {
    let err = |s: String| Error::Parse(s);
    match v {
        Value::Number(_) => {
            let s = number(v, what).map_err(err)?;
            let n = k.unwrap_or(1);
            Ok(cmat(n, n, |i, j| if i == j { s } else { ZERO }))
        }
        Value::Array(rows) => {
            if rows.is_empty() {
                return Ok(CMat::zeros(0, k.map(|k| 4 * k).unwrap_or(0)));
            }
            let mut out: Vec<Vec<C64>> = vec![];
            for (i, r) in rows.iter().enumerate() {
                let Value::Array(entries) = r else {
                    return Err(err(format!("{what}: row {i} is not an array")));
                };
                let row = entries
                    .iter()
                    .enumerate()
                    .map(|(j, e)| number(e, &format!("{what}[{i}][{j}]")))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(err)?;
                out.push(row);
            }
            let cols = out[0].len();
            if out.iter().any(|r| r.len() != cols) {
                return Err(err(format!("{what}: rows have different lengths")));
            }
            Ok(cmat(out.len(), cols, |i, j| out[i][j]))
        }
        _ => Err(err(format!("{what}: expected a scalar or nested array"))),
    }
}

fn parse_material(v: &Value, what: &str, k: usize) -> Result<MaterialField, Error> {
    if let Value::Object(o) = v {
        let Some(Value::Array(p)) = o.get("profile") else {
            return Err(Error::Parse(format!("{what}: object form needs a \"profile\" array")));
        };
        let ms = p
            .iter()
            .enumerate()
            .map(|(i, m)| parse_matrix(m, &format!("{what}.profile[{i}]"), Some(k)))
            .collect::<Result<Vec<_>, _>>()?;
        if ms.is_empty() {
            return Err(Error::Parse(format!("{what}: empty profile")));
        }
        return Ok(MaterialField::Profile(ms));
    }
    Ok(MaterialField::Constant(parse_matrix(v, what, Some(k))?))
}

pub fn line_materials(ls: &LineSection) -> Result<LineMaterials, Error> {
    let k = ls.k;
    let zero = MaterialField::Constant(CMat::zeros(k, k));
    Ok(LineMaterials {
        l: parse_material(&ls.l, "lines.l", k)?,
        c: parse_material(&ls.c, "lines.c", k)?,
        r: ls.r.as_ref().map(|v| parse_material(v, "lines.r", k)).transpose()?.unwrap_or(zero.clone()),
        g: ls.g.as_ref().map(|v| parse_material(v, "lines.g", k)).transpose()?.unwrap_or(zero),
    })
}

pub fn port_spec(b: &BoundarySection, k: usize) -> Result<PortSpec, Error> {
    let n = 4 * k;
    let w_inp = parse_matrix(&b.w_inp, "boundary.w_inp", Some(k))?;
    let w_zero = match &b.w_zero {
        Some(v) => parse_matrix(v, "boundary.w_zero", Some(k))?,
        None => CMat::zeros(0, n),
    };
    let w_out = match &b.w_out {
        Value::String(s) if s == "colocated" => {
            if w_inp.ncols() != n || w_zero.ncols() != n {
                return Err(CertificateError::Shape(format!("W_B must have {n} columns")).into());
            }
            let wc = build_colocated_output(&vstack(&w_inp, &w_zero))?;
            block(&wc, 0, 0, w_inp.nrows(), n)
        }
        Value::String(s) => return Err(Error::Parse(format!("boundary.w_out: unknown keyword {s:?}"))),
        v => parse_matrix(v, "boundary.w_out", Some(k))?,
    };
    Ok(PortSpec::new(k, w_inp, w_zero, w_out)?)
}

/// Scenario turned into operators.
pub struct Built {
    pub geometry: Option<Geometry>,
    pub node: PhNode,
    pub spec: PortSpec,
}

fn check_lines(sc: &Scenario, geo: &Geometry) -> Result<(), Error> {
    for (i, c) in geo.cables.iter().enumerate() {
        if c.line >= sc.lines.k {
            return Err(Error::Invalid(format!("cable {i} uses line {} but k = {}", c.line, sc.lines.k)));
        }
    }
    Ok(())
}

pub fn build(sc: &Scenario) -> Result<Built, Error> {
    let k = sc.lines.k;
    let mats = line_materials(&sc.lines)?;
    let line = build_line_block(LineGrid::new(k, sc.lines.n)?, &mats)?;
    let spec = port_spec(&sc.boundary, k)?;
    let (geometry, field) = match &sc.geometry {
        None => {
            if sc.grid.is_some() || sc.field.is_some() {
                return Err(Error::Invalid("grid/field given without geometry".into()));
            }
            (None, None)
        }
        Some(gs) => {
            let geo = validate_geometry(gs)?;
            check_lines(sc, &geo)?;
            let dims = sc.grid.as_ref().ok_or_else(|| Error::Invalid("geometry requires a grid section".into()))?.dims;
            let materials = sc.field.unwrap_or_else(MaxwellMaterials::vacuum_like);
            materials.validate()?;
            let grid = build_grid(&geo, dims)?;
            let t_map = coupling_map(&geo, &grid, k, sc.lines.n)?;
            (Some(geo), Some(FieldPart { grid, materials, t_map }))
        }
    };
    let node = assemble(line, field);
    Ok(Built { geometry, node, spec })
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, name: &str, r: Result<String, String>) -> bool {
        let ok = r.is_ok();
        let detail = r.unwrap_or_else(|e| e);
        self.ok &= ok;
        self.checks.push(Check { name: name.into(), ok, detail });
        ok
    }
}

/// Runs every check it can and reports each; later checks are skipped when their inputs failed.
pub fn validate_scenario(sc: &Scenario) -> ValidationReport {
    let mut rep = ValidationReport { ok: true, checks: vec![] };
    let k = sc.lines.k;
    let line = line_materials(&sc.lines)
        .map_err(|e| e.to_string())
        .and_then(|m| LineGrid::new(k, sc.lines.n).and_then(|g| build_line_block(g, &m)).map_err(|e| e.to_string()));
    rep.push("line_materials (L, C positive definite; R, G semidefinite)", line.as_ref().map(|_| "ok".into()).map_err(|e| e.clone()));
    let geo = sc.geometry.as_ref().map(|gs| validate_geometry(gs).map_err(|e| e.to_string()));
    if let Some(g) = &geo {
        let r = g.clone().and_then(|g| check_lines(sc, &g).map_err(|e| e.to_string()).map(|_| format!("{} cable(s)", g.cables.len())));
        rep.push("geometry (constant speed, curvature, containment, disjoint tubes)", r);
    }
    if let Some(Ok(g)) = &geo {
        let r = match &sc.grid {
            None => Err("missing grid section".to_string()),
            Some(gr) => {
                let mats = sc.field.unwrap_or_else(MaxwellMaterials::vacuum_like);
                mats.validate()
                    .and_then(|_| build_grid(g, gr.dims))
                    .map_err(|e| e.to_string())
                    .and_then(|grid| {
                        coupling_map(g, &grid, k, sc.lines.n)
                            .map(|t| format!("{} free edges, {} lateral edges, {} active faces", grid.free_edges.len(), t.nrows, grid.active_faces.len()))
                            .map_err(|e| e.to_string())
                    })
            }
        };
        rep.push("field grid and coupling", r);
    }
    match port_spec(&sc.boundary, k) {
        Err(e) => {
            rep.push("boundary shapes", Err(e.to_string()));
        }
        Ok(spec) => {
            rep.push("boundary shapes", Ok(format!("m = {}, p = {}", spec.m(), spec.p())));
            let a = crate::certify::check_admissible(&spec.w_b());
            let d = format!("sigma_min = {:.3e}, lambda_min = {:.3e}", a.sigma_min, a.lambda_min);
            rep.push("boundary admissibility (full row rank, W_B Sigma W_B^H >= 0)", if a.admissible { Ok(d) } else { Err(d) });
        }
    }
    if let Some(s) = &sc.sim {
        rep.push(
            "simulation settings",
            s.validate(sc.boundary_m().unwrap_or(0)).map(|_| format!("{} steps", s.steps())).map_err(|e| e.to_string()),
        );
    }
    rep
}

impl Scenario {
    fn boundary_m(&self) -> Option<usize> {
        parse_matrix(&self.boundary.w_inp, "boundary.w_inp", Some(self.lines.k)).ok().map(|m| m.nrows())
    }
}

/// JSON form of a matrix: nested `[re, im]` pairs.
pub fn matrix_json(m: &CMat) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| serde_json::json!([m[(i, j)].re, m[(i, j)].im])).collect()))
            .collect(),
    )
}
