//! Implicit midpoint integration with boundary inputs and the energy ledger.
//!
//! One step solves for `(x+, I_b)` with `I_b` the port currents at the half step:
//! `x+ - x = dt ((J - R) H x_mid + J_b I_b)`, `W1 I_b + W2 Pi_H x_mid = (u(t + dt/2), 0)`.
//! Along a step `E+ - E = dt (Re <I_b, Pi_H x_mid> - Re <R e_mid, e_mid>_M)` exactly.

use crate::assembly::PhNode;
use crate::certify::{complete_output, sigma, PortSpec};
use crate::coupling::{lift_voltage, CouplingError};
use crate::geometry::Geometry;
use crate::linalg::{adjoint, dot, mat_vec, null_space, vnorm, Sparse, SparseLu, C64, ZERO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("incompatible initial data: W_B (B1 e, B2 e) = (u(0), 0) has residual {residual:.3e} > {tol:.3e}")]
    Domain { residual: f64, tol: f64 },
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// Boundary input signal, one real amplitude per input port.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputSpec {
    Zero,
    /// Smooth quintic ramp from 0 to `amplitude` over `[0, rise]`.
    Step {
        amplitude: Vec<f64>,
        #[serde(default = "default_rise")]
        rise: f64,
    },
    /// `amplitude sin(2 pi freq t + phase)`.
    Sine {
        amplitude: Vec<f64>,
        freq: f64,
        #[serde(default)]
        phase: Vec<f64>,
    },
    /// Piecewise linear, held constant outside the table.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

fn default_rise() -> f64 {
    1.0
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

impl InputSpec {
    pub fn validate(&self, m: usize) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::Config(s));
        match self {
            InputSpec::Zero => Ok(()),
            InputSpec::Step { amplitude, rise } => {
                if amplitude.len() != m {
                    return bad(format!("step amplitude has {} entries, expected {m}", amplitude.len()));
                }
                if !(*rise > 0.0) {
                    return bad("step rise time must be positive".into());
                }
                Ok(())
            }
            InputSpec::Sine { amplitude, phase, .. } => {
                if amplitude.len() != m || !(phase.is_empty() || phase.len() == m) {
                    return bad(format!("sine amplitude/phase must have {m} entries"));
                }
                Ok(())
            }
            InputSpec::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return bad("table needs matching nonempty times and values".into());
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("table times must increase".into());
                }
                if values.iter().any(|v| v.len() != m) {
                    return bad(format!("table rows must have {m} entries"));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: f64, m: usize) -> Vec<C64> {
        match self {
            InputSpec::Zero => vec![ZERO; m],
            InputSpec::Step { amplitude, rise } => {
                let s = smoothstep(t / rise);
                amplitude.iter().map(|a| C64::new(a * s, 0.0)).collect()
            }
            InputSpec::Sine { amplitude, freq, phase } => amplitude
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let ph = phase.get(i).copied().unwrap_or(0.0);
                    C64::new(a * (2.0 * std::f64::consts::PI * freq * t + ph).sin(), 0.0)
                })
                .collect(),
            InputSpec::Table { times, values } => {
                let n = times.len();
                if t <= times[0] {
                    return values[0].iter().map(|v| C64::new(*v, 0.0)).collect();
                }
                if t >= times[n - 1] {
                    return values[n - 1].iter().map(|v| C64::new(*v, 0.0)).collect();
                }
                let j = times.partition_point(|&s| s <= t) - 1;
                let a = (t - times[j]) / (times[j + 1] - times[j]);
                (0..m).map(|i| C64::new(values[j][i] * (1.0 - a) + values[j + 1][i] * a, 0.0)).collect()
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialSpec {
    Zero,
    /// Line voltages linear in `eta` from `v0` to `v1` (one entry per line), with the
    /// field initialised by the collar extension of those voltages.
    LiftedVoltage { v0: Vec<f64>, v1: Vec<f64> },
    /// Random line state and field with `B` a discrete curl, projected onto the constraints.
    Random {
        #[serde(default = "default_amp")]
        amplitude: f64,
    },
}

fn default_amp() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_input")]
    pub input: InputSpec,
    #[serde(default = "default_initial")]
    pub initial: InitialSpec,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_bc_tol")]
    pub bc_tol: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Snapshot stride; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_stride: usize,
}

fn default_input() -> InputSpec {
    InputSpec::Zero
}
fn default_initial() -> InitialSpec {
    InitialSpec::Zero
}
fn default_solver_tol() -> f64 {
    1e-10
}
fn default_bc_tol() -> f64 {
    1e-8
}
fn default_stride() -> usize {
    1
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self, m: usize) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !(self.t_end >= self.dt) {
            return Err(SimError::Config(format!("need dt > 0 and T >= dt (dt = {}, T = {})", self.dt, self.t_end)));
        }
        if self.stride == 0 {
            return Err(SimError::Config("record stride must be at least 1".into()));
        }
        self.input.validate(m)
    }
}

/// Factorized midpoint step for a fixed `dt` (negative `dt` steps backward).
pub struct Stepper {
    pub dt: f64,
    n_state: usize,
    nb: usize,
    lhs: Sparse,
    rhs_x: Sparse,
    w2_pi: Sparse,
    lu: SparseLu,
    tol: f64,
}

/// Result of one step: new state and the half-step port currents.
pub struct StepOut {
    pub x: Vec<C64>,
    pub ib: Vec<C64>,
}

impl Stepper {
    pub fn new(node: &PhNode, spec: &PortSpec, dt: f64, tol: f64) -> Result<Self, SimError> {
        let l = node.layout;
        let (ns, nb) = (l.n_state, 2 * l.k);
        let jx = node.jd.col_block(0, ns);
        let jb = node.jd.col_block(ns, nb);
        let a = jx.add(&node.rd, C64::new(-1.0, 0.0)).mul(&node.hd);
        let w2_pi = Sparse::from_dense(&spec.w2()).mul(&node.pi_h);
        let w1 = spec.w1();
        let mut t = vec![];
        for i in 0..ns {
            t.push((i, i, C64::new(1.0, 0.0)));
        }
        for (i, j, v) in a.triplets() {
            t.push((i, j, v * (-0.5 * dt)));
        }
        for (i, j, v) in jb.triplets() {
            t.push((i, ns + j, v * (-dt)));
        }
        for (i, j, v) in w2_pi.triplets() {
            t.push((ns + i, j, v * 0.5));
        }
        for i in 0..nb {
            for j in 0..nb {
                if w1[(i, j)] != ZERO {
                    t.push((ns + i, ns + j, w1[(i, j)]));
                }
            }
        }
        let lhs = Sparse::from_triplets(ns + nb, ns + nb, &t);
        let rhs_x = Sparse::identity(ns).add(&a, C64::new(0.5 * dt, 0.0));
        let lu = SparseLu::new(&lhs).ok_or_else(|| SimError::Solver("step matrix is singular".into()))?;
        Ok(Stepper { dt, n_state: ns, nb, lhs, rhs_x, w2_pi, lu, tol })
    }

    /// `ub` is the constraint right-hand side `(u, 0)` at the half step.
    pub fn step(&self, x: &[C64], ub: &[C64]) -> Result<StepOut, SimError> {
        let mut b = self.rhs_x.matvec(x);
        let wx = self.w2_pi.matvec(x);
        b.extend(ub.iter().zip(&wx).map(|(u, w)| u - w * 0.5));
        let mut sol = self.lu.solve(&b);
        // one step of iterative refinement keeps the residual at roundoff level
        let r: Vec<C64> = {
            let ax = self.lhs.matvec(&sol);
            b.iter().zip(&ax).map(|(p, q)| p - q).collect()
        };
        let d = self.lu.solve(&r);
        for (s, v) in sol.iter_mut().zip(&d) {
            *s += v;
        }
        let ax = self.lhs.matvec(&sol);
        let res = b.iter().zip(&ax).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        let scale = vnorm(&b).max(vnorm(&sol)).max(f64::MIN_POSITIVE);
        if !res.is_finite() || res > self.tol * scale {
            return Err(SimError::Solver(format!("linear residual {:.3e} above tolerance", res / scale)));
        }
        let ib = sol.split_off(self.n_state);
        debug_assert_eq!(ib.len(), self.nb);
        Ok(StepOut { x: sol, ib })
    }
}

/// Boundary values at the current state: `I_b` is solved from the constraint in the
/// least-squares sense; the residual measures incompatibility.
pub fn constraint_residual(node: &PhNode, spec: &PortSpec, x: &[C64], u: &[C64]) -> f64 {
    let w2_pi = Sparse::from_dense(&spec.w2()).mul(&node.pi_h);
    let rhs = spec.constraint_rhs(u);
    let c: Vec<C64> = rhs.iter().zip(w2_pi.matvec(x)).map(|(a, b)| a - b).collect();
    // components outside range(W1) cannot be matched by any I_b
    let q = null_space(&adjoint(&spec.w1()), 1e-10);
    let r = mat_vec(&adjoint(&q), &c);
    vnorm(&r) / vnorm(&rhs).max(vnorm(&node.pi_h.matvec(x))).max(1.0)
}

/// Minimum-norm correction of `x` making `(x, u)` compatible.
pub fn project_consistent(node: &PhNode, spec: &PortSpec, x: &mut [C64], u: &[C64]) {
    let q = null_space(&adjoint(&spec.w1()), 1e-10);
    if q.ncols() == 0 {
        return;
    }
    let g_small = adjoint(&q) * spec.w2();
    let pi = node.pi_h.to_dense();
    let g = &g_small * &pi;
    let rhs = spec.constraint_rhs(u);
    let target = mat_vec(&adjoint(&q), &rhs);
    let gx = mat_vec(&g, x);
    let r: Vec<C64> = target.iter().zip(&gx).map(|(a, b)| a - b).collect();
    let ggh = &g * adjoint(&g);
    let Some(inv) = crate::linalg::inverse(&ggh) else { return };
    let lam = mat_vec(&inv, &r);
    let dx = mat_vec(&adjoint(&g), &lam);
    for (a, b) in x.iter_mut().zip(&dx) {
        *a += b;
    }
}

/// Initial state according to `init`; `geo` is needed for the field lift.
pub fn initial_state(node: &PhNode, geo: Option<&Geometry>, init: &InitialSpec, seed: u64) -> Result<Vec<C64>, SimError> {
    let l = node.layout;
    let mut x = node.zero_state();
    match init {
        InitialSpec::Zero => {}
        InitialSpec::LiftedVoltage { v0, v1 } => {
            if v0.len() != l.k || v1.len() != l.k {
                return Err(SimError::Config(format!("lifted voltage needs {} entries per end", l.k)));
            }
            let grid = &node.line.grid;
            let volt = |j: usize, a: usize| v0[a] + (v1[a] - v0[a]) * grid.node(j);
            for j in 0..=l.n {
                let v: Vec<C64> = (0..l.k).map(|a| C64::new(volt(j, a), 0.0)).collect();
                let q = mat_vec(&node.line.c[j], &v);
                for a in 0..l.k {
                    x[l.q(j, a)] = q[a];
                }
            }
            if let (Some(f), Some(geo)) = (&node.field, geo) {
                let per_cable: Vec<Vec<C64>> = geo
                    .cables
                    .iter()
                    .map(|c| (0..=l.n).map(|j| C64::new(volt(j, c.line), 0.0)).collect())
                    .collect();
                let e_all = lift_voltage(geo, &f.grid, &per_cable)?;
                for (slot, &e) in f.grid.free_edges.iter().enumerate() {
                    let axis = f.grid.edge_index(e).0;
                    x[l.off_d + slot] = e_all[e] * f.materials.eps[axis];
                }
            }
        }
        InitialSpec::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = || C64::new(rng.gen_range(-1.0..1.0) * amplitude, rng.gen_range(-1.0..1.0) * amplitude);
            for i in 0..l.off_b {
                x[i] = r();
            }
            for i in l.off_q..l.off_d {
                x[i] = r();
            }
            if let Some(f) = &node.field {
                // B = -C a for a random edge potential keeps div B = 0
                let a: Vec<C64> = (0..f.grid.n_edges()).map(|_| r()).collect();
                let b = f.grid.curl().matvec(&a);
                for (i, v) in b.iter().enumerate() {
                    x[l.off_b + i] = -v;
                }
                for i in l.off_d..l.n_state {
                    x[i] = r();
                }
            }
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct Record {
    pub t: f64,
    pub energy: f64,
    pub supplied: f64,
    pub dissipated: f64,
    pub boundary_term: f64,
    pub residual: f64,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    /// `(t, x)` every `snapshot_stride` steps.
    #[serde(skip)]
    pub snapshots: Vec<(f64, Vec<C64>)>,
    /// Energy after every step (index 0 is the initial energy).
    pub energy: Vec<f64>,
    /// False when no full co-located output is available; the ledger then omits the boundary term.
    pub ledger_full: bool,
    /// `(lhs, rhs / c_t)` of the bound at every step: `||x(t)|| + ||y||` and `||x0|| + ||u||`.
    pub bound: Vec<(f64, f64)>,
    #[serde(skip)]
    pub final_state: Vec<C64>,
}

impl Trajectory {
    pub fn max_residual(&self) -> f64 {
        self.records.iter().map(|r| r.residual.abs()).fold(0.0, f64::max)
    }

    pub fn peak_energy(&self) -> f64 {
        self.energy.iter().copied().fold(0.0, f64::max)
    }

    /// `max |E_n - E_0| / E_0`, relative to the peak energy when `E_0 = 0`.
    pub fn relative_drift(&self) -> f64 {
        let e0 = self.energy[0];
        let scale = if e0 > 0.0 { e0 } else { self.peak_energy() };
        if scale == 0.0 {
            return 0.0;
        }
        self.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / scale
    }

    /// Whether `E` never increases by more than `slack * peak` between steps.
    pub fn monotone(&self, slack: f64) -> bool {
        let p = self.peak_energy();
        self.energy.windows(2).all(|w| w[1] <= w[0] + slack * p)
    }

    /// Smallest `c` with `lhs <= c * rhs` at every step.
    pub fn bound_ratio(&self) -> f64 {
        self.bound.iter().filter(|(_, r)| *r > 0.0).map(|(l, r)| l / r).fold(0.0, f64::max)
    }
}

fn re_parts(v: &[C64]) -> Vec<f64> {
    v.iter().map(|c| c.re).collect()
}

/// Runs `cfg` from `x0`; the ledger follows the energy balance
/// `E(t) - E(0) = int Re <u, y> - int Re <R e, e> + 1/2 int z^H (Sigma - M^H Sigma M) z`.
pub fn run(node: &PhNode, spec: &PortSpec, cfg: &SimConfig, x0: Vec<C64>) -> Result<Trajectory, SimError> {
    cfg.validate(spec.m())?;
    let m = spec.m();
    let u0 = cfg.input.eval(0.0, m);
    let residual = constraint_residual(node, spec, &x0, &u0);
    if residual > cfg.bc_tol {
        return Err(SimError::Domain { residual, tol: cfg.bc_tol });
    }
    let steps = cfg.steps();
    let dt = cfg.dt;
    let stepper = Stepper::new(node, spec, dt, cfg.solver_tol)?;
    let k2 = 2 * node.layout.k;
    let wc_full = if spec.p() == m { complete_output(spec).ok() } else { None };
    let bform = wc_full.as_ref().map(|wc| {
        let mm = crate::linalg::vstack(&spec.w_b(), wc);
        let sg = sigma(k2);
        &sg - adjoint(&mm) * &sg * &mm
    });

    let mut x = x0;
    let mut traj = Trajectory { ledger_full: bform.is_some(), ..Default::default() };
    let mut pi_x = vec![node.pi_h.matvec(&x)];
    let mut diss = vec![node.dissipation(&node.effort(&x))];
    traj.energy.push(node.energy(&x));
    let mut ib_mid: Vec<Vec<C64>> = Vec::with_capacity(steps);
    let x0_norm = node.norm(&x);
    let (mut u_l2, mut y_l2) = (0.0, 0.0);
    traj.bound.push((x0_norm, x0_norm));
    if cfg.snapshot_stride > 0 {
        traj.snapshots.push((0.0, x.clone()));
    }
    for n in 0..steps {
        let t_half = (n as f64 + 0.5) * dt;
        let uh = cfg.input.eval(t_half, m);
        let out = stepper.step(&x, &spec.constraint_rhs(&uh))?;
        // midpoint output for the L2 norms
        let xm: Vec<C64> = x.iter().zip(&out.x).map(|(a, b)| (a + b) * 0.5).collect();
        let mut zm = out.ib.clone();
        zm.extend(node.pi_h.matvec(&xm));
        let ym = mat_vec(&spec.w_out, &zm);
        u_l2 += dt * vnorm(&uh).powi(2);
        y_l2 += dt * vnorm(&ym).powi(2);
        x = out.x;
        ib_mid.push(out.ib);
        pi_x.push(node.pi_h.matvec(&x));
        diss.push(node.dissipation(&node.effort(&x)));
        traj.energy.push(node.energy(&x));
        traj.bound.push((node.norm(&x) + y_l2.sqrt(), x0_norm + u_l2.sqrt()));
        if !traj.energy.last().unwrap().is_finite() {
            return Err(SimError::Solver(format!("energy became non-finite at step {}", n + 1)));
        }
        if cfg.snapshot_stride > 0 && (n + 1) % cfg.snapshot_stride == 0 {
            traj.snapshots.push(((n + 1) as f64 * dt, x.clone()));
        }
    }

    // Port currents at integer times from the half-step values.
    let ib_at = |n: usize| -> Vec<C64> {
        let s = ib_mid.len();
        let pick = |i: usize| &ib_mid[i];
        if s == 0 {
            return vec![ZERO; k2];
        }
        if s == 1 {
            return pick(0).clone();
        }
        let (a, b, wa, wb) = if n == 0 {
            (0, 1, 1.5, -0.5)
        } else if n == s {
            (s - 1, s - 2, 1.5, -0.5)
        } else {
            (n - 1, n, 0.5, 0.5)
        };
        pick(a).iter().zip(pick(b)).map(|(p, q)| p * wa + q * wb).collect()
    };
    let (mut sup, mut dis, mut bnd) = (0.0, 0.0, 0.0);
    let mut prev: Option<(f64, f64, f64)> = None;
    for n in 0..=steps {
        let t = n as f64 * dt;
        let mut z = ib_at(n);
        z.extend(pi_x[n].iter().copied());
        let u = cfg.input.eval(t, m);
        let y = mat_vec(&spec.w_out, &z);
        let p_sup = if m == spec.p() { dot(&u, &y).re } else { 0.0 };
        let p_bnd = bform.as_ref().map(|f| 0.5 * dot(&mat_vec(f, &z), &z).re).unwrap_or(0.0);
        let p_dis = diss[n];
        if let Some((a, b, c)) = prev {
            sup += 0.5 * dt * (a + p_sup);
            dis += 0.5 * dt * (b + p_dis);
            bnd += 0.5 * dt * (c + p_bnd);
        }
        prev = Some((p_sup, p_dis, p_bnd));
        if n % cfg.stride == 0 || n == steps {
            traj.records.push(Record {
                t,
                energy: traj.energy[n],
                supplied: sup,
                dissipated: dis,
                boundary_term: bnd,
                residual: (traj.energy[n] - traj.energy[0]) - (sup - dis + bnd),
                u: re_parts(&u),
                y: re_parts(&y),
            });
        }
    }
    traj.final_state = x;
    Ok(traj)
}

/// Runs `steps` forward then backward with zero input; returns the relative return error.
pub fn reversibility(node: &PhNode, spec: &PortSpec, x0: &[C64], dt: f64, steps: usize, tol: f64) -> Result<f64, SimError> {
    let fw = Stepper::new(node, spec, dt, tol)?;
    let bw = Stepper::new(node, spec, -dt, tol)?;
    let ub = vec![ZERO; 2 * node.layout.k];
    let mut x = x0.to_vec();
    for _ in 0..steps {
        x = fw.step(&x, &ub)?.x;
    }
    for _ in 0..steps {
        x = bw.step(&x, &ub)?.x;
    }
    let d: Vec<C64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    Ok(node.norm(&d) / node.norm(x0).max(f64::MIN_POSITIVE))
}

/// Writes the trajectory records as CSV.
pub fn write_csv<W: std::io::Write>(traj: &Trajectory, m: usize, p: usize, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    let mut head: Vec<String> = ["t", "energy", "supplied", "dissipated", "boundary_term", "residual"].iter().map(|s| s.to_string()).collect();
    head.extend((1..=m).map(|i| format!("u_{i}")));
    head.extend((1..=p).map(|i| format!("y_{i}")));
    wr.write_record(&head)?;
    for r in &traj.records {
        let mut row = vec![r.t, r.energy, r.supplied, r.dissipated, r.boundary_term, r.residual];
        row.extend(&r.u);
        row.extend(&r.y);
        wr.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    wr.flush()?;
    Ok(())
}
