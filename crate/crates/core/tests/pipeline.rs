mod common;

use cable_ph::assembly::{assemble, PhNode};
use cable_ph::certify::{certify, constrained_spectrum, infinite_count, range_condition, sample_w_b, CertificateError, PortSpec, SampleKind};
use cable_ph::config::{build, load, Scenario};
use cable_ph::linalg::{block, cmat, CMat, C64, ZERO};
use cable_ph::sim::{constraint_residual, initial_state, project_consistent, run, InitialSpec, InputSpec, SimConfig};
use cable_ph::tline::{build_line_block, LineGrid};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn scenario(name: &str) -> Scenario {
    load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap()
}

fn bare(k: usize, n: usize, m: &Materials) -> PhNode {
    assemble(build_line_block(LineGrid::new(k, n).unwrap(), &line_materials(k, m)).unwrap(), None)
}

fn row(v: &[f64]) -> CMat {
    cmat(1, v.len(), |_, j| re(v[j]))
}

fn cfg(dt: f64, t_end: f64, input: InputSpec, initial: InitialSpec) -> SimConfig {
    SimConfig { dt, t_end, input, initial, solver_tol: 1e-10, bc_tol: 1e-8, stride: 1, snapshot_stride: 0 }
}

#[test]
fn shipped_scenarios_build_and_certify() {
    for name in ["straight_pair.json", "bare_line.json", "skew_lossless.json"] {
        let b = build(&scenario(name)).unwrap();
        let cert = certify(&b.spec, b.node.h_bounds);
        assert!(cert.passed(), "{name}: {cert:?}");
        assert!(range_condition(&b.node, &b.spec).unwrap() < 1e-10, "{name}");
    }
}

#[test]
fn inadmissible_boundary_is_rejected() {
    let node = bare(1, 8, &LOSSLESS);
    let out = row(&[0.0, 0.0, 1.0, 0.0]);
    // Negative sym form.
    let neg = PortSpec::new(1, row(&[1.0, 0.0, -1.0, 0.0]), row(&[0.0, 1.0, 0.0, 1.0]), out.clone()).unwrap();
    // Rank deficient.
    let dup = PortSpec::new(1, row(&[1.0, 0.0, 1.0, 0.0]), row(&[1.0, 0.0, 1.0, 0.0]), out).unwrap();
    for spec in [neg, dup] {
        assert!(!certify(&spec, node.h_bounds).passed());
        assert!(matches!(constrained_spectrum(&node, &spec), Err(CertificateError::NotAdmissible { .. })));
        assert!(matches!(range_condition(&node, &spec), Err(CertificateError::NotAdmissible { .. })));
    }
}

#[test]
fn short_circuit_line_has_closed_form_spectrum() {
    // V = 0 at both ends, unit L and C, lossless: the finite-volume modes are
    // 2 i sin(j pi / 2n) * n for j = 1..n-1 (and conjugates), up to the
    // trapezoid end weights, so only the lowest mode is checked against pi.
    let k = 1;
    let n = 64;
    let node = assemble(
        build_line_block(
            LineGrid::new(k, n).unwrap(),
            &cable_ph::tline::LineMaterials {
                l: cable_ph::tline::MaterialField::Constant(cmat(1, 1, |_, _| re(1.0))),
                c: cable_ph::tline::MaterialField::Constant(cmat(1, 1, |_, _| re(1.0))),
                r: cable_ph::tline::MaterialField::Constant(cmat(1, 1, |_, _| ZERO)),
                g: cable_ph::tline::MaterialField::Constant(cmat(1, 1, |_, _| ZERO)),
            },
        )
        .unwrap(),
        None,
    );
    let spec = PortSpec::new(1, row(&[0.0, 0.0, 1.0, 0.0]), row(&[0.0, 0.0, 0.0, 1.0]), row(&[1.0, 0.0, 0.0, 0.0])).unwrap();
    let ev = constrained_spectrum(&node, &spec).unwrap();
    assert!(ev.iter().all(|z| z.re.abs() < 1e-9), "lossless spectrum is imaginary");
    let lowest = ev.iter().map(|z| z.im.abs()).filter(|w| *w > 1e-6).fold(f64::INFINITY, f64::min);
    assert!((lowest - std::f64::consts::PI).abs() < 2e-2, "lowest mode {lowest}");
    assert_eq!(infinite_count(&spec), 2);
}

#[test]
fn random_initial_state_is_projected_onto_constraint() {
    let b = build(&scenario("skew_lossless.json")).unwrap();
    let mut x = initial_state(&b.node, b.geometry.as_ref(), &InitialSpec::Random { amplitude: 1.0 }, 3).unwrap();
    let u = [re(0.4)];
    project_consistent(&b.node, &b.spec, &mut x, &u);
    assert!(constraint_residual(&b.node, &b.spec, &x, &u) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any admissible boundary gives a solvable resolvent; an undriven lossless line never gains energy.
    #[test]
    fn admissible_boundaries_conserve_energy(seed in 0u64..10_000, kind in 0usize..3, k in 1usize..3) {
        let kind = [SampleKind::Strict, SampleKind::Skew, SampleKind::Boundary][kind];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_w_b(2 * k, kind, &mut rng);
        let node = bare(k, 12, &LOSSLESS);
        let spec = PortSpec::new(k, w.clone(), block(&w, 0, 0, 0, 4 * k), cmat(0, 4 * k, |_, _| ZERO)).unwrap();
        prop_assert!(range_condition(&node, &spec).unwrap() < 1e-9);
        let mut x0 = initial_state(&node, None, &InitialSpec::Random { amplitude: 1.0 }, seed).unwrap();
        let u0 = vec![ZERO; spec.m()];
        project_consistent(&node, &spec, &mut x0, &u0);
        let traj = run(&node, &spec, &cfg(0.05, 1.0, InputSpec::Zero, InitialSpec::Zero), x0).unwrap();
        let e0 = traj.energy[0];
        prop_assert!(traj.monotone(1e-12 * e0.max(1.0)));
        if matches!(kind, SampleKind::Skew) {
            prop_assert!(traj.relative_drift().abs() < 1e-10);
        }
    }

    /// Lossy lines dissipate under zero input regardless of the initial state.
    #[test]
    fn lossy_line_energy_decays(seed in 0u64..10_000) {
        let node = bare(2, 10, &LOSSY);
        let spec = PortSpec::colocated(2, &blocks(4, 1.0, 1.0), 2).unwrap();
        let mut x0 = initial_state(&node, None, &InitialSpec::Random { amplitude: 1.0 }, seed).unwrap();
        project_consistent(&node, &spec, &mut x0, &[ZERO, ZERO]);
        let traj = run(&node, &spec, &cfg(0.05, 2.0, InputSpec::Zero, InitialSpec::Zero), x0).unwrap();
        prop_assert!(traj.monotone(1e-12));
        prop_assert!(traj.energy.last().unwrap() < &traj.energy[0]);
    }
}

#[test]
fn linear_in_the_input() {
    let b = build(&scenario("bare_line.json")).unwrap();
    let go = |a: f64| {
        let c = cfg(0.01, 1.0, InputSpec::Sine { amplitude: vec![a], freq: 0.5, phase: vec![] }, InitialSpec::Zero);
        let x0 = vec![C64::new(0.0, 0.0); b.node.layout.n_state];
        run(&b.node, &b.spec, &c, x0).unwrap().final_state
    };
    let (x1, x3) = (go(1.0), go(3.0));
    let scaled: Vec<C64> = x1.iter().map(|v| v * 3.0).collect();
    assert!(max_abs_diff(&scaled, &x3) < 1e-12);
}

#[test]
fn skew_resistance_is_lossless() {
    let k = 2;
    let mut m = line_materials(k, &LOSSLESS);
    m.r = cable_ph::tline::MaterialField::Constant(cmat(2, 2, |i, j| if i == j { ZERO } else if i < j { re(0.3) } else { re(-0.3) }));
    let node = assemble(build_line_block(LineGrid::new(k, 16).unwrap(), &m).unwrap(), None);
    assert!(node.symmetry_defects().1 < 1e-14);
    assert!(node.verify_green(20, 1, 1e-12).is_ok());
    // Short circuit at both ends: skew boundary.
    let w = cmat(2 * k, 4 * k, |i, j| if j == 2 * k + i { re(1.0) } else { ZERO });
    let spec = PortSpec::new(k, w.clone(), block(&w, 0, 0, 0, 4 * k), cmat(0, 4 * k, |_, _| ZERO)).unwrap();
    let mut x0 = initial_state(&node, None, &InitialSpec::Random { amplitude: 1.0 }, 2).unwrap();
    project_consistent(&node, &spec, &mut x0, &[]);
    let traj = run(&node, &spec, &cfg(0.02, 2.0, InputSpec::Zero, InitialSpec::Zero), x0).unwrap();
    assert!(traj.relative_drift().abs() < 1e-12, "{}", traj.relative_drift());
}
