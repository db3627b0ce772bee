use cable_ph::assembly::PhNode;
use cable_ph::certify::{certify, Certificate};
use cable_ph::config::{build, load, validate_scenario, Built, Error, Scenario};
use cable_ph::converge::{ledger_study, pmag_study, trace_exactness, Row};
use cable_ph::linalg::C64;
use cable_ph::sim::{initial_state, project_consistent, run, write_csv, InitialSpec, Trajectory};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cable-ph", version, about = "Coupled transmission-line / Maxwell port-Hamiltonian simulator")]
struct Cli {
    /// Directory for reports and data (one subdirectory per scenario).
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Scenarios processed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write J, R, H and the boundary map as Matrix Market files.
    #[arg(long, global = true)]
    export_operators: bool,
    /// Write state snapshots as CSV.
    #[arg(long, global = true)]
    export_fields: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone)]
enum Cmd {
    /// Check geometry, materials and boundary matrices.
    Validate { scenarios: Vec<PathBuf> },
    /// Emit the boundary certificate.
    Certify { scenarios: Vec<PathBuf> },
    /// Integrate and write the trajectory with its energy ledger.
    Simulate { scenarios: Vec<PathBuf> },
    /// Refinement study.
    Converge {
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

fn out_dir(cli: &Cli, path: &Path, sc: &Scenario) -> std::io::Result<PathBuf> {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into());
    let base = sc.output_dir.as_ref().map(PathBuf::from).unwrap_or_else(|| cli.output_dir.clone());
    let d = base.join(stem);
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), Error> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, v)?;
    writeln!(f)?;
    Ok(())
}

fn export_operators(node: &PhNode, dir: &Path) -> Result<(), Error> {
    node.jd.write_matrix_market(&dir.join("J.mtx"))?;
    node.rd.write_matrix_market(&dir.join("R.mtx"))?;
    node.hd.write_matrix_market(&dir.join("H.mtx"))?;
    node.pi_h.write_matrix_market(&dir.join("boundary_voltage.mtx"))?;
    Ok(())
}

fn export_fields(node: &PhNode, traj: &Trajectory, dir: &Path) -> Result<(), Error> {
    let l = node.layout;
    let mut w = csv::Writer::from_path(dir.join("snapshots.csv"))?;
    w.write_record(["t", "block", "index", "re", "im"])?;
    for (t, x) in &traj.snapshots {
        for (i, v) in x.iter().enumerate() {
            let (blk, j) = if i < l.off_b {
                ("psi", i)
            } else if i < l.off_q {
                ("B", i - l.off_b)
            } else if i < l.off_d {
                ("q", i - l.off_q)
            } else {
                ("D", i - l.off_d)
            };
            w.write_record([format!("{t:e}"), blk.to_string(), j.to_string(), format!("{:e}", v.re), format!("{:e}", v.im)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct WpCheck {
    c_t: f64,
    observed_ratio: f64,
    satisfied: bool,
}

#[derive(Serialize)]
struct Summary {
    steps: usize,
    final_energy: f64,
    peak_energy: f64,
    energy_drift: f64,
    max_residual: f64,
    max_residual_relative: f64,
    ledger: &'static str,
    wellposedness: Option<WpCheck>,
}

fn initial(b: &Built, init: &InitialSpec, seed: u64, u0: &[C64]) -> Result<Vec<C64>, Error> {
    let mut x = initial_state(&b.node, b.geometry.as_ref(), init, seed)?;
    if matches!(init, InitialSpec::Random { .. }) {
        project_consistent(&b.node, &b.spec, &mut x, u0);
    }
    Ok(x)
}

fn cmd_validate(cli: &Cli, path: &Path) -> Result<i32, Error> {
    let sc = load(path)?;
    let rep = validate_scenario(&sc);
    let dir = out_dir(cli, path, &sc)?;
    write_json(&dir.join("validation.json"), &rep)?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(if rep.ok { 0 } else { 1 })
}

fn certificate(b: &Built) -> Certificate {
    certify(&b.spec, b.node.h_bounds)
}

fn cmd_certify(cli: &Cli, path: &Path) -> Result<i32, Error> {
    let sc = load(path)?;
    let b = build(&sc)?;
    let cert = certificate(&b);
    let dir = out_dir(cli, path, &sc)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    if cli.export_operators {
        export_operators(&b.node, &dir)?;
    }
    println!("{}", serde_json::to_string_pretty(&cert)?);
    Ok(if cert.passed() { 0 } else { 1 })
}

fn cmd_simulate(cli: &Cli, path: &Path) -> Result<i32, Error> {
    let sc = load(path)?;
    let cfg = sc.sim.clone().ok_or_else(|| Error::Invalid("scenario has no sim section".into()))?;
    let b = build(&sc)?;
    let cert = certificate(&b);
    if !cert.flags.admissible {
        eprintln!("boundary matrices are not admissible; refusing to simulate");
        return Ok(1);
    }
    let seed = cli.seed.unwrap_or(sc.seed);
    let u0 = cfg.input.eval(0.0, b.spec.m());
    let x0 = initial(&b, &cfg.initial, seed, &u0)?;
    let traj = run(&b.node, &b.spec, &cfg, x0)?;
    let dir = out_dir(cli, path, &sc)?;
    write_csv(&traj, b.spec.m(), b.spec.p(), std::fs::File::create(dir.join("trajectory.csv"))?)?;
    if cli.export_operators {
        export_operators(&b.node, &dir)?;
    }
    if cli.export_fields {
        export_fields(&b.node, &traj, &dir)?;
    }
    let peak = traj.peak_energy();
    let summary = Summary {
        steps: cfg.steps(),
        final_energy: *traj.energy.last().unwrap(),
        peak_energy: peak,
        energy_drift: traj.relative_drift(),
        max_residual: traj.max_residual(),
        max_residual_relative: traj.max_residual() / peak.max(f64::MIN_POSITIVE),
        ledger: if traj.ledger_full { "full" } else { "partial" },
        wellposedness: cert.constants.as_ref().map(|c| {
            let r = traj.bound_ratio();
            WpCheck { c_t: c.c_t, observed_ratio: r, satisfied: r <= c.c_t }
        }),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let bad_wp = summary.wellposedness.as_ref().map(|w| !w.satisfied).unwrap_or(false);
    Ok(if bad_wp { 1 } else { 0 })
}

fn cmd_converge(cli: &Cli, path: &Path, levels: usize) -> Result<i32, Error> {
    let sc = load(path)?;
    let b = build(&sc)?;
    let levels = levels.max(2);
    let mut rows: Vec<Row> = vec![];
    let (radius, length) = b
        .geometry
        .as_ref()
        .and_then(|g| g.cables.first().map(|c| (c.radius, c.curve.length())))
        .unwrap_or((0.1, 1.0));
    let cells: Vec<usize> = (0..levels).map(|i| 8 << i).collect();
    rows.extend(pmag_study(radius, length, &cells, 3, 32)?);
    if let (Some(g), Some(f)) = (&b.geometry, &b.node.field) {
        let e = trace_exactness(g, &f.grid, 4 * b.node.layout.n, 16);
        rows.push(Row { study: "trace_constant_field".into(), level: 0, h: 0.0, error: e, order: None });
    }
    if let Some(cfg) = &sc.sim {
        let seed = cli.seed.unwrap_or(sc.seed);
        let u0 = cfg.input.eval(0.0, b.spec.m());
        let x0 = initial(&b, &cfg.initial, seed, &u0)?;
        rows.extend(ledger_study(&b.node, &b.spec, cfg, &x0, levels)?);
    }
    let dir = out_dir(cli, path, &sc)?;
    write_json(&dir.join("converge.json"), &rows)?;
    println!("{:<34} {:>5} {:>12} {:>12} {:>8}", "study", "level", "h", "error", "order");
    for r in &rows {
        let o = r.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
        println!("{:<34} {:>5} {:>12.4e} {:>12.4e} {:>8}", r.study, r.level, r.h, r.error, o);
    }
    Ok(0)
}

fn dispatch(cli: &Cli, path: &Path) -> i32 {
    let r = match &cli.cmd {
        Cmd::Validate { .. } => cmd_validate(cli, path),
        Cmd::Certify { .. } => cmd_certify(cli, path),
        Cmd::Simulate { .. } => cmd_simulate(cli, path),
        Cmd::Converge { levels, .. } => cmd_converge(cli, path, *levels),
    };
    match r {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let paths = match &cli.cmd {
        Cmd::Validate { scenarios } | Cmd::Certify { scenarios } | Cmd::Simulate { scenarios } | Cmd::Converge { scenarios, .. } => scenarios.clone(),
    };
    if paths.is_empty() {
        eprintln!("no scenario given");
        return ExitCode::from(2);
    }
    let threads = cli.threads.max(1);
    let codes: Vec<i32> = if threads == 1 || paths.len() == 1 {
        paths.iter().map(|p| dispatch(&cli, p)).collect()
    } else {
        let mut codes = vec![0; paths.len()];
        for (chunk_paths, chunk_codes) in paths.chunks(threads).zip(codes.chunks_mut(threads)) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk_paths.iter().map(|p| s.spawn(|| dispatch(&cli, p))).collect();
                for (h, c) in handles.into_iter().zip(chunk_codes.iter_mut()) {
                    *c = h.join().unwrap_or(3);
                }
            });
        }
        codes
    };
    ExitCode::from(codes.into_iter().max().unwrap_or(0) as u8)
}
