//! `corridor`: solve, cross-check and simulate debt-ratio corridors.
//!
//! Library values are ratios; this binary prints corridor edges and sweep
//! values in percent. Exit codes: 0 success, 1 I/O, 2 invalid input or
//! parameters, 3 a solver that did not settle, 4 a failed optimality or
//! monotonicity check.

#![allow(clippy::needless_range_loop)]

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use corridor_core::boundaries::{solve_single_regime, solve_two_regime_with, SolveOptions, SolveReport};
use corridor_core::hjbfd::{solve_control_fd, solve_dynkin_fd, FdGrid, FdKind, FdSolution, Spacing};
use corridor_core::params::Policy;
use corridor_core::simulate::{estimate_cost, estimate_game_value, trace_paths, SimConfig, DEFAULT_SEED};
use corridor_core::sweep::{linspace, run_sweep, table1, SweepParam, SweepResult, SweepSpec};
use corridor_core::valuefn::build_piecewise;
use corridor_core::{CostEstimate, Corridor, Error, ModelParams};

#[derive(Parser)]
#[command(name = "corridor", version, about = "Optimal debt-ratio corridors under regime switching")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Parameter file (flat key = value). Defaults to the reference calibration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one parameter, e.g. --set rho=0.3 or --set q.1.2=0.05.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,

    /// Write the result here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Treat missing generator entries q.i.j with |i - j| > 1 as zero.
    #[arg(long, global = true)]
    allow_sparse_q: bool,

    /// Report, but do not fail on, corridors that break the stopping-region
    /// inequalities. Such corridors are not certified optimal.
    #[arg(long, global = true)]
    no_constraint_check: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Two-regime corridor from the closed-form smooth-fit system.
    Solve {
        /// Also write x, v1, v1_prime, v2, v2_prime to this CSV file.
        #[arg(long, value_name = "PATH")]
        dump: Option<PathBuf>,
        #[arg(long, default_value_t = 401)]
        dump_points: usize,
    },
    /// One-regime corridor.
    Solve1,
    /// Finite-difference obstacle (or control) problem, any number of regimes.
    Fd {
        /// Number of grid nodes.
        #[arg(long, default_value_t = 4000)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = SpacingArg::Log)]
        spacing: SpacingArg,
        /// Solve for the control value V instead of its derivative.
        #[arg(long)]
        control: bool,
    },
    /// Monte-Carlo cost of the corridor policy.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// Write up to 100 path traces (path, t, Y, X, dξ, dη) to this CSV file.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trace_count: usize,
    },
    /// Monte-Carlo value of the stopping game inside the corridor.
    Game {
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Comparative statics in one parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepArg,
        #[arg(long, requires_all = ["to", "points"])]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// Mean switching rate held fixed in the q2 - q1 sweep.
        #[arg(long, default_value_t = 0.02)]
        mean: f64,
        /// Solve every point from scratch, in parallel.
        #[arg(long)]
        cold: bool,
    },
    /// Reference table: both regimes and the one-regime problem.
    Table1,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Paths (antithetic pairs for the cost).
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 2.5e-3)]
    dt: f64,
    /// Simulation horizon; by default the shortest one with tail bias below 1e-3.
    #[arg(long)]
    horizon: Option<f64>,
    /// Worker threads, 0 for all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Starting debt ratio (a fraction, not percent); defaults to the corridor midpoint.
    #[arg(long)]
    x0: Option<f64>,
    /// Starting regime, numbered from 1.
    #[arg(long, default_value_t = 1)]
    regime: usize,
    /// Corridor a1,..,aN,b1,..,bN as fractions; defaults to the solved one.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    corridor: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpacingArg {
    Log,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    #[value(name = "r-g")]
    RMinusG,
    Sigma,
    #[value(name = "q2-q1")]
    Q2MinusQ1,
}

enum Failure {
    Config(String),
    Io(String),
    Core(Error),
    /// A solve that failed inside a batch (sweep points).
    Solver(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Check(_) => 4,
            Failure::Core(e) => match e {
                Error::Constraints { .. } => 4,
                Error::Invalid(_) | Error::Domain(_) | Error::Regimes { .. } | Error::TailBound { .. } => 2,
                _ => 3,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Io(_) => "io",
            Failure::Config(_) => "config",
            Failure::Solver(_) => "convergence",
            Failure::Check(_) => "check",
            Failure::Core(e) => match e {
                Error::Invalid(_) => "validation",
                Error::Constraints { .. } => "constraints",
                Error::Domain(_) | Error::Regimes { .. } | Error::TailBound { .. } => "domain",
                _ => "convergence",
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Solver(m) | Failure::Check(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn pcts(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| pct(x)).collect()
}

fn load_params(cli: &Cli, default: ModelParams) -> Res<ModelParams> {
    let mut flat = match &cli.config {
        Some(path) => config::read_file(path)?,
        None => config::to_flat(&default),
    };
    for item in &cli.set {
        config::apply_set(&mut flat, item)?;
    }
    Ok(config::to_params(&flat, cli.allow_sparse_q)?)
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn validation_warnings(p: &ModelParams, policy: Policy) -> Vec<String> {
    let msgs: Vec<String> = p.validate_with(policy).warnings.into_iter().map(|w| w.message).collect();
    for m in &msgs {
        warn(m);
    }
    msgs
}

/// Where the result goes: stdout or the `--out` file.
struct Sink(Vec<u8>);

impl Sink {
    fn json(&mut self, v: &Value) -> Res<()> {
        let s = serde_json::to_string_pretty(v).map_err(|e| Failure::Io(e.to_string()))?;
        writeln!(self.0, "{s}")?;
        Ok(())
    }

    fn csv(&mut self) -> csv::Writer<&mut Vec<u8>> {
        csv::Writer::from_writer(&mut self.0)
    }

    fn line(&mut self, s: impl AsRef<str>) -> Res<()> {
        writeln!(self.0, "{}", s.as_ref())?;
        Ok(())
    }

    fn finish(self, out: Option<&Path>) -> Res<()> {
        match out {
            Some(path) => std::fs::write(path, &self.0).map_err(|e| Failure::Io(format!("{}: {e}", path.display()))),
            None => {
                let mut so = std::io::stdout().lock();
                match so.write_all(&self.0).and_then(|_| so.flush()) {
                    // A closed pipe (`| head`) is not an error worth reporting.
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                    _ => Ok(()),
                }
            }
        }
    }
}

fn corridor_human(sink: &mut Sink, c: &Corridor) -> Res<()> {
    sink.line(format!("{:<10}{:>12}{:>12}", "regime", "a (%)", "b (%)"))?;
    for i in 0..c.n() {
        sink.line(format!("{:<10}{:>12.4}{:>12.4}", i + 1, pct(c.a[i]), pct(c.b[i])))?;
    }
    Ok(())
}

fn corridor_csv(sink: &mut Sink, c: &Corridor) -> Res<()> {
    let mut w = sink.csv();
    w.write_record(["regime", "a", "b"])?;
    for i in 0..c.n() {
        w.serialize((i + 1, pct(c.a[i]), pct(c.b[i])))?;
    }
    w.flush()?;
    Ok(())
}

fn corridor_record(c: &Corridor, residual: f64, iterations: usize, passed: bool) -> Value {
    json!({
        "a": c.a,
        "b": c.b,
        "a_pct": pcts(&c.a),
        "b_pct": pcts(&c.b),
        "residual_norm": residual,
        "iterations": iterations,
        "constraints": if passed { "pass" } else { "fail" },
    })
}

fn solve_two(cli: &Cli, p: &ModelParams) -> Res<SolveReport> {
    let opts = SolveOptions {
        skip_constraints: cli.no_constraint_check,
        ..SolveOptions::default()
    };
    let rep = solve_two_regime_with(p, &opts)?;
    if !rep.constraints.passed {
        warn(&format!(
            "corridor fails the stopping-region inequalities (worst margin {:.3e}); not certified optimal",
            rep.constraints.worst_margin
        ));
    }
    Ok(rep)
}

fn cmd_solve(cli: &Cli, sink: &mut Sink, dump: Option<&Path>, dump_points: usize) -> Res<()> {
    let p = load_params(cli, ModelParams::reference())?;
    let warnings = validation_warnings(&p, Policy::Strict);
    let rep = solve_two(cli, &p)?;
    let c = &rep.corridor;
    if let Some(path) = dump {
        let pw = build_piecewise(&p, c)?;
        let top = 1.5 * c.b[1];
        let n = dump_points.max(2);
        let mut buf = Sink(Vec::new());
        {
            let mut w = buf.csv();
            w.write_record(["x", "v1", "v1_prime", "v2", "v2_prime"])?;
            for x in linspace(top / n as f64, top, n) {
                w.serialize((x, pw.eval_v(x, 0), pw.eval_v_prime(x, 0), pw.eval_v(x, 1), pw.eval_v_prime(x, 1)))?;
            }
            w.flush()?;
        }
        buf.finish(Some(path))?;
    }
    match cli.format {
        Format::Human => {
            corridor_human(sink, c)?;
            sink.line(format!(
                "residual {:.2e} after {} iterations; constraints {}",
                rep.residual_norm,
                rep.iterations,
                if rep.constraints.passed { "pass" } else { "FAIL" }
            ))
        }
        Format::Csv => corridor_csv(sink, c),
        Format::Json => {
            let mut rec = corridor_record(c, rep.residual_norm, rep.iterations, rep.constraints.passed);
            rec["worst_margin"] = json!(rep.constraints.worst_margin);
            rec["route"] = json!(rep.route);
            rec["warnings"] = json!(warnings);
            sink.json(&rec)
        }
    }
}

fn cmd_solve1(cli: &Cli, sink: &mut Sink) -> Res<()> {
    let p = load_params(cli, ModelParams::reference_single())?;
    let warnings = validation_warnings(&p, Policy::Strict);
    let s = solve_single_regime(&p)?;
    let c = Corridor::new(vec![s.a], vec![s.b]);
    match cli.format {
        Format::Human => {
            corridor_human(sink, &c)?;
            sink.line(format!("residual {:.2e} after {} iterations", s.residual_norm, s.iterations))
        }
        Format::Csv => corridor_csv(sink, &c),
        Format::Json => {
            let mut rec = corridor_record(&c, s.residual_norm, s.iterations, true);
            rec["warnings"] = json!(warnings);
            sink.json(&rec)
        }
    }
}

fn fd_dump(sink: &mut Sink, sol: &FdSolution) -> Res<()> {
    let n = sol.values.len();
    let mut header = vec!["x".to_string()];
    let name = if sol.kind == FdKind::Control { "V" } else { "v" };
    header.extend((1..=n).map(|i| format!("{name}{i}")));
    let derivs: Vec<Vec<f64>> = if sol.kind == FdKind::Control {
        header.extend((1..=n).map(|i| format!("V{i}_x")));
        (0..n).map(|i| sol.derivative(i)).collect()
    } else {
        Vec::new()
    };
    let mut w = sink.csv();
    w.write_record(&header)?;
    for k in 0..sol.x.len() {
        let mut row = vec![sol.x[k]];
        row.extend(sol.values.iter().map(|v| v[k]));
        row.extend(derivs.iter().map(|v| v[k]));
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fd(cli: &Cli, sink: &mut Sink, m: usize, spacing: SpacingArg, control: bool) -> Res<()> {
    let p = load_params(cli, ModelParams::reference())?;
    let warnings = validation_warnings(&p, Policy::Relaxed);
    let spacing = match spacing {
        SpacingArg::Log => Spacing::Log,
        SpacingArg::Uniform => Spacing::Uniform,
    };
    let grid = FdGrid::for_params(&p, m, spacing)?;
    let sol = if control {
        solve_control_fd(&p, &grid)?
    } else {
        solve_dynkin_fd(&p, &grid)?
    };
    let passed = sol.complementarity_residual < 1e-9 * p.c1;
    match cli.format {
        Format::Csv => fd_dump(sink, &sol),
        Format::Human => {
            if let Some(c) = &sol.extracted {
                corridor_human(sink, c)?;
            }
            sink.line(format!(
                "{} nodes, max spacing {:.3e}, complementarity residual {:.2e}",
                sol.x.len(),
                sol.max_spacing(),
                sol.complementarity_residual
            ))
        }
        Format::Json => {
            let c = sol.extracted.clone().ok_or(Error::EmptyContact {
                regime: 0,
                which: "upper or lower",
            })?;
            let mut rec = corridor_record(&c, sol.complementarity_residual, sol.iterations, passed);
            rec["kind"] = json!(sol.kind);
            rec["grid"] = json!(sol.grid);
            rec["max_spacing"] = json!(sol.max_spacing());
            rec["warnings"] = json!(warnings);
            sink.json(&rec)
        }
    }
}

fn sim_setup(cli: &Cli, sim: &SimArgs) -> Res<(ModelParams, Corridor, f64, usize, SimConfig)> {
    let p = load_params(cli, ModelParams::reference())?;
    validation_warnings(&p, Policy::Relaxed);
    let n = p.n_regimes();
    if sim.regime == 0 || sim.regime > n {
        return Err(Failure::Config(format!("--regime must be between 1 and {n}")));
    }
    let i0 = sim.regime - 1;
    let corridor = match &sim.corridor {
        Some(v) if v.len() == 2 * n => Corridor::new(v[..n].to_vec(), v[n..].to_vec()),
        Some(v) => return Err(Failure::Config(format!("--corridor needs {} values, got {}", 2 * n, v.len()))),
        None if n == 1 => {
            let s = solve_single_regime(&p)?;
            Corridor::new(vec![s.a], vec![s.b])
        }
        None if n == 2 => solve_two(cli, &p)?.corridor,
        None => return Err(Failure::Config("pass --corridor for more than two regimes".into())),
    };
    let x0 = sim.x0.unwrap_or(0.5 * (corridor.a[i0] + corridor.b[i0]));
    let cfg = SimConfig {
        dt: sim.dt,
        horizon: sim.horizon,
        n_paths: sim.paths,
        seed: sim.seed,
        threads: sim.threads,
        ..SimConfig::default()
    };
    Ok((p, corridor, x0, i0, cfg))
}

fn estimate_out(cli: &Cli, sink: &mut Sink, est: &CostEstimate, c: &Corridor, x0: f64, regime: usize) -> Res<()> {
    match cli.format {
        Format::Human => {
            sink.line(format!("start x0 = {:.4}% in regime {regime}", pct(x0)))?;
            sink.line(format!("estimate {:.6} ± {:.6} (1 s.e.)", est.mean, est.std_error))?;
            sink.line(format!(
                "{} samples, dt {}, horizon {}, tail bound {:.2e}, seed {}",
                est.n_paths, est.dt, est.horizon, est.tail_bound, est.seed
            ))
        }
        Format::Csv => {
            let mut w = sink.csv();
            w.write_record(["mean", "std_error", "n_paths", "dt", "horizon", "tail_bound", "seed"])?;
            w.serialize((est.mean, est.std_error, est.n_paths, est.dt, est.horizon, est.tail_bound, est.seed))?;
            w.flush()?;
            Ok(())
        }
        Format::Json => {
            let mut rec = serde_json::to_value(est).map_err(|e| Failure::Io(e.to_string()))?;
            rec["x0"] = json!(x0);
            rec["regime"] = json!(regime);
            rec["corridor"] = json!({ "a": c.a, "b": c.b });
            sink.json(&rec)
        }
    }
}

fn cmd_simulate(cli: &Cli, sink: &mut Sink, sim: &SimArgs, trace: Option<&Path>, count: usize) -> Res<()> {
    let (p, c, x0, i0, cfg) = sim_setup(cli, sim)?;
    let est = estimate_cost(&p, &c, x0, i0, &cfg)?;
    if let Some(path) = trace {
        let paths = trace_paths(&p, &c, x0, i0, &cfg, count)?;
        let mut buf = Sink(Vec::new());
        {
            let mut w = buf.csv();
            w.write_record(["path", "t", "Y", "X", "dξ", "dη"])?;
            for (k, tr) in paths.iter().enumerate() {
                for s in 0..tr.t.len() {
                    w.serialize((
                        k,
                        tr.t[s],
                        tr.regime[s] + 1,
                        tr.x[s],
                        tr.d_xi_reflect[s] + tr.d_xi_lump[s],
                        tr.d_eta_reflect[s] + tr.d_eta_lump[s],
                    ))?;
                }
            }
            w.flush()?;
        }
        buf.finish(Some(path))?;
    }
    estimate_out(cli, sink, &est, &c, x0, sim.regime)
}

fn cmd_game(cli: &Cli, sink: &mut Sink, sim: &SimArgs) -> Res<()> {
    let (p, c, x0, i0, cfg) = sim_setup(cli, sim)?;
    let est = estimate_game_value(&p, &c, x0, i0, &cfg)?;
    estimate_out(cli, sink, &est, &c, x0, sim.regime)
}

fn sweep_out(cli: &Cli, sink: &mut Sink, res: &SweepResult) -> Res<()> {
    let cols = |pt: &corridor_core::sweep::SweepPoint| -> Vec<Option<f64>> {
        match (&pt.corridor, &pt.widths) {
            (Some(c), Some(w)) => [c.a[0], c.a[1], c.b[0], c.b[1], w[0], w[1]].iter().map(|&x| Some(pct(x))).collect(),
            _ => vec![None; 6],
        }
    };
    match cli.format {
        Format::Csv => {
            let mut w = sink.csv();
            w.write_record(["swept_value", "a1", "a2", "b1", "b2", "w1", "w2", "status"])?;
            for pt in &res.points {
                let mut row: Vec<String> = vec![pct(pt.value).to_string()];
                row.extend(cols(pt).iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
                row.push(if pt.ok() { "ok".into() } else { "failed".into() });
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        }
        Format::Human => {
            sink.line(format!(
                "{:>12}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}  status",
                format!("{} (%)", res.param.name()),
                "a1",
                "a2",
                "b1",
                "b2",
                "w1",
                "w2"
            ))?;
            for pt in &res.points {
                let body: String = cols(pt)
                    .iter()
                    .map(|v| v.map(|x| format!("{x:>10.4}")).unwrap_or_else(|| format!("{:>10}", "-")))
                    .collect();
                let status = pt.error.as_deref().unwrap_or("ok");
                sink.line(format!("{:>12.4}{body}  {status}", pct(pt.value)))?;
            }
            for n in &res.notes {
                sink.line(format!("note: {n}"))?;
            }
            Ok(())
        }
        Format::Json => {
            let points: Vec<Value> = res
                .points
                .iter()
                .map(|pt| {
                    let c = cols(pt);
                    json!({
                        "swept_value": pct(pt.value),
                        "a1": c[0], "a2": c[1], "b1": c[2], "b2": c[3], "w1": c[4], "w2": c[5],
                        "status": if pt.ok() { "ok" } else { "failed" },
                        "error": pt.error,
                        "residual_norm": pt.residual_norm,
                    })
                })
                .collect();
            sink.json(&json!({
                "param": res.param.name(),
                "units": "percent",
                "points": points,
                "findings": res.findings,
                "notes": res.notes,
            }))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    cli: &Cli,
    sink: &mut Sink,
    which: SweepArg,
    range: Option<(f64, f64, usize)>,
    mean: f64,
    cold: bool,
) -> Res<()> {
    let mut spec = match which {
        SweepArg::RMinusG => SweepSpec::r_minus_g(),
        SweepArg::Sigma => SweepSpec::sigma(),
        SweepArg::Q2MinusQ1 => SweepSpec {
            param: SweepParam::Q2MinusQ1 { mean },
            ..SweepSpec::q2_minus_q1()
        },
    };
    if cli.config.is_some() || !cli.set.is_empty() {
        spec.base = load_params(cli, spec.base.clone())?;
    }
    if let Some((lo, hi, n)) = range {
        spec.grid = linspace(lo, hi, n);
    }
    spec.warm_start = !cold;
    let res = run_sweep(&spec)?;
    for f in &res.findings {
        warn(&format!(
            "{} moves the wrong way between {} and {} (change {:.3e}, {:?})",
            f.column, f.between.0, f.between.1, f.change, f.severity
        ));
    }
    sweep_out(cli, sink, &res)?;
    if let Some(pt) = res.points.iter().find(|pt| !pt.ok()) {
        return Err(Failure::Solver(format!(
            "sweep point {} failed: {}",
            pt.value,
            pt.error.as_deref().unwrap_or("unknown error")
        )));
    }
    if res.errors().next().is_some() {
        return Err(Failure::Check("sweep breaks the proven monotonicity".into()));
    }
    Ok(())
}

fn cmd_table1(cli: &Cli, sink: &mut Sink) -> Res<()> {
    let over = if cli.config.is_some() || !cli.set.is_empty() {
        Some(load_params(cli, ModelParams::reference())?)
    } else {
        None
    };
    let t = table1(over)?;
    match cli.format {
        Format::Human => {
            sink.line(format!(
                "{:<12}{:>10}{:>10}{:>14}{:>14}",
                "", "a (%)", "b (%)", "published a", "published b"
            ))?;
            for r in &t.rows {
                sink.line(format!(
                    "{:<12}{:>10.4}{:>10.4}{:>14.4}{:>14.4}",
                    r.label,
                    pct(r.a),
                    pct(r.b),
                    pct(r.published.0),
                    pct(r.published.1)
                ))?;
            }
            sink.line(format!(
                "residual {:.2e}; constraints {}; bracketed by the one-regime corridors: {}",
                t.residual_norm,
                if t.constraints_passed { "pass" } else { "FAIL" },
                if t.bracket_ok { "yes" } else { "NO" }
            ))
        }
        Format::Csv => {
            let mut w = sink.csv();
            w.write_record(["row", "a", "b", "published_a", "published_b"])?;
            for r in &t.rows {
                w.serialize((&r.label, pct(r.a), pct(r.b), pct(r.published.0), pct(r.published.1)))?;
            }
            w.flush()?;
            Ok(())
        }
        Format::Json => {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "row": r.label,
                        "a": r.a, "b": r.b,
                        "a_pct": pct(r.a), "b_pct": pct(r.b),
                        "published_a_pct": pct(r.published.0),
                        "published_b_pct": pct(r.published.1),
                    })
                })
                .collect();
            sink.json(&json!({
                "rows": rows,
                "residual_norm": t.residual_norm,
                "constraints": if t.constraints_passed { "pass" } else { "fail" },
                "bracket_ok": t.bracket_ok,
            }))
        }
    }
}

fn run(cli: &Cli) -> Res<()> {
    let mut sink = Sink(Vec::new());
    match &cli.cmd {
        Cmd::Solve { dump, dump_points } => cmd_solve(cli, &mut sink, dump.as_deref(), *dump_points)?,
        Cmd::Solve1 => cmd_solve1(cli, &mut sink)?,
        Cmd::Fd { grid, spacing, control } => cmd_fd(cli, &mut sink, *grid, *spacing, *control)?,
        Cmd::Simulate { sim, trace, trace_count } => cmd_simulate(cli, &mut sink, sim, trace.as_deref(), *trace_count)?,
        Cmd::Game { sim } => cmd_game(cli, &mut sink, sim)?,
        Cmd::Sweep {
            param,
            from,
            to,
            points,
            mean,
            cold,
        } => {
            let range = from.map(|lo| (lo, to.unwrap_or(lo), points.unwrap_or(1)));
            // Sweep output is still useful when a point fails, so write it first.
            let res = cmd_sweep(cli, &mut sink, *param, range, *mean, *cold);
            sink.finish(cli.out.as_deref())?;
            return res;
        }
        Cmd::Table1 => cmd_table1(cli, &mut sink)?,
    }
    sink.finish(cli.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if cli.format == Format::Json {
                let mut err = json!({ "kind": f.kind(), "exit_code": f.code(), "message": f.message() });
                if let Failure::Core(Error::Invalid(rep)) = &f {
                    err["hard_failures"] = json!(rep.hard_failures);
                }
                eprintln!("{}", json!({ "error": err }));
            } else {
                eprintln!("error: {}", f.message());
            }
            ExitCode::from(f.code())
        }
    }
}
