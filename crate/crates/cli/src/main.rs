use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use nbody_maslov::central::{find_cc, CcOptions, CentralConfiguration};
use nbody_maslov::hamiltonian::{hyperbolicity_check, CoefficientPath};
use nbody_maslov::homothetic::{
    geometric_schedule, growth_rate, homothetic_morse, GrowthOptions, HomotheticOptions, HomotheticOrbit, RadialProfile,
};
use nbody_maslov::linalg::Vector;
use nbody_maslov::maslov::{mu_nu_against, mu_span, HeteroclinicOptions, LagrangianFrame};
use nbody_maslov::mcgehee::{self, BlowupKind, BlowupState, FlowOptions};
use nbody_maslov::nbody::MassSystem;
use nbody_maslov::ode::Tolerances;
use nbody_maslov::oracle::{compare, homothetic_newton_path, OracleOptions};
use nbody_maslov::problem::ProblemSpec;
use nbody_maslov::Error;

const SCHEMA: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "maslov-nbody", version, about = "Morse and Maslov indices of doubly asymptotic n-body solutions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Problem file (TOML, or JSON by extension).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Energy H₀; overrides the problem file.
    #[arg(long, global = true, allow_hyphen_values = true)]
    h0: Option<f64>,
    /// Classification tolerance for `cc`, relative ODE tolerance elsewhere
    /// (absolute = tol/100).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Output file (stdout if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, conflicts_with = "csv")]
    json: bool,
    #[arg(long, global = true)]
    csv: bool,
    /// Print the parsed problem file and exit.
    #[arg(long, global = true)]
    verify_input: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Central configurations.
    #[command(subcommand)]
    Cc(CcCmd),
    /// Blown-up nonlinear flow.
    #[command(subcommand)]
    Flow(FlowCmd),
    /// Maslov index of the coefficient path in the problem's `[path]` table.
    Maslov(MaslovArgs),
    /// Homothetic orbits.
    #[command(subcommand)]
    Homothetic(HomotheticCmd),
    /// Finite-element Morse index against the Maslov count.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Same as `homothetic growth`.
    Growth(GrowthArgs),
}

#[derive(Subcommand, Debug)]
enum CcCmd {
    /// Newton search from a starting configuration.
    Find(GuessArgs),
    /// Search, then report the spectral class and the collision-end hyperbolicity.
    Classify(GuessArgs),
}

#[derive(Args, Debug)]
struct GuessArgs {
    /// `builtin:equilateral`, `builtin:collinear` or a file with `positions`.
    #[arg(long)]
    guess: Option<String>,
}

#[derive(Subcommand, Debug)]
enum FlowCmd {
    Integrate(FlowArgs),
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[arg(long, value_enum, default_value = "mcgehee")]
    kind: KindArg,
    /// τ range `a,b`; integration starts at a.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    tau_span: (f64, f64),
    #[arg(long)]
    guess: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum KindArg {
    Mcgehee,
    Hyperbolic,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum AgainstArg {
    Dirichlet,
    Neumann,
}

#[derive(Args, Debug)]
struct MaslovArgs {
    /// Finite span `a,b` (flow of W started at a); heteroclinic index on ℝ if absent.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    span: Option<(f64, f64)>,
    #[arg(long, value_enum, default_value = "dirichlet")]
    against: AgainstArg,
    /// Write τ and the entries of B(τ) (row-major) as CSV.
    #[arg(long)]
    dump_coeff: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum HomotheticCmd {
    /// Morse index of the homothetic orbit with energy H₀.
    Index(GuessArgs),
    /// m⁻(t₁, t₂)/|ln β(t₂)| along a schedule of β(t₂).
    Growth(GrowthArgs),
}

#[derive(Args, Debug)]
struct GrowthArgs {
    /// `geometric:β₀,ratio,count`.
    #[arg(long, default_value = "geometric:0.1,0.5,21")]
    t2_schedule: String,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long)]
    guess: Option<String>,
}

#[derive(Subcommand, Debug)]
enum OracleCmd {
    Compare(OracleArgs),
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Newtonian-time window `t1,t2`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    window: (f64, f64),
    #[arg(long, value_delimiter = ',', default_value = "200,400,800")]
    refine: Vec<usize>,
    #[arg(long)]
    guess: Option<String>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `a,b`, got '{s}'"));
    }
    let a = parts[0].trim().parse::<f64>().map_err(|e| format!("'{}': {e}", parts[0]))?;
    let b = parts[1].trim().parse::<f64>().map_err(|e| format!("'{}': {e}", parts[1]))?;
    if !(a.is_finite() && b.is_finite()) || a == b {
        return Err(format!("'{s}' is not a proper interval"));
    }
    Ok((a, b))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Io(_) | Failure::Core(Error::InvalidInput(_)) => 1,
            Failure::Core(e) if e.is_convergence_failure() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

/// Finished output of a command.
enum Output {
    Json(Value),
    Csv { header: Vec<String>, rows: Vec<Vec<String>> },
}

/// Full-precision decimal (17 significant digits).
fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

struct Ctx {
    common: Common,
    spec: ProblemSpec,
}

impl Ctx {
    fn ode(&self) -> Tolerances {
        match self.common.tol {
            Some(t) => Tolerances { rtol: t, atol: t / 100.0 },
            None => self.spec.tolerances(),
        }
    }

    fn h0(&self) -> Res<f64> {
        self.common
            .h0
            .or(self.spec.h0)
            .ok_or_else(|| Failure::Usage("energy missing: pass --h0 or set `h0` in the problem file".into()))
    }

    fn system(&self) -> Res<MassSystem> {
        Ok(self.spec.system()?)
    }

    /// CC search with default options (`--tol` is an ODE tolerance here).
    fn cc(&self, sys: &MassSystem, guess: Option<&str>) -> Res<CentralConfiguration> {
        Ok(self.spec.central_configuration(sys, guess, &CcOptions::default())?)
    }

    /// Orbit from a synthetic `[spectrum]` table, else from a CC of the system.
    fn orbit(&self, guess: Option<&str>) -> Res<(HomotheticOrbit, Value)> {
        let h0 = self.h0()?;
        if let Some(sp) = &self.spec.spectrum {
            let orbit = HomotheticOrbit::from_spectrum(sp.u, &sp.lambdas, h0)?;
            return Ok((orbit, json!({ "source": "spectrum", "U": sp.u, "lambdas": sp.lambdas })));
        }
        let sys = self.system()?;
        let cc = self.cc(&sys, guess)?;
        let orbit = HomotheticOrbit::from_cc(&sys, &cc, h0)?;
        Ok((orbit, json!({ "source": "central-configuration", "cc": cc })))
    }

    fn envelope(&self, command: &str, extra: Value, result: Value) -> Value {
        json!({
            "schema": SCHEMA,
            "command": command,
            "config": {
                "input": self.common.input.as_ref().map(|p| p.display().to_string()),
                "problem": self.spec,
                "h0": self.common.h0.or(self.spec.h0),
                "tol": self.common.tol,
                "ode": self.ode(),
                "threads": rayon::current_num_threads(),
                "resolved": extra,
            },
            "result": result,
        })
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize to JSON")
}

fn run_cc(ctx: &Ctx, cmd: &CcCmd) -> Res<Output> {
    let sys = ctx.system()?;
    let (name, guess) = match cmd {
        CcCmd::Find(g) => ("cc find", g.guess.as_deref()),
        CcCmd::Classify(g) => ("cc classify", g.guess.as_deref()),
    };
    let mut opts = CcOptions::default();
    if let Some(t) = ctx.common.tol {
        opts.class_tol = t;
    }
    let start = ctx.spec.starting_configuration(&sys, guess)?;
    let cc = find_cc(&sys, &start, &opts)?;
    let mut result = json!({
        "lambdas": cc.lambdas,
        "U0": cc.u0,
        "class": cc.spiral_class,
        "kernel_dim": cc.kernel_dim,
        "residual": cc.residual,
        "iterations": cc.iterations,
        "s0": cc.s0,
        "chart": cc.chart,
    });
    if matches!(cmd, CcCmd::Classify(_)) {
        let (split, agrees) = hyperbolicity_check(&cc)?;
        let eig: Vec<[f64; 2]> = split.eigenvalues.iter().map(|z| [z.re, z.im]).collect();
        result["collision_limit"] = json!({
            "eigenvalues": eig,
            "gap": split.gap,
            "hyperbolic": split.hyperbolic,
            "agrees_with_class": agrees,
        });
    }
    Ok(Output::Json(ctx.envelope(name, json!({ "cc_options": opts, "start": start.as_slice() }), result)))
}

fn run_flow(ctx: &Ctx, args: &FlowArgs) -> Res<Output> {
    let sys = ctx.system()?;
    let kind = match args.kind {
        KindArg::Mcgehee => BlowupKind::McGehee,
        KindArg::Hyperbolic => BlowupKind::Hyperbolic,
    };
    let (a, b) = args.tau_span;
    let (chart, state, origin) = match (&ctx.spec.positions, &ctx.spec.velocities) {
        (Some(q), Some(qd)) if args.guess.is_none() => {
            let q = Vector::from_column_slice(q);
            let qd = Vector::from_column_slice(qd);
            let (chart, mut st) = mcgehee::from_cartesian(&sys, kind, &q, &qd)?;
            st.tau = a;
            (chart, st, json!("cartesian"))
        }
        _ => {
            // Homothetic start on a central configuration.
            let h0 = ctx.h0()?;
            let cc = ctx.cc(&sys, args.guess.as_deref())?;
            let m = cc.chart.dim();
            let (v, r) = match kind {
                BlowupKind::McGehee => {
                    let p = RadialProfile::new(cc.u0, h0)?;
                    if h0 > 0.0 && a >= 0.0 {
                        return Err(Failure::Usage("McGehee homothetic start with H0 > 0 needs τ < 0".into()));
                    }
                    (p.v(a), p.r(a))
                }
                BlowupKind::Hyperbolic => {
                    if h0 <= 0.0 {
                        return Err(Failure::Core(Error::Precondition("hyperbolic coordinates need H0 > 0".into())));
                    }
                    (-(2.0 * (h0 + cc.u0)).sqrt(), 1.0)
                }
            };
            let st = BlowupState { kind, v, u: Vector::zeros(m), r, x: Vector::zeros(m), tau: a, t: 0.0 };
            (cc.chart.clone(), st, json!({ "homothetic": cc }))
        }
    };
    let opts = FlowOptions { tol: ctx.ode(), ..FlowOptions::default() };
    let traj = mcgehee::integrate(&sys, &chart, &state, b, &opts)?;
    if ctx.common.json {
        let diag = mcgehee::asymptotic_diagnostics(&traj).ok();
        let last = traj.last();
        let result = json!({
            "kind": kind.as_str(),
            "h0": traj.h0,
            "samples": traj.samples.len(),
            "max_energy_residual": traj.max_energy_residual,
            "projections": traj.projections,
            "recenterings": traj.recenterings,
            "initial": traj.first(),
            "final": last,
            "charts": traj.charts,
            "diagnostics": diag,
        });
        return Ok(Output::Json(ctx.envelope("flow integrate", json!({ "start": origin, "flow": opts }), result)));
    }
    let m = chart.dim();
    let mut header = vec!["tau".to_string(), "t".into(), "v".into()];
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("r".into());
    header.extend((0..m).map(|i| format!("x{i}")));
    header.push("energy_residual".into());
    header.push("chart".into());
    let rows = traj
        .samples
        .iter()
        .map(|s| {
            let st = &s.state;
            let mut row = vec![num(st.tau), num(st.t), num(st.v)];
            row.extend(st.u.iter().map(|x| num(*x)));
            row.push(num(st.r));
            row.extend(st.x.iter().map(|x| num(*x)));
            row.push(num(s.energy_residual));
            row.push(s.chart.to_string());
            row
        })
        .collect();
    Ok(Output::Csv { header, rows })
}

fn run_maslov(ctx: &Ctx, args: &MaslovArgs) -> Res<Output> {
    let spec = ctx
        .spec
        .path
        .as_ref()
        .ok_or_else(|| Failure::Usage("maslov needs a `[path]` table in the problem file".into()))?;
    let path = spec.build()?;
    let k = path.dim() / 2;
    let w = match args.against {
        AgainstArg::Dirichlet => LagrangianFrame::dirichlet(k),
        AgainstArg::Neumann => LagrangianFrame::neumann(k),
    };
    let against = match args.against {
        AgainstArg::Dirichlet => "dirichlet",
        AgainstArg::Neumann => "neumann",
    };
    if let Some(file) = &args.dump_coeff {
        let (a, b) = args.span.unwrap_or((-10.0, 10.0));
        dump_coefficients(path.as_ref(), a, b, file)?;
    }
    let het = HeteroclinicOptions { ode: ctx.ode(), ..HeteroclinicOptions::default() };
    let mut report = match args.span {
        Some((a, b)) => {
            let mut rep = mu_span(path.as_ref(), &w, a, b, ctx.ode())?;
            if matches!(args.against, AgainstArg::Dirichlet) {
                rep.morse = Some(rep.maslov - k as i64);
            }
            rep
        }
        None => mu_nu_against(path.as_ref(), &w, &het)?,
    };
    report.against = against.into();
    Ok(Output::Json(ctx.envelope("maslov", json!({ "span": args.span, "heteroclinic": het }), to_value(&report))))
}

fn dump_coefficients(path: &dyn CoefficientPath, a: f64, b: f64, file: &PathBuf) -> Res<()> {
    let n = path.dim();
    let mut w = csv::Writer::from_path(file).map_err(|e| Failure::Io(format!("{}: {e}", file.display())))?;
    let mut header = vec!["tau".to_string()];
    header.extend((0..n * n).map(|i| format!("b{}_{}", i / n, i % n)));
    w.write_record(&header).map_err(|e| Failure::Io(e.to_string()))?;
    for i in 0..=200 {
        let tau = a + (b - a) * i as f64 / 200.0;
        let m = path.eval(tau);
        let mut row = vec![num(tau)];
        for r in 0..n {
            for c in 0..n {
                row.push(num(m[(r, c)]));
            }
        }
        w.write_record(&row).map_err(|e| Failure::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::Io(e.to_string()))
}

fn run_index(ctx: &Ctx, g: &GuessArgs) -> Res<Output> {
    let (orbit, source) = ctx.orbit(g.guess.as_deref())?;
    let mut opts = HomotheticOptions::default();
    opts.heteroclinic.ode = ctx.ode();
    let cert = homothetic_morse(&orbit, &opts)?;
    let per_block: Vec<Value> = cert
        .per_block
        .iter()
        .map(|b| json!({ "lambda": b.lambda, "mu": b.mu, "nu": b.nu }))
        .collect();
    let result = json!({
        "morse": cert.morse,
        "per_block": per_block,
        "class": cert.class,
        "certificate": cert,
    });
    Ok(Output::Json(ctx.envelope("homothetic index", json!({ "orbit": source, "options": opts }), result)))
}

fn parse_schedule(s: &str) -> Res<Vec<f64>> {
    let body = s
        .strip_prefix("geometric:")
        .ok_or_else(|| Failure::Usage(format!("--t2-schedule: expected `geometric:β₀,ratio,count`, got '{s}'")))?;
    let parts: Vec<&str> = body.split(',').collect();
    let bad = || Failure::Usage(format!("--t2-schedule: cannot parse '{body}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let beta0: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let ratio: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok(geometric_schedule(beta0, ratio, count)?)
}

fn run_growth(ctx: &Ctx, args: &GrowthArgs) -> Res<Output> {
    let schedule = parse_schedule(&args.t2_schedule)?;
    let (orbit, source) = ctx.orbit(args.guess.as_deref())?;
    let opts = GrowthOptions { epsilon: args.epsilon, ode: ctx.ode(), ..GrowthOptions::default() };
    let report = growth_rate(&orbit, &schedule, &opts)?;
    if ctx.common.json {
        return Ok(Output::Json(ctx.envelope(
            "homothetic growth",
            json!({ "orbit": source, "options": opts, "schedule_ln_beta": schedule }),
            to_value(&report),
        )));
    }
    let header = [
        "t2", "beta", "morse", "ratio", "target", "tau2", "ln_beta", "target_time_map", "morse_eps", "sandwich_lower",
        "sandwich_upper", "sandwich_ok",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let opt = |x: Option<i64>| x.map(|v| v.to_string()).unwrap_or_default();
    let rows = report
        .samples
        .iter()
        .map(|s| {
            vec![
                num(s.t2),
                num(s.beta),
                s.morse.to_string(),
                num(s.ratio),
                num(report.target),
                num(s.tau2),
                num(s.ln_beta),
                num(report.target_time_map),
                opt(s.morse_eps),
                opt(s.sandwich_lower),
                opt(s.sandwich_upper),
                s.sandwich_ok.map(|b| b.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    Ok(Output::Csv { header, rows })
}

fn run_oracle(ctx: &Ctx, args: &OracleArgs) -> Res<Output> {
    let opts = OracleOptions { ode: ctx.ode(), ..OracleOptions::default() };
    let (path, source): (Box<dyn CoefficientPath>, Value) = match &ctx.spec.path {
        Some(p) => (p.build()?, json!({ "path": p })),
        None => {
            let h0 = ctx.h0()?;
            let sys = ctx.system()?;
            let cc = ctx.cc(&sys, args.guess.as_deref())?;
            let profile = RadialProfile::new(cc.u0, h0)?;
            let p = homothetic_newton_path(&sys, &cc.s0_vector(), profile)?;
            (Box::new(p), json!({ "homothetic": cc, "collision_times": profile.collision_times() }))
        }
    };
    let cmp = compare(path.as_ref(), args.window, &args.refine, &opts)?;
    Ok(Output::Json(ctx.envelope(
        "oracle compare",
        json!({ "source": source, "window": args.window, "refine": args.refine, "oracle": opts }),
        to_value(&cmp),
    )))
}

fn emit(out: Output, file: Option<&PathBuf>) -> Res<()> {
    let mut sink: Box<dyn Write> = match file {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    match out {
        Output::Json(v) => {
            serde_json::to_writer_pretty(&mut sink, &v).map_err(|e| Failure::Io(e.to_string()))?;
            writeln!(sink).map_err(|e| Failure::Io(e.to_string()))?;
        }
        Output::Csv { header, rows } => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(&header).map_err(|e| Failure::Io(e.to_string()))?;
            for r in rows {
                w.write_record(&r).map_err(|e| Failure::Io(e.to_string()))?;
            }
            w.flush().map_err(|e| Failure::Io(e.to_string()))?;
        }
    }
    Ok(())
}

fn configure_threads() -> Res<()> {
    if let Ok(v) = std::env::var("MASLOV_NBODY_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("MASLOV_NBODY_THREADS: expected a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(Failure::Usage("MASLOV_NBODY_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    configure_threads()?;
    let spec = match &cli.common.input {
        Some(p) => ProblemSpec::load(p)?,
        None => ProblemSpec::default(),
    };
    if cli.common.verify_input {
        let v = json!({ "schema": SCHEMA, "problem": spec });
        return emit(Output::Json(v), cli.common.out.as_ref());
    }
    let ctx = Ctx { common: cli.common, spec };
    let out = match &cli.cmd {
        Command::Cc(c) => run_cc(&ctx, c)?,
        Command::Flow(FlowCmd::Integrate(a)) => run_flow(&ctx, a)?,
        Command::Maslov(a) => run_maslov(&ctx, a)?,
        Command::Homothetic(HomotheticCmd::Index(g)) => run_index(&ctx, g)?,
        Command::Homothetic(HomotheticCmd::Growth(a)) | Command::Growth(a) => run_growth(&ctx, a)?,
        Command::Oracle(OracleCmd::Compare(a)) => run_oracle(&ctx, a)?,
    };
    emit(out, ctx.common.out.as_ref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
