use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use shadowprice::nsfunc::{clarke_dir_deriv, dir_deriv, subdifferential, Tolerances};
use shadowprice::pricing::{dual_ascent, DualParams, PricingResult};
use shadowprice::schema::{parse_problem, parse_scenario};
use shadowprice::shadow::{
    multiplier_report, perturb_and_resolve, report_to_csv, verify_lower_bound_tightening,
    verify_upper_bound, MultiplierReport, PerturbationReport, Verdict, DEFAULT_TAIL,
};
use shadowprice::solver::{
    solve, GridSpec, Method, Problem, Solution, SubgradParams, MAX_GRID_POINTS,
};
use shadowprice::Error;

const EXIT_FAILED: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "shadowprice",
    version,
    about = "Multipliers and shadow prices for nonsmooth linearly constrained problems"
)]
struct Cli {
    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Tolerance for verification checks
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,
    /// Seed recorded by randomized methods
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Lp,
    Subgrad,
    Grid,
}

#[derive(clap::Args)]
struct SolverArgs {
    /// Solver; defaults to lp for piecewise-linear objectives, subgrad for
    /// other convex ones and grid otherwise
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Grid range applied to every axis, as lo,hi
    #[arg(long, default_value = "-10,10")]
    grid_range: String,
    /// Grid points per axis
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the objective and, with --dir, its directional derivatives
    Eval {
        /// Problem file in JSON
        #[arg(long)]
        problem: PathBuf,
        /// Comma-separated coordinates
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        /// Comma-separated direction
        #[arg(long, allow_hyphen_values = true)]
        dir: Option<String>,
    },
    /// Solve a problem
    Solve {
        /// Problem file in JSON
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Lagrangian multipliers at a point, or at the computed optimum
    Multipliers {
        /// Problem file in JSON
        #[arg(long)]
        problem: PathBuf,
        /// Comma-separated coordinates; solves the problem when omitted
        #[arg(long, allow_hyphen_values = true)]
        point: Option<String>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Perturb one constraint level and check the multiplier bounds
    Verify {
        /// Problem file in JSON
        #[arg(long)]
        problem: PathBuf,
        /// Zero-based index into the constraint list
        #[arg(long)]
        constraint: usize,
        /// Comma-separated changes to the constraint level; positive relaxes
        #[arg(long, allow_hyphen_values = true)]
        deltas: String,
        /// Multiplier tested on the relaxation side instead of the computed minimum
        #[arg(long)]
        lambda: Option<f64>,
        /// Multiplier tested on the tightening side instead of the computed maximum
        #[arg(long)]
        lambda_max: Option<f64>,
        /// Number of smallest deltas on each side that must satisfy the bound
        #[arg(long, default_value_t = DEFAULT_TAIL)]
        tail: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Clearing price of a scenario by dual ascent
    Price {
        /// Scenario file in JSON
        #[arg(long)]
        scenario: PathBuf,
        /// Initial price step
        #[arg(long, default_value_t = 1.0)]
        alpha0: f64,
        /// Iteration limit
        #[arg(long, default_value_t = 20_000)]
        max_iter: usize,
    },
}

enum Failure {
    Input(String),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoKktPoint
            | Error::UnboundedMultipliers
            | Error::BaseUnsolved(_)
            | Error::ProjectionFailure
            | Error::InvalidLp(_) => Failure::Failed(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILED
        }
    };
    ExitCode::from(code)
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Eval {
            problem,
            point,
            dir,
        } => cmd_eval(cli, problem, point, dir.as_deref()),
        Command::Solve { problem, solver } => cmd_solve(cli, problem, solver),
        Command::Multipliers {
            problem,
            point,
            solver,
        } => cmd_multipliers(cli, problem, point.as_deref(), solver),
        Command::Verify {
            problem,
            constraint,
            deltas,
            lambda,
            lambda_max,
            tail,
            solver,
        } => cmd_verify(
            cli,
            problem,
            *constraint,
            deltas,
            *lambda,
            *lambda_max,
            *tail,
            solver,
        ),
        Command::Price {
            scenario,
            alpha0,
            max_iter,
        } => cmd_price(cli, scenario, *alpha0, *max_iter),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_problem(path: &Path) -> Result<Problem, Failure> {
    Ok(parse_problem(&read(path)?)?)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::Input(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

fn method_for(cli: &Cli, p: &Problem, args: &SolverArgs) -> Result<Method, Failure> {
    let choice = args.method.unwrap_or_else(|| {
        if p.min_objective().is_piecewise_linear() {
            MethodArg::Lp
        } else if p.min_objective().check_convex().is_ok() {
            MethodArg::Subgrad
        } else {
            MethodArg::Grid
        }
    });
    Ok(match choice {
        MethodArg::Lp => Method::Lp,
        MethodArg::Subgrad => Method::Subgradient(SubgradParams {
            seed: cli.seed,
            ..SubgradParams::default()
        }),
        MethodArg::Grid => {
            let range = parse_list(&args.grid_range, "grid range")?;
            if range.len() != 2 {
                return Err(Failure::Input("grid range needs lo,hi".into()));
            }
            if args.grid_points > MAX_GRID_POINTS {
                return Err(Failure::Input(format!(
                    "at most {MAX_GRID_POINTS} grid points per axis"
                )));
            }
            Method::Grid(GridSpec::uniform(
                p.dim(),
                range[0],
                range[1],
                args.grid_points,
            )?)
        }
    })
}

fn emit_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("plain data serializes")
    );
}

fn emit_csv(header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Failure::Failed(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::Failed(format!("csv: {e}")))?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_eval(cli: &Cli, path: &Path, point: &str, dir: Option<&str>) -> CmdResult {
    let p = load_problem(path)?;
    let x = parse_list(point, "point")?;
    let value = p.value(&x)?;
    let tol = Tolerances::default();
    let (dd, cd) = match dir {
        Some(d) => {
            let d = parse_list(d, "direction")?;
            let f = p.objective();
            (
                Some(dir_deriv(f, &x, &d, &tol)?),
                Some(clarke_dir_deriv(f, &x, &d, &tol)?),
            )
        }
        None => (None, None),
    };
    let generators = subdifferential(p.objective(), &x, &tol)?;
    match cli.format {
        Format::Json => emit_json(&json!({
            "point": x,
            "value": value,
            "dir_deriv": dd,
            "clarke_dir_deriv": cd,
            "generators": generators.generators(),
        })),
        Format::Csv => emit_csv(
            &["value", "dir_deriv", "clarke_dir_deriv"],
            &[vec![value.to_string(), opt(dd), opt(cd)]],
        )?,
    }
    Ok(0)
}

fn solution_csv(s: &Solution) -> Vec<String> {
    vec![
        serde_json::to_value(s.status)
            .expect("enum")
            .as_str()
            .unwrap_or("")
            .to_string(),
        s.x.as_deref().map(join).unwrap_or_default(),
        opt(s.value),
        s.iterations.to_string(),
    ]
}

fn cmd_solve(cli: &Cli, path: &Path, args: &SolverArgs) -> CmdResult {
    let p = load_problem(path)?;
    let method = method_for(cli, &p, args)?;
    let sol = solve(&p, &method)?;
    match cli.format {
        Format::Json => emit_json(&sol),
        Format::Csv => emit_csv(
            &["status", "x", "value", "iterations"],
            &[solution_csv(&sol)],
        )?,
    }
    Ok(if sol.is_optimal() { 0 } else { EXIT_FAILED })
}

fn solve_for_point(cli: &Cli, p: &Problem, args: &SolverArgs) -> Result<Vec<f64>, Failure> {
    let method = method_for(cli, p, args)?;
    let sol = solve(p, &method)?;
    match (sol.is_optimal(), sol.x) {
        (true, Some(x)) => Ok(x),
        _ => Err(Failure::Failed(format!(
            "problem not solved: {:?}",
            sol.status
        ))),
    }
}

fn multipliers_csv(r: &MultiplierReport) -> Vec<Vec<String>> {
    r.constraints
        .iter()
        .zip(&r.min_sum)
        .map(|(c, m)| {
            let origin = serde_json::to_value(c.origin).expect("enum");
            vec![
                origin["kind"].as_str().unwrap_or("").to_string(),
                origin["index"].to_string(),
                c.active.to_string(),
                c.lo.to_string(),
                c.hi.to_string(),
                m.to_string(),
            ]
        })
        .collect()
}

fn cmd_multipliers(cli: &Cli, path: &Path, point: Option<&str>, args: &SolverArgs) -> CmdResult {
    let p = load_problem(path)?;
    let x = match point {
        Some(s) => parse_list(s, "point")?,
        None => solve_for_point(cli, &p, args)?,
    };
    let report = multiplier_report(&p, &x)?;
    match cli.format {
        Format::Json => emit_json(&report),
        Format::Csv => emit_csv(
            &["kind", "index", "active", "lo", "hi", "min_sum"],
            &multipliers_csv(&report),
        )?,
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    cli: &Cli,
    path: &Path,
    i: usize,
    deltas: &str,
    lambda: Option<f64>,
    lambda_max: Option<f64>,
    tail: usize,
    args: &SolverArgs,
) -> CmdResult {
    let p = load_problem(path)?;
    let deltas = parse_list(deltas, "delta")?;
    if i >= p.constraints().len() {
        return Err(Failure::Input(format!("no constraint {i}")));
    }
    let method = method_for(cli, &p, args)?;
    let (lo, hi) = match (lambda, lambda_max) {
        (Some(l), Some(h)) => (l, h),
        _ => {
            let x = solve_for_point(cli, &p, args)?;
            let m = multiplier_report(&p, &x)?;
            let c = &m.constraints[i];
            (lambda.unwrap_or(c.lo), lambda_max.unwrap_or(c.hi))
        }
    };
    let mut report: PerturbationReport = perturb_and_resolve(&p, i, &deltas, &method)?;
    let positive = deltas.iter().filter(|d| **d > 0.0).count();
    let negative = deltas.len() - positive;
    let tail_up = tail.min(positive);
    let tail_down = tail.min(negative);
    if tail_up == 0 && tail_down == 0 {
        return Err(Failure::Input("no perturbations to check".into()));
    }
    if tail_up > 0 {
        verify_upper_bound(&mut report, lo, tail_up, cli.tol)?;
    }
    if tail_down > 0 {
        verify_lower_bound_tightening(&mut report, hi, tail_down, cli.tol)?;
    }
    match cli.format {
        Format::Json => emit_json(&report),
        Format::Csv => print!("{}", report_to_csv(&report)?),
    }
    Ok(if report.verdict == Some(Verdict::Pass) {
        0
    } else {
        EXIT_VERIFY
    })
}

fn pricing_csv(r: &PricingResult) -> Vec<String> {
    vec![
        r.price.to_string(),
        join(&r.allocations),
        r.supply.to_string(),
        r.welfare.to_string(),
        r.iterations.to_string(),
        r.residual.to_string(),
        r.converged.to_string(),
    ]
}

fn cmd_price(cli: &Cli, path: &Path, alpha0: f64, max_iter: usize) -> CmdResult {
    let sc = parse_scenario(&read(path)?)?;
    let params = DualParams {
        alpha0,
        max_iter,
        ..DualParams::default()
    };
    let r = dual_ascent(&sc, &params)?;
    match cli.format {
        Format::Json => emit_json(&r),
        Format::Csv => emit_csv(
            &[
                "price",
                "allocations",
                "supply",
                "welfare",
                "iterations",
                "residual",
                "converged",
            ],
            &[pricing_csv(&r)],
        )?,
    }
    Ok(if r.converged { 0 } else { EXIT_FAILED })
}
