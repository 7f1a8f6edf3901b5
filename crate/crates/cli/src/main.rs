//! `optdesign`: generate instances, solve them, and run the verification suites.
//!
//! Exit codes: 0 success, 1 I/O or parse error (or a failed verification
//! suite), 2 usage error, 3 rounding did not terminate, 4 infeasible or
//! degenerate input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use optdesign::graphapps::{self, Graph, GRAPH_TAG};
use optdesign::instance::{
    self, fixture_a_smoothed_trap, fixture_e_decreasing, fixture_e_identity_trap, gen_gaussian, gen_knapsack,
};
use optdesign::pipeline::{solve_graph, solve_instance, Method, SolveOptions, Solved};
use optdesign::relaxation::DEFAULT_TOL;
use optdesign::report::init_thread_pool;
use optdesign::verify::{lemma_suite, monte_carlo_suite, trap_suite, MonteCarloConfig, SuiteReport};
use optdesign::{Error, ObjectiveKind};

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NOT_TERMINATED: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "optdesign", version, about = "Budget-constrained D/A/E optimal design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance or graph file.
    Gen(GenArgs),
    /// Solve an instance or graph file.
    Solve(SolveArgs),
    /// Run a verification suite; exits 0 iff every check passes.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Gaussian,
    /// Identity-start trap for plain E exchanges (needs --d >= 3, --b).
    FixtureE1,
    /// Trap where every E exchange lowers λ_min (needs an even --b).
    FixtureE2,
    /// Ill-conditioned trap for the smoothed E search (needs an even --b).
    FixtureA3,
    /// Random connected unit-cost graph with --n vertices and --m edges.
    Graph,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long)]
    d: Option<usize>,
    /// Vectors (gaussian), copies per vector kind (fixture-a3) or vertices (graph).
    #[arg(long)]
    n: Option<usize>,
    /// Budget; a cardinality budget unless --m adds random cost rows.
    #[arg(long)]
    b: Option<f64>,
    /// Random knapsack rows (gaussian) or edge count (graph).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Magnitude N of the large fixture vectors.
    #[arg(long = "big-n", visible_alias = "N")]
    big_n: Option<f64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    D,
    A,
    E,
}

impl From<Objective> for ObjectiveKind {
    fn from(o: Objective) -> Self {
        match o {
            Objective::D => ObjectiveKind::D,
            Objective::A => ObjectiveKind::A,
            Objective::E => ObjectiveKind::E,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Relax,
    Fedorov,
    LocalsearchE,
    Round,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Relax => Method::Relax,
            MethodArg::Fedorov => Method::Fedorov,
            MethodArg::LocalsearchE => Method::LocalSearchE,
            MethodArg::Round => Method::Round,
        }
    }
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Instance file (`optdesign v1`) or graph file (`graph n m`).
    input: PathBuf,
    #[arg(long, value_enum)]
    objective: Objective,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Accuracy parameter; defaults to 0.01 for rounding and 0.1 otherwise.
    #[arg(long)]
    eps: Option<f64>,
    /// Cardinality budget replacing any cost rows in the file.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Round against the original budgets instead of the shrunken ones.
    #[arg(long)]
    no_rescale: bool,
    /// Relaxation tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Lemmas,
    Traps,
    Montecarlo,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Cases per lemma check, or rounding runs per objective.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Parse { .. } => EXIT_IO,
            Error::InvalidArgument(_) | Error::NotApplicable(_) | Error::TooLarge { .. } => EXIT_USAGE,
            _ => EXIT_INFEASIBLE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure { code: EXIT_IO, message: format!("{}: {e}", p.display()) }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn require<T>(v: Option<T>, flag: &str, kind: &str) -> Result<T, Failure> {
    v.ok_or_else(|| usage(format!("--kind {kind} requires --{flag}")))
}

fn even_budget(b: f64, kind: &str) -> Result<usize, Failure> {
    if b.fract() != 0.0 || b < 2.0 || (b as usize) % 2 != 0 {
        return Err(usage(format!("--kind {kind} needs an even integer --b >= 2, got {b}")));
    }
    Ok(b as usize)
}

fn gen(args: &GenArgs) -> Result<(), Failure> {
    let text = match args.kind {
        GenKind::Gaussian => {
            let d = require(args.d, "d", "gaussian")?;
            let n = require(args.n, "n", "gaussian")?;
            if d == 0 || n < d {
                return Err(usage(format!("need 1 <= --d <= --n, got d={d} n={n}")));
            }
            let inst = match (args.m, args.b) {
                (Some(m), Some(b)) => gen_knapsack(d, n, m, b, args.seed),
                (Some(_), None) => return Err(usage("--m requires --b")),
                (None, Some(b)) => gen_gaussian(d, n, args.seed).with_cardinality(b),
                (None, None) => gen_gaussian(d, n, args.seed),
            };
            instance::format_instance(&inst)
        }
        GenKind::FixtureE1 => {
            let d = require(args.d, "d", "fixture-e1")?;
            let b = require(args.b, "b", "fixture-e1")?;
            if d < 3 || b.fract() != 0.0 || (b as usize) < d {
                return Err(usage("--kind fixture-e1 needs --d >= 3 and an integer --b >= --d"));
            }
            let fx = fixture_e_identity_trap(d, b as usize, args.big_n.unwrap_or(100.0));
            instance::format_instance(&fx.instance.with_cardinality(b))
        }
        GenKind::FixtureE2 => {
            let b = even_budget(require(args.b, "b", "fixture-e2")?, "fixture-e2")?;
            let big_n = args.big_n.unwrap_or(100.0);
            if !(big_n > 1.0) {
                return Err(usage("--N must exceed 1"));
            }
            instance::format_instance(&fixture_e_decreasing(b, big_n).instance.with_cardinality(b as f64))
        }
        GenKind::FixtureA3 => {
            let b = even_budget(require(args.b, "b", "fixture-a3")?, "fixture-a3")?;
            let copies = args.n.unwrap_or(2 * b);
            if copies < b {
                return Err(usage("--n (copies per vector kind) must be at least --b"));
            }
            let fx = fixture_a_smoothed_trap(b, args.big_n.unwrap_or(20.0), copies);
            instance::format_instance(&fx.instance.with_cardinality(b as f64))
        }
        GenKind::Graph => {
            let n = require(args.n, "n", "graph")?;
            let m = require(args.m, "m", "graph")?;
            graphapps::format_graph(&Graph::random_connected(n, m, args.seed)?)
        }
    };
    write_output(args.out.as_deref(), &text)
}

fn finish(args: &SolveArgs, solved: &Solved) -> Result<(), Failure> {
    let report = &solved.report;
    if let (Some(path), Some(trace)) = (args.trace.as_deref(), solved.trace.as_ref()) {
        write_output(Some(path), &trace.to_csv())?;
    }
    write_output(args.report.as_deref(), &(report.to_json() + "\n"))?;
    if args.report.is_some() {
        println!(
            "{} {}: objective {:.12e}, ratio {}, {} ({} iterations)",
            report.method,
            report.objective.name(),
            report.objective_value,
            report.approximation_ratio.map_or("n/a".into(), |r| format!("{r:.6}")),
            report.termination_reason,
            report.iterations
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !solved.terminated {
        return Err(Failure { code: EXIT_NOT_TERMINATED, message: "rounding did not terminate".into() });
    }
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let opts = SolveOptions { eps: args.eps, seed: args.seed, tol: args.tol, rescale: !args.no_rescale };
    let kind = ObjectiveKind::from(args.objective);
    let method = Method::from(args.method);
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Failure { code: EXIT_IO, message: format!("{}: {e}", args.input.display()) })?;
    let solved = if text.split_whitespace().next() == Some(GRAPH_TAG) {
        let budget = args.budget.ok_or_else(|| usage("graph files need --budget"))?;
        solve_graph(&graphapps::parse_graph(&text)?, kind, method, budget, &opts)?
    } else {
        let mut inst = instance::parse_instance(&text)?;
        if inst.label.is_empty() {
            inst.label = args.input.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        }
        if let Some(b) = args.budget {
            inst = inst.with_cardinality(b);
        }
        if inst.m() == 0 {
            return Err(usage("instance has no budget; pass --budget"));
        }
        solve_instance(&inst, kind, method, &opts)?
    };
    finish(args, &solved)
}

fn print_suite(report: &SuiteReport) -> bool {
    println!("suite {}", report.suite);
    for c in &report.checks {
        println!("{}", c.line());
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    let ok = report.passed();
    println!("{} {}", if ok { "PASS" } else { "FAIL" }, report.suite);
    ok
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let report = match args.suite {
        Suite::Lemmas => lemma_suite(args.runs.unwrap_or(1000), args.seed_base),
        Suite::Traps => trap_suite(),
        Suite::Montecarlo => {
            let mut cfg = MonteCarloConfig { seed_base: args.seed_base, ..MonteCarloConfig::default() };
            if let Some(r) = args.runs {
                cfg.runs = r;
            }
            if cfg.runs == 0 {
                return Err(usage("--runs must be positive"));
            }
            monte_carlo_suite(&cfg)
        }
    };
    if print_suite(&report) {
        Ok(())
    } else {
        Err(Failure { code: EXIT_IO, message: format!("suite {} failed", report.suite) })
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
