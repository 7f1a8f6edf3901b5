//! Invariant sweeps, adversarial fixture replays and the Monte-Carlo
//! harness for the randomized rounding.
//!
//! Each check counts the cases where its hypothesis applied and the cases
//! that violated the conclusion. A check with zero applicable cases fails,
//! so a sweep cannot pass vacuously.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::instance::{
    decreasing_trap_first_swap_lambda, fixture_a_smoothed_trap, fixture_e_decreasing, fixture_e_identity_trap,
    gen_conditioned, gen_gaussian, DesignInstance, ObjectiveKind,
};
use crate::linalg::{
    frob_inner, gram_of, min_eigenvalue, psd_factorize, quad_form, rank_two_logdet_delta,
    rank_two_weighted_trace_delta, swap_det_ratio, sym_eigen, GramState, Mat, Vector,
};
use crate::localsearch::{
    best_exchange, best_exchange_a, best_exchange_d, best_exchange_e, fedorov_a, fedorov_d, local_search_e,
    SmoothedScores,
};
use crate::oracle::{brute_force_best_exchange, exact_conditional_expectation, ExpectationQuantity};
use crate::regret::{compute_action_matrix, cospectral_bounds_check, verify_regret_bound, ActionMatrix};
use crate::relaxation::{scale_solution, solve_relaxation, sparsify_to_extreme_point, FractionalSolution};
use crate::rounding::{RoundingConfig, RoundingPlan, RoundingStatus, RESCALE_FACTOR};
use crate::trace::ExchangeTrace;

/// Relative tolerance of the matrix inequalities and oracle cross-checks.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Cases where the hypothesis applied.
    pub cases: usize,
    pub failures: usize,
    /// Smallest observed slack; negative means violated.
    pub worst_slack: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<40} cases={:<7} failures={:<5} worst_slack={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.worst_slack
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
    /// Measurements that are reported but not asserted.
    pub notes: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tally {
    name: String,
    cases: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new(name: impl Into<String>) -> Self {
        Tally { name: name.into(), cases: 0, failures: 0, worst: f64::INFINITY }
    }

    /// Records one applicable case; `slack` < 0 is a violation.
    fn record(&mut self, slack: f64) {
        self.cases += 1;
        if !(slack >= 0.0) {
            self.failures += 1;
        }
        self.worst = self.worst.min(if slack.is_nan() { f64::NEG_INFINITY } else { slack });
    }

    fn finish(self) -> CheckResult {
        CheckResult { name: self.name, cases: self.cases, failures: self.failures, worst_slack: self.worst }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// G·Gᵀ + shift·I with a random spread of eigenvalues.
fn random_pd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> Mat {
    let g = Mat::from_fn(d, d + rng.random_range(0..3), |_, _| rng.sample::<f64, _>(StandardNormal));
    &g * g.transpose() + Mat::identity(d, d) * shift
}

/// Rescales v so that vᵀM⁻¹v equals `target`.
fn with_leverage(m_inv: &Mat, v: Vector, target: f64) -> Vector {
    let q = quad_form(m_inv, &v);
    v * (target / q).sqrt()
}

fn rel_slack(lhs_small: f64, rhs_large: f64, scale: f64) -> f64 {
    rhs_large - lhs_small + CHECK_TOL * scale.abs().max(1.0)
}

// ---------------------------------------------------------------- lemmas

fn check_rank_one_det(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("rank-one determinant update");
    let mut rng = rng_for(seed, 1);
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let m = random_pd(&mut rng, d, 0.1);
        let v = random_vector(&mut rng, d) * rng.random_range(0.1..3.0);
        let f = psd_factorize(&m).unwrap();
        let ratio = rank_two_logdet_delta(&f, &Vector::zeros(d), &v).unwrap().exp();
        let direct = (&m + &v * v.transpose()).determinant() / m.determinant();
        let expected = 1.0 + f.inv_quad(&v);
        t.record(CHECK_TOL - ((ratio / expected - 1.0).abs()).max((direct / expected - 1.0).abs()));
    }
    t.finish()
}

fn check_swap_det_bound(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("swap determinant lower bound");
    let mut rng = rng_for(seed, 2);
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let m = random_pd(&mut rng, d, 0.1);
        let f = psd_factorize(&m).unwrap();
        let mi = f.inverse();
        let u = with_leverage(&mi, random_vector(&mut rng, d), rng.random_range(0.0..1.0));
        let w = random_vector(&mut rng, d) * rng.random_range(0.1..3.0);
        let (a_u, a_w, a_uw) = (quad_form(&mi, &u), quad_form(&mi, &w), u.dot(&(&mi * &w)));
        let det_m = m.determinant();
        let after = (&m - &u * u.transpose() + &w * w.transpose()).determinant();
        let exact_identity = (after / det_m - swap_det_ratio(a_u, a_w, a_uw)).abs();
        let bound = det_m * (1.0 - a_u) * (1.0 + a_w);
        t.record((after - bound + CHECK_TOL * det_m).min(CHECK_TOL * (1.0 + a_w) - exact_identity));
    }
    t.finish()
}

fn check_rank_two_trace(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("rank-two weighted trace bound");
    let mut rng = rng_for(seed, 3);
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let m = random_pd(&mut rng, d, 0.1);
        let w = random_pd(&mut rng, d, 0.0);
        let f = psd_factorize(&m).unwrap();
        let mi = f.inverse();
        let removed = with_leverage(&mi, random_vector(&mut rng, d), rng.random_range(0.0..0.499));
        let added = random_vector(&mut rng, d) * rng.random_range(0.1..3.0);
        let after = (&m - &removed * removed.transpose() + &added * added.transpose()).try_inverse().unwrap();
        let exact = frob_inner(&w, &after);
        let old = frob_inner(&w, &mi);
        let (a_r, a_a) = (quad_form(&mi, &removed), quad_form(&mi, &added));
        let h = |v: &Vector| quad_form(&w, &(&mi * v));
        let bound = old + h(&removed) / (1.0 - 2.0 * a_r) - h(&added) / (1.0 + 2.0 * a_a);
        let delta = rank_two_weighted_trace_delta(&f, &w, &removed, &added).unwrap();
        let scale = old.abs().max(exact.abs());
        let identity_slack = CHECK_TOL * scale.max(1.0) - (old + delta - exact).abs();
        t.record(rel_slack(exact, bound, scale).min(identity_slack));
    }
    t.finish()
}

fn check_det_inner(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("determinant inner-product bound");
    let mut rng = rng_for(seed, 4);
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let (a, b) = (random_pd(&mut rng, d, 0.05), random_pd(&mut rng, d, 0.05));
        let inner = frob_inner(&a, &b);
        let rhs = d as f64 * a.determinant().powf(1.0 / d as f64) * b.determinant().powf(1.0 / d as f64);
        t.record(rel_slack(rhs, inner, inner));
    }
    t.finish()
}

fn check_trace_inequalities(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("trace inequalities");
    let mut rng = rng_for(seed, 5);
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let (a, b) = (random_pd(&mut rng, d, 0.05), random_pd(&mut rng, d, 0.05));
        let ab2 = frob_inner(&a, &(&b * &b));
        let lower = b.trace().powi(2) / psd_factorize(&a).unwrap().trace_inverse();
        let ab = frob_inner(&a, &b);
        let upper = (a.trace() * ab2).sqrt();
        t.record(rel_slack(lower, ab2, ab2).min(rel_slack(ab, upper, upper)));
    }
    t.finish()
}

fn random_action(rng: &mut ChaCha8Rng) -> (Mat, ActionMatrix) {
    let d = rng.random_range(1..=6);
    let shift = rng.random_range(0.0..1.0);
    let z = random_pd(rng, d, shift) * rng.random_range(0.1..10.0);
    let alpha = rng.random_range(0.1..30.0);
    let a = compute_action_matrix(&z, alpha).unwrap();
    (z, a)
}

fn check_cospectral(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("action-matrix cospectral bounds");
    let mut rng = rng_for(seed, 6);
    for _ in 0..cases {
        let (z, a) = random_action(&mut rng);
        let r = cospectral_bounds_check(&z, &a);
        t.record((r.inner_bound - r.inner + 1e-8).min(r.sqrt_inner_bound - r.sqrt_inner + 1e-8));
    }
    t.finish()
}

fn check_sqrt_trace(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("action-matrix square-root trace");
    let mut rng = rng_for(seed, 7);
    for _ in 0..cases {
        let (_, a) = random_action(&mut rng);
        let d = a.dim() as f64;
        t.record((d.sqrt() + 1e-12 - a.trace_sqrt()).min(1e-12 - (a.trace() - 1.0).abs()));
    }
    t.finish()
}

fn check_sandwich(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("leverage sandwich above one quarter");
    let mut rng = rng_for(seed, 8);
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let mut z = random_pd(&mut rng, d, 0.01);
        let target = rng.random_range(0.25..3.0);
        z *= target / min_eigenvalue(&z);
        let lam = min_eigenvalue(&z);
        if lam < 0.25 {
            continue;
        }
        let alpha = 8.0 * (d as f64).sqrt();
        let a = compute_action_matrix(&z, alpha).unwrap();
        let zi = psd_factorize(&z).unwrap().inverse();
        let v = random_vector(&mut rng, d);
        let lev = quad_form(&zi, &v);
        let mid = alpha * a.quad_sqrt(&v);
        t.record(rel_slack(lev, mid, mid).min(rel_slack(mid, alpha * lam * lev, mid)));
    }
    t.finish()
}

fn check_ratio_monotone(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("ratio functions monotone");
    let mut rng = rng_for(seed, 9);
    for _ in 0..cases {
        let c1 = rng.random_range(0.0..5.0);
        let c2 = rng.random_range(0.01..5.0);
        let c3 = rng.random_range(0.0..5.0);
        let mut xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..50.0)).collect();
        xs.push(0.0);
        xs.sort_by(f64::total_cmp);
        let f = |x: f64| (x - c1) / (c2 + c3 * x.sqrt());
        let g = |x: f64| (x - c1) / (c2 + c3 * x);
        let mut slack = f64::INFINITY;
        for w in xs.windows(2) {
            for h in [&f as &dyn Fn(f64) -> f64, &g] {
                let (lo, hi) = (h(w[0]), h(w[1]));
                slack = slack.min(hi - lo + 1e-12 * (1.0 + lo.abs()));
            }
        }
        t.record(slack);
    }
    t.finish()
}

/// Random b-subset of full rank.
fn random_full_rank_subset(rng: &mut ChaCha8Rng, inst: &DesignInstance, b: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..inst.n()).collect();
    loop {
        idx.shuffle(rng);
        let mut s = idx[..b].to_vec();
        s.sort_unstable();
        if psd_factorize(&gram_of(&inst.vectors, s.iter().copied())).is_ok() {
            return s;
        }
    }
}

fn check_best_exchange_oracle(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("best exchange matches enumeration");
    let mut rng = rng_for(seed, 10);
    for c in 0..cases {
        let d = rng.random_range(2..=4);
        let n = rng.random_range(d + 2..=12);
        let b = rng.random_range(d..n);
        let inst = gen_gaussian(d, n, seed.wrapping_add(c as u64));
        let s = random_full_rank_subset(&mut rng, &inst, b);
        let state = GramState::new(&inst.vectors, &s);
        for kind in [ObjectiveKind::D, ObjectiveKind::A] {
            let fast = best_exchange(&state, &inst.vectors, kind, None).ok().flatten();
            let slow = brute_force_best_exchange(&state, &inst.vectors, kind);
            let slack = match (fast, slow) {
                (Some(f), Some(s)) if f.remove == s.remove && f.add == s.add => {
                    CHECK_TOL * s.value.abs().max(1.0) - (f.value - s.value).abs()
                }
                // A rebuilt value can be infinite when the swap is singular; those never win.
                _ => -1.0,
            };
            t.record(slack);
        }
    }
    t.finish()
}

fn check_incremental_state(cases: usize, seed: u64) -> CheckResult {
    let mut t = Tally::new("incremental state matches rebuild");
    let mut rng = rng_for(seed, 11);
    for c in 0..cases {
        let d = rng.random_range(2..=5);
        let n = 3 * d + 4;
        let inst = gen_gaussian(d, n, seed.wrapping_add(1000 + c as u64));
        let b = 2 * d;
        let mut state = GramState::new(&inst.vectors, &random_full_rank_subset(&mut rng, &inst, b));
        let mut slack = f64::INFINITY;
        for _ in 0..200 {
            let inside = state.subset();
            let outside: Vec<usize> = (0..n).filter(|&j| !state.contains(j)).collect();
            let i = inside[rng.random_range(0..inside.len())];
            let j = outside[rng.random_range(0..outside.len())];
            let rebuilt_after = gram_of(&inst.vectors, inside.iter().copied().filter(|&k| k != i).chain([j]));
            if psd_factorize(&rebuilt_after).is_err() {
                continue;
            }
            let predicted = match state.factor() {
                Some(f) => rank_two_logdet_delta(f, &inst.vector(i), &inst.vector(j)).ok(),
                None => None,
            };
            let before = state.log_det();
            state.exchange(&inst.vectors, Some(i), Some(j));
            let direct = psd_factorize(&rebuilt_after).unwrap().log_det();
            slack = slack.min(CHECK_TOL * direct.abs().max(1.0) - (state.log_det() - direct).abs());
            slack = slack.min(CHECK_TOL * (state.gram().amax()) - (state.gram() - &rebuilt_after).amax());
            if let Some(p) = predicted {
                slack = slack.min(CHECK_TOL * direct.abs().max(1.0) - (before + p - direct).abs());
            }
        }
        t.record(slack);
    }
    t.finish()
}

/// Whitened plan around the D relaxation of a small Gaussian instance.
fn small_plan(seed: u64, d: usize, kind: ObjectiveKind) -> Option<RoundingPlan> {
    let n = 4 * d + 4;
    let b = 2 * d + 1;
    let inst = gen_gaussian(d, n, seed).with_cardinality(b as f64);
    let mut cfg = RoundingConfig::for_instance(&inst, kind, 0.05, seed);
    cfg.rescale_budgets = false;
    let sol = solve_relaxation(&inst, kind, crate::relaxation::DEFAULT_TOL, 200_000).ok()?;
    let sparse = sparsify_to_extreme_point(&inst, &sol);
    RoundingPlan::from_fractional(&inst, &cfg, inst.budgets.clone(), sparse, vec![]).ok()
}

/// A subset that mostly follows x but may drop integral members or pick up
/// zero coordinates, so the sampled states span a range of λ_min(Z).
fn perturbed_subset(rng: &mut ChaCha8Rng, x: &[f64]) -> Vec<usize> {
    let keep_one = rng.random_range(0.5..1.0);
    (0..x.len())
        .filter(|&i| {
            let p = if x[i] >= 1.0 {
                keep_one
            } else if x[i] <= 0.0 {
                0.03
            } else {
                0.5
            };
            rng.random::<f64>() < p
        })
        .collect()
}

fn conditional_expectation_checks(cases: usize, seed: u64) -> Vec<CheckResult> {
    let mut delta = Tally::new("expected regret gain lower bound");
    let mut gamma_d = Tally::new("expected determinant progress");
    let mut gamma_a = Tally::new("expected trace progress");
    let mut rng = rng_for(seed, 12);
    let plans_per_kind = 20usize;
    let per_plan = cases.div_ceil(plans_per_kind).max(1);
    for p in 0..plans_per_kind {
        let d = 2 + p % 3;
        for kind in [ObjectiveKind::D, ObjectiveKind::A] {
            let Some(plan) = small_plan(seed.wrapping_add(7919 * p as u64), d, kind) else { continue };
            let x = &plan.relaxation.x;
            let all: Vec<usize> = (0..x.len()).collect();
            let eps = plan.config.eps;
            let k = plan.config.k as f64;
            for _ in 0..per_plan {
                let s = perturbed_subset(&mut rng, x);
                let state = GramState::new(&plan.whitened, &s);
                let ev = |q| exact_conditional_expectation(&state, x, &plan.whitened, &plan.config, &all, q);
                let lam = state.min_eig();
                if kind == ObjectiveKind::D && lam < 0.75 {
                    if let Ok(e) = ev(ExpectationQuantity::Delta) {
                        delta.record(e - (1.0 - 0.125 - lam) / k + 1e-12);
                    }
                }
                let Some(f) = state.factor() else { continue };
                let tr_inv = f.trace_inverse();
                if kind == ObjectiveKind::D {
                    if let Ok(e) = ev(ExpectationQuantity::GammaD { eps }) {
                        let dd = d as f64;
                        let mid = ((1.0 - 4.0 * eps) * tr_inv - (1.0 + 5.0 * eps) * dd) / k;
                        let det_root = (f.log_det() / dd).exp();
                        let low = ((1.0 - 4.0 * eps) / det_root - (1.0 + 5.0 * eps)) * dd / k;
                        let scale = (tr_inv + dd) / k;
                        gamma_d.record(rel_slack(mid, e, scale).min(rel_slack(low, mid, scale)));
                    }
                } else if lam >= 0.25 {
                    let x_inv = &plan.x_inverse;
                    if let Ok(e) = ev(ExpectationQuantity::GammaA { x_inverse: x_inv }) {
                        let zi = f.inverse();
                        let w1 = frob_inner(x_inv, &zi);
                        let w2 = frob_inner(x_inv, &(&zi * &zi));
                        let mid = (w2 - w1) / k;
                        let ratio = w1 / plan.trace_x_inverse;
                        let low = (ratio - 1.0) * w1 / k;
                        let scale = (w1 + w2) / k;
                        gamma_a.record(rel_slack(mid, e, scale).min(rel_slack(low, mid, scale)));
                    }
                }
            }
        }
    }
    vec![delta.finish(), gamma_d.finish(), gamma_a.finish()]
}

/// Indices of the b smallest-norm vectors, extended until full rank.
fn weak_start(inst: &DesignInstance, b: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..inst.n()).collect();
    idx.sort_by(|&a, &c| inst.vector(a).norm().total_cmp(&inst.vector(c).norm()).then(a.cmp(&c)));
    for shift in 0..=inst.n() - b {
        let mut s = idx[shift..shift + b].to_vec();
        s.sort_unstable();
        if psd_factorize(&gram_of(&inst.vectors, s.iter().copied())).is_ok() {
            return s;
        }
    }
    idx[..b].to_vec()
}

/// States visited by a recorded run: S_{t−1} for every t, including the final one.
fn visited_states(vectors: &Mat, trace: &ExchangeTrace) -> Vec<GramState> {
    let mut out = Vec::with_capacity(trace.len() + 1);
    let mut state = GramState::new(vectors, &trace.initial_set);
    out.push(state.clone());
    for s in &trace.steps {
        state.exchange(vectors, s.remove, s.add);
        out.push(state.clone());
    }
    out
}

struct Scaled {
    y: Vec<f64>,
    gram: Mat,
    q: f64,
}

fn scaled(inst: &DesignInstance, sol: &FractionalSolution, q: f64, b: f64) -> Scaled {
    let y = scale_solution(sol, q / b).x;
    let gram = crate::linalg::weighted_gram(&inst.vectors, &y);
    Scaled { y, gram, q }
}

fn partial_gram(inst: &DesignInstance, y: &[f64], state: &GramState) -> (Mat, f64) {
    let mut g = Mat::zeros(inst.dim(), inst.dim());
    let mut mass = 0.0;
    for i in state.subset() {
        let v = inst.vector(i);
        g += &v * v.transpose() * y[i];
        mass += y[i];
    }
    (g, mass)
}

fn existence_and_progress_checks(runs: usize, seed: u64) -> Vec<CheckResult> {
    let mut grid_d = Tally::new("determinant exchange existence");
    let mut grid_a = Tally::new("trace exchange existence");
    let mut grid_e = Tally::new("smoothed exchange existence");
    let mut prog_d = Tally::new("determinant progress when far");
    let mut prog_a = Tally::new("trace progress when far");
    let mut prog_e = Tally::new("smoothed progress when far");
    for r in 0..runs {
        let rs = seed.wrapping_add(104_729 * r as u64);
        let d = 2 + r % 2;

        // D: y scaled to q = b − d − 1/2.
        let (n, b) = (10 * d, 3 * d + 2);
        let inst = gen_gaussian(d, n, rs).with_cardinality(b as f64);
        if let Ok(sol) = solve_relaxation(&inst, ObjectiveKind::D, 1e-8, 200_000) {
            let bf = b as f64;
            let y = scaled(&inst, &sol, bf - d as f64 - 0.5, bf);
            let x_root = (psd_factorize(&sol.gram).unwrap().log_det() / d as f64).exp();
            let threshold = (d as f64 / (4.0 * bf.powi(3))).ln_1p();
            if let Ok((_, trace)) = fedorov_d(&inst, b, Some(&weak_start(&inst, b)), None) {
                for state in visited_states(&inst.vectors, &trace) {
                    let Some(f) = state.factor() else { continue };
                    let zi = f.inverse();
                    let lev: Vec<f64> = (0..n).map(|i| quad_form(&zi, &inst.vector(i))).collect();
                    let (ys, ymass) = partial_gram(&inst, &y.y, &state);
                    let loss_bound = (d as f64 - frob_inner(&ys, &zi)) / (bf - ymass);
                    let min_loss = state.subset().iter().map(|&i| lev[i]).fold(f64::INFINITY, f64::min);
                    let mut slack = rel_slack(min_loss, loss_bound, loss_bound);
                    if ymass < y.q {
                        let gain_bound = (frob_inner(&y.gram, &zi) - frob_inner(&ys, &zi)) / (y.q - ymass);
                        let max_gain = (0..n).filter(|&j| !state.contains(j)).map(|j| lev[j]).fold(0.0, f64::max);
                        slack = slack.min(rel_slack(gain_bound, max_gain, gain_bound));
                    }
                    grid_d.record(slack);
                    let root = (f.log_det() / d as f64).exp();
                    if root <= (bf - d as f64 - 1.0) / bf * x_root {
                        let v = best_exchange_d(&state, &inst.vectors).map_or(f64::NEG_INFINITY, |e| e.value);
                        prog_d.record(v - threshold);
                    }
                }
            }
        }

        // A: q = b − 2d − 2(1 + ε)√(tr X · tr X⁻¹), ε = 0.2, conditioned instance.
        let eps = 0.2;
        let (n, b) = (60, 30);
        let inst = gen_conditioned(d, n, 2.0, rs).with_cardinality(b as f64);
        if let Ok(sol) = solve_relaxation(&inst, ObjectiveKind::A, 1e-8, 200_000) {
            let bf = b as f64;
            let fx = psd_factorize(&sol.gram).unwrap();
            let spread = (sol.gram.trace() * fx.trace_inverse()).sqrt();
            let q = bf - 2.0 * d as f64 - 2.0 * (1.0 + eps) * spread;
            if q > 0.0 {
                let y = scaled(&inst, &sol, q, bf);
                let y_tr_inv = fx.trace_inverse() * bf / q;
                if let Ok((_, trace)) = fedorov_a(&inst, b, eps, Some(&weak_start(&inst, b)), None) {
                    for state in visited_states(&inst.vectors, &trace) {
                        let Some(f) = state.factor() else { continue };
                        let zi = f.inverse();
                        let zi2 = &zi * &zi;
                        let lev: Vec<f64> = (0..n).map(|i| quad_form(&zi, &inst.vector(i))).collect();
                        let lev2: Vec<f64> = (0..n).map(|i| quad_form(&zi2, &inst.vector(i))).collect();
                        let (ys, ymass) = partial_gram(&inst, &y.y, &state);
                        let tr_z = f.trace_inverse();
                        let mut slack = f64::INFINITY;
                        if y.q < bf - 2.0 * d as f64 {
                            let bound = (tr_z - frob_inner(&ys, &zi2)) / (bf - ymass - 2.0 * d as f64);
                            let best = state
                                .subset()
                                .iter()
                                .filter(|&&i| 2.0 * lev[i] < 1.0)
                                .map(|&i| lev2[i] / (1.0 - 2.0 * lev[i]))
                                .fold(f64::INFINITY, f64::min);
                            slack = slack.min(rel_slack(best, bound, bound));
                        }
                        if ymass < y.q {
                            let bound = (frob_inner(&y.gram, &zi2) - frob_inner(&ys, &zi2))
                                / (y.q - ymass + 2.0 * frob_inner(&y.gram, &zi));
                            let best = (0..n)
                                .filter(|&j| !state.contains(j))
                                .map(|j| lev2[j] / (1.0 + 2.0 * lev[j]))
                                .fold(0.0, f64::max);
                            slack = slack.min(rel_slack(bound, best, bound));
                        }
                        grid_a.record(slack);
                        if tr_z >= (1.0 + eps) * y_tr_inv {
                            let v = best_exchange_a(&state, &inst.vectors).map_or(f64::INFINITY, |e| e.value);
                            prog_a.record((1.0 - eps / bf) * tr_z - (tr_z + v) + CHECK_TOL * tr_z);
                        }
                    }
                }
            }
        }

        // E: α = √d/(ε λ_min(Y)), q from the progress budget condition, ε = 0.3.
        let eps = 0.3;
        let (n, b) = (100, 50);
        let mut inst = gen_conditioned(d, n, 1.5, rs).with_cardinality(b as f64);
        // Shrunken vectors make the weak start far below the target.
        inst.vectors.columns_mut(0, 60).scale_mut(0.1);
        if let Ok(sol) = solve_relaxation(&inst, ObjectiveKind::E, 1e-6, crate::relaxation::DEFAULT_MAX_ITERS) {
            let bf = b as f64;
            let dd = d as f64;
            let evals = sym_eigen(&sol.gram).0;
            let avg = sol.gram.trace() / dd;
            let q = bf - 2.0 * (dd + dd / eps) - 2.0 * dd / eps * (avg / evals[0]).sqrt();
            if q > 0.0 {
                let y = scaled(&inst, &sol, q, bf);
                let lam_y = min_eigenvalue(&y.gram);
                let alpha = dd.sqrt() / (eps * lam_y);
                let mut start_rng = rng_for(rs, 13);
                let mut starts = vec![weak_start(&inst, b)];
                starts.extend((0..3).map(|_| random_full_rank_subset(&mut start_rng, &inst, b)));
                let states: Vec<GramState> = starts
                    .iter()
                    .filter_map(|s| local_search_e(&inst, b, eps, lam_y, Some(s), None).ok())
                    .flat_map(|(_, trace)| visited_states(&inst.vectors, &trace))
                    .collect();
                {
                    for state in states {
                        let Ok(action) = compute_action_matrix(state.gram(), alpha) else { continue };
                        let scores = SmoothedScores::new(&action, &inst.vectors);
                        let (ys, ymass) = partial_gram(&inst, &y.y, &state);
                        let za = frob_inner(state.gram(), &action.matrix);
                        let z_sqrt = alpha * frob_inner(state.gram(), &action.sqrt_matrix);
                        let mut slack = f64::INFINITY;
                        let mut applicable = false;
                        if y.q < bf - 2.0 * z_sqrt {
                            applicable = true;
                            let bound = (za - frob_inner(&ys, &action.matrix)) / (bf - ymass - 2.0 * z_sqrt);
                            let best = state
                                .subset()
                                .iter()
                                .filter(|&&i| 2.0 * scores.weight[i] < 1.0)
                                .map(|&i| scores.loss(i))
                                .fold(f64::INFINITY, f64::min);
                            slack = slack.min(rel_slack(best, bound, bound));
                        }
                        if ymass < y.q {
                            applicable = true;
                            let bound = (frob_inner(&y.gram, &action.matrix) - frob_inner(&ys, &action.matrix))
                                / (y.q - ymass + 2.0 * alpha * frob_inner(&y.gram, &action.sqrt_matrix));
                            let best = (0..n).filter(|&j| !state.contains(j)).map(|j| scores.gain(j)).fold(0.0, f64::max);
                            slack = slack.min(rel_slack(bound, best, bound));
                        }
                        if applicable {
                            grid_e.record(slack);
                        }
                        if state.min_eig() <= (1.0 - 2.0 * eps) * lam_y {
                            let v = best_exchange_e(&state, &scores).map_or(f64::NEG_INFINITY, |e| e.value);
                            prog_e.record(v - eps / bf * lam_y + CHECK_TOL * lam_y);
                        }
                    }
                }
            }
        }
    }
    [grid_d, grid_a, grid_e, prog_d, prog_a, prog_e].into_iter().map(Tally::finish).collect()
}

/// Matrix-inequality sweeps, oracle cross-checks and instrumented runs.
pub fn lemma_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut checks = vec![
        check_rank_one_det(cases, seed),
        check_swap_det_bound(cases, seed),
        check_rank_two_trace(cases, seed),
        check_det_inner(cases, seed),
        check_trace_inequalities(cases, seed),
        check_cospectral(cases, seed),
        check_sqrt_trace(cases, seed),
        check_sandwich(cases, seed),
        check_ratio_monotone(cases, seed),
        check_best_exchange_oracle(cases.div_ceil(10), seed),
        check_incremental_state(cases.div_ceil(50), seed),
    ];
    checks.extend(conditional_expectation_checks(cases, seed));
    checks.extend(existence_and_progress_checks(cases.div_ceil(50), seed));
    SuiteReport { suite: "lemmas".into(), checks, notes: Vec::new() }
}

// ---------------------------------------------------------------- traps

/// λ_min after every single swap out of the fixture's start.
fn swap_lambdas(inst: &DesignInstance, start: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    for &i in start {
        for j in (0..inst.n()).filter(|j| !start.contains(j)) {
            let s = start.iter().copied().filter(|&k| k != i).chain([j]);
            out.push(min_eigenvalue(&gram_of(&inst.vectors, s)));
        }
    }
    out
}

/// Replays the adversarial fixtures for the E local search.
pub fn trap_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let mut notes = Vec::new();

    let mut t = Tally::new("identity trap swaps stay at or below one");
    for (d, b) in [(3, 3), (3, 6), (4, 8), (5, 5)] {
        let fx = fixture_e_identity_trap(d, b, 100.0);
        for lam in swap_lambdas(&fx.instance, &fx.initial_set) {
            t.record(1.0 + 1e-12 - lam);
        }
        t.record(fx.reference_lambda_min - 1.0 - 1e-9);
    }
    checks.push(t.finish());

    let (b, big_n) = (4, 100.0);
    let fx = fixture_e_decreasing(b, big_n);
    let start = min_eigenvalue(&gram_of(&fx.instance.vectors, fx.initial_set.iter().copied()));
    let mut t = Tally::new("decreasing trap swaps lower lambda_min");
    for lam in swap_lambdas(&fx.instance, &fx.initial_set) {
        t.record(start - lam - 1e-12);
    }
    checks.push(t.finish());

    // Swap the first e₁ copy for the first √(N/2)(1,1).
    let swapped: Vec<usize> = fx.initial_set.iter().copied().filter(|&k| k != 0).chain([b]).collect();
    let first = min_eigenvalue(&gram_of(&fx.instance.vectors, swapped));
    let closed = decreasing_trap_first_swap_lambda(b, big_n);
    let mut t = Tally::new("decreasing trap first-swap closed form");
    t.record(1e-9 - (first - closed).abs());
    checks.push(t.finish());
    let printed = (b as f64 - 1.0 + big_n - (big_n * big_n - 1.0).sqrt()) / 2.0;
    notes.push(format!(
        "first swap lambda_min = {first:.12}; with sqrt(N^2+1): {closed:.12}; with sqrt(N^2-1): {printed:.12} (off by {:.3e})",
        (first - printed).abs()
    ));

    let mut t = Tally::new("smoothed search escapes decreasing trap");
    let fx8 = fixture_e_decreasing(8, big_n);
    let lambda_star = 8.0 * big_n / 2.0;
    if let Ok((sol, tr)) = local_search_e(&fx8.instance, 8, 0.1, lambda_star, Some(&fx8.initial_set), None) {
        t.record(if tr.terminated_reason == crate::trace::TerminationReason::TargetReached { 1.0 } else { -1.0 });
        t.record(sol.objective_value - (1.0 - 0.2) * lambda_star);
    }
    checks.push(t.finish());

    let mut t = Tally::new("smoothed search stalls on ill-conditioned trap");
    let fx3 = fixture_a_smoothed_trap(4, 20.0, 8);
    if let crate::instance::FixtureExpectation::SmoothedSearchStalls { lambda_star, eps } = fx3.expectation {
        if let Ok((sol, tr)) = local_search_e(&fx3.instance, 4, eps, lambda_star, Some(&fx3.initial_set), None) {
            t.record(if tr.is_empty() && sol.subset() == fx3.initial_set { 1.0 } else { -1.0 });
            t.record(fx3.reference_lambda_min - sol.objective_value);
        }
    }
    checks.push(t.finish());

    SuiteReport { suite: "traps".into(), checks, notes }
}

// ---------------------------------------------------------------- Monte-Carlo

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloConfig {
    pub d: usize,
    pub n: usize,
    pub eps: f64,
    pub runs: usize,
    pub seed_base: u64,
    pub instance_seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig { d: 3, n: 900, eps: 0.01, runs: 200, seed_base: 0, instance_seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub objective: ObjectiveKind,
    pub budget: f64,
    pub runs: usize,
    pub envelope: usize,
    pub errors: usize,
    pub terminated_within_envelope: usize,
    pub objective_ok: usize,
    pub budget_ok: usize,
    /// Runs meeting all three conditions above.
    pub successes: usize,
    pub phase_ok: usize,
    pub regret_ok: usize,
    /// Relaxation value at the rescaled budget the rounding works against.
    pub relaxation_working: f64,
    /// Relaxation value at the original budget.
    pub relaxation_original: f64,
    pub worst_value: f64,
    pub max_iterations: usize,
    pub mean_fractional: f64,
}

impl MonteCarloSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.runs as f64
    }

    pub fn phase_rate(&self) -> f64 {
        self.phase_ok as f64 / self.runs as f64
    }
}

/// Seeded rounding runs for one objective on the cardinality instance
/// b = 2d/ε drawn from n Gaussian vectors.
pub fn monte_carlo_kind(cfg: &MonteCarloConfig, kind: ObjectiveKind) -> Result<MonteCarloSummary> {
    let b = (2.0 * cfg.d as f64 / cfg.eps).round();
    let inst = gen_gaussian(cfg.d, cfg.n, cfg.instance_seed).with_cardinality(b);
    let config = RoundingConfig::for_instance(&inst, kind, cfg.eps, cfg.seed_base);
    let plan = RoundingPlan::prepare(&inst, &config)?;
    let original = solve_relaxation(&inst, kind, config.relax_tol, crate::relaxation::DEFAULT_MAX_ITERS)?;
    let relaxation_working = plan.relaxation_value();
    let envelope = config.iteration_envelope();
    let k = config.k;
    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|s| cfg.seed_base + s).collect();
    let mut summary = MonteCarloSummary {
        objective: kind,
        budget: b,
        runs: cfg.runs,
        envelope,
        errors: 0,
        terminated_within_envelope: 0,
        objective_ok: 0,
        budget_ok: 0,
        successes: 0,
        phase_ok: 0,
        regret_ok: 0,
        relaxation_working,
        relaxation_original: original.objective_value,
        worst_value: if kind.maximizes() { f64::INFINITY } else { 0.0 },
        max_iterations: 0,
        mean_fractional: plan.fractional.len() as f64,
    };
    for out in plan.run_many(&seeds) {
        let Ok(out) = out else {
            summary.errors += 1;
            continue;
        };
        let value = out.solution.objective_value;
        let term = out.status == RoundingStatus::Terminated && out.iterations <= envelope;
        let obj = match kind {
            ObjectiveKind::D => value >= (1.0 - 30.0 * cfg.eps) * relaxation_working,
            _ => value <= (1.0 + cfg.eps) * relaxation_working,
        };
        let within = out.solution.costs_used[0] <= b;
        summary.terminated_within_envelope += usize::from(term);
        summary.objective_ok += usize::from(obj);
        summary.budget_ok += usize::from(within);
        summary.successes += usize::from(term && obj && within);
        let phase = out.phase.tau1.is_some_and(|t| t <= 16 * k)
            && out.phase.min_lambda_after_tau1 >= crate::rounding::PHASE_TWO_FLOOR;
        summary.phase_ok += usize::from(phase);
        let regret = verify_regret_bound(&out.trace, &plan.initial_gram(&out.trace), config.alpha);
        summary.regret_ok += usize::from(regret.is_ok_and(|r| r.passed));
        summary.worst_value =
            if kind.maximizes() { summary.worst_value.min(value) } else { summary.worst_value.max(value) };
        summary.max_iterations = summary.max_iterations.max(out.iterations);
    }
    Ok(summary)
}

/// Success-rate, phase and regret checks for D and A at the 90% bar.
pub fn monte_carlo_suite(cfg: &MonteCarloConfig) -> SuiteReport {
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for kind in [ObjectiveKind::D, ObjectiveKind::A] {
        let name = |s: &str| format!("{} {s}", kind.name());
        match monte_carlo_kind(cfg, kind) {
            Ok(s) => {
                let mut t = Tally::new(name("success rate at least 90%"));
                t.record(s.success_rate() - 0.9);
                checks.push(t.finish());
                let mut t = Tally::new(name("phase rate at least 90%"));
                t.record(s.phase_rate() - 0.9);
                checks.push(t.finish());
                let mut t = Tally::new(name("regret bound on every run"));
                t.record(if s.regret_ok == s.runs { 1.0 } else { -1.0 });
                checks.push(t.finish());
                let vs_original = s.worst_value / s.relaxation_original;
                notes.push(format!(
                    "{}: b={} runs={} successes={} terminated={} objective_ok={} budget_ok={} phase_ok={} max_iter={} \
                     relaxation(rescaled)={:.6} relaxation(original)={:.6} worst/original={:.4} rescale=1/(1+{}eps)",
                    kind.name(),
                    s.budget,
                    s.runs,
                    s.successes,
                    s.terminated_within_envelope,
                    s.objective_ok,
                    s.budget_ok,
                    s.phase_ok,
                    s.max_iterations,
                    s.relaxation_working,
                    s.relaxation_original,
                    vs_original,
                    RESCALE_FACTOR
                ));
            }
            Err(e) => {
                let mut t = Tally::new(name("harness ran"));
                t.record(-1.0);
                checks.push(t.finish());
                notes.push(format!("{}: {e}", kind.name()));
            }
        }
    }
    SuiteReport { suite: "montecarlo".into(), checks, notes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma_suite_small() {
        let r = lemma_suite(60, 3);
        for c in &r.checks {
            assert!(c.passed(), "{}", c.line());
        }
    }

    #[test]
    fn trap_suite_passes() {
        let r = trap_suite();
        for c in &r.checks {
            assert!(c.passed(), "{}", c.line());
        }
        assert!(r.notes[0].contains("sqrt(N^2-1)"));
    }

    #[test]
    fn vacuous_check_fails() {
        assert!(!Tally::new("nothing").finish().passed());
    }

    #[test]
    fn monte_carlo_small() {
        let cfg = MonteCarloConfig { d: 2, n: 300, eps: 0.02, runs: 8, seed_base: 5, instance_seed: 2 };
        let s = monte_carlo_kind(&cfg, ObjectiveKind::D).unwrap();
        assert_eq!(s.runs, 8);
        assert_eq!(s.errors, 0);
        assert_eq!(s.regret_ok, 8);
    }
}
