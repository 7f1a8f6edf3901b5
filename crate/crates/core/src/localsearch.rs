//! Combinatorial exchange algorithms: Fedorov's method for D and A, and
//! the regret-smoothed local search for E with its target-guessing loop.
//!
//! Every loop evaluates the best exchange and stops *before* applying it
//! when it falls below the acceptance threshold, so the returned set is the
//! last iterate whose predecessor improvement cleared the bar.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{DesignInstance, IntegralSolution, ObjectiveKind};
use crate::linalg::{min_eigenvalue, psd_factorize, swap_det_ratio, woodbury_swap_delta, GramState, Mat, SwapForms};
use crate::regret::{compute_action_matrix, ActionMatrix};
use crate::trace::{ExchangeTrace, TerminationReason, TraceStep};

/// Acceptance constant in the (1 − C·ε) test of the target-guessing loop.
pub const DEFAULT_ACCEPT_C: f64 = 10.0;

/// 8·b³·n, saturating.
pub fn default_iter_cap(b: usize, n: usize) -> usize {
    8usize.saturating_mul(b.saturating_pow(3)).saturating_mul(n)
}

/// Volume-greedy basis (largest orthogonal residual) completed to b
/// vectors by largest norm; ties go to the lowest index.
pub fn greedy_init(vectors: &Mat, b: usize) -> Result<Vec<usize>> {
    let (d, n) = (vectors.nrows(), vectors.ncols());
    if b < d || b > n {
        return Err(Error::DegenerateInit { b });
    }
    let scale = vectors.column_iter().map(|c| c.norm_squared()).fold(0.0f64, f64::max);
    let mut residual = vectors.clone();
    let mut chosen = vec![false; n];
    let mut picked = Vec::with_capacity(b);
    for _ in 0..d {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            let r = residual.column(i).norm_squared();
            if best.is_none_or(|(_, v)| r > v) {
                best = Some((i, r));
            }
        }
        let Some((k, r)) = best else { break };
        if r <= 1e-20 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateInit { b });
        }
        chosen[k] = true;
        picked.push(k);
        let q = residual.column(k) / r.sqrt();
        let coeffs = q.transpose() * &residual;
        residual -= &q * coeffs;
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
    let norms: Vec<f64> = vectors.column_iter().map(|c| c.norm_squared()).collect();
    rest.sort_by(|&a, &c| norms[c].total_cmp(&norms[a]).then(a.cmp(&c)));
    picked.extend(rest.into_iter().take(b - d));
    picked.sort_unstable();
    Ok(picked)
}

fn resolve_init(instance: &DesignInstance, b: usize, init: Option<&[usize]>, need_full_rank: bool) -> Result<GramState> {
    let d = instance.dim();
    if b < d || b > instance.n() {
        return Err(Error::InvalidArgument(format!("budget {b} must lie in [d, n] = [{d}, {}]", instance.n())));
    }
    let subset = match init {
        Some(s) => {
            let mut seen = vec![false; instance.n()];
            for &i in s {
                if i >= instance.n() || seen[i] {
                    return Err(Error::InvalidArgument(format!("initial set has a bad or repeated index {i}")));
                }
                seen[i] = true;
            }
            if s.len() != b {
                return Err(Error::InvalidArgument(format!("initial set has size {} instead of {b}", s.len())));
            }
            s.to_vec()
        }
        None => greedy_init(&instance.vectors, b)?,
    };
    let state = GramState::new(&instance.vectors, &subset);
    if need_full_rank && state.factor().is_none() {
        return Err(Error::DegenerateInit { b });
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestExchange {
    pub remove: usize,
    pub add: usize,
    /// D: ln det ratio; A: change in tr(Z⁻¹); E: Φ = gain − loss.
    pub value: f64,
}

/// Deterministic reduction of per-row winners: strict comparison in row
/// order keeps the lowest (i, j) among ties.
fn reduce_rows(rows: Vec<Option<BestExchange>>, better: impl Fn(f64, f64) -> bool) -> Option<BestExchange> {
    let mut best: Option<BestExchange> = None;
    for r in rows.into_iter().flatten() {
        if best.is_none_or(|b| better(r.value, b.value)) {
            best = Some(r);
        }
    }
    best
}

/// argmax over i ∈ S, j ∉ S of ln det(Z − vᵢvᵢᵀ + vⱼvⱼᵀ) − ln det Z.
pub fn best_exchange_d(state: &GramState, vectors: &Mat) -> Option<BestExchange> {
    let f = state.factor()?;
    let n = vectors.ncols();
    let w = f.lower().solve_lower_triangular(vectors).expect("factor is nonsingular");
    let a: Vec<f64> = w.column_iter().map(|c| c.norm_squared()).collect();
    let outside: Vec<usize> = (0..n).filter(|&j| !state.contains(j)).collect();
    let rows: Vec<Option<BestExchange>> = state
        .subset()
        .par_iter()
        .map(|&i| {
            let wi = w.column(i);
            let mut best: Option<BestExchange> = None;
            for &j in &outside {
                let aij = wi.dot(&w.column(j));
                let ratio = swap_det_ratio(a[i], a[j], aij);
                let value = if ratio > 0.0 { ratio.ln() } else { f64::NEG_INFINITY };
                if best.is_none_or(|b| value > b.value) {
                    best = Some(BestExchange { remove: i, add: j, value });
                }
            }
            best
        })
        .collect();
    reduce_rows(rows, |a, b| a > b)
}

/// argmin over i ∈ S, j ∉ S of tr((Z − vᵢvᵢᵀ + vⱼvⱼᵀ)⁻¹) − tr(Z⁻¹).
///
/// Removals with 2vᵢᵀZ⁻¹vᵢ ≥ 1 are scored by a full rebuild; a singular
/// rebuild scores +∞.
pub fn best_exchange_a(state: &GramState, vectors: &Mat) -> Option<BestExchange> {
    let f = state.factor()?;
    let n = vectors.ncols();
    let zinv = f.inverse();
    let current = zinv.trace();
    let p = &zinv * vectors;
    let a: Vec<f64> = (0..n).map(|i| vectors.column(i).dot(&p.column(i))).collect();
    let h: Vec<f64> = p.column_iter().map(|c| c.norm_squared()).collect();
    let outside: Vec<usize> = (0..n).filter(|&j| !state.contains(j)).collect();
    let gram = state.gram();
    let rows: Vec<Option<BestExchange>> = state
        .subset()
        .par_iter()
        .map(|&i| {
            let mut best: Option<BestExchange> = None;
            let ui = vectors.column(i);
            let pi = p.column(i);
            for &j in &outside {
                let value = if 2.0 * a[i] < 1.0 {
                    let forms = SwapForms {
                        a_u: a[i],
                        a_w: a[j],
                        a_uw: ui.dot(&p.column(j)),
                        h_u: h[i],
                        h_w: h[j],
                        h_uw: pi.dot(&p.column(j)),
                    };
                    woodbury_swap_delta(&forms).unwrap_or(f64::INFINITY)
                } else {
                    let mut z = gram.clone();
                    z.ger(-1.0, &ui, &ui, 1.0);
                    let uj = vectors.column(j);
                    z.ger(1.0, &uj, &uj, 1.0);
                    psd_factorize(&z).map_or(f64::INFINITY, |g| g.trace_inverse() - current)
                };
                if best.is_none_or(|b| value < b.value) {
                    best = Some(BestExchange { remove: i, add: j, value });
                }
            }
            best
        })
        .collect();
    reduce_rows(rows, |a, b| a < b)
}

/// Smoothed-objective gains and losses against one action matrix.
#[derive(Debug, Clone)]
pub struct SmoothedScores {
    /// α⟨vvᵀ, A^{1/2}⟩ for every vector.
    pub weight: Vec<f64>,
    /// ⟨vvᵀ, A⟩ for every vector.
    pub quad: Vec<f64>,
}

impl SmoothedScores {
    pub fn new(action: &ActionMatrix, vectors: &Mat) -> Self {
        let (quad, h) = action.quads_of(vectors);
        SmoothedScores { weight: h.iter().map(|v| action.alpha * v).collect(), quad }
    }

    pub fn gain(&self, j: usize) -> f64 {
        self.quad[j] / (1.0 + 2.0 * self.weight[j])
    }

    pub fn loss(&self, i: usize) -> f64 {
        self.quad[i] / (1.0 - 2.0 * self.weight[i])
    }
}

/// argmax of Φ = gain(j) − loss(i) over j ∉ S and i ∈ S′ (2α⟨vᵢvᵢᵀ,A^{1/2}⟩ < 1).
///
/// Φ is separable, so the grid argmax is the pair of per-slot extremes.
pub fn best_exchange_e(state: &GramState, scores: &SmoothedScores) -> Option<BestExchange> {
    let n = scores.quad.len();
    let mut remove: Option<(usize, f64)> = None;
    let mut add: Option<(usize, f64)> = None;
    for k in 0..n {
        if state.contains(k) {
            if 2.0 * scores.weight[k] < 1.0 {
                let l = scores.loss(k);
                if remove.is_none_or(|(_, v)| l < v) {
                    remove = Some((k, l));
                }
            }
        } else {
            let g = scores.gain(k);
            if add.is_none_or(|(_, v)| g > v) {
                add = Some((k, g));
            }
        }
    }
    let ((i, l), (j, g)) = (remove?, add?);
    Some(BestExchange { remove: i, add: j, value: g - l })
}

/// Dispatches on the objective; E needs the learning rate.
pub fn best_exchange(state: &GramState, vectors: &Mat, kind: ObjectiveKind, alpha: Option<f64>) -> Result<Option<BestExchange>> {
    Ok(match kind {
        ObjectiveKind::D => best_exchange_d(state, vectors),
        ObjectiveKind::A => best_exchange_a(state, vectors),
        ObjectiveKind::E => {
            let alpha = alpha.ok_or_else(|| Error::InvalidArgument("E exchange needs alpha".into()))?;
            let action = compute_action_matrix(state.gram(), alpha)?;
            best_exchange_e(state, &SmoothedScores::new(&action, vectors))
        }
    })
}

fn state_objective(state: &GramState, kind: ObjectiveKind) -> f64 {
    match kind {
        ObjectiveKind::D => (state.log_det() / state.dim() as f64).exp(),
        ObjectiveKind::A => state.factor().map_or(f64::INFINITY, |f| f.trace_inverse()),
        ObjectiveKind::E => state.min_eig(),
    }
}

struct Recorder<'a> {
    instance: &'a DesignInstance,
    kind: ObjectiveKind,
    trace: ExchangeTrace,
}

impl<'a> Recorder<'a> {
    fn new(instance: &'a DesignInstance, kind: ObjectiveKind, state: &GramState) -> Self {
        Recorder { instance, kind, trace: ExchangeTrace::starting_at(state.subset()) }
    }

    /// Applies the swap and appends a step.
    fn apply(&mut self, state: &mut GramState, ex: BestExchange, smoothed: Option<(f64, f64, f64)>) {
        let before = state_objective(state, self.kind);
        state.exchange(&self.instance.vectors, Some(ex.remove), Some(ex.add));
        let (delta_plus, delta_minus, removal_weight) = smoothed.unwrap_or((0.0, 0.0, 0.0));
        self.trace.steps.push(TraceStep {
            t: self.trace.steps.len() + 1,
            remove: Some(ex.remove),
            add: Some(ex.add),
            objective_before: before,
            objective_after: state_objective(state, self.kind),
            lambda_min_after: state.min_eig(),
            delta_plus,
            delta_minus,
            removal_weight,
            costs_after: self.instance.costs_of(state.mask()),
        });
    }

    fn finish(mut self, state: &GramState, reason: TerminationReason) -> (IntegralSolution, ExchangeTrace) {
        self.trace.terminated_reason = reason;
        let sol = IntegralSolution::from_mask(self.instance, state.mask().to_vec(), self.kind);
        (sol, self.trace)
    }
}

/// Fedorov exchange for D: swap while det grows by at least 1 + d/(4b³).
pub fn fedorov_d(
    instance: &DesignInstance,
    b: usize,
    init: Option<&[usize]>,
    iter_cap: Option<usize>,
) -> Result<(IntegralSolution, ExchangeTrace)> {
    let mut state = resolve_init(instance, b, init, true)?;
    let cap = iter_cap.unwrap_or_else(|| default_iter_cap(b, instance.n()));
    let d = instance.dim() as f64;
    let threshold = (d / (4.0 * (b as f64).powi(3))).ln_1p();
    let mut rec = Recorder::new(instance, ObjectiveKind::D, &state);
    loop {
        if rec.trace.steps.len() >= cap {
            return Ok(rec.finish(&state, TerminationReason::IterationCap));
        }
        match best_exchange_d(&state, &instance.vectors) {
            Some(ex) if ex.value >= threshold => rec.apply(&mut state, ex, None),
            _ => return Ok(rec.finish(&state, TerminationReason::ImprovementTooSmall)),
        }
    }
}

/// Fedorov exchange for A: swap while tr(Z⁻¹) shrinks by a factor ≤ 1 − ε/b.
pub fn fedorov_a(
    instance: &DesignInstance,
    b: usize,
    eps: f64,
    init: Option<&[usize]>,
    iter_cap: Option<usize>,
) -> Result<(IntegralSolution, ExchangeTrace)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must lie in (0, 1)")));
    }
    let mut state = resolve_init(instance, b, init, true)?;
    let cap = iter_cap.unwrap_or_else(|| default_iter_cap(b, instance.n()));
    let mut rec = Recorder::new(instance, ObjectiveKind::A, &state);
    loop {
        if rec.trace.steps.len() >= cap {
            return Ok(rec.finish(&state, TerminationReason::IterationCap));
        }
        let current = state_objective(&state, ObjectiveKind::A);
        match best_exchange_a(&state, &instance.vectors) {
            Some(ex) if current + ex.value <= (1.0 - eps / b as f64) * current => rec.apply(&mut state, ex, None),
            _ => return Ok(rec.finish(&state, TerminationReason::ImprovementTooSmall)),
        }
    }
}

/// Smoothed local search for E at a fixed target λ*, with α = √d/(ε·λ*).
pub fn local_search_e(
    instance: &DesignInstance,
    b: usize,
    eps: f64,
    lambda_star: f64,
    init: Option<&[usize]>,
    iter_cap: Option<usize>,
) -> Result<(IntegralSolution, ExchangeTrace)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must lie in (0, 1)")));
    }
    if !(lambda_star > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda* = {lambda_star} must be positive")));
    }
    let mut state = resolve_init(instance, b, init, false)?;
    let cap = iter_cap.unwrap_or_else(|| default_iter_cap(b, instance.n()));
    let alpha = (instance.dim() as f64).sqrt() / (eps * lambda_star);
    let target = (1.0 - 2.0 * eps) * lambda_star;
    let threshold = eps * lambda_star / b as f64;
    let mut rec = Recorder::new(instance, ObjectiveKind::E, &state);
    loop {
        if state.min_eig() >= target {
            return Ok(rec.finish(&state, TerminationReason::TargetReached));
        }
        if rec.trace.steps.len() >= cap {
            return Ok(rec.finish(&state, TerminationReason::IterationCap));
        }
        let action = compute_action_matrix(state.gram(), alpha)?;
        let scores = SmoothedScores::new(&action, &instance.vectors);
        let Some(ex) = best_exchange_e(&state, &scores) else {
            let any_removable = state.subset().iter().any(|&i| 2.0 * scores.weight[i] < 1.0);
            let reason =
                if any_removable { TerminationReason::ImprovementTooSmall } else { TerminationReason::EmptyRemovalSet };
            return Ok(rec.finish(&state, reason));
        };
        if ex.value < threshold {
            return Ok(rec.finish(&state, TerminationReason::ImprovementTooSmall));
        }
        let smoothed = (scores.gain(ex.add), scores.loss(ex.remove), scores.weight[ex.remove]);
        rec.apply(&mut state, ex, Some(smoothed));
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AutoOutcome {
    pub solution: IntegralSolution,
    pub trace: ExchangeTrace,
    pub lambda_star: f64,
    pub attempts: usize,
}

/// Runs [`local_search_e`] from λ* = λ_min(Σvᵢvᵢᵀ), shrinking λ* by (1 − ε)
/// until the result reaches (1 − C·ε)·λ*.
pub fn local_search_e_auto(
    instance: &DesignInstance,
    b: usize,
    eps: f64,
    init: Option<&[usize]>,
    iter_cap: Option<usize>,
    accept_c: f64,
) -> Result<AutoOutcome> {
    let lambda0 = min_eigenvalue(&instance.full_gram());
    if !(lambda0 > 0.0) {
        return Err(Error::Degenerate("ground set does not span the space".into()));
    }
    let floor = b as f64 / instance.n() as f64 * lambda0 * (1.0 - eps);
    let mut lambda_star = lambda0;
    let mut attempts = 0;
    while lambda_star >= floor {
        attempts += 1;
        let (solution, trace) = local_search_e(instance, b, eps, lambda_star, init, iter_cap)?;
        if solution.objective_value >= (1.0 - accept_c * eps) * lambda_star {
            return Ok(AutoOutcome { solution, trace, lambda_star, attempts });
        }
        lambda_star *= 1.0 - eps;
    }
    Err(Error::Exhausted { lambda_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{fixture_a_smoothed_trap, fixture_e_decreasing, gen_gaussian};
    use crate::linalg::{gram_of, Vector};

    fn inst(cols: &[&[f64]]) -> DesignInstance {
        let d = cols[0].len();
        DesignInstance::from_vectors(Mat::from_fn(d, cols.len(), |r, c| cols[c][r]), "").unwrap()
    }

    fn brute_pairs(state: &GramState, vectors: &Mat, kind: ObjectiveKind) -> BestExchange {
        let mut best: Option<BestExchange> = None;
        for i in state.subset() {
            for j in (0..vectors.ncols()).filter(|&j| !state.contains(j)) {
                let mut s: Vec<usize> = state.subset().into_iter().filter(|&k| k != i).collect();
                s.push(j);
                let g = gram_of(vectors, s);
                let value = match kind {
                    ObjectiveKind::D => psd_factorize(&g).map_or(f64::NEG_INFINITY, |f| f.log_det()) - state.log_det(),
                    _ => psd_factorize(&g).map_or(f64::INFINITY, |f| f.trace_inverse())
                        - state.factor().unwrap().trace_inverse(),
                };
                let better = match (best, kind) {
                    (None, _) => true,
                    (Some(b), ObjectiveKind::D) => value > b.value,
                    (Some(b), _) => value < b.value,
                };
                if better {
                    best = Some(BestExchange { remove: i, add: j, value });
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn greedy_init_is_full_rank() {
        let inst = gen_gaussian(4, 30, 2);
        let s = greedy_init(&inst.vectors, 7).unwrap();
        assert_eq!(s.len(), 7);
        assert!(psd_factorize(&gram_of(&inst.vectors, s)).is_ok());
        let flat = inst_flat();
        assert!(matches!(greedy_init(&flat.vectors, 2), Err(Error::DegenerateInit { b: 2 })));
    }

    fn inst_flat() -> DesignInstance {
        inst(&[&[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0]])
    }

    #[test]
    fn orthonormal_stops_immediately() {
        let i3 = DesignInstance::from_vectors(Mat::identity(3, 3), "").unwrap();
        let (sol, tr) = fedorov_d(&i3, 3, None, None).unwrap();
        assert!(tr.is_empty());
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
        let (sol, tr) = fedorov_a(&i3, 3, 0.1, None, None).unwrap();
        assert!(tr.is_empty());
        assert!((sol.objective_value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn d_single_exchange() {
        let inst = inst(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 2.0]]);
        let (sol, tr) = fedorov_d(&inst, 2, Some(&[0, 2]), None).unwrap();
        assert_eq!(tr.exchanges(), 1);
        assert_eq!((tr.steps[0].remove, tr.steps[0].add), (Some(2), Some(3)));
        assert!((sol.objective_value - 2.0).abs() < 1e-12);
        assert_eq!(tr.terminated_reason, TerminationReason::ImprovementTooSmall);
    }

    #[test]
    fn a_scalar_exchange() {
        let inst = inst(&[&[1.0], &[2.0]]);
        let (sol, tr) = fedorov_a(&inst, 1, 0.5, Some(&[0]), None).unwrap();
        assert_eq!(tr.exchanges(), 1);
        assert!((sol.objective_value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn best_exchange_matches_enumeration() {
        let inst = gen_gaussian(3, 12, 4);
        let init = greedy_init(&inst.vectors, 5).unwrap();
        let state = GramState::new(&inst.vectors, &init);
        for kind in [ObjectiveKind::D, ObjectiveKind::A] {
            let fast = best_exchange(&state, &inst.vectors, kind, None).unwrap().unwrap();
            let slow = brute_pairs(&state, &inst.vectors, kind);
            assert_eq!((fast.remove, fast.add), (slow.remove, slow.add), "{kind:?}");
            assert!((fast.value - slow.value).abs() < 1e-9);
        }
    }

    #[test]
    fn a_rebuild_path() {
        // The removed vector carries most of one direction: 2aᵢ ≥ 1.
        let inst = inst(&[&[1.0, 0.0], &[0.1, 0.0], &[0.0, 1.0], &[0.9, 0.1], &[0.0, 0.5]]);
        let state = GramState::new(&inst.vectors, &[0, 1, 2]);
        let a0 = state.factor().unwrap().inv_quad(&Vector::from_vec(vec![1.0, 0.0]));
        assert!(2.0 * a0 >= 1.0);
        let fast = best_exchange_a(&state, &inst.vectors).unwrap();
        let slow = brute_pairs(&state, &inst.vectors, ObjectiveKind::A);
        assert_eq!((fast.remove, fast.add), (slow.remove, slow.add));
        assert!((fast.value - slow.value).abs() < 1e-9);
    }

    #[test]
    fn d_monotone_and_chained() {
        let inst = gen_gaussian(3, 40, 8);
        let b = 6;
        let (_, tr) = fedorov_d(&inst, b, None, None).unwrap();
        let factor = 1.0 + 3.0 / (4.0 * (b as f64).powi(3));
        for s in &tr.steps {
            assert!((s.objective_after / s.objective_before).powi(3) >= factor * (1.0 - 1e-12));
        }
        assert!(tr.is_chained(1e-9));
    }

    #[test]
    fn e_target_already_met() {
        let inst = gen_gaussian(2, 10, 1);
        let init = greedy_init(&inst.vectors, 4).unwrap();
        let lam = min_eigenvalue(&gram_of(&inst.vectors, init.iter().copied()));
        let (_, tr) = local_search_e(&inst, 4, 0.1, lam, Some(&init), None).unwrap();
        assert!(tr.is_empty());
        assert_eq!(tr.terminated_reason, TerminationReason::TargetReached);
    }

    #[test]
    fn e_escapes_decreasing_trap() {
        let (b, big_n) = (8usize, 100.0);
        let fx = fixture_e_decreasing(b, big_n);
        let start = min_eigenvalue(&gram_of(&fx.instance.vectors, fx.initial_set.iter().copied()));
        let lambda_star = b as f64 * big_n / 2.0;
        let eps = 0.1;
        let (sol, tr) = local_search_e(&fx.instance, b, eps, lambda_star, Some(&fx.initial_set), None).unwrap();
        assert!(!tr.is_empty());
        assert!(sol.objective_value > start);
        // Every naive single swap from the start lowers λ_min.
        let state = GramState::new(&fx.instance.vectors, &fx.initial_set);
        for i in fx.initial_set.iter().copied() {
            for j in (0..fx.instance.n()).filter(|&j| !state.contains(j)) {
                let s: Vec<usize> = fx.initial_set.iter().copied().filter(|&k| k != i).chain([j]).collect();
                assert!(min_eigenvalue(&gram_of(&fx.instance.vectors, s)) < start);
            }
        }
    }

    #[test]
    fn e_isotropic_start_gain_bound_at_twice_dimension() {
        // With Z = (b/2)I the gain of any vector is below ελ*/(2d), which
        // equals the stopping threshold ελ*/b when b = 2d.
        let (b, big_n) = (4usize, 100.0);
        let fx = fixture_e_decreasing(b, big_n);
        for lambda_star in [1.0, 10.0, 200.0, 1e4] {
            let (_, tr) = local_search_e(&fx.instance, b, 0.1, lambda_star, Some(&fx.initial_set), None).unwrap();
            assert!(tr.is_empty(), "lambda* = {lambda_star}");
        }
    }

    #[test]
    fn e_stalls_on_smoothed_trap() {
        let fx = fixture_a_smoothed_trap(4, 20.0, 8);
        let (sol, tr) = local_search_e(&fx.instance, 4, 0.1, 1.0, Some(&fx.initial_set), None).unwrap();
        assert!(tr.is_empty(), "{:?}", tr.terminated_reason);
        assert_eq!(sol.subset(), fx.initial_set);
    }

    #[test]
    fn auto_with_full_budget() {
        let inst = gen_gaussian(2, 6, 3);
        let out = local_search_e_auto(&inst, 6, 0.05, None, None, DEFAULT_ACCEPT_C).unwrap();
        assert_eq!(out.attempts, 1);
        assert!((out.solution.objective_value - out.lambda_star).abs() <= 1e-12 * out.lambda_star);
    }
}
