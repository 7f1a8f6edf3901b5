//! Randomized exchange rounding for D and A under knapsack constraints.
//!
//! Pipeline: relax (optionally at rescaled budgets), sparsify to an
//! extreme point, whiten so Σ x(i)vᵢvᵢᵀ = I, include each vector with
//! probability x(i), then run sampled exchanges biased by the action
//! matrix until the whitened objective is within the target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{DesignInstance, IntegralSolution, ObjectiveKind};
use crate::linalg::{gram_of, inv_sqrt, psd_factorize, weighted_gram, GramState, Mat};
use crate::regret::{compute_action_matrix, delta_terms, ActionMatrix};
use crate::relaxation::{solve_relaxation, sparsify_to_extreme_point, FractionalSolution, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::trace::{ExchangeTrace, TerminationReason, TraceStep};

/// Loop bound constant: iter_cap = ⌈C·k/ε⌉.
pub const DEFAULT_CAP_CONSTANT: f64 = 18.0;
/// Upper end of the guarantee-mode ε window.
pub const GUARANTEE_EPS_MAX: f64 = 0.01;
/// The window's lower end is e^{−δ√d}.
pub const GUARANTEE_DELTA: f64 = 1.0;
/// Budgets are divided by 1 + RESCALE_FACTOR·ε when rescaling.
pub const RESCALE_FACTOR: f64 = 100.0;
const CROSS_CHECK_PERIOD: usize = 100;
const MASS_TOL: f64 = 1e-9;

/// RNG stream per draw site.
const STREAM_INIT: u64 = 0;
const STREAM_REMOVE: u64 = 1;
const STREAM_ADD: u64 = 2;

#[derive(Debug, Clone, Serialize)]
pub struct RoundingConfig {
    pub objective_kind: ObjectiveKind,
    pub eps: f64,
    pub seed: u64,
    /// 16d + d² + m.
    pub k: usize,
    /// 8√d.
    pub alpha: f64,
    pub iter_cap: usize,
    pub rescale_budgets: bool,
    pub relax_tol: f64,
}

impl RoundingConfig {
    pub fn new(objective_kind: ObjectiveKind, eps: f64, seed: u64, d: usize, m: usize) -> Self {
        let k = 16 * d + d * d + m;
        RoundingConfig {
            objective_kind,
            eps,
            seed,
            k,
            alpha: 8.0 * (d as f64).sqrt(),
            iter_cap: (DEFAULT_CAP_CONSTANT * k as f64 / eps).ceil() as usize,
            rescale_budgets: true,
            relax_tol: DEFAULT_TOL,
        }
    }

    pub fn for_instance(instance: &DesignInstance, kind: ObjectiveKind, eps: f64, seed: u64) -> Self {
        Self::new(kind, eps, seed, instance.dim(), instance.m())
    }

    /// 16k + 2k/ε.
    pub fn iteration_envelope(&self) -> usize {
        16 * self.k + (2.0 * self.k as f64 / self.eps).ceil() as usize
    }

    /// Reasons the run is outside guarantee mode; empty when inside.
    pub fn guarantee_warnings(&self, instance: &DesignInstance) -> Vec<String> {
        let d = instance.dim() as f64;
        let mut out = Vec::new();
        let lower = (-GUARANTEE_DELTA * d.sqrt()).exp();
        if lower > GUARANTEE_EPS_MAX {
            out.push(format!(
                "the guarantee window exp(-sqrt(d)) <= eps <= {GUARANTEE_EPS_MAX} is empty at d = {}",
                instance.dim()
            ));
        } else if self.eps > GUARANTEE_EPS_MAX || self.eps < lower {
            out.push(format!("eps = {} outside the guarantee window [{lower:.3e}, {GUARANTEE_EPS_MAX}]", self.eps));
        }
        let scale = if self.rescale_budgets { 1.0 / (1.0 + RESCALE_FACTOR * self.eps) } else { 1.0 };
        for (j, (row, &b)) in instance.costs.iter().zip(&instance.budgets).enumerate() {
            let cmax = row.iter().fold(0.0f64, |a, &c| a.max(c));
            if b * scale < d * cmax / self.eps {
                out.push(format!("budget {j} = {} is below d*max(c)/eps = {}", b * scale, d * cmax / self.eps));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.objective_kind == ObjectiveKind::E {
            return Err(Error::NotApplicable("randomized exchange handles D and A only".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps = {} must lie in (0, 1)", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PhaseRecord {
    /// First (1-based) iteration with λ_min(Z_t) ≥ 3/4.
    pub tau1: Option<usize>,
    /// Minimum of λ_min(Z_t) over t ≥ τ₁ (+∞ before τ₁).
    pub min_lambda_after_tau1: f64,
    pub lambda_history: Vec<f64>,
}

impl PhaseRecord {
    pub fn new() -> Self {
        PhaseRecord { tau1: None, min_lambda_after_tau1: f64::INFINITY, lambda_history: Vec::new() }
    }
}

pub const PHASE_ONE_LEVEL: f64 = 0.75;
pub const PHASE_TWO_FLOOR: f64 = 0.25;

/// Appends λ_min(Z_t); `t` is 1-based and must follow the history.
pub fn phase_monitor_update(record: &mut PhaseRecord, t: usize, lambda_min: f64) {
    assert_eq!(t, record.lambda_history.len() + 1, "phase monitor must see every iteration");
    record.lambda_history.push(lambda_min);
    match record.tau1 {
        None if lambda_min >= PHASE_ONE_LEVEL => {
            record.tau1 = Some(t);
            record.min_lambda_after_tau1 = lambda_min;
        }
        Some(_) => record.min_lambda_after_tau1 = record.min_lambda_after_tau1.min(lambda_min),
        None => {}
    }
}

/// Exact sampling masses; the leftover mass is the empty outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingDistributions {
    pub remove: Vec<(usize, f64)>,
    pub add: Vec<(usize, f64)>,
    pub remove_total: f64,
    pub add_total: f64,
}

/// P(i) = (1 − x(i))(1 − 2α⟨vᵢvᵢᵀ,A^{1/2}⟩)/k over i ∈ S with 2α⟨·⟩ ≤ 1/2,
/// P(j) = x(j)(1 + 2α⟨vⱼvⱼᵀ,A^{1/2}⟩)/k over j ∉ S.
///
/// Only fractional coordinates can carry mass, so `candidates` may be
/// restricted to them.
pub fn sampling_distributions(
    member: &[bool],
    x: &[f64],
    vectors: &Mat,
    action: &ActionMatrix,
    k: usize,
    candidates: &[usize],
) -> Result<SamplingDistributions> {
    let kf = k as f64;
    let mut remove = Vec::new();
    let mut add = Vec::new();
    for &i in candidates {
        let w = 2.0 * action.alpha * action.quad_sqrt(&vectors.column(i).into_owned());
        if member[i] {
            if w <= 0.5 {
                let p = (1.0 - x[i]) * (1.0 - w) / kf;
                if p > 0.0 {
                    remove.push((i, p));
                }
            }
        } else {
            let p = x[i] * (1.0 + w) / kf;
            if p > 0.0 {
                add.push((i, p));
            }
        }
    }
    let remove_total: f64 = remove.iter().map(|e| e.1).sum();
    let add_total: f64 = add.iter().map(|e| e.1).sum();
    if remove_total > 1.0 + MASS_TOL {
        return Err(Error::MassOverflow { site: "removal", total: remove_total });
    }
    if add_total > 1.0 + MASS_TOL {
        return Err(Error::MassOverflow { site: "addition", total: add_total });
    }
    Ok(SamplingDistributions { remove, add, remove_total, add_total })
}

/// Independent generators for the three draw sites.
#[derive(Debug, Clone)]
pub struct RoundingRng {
    pub init: ChaCha8Rng,
    pub remove: ChaCha8Rng,
    pub add: ChaCha8Rng,
}

impl RoundingRng {
    pub fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        RoundingRng { init: stream(STREAM_INIT), remove: stream(STREAM_REMOVE), add: stream(STREAM_ADD) }
    }
}

/// Inverse-CDF draw; the leftover mass 1 − Σp yields `None`.
pub fn draw_from(rng: &mut ChaCha8Rng, masses: &[(usize, f64)]) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in masses {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepDraw {
    pub remove: Option<usize>,
    pub add: Option<usize>,
}

/// One exchange-subroutine draw: i and j are sampled independently.
pub fn exchange_step(
    state: &GramState,
    x: &[f64],
    vectors: &Mat,
    config: &RoundingConfig,
    candidates: &[usize],
    rng: &mut RoundingRng,
) -> Result<(StepDraw, ActionMatrix)> {
    let action = compute_action_matrix(state.gram(), config.alpha)?;
    let dist = sampling_distributions(state.mask(), x, vectors, &action, config.k, candidates)?;
    let remove = draw_from(&mut rng.remove, &dist.remove);
    let add = draw_from(&mut rng.add, &dist.add);
    Ok((StepDraw { remove, add }, action))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RoundingStatus {
    Terminated,
    DidNotTerminate,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundingOutcome {
    pub seed: u64,
    pub status: RoundingStatus,
    /// In original coordinates, costs against the original budgets.
    pub solution: IntegralSolution,
    pub trace: ExchangeTrace,
    pub phase: PhaseRecord,
    /// Exchange iterations executed (no-op draws included).
    pub iterations: usize,
    /// Whitened objective at exit: det(Z)^{1/d} or ⟨X⁻¹, Z⁻¹⟩/tr(X⁻¹).
    pub whitened_ratio: f64,
    /// Largest ‖vᵢ‖² among whitened vectors that were drawn.
    pub max_sampled_sq_norm: f64,
    /// Largest relative gap between whitened and unwhitened A objectives at the periodic cross-check.
    pub cross_check_gap: f64,
}

/// Everything that does not depend on the seed: relaxation, sparsified
/// extreme point and whitening.
#[derive(Debug, Clone)]
pub struct RoundingPlan {
    pub config: RoundingConfig,
    pub instance: DesignInstance,
    /// Budgets the relaxation was solved at.
    pub working_budgets: Vec<f64>,
    pub relaxation: FractionalSolution,
    /// vᵢ = X^{-1/2}uᵢ.
    pub whitened: Mat,
    /// X⁻¹ in original coordinates.
    pub x_inverse: Mat,
    pub trace_x_inverse: f64,
    pub fractional: Vec<usize>,
    pub warnings: Vec<String>,
}

impl RoundingPlan {
    pub fn prepare(instance: &DesignInstance, config: &RoundingConfig) -> Result<Self> {
        config.validate()?;
        let warnings = config.guarantee_warnings(instance);
        let working = if config.rescale_budgets {
            instance.scaled_budgets(1.0 / (1.0 + RESCALE_FACTOR * config.eps))
        } else {
            instance.clone()
        };
        let sol = solve_relaxation(&working, config.objective_kind, config.relax_tol, DEFAULT_MAX_ITERS)?;
        let relaxation = sparsify_to_extreme_point(&working, &sol);
        Self::from_fractional(instance, config, working.budgets, relaxation, warnings)
    }

    /// Builds a plan around a given fractional point (already sparse or not).
    pub fn from_fractional(
        instance: &DesignInstance,
        config: &RoundingConfig,
        working_budgets: Vec<f64>,
        relaxation: FractionalSolution,
        warnings: Vec<String>,
    ) -> Result<Self> {
        config.validate()?;
        let x_gram = weighted_gram(&instance.vectors, &relaxation.x);
        let w = inv_sqrt(&x_gram).map_err(|_| Error::Degenerate("relaxation optimum is singular".into()))?;
        let whitened = &w * &instance.vectors;
        let f = psd_factorize(&x_gram)?;
        let x_inverse = f.inverse();
        let trace_x_inverse = f.trace_inverse();
        let fractional = relaxation.fractional_support.clone();
        Ok(RoundingPlan {
            config: config.clone(),
            instance: instance.clone(),
            working_budgets,
            relaxation,
            whitened,
            x_inverse,
            trace_x_inverse,
            fractional,
            warnings,
        })
    }

    /// Relaxation objective at the working budgets.
    pub fn relaxation_value(&self) -> f64 {
        self.relaxation.objective_value
    }

    fn whitened_ratio(&self, state: &GramState) -> f64 {
        match self.config.objective_kind {
            ObjectiveKind::D => (state.log_det() / state.dim() as f64).exp(),
            _ => state
                .factor()
                .map_or(f64::INFINITY, |f| f.weighted_trace_inverse(&self.x_inverse) / self.trace_x_inverse),
        }
    }

    fn terminated(&self, ratio: f64) -> bool {
        let eps = self.config.eps;
        match self.config.objective_kind {
            ObjectiveKind::D => ratio >= 1.0 - 10.0 * eps,
            _ => ratio <= 1.0 + eps,
        }
    }

    /// S₀: integral coordinates as-is, fractional ones drawn with probability x(i).
    pub fn initial_set(&self, rng: &mut RoundingRng) -> Vec<usize> {
        let x = &self.relaxation.x;
        (0..x.len())
            .filter(|&i| {
                if x[i] >= 1.0 {
                    true
                } else if x[i] <= 0.0 {
                    false
                } else {
                    rng.init.random::<f64>() < x[i]
                }
            })
            .collect()
    }

    pub fn run(&self, seed: u64) -> Result<RoundingOutcome> {
        self.run_with_cap(seed, self.config.iter_cap)
    }

    pub fn run_with_cap(&self, seed: u64, iter_cap: usize) -> Result<RoundingOutcome> {
        let mut rng = RoundingRng::new(seed);
        let s0 = self.initial_set(&mut rng);
        let x = &self.relaxation.x;
        let mut state = GramState::new(&self.whitened, &s0);
        let mut trace = ExchangeTrace::starting_at(s0);
        let mut phase = PhaseRecord::new();
        let mut costs = self.instance.costs_of(state.mask());
        let mut max_sampled_sq_norm: f64 = 0.0;
        let mut cross_check_gap: f64 = 0.0;
        let sq_norm = |i: usize| self.whitened.column(i).norm_squared();
        let mut t = 1;
        let status = loop {
            phase_monitor_update(&mut phase, t, state.min_eig());
            let ratio = self.whitened_ratio(&state);
            if self.terminated(ratio) {
                break RoundingStatus::Terminated;
            }
            if t > iter_cap {
                break RoundingStatus::DidNotTerminate;
            }
            let (step, action) = exchange_step(&state, x, &self.whitened, &self.config, &self.fractional, &mut rng)?;
            let vm = step.remove.map(|i| self.whitened.column(i).into_owned());
            let vp = step.add.map(|j| self.whitened.column(j).into_owned());
            let terms = delta_terms(&action, vm.as_ref(), vp.as_ref())?;
            let removal_weight = vm.as_ref().map_or(0.0, |v| action.alpha * action.quad_sqrt(v));
            for i in step.remove.into_iter().chain(step.add) {
                max_sampled_sq_norm = max_sampled_sq_norm.max(sq_norm(i));
            }
            state.exchange(&self.whitened, step.remove, step.add);
            for (j, row) in self.instance.costs.iter().enumerate() {
                if let Some(a) = step.add {
                    costs[j] += row[a];
                }
                if let Some(r) = step.remove {
                    costs[j] -= row[r];
                }
            }
            if t % CROSS_CHECK_PERIOD == 0 {
                state = GramState::from_mask(&self.whitened, state.mask());
                costs = self.instance.costs_of(state.mask());
                if self.config.objective_kind == ObjectiveKind::A {
                    let whitened = self.whitened_ratio(&state) * self.trace_x_inverse;
                    let plain = gram_of(&self.instance.vectors, (0..x.len()).filter(|&i| state.contains(i)));
                    if let Ok(f) = psd_factorize(&plain) {
                        let direct = f.trace_inverse();
                        cross_check_gap = cross_check_gap.max((whitened - direct).abs() / direct);
                    }
                }
            }
            trace.steps.push(TraceStep {
                t,
                remove: step.remove,
                add: step.add,
                objective_before: ratio,
                objective_after: self.whitened_ratio(&state),
                lambda_min_after: state.min_eig(),
                delta_plus: terms.delta_plus,
                delta_minus: terms.delta_minus,
                removal_weight,
                costs_after: costs.clone(),
            });
            t += 1;
        };
        trace.terminated_reason = match status {
            RoundingStatus::Terminated => TerminationReason::TargetReached,
            RoundingStatus::DidNotTerminate => TerminationReason::IterationCap,
        };
        let whitened_ratio = self.whitened_ratio(&state);
        let solution = IntegralSolution::from_mask(&self.instance, state.mask().to_vec(), self.config.objective_kind);
        Ok(RoundingOutcome {
            seed,
            status,
            solution,
            iterations: trace.steps.len(),
            trace,
            phase,
            whitened_ratio,
            max_sampled_sq_norm,
            cross_check_gap,
        })
    }

    /// Independent seeded runs in parallel; results come back in seed order.
    pub fn run_many(&self, seeds: &[u64]) -> Vec<Result<RoundingOutcome>> {
        seeds.par_iter().map(|&s| self.run(s)).collect()
    }

    /// Z₁ in whitened coordinates for a run's starting set.
    pub fn initial_gram(&self, trace: &ExchangeTrace) -> Mat {
        gram_of(&self.whitened, trace.initial_set.iter().copied())
    }
}

/// Full pipeline for one seed.
pub fn randomized_exchange(instance: &DesignInstance, config: &RoundingConfig) -> Result<(RoundingPlan, RoundingOutcome)> {
    let plan = RoundingPlan::prepare(instance, config)?;
    let out = plan.run(config.seed)?;
    Ok((plan, out))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintOvershoot {
    pub budget: f64,
    pub guarantee_bound: f64,
    pub mean_cost: f64,
    pub max_cost: f64,
    pub costs: Vec<f64>,
    pub fraction_over_guarantee: f64,
    pub fraction_over_budget: f64,
}

/// Per-constraint cost statistics over repeated runs against the original
/// budgets and the (1+ε)b + 120d‖c‖∞ envelope.
pub fn knapsack_overshoot_report(
    solutions: &[IntegralSolution],
    instance: &DesignInstance,
    eps: f64,
) -> Vec<ConstraintOvershoot> {
    let d = instance.dim() as f64;
    let runs = solutions.len().max(1) as f64;
    (0..instance.m())
        .map(|j| {
            let b = instance.budgets[j];
            let cmax = instance.costs[j].iter().fold(0.0f64, |a, &c| a.max(c));
            let bound = (1.0 + eps) * b + 120.0 * d * cmax;
            let costs: Vec<f64> = solutions.iter().map(|s| s.costs_used[j]).collect();
            let over = |lim: f64| costs.iter().filter(|&&c| c > lim * (1.0 + 1e-12)).count() as f64 / runs;
            ConstraintOvershoot {
                budget: b,
                guarantee_bound: bound,
                mean_cost: costs.iter().sum::<f64>() / runs,
                max_cost: costs.iter().fold(f64::NEG_INFINITY, |a, &c| a.max(c)),
                fraction_over_guarantee: over(bound),
                fraction_over_budget: over(b),
                costs,
            }
        })
        .collect()
}
