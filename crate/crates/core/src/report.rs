//! Versioned JSON report for a single solve.

use serde::Serialize;

use crate::instance::{DesignInstance, IntegralSolution, ObjectiveKind};
use crate::relaxation::FractionalSolution;
use crate::rounding::{PhaseRecord, RoundingOutcome, RoundingPlan};
use crate::trace::ExchangeTrace;

/// Bumped only on incompatible changes; fields may be added within a version.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub tau1: Option<usize>,
    /// null until τ₁ is reached.
    pub min_lambda_after_tau1: Option<f64>,
    pub iterations_observed: usize,
}

impl From<&PhaseRecord> for PhaseSummary {
    fn from(p: &PhaseRecord) -> Self {
        PhaseSummary {
            tau1: p.tau1,
            min_lambda_after_tau1: p.tau1.map(|_| p.min_lambda_after_tau1),
            iterations_observed: p.lambda_history.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub schema: u32,
    pub method: String,
    pub objective: ObjectiveKind,
    pub instance: String,
    pub d: usize,
    pub n: usize,
    pub budgets: Vec<f64>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    /// Objective of the returned solution (fractional for `relax`).
    pub objective_value: f64,
    pub relaxation_value: Option<f64>,
    /// Fraction of the relaxation bound achieved: value/relax for D and E,
    /// relax/value for A. At most 1 up to solver tolerance.
    pub approximation_ratio: Option<f64>,
    pub duality_gap_estimate: Option<f64>,
    pub iterations: usize,
    pub termination_reason: String,
    pub costs: Vec<f64>,
    pub feasible: bool,
    pub subset: Option<Vec<usize>>,
    pub x: Option<Vec<f64>>,
    pub phase: Option<PhaseSummary>,
    pub lambda_star: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn approximation_ratio(kind: ObjectiveKind, value: f64, relaxation: f64) -> f64 {
    match kind {
        ObjectiveKind::A => relaxation / value,
        _ => value / relaxation,
    }
}

impl SolveReport {
    /// Empty report; callers fill in the outcome fields.
    pub fn new(method: &str, instance: &DesignInstance, kind: ObjectiveKind) -> Self {
        SolveReport {
            schema: SCHEMA_VERSION,
            method: method.into(),
            objective: kind,
            instance: instance.label.clone(),
            d: instance.dim(),
            n: instance.n(),
            budgets: instance.budgets.clone(),
            seed: None,
            eps: None,
            objective_value: f64::NAN,
            relaxation_value: None,
            approximation_ratio: None,
            duality_gap_estimate: None,
            iterations: 0,
            termination_reason: String::new(),
            costs: Vec::new(),
            feasible: true,
            subset: None,
            x: None,
            phase: None,
            lambda_star: None,
            warnings: Vec::new(),
        }
    }

    pub fn for_relaxation(instance: &DesignInstance, sol: &FractionalSolution) -> Self {
        let costs: Vec<f64> =
            instance.costs.iter().map(|row| row.iter().zip(&sol.x).map(|(c, x)| c * x).sum()).collect();
        SolveReport {
            objective_value: sol.objective_value,
            relaxation_value: Some(sol.objective_value),
            approximation_ratio: Some(1.0),
            duality_gap_estimate: Some(sol.duality_gap_estimate),
            iterations: sol.iterations,
            termination_reason: if sol.converged { "Converged" } else { "IterationCap" }.into(),
            costs,
            x: Some(sol.x.clone()),
            ..Self::new("relax", instance, sol.objective_kind)
        }
    }

    /// Combinatorial local search; `relaxation` is the bound the ratio is taken against.
    pub fn for_local_search(
        method: &str,
        instance: &DesignInstance,
        sol: &IntegralSolution,
        trace: &ExchangeTrace,
        relaxation: Option<f64>,
    ) -> Self {
        SolveReport {
            objective_value: sol.objective_value,
            relaxation_value: relaxation,
            approximation_ratio: relaxation.map(|r| approximation_ratio(sol.objective_kind, sol.objective_value, r)),
            iterations: trace.len(),
            termination_reason: format!("{:?}", trace.terminated_reason),
            costs: sol.costs_used.clone(),
            feasible: instance.is_feasible(&sol.membership),
            subset: Some(sol.subset()),
            ..Self::new(method, instance, sol.objective_kind)
        }
    }

    pub fn for_rounding(instance: &DesignInstance, plan: &RoundingPlan, out: &RoundingOutcome) -> Self {
        let sol = &out.solution;
        let relax = plan.relaxation_value();
        SolveReport {
            seed: Some(out.seed),
            eps: Some(plan.config.eps),
            objective_value: sol.objective_value,
            relaxation_value: Some(relax),
            approximation_ratio: Some(approximation_ratio(sol.objective_kind, sol.objective_value, relax)),
            duality_gap_estimate: Some(plan.relaxation.duality_gap_estimate),
            iterations: out.iterations,
            termination_reason: format!("{:?}", out.status),
            costs: sol.costs_used.clone(),
            feasible: instance.is_feasible(&sol.membership),
            subset: Some(sol.subset()),
            phase: Some(PhaseSummary::from(&out.phase)),
            warnings: plan.warnings.clone(),
            ..Self::new("round", instance, sol.objective_kind)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Caps rayon's global pool at OPTDESIGN_THREADS when set. Later calls are no-ops.
pub fn init_thread_pool() {
    if let Some(n) = std::env::var("OPTDESIGN_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_gaussian;
    use crate::localsearch::fedorov_d;
    use crate::relaxation::solve_relaxation;

    #[test]
    fn relaxation_report_fields() {
        let inst = gen_gaussian(2, 8, 1).with_cardinality(3.0);
        let sol = solve_relaxation(&inst, ObjectiveKind::D, 1e-8, 10_000).unwrap();
        let r = SolveReport::for_relaxation(&inst, &sol);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["objective"], "D");
        assert_eq!(v["termination_reason"], "Converged");
        // Gap is in ln det units here.
        assert!(v["duality_gap_estimate"].as_f64().unwrap() <= 1e-8 * sol.objective_value.ln().abs().max(1.0));
        assert!((v["costs"][0].as_f64().unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_orientation() {
        assert_eq!(approximation_ratio(ObjectiveKind::D, 1.0, 2.0), 0.5);
        assert_eq!(approximation_ratio(ObjectiveKind::A, 4.0, 2.0), 0.5);
    }

    #[test]
    fn local_search_report() {
        let inst = gen_gaussian(2, 10, 4).with_cardinality(5.0);
        let (sol, tr) = fedorov_d(&inst, 5, None, None).unwrap();
        let r = SolveReport::for_local_search("fedorov", &inst, &sol, &tr, Some(sol.objective_value * 1.1));
        assert!(r.feasible);
        assert_eq!(r.subset.as_ref().unwrap().len(), 5);
        assert!((r.approximation_ratio.unwrap() - 1.0 / 1.1).abs() < 1e-12);
    }
}
