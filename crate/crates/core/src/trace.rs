//! Per-iteration record shared by the exchange algorithms.

use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminationReason {
    ImprovementTooSmall,
    TargetReached,
    IterationCap,
    EmptyRemovalSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    /// 1-based iteration counter.
    pub t: usize,
    pub remove: Option<usize>,
    pub add: Option<usize>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub lambda_min_after: f64,
    /// Regret gain of the added vector (0 when the slot is empty or not tracked).
    pub delta_plus: f64,
    /// Regret loss of the removed vector.
    pub delta_minus: f64,
    /// α⟨vvᵀ, A^{1/2}⟩ of the removed vector; must stay below 1/2 for the regret bound.
    pub removal_weight: f64,
    pub costs_after: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeTrace {
    /// S₀, so runs can be replayed.
    pub initial_set: Vec<usize>,
    pub steps: Vec<TraceStep>,
    pub terminated_reason: TerminationReason,
}

impl ExchangeTrace {
    pub fn new() -> Self {
        ExchangeTrace { initial_set: Vec::new(), steps: Vec::new(), terminated_reason: TerminationReason::IterationCap }
    }

    pub fn starting_at(initial_set: Vec<usize>) -> Self {
        ExchangeTrace { initial_set, ..Self::new() }
    }

    /// Membership after applying the first `steps` recorded swaps to S₀.
    pub fn membership_after(&self, n: usize, steps: usize) -> Vec<bool> {
        let mut member = vec![false; n];
        for &i in &self.initial_set {
            member[i] = true;
        }
        for s in &self.steps[..steps] {
            if let Some(j) = s.add {
                member[j] = true;
            }
            if let Some(i) = s.remove {
                member[i] = false;
            }
        }
        member
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Executed swaps, skipping no-op iterations.
    pub fn exchanges(&self) -> usize {
        self.steps.iter().filter(|s| s.remove.is_some() || s.add.is_some()).count()
    }

    /// One row per iteration: t, i, j, lambda_min, objective, cost_1..cost_m.
    pub fn to_csv(&self) -> String {
        let m = self.steps.first().map_or(0, |s| s.costs_after.len());
        let mut out = String::from("t,i,j,lambda_min,objective");
        for j in 1..=m {
            write!(out, ",cost_{j}").unwrap();
        }
        out.push('\n');
        let slot = |v: Option<usize>| v.map_or(String::new(), |i| i.to_string());
        for s in &self.steps {
            write!(out, "{},{},{},{:?},{:?}", s.t, slot(s.remove), slot(s.add), s.lambda_min_after, s.objective_after)
                .unwrap();
            for c in &s.costs_after {
                write!(out, ",{c:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// objective_after of step t equals objective_before of step t+1.
    pub fn is_chained(&self, rel_tol: f64) -> bool {
        self.steps.windows(2).all(|w| {
            let (a, b) = (w[0].objective_after, w[1].objective_before);
            a == b || (a - b).abs() <= rel_tol * a.abs().max(b.abs())
        })
    }
}

impl Default for ExchangeTrace {
    fn default() -> Self {
        Self::new()
    }
}
