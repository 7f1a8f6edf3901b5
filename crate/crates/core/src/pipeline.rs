//! Method dispatch shared by the CLI and the Python bindings.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graphapps::{self, Graph};
use crate::instance::{DesignInstance, ObjectiveKind};
use crate::localsearch::{fedorov_a, fedorov_d, local_search_e_auto, DEFAULT_ACCEPT_C};
use crate::relaxation::{solve_relaxation, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::report::{approximation_ratio, SolveReport};
use crate::rounding::{randomized_exchange, RoundingConfig, RoundingStatus};
use crate::trace::ExchangeTrace;

/// ε used when the caller gives none: rounding needs it small, local search does not.
pub const DEFAULT_ROUND_EPS: f64 = 0.01;
pub const DEFAULT_SEARCH_EPS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Relax,
    Fedorov,
    LocalSearchE,
    Round,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relax" => Ok(Method::Relax),
            "fedorov" => Ok(Method::Fedorov),
            "localsearch-e" => Ok(Method::LocalSearchE),
            "round" => Ok(Method::Round),
            _ => Err(Error::InvalidArgument(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub eps: Option<f64>,
    pub seed: u64,
    pub tol: f64,
    pub rescale: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { eps: None, seed: 0, tol: DEFAULT_TOL, rescale: true }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", self.tol)));
        }
        match self.eps {
            Some(e) if !(e > 0.0 && e < 1.0) => Err(Error::InvalidArgument(format!("eps = {e} must lie in (0, 1)"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub report: SolveReport,
    pub trace: Option<ExchangeTrace>,
    /// False only for rounding runs that hit their iteration cap.
    pub terminated: bool,
}

fn cardinality(inst: &DesignInstance, method: &str) -> Result<usize> {
    let b = inst
        .cardinality_budget()
        .ok_or_else(|| Error::InvalidArgument(format!("method {method} needs a single cardinality budget")))?;
    if b.fract() != 0.0 || b < inst.dim() as f64 {
        return Err(Error::InvalidArgument(format!("cardinality budget {b} must be an integer >= d = {}", inst.dim())));
    }
    Ok(b as usize)
}

pub fn solve_instance(inst: &DesignInstance, kind: ObjectiveKind, method: Method, opts: &SolveOptions) -> Result<Solved> {
    opts.validate()?;
    if inst.m() == 0 {
        return Err(Error::InvalidArgument("instance has no budget".into()));
    }
    let done = |report, trace| Ok(Solved { report, trace, terminated: true });
    match method {
        Method::Relax => {
            let sol = solve_relaxation(inst, kind, opts.tol, DEFAULT_MAX_ITERS)?;
            done(SolveReport::for_relaxation(inst, &sol), None)
        }
        Method::Fedorov => {
            let b = cardinality(inst, "fedorov")?;
            let eps = opts.eps.unwrap_or(DEFAULT_SEARCH_EPS);
            let (sol, trace) = match kind {
                ObjectiveKind::D => fedorov_d(inst, b, None, None)?,
                ObjectiveKind::A => fedorov_a(inst, b, eps, None, None)?,
                ObjectiveKind::E => {
                    return Err(Error::InvalidArgument("use localsearch-e for the E objective".into()));
                }
            };
            let relax = solve_relaxation(inst, kind, opts.tol, DEFAULT_MAX_ITERS)?;
            let mut r = SolveReport::for_local_search("fedorov", inst, &sol, &trace, Some(relax.objective_value));
            if kind == ObjectiveKind::A {
                r.eps = Some(eps);
            }
            done(r, Some(trace))
        }
        Method::LocalSearchE => {
            if kind != ObjectiveKind::E {
                return Err(Error::InvalidArgument("localsearch-e solves the E objective only".into()));
            }
            let b = cardinality(inst, "localsearch-e")?;
            let eps = opts.eps.unwrap_or(DEFAULT_SEARCH_EPS);
            let out = local_search_e_auto(inst, b, eps, None, None, DEFAULT_ACCEPT_C)?;
            let relax = solve_relaxation(inst, kind, opts.tol, DEFAULT_MAX_ITERS)?;
            let mut r =
                SolveReport::for_local_search("localsearch-e", inst, &out.solution, &out.trace, Some(relax.objective_value));
            r.eps = Some(eps);
            r.lambda_star = Some(out.lambda_star);
            done(r, Some(out.trace))
        }
        Method::Round => {
            let mut cfg = RoundingConfig::for_instance(inst, kind, opts.eps.unwrap_or(DEFAULT_ROUND_EPS), opts.seed);
            cfg.rescale_budgets = opts.rescale;
            cfg.relax_tol = opts.tol;
            let (plan, out) = randomized_exchange(inst, &cfg)?;
            Ok(Solved {
                report: SolveReport::for_rounding(inst, &plan, &out),
                terminated: out.status == RoundingStatus::Terminated,
                trace: Some(out.trace),
            })
        }
    }
}

/// A + round: total effective resistance. E + localsearch-e: algebraic connectivity.
pub fn solve_graph(graph: &Graph, kind: ObjectiveKind, method: Method, budget: f64, opts: &SolveOptions) -> Result<Solved> {
    opts.validate()?;
    let inst = graphapps::edge_design_instance(graph)?;
    let eps = opts.eps.unwrap_or(DEFAULT_SEARCH_EPS);
    match (kind, method) {
        (ObjectiveKind::A, Method::Round) => {
            let out = graphapps::solve_total_reff(graph, budget, eps, opts.seed)?;
            let mut r = SolveReport::new("graph-total-reff", &inst, kind);
            r.seed = Some(opts.seed);
            r.eps = Some(eps);
            r.budgets = vec![budget];
            r.objective_value = out.total_reff;
            r.relaxation_value = Some(out.relaxation_total_reff);
            r.approximation_ratio = Some(approximation_ratio(kind, out.total_reff, out.relaxation_total_reff));
            r.termination_reason = format!("{:?}", out.status);
            r.costs = vec![out.cost];
            r.feasible = out.connected && out.cost <= budget + 1e-9;
            r.subset = Some(out.edges.clone());
            if out.cost > budget + 1e-9 {
                r.warnings.push(format!("edge cost {} exceeds the budget {budget}; graph budgets are not rescaled", out.cost));
            }
            Ok(Solved { report: r, trace: None, terminated: out.status == RoundingStatus::Terminated })
        }
        (ObjectiveKind::E, Method::LocalSearchE) => {
            if budget.fract() != 0.0 || budget < 1.0 {
                return Err(Error::InvalidArgument("connectivity needs an integer edge budget".into()));
            }
            let out = graphapps::solve_connectivity(graph, budget as usize, eps)?;
            let mut r = SolveReport::new("graph-connectivity", &inst, kind);
            r.eps = Some(eps);
            r.budgets = vec![budget];
            r.objective_value = out.lambda2;
            r.lambda_star = Some(out.lambda_star);
            r.iterations = out.attempts;
            r.termination_reason = "Accepted".into();
            r.costs = vec![out.edges.len() as f64];
            r.subset = Some(out.edges.clone());
            Ok(Solved { report: r, trace: None, terminated: true })
        }
        _ => Err(Error::InvalidArgument(
            "graphs support A with round (total effective resistance) and E with localsearch-e (algebraic connectivity)"
                .into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_gaussian;

    #[test]
    fn method_names_round_trip() {
        for (s, m) in [("relax", Method::Relax), ("fedorov", Method::Fedorov), ("localsearch-e", Method::LocalSearchE), ("round", Method::Round)] {
            assert_eq!(s.parse::<Method>().unwrap(), m);
        }
        assert!(matches!("x".parse::<Method>(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn misuse_is_invalid_argument() {
        let inst = gen_gaussian(2, 6, 1).with_cardinality(3.0);
        let opts = SolveOptions::default();
        assert!(matches!(solve_instance(&inst, ObjectiveKind::E, Method::Fedorov, &opts), Err(Error::InvalidArgument(_))));
        assert!(matches!(solve_instance(&inst, ObjectiveKind::D, Method::LocalSearchE, &opts), Err(Error::InvalidArgument(_))));
        let bare = gen_gaussian(2, 6, 1);
        assert!(matches!(solve_instance(&bare, ObjectiveKind::D, Method::Relax, &opts), Err(Error::InvalidArgument(_))));
        let bad = SolveOptions { eps: Some(1.5), ..SolveOptions::default() };
        assert!(matches!(solve_instance(&inst, ObjectiveKind::D, Method::Round, &bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fractional_budget_rejected_for_exchange() {
        let inst = gen_gaussian(2, 6, 1).with_cardinality(2.5);
        let r = solve_instance(&inst, ObjectiveKind::D, Method::Fedorov, &SolveOptions::default());
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
