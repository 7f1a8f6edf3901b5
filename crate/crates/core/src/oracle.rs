//! Brute-force ground truth for small instances.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{DesignInstance, ObjectiveKind};
use crate::linalg::{gram_of, min_eigenvalue, psd_factorize, quad_form, GramState, Mat, Vector};
use crate::localsearch::BestExchange;
use crate::regret::{compute_action_matrix, delta_terms};
use crate::rounding::{sampling_distributions, RoundingConfig};

pub const DEFAULT_N_CAP: usize = 22;
/// Items fixed per parallel branch.
const PREFIX_DEPTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub subset: Vec<usize>,
    /// ±∞ when every feasible subset is rank deficient.
    pub value: f64,
}

/// Objective of a subset from scratch; rank-deficient subsets score −∞
/// (D, E) or +∞ (A).
pub fn score_subset(vectors: &Mat, subset: &[usize], kind: ObjectiveKind) -> f64 {
    let g = gram_of(vectors, subset.iter().copied());
    match (psd_factorize(&g), kind) {
        (Ok(f), ObjectiveKind::D) => (f.log_det() / g.nrows() as f64).exp(),
        (Ok(f), ObjectiveKind::A) => f.trace_inverse(),
        (Ok(_), ObjectiveKind::E) => min_eigenvalue(&g),
        (Err(_), ObjectiveKind::A) => f64::INFINITY,
        (Err(_), _) => f64::NEG_INFINITY,
    }
}

fn better(kind: ObjectiveKind, a: &OracleResult, b: &OracleResult) -> bool {
    let strictly = if kind.maximizes() { a.value > b.value } else { a.value < b.value };
    strictly || (a.value == b.value && a.subset < b.subset)
}

struct Search<'a> {
    instance: &'a DesignInstance,
    kind: ObjectiveKind,
    slack: Vec<f64>,
}

impl Search<'_> {
    fn fits(&self, remaining: &[f64], i: usize) -> bool {
        self.instance.costs.iter().zip(remaining).zip(&self.slack).all(|((row, r), s)| r - row[i] >= -s)
    }

    fn dfs(&self, idx: usize, chosen: &mut Vec<usize>, remaining: &mut [f64], best: &mut Option<OracleResult>) {
        if idx == self.instance.n() {
            let cand = OracleResult { value: score_subset(&self.instance.vectors, chosen, self.kind), subset: chosen.clone() };
            if best.as_ref().is_none_or(|b| better(self.kind, &cand, b)) {
                *best = Some(cand);
            }
            return;
        }
        if self.fits(remaining, idx) {
            for (r, row) in remaining.iter_mut().zip(&self.instance.costs) {
                *r -= row[idx];
            }
            chosen.push(idx);
            self.dfs(idx + 1, chosen, remaining, best);
            chosen.pop();
            for (r, row) in remaining.iter_mut().zip(&self.instance.costs) {
                *r += row[idx];
            }
        }
        self.dfs(idx + 1, chosen, remaining, best);
    }
}

/// Exact optimum over all z ∈ {0,1}ⁿ meeting every knapsack row, by
/// depth-first search with budget pruning, parallel over a fixed prefix.
pub fn brute_force_opt(instance: &DesignInstance, kind: ObjectiveKind, n_cap: usize) -> Result<OracleResult> {
    let n = instance.n();
    if n > n_cap {
        return Err(Error::TooLarge { n, cap: n_cap });
    }
    let search = Search {
        instance,
        kind,
        slack: instance.budgets.iter().map(|b| 1e-12 * b.abs().max(1.0)).collect(),
    };
    let depth = n.min(PREFIX_DEPTH);
    let branches: Vec<Option<OracleResult>> = (0u64..1 << depth)
        .into_par_iter()
        .map(|prefix| {
            let mut remaining = instance.budgets.clone();
            let mut chosen = Vec::new();
            for i in 0..depth {
                if prefix >> (depth - 1 - i) & 1 == 1 {
                    if !search.fits(&remaining, i) {
                        return None;
                    }
                    for (r, row) in remaining.iter_mut().zip(&instance.costs) {
                        *r -= row[i];
                    }
                    chosen.push(i);
                }
            }
            let mut best = None;
            search.dfs(depth, &mut chosen, &mut remaining, &mut best);
            best
        })
        .collect();
    let mut best: Option<OracleResult> = None;
    for b in branches.into_iter().flatten() {
        if best.as_ref().is_none_or(|cur| better(kind, &b, cur)) {
            best = Some(b);
        }
    }
    best.ok_or_else(|| Error::Infeasible("no subset meets the budgets".into()))
}

/// Best single swap by rebuilding and refactoring every candidate.
///
/// D: ln det change (max); A: tr(Z⁻¹) change (min); E: λ_min after the
/// swap (max), i.e. the naive exchange on the raw objective.
pub fn brute_force_best_exchange(state: &GramState, vectors: &Mat, kind: ObjectiveKind) -> Option<BestExchange> {
    let base = match kind {
        ObjectiveKind::D => state.log_det(),
        ObjectiveKind::A => state.factor().map_or(f64::INFINITY, |f| f.trace_inverse()),
        ObjectiveKind::E => 0.0,
    };
    let subset = state.subset();
    let outside: Vec<usize> = (0..vectors.ncols()).filter(|&j| !state.contains(j)).collect();
    let mut best: Option<BestExchange> = None;
    for &i in &subset {
        for &j in &outside {
            let swapped: Vec<usize> = subset.iter().copied().filter(|&k| k != i).chain([j]).collect();
            let g = gram_of(vectors, swapped);
            let value = match kind {
                ObjectiveKind::D => psd_factorize(&g).map_or(f64::NEG_INFINITY, |f| f.log_det()) - base,
                ObjectiveKind::A => psd_factorize(&g).map_or(f64::INFINITY, |f| f.trace_inverse()) - base,
                ObjectiveKind::E => min_eigenvalue(&g),
            };
            let wins = match best {
                None => true,
                Some(b) if kind.maximizes() => value > b.value,
                Some(b) => value < b.value,
            };
            if wins {
                best = Some(BestExchange { remove: i, add: j, value });
            }
        }
    }
    best
}

/// Per-step quantity whose conditional expectation is computed exactly.
#[derive(Debug, Clone, Copy)]
pub enum ExpectationQuantity<'a> {
    /// (1 − 4ε)⟨vⱼvⱼᵀ, Z⁻¹⟩ − (1 + 5ε)⟨vᵢvᵢᵀ, Z⁻¹⟩.
    GammaD { eps: f64 },
    /// ⟨X⁻¹, Z⁻¹vvᵀZ⁻¹⟩/(1 ± 2⟨vvᵀ, Z⁻¹⟩) gain minus loss, X⁻¹ in original coordinates.
    GammaA { x_inverse: &'a Mat },
    /// Regret gain minus loss, Δ⁺(j) − Δ⁻(i).
    Delta,
}

/// Σ over the removal and addition distributions (independent draws, empty
/// slots contribute zero).
pub fn exact_conditional_expectation(
    state: &GramState,
    x: &[f64],
    vectors: &Mat,
    config: &RoundingConfig,
    candidates: &[usize],
    quantity: ExpectationQuantity<'_>,
) -> Result<f64> {
    let action = compute_action_matrix(state.gram(), config.alpha)?;
    let dist = sampling_distributions(state.mask(), x, vectors, &action, config.k, candidates)?;
    let z_inverse = match quantity {
        ExpectationQuantity::Delta => None,
        _ => Some(psd_factorize(state.gram()).map_err(|_| Error::Degenerate("Z is singular".into()))?.inverse()),
    };
    let weighted = match (quantity, &z_inverse) {
        (ExpectationQuantity::GammaA { x_inverse }, Some(zi)) => Some(zi * x_inverse * zi),
        _ => None,
    };
    // Signed contribution of one index: gain when adding, loss when removing.
    let term = |c: usize, adding: bool| -> Result<f64> {
        let v: Vector = vectors.column(c).into_owned();
        Ok(match quantity {
            ExpectationQuantity::Delta => {
                let t = if adding { delta_terms(&action, None, Some(&v))? } else { delta_terms(&action, Some(&v), None)? };
                t.delta_plus + t.delta_minus
            }
            ExpectationQuantity::GammaD { eps } => {
                let q = quad_form(z_inverse.as_ref().unwrap(), &v);
                if adding { (1.0 - 4.0 * eps) * q } else { (1.0 + 5.0 * eps) * q }
            }
            ExpectationQuantity::GammaA { .. } => {
                let q = quad_form(z_inverse.as_ref().unwrap(), &v);
                let h = quad_form(weighted.as_ref().unwrap(), &v);
                if adding { h / (1.0 + 2.0 * q) } else { h / (1.0 - 2.0 * q) }
            }
        })
    };
    let mut expected_gain = 0.0;
    for &(j, p) in &dist.add {
        expected_gain += p * term(j, true)?;
    }
    let mut expected_loss = 0.0;
    for &(i, p) in &dist.remove {
        expected_loss += p * term(i, false)?;
    }
    Ok(expected_gain - expected_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_gaussian;
    use crate::localsearch::{best_exchange, greedy_init};
    use crate::relaxation::FractionalSolution;
    use crate::rounding::{RoundingPlan, RoundingRng};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthonormal_optimum() {
        let inst = DesignInstance::from_vectors(Mat::identity(3, 3), "").unwrap().with_cardinality(3.0);
        for (kind, v) in [(ObjectiveKind::D, 1.0), (ObjectiveKind::A, 3.0), (ObjectiveKind::E, 1.0)] {
            let r = brute_force_opt(&inst, kind, DEFAULT_N_CAP).unwrap();
            assert_eq!(r.subset, vec![0, 1, 2]);
            assert!((r.value - v).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_optimum() {
        let inst = DesignInstance::from_vectors(Mat::from_row_slice(1, 3, &[1.0, 2.0, 3.0]), "").unwrap().with_cardinality(2.0);
        for kind in [ObjectiveKind::D, ObjectiveKind::A, ObjectiveKind::E] {
            assert_eq!(brute_force_opt(&inst, kind, DEFAULT_N_CAP).unwrap().subset, vec![1, 2]);
        }
    }

    #[test]
    fn too_large() {
        let inst = gen_gaussian(2, 23, 1).with_cardinality(3.0);
        assert!(matches!(brute_force_opt(&inst, ObjectiveKind::D, DEFAULT_N_CAP), Err(Error::TooLarge { n: 23, cap: 22 })));
    }

    #[test]
    fn agrees_with_exhaustive_masks() {
        let inst = gen_gaussian(2, 8, 43).with_cardinality(4.0);
        for kind in [ObjectiveKind::D, ObjectiveKind::A, ObjectiveKind::E] {
            let r = brute_force_opt(&inst, kind, DEFAULT_N_CAP).unwrap();
            let mut best = if kind.maximizes() { f64::NEG_INFINITY } else { f64::INFINITY };
            for mask in 0u32..256 {
                if mask.count_ones() <= 4 {
                    let s: Vec<usize> = (0..8).filter(|i| mask >> i & 1 == 1).collect();
                    let v = score_subset(&inst.vectors, &s, kind);
                    best = if kind.maximizes() { best.max(v) } else { best.min(v) };
                }
            }
            assert_eq!(r.value, best);
        }
    }

    #[test]
    fn best_exchange_cross_check() {
        let inst = gen_gaussian(3, 12, 4);
        let init = greedy_init(&inst.vectors, 5).unwrap();
        let state = GramState::new(&inst.vectors, &init);
        for kind in [ObjectiveKind::D, ObjectiveKind::A] {
            let fast = best_exchange(&state, &inst.vectors, kind, None).unwrap().unwrap();
            let slow = brute_force_best_exchange(&state, &inst.vectors, kind).unwrap();
            assert_eq!((fast.remove, fast.add), (slow.remove, slow.add));
            assert!((fast.value - slow.value).abs() < 1e-9);
        }
    }

    #[test]
    fn single_pair() {
        let inst = DesignInstance::from_vectors(Mat::from_row_slice(1, 2, &[1.0, 2.0]), "").unwrap();
        let state = GramState::new(&inst.vectors, &[0]);
        let b = brute_force_best_exchange(&state, &inst.vectors, ObjectiveKind::A).unwrap();
        assert_eq!((b.remove, b.add), (0, 1));
        assert!((b.value - (0.25 - 1.0)).abs() < 1e-15);
    }

    fn toy_plan() -> RoundingPlan {
        let inst = DesignInstance::from_vectors(Mat::from_row_slice(1, 2, &[1.0, 1.0]), "").unwrap();
        let frac = FractionalSolution::from_x(&inst, vec![0.5, 0.5], ObjectiveKind::D);
        let mut cfg = RoundingConfig::for_instance(&inst, ObjectiveKind::D, 0.01, 0);
        cfg.rescale_budgets = false;
        RoundingPlan::from_fractional(&inst, &cfg, vec![], frac, vec![]).unwrap()
    }

    #[test]
    fn empty_mass_gives_zero() {
        let inst = gen_gaussian(2, 5, 2);
        let frac = FractionalSolution::from_x(&inst, vec![1.0, 1.0, 1.0, 0.0, 0.0], ObjectiveKind::D);
        let mut cfg = RoundingConfig::for_instance(&inst, ObjectiveKind::D, 0.01, 0);
        cfg.rescale_budgets = false;
        let plan = RoundingPlan::from_fractional(&inst, &cfg, vec![], frac, vec![]).unwrap();
        let state = GramState::new(&plan.whitened, &[0, 1, 2]);
        let all: Vec<usize> = (0..5).collect();
        let e = exact_conditional_expectation(&state, &plan.relaxation.x, &plan.whitened, &cfg, &all, ExpectationQuantity::Delta)
            .unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn two_outcome_closed_form() {
        // d = 1, whitened vectors v = (1) each (x = 1/2, 1/2 makes X = 1), S = {0}.
        let plan = toy_plan();
        let cfg = &plan.config;
        let state = GramState::new(&plan.whitened, &[0]);
        let v2 = plan.whitened[(0, 0)].powi(2);
        assert!((v2 - 1.0).abs() < 1e-15);
        let z = 1.0;
        let (alpha, k) = (cfg.alpha, cfg.k as f64);
        let w = 2.0 * alpha * v2;
        // Removal is blocked because the weight exceeds 1/2; the addition has mass (1/2)(1 + w)/k.
        assert!(w > 0.5);
        let p_add = 0.5 * (1.0 + w) / k;
        let eps = 0.01;
        let expected_gamma = p_add * (1.0 - 4.0 * eps) * v2 / z;
        let e = exact_conditional_expectation(&state, &plan.relaxation.x, &plan.whitened, cfg, &[0, 1], ExpectationQuantity::GammaD { eps })
            .unwrap();
        assert!((e - expected_gamma).abs() < 1e-15);
        let expected_delta = p_add * 1.0 / (1.0 + w);
        let e = exact_conditional_expectation(&state, &plan.relaxation.x, &plan.whitened, cfg, &[0, 1], ExpectationQuantity::Delta)
            .unwrap();
        assert!((e - expected_delta).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_mean_matches() {
        let inst = gen_gaussian(2, 16, 47).with_cardinality(6.0);
        let mut cfg = RoundingConfig::for_instance(&inst, ObjectiveKind::D, 0.05, 47);
        cfg.rescale_budgets = false;
        // A dense interior point keeps many coordinates in play; k grows accordingly.
        let x: Vec<f64> = vec![6.0 / 16.0; 16];
        let frac = FractionalSolution::from_x(&inst, x.clone(), ObjectiveKind::D);
        cfg.k = 16 * 2 + 4 + 16;
        let plan = RoundingPlan::from_fractional(&inst, &cfg, inst.budgets.clone(), frac, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let s: Vec<usize> = (0..16).filter(|_| rng.random::<f64>() < 0.4).collect();
        let state = GramState::new(&plan.whitened, &s);
        let all: Vec<usize> = (0..16).collect();
        let exact = exact_conditional_expectation(&state, &x, &plan.whitened, &cfg, &all, ExpectationQuantity::Delta).unwrap();

        let action = compute_action_matrix(state.gram(), cfg.alpha).unwrap();
        let dist = sampling_distributions(state.mask(), &x, &plan.whitened, &action, cfg.k, &all).unwrap();
        let value = |i: Option<usize>, j: Option<usize>| {
            let col = |c: usize| -> Vector { plan.whitened.column(c).into_owned() };
            crate::regret::delta_terms(&action, i.map(col).as_ref(), j.map(col).as_ref()).unwrap().delta
        };
        let draws = 1_000_000;
        let mut r = RoundingRng::new(47);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let i = crate::rounding::draw_from(&mut r.remove, &dist.remove);
            let j = crate::rounding::draw_from(&mut r.add, &dist.add);
            let v = value(i, j);
            sum += v;
            sq += v * v;
        }
        let mean = sum / draws as f64;
        let sd = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - exact).abs() <= 4.0 * sd, "{mean} vs {exact} (sd {sd})");
    }
}
