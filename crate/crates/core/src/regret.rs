//! Follow-the-regularized-leader with the ℓ_{1/2} regularizer: the action
//! matrix A = (αZ − lI)⁻², its square root, the per-step gains and losses
//! for rank-two feedback, and replay checks of the regret lower bound.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{frob_inner, min_eigenvalue, sym_eigen, Mat, Vector};
use crate::trace::ExchangeTrace;

const BISECTION_ITERS: usize = 60;

#[derive(Debug, Clone)]
pub struct ActionMatrix {
    pub alpha: f64,
    pub l_value: f64,
    /// (αZ − lI)⁻², unit trace.
    pub matrix: Mat,
    /// (αZ − lI)⁻¹.
    pub sqrt_matrix: Mat,
    /// Shared eigenbasis (columns) and the eigenvalues of the square root.
    basis: Mat,
    sqrt_eigs: Vec<f64>,
}

impl ActionMatrix {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// ⟨vvᵀ, A⟩.
    pub fn quad(&self, v: &Vector) -> f64 {
        let c = self.basis.tr_mul(v);
        c.iter().zip(&self.sqrt_eigs).map(|(ck, s)| ck * ck * s * s).sum()
    }

    /// ⟨vvᵀ, A^{1/2}⟩.
    pub fn quad_sqrt(&self, v: &Vector) -> f64 {
        let c = self.basis.tr_mul(v);
        c.iter().zip(&self.sqrt_eigs).map(|(ck, s)| ck * ck * s).sum()
    }

    /// Both forms for every column of `vectors` in one pass.
    pub fn quads_of(&self, vectors: &Mat) -> (Vec<f64>, Vec<f64>) {
        let c = self.basis.tr_mul(vectors);
        let mut a = Vec::with_capacity(vectors.ncols());
        let mut h = Vec::with_capacity(vectors.ncols());
        for col in c.column_iter() {
            let (mut qa, mut qh) = (0.0, 0.0);
            for (ck, s) in col.iter().zip(&self.sqrt_eigs) {
                let w = ck * ck * s;
                qh += w;
                qa += w * s;
            }
            a.push(qa);
            h.push(qh);
        }
        (a, h)
    }

    pub fn trace(&self) -> f64 {
        self.sqrt_eigs.iter().map(|s| s * s).sum()
    }

    pub fn trace_sqrt(&self) -> f64 {
        self.sqrt_eigs.iter().sum()
    }
}

/// Finds l with αZ − lI ≻ 0 and tr((αZ − lI)⁻²) = 1.
///
/// Writing s = αλ_min − l, the trace is decreasing in s and crosses 1 in
/// [1, √d], so bisection on s never leaves the bracket.
pub fn compute_action_matrix(z: &Mat, alpha: f64) -> Result<ActionMatrix> {
    assert!(alpha > 0.0, "alpha must be positive");
    let d = z.nrows();
    let (lam, basis) = sym_eigen(z);
    let gaps: Vec<f64> = lam.iter().map(|&l| alpha * (l - lam[0])).collect();
    let trace_at = |s: f64| gaps.iter().map(|g| 1.0 / ((g + s) * (g + s))).sum::<f64>();
    let (mut lo, mut hi) = (1.0f64, (d as f64).sqrt());
    let (t_lo, t_hi) = (trace_at(lo), trace_at(hi));
    if !(t_lo >= 1.0 - 1e-12 && t_hi <= 1.0 + 1e-12) {
        return Err(Error::BracketFailure { low: t_lo, high: t_hi });
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..BISECTION_ITERS {
        s = 0.5 * (lo + hi);
        let t = trace_at(s);
        if (t - 1.0).abs() <= 1e-15 {
            break;
        }
        if t > 1.0 {
            lo = s;
        } else {
            hi = s;
        }
    }
    if d == 1 {
        s = 1.0;
    }
    let sqrt_eigs: Vec<f64> = gaps.iter().map(|g| 1.0 / (g + s)).collect();
    let build = |f: &dyn Fn(f64) -> f64| {
        let mut m = Mat::zeros(d, d);
        for k in 0..d {
            let q = basis.column(k);
            m.ger(f(sqrt_eigs[k]), &q, &q, 1.0);
        }
        m
    };
    let matrix = build(&|e| e * e);
    let sqrt_matrix = build(&|e| e);
    Ok(ActionMatrix { alpha, l_value: alpha * lam[0] - s, matrix, sqrt_matrix, basis, sqrt_eigs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaTerms {
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub delta: f64,
}

/// Δ⁺ = ⟨v₊v₊ᵀ,A⟩/(1 + 2α⟨v₊v₊ᵀ,A^{1/2}⟩), Δ⁻ = ⟨v₋v₋ᵀ,A⟩/(1 − 2α⟨v₋v₋ᵀ,A^{1/2}⟩).
pub fn delta_terms(a: &ActionMatrix, v_minus: Option<&Vector>, v_plus: Option<&Vector>) -> Result<DeltaTerms> {
    let delta_minus = match v_minus {
        Some(v) => {
            let denom = 1.0 - 2.0 * a.alpha * a.quad_sqrt(v);
            if !(denom > 0.0) {
                return Err(Error::DenominatorNonPositive { denominator: denom });
            }
            a.quad(v) / denom
        }
        None => 0.0,
    };
    let delta_plus = match v_plus {
        Some(v) => a.quad(v) / (1.0 + 2.0 * a.alpha * a.quad_sqrt(v)),
        None => 0.0,
    };
    Ok(DeltaTerms { delta_minus, delta_plus, delta: delta_plus - delta_minus })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegretReport {
    pub prefixes_checked: usize,
    /// min over prefixes of λ_min(Z_{τ+1}) − (ΣΔ − 2√d/α + λ_min(Z₁)).
    pub min_slack: f64,
    pub passed: bool,
}

const REGRET_TOL: f64 = 1e-6;

/// Checks the regret lower bound on every prefix using the gains, losses
/// and λ_min values recorded in the trace.
pub fn verify_regret_bound(trace: &ExchangeTrace, z_initial: &Mat, alpha: f64) -> Result<RegretReport> {
    let d = z_initial.nrows() as f64;
    let base = min_eigenvalue(z_initial) - 2.0 * d.sqrt() / alpha;
    let mut sum = 0.0;
    // The empty prefix.
    let mut min_slack = min_eigenvalue(z_initial) - base;
    for step in &trace.steps {
        if step.remove.is_some() && !(step.removal_weight < 0.5) {
            return Err(Error::PreconditionViolated {
                t: step.t,
                detail: format!("removal weight {} is not below 1/2", step.removal_weight),
            });
        }
        sum += step.delta_plus - step.delta_minus;
        min_slack = min_slack.min(step.lambda_min_after - (sum + base));
    }
    Ok(RegretReport { prefixes_checked: trace.steps.len() + 1, min_slack, passed: min_slack >= -REGRET_TOL })
}

/// Recomputes Z_t, A_t and the gains and losses from the vectors, then
/// checks the bound on every prefix.
pub fn replay_regret_bound(trace: &ExchangeTrace, vectors: &Mat, z_initial: &Mat, alpha: f64) -> Result<RegretReport> {
    let d = z_initial.nrows() as f64;
    let base = min_eigenvalue(z_initial) - 2.0 * d.sqrt() / alpha;
    let mut z = z_initial.clone();
    let mut sum = 0.0;
    let mut min_slack = min_eigenvalue(&z) - base;
    for step in &trace.steps {
        let a = compute_action_matrix(&z, alpha)?;
        let vm = step.remove.map(|i| vectors.column(i).into_owned());
        let vp = step.add.map(|j| vectors.column(j).into_owned());
        if let Some(v) = &vm {
            let w = alpha * a.quad_sqrt(v);
            if !(w < 0.5) {
                return Err(Error::PreconditionViolated { t: step.t, detail: format!("removal weight {w} is not below 1/2") });
            }
        }
        let terms = delta_terms(&a, vm.as_ref(), vp.as_ref())?;
        sum += terms.delta;
        if let Some(v) = &vp {
            z.ger(1.0, v, v, 1.0);
        }
        if let Some(v) = &vm {
            z.ger(-1.0, v, v, 1.0);
        }
        min_slack = min_slack.min(min_eigenvalue(&z) - (sum + base));
    }
    Ok(RegretReport { prefixes_checked: trace.steps.len() + 1, min_slack, passed: min_slack >= -REGRET_TOL })
}

#[derive(Debug, Clone, Serialize)]
pub struct CospectralReport {
    pub inner: f64,
    pub inner_bound: f64,
    pub sqrt_inner: f64,
    pub sqrt_inner_bound: f64,
    pub passed: bool,
}

/// ⟨Z,A⟩ ≤ √d/α + λ_min(Z) and α⟨Z,A^{1/2}⟩ ≤ d + α√d·λ_min(Z).
pub fn cospectral_bounds_check(z: &Mat, a: &ActionMatrix) -> CospectralReport {
    let d = z.nrows() as f64;
    let lam = min_eigenvalue(z);
    let inner = frob_inner(z, &a.matrix);
    let inner_bound = d.sqrt() / a.alpha + lam;
    let sqrt_inner = a.alpha * frob_inner(z, &a.sqrt_matrix);
    let sqrt_inner_bound = d + a.alpha * d.sqrt() * lam;
    let passed = inner <= inner_bound + 1e-8 && sqrt_inner <= sqrt_inner_bound + 1e-8;
    CospectralReport { inner, inner_bound, sqrt_inner, sqrt_inner_bound, passed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{inv_sqrt, psd_factorize};
    use crate::trace::TraceStep;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_psd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> Mat {
        let g = Mat::from_fn(d, d + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() + Mat::identity(d, d) * shift
    }

    fn check_definition(z: &Mat, a: &ActionMatrix) {
        let d = z.nrows();
        let shifted = z * a.alpha - Mat::identity(d, d) * a.l_value;
        let inv = psd_factorize(&shifted).unwrap().inverse();
        assert!((&inv - &a.sqrt_matrix).norm() <= 1e-8 * inv.norm().max(1.0));
        assert!((&inv * &inv - &a.matrix).norm() <= 1e-8 * a.matrix.norm().max(1.0));
        assert!((a.matrix.trace() - 1.0).abs() <= 1e-12);
        let s = a.alpha * min_eigenvalue(z) - a.l_value;
        assert!((1.0 - 1e-12..=(d as f64).sqrt() + 1e-12).contains(&s));
    }

    #[test]
    fn isotropic() {
        for d in 1..5 {
            let z = Mat::identity(d, d);
            let alpha = 3.0;
            let a = compute_action_matrix(&z, alpha).unwrap();
            assert!((a.l_value - (alpha - (d as f64).sqrt())).abs() < 1e-12);
            assert!((&a.matrix - Mat::identity(d, d) / d as f64).norm() < 1e-12);
            check_definition(&z, &a);
        }
    }

    #[test]
    fn scalar() {
        let z = Mat::from_element(1, 1, 2.5);
        let a = compute_action_matrix(&z, 4.0).unwrap();
        assert_eq!(a.l_value, 4.0 * 2.5 - 1.0);
        assert_eq!(a.matrix[(0, 0)], 1.0);
    }

    #[test]
    fn diagonal_residual() {
        let z = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]));
        let alpha = 8.0 * 2f64.sqrt();
        let a = compute_action_matrix(&z, alpha).unwrap();
        let resid: f64 = [1.0, 4.0].iter().map(|l| (alpha * l - a.l_value).powi(-2)).sum::<f64>() - 1.0;
        assert!(resid.abs() <= 1e-12, "{resid}");
        check_definition(&z, &a);
    }

    #[test]
    fn random_definitions_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for it in 0..500 {
            let d = 1 + it % 5;
            let z = random_psd(&mut rng, d, 0.0);
            let alpha = 0.1 + 20.0 * rng.random::<f64>();
            let a = compute_action_matrix(&z, alpha).unwrap();
            check_definition(&z, &a);
            assert!(a.trace_sqrt() <= (d as f64).sqrt() + 1e-12);
            assert!(cospectral_bounds_check(&z, &a).passed);
        }
    }

    #[test]
    fn cospectral_isotropic_structure() {
        let (d, c, alpha) = (3usize, 2.0, 5.0);
        let z = Mat::identity(d, d) * c;
        let a = compute_action_matrix(&z, alpha).unwrap();
        let rep = cospectral_bounds_check(&z, &a);
        // A^{1/2} = I/√d, so α⟨Z, A^{1/2}⟩ = α√d·c sits exactly d below the bound.
        assert!((rep.sqrt_inner - alpha * (d as f64).sqrt() * c).abs() < 1e-12);
        assert!((rep.sqrt_inner_bound - rep.sqrt_inner - d as f64).abs() < 1e-12);
        assert!((rep.inner - c).abs() < 1e-12);
    }

    #[test]
    fn delta_terms_conventions() {
        let z = Mat::identity(2, 2);
        let a = compute_action_matrix(&z, 2.0).unwrap();
        let t = delta_terms(&a, None, None).unwrap();
        assert_eq!((t.delta_minus, t.delta_plus, t.delta), (0.0, 0.0, 0.0));
        let v = Vector::from_vec(vec![1e-3, 2e-3]);
        let t = delta_terms(&a, Some(&v), Some(&v)).unwrap();
        assert!(t.delta < 0.0);
        let big = Vector::from_vec(vec![3.0, 0.0]);
        assert!(matches!(delta_terms(&a, Some(&big), None), Err(Error::DenominatorNonPositive { .. })));
    }

    #[test]
    fn delta_terms_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let z = random_psd(&mut rng, 3, 1.0);
            let a = compute_action_matrix(&z, 1.5).unwrap();
            let vm = Vector::from_fn(3, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
            let vp = Vector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let direct = |v: &Vector, m: &Mat| (v.transpose() * m * v)[(0, 0)];
            let dm = direct(&vm, &a.matrix) / (1.0 - 2.0 * a.alpha * direct(&vm, &a.sqrt_matrix));
            let dp = direct(&vp, &a.matrix) / (1.0 + 2.0 * a.alpha * direct(&vp, &a.sqrt_matrix));
            let t = delta_terms(&a, Some(&vm), Some(&vp)).unwrap();
            assert!((t.delta_minus - dm).abs() <= 1e-12 * dm.abs().max(1.0));
            assert!((t.delta_plus - dp).abs() <= 1e-12 * dp.abs().max(1.0));
        }
    }

    #[test]
    fn sandwich_when_well_conditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..200 {
            let d = 3;
            let z = random_psd(&mut rng, d, 0.25);
            let alpha = 8.0 * (d as f64).sqrt();
            let a = compute_action_matrix(&z, alpha).unwrap();
            let zi = psd_factorize(&z).unwrap();
            let lam = min_eigenvalue(&z);
            let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lower = zi.inv_quad(&v);
            let mid = alpha * a.quad_sqrt(&v);
            assert!(lower <= mid * (1.0 + 1e-10));
            assert!(mid <= alpha * lam * lower * (1.0 + 1e-10));
            let _ = inv_sqrt(&z).unwrap();
        }
    }

    fn step(t: usize, remove: Option<usize>, add: Option<usize>, lam: f64) -> TraceStep {
        TraceStep {
            t,
            remove,
            add,
            objective_before: 0.0,
            objective_after: 0.0,
            lambda_min_after: lam,
            delta_plus: 0.0,
            delta_minus: 0.0,
            removal_weight: 0.0,
            costs_after: vec![],
        }
    }

    #[test]
    fn regret_trivial_traces() {
        let z = Mat::identity(2, 2);
        let empty = ExchangeTrace::new();
        let rep = verify_regret_bound(&empty, &z, 4.0).unwrap();
        assert!(rep.passed);
        assert!((rep.min_slack - 2.0 * 2f64.sqrt() / 4.0).abs() < 1e-12);
        let mut noop = ExchangeTrace::new();
        noop.steps.push(step(1, None, None, 1.0));
        assert!(verify_regret_bound(&noop, &z, 4.0).unwrap().passed);
        let vectors = Mat::identity(2, 2);
        assert!(replay_regret_bound(&noop, &vectors, &z, 4.0).unwrap().passed);
    }

    #[test]
    fn regret_random_walk_replay() {
        // Random single-vector swaps with small vectors keep the precondition.
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let d = 3;
        let n = 30;
        let vectors = Mat::from_fn(d, n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let alpha = 2.0;
        let mut member = vec![false; n];
        for m in member.iter_mut().take(15) {
            *m = true;
        }
        let z0 = crate::linalg::gram_of(&vectors, (0..n).filter(|&i| member[i]));
        let mut z = z0.clone();
        let mut trace = ExchangeTrace::new();
        for t in 1..=40 {
            let a = compute_action_matrix(&z, alpha).unwrap();
            let ins: Vec<usize> = (0..n).filter(|&i| member[i] && alpha * a.quad_sqrt(&vectors.column(i).into()) < 0.5).collect();
            let outs: Vec<usize> = (0..n).filter(|&i| !member[i]).collect();
            if ins.is_empty() {
                break;
            }
            let i = ins[rng.random_range(0..ins.len())];
            let j = outs[rng.random_range(0..outs.len())];
            let (vi, vj) = (vectors.column(i).into_owned(), vectors.column(j).into_owned());
            let terms = delta_terms(&a, Some(&vi), Some(&vj)).unwrap();
            z.ger(1.0, &vj, &vj, 1.0);
            z.ger(-1.0, &vi, &vi, 1.0);
            member[i] = false;
            member[j] = true;
            let mut s = step(t, Some(i), Some(j), min_eigenvalue(&z));
            s.delta_plus = terms.delta_plus;
            s.delta_minus = terms.delta_minus;
            s.removal_weight = alpha * a.quad_sqrt(&vi);
            trace.steps.push(s);
        }
        assert!(verify_regret_bound(&trace, &z0, alpha).unwrap().passed);
        assert!(replay_regret_bound(&trace, &vectors, &z0, alpha).unwrap().passed);
    }

    #[test]
    fn regret_flags_bad_removal() {
        let mut tr = ExchangeTrace::new();
        let mut s = step(3, Some(0), None, 1.0);
        s.removal_weight = 0.7;
        tr.steps.push(s);
        assert!(matches!(
            verify_regret_bound(&tr, &Mat::identity(2, 2), 1.0),
            Err(Error::PreconditionViolated { t: 3, .. })
        ));
    }
}
