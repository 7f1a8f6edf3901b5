//! Convex relaxation over {x ∈ [0,1]ⁿ : Cx ≤ b}: solvers for the three
//! objectives, extreme-point sparsification and first-order optimality
//! checks on the resulting fractional solution.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{DesignInstance, ObjectiveKind};
use crate::linalg::{frob_inner, inv_sqrt, psd_factorize, sym_eigen, weighted_gram, Mat, Vector};

/// Tolerance used by the acceptance tests.
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 200_000;
/// Coordinates this close to 0 or 1 are snapped onto the bound.
const SNAP: f64 = 1e-12;
const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct FractionalSolution {
    pub x: Vec<f64>,
    #[serde(skip)]
    pub gram: Mat,
    pub objective_kind: ObjectiveKind,
    /// det(X)^{1/d}, tr(X⁻¹) or λ_min(X).
    pub objective_value: f64,
    /// D: Frank–Wolfe gap in ln det; A: gap in tr(X⁻¹); E: linearized upper bound minus λ_min.
    pub duality_gap_estimate: f64,
    pub fractional_support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the E solver stopped before its certified gap reached the tolerance.
    pub approximate: bool,
}

impl FractionalSolution {
    /// Builds a solution record for a given x (gap unknown, set to NaN).
    pub fn from_x(instance: &DesignInstance, x: Vec<f64>, kind: ObjectiveKind) -> Self {
        let gram = weighted_gram(&instance.vectors, &x);
        let objective_value = kind.evaluate(&gram);
        let fractional_support = fractional_support(&x);
        FractionalSolution {
            x,
            gram,
            objective_kind: kind,
            objective_value,
            duality_gap_estimate: f64::NAN,
            fractional_support,
            iterations: 0,
            converged: true,
            approximate: false,
        }
    }

    /// ln det X for D, otherwise the natural objective.
    pub fn log_det(&self) -> f64 {
        psd_factorize(&self.gram).map_or(f64::NEG_INFINITY, |f| f.log_det())
    }
}

pub fn fractional_support(x: &[f64]) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i] > 0.0 && x[i] < 1.0).collect()
}

fn snap(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < SNAP {
            *v = 0.0;
        } else if *v > 1.0 - SNAP {
            *v = 1.0;
        }
    }
}

fn row_dot(row: &[f64], x: &[f64]) -> f64 {
    row.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn check_budgets(instance: &DesignInstance) -> Result<()> {
    if let Some(j) = instance.budgets.iter().position(|&b| b < 0.0) {
        return Err(Error::Infeasible(format!("budget {j} is negative")));
    }
    Ok(())
}

/// δ·1 with δ = min_j b_j / Σᵢ c_j(i), clipped to [0, 1].
pub fn uniform_start(instance: &DesignInstance) -> Vec<f64> {
    let delta = instance
        .costs
        .iter()
        .zip(&instance.budgets)
        .map(|(row, &b)| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                b / total
            } else {
                1.0
            }
        })
        .fold(1.0f64, f64::min)
        .clamp(0.0, 1.0);
    vec![delta; instance.n()]
}

/// max gᵀs over the box-plus-knapsack polytope.
///
/// Greedy by value per unit cost when m = 1 (ties to the lowest index),
/// bounded-variable simplex otherwise.
pub fn lp_vertex(g: &[f64], costs: &[Vec<f64>], budgets: &[f64]) -> Vec<f64> {
    let n = g.len();
    match costs.len() {
        0 => g.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
        1 => {
            let c = &costs[0];
            let mut s = vec![0.0; n];
            let mut remaining = budgets[0];
            let mut order: Vec<usize> = Vec::with_capacity(n);
            for i in 0..n {
                if g[i] > 0.0 {
                    if c[i] == 0.0 {
                        s[i] = 1.0;
                    } else {
                        order.push(i);
                    }
                }
            }
            order.sort_by(|&a, &b| (g[b] / c[b]).total_cmp(&(g[a] / c[a])).then(a.cmp(&b)));
            for i in order {
                if remaining <= 0.0 {
                    break;
                }
                let take = (remaining / c[i]).min(1.0);
                s[i] = take;
                remaining -= take * c[i];
            }
            s
        }
        _ => bounded_simplex(g, costs, budgets),
    }
}

/// Primal simplex for max gᵀs, Cs + slack = b, 0 ≤ s ≤ 1, slack ≥ 0,
/// with Bland's rule. Starts from the all-slack basis (b ≥ 0).
fn bounded_simplex(g: &[f64], costs: &[Vec<f64>], budgets: &[f64]) -> Vec<f64> {
    let n = g.len();
    let m = costs.len();
    let cols = n + m;
    let mut t = vec![vec![0.0; cols]; m];
    for r in 0..m {
        t[r][..n].copy_from_slice(&costs[r]);
        t[r][n + r] = 1.0;
    }
    let upper = |j: usize| if j < n { 1.0 } else { f64::INFINITY };
    let mut val = vec![0.0; cols];
    let mut basic: Vec<usize> = (n..cols).collect();
    let mut is_basic = vec![false; cols];
    for r in 0..m {
        val[n + r] = budgets[r];
        is_basic[n + r] = true;
    }
    let mut red: Vec<f64> = (0..cols).map(|j| if j < n { g[j] } else { 0.0 }).collect();
    let scale = g.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let piv_tol = 1e-12;

    for _ in 0..(50 * cols + 100) {
        let entering = (0..cols).find(|&j| {
            !is_basic[j] && ((val[j] <= 0.0 && red[j] > tol) || (val[j] >= upper(j) && red[j] < -tol))
        });
        let Some(q) = entering else { break };
        let dir = if val[q] <= 0.0 { 1.0 } else { -1.0 };
        let mut theta = upper(q);
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let a = t[r][q] * dir;
            let b = basic[r];
            let lim = if a > piv_tol {
                val[b] / a
            } else if a < -piv_tol && upper(b).is_finite() {
                (upper(b) - val[b]) / (-a)
            } else {
                continue;
            };
            let lim = lim.max(0.0);
            let better = match leave {
                None => lim < theta,
                Some((r0, _)) => lim < theta || (lim == theta && basic[r] < basic[r0]),
            };
            if better {
                theta = lim;
                leave = Some((r, if a > 0.0 { 0.0 } else { upper(b) }));
            }
        }
        if !theta.is_finite() {
            break;
        }
        val[q] += dir * theta;
        for r in 0..m {
            val[basic[r]] -= theta * dir * t[r][q];
        }
        match leave {
            None => {
                // Bound flip.
                val[q] = if dir > 0.0 { upper(q) } else { 0.0 };
            }
            Some((r, bound)) => {
                let out = basic[r];
                val[out] = bound;
                let p = t[r][q];
                for v in t[r].iter_mut() {
                    *v /= p;
                }
                let pivot_row = t[r].clone();
                for (rr, row) in t.iter_mut().enumerate() {
                    if rr != r {
                        let f = row[q];
                        if f != 0.0 {
                            for (a, b) in row.iter_mut().zip(&pivot_row) {
                                *a -= f * b;
                            }
                        }
                    }
                }
                let f = red[q];
                for (a, b) in red.iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                basic[r] = q;
                is_basic[q] = true;
                is_basic[out] = false;
            }
        }
    }
    val.truncate(n);
    for v in &mut val {
        *v = v.clamp(0.0, 1.0);
    }
    val
}

/// Euclidean projection onto {0 ≤ x ≤ 1, cᵀx ≤ b} for c ≥ 0.
fn project_single(y: &[f64], c: &[f64], b: f64) -> Vec<f64> {
    let clip = |mu: f64| -> Vec<f64> { y.iter().zip(c).map(|(&yi, &ci)| (yi - mu * ci).clamp(0.0, 1.0)).collect() };
    let x0 = clip(0.0);
    if row_dot(c, &x0) <= b {
        return x0;
    }
    let mut lo = 0.0;
    let mut hi = y
        .iter()
        .zip(c)
        .filter(|(_, &ci)| ci > 0.0)
        .map(|(&yi, &ci)| yi / ci)
        .fold(0.0f64, f64::max)
        .max(1e-300);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if row_dot(c, &clip(mid)) > b {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    clip(hi)
}

/// Projection onto the polytope; Dykstra's method when m > 1.
pub fn project_polytope(y: &[f64], costs: &[Vec<f64>], budgets: &[f64]) -> Vec<f64> {
    match costs.len() {
        0 => y.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        1 => project_single(y, &costs[0], budgets[0]),
        m => {
            let n = y.len();
            let mut x = y.to_vec();
            let mut corr = vec![vec![0.0; n]; m];
            for _ in 0..500 {
                let prev = x.clone();
                for j in 0..m {
                    let shifted: Vec<f64> = x.iter().zip(&corr[j]).map(|(a, b)| a + b).collect();
                    let p = project_single(&shifted, &costs[j], budgets[j]);
                    for i in 0..n {
                        corr[j][i] = shifted[i] - p[i];
                    }
                    x = p;
                }
                let change: f64 = x.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if change < 1e-12 {
                    break;
                }
            }
            // Pull back any residual violation by shrinking towards 0.
            let mut factor = 1.0f64;
            for (row, &b) in costs.iter().zip(budgets) {
                let used = row_dot(row, &x);
                if used > b {
                    factor = factor.min(b / used);
                }
            }
            x.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect()
        }
    }
}

/// Objective (in maximization form) and gradient for D or A.
struct Smooth {
    value: f64,
    grad: Vec<f64>,
    /// L⁻¹ for X = L Lᵀ.
    linv: Mat,
}

fn smooth_eval(kind: ObjectiveKind, vectors: &Mat, x: &[f64]) -> Option<Smooth> {
    let gram = weighted_gram(vectors, x);
    let f = psd_factorize(&gram).ok()?;
    let d = gram.nrows();
    let linv = f.lower().clone().solve_lower_triangular(&Mat::identity(d, d))?;
    let y = &linv * vectors;
    match kind {
        ObjectiveKind::D => {
            let grad = y.column_iter().map(|c| c.norm_squared()).collect();
            Some(Smooth { value: f.log_det(), grad, linv })
        }
        ObjectiveKind::A => {
            // X⁻¹u = L⁻ᵀ L⁻¹ u.
            let z = linv.transpose() * &y;
            let grad = z.column_iter().map(|c| c.norm_squared()).collect();
            let value = -linv.norm_squared();
            Some(Smooth { value, grad, linv })
        }
        ObjectiveKind::E => unreachable!("E is nonsmooth"),
    }
}

/// φ(t) = f(x + t·dir) − f(x) in closed form on the eigenbasis of
/// L⁻¹ΔL⁻ᵀ, Δ = Σ dirᵢ uᵢuᵢᵀ.
struct LineModel {
    kind: ObjectiveKind,
    mu: Vec<f64>,
    weights: Vec<f64>,
    base: f64,
}

impl LineModel {
    fn new(kind: ObjectiveKind, vectors: &Mat, dir: &[f64], s: &Smooth) -> Self {
        let delta = weighted_gram(vectors, dir);
        let m = &s.linv * delta * s.linv.transpose();
        let (mu, q) = sym_eigen(&m);
        let weights = match kind {
            ObjectiveKind::A => {
                let lq = s.linv.transpose() * &q;
                lq.column_iter().map(|c| c.norm_squared()).collect()
            }
            _ => vec![1.0; mu.len()],
        };
        LineModel { kind, mu: mu.iter().copied().collect(), weights, base: -s.value }
    }

    fn eval(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (&mu, &w) in self.mu.iter().zip(&self.weights) {
            let s = 1.0 + t * mu;
            if !(s > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += match self.kind {
                ObjectiveKind::D => (t * mu).ln_1p(),
                _ => -w / s,
            };
        }
        match self.kind {
            ObjectiveKind::D => acc,
            // Relative to the starting value −tr(X⁻¹).
            _ => acc + self.base,
        }
    }
}

/// Maximizes a concave function on [0, 1]; endpoints win ties.
fn golden_section_max(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for t in [1.0, 0.0] {
        let v = f(t);
        if v >= best.1 {
            best = (t, v);
        }
    }
    best
}

fn solve_smooth(
    instance: &DesignInstance,
    kind: ObjectiveKind,
    tol: f64,
    max_iters: usize,
) -> Result<FractionalSolution> {
    let vectors = &instance.vectors;
    let single = instance.m() == 1;
    let mut x = uniform_start(instance);
    let mut state = smooth_eval(kind, vectors, &x)
        .ok_or_else(|| Error::Degenerate("starting fractional Gram is singular".into()))?;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;

    while iterations < max_iters {
        let s = lp_vertex(&state.grad, &instance.costs, &instance.budgets);
        let fw_dir: Vec<f64> = s.iter().zip(&x).map(|(a, b)| a - b).collect();
        gap = row_dot(&state.grad, &fw_dir);
        let scale = match kind {
            ObjectiveKind::D => state.value.abs().max(1.0),
            _ => state.value.abs(),
        };
        if gap <= tol * scale {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir = fw_dir;
        let mut dir_gain = gap;
        if single {
            if let Some((pw, gain)) = pairwise_direction(&state.grad, &instance.costs[0], &x) {
                if gain > dir_gain {
                    dir = pw;
                    dir_gain = gain;
                }
            }
        }
        let _ = dir_gain;
        let model = LineModel::new(kind, vectors, &dir, &state);
        let (mut t, mut improvement) = golden_section_max(|t| model.eval(t));
        // First-order steps crawl once the support is identified; a Newton
        // step on the free coordinates finishes the job.
        let newton = free_coordinates(&x).and_then(|free| {
            let p = smooth_neg_hessian(kind, vectors, &free, &state);
            newton_direction(instance, &x, &state.grad, &free, p)
        });
        if let Some(nd) = newton {
            let nm = LineModel::new(kind, vectors, &nd, &state);
            let (nt, ni) = golden_section_max(|t| nm.eval(t));
            if nt > 0.0 && ni > improvement {
                dir = nd;
                t = nt;
                improvement = ni;
            }
        }
        if !(t > 0.0) || !(improvement > 0.0) {
            stalls += 1;
            if stalls > 3 {
                break;
            }
            continue;
        }
        stalls = 0;
        step_to(&mut x, &dir, t);
        state = match smooth_eval(kind, vectors, &x) {
            Some(s) => s,
            None => return Err(Error::Degenerate("fractional Gram became singular".into())),
        };
    }

    let mut sol = FractionalSolution::from_x(instance, x, kind);
    sol.duality_gap_estimate = gap.max(0.0);
    sol.iterations = iterations;
    sol.converged = converged;
    Ok(sol)
}

/// x += t·dir. Full steps land exactly on the bounds they target.
fn step_to(x: &mut [f64], dir: &[f64], t: f64) {
    for (xi, &di) in x.iter_mut().zip(dir) {
        if di != 0.0 {
            *xi = (*xi + t * di).clamp(0.0, 1.0);
            if t == 1.0 {
                if (*xi - 1.0).abs() < 1e-9 {
                    *xi = 1.0;
                } else if xi.abs() < 1e-9 {
                    *xi = 0.0;
                }
            }
        }
    }
    snap(x);
}

/// Coordinates strictly inside (0, 1), or `None` when there are none or too many.
fn free_coordinates(x: &[f64]) -> Option<Vec<usize>> {
    let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0 && x[i] < 1.0).collect();
    (!free.is_empty()).then_some(free)
}

/// Negated Hessian on the free block as U·diag(sign)·Uᵀ. U is f × r with
/// r ≤ d² + 1, so the Newton solve never forms an f × f matrix.
struct LowRank {
    u: Mat,
    sign: Vec<f64>,
}

impl LowRank {
    /// Columns √(c_kl·w_kl)·(a_k ∘ a_l) over k ≤ l, c doubling the
    /// off-diagonal pairs, so that UUᵀ = Σ_kl w_kl (a_k∘a_l)(a_k∘a_l)ᵀ.
    fn pairs(a: &Mat, weight: impl Fn(usize, usize) -> f64) -> Self {
        let (d, f) = a.shape();
        let mut u = Mat::zeros(f, d * (d + 1) / 2);
        let mut col = 0;
        for k in 0..d {
            for l in k..d {
                let w = (weight(k, l) * if k == l { 1.0 } else { 2.0 }).max(0.0).sqrt();
                for i in 0..f {
                    u[(i, col)] = w * a[(k, i)] * a[(l, i)];
                }
                col += 1;
            }
        }
        LowRank { sign: vec![1.0; col], u }
    }

    fn trace(&self) -> f64 {
        self.u.column_iter().zip(&self.sign).map(|(c, s)| s * c.norm_squared()).sum()
    }
}

/// Negated Hessian of ln det (G∘G) or −tr(X⁻¹) (2·G∘VᵀV) on the free block,
/// with G = WᵀW, W = L⁻¹U_F and V = L⁻ᵀW.
fn smooth_neg_hessian(kind: ObjectiveKind, vectors: &Mat, free: &[usize], s: &Smooth) -> LowRank {
    let w = &s.linv * vectors.select_columns(free);
    match kind {
        ObjectiveKind::D => LowRank::pairs(&w, |_, _| 1.0),
        _ => {
            let v = s.linv.transpose() * &w;
            let (d, f) = w.shape();
            let mut u = Mat::zeros(f, d * d);
            for k in 0..d {
                for l in 0..d {
                    for i in 0..f {
                        u[(i, k * d + l)] = std::f64::consts::SQRT_2 * w[(k, i)] * v[(l, i)];
                    }
                }
            }
            LowRank { sign: vec![1.0; d * d], u }
        }
    }
}

/// Maximizer of gᵀp − ½pᵀ(P + ρI)p over A p = 0, with P = U·diag(sign)·Uᵀ.
/// Both U and g are projected onto null(A) first. The range of the projected
/// U is solved exactly by thin QR; its complement scales by 1/ρ.
fn constrained_newton(h: &LowRank, g: &Vector, a: &[Vector]) -> Option<Vector> {
    let t = a.len();
    let gram_a = Mat::from_fn(t, t, |i, j| a[i].dot(&a[j])).lu();
    let project = |v: &Vector| -> Option<Vector> {
        if t == 0 {
            return Some(v.clone());
        }
        let coef = gram_a.solve(&Vector::from_fn(t, |i, _| a[i].dot(v)))?;
        let mut out = v.clone();
        for (ai, c) in a.iter().zip(coef.iter()) {
            out.axpy(-c, ai, 1.0);
        }
        Some(out)
    };
    let mut u = h.u.clone();
    for mut col in u.column_iter_mut() {
        let pc = project(&col.clone_owned())?;
        col.copy_from(&pc);
    }
    let g = project(g)?;
    let rho = 1e-12 * h.trace().abs().max(1e-300);
    let qr = u.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut small = &r * Mat::from_diagonal(&Vector::from_column_slice(&h.sign)) * r.transpose();
    for i in 0..small.nrows() {
        small[(i, i)] += rho;
    }
    let coef = q.transpose() * &g;
    let y = small.lu().solve(&coef)?;
    let p = &q * y + (&g - &q * &coef) / rho;
    project(&p)
}

/// Newton step on the free coordinates keeping tight budgets tight,
/// truncated at the first bound it would cross.
fn newton_direction(instance: &DesignInstance, x: &[f64], grad: &[f64], free: &[usize], h: LowRank) -> Option<Vec<f64>> {
    let tight: Vec<Vector> = (0..instance.m())
        .filter(|&j| {
            let b = instance.budgets[j];
            (row_dot(&instance.costs[j], x) - b).abs() <= 1e-9 * b.abs().max(1.0)
        })
        .map(|j| Vector::from_iterator(free.len(), free.iter().map(|&i| instance.costs[j][i])))
        .collect();
    if tight.len() >= free.len() {
        return None;
    }
    let g = Vector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
    let sol = constrained_newton(&h, &g, &tight)?;
    let mut dir = vec![0.0; x.len()];
    for (c, &i) in free.iter().enumerate() {
        dir[i] = sol[c];
    }
    if !dir.iter().all(|v| v.is_finite()) || !(row_dot(grad, &dir) > 0.0) {
        return None;
    }
    let mut reach = 1.0f64;
    for &i in free {
        if dir[i] > 0.0 {
            reach = reach.min((1.0 - x[i]) / dir[i]);
        } else if dir[i] < 0.0 {
            reach = reach.min(x[i] / -dir[i]);
        }
    }
    for (row, &b) in instance.costs.iter().zip(&instance.budgets) {
        let rate = row_dot(row, &dir);
        if rate > 0.0 {
            reach = reach.min(((b - row_dot(row, x)) / rate).max(0.0));
        }
    }
    if !(reach > 0.0) {
        return None;
    }
    for v in dir.iter_mut() {
        *v *= reach;
    }
    Some(dir)
}

/// Cost-neutral move from the worst-ratio positive coordinate to the
/// best-ratio coordinate below 1, scaled to hit the first bound.
fn pairwise_direction(grad: &[f64], c: &[f64], x: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = x.len();
    let mut best_up: Option<usize> = None;
    let mut best_down: Option<usize> = None;
    for i in 0..n {
        if c[i] <= 0.0 {
            continue;
        }
        let r = grad[i] / c[i];
        if x[i] < 1.0 && best_up.is_none_or(|j| r > grad[j] / c[j]) {
            best_up = Some(i);
        }
        if x[i] > 0.0 && best_down.is_none_or(|j| r < grad[j] / c[j]) {
            best_down = Some(i);
        }
    }
    let (j, i) = (best_up?, best_down?);
    if i == j {
        return None;
    }
    let rate = grad[j] / c[j] - grad[i] / c[i];
    if !(rate > 0.0) {
        return None;
    }
    let moved = ((1.0 - x[j]) * c[j]).min(x[i] * c[i]);
    let mut dir = vec![0.0; n];
    dir[j] = moved / c[j];
    dir[i] = -moved / c[i];
    Some((dir, moved * rate))
}

/// Soft-min F(X) = −μ ln tr exp(−X/μ), which lies in [λ_min − μ ln d, λ_min].
struct SoftMin {
    mu: f64,
    value: f64,
    lambda_min: f64,
    lam: Vector,
    q: Mat,
    /// exp(−(λ_k − λ_min)/μ), and their sum.
    e: Vec<f64>,
    z: f64,
    /// Gradient density W = exp(−X/μ)/tr(·), trace one.
    density: Mat,
}

impl SoftMin {
    fn new(gram: &Mat, mu: f64) -> Self {
        let (lam, q) = sym_eigen(gram);
        let lambda_min = lam.min();
        let e: Vec<f64> = lam.iter().map(|l| (-(l - lambda_min) / mu).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut density = Mat::zeros(gram.nrows(), gram.nrows());
        for (k, ek) in e.iter().enumerate() {
            let c = q.column(k);
            density.ger(ek / z, &c, &c, 1.0);
        }
        SoftMin { mu, value: lambda_min - mu * z.ln(), lambda_min, lam, q, e, z, density }
    }

    fn value_at(gram: &Mat, mu: f64) -> f64 {
        let lam = crate::linalg::sym_eigen(gram).0;
        let lmin = lam.min();
        lmin - mu * lam.iter().map(|l| (-(l - lmin) / mu).exp()).sum::<f64>().ln()
    }
}

/// First divided differences of exp(−λ/μ) in the eigenbasis, expanded
/// around the smaller eigenvalue so nothing overflows. All entries are ≤ 0.
fn soft_min_gamma(sm: &SoftMin) -> Mat {
    let d = sm.lam.len();
    Mat::from_fn(d, d, |k, l| {
        let (a, b) = if sm.lam[k] <= sm.lam[l] { (k, l) } else { (l, k) };
        let delta = sm.lam[b] - sm.lam[a];
        if delta <= 1e-14 * sm.lam[a].abs().max(1.0) {
            -sm.e[a] / sm.mu
        } else {
            sm.e[a] * (-delta / sm.mu).exp_m1() / delta
        }
    })
}

/// A feasible point of the polytope and its Gram matrix.
struct Atom {
    x: Vec<f64>,
    gram: Mat,
}

fn combine(atoms: &[Atom], weights: &[f64]) -> Mat {
    let d = atoms[0].gram.nrows();
    atoms.iter().zip(weights).fold(Mat::zeros(d, d), |acc, (a, &w)| acc + &a.gram * w)
}

/// Maximizes the soft-min over the convex hull of the atoms by Newton steps
/// on the simplex, falling back to pairwise steps. Returns the gain.
fn corrective_solve(atoms: &[Atom], weights: &mut [f64], mu: f64, max_steps: usize) -> f64 {
    let k = atoms.len();
    let mut gained = 0.0;
    for _ in 0..max_steps {
        let gram = combine(atoms, weights);
        let sm = SoftMin::new(&gram, mu);
        let g: Vec<f64> = atoms.iter().map(|a| frob_inner(&sm.density, &a.gram)).collect();
        let support: Vec<usize> = (0..k).filter(|&j| weights[j] > 0.0).collect();
        let up = (0..k).max_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap();
        let down = *support.iter().min_by(|&&a, &&b| g[a].total_cmp(&g[b])).unwrap();
        if g[up] - g[down] <= 1e-3 * mu {
            break;
        }
        let search = |dir: &[f64]| {
            let delta = combine(atoms, dir);
            golden_section_max(|t| SoftMin::value_at(&(&gram + &delta * t), mu) - sm.value)
        };
        let mut dir = vec![0.0; k];
        dir[up] = weights[down];
        dir[down] = -weights[down];
        let (mut t, mut improvement) = search(&dir);

        // Newton on the support plus the entering atom, with Σ p = 0.
        let mut set = support.clone();
        if !set.contains(&up) {
            set.push(up);
        }
        let f = set.len();
        if f > 1 {
            let gamma = soft_min_gamma(&sm);
            let rotated: Vec<Mat> = set.iter().map(|&j| sm.q.transpose() * &atoms[j].gram * &sm.q).collect();
            let mut kkt = Mat::zeros(f + 1, f + 1);
            for a in 0..f {
                for b in a..f {
                    let acc = gamma.zip_zip_map(&rotated[a], &rotated[b], |gm, x, y| gm * x * y).sum();
                    let v = -acc / sm.z - g[set[a]] * g[set[b]] / mu;
                    kkt[(a, b)] = v;
                    kkt[(b, a)] = v;
                }
                kkt[(a, f)] = 1.0;
                kkt[(f, a)] = 1.0;
            }
            let reg = 1e-12 * (0..f).map(|a| kkt[(a, a)].abs()).sum::<f64>().max(1e-300);
            for a in 0..f {
                kkt[(a, a)] += reg;
            }
            let rhs = Vector::from_fn(f + 1, |a, _| if a < f { g[set[a]] } else { 0.0 });
            if let Some(sol) = kkt.lu().solve(&rhs) {
                let mut nd = vec![0.0; k];
                let mut reach = 1.0f64;
                for (a, &j) in set.iter().enumerate() {
                    nd[j] = sol[a];
                    if sol[a] < 0.0 {
                        reach = reach.min(weights[j] / -sol[a]);
                    }
                }
                let ascent: f64 = nd.iter().zip(&g).map(|(p, gj)| p * gj).sum();
                if reach > 0.0 && ascent > 0.0 && nd.iter().all(|v| v.is_finite()) {
                    nd.iter_mut().for_each(|v| *v *= reach);
                    let (nt, ni) = search(&nd);
                    if ni > improvement {
                        dir = nd;
                        t = nt;
                        improvement = ni;
                    }
                }
            }
        }
        if !(t > 0.0 && improvement > 0.0) {
            break;
        }
        for (w, p) in weights.iter_mut().zip(&dir) {
            *w += t * p;
            // Truncated steps land on zero up to rounding.
            if *w <= 1e-14 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        gained += improvement;
    }
    gained
}

/// Path following on the soft-min smoothing of λ_min, solved by fully
/// corrective Frank–Wolfe: LP vertices enter as atoms, and the smoothed
/// objective is maximized over their hull exactly. μ shrinks by 5 once the
/// smoothed gap falls below μ/10. Every gradient density W certifies
/// λ* ≤ max over the polytope of ⟨W, X(x)⟩, which gives the stopping gap.
fn solve_eigen(instance: &DesignInstance, tol: f64, max_iters: usize) -> Result<FractionalSolution> {
    let vectors = &instance.vectors;
    let start = uniform_start(instance);
    let gram0 = weighted_gram(vectors, &start);
    let mut atoms = vec![Atom { x: start, gram: gram0.clone() }];
    let mut weights = vec![1.0];
    let mut mu = 0.1 * gram0.trace() / instance.dim() as f64;
    let mu_floor = 1e-3 * tol * gram0.trace() / instance.dim() as f64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut upper = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        let gram = combine(&atoms, &weights);
        let sm = SoftMin::new(&gram, mu);
        if best.as_ref().is_none_or(|b| sm.lambda_min > b.0) {
            let mut x = vec![0.0; instance.n()];
            for (a, &w) in atoms.iter().zip(&weights) {
                for (xi, ai) in x.iter_mut().zip(&a.x) {
                    *xi += w * ai;
                }
            }
            snap(&mut x);
            best = Some((sm.lambda_min, x));
        }
        let best_val = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        let grad: Vec<f64> = vectors.column_iter().map(|u| u.dot(&(&sm.density * u))).collect();
        let s = lp_vertex(&grad, &instance.costs, &instance.budgets);
        let vertex_value = row_dot(&grad, &s);
        upper = upper.min(vertex_value);
        gap = (upper - best_val).max(0.0);
        if gap <= tol * best_val.abs().max(1e-300) {
            converged = true;
            break;
        }
        let smooth_gap = vertex_value - frob_inner(&sm.density, &gram);
        if smooth_gap < 0.1 * mu && mu > mu_floor {
            mu *= 0.2;
            continue;
        }
        if !atoms.iter().any(|a| a.x == s) {
            let g = weighted_gram(vectors, &s);
            atoms.push(Atom { x: s, gram: g });
            weights.push(0.0);
        }
        let gained = corrective_solve(&atoms, &mut weights, mu, 100);
        let keep: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
        let mut it = keep.iter();
        atoms.retain(|_| *it.next().unwrap());
        weights.retain(|&w| w > 0.0);
        if !(gained > 0.0) {
            if mu <= mu_floor {
                break;
            }
            mu *= 0.2;
        }
    }
    let x = best.map(|b| b.1).unwrap_or_else(|| uniform_start(instance));
    let mut sol = FractionalSolution::from_x(instance, x, ObjectiveKind::E);
    sol.duality_gap_estimate = gap;
    sol.iterations = iterations;
    sol.converged = converged;
    sol.approximate = !converged;
    Ok(sol)
}

/// Solves the relaxation; D and A by Frank–Wolfe with exact line search and
/// Newton polishing, E by path following on a soft-min smoothing.
pub fn solve_relaxation(
    instance: &DesignInstance,
    kind: ObjectiveKind,
    tol: f64,
    max_iters: usize,
) -> Result<FractionalSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    check_budgets(instance)?;
    instance.check_full_rank()?;
    match kind {
        ObjectiveKind::E => solve_eigen(instance, tol, max_iters),
        _ => solve_smooth(instance, kind, tol, max_iters),
    }
}

/// Null vector of a small dense system via row-normalized RREF.
fn null_vector(rows: &[Vec<f64>], k: usize) -> Option<Vec<f64>> {
    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .filter_map(|r| {
            let s = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (s > 0.0).then(|| r.iter().map(|v| v / s).collect())
        })
        .collect();
    let tol = 1e-10;
    let mut pivots: Vec<usize> = Vec::new();
    let mut row = 0;
    for col in 0..k {
        if row == a.len() {
            break;
        }
        let (best, val) = (row..a.len()).map(|r| (r, a[r][col].abs())).fold((row, -1.0), |acc, e| if e.1 > acc.1 { e } else { acc });
        if val <= tol {
            continue;
        }
        a.swap(row, best);
        let p = a[row][col];
        for v in a[row].iter_mut() {
            *v /= p;
        }
        let pr = a[row].clone();
        for (r, other) in a.iter_mut().enumerate() {
            if r != row {
                let f = other[col];
                if f != 0.0 {
                    for (x, y) in other.iter_mut().zip(&pr) {
                        *x -= f * y;
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let free = (0..k).find(|c| !pivots.contains(c))?;
    let mut h = vec![0.0; k];
    h[free] = 1.0;
    for (r, &pc) in pivots.iter().enumerate() {
        h[pc] = -a[r][free];
    }
    Some(h)
}

/// Moves x along null-space directions of the tight constraints (Gram
/// equalities on fractional coordinates plus tight knapsack rows) until
/// at most d(d+1)/2 + m coordinates stay fractional.
pub fn sparsify_x(instance: &DesignInstance, x: &[f64]) -> Vec<f64> {
    let d = instance.dim();
    let mut x = x.to_vec();
    snap(&mut x);
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|p| (p..d).map(move |q| (p, q))).collect();
    for _ in 0..(2 * instance.n() + instance.m() + 10) {
        let frac = fractional_support(&x);
        if frac.is_empty() {
            break;
        }
        let tight: Vec<usize> = (0..instance.m())
            .filter(|&j| row_dot(&instance.costs[j], &x) >= instance.budgets[j] - 1e-9 * instance.budgets[j].abs().max(1.0))
            .collect();
        let r = pairs.len() + tight.len();
        let cols: Vec<usize> = frac.iter().copied().take(r + 1).collect();
        let k = cols.len();
        let mut rows: Vec<Vec<f64>> = pairs
            .iter()
            .map(|&(p, q)| cols.iter().map(|&i| instance.vectors[(p, i)] * instance.vectors[(q, i)]).collect())
            .collect();
        for &j in &tight {
            rows.push(cols.iter().map(|&i| instance.costs[j][i]).collect());
        }
        let Some(h) = null_vector(&rows, k) else { break };

        // Largest step keeping the box and the slack knapsack rows.
        let mut step = f64::INFINITY;
        let mut limiter: Option<(usize, f64)> = None;
        for (c, &i) in cols.iter().enumerate() {
            let (lim, bound) = if h[c] > 0.0 {
                ((1.0 - x[i]) / h[c], 1.0)
            } else if h[c] < 0.0 {
                (x[i] / -h[c], 0.0)
            } else {
                continue;
            };
            if lim < step {
                step = lim;
                limiter = Some((i, bound));
            }
        }
        for j in (0..instance.m()).filter(|j| !tight.contains(j)) {
            let rate: f64 = cols.iter().zip(&h).map(|(&i, hc)| instance.costs[j][i] * hc).sum();
            if rate > 0.0 {
                let lim = (instance.budgets[j] - row_dot(&instance.costs[j], &x)) / rate;
                if lim < step {
                    step = lim.max(0.0);
                    limiter = None;
                }
            }
        }
        if !step.is_finite() {
            break;
        }
        for (c, &i) in cols.iter().enumerate() {
            x[i] = (x[i] + step * h[c]).clamp(0.0, 1.0);
        }
        if let Some((i, bound)) = limiter {
            x[i] = bound;
        }
        snap(&mut x);
    }
    x
}

pub fn sparsify_to_extreme_point(instance: &DesignInstance, sol: &FractionalSolution) -> FractionalSolution {
    let x = sparsify_x(instance, &sol.x);
    let mut out = FractionalSolution::from_x(instance, x, sol.objective_kind);
    out.duality_gap_estimate = sol.duality_gap_estimate;
    out.iterations = sol.iterations;
    out.converged = sol.converged;
    out.approximate = sol.approximate;
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ShortVectorReport {
    pub max_value: f64,
    pub threshold: f64,
    pub checked: usize,
    pub passed: bool,
}

fn short_vector_precondition(instance: &DesignInstance, eps: f64) -> Result<()> {
    let d = instance.dim() as f64;
    for (j, (row, &b)) in instance.costs.iter().zip(&instance.budgets).enumerate() {
        let cmax = row.iter().fold(0.0f64, |a, &c| a.max(c));
        if b < d * cmax / eps {
            return Err(Error::NotApplicable(format!(
                "budget {j} = {b} is below d*max(c)/eps = {}",
                d * cmax / eps
            )));
        }
    }
    Ok(())
}

/// Whitened squared norms ‖X^{-1/2}uᵢ‖² of fractional coordinates against ε.
pub fn verify_short_vectors_d(instance: &DesignInstance, x: &[f64], eps: f64) -> Result<ShortVectorReport> {
    short_vector_precondition(instance, eps)?;
    let frac = fractional_support(x);
    let threshold = 1.05 * eps;
    if frac.is_empty() {
        return Ok(ShortVectorReport { max_value: 0.0, threshold, checked: 0, passed: true });
    }
    let gram = weighted_gram(&instance.vectors, x);
    let w = inv_sqrt(&gram)?;
    let max_value = frac.iter().map(|&i| (&w * instance.vector(i)).norm_squared()).fold(0.0, f64::max);
    Ok(ShortVectorReport { max_value, threshold, checked: frac.len(), passed: max_value <= threshold })
}

/// ⟨X⁻¹, vᵢvᵢᵀ⟩ with vᵢ = X^{-1/2}uᵢ against (ε/d)·tr(X⁻¹).
pub fn verify_short_vectors_a(instance: &DesignInstance, x: &[f64], eps: f64) -> Result<ShortVectorReport> {
    short_vector_precondition(instance, eps)?;
    let frac = fractional_support(x);
    let gram = weighted_gram(&instance.vectors, x);
    let f = psd_factorize(&gram)?;
    let threshold = 1.05 * eps / instance.dim() as f64 * f.trace_inverse();
    if frac.is_empty() {
        return Ok(ShortVectorReport { max_value: 0.0, threshold, checked: 0, passed: true });
    }
    let max_value = frac.iter().map(|&i| f.solve(&instance.vector(i)).norm_squared()).fold(0.0, f64::max);
    Ok(ShortVectorReport { max_value, threshold, checked: frac.len(), passed: max_value <= threshold })
}

/// y = factor·x with Y = factor·X and the objective rescaled accordingly.
pub fn scale_solution(sol: &FractionalSolution, factor: f64) -> FractionalSolution {
    assert!(factor > 0.0 && factor <= 1.0, "scale factor must lie in (0, 1]");
    let mut out = sol.clone();
    out.x = sol.x.iter().map(|v| v * factor).collect();
    out.gram = &sol.gram * factor;
    out.objective_value = match sol.objective_kind {
        ObjectiveKind::A => sol.objective_value / factor,
        _ => sol.objective_value * factor,
    };
    out.fractional_support = fractional_support(&out.x);
    out
}

/// Objective value of an arbitrary x.
pub fn objective_at(instance: &DesignInstance, x: &[f64], kind: ObjectiveKind) -> f64 {
    kind.evaluate(&weighted_gram(&instance.vectors, x))
}

/// λ_max/λ_min of a fractional Gram.
pub fn condition_number(gram: &Mat) -> f64 {
    let (vals, _) = sym_eigen(gram);
    vals[vals.len() - 1] / vals[0]
}

pub fn whitened_vectors(gram: &Mat, vectors: &Mat) -> Result<(Mat, Mat)> {
    let w = inv_sqrt(gram)?;
    let v = &w * vectors;
    Ok((w, v))
}

#[allow(dead_code)]
fn unit_vector(d: usize, k: usize) -> Vector {
    let mut v = Vector::zeros(d);
    v[k] = 1.0;
    v
}
