//! Dense symmetric linear algebra: Cholesky with cached log-determinant,
//! eigen helpers, and exact rank-one/rank-two update formulas.
//!
//! Determinants are only ever handled as natural logarithms.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Margin below one that a removal quadratic form must respect.
pub const REMOVAL_MARGIN: f64 = 1e-12;

/// Full refactorization period for [`GramState`].
pub const REFACTOR_PERIOD: usize = 64;

/// Opaque token identifying the exact bit pattern of a matrix.
pub fn source_hash(m: &Mat) -> u64 {
    let mut h = DefaultHasher::new();
    m.nrows().hash(&mut h);
    m.ncols().hash(&mut h);
    for x in m.iter() {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Frobenius inner product ⟨A, B⟩ = tr(AᵀB).
pub fn frob_inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// vᵀ M v for a symmetric M.
pub fn quad_form(m: &Mat, v: &Vector) -> f64 {
    v.dot(&(m * v))
}

/// Cholesky factor M = L Lᵀ with cached log det.
#[derive(Debug, Clone)]
pub struct PsdFactorization {
    dim: usize,
    lower: Mat,
    log_det: f64,
    source_hash: u64,
}

/// Factorizes a symmetric positive definite matrix.
///
/// A pivot at or below `d · ε_mach · tr(M)` is treated as a rank deficiency.
pub fn psd_factorize(m: &Mat) -> Result<PsdFactorization> {
    let d = m.nrows();
    assert_eq!(d, m.ncols(), "psd_factorize needs a square matrix");
    let tol = pivot_tolerance(m);
    let mut l = Mat::zeros(d, d);
    for j in 0..d {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > tol) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: diag, tolerance: tol });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
    Ok(PsdFactorization { dim: d, lower: l, log_det, source_hash: source_hash(m) })
}

fn pivot_tolerance(m: &Mat) -> f64 {
    let d = m.nrows() as f64;
    d * f64::EPSILON * m.trace().abs()
}

impl PsdFactorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &Mat {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn source_hash(&self) -> u64 {
        self.source_hash
    }

    /// L Lᵀ.
    pub fn reconstruct(&self) -> Mat {
        &self.lower * self.lower.transpose()
    }

    /// Solves L y = v.
    pub fn solve_lower(&self, v: &Vector) -> Vector {
        let d = self.dim;
        let l = &self.lower;
        let mut y = v.clone();
        for i in 0..d {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// Solves Lᵀ x = y.
    pub fn solve_upper(&self, y: &Vector) -> Vector {
        let d = self.dim;
        let l = &self.lower;
        let mut x = y.clone();
        for i in (0..d).rev() {
            let mut s = x[i];
            for k in (i + 1)..d {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// M⁻¹ v.
    pub fn solve(&self, v: &Vector) -> Vector {
        self.solve_upper(&self.solve_lower(v))
    }

    /// M⁻¹ B column by column.
    pub fn solve_matrix(&self, b: &Mat) -> Mat {
        let mut out = Mat::zeros(b.nrows(), b.ncols());
        for (c, col) in b.column_iter().enumerate() {
            out.set_column(c, &self.solve(&col.into_owned()));
        }
        out
    }

    /// Explicit inverse; used where the full matrix is genuinely needed.
    pub fn inverse(&self) -> Mat {
        let mut inv = self.solve_matrix(&Mat::identity(self.dim, self.dim));
        symmetrize(&mut inv);
        inv
    }

    /// vᵀ M⁻¹ v as ‖L⁻¹v‖².
    pub fn inv_quad(&self, v: &Vector) -> f64 {
        self.solve_lower(v).norm_squared()
    }

    /// uᵀ M⁻¹ w.
    pub fn inv_bilinear(&self, u: &Vector, w: &Vector) -> f64 {
        self.solve_lower(u).dot(&self.solve_lower(w))
    }

    /// tr(M⁻¹) = ‖L⁻¹‖²_F.
    pub fn trace_inverse(&self) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for i in 0..d {
            let mut e = Vector::zeros(d);
            e[i] = 1.0;
            total += self.inv_quad(&e);
        }
        total
    }

    /// ⟨W, M⁻¹⟩.
    pub fn weighted_trace_inverse(&self, w: &Mat) -> f64 {
        frob_inner(w, &self.inverse())
    }

    /// In-place rank-one update (`sign = 1`) or downdate (`sign = -1`) of L.
    ///
    /// On failure the factor is left unspecified and must be rebuilt.
    fn rank_one_modify(&mut self, v: &Vector, sign: f64, tol: f64) -> bool {
        let d = self.dim;
        let l = &mut self.lower;
        let mut x = v.clone();
        for k in 0..d {
            let lkk = l[(k, k)];
            let r2 = lkk * lkk + sign * x[k] * x[k];
            if !(r2 > tol) {
                return false;
            }
            let r = r2.sqrt();
            let c = r / lkk;
            let s = x[k] / lkk;
            l[(k, k)] = r;
            for i in (k + 1)..d {
                let lik = (l[(i, k)] + sign * s * x[i]) / c;
                x[i] = c * x[i] - s * lik;
                l[(i, k)] = lik;
            }
        }
        self.log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        true
    }
}

pub fn symmetrize(m: &mut Mat) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn inv_quad(f: &PsdFactorization, v: &Vector) -> f64 {
    f.inv_quad(v)
}

pub fn trace_inverse(f: &PsdFactorization) -> f64 {
    f.trace_inverse()
}

pub fn weighted_trace_inverse(f: &PsdFactorization, w: &Mat) -> f64 {
    f.weighted_trace_inverse(w)
}

/// Symmetric eigendecomposition with eigenvalues ascending and matching
/// eigenvector columns.
pub fn sym_eigen(m: &Mat) -> (Vector, Mat) {
    let d = m.nrows();
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Mat::zeros(d, d);
    for (c, &k) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 2 {
        return min_eigenvalue_2x2(m);
    }
    sym_eigen(m).0[0]
}

/// Closed form keeps full relative accuracy on strongly graded 2×2 inputs.
fn min_eigenvalue_2x2(m: &Mat) -> f64 {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let hi = half_tr + disc;
    if hi > 0.0 && half_tr > 0.0 {
        // λ_lo = det / λ_hi avoids cancellation.
        (a * c - b * b) / hi
    } else {
        half_tr - disc
    }
}

/// Smallest eigenvalue and a unit eigenvector.
pub fn min_eigenpair(m: &Mat) -> (f64, Vector) {
    let (vals, vecs) = sym_eigen(m);
    let w = vecs.column(0).into_owned();
    let lam = if m.nrows() == 2 { min_eigenvalue_2x2(m) } else { vals[0] };
    (lam, w)
}

/// M^{-1/2} via eigendecomposition.
pub fn inv_sqrt(m: &Mat) -> Result<Mat> {
    let (vals, vecs) = sym_eigen(m);
    let d = m.nrows();
    let lmax = vals[d - 1];
    let lmin = vals[0];
    if !(lmin > 1e-12 * lmax) || !(lmax > 0.0) {
        return Err(Error::NotPositiveDefinite { index: 0, pivot: lmin, tolerance: 1e-12 * lmax });
    }
    let scale = Vector::from_iterator(d, vals.iter().map(|l| 1.0 / l.sqrt()));
    let mut out = &vecs * Mat::from_diagonal(&scale) * vecs.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// M^{1/2} via eigendecomposition; negative round-off eigenvalues clamp to 0.
pub fn sqrt_psd(m: &Mat) -> Mat {
    let (vals, vecs) = sym_eigen(m);
    let d = m.nrows();
    let scale = Vector::from_iterator(d, vals.iter().map(|l| l.max(0.0).sqrt()));
    let mut out = &vecs * Mat::from_diagonal(&scale) * vecs.transpose();
    symmetrize(&mut out);
    out
}

/// det(M − uuᵀ + wwᵀ)/det(M) from a_u = uᵀM⁻¹u, a_w = wᵀM⁻¹w, a_uw = uᵀM⁻¹w.
///
/// Exact for any removal, including the singular one; may be ≤ 0.
pub fn swap_det_ratio(a_u: f64, a_w: f64, a_uw: f64) -> f64 {
    (1.0 - a_u) * (1.0 + a_w) + a_uw * a_uw
}

/// ln det(M − uuᵀ + wwᵀ) − ln det(M), evaluated as
/// ln(1 − uᵀM⁻¹u) + ln(1 + wᵀ(M − uuᵀ)⁻¹w) with the inner inverse applied as
/// a Sherman–Morrison correction of the existing solve.
pub fn rank_two_logdet_delta(f: &PsdFactorization, u_remove: &Vector, w_add: &Vector) -> Result<f64> {
    let yu = f.solve_lower(u_remove);
    let yw = f.solve_lower(w_add);
    let a_u = yu.norm_squared();
    if a_u >= 1.0 - REMOVAL_MARGIN {
        return Err(Error::RemovalSingular { quad: a_u });
    }
    let a_w = yw.norm_squared();
    let a_uw = yu.dot(&yw);
    let w_after_removal = a_w + a_uw * a_uw / (1.0 - a_u);
    Ok((-a_u).ln_1p() + w_after_removal.ln_1p())
}

/// Quadratic data of a swap needed by the 2×2 Woodbury block.
#[derive(Debug, Clone, Copy)]
pub struct SwapForms {
    /// uᵀM⁻¹u, wᵀM⁻¹w, uᵀM⁻¹w.
    pub a_u: f64,
    pub a_w: f64,
    pub a_uw: f64,
    /// uᵀM⁻¹WM⁻¹u, wᵀM⁻¹WM⁻¹w, uᵀM⁻¹WM⁻¹w.
    pub h_u: f64,
    pub h_w: f64,
    pub h_uw: f64,
}

/// ⟨W, (M − uuᵀ + wwᵀ)⁻¹⟩ − ⟨W, M⁻¹⟩ from the 2×2 Woodbury block.
///
/// With P = [u, w] and C = diag(−1, 1) the change is −⟨(C + PᵀM⁻¹P)⁻¹, PᵀM⁻¹WM⁻¹P⟩.
/// Returns `None` when the swapped matrix is singular.
pub fn woodbury_swap_delta(s: &SwapForms) -> Option<f64> {
    let k = Matrix2::new(s.a_u - 1.0, s.a_uw, s.a_uw, 1.0 + s.a_w);
    let det = k.determinant();
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inner = ((1.0 + s.a_w) * s.h_u - 2.0 * s.a_uw * s.h_uw + (s.a_u - 1.0) * s.h_w) / det;
    Some(-inner)
}

pub fn rank_two_weighted_trace_delta(
    f: &PsdFactorization,
    w: &Mat,
    u_remove: &Vector,
    w_add: &Vector,
) -> Result<f64> {
    let yu = f.solve(u_remove);
    let yw = f.solve(w_add);
    let a_u = u_remove.dot(&yu);
    if 2.0 * a_u >= 1.0 {
        return Err(Error::RemovalSingular { quad: a_u });
    }
    let wyu = w * &yu;
    let wyw = w * &yw;
    let forms = SwapForms {
        a_u,
        a_w: w_add.dot(&yw),
        a_uw: u_remove.dot(&yw),
        h_u: yu.dot(&wyu),
        h_w: yw.dot(&wyw),
        h_uw: yu.dot(&wyw),
    };
    woodbury_swap_delta(&forms).ok_or(Error::RemovalSingular { quad: a_u })
}

/// Σ_{i∈S} vᵢvᵢᵀ for the columns of `vectors`.
pub fn gram_of(vectors: &Mat, subset: impl IntoIterator<Item = usize>) -> Mat {
    let d = vectors.nrows();
    let mut g = Mat::zeros(d, d);
    for i in subset {
        let v = vectors.column(i);
        g.ger(1.0, &v, &v, 1.0);
    }
    g
}

/// Σ wᵢ vᵢvᵢᵀ.
pub fn weighted_gram(vectors: &Mat, weights: &[f64]) -> Mat {
    let d = vectors.nrows();
    let mut g = Mat::zeros(d, d);
    for (i, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            let v = vectors.column(i);
            g.ger(w, &v, &v, 1.0);
        }
    }
    symmetrize(&mut g);
    g
}

/// Current integral solution with its Gram matrix and cached factorization.
///
/// Swaps are applied incrementally; the factor is rebuilt from the Gram
/// matrix every [`REFACTOR_PERIOD`] updates or whenever a downdate fails.
#[derive(Debug, Clone)]
pub struct GramState {
    member: Vec<bool>,
    size: usize,
    gram: Mat,
    factor: Option<PsdFactorization>,
    min_eig: f64,
    refactor_counter: usize,
}

impl GramState {
    pub fn new(vectors: &Mat, subset: &[usize]) -> Self {
        let mut member = vec![false; vectors.ncols()];
        for &i in subset {
            member[i] = true;
        }
        let size = member.iter().filter(|&&b| b).count();
        let gram = gram_of(vectors, (0..member.len()).filter(|&i| member[i]));
        let mut s = GramState { member, size, gram, factor: None, min_eig: 0.0, refactor_counter: 0 };
        s.refactor();
        s
    }

    pub fn from_mask(vectors: &Mat, mask: &[bool]) -> Self {
        let subset: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        Self::new(vectors, &subset)
    }

    pub fn subset(&self) -> Vec<usize> {
        (0..self.member.len()).filter(|&i| self.member[i]).collect()
    }

    pub fn mask(&self) -> &[bool] {
        &self.member
    }

    pub fn contains(&self, i: usize) -> bool {
        self.member[i]
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    pub fn factor(&self) -> Option<&PsdFactorization> {
        self.factor.as_ref()
    }

    pub fn min_eig(&self) -> f64 {
        self.min_eig
    }

    /// ln det Z, or −∞ when Z is numerically singular.
    pub fn log_det(&self) -> f64 {
        self.factor.as_ref().map_or(f64::NEG_INFINITY, |f| f.log_det())
    }

    pub fn refactor_counter(&self) -> usize {
        self.refactor_counter
    }

    /// Rebuilds the factorization and λ_min from the Gram matrix.
    pub fn refactor(&mut self) {
        symmetrize(&mut self.gram);
        self.factor = psd_factorize(&self.gram).ok();
        self.min_eig = min_eigenvalue(&self.gram);
        self.refactor_counter = 0;
    }

    /// Applies S ← S ∪ {add} \ {remove}; empty slots are skipped.
    pub fn exchange(&mut self, vectors: &Mat, remove: Option<usize>, add: Option<usize>) {
        if remove.is_none() && add.is_none() {
            return;
        }
        if let Some(j) = add {
            assert!(!self.member[j], "added index {j} already in the set");
            let v = vectors.column(j);
            self.gram.ger(1.0, &v, &v, 1.0);
            self.member[j] = true;
            self.size += 1;
        }
        if let Some(i) = remove {
            assert!(self.member[i], "removed index {i} not in the set");
            let v = vectors.column(i);
            self.gram.ger(-1.0, &v, &v, 1.0);
            self.member[i] = false;
            self.size -= 1;
        }
        symmetrize(&mut self.gram);
        self.refactor_counter += 1;
        if self.refactor_counter >= REFACTOR_PERIOD || self.factor.is_none() {
            self.refactor();
            return;
        }
        let tol = pivot_tolerance(&self.gram);
        let mut f = self.factor.take().expect("factor present");
        let mut ok = true;
        if let Some(j) = add {
            ok &= f.rank_one_modify(&vectors.column(j).into_owned(), 1.0, tol);
        }
        if ok {
            if let Some(i) = remove {
                ok &= f.rank_one_modify(&vectors.column(i).into_owned(), -1.0, tol);
            }
        }
        if ok {
            f.source_hash = source_hash(&self.gram);
            self.factor = Some(f);
            self.min_eig = min_eigenvalue(&self.gram);
        } else {
            self.refactor();
        }
    }
}
