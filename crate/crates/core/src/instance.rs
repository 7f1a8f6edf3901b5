//! Design instances: construction, validation, generators, adversarial
//! fixtures and the plain-text file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram_of, min_eigenvalue, psd_factorize, Mat, Vector};

/// Which design criterion is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Maximize det(Z)^{1/d}.
    D,
    /// Minimize tr(Z⁻¹).
    A,
    /// Maximize λ_min(Z).
    E,
}

impl ObjectiveKind {
    pub fn maximizes(self) -> bool {
        !matches!(self, ObjectiveKind::A)
    }

    /// Objective value of a Gram matrix in natural units.
    ///
    /// Singular matrices give det^{1/d} = 0 and tr(Z⁻¹) = +∞.
    pub fn evaluate(self, gram: &Mat) -> f64 {
        match self {
            ObjectiveKind::D => match psd_factorize(gram) {
                Ok(f) => (f.log_det() / gram.nrows() as f64).exp(),
                Err(_) => 0.0,
            },
            ObjectiveKind::A => match psd_factorize(gram) {
                Ok(f) => f.trace_inverse(),
                Err(_) => f64::INFINITY,
            },
            ObjectiveKind::E => min_eigenvalue(gram),
        }
    }

    /// True when `a` is at least as good as `b` up to `tol`.
    pub fn at_least_as_good(self, a: f64, b: f64, tol: f64) -> bool {
        if self.maximizes() {
            a >= b - tol
        } else {
            a <= b + tol
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::D => "D",
            ObjectiveKind::A => "A",
            ObjectiveKind::E => "E",
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d" => Ok(ObjectiveKind::D),
            "a" => Ok(ObjectiveKind::A),
            "e" => Ok(ObjectiveKind::E),
            other => Err(Error::InvalidArgument(format!("unknown objective '{other}'"))),
        }
    }
}

/// Ground-set vectors (columns of a d×n matrix) with knapsack rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInstance {
    pub vectors: Mat,
    /// m rows of n nonnegative costs.
    pub costs: Vec<Vec<f64>>,
    pub budgets: Vec<f64>,
    pub label: String,
}

impl DesignInstance {
    pub fn new(vectors: Mat, costs: Vec<Vec<f64>>, budgets: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let inst = DesignInstance { vectors, costs, budgets, label: label.into() };
        inst.validate_shape()?;
        Ok(inst)
    }

    /// Vectors only, no cost rows.
    pub fn from_vectors(vectors: Mat, label: impl Into<String>) -> Result<Self> {
        Self::new(vectors, Vec::new(), Vec::new(), label)
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn n(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn m(&self) -> usize {
        self.costs.len()
    }

    pub fn vector(&self, i: usize) -> Vector {
        self.vectors.column(i).into_owned()
    }

    fn validate_shape(&self) -> Result<()> {
        let n = self.n();
        if self.dim() == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if self.costs.len() != self.budgets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} cost rows but {} budgets",
                self.costs.len(),
                self.budgets.len()
            )));
        }
        if self.vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("vector entries must be finite".into()));
        }
        for (j, row) in self.costs.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidArgument(format!("cost row {j} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::InvalidArgument(format!("cost row {j} has a negative or non-finite entry")));
            }
        }
        if self.budgets.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("budgets must be finite".into()));
        }
        Ok(())
    }

    /// Fails with `Degenerate` unless n ≥ d and the vectors span ℝᵈ.
    pub fn check_full_rank(&self) -> Result<()> {
        if self.n() < self.dim() {
            return Err(Error::Degenerate(format!("n = {} < d = {}", self.n(), self.dim())));
        }
        psd_factorize(&self.full_gram())
            .map(|_| ())
            .map_err(|_| Error::Degenerate("vectors do not span the space".into()))
    }

    pub fn full_gram(&self) -> Mat {
        gram_of(&self.vectors, 0..self.n())
    }

    /// Copy with all cost rows replaced by one all-ones row of budget `b`.
    pub fn with_cardinality(&self, b: f64) -> DesignInstance {
        DesignInstance {
            vectors: self.vectors.clone(),
            costs: vec![vec![1.0; self.n()]],
            budgets: vec![b],
            label: self.label.clone(),
        }
    }

    /// Budget b when the only cost row is the all-ones cardinality row.
    pub fn cardinality_budget(&self) -> Option<f64> {
        match (self.costs.as_slice(), self.budgets.as_slice()) {
            ([row], [b]) if row.iter().all(|&c| c == 1.0) => Some(*b),
            _ => None,
        }
    }

    /// ⟨c_j, z⟩ for every row.
    pub fn costs_of(&self, mask: &[bool]) -> Vec<f64> {
        self.costs
            .iter()
            .map(|row| row.iter().zip(mask).filter(|(_, &m)| m).map(|(c, _)| c).sum())
            .collect()
    }

    pub fn is_feasible(&self, mask: &[bool]) -> bool {
        self.costs_of(mask).iter().zip(&self.budgets).all(|(c, b)| *c <= *b * (1.0 + 1e-12) + 1e-12)
    }

    pub fn scaled_budgets(&self, factor: f64) -> DesignInstance {
        let mut out = self.clone();
        for b in &mut out.budgets {
            *b *= factor;
        }
        out
    }
}

/// An integral solution z ∈ {0,1}ⁿ with its objective and knapsack usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralSolution {
    pub membership: Vec<bool>,
    pub objective_kind: ObjectiveKind,
    pub objective_value: f64,
    pub costs_used: Vec<f64>,
}

impl IntegralSolution {
    /// Evaluates a subset from scratch.
    pub fn evaluate(instance: &DesignInstance, subset: &[usize], kind: ObjectiveKind) -> Self {
        let mut membership = vec![false; instance.n()];
        for &i in subset {
            membership[i] = true;
        }
        Self::from_mask(instance, membership, kind)
    }

    pub fn from_mask(instance: &DesignInstance, membership: Vec<bool>, kind: ObjectiveKind) -> Self {
        let gram = gram_of(&instance.vectors, (0..instance.n()).filter(|&i| membership[i]));
        let costs_used = instance.costs_of(&membership);
        IntegralSolution { objective_value: kind.evaluate(&gram), membership, objective_kind: kind, costs_used }
    }

    pub fn subset(&self) -> Vec<usize> {
        (0..self.membership.len()).filter(|&i| self.membership[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.membership.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    // Column-major fill keeps each vector's entries contiguous in the stream.
    let mut m = Mat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// n i.i.d. standard Gaussian vectors in ℝᵈ, no cost rows.
pub fn gen_gaussian(d: usize, n: usize, seed: u64) -> DesignInstance {
    assert!(d >= 1 && n >= d, "gen_gaussian needs 1 <= d <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = normal_matrix(&mut rng, d, n);
    DesignInstance { vectors, costs: Vec::new(), budgets: Vec::new(), label: format!("gaussian d={d} n={n} seed={seed}") }
}

/// Gaussian vectors with covariance diag(σ₁..σ_d), σ linearly spaced on
/// [1, `spread`]; keeps the fractional optimum well conditioned.
pub fn gen_conditioned(d: usize, n: usize, spread: f64, seed: u64) -> DesignInstance {
    assert!(spread >= 1.0);
    let mut inst = gen_gaussian(d, n, seed);
    for k in 0..d {
        let sigma = if d == 1 { 1.0 } else { 1.0 + (spread - 1.0) * k as f64 / (d - 1) as f64 };
        let s = sigma.sqrt();
        for i in 0..n {
            inst.vectors[(k, i)] *= s;
        }
    }
    inst.label = format!("conditioned d={d} n={n} spread={spread} seed={seed}");
    inst
}

/// Gaussian vectors with m random cost rows, entries uniform on [0.5, 1.5).
pub fn gen_knapsack(d: usize, n: usize, m: usize, budget: f64, seed: u64) -> DesignInstance {
    let mut inst = gen_gaussian(d, n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    inst.costs = (0..m).map(|_| (0..n).map(|_| rng.random_range(0.5..1.5)).collect()).collect();
    inst.budgets = vec![budget; m];
    inst.label = format!("knapsack d={d} n={n} m={m} seed={seed}");
    inst
}

/// Behavior a fixture is built to exhibit.
#[derive(Debug, Clone, PartialEq)]
pub enum FixtureExpectation {
    /// Every single swap from the start leaves λ_min ≤ `bound`.
    ExchangesNeverExceed { bound: f64 },
    /// Every single swap from the start strictly lowers λ_min.
    ExchangesStrictlyDecrease,
    /// Smoothed E local search with this target and ε makes no swap.
    SmoothedSearchStalls { lambda_star: f64, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub instance: DesignInstance,
    pub initial_set: Vec<usize>,
    pub budget: usize,
    /// A set of size `budget` with the stated λ_min.
    pub reference_set: Vec<usize>,
    pub reference_lambda_min: f64,
    pub expectation: FixtureExpectation,
    pub description: &'static str,
}

fn unit(d: usize, k: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[k] = scale;
    v
}

fn columns(d: usize, cols: &[Vec<f64>]) -> Mat {
    Mat::from_fn(d, cols.len(), |r, c| cols[c][r])
}

/// Start with Z₁ = I built from b scaled unit vectors, plus N·e₁..N·e_d.
///
/// Removing any start vector costs one coordinate, and a single large vector
/// can only refill one coordinate, so no swap lifts λ_min above 1.
pub fn fixture_e_identity_trap(d: usize, b: usize, big_n: f64) -> Fixture {
    assert!(d >= 3, "identity trap needs d >= 3");
    assert!(b >= d, "identity trap needs b >= d");
    let mut cols = Vec::with_capacity(b + d);
    for k in 0..d {
        let copies = b / d + usize::from(k < b % d);
        for _ in 0..copies {
            cols.push(unit(d, k, (1.0 / copies as f64).sqrt()));
        }
    }
    for k in 0..d {
        cols.push(unit(d, k, big_n));
    }
    let vectors = columns(d, &cols);
    let reference_set: Vec<usize> = (b..b + d).chain(0..b - d).collect();
    let reference_lambda_min = min_eigenvalue(&gram_of(&vectors, reference_set.iter().copied()));
    Fixture {
        instance: DesignInstance::from_vectors(vectors, format!("identity trap d={d} b={b} N={big_n}")).unwrap(),
        initial_set: (0..b).collect(),
        budget: b,
        reference_set,
        reference_lambda_min,
        expectation: FixtureExpectation::ExchangesNeverExceed { bound: 1.0 },
        description: "Z1 = I; every single swap keeps lambda_min <= 1 although N*e_k vectors exist",
    }
}

/// b/2 copies each of e₁, e₂, √(N/2)(1,1), √(N/2)(1,−1); start on the unit
/// vectors (λ_min = b/2), optimum on the large ones (λ_min = bN/2).
pub fn fixture_e_decreasing(b: usize, big_n: f64) -> Fixture {
    assert!(b >= 2 && b % 2 == 0, "b must be even and at least 2");
    assert!(big_n > 1.0);
    let h = b / 2;
    let s = (big_n / 2.0).sqrt();
    let kinds = [vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s], vec![s, -s]];
    let cols: Vec<Vec<f64>> = kinds.iter().flat_map(|v| std::iter::repeat_n(v.clone(), h)).collect();
    Fixture {
        instance: DesignInstance::from_vectors(columns(2, &cols), format!("decreasing trap b={b} N={big_n}")).unwrap(),
        initial_set: (0..b).collect(),
        budget: b,
        reference_set: (b..2 * b).collect(),
        reference_lambda_min: b as f64 * big_n / 2.0,
        expectation: FixtureExpectation::ExchangesStrictlyDecrease,
        description: "every single swap from the unit-vector start strictly lowers lambda_min",
    }
}

/// λ_min after swapping one e₁ for one √(N/2)(1,1) in [`fixture_e_decreasing`].
pub fn decreasing_trap_first_swap_lambda(b: usize, big_n: f64) -> f64 {
    (b as f64 - 1.0 + big_n - (big_n * big_n + 1.0).sqrt()) / 2.0
}

/// M copies each of (N, 1/N), (N, −1/N), (N⁴, 1)/√b, (N⁴, −1)/√b.
///
/// Start: b/2 copies of the first two, Z = diag(bN², b/N²).
/// Optimum: b/2 copies of the last two, Z* = diag(N⁸, 1).
pub fn fixture_a_smoothed_trap(b: usize, big_n: f64, copies: usize) -> Fixture {
    assert!(b >= 3 && b % 2 == 0, "smoothed trap needs an even b >= 3");
    assert!(copies >= b, "need at least b copies of each vector");
    let rb = (b as f64).sqrt();
    let n4 = big_n.powi(4);
    let kinds = [
        vec![big_n, 1.0 / big_n],
        vec![big_n, -1.0 / big_n],
        vec![n4 / rb, 1.0 / rb],
        vec![n4 / rb, -1.0 / rb],
    ];
    let cols: Vec<Vec<f64>> = kinds.iter().flat_map(|v| std::iter::repeat_n(v.clone(), copies)).collect();
    let h = b / 2;
    let initial_set: Vec<usize> = (0..h).chain(copies..copies + h).collect();
    let reference_set: Vec<usize> = (2 * copies..2 * copies + h).chain(3 * copies..3 * copies + h).collect();
    Fixture {
        instance: DesignInstance::from_vectors(columns(2, &cols), format!("smoothed trap b={b} N={big_n} M={copies}"))
            .unwrap(),
        initial_set,
        budget: b,
        reference_set,
        reference_lambda_min: 1.0,
        expectation: FixtureExpectation::SmoothedSearchStalls { lambda_star: 1.0, eps: 0.1 },
        description: "ill-conditioned optimum; smoothed local search with lambda* = 1 never leaves the bad start",
    }
}

const HEADER_TAG: &str = "optdesign";
const HEADER_VERSION: &str = "v1";

/// Serializes with shortest round-trip float formatting.
pub fn format_instance(inst: &DesignInstance) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER_TAG} {HEADER_VERSION} d={} n={} m={}", inst.dim(), inst.n(), inst.m()).unwrap();
    for i in 0..inst.n() {
        let row: Vec<String> = inst.vectors.column(i).iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    for (row, b) in inst.costs.iter().zip(&inst.budgets) {
        let vals: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "budget={b:?} {}", vals.join(" ")).unwrap();
    }
    out
}

fn parse_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { line, field: field.into(), message: message.into() }
}

fn parse_f64(tok: &str, line: usize, field: &str) -> Result<f64> {
    let x: f64 = tok.parse().map_err(|_| parse_err(line, field, format!("'{tok}' is not a number")))?;
    if !x.is_finite() {
        return Err(parse_err(line, field, "value must be finite"));
    }
    Ok(x)
}

fn header_value(tok: Option<&str>, key: &str, line: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| parse_err(line, key, "missing"))?;
    let v = tok
        .strip_prefix(key)
        .and_then(|s| s.strip_prefix('='))
        .ok_or_else(|| parse_err(line, key, format!("expected {key}=<int>, found '{tok}'")))?;
    v.parse().map_err(|_| parse_err(line, key, format!("'{v}' is not a nonnegative integer")))
}

/// Parses the text format; blank lines are ignored.
pub fn parse_instance(text: &str) -> Result<DesignInstance> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "header", "empty file"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(HEADER_TAG) {
        return Err(parse_err(hl, "header", format!("expected '{HEADER_TAG}'")));
    }
    if toks.next() != Some(HEADER_VERSION) {
        return Err(parse_err(hl, "version", format!("expected '{HEADER_VERSION}'")));
    }
    let d = header_value(toks.next(), "d", hl)?;
    let n = header_value(toks.next(), "n", hl)?;
    let m = header_value(toks.next(), "m", hl)?;
    if d == 0 {
        return Err(parse_err(hl, "d", "must be at least 1"));
    }

    let mut vectors = Mat::zeros(d, n);
    for i in 0..n {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(hl, "vectors", format!("expected {n} vector lines, found {i}")))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != d {
            return Err(parse_err(ln, format!("vector {i}"), format!("expected {d} entries, found {}", vals.len())));
        }
        for (r, tok) in vals.iter().enumerate() {
            vectors[(r, i)] = parse_f64(tok, ln, &format!("vector {i} entry {r}"))?;
        }
    }

    let mut costs = Vec::with_capacity(m);
    let mut budgets = Vec::with_capacity(m);
    for j in 0..m {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(hl, "budgets", format!("header declares m={m} budget lines, found {j}")))?;
        let mut toks = line.split_whitespace();
        let first = toks.next().unwrap_or_default();
        let b = first
            .strip_prefix("budget=")
            .ok_or_else(|| parse_err(ln, "budgets", format!("expected 'budget=<b>' at start of budget line {j}")))?;
        budgets.push(parse_f64(b, ln, "budgets")?);
        let row: Vec<f64> = toks
            .enumerate()
            .map(|(i, t)| parse_f64(t, ln, &format!("cost {j} entry {i}")))
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(parse_err(ln, format!("cost {j}"), format!("expected {n} costs, found {}", row.len())));
        }
        if let Some(i) = row.iter().position(|&c| c < 0.0) {
            return Err(parse_err(ln, format!("cost {j} entry {i}"), "costs must be nonnegative"));
        }
        costs.push(row);
    }
    if let Some((ln, _)) = lines.next() {
        let field = if m == 0 { "budgets" } else { "trailing" };
        return Err(parse_err(ln, field, format!("unexpected extra line; header declares m={m}")));
    }
    DesignInstance::new(vectors, costs, budgets, "")
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<DesignInstance> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut inst = parse_instance(&text)?;
    inst.label = path.as_ref().display().to_string();
    Ok(inst)
}

/// Loads a file; when it has no budget rows and `cardinality` is given,
/// adds the implicit all-ones row with that budget.
pub fn load_instance_with_cardinality(path: impl AsRef<Path>, cardinality: Option<f64>) -> Result<DesignInstance> {
    let inst = load_instance(path)?;
    Ok(match cardinality {
        Some(b) if inst.m() == 0 => inst.with_cardinality(b),
        _ => inst,
    })
}

pub fn save_instance(inst: &DesignInstance, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_instance(inst))?;
    Ok(())
}
