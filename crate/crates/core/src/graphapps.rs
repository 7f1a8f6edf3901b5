//! Network design on edge subsets: total effective resistance (A) and
//! algebraic connectivity (E).
//!
//! Each edge contributes its incidence vector projected onto the subspace
//! orthogonal to the all-ones vector, so the Gram matrix of an edge set is
//! the Laplacian restricted to that subspace.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{DesignInstance, ObjectiveKind};
use crate::linalg::{gram_of, min_eigenvalue, psd_factorize, Mat};
use crate::localsearch::{local_search_e_auto, DEFAULT_ACCEPT_C};
use crate::rounding::{randomized_exchange, RoundingConfig, RoundingStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Graph {
    pub n_vertices: usize,
    /// (u, v, cost), u ≠ v, no repeated pair.
    pub edges: Vec<(usize, usize, f64)>,
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

impl Graph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (k, &(u, v, c)) in edges.iter().enumerate() {
            if u >= n_vertices || v >= n_vertices {
                return Err(Error::InvalidArgument(format!("edge {k} endpoint out of range")));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("edge {k} is a self-loop")));
            }
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("edge {k} cost must be finite and nonnegative")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidArgument(format!("edge {k} repeats ({u}, {v})")));
            }
        }
        Ok(Graph { n_vertices, edges })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v, 1.0))).collect();
        Graph { n_vertices: n, edges }
    }

    pub fn cycle(n: usize) -> Self {
        Graph { n_vertices: n, edges: (0..n).map(|u| (u, (u + 1) % n, 1.0)).collect() }
    }

    pub fn path(n: usize) -> Self {
        Graph { n_vertices: n, edges: (1..n).map(|u| (u - 1, u, 1.0)).collect() }
    }

    /// Connected graph: a random spanning tree plus random extra edges, unit costs.
    pub fn random_connected(n: usize, m: usize, seed: u64) -> Result<Self> {
        let max_edges = n * n.saturating_sub(1) / 2;
        if n < 2 || m + 1 < n || m > max_edges {
            return Err(Error::InvalidArgument(format!("need 2 ≤ n and n − 1 ≤ m ≤ {max_edges}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut pairs = std::collections::BTreeSet::new();
        for k in 1..n {
            let p = order[rng.random_range(0..k)];
            pairs.insert((p.min(order[k]), p.max(order[k])));
        }
        let mut rest: Vec<(usize, usize)> =
            (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|e| !pairs.contains(e)).collect();
        rest.shuffle(&mut rng);
        pairs.extend(rest.into_iter().take(m + 1 - n));
        Ok(Graph { n_vertices: n, edges: pairs.into_iter().map(|(u, v)| (u, v, 1.0)).collect() })
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Whether the chosen edges span every vertex (union-find).
    pub fn spans(&self, edge_subset: &[usize]) -> bool {
        let mut parent: Vec<usize> = (0..self.n_vertices).collect();
        let mut components = self.n_vertices;
        for &e in edge_subset {
            let (u, v, _) = self.edges[e];
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components <= 1
    }

    pub fn is_connected(&self) -> bool {
        self.spans(&(0..self.m()).collect::<Vec<_>>())
    }

    pub fn laplacian(&self, edge_subset: &[usize]) -> Mat {
        let mut l = Mat::zeros(self.n_vertices, self.n_vertices);
        for &e in edge_subset {
            let (u, v, _) = self.edges[e];
            l[(u, u)] += 1.0;
            l[(v, v)] += 1.0;
            l[(u, v)] -= 1.0;
            l[(v, u)] -= 1.0;
        }
        l
    }

    pub fn has_unit_costs(&self) -> bool {
        self.edges.iter().all(|e| e.2 == 1.0)
    }
}

pub const GRAPH_TAG: &str = "graph";

pub fn format_graph(g: &Graph) -> String {
    let mut out = format!("{GRAPH_TAG} {} {}\n", g.n_vertices, g.m());
    for &(u, v, c) in &g.edges {
        writeln!(out, "{u} {v} {c:?}").unwrap();
    }
    out
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse { line, field: field.into(), message: message.into() }
}

/// First line `graph <n> <m>`, then m lines `u v cost` (0-indexed).
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "header", "empty file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != GRAPH_TAG {
        return Err(parse_err(hl, "header", "expected 'graph <n> <m>'"));
    }
    let n: usize = toks[1].parse().map_err(|_| parse_err(hl, "n", format!("'{}' is not an integer", toks[1])))?;
    let m: usize = toks[2].parse().map_err(|_| parse_err(hl, "m", format!("'{}' is not an integer", toks[2])))?;
    let mut edges = Vec::with_capacity(m);
    for k in 0..m {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(hl, "edges", format!("expected {m} edge lines, found {k}")))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(parse_err(ln, "edge", "expected 'u v cost'"));
        }
        let u = t[0].parse().map_err(|_| parse_err(ln, "u", format!("'{}' is not an integer", t[0])))?;
        let v = t[1].parse().map_err(|_| parse_err(ln, "v", format!("'{}' is not an integer", t[1])))?;
        let c = t[2].parse().map_err(|_| parse_err(ln, "cost", format!("'{}' is not a number", t[2])))?;
        edges.push((u, v, c));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing", format!("unexpected extra line; header declares m={m}")));
    }
    Graph::new(n, edges).map_err(|e| parse_err(hl, "edges", e.to_string()))
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    parse_graph(&std::fs::read_to_string(path)?)
}

/// Rows 2..n of the Householder reflection sending 1/√n to e₁: an
/// (n−1)×n matrix with orthonormal rows, all orthogonal to the ones vector.
pub fn projection_basis(n: usize) -> Mat {
    if n < 2 {
        return Mat::zeros(0, n);
    }
    let u = 1.0 / (n as f64).sqrt();
    let mut w = nalgebra::DVector::from_element(n, u);
    w[0] -= 1.0;
    let scale = 2.0 / w.norm_squared();
    let h = Mat::identity(n, n) - (&w * w.transpose()) * scale;
    h.rows(1, n - 1).into_owned()
}

/// Projected incidence vectors Q(e_u − e_v) (dimension n − 1) with the
/// edge costs as the single cost row; the budget defaults to the total cost.
pub fn edge_design_instance(graph: &Graph) -> Result<DesignInstance> {
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let q = projection_basis(graph.n_vertices);
    let mut incidence = Mat::zeros(graph.n_vertices, graph.m());
    for (k, &(u, v, _)) in graph.edges.iter().enumerate() {
        incidence[(u, k)] = 1.0;
        incidence[(v, k)] = -1.0;
    }
    let costs: Vec<f64> = graph.edges.iter().map(|e| e.2).collect();
    let total = costs.iter().sum();
    DesignInstance::new(&q * incidence, vec![costs], vec![total], "graph")
}

#[derive(Debug, Clone, Serialize)]
pub struct TotalReffOutcome {
    pub edges: Vec<usize>,
    /// Σ over vertex pairs of the effective resistance, n·tr(L†); +∞ when disconnected.
    pub total_reff: f64,
    pub connected: bool,
    pub status: RoundingStatus,
    pub cost: f64,
    pub relaxation_total_reff: f64,
}

/// Randomized exchange rounding for A on the edge instance. Budgets are not
/// rescaled, so a budget that admits the whole graph returns it.
pub fn solve_total_reff(graph: &Graph, budget: f64, eps: f64, seed: u64) -> Result<TotalReffOutcome> {
    let mut inst = edge_design_instance(graph)?;
    inst.budgets = vec![budget];
    let mut config = RoundingConfig::for_instance(&inst, ObjectiveKind::A, eps, seed);
    config.rescale_budgets = false;
    let (plan, outcome) = randomized_exchange(&inst, &config)?;
    let edges = outcome.solution.subset();
    let connected = graph.spans(&edges);
    let n = graph.n_vertices as f64;
    let total_reff = if connected {
        psd_factorize(&gram_of(&inst.vectors, edges.iter().copied()))
            .map_or(f64::INFINITY, |f| n * f.trace_inverse())
    } else {
        f64::INFINITY
    };
    Ok(TotalReffOutcome {
        cost: edges.iter().map(|&e| graph.edges[e].2).sum(),
        edges,
        total_reff,
        connected,
        status: outcome.status,
        relaxation_total_reff: n * plan.relaxation_value(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityOutcome {
    pub edges: Vec<usize>,
    /// λ₂ of the chosen subgraph's Laplacian.
    pub lambda2: f64,
    pub lambda_star: f64,
    pub attempts: usize,
}

/// Smoothed E local search with the λ* guessing loop, choosing `budget` edges.
pub fn solve_connectivity(graph: &Graph, budget: usize, eps: f64) -> Result<ConnectivityOutcome> {
    if !graph.has_unit_costs() {
        return Err(Error::NotApplicable("algebraic connectivity design needs unit edge costs".into()));
    }
    let inst = edge_design_instance(graph)?.with_cardinality(budget as f64);
    let out = local_search_e_auto(&inst, budget, eps, None, None, DEFAULT_ACCEPT_C)?;
    let edges = out.solution.subset();
    Ok(ConnectivityOutcome {
        lambda2: min_eigenvalue(&gram_of(&inst.vectors, edges.iter().copied())),
        edges,
        lambda_star: out.lambda_star,
        attempts: out.attempts,
    })
}
