//! Spatial and response graphs, the joint adjacency built from them, and
//! maximal-clique enumeration.
//!
//! Joint vertices are stacked column-major: element `(i, j)` (unit `i`,
//! response `j`, both 0-based) has index `j * I + i`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph stored as sorted neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    neighbors: Vec<Vec<usize>>,
    n_edges: usize,
}

impl AdjacencyGraph {
    /// Graph on `n` vertices with no edges.
    pub fn edgeless(n: usize) -> Self {
        AdjacencyGraph {
            neighbors: vec![Vec::new(); n],
            n_edges: 0,
        }
    }

    /// Builds a graph from 0-based edges. Self-loops, duplicates (in either
    /// orientation) and out-of-range endpoints are errors.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut seen = BTreeSet::new();
        let mut neighbors = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::IndexOutOfRange { row: u, col: v });
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop on vertex {}", u + 1)));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::Validation(format!("duplicate edge {} {}", key.0 + 1, key.1 + 1)));
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(AdjacencyGraph {
            neighbors,
            n_edges: seen.len(),
        })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
        Self::from_edges(n, edges).expect("complete graph edges are unique")
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|v| (v - 1, v))).expect("path edges are unique")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "a simple cycle needs at least 3 vertices");
        let edges = (0..n).map(|v| (v, (v + 1) % n));
        Self::from_edges(n, edges).expect("cycle edges are unique")
    }

    /// `rows x cols` lattice with rook adjacency; vertex `(r, c)` is `r * cols + c`.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        Self::from_edges(rows * cols, edges).expect("grid edges are unique")
    }

    pub fn n_vertices(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    /// Position of edge `{u, v}` in [`edges`](Self::edges).
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let (a, b) = (u.min(v), u.max(v));
        if !self.has_edge(a, b) {
            return None;
        }
        let before: usize = (0..a)
            .map(|w| self.neighbors[w].iter().filter(|&&x| x > w).count())
            .sum();
        let within = self.neighbors[a].iter().filter(|&&x| x > a && x < b).count();
        Some(before + within)
    }

    pub fn min_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_vertices();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    pub fn n_components(&self) -> usize {
        let n = self.n_vertices();
        let mut label = vec![usize::MAX; n];
        let mut components = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = components;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if label[w] == usize::MAX {
                        label[w] = components;
                        stack.push(w);
                    }
                }
            }
            components += 1;
        }
        components
    }

    /// Dense 0/1 adjacency matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_vertices();
        DMatrix::from_fn(n, n, |r, c| if self.has_edge(r, c) { 1.0 } else { 0.0 })
    }

    /// Parses the edge-list format: a `# vertices N` header followed by one
    /// 1-based `u v` pair per line. Blank lines and other `#` comments are
    /// skipped.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        let mut seen = BTreeSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut words = rest.split_whitespace();
                if words.next() == Some("vertices") {
                    let count = words
                        .next()
                        .and_then(|w| w.parse::<usize>().ok())
                        .filter(|&c| c > 0)
                        .ok_or_else(|| parse_err(line_no, "expected a positive vertex count"))?;
                    if n.replace(count).is_some() {
                        return Err(parse_err(line_no, "repeated vertices header"));
                    }
                }
                continue;
            }
            let count = n.ok_or_else(|| parse_err(line_no, "edge before '# vertices N' header"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_err(line_no, "expected two vertex ids"));
            }
            let mut ends = [0usize; 2];
            for (slot, field) in ends.iter_mut().zip(&fields) {
                let id: usize = field
                    .parse()
                    .map_err(|_| parse_err(line_no, &format!("invalid vertex id '{field}'")))?;
                if id == 0 || id > count {
                    return Err(parse_err(line_no, &format!("vertex id {id} outside 1..={count}")));
                }
                *slot = id - 1;
            }
            let [u, v] = ends;
            if u == v {
                return Err(parse_err(line_no, "self-loop"));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(parse_err(line_no, &format!("duplicate edge {} {}", u + 1, v + 1)));
            }
            edges.push((u, v));
        }
        let n = n.ok_or_else(|| parse_err(1, "missing '# vertices N' header"))?;
        Self::from_edges(n, edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# vertices {}\n", self.n_vertices());
        for (u, v) in self.edges() {
            out.push_str(&format!("{} {}\n", u + 1, v + 1));
        }
        out
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

/// Total number of vertices plus edges.
pub fn nu(g: &AdjacencyGraph) -> usize {
    g.n_vertices() + g.n_edges()
}

/// Which neighbor types the joint graph connects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Spatial, response and interaction neighbors.
    #[default]
    Full,
    /// Independent copies of the spatial graph, one per response.
    Spatial,
    /// Independent copies of the response graph, one per unit.
    Response,
    /// Spatial and response neighbors without interaction edges.
    NoInteraction,
}

impl Variant {
    fn spatial_edges(self) -> bool {
        matches!(self, Variant::Full | Variant::Spatial | Variant::NoInteraction)
    }

    fn response_edges(self) -> bool {
        matches!(self, Variant::Full | Variant::Response | Variant::NoInteraction)
    }

    fn interaction_edges(self) -> bool {
        self == Variant::Full
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "spatial" => Ok(Variant::Spatial),
            "response" => Ok(Variant::Response),
            "nointeraction" => Ok(Variant::NoInteraction),
            other => Err(Error::Validation(format!("unknown variant '{other}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Variant::Full => "full",
            Variant::Spatial => "spatial",
            Variant::Response => "response",
            Variant::NoInteraction => "nointeraction",
        };
        f.write_str(name)
    }
}

/// Graph over all `I * J` (unit, response) elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointAdjacency {
    units: usize,
    responses: usize,
    variant: Variant,
    graph: AdjacencyGraph,
}

impl JointAdjacency {
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn responses(&self) -> usize {
        self.responses
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn graph(&self) -> &AdjacencyGraph {
        &self.graph
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.units + i
    }

    pub fn element(&self, m: usize) -> (usize, usize) {
        (m % self.units, m / self.units)
    }

    pub fn degree(&self, i: usize, j: usize) -> usize {
        self.graph.degree(self.index(i, j))
    }
}

/// Connects `(i, j)` to spatial neighbors `(i' ~ i, j)`, response neighbors
/// `(i, j' ~ j)` and interaction neighbors `(i' ~ i, j' ~ j)` as selected by
/// `variant`.
pub fn build_joint_adjacency(spatial: &AdjacencyGraph, response: &AdjacencyGraph, variant: Variant) -> JointAdjacency {
    let units = spatial.n_vertices();
    let responses = response.n_vertices();
    let index = |i: usize, j: usize| j * units + i;
    let mut edges = Vec::new();
    for j in 0..responses {
        for i in 0..units {
            let m = index(i, j);
            if variant.spatial_edges() {
                for &ii in spatial.neighbors(i) {
                    if index(ii, j) > m {
                        edges.push((m, index(ii, j)));
                    }
                }
            }
            for &jj in response.neighbors(j) {
                if variant.response_edges() && index(i, jj) > m {
                    edges.push((m, index(i, jj)));
                }
                if variant.interaction_edges() {
                    for &ii in spatial.neighbors(i) {
                        if index(ii, jj) > m {
                            edges.push((m, index(ii, jj)));
                        }
                    }
                }
            }
        }
    }
    let graph =
        AdjacencyGraph::from_edges(units * responses, edges).expect("Kronecker construction yields a simple graph");
    JointAdjacency {
        units,
        responses,
        variant,
        graph,
    }
}

/// Row sum of the full joint adjacency at element `(i, j)`:
/// `d_j^(r) d_i^(s) + d_j^(r) + d_i^(s)`.
pub fn joint_degree(i: usize, j: usize, spatial: &AdjacencyGraph, response: &AdjacencyGraph) -> Result<usize> {
    if i >= spatial.n_vertices() || j >= response.n_vertices() {
        return Err(Error::IndexOutOfRange { row: i, col: j });
    }
    let ds = spatial.degree(i);
    let dr = response.degree(j);
    Ok(dr * ds + dr + ds)
}

/// Maximal cliques, each sorted, listed in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliqueSet {
    cliques: Vec<Vec<usize>>,
}

impl CliqueSet {
    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.cliques.iter().map(Vec::as_slice)
    }
}

pub const DEFAULT_CLIQUE_CAP: usize = 100_000;

pub fn maximal_cliques(g: &AdjacencyGraph) -> CliqueSet {
    maximal_cliques_capped(g, DEFAULT_CLIQUE_CAP)
}

/// Bron–Kerbosch with Tomita pivoting. Enumeration is exact; `cap` only
/// controls when a warning is logged.
pub fn maximal_cliques_capped(g: &AdjacencyGraph, cap: usize) -> CliqueSet {
    let mut cliques = Vec::new();
    let mut current = Vec::new();
    let candidates: Vec<usize> = (0..g.n_vertices()).collect();
    bron_kerbosch(g, &mut current, candidates, Vec::new(), &mut cliques);
    for c in &mut cliques {
        c.sort_unstable();
    }
    cliques.sort();
    if cliques.len() > cap {
        log::warn!(
            "graph with {} vertices has {} maximal cliques (cap {})",
            g.n_vertices(),
            cliques.len(),
            cap
        );
    }
    CliqueSet { cliques }
}

fn bron_kerbosch(
    g: &AdjacencyGraph,
    current: &mut Vec<usize>,
    mut candidates: Vec<usize>,
    mut excluded: Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if candidates.is_empty() {
        if excluded.is_empty() {
            out.push(current.clone());
        }
        return;
    }
    let pivot = candidates
        .iter()
        .chain(excluded.iter())
        .copied()
        .max_by_key(|&u| {
            let hits = candidates.iter().filter(|&&v| g.has_edge(u, v)).count();
            // Prefer the smallest vertex on ties so the recursion is deterministic.
            (hits, std::cmp::Reverse(u))
        })
        .expect("candidates is nonempty");
    let branch: Vec<usize> = candidates.iter().copied().filter(|&v| !g.has_edge(pivot, v)).collect();
    for v in branch {
        let next_candidates = candidates.iter().copied().filter(|&w| g.has_edge(v, w)).collect();
        let next_excluded = excluded.iter().copied().filter(|&w| g.has_edge(v, w)).collect();
        current.push(v);
        bron_kerbosch(g, current, next_candidates, next_excluded, out);
        current.pop();
        candidates.retain(|&w| w != v);
        excluded.push(v);
    }
}
