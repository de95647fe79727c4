//! Element-wise conditional specifications `(B, T)` and closed-form joint
//! precisions for the three MCAR parameterizations.
//!
//! * Model 1 (multifold): variance components `delta`, spatial linkage
//!   `lambda`, bridging `psi` and interaction `phi` linkages on response
//!   edges.
//! * Model 2 (separable, homogeneous smoothing): `rho` and a response
//!   precision `omega` on the response graph; joint precision
//!   `omega ⊗ (D_s - rho C_s)`.
//! * Model 3 (separable, heterogeneous smoothing): response and spatial
//!   precisions on their graphs; joint precision `omega_r ⊗ omega_s`, with
//!   `omega_r[0][0] = 1` for identification and an auxiliary scale `z`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_joint_adjacency, nu, AdjacencyGraph, JointAdjacency, Variant};
use crate::sparse::{cholesky, FullRows, SparseSymMatrix};

/// Spatial graph, response graph and their full joint adjacency.
#[derive(Clone, Debug)]
pub struct ModelGraphs {
    spatial: AdjacencyGraph,
    response: AdjacencyGraph,
    joint: JointAdjacency,
}

impl ModelGraphs {
    pub fn new(spatial: AdjacencyGraph, response: AdjacencyGraph) -> Self {
        let joint = build_joint_adjacency(&spatial, &response, Variant::Full);
        ModelGraphs {
            spatial,
            response,
            joint,
        }
    }

    pub fn spatial(&self) -> &AdjacencyGraph {
        &self.spatial
    }

    pub fn response(&self) -> &AdjacencyGraph {
        &self.response
    }

    pub fn joint(&self) -> &JointAdjacency {
        &self.joint
    }

    pub fn units(&self) -> usize {
        self.spatial.n_vertices()
    }

    pub fn responses(&self) -> usize {
        self.response.n_vertices()
    }

    pub fn dim(&self) -> usize {
        self.units() * self.responses()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.units() + i
    }

    /// Spatial CAR precision `D_s - rho C_s` with the full `I + C_s` pattern.
    pub fn car_precision(&self, rho: f64) -> SparseSymMatrix {
        let g = &self.spatial;
        let mut t = Vec::with_capacity(g.n_vertices() + g.n_edges());
        for i in 0..g.n_vertices() {
            t.push((i, i, g.degree(i) as f64));
        }
        for (a, b) in g.edges() {
            t.push((a, b, -rho));
        }
        SparseSymMatrix::from_triplets(g.n_vertices(), &t).expect("spatial graph is nonempty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ModelKind {
    Multifold,
    Homogeneous,
    Heterogeneous,
}

impl ModelKind {
    pub fn number(self) -> u8 {
        match self {
            ModelKind::Multifold => 1,
            ModelKind::Homogeneous => 2,
            ModelKind::Heterogeneous => 3,
        }
    }
}

impl TryFrom<u8> for ModelKind {
    type Error = Error;

    fn try_from(k: u8) -> Result<Self> {
        match k {
            1 => Ok(ModelKind::Multifold),
            2 => Ok(ModelKind::Homogeneous),
            3 => Ok(ModelKind::Heterogeneous),
            other => Err(Error::Validation(format!("model must be 1, 2 or 3, got {other}"))),
        }
    }
}

impl From<ModelKind> for u8 {
    fn from(k: ModelKind) -> u8 {
        k.number()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Model {}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model1Params {
    pub delta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Bridging linkages, one per response edge in `AdjacencyGraph::edges` order.
    pub psi: Vec<f64>,
    /// Interaction linkages, aligned with `psi`.
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model2Params {
    pub rho: f64,
    pub omega: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model3Params {
    pub omega_r: DMatrix<f64>,
    pub omega_s: DMatrix<f64>,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Model1(Model1Params),
    Model2(Model2Params),
    Model3(Model3Params),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Model1(_) => ModelKind::Multifold,
            ModelParams::Model2(_) => ModelKind::Homogeneous,
            ModelParams::Model3(_) => ModelKind::Heterogeneous,
        }
    }

    /// Starting values for a fresh chain: independence for Model 1 and
    /// identity precisions for Models 2 and 3.
    pub fn initial(kind: ModelKind, graphs: &ModelGraphs) -> Self {
        let j = graphs.responses();
        let e = graphs.response().n_edges();
        match kind {
            ModelKind::Multifold => ModelParams::Model1(Model1Params {
                delta: vec![1.0; j],
                lambda: vec![0.0; j],
                psi: vec![0.0; e],
                phi: vec![0.0; e],
            }),
            ModelKind::Homogeneous => ModelParams::Model2(Model2Params {
                rho: 0.0,
                omega: DMatrix::identity(j, j),
            }),
            ModelKind::Heterogeneous => ModelParams::Model3(Model3Params {
                omega_r: DMatrix::identity(j, j),
                omega_s: DMatrix::identity(graphs.units(), graphs.units()),
                z: 1.0,
            }),
        }
    }

    /// Joint precision `T^{-1}(I - B)` from the closed form, after validation.
    pub fn precision(&self, graphs: &ModelGraphs) -> Result<SparseSymMatrix> {
        match self {
            ModelParams::Model1(p) => model1_precision(p, graphs),
            ModelParams::Model2(p) => model2_precision(p, graphs),
            ModelParams::Model3(p) => model3_precision(p, graphs),
        }
    }

    /// Closed-form precision without validation, for parameters already
    /// known to be in their support.
    pub fn precision_unchecked(&self, graphs: &ModelGraphs) -> SparseSymMatrix {
        match self {
            ModelParams::Model1(p) => assemble_model1(p, graphs, true),
            ModelParams::Model2(p) => assemble_kron(&p.omega, &graphs.car_precision(p.rho).to_dense(), graphs),
            ModelParams::Model3(p) => assemble_kron(&p.omega_r, &p.omega_s, graphs),
        }
    }

    pub fn conditional_spec(&self, graphs: &ModelGraphs) -> Result<ConditionalSpec> {
        match self {
            ModelParams::Model1(p) => model1_bt(p, graphs),
            ModelParams::Model2(p) => model2_bt(p, graphs),
            ModelParams::Model3(p) => model3_bt(p, graphs),
        }
    }

    /// Flat parameter names in the order of [`values`](Self::values), with
    /// 1-based indices.
    pub fn names(&self, graphs: &ModelGraphs) -> Vec<String> {
        let r_edges = graphs.response().edges();
        match self {
            ModelParams::Model1(p) => {
                let mut names: Vec<String> = (1..=p.delta.len()).map(|j| format!("delta[{j}]")).collect();
                names.extend((1..=p.lambda.len()).map(|j| format!("lambda[{j}]")));
                names.extend(r_edges.iter().map(|(a, b)| format!("psi[{},{}]", a + 1, b + 1)));
                names.extend(r_edges.iter().map(|(a, b)| format!("phi[{},{}]", a + 1, b + 1)));
                names
            }
            ModelParams::Model2(_) => {
                let mut names = vec!["rho".to_string()];
                names.extend(pattern_names("omega", graphs.response()));
                names
            }
            ModelParams::Model3(_) => {
                let mut names = vec!["z".to_string()];
                names.extend(pattern_names("omega_r", graphs.response()));
                names.extend(pattern_names("omega_s", graphs.spatial()));
                names
            }
        }
    }

    pub fn values(&self, graphs: &ModelGraphs) -> Vec<f64> {
        match self {
            ModelParams::Model1(p) => {
                let mut v = p.delta.clone();
                v.extend(&p.lambda);
                v.extend(&p.psi);
                v.extend(&p.phi);
                v
            }
            ModelParams::Model2(p) => {
                let mut v = vec![p.rho];
                v.extend(pattern_values(&p.omega, graphs.response()));
                v
            }
            ModelParams::Model3(p) => {
                let mut v = vec![p.z];
                v.extend(pattern_values(&p.omega_r, graphs.response()));
                v.extend(pattern_values(&p.omega_s, graphs.spatial()));
                v
            }
        }
    }
}

fn pattern_pairs(g: &AdjacencyGraph) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..g.n_vertices()).map(|v| (v, v)).collect();
    pairs.extend(g.edges());
    pairs.sort_unstable();
    pairs
}

fn pattern_names(label: &str, g: &AdjacencyGraph) -> Vec<String> {
    pattern_pairs(g)
        .into_iter()
        .map(|(a, b)| format!("{label}[{},{}]", a + 1, b + 1))
        .collect()
}

fn pattern_values(m: &DMatrix<f64>, g: &AdjacencyGraph) -> Vec<f64> {
    pattern_pairs(g).into_iter().map(|(a, b)| m[(a, b)]).collect()
}

/// Number of free parameters: `2 nu(C_r)` for Model 1, `nu(C_r) + 1` for
/// Model 2 and `nu(C_r) + nu(C_s)` for Model 3 (the identification
/// constraint offsets the auxiliary scale).
pub fn parameter_count(kind: ModelKind, graphs: &ModelGraphs) -> usize {
    let r = nu(graphs.response());
    match kind {
        ModelKind::Multifold => 2 * r,
        ModelKind::Homogeneous => r + 1,
        ModelKind::Heterogeneous => r + nu(graphs.spatial()),
    }
}

/// Conditional regression coefficients `b` (row-wise, off-diagonal) and
/// conditional variances `tau^2` of every element.
#[derive(Clone, Debug)]
pub struct ConditionalSpec {
    pub b_rows: Vec<Vec<(usize, f64)>>,
    pub tau2: Vec<f64>,
}

impl ConditionalSpec {
    pub fn b_dense(&self) -> DMatrix<f64> {
        let n = self.tau2.len();
        let mut b = DMatrix::zeros(n, n);
        for (m, row) in self.b_rows.iter().enumerate() {
            for &(k, v) in row {
                b[(m, k)] += v;
            }
        }
        b
    }

    /// Dense `T^{-1}(I - B)`.
    pub fn implied_precision(&self) -> DMatrix<f64> {
        let n = self.tau2.len();
        let mut a = DMatrix::identity(n, n) - self.b_dense();
        for m in 0..n {
            let scale = 1.0 / self.tau2[m];
            a.row_mut(m).scale_mut(scale);
        }
        a
    }

    /// Conditional mean of element `m` given all others.
    pub fn conditional_mean(&self, u: &[f64], m: usize) -> f64 {
        self.b_rows[m].iter().map(|&(k, b)| b * u[k]).sum()
    }
}

/// Mean and variance of element `m` given the rest, read off the joint
/// precision: `-sum_{k != m} Q_mk u_k / Q_mm` and `1 / Q_mm`.
pub fn conditional_from_precision(rows: &FullRows, u: &[f64], m: usize) -> (f64, f64) {
    let mut diag = 0.0;
    let mut acc = 0.0;
    for (k, v) in rows.row(m) {
        if k == m {
            diag = v;
        } else {
            acc += v * u[k];
        }
    }
    (-acc / diag, 1.0 / diag)
}

/// Parameter constraint violation.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub parameter: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.parameter, self.message)
    }
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Error {
        Error::Validation(v.to_string())
    }
}

fn violation(parameter: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        parameter: parameter.into(),
        message: message.into(),
    }
}

/// Checks every constraint of the active parameterization and reports the
/// first violation found.
pub fn validate(params: &ModelParams, graphs: &ModelGraphs) -> std::result::Result<(), Violation> {
    let j = graphs.responses();
    let e = graphs.response().n_edges();
    match params {
        ModelParams::Model1(p) => {
            for (name, len, expected) in [
                ("delta", p.delta.len(), j),
                ("lambda", p.lambda.len(), j),
                ("psi", p.psi.len(), e),
                ("phi", p.phi.len(), e),
            ] {
                if len != expected {
                    return Err(violation(name, format!("expected {expected} values, found {len}")));
                }
            }
            for (k, &d) in p.delta.iter().enumerate() {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(violation(
                        format!("delta[{}]", k + 1),
                        "variance component must be positive",
                    ));
                }
            }
            let r_edges = graphs.response().edges();
            let linkages = p
                .lambda
                .iter()
                .enumerate()
                .map(|(k, &v)| (format!("lambda[{}]", k + 1), v))
                .chain(
                    r_edges
                        .iter()
                        .zip(&p.psi)
                        .map(|((a, b), &v)| (format!("psi[{},{}]", a + 1, b + 1), v)),
                )
                .chain(
                    r_edges
                        .iter()
                        .zip(&p.phi)
                        .map(|((a, b), &v)| (format!("phi[{},{}]", a + 1, b + 1), v)),
                );
            for (name, v) in linkages {
                if !(v.abs() < 1.0) {
                    return Err(violation(
                        name,
                        "violates the sufficient condition |lambda|, |psi|, |phi| < 1",
                    ));
                }
            }
            if graphs.joint().graph().min_degree() == 0 {
                return Err(violation("graph", "Model 1 requires every joint degree d_ij >= 1"));
            }
            Ok(())
        }
        ModelParams::Model2(p) => {
            if !(p.rho.abs() < 1.0) {
                return Err(violation("rho", "spatial smoothing must satisfy |rho| < 1"));
            }
            check_graph_precision("omega", &p.omega, graphs.response())?;
            if graphs.spatial().min_degree() == 0 {
                return Err(violation("graph", "Model 2 requires every spatial degree >= 1"));
            }
            Ok(())
        }
        ModelParams::Model3(p) => {
            check_graph_precision("omega_r", &p.omega_r, graphs.response())?;
            if (p.omega_r[(0, 0)] - 1.0).abs() > 1e-12 {
                return Err(violation(
                    "omega_r[1,1]",
                    "identification constraint requires omega_r[1,1] = 1",
                ));
            }
            check_graph_precision("omega_s", &p.omega_s, graphs.spatial())?;
            if !(p.z > 0.0 && p.z.is_finite()) {
                return Err(violation("z", "auxiliary scale must be positive"));
            }
            Ok(())
        }
    }
}

/// Symmetric, supported on `I + C` of `g`, and positive definite.
fn check_graph_precision(name: &str, m: &DMatrix<f64>, g: &AdjacencyGraph) -> std::result::Result<(), Violation> {
    let n = g.n_vertices();
    if m.nrows() != n || m.ncols() != n {
        return Err(violation(name, format!("expected a {n}x{n} matrix")));
    }
    for r in 0..n {
        for c in 0..n {
            if m[(r, c)] != m[(c, r)] {
                return Err(violation(
                    format!("{name}[{},{}]", r + 1, c + 1),
                    "matrix is not symmetric",
                ));
            }
            if r != c && !g.has_edge(r, c) && m[(r, c)] != 0.0 {
                return Err(violation(
                    format!("{name}[{},{}]", r + 1, c + 1),
                    "nonzero entry off the graph pattern",
                ));
            }
        }
    }
    let sparse = SparseSymMatrix::from_dense(m).map_err(|e| violation(name, e.to_string()))?;
    if cholesky(&sparse).is_err() {
        return Err(violation(name, "matrix is not positive definite"));
    }
    Ok(())
}

/// Model 1 conditional specification.
pub fn model1_bt(p: &Model1Params, graphs: &ModelGraphs) -> Result<ConditionalSpec> {
    let (units, responses) = (graphs.units(), graphs.responses());
    let s = graphs.spatial();
    let r = graphs.response();
    let mut b_rows = Vec::with_capacity(graphs.dim());
    let mut tau2 = Vec::with_capacity(graphs.dim());
    for j in 0..responses {
        for i in 0..units {
            let d = graphs.joint().degree(i, j);
            if d == 0 {
                return Err(Error::Validation(format!(
                    "element ({}, {}) has joint degree zero",
                    i + 1,
                    j + 1
                )));
            }
            let d = d as f64;
            let mut row = Vec::new();
            for &ii in s.neighbors(i) {
                row.push((graphs.index(ii, j), p.lambda[j] / d));
            }
            for &jj in r.neighbors(j) {
                let e = r.edge_index(j, jj).expect("neighbor edge exists");
                let scale = (p.delta[j] / p.delta[jj]).sqrt();
                row.push((graphs.index(i, jj), p.psi[e] / d * scale));
                for &ii in s.neighbors(i) {
                    row.push((graphs.index(ii, jj), p.phi[e] / d * scale));
                }
            }
            b_rows.push(row);
            tau2.push(p.delta[j] / d);
        }
    }
    Ok(ConditionalSpec { b_rows, tau2 })
}

/// Inner matrix `M = D - Lambda ⊗ C_s - (Psi ∘ C_r) ⊗ I - (Phi ∘ C_r) ⊗ C_s`.
pub fn model1_inner(p: &Model1Params, graphs: &ModelGraphs) -> SparseSymMatrix {
    assemble_model1(p, graphs, false)
}

/// Model 1 joint precision `(Delta^{-1/2} ⊗ I) M (Delta^{-1/2} ⊗ I)`.
pub fn model1_precision(p: &Model1Params, graphs: &ModelGraphs) -> Result<SparseSymMatrix> {
    validate(&ModelParams::Model1(p.clone()), graphs)?;
    Ok(assemble_model1(p, graphs, true))
}

fn assemble_model1(p: &Model1Params, graphs: &ModelGraphs, scaled: bool) -> SparseSymMatrix {
    let (units, responses) = (graphs.units(), graphs.responses());
    let s = graphs.spatial();
    let r = graphs.response();
    let inv_sqrt: Vec<f64> = p
        .delta
        .iter()
        .map(|d| if scaled { 1.0 / d.sqrt() } else { 1.0 })
        .collect();
    let mut t = Vec::with_capacity(graphs.dim() + graphs.joint().graph().n_edges());
    for j in 0..responses {
        for i in 0..units {
            let m = graphs.index(i, j);
            let d = graphs.joint().degree(i, j) as f64;
            t.push((m, m, d * inv_sqrt[j] * inv_sqrt[j]));
            for &ii in s.neighbors(i) {
                let k = graphs.index(ii, j);
                if k > m {
                    t.push((m, k, -p.lambda[j] * inv_sqrt[j] * inv_sqrt[j]));
                }
            }
            for &jj in r.neighbors(j).iter().filter(|&&jj| jj > j) {
                let e = r.edge_index(j, jj).expect("neighbor edge exists");
                let w = inv_sqrt[j] * inv_sqrt[jj];
                t.push((m, graphs.index(i, jj), -p.psi[e] * w));
                for &ii in s.neighbors(i) {
                    t.push((m, graphs.index(ii, jj), -p.phi[e] * w));
                }
            }
        }
    }
    SparseSymMatrix::from_triplets(graphs.dim(), &t).expect("indices in range")
}

/// Model 2 conditional specification.
pub fn model2_bt(p: &Model2Params, graphs: &ModelGraphs) -> Result<ConditionalSpec> {
    let (units, responses) = (graphs.units(), graphs.responses());
    let s = graphs.spatial();
    let r = graphs.response();
    let mut b_rows = Vec::with_capacity(graphs.dim());
    let mut tau2 = Vec::with_capacity(graphs.dim());
    for j in 0..responses {
        let wjj = p.omega[(j, j)];
        if !(wjj > 0.0) {
            return Err(Error::Validation(format!("omega[{0},{0}] must be positive", j + 1)));
        }
        for i in 0..units {
            let di = s.degree(i);
            if di == 0 {
                return Err(Error::Validation(format!("spatial unit {} has degree zero", i + 1)));
            }
            let di = di as f64;
            let mut row = Vec::new();
            for &ii in s.neighbors(i) {
                row.push((graphs.index(ii, j), p.rho / di));
            }
            for &jj in r.neighbors(j) {
                let wjk = p.omega[(j, jj)];
                row.push((graphs.index(i, jj), -wjk / wjj));
                for &ii in s.neighbors(i) {
                    row.push((graphs.index(ii, jj), p.rho * wjk / (di * wjj)));
                }
            }
            b_rows.push(row);
            tau2.push(1.0 / (di * wjj));
        }
    }
    Ok(ConditionalSpec { b_rows, tau2 })
}

/// Model 2 joint precision `{Omega ∘ (I + C_r)} ⊗ (D_s - rho C_s)`.
pub fn model2_precision(p: &Model2Params, graphs: &ModelGraphs) -> Result<SparseSymMatrix> {
    validate(&ModelParams::Model2(p.clone()), graphs)?;
    Ok(assemble_kron(&p.omega, &graphs.car_precision(p.rho).to_dense(), graphs))
}

/// Model 3 conditional specification.
pub fn model3_bt(p: &Model3Params, graphs: &ModelGraphs) -> Result<ConditionalSpec> {
    let (units, responses) = (graphs.units(), graphs.responses());
    let s = graphs.spatial();
    let r = graphs.response();
    for (name, m) in [("omega_r", &p.omega_r), ("omega_s", &p.omega_s)] {
        if let Some(k) = (0..m.nrows()).find(|&k| !(m[(k, k)] > 0.0)) {
            return Err(Error::Validation(format!("{name}[{0},{0}] must be positive", k + 1)));
        }
    }
    let mut b_rows = Vec::with_capacity(graphs.dim());
    let mut tau2 = Vec::with_capacity(graphs.dim());
    for j in 0..responses {
        let rjj = p.omega_r[(j, j)];
        for i in 0..units {
            let sii = p.omega_s[(i, i)];
            let mut row = Vec::new();
            for &ii in s.neighbors(i) {
                row.push((graphs.index(ii, j), -p.omega_s[(i, ii)] / sii));
            }
            for &jj in r.neighbors(j) {
                let rjk = p.omega_r[(j, jj)];
                row.push((graphs.index(i, jj), -rjk / rjj));
                for &ii in s.neighbors(i) {
                    row.push((graphs.index(ii, jj), -(p.omega_s[(i, ii)] * rjk) / (sii * rjj)));
                }
            }
            b_rows.push(row);
            tau2.push(1.0 / (sii * rjj));
        }
    }
    Ok(ConditionalSpec { b_rows, tau2 })
}

/// Model 3 joint precision `{Omega_r ∘ (I + C_r)} ⊗ {Omega_s ∘ (I + C_s)}`.
pub fn model3_precision(p: &Model3Params, graphs: &ModelGraphs) -> Result<SparseSymMatrix> {
    for (m, g) in [(&p.omega_r, graphs.response()), (&p.omega_s, graphs.spatial())] {
        if m.nrows() != g.n_vertices() || m.ncols() != g.n_vertices() {
            return Err(Error::DimensionMismatch {
                expected: g.n_vertices(),
                found: m.nrows(),
            });
        }
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if r != c && !g.has_edge(r, c) && m[(r, c)] != 0.0 {
                    return Err(Error::OffPatternEntry { row: r, col: c });
                }
            }
        }
        cholesky(&SparseSymMatrix::from_dense(m)?)?;
    }
    Ok(assemble_kron(&p.omega_r, &p.omega_s, graphs))
}

/// `{R ∘ (I + C_r)} ⊗ {S ∘ (I + C_s)}` on the full joint pattern, explicit
/// zeros included so the pattern never changes.
fn assemble_kron(resp: &DMatrix<f64>, spat: &DMatrix<f64>, graphs: &ModelGraphs) -> SparseSymMatrix {
    let s_pairs = pattern_pairs(graphs.spatial());
    let r_pairs = pattern_pairs(graphs.response());
    let mut t = Vec::with_capacity(4 * s_pairs.len() * r_pairs.len());
    for &(j, jj) in &r_pairs {
        let rv = resp[(j, jj)];
        for &(i, ii) in &s_pairs {
            let v = rv * spat[(i, ii)];
            t.push((graphs.index(i, j), graphs.index(ii, jj), v));
            if j != jj && i != ii {
                t.push((graphs.index(ii, j), graphs.index(i, jj), v));
            }
        }
    }
    SparseSymMatrix::from_triplets(graphs.dim(), &t).expect("indices in range")
}

/// Conditional mean and variance of element `(i, j)` from the element-wise
/// conditional-mean expressions of each model (written out in regression
/// form, independent of the `B` assembly).
pub fn conditional_moments(params: &ModelParams, graphs: &ModelGraphs, u: &[f64], i: usize, j: usize) -> (f64, f64) {
    let s = graphs.spatial();
    let r = graphs.response();
    let at = |i: usize, j: usize| u[graphs.index(i, j)];
    let spatial_sum = |i: usize, j: usize| s.neighbors(i).iter().map(|&ii| at(ii, j)).sum::<f64>();
    match params {
        ModelParams::Model1(p) => {
            let d = graphs.joint().degree(i, j) as f64;
            let mut total = p.lambda[j] * spatial_sum(i, j);
            for &jj in r.neighbors(j) {
                let e = r.edge_index(j, jj).expect("edge");
                let scale = (p.delta[j] / p.delta[jj]).sqrt();
                total += p.psi[e] * scale * at(i, jj);
                total += p.phi[e] * scale * spatial_sum(i, jj);
            }
            (total / d, p.delta[j] / d)
        }
        ModelParams::Model2(p) => {
            let di = s.degree(i) as f64;
            let smooth = |j: usize| p.rho / di * spatial_sum(i, j);
            let mut mean = smooth(j);
            for &jj in r.neighbors(j) {
                mean -= p.omega[(j, jj)] / p.omega[(j, j)] * (at(i, jj) - smooth(jj));
            }
            (mean, 1.0 / (di * p.omega[(j, j)]))
        }
        ModelParams::Model3(p) => {
            let sii = p.omega_s[(i, i)];
            let smooth = |j: usize| {
                -s.neighbors(i)
                    .iter()
                    .map(|&ii| p.omega_s[(i, ii)] * at(ii, j))
                    .sum::<f64>()
                    / sii
            };
            let mut mean = smooth(j);
            for &jj in r.neighbors(j) {
                mean -= p.omega_r[(j, jj)] / p.omega_r[(j, j)] * (at(i, jj) - smooth(jj));
            }
            (mean, 1.0 / (sii * p.omega_r[(j, j)]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2() -> AdjacencyGraph {
        AdjacencyGraph::path(2)
    }

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn model1_independence_case() {
        let g = ModelGraphs::new(AdjacencyGraph::path(3), p2());
        let p = Model1Params {
            delta: vec![1.0, 1.0],
            lambda: vec![0.0, 0.0],
            psi: vec![0.0],
            phi: vec![0.0],
        };
        let bt = model1_bt(&p, &g).unwrap();
        assert!(bt.b_dense().iter().all(|&v| v == 0.0));
        for j in 0..2 {
            for i in 0..3 {
                let d = g.joint().degree(i, j) as f64;
                assert_eq!(bt.tau2[g.index(i, j)], 1.0 / d);
            }
        }
        let q = model1_precision(&p, &g).unwrap().to_dense();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(6, |m, _| {
            g.joint().graph().degree(m) as f64
        }));
        assert_eq!(q, d);
    }

    #[test]
    fn model1_hand_case_all_half() {
        let g = ModelGraphs::new(p2(), p2());
        let p = Model1Params {
            delta: vec![1.0, 1.0],
            lambda: vec![0.5, 0.5],
            psi: vec![0.5],
            phi: vec![0.5],
        };
        let bt = model1_bt(&p, &g).unwrap();
        let b = bt.b_dense();
        for r in 0..4 {
            for c in 0..4 {
                let expected = if r == c { 0.0 } else { 0.5 / 3.0 };
                assert!((b[(r, c)] - expected).abs() < 1e-15);
            }
            assert!((bt.tau2[r] - 1.0 / 3.0).abs() < 1e-15);
        }
        let q = model1_precision(&p, &g).unwrap().to_dense();
        for r in 0..4 {
            assert_eq!(q[(r, r)], 3.0);
            let off: f64 = (0..4).filter(|&c| c != r).map(|c| q[(r, c)].abs()).sum();
            assert!((off - 1.5).abs() < 1e-15);
        }
        let eig = q.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn model1_delta_scaling_is_directional() {
        let g = ModelGraphs::new(p2(), p2());
        let p = Model1Params {
            delta: vec![1.0, 4.0],
            lambda: vec![0.0, 0.0],
            psi: vec![0.6],
            phi: vec![0.0],
        };
        let b = model1_bt(&p, &g).unwrap().b_dense();
        // unit 0: response 1 is index 0, response 2 is index 2; d = 3
        assert!((b[(0, 2)] - 0.6 / 3.0 * 0.5).abs() < 1e-15);
        assert!((b[(2, 0)] - 0.6 / 3.0 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn model2_univariate_is_proper_car() {
        let s = AdjacencyGraph::grid(2, 3);
        let g = ModelGraphs::new(s.clone(), AdjacencyGraph::edgeless(1));
        let omega = 2.5;
        let p = Model2Params {
            rho: 0.7,
            omega: DMatrix::from_element(1, 1, omega),
        };
        let q = model2_precision(&p, &g).unwrap().to_dense();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            6,
            s.degrees().into_iter().map(|v| v as f64),
        ));
        let expected = (d - s.to_dense() * 0.7) * omega;
        assert!(max_abs_diff(&q, &expected) < 1e-14);
        let b = model2_bt(&p, &g).unwrap().b_dense();
        for r in 0..6 {
            for c in 0..6 {
                let expected = if s.has_edge(r, c) {
                    0.7 / s.degree(r) as f64
                } else {
                    0.0
                };
                assert!((b[(r, c)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn model2_rho_zero_is_omega_kron_degrees() {
        let s = AdjacencyGraph::path(3);
        let g = ModelGraphs::new(s.clone(), p2());
        let omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let p = Model2Params {
            rho: 0.0,
            omega: omega.clone(),
        };
        let q = model2_precision(&p, &g).unwrap().to_dense();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 1.0]));
        assert!(max_abs_diff(&q, &omega.kronecker(&d)) < 1e-15);
        // diagonal omega: B has no response coupling
        let diag = Model2Params {
            rho: 0.0,
            omega: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        };
        let bt = model2_bt(&diag, &g).unwrap();
        assert!(bt.b_dense().iter().all(|&v| v == 0.0));
        for j in 0..2 {
            for i in 0..3 {
                let expected = 1.0 / (diag.omega[(j, j)] * d[(i, i)]);
                assert!((bt.tau2[g.index(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn model2_two_by_two_matches_dense_kronecker() {
        let g = ModelGraphs::new(p2(), p2());
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let p = Model2Params {
            rho: 0.5,
            omega: omega.clone(),
        };
        let q = model2_precision(&p, &g).unwrap().to_dense();
        let car = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]);
        assert!(max_abs_diff(&q, &omega.kronecker(&car)) < 1e-15);
        assert!(q.symmetric_eigen().eigenvalues.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn model3_reduces_to_model2() {
        let s = AdjacencyGraph::grid(2, 2);
        let g = ModelGraphs::new(s.clone(), AdjacencyGraph::complete(3));
        let omega = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, -0.1, 0.2, 1.5, 0.3, -0.1, 0.3, 2.0]);
        let rho = 0.6;
        let m2 = model2_precision(
            &Model2Params {
                rho,
                omega: omega.clone(),
            },
            &g,
        )
        .unwrap();
        let m3 = model3_precision(
            &Model3Params {
                omega_r: omega,
                omega_s: g.car_precision(rho).to_dense(),
                z: 1.0,
            },
            &g,
        )
        .unwrap();
        assert!(m2.same_pattern(&m3));
        assert_eq!(m2.to_dense(), m3.to_dense());
    }

    #[test]
    fn model3_identity_factors_and_scale_invariance() {
        let g = ModelGraphs::new(AdjacencyGraph::path(3), p2());
        let id = Model3Params {
            omega_r: DMatrix::identity(2, 2),
            omega_s: DMatrix::identity(3, 3),
            z: 1.0,
        };
        assert_eq!(model3_precision(&id, &g).unwrap().to_dense(), DMatrix::identity(6, 6));
        let bt = model3_bt(&id, &g).unwrap();
        assert!(bt.b_dense().iter().all(|&v| v == 0.0));

        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let s = DMatrix::from_row_slice(3, 3, &[2.0, -0.5, 0.0, -0.5, 2.0, 0.7, 0.0, 0.7, 3.0]);
        let base = model3_precision(
            &Model3Params {
                omega_r: r.clone(),
                omega_s: s.clone(),
                z: 1.0,
            },
            &g,
        )
        .unwrap();
        let scaled = model3_precision(
            &Model3Params {
                omega_r: &r * 7.0,
                omega_s: &s / 7.0,
                z: 7.0,
            },
            &g,
        )
        .unwrap();
        assert!(max_abs_diff(&base.to_dense(), &scaled.to_dense()) < 1e-14);
    }

    #[test]
    fn model3_rejects_off_pattern_and_indefinite_factors() {
        let g = ModelGraphs::new(AdjacencyGraph::path(3), p2());
        let mut s = DMatrix::identity(3, 3);
        s[(0, 2)] = 0.1;
        s[(2, 0)] = 0.1;
        let p = Model3Params {
            omega_r: DMatrix::identity(2, 2),
            omega_s: s,
            z: 1.0,
        };
        assert!(matches!(model3_precision(&p, &g), Err(Error::OffPatternEntry { .. })));
        let bad = Model3Params {
            omega_r: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            omega_s: DMatrix::identity(3, 3),
            z: 1.0,
        };
        assert!(matches!(
            model3_precision(&bad, &g),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn validation_reports() {
        let g = ModelGraphs::new(AdjacencyGraph::path(3), p2());
        let m1 = ModelParams::Model1(Model1Params {
            delta: vec![1.0, 1.0],
            lambda: vec![1.0, 0.0],
            psi: vec![0.0],
            phi: vec![0.0],
        });
        let v = validate(&m1, &g).unwrap_err();
        assert_eq!(v.parameter, "lambda[1]");
        assert!(v.message.contains("sufficient condition"));

        let m2 = ModelParams::Model2(Model2Params {
            rho: -0.99,
            omega: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        });
        assert!(validate(&m2, &g).is_ok());

        let mut omega_r = DMatrix::identity(2, 2);
        omega_r[(0, 0)] = 2.0;
        let m3 = ModelParams::Model3(Model3Params {
            omega_r,
            omega_s: DMatrix::identity(3, 3),
            z: 1.0,
        });
        let v = validate(&m3, &g).unwrap_err();
        assert!(v.message.contains("identification"));
    }

    #[test]
    fn degenerate_graphs_rejected_for_models_1_and_2() {
        let g = ModelGraphs::new(AdjacencyGraph::edgeless(3), AdjacencyGraph::edgeless(2));
        let m1 = ModelParams::initial(ModelKind::Multifold, &g);
        assert_eq!(validate(&m1, &g).unwrap_err().parameter, "graph");
        let m2 = ModelParams::initial(ModelKind::Homogeneous, &g);
        assert_eq!(validate(&m2, &g).unwrap_err().parameter, "graph");
        let m3 = ModelParams::initial(ModelKind::Heterogeneous, &g);
        assert!(validate(&m3, &g).is_ok());
        assert!(model2_bt(
            &Model2Params {
                rho: 0.1,
                omega: DMatrix::identity(2, 2)
            },
            &g
        )
        .is_err());
    }

    #[test]
    fn parameter_counts() {
        let g = ModelGraphs::new(AdjacencyGraph::path(4), AdjacencyGraph::complete(3));
        assert_eq!(parameter_count(ModelKind::Multifold, &g), 12);
        assert_eq!(parameter_count(ModelKind::Homogeneous, &g), 7);
        assert_eq!(parameter_count(ModelKind::Heterogeneous, &g), 6 + 7);
        for kind in [ModelKind::Multifold, ModelKind::Homogeneous] {
            let p = ModelParams::initial(kind, &g);
            assert_eq!(p.values(&g).len(), parameter_count(kind, &g));
            assert_eq!(p.names(&g).len(), p.values(&g).len());
        }
        // Model 3 stores z plus the constrained omega_r[1,1]: one extra slot each way
        let p = ModelParams::initial(ModelKind::Heterogeneous, &g);
        assert_eq!(p.values(&g).len(), parameter_count(ModelKind::Heterogeneous, &g) + 1);
    }
}
