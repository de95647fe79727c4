#![allow(dead_code)]

use gmcar::precision::{Model1Params, Model2Params, Model3Params, ModelGraphs, ModelParams};
use gmcar::AdjacencyGraph;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Erdos-Renyi graph with edge probability `p`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p: f64) -> AdjacencyGraph {
    let edges: Vec<_> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|_| rng.random::<f64>() < p)
        .collect();
    AdjacencyGraph::from_edges(n, edges).unwrap()
}

/// Random spanning tree plus extra edges with probability `p`.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize, p: f64) -> AdjacencyGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p && !edges.contains(&(a, b)) {
                edges.push((a, b));
            }
        }
    }
    AdjacencyGraph::from_edges(n, edges).unwrap()
}

/// Diagonally dominant precision supported on `I + C` of `g`.
pub fn random_graph_precision<R: Rng>(rng: &mut R, g: &AdjacencyGraph) -> DMatrix<f64> {
    let n = g.n_vertices();
    let mut m = DMatrix::zeros(n, n);
    for (a, b) in g.edges() {
        let v = rng.random_range(-1.0..1.0);
        m[(a, b)] = v;
        m[(b, a)] = v;
    }
    for r in 0..n {
        let off: f64 = (0..n).filter(|&c| c != r).map(|c| f64::abs(m[(r, c)])).sum();
        m[(r, r)] = off + rng.random_range(0.2..1.5);
    }
    m
}

pub fn random_model1<R: Rng>(rng: &mut R, graphs: &ModelGraphs) -> ModelParams {
    let j = graphs.responses();
    let e = graphs.response().n_edges();
    let mut link = |n: usize| (0..n).map(|_| rng.random_range(-0.99..0.99)).collect::<Vec<f64>>();
    let lambda = link(j);
    let psi = link(e);
    let phi = link(e);
    ModelParams::Model1(Model1Params {
        delta: (0..j).map(|_| rng.random_range(0.2..3.0)).collect(),
        lambda,
        psi,
        phi,
    })
}

pub fn random_model2<R: Rng>(rng: &mut R, graphs: &ModelGraphs) -> ModelParams {
    ModelParams::Model2(Model2Params {
        rho: rng.random_range(-0.99..0.99),
        omega: random_graph_precision(rng, graphs.response()),
    })
}

pub fn random_model3<R: Rng>(rng: &mut R, graphs: &ModelGraphs) -> ModelParams {
    let mut omega_r = random_graph_precision(rng, graphs.response());
    omega_r /= omega_r[(0, 0)];
    omega_r[(0, 0)] = 1.0;
    ModelParams::Model3(Model3Params {
        omega_r,
        omega_s: random_graph_precision(rng, graphs.spatial()),
        z: rng.random_range(0.5..2.0),
    })
}

fn diag(v: impl IntoIterator<Item = f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(v.into_iter().collect()))
}

/// Dense Kronecker oracle of the full joint adjacency.
pub fn joint_adjacency_oracle(spatial: &AdjacencyGraph, response: &AdjacencyGraph) -> DMatrix<f64> {
    let cs = spatial.to_dense();
    let cr = response.to_dense();
    let is = DMatrix::identity(cs.nrows(), cs.nrows());
    let ir = DMatrix::identity(cr.nrows(), cr.nrows());
    cr.kronecker(&cs) + cr.kronecker(&is) + ir.kronecker(&cs)
}

/// Dense closed-form joint precision of each model.
pub fn precision_oracle(params: &ModelParams, graphs: &ModelGraphs) -> DMatrix<f64> {
    let cs = graphs.spatial().to_dense();
    let cr = graphs.response().to_dense();
    let n_s = cs.nrows();
    let n_r = cr.nrows();
    let is = DMatrix::identity(n_s, n_s);
    match params {
        ModelParams::Model1(p) => {
            let c = joint_adjacency_oracle(graphs.spatial(), graphs.response());
            let d = diag(c.row_iter().map(|r| r.sum()));
            let mut psi = DMatrix::zeros(n_r, n_r);
            let mut phi = DMatrix::zeros(n_r, n_r);
            for (k, (a, b)) in graphs.response().edges().into_iter().enumerate() {
                psi[(a, b)] = p.psi[k];
                psi[(b, a)] = p.psi[k];
                phi[(a, b)] = p.phi[k];
                phi[(b, a)] = p.phi[k];
            }
            let lambda = diag(p.lambda.iter().copied());
            let m = d - lambda.kronecker(&cs) - psi.kronecker(&is) - phi.kronecker(&cs);
            let scale = diag(p.delta.iter().map(|d| 1.0 / d.sqrt())).kronecker(&is);
            &scale * m * &scale
        }
        ModelParams::Model2(p) => {
            let ds = diag(cs.row_iter().map(|r| r.sum()));
            p.omega.kronecker(&(ds - cs * p.rho))
        }
        ModelParams::Model3(p) => p.omega_r.kronecker(&p.omega_s),
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
