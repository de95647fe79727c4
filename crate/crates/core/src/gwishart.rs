//! G-Wishart distribution `GWis(b, V)` on precision matrices supported on a
//! graph: density proportional to `|K|^{(b-2)/2} exp(-tr(V K) / 2)`.
//!
//! Sampling uses a block Gibbs scan over the maximal cliques. Given the
//! entries outside clique `C`, the Schur complement
//! `K_CC - K_CR K_RR^{-1} K_RC` is Wishart with `b + |C| - 1` degrees of
//! freedom and scale `(V_CC)^{-1}`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{AdjacencyGraph, CliqueSet};
use crate::sparse::{cholesky, SparseSymMatrix};

const JITTER_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GWishartParams {
    df: f64,
    scale: DMatrix<f64>,
    graph: AdjacencyGraph,
}

impl GWishartParams {
    pub fn new(df: f64, scale: DMatrix<f64>, graph: AdjacencyGraph) -> Result<Self> {
        if !(df > 2.0 && df.is_finite()) {
            return Err(Error::Validation(format!(
                "G-Wishart degrees of freedom must exceed 2, got {df}"
            )));
        }
        let n = graph.n_vertices();
        if scale.nrows() != n || scale.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: scale.nrows(),
            });
        }
        if scale != scale.transpose() {
            return Err(Error::Validation("G-Wishart scale matrix must be symmetric".into()));
        }
        if Cholesky::new(scale.clone()).is_none() {
            return Err(Error::Validation(
                "G-Wishart scale matrix must be positive definite".into(),
            ));
        }
        Ok(GWishartParams { df, scale, graph })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn graph(&self) -> &AdjacencyGraph {
        &self.graph
    }

    /// Conjugate update after `n` observations with scatter matrix `s`:
    /// `GWis(b + n, V + S)`.
    pub fn posterior(&self, scatter: &DMatrix<f64>, n: usize) -> Result<Self> {
        let dim = self.scale.nrows();
        if scatter.nrows() != dim || scatter.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: scatter.nrows(),
            });
        }
        Ok(GWishartParams {
            df: self.df + n as f64,
            scale: &self.scale + scatter,
            graph: self.graph.clone(),
        })
    }

    /// `((b - 2) / 2) log|K| - tr(V K) / 2`, without the normalizing constant.
    pub fn log_density_unnorm(&self, k: &DMatrix<f64>) -> Result<f64> {
        check_pattern(k, &self.graph)?;
        let factor = cholesky(&SparseSymMatrix::from_dense(k)?)?;
        let trace = self.scale.component_mul(k).sum();
        Ok(0.5 * (self.df - 2.0) * factor.log_det() - 0.5 * trace)
    }
}

fn check_pattern(k: &DMatrix<f64>, g: &AdjacencyGraph) -> Result<()> {
    let n = g.n_vertices();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: k.nrows(),
        });
    }
    for r in 0..n {
        for c in 0..n {
            if r != c && k[(r, c)] != 0.0 && !g.has_edge(r, c) {
                return Err(Error::OffPatternEntry { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Wishart draw with `E[W] = df * scale` (Bartlett construction).
pub fn wishart_sample<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !(df > p as f64 - 1.0) {
        return Err(Error::Validation(format!(
            "Wishart degrees of freedom {df} must exceed dimension - 1 = {}",
            p as f64 - 1.0
        )));
    }
    let chol = Cholesky::new(scale.clone())
        .ok_or_else(|| Error::Validation("Wishart scale matrix must be positive definite".into()))?;
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = chol.l() * a;
    Ok(symmetrize(&la * la.transpose()))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn dense_inverse(k: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(k.clone()).map(|c| c.inverse())
}

/// Inverse of `k`, retrying with growing diagonal jitter.
fn covariance_with_jitter(k: &mut DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(inv) = dense_inverse(k) {
        return Ok(inv);
    }
    let base = k.diagonal().amax().max(f64::MIN_POSITIVE);
    for attempt in 0..JITTER_RETRIES {
        let jitter = base * 1e-10 * 100f64.powi(attempt as i32);
        for i in 0..k.nrows() {
            k[(i, i)] += jitter;
        }
        if let Some(inv) = dense_inverse(k) {
            log::warn!("G-Wishart state needed diagonal jitter {jitter:e}");
            return Ok(inv);
        }
    }
    Err(Error::NotPositiveDefinite {
        step: 0,
        pivot: f64::NAN,
    })
}

/// Runs `sweeps` block-Gibbs scans targeting `GWis(b, V)` starting from
/// `state`, which must be positive definite and supported on the graph.
/// Cliques are visited in their stored (sorted) order.
pub fn gwishart_sample<R: Rng + ?Sized>(
    params: &GWishartParams,
    cliques: &CliqueSet,
    state: &DMatrix<f64>,
    sweeps: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_pattern(state, &params.graph)?;
    let n = state.nrows();
    let mut k = state.clone();
    for _ in 0..sweeps.max(1) {
        // refreshed each sweep so rank-|C| updates cannot accumulate drift
        let mut sigma = covariance_with_jitter(&mut k)?;
        for clique in cliques.iter() {
            let c = clique.len();
            let v_cc = DMatrix::from_fn(c, c, |a, b| params.scale[(clique[a], clique[b])]);
            let v_inv = dense_inverse(&v_cc)
                .ok_or_else(|| Error::Numerical("clique block of the scale matrix is singular".into()))?;
            let sigma_cc = DMatrix::from_fn(c, c, |a, b| sigma[(clique[a], clique[b])]);
            let schur_old = dense_inverse(&sigma_cc).ok_or(Error::NotPositiveDefinite {
                step: 0,
                pivot: f64::NAN,
            })?;
            let schur_new = wishart_sample(params.df + c as f64 - 1.0, &symmetrize(v_inv), rng)?;
            let delta = symmetrize(&schur_new - &schur_old);
            for a in 0..c {
                for b in 0..c {
                    k[(clique[a], clique[b])] += delta[(a, b)];
                }
            }
            // Woodbury: sigma <- sigma - sigma[:, C] (I + delta sigma_CC)^{-1} delta sigma[C, :]
            let inner = DMatrix::identity(c, c) + &delta * &sigma_cc;
            let solved = inner
                .lu()
                .solve(&delta)
                .ok_or_else(|| Error::Numerical("singular clique update".into()))?;
            let sigma_col = DMatrix::from_fn(n, c, |r, b| sigma[(r, clique[b])]);
            let correction = &sigma_col * solved * sigma_col.transpose();
            sigma -= correction;
        }
        k = symmetrize(k);
        for r in 0..n {
            for col in 0..n {
                if r != col && !params.graph.has_edge(r, col) {
                    k[(r, col)] = 0.0;
                }
            }
        }
    }
    if Cholesky::new(k.clone()).is_none() {
        return Err(Error::NotPositiveDefinite {
            step: 0,
            pivot: f64::NAN,
        });
    }
    Ok(k)
}
