//! Hierarchical MCMC for binomial-logit / Poisson-lognormal counts with an
//! MCAR prior on the centered effects `gamma_ij = beta_j + u_ij`.
//!
//! Each iteration is a systematic scan: element-wise MH on `gamma`, a
//! collapsed joint Gaussian draw of `beta`, then the model-specific
//! hyperparameter block.

use std::fs;
use std::path::Path;
use std::thread;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ArealDataset;
use crate::error::{Error, Result};
use crate::graph::{maximal_cliques, nu, CliqueSet};
use crate::gwishart::{gwishart_sample, GWishartParams};
use crate::kernels::{ars_sample, MhKernel, DEFAULT_ADAPT_WINDOW};
use crate::precision::{
    model1_inner, validate, Model1Params, Model2Params, Model3Params, ModelGraphs, ModelKind, ModelParams,
};
use crate::sparse::{FullRows, Ordering, SparseSymMatrix, SymbolicCholesky};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A scalar shared by all responses or one value per response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerResponse {
    Common(f64),
    Each(Vec<f64>),
}

impl PerResponse {
    fn resolve(&self, name: &str, responses: usize) -> Result<Vec<f64>> {
        let v = match self {
            PerResponse::Common(x) => vec![*x; responses],
            PerResponse::Each(v) if v.len() == responses => v.clone(),
            PerResponse::Each(v) => {
                return Err(Error::Config(format!(
                    "{name}: expected {responses} values, found {}",
                    v.len()
                )))
            }
        };
        if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        Ok(v)
    }
}

/// Prior hyperparameters. Scale matrices default to the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Variance `tau0^2` of the normal prior on each intercept.
    pub beta_variance: f64,
    /// Inverse-gamma shape of the Model 1 variance components.
    pub delta_shape: PerResponse,
    /// Inverse-gamma rate of the Model 1 variance components.
    pub delta_rate: PerResponse,
    /// Model 2 response precision prior `GWis(b, V)`.
    pub omega_df: f64,
    pub omega_scale: Option<Vec<Vec<f64>>>,
    /// Model 3 response precision prior.
    pub omega_r_df: f64,
    pub omega_r_scale: Option<Vec<Vec<f64>>>,
    /// Model 3 spatial precision prior.
    pub omega_s_df: f64,
    pub omega_s_scale: Option<Vec<Vec<f64>>>,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            beta_variance: 1000.0,
            delta_shape: PerResponse::Common(0.1),
            delta_rate: PerResponse::Common(0.1),
            omega_df: 3.0,
            omega_scale: None,
            omega_r_df: 3.0,
            omega_r_scale: None,
            omega_s_df: 3.0,
            omega_s_scale: None,
        }
    }
}

fn scale_matrix(name: &str, rows: &Option<Vec<Vec<f64>>>, n: usize) -> Result<DMatrix<f64>> {
    match rows {
        None => Ok(DMatrix::identity(n, n)),
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Config(format!("{name} must be a {n}x{n} matrix")));
            }
            Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
        }
    }
}

#[derive(Clone, Debug)]
struct ResolvedPriors {
    beta_precision: f64,
    delta_shape: Vec<f64>,
    delta_rate: Vec<f64>,
    omega: Option<GWishartParams>,
    omega_r: Option<GWishartParams>,
    omega_s: Option<GWishartParams>,
}

impl Priors {
    fn resolve(&self, kind: ModelKind, graphs: &ModelGraphs) -> Result<ResolvedPriors> {
        if !(self.beta_variance > 0.0 && self.beta_variance.is_finite()) {
            return Err(Error::Config("beta_variance must be positive".into()));
        }
        let j = graphs.responses();
        let gw = |name: &str, df: f64, scale: &Option<Vec<Vec<f64>>>, g: &crate::graph::AdjacencyGraph| {
            GWishartParams::new(df, scale_matrix(name, scale, g.n_vertices())?, g.clone())
                .map_err(|e| Error::Config(format!("{name}: {e}")))
        };
        let mut out = ResolvedPriors {
            beta_precision: 1.0 / self.beta_variance,
            delta_shape: vec![],
            delta_rate: vec![],
            omega: None,
            omega_r: None,
            omega_s: None,
        };
        match kind {
            ModelKind::Multifold => {
                out.delta_shape = self.delta_shape.resolve("delta_shape", j)?;
                out.delta_rate = self.delta_rate.resolve("delta_rate", j)?;
            }
            ModelKind::Homogeneous => {
                out.omega = Some(gw("omega", self.omega_df, &self.omega_scale, graphs.response())?);
            }
            ModelKind::Heterogeneous => {
                out.omega_r = Some(gw("omega_r", self.omega_r_df, &self.omega_r_scale, graphs.response())?);
                out.omega_s = Some(gw("omega_s", self.omega_s_df, &self.omega_s_scale, graphs.spatial())?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Block-Gibbs scans per G-Wishart update.
    pub gwishart_sweeps: usize,
    pub adapt_window: usize,
    pub priors: Priors,
    /// Holds the hyperparameters at these values instead of sampling them.
    pub fixed_hyper: Option<ModelParams>,
}

impl FitConfig {
    pub fn new(model: ModelKind) -> Self {
        FitConfig {
            model,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            gwishart_sweeps: 1,
            adapt_window: DEFAULT_ADAPT_WINDOW,
            priors: Priors::default(),
            fixed_hyper: None,
        }
    }

    pub fn validate(&self, graphs: &ModelGraphs) -> Result<()> {
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.gwishart_sweeps == 0 || self.adapt_window == 0 {
            return Err(Error::Config(
                "thin, gwishart_sweeps and adapt_window must be positive".into(),
            ));
        }
        self.priors.resolve(self.model, graphs)?;
        let start = self
            .fixed_hyper
            .clone()
            .unwrap_or_else(|| ModelParams::initial(self.model, graphs));
        if start.kind() != self.model {
            return Err(Error::Config(format!(
                "fixed parameters are for {}, not {}",
                start.kind(),
                self.model
            )));
        }
        validate(&start, graphs)?;
        Ok(())
    }
}

/// Everything needed to continue a chain bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub chain: usize,
    pub iteration: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub hyper: ModelParams,
    rng: ChaCha8Rng,
    gamma_kernels: Vec<MhKernel>,
    /// Model 1: lambda (J), psi (E), phi (E), then log-delta fallbacks (J).
    /// Model 2: rho.
    hyper_kernels: Vec<MhKernel>,
}

impl ChainState {
    pub fn u(&self) -> Vec<f64> {
        let units = self.gamma.len() / self.beta.len();
        self.gamma
            .iter()
            .enumerate()
            .map(|(m, g)| g - self.beta[m / units])
            .collect()
    }

    pub fn gamma_acceptance(&self) -> f64 {
        let n = self.gamma_kernels.len().max(1) as f64;
        self.gamma_kernels.iter().map(MhKernel::acceptance_rate).sum::<f64>() / n
    }

    pub fn hyper_acceptance(&self) -> Vec<f64> {
        self.hyper_kernels.iter().map(MhKernel::acceptance_rate).collect()
    }
}

/// Stored post-burn-in draws, possibly from several chains.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub units: usize,
    pub responses: usize,
    pub hyper_names: Vec<String>,
    pub chain: Vec<usize>,
    pub iteration: Vec<usize>,
    pub beta: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub hyper: Vec<Vec<f64>>,
    pub deviance: Vec<f64>,
}

impl PosteriorSamples {
    pub fn new(units: usize, responses: usize, hyper_names: Vec<String>) -> Self {
        PosteriorSamples {
            units,
            responses,
            hyper_names,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.deviance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deviance.is_empty()
    }

    /// `gamma = beta_j + u_ij` for draw `d`.
    pub fn gamma(&self, d: usize) -> Vec<f64> {
        self.u[d]
            .iter()
            .enumerate()
            .map(|(m, u)| self.beta[d][m / self.units] + u)
            .collect()
    }

    /// Column names of [`row`](Self::row): intercepts, effects, hyperparameters.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.responses).map(|j| format!("beta[{j}]")).collect();
        for j in 1..=self.responses {
            for i in 1..=self.units {
                names.push(format!("u[{i},{j}]"));
            }
        }
        names.extend(self.hyper_names.iter().cloned());
        names
    }

    pub fn row(&self, d: usize) -> Vec<f64> {
        let mut row = self.beta[d].clone();
        row.extend(&self.u[d]);
        row.extend(&self.hyper[d]);
        row
    }

    /// Trace of one named parameter.
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let col = self.parameter_names().iter().position(|n| n == name)?;
        Some((0..self.len()).map(|d| self.row(d)[col]).collect())
    }

    pub fn append(&mut self, other: PosteriorSamples) -> Result<()> {
        if self.units != other.units || self.responses != other.responses || self.hyper_names != other.hyper_names {
            return Err(Error::Validation("cannot merge samples from different models".into()));
        }
        self.chain.extend(other.chain);
        self.iteration.extend(other.iteration);
        self.beta.extend(other.beta);
        self.u.extend(other.u);
        self.hyper.extend(other.hyper);
        self.deviance.extend(other.deviance);
        Ok(())
    }
}

/// Block sums `H_jj' = 1' Q_jj' 1` of a joint precision.
pub fn collapse_blocks(q: &SparseSymMatrix, units: usize, responses: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(responses, responses);
    for (r, c, v) in q.iter_upper() {
        let (a, b) = (r / units, c / units);
        h[(a, b)] += v;
        if r != c {
            h[(b, a)] += v;
        }
    }
    h
}

/// Mean and covariance of `beta | gamma`:
/// `N((H + I / tau0^2)^{-1} gamma**, (H + I / tau0^2)^{-1})` with
/// `gamma** = block sums of Q gamma`.
pub fn beta_full_conditional(
    q: &SparseSymMatrix,
    gamma: &[f64],
    units: usize,
    responses: usize,
    beta_variance: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let h = collapse_blocks(q, units, responses);
    let (chol, collapsed) = beta_system(&h, q, gamma, units, responses, 1.0 / beta_variance)?;
    Ok((chol.solve(&collapsed), chol.inverse()))
}

fn beta_system(
    h: &DMatrix<f64>,
    q: &SparseSymMatrix,
    gamma: &[f64],
    units: usize,
    responses: usize,
    beta_precision: f64,
) -> Result<(Cholesky<f64, nalgebra::Dyn>, DVector<f64>)> {
    let q_gamma = q.mul_vec(gamma)?;
    let collapsed = DVector::from_fn(responses, |j, _| q_gamma[j * units..(j + 1) * units].iter().sum());
    let a = h + DMatrix::identity(responses, responses) * beta_precision;
    let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite {
        step: 0,
        pivot: f64::NAN,
    })?;
    Ok((chol, collapsed))
}

/// Prior conditional mean and variance of `gamma_m` given all other
/// elements: `beta_j - sum_{k != m} Q_mk (gamma_k - beta_{j(k)}) / Q_mm`.
pub fn gamma_prior_conditional(rows: &FullRows, gamma: &[f64], beta: &[f64], units: usize, m: usize) -> (f64, f64) {
    let mut diag = 0.0;
    let mut acc = 0.0;
    for (k, v) in rows.row(m) {
        if k == m {
            diag = v;
        } else {
            acc += v * (gamma[k] - beta[k / units]);
        }
    }
    (beta[m / units] - acc / diag, 1.0 / diag)
}

/// Cross products `U'U` and `U'CU` of the columns of `U`.
fn cross_products(u: &[f64], graphs: &ModelGraphs) -> (DMatrix<f64>, DMatrix<f64>) {
    let (units, responses) = (graphs.units(), graphs.responses());
    let col = |j: usize| &u[j * units..(j + 1) * units];
    let uu = DMatrix::from_fn(responses, responses, |a, b| {
        col(a).iter().zip(col(b)).map(|(x, y)| x * y).sum()
    });
    let edges = graphs.spatial().edges();
    let ucu = DMatrix::from_fn(responses, responses, |a, b| {
        let (ua, ub) = (col(a), col(b));
        edges.iter().map(|&(p, q)| ua[p] * ub[q] + ua[q] * ub[p]).sum()
    });
    (uu, ucu)
}

/// `U' A U` for a dense `units x units` matrix `A`.
fn quad_columns(a: &DMatrix<f64>, u: &[f64], units: usize, responses: usize) -> DMatrix<f64> {
    let um = DMatrix::from_column_slice(units, responses, u);
    let s = um.transpose() * a * &um;
    (&s + s.transpose()) * 0.5
}

/// `U B U'` for a dense `responses x responses` matrix `B`.
fn quad_rows(b: &DMatrix<f64>, u: &[f64], units: usize, responses: usize) -> DMatrix<f64> {
    let um = DMatrix::from_column_slice(units, responses, u);
    let s = &um * b * um.transpose();
    (&s + s.transpose()) * 0.5
}

/// Precision-dependent quantities refreshed whenever the hyperparameters
/// change.
struct PrecisionCache {
    q: SparseSymMatrix,
    rows: FullRows,
    h: DMatrix<f64>,
}

impl PrecisionCache {
    fn build(hyper: &ModelParams, graphs: &ModelGraphs) -> Self {
        let q = hyper.precision_unchecked(graphs);
        let rows = q.full_rows();
        let h = collapse_blocks(&q, graphs.units(), graphs.responses());
        PrecisionCache { q, rows, h }
    }
}

/// A single MCMC chain over a dataset.
pub struct Chain<'a> {
    data: &'a ArealDataset,
    graphs: &'a ModelGraphs,
    config: &'a FitConfig,
    priors: ResolvedPriors,
    state: ChainState,
    cache: PrecisionCache,
    inner_symbolic: Option<SymbolicCholesky>,
    car_symbolic: Option<SymbolicCholesky>,
    response_cliques: Option<CliqueSet>,
    spatial_cliques: Option<CliqueSet>,
}

fn initial_gamma(data: &ArealDataset) -> Vec<f64> {
    use crate::data::Likelihood;
    let units = data.units();
    data.y()
        .iter()
        .zip(data.exposure())
        .enumerate()
        .map(|(m, (&y, &e))| {
            let y = y as f64;
            let g = match data.likelihood(m / units) {
                Likelihood::BinomialLogit => ((y + 0.5) / (e - y + 0.5)).ln(),
                Likelihood::PoissonLognormal => ((y + 0.5) / e).ln(),
            };
            g.clamp(-10.0, 10.0)
        })
        .collect()
}

/// Seeds chain `k` of a run: the base seed selects the key, the chain index
/// the stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

impl<'a> Chain<'a> {
    pub fn new(data: &'a ArealDataset, graphs: &'a ModelGraphs, config: &'a FitConfig, chain: usize) -> Result<Self> {
        check_dims(data, graphs)?;
        config.validate(graphs)?;
        let hyper = config
            .fixed_hyper
            .clone()
            .unwrap_or_else(|| ModelParams::initial(config.model, graphs));
        let gamma = initial_gamma(data);
        let units = data.units();
        let beta = (0..data.responses())
            .map(|j| gamma[j * units..(j + 1) * units].iter().sum::<f64>() / units as f64)
            .collect();
        let window = config.adapt_window;
        let gamma_kernels = vec![MhKernel::new(0.5).with_window(window); gamma.len()];
        let linkage = MhKernel::bounded(0.1, -1.0, 1.0).with_window(window);
        let j = graphs.responses();
        let e = graphs.response().n_edges();
        let hyper_kernels = match config.model {
            ModelKind::Multifold => {
                let mut k = vec![linkage; j + 2 * e];
                k.extend(vec![MhKernel::new(0.3).with_window(window); j]);
                k
            }
            ModelKind::Homogeneous => vec![linkage],
            ModelKind::Heterogeneous => vec![],
        };
        let state = ChainState {
            chain,
            iteration: 0,
            gamma,
            beta,
            hyper,
            rng: chain_rng(config.seed, chain),
            gamma_kernels,
            hyper_kernels,
        };
        Self::resume(data, graphs, config, state)
    }

    /// Continues from a saved state.
    pub fn resume(
        data: &'a ArealDataset,
        graphs: &'a ModelGraphs,
        config: &'a FitConfig,
        state: ChainState,
    ) -> Result<Self> {
        check_dims(data, graphs)?;
        config.validate(graphs)?;
        if state.hyper.kind() != config.model || state.gamma.len() != graphs.dim() {
            return Err(Error::Config("checkpoint does not match the configured model".into()));
        }
        let priors = config.priors.resolve(config.model, graphs)?;
        let cache = PrecisionCache::build(&state.hyper, graphs);
        let mut chain = Chain {
            data,
            graphs,
            config,
            priors,
            state,
            cache,
            inner_symbolic: None,
            car_symbolic: None,
            response_cliques: None,
            spatial_cliques: None,
        };
        match config.model {
            ModelKind::Multifold => {
                if let ModelParams::Model1(p) = &chain.state.hyper {
                    chain.inner_symbolic = Some(SymbolicCholesky::analyze(
                        &model1_inner(p, graphs),
                        Ordering::MinimumDegree,
                    ));
                }
            }
            ModelKind::Homogeneous => {
                chain.car_symbolic = Some(SymbolicCholesky::analyze(
                    &graphs.car_precision(0.0),
                    Ordering::MinimumDegree,
                ));
                chain.response_cliques = Some(maximal_cliques(graphs.response()));
            }
            ModelKind::Heterogeneous => {
                chain.response_cliques = Some(maximal_cliques(graphs.response()));
                chain.spatial_cliques = Some(maximal_cliques(graphs.spatial()));
            }
        }
        Ok(chain)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    pub fn precision(&self) -> &SparseSymMatrix {
        &self.cache.q
    }

    /// One full systematic scan.
    pub fn step(&mut self) -> Result<()> {
        let it = self.state.iteration;
        let with_context = |e: Error| match e {
            Error::Numerical(msg) => Error::Numerical(format!("iteration {}: {msg}", it + 1)),
            other => other,
        };
        self.update_gamma().map_err(with_context)?;
        self.update_beta().map_err(with_context)?;
        if self.config.fixed_hyper.is_none() {
            self.update_hyper().map_err(with_context)?;
            self.cache = PrecisionCache::build(&self.state.hyper, self.graphs);
        }
        self.state.iteration += 1;
        if self.state.iteration == self.config.burn_in {
            for k in self
                .state
                .gamma_kernels
                .iter_mut()
                .chain(self.state.hyper_kernels.iter_mut())
            {
                k.freeze();
            }
        }
        Ok(())
    }

    /// Runs until `iterations` total, appending kept draws to `samples`.
    pub fn run(&mut self, samples: &mut PosteriorSamples) -> Result<()> {
        while self.state.iteration < self.config.iterations {
            self.step()?;
            let it = self.state.iteration;
            if it > self.config.burn_in && (it - self.config.burn_in).is_multiple_of(self.config.thin) {
                self.record(samples);
            }
        }
        Ok(())
    }

    fn record(&self, samples: &mut PosteriorSamples) {
        samples.chain.push(self.state.chain);
        samples.iteration.push(self.state.iteration);
        samples.beta.push(self.state.beta.clone());
        samples.u.push(self.state.u());
        samples.hyper.push(self.state.hyper.values(self.graphs));
        samples.deviance.push(self.data.deviance(&self.state.gamma));
    }

    pub fn empty_samples(&self) -> PosteriorSamples {
        PosteriorSamples::new(
            self.graphs.units(),
            self.graphs.responses(),
            self.state.hyper.names(self.graphs),
        )
    }

    /// One MH scan over all `gamma_ij`.
    pub fn update_gamma(&mut self) -> Result<()> {
        let units = self.graphs.units();
        let ChainState {
            gamma,
            beta,
            rng,
            gamma_kernels,
            ..
        } = &mut self.state;
        for m in 0..gamma.len() {
            let (mean, var) = gamma_prior_conditional(&self.cache.rows, gamma, beta, units, m);
            let data = self.data;
            let target = |g: f64| data.loglik_at(m, g) - 0.5 * (g - mean) * (g - mean) / var;
            let current = gamma[m];
            let out = gamma_kernels[m].step(target, current, target(current), rng)?;
            gamma[m] = out.value;
        }
        Ok(())
    }

    /// Joint draw of the intercepts given `gamma`.
    pub fn update_beta(&mut self) -> Result<()> {
        let (units, responses) = (self.graphs.units(), self.graphs.responses());
        let (chol, collapsed) = beta_system(
            &self.cache.h,
            &self.cache.q,
            &self.state.gamma,
            units,
            responses,
            self.priors.beta_precision,
        )?;
        let mean = chol.solve(&collapsed);
        let z = DVector::from_fn(responses, |_, _| StandardNormal.sample(&mut self.state.rng));
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numerical("singular intercept system".into()))?;
        self.state.beta = (mean + noise).iter().copied().collect();
        Ok(())
    }

    pub fn update_hyper(&mut self) -> Result<()> {
        match self.config.model {
            ModelKind::Multifold => self.update_model1(),
            ModelKind::Homogeneous => self.update_model2(),
            ModelKind::Heterogeneous => self.update_model3(),
        }
    }

    /// Variance components by ARS on `delta^{-1/2}`, then linkage parameters
    /// by MH on `(-1, 1)`.
    pub fn update_model1(&mut self) -> Result<()> {
        let graphs = self.graphs;
        let (units, responses) = (graphs.units(), graphs.responses());
        let r = graphs.response();
        let r_edges = r.edges();
        let u = self.state.u();
        let (uu, ucu) = cross_products(&u, graphs);
        let udu: Vec<f64> = (0..responses)
            .map(|j| {
                (0..units)
                    .map(|i| graphs.joint().degree(i, j) as f64 * u[graphs.index(i, j)].powi(2))
                    .sum()
            })
            .collect();
        let mut p = match &self.state.hyper {
            ModelParams::Model1(p) => p.clone(),
            _ => unreachable!("model kind checked at construction"),
        };
        let n_link = responses + 2 * r_edges.len();

        for j in 0..responses {
            let q = udu[j] - p.lambda[j] * ucu[(j, j)];
            let c: f64 = r
                .neighbors(j)
                .iter()
                .map(|&jj| {
                    let e = r.edge_index(j, jj).expect("edge");
                    (p.psi[e] * uu[(j, jj)] + p.phi[e] * ucu[(j, jj)]) / p.delta[jj].sqrt()
                })
                .sum();
            let power = units as f64 + 2.0 * self.priors.delta_shape[j] - 1.0;
            let curvature = q / 2.0 + self.priors.delta_rate[j];
            let log_f = |x: f64| power * x.ln() - x * x * curvature + c * x;
            let dlog_f = |x: f64| power / x - 2.0 * x * curvature + c;
            let x0 = 1.0 / p.delta[j].sqrt();
            match ars_sample(
                log_f,
                dlog_f,
                0.0,
                f64::INFINITY,
                &[0.5 * x0, x0, 2.0 * x0],
                &mut self.state.rng,
            ) {
                Ok(x) => p.delta[j] = 1.0 / (x * x),
                Err(err @ (Error::ConcavityViolation { .. } | Error::Numerical(_))) => {
                    log::debug!("delta[{}]: {err}; falling back to MH", j + 1);
                    // log-delta scale: delta^{-I/2-a} exp{-(q/2+b)/delta + c/sqrt(delta)}
                    let shape = self.priors.delta_shape[j];
                    let target = |l: f64| {
                        let d = l.exp();
                        (-(units as f64) / 2.0 - shape) * l - curvature / d + c / d.sqrt()
                    };
                    let cur = p.delta[j].ln();
                    let out =
                        self.state.hyper_kernels[n_link + j].step(target, cur, target(cur), &mut self.state.rng)?;
                    p.delta[j] = out.value.exp();
                }
                Err(other) => return Err(other),
            }
        }

        let symbolic = self.inner_symbolic.as_ref().expect("Model 1 symbolic");
        let inner_log_det = |p: &Model1Params| log_det_or_neg_inf(symbolic, &model1_inner(p, graphs));
        let wnorm = |p: &Model1Params, a: usize, b: usize| (p.delta[a] * p.delta[b]).sqrt();
        let mut log_det = inner_log_det(&p);
        if !log_det.is_finite() {
            return Err(Error::Numerical(
                "Model 1 inner matrix lost positive definiteness".into(),
            ));
        }
        for k in 0..n_link {
            let (current, linear) = if k < responses {
                (p.lambda[k], 0.5 * ucu[(k, k)] / p.delta[k])
            } else if k < responses + r_edges.len() {
                let e = k - responses;
                let (a, b) = r_edges[e];
                (p.psi[e], uu[(a, b)] / wnorm(&p, a, b))
            } else {
                let e = k - responses - r_edges.len();
                let (a, b) = r_edges[e];
                (p.phi[e], ucu[(a, b)] / wnorm(&p, a, b))
            };
            let set = |p: &mut Model1Params, v: f64| {
                if k < responses {
                    p.lambda[k] = v;
                } else if k < responses + r_edges.len() {
                    p.psi[k - responses] = v;
                } else {
                    p.phi[k - responses - r_edges.len()] = v;
                }
            };
            let mut proposal_log_det = f64::NAN;
            let target = |v: f64| {
                let mut trial = p.clone();
                set(&mut trial, v);
                proposal_log_det = inner_log_det(&trial);
                0.5 * proposal_log_det + v * linear
            };
            let cur_lp = 0.5 * log_det + current * linear;
            let kernel = &mut self.state.hyper_kernels[k];
            let out = kernel.step(target, current, cur_lp, &mut self.state.rng)?;
            if out.accepted {
                set(&mut p, out.value);
                log_det = proposal_log_det;
            }
        }
        self.state.hyper = ModelParams::Model1(p);
        Ok(())
    }

    /// `rho` by MH, then the response precision from `GWis(b + I, V + S)`.
    pub fn update_model2(&mut self) -> Result<()> {
        let graphs = self.graphs;
        let responses = graphs.responses();
        let u = self.state.u();
        let (_, ucu) = cross_products(&u, graphs);
        let mut p: Model2Params = match &self.state.hyper {
            ModelParams::Model2(p) => p.clone(),
            _ => unreachable!("model kind checked at construction"),
        };
        let linear = 0.5 * p.omega.component_mul(&ucu).sum();
        let half_j = responses as f64 / 2.0;
        let symbolic = self.car_symbolic.as_ref().expect("Model 2 symbolic");
        let target = |rho: f64| half_j * log_det_or_neg_inf(symbolic, &graphs.car_precision(rho)) + rho * linear;
        let cur = target(p.rho);
        let out = self.state.hyper_kernels[0].step(target, p.rho, cur, &mut self.state.rng)?;
        p.rho = out.value;

        let prior = self.priors.omega.as_ref().expect("Model 2 prior");
        let post = model2_omega_conditional(prior, &u, p.rho, graphs)?;
        p.omega = gwishart_sample(
            &post,
            self.response_cliques.as_ref().expect("cliques"),
            &p.omega,
            self.config.gwishart_sweeps,
            &mut self.state.rng,
        )?;
        self.state.hyper = ModelParams::Model2(p);
        Ok(())
    }

    /// Auxiliary scale, response precision (renormalized to
    /// `omega_r[0][0] = 1`, the scale moved onto the spatial precision so the
    /// joint precision is unchanged), then the spatial precision.
    pub fn update_model3(&mut self) -> Result<()> {
        let graphs = self.graphs;
        let (units, responses) = (graphs.units(), graphs.responses());
        let u = self.state.u();
        let mut p: Model3Params = match &self.state.hyper {
            ModelParams::Model3(p) => p.clone(),
            _ => unreachable!("model kind checked at construction"),
        };
        let prior_r = self.priors.omega_r.as_ref().expect("Model 3 prior");
        let prior_s = self.priors.omega_s.as_ref().expect("Model 3 prior");

        let shape = responses as f64 * (prior_r.df() - 2.0) / 2.0 + nu(graphs.response()) as f64;
        let rate = p.omega_r.component_mul(prior_r.scale()).sum() / 2.0;
        p.z = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::Numerical(format!("auxiliary scale: {e}")))?
            .sample(&mut self.state.rng);

        let scatter_r = quad_columns(&p.omega_s, &u, units, responses);
        let post_r = GWishartParams::new(prior_r.df(), prior_r.scale() * p.z, graphs.response().clone())?
            .posterior(&scatter_r, units)?;
        let draw = gwishart_sample(
            &post_r,
            self.response_cliques.as_ref().expect("cliques"),
            &p.omega_r,
            self.config.gwishart_sweeps,
            &mut self.state.rng,
        )?;
        let lead = draw[(0, 0)];
        p.omega_r = draw / lead;
        p.omega_r[(0, 0)] = 1.0;
        p.omega_s *= lead;

        let scatter_s = quad_rows(&p.omega_r, &u, units, responses);
        let post_s = prior_s.posterior(&scatter_s, responses)?;
        p.omega_s = gwishart_sample(
            &post_s,
            self.spatial_cliques.as_ref().expect("cliques"),
            &p.omega_s,
            self.config.gwishart_sweeps,
            &mut self.state.rng,
        )?;
        self.state.hyper = ModelParams::Model3(p);
        Ok(())
    }
}

/// Full conditional of the Model 2 response precision given `u` and `rho`:
/// `GWis(b + I, V + U^T (D - rho C) U)`.
pub fn model2_omega_conditional(
    prior: &GWishartParams,
    u: &[f64],
    rho: f64,
    graphs: &ModelGraphs,
) -> Result<GWishartParams> {
    let (units, responses) = (graphs.units(), graphs.responses());
    if u.len() != units * responses {
        return Err(Error::DimensionMismatch {
            expected: units * responses,
            found: u.len(),
        });
    }
    let scatter = quad_columns(&graphs.car_precision(rho).to_dense(), u, units, responses);
    prior.posterior(&scatter, units)
}

/// `log|A|`, or `-inf` when `A` is not positive definite.
fn log_det_or_neg_inf(symbolic: &SymbolicCholesky, a: &SparseSymMatrix) -> f64 {
    symbolic.factor(a).map_or(f64::NEG_INFINITY, |f| f.log_det())
}

fn check_dims(data: &ArealDataset, graphs: &ModelGraphs) -> Result<()> {
    if data.units() != graphs.units() {
        return Err(Error::DimensionMismatch {
            expected: graphs.units(),
            found: data.units(),
        });
    }
    if data.responses() != graphs.responses() {
        return Err(Error::DimensionMismatch {
            expected: graphs.responses(),
            found: data.responses(),
        });
    }
    Ok(())
}

/// Runs one chain (index 0) from scratch.
pub fn run_chain(data: &ArealDataset, graphs: &ModelGraphs, config: &FitConfig) -> Result<PosteriorSamples> {
    let mut chain = Chain::new(data, graphs, config, 0)?;
    let mut samples = chain.empty_samples();
    chain.run(&mut samples)?;
    Ok(samples)
}

/// Output of a multi-chain run: merged draws plus each chain's final state.
pub struct RunOutput {
    pub samples: PosteriorSamples,
    pub states: Vec<ChainState>,
}

/// Runs `chains` independent chains concurrently, or continues the given
/// states when resuming. Draws are merged in chain order.
pub fn run_chains(
    data: &ArealDataset,
    graphs: &ModelGraphs,
    config: &FitConfig,
    chains: usize,
    resume: Option<Vec<ChainState>>,
) -> Result<RunOutput> {
    let starts: Vec<Option<ChainState>> = match resume {
        Some(states) => states.into_iter().map(Some).collect(),
        None => (0..chains.max(1)).map(|_| None).collect(),
    };
    let results: Vec<Result<(PosteriorSamples, ChainState)>> = thread::scope(|scope| {
        let handles: Vec<_> = starts
            .into_iter()
            .enumerate()
            .map(|(k, start)| {
                scope.spawn(move || {
                    let mut chain = match start {
                        Some(state) => Chain::resume(data, graphs, config, state)?,
                        None => Chain::new(data, graphs, config, k)?,
                    };
                    let mut samples = chain.empty_samples();
                    chain.run(&mut samples)?;
                    Ok((samples, chain.into_state()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Numerical("chain thread panicked".into())))
            })
            .collect()
    });
    let mut merged: Option<PosteriorSamples> = None;
    let mut states = Vec::with_capacity(results.len());
    for r in results {
        let (s, state) = r?;
        states.push(state);
        match merged.as_mut() {
            None => merged = Some(s),
            Some(m) => m.append(s)?,
        }
    }
    Ok(RunOutput {
        samples: merged.expect("at least one chain"),
        states,
    })
}

/// Versioned dump of all chain states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub chains: Vec<ChainState>,
}

impl Checkpoint {
    pub fn new(config_hash: String, chains: Vec<ChainState>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash,
            chains,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if cp.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is not supported (expected {})",
                cp.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(cp)
    }
}
