//! Subcommand implementations shared by the CLI: configuration loading,
//! graph reports, simulation, fitting, comparison and summaries.

use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ArealDataset, Likelihood};
use crate::diagnostics::{
    compare, dic, read_dic_csv, summarize, summarize_trace, u_moments, write_dic_csv, write_summary_csv, DicReport,
    LabelledDic, ParamSummary,
};
use crate::error::{Error, Result};
use crate::fit::{run_chains, Checkpoint, FitConfig, PosteriorSamples, Priors};
use crate::graph::{build_joint_adjacency, AdjacencyGraph, Variant};
use crate::io::{content_hash, csv_writer, fmt_f64, read_dataset, write_dataset, Provenance};
use crate::kernels::DEFAULT_ADAPT_WINDOW;
use crate::precision::{Model1Params, Model2Params, Model3Params, ModelGraphs, ModelKind, ModelParams};
use crate::synth::{simulate_counts, simulate_u};

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const TRUTH_U_FILE: &str = "truth_u.csv";
pub const JOINT_EDGES_FILE: &str = "joint_edges.txt";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const U_MEANS_FILE: &str = "u_means.csv";
pub const DEVIANCE_FILE: &str = "deviance.csv";
pub const DIC_FILE: &str = "dic.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default)]
    pub variant: Variant,
}

/// Graph specs: `grid:RxC`, `path:N`, `cycle:N`, `complete:N`, `edgeless:N`
/// or the path of an edge-list file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub spatial: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub gwishart_sweeps: usize,
    pub adapt_window: usize,
}

impl Default for McmcSection {
    fn default() -> Self {
        McmcSection {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            chains: 1,
            gwishart_sweeps: 1,
            adapt_window: DEFAULT_ADAPT_WINDOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            data: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// A scalar broadcast over its target or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    One(f64),
    Many(Vec<f64>),
}

impl Values {
    fn expand(&self, name: &str, n: usize) -> Result<Vec<f64>> {
        match self {
            Values::One(x) => Ok(vec![*x; n]),
            Values::Many(v) if v.len() == n => Ok(v.clone()),
            Values::Many(v) => Err(Error::Config(format!("{name}: expected {n} values, found {}", v.len()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tags {
    One(Likelihood),
    Many(Vec<Likelihood>),
}

/// Hyperparameter values for one model, used for simulation truth or to
/// hold parameters fixed during a fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub delta: Option<Values>,
    pub lambda: Option<Values>,
    pub psi: Option<Values>,
    pub phi: Option<Values>,
    pub rho: Option<f64>,
    pub omega: Option<Vec<Vec<f64>>>,
    pub omega_r: Option<Vec<Vec<f64>>>,
    pub omega_s: Option<Vec<Vec<f64>>>,
    /// Builds `omega_s = D_s - rho C_s` instead of listing the matrix.
    pub omega_s_car_rho: Option<f64>,
    pub z: Option<f64>,
}

fn required<T: Clone>(section: &str, name: &str, value: &Option<T>, kind: ModelKind) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("{section}.{name} is required for {kind}")))
}

fn matrix(section: &str, name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{section}.{name} must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

impl HyperSection {
    fn set_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut mark = |set: bool, name| {
            if set {
                out.push(name);
            }
        };
        mark(self.delta.is_some(), "delta");
        mark(self.lambda.is_some(), "lambda");
        mark(self.psi.is_some(), "psi");
        mark(self.phi.is_some(), "phi");
        mark(self.rho.is_some(), "rho");
        mark(self.omega.is_some(), "omega");
        mark(self.omega_r.is_some(), "omega_r");
        mark(self.omega_s.is_some(), "omega_s");
        mark(self.omega_s_car_rho.is_some(), "omega_s_car_rho");
        mark(self.z.is_some(), "z");
        out
    }

    pub fn to_params(&self, section: &str, kind: ModelKind, graphs: &ModelGraphs) -> Result<ModelParams> {
        let allowed: &[&str] = match kind {
            ModelKind::Multifold => &["delta", "lambda", "psi", "phi"],
            ModelKind::Homogeneous => &["rho", "omega"],
            ModelKind::Heterogeneous => &["omega_r", "omega_s", "omega_s_car_rho", "z"],
        };
        if let Some(extra) = self.set_fields().into_iter().find(|f| !allowed.contains(f)) {
            return Err(Error::Config(format!("{section}.{extra} does not apply to {kind}")));
        }
        let j = graphs.responses();
        let e = graphs.response().n_edges();
        let params = match kind {
            ModelKind::Multifold => ModelParams::Model1(Model1Params {
                delta: required(section, "delta", &self.delta, kind)?.expand("delta", j)?,
                lambda: required(section, "lambda", &self.lambda, kind)?.expand("lambda", j)?,
                psi: self.psi.clone().unwrap_or(Values::One(0.0)).expand("psi", e)?,
                phi: self.phi.clone().unwrap_or(Values::One(0.0)).expand("phi", e)?,
            }),
            ModelKind::Homogeneous => ModelParams::Model2(Model2Params {
                rho: required(section, "rho", &self.rho, kind)?,
                omega: matrix(section, "omega", &required(section, "omega", &self.omega, kind)?, j)?,
            }),
            ModelKind::Heterogeneous => {
                let omega_s = match (&self.omega_s, self.omega_s_car_rho) {
                    (Some(rows), None) => matrix(section, "omega_s", rows, graphs.units())?,
                    (None, Some(rho)) => graphs.car_precision(rho).to_dense(),
                    _ => {
                        return Err(Error::Config(format!(
                            "{section}: give exactly one of omega_s and omega_s_car_rho"
                        )))
                    }
                };
                ModelParams::Model3(Model3Params {
                    omega_r: matrix(
                        section,
                        "omega_r",
                        &required(section, "omega_r", &self.omega_r, kind)?,
                        j,
                    )?,
                    omega_s,
                    z: self.z.unwrap_or(1.0),
                })
            }
        };
        Ok(params)
    }
}

/// Ground truth for `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub beta: Values,
    /// Binomial sizes or Poisson expected counts: one value, one per
    /// response, or one per (unit, response) in storage order.
    pub exposure: Values,
    pub likelihood: Tags,
    #[serde(default)]
    pub hyper: HyperSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub graphs: GraphSection,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub io: IoSection,
    pub truth: Option<TruthSection>,
    pub fixed: Option<HyperSection>,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub variant: Option<Variant>,
}

/// A parsed config with relative paths resolved against its directory.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_str(text: &str, base_dir: &Path, overrides: &Overrides) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = overrides.seed {
            config.mcmc.seed = seed;
        }
        if let Some(chains) = overrides.chains {
            config.mcmc.chains = chains;
        }
        if let Some(model) = overrides.model {
            config.model.kind = model;
        }
        if let Some(variant) = overrides.variant {
            config.model.variant = variant;
        }
        config.io.data = config.io.data.map(|p| base_dir.join(p));
        config.io.out_dir = match &overrides.out_dir {
            Some(dir) => dir.clone(),
            None => base_dir.join(&config.io.out_dir),
        };
        if config.mcmc.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        Ok(LoadedConfig {
            config,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &base, overrides)
    }

    pub fn graphs(&self) -> Result<(AdjacencyGraph, AdjacencyGraph)> {
        Ok((
            load_graph(&self.config.graphs.spatial, &self.base_dir)?,
            load_graph(&self.config.graphs.response, &self.base_dir)?,
        ))
    }

    /// Hash of everything that determines the results: the effective model,
    /// graphs, priors, sampler settings and parameters, plus the content of
    /// the data file when one is used. Output locations are excluded.
    pub fn hash(&self, data_bytes: Option<&[u8]>) -> Result<String> {
        let c = &self.config;
        let mut text = serde_json::to_string(&(&c.model, &c.graphs, &c.priors, &c.mcmc, &c.truth, &c.fixed))?;
        if let Some(bytes) = data_bytes {
            text.push_str(&content_hash(bytes));
        }
        Ok(content_hash(text.as_bytes()))
    }

    fn out_dir(&self) -> Result<&Path> {
        let dir = &self.config.io.out_dir;
        fs::create_dir_all(dir)?;
        Ok(dir)
    }
}

fn parse_count(spec: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("graph spec '{spec}': '{s}' is not a vertex count")))
}

/// Builds a generated graph or reads an edge-list file.
pub fn load_graph(spec: &str, base_dir: &Path) -> Result<AdjacencyGraph> {
    if let Some((kind, arg)) = spec.split_once(':') {
        let g = match kind {
            "grid" => {
                let (r, c) = arg
                    .split_once('x')
                    .ok_or_else(|| Error::Config(format!("graph spec '{spec}': expected grid:RxC")))?;
                AdjacencyGraph::grid(parse_count(spec, r)?, parse_count(spec, c)?)
            }
            "path" => AdjacencyGraph::path(parse_count(spec, arg)?),
            "cycle" => AdjacencyGraph::cycle(parse_count(spec, arg)?),
            "complete" => AdjacencyGraph::complete(parse_count(spec, arg)?),
            "edgeless" => AdjacencyGraph::edgeless(parse_count(spec, arg)?),
            _ => return read_graph_file(&base_dir.join(spec)),
        };
        if g.n_vertices() == 0 {
            return Err(Error::Config(format!("graph spec '{spec}' has no vertices")));
        }
        return Ok(g);
    }
    read_graph_file(&base_dir.join(spec))
}

fn read_graph_file(path: &Path) -> Result<AdjacencyGraph> {
    AdjacencyGraph::parse_edge_list(&fs::read_to_string(path)?)
}

/// Dimensions of a joint graph and its precision pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphReport {
    pub variant: Variant,
    pub vertices: usize,
    pub edges: usize,
    /// Structural nonzeros of `I + C` (both triangles).
    pub nonzeros: usize,
    pub components: usize,
}

impl fmt::Display for GraphReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} vertices, {} edges\nvariant: {}\nprecision: {n} x {n}, {} nonzeros\ncomponents: {}",
            self.vertices,
            self.edges,
            self.variant,
            self.nonzeros,
            self.components,
            n = self.vertices
        )
    }
}

/// Builds the joint graph, writes its edge list to `out_dir` when given and
/// reports its dimensions.
pub fn cmd_graph(
    spatial: &AdjacencyGraph,
    response: &AdjacencyGraph,
    variant: Variant,
    out_dir: Option<&Path>,
) -> Result<GraphReport> {
    let joint = build_joint_adjacency(spatial, response, variant);
    let g = joint.graph();
    let report = GraphReport {
        variant,
        vertices: g.n_vertices(),
        edges: g.n_edges(),
        nonzeros: g.n_vertices() + 2 * g.n_edges(),
        components: g.n_components(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(JOINT_EDGES_FILE), g.to_edge_list())?;
    }
    Ok(report)
}

fn require_full_variant(cfg: &RunConfig) -> Result<()> {
    if cfg.model.variant != Variant::Full {
        return Err(Error::Config(format!(
            "models are defined on the full joint graph; variant '{}' is only available to the graph report",
            cfg.model.variant
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SimulateOutcome {
    pub data: ArealDataset,
    pub truth: ModelParams,
    pub beta: Vec<f64>,
    pub u: Vec<f64>,
    pub provenance: Provenance,
    pub out_dir: PathBuf,
}

/// Draws `u` from the configured model and counts from the likelihood
/// layer; writes the dataset and the true parameters and effects.
pub fn cmd_simulate(loaded: &LoadedConfig) -> Result<SimulateOutcome> {
    let cfg = &loaded.config;
    require_full_variant(cfg)?;
    let truth = cfg
        .truth
        .as_ref()
        .ok_or_else(|| Error::Config("simulation needs a [truth] section".into()))?;
    let (spatial, response) = loaded.graphs()?;
    let graphs = ModelGraphs::new(spatial, response);
    let (units, responses) = (graphs.units(), graphs.responses());
    let params = truth.hyper.to_params("truth.hyper", cfg.model.kind, &graphs)?;
    let beta = truth.beta.expand("truth.beta", responses)?;
    let likelihood = match &truth.likelihood {
        Tags::One(t) => vec![*t; responses],
        Tags::Many(v) if v.len() == responses => v.clone(),
        Tags::Many(v) => {
            return Err(Error::Config(format!(
                "truth.likelihood: expected {responses} values, found {}",
                v.len()
            )))
        }
    };
    let exposure = match &truth.exposure {
        Values::Many(v) if v.len() == responses && responses != units * responses => {
            (0..units * responses).map(|m| v[m / units]).collect()
        }
        other => other.expand("truth.exposure", units * responses)?,
    };

    let seed = cfg.mcmc.seed;
    let provenance = Provenance {
        config_hash: loaded.hash(None)?,
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = simulate_u(&params, &graphs, &mut rng)?;
    let data = simulate_counts(&u, &beta, &exposure, &likelihood, &mut rng)?;

    let out_dir = loaded.out_dir()?;
    write_dataset(&out_dir.join(DATA_FILE), &data, Some(&provenance))?;
    let mut w = csv_writer(&out_dir.join(TRUTH_FILE), Some(&provenance))?;
    w.write_record(["parameter", "value"])?;
    for (j, b) in beta.iter().enumerate() {
        w.write_record([format!("beta[{}]", j + 1), fmt_f64(*b)])?;
    }
    for (name, v) in params.names(&graphs).into_iter().zip(params.values(&graphs)) {
        w.write_record([name, fmt_f64(v)])?;
    }
    w.flush()?;
    let mut w = csv_writer(&out_dir.join(TRUTH_U_FILE), Some(&provenance))?;
    w.write_record(["unit", "response", "u"])?;
    for (m, v) in u.iter().enumerate() {
        w.write_record([(m % units + 1).to_string(), (m / units + 1).to_string(), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(SimulateOutcome {
        data,
        truth: params,
        beta,
        u,
        provenance,
        out_dir: out_dir.to_path_buf(),
    })
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub samples: PosteriorSamples,
    pub dic: DicReport,
    pub summary: Vec<ParamSummary>,
    pub provenance: Provenance,
    pub out_dir: PathBuf,
}

/// Runs the configured chains (or continues those in `resume`) and writes
/// the draws, summaries, effect means, deviance trace, DIC and a checkpoint.
pub fn cmd_fit(loaded: &LoadedConfig, resume: Option<&Path>) -> Result<FitOutcome> {
    let cfg = &loaded.config;
    require_full_variant(cfg)?;
    let data_path = cfg
        .io
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("fitting needs io.data".into()))?;
    let data_bytes = fs::read(data_path)?;
    let data = read_dataset(data_path)?;
    let (spatial, response) = loaded.graphs()?;
    let graphs = ModelGraphs::new(spatial, response);
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
    let kind = cfg.model.kind;
    let fit_config = FitConfig {
        model: kind,
        iterations: cfg.mcmc.iterations,
        burn_in: cfg.mcmc.burn_in,
        thin: cfg.mcmc.thin,
        seed: cfg.mcmc.seed,
        gwishart_sweeps: cfg.mcmc.gwishart_sweeps,
        adapt_window: cfg.mcmc.adapt_window,
        priors: cfg.priors.clone(),
        fixed_hyper: cfg
            .fixed
            .as_ref()
            .map(|f| f.to_params("fixed", kind, &graphs))
            .transpose()?,
    };
    fit_config.validate(&graphs)?;

    let provenance = Provenance {
        config_hash: loaded.hash(Some(&data_bytes))?,
        seed: cfg.mcmc.seed,
    };
    let states = match resume {
        Some(path) => {
            let cp = Checkpoint::load(path)?;
            if cp.chains.is_empty() {
                return Err(Error::Config("checkpoint holds no chains".into()));
            }
            if cp.config_hash != provenance.config_hash {
                log::warn!("checkpoint was written under a different configuration");
            }
            Some(cp.chains)
        }
        None => None,
    };
    let output = run_chains(&data, &graphs, &fit_config, cfg.mcmc.chains, states)?;
    let samples = output.samples;
    let report = dic(&samples, &data)?;
    let summary = summarize(&samples)?;

    let out_dir = loaded.out_dir()?;
    write_samples_csv(&out_dir.join(SAMPLES_FILE), &samples, Some(&provenance))?;
    write_summary_csv(&out_dir.join(SUMMARY_FILE), &summary, Some(&provenance))?;
    write_u_means(&out_dir.join(U_MEANS_FILE), &samples, Some(&provenance))?;
    let mut w = csv_writer(&out_dir.join(DEVIANCE_FILE), Some(&provenance))?;
    w.write_record(["chain", "iteration", "deviance"])?;
    for d in 0..samples.len() {
        w.write_record([
            (samples.chain[d] + 1).to_string(),
            samples.iteration[d].to_string(),
            fmt_f64(samples.deviance[d]),
        ])?;
    }
    w.flush()?;
    let labelled = LabelledDic {
        label: kind.to_string(),
        report: report.clone(),
    };
    write_dic_csv(&out_dir.join(DIC_FILE), &[labelled], Some(&provenance))?;
    Checkpoint::new(provenance.config_hash.clone(), output.states).save(&out_dir.join(CHECKPOINT_FILE))?;
    Ok(FitOutcome {
        samples,
        dic: report,
        summary,
        provenance,
        out_dir: out_dir.to_path_buf(),
    })
}

/// One row per stored draw: chain, iteration, deviance, then every parameter.
pub fn write_samples_csv(path: &Path, samples: &PosteriorSamples, provenance: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    let mut header = vec!["chain".to_string(), "iteration".to_string(), "deviance".to_string()];
    header.extend(samples.parameter_names());
    w.write_record(&header)?;
    for d in 0..samples.len() {
        let mut record = vec![
            (samples.chain[d] + 1).to_string(),
            samples.iteration[d].to_string(),
            fmt_f64(samples.deviance[d]),
        ];
        record.extend(samples.row(d).into_iter().map(fmt_f64));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn write_u_means(path: &Path, samples: &PosteriorSamples, provenance: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(["unit", "response", "mean", "sd"])?;
    for (m, (mean, sd)) in u_moments(samples)?.into_iter().enumerate() {
        w.write_record([
            (m % samples.units + 1).to_string(),
            (m / samples.units + 1).to_string(),
            fmt_f64(mean),
            fmt_f64(sd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads DIC files and ranks all rows by DIC.
pub fn cmd_compare(paths: &[PathBuf]) -> Result<Vec<LabelledDic>> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_dic_csv(p)?);
    }
    compare(rows)
}

/// Summarizes every parameter column of a samples file, optionally writing
/// the table as CSV.
pub fn cmd_summarize(samples_path: &Path, out: Option<&Path>) -> Result<Vec<ParamSummary>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(File::open(samples_path)?);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "iteration" {
        return Err(Error::Parse {
            line: 1,
            message: "expected a samples file starting with chain,iteration".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: k + 2,
                message: format!("'{field}' is not a number"),
            })?;
            columns[c].push(v);
        }
    }
    let summary = names
        .iter()
        .zip(&columns)
        .map(|(n, col)| summarize_trace(n, col))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = out {
        let provenance = crate::io::read_provenance(samples_path)?;
        write_summary_csv(path, &summary, provenance.as_ref())?;
    }
    Ok(summary)
}

pub fn format_summary(rows: &[ParamSummary]) -> String {
    let width = rows.iter().map(|r| r.parameter.len()).max().unwrap_or(9).max(9);
    let mut out = format!(
        "{:<width$}  {:>11}  {:>11}  {:>11}  {:>11}  {:>11}\n",
        "parameter", "mean", "sd", "2.5%", "median", "97.5%"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>11.4}  {:>11.4}  {:>11.4}  {:>11.4}  {:>11.4}\n",
            r.parameter, r.mean, r.sd, r.q025, r.median, r.q975
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = r#"
[model]
kind = 2

[graphs]
spatial = "grid:3x3"
response = "complete:2"

[mcmc]
iterations = 60
burn_in = 20
seed = 5

[io]
data = "data.csv"
out_dir = "."

[truth]
beta = [-1.0, 0.5]
exposure = [50.0, 2.0]
likelihood = ["binlogit", "poislognorm"]

[truth.hyper]
rho = 0.9
omega = [[1.0, 0.5], [0.5, 1.0]]
"#;

    fn load(text: &str, dir: &Path) -> LoadedConfig {
        LoadedConfig::from_str(text, dir, &Overrides::default()).unwrap()
    }

    #[test]
    fn graph_specs() {
        let here = Path::new(".");
        assert_eq!(load_graph("grid:10x10", here).unwrap().n_vertices(), 100);
        assert_eq!(load_graph("complete:4", here).unwrap().n_edges(), 6);
        assert_eq!(load_graph("cycle:5", here).unwrap().n_edges(), 5);
        assert!(matches!(load_graph("path:x", here), Err(Error::Config(_))));
        assert!(load_graph("path:0", here).is_err());
        assert!(matches!(load_graph("missing-file.txt", here), Err(Error::Io(_))));
    }

    #[test]
    fn graph_reports() {
        let r = cmd_graph(&AdjacencyGraph::path(2), &AdjacencyGraph::path(2), Variant::Full, None).unwrap();
        assert_eq!((r.vertices, r.edges, r.nonzeros), (4, 6, 16));
        assert!(r.to_string().starts_with("4 vertices, 6 edges"));
        let r = cmd_graph(
            &AdjacencyGraph::grid(5, 23),
            &AdjacencyGraph::complete(5),
            Variant::Full,
            None,
        )
        .unwrap();
        assert!(r.to_string().starts_with("575 vertices"));
        let r = cmd_graph(
            &AdjacencyGraph::path(4),
            &AdjacencyGraph::complete(3),
            Variant::Spatial,
            None,
        )
        .unwrap();
        assert_eq!(r.components, 3);
    }

    #[test]
    fn config_errors() {
        let dir = Path::new(".");
        assert!(matches!(
            LoadedConfig::from_str("[model]\nkind = 2\n", dir, &Overrides::default()),
            Err(Error::Config(_))
        ));
        let bad = SIM.replace("seed = 5", "seed = 5\nunknown = 1");
        assert!(LoadedConfig::from_str(&bad, dir, &Overrides::default()).is_err());
        let bad = SIM.replace("kind = 2", "kind = 4");
        assert!(LoadedConfig::from_str(&bad, dir, &Overrides::default()).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let o = Overrides {
            seed: Some(9),
            chains: Some(3),
            model: Some(ModelKind::Heterogeneous),
            ..Overrides::default()
        };
        let c = LoadedConfig::from_str(SIM, Path::new("/tmp"), &o).unwrap();
        assert_eq!(c.config.mcmc.seed, 9);
        assert_eq!(c.config.mcmc.chains, 3);
        assert_eq!(c.config.model.kind, ModelKind::Heterogeneous);
        assert_eq!(c.config.io.data.as_deref(), Some(Path::new("/tmp/data.csv")));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = load(SIM, Path::new("/a"));
        let b = load(SIM, Path::new("/b"));
        assert_eq!(a.hash(None).unwrap(), b.hash(None).unwrap());
        let c = load(&SIM.replace("seed = 5", "seed = 6"), Path::new("/a"));
        assert_ne!(a.hash(None).unwrap(), c.hash(None).unwrap());
    }

    #[test]
    fn hyper_sections() {
        let graphs = ModelGraphs::new(AdjacencyGraph::path(3), AdjacencyGraph::path(2));
        let h = HyperSection {
            delta: Some(Values::One(1.0)),
            lambda: Some(Values::Many(vec![0.5, -0.2])),
            ..HyperSection::default()
        };
        match h.to_params("t", ModelKind::Multifold, &graphs).unwrap() {
            ModelParams::Model1(p) => {
                assert_eq!(p.delta, vec![1.0, 1.0]);
                assert_eq!(p.psi, vec![0.0]);
            }
            _ => unreachable!(),
        }
        assert!(h.to_params("t", ModelKind::Homogeneous, &graphs).is_err());
        let h3 = HyperSection {
            omega_r: Some(vec![vec![1.0, 0.2], vec![0.2, 1.0]]),
            omega_s_car_rho: Some(0.5),
            ..HyperSection::default()
        };
        match h3.to_params("t", ModelKind::Heterogeneous, &graphs).unwrap() {
            ModelParams::Model3(p) => {
                assert_eq!(p.omega_s[(1, 1)], 2.0);
                assert_eq!(p.omega_s[(0, 1)], -0.5);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn simulate_writes_dataset_and_truth() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load(SIM, dir.path());
        let out = cmd_simulate(&cfg).unwrap();
        assert_eq!(out.data.len(), 18);
        let back = read_dataset(&dir.path().join(DATA_FILE)).unwrap();
        assert_eq!(back, out.data);
        let first = fs::read(dir.path().join(DATA_FILE)).unwrap();
        cmd_simulate(&cfg).unwrap();
        assert_eq!(fs::read(dir.path().join(DATA_FILE)).unwrap(), first);

        let bad = load(&SIM.replace("rho = 0.9", "rho = 1.2"), dir.path());
        assert!(matches!(cmd_simulate(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn fit_writes_outputs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load(SIM, dir.path());
        cmd_simulate(&cfg).unwrap();
        let out = cmd_fit(&cfg, None).unwrap();
        assert_eq!(out.samples.len(), 40);
        assert_eq!(out.dic.dic, out.dic.dbar + out.dic.pd);
        for f in [
            SAMPLES_FILE,
            SUMMARY_FILE,
            U_MEANS_FILE,
            DEVIANCE_FILE,
            DIC_FILE,
            CHECKPOINT_FILE,
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let prov = crate::io::read_provenance(&dir.path().join(SAMPLES_FILE))
            .unwrap()
            .unwrap();
        assert_eq!(prov, out.provenance);

        // a 60-iteration run resumed to 100 matches a direct 100-iteration run
        let full_dir = tempfile::tempdir().unwrap();
        fs::copy(dir.path().join(DATA_FILE), full_dir.path().join(DATA_FILE)).unwrap();
        let longer = SIM.replace("iterations = 60", "iterations = 100");
        let direct = cmd_fit(&load(&longer, full_dir.path()), None).unwrap();
        let resumed = cmd_fit(&load(&longer, dir.path()), Some(&dir.path().join(CHECKPOINT_FILE))).unwrap();
        assert_eq!(resumed.samples.len(), 40);
        for k in 0..40 {
            assert_eq!(resumed.samples.row(k), direct.samples.row(k + 40));
        }

        let summary = cmd_summarize(&full_dir.path().join(SAMPLES_FILE), None).unwrap();
        assert_eq!(summary[0].parameter, "deviance");
        assert_eq!(summary.len(), direct.summary.len() + 1);
    }

    #[test]
    fn fit_rejects_mismatched_graphs_and_fixed_lambda() {
        let dir = tempfile::tempdir().unwrap();
        cmd_simulate(&load(SIM, dir.path())).unwrap();
        let wrong = load(&SIM.replace("grid:3x3", "grid:2x2"), dir.path());
        assert!(matches!(cmd_fit(&wrong, None), Err(Error::DimensionMismatch { .. })));
        let fixed = SIM
            .replace("kind = 2", "kind = 1")
            .replace("[truth]", "[fixed]\ndelta = 1.0\nlambda = 1.5\n\n[truth]");
        let fixed = fixed.replace("[truth.hyper]\nrho = 0.9\nomega = [[1.0, 0.5], [0.5, 1.0]]\n", "");
        assert!(matches!(
            cmd_fit(&load(&fixed, dir.path()), None),
            Err(Error::Validation(_))
        ));
    }
}
