use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmcar::commands::{
    cmd_compare, cmd_fit, cmd_graph, cmd_simulate, cmd_summarize, format_summary, load_graph, LoadedConfig, Overrides,
};
use gmcar::diagnostics::format_comparison;
use gmcar::{Error, ModelKind, Result, Variant};

/// Multivariate CAR models for areal count data.
#[derive(Parser)]
#[command(name = "gmcar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Seed for simulation and sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of chains run concurrently.
    #[arg(long)]
    chains: Option<usize>,
    /// Directory receiving all output files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Model number: 1, 2 or 3.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Joint graph variant: full, spatial, response or nointeraction.
    #[arg(long)]
    variant: Option<Variant>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            chains: self.chains,
            out_dir: self.out_dir.clone(),
            model: self.model,
            variant: self.variant,
        }
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    let k: u8 = s.parse().map_err(|_| format!("'{s}' is not a model number"))?;
    ModelKind::try_from(k).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Build the joint adjacency and report its size.
    Graph {
        /// TOML config providing [graphs] and [model].variant.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Spatial graph: edge-list file or generator such as grid:10x10.
        #[arg(long)]
        spatial: Option<String>,
        /// Response graph: edge-list file or generator such as complete:2.
        #[arg(long)]
        response: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a dataset from the [truth] section of a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model by MCMC.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Continue the chains stored in this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank DIC reports.
    Compare {
        /// DIC CSV files (at least two rows in total).
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Summarize a samples file.
    Summarize {
        samples: PathBuf,
        /// Also write the summary as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Graph {
            config,
            spatial,
            response,
            common,
        } => {
            let here = Path::new(".");
            let loaded = config
                .map(|p| LoadedConfig::load(&p, &common.overrides()))
                .transpose()?;
            let spec = |flag: Option<String>, pick: fn(&LoadedConfig) -> &String, name: &str| -> Result<_> {
                match (flag, &loaded) {
                    (Some(s), _) => load_graph(&s, here),
                    (None, Some(l)) => load_graph(pick(l), &l.base_dir),
                    (None, None) => Err(Error::Config(format!("--{name} or --config is required"))),
                }
            };
            let s = spec(spatial, |l| &l.config.graphs.spatial, "spatial")?;
            let r = spec(response, |l| &l.config.graphs.response, "response")?;
            let variant = common
                .variant
                .or(loaded.as_ref().map(|l| l.config.model.variant))
                .unwrap_or_default();
            let report = cmd_graph(&s, &r, variant, common.out_dir.as_deref())?;
            println!("{report}");
        }
        Command::Simulate { config, common } => {
            let out = cmd_simulate(&LoadedConfig::load(&config, &common.overrides())?)?;
            println!(
                "simulated {} units x {} responses into {}",
                out.data.units(),
                out.data.responses(),
                out.out_dir.display()
            );
        }
        Command::Fit { config, resume, common } => {
            let out = cmd_fit(&LoadedConfig::load(&config, &common.overrides())?, resume.as_deref())?;
            println!(
                "{} draws written to {}\nDbar {:.1}  pD {:.1}  DIC {:.1}",
                out.samples.len(),
                out.out_dir.display(),
                out.dic.dbar,
                out.dic.pd,
                out.dic.dic
            );
        }
        Command::Compare { reports } => print!("{}", format_comparison(&cmd_compare(&reports)?)),
        Command::Summarize { samples, out } => print!("{}", format_summary(&cmd_summarize(&samples, out.as_deref())?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
