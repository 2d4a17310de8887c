use std::path::PathBuf;
use std::process::ExitCode;

use aggnn_cli::commands::{self, model_path};
use aggnn_cli::{plots, ExperimentConfig, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "aggnn", version, about = "Asynchronous Agg-GNN power control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set training.iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output.dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load_with_overrides(self.config.as_deref(), &self.overrides)?;
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw the configured network and write its description and traces.
    GenNet(Common),
    /// Train on the configured network and evaluate the result.
    Train(Common),
    /// Evaluate a model against the baselines on the configured network.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a model on fresh networks of every configured size.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Check that relabeling nodes relabels the transmit probabilities.
    PermTest {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "untrained")]
        model: Option<PathBuf>,
        /// Use the configured initial parameters instead of a model file.
        #[arg(long)]
        untrained: bool,
        /// Defaults to `evaluation.perm_trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write plot CSVs from the train and transfer outputs of a run.
    Plots(Common),
}

fn summary(c: &aggnn_core::rollout::Comparison) -> serde_json::Value {
    let mut out = serde_json::Map::new();
    for (name, r) in c.methods() {
        out.insert(
            name.into(),
            json!({"capacity": r.sum_capacity.mean, "stderr": r.sum_capacity.stderr, "power": r.total_power.mean}),
        );
    }
    out.into()
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    Ok(match cli.command {
        Command::GenNet(c) => {
            let cfg = c.load()?;
            json!({"network": commands::gen_net(&cfg)?})
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let out = commands::train(&cfg)?;
            json!({"iterations": out.rows.len(), "evaluation": summary(&out.evaluation)})
        }
        Command::Eval { common, model } => {
            let cfg = common.load()?;
            let path = model_path(&cfg, model.as_deref());
            json!({"evaluation": summary(&commands::eval(&cfg, &path)?)})
        }
        Command::Transfer { common, model } => {
            let cfg = common.load()?;
            let path = model_path(&cfg, model.as_deref());
            json!({"summary": commands::transfer(&cfg, &path)?.summary})
        }
        Command::PermTest {
            common,
            model,
            untrained,
            trials,
        } => {
            let cfg = common.load()?;
            let params = if untrained {
                cfg.initial_policy()?
            } else {
                commands::load_model(&model_path(&cfg, model.as_deref()), &cfg)?
            };
            let report = commands::perm_test(&cfg, &params, trials.unwrap_or(cfg.evaluation.perm_trials))?;
            json!({"trials": report.trials, "max_discrepancy": report.max_discrepancy})
        }
        Command::Plots(c) => {
            let cfg = c.load()?;
            let paths = plots::emit_plot_data(&cfg.output.dir, cfg.network.m, cfg.evaluation.histogram_bins)?;
            json!({"plots": paths})
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
