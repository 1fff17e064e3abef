//! `kgarm`: synthetic data, training, rule mining, baseline mining and
//! report comparison from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
//! Failures print a single `error: <class>: <message>` line on stderr.

mod commands;
mod config;
mod error;
mod pipeline;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "kgarm", version, about = "Semantic association rule mining for sensor data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sensor CSV with planted rules and a matching graph.
    Synth(SynthArgs),
    /// Build transactions and train the autoencoder.
    Train(TrainArgs),
    /// Extract rules from a trained model and report their quality.
    Mine(MineArgs),
    /// Run the exhaustive miner and report its rules.
    Baseline(BaselineArgs),
    /// Print rule reports side by side.
    Compare(CompareArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Sensor readings as `timestamp,sensor_id,value` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Property graph document with sensor bindings.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    window_seconds: Option<i64>,
    /// Equal-frequency bins per numeric column.
    #[arg(long)]
    intervals: Option<usize>,
    /// Append graph items for every sensor.
    #[arg(long)]
    enrich: bool,
    /// Neighborhood radius for enrichment.
    #[arg(long)]
    depth: Option<usize>,
    /// Include properties of traversed edges when enriching.
    #[arg(long)]
    edge_properties: bool,
    /// Keep this many sensors, picked by walking the graph from a random one.
    #[arg(long)]
    sample_sensors: Option<usize>,
}

impl PipelineArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.csv {
            cfg.csv = Some(v.clone());
        }
        if let Some(v) = &self.graph {
            cfg.graph = Some(v.clone());
        }
        if let Some(v) = self.window_seconds {
            cfg.window_seconds = Some(v);
        }
        if let Some(v) = self.intervals {
            cfg.intervals = v;
        }
        cfg.enrich |= self.enrich;
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        cfg.edge_properties |= self.edge_properties;
        if let Some(v) = self.sample_sensors {
            cfg.sample_sensors = Some(v);
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    skew: Option<f64>,
    /// Redraw rows until one of the planted antecedents holds.
    #[arg(long)]
    cover_rows: bool,
    /// Emit numeric readings instead of class labels.
    #[arg(long)]
    numeric: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    noise_factor: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    similarity_threshold: Option<f64>,
    #[arg(long)]
    max_antecedents: Option<usize>,
    /// Restrict antecedents to these features (repeatable).
    #[arg(long = "markable")]
    markable: Vec<String>,
    /// Process feature subsets in parallel.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory with `model.json` and `manifest.json`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Override the CSV recorded in the manifest.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Override the graph recorded in the manifest.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    extract: ExtractArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Reuse the pipeline recorded with a trained model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    min_support: Option<f64>,
    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long)]
    max_antecedents: Option<usize>,
    /// Use half the mean support of the rules in --aerial-rules.
    #[arg(long)]
    coupled: bool,
    #[arg(long)]
    aerial_rules: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report of the first configuration (repeatable; runs are macro-averaged).
    #[arg(long, required = true)]
    left: Vec<PathBuf>,
    /// Report of the second configuration (repeatable).
    #[arg(long, required = true)]
    right: Vec<PathBuf>,
    /// Column labels as `LEFT,RIGHT`.
    #[arg(long, default_value = "left,right")]
    labels: String,
    /// Also write `comparison.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Synth(a) => {
            let mut cfg = a.common.load()?;
            let s = &mut cfg.synth;
            if let Some(v) = a.features {
                s.features = v;
            }
            if let Some(v) = a.classes {
                s.classes = v;
            }
            if let Some(v) = a.rows {
                s.rows = v;
            }
            if let Some(v) = a.noise_rate {
                s.noise_rate = v;
            }
            if let Some(v) = a.skew {
                s.skew = v;
            }
            s.cover_rows |= a.cover_rows;
            s.numeric |= a.numeric;
            cfg.validate()?;
            commands::synth(&cfg)
        }
        Command::Train(a) => {
            let mut cfg = a.common.load()?;
            a.pipeline.apply(&mut cfg);
            let t = &mut cfg.training;
            if let Some(v) = a.epochs {
                t.epochs = v;
            }
            if let Some(v) = a.learning_rate {
                t.learning_rate = v;
            }
            if let Some(v) = a.weight_decay {
                t.weight_decay = v;
            }
            if let Some(v) = a.noise_factor {
                t.noise_factor = v;
            }
            if let Some(v) = a.batch_size {
                t.batch_size = v;
            }
            cfg.validate()?;
            commands::train_model(&cfg)
        }
        Command::Mine(a) => {
            let mut cfg = a.common.load()?;
            if let Some(v) = a.model {
                cfg.model = Some(v);
            }
            if let Some(v) = a.csv {
                cfg.csv = Some(v);
            }
            if let Some(v) = a.graph {
                cfg.graph = Some(v);
            }
            apply_extract(&a.extract, &mut cfg);
            cfg.validate()?;
            commands::mine(&cfg)
        }
        Command::Baseline(a) => {
            let mut cfg = a.common.load()?;
            a.pipeline.apply(&mut cfg);
            if let Some(v) = a.model {
                cfg.model = Some(v);
            }
            if let Some(v) = a.min_support {
                cfg.min_support = Some(v);
            }
            if let Some(v) = a.min_confidence {
                cfg.min_confidence = v;
            }
            if let Some(v) = a.max_antecedents {
                cfg.max_antecedents = v;
            }
            cfg.coupled |= a.coupled;
            if let Some(v) = a.aerial_rules {
                cfg.aerial_rules = Some(v);
            }
            cfg.validate()?;
            commands::baseline(&cfg)
        }
        Command::Compare(a) => {
            let labels: Vec<&str> = a.labels.split(',').collect();
            let [l, r] = labels[..] else {
                return Err(CliError::Usage("--labels takes exactly two names".into()));
            };
            commands::compare(
                &a.left,
                &a.right,
                [l.to_string(), r.to_string()],
                a.out.as_deref(),
            )
        }
    }
}

fn apply_extract(a: &ExtractArgs, cfg: &mut RunConfig) {
    if let Some(v) = a.similarity_threshold {
        cfg.similarity_threshold = v;
    }
    if let Some(v) = a.max_antecedents {
        cfg.max_antecedents = v;
    }
    if !a.markable.is_empty() {
        cfg.markable_features = Some(a.markable.clone());
    }
    cfg.parallel |= a.parallel;
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli.command) {
        Ok(text) => {
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}
