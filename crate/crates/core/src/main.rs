use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evifuse::data::{IdColumn, SyntheticConfig};
use evifuse::model::{Activation, Optimizer};
use evifuse::pipeline::{self, DataPaths, RunConfig, TuneSplit, ViewPath};
use evifuse::{Error, Result};

#[derive(Parser)]
#[command(name = "evifuse", version, about = "Evidential multi-view classification with staged decisions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as CSV files.
    Generate(RunArgs),
    /// Fit one classifier per view and report every view subset.
    Train(RunArgs),
    /// Pick the view order and grid-search the stage thresholds.
    Tune(RunArgs),
    /// Staged inference and reports on the test split.
    Evaluate(RunArgs),
    /// Train, tune and evaluate once per repeat.
    All(RunArgs),
}

fn parse_view(s: &str) -> std::result::Result<ViewPath, String> {
    let (id, path) = s.split_once('=').ok_or_else(|| format!("expected ID=PATH, got '{s}'"))?;
    Ok(ViewPath {
        id: id.to_string(),
        path: PathBuf::from(path),
    })
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad list item '{x}'")))
        .collect()
}

/// Flags override values from `--config`.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeat: Option<usize>,

    /// View CSV as ID=PATH; repeat per view.
    #[arg(long = "view", value_parser = parse_view)]
    views: Vec<ViewPath>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// auto | first | none
    #[arg(long)]
    id_column: Option<String>,

    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Comma-separated feature count per view.
    #[arg(long, value_parser = parse_list::<usize>)]
    feature_dims: Option<Vec<usize>>,
    /// Comma-separated class-mean norm per view.
    #[arg(long, value_parser = parse_list::<f64>)]
    separations: Option<Vec<f64>>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    synthetic_seed: Option<u64>,

    /// Comma-separated train,validation,test fractions.
    #[arg(long, value_parser = parse_list::<f64>)]
    split: Option<Vec<f64>>,
    #[arg(long)]
    no_normalize: bool,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    anneal_epochs: Option<usize>,
    /// 0 for full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// adam | sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_parser = parse_list::<usize>)]
    hidden: Option<Vec<usize>>,
    /// tanh | softplus | relu | identity
    #[arg(long)]
    activation: Option<String>,

    /// Comma-separated stage order of view ids.
    #[arg(long, value_parser = parse_list::<String>)]
    view_order: Option<Vec<String>>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    t2: Option<f64>,
    /// Comma-separated thresholds, one per non-final stage.
    #[arg(long, value_parser = parse_list::<f64>)]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    grid: Option<usize>,
    /// validation | test
    #[arg(long)]
    tune_split: Option<String>,
}

fn parse_config<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("invalid value '{s}'")))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.repeat {
            cfg.repeat = r;
        }

        if !self.views.is_empty() || self.labels.is_some() || self.id_column.is_some() {
            let mut data = cfg.data.take().unwrap_or(DataPaths {
                views: Vec::new(),
                labels: PathBuf::new(),
                id_column: IdColumn::Auto,
            });
            if !self.views.is_empty() {
                data.views = self.views.clone();
            }
            if let Some(l) = &self.labels {
                data.labels = l.clone();
            }
            if let Some(c) = &self.id_column {
                data.id_column = match c.as_str() {
                    "auto" => IdColumn::Auto,
                    "first" => IdColumn::First,
                    "none" => IdColumn::None,
                    other => return Err(Error::Config(format!("unknown id column policy '{other}'"))),
                };
            }
            cfg.data = Some(data);
            cfg.synthetic = None;
        }

        let synthetic_flags = self.n_samples.is_some()
            || self.classes.is_some()
            || self.feature_dims.is_some()
            || self.separations.is_some()
            || self.noise.is_some()
            || self.synthetic_seed.is_some();
        if synthetic_flags {
            let mut s = cfg.synthetic.take().unwrap_or(SyntheticConfig {
                n_samples: 600,
                classes: 2,
                feature_dims: vec![10, 10, 10],
                separations: vec![6.0, 1.0, 1.0],
                noise: 1.0,
                seed: 0,
                view_ids: Vec::new(),
            });
            if let Some(v) = self.n_samples {
                s.n_samples = v;
            }
            if let Some(v) = self.classes {
                s.classes = v;
            }
            if let Some(v) = &self.feature_dims {
                s.feature_dims = v.clone();
            }
            if let Some(v) = &self.separations {
                s.separations = v.clone();
            }
            if let Some(v) = self.noise {
                s.noise = v;
            }
            if let Some(v) = self.synthetic_seed {
                s.seed = v;
            }
            cfg.synthetic = Some(s);
            cfg.data = None;
        }

        if let Some(f) = &self.split {
            let [train, validation, test] = f[..] else {
                return Err(Error::Config("--split needs three fractions".to_string()));
            };
            cfg.split = pipeline::SplitFractions {
                train,
                validation,
                test,
            };
        }
        if self.no_normalize {
            cfg.normalize = false;
        }

        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.anneal_epochs {
            t.anneal_epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = &self.optimizer {
            t.optimizer = parse_config::<Optimizer>(v)?;
        }
        if let Some(v) = &self.hidden {
            t.hidden = v.clone();
        }
        if let Some(v) = &self.activation {
            t.activation = parse_config::<Activation>(v)?;
        }

        let p = &mut cfg.policy;
        if let Some(v) = &self.view_order {
            p.view_order = Some(v.clone());
        }
        if self.t1.is_some() || self.t2.is_some() || self.thresholds.is_some() {
            p.t1 = self.t1;
            p.t2 = self.t2;
            p.thresholds = self.thresholds.clone();
        }
        if let Some(v) = self.grid {
            p.grid = v;
        }
        if let Some(v) = &self.tune_split {
            p.tune_split = parse_config::<TuneSplit>(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            for p in pipeline::generate(&a.resolve()?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let s = pipeline::train_command(&cfg)?;
            println!("trained {} epochs, final loss {}", s.epochs, s.final_loss);
            println!("wrote {}", cfg.output.display());
        }
        Command::Tune(a) => {
            let cfg = a.resolve()?;
            let p = pipeline::tune_command(&cfg)?;
            println!("view order {}", p.view_order.join(","));
            print!("{}", std::fs::read_to_string(cfg.output.join("thresholds.txt"))?);
        }
        Command::Evaluate(a) => {
            let cfg = a.resolve()?;
            pipeline::evaluate_command(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.output.join("metrics.txt"))?);
        }
        Command::All(a) => {
            let cfg = a.resolve()?;
            pipeline::all_command(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.output.join("metrics.txt"))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evifuse: {} error: {e}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
