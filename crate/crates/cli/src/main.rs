//! `featsearch` command-line entry point.
//!
//! Exit codes: 0 success, 1 input error (bad flags, files, programs or
//! configuration), 2 internal invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featsearch::collector::CollectorMode;
use featsearch::data::{write_csv, Dataset, Task};
use featsearch::downstream::{Metric, ModelKind};
use featsearch::pipeline::{self, PipelineConfig, OUT_ENV};
use featsearch::{synthetic, Error, Result};

#[derive(Parser)]
#[command(name = "featsearch", version, about = "Search for feature-transformation programs on tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect transformation records with the cascading agents.
    Collect(Common),
    /// Train the sequence model on the record log.
    Train(Common),
    /// Search from the trained checkpoint and write the report.
    Search(Common),
    /// Score a program file on the dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Program in postfix token form, e.g. `<SOS> f0 f1 multiply <EOS>`.
        #[arg(long)]
        program: PathBuf,
    },
    /// Collect, train and search in one go, then write a manifest.
    Run(Common),
    /// Write the bundled datasets as CSV.
    GenData {
        #[arg(long, default_value = "data")]
        dir: PathBuf,
    },
    /// Print the effective configuration as TOML.
    ShowConfig(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column (default: last column).
    #[arg(long)]
    target: Option<String>,
    /// classification | regression
    #[arg(long)]
    task: Option<Task>,
    /// Output directory (also settable through the environment).
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Seed for collection, augmentation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// rl | random
    #[arg(long)]
    collector: Option<CollectorMode>,
    /// Collection episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Compositions per episode.
    #[arg(long)]
    steps: Option<usize>,
    /// Train on the raw record log without permuted copies.
    #[arg(long)]
    no_augment: bool,
    /// Permuted copies per record.
    #[arg(long)]
    augment_k: Option<usize>,
    #[arg(long)]
    train_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Weight of the reconstruction loss.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of seed records for the search.
    #[arg(long)]
    top_t: Option<usize>,
    /// Initial ascent step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Beam width.
    #[arg(long)]
    beam: Option<usize>,
    /// random_forest | decision_tree | ridge
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    folds: Option<usize>,
    /// Use every row for collection and search instead of holding out 20%.
    #[arg(long)]
    no_holdout: bool,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.data {
            cfg.dataset.path = v.clone();
        }
        if let Some(v) = &self.target {
            cfg.dataset.target = Some(v.clone());
        }
        if let Some(v) = self.task {
            cfg.dataset.task = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.collector.seed = v;
            cfg.augment.seed = v;
            cfg.train.seed = v;
        }
        if let Some(v) = self.collector {
            cfg.collector.mode = v;
        }
        if let Some(v) = self.episodes {
            cfg.collector.epochs = v;
        }
        if let Some(v) = self.steps {
            cfg.collector.steps = v;
        }
        if self.no_augment {
            cfg.augment.enabled = false;
        }
        if let Some(v) = self.augment_k {
            cfg.augment.k = v;
        }
        if let Some(v) = self.train_epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.alpha {
            cfg.train.alpha = v;
        }
        if let Some(v) = self.top_t {
            cfg.search.top_t = v;
        }
        if let Some(v) = self.eta {
            cfg.search.eta = v;
        }
        if let Some(v) = self.beam {
            cfg.search.beam = v;
        }
        if let Some(v) = self.model {
            cfg.eval.model = v;
        }
        if let Some(v) = self.metric {
            cfg.eval.metric = Some(v);
        }
        if let Some(v) = self.folds {
            cfg.eval.folds = v;
        }
        if self.no_holdout {
            cfg.holdout = false;
        }
        Ok(cfg)
    }
}

fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_csv(path, &d.x, &d.feature_names, &d.y, &d.target_name)?;
    println!("wrote {} ({} rows × {} features)", path.display(), d.n_samples(), d.n_features());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(c) => {
            let s = pipeline::cmd_collect(&c.config()?)?;
            println!(
                "records: {}  best: {:.6}  mean: {:.6}  baseline: {:.6}",
                s.count, s.best, s.mean, s.baseline
            );
        }
        Command::Train(c) => {
            let s = pipeline::cmd_train(&c.config()?)?;
            println!("records: {}  corpus: {}", s.records, s.corpus);
            if let (Some(first), Some(last)) = (s.first, s.last) {
                println!(
                    "loss {:.6} → {:.6}  (rec {:.6} → {:.6}, est {:.6} → {:.6})",
                    first.total, last.total, first.rec, last.rec, first.est, last.est
                );
            }
        }
        Command::Search(c) => {
            let cfg = c.config()?;
            let r = pipeline::cmd_search(&cfg)?;
            print_search(&cfg, &r);
        }
        Command::Eval { common, program } => {
            let s = pipeline::cmd_eval(&common.config()?, &program)?;
            println!("{}: {}", s.metric.name(), s.value);
        }
        Command::Run(c) => {
            let cfg = c.config()?;
            let m = pipeline::cmd_run(&cfg)?;
            println!("baseline: {:.6}  best: {:.6}", m.baseline_score, m.best_score);
            if let (Some(b), Some(t)) = (m.holdout_baseline, m.holdout_best) {
                println!("holdout baseline: {b:.6}  holdout best: {t:.6}");
            }
            for (stage, secs) in &m.timings {
                println!("{stage}: {secs:.1}s");
            }
            println!("artifacts in {}", cfg.resolved_output_dir().display());
        }
        Command::GenData { dir } => {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_dataset(&dir.join("wine_red_surrogate.csv"), &synthetic::wine_like(999, 0)?)?;
            write_dataset(&dir.join("product_regression.csv"), &synthetic::product_regression(500, 0)?)?;
        }
        Command::ShowConfig(c) => print!("{}", c.config()?.to_toml_string()),
    }
    Ok(())
}

fn print_search(cfg: &PipelineConfig, r: &pipeline::PipelineReport) {
    let s = &r.search;
    println!("valid rate: {:.3}", s.valid_rate);
    println!("baseline: {:.6}  best: {:.6}", s.baseline.value, s.best_score);
    match &s.best_program {
        Some(p) => println!("program: {p}"),
        None => println!("no valid candidate; kept the original features"),
    }
    println!("artifacts in {}", cfg.resolved_output_dir().display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
