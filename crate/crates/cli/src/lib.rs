//! `riskpipe` command line: synthetic data, preparation, training,
//! evaluation and round streaming, each driven by a [`RunConfig`].
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use riskpipe::error::{CorpusError, EmbeddingError, MetricsError, NumericsError, PipelineError, StreamError};
use riskpipe::pipeline::StratifyOn;
use riskpipe::regression::Strategy;
use riskpipe::synth::SynthSpec;

pub use config::{EvalSplit, RunConfig, Task};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing or malformed input files.
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! input_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}
macro_rules! runtime_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
input_errors!(CorpusError, EmbeddingError, PipelineError);
runtime_errors!(NumericsError, StreamError, MetricsError);

#[derive(Parser, Debug)]
#[command(name = "riskpipe", version, about = "Early depression-risk detection from message embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus: subjects/, labels.csv, embeddings.jsonl
    Synth(SynthFlags),
    /// Split subjects and write the training manifest
    Prepare(RunFlags),
    /// Fit the model on the manifest's training rows
    Train(RunFlags),
    /// Absolute and ranking metrics on the selected split
    Evaluate(RunFlags),
    /// Replay histories round by round and score early decisions
    Simulate {
        #[command(flatten)]
        run: RunFlags,
        /// Run the stream through the socket protocol on a loopback port
        #[arg(long)]
        wire: bool,
    },
    /// Serve rounds to one socket client and log its decisions
    Serve {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Seconds to wait for each client frame; 0 waits forever
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
    /// Connect to a round server and stream decisions
    Client {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
}

#[derive(Args, Debug)]
struct SynthFlags {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    subjects: usize,
    #[arg(long, default_value_t = 16)]
    dimension: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    min_messages: usize,
    #[arg(long, default_value_t = 12)]
    max_messages: usize,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
}

/// Flags mirror the [`RunConfig`] keys and override `--config`.
#[derive(Args, Debug, Default)]
struct RunFlags {
    /// JSON file with RunConfig keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Label CSV; repeat to merge per-task files
    #[arg(long)]
    labels_path: Vec<PathBuf>,
    #[arg(long)]
    embeddings_path: Option<PathBuf>,
    #[arg(long)]
    model_path: Option<PathBuf>,
    #[arg(long)]
    manifest_path: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Comma-separated; several values run a validation grid search
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    #[arg(long)]
    pca_components: Option<usize>,
    #[arg(long)]
    pca_variance: Option<f64>,
    #[arg(long)]
    standardize: Option<bool>,
    /// Add the half-history document of every training subject
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long, value_parser = parse_stratify)]
    stratify_on: Option<StratifyOn>,
    #[arg(long)]
    separator: Option<String>,
    /// validation, train or all
    #[arg(long)]
    split: Option<EvalSplit>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    sticky: Option<bool>,
    /// Comma-separated ERDE deadlines
    #[arg(long, value_delimiter = ',')]
    erde_o: Vec<usize>,
    #[arg(long)]
    speed_p: Option<f64>,
    /// Exporter command answering embedding requests on stdin/stdout
    #[arg(long)]
    exporter: Option<String>,
}

fn parse_stratify(s: &str) -> Result<StratifyOn, String> {
    match s {
        "task_c" | "c" | "2c" => Ok(StratifyOn::TaskC),
        "task_a" | "a" | "2a" => Ok(StratifyOn::TaskA),
        other => Err(format!("unknown stratification {other:?}; expected task_c or task_a")),
    }
}

impl RunFlags {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f { c.$f = v; }
            )*};
        }
        set!(seed, task, strategy, standardize, augment, validation_fraction, stratify_on, separator, split, threshold, sticky, speed_p, output_dir);
        if self.data_dir.is_some() {
            c.data_dir = self.data_dir;
        }
        if !self.labels_path.is_empty() {
            c.labels_path = self.labels_path;
        }
        if self.embeddings_path.is_some() {
            c.embeddings_path = self.embeddings_path;
        }
        if self.model_path.is_some() {
            c.model_path = self.model_path;
        }
        if self.manifest_path.is_some() {
            c.manifest_path = self.manifest_path;
        }
        if self.exporter.is_some() {
            c.exporter = self.exporter;
        }
        if !self.lambda.is_empty() {
            c.lambda = self.lambda;
        }
        if !self.erde_o.is_empty() {
            c.erde_o = self.erde_o;
        }
        // either PCA flag replaces whatever the file chose
        if self.pca_components.is_some() || self.pca_variance.is_some() {
            c.pca_components = self.pca_components;
            c.pca_variance = self.pca_variance;
        }
        c.validate()?;
        Ok(c)
    }
}

fn timeout(secs: u64) -> Option<Duration> {
    (secs > 0).then(|| Duration::from_secs(secs))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(f) => {
            if f.subjects == 0 || f.dimension < 2 || f.min_messages == 0 || f.min_messages > f.max_messages {
                return Err(CliError::Input(
                    "need subjects >= 1, dimension >= 2 and 1 <= min-messages <= max-messages".into(),
                ));
            }
            let spec = SynthSpec {
                n_subjects: f.subjects,
                dimension: f.dimension,
                min_messages: f.min_messages,
                max_messages: f.max_messages,
                separation: f.separation,
                seed: f.seed,
                ..SynthSpec::default()
            };
            commands::synth(&commands::SynthArgs {
                spec,
                output_dir: f.output_dir.clone(),
            })?;
            println!("wrote {} subjects to {}", f.subjects, f.output_dir.display());
        }
        Command::Prepare(f) => {
            let cfg = f.resolve()?;
            let m = commands::prepare(&cfg)?;
            println!(
                "{} train / {} validation subjects, {} training rows -> {}",
                m.train_ids.len(),
                m.validation_ids.len(),
                m.training_index.len(),
                cfg.manifest_file().display()
            );
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Train(f) => {
            let cfg = f.resolve()?;
            let out = commands::train(&cfg)?;
            println!("model -> {}", cfg.model_file().display());
            println!("selected: {}", out.report["selected"]);
            for (title, m) in [("validation", &out.validation), ("baseline", &out.baseline)] {
                if let Some(m) = m {
                    print!("{}", commands::render_table(title, m));
                }
            }
        }
        Command::Evaluate(f) => {
            let cfg = f.resolve()?;
            let out = commands::evaluate(&cfg)?;
            for (title, m) in &out.tables {
                print!("{}", commands::render_table(title, m));
            }
        }
        Command::Simulate { run, wire } => {
            let cfg = run.resolve()?;
            let out = commands::simulate(&cfg, wire)?;
            print!("{}", commands::render_table("early detection", &out.metrics));
            println!("timing: {}", out.report["timing"]);
        }
        Command::Serve {
            run,
            addr,
            timeout_secs,
        } => {
            let cfg = run.resolve()?;
            let traces = commands::serve(&cfg, &addr, timeout(timeout_secs))?;
            println!("logged {} subject traces", traces.len());
        }
        Command::Client {
            run,
            addr,
            timeout_secs,
        } => {
            let cfg = run.resolve()?;
            let traces = commands::client(&cfg, &addr, timeout(timeout_secs))?;
            println!("streamed {} subjects", traces.len());
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
