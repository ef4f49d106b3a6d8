//! Command-line front end. All logic lives in the library; this file only
//! parses arguments, prints results and maps failures to exit codes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genfs::dataset::{make_synthetic_planted, save_csv, TaskKind};
use genfs::pipeline::{inspect, CollectorKind, Overrides, RunConfig, Stage, StageError, Workspace};

#[derive(Parser)]
#[command(name = "genfs", version, about = "Feature selection by generating feature-subset token sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explore subsets on subset A and write corpus.jsonl.
    Collect(RunArgs),
    /// Train the subset model on the corpus and write model.ckpt.
    Train(RunArgs),
    /// Search, score once on subset B and write report.json.
    Select(RunArgs),
    /// collect, train and select in one go.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Run a single stage against existing upstream artifacts.
        #[arg(long, value_name = "STAGE")]
        stage_only: Option<Stage>,
    },
    /// Write the configured planted-feature dataset as CSV.
    Synth(RunArgs),
    /// Summarize a corpus, checkpoint or report file.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides GENFS_OUT_DIR and the config file).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// CSV dataset; replaces a synthetic data source.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Target column name, or #<index>.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    collector: Option<CollectorKind>,
    /// Collector steps (rl) or records (random).
    #[arg(long)]
    n: Option<usize>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

impl RunArgs {
    fn workspace(&self) -> Result<Workspace, StageError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|source| StageError {
                stage: Stage::Config,
                source,
            })?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            dataset: self.dataset.clone(),
            target: self.target.clone(),
            task: self.task,
            collector: self.collector,
            n: self.n,
        });
        let out = cfg.resolve_out_dir(self.out_dir.as_deref());
        Ok(Workspace::new(cfg, out)?.verbose(!self.quiet))
    }
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Collect(a) => {
            a.workspace()?.collect()?;
        }
        Command::Train(a) => {
            a.workspace()?.train()?;
        }
        Command::Select(a) => {
            let ws = a.workspace()?;
            ws.select(Default::default())?;
            println!("{}", ws.path(genfs::pipeline::files::REPORT).display());
        }
        Command::Pipeline { run, stage_only } => {
            let ws = run.workspace()?;
            let report = match stage_only {
                Some(stage) => ws.run_stage(stage)?,
                None => Some(ws.pipeline()?),
            };
            if report.is_some() {
                println!("{}", ws.path(genfs::pipeline::files::REPORT).display());
            }
        }
        Command::Synth(a) => {
            let ws = a.workspace()?;
            let cfg = ws.config();
            let data_err = |source| StageError { stage: Stage::Data, source };
            let mut spec = cfg.data.synthetic.clone().ok_or_else(|| {
                data_err(genfs::Error::Config("synth needs a data.synthetic section".into()))
            })?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let planted = make_synthetic_planted(&spec).map_err(data_err)?;
            let csv = ws.path("synthetic.csv");
            save_csv(&planted.dataset, &csv).map_err(data_err)?;
            let truth = ws.path("synthetic.truth.json");
            let text = serde_json::to_string_pretty(&serde_json::json!({
                "spec": spec,
                "informative": planted.informative,
                "weights": planted.weights,
                "interaction_weight": planted.interaction_weight,
            }))
            .expect("truth serializes");
            std::fs::write(&truth, text + "\n").map_err(|e| data_err(genfs::Error::Io { path: truth.clone(), source: e }))?;
            println!("{}", csv.display());
        }
        Command::Inspect { path } => {
            let text = inspect(&path).map_err(|source| StageError { stage: Stage::Data, source })?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
