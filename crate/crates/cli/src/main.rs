use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use proxyq_core::repro::{self, ReproOptions, EXPERIMENTS};
use proxyq_core::Error;

mod eval;
mod pipeline;
mod synth;

const GRAMMAR: &str = "\
query grammar:
  SELECT item[, item]* FROM table [WHERE pred [AND pred]*] [LIMIT n]
  item  := * | column | AI.RANK(\"prompt\", column) | AI.CLASSIFY(\"prompt\", column, ['a', 'b', ...])
  pred  := column (= | != | < | <= | > | >=) literal | AI.IF(\"prompt\", column)
  literal := integer | float | 'string' | \"string\" | TRUE | FALSE | NULL";

#[derive(Parser, Debug)]
#[command(name = "proxyq", version, about = "Run semantic SQL with embedding proxy models in place of LLM calls")]
struct Cli {
    /// JSON file with run configuration keys; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Where to write the JSON report (stdout when omitted).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an AI.IF filter (or any single query) over a table.
    Run {
        #[command(flatten)]
        query: pipeline::QueryArgs,
        /// Serve a model from `train-offline` instead of training online.
        #[arg(long)]
        model: Option<PathBuf>,
        /// With --model, rows labeled by the oracle to re-check the gate.
        #[arg(long, default_value_t = 0)]
        recheck: usize,
    },
    /// Run an AI.RANK query for one or more search queries.
    Rank {
        #[command(flatten)]
        query: pipeline::QueryArgs,
        /// Table of ranking queries with `id` and `text` columns.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long = "query-embeddings")]
        query_embeddings: Option<PathBuf>,
        /// Candidate prefilter, e.g. `topk:k=500`.
        #[arg(long)]
        prefilter: Option<String>,
    },
    /// Run an AI.CLASSIFY query over a table.
    Classify {
        #[command(flatten)]
        query: pipeline::QueryArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        recheck: usize,
    },
    /// Sample, label and fit a proxy model ahead of time.
    TrainOffline {
        #[command(flatten)]
        query: pipeline::QueryArgs,
        /// Output path for the fitted model.
        #[arg(long)]
        model: PathBuf,
    },
    /// Generate a synthetic table, embeddings and gold labels.
    Synth(synth::SynthArgs),
    /// Score a report against gold labels, optionally per slice.
    Eval(eval::EvalArgs),
    /// Run a desk-scale experiment and write JSON and CSV artifacts.
    Repro {
        /// Experiment name, or `all`.
        name: String,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value = "repro_out")]
        out: PathBuf,
    },
    /// Print the logical plan of a query as JSON.
    Explain {
        #[arg(long)]
        query: String,
        /// Bind column names and types against this table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

/// Global flags shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub report: Option<PathBuf>,
}

/// Outcome of a subcommand that did not fail.
pub enum Status {
    Ok,
    /// The gate chose the LLM and `--require-proxy` was given.
    ProxyRefused,
}

fn repro_cmd(g: &Globals, name: &str, seeds: usize, out: &std::path::Path) -> Result<Status, Error> {
    let opts = ReproOptions {
        seed: g.seed.unwrap_or(0),
        seeds,
        workers: g.workers.unwrap_or(ReproOptions::default().workers),
    };
    let names: Vec<&str> = if name == "all" { EXPERIMENTS.to_vec() } else { vec![name] };
    for n in names {
        let started = std::time::Instant::now();
        let artifact = repro::run_experiment(n, &opts)?;
        for path in artifact.write(out)? {
            println!("{}", path.display());
        }
        log::info!("{n} finished in {:.1}s", started.elapsed().as_secs_f64());
    }
    Ok(Status::Ok)
}

fn dispatch(cli: Cli) -> Result<Status, Error> {
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        workers: cli.workers,
        report: cli.report,
    };
    match cli.command {
        Command::Run { query, model, recheck } | Command::Classify { query, model, recheck } => {
            pipeline::run(&g, &query, model.as_deref(), recheck)
        }
        Command::Rank {
            query,
            queries,
            query_embeddings,
            prefilter,
        } => pipeline::rank(&g, &query, queries.as_deref(), query_embeddings.as_deref(), prefilter.as_deref()),
        Command::TrainOffline { query, model } => pipeline::train(&g, &query, &model),
        Command::Synth(args) => synth::run(&g, &args),
        Command::Eval(args) => eval::run(&g, &args),
        Command::Repro { name, seeds, out } => repro_cmd(&g, &name, seeds, &out),
        Command::Explain { query, table } => pipeline::explain(&query, table.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ProxyRefused) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Syntax { .. } | Error::UnknownFunction(_) | Error::Arity { .. }) {
                eprintln!("\n{GRAMMAR}");
            }
            ExitCode::from(1)
        }
    }
}
