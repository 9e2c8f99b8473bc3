//! `svsr`: batch entry point for the training pipeline.
//!
//! Each subcommand reads a JSON run config, runs one stage against the
//! output directory and prints a JSON summary on stdout. Failures print
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit with 1.

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;
use svsr_core::dpo::DpoMode;
use svsr_core::workflow::{self, RunConfig, WorkflowError};

#[derive(Parser)]
#[command(name = "svsr", version, about = "Self-verification and self-rectification training pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic problem set.
    GenEnv,
    /// Build the chosen/rejected corpus and seed preference pairs.
    BuildData,
    /// Supervised cold start on the chosen trajectories.
    Sft,
    /// Iterative preference optimization from the cold-start policy.
    Dpo {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<DpoMode>,
    },
    /// Behaviour report for a parameter file.
    Eval {
        #[arg(long)]
        params: PathBuf,
    },
    /// All stages in order, then eval of the final policy.
    FullPipeline {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<DpoMode>,
    },
}

fn parse_mode(s: &str) -> Result<DpoMode, String> {
    s.parse()
}

fn load(common: &Common) -> Result<RunConfig, WorkflowError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.resolve()
}

fn run(cli: &Cli) -> Result<Value, WorkflowError> {
    let cfg = load(&cli.common)?;
    let out = cfg.output_dir.as_path();
    match &cli.command {
        Command::GenEnv => workflow::gen_env(&cfg, out),
        Command::BuildData => workflow::build_data(&cfg, out),
        Command::Sft => workflow::sft(&cfg, out),
        Command::Dpo { mode } => workflow::dpo(&cfg, out, *mode),
        Command::Eval { params } => workflow::eval(&cfg, out, params),
        Command::FullPipeline { mode } => workflow::full_pipeline(&cfg, out, *mode),
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.jobs == 0 {
        return fail("config", "--jobs must be at least 1".into());
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs)
        .build_global()
    {
        return fail("runtime", e.to_string());
    }
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
