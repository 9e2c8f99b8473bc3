//! Run configuration and the file-to-file pipeline stages.
//!
//! Every stage reads all of its inputs before doing any work and writes its
//! outputs atomically, so a missing upstream artifact never leaves partial
//! files behind.

use crate::data::{self, DataConfig, DataError, Label, SftRecord, SEED_PAIRS_FILE, SFT_FILE};
use crate::dpo::{self, DpoConfig, DpoError, DpoMode, HistoryRecord, PipelineOutput, PreferencePair};
use crate::env::{self, EnvConfig, EnvError, Problem, LEVELS};
use crate::jsonl::{self, IoError};
use crate::metrics::{self, BehaviorReport, PlotRow, ReportFormat};
use crate::oracle::{GeneratorOracle, PromptTemplates, RemoteEndpointConfig, RemoteError, RemoteGenerator, RuleTeacher};
use crate::oracle::SimulatedGenerator;
use crate::policy::{self, PolicyError, PolicyParams, SftConfig, SftExample, SftTrace};
use crate::rng::stream_rng;
use crate::trajectory::{Automaton, AutomatonMode, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub const PROBLEMS_FILE: &str = "problems.jsonl";
pub const SFT_PARAMS_FILE: &str = "sft_params.json";
pub const FINAL_PARAMS_FILE: &str = "final_params.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const PLOT_FILE: &str = "plot_data.csv";
pub const ORACLE_LOG_FILE: &str = "oracle_log.jsonl";

const EVAL_DOMAIN: u64 = 0x6576_616c;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing upstream artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dpo(#[from] DpoError),
    #[error(transparent)]
    Remote(#[from] RemoteError),
}

impl WorkflowError {
    /// Stable identifier for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            WorkflowError::Config(_) => "config",
            WorkflowError::MissingArtifact(_) => "missing_artifact",
            WorkflowError::Io(_) => "io",
            WorkflowError::Env(_) => "env",
            WorkflowError::Data(_) => "data",
            WorkflowError::Policy(_) => "policy",
            WorkflowError::Dpo(_) => "dpo",
            WorkflowError::Remote(_) => "remote",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    #[default]
    Simulated,
    Remote {
        #[serde(default)]
        endpoint: RemoteEndpointConfig,
        /// Directory with prompt templates; built-in templates otherwise.
        #[serde(default)]
        prompts_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples_per_problem: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples_per_problem: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Single source of randomness; overrides `env.seed`.
    pub seed: u64,
    pub k_max: usize,
    pub automaton_mode: AutomatonMode,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub sft: SftConfig,
    pub dpo: DpoConfig,
    pub oracle: OracleConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k_max: 4,
            automaton_mode: AutomatonMode::Canonical,
            output_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            data: DataConfig::default(),
            sft: SftConfig::default(),
            dpo: DpoConfig::default(),
            oracle: OracleConfig::Simulated,
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, WorkflowError> {
        if !path.exists() {
            return Err(WorkflowError::Config(format!("config file {} not found", path.display())));
        }
        let cfg: RunConfig = jsonl::read_json(path).map_err(|e| WorkflowError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Copy the run seed into every component and check the whole schema.
    pub fn resolve(mut self) -> Result<Self, WorkflowError> {
        self.env.seed = self.seed;
        self.dpo.seed = self.seed;
        self.env.validate()?;
        self.dpo.validate()?;
        let s = &self.sft;
        if !(s.lr > 0.0 && s.lr.is_finite()) {
            return Err(WorkflowError::Config("sft.lr must be positive".into()));
        }
        if !(s.mask_weight >= 0.0 && s.mask_weight.is_finite()) {
            return Err(WorkflowError::Config("sft.mask_weight must be non-negative".into()));
        }
        if self.data.accuracy_samples == 0 || self.data.max_retries == 0 {
            return Err(WorkflowError::Config("data.accuracy_samples and data.max_retries must be at least 1".into()));
        }
        if self.eval.samples_per_problem == 0 {
            return Err(WorkflowError::Config("eval.samples_per_problem must be at least 1".into()));
        }
        if let OracleConfig::Remote { endpoint, .. } = &self.oracle {
            endpoint.validate()?;
        }
        if self.automaton_mode != AutomatonMode::Canonical {
            return Err(WorkflowError::Config(
                "automaton_mode \"literal\" is only available to the trajectory validator; \
                 the pipeline stages need \"canonical\""
                    .into(),
            ));
        }
        Ok(self)
    }

    pub fn automaton(&self) -> Automaton {
        Automaton::new(self.automaton_mode, self.k_max)
    }
}

fn require(path: &Path) -> Result<(), WorkflowError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(WorkflowError::MissingArtifact(path.to_path_buf()))
    }
}

fn read_problems(dir: &Path) -> Result<Vec<Problem>, WorkflowError> {
    let path = dir.join(PROBLEMS_FILE);
    require(&path)?;
    Ok(jsonl::read_jsonl(&path)?)
}

fn read_params(path: &Path) -> Result<PolicyParams, WorkflowError> {
    require(path)?;
    Ok(jsonl::read_json(path)?)
}

fn by_id(problems: &[Problem]) -> HashMap<&str, &Problem> {
    problems.iter().map(|p| (p.id.as_str(), p)).collect()
}

fn lookup<'a>(index: &HashMap<&str, &'a Problem>, id: &str) -> Result<&'a Problem, WorkflowError> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| WorkflowError::Config(format!("artifact refers to unknown problem {id}")))
}

pub fn gen_env(cfg: &RunConfig, out: &Path) -> Result<Value, WorkflowError> {
    let problems = env::gen_problems(&cfg.env)?;
    jsonl::write_jsonl(&out.join(PROBLEMS_FILE), &problems)?;
    Ok(json!({ "stage": "gen-env", "problems": problems.len() }))
}

pub fn build_data(cfg: &RunConfig, out: &Path) -> Result<Value, WorkflowError> {
    let problems = read_problems(out)?;
    let teacher = RuleTeacher::new(cfg.automaton());
    let (corpus, log) = match &cfg.oracle {
        OracleConfig::Simulated => {
            let gen = SimulatedGenerator::from_env(&cfg.env);
            (data::build_corpus(&problems, &gen, &cfg.data, cfg.k_max, cfg.seed)?, None)
        }
        OracleConfig::Remote { endpoint, prompts_dir } => {
            let templates = match prompts_dir {
                Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| IoError::io(dir, e))?,
                None => PromptTemplates::default(),
            };
            let gen = RemoteGenerator::new(endpoint.clone(), templates)?;
            let corpus = build_with(&problems, &gen, cfg);
            let log = gen.call_log();
            jsonl::write_jsonl(&out.join(ORACLE_LOG_FILE), &log)?;
            (corpus?, Some(log.len()))
        }
    };
    let pairs = data::seed_pairs(&problems, &corpus.records, &teacher)?;
    data::emit_datasets(out, &corpus.records, &pairs)?;
    let chosen = corpus.records.iter().filter(|r| r.label == Label::Chosen).count();
    Ok(json!({
        "stage": "build-data",
        "chosen": chosen,
        "seed_pairs": pairs.len(),
        "failed_problems": corpus.stats.failed_problems,
        "oracle_calls": log,
    }))
}

fn build_with(problems: &[Problem], gen: &dyn GeneratorOracle, cfg: &RunConfig) -> Result<data::Corpus, DataError> {
    data::build_corpus(problems, gen, &cfg.data, cfg.k_max, cfg.seed)
}

pub fn sft(cfg: &RunConfig, out: &Path) -> Result<Value, WorkflowError> {
    let problems = read_problems(out)?;
    let sft_path = out.join(SFT_FILE);
    require(&sft_path)?;
    let records = data::read_sft(&sft_path, &cfg.automaton())?;
    let (params, trace) = cold_start(cfg, &problems, &records)?;
    jsonl::write_json(&out.join(SFT_PARAMS_FILE), &params)?;
    Ok(json!({
        "stage": "sft",
        "examples": records.len(),
        "initial_loss": trace.loss_per_decision.first(),
        "final_loss": trace.loss_per_decision.last(),
    }))
}

/// SFT on the chosen records, starting from the uniform policy.
fn cold_start(cfg: &RunConfig, problems: &[Problem], records: &[SftRecord]) -> Result<(PolicyParams, SftTrace), WorkflowError> {
    let index = by_id(problems);
    let dataset = records
        .iter()
        .filter(|r| r.label == Label::Chosen)
        .map(|r| {
            Ok(SftExample {
                problem: lookup(&index, &r.problem_id)?,
                trajectory: &r.trajectory,
            })
        })
        .collect::<Result<Vec<_>, WorkflowError>>()?;
    let init = PolicyParams::zeros(cfg.env.answer_space_size);
    Ok(policy::train_sft(&init, &dataset, &cfg.sft, cfg.k_max)?)
}

pub fn dpo(cfg: &RunConfig, out: &Path, mode: Option<DpoMode>) -> Result<Value, WorkflowError> {
    let problems = read_problems(out)?;
    let pairs_path = out.join(SEED_PAIRS_FILE);
    require(&pairs_path)?;
    let seed_pairs = data::read_seed_pairs(&pairs_path)?;
    let sft_params = read_params(&out.join(SFT_PARAMS_FILE))?;
    let mut dcfg: DpoConfig = cfg.dpo.clone();
    if let Some(m) = mode {
        dcfg.mode = m;
    }
    let teacher = RuleTeacher::new(cfg.automaton());
    let result = dpo::run_pipeline(&dcfg, &seed_pairs, &problems, &teacher, &sft_params, cfg.k_max)?;
    jsonl::write_json(&out.join(FINAL_PARAMS_FILE), &result.params)?;
    jsonl::write_jsonl(&out.join(HISTORY_FILE), &result.history)?;
    let last: Option<&HistoryRecord> = result.history.last();
    Ok(json!({
        "stage": "dpo",
        "mode": dcfg.mode,
        "iterations": dcfg.iterations,
        "heldout_pairs": result.heldout.len(),
        "initial_heldout_pref_acc": result.history.first().and_then(|h| h.heldout_pref_acc),
        "final_heldout_pref_acc": last.and_then(|h| h.heldout_pref_acc),
        "final_loss": last.map(|h| h.mean_loss),
    }))
}

/// Sampled behaviour report and exact per-level outcome table of `params`.
pub fn evaluate(
    params: &PolicyParams,
    problems: &[Problem],
    samples: usize,
    k_max: usize,
    seed: u64,
) -> Result<(BehaviorReport, Vec<PlotRow>), WorkflowError> {
    let sampled: Vec<Result<Vec<Trajectory>, PolicyError>> = problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = stream_rng(seed, EVAL_DOMAIN, i as u64);
            (0..samples).map(|_| policy::sample(params, p, k_max, &mut rng)).collect()
        })
        .collect();
    let mut corpus = Vec::with_capacity(problems.len() * samples);
    let mut held = Vec::with_capacity(problems.len());
    for s in sampled {
        held.push(s?);
    }
    for (p, ys) in problems.iter().zip(&held) {
        corpus.extend(ys.iter().map(|y| (p, y)));
    }
    let report = metrics::behavior_report(&corpus);

    let mut acc = [0.0; LEVELS];
    let mut att = [0.0; LEVELS];
    let mut n = [0usize; LEVELS];
    for p in problems {
        let o = policy::outcome(params, p, k_max)?;
        let l = p.level_index();
        acc[l] += o.p_final_correct;
        att[l] += o.expected_attempts();
        n[l] += 1;
    }
    let rows = report
        .levels
        .iter()
        .map(|r| {
            let l = usize::from(r.level) - 1;
            PlotRow {
                level: r.level,
                answer_accuracy: r.answer_accuracy.value,
                mean_attempts: r.mean_attempts,
                expected_accuracy: acc[l] / n[l] as f64,
                expected_attempts: att[l] / n[l] as f64,
            }
        })
        .collect();
    Ok((report, rows))
}

pub fn eval(cfg: &RunConfig, out: &Path, params_path: &Path) -> Result<Value, WorkflowError> {
    let problems = read_problems(out)?;
    let params = read_params(params_path)?;
    let (report, rows) = evaluate(&params, &problems, cfg.eval.samples_per_problem, cfg.k_max, cfg.seed)?;
    metrics::emit_report(&report, &out.join(REPORT_JSON_FILE), ReportFormat::Json)?;
    metrics::emit_report(&report, &out.join(REPORT_CSV_FILE), ReportFormat::Csv)?;
    metrics::emit_plot_data(&rows, &out.join(PLOT_FILE))?;
    Ok(json!({
        "stage": "eval",
        "params": params_path,
        "trajectories": report.trajectories,
        "answer_accuracy": report.answer_accuracy.value,
        "mean_attempts": report.mean_attempts,
    }))
}

pub fn full_pipeline(cfg: &RunConfig, out: &Path, mode: Option<DpoMode>) -> Result<Value, WorkflowError> {
    let stages = vec![
        gen_env(cfg, out)?,
        build_data(cfg, out)?,
        sft(cfg, out)?,
        dpo(cfg, out, mode)?,
        eval(cfg, out, &out.join(FINAL_PARAMS_FILE))?,
    ];
    Ok(json!({ "stage": "full-pipeline", "stages": stages }))
}

/// Everything the simulated pipeline produces, kept in memory.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub problems: Vec<Problem>,
    pub records: Vec<SftRecord>,
    pub seed_pairs: Vec<PreferencePair>,
    pub sft_params: PolicyParams,
    pub sft_trace: SftTrace,
    pub dpo: PipelineOutput,
}

/// The stages of `full_pipeline` with the simulated oracle, without
/// touching the file system.
pub fn simulate(cfg: &RunConfig, mode: Option<DpoMode>) -> Result<SimulatedRun, WorkflowError> {
    let problems = env::gen_problems(&cfg.env)?;
    let gen = SimulatedGenerator::from_env(&cfg.env);
    let corpus = data::build_corpus(&problems, &gen, &cfg.data, cfg.k_max, cfg.seed)?;
    let teacher = RuleTeacher::new(cfg.automaton());
    let seed_pairs = data::seed_pairs(&problems, &corpus.records, &teacher)?;
    let (sft_params, sft_trace) = cold_start(cfg, &problems, &corpus.records)?;
    let mut dcfg = cfg.dpo.clone();
    if let Some(m) = mode {
        dcfg.mode = m;
    }
    let dpo = dpo::run_pipeline(&dcfg, &seed_pairs, &problems, &teacher, &sft_params, cfg.k_max)?;
    Ok(SimulatedRun {
        problems,
        records: corpus.records,
        seed_pairs,
        sft_params,
        sft_trace,
        dpo,
    })
}
