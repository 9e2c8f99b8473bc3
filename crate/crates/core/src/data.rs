//! Cold-start corpus construction: difficulty estimation, chosen and
//! rejected trajectories, and the seed preference pairs.

use crate::dpo::{PairError, PairSource, PreferencePair};
use crate::env::{Problem, LEVELS};
use crate::jsonl::{self, IoError};
use crate::oracle::{GeneratorOracle, OracleError, Teacher, TeacherScore};
use crate::rng::stream_rng;
use crate::trajectory::{
    parse, render, render_dropping_phrase, Answer, Automaton, ParseError, Step, Trajectory, TransitionError,
    Verdict, VerifyStrategy,
};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const SFT_FILE: &str = "sft.jsonl";
pub const SEED_PAIRS_FILE: &str = "seed_pairs.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("could not build a chosen trajectory for {problem} after {attempts} attempts")]
    ConstructionFailure { problem: String, attempts: usize },
    #[error("k_target {k_target} exceeds k_max {k_max}")]
    CycleBudget { k_target: usize, k_max: usize },
    #[error("accuracy estimate needs at least one sample")]
    NoSamples,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("record for {problem}: {source}")]
    Parse {
        problem: String,
        #[source]
        source: ParseError,
    },
    #[error("record for {problem} is invalid: {source}")]
    Invalid {
        problem: String,
        #[source]
        source: TransitionError,
    },
    #[error(transparent)]
    Pair(#[from] PairError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Chosen,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectedMode {
    WrongFinal,
    Corrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub problem_id: String,
    pub label: Label,
    pub level: u8,
    pub k: usize,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_phrase: Option<usize>,
}

impl SftRecord {
    /// Rendered text, with the dropped phrase missing for corrupted records.
    pub fn text(&self) -> String {
        match self.dropped_phrase {
            Some(i) => render_dropping_phrase(&self.trajectory, i),
            None => render(&self.trajectory),
        }
    }

    pub fn to_line(&self) -> SftLine {
        SftLine {
            problem_id: self.problem_id.clone(),
            label: self.label,
            level: self.level,
            k: self.k,
            trajectory_text: self.text(),
            final_answer: self.trajectory.final_answer(),
        }
    }

    pub fn from_line(line: &SftLine, automaton: &Automaton) -> Result<Self, DataError> {
        let trajectory =
            parse(&line.problem_id, &line.trajectory_text, automaton).map_err(|source| DataError::Parse {
                problem: line.problem_id.clone(),
                source,
            })?;
        Ok(Self {
            problem_id: line.problem_id.clone(),
            label: line.label,
            level: line.level,
            k: line.k,
            trajectory,
            dropped_phrase: None,
        })
    }
}

/// One line of `sft.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftLine {
    pub problem_id: String,
    pub label: Label,
    pub level: u8,
    pub k: usize,
    pub trajectory_text: String,
    pub final_answer: Option<Answer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Solve calls per problem for the difficulty estimate.
    pub accuracy_samples: usize,
    /// Bound on both per-step redraws and whole-trajectory attempts.
    pub max_retries: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            accuracy_samples: 32,
            max_retries: 64,
        }
    }
}

pub fn estimate_accuracy(
    problem: &Problem,
    gen: &dyn GeneratorOracle,
    m: usize,
    rng: &mut dyn RngCore,
) -> Result<f64, DataError> {
    if m == 0 {
        return Err(DataError::NoSamples);
    }
    let mut right = 0usize;
    for _ in 0..m {
        let step = gen.solve(problem, &[], rng)?;
        if step.answer().is_some_and(|a| problem.is_correct(a)) {
            right += 1;
        }
    }
    Ok(right as f64 / m as f64)
}

pub fn assign_level(acc: f64) -> u8 {
    match acc {
        a if a >= 0.8 => 1,
        a if a >= 0.6 => 2,
        a if a >= 0.4 => 3,
        a if a >= 0.2 => 4,
        _ => 5,
    }
}

pub fn target_cycles(level: u8) -> usize {
    usize::from(level.clamp(1, LEVELS as u8)) - 1
}

fn level_for_cycles(k: usize) -> u8 {
    (k + 1).min(LEVELS) as u8
}

fn random_strategy(rng: &mut dyn RngCore) -> VerifyStrategy {
    if rng.random_bool(0.5) {
        VerifyStrategy::DirectDerivation
    } else {
        VerifyStrategy::Contradiction
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionStats {
    /// Whole-trajectory attempts started.
    pub attempts: usize,
    /// Attempts thrown away for failing the format or a redraw bound.
    pub discarded: usize,
    /// Oracle calls made while building.
    pub oracle_calls: usize,
}

impl ConstructionStats {
    fn add(&mut self, other: &ConstructionStats) {
        self.attempts += other.attempts;
        self.discarded += other.discarded;
        self.oracle_calls += other.oracle_calls;
    }
}

/// Call `draw` until `accept` holds, at most `bound` times.
fn redraw(
    bound: usize,
    calls: &mut usize,
    mut draw: impl FnMut() -> Result<Step, OracleError>,
    accept: impl Fn(&Step) -> bool,
) -> Result<Option<Step>, OracleError> {
    for _ in 0..bound.max(1) {
        *calls += 1;
        let step = draw()?;
        if accept(&step) {
            return Ok(Some(step));
        }
    }
    Ok(None)
}

fn chosen_attempt(
    problem: &Problem,
    gen: &dyn GeneratorOracle,
    k_target: usize,
    rng: &mut dyn RngCore,
    bound: usize,
    calls: &mut usize,
) -> Result<Option<Vec<Step>>, OracleError> {
    let mut steps: Vec<Step> = Vec::with_capacity(2 * k_target + 2);
    for cycle in 0..=k_target {
        // forced-error cycles need a wrong answer, the last one the right one
        let want_right = cycle == k_target;
        let is_wanted = |s: &Step| s.answer().is_some_and(|a| problem.is_correct(a) == want_right);
        let answer_step = if cycle == 0 {
            redraw(bound, calls, || gen.solve(problem, &steps, rng), is_wanted)?
        } else {
            redraw(bound, calls, || gen.rectify(problem, &steps, rng), is_wanted)?
        };
        let Some(answer_step) = answer_step else {
            return Ok(None);
        };
        let answer = answer_step.answer().expect("answer step");
        steps.push(answer_step);

        let strategy = random_strategy(rng);
        let verdict = Verdict::from_correctness(want_right);
        let verify = redraw(
            bound,
            calls,
            || gen.verify(problem, answer, strategy, rng),
            |s| s.verdict() == Some(verdict),
        )?;
        let Some(verify) = verify else {
            return Ok(None);
        };
        steps.push(verify);
    }
    Ok(Some(steps))
}

/// A correct trajectory with exactly `k_target` correction cycles.
pub fn build_chosen(
    problem: &Problem,
    gen: &dyn GeneratorOracle,
    k_target: usize,
    k_max: usize,
    rng: &mut dyn RngCore,
    max_retries: usize,
) -> Result<(SftRecord, ConstructionStats), DataError> {
    if k_target > k_max {
        return Err(DataError::CycleBudget { k_target, k_max });
    }
    let automaton = Automaton::canonical(k_max);
    let mut stats = ConstructionStats::default();
    let attempts = max_retries.max(1);
    for _ in 0..attempts {
        stats.attempts += 1;
        let Some(steps) = chosen_attempt(problem, gen, k_target, rng, max_retries, &mut stats.oracle_calls)? else {
            stats.discarded += 1;
            continue;
        };
        let trajectory = Trajectory::new(problem.id.clone(), steps);
        // the text must survive a render/parse round trip
        let format_ok = automaton.validate(&trajectory).is_ok()
            && parse(&problem.id, &render(&trajectory), &automaton).as_ref() == Ok(&trajectory);
        if !format_ok {
            stats.discarded += 1;
            continue;
        }
        let record = SftRecord {
            problem_id: problem.id.clone(),
            label: Label::Chosen,
            level: level_for_cycles(k_target),
            k: k_target,
            trajectory,
            dropped_phrase: None,
        };
        return Ok((record, stats));
    }
    Err(DataError::ConstructionFailure {
        problem: problem.id.clone(),
        attempts,
    })
}

/// A dispreferred variant: a valid trace that confirms a wrong final
/// answer, or the same kind of trace with one connective phrase dropped
/// from its text. Each mode has probability one half.
pub fn build_rejected(
    problem: &Problem,
    gen: &dyn GeneratorOracle,
    level: u8,
    k_max: usize,
    rng: &mut dyn RngCore,
    max_retries: usize,
) -> Result<(SftRecord, RejectedMode), DataError> {
    let mode = if rng.random_bool(0.5) {
        RejectedMode::WrongFinal
    } else {
        RejectedMode::Corrupted
    };
    let k = rng.random_range(0..=target_cycles(level).min(k_max));
    let mut calls = 0;
    let mut steps: Vec<Step> = Vec::with_capacity(2 * k + 2);
    for cycle in 0..=k {
        let last = cycle == k;
        let draw = |steps: &[Step], rng: &mut dyn RngCore| {
            if cycle == 0 {
                gen.solve(problem, steps, rng)
            } else {
                gen.rectify(problem, steps, rng)
            }
        };
        let mut step = if last {
            let wrong = |s: &Step| s.answer().is_some_and(|a| !problem.is_correct(a));
            match redraw(max_retries, &mut calls, || draw(&steps, rng), wrong)? {
                Some(s) => s,
                None => {
                    // the oracle keeps answering correctly; substitute a wrong token
                    let s = draw(&steps, rng)?;
                    let wrong: Vec<Answer> = problem.wrong_answers().collect();
                    with_answer(s, wrong[rng.random_range(0..wrong.len())])
                }
            }
        } else {
            draw(&steps, rng)?
        };
        if step.answer().is_none() {
            step = with_answer(step, problem.gt_answer);
        }
        let answer = step.answer().expect("answer step");
        steps.push(step);
        let strategy = random_strategy(rng);
        let v = gen.verify(problem, answer, strategy, rng)?;
        // terminal verdict confirms the wrong answer; earlier ones keep going
        let verdict = if last { Verdict::Correct } else { Verdict::Incorrect };
        steps.push(Step::verify(v.text(), verdict, v.strategy()));
    }
    let trajectory = Trajectory::new(problem.id.clone(), steps);
    Automaton::canonical(k_max)
        .validate(&trajectory)
        .map_err(|source| DataError::Invalid {
            problem: problem.id.clone(),
            source,
        })?;
    let dropped_phrase = match mode {
        RejectedMode::WrongFinal => None,
        RejectedMode::Corrupted => Some(rng.random_range(0..trajectory.steps.len() - 1)),
    };
    let record = SftRecord {
        problem_id: problem.id.clone(),
        label: Label::Rejected,
        level,
        k,
        trajectory,
        dropped_phrase,
    };
    Ok((record, mode))
}

fn with_answer(step: Step, answer: Answer) -> Step {
    match step {
        Step::Solve { text, .. } => Step::solve(text, answer),
        Step::Rectify { text, .. } => Step::rectify(text, answer),
        other => other,
    }
}

/// Teacher score of a record, failing the format criterion when its text
/// is corrupted.
pub fn score_record(teacher: &dyn Teacher, problem: &Problem, record: &SftRecord) -> TeacherScore {
    let s = teacher.score(problem, &record.trajectory);
    if record.dropped_phrase.is_some() {
        s.with_format_failed()
    } else {
        s
    }
}

/// Pair the first chosen and first rejected record of every problem.
pub fn seed_pairs(
    problems: &[Problem],
    records: &[SftRecord],
    teacher: &dyn Teacher,
) -> Result<Vec<PreferencePair>, DataError> {
    let by_id: BTreeMap<&str, &Problem> = problems.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut pairs = Vec::new();
    for p in problems {
        let first = |label| records.iter().find(|r| r.problem_id == p.id && r.label == label);
        let (Some(win), Some(lose)) = (first(Label::Chosen), first(Label::Rejected)) else {
            continue;
        };
        let problem = by_id[p.id.as_str()];
        let margin = score_record(teacher, problem, win).total - score_record(teacher, problem, lose).total;
        let pair = PreferencePair::new(
            win.trajectory.clone(),
            lose.trajectory.clone(),
            margin.clamp(0.0, 1.0),
            PairSource::Seed,
            0,
        )?
        .with_lose_dropped_phrase(lose.dropped_phrase);
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Write `sft.jsonl` (chosen records only) and `seed_pairs.jsonl`.
pub fn emit_datasets(dir: &Path, records: &[SftRecord], pairs: &[PreferencePair]) -> Result<(), DataError> {
    let lines: Vec<SftLine> = records
        .iter()
        .filter(|r| r.label == Label::Chosen)
        .map(SftRecord::to_line)
        .collect();
    jsonl::write_jsonl(&dir.join(SFT_FILE), &lines)?;
    jsonl::write_jsonl(&dir.join(SEED_PAIRS_FILE), pairs)?;
    Ok(())
}

pub fn read_sft(path: &Path, automaton: &Automaton) -> Result<Vec<SftRecord>, DataError> {
    jsonl::read_jsonl::<SftLine>(path)?
        .iter()
        .map(|l| SftRecord::from_line(l, automaton))
        .collect()
}

pub fn read_seed_pairs(path: &Path) -> Result<Vec<PreferencePair>, DataError> {
    Ok(jsonl::read_jsonl(path)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub chosen: ConstructionStats,
    /// Problems for which no chosen trajectory could be built.
    pub failed_problems: Vec<String>,
    pub wrong_final: usize,
    pub corrupted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<SftRecord>,
    pub stats: CorpusStats,
}

const RNG_DOMAIN: u64 = 0x6461_7461;

struct ProblemOutput {
    chosen: Result<(SftRecord, ConstructionStats), DataError>,
    rejected: (SftRecord, RejectedMode),
}

fn build_one(
    problem: &Problem,
    gen: &dyn GeneratorOracle,
    config: &DataConfig,
    k_max: usize,
    rng: &mut dyn RngCore,
) -> Result<ProblemOutput, DataError> {
    let acc = estimate_accuracy(problem, gen, config.accuracy_samples, rng)?;
    let level = assign_level(acc);
    let k_target = target_cycles(level).min(k_max);
    let chosen = build_chosen(problem, gen, k_target, k_max, rng, config.max_retries).map(|(mut r, s)| {
        r.level = level;
        (r, s)
    });
    let rejected = build_rejected(problem, gen, level, k_max, rng, config.max_retries)?;
    Ok(ProblemOutput { chosen, rejected })
}

/// Chosen and rejected records for every problem. Each problem draws from
/// its own random stream, so the result does not depend on thread count.
pub fn build_corpus(
    problems: &[Problem],
    gen: &dyn GeneratorOracle,
    config: &DataConfig,
    k_max: usize,
    seed: u64,
) -> Result<Corpus, DataError> {
    let outputs: Vec<Result<ProblemOutput, DataError>> = problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| build_one(p, gen, config, k_max, &mut stream_rng(seed, RNG_DOMAIN, i as u64)))
        .collect();
    let mut records = Vec::with_capacity(2 * problems.len());
    let mut stats = CorpusStats::default();
    for (p, out) in problems.iter().zip(outputs) {
        let out = out?;
        match out.chosen {
            Ok((rec, s)) => {
                stats.chosen.add(&s);
                records.push(rec);
            }
            Err(DataError::ConstructionFailure { .. }) => stats.failed_problems.push(p.id.clone()),
            Err(e) => return Err(e),
        }
        match out.rejected.1 {
            RejectedMode::WrongFinal => stats.wrong_final += 1,
            RejectedMode::Corrupted => stats.corrupted += 1,
        }
        records.push(out.rejected.0);
    }
    Ok(Corpus { records, stats })
}
