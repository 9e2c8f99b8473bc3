use super::{
    dpo_loss, generate_candidates, label_pair, DpoConfig, DpoError, DpoMode, PairSource, PreferenceBuffer,
    PreferencePair, Rejection,
};
use crate::env::Problem;
use crate::oracle::Teacher;
use crate::policy::{gd_step, logprob, PolicyParams};
use crate::rng::stream_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

const SPLIT_DOMAIN: u64 = 0x7370_6c74;
const GEN_DOMAIN: u64 = 0x6765_6e65;
const BATCH_DOMAIN: u64 = 0x6261_7463;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl MarginStats {
    fn of(margins: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for m in margins {
            min = min.min(m);
            max = max.max(m);
            sum += m;
            n += 1;
        }
        (n > 0).then(|| MarginStats {
            min,
            mean: sum / n as f64,
            max,
        })
    }
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub mean_loss: f64,
    pub buffer_size: usize,
    pub heldout_pref_acc: Option<f64>,
    pub seed_pairs: usize,
    pub online_pairs: usize,
    pub buffer_margin: Option<MarginStats>,
    /// Margins of the pairs added this iteration.
    pub new_margin: Option<MarginStats>,
    pub generated_pairs: usize,
    pub rejected_ambiguous: usize,
    pub rejected_degenerate: usize,
    pub evicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub params: PolicyParams,
    pub history: Vec<HistoryRecord>,
    pub buffer: PreferenceBuffer,
    pub heldout: Vec<PreferencePair>,
}

/// Split seed pairs by problem into (train, held-out).
pub fn heldout_split(pairs: &[PreferencePair], fraction: f64, seed: u64) -> (Vec<PreferencePair>, Vec<PreferencePair>) {
    let ids: BTreeSet<&str> = pairs.iter().map(PreferencePair::problem_id).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut stream_rng(seed, SPLIT_DOMAIN, 0));
    let n_held = (fraction * ids.len() as f64).round() as usize;
    let held: BTreeSet<&str> = ids[..n_held.min(ids.len())].iter().copied().collect();
    pairs
        .iter()
        .cloned()
        .partition(|p| !held.contains(p.problem_id()))
}

/// Fraction of pairs whose winner is strictly more likely than the loser.
pub fn preference_accuracy(
    params: &PolicyParams,
    pairs: &[PreferencePair],
    problems: &HashMap<&str, &Problem>,
    k_max: usize,
) -> Result<Option<f64>, DpoError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut right = 0usize;
    for pair in pairs {
        let p = lookup(problems, pair)?;
        if logprob(params, p, pair.y_win(), k_max)? > logprob(params, p, pair.y_lose(), k_max)? {
            right += 1;
        }
    }
    Ok(Some(right as f64 / pairs.len() as f64))
}

fn lookup<'a>(problems: &HashMap<&str, &'a Problem>, pair: &PreferencePair) -> Result<&'a Problem, DpoError> {
    problems
        .get(pair.problem_id())
        .copied()
        .ok_or_else(|| DpoError::UnknownProblem(pair.problem_id().to_string()))
}

#[derive(Default)]
struct GenerationTally {
    pairs: Vec<PreferencePair>,
    ambiguous: usize,
    degenerate: usize,
}

#[allow(clippy::too_many_arguments)]
fn generate(
    cfg: &DpoConfig,
    params: &PolicyParams,
    prompts: &[&Problem],
    seed_winners: &HashMap<&str, &PreferencePair>,
    teacher: &dyn Teacher,
    k_max: usize,
    iter: usize,
    first_prompt: usize,
) -> Result<GenerationTally, DpoError> {
    let labelled: Vec<Result<Result<PreferencePair, Rejection>, DpoError>> = prompts
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let mut rng = stream_rng(cfg.seed, GEN_DOMAIN, (first_prompt + j) as u64);
            let mut cands = generate_candidates(params, p, cfg.candidates, k_max, &mut rng)?;
            if let Some(seed) = seed_winners.get(p.id.as_str()) {
                cands.push(seed.y_win().clone());
            }
            Ok(label_pair(p, &cands, teacher, cfg.tau, iter)?)
        })
        .collect();
    let mut tally = GenerationTally::default();
    for r in labelled {
        match r? {
            Ok(pair) => tally.pairs.push(pair),
            Err(Rejection::Ambiguous) => tally.ambiguous += 1,
            Err(Rejection::Degenerate) => tally.degenerate += 1,
        }
    }
    Ok(tally)
}

fn mean_buffer_loss(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    buffer: &PreferenceBuffer,
    problems: &HashMap<&str, &Problem>,
    beta: f64,
    k_max: usize,
) -> Result<f64, DpoError> {
    if buffer.is_empty() {
        return Err(DpoError::EmptyBuffer);
    }
    let mut sum = 0.0;
    for pair in buffer.iter() {
        sum += dpo_loss(params, ref_params, lookup(problems, pair)?, pair, beta, k_max)?.loss;
    }
    Ok(sum / buffer.len() as f64)
}

/// Iterative DPO starting from (and referenced to) `sft_params`.
///
/// Seed pairs are split by problem; the held-out part is never trained on
/// and its problems are never used as prompts. Each iteration optionally
/// regenerates pairs from the current policy, then takes
/// `steps_per_iter` mini-batch gradient steps on pairs drawn uniformly
/// with replacement from the buffer.
pub fn run_pipeline(
    cfg: &DpoConfig,
    seed_pairs: &[PreferencePair],
    prompts: &[Problem],
    teacher: &dyn Teacher,
    sft_params: &PolicyParams,
    k_max: usize,
) -> Result<PipelineOutput, DpoError> {
    cfg.validate()?;
    let problems: HashMap<&str, &Problem> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let (train, heldout) = heldout_split(seed_pairs, cfg.heldout_fraction, cfg.seed);
    let held_ids: BTreeSet<&str> = heldout.iter().map(PreferencePair::problem_id).collect();
    let train_prompts: Vec<&Problem> = prompts.iter().filter(|p| !held_ids.contains(p.id.as_str())).collect();
    let seed_winners: HashMap<&str, &PreferencePair> = train.iter().map(|p| (p.problem_id(), p)).collect();

    let mut buffer = PreferenceBuffer::new(cfg.buffer_capacity, cfg.eviction);
    let mut evicted = buffer.update(train.iter().cloned()).len();
    if buffer.is_empty() {
        return Err(DpoError::EmptyBuffer);
    }

    let ref_params = sft_params;
    let mut params = sft_params.clone();
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let snapshot = |iter: usize,
                    mean_loss: f64,
                    params: &PolicyParams,
                    buffer: &PreferenceBuffer,
                    tally: &GenerationTally,
                    evicted: usize|
     -> Result<HistoryRecord, DpoError> {
        let online = buffer.iter().filter(|p| p.source() == PairSource::Online).count();
        Ok(HistoryRecord {
            iter,
            mean_loss,
            buffer_size: buffer.len(),
            heldout_pref_acc: preference_accuracy(params, &heldout, &problems, k_max)?,
            seed_pairs: buffer.len() - online,
            online_pairs: online,
            buffer_margin: MarginStats::of(buffer.iter().map(PreferencePair::teacher_margin)),
            new_margin: MarginStats::of(tally.pairs.iter().map(PreferencePair::teacher_margin)),
            generated_pairs: tally.pairs.len(),
            rejected_ambiguous: tally.ambiguous,
            rejected_degenerate: tally.degenerate,
            evicted,
        })
    };
    let initial_loss = mean_buffer_loss(&params, ref_params, &buffer, &problems, cfg.beta, k_max)?;
    history.push(snapshot(0, initial_loss, &params, &buffer, &GenerationTally::default(), evicted)?);

    let period = cfg.regen_period();
    let mut next_prompt = 0usize;
    for iter in 1..=cfg.iterations {
        let mut tally = GenerationTally::default();
        evicted = 0;
        let mut regenerate = |params: &PolicyParams, buffer: &mut PreferenceBuffer, tally: &mut GenerationTally| {
            if cfg.mode == DpoMode::Offline || train_prompts.is_empty() {
                return Ok::<usize, DpoError>(0);
            }
            let slice: Vec<&Problem> = (0..cfg.prompts_per_iter.min(train_prompts.len()))
                .map(|j| train_prompts[(next_prompt + j) % train_prompts.len()])
                .collect();
            let fresh = generate(cfg, params, &slice, &seed_winners, teacher, k_max, iter, next_prompt)?;
            next_prompt += slice.len();
            tally.ambiguous += fresh.ambiguous;
            tally.degenerate += fresh.degenerate;
            tally.pairs.extend(fresh.pairs.iter().cloned());
            Ok(buffer.update(fresh.pairs).len())
        };

        evicted += regenerate(&params, &mut buffer, &mut tally)?;
        let mut batch_rng = stream_rng(cfg.seed, BATCH_DOMAIN, iter as u64);
        let mut loss_sum = 0.0;
        for step in 0..cfg.steps_per_iter {
            if step > 0 && step % period == 0 {
                evicted += regenerate(&params, &mut buffer, &mut tally)?;
            }
            let mut grad = vec![0.0; params.dim()];
            let mut batch_loss = 0.0;
            for _ in 0..cfg.batch_size {
                let pair = buffer
                    .get(batch_rng.random_range(0..buffer.len()))
                    .expect("index within buffer");
                let l = dpo_loss(&params, ref_params, lookup(&problems, pair)?, pair, cfg.beta, k_max)?;
                batch_loss += l.loss;
                for (g, d) in grad.iter_mut().zip(&l.grad) {
                    *g += d;
                }
            }
            let n = cfg.batch_size as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            loss_sum += batch_loss / n;
            params = gd_step(&params, &grad, cfg.lr).map_err(|_| DpoError::NonFinite)?;
        }
        let mean_loss = if cfg.steps_per_iter > 0 {
            loss_sum / cfg.steps_per_iter as f64
        } else {
            mean_buffer_loss(&params, ref_params, &buffer, &problems, cfg.beta, k_max)?
        };
        if !mean_loss.is_finite() {
            return Err(DpoError::NonFinite);
        }
        history.push(snapshot(iter, mean_loss, &params, &buffer, &tally, evicted)?);
    }
    Ok(PipelineOutput {
        params,
        history,
        buffer,
        heldout,
    })
}

