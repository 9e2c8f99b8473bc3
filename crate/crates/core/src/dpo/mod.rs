//! Direct preference optimization against a fixed reference policy, the
//! bounded preference buffer, and the iterative training loop.

mod buffer;
mod pair;
mod pipeline;

pub use buffer::{Eviction, PreferenceBuffer};
pub use pair::{PairError, PairSource, PreferencePair};
pub use pipeline::{heldout_split, preference_accuracy, run_pipeline, HistoryRecord, MarginStats, PipelineOutput};

use crate::env::Problem;
use crate::oracle::Teacher;
use crate::policy::{self, logprob, logprob_and_grad, PolicyError, PolicyParams};
use crate::trajectory::Trajectory;
use rand::RngCore;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DpoError {
    #[error("preference buffer is empty")]
    EmptyBuffer,
    #[error("non-finite DPO loss")]
    NonFinite,
    #[error("invalid DPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error("pair refers to unknown problem {0}")]
    UnknownProblem(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpoMode {
    #[default]
    SemiOnline,
    Offline,
}

impl std::str::FromStr for DpoMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "semi_online" => Ok(DpoMode::SemiOnline),
            "offline" => Ok(DpoMode::Offline),
            other => Err(format!("unknown DPO mode {other:?} (expected semi_online or offline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Optimization steps per iteration (S).
    pub steps_per_iter: usize,
    /// Iterations (T).
    pub iterations: usize,
    /// Regenerate every this many steps (M); `None` means once per
    /// iteration.
    pub regen_every: Option<usize>,
    /// Candidates sampled per prompt (N).
    pub candidates: usize,
    /// Minimum teacher margin for a pair to be kept.
    pub tau: f64,
    pub buffer_capacity: usize,
    pub eviction: Eviction,
    pub prompts_per_iter: usize,
    /// Fraction of seed-pair problems held out for evaluation.
    pub heldout_fraction: f64,
    pub mode: DpoMode,
    /// Filled from the run seed; not part of the file schema.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lr: 0.1,
            batch_size: 8,
            steps_per_iter: 200,
            iterations: 5,
            regen_every: None,
            candidates: 4,
            tau: 0.2,
            buffer_capacity: 256,
            eviction: Eviction::Fifo,
            prompts_per_iter: 16,
            heldout_fraction: 0.2,
            mode: DpoMode::SemiOnline,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        let bad = |m: &str| Err(DpoError::InvalidConfig(m.into()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.iterations == 0 || self.buffer_capacity == 0 {
            return bad("batch_size, iterations and buffer_capacity must be at least 1");
        }
        if self.candidates < 2 {
            return bad("candidates must be at least 2");
        }
        if self.prompts_per_iter == 0 {
            return bad("prompts_per_iter must be at least 1");
        }
        if self.regen_every == Some(0) {
            return bad("regen_every must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad("heldout_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn regen_period(&self) -> usize {
        self.regen_every.unwrap_or(self.steps_per_iter).max(1)
    }
}

/// `−ln σ(z)`, stable for large |z|.
pub fn loss_from_z(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// `β ·` difference of the win and lose log-ratios.
    pub z: f64,
}

/// DPO loss of one pair and its gradient with respect to `params`.
pub fn dpo_loss(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    problem: &Problem,
    pair: &PreferencePair,
    beta: f64,
    k_max: usize,
) -> Result<DpoLoss, DpoError> {
    let (lw, gw) = logprob_and_grad(params, problem, pair.y_win(), k_max)?;
    let (ll, gl) = logprob_and_grad(params, problem, pair.y_lose(), k_max)?;
    let rw = logprob(ref_params, problem, pair.y_win(), k_max)?;
    let rl = logprob(ref_params, problem, pair.y_lose(), k_max)?;
    let z = beta * ((lw - rw) - (ll - rl));
    if !z.is_finite() {
        return Err(DpoError::NonFinite);
    }
    let coeff = -(1.0 - sigmoid(z)) * beta;
    let grad = gw.iter().zip(&gl).map(|(a, b)| coeff * (a - b)).collect();
    Ok(DpoLoss {
        loss: loss_from_z(z),
        grad,
        z,
    })
}

/// N independent policy samples.
pub fn generate_candidates(
    params: &PolicyParams,
    problem: &Problem,
    n: usize,
    k_max: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Trajectory>, PolicyError> {
    (0..n).map(|_| policy::sample(params, problem, k_max, rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// Best and worst candidate are too close.
    #[error("ambiguous pair")]
    Ambiguous,
    /// Too close, and every candidate has the same correctness.
    #[error("degenerate pair")]
    Degenerate,
}

/// Best and worst candidate by score, lower index winning ties.
/// Returns `(win, lose, margin)`.
pub fn select_pair(scores: &[f64], correct: &[bool], tau: f64) -> Result<(usize, usize, f64), Rejection> {
    assert_eq!(scores.len(), correct.len());
    assert!(!scores.is_empty());
    let mut win = 0;
    let mut lose = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[win] {
            win = i;
        }
        if s < scores[lose] {
            lose = i;
        }
    }
    let margin = scores[win] - scores[lose];
    if margin < tau || margin <= 0.0 {
        let uniform = correct.iter().all(|&c| c) || correct.iter().all(|&c| !c);
        return Err(if uniform {
            Rejection::Degenerate
        } else {
            Rejection::Ambiguous
        });
    }
    Ok((win, lose, margin))
}

/// Score candidates with the teacher and keep the best-vs-worst pair.
pub fn label_pair(
    problem: &Problem,
    candidates: &[Trajectory],
    teacher: &dyn Teacher,
    tau: f64,
    created_iter: usize,
) -> Result<Result<PreferencePair, Rejection>, PairError> {
    let scores: Vec<_> = candidates.iter().map(|c| teacher.score(problem, c)).collect();
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    let correct: Vec<bool> = scores.iter().map(|s| s.correctness > 0.5).collect();
    match select_pair(&totals, &correct, tau) {
        Ok((w, l, margin)) => PreferencePair::new(
            candidates[w].clone(),
            candidates[l].clone(),
            margin.clamp(0.0, 1.0),
            PairSource::Online,
            created_iter,
        )
        .map(Ok),
        Err(r) => Ok(Err(r)),
    }
}
