//! Log-linear autoregressive policy over trajectory decisions.
//!
//! Generation walks the canonical automaton. At each solve or rectify step
//! the policy picks an answer token, at each verify step a verdict; every
//! choice is a softmax over `w · φ(context, candidate)`. The verify strategy
//! is drawn uniformly and is not part of the policy's distribution, so
//! `logprob` scores only answers and verdicts.
//!
//! Everything here is exact: log-probabilities, gradients, the full
//! trajectory support (`enumerate`) and closed-form outcome statistics.

mod features;
mod sft;

pub use features::{
    Active, AnswerState, Decision, FeatureLayout, PolicyParams, VERDICT_CORRECT, VERDICT_INCORRECT,
};
pub use sft::{gd_step, sft_loss, train_sft, Objective, SftConfig, SftExample, SftTrace};

use crate::env::Problem;
use crate::oracle::text;
use crate::trajectory::{Automaton, Step, StepKind, Trajectory, TransitionError, Verdict, VerifyStrategy};
use rand::{Rng, RngCore};

/// Upper bound on trajectories `enumerate` will materialize.
pub const ENUMERATION_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("trajectory is not valid for the policy: {0}")]
    InvalidTrajectory(#[from] TransitionError),
    #[error("problem {problem} has {got} answers, policy expects {expected}")]
    AnswerSpaceMismatch {
        problem: String,
        expected: usize,
        got: usize,
    },
    #[error("answer {answer} is outside the answer space of {problem}")]
    AnswerOutsideSpace { problem: String, answer: u32 },
    #[error("{count} trajectories exceed the enumeration limit {limit}")]
    EnumerationTooLarge { count: u64, limit: u64 },
    #[error("non-finite value in parameters or gradient")]
    NonFinite,
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("mask weight must be non-negative, got {0}")]
    BadMaskWeight(f64),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

/// One realized decision of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub decision: Decision,
    pub chosen: usize,
    /// Whether the decision sits inside a verify/rectify step.
    pub masked: bool,
}

fn check_space(params: &PolicyParams, problem: &Problem) -> Result<(), PolicyError> {
    let expected = params.layout().answer_space_size;
    if problem.answer_space.len() != expected {
        return Err(PolicyError::AnswerSpaceMismatch {
            problem: problem.id.clone(),
            expected,
            got: problem.answer_space.len(),
        });
    }
    Ok(())
}

/// Decompose a canonical trajectory into its decisions.
pub fn decisions(problem: &Problem, traj: &Trajectory, k_max: usize) -> Result<Vec<Choice>, PolicyError> {
    Automaton::canonical(k_max).validate(traj)?;
    let level = problem.level_index();
    let gt_index = problem.gt_index();
    let mut out = Vec::with_capacity(traj.steps.len());
    let mut last: Option<(AnswerState, bool)> = None;
    for step in &traj.steps {
        match step {
            Step::Solve { answer, .. } | Step::Rectify { answer, .. } => {
                let state = if step.kind() == StepKind::Solve {
                    AnswerState::Solve
                } else {
                    AnswerState::Rectify
                };
                let chosen = problem
                    .answer_index(*answer)
                    .ok_or_else(|| PolicyError::AnswerOutsideSpace {
                        problem: problem.id.clone(),
                        answer: *answer,
                    })?;
                out.push(Choice {
                    decision: Decision::Answer { state, level, gt_index },
                    chosen,
                    masked: state == AnswerState::Rectify,
                });
                last = Some((state, chosen == gt_index));
            }
            Step::Verify { verdict, .. } => {
                let (after, prev_correct) = last.expect("validated trajectory starts with solve");
                out.push(Choice {
                    decision: Decision::Verdict {
                        after,
                        level,
                        prev_correct,
                    },
                    chosen: match verdict {
                        Verdict::Correct => VERDICT_CORRECT,
                        Verdict::Incorrect => VERDICT_INCORRECT,
                    },
                    masked: true,
                });
            }
        }
    }
    Ok(out)
}

/// Add `scale · (φ(chosen) − E[φ])` into `grad`; return log P(chosen).
pub(crate) fn accumulate_choice(params: &PolicyParams, c: &Choice, scale: f64, grad: &mut [f64]) -> f64 {
    let layout = params.layout();
    let lp = params.log_probs(&c.decision);
    if scale != 0.0 {
        for &i in layout.active(&c.decision, c.chosen).as_slice() {
            grad[i] += scale;
        }
        for (cand, l) in lp.iter().enumerate() {
            let p = l.exp();
            for &i in layout.active(&c.decision, cand).as_slice() {
                grad[i] -= scale * p;
            }
        }
    }
    lp[c.chosen]
}

pub fn logprob(params: &PolicyParams, problem: &Problem, traj: &Trajectory, k_max: usize) -> Result<f64, PolicyError> {
    check_space(params, problem)?;
    Ok(decisions(problem, traj, k_max)?
        .iter()
        .map(|c| params.log_probs(&c.decision)[c.chosen])
        .sum())
}

/// Log-probability and its gradient with respect to the weights.
pub fn logprob_and_grad(
    params: &PolicyParams,
    problem: &Problem,
    traj: &Trajectory,
    k_max: usize,
) -> Result<(f64, Vec<f64>), PolicyError> {
    check_space(params, problem)?;
    let mut grad = vec![0.0; params.dim()];
    let lp = decisions(problem, traj, k_max)?
        .iter()
        .map(|c| accumulate_choice(params, c, 1.0, &mut grad))
        .sum();
    Ok((lp, grad))
}

pub fn grad_logprob(
    params: &PolicyParams,
    problem: &Problem,
    traj: &Trajectory,
    k_max: usize,
) -> Result<Vec<f64>, PolicyError> {
    logprob_and_grad(params, problem, traj, k_max).map(|(_, g)| g)
}

fn draw(params: &PolicyParams, d: &Decision, rng: &mut dyn RngCore) -> usize {
    let lp = params.log_probs(d);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    lp.len() - 1
}

/// Ancestral sample of one complete trajectory.
pub fn sample(
    params: &PolicyParams,
    problem: &Problem,
    k_max: usize,
    rng: &mut dyn RngCore,
) -> Result<Trajectory, PolicyError> {
    check_space(params, problem)?;
    let level = problem.level_index();
    let gt_index = problem.gt_index();
    let answer_decision = |state| Decision::Answer { state, level, gt_index };

    let mut idx = draw(params, &answer_decision(AnswerState::Solve), rng);
    let mut steps = vec![Step::solve(text::solve(&problem.id), problem.answer_space[idx])];
    let mut after = AnswerState::Solve;
    let mut cycles = 0;
    loop {
        let strategy = if rng.random_bool(0.5) {
            VerifyStrategy::DirectDerivation
        } else {
            VerifyStrategy::Contradiction
        };
        let d = Decision::Verdict {
            after,
            level,
            prev_correct: idx == gt_index,
        };
        let verdict = if draw(params, &d, rng) == VERDICT_CORRECT {
            Verdict::Correct
        } else {
            Verdict::Incorrect
        };
        let answer = problem.answer_space[idx];
        steps.push(Step::verify(text::verify(answer, Some(strategy)), verdict, Some(strategy)));
        if verdict == Verdict::Correct || cycles >= k_max {
            break;
        }
        cycles += 1;
        idx = draw(params, &answer_decision(AnswerState::Rectify), rng);
        steps.push(Step::rectify(text::rectify(Some(answer)), problem.answer_space[idx]));
        after = AnswerState::Rectify;
    }
    Ok(Trajectory::new(problem.id.clone(), steps))
}

/// Number of complete canonical trajectories over `a` answers with at most
/// `k_max` correction cycles.
pub fn trajectory_count(a: u64, k_max: usize) -> u64 {
    // from the last verify backwards: at the cap both verdicts end the trace
    let mut count = a.saturating_mul(2);
    for _ in 0..k_max {
        count = a.saturating_mul(count.saturating_add(1));
    }
    count
}

/// Every complete canonical trajectory for `problem`, each once. Verify
/// steps carry no strategy.
pub fn enumerate(problem: &Problem, k_max: usize) -> Result<Vec<Trajectory>, PolicyError> {
    let a = problem.answer_space.len() as u64;
    let count = trajectory_count(a, k_max);
    if count > ENUMERATION_LIMIT {
        return Err(PolicyError::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    fn go(problem: &Problem, k_max: usize, steps: &mut Vec<Step>, cycles: usize, out: &mut Vec<Trajectory>) {
        let answer = steps
            .last()
            .and_then(Step::answer)
            .expect("recursion is entered after an answer step");
        for verdict in [Verdict::Correct, Verdict::Incorrect] {
            steps.push(Step::verify(text::verify(answer, None), verdict, None));
            if verdict == Verdict::Correct || cycles >= k_max {
                out.push(Trajectory::new(problem.id.clone(), steps.clone()));
            } else {
                for &next in &problem.answer_space {
                    steps.push(Step::rectify(text::rectify(Some(answer)), next));
                    go(problem, k_max, steps, cycles + 1, out);
                    steps.pop();
                }
            }
            steps.pop();
        }
    }
    let mut out = Vec::with_capacity(count as usize);
    for &first in &problem.answer_space {
        let mut steps = vec![Step::solve(text::solve(&problem.id), first)];
        go(problem, k_max, &mut steps, 0, &mut out);
    }
    Ok(out)
}

/// Exact outcome statistics of the policy on one problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    /// P(final answer is correct).
    pub p_final_correct: f64,
    /// E[number of rectify steps].
    pub expected_rectifies: f64,
}

impl Outcome {
    /// Expected attempts: the first solve plus each correction cycle.
    pub fn expected_attempts(&self) -> f64 {
        self.expected_rectifies + 1.0
    }
}

/// Closed-form outcome via recursion over (cycles used, answer correctness).
pub fn outcome(params: &PolicyParams, problem: &Problem, k_max: usize) -> Result<Outcome, PolicyError> {
    check_space(params, problem)?;
    let level = problem.level_index();
    let gt_index = problem.gt_index();
    let p_right = |state| {
        params.log_probs(&Decision::Answer { state, level, gt_index })[gt_index].exp()
    };
    let p_confirm = |after, prev_correct| {
        params.log_probs(&Decision::Verdict {
            after,
            level,
            prev_correct,
        })[VERDICT_CORRECT]
            .exp()
    };
    let p_rect = p_right(AnswerState::Rectify);

    // value after an answer with correctness `right`, `cycles` used:
    // (P(final correct), E[remaining rectifies])
    fn value(
        right: bool,
        after: AnswerState,
        cycles: usize,
        k_max: usize,
        p_rect: f64,
        p_confirm: &dyn Fn(AnswerState, bool) -> f64,
    ) -> (f64, f64) {
        let c = p_confirm(after, right);
        let stop_correct = if right { 1.0 } else { 0.0 };
        if cycles >= k_max {
            return (stop_correct, 0.0);
        }
        let (r_ok, r_rect) = value(true, AnswerState::Rectify, cycles + 1, k_max, p_rect, p_confirm);
        let (w_ok, w_rect) = value(false, AnswerState::Rectify, cycles + 1, k_max, p_rect, p_confirm);
        let cont_ok = p_rect * r_ok + (1.0 - p_rect) * w_ok;
        let cont_rect = 1.0 + p_rect * r_rect + (1.0 - p_rect) * w_rect;
        (c * stop_correct + (1.0 - c) * cont_ok, (1.0 - c) * cont_rect)
    }

    let p0 = p_right(AnswerState::Solve);
    let (r_ok, r_rect) = value(true, AnswerState::Solve, 0, k_max, p_rect, &p_confirm);
    let (w_ok, w_rect) = value(false, AnswerState::Solve, 0, k_max, p_rect, &p_confirm);
    Ok(Outcome {
        p_final_correct: p0 * r_ok + (1.0 - p0) * w_ok,
        expected_rectifies: p0 * r_rect + (1.0 - p0) * w_rect,
    })
}

#[cfg(test)]
mod tests;
