use super::{text, GeneratorOracle, OracleError};
use crate::env::{EnvConfig, Problem, VerifierConfusion, LEVELS};
use crate::trajectory::{Answer, Step, Verdict, VerifyStrategy};
use rand::{Rng, RngCore};

/// Exact sampler for generator behaviour.
///
/// Solve and rectify return the ground truth with the level's accuracy and
/// a uniformly chosen wrong answer otherwise. Verify draws its verdict from
/// the strategy's confusion row given the answer's true correctness.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedGenerator {
    pub accuracy: [f64; LEVELS],
    pub confusion: VerifierConfusion,
}

impl SimulatedGenerator {
    pub fn new(accuracy: [f64; LEVELS], confusion: VerifierConfusion) -> Self {
        Self { accuracy, confusion }
    }

    pub fn from_env(config: &EnvConfig) -> Self {
        Self::new(config.solver_accuracy, config.verifier_confusion)
    }

    /// Same accuracy on every level.
    pub fn uniform(accuracy: f64, confusion: VerifierConfusion) -> Self {
        Self::new([accuracy; LEVELS], confusion)
    }

    pub fn draw_answer(&self, problem: &Problem, rng: &mut dyn RngCore) -> Answer {
        let p = self.accuracy[problem.level_index()];
        let wrong: Vec<Answer> = problem.wrong_answers().collect();
        if wrong.is_empty() || rng.random_bool(p) {
            problem.gt_answer
        } else {
            wrong[rng.random_range(0..wrong.len())]
        }
    }

    pub fn draw_verdict(
        &self,
        problem: &Problem,
        answer: Answer,
        strategy: VerifyStrategy,
        rng: &mut dyn RngCore,
    ) -> Verdict {
        let p = self.confusion.row(strategy).p_correct(problem.is_correct(answer));
        if rng.random_bool(p) {
            Verdict::Correct
        } else {
            Verdict::Incorrect
        }
    }
}

impl GeneratorOracle for SimulatedGenerator {
    fn solve(&self, problem: &Problem, _history: &[Step], rng: &mut dyn RngCore) -> Result<Step, OracleError> {
        Ok(Step::solve(text::solve(&problem.id), self.draw_answer(problem, rng)))
    }

    fn verify(
        &self,
        problem: &Problem,
        answer: Answer,
        strategy: VerifyStrategy,
        rng: &mut dyn RngCore,
    ) -> Result<Step, OracleError> {
        let verdict = self.draw_verdict(problem, answer, strategy, rng);
        Ok(Step::verify(text::verify(answer, Some(strategy)), verdict, Some(strategy)))
    }

    fn rectify(&self, problem: &Problem, history: &[Step], rng: &mut dyn RngCore) -> Result<Step, OracleError> {
        let previous = history.iter().rev().find_map(Step::answer);
        Ok(Step::rectify(text::rectify(previous), self.draw_answer(problem, rng)))
    }
}
