//! Generator and teacher oracles.
//!
//! The generator produces individual steps (solve / verify / rectify) for a
//! problem. [`SimulatedGenerator`] samples them from declared distributions;
//! [`RemoteGenerator`] asks a chat-completions endpoint. The teacher scores
//! whole trajectories against the ground truth.

mod remote;
mod simulated;
mod teacher;
pub mod text;

pub use remote::{CallRecord, PromptTemplates, RemoteEndpointConfig, RemoteError, RemoteGenerator};
pub use simulated::SimulatedGenerator;
pub use teacher::{teacher_score, RuleTeacher, Teacher, TeacherScore};

use crate::env::Problem;
use crate::trajectory::{Answer, Step, StepKind, Trajectory, Verdict, VerifyStrategy};
use rand::{Rng, RngCore};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("oracle returned a {got} step, expected {expected}")]
    WrongKind { expected: StepKind, got: StepKind },
    #[error("oracle answer {answer} is outside the answer space of {problem}")]
    AnswerOutsideSpace { problem: String, answer: Answer },
}

/// Source of individual trajectory steps.
pub trait GeneratorOracle: Sync {
    fn solve(&self, problem: &Problem, history: &[Step], rng: &mut dyn RngCore) -> Result<Step, OracleError>;

    fn verify(
        &self,
        problem: &Problem,
        answer: Answer,
        strategy: VerifyStrategy,
        rng: &mut dyn RngCore,
    ) -> Result<Step, OracleError>;

    fn rectify(&self, problem: &Problem, history: &[Step], rng: &mut dyn RngCore) -> Result<Step, OracleError>;
}

pub(crate) fn check_step(problem: &Problem, expected: StepKind, step: Step) -> Result<Step, OracleError> {
    if step.kind() != expected {
        return Err(OracleError::WrongKind {
            expected,
            got: step.kind(),
        });
    }
    if let Some(answer) = step.answer() {
        if problem.answer_index(answer).is_none() {
            return Err(OracleError::AnswerOutsideSpace {
                problem: problem.id.clone(),
                answer,
            });
        }
    }
    Ok(step)
}

/// Run the generator's own solve / verify / rectify loop: verify with a
/// uniformly drawn strategy, rectify on an `Incorrect` verdict, stop on
/// `Correct` or after `k_max` rectifications.
pub fn self_correct(
    generator: &dyn GeneratorOracle,
    problem: &Problem,
    k_max: usize,
    rng: &mut dyn RngCore,
) -> Result<Trajectory, OracleError> {
    let mut steps = vec![check_step(problem, StepKind::Solve, generator.solve(problem, &[], rng)?)?];
    let mut answer = steps[0].answer().expect("solve carries an answer");
    loop {
        let strategy = VerifyStrategy::ALL[rng.random_range(0..VerifyStrategy::ALL.len())];
        let verify = check_step(problem, StepKind::Verify, generator.verify(problem, answer, strategy, rng)?)?;
        let done = verify.verdict() == Some(Verdict::Correct);
        steps.push(verify);
        let loops = steps.iter().filter(|s| s.kind() == StepKind::Rectify).count();
        if done || loops >= k_max {
            break;
        }
        let rectify = check_step(problem, StepKind::Rectify, generator.rectify(problem, &steps, rng)?)?;
        answer = rectify.answer().expect("rectify carries an answer");
        steps.push(rectify);
    }
    Ok(Trajectory::new(problem.id.clone(), steps))
}
