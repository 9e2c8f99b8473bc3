use crate::env::Problem;
use crate::trajectory::{Automaton, Step, Trajectory};
use serde::{Deserialize, Serialize};

const W_CORRECTNESS: f64 = 0.6;
const W_FORMAT: f64 = 0.2;
const W_VERIFICATION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherScore {
    pub correctness: f64,
    pub format_valid: f64,
    pub verification_quality: f64,
    pub total: f64,
}

impl TeacherScore {
    pub fn new(correct: bool, format_valid: bool, verification_quality: f64) -> Self {
        let correctness = f64::from(u8::from(correct));
        let format_valid = f64::from(u8::from(format_valid));
        Self {
            correctness,
            format_valid,
            verification_quality,
            total: W_CORRECTNESS * correctness
                + W_FORMAT * format_valid
                + W_VERIFICATION * verification_quality,
        }
    }

    /// Same score with the format criterion failed.
    pub fn with_format_failed(self) -> Self {
        Self::new(self.correctness > 0.5, false, self.verification_quality)
    }
}

/// Fraction of verify steps whose verdict matches the true correctness of
/// the answer right before them. Zero when there are no verify steps.
fn verification_quality(problem: &Problem, steps: &[Step]) -> f64 {
    let mut last_answer = None;
    let (mut total, mut right) = (0usize, 0usize);
    for step in steps {
        if let Some(a) = step.answer() {
            last_answer = Some(a);
        }
        if let Some(verdict) = step.verdict() {
            total += 1;
            if let Some(a) = last_answer {
                let truth = problem.is_correct(a);
                if (verdict == crate::trajectory::Verdict::Correct) == truth {
                    right += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        right as f64 / total as f64
    }
}

pub fn teacher_score(problem: &Problem, traj: &Trajectory, automaton: &Automaton) -> TeacherScore {
    let correct = traj.final_answer().is_some_and(|a| problem.is_correct(a));
    let format_ok = automaton.validate(traj).is_ok();
    TeacherScore::new(correct, format_ok, verification_quality(problem, &traj.steps))
}

/// Scores candidate trajectories for preference labelling.
pub trait Teacher: Sync {
    fn score(&self, problem: &Problem, traj: &Trajectory) -> TeacherScore;
}

/// Deterministic teacher with access to the ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTeacher {
    pub automaton: Automaton,
}

impl RuleTeacher {
    pub fn new(automaton: Automaton) -> Self {
        Self { automaton }
    }
}

impl Teacher for RuleTeacher {
    fn score(&self, problem: &Problem, traj: &Trajectory) -> TeacherScore {
        teacher_score(problem, traj, &self.automaton)
    }
}
