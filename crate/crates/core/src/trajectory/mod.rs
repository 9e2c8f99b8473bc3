//! Self-correction trajectories.
//!
//! A trajectory is an ordered list of solve / verify / rectify steps. Each
//! solve or rectify step carries an answer token, each verify step carries a
//! verdict on the answer immediately before it. Which step may follow which
//! is decided by the [`Automaton`]; the textual form is produced by
//! [`render`] and read back by [`parse`].

mod automaton;
mod grammar;

pub use automaton::{Automaton, AutomatonMode, Next, NextSet, TransitionError};
pub use grammar::{
    parse, parse_steps, render, render_dropping_phrase, ParseError, ParseErrorKind,
    RECTIFY_PHRASE, VERIFY_PHRASE,
};

use serde::{Deserialize, Serialize};
use std::fmt;

/// An answer token. Problems draw their answer space from these.
pub type Answer = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Solve,
    Verify,
    Rectify,
}

impl StepKind {
    pub fn tag(self) -> &'static str {
        match self {
            StepKind::Solve => "solve",
            StepKind::Verify => "verify",
            StepKind::Rectify => "rectify",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Correct,
    Incorrect,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "CORRECT",
            Verdict::Incorrect => "INCORRECT",
        }
    }

    pub fn from_correctness(correct: bool) -> Self {
        if correct {
            Verdict::Correct
        } else {
            Verdict::Incorrect
        }
    }
}

/// How a verify step checks the preceding answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyStrategy {
    /// Re-derive the answer forward from the problem statement.
    DirectDerivation,
    /// Assume the answer is false and look for an inconsistency.
    Contradiction,
}

impl VerifyStrategy {
    pub const ALL: [VerifyStrategy; 2] = [VerifyStrategy::DirectDerivation, VerifyStrategy::Contradiction];

    /// Attribute value used in the serialized trace.
    pub fn attr(self) -> &'static str {
        match self {
            VerifyStrategy::DirectDerivation => "direct",
            VerifyStrategy::Contradiction => "contradiction",
        }
    }

    pub fn from_attr(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(VerifyStrategy::DirectDerivation),
            "contradiction" => Some(VerifyStrategy::Contradiction),
            _ => None,
        }
    }
}

/// One step of a trajectory. Field presence is fixed by the variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Step {
    Solve {
        text: String,
        answer: Answer,
    },
    Verify {
        text: String,
        verdict: Verdict,
        strategy: Option<VerifyStrategy>,
    },
    Rectify {
        text: String,
        answer: Answer,
    },
}

impl Step {
    pub fn solve(text: impl Into<String>, answer: Answer) -> Self {
        Step::Solve { text: text.into(), answer }
    }

    pub fn verify(text: impl Into<String>, verdict: Verdict, strategy: Option<VerifyStrategy>) -> Self {
        Step::Verify {
            text: text.into(),
            verdict,
            strategy,
        }
    }

    pub fn rectify(text: impl Into<String>, answer: Answer) -> Self {
        Step::Rectify { text: text.into(), answer }
    }

    pub fn kind(&self) -> StepKind {
        match self {
            Step::Solve { .. } => StepKind::Solve,
            Step::Verify { .. } => StepKind::Verify,
            Step::Rectify { .. } => StepKind::Rectify,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Step::Solve { text, .. } | Step::Verify { text, .. } | Step::Rectify { text, .. } => text,
        }
    }

    pub fn answer(&self) -> Option<Answer> {
        match self {
            Step::Solve { answer, .. } | Step::Rectify { answer, .. } => Some(*answer),
            Step::Verify { .. } => None,
        }
    }

    pub fn verdict(&self) -> Option<Verdict> {
        match self {
            Step::Verify { verdict, .. } => Some(*verdict),
            _ => None,
        }
    }

    pub fn strategy(&self) -> Option<VerifyStrategy> {
        match self {
            Step::Verify { strategy, .. } => *strategy,
            _ => None,
        }
    }

    /// Mask bit: 1 for verification and rectification steps.
    pub fn is_reflective(&self) -> bool {
        matches!(self.kind(), StepKind::Verify | StepKind::Rectify)
    }
}

/// The part of a step the policy decides on: kind, answer and verdict.
pub type SkeletonStep = (StepKind, Option<Answer>, Option<Verdict>);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(problem_id: impl Into<String>, steps: Vec<Step>) -> Self {
        Self {
            problem_id: problem_id.into(),
            steps,
        }
    }

    /// Answer of the last solve or rectify step.
    pub fn final_answer(&self) -> Option<Answer> {
        self.steps.iter().rev().find_map(Step::answer)
    }

    /// Number of rectify steps (correction cycles).
    pub fn k(&self) -> usize {
        self.steps.iter().filter(|s| s.kind() == StepKind::Rectify).count()
    }

    pub fn kinds(&self) -> Vec<StepKind> {
        self.steps.iter().map(Step::kind).collect()
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.steps.iter().filter_map(Step::verdict).collect()
    }

    /// Kinds, answers and verdicts only; texts and verify strategies dropped.
    pub fn skeleton(&self) -> Vec<SkeletonStep> {
        self.steps
            .iter()
            .map(|s| (s.kind(), s.answer(), s.verdict()))
            .collect()
    }

    pub fn mask(&self) -> Mask {
        mask(self)
    }
}

/// Per-step binary mask: 1 on verify/rectify steps, 0 on solve steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mask(pub Vec<u8>);

impl Mask {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Expand to one bit per unit given each step's unit (e.g. token) count.
    /// Every unit of a step shares that step's bit.
    pub fn expand(&self, units_per_step: &[usize]) -> Vec<u8> {
        assert_eq!(units_per_step.len(), self.0.len(), "one unit count per step");
        self.0
            .iter()
            .zip(units_per_step)
            .flat_map(|(&bit, &n)| std::iter::repeat_n(bit, n))
            .collect()
    }
}

pub fn mask(traj: &Trajectory) -> Mask {
    Mask(traj.steps.iter().map(|s| u8::from(s.is_reflective())).collect())
}
