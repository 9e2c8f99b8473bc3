//! Synthetic problem domain with known ground truth.

use crate::rng::stream_rng;
use crate::trajectory::{Answer, VerifyStrategy};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("answer {answer} is not in the answer space of problem {problem}")]
    AnswerOutsideSpace { problem: String, answer: Answer },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub answer_space: Vec<Answer>,
    pub gt_answer: Answer,
    /// Difficulty, 1 (easiest) to 5.
    pub level: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment_ref: Option<String>,
}

impl Problem {
    pub fn grade(&self, answer: Answer) -> Result<bool, EnvError> {
        if !self.answer_space.contains(&answer) {
            return Err(EnvError::AnswerOutsideSpace {
                problem: self.id.clone(),
                answer,
            });
        }
        Ok(answer == self.gt_answer)
    }

    /// Correctness of an answer, treating tokens outside the space as wrong.
    pub fn is_correct(&self, answer: Answer) -> bool {
        answer == self.gt_answer
    }

    pub fn answer_index(&self, answer: Answer) -> Option<usize> {
        self.answer_space.iter().position(|&a| a == answer)
    }

    pub fn gt_index(&self) -> usize {
        self.answer_index(self.gt_answer)
            .expect("ground truth is in the answer space")
    }

    pub fn level_index(&self) -> usize {
        usize::from(self.level.clamp(1, LEVELS as u8)) - 1
    }

    pub fn wrong_answers(&self) -> impl Iterator<Item = Answer> + '_ {
        self.answer_space.iter().copied().filter(move |&a| a != self.gt_answer)
    }
}

/// Verdict probabilities of one verification strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionRow {
    /// P(verdict CORRECT | answer wrong).
    pub p_correct_given_wrong: f64,
    /// P(verdict CORRECT | answer right).
    pub p_correct_given_right: f64,
}

impl ConfusionRow {
    pub const IDENTITY: ConfusionRow = ConfusionRow {
        p_correct_given_wrong: 0.0,
        p_correct_given_right: 1.0,
    };

    pub fn p_correct(&self, answer_is_right: bool) -> f64 {
        if answer_is_right {
            self.p_correct_given_right
        } else {
            self.p_correct_given_wrong
        }
    }

    /// Probability an error is flagged INCORRECT.
    pub fn error_recall(&self) -> f64 {
        1.0 - self.p_correct_given_wrong
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierConfusion {
    pub direct: ConfusionRow,
    pub contradiction: ConfusionRow,
}

impl VerifierConfusion {
    pub fn row(&self, strategy: VerifyStrategy) -> &ConfusionRow {
        match strategy {
            VerifyStrategy::DirectDerivation => &self.direct,
            VerifyStrategy::Contradiction => &self.contradiction,
        }
    }

    pub fn identity() -> Self {
        Self {
            direct: ConfusionRow::IDENTITY,
            contradiction: ConfusionRow::IDENTITY,
        }
    }
}

impl Default for VerifierConfusion {
    /// Direct derivation leans toward confirming answers; contradiction is
    /// more balanced.
    fn default() -> Self {
        Self {
            direct: ConfusionRow {
                p_correct_given_wrong: 0.40,
                p_correct_given_right: 0.95,
            },
            contradiction: ConfusionRow {
                p_correct_given_wrong: 0.15,
                p_correct_given_right: 0.85,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub answer_space_size: usize,
    pub counts_per_level: [usize; LEVELS],
    /// Probability the simulated solver answers correctly, per level.
    pub solver_accuracy: [f64; LEVELS],
    pub verifier_confusion: VerifierConfusion,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            answer_space_size: 5,
            counts_per_level: [10; LEVELS],
            solver_accuracy: [0.9, 0.75, 0.6, 0.4, 0.2],
            verifier_confusion: VerifierConfusion::default(),
            seed: 0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<(), EnvError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(EnvError::InvalidConfig(format!("{name} = {p} is not a probability")))
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.answer_space_size < 2 {
            return Err(EnvError::InvalidConfig("answer_space_size must be at least 2".into()));
        }
        for (i, &p) in self.solver_accuracy.iter().enumerate() {
            check_prob(&format!("solver_accuracy[{i}]"), p)?;
        }
        for s in VerifyStrategy::ALL {
            let row = self.verifier_confusion.row(s);
            check_prob("p_correct_given_wrong", row.p_correct_given_wrong)?;
            check_prob("p_correct_given_right", row.p_correct_given_right)?;
        }
        Ok(())
    }

    pub fn total_problems(&self) -> usize {
        self.counts_per_level.iter().sum()
    }

    pub fn accuracy_for(&self, level: u8) -> f64 {
        self.solver_accuracy[usize::from(level.clamp(1, LEVELS as u8)) - 1]
    }
}

const RNG_DOMAIN: u64 = 0x656e_7669;

/// Generate the problem set. Deterministic in `config.seed`; the ground
/// truth of each problem is uniform over the answer space.
pub fn gen_problems(config: &EnvConfig) -> Result<Vec<Problem>, EnvError> {
    config.validate()?;
    let size = config.answer_space_size;
    let answer_space: Vec<Answer> = (0..size as Answer).collect();
    let mut rng = stream_rng(config.seed, RNG_DOMAIN, 0);
    let mut problems = Vec::with_capacity(config.total_problems());
    for (li, &count) in config.counts_per_level.iter().enumerate() {
        let level = li as u8 + 1;
        for _ in 0..count {
            let idx = problems.len();
            let gt_answer = answer_space[rng.random_range(0..size)];
            let x: u32 = rng.random_range(1..1000);
            let statement = format!(
                "Level {level}: compute f({x}) mod {size}, where f is the level-{level} recurrence."
            );
            problems.push(Problem {
                id: format!("p{idx:04}"),
                statement,
                answer_space: answer_space.clone(),
                gt_answer,
                level,
                attachment_ref: None,
            });
        }
    }
    Ok(problems)
}
