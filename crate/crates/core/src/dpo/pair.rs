use crate::trajectory::{render, render_dropping_phrase, Automaton, TransitionError, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Seed,
    Online,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PairError {
    #[error("winner and loser of a pair for {0} are identical")]
    Identical(String),
    #[error("teacher margin {0} is outside [0, 1]")]
    BadMargin(f64),
    #[error("pair for {problem} mixes trajectories of {other}")]
    ProblemMismatch { problem: String, other: String },
    #[error("pair trajectory is invalid: {0}")]
    Invalid(#[from] TransitionError),
}

/// Preferred and dispreferred trajectory for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PairRecord", try_from = "PairRecord")]
pub struct PreferencePair {
    problem_id: String,
    y_win: Trajectory,
    y_lose: Trajectory,
    teacher_margin: f64,
    source: PairSource,
    created_iter: usize,
    /// Connective phrase missing from the loser's text, if it is a
    /// format-corrupted variant.
    lose_dropped_phrase: Option<usize>,
}

impl PreferencePair {
    pub fn new(
        y_win: Trajectory,
        y_lose: Trajectory,
        teacher_margin: f64,
        source: PairSource,
        created_iter: usize,
    ) -> Result<Self, PairError> {
        let problem_id = y_win.problem_id.clone();
        if y_lose.problem_id != problem_id {
            return Err(PairError::ProblemMismatch {
                problem: problem_id,
                other: y_lose.problem_id,
            });
        }
        if y_win == y_lose {
            return Err(PairError::Identical(problem_id));
        }
        if !(0.0..=1.0).contains(&teacher_margin) {
            return Err(PairError::BadMargin(teacher_margin));
        }
        Ok(Self {
            problem_id,
            y_win,
            y_lose,
            teacher_margin,
            source,
            created_iter,
            lose_dropped_phrase: None,
        })
    }

    pub fn with_lose_dropped_phrase(mut self, dropped: Option<usize>) -> Self {
        self.lose_dropped_phrase = dropped;
        self
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }
    pub fn y_win(&self) -> &Trajectory {
        &self.y_win
    }
    pub fn y_lose(&self) -> &Trajectory {
        &self.y_lose
    }
    pub fn teacher_margin(&self) -> f64 {
        self.teacher_margin
    }
    pub fn source(&self) -> PairSource {
        self.source
    }
    pub fn created_iter(&self) -> usize {
        self.created_iter
    }
    pub fn lose_dropped_phrase(&self) -> Option<usize> {
        self.lose_dropped_phrase
    }

    pub fn validate(&self, automaton: &Automaton) -> Result<(), PairError> {
        automaton.validate(&self.y_win)?;
        automaton.validate(&self.y_lose)?;
        Ok(())
    }

    pub fn lose_text(&self) -> String {
        match self.lose_dropped_phrase {
            Some(i) => render_dropping_phrase(&self.y_lose, i),
            None => render(&self.y_lose),
        }
    }
}

/// On-disk form of a pair. The texts are informational; the structured
/// trajectories are authoritative.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    problem_id: String,
    teacher_margin: f64,
    source: PairSource,
    created_iter: usize,
    y_win_text: String,
    y_lose_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lose_dropped_phrase: Option<usize>,
    y_win: Trajectory,
    y_lose: Trajectory,
}

impl From<PreferencePair> for PairRecord {
    fn from(p: PreferencePair) -> Self {
        PairRecord {
            y_win_text: render(&p.y_win),
            y_lose_text: p.lose_text(),
            problem_id: p.problem_id,
            teacher_margin: p.teacher_margin,
            source: p.source,
            created_iter: p.created_iter,
            lose_dropped_phrase: p.lose_dropped_phrase,
            y_win: p.y_win,
            y_lose: p.y_lose,
        }
    }
}

impl TryFrom<PairRecord> for PreferencePair {
    type Error = PairError;
    fn try_from(r: PairRecord) -> Result<Self, Self::Error> {
        let pair = PreferencePair::new(r.y_win, r.y_lose, r.teacher_margin, r.source, r.created_iter)?
            .with_lose_dropped_phrase(r.lose_dropped_phrase);
        if pair.problem_id != r.problem_id {
            return Err(PairError::ProblemMismatch {
                problem: r.problem_id,
                other: pair.problem_id,
            });
        }
        Ok(pair)
    }
}

