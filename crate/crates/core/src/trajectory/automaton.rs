use super::{Step, StepKind, Trajectory, Verdict};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Which transition relation the automaton enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutomatonMode {
    /// solve → verify → (end | rectify → verify → …).
    #[default]
    Canonical,
    /// A correct verification sends the trace back to solve. A correct
    /// verification right after a rectify ends it.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Next {
    Solve,
    Verify,
    Rectify,
    End,
}

impl From<StepKind> for Next {
    fn from(kind: StepKind) -> Self {
        match kind {
            StepKind::Solve => Next::Solve,
            StepKind::Verify => Next::Verify,
            StepKind::Rectify => Next::Rectify,
        }
    }
}

impl fmt::Display for Next {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Next::Solve => "solve",
            Next::Verify => "verify",
            Next::Rectify => "rectify",
            Next::End => "end",
        })
    }
}

/// Small set of [`Next`] values.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct NextSet(u8);

impl NextSet {
    const ORDER: [Next; 4] = [Next::Solve, Next::Verify, Next::Rectify, Next::End];

    fn bit(n: Next) -> u8 {
        match n {
            Next::Solve => 1,
            Next::Verify => 2,
            Next::Rectify => 4,
            Next::End => 8,
        }
    }

    pub fn empty() -> Self {
        NextSet(0)
    }

    pub fn of(items: &[Next]) -> Self {
        items.iter().fold(NextSet(0), |s, &n| s.with(n))
    }

    pub fn with(self, n: Next) -> Self {
        NextSet(self.0 | Self::bit(n))
    }

    pub fn contains(self, n: Next) -> bool {
        self.0 & Self::bit(n) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Next> {
        Self::ORDER.into_iter().filter(move |&n| self.contains(n))
    }
}

impl fmt::Debug for NextSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for NextSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|n| n.to_string()).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransitionError {
    #[error("empty trajectory")]
    Empty,
    #[error("step {index}: expected one of {expected}, found {found}")]
    Illegal {
        index: usize,
        expected: NextSet,
        found: Next,
    },
    #[error("verdict must be present exactly on verify steps")]
    VerdictMismatch,
}

/// Transition relation plus the correction-cycle cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Automaton {
    pub mode: AutomatonMode,
    pub k_max: usize,
}

impl Default for Automaton {
    fn default() -> Self {
        Self::canonical(4)
    }
}

impl Automaton {
    pub fn new(mode: AutomatonMode, k_max: usize) -> Self {
        Self { mode, k_max }
    }

    pub fn canonical(k_max: usize) -> Self {
        Self::new(AutomatonMode::Canonical, k_max)
    }

    pub fn literal(k_max: usize) -> Self {
        Self::new(AutomatonMode::Literal, k_max)
    }

    /// Allowed successors of a step.
    ///
    /// `follows_rectify` only matters for a verify step in literal mode.
    /// `at_cap` means the trajectory has used all `k_max` correction cycles.
    pub fn next_allowed(
        &self,
        kind: StepKind,
        verdict: Option<Verdict>,
        follows_rectify: bool,
        at_cap: bool,
    ) -> Result<NextSet, TransitionError> {
        let set = match (kind, verdict) {
            (StepKind::Solve | StepKind::Rectify, None) => NextSet::of(&[Next::Verify]),
            (StepKind::Verify, Some(Verdict::Incorrect)) => {
                if at_cap {
                    NextSet::of(&[Next::End])
                } else {
                    NextSet::of(&[Next::Rectify])
                }
            }
            (StepKind::Verify, Some(Verdict::Correct)) => match self.mode {
                AutomatonMode::Canonical => NextSet::of(&[Next::End]),
                AutomatonMode::Literal if follows_rectify || at_cap => NextSet::of(&[Next::End]),
                AutomatonMode::Literal => NextSet::of(&[Next::Solve]),
            },
            _ => return Err(TransitionError::VerdictMismatch),
        };
        Ok(set)
    }

    pub fn validate(&self, traj: &Trajectory) -> Result<(), TransitionError> {
        self.validate_steps(&traj.steps)
    }

    pub fn validate_steps(&self, steps: &[Step]) -> Result<(), TransitionError> {
        if steps.is_empty() {
            return Err(TransitionError::Empty);
        }
        let mut allowed = NextSet::of(&[Next::Solve]);
        let mut cycles = 0usize;
        let mut prev: Option<StepKind> = None;
        for (index, step) in steps.iter().enumerate() {
            let kind = step.kind();
            if !allowed.contains(kind.into()) {
                return Err(TransitionError::Illegal {
                    index,
                    expected: allowed,
                    found: kind.into(),
                });
            }
            if index > 0 && matches!(kind, StepKind::Solve | StepKind::Rectify) {
                cycles += 1;
            }
            allowed = self.next_allowed(
                kind,
                step.verdict(),
                prev == Some(StepKind::Rectify),
                cycles >= self.k_max,
            )?;
            prev = Some(kind);
        }
        if !allowed.contains(Next::End) {
            return Err(TransitionError::Illegal {
                index: steps.len(),
                expected: allowed,
                found: Next::End,
            });
        }
        Ok(())
    }
}
