use super::PolicyError;
use crate::env::LEVELS;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which answer decision is being made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnswerState {
    Solve,
    Rectify,
}

impl AnswerState {
    fn index(self) -> usize {
        match self {
            AnswerState::Solve => 0,
            AnswerState::Rectify => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            AnswerState::Solve => "solve",
            AnswerState::Rectify => "rectify",
        }
    }
}

/// Context of one policy decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    /// Pick an answer token (candidates: the answer space, by position).
    Answer {
        state: AnswerState,
        level: usize,
        gt_index: usize,
    },
    /// Pick a verdict (candidates: CORRECT = 0, INCORRECT = 1) on the
    /// answer produced in state `after`.
    Verdict {
        after: AnswerState,
        level: usize,
        prev_correct: bool,
    },
}

pub const VERDICT_CORRECT: usize = 0;
pub const VERDICT_INCORRECT: usize = 1;

/// Active (binary) features of one candidate; at most four.
#[derive(Debug, Clone, Copy)]
pub struct Active {
    idx: [usize; 4],
    len: usize,
}

impl Active {
    fn push(&mut self, i: usize) {
        self.idx[self.len] = i;
        self.len += 1;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.idx[..self.len]
    }
}

/// Index layout of the weight vector for a given answer-space size.
///
/// Answer candidates: token identity, plus (when the candidate is the
/// ground truth) a correctness bias, correctness × state and correctness ×
/// level. Verdict candidates: verdict identity, verdict × state, verdict ×
/// level and verdict × correctness of the judged answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub answer_space_size: usize,
}

impl FeatureLayout {
    pub fn new(answer_space_size: usize) -> Self {
        Self { answer_space_size }
    }

    fn a(&self) -> usize {
        self.answer_space_size
    }

    fn token(&self, j: usize) -> usize {
        j
    }
    fn correct(&self) -> usize {
        self.a()
    }
    fn correct_state(&self, s: AnswerState) -> usize {
        self.a() + 1 + s.index()
    }
    fn correct_level(&self, level: usize) -> usize {
        self.a() + 3 + level
    }
    fn verdict(&self, v: usize) -> usize {
        self.a() + 3 + LEVELS + v
    }
    fn verdict_state(&self, s: AnswerState, v: usize) -> usize {
        self.a() + 5 + LEVELS + 2 * s.index() + v
    }
    fn verdict_level(&self, level: usize, v: usize) -> usize {
        self.a() + 9 + LEVELS + 2 * level + v
    }
    fn verdict_prev(&self, prev_correct: bool, v: usize) -> usize {
        self.a() + 9 + 3 * LEVELS + 2 * usize::from(!prev_correct) + v
    }

    pub fn dim(&self) -> usize {
        self.a() + 13 + 3 * LEVELS
    }

    pub fn num_candidates(&self, d: &Decision) -> usize {
        match d {
            Decision::Answer { .. } => self.answer_space_size,
            Decision::Verdict { .. } => 2,
        }
    }

    pub fn active(&self, d: &Decision, candidate: usize) -> Active {
        let mut act = Active { idx: [0; 4], len: 0 };
        match *d {
            Decision::Answer { state, level, gt_index } => {
                act.push(self.token(candidate));
                if candidate == gt_index {
                    act.push(self.correct());
                    act.push(self.correct_state(state));
                    act.push(self.correct_level(level));
                }
            }
            Decision::Verdict {
                after,
                level,
                prev_correct,
            } => {
                act.push(self.verdict(candidate));
                act.push(self.verdict_state(after, candidate));
                act.push(self.verdict_level(level, candidate));
                act.push(self.verdict_prev(prev_correct, candidate));
            }
        }
        act
    }

    pub fn names(&self) -> Vec<String> {
        let verdict = |v: usize| if v == VERDICT_CORRECT { "CORRECT" } else { "INCORRECT" };
        let mut names = vec![String::new(); self.dim()];
        for j in 0..self.a() {
            names[self.token(j)] = format!("answer.token[{j}]");
        }
        names[self.correct()] = "answer.correct".into();
        for s in [AnswerState::Solve, AnswerState::Rectify] {
            names[self.correct_state(s)] = format!("answer.correct|{}", s.name());
        }
        for l in 0..LEVELS {
            names[self.correct_level(l)] = format!("answer.correct|level={}", l + 1);
        }
        for v in [VERDICT_CORRECT, VERDICT_INCORRECT] {
            names[self.verdict(v)] = format!("verdict={}", verdict(v));
            for s in [AnswerState::Solve, AnswerState::Rectify] {
                names[self.verdict_state(s, v)] = format!("verdict={}|after_{}", verdict(v), s.name());
            }
            for l in 0..LEVELS {
                names[self.verdict_level(l, v)] = format!("verdict={}|level={}", verdict(v), l + 1);
            }
            for (flag, tag) in [(true, "prev_right"), (false, "prev_wrong")] {
                names[self.verdict_prev(flag, v)] = format!("verdict={}|{}", verdict(v), tag);
            }
        }
        names
    }

    /// Weight index of the identity feature of a named answer position.
    pub fn token_index(&self, j: usize) -> usize {
        self.token(j)
    }

    pub fn correct_index(&self) -> usize {
        self.correct()
    }

    pub fn verdict_prev_index(&self, prev_correct: bool, verdict: usize) -> usize {
        self.verdict_prev(prev_correct, verdict)
    }
}

/// Weights of the log-linear policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, f64>", try_from = "BTreeMap<String, f64>")]
pub struct PolicyParams {
    layout: FeatureLayout,
    weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(answer_space_size: usize) -> Self {
        let layout = FeatureLayout::new(answer_space_size);
        Self {
            layout,
            weights: vec![0.0; layout.dim()],
        }
    }

    pub fn from_weights(layout: FeatureLayout, weights: Vec<f64>) -> Result<Self, PolicyError> {
        if weights.len() != layout.dim() {
            return Err(PolicyError::InvalidCheckpoint(format!(
                "expected {} weights, got {}",
                layout.dim(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(Self { layout, weights })
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn score(&self, d: &Decision, candidate: usize) -> f64 {
        self.layout
            .active(d, candidate)
            .as_slice()
            .iter()
            .map(|&i| self.weights[i])
            .sum()
    }

    /// Log-softmax over the candidates of `d`.
    pub fn log_probs(&self, d: &Decision) -> Vec<f64> {
        let n = self.layout.num_candidates(d);
        let scores: Vec<f64> = (0..n).map(|c| self.score(d, c)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        scores.into_iter().map(|s| s - lse).collect()
    }

    pub fn to_named(&self) -> BTreeMap<String, f64> {
        self.layout.names().into_iter().zip(self.weights.iter().copied()).collect()
    }

    pub fn from_named(map: &BTreeMap<String, f64>) -> Result<Self, PolicyError> {
        let a = map.keys().filter(|k| k.starts_with("answer.token[")).count();
        let layout = FeatureLayout::new(a);
        let names = layout.names();
        if names.len() != map.len() {
            return Err(PolicyError::InvalidCheckpoint(format!(
                "expected {} features for answer space {a}, found {}",
                names.len(),
                map.len()
            )));
        }
        let weights = names
            .iter()
            .map(|n| {
                map.get(n)
                    .copied()
                    .ok_or_else(|| PolicyError::InvalidCheckpoint(format!("missing feature {n}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_weights(layout, weights)
    }
}

impl From<PolicyParams> for BTreeMap<String, f64> {
    fn from(p: PolicyParams) -> Self {
        p.to_named()
    }
}

impl TryFrom<BTreeMap<String, f64>> for PolicyParams {
    type Error = PolicyError;
    fn try_from(map: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        PolicyParams::from_named(&map)
    }
}
