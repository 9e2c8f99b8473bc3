//! Rationale text attached to generated steps. The engine never reads it
//! back; it only has to be stable so equal decisions give equal steps.

use crate::trajectory::{Answer, VerifyStrategy};

pub fn solve(problem_id: &str) -> String {
    format!("Work through {problem_id} from the statement.")
}

pub fn verify(answer: Answer, strategy: Option<VerifyStrategy>) -> String {
    match strategy {
        Some(VerifyStrategy::DirectDerivation) => {
            format!("Re-derive the result forward and compare it with {answer}.")
        }
        Some(VerifyStrategy::Contradiction) => {
            format!("Suppose {answer} is wrong and look for an inconsistency.")
        }
        None => format!("Check {answer} against the statement."),
    }
}

pub fn rectify(previous: Option<Answer>) -> String {
    match previous {
        Some(a) => format!("The value {a} does not hold up; recompute from the start."),
        None => "Recompute from the start.".to_string(),
    }
}
