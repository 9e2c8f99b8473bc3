//! Tagged text form of a trajectory.
//!
//! ```text
//! <solve>…
//! Answer: 7</solve>
//! Wait, let me recheck my solution.
//! <verify strategy="direct">…
//! Verdict: INCORRECT</verify>
//! Let me try again.
//! <rectify>…
//! Answer: 5</rectify>
//! ```
//!
//! Step text is opaque apart from the tags and the `Answer:` / `Verdict:`
//! markers. A non-empty text is separated from its marker by one newline.

use super::{Automaton, Step, StepKind, Trajectory, TransitionError, Verdict, VerifyStrategy};
use std::fmt::Write as _;

pub const VERIFY_PHRASE: &str = "Wait, let me recheck my solution.";
pub const RECTIFY_PHRASE: &str = "Let me try again.";

const ANSWER_MARKER: &str = "Answer: ";
const VERDICT_MARKER: &str = "Verdict: ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("empty trace")]
    Empty,
    #[error("unknown tag <{0}>")]
    UnknownTag(String),
    #[error("expected a step tag")]
    ExpectedTag,
    #[error("unterminated <{0}> tag")]
    Unterminated(&'static str),
    #[error("bad tag attribute {0:?}")]
    BadAttribute(String),
    #[error("missing \"{0}\" field")]
    MissingField(&'static str),
    #[error("invalid answer token {0:?}")]
    BadAnswer(String),
    #[error("invalid verdict {0:?}")]
    BadVerdict(String),
    #[error("missing connective \"{0}\"")]
    MissingPhrase(&'static str),
    #[error("unexpected connective before <{0}>")]
    UnexpectedPhrase(&'static str),
    #[error("illegal trajectory: {0}")]
    Transition(TransitionError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {position}: {kind}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn at(position: usize, kind: ParseErrorKind) -> Self {
        Self { position, kind }
    }
}

fn phrase_for(kind: StepKind) -> Option<&'static str> {
    match kind {
        StepKind::Solve => None,
        StepKind::Verify => Some(VERIFY_PHRASE),
        StepKind::Rectify => Some(RECTIFY_PHRASE),
    }
}

fn write_body(out: &mut String, text: &str, marker: &str, value: &str) {
    out.push_str(text);
    if !text.is_empty() {
        out.push('\n');
    }
    out.push_str(marker);
    out.push_str(value);
}

fn render_step(out: &mut String, step: &Step) {
    match step {
        Step::Solve { text, answer } | Step::Rectify { text, answer } => {
            let tag = step.kind().tag();
            let _ = write!(out, "<{tag}>");
            write_body(out, text, ANSWER_MARKER, &answer.to_string());
            let _ = write!(out, "</{tag}>");
        }
        Step::Verify {
            text,
            verdict,
            strategy,
        } => {
            match strategy {
                Some(s) => {
                    let _ = write!(out, "<verify strategy=\"{}\">", s.attr());
                }
                None => out.push_str("<verify>"),
            }
            write_body(out, text, VERDICT_MARKER, verdict.as_str());
            out.push_str("</verify>");
        }
    }
}

/// Render with the connective phrases. Total over any step list.
pub fn render(traj: &Trajectory) -> String {
    render_impl(&traj.steps, None)
}

/// Render, omitting the `skip`-th connective phrase (0-based over all
/// phrases in the trace). Used to build format-corrupted variants.
pub fn render_dropping_phrase(traj: &Trajectory, skip: usize) -> String {
    render_impl(&traj.steps, Some(skip))
}

fn render_impl(steps: &[Step], skip: Option<usize>) -> String {
    let mut out = String::new();
    let mut phrase_index = 0;
    for (i, step) in steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if let Some(phrase) = phrase_for(step.kind()) {
            if skip != Some(phrase_index) {
                out.push_str(phrase);
                out.push('\n');
            }
            phrase_index += 1;
        }
        render_step(&mut out, step);
    }
    out
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError::at(self.pos, kind)
    }
}

/// Split a step body into (text, value) at the last marker.
fn split_body<'a>(body: &'a str, marker: &'static str) -> Option<(&'a str, &'a str)> {
    let at = body.rfind(marker)?;
    let mut text = &body[..at];
    if let Some(stripped) = text.strip_suffix('\n') {
        text = stripped;
    }
    Some((text, &body[at + marker.len()..]))
}

/// Parse the tagged steps without checking the transition relation.
pub fn parse_steps(src: &str) -> Result<Vec<Step>, ParseError> {
    let mut cur = Cursor { src, pos: 0 };
    let mut steps = Vec::new();
    loop {
        cur.skip_ws();
        if cur.rest().is_empty() {
            break;
        }
        let phrase_pos = cur.pos;
        let phrase = if cur.eat(VERIFY_PHRASE) {
            Some(VERIFY_PHRASE)
        } else if cur.eat(RECTIFY_PHRASE) {
            Some(RECTIFY_PHRASE)
        } else {
            None
        };
        cur.skip_ws();

        let tag_pos = cur.pos;
        if !cur.eat("<") {
            return Err(cur.err(ParseErrorKind::ExpectedTag));
        }
        let rest = cur.rest();
        let name_end = rest
            .find(|c: char| c == '>' || c.is_whitespace())
            .ok_or_else(|| ParseError::at(tag_pos, ParseErrorKind::ExpectedTag))?;
        let name = &rest[..name_end];
        let kind = match name {
            "solve" => StepKind::Solve,
            "verify" => StepKind::Verify,
            "rectify" => StepKind::Rectify,
            other => {
                return Err(ParseError::at(tag_pos, ParseErrorKind::UnknownTag(other.to_string())))
            }
        };
        cur.pos += name_end;
        let open_end = cur
            .rest()
            .find('>')
            .ok_or_else(|| ParseError::at(tag_pos, ParseErrorKind::Unterminated(kind.tag())))?;
        let attrs = cur.rest()[..open_end].trim();
        let attr_pos = cur.pos;
        cur.pos += open_end + 1;

        match (phrase_for(kind), phrase) {
            (Some(want), Some(got)) if want == got => {}
            (Some(want), _) if !steps.is_empty() => {
                return Err(ParseError::at(phrase_pos, ParseErrorKind::MissingPhrase(want)))
            }
            (Some(_), None) => {}
            (None, Some(_)) | (Some(_), Some(_)) => {
                return Err(ParseError::at(phrase_pos, ParseErrorKind::UnexpectedPhrase(kind.tag())))
            }
            (None, None) => {}
        }

        let strategy = if attrs.is_empty() {
            None
        } else if kind == StepKind::Verify {
            let value = attrs
                .strip_prefix("strategy=\"")
                .and_then(|v| v.strip_suffix('"'))
                .and_then(VerifyStrategy::from_attr)
                .ok_or_else(|| ParseError::at(attr_pos, ParseErrorKind::BadAttribute(attrs.to_string())))?;
            Some(value)
        } else {
            return Err(ParseError::at(attr_pos, ParseErrorKind::BadAttribute(attrs.to_string())));
        };

        let body_pos = cur.pos;
        let close = format!("</{}>", kind.tag());
        let body_len = cur
            .rest()
            .find(&close)
            .ok_or_else(|| ParseError::at(tag_pos, ParseErrorKind::Unterminated(kind.tag())))?;
        let body = &cur.rest()[..body_len];
        cur.pos += body_len + close.len();

        let step = match kind {
            StepKind::Solve | StepKind::Rectify => {
                let (text, value) = split_body(body, ANSWER_MARKER)
                    .ok_or_else(|| ParseError::at(body_pos, ParseErrorKind::MissingField("Answer:")))?;
                let answer = value
                    .trim()
                    .parse()
                    .map_err(|_| ParseError::at(body_pos, ParseErrorKind::BadAnswer(value.to_string())))?;
                if kind == StepKind::Solve {
                    Step::solve(text, answer)
                } else {
                    Step::rectify(text, answer)
                }
            }
            StepKind::Verify => {
                let (text, value) = split_body(body, VERDICT_MARKER)
                    .ok_or_else(|| ParseError::at(body_pos, ParseErrorKind::MissingField("Verdict:")))?;
                let verdict = match value.trim() {
                    "CORRECT" => Verdict::Correct,
                    "INCORRECT" => Verdict::Incorrect,
                    other => {
                        return Err(ParseError::at(body_pos, ParseErrorKind::BadVerdict(other.to_string())))
                    }
                };
                Step::verify(text, verdict, strategy)
            }
        };
        steps.push(step);
    }
    if steps.is_empty() {
        return Err(ParseError::at(0, ParseErrorKind::Empty));
    }
    Ok(steps)
}

/// Parse a full trace and check it against `automaton`.
pub fn parse(problem_id: &str, src: &str, automaton: &Automaton) -> Result<Trajectory, ParseError> {
    let steps = parse_steps(src)?;
    automaton
        .validate_steps(&steps)
        .map_err(|e| ParseError::at(src.len(), ParseErrorKind::Transition(e)))?;
    Ok(Trajectory::new(problem_id, steps))
}
