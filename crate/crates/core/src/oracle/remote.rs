//! Chat-completions client for a real generator model.
//!
//! Requests are `POST {base_url}/chat/completions` with a JSON body
//! `{model, messages, temperature}`; the reply text is read from
//! `choices[0].message.content` and parsed as a single tagged step.

use super::{check_step, GeneratorOracle, OracleError};
use crate::env::Problem;
use crate::trajectory::{parse_steps, render, Answer, ParseError, Step, StepKind, Trajectory, VerifyStrategy};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

pub const API_KEY_ENV: &str = "SVSR_API_KEY";
pub const API_BASE_ENV: &str = "SVSR_API_BASE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Tell the model the ground-truth answer (chosen-data construction).
    pub reveal_ground_truth: bool,
}

impl Default for RemoteEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: API_KEY_ENV.into(),
            temperature: 0.7,
            timeout_secs: 60.0,
            max_retries: 3,
            reveal_ground_truth: true,
        }
    }
}

impl RemoteEndpointConfig {
    pub fn validate(&self) -> Result<(), RemoteError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(RemoteError::Config("timeout_secs must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(RemoteError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    /// `SVSR_API_BASE` wins over the configured base URL.
    pub fn effective_base_url(&self) -> String {
        std::env::var(API_BASE_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .unwrap_or_else(|| self.base_url.clone())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.effective_base_url().trim_end_matches('/'))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("unparseable step: {error}")]
    Unparseable {
        content: String,
        #[source]
        error: ParseError,
    },
    #[error("expected exactly one step in the response, found {0}")]
    StepCount(usize),
}

/// Prompt templates with `{placeholder}` substitution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub solve: String,
    pub verify: String,
    pub rectify: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: include_str!("../../prompts/system.txt").to_string(),
            solve: include_str!("../../prompts/solve.txt").to_string(),
            verify: include_str!("../../prompts/verify.txt").to_string(),
            rectify: include_str!("../../prompts/rectify.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Load `system.txt`, `solve.txt`, `verify.txt` and `rectify.txt`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        Ok(Self {
            system: read("system.txt")?,
            solve: read("solve.txt")?,
            verify: read("verify.txt")?,
            rectify: read("rectify.txt")?,
        })
    }
}

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    vars.iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

/// One logical request, including retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub problem_id: String,
    pub action: StepKind,
    pub attempts: u32,
    pub retries: u32,
    pub request: Value,
    pub response: Option<String>,
    pub error: Option<String>,
}

pub struct RemoteGenerator {
    config: RemoteEndpointConfig,
    templates: PromptTemplates,
    agent: ureq::Agent,
    log: Mutex<Vec<CallRecord>>,
}

impl RemoteGenerator {
    pub fn new(config: RemoteEndpointConfig, templates: PromptTemplates) -> Result<Self, RemoteError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            templates,
            agent,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &RemoteEndpointConfig {
        &self.config
    }

    /// Snapshot of every call made so far.
    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn messages(
        &self,
        problem: &Problem,
        history: &[Step],
        action: StepKind,
        answer: Option<Answer>,
        strategy: Option<VerifyStrategy>,
    ) -> Value {
        let space: Vec<String> = problem.answer_space.iter().map(|a| a.to_string()).collect();
        let history_text = if history.is_empty() {
            "(none)".to_string()
        } else {
            render(&Trajectory::new(problem.id.clone(), history.to_vec()))
        };
        let hint = if self.config.reveal_ground_truth {
            format!("The correct final answer is {}.\n", problem.gt_answer)
        } else {
            String::new()
        };
        let attachment = problem
            .attachment_ref
            .as_ref()
            .map(|r| format!("Attachment: {r}\n"))
            .unwrap_or_default();
        let strategy = strategy.unwrap_or(VerifyStrategy::DirectDerivation);
        let vars = [
            ("problem_id", problem.id.clone()),
            ("statement", problem.statement.clone()),
            ("answer_space", space.join(", ")),
            ("history", history_text),
            ("hint", hint),
            ("attachment", attachment),
            ("answer", answer.map(|a| a.to_string()).unwrap_or_default()),
            ("strategy", strategy.attr().to_string()),
            (
                "strategy_description",
                match strategy {
                    VerifyStrategy::DirectDerivation => "direct derivation".to_string(),
                    VerifyStrategy::Contradiction => "proof by contradiction".to_string(),
                },
            ),
        ];
        let user = match action {
            StepKind::Solve => &self.templates.solve,
            StepKind::Verify => &self.templates.verify,
            StepKind::Rectify => &self.templates.rectify,
        };
        json!([
            {"role": "system", "content": fill(&self.templates.system, &vars)},
            {"role": "user", "content": fill(user, &vars)},
        ])
    }

    fn post(&self, body: &Value) -> Result<(String, u32), (RemoteError, u32)> {
        let url = self.config.endpoint();
        let key = std::env::var(&self.config.api_key_env).ok();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            let mut req = self.agent.post(&url);
            if let Some(k) = &key {
                req = req.header("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| (RemoteError::BadResponse(e.to_string()), attempt))?;
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status}");
                        continue;
                    }
                    if !(200..300).contains(&status) {
                        return Err((RemoteError::Status { status, body: text }, attempt));
                    }
                    return Ok((text, attempt));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err((
            RemoteError::Transport {
                attempts: self.config.max_retries + 1,
                message: last,
            },
            self.config.max_retries,
        ))
    }

    /// Ask the endpoint for one step of kind `action`.
    pub fn generate(
        &self,
        problem: &Problem,
        history: &[Step],
        action: StepKind,
        answer: Option<Answer>,
        strategy: Option<VerifyStrategy>,
    ) -> Result<Step, RemoteError> {
        let messages = self.messages(problem, history, action, answer, strategy);
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let mut record = CallRecord {
            problem_id: problem.id.clone(),
            action,
            attempts: 0,
            retries: 0,
            request: body.clone(),
            response: None,
            error: None,
        };
        let result = match self.post(&body) {
            Ok((raw, retries)) => {
                record.retries = retries;
                record.attempts = retries + 1;
                extract_content(&raw).and_then(|content| {
                    record.response = Some(content.clone());
                    let steps = parse_steps(&content)
                        .map_err(|error| RemoteError::Unparseable { content: content.clone(), error })?;
                    match <[Step; 1]>::try_from(steps) {
                        Ok([step]) => Ok(step),
                        Err(v) => Err(RemoteError::StepCount(v.len())),
                    }
                })
            }
            Err((e, retries)) => {
                record.retries = retries;
                record.attempts = retries + 1;
                Err(e)
            }
        };
        if let Err(e) = &result {
            record.error = Some(e.to_string());
        }
        self.log.lock().expect("call log poisoned").push(record);
        result
    }
}

fn extract_content(raw: &str) -> Result<String, RemoteError> {
    let v: Value = serde_json::from_str(raw).map_err(|e| RemoteError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| RemoteError::BadResponse("missing choices[0].message.content".into()))
}

impl GeneratorOracle for RemoteGenerator {
    fn solve(&self, problem: &Problem, history: &[Step], _rng: &mut dyn RngCore) -> Result<Step, OracleError> {
        let step = self.generate(problem, history, StepKind::Solve, None, None)?;
        check_step(problem, StepKind::Solve, step)
    }

    fn verify(
        &self,
        problem: &Problem,
        answer: Answer,
        strategy: VerifyStrategy,
        _rng: &mut dyn RngCore,
    ) -> Result<Step, OracleError> {
        let step = self.generate(problem, &[], StepKind::Verify, Some(answer), Some(strategy))?;
        let step = match step {
            Step::Verify { text, verdict, strategy: None } => Step::verify(text, verdict, Some(strategy)),
            other => other,
        };
        check_step(problem, StepKind::Verify, step)
    }

    fn rectify(&self, problem: &Problem, history: &[Step], _rng: &mut dyn RngCore) -> Result<Step, OracleError> {
        let step = self.generate(problem, history, StepKind::Rectify, None, None)?;
        check_step(problem, StepKind::Rectify, step)
    }
}
