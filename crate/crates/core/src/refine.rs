//! Constrained sentence rewriting through a chat-completion endpoint.
//!
//! A rewrite is accepted only if it keeps every triple text verbatim, differs from the
//! original and is non-empty. Rejected rewrites are retried; after `max_retries` the
//! original sentence is kept so regular and refined datasets stay index-aligned.

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EntityRole, Triple};
use crate::error::{Error, Result};
use crate::ratelimit::RateLimiter;

pub const REQUIREMENT_LIST_TEMPLATE: &str = include_str!("../prompts/requirement_list.txt");
pub const ROLE_PLAYING_TEMPLATE: &str = include_str!("../prompts/role_playing.txt");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStyle {
    #[default]
    RequirementList,
    RolePlaying,
}

impl PromptStyle {
    pub fn template(self) -> &'static str {
        match self {
            PromptStyle::RequirementList => REQUIREMENT_LIST_TEMPLATE,
            PromptStyle::RolePlaying => ROLE_PLAYING_TEMPLATE,
        }
    }
}

impl std::str::FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "requirement-list" => Ok(PromptStyle::RequirementList),
            "role-playing" => Ok(PromptStyle::RolePlaying),
            _ => Err(Error::validation(format!(
                "unknown prompt style {s:?}; expected requirement-list|role-playing"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefineRequest {
    pub sentence: String,
    pub triple: Triple,
    pub prompt_style: PromptStyle,
    pub max_retries: usize,
}

impl RefineRequest {
    pub fn new(sentence: impl Into<String>, triple: Triple) -> Self {
        RefineRequest {
            sentence: sentence.into(),
            triple,
            prompt_style: PromptStyle::default(),
            max_retries: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Verbatim presence of person, time and location.
    pub entities_kept: [bool; 3],
    pub changed: bool,
    pub non_empty: bool,
    /// Meaning preservation is not machine-checked; always `None`.
    pub meaning_preserved: Option<bool>,
}

impl ConstraintReport {
    pub fn all_pass(&self) -> bool {
        self.entities_kept.iter().all(|&k| k) && self.changed && self.non_empty
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineResult {
    pub refined: String,
    pub attempts: usize,
    pub constraint_report: ConstraintReport,
    pub fell_back: bool,
}

pub fn render_prompt(req: &RefineRequest) -> Result<String> {
    for (role, span) in req.triple.spans() {
        if span.text.trim().is_empty() {
            return Err(Error::validation(format!("missing {} text", role.name())));
        }
    }
    if req.sentence.trim().is_empty() {
        return Err(Error::validation("missing sentence"));
    }
    Ok(req
        .prompt_style
        .template()
        .replace("{sentence}", &req.sentence)
        .replace("{person}", &req.triple.person.text)
        .replace("{time}", &req.triple.time.text)
        .replace("{location}", &req.triple.location.text))
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-sensitive occurrence of `needle` not glued to surrounding letters or digits, so
/// "he" is not found inside "she".
fn contains_words(hay: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    hay.match_indices(needle).any(|(i, _)| {
        let before = hay[..i].chars().next_back();
        let after = hay[i + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

pub fn check_constraints(original: &str, refined: &str, triple: &Triple) -> ConstraintReport {
    ConstraintReport {
        entities_kept: EntityRole::ALL.map(|r| contains_words(refined, triple.get(r).text.as_str())),
        changed: normalize_ws(original) != normalize_ws(refined),
        non_empty: !refined.trim().is_empty(),
        meaning_preserved: None,
    }
}

/// A chat-completion backend taking one user message.
pub trait ChatEndpoint: Send + Sync {
    /// `attempt` is 1-based; stateless backends may ignore it.
    fn complete(&self, prompt: &str, attempt: usize) -> Result<String>;

    /// Pause before retrying after a retriable failure.
    fn backoff(&self, _attempt: usize) -> Duration {
        Duration::ZERO
    }
}

/// OpenAI-compatible `/chat/completions` over HTTP.
pub struct HttpChat {
    pub base_url: String,
    pub key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub base_backoff: Duration,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl HttpChat {
    pub fn new(base_url: &str, key: Option<String>, model: &str, temperature: f64, min_interval: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChat {
            base_url: base_url.trim_end_matches('/').to_string(),
            key,
            model: model.to_string(),
            temperature,
            base_backoff: Duration::from_millis(500),
            agent,
            limiter: RateLimiter::new(min_interval),
        }
    }

    /// Configure from `LTC_LLM_BASE_URL`, `LTC_LLM_KEY` and `LTC_LLM_MODEL`.
    pub fn from_env(temperature: f64, min_interval: Duration) -> Result<Self> {
        let base = std::env::var("LTC_LLM_BASE_URL")
            .map_err(|_| Error::Endpoint {
                retriable: false,
                message: "LTC_LLM_BASE_URL is not set (use --stub for offline runs)".into(),
            })?;
        let model = std::env::var("LTC_LLM_MODEL").map_err(|_| Error::Endpoint {
            retriable: false,
            message: "LTC_LLM_MODEL is not set".into(),
        })?;
        Ok(HttpChat::new(&base, std::env::var("LTC_LLM_KEY").ok(), &model, temperature, min_interval))
    }
}

impl ChatEndpoint for HttpChat {
    fn complete(&self, prompt: &str, _attempt: usize) -> Result<String> {
        self.limiter.acquire();
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| Error::Endpoint {
            retriable: true,
            message: format!("{url}: {e}"),
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Error::Endpoint {
                retriable: status == 429 || status >= 500,
                message: format!("{url}: HTTP {status}"),
            });
        }
        let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| Error::Endpoint {
            retriable: true,
            message: format!("{url}: unreadable response: {e}"),
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.trim().to_string())
            .ok_or_else(|| Error::Endpoint {
                retriable: false,
                message: format!("{url}: response has no message content"),
            })
    }

    fn backoff(&self, attempt: usize) -> Duration {
        self.base_backoff * 2u32.saturating_pow(attempt.saturating_sub(1) as u32)
    }
}

/// Canned responses keyed by original sentence: the `n`-th attempt gets the `n`-th
/// response (the last one repeats). The longest key contained in the prompt wins.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StubChat {
    pub responses: BTreeMap<String, Vec<String>>,
}

impl StubChat {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Load from `LTC_LLM_STUB_FILE`.
    pub fn from_env() -> Result<Self> {
        let path = std::env::var("LTC_LLM_STUB_FILE").map_err(|_| Error::Endpoint {
            retriable: false,
            message: "stub mode needs LTC_LLM_STUB_FILE or refine.stub_file".into(),
        })?;
        StubChat::from_file(Path::new(&path))
    }
}

impl ChatEndpoint for StubChat {
    fn complete(&self, prompt: &str, attempt: usize) -> Result<String> {
        let list = self
            .responses
            .iter()
            .filter(|(k, _)| prompt.contains(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Endpoint {
                retriable: false,
                message: "no canned response for prompt".into(),
            })?;
        list.get(attempt.saturating_sub(1))
            .or_else(|| list.last())
            .cloned()
            .ok_or_else(|| Error::Endpoint {
                retriable: false,
                message: "empty canned response list".into(),
            })
    }
}

/// Render, call and check until a rewrite passes or the attempts run out.
pub fn refine(req: &RefineRequest, endpoint: &dyn ChatEndpoint) -> Result<RefineResult> {
    let prompt = render_prompt(req)?;
    let mut last_report = check_constraints(&req.sentence, &req.sentence, &req.triple);
    let mut attempts = 0;
    while attempts < req.max_retries {
        attempts += 1;
        match endpoint.complete(&prompt, attempts) {
            Ok(candidate) => {
                let candidate = candidate.trim().to_string();
                let report = check_constraints(&req.sentence, &candidate, &req.triple);
                if report.all_pass() {
                    return Ok(RefineResult {
                        refined: candidate,
                        attempts,
                        constraint_report: report,
                        fell_back: false,
                    });
                }
                log::debug!("attempt {attempts} rejected: {report:?}");
                last_report = report;
            }
            Err(Error::Endpoint { retriable: true, message }) => {
                log::warn!("attempt {attempts}: {message}; retrying");
                thread::sleep(endpoint.backoff(attempts));
            }
            Err(e) => {
                log::warn!("giving up on sentence after attempt {attempts}: {e}");
                break;
            }
        }
    }
    Ok(RefineResult {
        refined: req.sentence.clone(),
        attempts,
        constraint_report: last_report,
        fell_back: true,
    })
}

/// Refine many requests with at most `in_flight` concurrent calls, keeping input order.
pub fn refine_batch(reqs: &[RefineRequest], endpoint: &dyn ChatEndpoint, in_flight: usize) -> Result<Vec<RefineResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| reqs.par_iter().map(|r| refine(r, endpoint)).collect())
}
