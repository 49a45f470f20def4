//! Verdict pipeline: correctness judging and wrong-answer state labels.
//!
//! Every response gets a binary correctness call first; only wrong answers
//! get a second call that places them in one of four failure states. Both
//! calls go through a chat-completions endpoint at temperature zero and are
//! memoised in an append-only [`VerdictCache`], so re-judging a run is free
//! and interrupted runs resume without repeating network work.

mod cache;
pub mod mock;
pub mod rubric;

pub use cache::{CacheRecord, VerdictCache};

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::judge::rubric::RUBRIC_VERSION;

/// Default judge model id, used when `JUDGE_MODEL` is unset.
pub const DEFAULT_JUDGE_MODEL: &str = "gpt-4o-2024-11-20";

/// Default cap on concurrent in-flight judge requests.
pub const DEFAULT_CONCURRENCY: usize = 4;

/// Retries after the first attempt, for transient endpoint failures.
pub const MAX_RETRIES: u32 = 5;

const DEFAULT_BACKOFF_MS: u64 = 500;
const REQUEST_TIMEOUT_SECS: u64 = 60;

/// Judging failures. Transient endpoint trouble is retried internally;
/// anything surfacing here is terminal for the request that raised it.
#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    /// The response text to be judged is empty.
    #[error("cannot judge an empty response")]
    EmptyResponse,
    /// Categorization was requested without a known correctness status.
    #[error("categorize requires the correctness status to be known")]
    StatusMissing,
    /// Required configuration is absent.
    #[error("missing judge configuration: {0}")]
    MissingConfig(&'static str),
    /// The endpoint answered, but not with a parseable verdict line.
    #[error("judge protocol violation: {0}")]
    Protocol(String),
    /// The endpoint rejected the request with a non-retryable status.
    #[error("judge endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },
    /// Transient failures persisted beyond the retry budget.
    #[error("judge request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    /// A stored verdict contradicts its own fields.
    #[error("inconsistent verdict for sample {0}: correct flag and state disagree")]
    Inconsistent(String),
    #[error("judge transport error: {0}")]
    Transport(String),
    #[error("judge cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("judge cache encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// The five terminal states a judged response lands in, in the fixed order
/// used by every table and matrix axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResponseState {
    /// Wrong because the model denied receiving audio or asked for it.
    #[serde(rename = "W_NO_AUDIO")]
    WNoAudio,
    /// Wrong despite committing with specific audio evidence.
    #[serde(rename = "W_REASON")]
    WReason,
    /// Wrong and asserted without specific evidence.
    #[serde(rename = "W_DIRECT")]
    WDirect,
    /// Wrong via explicit uncertainty, guessing, or refusal.
    #[serde(rename = "W_GUESS")]
    WGuess,
    /// The response matches the reference answer.
    #[serde(rename = "CORRECT")]
    Correct,
}

impl ResponseState {
    /// Canonical axis order for matrices, tables, and serialized files.
    pub const ORDER: [ResponseState; 5] = [
        ResponseState::WNoAudio,
        ResponseState::WReason,
        ResponseState::WDirect,
        ResponseState::WGuess,
        ResponseState::Correct,
    ];

    /// Wire and file label, e.g. `W_NO_AUDIO`.
    pub fn label(self) -> &'static str {
        match self {
            ResponseState::WNoAudio => "W_NO_AUDIO",
            ResponseState::WReason => "W_REASON",
            ResponseState::WDirect => "W_DIRECT",
            ResponseState::WGuess => "W_GUESS",
            ResponseState::Correct => "CORRECT",
        }
    }

    /// Position along the canonical axis.
    pub fn index(self) -> usize {
        Self::ORDER.iter().position(|s| *s == self).expect("state in ORDER")
    }

    pub fn is_wrong(self) -> bool {
        self != ResponseState::Correct
    }
}

impl fmt::Display for ResponseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ResponseState {
    type Err = JudgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResponseState::ORDER
            .into_iter()
            .find(|state| state.label() == s.trim())
            .ok_or_else(|| JudgeError::Protocol(format!("unknown state label {s:?}")))
    }
}

/// One judging request: the question shown to the model under test, the
/// reference answer, and the response to grade. `status` carries the known
/// correctness when the request is a categorization follow-up.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub question: String,
    pub ground_truth: String,
    pub response: String,
    pub status: Option<bool>,
}

impl JudgeRequest {
    pub fn new(
        question: impl Into<String>,
        ground_truth: impl Into<String>,
        response: impl Into<String>,
    ) -> Result<Self, JudgeError> {
        let response = response.into();
        if response.trim().is_empty() {
            return Err(JudgeError::EmptyResponse);
        }
        Ok(JudgeRequest {
            question: question.into(),
            ground_truth: ground_truth.into(),
            response,
            status: None,
        })
    }

    /// The same request with correctness already settled, as required by
    /// [`categorize`].
    pub fn with_status(mut self, correct: bool) -> Self {
        self.status = Some(correct);
        self
    }
}

/// Final judgement for one sample. `correct` and `state` are redundant by
/// construction: `correct` holds exactly when `state` is [`ResponseState::Correct`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub sample_id: String,
    pub correct: bool,
    pub state: ResponseState,
    pub judge_model: String,
    /// Raw endpoint text the labels were parsed from, correctness call
    /// first, categorization call after a separator when one was made.
    pub raw: String,
}

impl Verdict {
    pub fn new(
        sample_id: impl Into<String>,
        state: ResponseState,
        judge_model: impl Into<String>,
        raw: impl Into<String>,
    ) -> Self {
        Verdict {
            sample_id: sample_id.into(),
            correct: state == ResponseState::Correct,
            state,
            judge_model: judge_model.into(),
            raw: raw.into(),
        }
    }

    /// Re-checks the correct/state redundancy, for verdicts read from disk.
    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.correct != (self.state == ResponseState::Correct) {
            return Err(JudgeError::Inconsistent(self.sample_id.clone()));
        }
        Ok(())
    }
}

/// Chat-completions client with retry. Points at any endpoint speaking the
/// `/v1/chat/completions` wire format, including the bundled mock server.
#[derive(Debug, Clone)]
pub struct JudgeClient {
    base_url: String,
    api_key: Option<String>,
    model: String,
    backoff_ms: u64,
    agent: ureq::Agent,
}

impl JudgeClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(REQUEST_TIMEOUT_SECS)))
            .build()
            .into();
        JudgeClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            backoff_ms: DEFAULT_BACKOFF_MS,
            agent,
        }
    }

    /// Reads `JUDGE_BASE_URL` (required), `JUDGE_API_KEY` (optional), and
    /// `JUDGE_MODEL` (defaults to [`DEFAULT_JUDGE_MODEL`]).
    pub fn from_env() -> Result<Self, JudgeError> {
        let base_url =
            std::env::var("JUDGE_BASE_URL").map_err(|_| JudgeError::MissingConfig("JUDGE_BASE_URL"))?;
        let api_key = std::env::var("JUDGE_API_KEY").ok();
        let model = std::env::var("JUDGE_MODEL").unwrap_or_else(|_| DEFAULT_JUDGE_MODEL.to_string());
        Ok(JudgeClient::new(base_url, api_key, model))
    }

    /// Overrides the initial retry delay. Tests shrink this to keep the
    /// exponential schedule fast.
    pub fn with_backoff_ms(mut self, ms: u64) -> Self {
        self.backoff_ms = ms;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// One judged exchange: system rubric plus user payload in, assistant
    /// text out. Retries 429/5xx/transport up to [`MAX_RETRIES`] times with
    /// doubling delays.
    fn chat(&self, system: &str, user: &str) -> Result<String, JudgeError> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });

        let mut last = String::new();
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                let delay = self.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut request = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            match request.send_json(&body) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    let text = response.body_mut().read_to_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        last = format!("status {status}");
                        continue;
                    }
                    if !(200..300).contains(&status) {
                        return Err(JudgeError::Endpoint { status, body: text });
                    }
                    let value: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| JudgeError::Protocol(format!("malformed response body: {e}")))?;
                    let content = value["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| {
                            JudgeError::Protocol("response carries no message content".to_string())
                        })?;
                    return Ok(content.to_string());
                }
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            }
        }
        Err(JudgeError::Exhausted { attempts: MAX_RETRIES + 1, last })
    }
}

/// Extracts the value of `prefix` from the final non-empty line of `text`.
/// The label must close the message; labels buried mid-reply are a protocol
/// violation, which keeps truncated or rambling replies from being scored.
fn final_line_label<'t>(text: &'t str, prefix: &str) -> Result<&'t str, JudgeError> {
    let line = text
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| JudgeError::Protocol("empty judge reply".to_string()))?;
    line.strip_prefix(prefix)
        .map(str::trim)
        .ok_or_else(|| JudgeError::Protocol(format!("final line {line:?} lacks {prefix:?}")))
}

/// Binary correctness judgement. Returns the boolean verdict together with
/// the raw endpoint text it was parsed from.
pub fn judge_correctness(
    req: &JudgeRequest,
    client: &JudgeClient,
) -> Result<(bool, String), JudgeError> {
    if req.response.trim().is_empty() {
        return Err(JudgeError::EmptyResponse);
    }
    let raw = client.chat(rubric::correctness_system(), &rubric::correctness_user(req))?;
    let label = final_line_label(&raw, rubric::VERDICT_PREFIX)?;
    let correct = match label.to_ascii_lowercase().as_str() {
        "correct" => true,
        "wrong" => false,
        other => {
            return Err(JudgeError::Protocol(format!("unknown verdict label {other:?}")));
        }
    };
    Ok((correct, raw))
}

/// Failure-state label for a response whose correctness is already known.
/// Correct responses map straight to [`ResponseState::Correct`] with no
/// endpoint call; only wrong answers pay for a second exchange. Returns the
/// raw endpoint text when a call was made.
pub fn categorize(
    req: &JudgeRequest,
    client: &JudgeClient,
) -> Result<(ResponseState, Option<String>), JudgeError> {
    match req.status {
        None => Err(JudgeError::StatusMissing),
        Some(true) => Ok((ResponseState::Correct, None)),
        Some(false) => {
            let raw = client.chat(rubric::categorize_system(), &rubric::categorize_user(req))?;
            let label = final_line_label(&raw, rubric::STATE_PREFIX)?;
            let state: ResponseState = label.parse()?;
            if !state.is_wrong() {
                return Err(JudgeError::Protocol(
                    "categorization returned CORRECT for a wrong answer".to_string(),
                ));
            }
            Ok((state, Some(raw)))
        }
    }
}

/// Cache-aware call: hits return without running the closure, misses run
/// it and persist the result. The lock is dropped around the closure so
/// concurrent judging overlaps its network calls; two workers racing the
/// same digest would both call and write, which is wasteful but harmless
/// because both compute the same record.
fn cached_call<F>(
    cache: &std::sync::Mutex<&mut VerdictCache>,
    digest: &str,
    call: F,
) -> Result<CacheRecord, JudgeError>
where
    F: FnOnce() -> Result<CacheRecord, JudgeError>,
{
    if let Some(hit) = cache.lock().expect("cache lock").get(digest) {
        return Ok(hit.clone());
    }
    let record = call()?;
    cache.lock().expect("cache lock").put(record.clone())?;
    Ok(record)
}

fn judge_sample_inner(
    client: &JudgeClient,
    cache: &std::sync::Mutex<&mut VerdictCache>,
    sample_id: String,
    req: &JudgeRequest,
) -> Result<Verdict, JudgeError> {
    let base = JudgeRequest { status: None, ..req.clone() };

    let digest = VerdictCache::digest(client.model(), RUBRIC_VERSION, &base);
    let correctness = cached_call(cache, &digest, || {
        let (correct, raw) = judge_correctness(&base, client)?;
        Ok(CacheRecord::new(
            &digest,
            if correct { "Correct" } else { "Wrong" },
            client.model(),
            raw,
        ))
    })?;
    let correct = correctness.label == "Correct";
    let mut raw = correctness.raw;

    let state = if correct {
        ResponseState::Correct
    } else {
        let follow_up = base.with_status(false);
        let digest = VerdictCache::digest(client.model(), RUBRIC_VERSION, &follow_up);
        let record = cached_call(cache, &digest, || {
            let (state, call_raw) = categorize(&follow_up, client)?;
            let call_raw = call_raw.expect("wrong status always calls the endpoint");
            Ok(CacheRecord::new(&digest, state.label(), client.model(), call_raw))
        })?;
        raw.push_str("\n---\n");
        raw.push_str(&record.raw);
        record.label.parse()?
    };

    Ok(Verdict::new(sample_id, state, client.model(), raw))
}

/// Judges one sample end to end through the cache: a correctness call, then
/// a categorization call only when the answer was wrong. Identical inputs
/// under the same model and rubric version hit the cache and cost no
/// network traffic.
pub fn judge_sample(
    client: &JudgeClient,
    cache: &mut VerdictCache,
    sample_id: impl Into<String>,
    req: &JudgeRequest,
) -> Result<Verdict, JudgeError> {
    let cache = std::sync::Mutex::new(cache);
    judge_sample_inner(client, &cache, sample_id.into(), req)
}

/// Judges a batch with up to `concurrency` requests in flight (clamped to
/// at least one). Results come back in input order regardless of which
/// worker finished first, so callers can persist them as a stable prefix
/// and resume after a crash by line count.
pub fn judge_batch(
    client: &JudgeClient,
    cache: &mut VerdictCache,
    items: &[(String, JudgeRequest)],
    concurrency: usize,
) -> Vec<Result<Verdict, JudgeError>> {
    use std::sync::atomic::{AtomicUsize, Ordering};

    let cache = std::sync::Mutex::new(cache);
    let next = AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<Verdict, JudgeError>>>> =
        (0..items.len()).map(|_| std::sync::Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..concurrency.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let (id, req) = &items[i];
                let result = judge_sample_inner(client, &cache, id.clone(), req);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("worker filled slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_order_and_labels_are_fixed() {
        let labels: Vec<&str> = ResponseState::ORDER.iter().map(|s| s.label()).collect();
        assert_eq!(labels, ["W_NO_AUDIO", "W_REASON", "W_DIRECT", "W_GUESS", "CORRECT"]);
        for (i, state) in ResponseState::ORDER.into_iter().enumerate() {
            assert_eq!(state.index(), i);
            assert_eq!(state.label().parse::<ResponseState>().unwrap(), state);
        }
        assert!(ResponseState::WGuess.is_wrong());
        assert!(!ResponseState::Correct.is_wrong());
    }

    #[test]
    fn state_serde_uses_wire_labels() {
        let json = serde_json::to_string(&ResponseState::WNoAudio).unwrap();
        assert_eq!(json, "\"W_NO_AUDIO\"");
        let back: ResponseState = serde_json::from_str("\"W_GUESS\"").unwrap();
        assert_eq!(back, ResponseState::WGuess);
    }

    #[test]
    fn request_rejects_empty_response() {
        let err = JudgeRequest::new("q", "red", "   ").unwrap_err();
        assert!(matches!(err, JudgeError::EmptyResponse));
    }

    #[test]
    fn verdict_ties_correct_flag_to_state() {
        let v = Verdict::new("s1", ResponseState::WDirect, "m", "raw");
        assert!(!v.correct);
        v.validate().unwrap();

        let mut bad = v;
        bad.correct = true;
        assert!(matches!(bad.validate(), Err(JudgeError::Inconsistent(_))));
    }

    #[test]
    fn final_line_label_ignores_preamble_and_trailing_blank_lines() {
        let text = "Reasoning here.\nVERDICT: Wrong\n\n  ";
        assert_eq!(final_line_label(text, "VERDICT:").unwrap(), "Wrong");
    }

    #[test]
    fn final_line_label_rejects_buried_labels() {
        let text = "VERDICT: Correct\nbut actually let me reconsider";
        assert!(matches!(final_line_label(text, "VERDICT:"), Err(JudgeError::Protocol(_))));
    }

    #[test]
    fn categorize_requires_status_and_skips_correct() {
        let client = JudgeClient::new("http://127.0.0.1:9", None, "test-model");
        let req = JudgeRequest::new("q", "red", "It is red.").unwrap();
        assert!(matches!(categorize(&req, &client), Err(JudgeError::StatusMissing)));

        // Correct status must short-circuit before any network access; the
        // client above points at a dead port, so a call would error.
        let (state, raw) = categorize(&req.with_status(true), &client).unwrap();
        assert_eq!(state, ResponseState::Correct);
        assert!(raw.is_none());
    }

    #[test]
    fn unknown_state_label_is_a_protocol_error() {
        let err = "W_BOGUS".parse::<ResponseState>().unwrap_err();
        assert!(matches!(err, JudgeError::Protocol(_)));
    }
}
