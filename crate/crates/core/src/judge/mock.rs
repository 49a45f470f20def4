//! In-process mock judge speaking the chat-completions wire format.
//!
//! The server binds a loopback port, applies deterministic labeling rules,
//! and can be scripted to misbehave (rate limits, garbage replies, dying
//! mid-run) so retry and resume paths get exercised without a real
//! endpoint. The rules and the bundled fixture are written together: the
//! fixture is the contract for what the rules must label.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Response, Server};

use crate::judge::rubric::{REFERENCE_HEADER, RESPONSE_HEADER, STATUS_HEADER};
use crate::judge::ResponseState;

/// Model id the mock answers as.
pub const MOCK_MODEL: &str = "mock-judge-v1";

/// Phrases that claim the audio is missing. Checked against lowercased text.
const NO_AUDIO_MARKERS: &[&str] = &[
    "no audio was provided",
    "did not receive any audio",
    "didn't receive any audio",
    "there is no audio",
    "cannot find any audio",
    "can't find any audio",
    "no sound was provided",
    "please upload",
    "play the sound",
    "provide the audio",
];

/// Refusal or uncertainty phrases, checked against lowercased text.
const REFUSAL_PHRASES: &[&str] = &[
    "not sure",
    "cannot determine",
    "can't determine",
    "cannot answer",
    "can't answer",
    "cannot tell",
    "can't tell",
    "unable to",
];

/// Refusal or uncertainty single words, checked against word boundaries.
const REFUSAL_WORDS: &[&str] = &["guess", "guessing", "refuse", "uncertain", "decline"];

/// Words counting as specific audio evidence. Bare impressions ("sounds
/// like") and self-justifying restatements are deliberately absent, so
/// those responses fall through to the direct state.
const EVIDENCE_WORDS: &[&str] = &[
    "tempo", "bpm", "pitch", "frequency", "timbre", "spectral", "harmonic", "melody", "rhythm",
    "hz", "because", "waveform", "loudness", "decibel",
];

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Correct iff the reference answer appears verbatim in the response, as a
/// contiguous word sequence. Word boundaries matter: "red" never matches
/// inside "shredded".
pub fn rule_correct(response: &str, ground_truth: &str) -> bool {
    let response = words(response);
    let reference = words(ground_truth);
    !reference.is_empty()
        && response.len() >= reference.len()
        && response.windows(reference.len()).any(|w| w == reference.as_slice())
}

/// Failure state for a wrong answer, applying the same rule order the
/// rubric prescribes. The no-audio rule skips responses that merely call
/// the audio unclear, and refusal outranks evidence so a response that
/// reasons but finally refuses lands in the guess state.
pub fn rule_state(response: &str) -> ResponseState {
    let lower = response.to_lowercase();
    let word_list = words(response);
    let has_word = |list: &[&str]| list.iter().any(|m| word_list.iter().any(|w| w == m));

    if NO_AUDIO_MARKERS.iter().any(|m| lower.contains(m)) && !word_list.iter().any(|w| w == "unclear")
    {
        return ResponseState::WNoAudio;
    }
    if REFUSAL_PHRASES.iter().any(|m| lower.contains(m)) || has_word(REFUSAL_WORDS) {
        return ResponseState::WGuess;
    }
    if has_word(EVIDENCE_WORDS) {
        return ResponseState::WReason;
    }
    ResponseState::WDirect
}

/// One labeled fixture case for pinning judge behavior end to end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureCase {
    pub id: String,
    pub question: String,
    pub ground_truth: String,
    pub response: String,
    pub expected_correct: bool,
    pub expected_state: ResponseState,
}

/// The bundled 20-case fixture, including the rubric carve-outs (circular
/// justification, unclear-but-present audio, reasoned refusal).
pub fn fixture_cases() -> Vec<FixtureCase> {
    include_str!("../../fixtures/judge_cases.jsonl")
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).expect("fixture line parses"))
        .collect()
}

/// Scripted misbehavior, applied in this order: the first `fail_first`
/// requests get 429, the next `garbage_first` get well-formed bodies with
/// no verdict line, and once `die_after` successful replies have been
/// served every later request gets 503.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockScript {
    pub fail_first: u64,
    pub garbage_first: u64,
    pub die_after: Option<u64>,
}

struct MockState {
    script: MockScript,
    requests: AtomicU64,
    served: AtomicU64,
}

enum Reply {
    Status(u16, &'static str),
    Chat(String),
}

impl MockState {
    fn reply_for(&self, request_number: u64, body: &str) -> Reply {
        if request_number <= self.script.fail_first {
            return Reply::Status(429, "{\"error\": \"rate limited\"}");
        }
        if let Some(limit) = self.script.die_after {
            if self.served.load(Ordering::SeqCst) >= limit {
                return Reply::Status(503, "{\"error\": \"server died\"}");
            }
        }
        if request_number <= self.script.fail_first + self.script.garbage_first {
            self.served.fetch_add(1, Ordering::SeqCst);
            return Reply::Chat("Interesting clip, hard to say anything definite.".to_string());
        }

        let payload = last_message_content(body);
        let reference = extract_section(&payload, REFERENCE_HEADER).unwrap_or_default();
        let response = extract_section(&payload, RESPONSE_HEADER).unwrap_or_default();
        let content = if payload.contains(STATUS_HEADER) {
            let state = rule_state(&response);
            format!("Applying the rubric rules in order.\nSTATE: {}", state.label())
        } else if rule_correct(&response, &reference) {
            "The response commits to the reference answer.\nVERDICT: Correct".to_string()
        } else {
            "The response does not commit to the reference answer.\nVERDICT: Wrong".to_string()
        };
        self.served.fetch_add(1, Ordering::SeqCst);
        Reply::Chat(content)
    }
}

fn last_message_content(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v["messages"]
                .as_array()
                .and_then(|m| m.last())
                .and_then(|m| m["content"].as_str())
                .map(str::to_string)
        })
        .unwrap_or_default()
}

/// Slice of `payload` between `header` and the next known header, trimmed.
fn extract_section(payload: &str, header: &str) -> Option<String> {
    let start = payload.find(header)? + header.len();
    let rest = &payload[start..];
    let end = [REFERENCE_HEADER, RESPONSE_HEADER, STATUS_HEADER]
        .iter()
        .filter_map(|h| rest.find(h))
        .min()
        .unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

/// Loopback chat-completions server backed by the labeling rules.
/// Dropping it unblocks and joins the serving thread.
pub struct MockJudgeServer {
    server: Arc<Server>,
    url: String,
    state: Arc<MockState>,
    handle: Option<JoinHandle<()>>,
}

impl MockJudgeServer {
    pub fn start(script: MockScript) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind a loopback port"));
        let addr = server.server_addr().to_ip().expect("loopback listener has an ip");
        let state = Arc::new(MockState {
            script,
            requests: AtomicU64::new(0),
            served: AtomicU64::new(0),
        });
        let handle = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || serve_loop(&server, &state))
        };
        MockJudgeServer {
            server,
            url: format!("http://{addr}"),
            state,
            handle: Some(handle),
        }
    }

    /// Base URL to hand to a [`crate::judge::JudgeClient`].
    pub fn url(&self) -> &str {
        &self.url
    }

    /// Requests seen, including rate-limited and dead ones.
    pub fn requests(&self) -> u64 {
        self.state.requests.load(Ordering::SeqCst)
    }

    /// Well-formed 200 replies served.
    pub fn responses_served(&self) -> u64 {
        self.state.served.load(Ordering::SeqCst)
    }
}

impl Drop for MockJudgeServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_loop(server: &Server, state: &MockState) {
    for mut request in server.incoming_requests() {
        let number = state.requests.fetch_add(1, Ordering::SeqCst) + 1;
        let mut body = String::new();
        let _ = request.as_reader().read_to_string(&mut body);
        let json_header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
            .expect("static header");
        let response = match state.reply_for(number, &body) {
            Reply::Status(code, text) => {
                Response::from_string(text).with_status_code(code).with_header(json_header)
            }
            Reply::Chat(content) => {
                let body = serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": content}}],
                    "model": MOCK_MODEL,
                });
                Response::from_string(body.to_string()).with_status_code(200).with_header(json_header)
            }
        };
        let _ = request.respond(response);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{judge_correctness, JudgeClient, JudgeError, JudgeRequest};

    #[test]
    fn fixture_has_twenty_cases_in_the_documented_mix() {
        let cases = fixture_cases();
        assert_eq!(cases.len(), 20);
        let count = |state: ResponseState| {
            cases.iter().filter(|c| c.expected_state == state).count()
        };
        assert_eq!(count(ResponseState::Correct), 2);
        assert_eq!(count(ResponseState::WNoAudio), 4);
        assert_eq!(count(ResponseState::WReason), 4);
        assert_eq!(count(ResponseState::WDirect), 5);
        assert_eq!(count(ResponseState::WGuess), 5);
        for case in &cases {
            assert_eq!(case.expected_correct, case.expected_state == ResponseState::Correct);
        }
    }

    #[test]
    fn rules_label_every_fixture_case() {
        for case in fixture_cases() {
            assert_eq!(
                rule_correct(&case.response, &case.ground_truth),
                case.expected_correct,
                "correctness rule disagrees on {}",
                case.id
            );
            if !case.expected_correct {
                assert_eq!(
                    rule_state(&case.response),
                    case.expected_state,
                    "state rule disagrees on {}",
                    case.id
                );
            }
        }
    }

    #[test]
    fn correctness_matching_respects_word_boundaries() {
        assert!(rule_correct("It is red.", "red"));
        assert!(rule_correct("I would say light blue here", "light blue"));
        assert!(!rule_correct("The shredded tape hisses", "red"));
        assert!(!rule_correct("blue light everywhere", "light blue"));
        assert!(!rule_correct("anything", ""));
    }

    #[test]
    fn unclear_audio_never_counts_as_missing_audio() {
        assert_eq!(rule_state("There is no audio I can rely on, unclear throughout."), ResponseState::WDirect);
        assert_eq!(rule_state("There is no audio attached."), ResponseState::WNoAudio);
    }

    #[test]
    fn refusal_outranks_evidence() {
        assert_eq!(
            rule_state("The tempo is slow, but I cannot determine the answer."),
            ResponseState::WGuess
        );
        assert_eq!(rule_state("The tempo is slow, so it is blue."), ResponseState::WReason);
    }

    #[test]
    fn server_answers_both_call_kinds() {
        let server = MockJudgeServer::start(MockScript::default());
        let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);

        let req = JudgeRequest::new("Which color?", "red", "It is red.").unwrap();
        let (correct, raw) = judge_correctness(&req, &client).unwrap();
        assert!(correct);
        assert!(raw.ends_with("VERDICT: Correct"));

        let wrong = JudgeRequest::new("Which color?", "red", "I am not sure, my guess is blue.")
            .unwrap()
            .with_status(false);
        let (state, _) = crate::judge::categorize(&wrong, &client).unwrap();
        assert_eq!(state, ResponseState::WGuess);
        assert_eq!(server.requests(), 2);
    }

    #[test]
    fn rate_limits_are_retried_until_the_window_clears() {
        let server = MockJudgeServer::start(MockScript { fail_first: 2, ..Default::default() });
        let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
        let req = JudgeRequest::new("Which color?", "red", "It is red.").unwrap();
        let (correct, _) = judge_correctness(&req, &client).unwrap();
        assert!(correct);
        assert_eq!(server.requests(), 3);
    }

    #[test]
    fn garbage_replies_surface_as_protocol_errors() {
        let server = MockJudgeServer::start(MockScript { garbage_first: 1, ..Default::default() });
        let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
        let req = JudgeRequest::new("Which color?", "red", "It is red.").unwrap();
        assert!(matches!(judge_correctness(&req, &client), Err(JudgeError::Protocol(_))));
    }

    #[test]
    fn dead_server_exhausts_the_retry_budget() {
        let server = MockJudgeServer::start(MockScript { die_after: Some(0), ..Default::default() });
        let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
        let req = JudgeRequest::new("Which color?", "red", "It is red.").unwrap();
        let err = judge_correctness(&req, &client).unwrap_err();
        assert!(matches!(err, JudgeError::Exhausted { attempts: 6, .. }));
        assert_eq!(server.requests(), 6);
    }
}
