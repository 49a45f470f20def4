//! Versioned prompt texts and the payload layout judges receive.
//!
//! The rubric version participates in cache keys, so editing a prompt file
//! must come with a version bump; otherwise stale cached verdicts from the
//! old wording would be served for the new one.

use crate::judge::JudgeRequest;

/// Bumped whenever either prompt text changes meaning.
pub const RUBRIC_VERSION: &str = "v1";

/// Prefix of the final line carrying a correctness verdict.
pub const VERDICT_PREFIX: &str = "VERDICT:";
/// Prefix of the final line carrying a failure-state label.
pub const STATE_PREFIX: &str = "STATE:";

/// Section headers of the user payload. The mock server parses these back
/// out of incoming requests, so they are part of the wire contract.
pub const QUESTION_HEADER: &str = "QUESTION:";
pub const REFERENCE_HEADER: &str = "REFERENCE ANSWER:";
pub const RESPONSE_HEADER: &str = "MODEL RESPONSE:";
pub const STATUS_HEADER: &str = "KNOWN CORRECTNESS:";

const CORRECTNESS_SYSTEM: &str = include_str!("../../prompts/correctness_v1.txt");
const CATEGORIZE_SYSTEM: &str = include_str!("../../prompts/categorize_v1.txt");

pub fn correctness_system() -> &'static str {
    CORRECTNESS_SYSTEM
}

pub fn categorize_system() -> &'static str {
    CATEGORIZE_SYSTEM
}

fn payload_base(req: &JudgeRequest) -> String {
    format!(
        "{QUESTION_HEADER}\n{}\n\n{REFERENCE_HEADER}\n{}\n\n{RESPONSE_HEADER}\n{}",
        req.question, req.ground_truth, req.response
    )
}

/// User payload for the binary correctness call.
pub fn correctness_user(req: &JudgeRequest) -> String {
    payload_base(req)
}

/// User payload for the failure-state call. Carries the settled correctness
/// so the judge never re-litigates it.
pub fn categorize_user(req: &JudgeRequest) -> String {
    let status = match req.status {
        Some(true) => "Correct",
        _ => "Wrong",
    };
    format!("{}\n\n{STATUS_HEADER}\n{status}", payload_base(req))
}
