//! End-to-end judging against the in-process mock endpoint: fixture
//! labeling, call accounting, cache behavior, and crash-resume.

use contrast_core::judge::mock::{fixture_cases, FixtureCase, MockJudgeServer, MockScript, MOCK_MODEL};
use contrast_core::{
    judge_batch, judge_sample, CacheRecord, JudgeClient, JudgeError, JudgeRequest, ResponseState,
    Verdict, VerdictCache,
};

fn request_for(case: &FixtureCase) -> JudgeRequest {
    JudgeRequest::new(&case.question, &case.ground_truth, &case.response).unwrap()
}

fn fresh_cache(dir: &tempfile::TempDir) -> VerdictCache {
    VerdictCache::open(dir.path().join("verdicts_cache.jsonl")).unwrap()
}

/// The full 20-case fixture judges to its expected labels, correct answers
/// never pay for a categorization call, and re-judging everything is free.
#[test]
fn fixture_judges_to_expected_labels_with_exact_call_accounting() {
    let server = MockJudgeServer::start(MockScript::default());
    let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
    let dir = tempfile::tempdir().unwrap();
    let mut cache = fresh_cache(&dir);

    let cases = fixture_cases();
    let mut verdicts = Vec::new();
    for case in &cases {
        let verdict = judge_sample(&client, &mut cache, &case.id, &request_for(case)).unwrap();
        assert_eq!(verdict.correct, case.expected_correct, "correctness of {}", case.id);
        assert_eq!(verdict.state, case.expected_state, "state of {}", case.id);
        assert_eq!(verdict.judge_model, MOCK_MODEL);
        verdict.validate().unwrap();
        verdicts.push(verdict);
    }

    // One call per sample plus one more per wrong sample: 20 + 18.
    let wrong = cases.iter().filter(|c| !c.expected_correct).count() as u64;
    assert_eq!(server.requests(), 20 + wrong);

    // A second identical pass is served entirely from the cache.
    for case in &cases {
        let verdict = judge_sample(&client, &mut cache, &case.id, &request_for(case)).unwrap();
        assert_eq!(verdict.state, case.expected_state);
    }
    assert_eq!(server.requests(), 20 + wrong);
}

/// The batched driver returns verdicts in input order whatever the worker
/// interleaving, and shares one cache across workers.
#[test]
fn batch_judging_preserves_input_order() {
    let server = MockJudgeServer::start(MockScript::default());
    let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
    let dir = tempfile::tempdir().unwrap();
    let mut cache = fresh_cache(&dir);

    let cases = fixture_cases();
    let items: Vec<(String, JudgeRequest)> =
        cases.iter().map(|c| (c.id.clone(), request_for(c))).collect();

    let results = judge_batch(&client, &mut cache, &items, 4);
    assert_eq!(results.len(), cases.len());
    for (result, case) in results.iter().zip(&cases) {
        let verdict = result.as_ref().unwrap();
        assert_eq!(verdict.sample_id, case.id);
        assert_eq!(verdict.state, case.expected_state);
    }
    assert_eq!(server.requests(), 38);

    // Concurrency above the item count and zero concurrency both still work.
    let again = judge_batch(&client, &mut cache, &items[..2], 64);
    assert!(again.iter().all(|r| r.is_ok()));
    let zero = judge_batch(&client, &mut cache, &items[..2], 0);
    assert!(zero.iter().all(|r| r.is_ok()));
    assert_eq!(server.requests(), 38, "later passes must be pure cache hits");
}

/// Killing the endpoint partway loses nothing: verdicts already earned come
/// back from the cache, and the resumed pass only pays for the remainder.
#[test]
fn kill_and_resume_loses_zero_verdicts() {
    let cases = fixture_cases();
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");

    // First pass against a server that dies after 10 successful replies.
    let mut survived: Vec<Verdict> = Vec::new();
    {
        let server = MockJudgeServer::start(MockScript { die_after: Some(10), ..Default::default() });
        let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
        let mut cache = VerdictCache::open(&cache_path).unwrap();
        for case in &cases {
            match judge_sample(&client, &mut cache, &case.id, &request_for(case)) {
                Ok(v) => survived.push(v),
                Err(JudgeError::Exhausted { .. }) => break,
                Err(other) => panic!("unexpected failure mode: {other}"),
            }
        }
        assert!(!survived.is_empty() && survived.len() < cases.len());
    }

    // Resume with a healthy server and the same cache file.
    let server = MockJudgeServer::start(MockScript::default());
    let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
    let mut cache = VerdictCache::open(&cache_path).unwrap();
    let mut all: Vec<Verdict> = Vec::new();
    for case in &cases {
        all.push(judge_sample(&client, &mut cache, &case.id, &request_for(case)).unwrap());
    }

    assert_eq!(all.len(), cases.len());
    for (verdict, case) in all.iter().zip(&cases) {
        assert_eq!(verdict.state, case.expected_state, "resumed verdict for {}", case.id);
    }
    // Verdicts from the first pass are identical after resume.
    for (early, late) in survived.iter().zip(&all) {
        assert_eq!(early.sample_id, late.sample_id);
        assert_eq!(early.state, late.state);
        assert_eq!(early.raw, late.raw);
    }
    // The 38 total calls split across the two servers with no repeats.
    assert_eq!(server.requests(), 38 - 10);
}

/// A thousand records survive a cache reopen byte for byte.
#[test]
fn cache_round_trips_a_thousand_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big_cache.jsonl");
    let mut cache = VerdictCache::open(&path).unwrap();

    let label_for = |i: usize| ResponseState::ORDER[i % 5].label();
    for i in 0..1000 {
        cache
            .put(CacheRecord::new(
                format!("digest-{i:04}"),
                label_for(i),
                "m",
                format!("full reply text {i}\nSTATE: {}", label_for(i)),
            ))
            .unwrap();
    }

    let reopened = VerdictCache::open(&path).unwrap();
    assert_eq!(reopened.len(), 1000);
    for i in 0..1000 {
        let record = reopened.get(&format!("digest-{i:04}")).unwrap();
        assert_eq!(record.label, label_for(i));
        assert_eq!(record.raw, format!("full reply text {i}\nSTATE: {}", label_for(i)));
    }
}

/// Transient rate limiting inside a batch is absorbed by retry, not surfaced.
#[test]
fn batch_rides_through_rate_limits() {
    let server = MockJudgeServer::start(MockScript { fail_first: 3, ..Default::default() });
    let client = JudgeClient::new(server.url(), None, MOCK_MODEL).with_backoff_ms(1);
    let dir = tempfile::tempdir().unwrap();
    let mut cache = fresh_cache(&dir);

    let cases = fixture_cases();
    let items: Vec<(String, JudgeRequest)> =
        cases.iter().take(4).map(|c| (c.id.clone(), request_for(c))).collect();
    let results = judge_batch(&client, &mut cache, &items, 2);
    for (result, case) in results.iter().zip(&cases) {
        assert_eq!(result.as_ref().unwrap().state, case.expected_state);
    }
}
