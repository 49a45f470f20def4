//! With the amateur weight at zero, expert weight at one, and the
//! plausibility mask off, every contrastive method must reproduce plain
//! greedy decoding token for token. This pins the decode loop's plumbing:
//! whatever the amateur machinery does, a zero weight must erase it.

use contrast_core::{
    decode, AudioInput, DecodeContext, LogitVector, Method, ModelBackend, ScriptedBackend,
    ScriptedBackendBuilder, ScriptKey, StrategyConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 6;
const LAYERS: usize = 6;
const EOS: u32 = 5;
const MAX_NEW: usize = 4;
const PROMPT: u32 = 7;

fn random_logits(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..VOCAB).map(|_| rng.random_range(-4.0..4.0)).collect()
}

fn random_stack(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..LAYERS).map(|_| random_logits(rng)).collect()
}

fn argmax(values: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best as usize] {
            best = i as u32;
        }
    }
    best
}

/// One random episode: expert rows with full layer stacks along the greedy
/// path, plus amateur rows (no audio, distorted audio, negative prompt) at
/// every step so the contrastive methods always find what they ask for.
fn random_episode(seed: u64) -> (ScriptedBackend, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = ScriptedBackendBuilder::new(VOCAB, LAYERS, EOS);
    let mut prefix: Vec<u32> = Vec::new();
    let mut greedy_path = Vec::new();

    for _ in 0..MAX_NEW {
        let stack = random_stack(&mut rng);
        let next = argmax(stack.last().expect("non-empty stack"));
        builder = builder
            .row_layers(
                ScriptKey::new("clean", PROMPT, prefix.clone()),
                stack.iter().map(|v| LogitVector::new(v.clone()).unwrap()).collect(),
            )
            .unwrap();
        for key in [
            ScriptKey::new("absent", PROMPT, prefix.clone()),
            ScriptKey::new("distorted", PROMPT, prefix.clone()),
            ScriptKey::new("clean", PROMPT, prefix.clone()).negated(),
        ] {
            builder = builder
                .row(key, LogitVector::new(random_logits(&mut rng)).unwrap())
                .unwrap();
        }
        greedy_path.push(next);
        if next == EOS {
            break;
        }
        prefix.push(next);
    }

    (builder.build().unwrap(), greedy_path)
}

fn clean_tone() -> AudioInput {
    AudioInput::sine(220.0, 0.1, 0.05, 16_000)
}

#[test]
fn zero_beta_reproduces_greedy_on_random_episodes() {
    for seed in 0..100u64 {
        let (backend, greedy_path) = random_episode(seed);
        let ctx = DecodeContext::new(vec![PROMPT], clean_tone());

        let greedy_cfg = neutral_config(Method::Greedy);
        let (greedy_tokens, _) = decode(&backend, &ctx, &greedy_cfg).unwrap();
        assert_eq!(greedy_tokens, greedy_path, "greedy must follow the argmax path (seed {seed})");

        for method in [Method::Aad, Method::Acd, Method::Amti, Method::Dola] {
            let cfg = neutral_config(method);
            let (tokens, trace) = decode(&backend, &ctx, &cfg).unwrap();
            assert_eq!(
                tokens, greedy_tokens,
                "{method} with beta 0 diverged from greedy (seed {seed})"
            );
            for (step, greedy_token) in trace.iter().zip(&greedy_tokens) {
                assert_eq!(step.chosen, *greedy_token);
            }
        }
    }
}

/// With the amateur silenced the trace still records which machinery ran:
/// gates for the entropy-gated method, layer picks for the layer method.
#[test]
fn neutral_traces_still_carry_method_decorations() {
    let (backend, _) = random_episode(424_242);
    let ctx = DecodeContext::new(vec![PROMPT], clean_tone());

    let (_, amti_trace) = decode(&backend, &ctx, &neutral_config(Method::Amti)).unwrap();
    assert!(amti_trace.iter().all(|s| s.gate.is_some() && s.selected_layer.is_none()));

    let (_, dola_trace) = decode(&backend, &ctx, &neutral_config(Method::Dola)).unwrap();
    assert!(dola_trace.iter().all(|s| s.selected_layer.is_some() && s.gate.is_none()));

    let (_, greedy_trace) = decode(&backend, &ctx, &neutral_config(Method::Greedy)).unwrap();
    assert!(greedy_trace.iter().all(|s| s.amateur.is_none() && s.gate.is_none()));
}

/// Amateur forwards still happen under a zero weight (the combination is
/// what neutralises them), so call accounting stays intact.
#[test]
fn zero_beta_still_pays_for_amateur_forwards() {
    let (backend, greedy_path) = random_episode(7);
    let steps = greedy_path.len() as u64;
    let ctx = DecodeContext::new(vec![PROMPT], clean_tone());

    backend.reset_forward_calls();
    decode(&backend, &ctx, &neutral_config(Method::Greedy)).unwrap();
    assert_eq!(backend.forward_calls(), steps);

    backend.reset_forward_calls();
    decode(&backend, &ctx, &neutral_config(Method::Aad)).unwrap();
    assert_eq!(backend.forward_calls(), 2 * steps);

    // The layer method reuses the expert's own stack: no extra forwards.
    backend.reset_forward_calls();
    decode(&backend, &ctx, &neutral_config(Method::Dola)).unwrap();
    assert_eq!(backend.forward_calls(), steps);
}

fn neutral_config(method: Method) -> StrategyConfig {
    let mut cfg = StrategyConfig::defaults_for(method, EOS);
    cfg.contrast.alpha = 1.0;
    cfg.contrast.beta = 0.0;
    // Gate threshold zero forces the gated method to intervene whenever
    // entropy is positive, exercising its amateur path too.
    cfg.contrast.tau_entropy = 0.0;
    cfg.apc_enabled = false;
    cfg.max_new_tokens = MAX_NEW;
    cfg
}
