//! Amateur construction per contrast method and the autoregressive decode
//! loop that applies the contrast at every step.
//!
//! Five methods share one loop: GREEDY (no amateur), AAD (no-audio amateur),
//! ACD (noise-distorted-audio amateur), AMTI (entropy-gated negative-prompt
//! amateur), and DOLA (intermediate-layer amateur picked by maximal JSD).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{distort, AudioError};
use crate::backend::{BackendError, DecodeContext, ForwardOutput, ModelBackend, NEG_SENTINEL};
use crate::logits::{
    apc_mask, combine_logits, entropy, greedy_select, jsd, softmax, ContrastParams, KernelError,
    LogitVector, ProbDist, TokenId,
};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("{method} requires audio in the expert context")]
    MissingAudio { method: Method },
    #[error("layer contrast needs at least 4 layers, model has {n_layers}")]
    UnsupportedModel { n_layers: usize },
    #[error("backend does not expose per-layer logits")]
    NoLayerAccess,
    #[error("decode requires a fresh context with no decoded tokens")]
    NonEmptyPrefix,
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Decoding method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Greedy,
    Aad,
    Acd,
    Amti,
    Dola,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Greedy,
        Method::Aad,
        Method::Acd,
        Method::Amti,
        Method::Dola,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Greedy => "GREEDY",
            Method::Aad => "AAD",
            Method::Acd => "ACD",
            Method::Amti => "AMTI",
            Method::Dola => "DOLA",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GREEDY" => Ok(Method::Greedy),
            "AAD" => Ok(Method::Aad),
            "ACD" => Ok(Method::Acd),
            "AMTI" => Ok(Method::Amti),
            "DOLA" => Ok(Method::Dola),
            other => Err(StrategyError::InvalidConfig(format!(
                "unknown method {other:?}"
            ))),
        }
    }
}

/// Full decoding configuration for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub method: Method,
    pub contrast: ContrastParams,
    pub apc_enabled: bool,
    /// ACD distortion level.
    pub noise_snr_db: f64,
    /// AMTI instruction text. Recorded in run artifacts; desk-scale backends
    /// see it as a fixed sentinel token.
    pub negative_prompt_text: String,
    pub max_new_tokens: usize,
    pub eos_token: TokenId,
    /// Seed for ACD noise and for backends with stochastic forwards.
    pub seed: u64,
}

impl StrategyConfig {
    /// Per-method defaults: alpha 2, beta 1 for AAD/ACD/AMTI and alpha 1,
    /// beta 1 for DOLA; plausibility masking on for ACD and DOLA only.
    pub fn defaults_for(method: Method, eos_token: TokenId) -> Self {
        let (alpha, beta) = match method {
            Method::Greedy => (1.0, 0.0),
            Method::Aad | Method::Acd | Method::Amti => (2.0, 1.0),
            Method::Dola => (1.0, 1.0),
        };
        Self {
            method,
            contrast: ContrastParams {
                alpha,
                beta,
                ..ContrastParams::default()
            },
            apc_enabled: matches!(method, Method::Acd | Method::Dola),
            noise_snr_db: 5.0,
            negative_prompt_text: "Ignore Audio".to_string(),
            max_new_tokens: 8,
            eos_token,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        self.contrast
            .validate()
            .map_err(|e| StrategyError::InvalidConfig(e.to_string()))?;
        if self.max_new_tokens == 0 {
            return Err(StrategyError::InvalidConfig(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if self.method == Method::Acd && self.noise_snr_db.is_nan() {
            return Err(StrategyError::InvalidConfig(
                "noise_snr_db must not be NaN".into(),
            ));
        }
        if self.method == Method::Amti && self.negative_prompt_text.trim().is_empty() {
            return Err(StrategyError::InvalidConfig(
                "AMTI needs a non-empty negative prompt".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of the AMTI entropy gate at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    /// Expert next-token entropy in nats.
    pub entropy_value: f64,
    pub intervened: bool,
}

impl GateDecision {
    pub fn evaluate(entropy_value: f64, tau: f64) -> Self {
        Self {
            entropy_value,
            intervened: entropy_value > tau,
        }
    }
}

/// Everything observable about one decode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub expert: LogitVector,
    /// Present exactly when an amateur contributed to this step.
    pub amateur: Option<LogitVector>,
    /// The logits the token was selected from, after any plausibility mask.
    pub combined: LogitVector,
    pub chosen: TokenId,
    /// AMTI only.
    pub gate: Option<GateDecision>,
    /// DOLA only: 1-indexed layer the amateur came from.
    pub selected_layer: Option<usize>,
}

/// Decode failure carrying whatever was produced before the abort.
#[derive(Debug)]
pub struct DecodeError {
    pub tokens: Vec<TokenId>,
    pub trace: Vec<StepTrace>,
    pub source: StrategyError,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(
            f,
            "decode aborted after {} tokens: {}",
            self.tokens.len(),
            self.source
        )
    }
}

impl std::error::Error for DecodeError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// No-audio amateur: same prompt and prefix, audio removed.
pub fn amateur_aad(
    backend: &dyn ModelBackend,
    ctx: &DecodeContext,
    seed: u64,
) -> Result<LogitVector, StrategyError> {
    if ctx.audio.is_absent() {
        return Err(StrategyError::MissingAudio { method: Method::Aad });
    }
    Ok(backend
        .forward(&ctx.without_audio(), seed)?
        .final_logits()
        .clone())
}

/// Distorted-audio amateur: audio replaced by a seeded Gaussian-noise copy.
/// An infinite target SNR degenerates to the unmodified expert input.
pub fn amateur_acd(
    backend: &dyn ModelBackend,
    ctx: &DecodeContext,
    snr_db: f64,
    seed: u64,
) -> Result<LogitVector, StrategyError> {
    if ctx.audio.is_absent() {
        return Err(StrategyError::MissingAudio { method: Method::Acd });
    }
    if snr_db == f64::INFINITY {
        return Ok(backend.forward(ctx, seed)?.final_logits().clone());
    }
    let noisy = distort(&ctx.audio, snr_db, seed)?;
    Ok(backend
        .forward(&ctx.with_audio(noisy), seed)?
        .final_logits()
        .clone())
}

/// Negative-prompt amateur, gated on expert uncertainty: present only when
/// the expert entropy exceeds `tau`. The negative prompt rides after the
/// decoded prefix, so a serving stack could reuse every earlier cache entry.
pub fn amateur_amti(
    backend: &dyn ModelBackend,
    ctx: &DecodeContext,
    expert_probs: &ProbDist,
    tau: f64,
    seed: u64,
) -> Result<Option<LogitVector>, StrategyError> {
    if entropy(expert_probs) <= tau {
        return Ok(None);
    }
    let negated = ctx.with_negative_prompt(vec![NEG_SENTINEL]);
    Ok(Some(
        backend.forward(&negated, seed)?.final_logits().clone(),
    ))
}

/// Layers eligible as DOLA amateurs: every second layer from the middle of
/// the stack up, excluding the final layer (the expert itself).
pub fn candidate_layers(n_layers: usize) -> Result<Vec<usize>, StrategyError> {
    if n_layers < 4 {
        return Err(StrategyError::UnsupportedModel { n_layers });
    }
    Ok((n_layers / 2..n_layers).step_by(2).collect())
}

/// Intermediate-layer amateur: the candidate whose distribution sits farthest
/// from the final layer by JSD. Ties go to the lowest layer.
pub fn amateur_dola(
    backend: &dyn ModelBackend,
    ctx: &DecodeContext,
    seed: u64,
) -> Result<(LogitVector, usize), StrategyError> {
    let out = backend.forward(ctx, seed)?;
    select_layer_amateur(&out)
}

fn select_layer_amateur(out: &ForwardOutput) -> Result<(LogitVector, usize), StrategyError> {
    let layers = out.layers().ok_or(StrategyError::NoLayerAccess)?;
    let candidates = candidate_layers(layers.len())?;
    let final_probs = softmax(out.final_logits());
    let mut best: Option<(f64, usize)> = None;
    for &k in &candidates {
        let probs = softmax(&layers[k - 1]);
        let divergence = jsd(&final_probs, &probs)?;
        if best.is_none_or(|(d, _)| divergence > d) {
            best = Some((divergence, k));
        }
    }
    let (_, k) = best.expect("candidate set is never empty");
    Ok((layers[k - 1].clone(), k))
}

/// Runs the full autoregressive loop for one sample: expert forward, amateur
/// per method, contrast, optional plausibility mask, greedy pick. Stops at
/// the eos token or after `max_new_tokens`. On failure the error carries the
/// tokens and trace produced so far.
pub fn decode(
    backend: &dyn ModelBackend,
    ctx: &DecodeContext,
    cfg: &StrategyConfig,
) -> Result<(Vec<TokenId>, Vec<StepTrace>), DecodeError> {
    let mut work = ctx.clone();
    let mut trace: Vec<StepTrace> = Vec::new();
    let abort = |work: &DecodeContext, trace: &mut Vec<StepTrace>, source: StrategyError| {
        DecodeError {
            tokens: work.decoded.clone(),
            trace: std::mem::take(trace),
            source,
        }
    };

    if let Err(e) = cfg.validate() {
        return Err(abort(&work, &mut trace, e));
    }
    if cfg.eos_token as usize >= backend.vocab_size() {
        return Err(abort(
            &work,
            &mut trace,
            StrategyError::InvalidConfig(format!(
                "eos token {} outside vocab of size {}",
                cfg.eos_token,
                backend.vocab_size()
            )),
        ));
    }
    if !ctx.decoded.is_empty() {
        return Err(abort(&work, &mut trace, StrategyError::NonEmptyPrefix));
    }

    for step in 0..cfg.max_new_tokens {
        let result = decode_step(backend, &work, cfg, step);
        let step_trace = match result {
            Ok(t) => t,
            Err(e) => return Err(abort(&work, &mut trace, e)),
        };
        let chosen = step_trace.chosen;
        trace.push(step_trace);
        work.decoded.push(chosen);
        if chosen == cfg.eos_token {
            break;
        }
    }
    Ok((work.decoded, trace))
}

fn decode_step(
    backend: &dyn ModelBackend,
    work: &DecodeContext,
    cfg: &StrategyConfig,
    step: usize,
) -> Result<StepTrace, StrategyError> {
    let out = backend.forward(work, cfg.seed)?;
    let expert = out.final_logits().clone();
    let expert_probs = softmax(&expert);

    let mut amateur = None;
    let mut gate = None;
    let mut selected_layer = None;
    match cfg.method {
        Method::Greedy => {}
        Method::Aad => amateur = Some(amateur_aad(backend, work, cfg.seed)?),
        Method::Acd => {
            amateur = Some(amateur_acd(backend, work, cfg.noise_snr_db, cfg.seed)?)
        }
        Method::Amti => {
            let h = entropy(&expert_probs);
            gate = Some(GateDecision::evaluate(h, cfg.contrast.tau_entropy));
            amateur = amateur_amti(
                backend,
                work,
                &expert_probs,
                cfg.contrast.tau_entropy,
                cfg.seed,
            )?;
        }
        Method::Dola => {
            let (a, k) = select_layer_amateur(&out)?;
            amateur = Some(a);
            selected_layer = Some(k);
        }
    }

    let mut combined = match &amateur {
        Some(a) => combine_logits(&expert, a, &cfg.contrast)?,
        // pass-through keeps strict greedy equivalence on ungated steps
        None => expert.clone(),
    };
    if cfg.apc_enabled {
        combined = apc_mask(&combined, &expert_probs, cfg.contrast.gamma_apc)?;
    }
    let chosen = greedy_select(&combined);

    Ok(StepTrace {
        step,
        expert,
        amateur,
        combined,
        chosen,
        gate,
        selected_layer,
    })
}
