//! Pluggable autoregressive model interface plus two desk-scale
//! implementations: an exact table-driven scripted backend and a closed-form
//! synthetic model with per-layer outputs.
//!
//! Backends are immutable after construction and shareable across decode
//! workers; the only interior state is a forward-call counter.

mod scripted;
mod synthetic;

pub use scripted::{ScriptedBackend, ScriptedBackendBuilder, ScriptEntry, ScriptKey};
pub use synthetic::{
    make_synthetic_dataset, AnswerStyle, SyntheticBackend, SyntheticItem, ANSWER_TOKENS,
    EOS_TOKEN, SYNTHETIC_VOCAB,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, AudioInput};
use crate::logits::{KernelError, LogitVector, TokenId};

/// Input-side sentinel token that marks a negative prompt. Real models would
/// tokenize the instruction text; desk-scale backends key on this marker.
pub const NEG_SENTINEL: TokenId = 900;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no scripted row for audio={audio} prompt={prompt} prefix={prefix:?} neg={neg}")]
    MissingEntry {
        audio: String,
        prompt: TokenId,
        prefix: Vec<TokenId>,
        neg: bool,
    },
    #[error("unknown item id {0}")]
    UnknownItem(TokenId),
    #[error("backend does not accept audio input")]
    AudioUnsupported,
    #[error("backend does not recognize negative prompts")]
    NegativePromptUnsupported,
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("invalid dataset request: {0}")]
    InvalidDataset(String),
    #[error("script line {line} is malformed")]
    ScriptParse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("audio processing failed")]
    Audio(#[from] AudioError),
    #[error("logit construction failed")]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a backend can do; strategies check these before relying on a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Per-layer logits are available from forward.
    pub layer_access: bool,
    /// The backend conditions on audio.
    pub audio_input: bool,
    /// The backend honors a negative-prompt sentinel.
    pub negative_prompt_sentinel: bool,
}

impl Capabilities {
    pub fn full() -> Self {
        Self {
            layer_access: true,
            audio_input: true,
            negative_prompt_sentinel: true,
        }
    }
}

/// Everything a forward pass conditions on: audio, the question prompt, the
/// tokens decoded so far, and an optional negative prompt. The negative
/// prompt is logically appended after the decoded prefix, which is what keeps
/// earlier cache entries reusable in a real serving stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeContext {
    pub audio: AudioInput,
    pub prompt: Vec<TokenId>,
    pub decoded: Vec<TokenId>,
    pub negative_prompt: Option<Vec<TokenId>>,
}

impl DecodeContext {
    pub fn new(prompt: Vec<TokenId>, audio: AudioInput) -> Self {
        Self {
            audio,
            prompt,
            decoded: Vec::new(),
            negative_prompt: None,
        }
    }

    /// Copy of this context with the audio removed.
    pub fn without_audio(&self) -> Self {
        Self {
            audio: AudioInput::absent(),
            ..self.clone()
        }
    }

    /// Copy of this context listening to different audio.
    pub fn with_audio(&self, audio: AudioInput) -> Self {
        Self {
            audio,
            ..self.clone()
        }
    }

    /// Copy of this context with a negative prompt attached.
    pub fn with_negative_prompt(&self, tokens: Vec<TokenId>) -> Self {
        Self {
            negative_prompt: Some(tokens),
            ..self.clone()
        }
    }
}

/// Result of one forward pass: final-layer logits, plus the full per-layer
/// stack when the backend exposes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    final_logits: LogitVector,
    layer_logits: Option<Vec<LogitVector>>,
}

impl ForwardOutput {
    pub fn final_only(final_logits: LogitVector) -> Self {
        Self {
            final_logits,
            layer_logits: None,
        }
    }

    /// Builds from a per-layer stack; entry `i` is layer `i+1` and the last
    /// entry becomes the final logits.
    pub fn from_layers(layers: Vec<LogitVector>) -> Result<Self, BackendError> {
        let last = layers
            .last()
            .ok_or_else(|| BackendError::InvalidScript("empty layer stack".into()))?;
        let width = last.len();
        if let Some(bad) = layers.iter().position(|l| l.len() != width) {
            return Err(BackendError::InvalidScript(format!(
                "layer {} has {} logits, expected {width}",
                bad + 1,
                layers[bad].len()
            )));
        }
        Ok(Self {
            final_logits: last.clone(),
            layer_logits: Some(layers),
        })
    }

    pub fn final_logits(&self) -> &LogitVector {
        &self.final_logits
    }

    pub fn layers(&self) -> Option<&[LogitVector]> {
        self.layer_logits.as_deref()
    }

    /// Logits of layer `number`, 1-indexed; layer N equals the final logits.
    pub fn layer(&self, number: usize) -> Option<&LogitVector> {
        if number == 0 {
            return None;
        }
        self.layer_logits.as_ref()?.get(number - 1)
    }
}

/// An autoregressive model the decode loop can drive.
pub trait ModelBackend: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn n_layers(&self) -> usize;
    fn capabilities(&self) -> Capabilities;
    fn eos_token(&self) -> TokenId;

    /// Scores the next token. Deterministic given (context, seed); the two
    /// shipped backends are deterministic from the context alone and ignore
    /// the seed, which exists so stochastic adapters can stay reproducible.
    fn forward(&self, ctx: &DecodeContext, seed: u64) -> Result<ForwardOutput, BackendError>;

    fn detokenize(&self, tokens: &[TokenId]) -> String;

    /// Total forward invocations since construction or the last reset.
    fn forward_calls(&self) -> u64;
    fn reset_forward_calls(&self);
}

pub(crate) fn check_context(
    caps: Capabilities,
    ctx: &DecodeContext,
) -> Result<(), BackendError> {
    if ctx.prompt.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    if !caps.audio_input && !ctx.audio.is_absent() {
        return Err(BackendError::AudioUnsupported);
    }
    if !caps.negative_prompt_sentinel && ctx.negative_prompt.is_some() {
        return Err(BackendError::NegativePromptUnsupported);
    }
    Ok(())
}
