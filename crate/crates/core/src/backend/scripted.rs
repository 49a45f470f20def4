//! Table-driven backend: every forward pass is an exact row lookup, so tests
//! control each logit the decode loop ever sees. An unknown key is an error,
//! never a guess.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{check_context, BackendError, Capabilities, DecodeContext, ForwardOutput, ModelBackend};
use crate::logits::{LogitVector, TokenId};

/// Lookup key for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScriptKey {
    /// Audio provenance: "absent", "clean", or "distorted".
    pub audio: String,
    /// First prompt token, which identifies the episode.
    pub prompt: TokenId,
    /// Decoded prefix so far.
    pub prefix: Vec<TokenId>,
    /// Whether a negative prompt is attached.
    #[serde(default)]
    pub neg: bool,
}

impl ScriptKey {
    pub fn new(audio: &str, prompt: TokenId, prefix: Vec<TokenId>) -> Self {
        Self {
            audio: audio.to_string(),
            prompt,
            prefix,
            neg: false,
        }
    }

    pub fn negated(mut self) -> Self {
        self.neg = true;
        self
    }

    fn for_context(ctx: &DecodeContext) -> Result<Self, BackendError> {
        let prompt = *ctx.prompt.first().ok_or(BackendError::EmptyPrompt)?;
        Ok(Self {
            audio: ctx.audio.tag().as_str().to_string(),
            prompt,
            prefix: ctx.decoded.clone(),
            neg: ctx.negative_prompt.is_some(),
        })
    }
}

/// First line of a script file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptHeader {
    vocab_size: usize,
    n_layers: usize,
    eos_token: TokenId,
}

/// One scripted row. Exactly one of `logits` (final layer only, replicated
/// across all layers) or `layers` (full per-layer stack) must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub audio_tag: String,
    pub prompt_id: TokenId,
    #[serde(default)]
    pub prefix: Vec<TokenId>,
    #[serde(default)]
    pub neg: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<LogitVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LogitVector>>,
}

#[derive(Debug)]
pub struct ScriptedBackendBuilder {
    vocab_size: usize,
    n_layers: usize,
    eos_token: TokenId,
    capabilities: Capabilities,
    table: HashMap<ScriptKey, Vec<LogitVector>>,
}

impl ScriptedBackendBuilder {
    pub fn new(vocab_size: usize, n_layers: usize, eos_token: TokenId) -> Self {
        Self {
            vocab_size,
            n_layers,
            eos_token,
            capabilities: Capabilities::full(),
            table: HashMap::new(),
        }
    }

    pub fn capabilities(mut self, capabilities: Capabilities) -> Self {
        self.capabilities = capabilities;
        self
    }

    /// Scripts final-layer logits for a key, replicated across all layers.
    pub fn row(self, key: ScriptKey, logits: LogitVector) -> Result<Self, BackendError> {
        let n = self.n_layers;
        self.row_layers(key, vec![logits; n])
    }

    /// Scripts the full per-layer stack for a key.
    pub fn row_layers(
        mut self,
        key: ScriptKey,
        layers: Vec<LogitVector>,
    ) -> Result<Self, BackendError> {
        if layers.len() != self.n_layers {
            return Err(BackendError::InvalidScript(format!(
                "key {key:?}: {} layers scripted, backend has {}",
                layers.len(),
                self.n_layers
            )));
        }
        if let Some(bad) = layers.iter().find(|l| l.len() != self.vocab_size) {
            return Err(BackendError::InvalidScript(format!(
                "key {key:?}: row width {} does not match vocab size {}",
                bad.len(),
                self.vocab_size
            )));
        }
        if self.table.insert(key.clone(), layers).is_some() {
            return Err(BackendError::InvalidScript(format!(
                "duplicate row for key {key:?}"
            )));
        }
        Ok(self)
    }

    pub fn build(self) -> Result<ScriptedBackend, BackendError> {
        if self.vocab_size == 0 || self.n_layers == 0 {
            return Err(BackendError::InvalidScript(
                "vocab_size and n_layers must be positive".into(),
            ));
        }
        if self.eos_token as usize >= self.vocab_size {
            return Err(BackendError::InvalidScript(format!(
                "eos token {} outside vocab of size {}",
                self.eos_token, self.vocab_size
            )));
        }
        Ok(ScriptedBackend {
            vocab_size: self.vocab_size,
            n_layers: self.n_layers,
            eos_token: self.eos_token,
            capabilities: self.capabilities,
            table: self.table,
            calls: AtomicU64::new(0),
        })
    }
}

/// Backend whose every output comes from a pre-built table.
#[derive(Debug)]
pub struct ScriptedBackend {
    vocab_size: usize,
    n_layers: usize,
    eos_token: TokenId,
    capabilities: Capabilities,
    table: HashMap<ScriptKey, Vec<LogitVector>>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn builder(vocab_size: usize, n_layers: usize, eos_token: TokenId) -> ScriptedBackendBuilder {
        ScriptedBackendBuilder::new(vocab_size, n_layers, eos_token)
    }

    /// Loads a script: first line is a header with vocab_size, n_layers and
    /// eos_token; every further non-blank line is one entry.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, BackendError> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let (_, header_line) = lines
            .next()
            .ok_or_else(|| BackendError::InvalidScript("empty script".into()))?;
        let header: ScriptHeader = serde_json::from_str(&header_line?)
            .map_err(|source| BackendError::ScriptParse { line: 1, source })?;
        let mut builder =
            ScriptedBackendBuilder::new(header.vocab_size, header.n_layers, header.eos_token);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line)
                .map_err(|source| BackendError::ScriptParse { line: idx + 1, source })?;
            let key = ScriptKey {
                audio: entry.audio_tag,
                prompt: entry.prompt_id,
                prefix: entry.prefix,
                neg: entry.neg,
            };
            builder = match (entry.logits, entry.layers) {
                (Some(logits), None) => builder.row(key, logits)?,
                (None, Some(layers)) => builder.row_layers(key, layers)?,
                _ => {
                    return Err(BackendError::InvalidScript(format!(
                        "line {}: exactly one of `logits` or `layers` required",
                        idx + 1
                    )))
                }
            };
        }
        builder.build()
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl ModelBackend for ScriptedBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn eos_token(&self) -> TokenId {
        self.eos_token
    }

    fn forward(&self, ctx: &DecodeContext, _seed: u64) -> Result<ForwardOutput, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        check_context(self.capabilities, ctx)?;
        let key = ScriptKey::for_context(ctx)?;
        let layers = self.table.get(&key).ok_or(BackendError::MissingEntry {
            audio: key.audio,
            prompt: key.prompt,
            prefix: key.prefix,
            neg: key.neg,
        })?;
        if self.capabilities.layer_access {
            ForwardOutput::from_layers(layers.clone())
        } else {
            Ok(ForwardOutput::final_only(
                layers.last().expect("validated non-empty").clone(),
            ))
        }
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn forward_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn reset_forward_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}
