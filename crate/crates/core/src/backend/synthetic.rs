//! Closed-form synthetic model: a tiny color-question world where the answer
//! logits decompose into a language prior plus audio-grounded evidence.
//!
//! Layer law: logits at layer l equal prior + (l/N)·f·evidence, where f is
//! the audio fidelity. Evidence therefore only fully surfaces at the final
//! layer, shallow layers stay prior-dominated, and removing or degrading the
//! audio scales the evidence away. Every quantity the decode loop produces
//! on this backend can be recomputed by hand.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_context, BackendError, Capabilities, DecodeContext, ForwardOutput, ModelBackend};
use crate::audio::{measure_snr_db, AudioInput, AudioTag};
use crate::logits::{greedy_select, LogitVector, TokenId};

/// Output vocabulary: 4 answer words, 4 style markers, end-of-sequence.
pub const SYNTHETIC_VOCAB: usize = 9;
/// The four answer tokens, detokenized as color words.
pub const ANSWER_TOKENS: [TokenId; 4] = [0, 1, 2, 3];
/// End-of-sequence token.
pub const EOS_TOKEN: TokenId = 8;

const ANSWER_WORDS: [&str; 4] = ["red", "green", "blue", "yellow"];
/// Logit mass of the forced token at template steps.
const TEMPLATE_PEAK: f64 = 8.0;
/// Logit assigned to non-answer tokens at the answer step.
const OFF_TEMPLATE: f64 = -4.0;

/// Answer word for an answer token.
pub fn answer_word(token: TokenId) -> Option<&'static str> {
    ANSWER_WORDS.get(token as usize).copied()
}

/// Opening phrase of a response; wrong answers phrased this way land in the
/// matching response-state bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerStyle {
    NoAudio,
    Reason,
    Direct,
    Guess,
}

impl AnswerStyle {
    pub const ALL: [AnswerStyle; 4] = [
        AnswerStyle::NoAudio,
        AnswerStyle::Reason,
        AnswerStyle::Direct,
        AnswerStyle::Guess,
    ];

    pub fn marker_token(self) -> TokenId {
        match self {
            AnswerStyle::NoAudio => 4,
            AnswerStyle::Reason => 5,
            AnswerStyle::Direct => 6,
            AnswerStyle::Guess => 7,
        }
    }

    pub fn from_marker(token: TokenId) -> Option<Self> {
        Self::ALL.iter().copied().find(|s| s.marker_token() == token)
    }

    pub fn template(self) -> &'static str {
        match self {
            AnswerStyle::NoAudio => "I did not receive any audio, so I will say",
            AnswerStyle::Reason => "The tempo and pitch point to",
            AnswerStyle::Direct => "It is",
            AnswerStyle::Guess => "I am not sure, my guess is",
        }
    }
}

/// One question: a language prior over answers, audio evidence favoring the
/// true answer, and the phrasing style the model will use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticItem {
    pub id: u32,
    /// Answer-step logits the model produces with no audio at all.
    pub prior_logits: LogitVector,
    /// Audio-grounded additive signal; argmax is the true answer.
    pub evidence_logits: LogitVector,
    pub true_token: TokenId,
    pub style: AnswerStyle,
    pub question: String,
}

impl SyntheticItem {
    pub fn new(
        id: u32,
        prior_logits: LogitVector,
        evidence_logits: LogitVector,
        true_token: TokenId,
        style: AnswerStyle,
        question: String,
    ) -> Result<Self, BackendError> {
        if prior_logits.len() != SYNTHETIC_VOCAB || evidence_logits.len() != SYNTHETIC_VOCAB {
            return Err(BackendError::InvalidDataset(format!(
                "item {id}: logit vectors must cover the {SYNTHETIC_VOCAB}-token vocabulary"
            )));
        }
        if greedy_select(&evidence_logits) != true_token {
            return Err(BackendError::InvalidDataset(format!(
                "item {id}: evidence argmax must be the true answer token {true_token}"
            )));
        }
        Ok(Self {
            id,
            prior_logits,
            evidence_logits,
            true_token,
            style,
            question,
        })
    }

    /// Answer the language prior favors.
    pub fn prior_token(&self) -> TokenId {
        greedy_select(&self.prior_logits)
    }

    /// True when the prior favors a wrong answer.
    pub fn is_conflict(&self) -> bool {
        self.prior_token() != self.true_token
    }

    pub fn ground_truth(&self) -> &'static str {
        answer_word(self.true_token).expect("true token is an answer token")
    }

    /// The clean audio this item is about: a quarter second of a pure tone
    /// whose frequency is fixed by the item id.
    pub fn reference_audio(&self) -> AudioInput {
        AudioInput::sine(220.0 + 7.0 * (self.id % 64) as f64, 0.1, 0.25, 16_000)
    }

    pub fn prompt_tokens(&self) -> Vec<TokenId> {
        vec![self.id]
    }
}

/// Generates a deterministic dataset. Exactly round(n_items·conflict_fraction)
/// items get a prior that favors a wrong answer with margin between 1 and 2
/// times the evidence margin, so plain greedy resolves them by prior while a
/// doubled evidence term flips them to the true answer.
pub fn make_synthetic_dataset(
    n_items: usize,
    conflict_fraction: f64,
    seed: u64,
) -> Result<Vec<SyntheticItem>, BackendError> {
    if !(0.0..=1.0).contains(&conflict_fraction) || conflict_fraction.is_nan() {
        return Err(BackendError::InvalidDataset(format!(
            "conflict_fraction must lie in [0, 1], got {conflict_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_conflict = (n_items as f64 * conflict_fraction).round() as usize;
    let mut conflict_flags = vec![false; n_items];
    for flag in conflict_flags.iter_mut().take(n_conflict) {
        *flag = true;
    }
    conflict_flags.shuffle(&mut rng);

    let mut items = Vec::with_capacity(n_items);
    for (id, &conflict) in conflict_flags.iter().enumerate() {
        let true_token = ANSWER_TOKENS[rng.random_range(0..ANSWER_TOKENS.len())];
        let style = match rng.random_range(0..20u32) {
            0..=5 => AnswerStyle::NoAudio,
            6..=8 => AnswerStyle::Reason,
            9..=12 => AnswerStyle::Direct,
            _ => AnswerStyle::Guess,
        };
        let evidence_margin = rng.random_range(1.0..2.0);
        let (prior_token, prior_margin) = if conflict {
            let offset = rng.random_range(1..ANSWER_TOKENS.len() as u32);
            let wrong = (true_token + offset) % ANSWER_TOKENS.len() as u32;
            (wrong, evidence_margin * rng.random_range(1.1..1.9))
        } else {
            (true_token, rng.random_range(0.5..1.5))
        };

        let mut prior = vec![0.0; SYNTHETIC_VOCAB];
        for slot in prior.iter_mut().skip(ANSWER_TOKENS.len()) {
            *slot = OFF_TEMPLATE;
        }
        prior[prior_token as usize] = prior_margin;
        let mut evidence = vec![0.0; SYNTHETIC_VOCAB];
        evidence[true_token as usize] = evidence_margin;

        items.push(SyntheticItem::new(
            id as u32,
            LogitVector::new(prior)?,
            LogitVector::new(evidence)?,
            true_token,
            style,
            format!("Item {id}: which color does the audio cue point to?"),
        )?);
    }
    Ok(items)
}

/// Backend evaluating the layer law over a fixed item set.
#[derive(Debug)]
pub struct SyntheticBackend {
    items: BTreeMap<u32, SyntheticItem>,
    n_layers: usize,
    calls: AtomicU64,
}

impl SyntheticBackend {
    pub const DEFAULT_LAYERS: usize = 8;

    pub fn new(items: Vec<SyntheticItem>, n_layers: usize) -> Result<Self, BackendError> {
        if n_layers == 0 {
            return Err(BackendError::InvalidDataset(
                "n_layers must be positive".into(),
            ));
        }
        let mut map = BTreeMap::new();
        for item in items {
            let id = item.id;
            if map.insert(id, item).is_some() {
                return Err(BackendError::InvalidDataset(format!(
                    "duplicate item id {id}"
                )));
            }
        }
        Ok(Self {
            items: map,
            n_layers,
            calls: AtomicU64::new(0),
        })
    }

    pub fn with_default_layers(items: Vec<SyntheticItem>) -> Result<Self, BackendError> {
        Self::new(items, Self::DEFAULT_LAYERS)
    }

    pub fn item(&self, id: u32) -> Option<&SyntheticItem> {
        self.items.get(&id)
    }

    pub fn items(&self) -> impl Iterator<Item = &SyntheticItem> {
        self.items.values()
    }

    /// Evidence scale for the given context: 1 for clean audio, 0 for absent
    /// audio or an attached negative prompt, and a monotone function of the
    /// measured SNR for distorted audio.
    fn fidelity(&self, ctx: &DecodeContext, item: &SyntheticItem) -> Result<f64, BackendError> {
        if ctx.negative_prompt.is_some() {
            return Ok(0.0);
        }
        match ctx.audio.tag() {
            AudioTag::Absent => Ok(0.0),
            AudioTag::Clean => Ok(1.0),
            AudioTag::Distorted { .. } => {
                let snr_db = measure_snr_db(&item.reference_audio(), &ctx.audio)?;
                if snr_db.is_infinite() {
                    return Ok(1.0);
                }
                let snr_linear = 10f64.powf(snr_db / 10.0);
                Ok(snr_linear / (1.0 + snr_linear))
            }
        }
    }
}

fn one_hot(token: TokenId) -> Vec<f64> {
    let mut v = vec![0.0; SYNTHETIC_VOCAB];
    v[token as usize] = TEMPLATE_PEAK;
    v
}

impl ModelBackend for SyntheticBackend {
    fn vocab_size(&self) -> usize {
        SYNTHETIC_VOCAB
    }

    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::full()
    }

    fn eos_token(&self) -> TokenId {
        EOS_TOKEN
    }

    fn forward(&self, ctx: &DecodeContext, _seed: u64) -> Result<ForwardOutput, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        check_context(self.capabilities(), ctx)?;
        let id = ctx.prompt[0];
        let item = self
            .items
            .get(&id)
            .ok_or(BackendError::UnknownItem(id))?;
        let fidelity = self.fidelity(ctx, item)?;

        // Responses follow a fixed 3-step template: style marker, answer,
        // eos. Only the answer step carries audio evidence.
        let (base, evidence): (Vec<f64>, Option<&LogitVector>) = match ctx.decoded.len() {
            0 => (one_hot(item.style.marker_token()), None),
            1 => (item.prior_logits.values().to_vec(), Some(&item.evidence_logits)),
            _ => (one_hot(EOS_TOKEN), None),
        };

        let mut layers = Vec::with_capacity(self.n_layers);
        for l in 1..=self.n_layers {
            let depth = l as f64 / self.n_layers as f64;
            let values = match evidence {
                Some(ev) => base
                    .iter()
                    .zip(ev.values())
                    .map(|(b, e)| b + depth * fidelity * e)
                    .collect(),
                None => base.clone(),
            };
            layers.push(LogitVector::new(values)?);
        }
        ForwardOutput::from_layers(layers)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for &t in tokens {
            if let Some(style) = AnswerStyle::from_marker(t) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(style.template());
            } else if let Some(word) = answer_word(t) {
                out.push(' ');
                out.push_str(word);
            } else if t == EOS_TOKEN {
                out.push('.');
            } else {
                out.push_str(&format!(" <{t}>"));
            }
        }
        out.trim_start().to_string()
    }

    fn forward_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn reset_forward_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}
