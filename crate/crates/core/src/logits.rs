//! Vocabulary-space math: contrast combination, probability transforms,
//! entropy, Jensen-Shannon divergence, plausibility masking, and greedy
//! selection.
//!
//! Everything here is a pure function over immutable inputs, so unrestricted
//! parallel use is safe.

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Token identifier into a backend's output vocabulary.
pub type TokenId = u32;

/// Probabilities below this floor are treated as exactly zero inside KL terms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("logit vectors differ in length: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty logit vector")]
    Empty,
    #[error("all logits are masked; at least one finite entry is required")]
    AllMasked,
    #[error("logit at token {token} is {value}; entries must be finite or -inf")]
    InvalidLogit { token: TokenId, value: f64 },
    #[error("amateur logit at token {token} is not finite where the expert is finite")]
    NonFiniteAmateur { token: TokenId },
    #[error("probabilities sum to {sum}, expected 1 within 1e-9")]
    NotNormalized { sum: f64 },
    #[error("probability at token {token} is {value}; entries must be finite and >= 0")]
    InvalidProbability { token: TokenId, value: f64 },
    #[error("invalid contrast parameters: {reason}")]
    InvalidParams { reason: String },
}

/// Raw per-token scores over a fixed vocabulary. Masked tokens carry `-inf`.
///
/// Construction guarantees at least one finite entry, and every operation in
/// this module preserves that guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, KernelError> {
        if values.is_empty() {
            return Err(KernelError::Empty);
        }
        let mut any_finite = false;
        for (i, &v) in values.iter().enumerate() {
            if v.is_finite() {
                any_finite = true;
            } else if v != f64::NEG_INFINITY {
                return Err(KernelError::InvalidLogit {
                    token: i as TokenId,
                    value: v,
                });
            }
        }
        if !any_finite {
            return Err(KernelError::AllMasked);
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, token: TokenId) -> Option<f64> {
        self.values.get(token as usize).copied()
    }
}

// `-inf` sentinels are encoded as JSON null; plain floats stay floats.
impl Serialize for LogitVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.values.len()))?;
        for &v in &self.values {
            if v == f64::NEG_INFINITY {
                seq.serialize_element(&Option::<f64>::None)?;
            } else {
                seq.serialize_element(&Some(v))?;
            }
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for LogitVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct VecVisitor;
        impl<'de> Visitor<'de> for VecVisitor {
            type Value = Vec<f64>;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a sequence of floats with null for masked entries")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(v) = seq.next_element::<Option<f64>>()? {
                    out.push(v.unwrap_or(f64::NEG_INFINITY));
                }
                Ok(out)
            }
        }
        let values = deserializer.deserialize_seq(VecVisitor)?;
        LogitVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// A normalized distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, KernelError> {
        if probs.is_empty() {
            return Err(KernelError::Empty);
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(KernelError::InvalidProbability {
                    token: i as TokenId,
                    value: p,
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(KernelError::NotNormalized { sum });
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self, KernelError> {
        if n == 0 {
            return Err(KernelError::Empty);
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, token: TokenId) -> Option<f64> {
        self.probs.get(token as usize).copied()
    }

    /// Index and value of the most probable token (lowest index on ties).
    pub fn argmax(&self) -> (TokenId, f64) {
        let mut best = 0usize;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        (best as TokenId, self.probs[best])
    }
}

/// Contrast strength and gating knobs shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastParams {
    /// Weight on the expert logits.
    pub alpha: f64,
    /// Weight on the amateur logits.
    pub beta: f64,
    /// Plausibility cutoff as a fraction of the expert's maximum probability.
    pub gamma_apc: f64,
    /// Entropy gate threshold in nats.
    pub tau_entropy: f64,
}

impl Default for ContrastParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 1.0,
            gamma_apc: 0.1,
            tau_entropy: 1.0,
        }
    }
}

impl ContrastParams {
    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |reason: String| Err(KernelError::InvalidParams { reason });
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return bad(format!("alpha must be finite and > 0, got {}", self.alpha));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !self.gamma_apc.is_finite() || !(0.0..=1.0).contains(&self.gamma_apc) {
            return bad(format!("gamma_apc must lie in [0, 1], got {}", self.gamma_apc));
        }
        if !self.tau_entropy.is_finite() || self.tau_entropy < 0.0 {
            return bad(format!(
                "tau_entropy must be finite and >= 0, got {}",
                self.tau_entropy
            ));
        }
        Ok(())
    }
}

/// Combines expert and amateur logits as `alpha * expert - beta * amateur`.
///
/// Masked (`-inf`) expert entries stay masked regardless of the amateur.
pub fn combine_logits(
    expert: &LogitVector,
    amateur: &LogitVector,
    params: &ContrastParams,
) -> Result<LogitVector, KernelError> {
    if expert.len() != amateur.len() {
        return Err(KernelError::DimensionMismatch {
            left: expert.len(),
            right: amateur.len(),
        });
    }
    params.validate()?;
    let mut out = Vec::with_capacity(expert.len());
    for (i, (&z, &zh)) in expert.values().iter().zip(amateur.values()).enumerate() {
        if z == f64::NEG_INFINITY {
            out.push(f64::NEG_INFINITY);
        } else if !zh.is_finite() {
            return Err(KernelError::NonFiniteAmateur { token: i as TokenId });
        } else {
            out.push(params.alpha * z - params.beta * zh);
        }
    }
    LogitVector::new(out)
}

/// Numerically stable softmax; masked entries map to probability zero.
pub fn softmax(logits: &LogitVector) -> ProbDist {
    let max = logits
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite());
    let exps: Vec<f64> = logits
        .values()
        .iter()
        .map(|&v| if v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() })
        .collect();
    let sum: f64 = exps.iter().sum();
    ProbDist {
        probs: exps.into_iter().map(|e| e / sum).collect(),
    }
}

/// Shannon entropy in nats, with `0 * ln 0 := 0`.
pub fn entropy(dist: &ProbDist) -> f64 {
    let mut h = 0.0;
    for &p in dist.probs() {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    // Tiny negative drift can appear when entries slightly exceed 1.
    if h < 0.0 && h > -1e-9 {
        return 0.0;
    }
    h
}

fn kl_to_mid(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi >= PROB_FLOOR {
            let m = 0.5 * (pi + qi);
            acc += pi * (pi / m).ln();
        }
    }
    acc
}

/// Jensen-Shannon divergence in nats; symmetric and bounded by `ln 2`.
pub fn jsd(p: &ProbDist, q: &ProbDist) -> Result<f64, KernelError> {
    if p.len() != q.len() {
        return Err(KernelError::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let d = 0.5 * kl_to_mid(p.probs(), q.probs()) + 0.5 * kl_to_mid(q.probs(), p.probs());
    Ok(if d < 0.0 && d > -1e-12 { 0.0 } else { d })
}

/// Masks tokens whose expert probability falls below `gamma * max(expert)`.
///
/// The expert-argmax token always survives, so the result stays selectable.
pub fn apc_mask(
    combined: &LogitVector,
    expert_probs: &ProbDist,
    gamma: f64,
) -> Result<LogitVector, KernelError> {
    if combined.len() != expert_probs.len() {
        return Err(KernelError::DimensionMismatch {
            left: combined.len(),
            right: expert_probs.len(),
        });
    }
    if !gamma.is_finite() || !(0.0..=1.0).contains(&gamma) {
        return Err(KernelError::InvalidParams {
            reason: format!("apc gamma must lie in [0, 1], got {gamma}"),
        });
    }
    let (_, max_p) = expert_probs.argmax();
    let cutoff = gamma * max_p;
    let out = combined
        .values()
        .iter()
        .zip(expert_probs.probs())
        .map(|(&c, &p)| if p < cutoff { f64::NEG_INFINITY } else { c })
        .collect();
    LogitVector::new(out)
}

/// Deterministic argmax: ties break toward the lowest token id.
pub fn greedy_select(logits: &LogitVector) -> TokenId {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in logits.values().iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best as TokenId
}
