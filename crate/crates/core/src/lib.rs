//! Contrastive decoding engine for audio language models.
//!
//! The crate layers four concerns: a pure logit-space kernel ([`logits`]),
//! waveform handling ([`audio`]), pluggable model backends ([`backend`]),
//! and the per-method decode loop ([`strategies`]); on top sit response
//! judging ([`judge`]) and transition-matrix reporting ([`analysis`]).

pub mod analysis;
pub mod audio;
pub mod backend;
pub mod judge;
pub mod logits;
pub mod strategies;

pub use analysis::{
    accuracy_table, build_matrix, errors_only_view, matrix_from_csv, matrix_to_csv,
    matrix_to_svg, AccuracyCell, AccuracyRow, AccuracyTable, AnalysisError, JudgedSample,
    MatrixView, TransitionMatrix,
};
pub use audio::{distort, load_wav, measure_snr_db, save_wav, AudioError, AudioInput, AudioTag};
pub use judge::{
    categorize, judge_batch, judge_correctness, judge_sample, CacheRecord, JudgeClient,
    JudgeError, JudgeRequest, ResponseState, Verdict, VerdictCache, DEFAULT_CONCURRENCY,
    DEFAULT_JUDGE_MODEL,
};
pub use backend::{
    make_synthetic_dataset, AnswerStyle, BackendError, Capabilities, DecodeContext, ForwardOutput,
    ModelBackend, ScriptEntry, ScriptKey, ScriptedBackend, ScriptedBackendBuilder,
    SyntheticBackend, SyntheticItem, EOS_TOKEN, NEG_SENTINEL,
};
pub use logits::{
    apc_mask, combine_logits, entropy, greedy_select, jsd, softmax, ContrastParams, KernelError,
    LogitVector, ProbDist, TokenId,
};
pub use strategies::{
    amateur_aad, amateur_acd, amateur_amti, amateur_dola, candidate_layers, decode, DecodeError,
    GateDecision, Method, StepTrace, StrategyConfig, StrategyError,
};
