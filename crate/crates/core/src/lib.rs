//! Ensemble decoding over independent reasoning traces.
//!
//! K traces are sampled from one prompt until each emits the end-of-thinking
//! delimiter. A single answer is then decoded by feeding every trace's context
//! to the model at each step, averaging the K next-token logit vectors and
//! sampling from the mean. The answer token is appended to every context.
//!
//! ```
//! use logit_ensemble::backend::HashBackend;
//! use logit_ensemble::pipeline::{Decoder, PipelineKind};
//! use logit_ensemble::{SamplingPolicy, StrategyConfig, Vocabulary};
//!
//! let vocab = Vocabulary::new(32, 1, 0, vec![2]).unwrap();
//! let backend = HashBackend::for_vocabulary(&vocab, 7, 4, 12).unwrap();
//! let strategy = StrategyConfig::direct_merge(4, 24, 8);
//! let decoder = Decoder::new(&backend, vocab, strategy, SamplingPolicy::default()).unwrap();
//! let record = decoder.run(&[5, 6, 7], PipelineKind::TwoStage).unwrap();
//! assert!(record.valid);
//! assert_eq!(record.selected, vec![0, 1, 2, 3]);
//! ```

pub mod backend;
mod error;
pub mod eval;
pub mod logits;
pub mod mix;
pub mod pipeline;
pub mod sampling;
pub mod scheduler;
mod types;

pub use error::{Error, Result};
pub use logits::{merge_logits, merge_probs, softmax, LogitVector, ProbVector};
pub use types::{
    EnsembleSession, Phase, SamplingPolicy, StopReason, StopRule, StrategyConfig, StrategyKind, TokenId, Trace,
    Vocabulary, MAX_VOCAB_SIZE,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/merging.md")]
    mod merging {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/pipelines.md")]
    mod pipelines {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
