//! Logits providers.
//!
//! A [`Backend`] maps logical token contexts to next-token logits. It must be
//! a pure function of each context: the same context always yields the same
//! vector and batching never changes a row. Padding is an engine concern that
//! reaches backends only through [`Backend::next_logits_masked`].

mod http;
mod toy;
pub mod wire;

pub use http::{HttpBackend, HttpOptions};
pub use toy::{toy_hash_logits, toy_scripted_logits, HashBackend, HashParams, Script, ScriptRule, ScriptedBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logits::LogitVector;
use crate::pipeline::PaddedBatch;
use crate::types::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub vocab_size: u32,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
    pub supports_mask: bool,
    pub max_context: usize,
}

impl BackendDescriptor {
    /// Fails when the session vocabulary disagrees with what the backend serves.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<(), BackendError> {
        if self.vocab_size != vocab.size() || self.eos_id != vocab.eos_id() || self.pad_id != vocab.pad_id() {
            return Err(BackendError::VocabMismatch(format!(
                "backend serves (size {}, eos {}, pad {}), session expects (size {}, eos {}, pad {})",
                self.vocab_size,
                self.eos_id,
                self.pad_id,
                vocab.size(),
                vocab.eos_id(),
                vocab.pad_id()
            )));
        }
        Ok(())
    }

    /// Contract checks every backend applies before computing anything.
    pub fn check_contexts(&self, contexts: &[Vec<TokenId>]) -> Result<(), BackendError> {
        for (index, ctx) in contexts.iter().enumerate() {
            if ctx.len() > self.max_context {
                return Err(BackendError::ContextTooLong { index, len: ctx.len(), max: self.max_context });
            }
            if let Some(&token) = ctx.iter().find(|&&t| t >= self.vocab_size) {
                return Err(BackendError::UnknownToken { index, token });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("context {index} has {len} tokens, backend maximum is {max}")]
    ContextTooLong { index: usize, len: usize, max: usize },

    #[error("context {index} contains unknown token id {token}")]
    UnknownToken { index: usize, token: TokenId },

    #[error("backend does not support masked batches")]
    MaskUnsupported,

    #[error("invalid padded batch: {0}")]
    InvalidBatch(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("malformed script: {0}")]
    Script(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("server overloaded: {0}")]
    Overloaded(String),

    #[error("server error ({kind}): {detail}")]
    Remote { kind: String, detail: String },

    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport-class failures may be retried; contract violations may not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Overloaded(_))
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// One logit vector per context, in order.
    fn next_logits(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<LogitVector>, BackendError>;

    /// Logits for a padded batch. Must equal [`Backend::next_logits`] on the
    /// pad-stripped rows.
    fn next_logits_masked(&self, batch: &PaddedBatch) -> Result<Vec<LogitVector>, BackendError> {
        if !self.descriptor().supports_mask {
            return Err(BackendError::MaskUnsupported);
        }
        self.next_logits(&batch.logical_contexts())
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn next_logits(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<LogitVector>, BackendError> {
        (**self).next_logits(contexts)
    }

    fn next_logits_masked(&self, batch: &PaddedBatch) -> Result<Vec<LogitVector>, BackendError> {
        (**self).next_logits_masked(batch)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn next_logits(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<LogitVector>, BackendError> {
        (**self).next_logits(contexts)
    }

    fn next_logits_masked(&self, batch: &PaddedBatch) -> Result<Vec<LogitVector>, BackendError> {
        (**self).next_logits_masked(batch)
    }
}
