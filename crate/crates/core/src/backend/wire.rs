//! JSON wire protocol for remote logits servers.
//!
//! ```text
//! GET  /v1/meta   -> {"vocab_size", "eos_id", "pad_id", "supports_mask", "max_context", "model"}
//! POST /v1/logits {"contexts": [[id..]..], "mask"?: [[bool..]..], "top"?: n}
//!                 -> {"logits": [[x..]..]}                                    (no "top")
//!                 -> {"sparse": [{"ids": [..], "values": [..], "fill": x}..]} ("top" given)
//! errors          -> {"error": {"kind": "bad_request"|"overloaded"|"internal", "detail": ".."}}
//!                    with HTTP status 400 / 503 / 500
//! ```
//!
//! Logit values travel as the shortest decimal that round-trips the 32-bit
//! value. [`handle_logits`] implements the server side over any [`Backend`],
//! which is how the test servers and the toy mode of a bridge answer.

use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, BackendError};
use crate::logits::LogitVector;
use crate::pipeline::PaddedBatch;
use crate::types::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub vocab_size: u32,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
    pub supports_mask: bool,
    pub max_context: usize,
    pub model: String,
}

impl MetaResponse {
    pub fn from_descriptor(d: &BackendDescriptor, model: impl Into<String>) -> Self {
        Self {
            vocab_size: d.vocab_size,
            eos_id: d.eos_id,
            pad_id: d.pad_id,
            supports_mask: d.supports_mask,
            max_context: d.max_context,
            model: model.into(),
        }
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            vocab_size: self.vocab_size,
            eos_id: self.eos_id,
            pad_id: self.pad_id,
            supports_mask: self.supports_mask,
            max_context: self.max_context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub contexts: Vec<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub ids: Vec<TokenId>,
    pub values: Vec<f32>,
    pub fill: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogitsResponse {
    Dense { logits: Vec<Vec<f32>> },
    Sparse { sparse: Vec<SparseRow> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    BadRequest,
    Overloaded,
    Internal,
}

impl ErrorKind {
    pub fn status(self) -> u16 {
        match self {
            ErrorKind::BadRequest => 400,
            ErrorKind::Overloaded => 503,
            ErrorKind::Internal => 500,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::BadRequest => "bad_request",
            ErrorKind::Overloaded => "overloaded",
            ErrorKind::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

impl ErrorEnvelope {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self { error: ErrorBody { kind, detail: detail.into() } }
    }
}

/// Keeps the `top` largest entries of a row (lower id first on ties); the
/// fill value is the smallest retained value minus 10.
pub fn sparsify(row: &[f32], top: usize) -> SparseRow {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(top.max(1));
    order.sort_unstable();
    let values: Vec<f32> = order.iter().map(|&i| row[i]).collect();
    let fill = values.iter().copied().fold(f32::INFINITY, f32::min) - 10.0;
    SparseRow { ids: order.into_iter().map(|i| i as TokenId).collect(), values, fill }
}

/// Rebuilds dense rows from a response, checking its shape.
pub fn inflate(response: LogitsResponse, rows: usize, vocab_size: u32) -> Result<Vec<LogitVector>, BackendError> {
    let v = vocab_size as usize;
    let dense: Vec<Vec<f32>> = match response {
        LogitsResponse::Dense { logits } => logits,
        LogitsResponse::Sparse { sparse } => sparse
            .into_iter()
            .map(|row| {
                if row.ids.len() != row.values.len() {
                    return Err(BackendError::Protocol("sparse row ids/values length differ".into()));
                }
                let mut dense = vec![row.fill; v];
                for (&id, &x) in row.ids.iter().zip(&row.values) {
                    let slot = dense
                        .get_mut(id as usize)
                        .ok_or_else(|| BackendError::Protocol(format!("sparse id {id} outside vocabulary")))?;
                    *slot = x;
                }
                Ok(dense)
            })
            .collect::<Result<_, _>>()?,
    };
    if dense.len() != rows {
        return Err(BackendError::Protocol(format!("expected {rows} rows, got {}", dense.len())));
    }
    dense
        .into_iter()
        .map(|row| {
            if row.len() != v {
                return Err(BackendError::Protocol(format!("row has {} entries, vocab_size is {v}", row.len())));
            }
            LogitVector::new(row).map_err(|e| BackendError::Protocol(e.to_string()))
        })
        .collect()
}

/// Server side of `POST /v1/logits` over an in-process backend.
pub fn handle_logits<B: Backend + ?Sized>(backend: &B, request: LogitsRequest) -> Result<LogitsResponse, ErrorEnvelope> {
    let bad = |e: BackendError| {
        let kind = if e.is_retryable() { ErrorKind::Overloaded } else { ErrorKind::BadRequest };
        ErrorEnvelope::new(kind, e.to_string())
    };
    let rows = match request.mask {
        None => backend.next_logits(&request.contexts).map_err(bad)?,
        Some(mask) => {
            let pad = backend.descriptor().pad_id;
            let batch = PaddedBatch::new(request.contexts, mask, pad).map_err(|e| bad(BackendError::InvalidBatch(e.to_string())))?;
            backend.next_logits_masked(&batch).map_err(bad)?
        }
    };
    Ok(match request.top {
        None => LogitsResponse::Dense { logits: rows.into_iter().map(LogitVector::into_values).collect() },
        Some(top) => LogitsResponse::Sparse { sparse: rows.iter().map(|r| sparsify(r.values(), top)).collect() },
    })
}
