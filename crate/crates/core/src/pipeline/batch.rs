use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{TokenId, Trace, Vocabulary};

/// K equal-length rows plus an attention mask (`true` = attend).
///
/// Masked positions always hold the pad id, and every row attends to at least
/// one position. Stripping the masked positions of row k gives back the
/// logical context of stream k.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedBatch {
    rows: Vec<Vec<TokenId>>,
    mask: Vec<Vec<bool>>,
}

impl PaddedBatch {
    pub fn new(rows: Vec<Vec<TokenId>>, mask: Vec<Vec<bool>>, pad_id: TokenId) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Batch("no rows".into()));
        }
        if mask.len() != rows.len() {
            return Err(Error::Batch(format!("{} rows but {} mask rows", rows.len(), mask.len())));
        }
        let width = rows[0].len();
        for (k, (row, m)) in rows.iter().zip(&mask).enumerate() {
            if row.len() != width || m.len() != width {
                return Err(Error::Batch(format!("row {k} does not have width {width}")));
            }
            if let Some(j) = row.iter().zip(m).position(|(&t, &attend)| !attend && t != pad_id) {
                return Err(Error::Batch(format!("row {k} masks position {j}, which is not a pad")));
            }
            if !m.iter().any(|&a| a) {
                return Err(Error::Batch(format!("row {k} is entirely padding")));
            }
        }
        Ok(Self { rows, mask })
    }

    /// Left-pads `contexts` to a common width.
    pub fn left_padded(contexts: &[Vec<TokenId>], pad_id: TokenId) -> Result<Self> {
        let streams: Vec<Vec<(TokenId, bool)>> =
            contexts.iter().map(|c| c.iter().map(|&t| (t, true)).collect()).collect();
        Self::from_streams(&streams, pad_id)
    }

    /// Left-pads streams of (token, attend) pairs to a common width.
    pub(crate) fn from_streams(streams: &[Vec<(TokenId, bool)>], pad_id: TokenId) -> Result<Self> {
        let width = streams.iter().map(Vec::len).max().unwrap_or(0);
        let mut rows = Vec::with_capacity(streams.len());
        let mut mask = Vec::with_capacity(streams.len());
        for s in streams {
            let pads = width - s.len();
            let mut row = vec![pad_id; pads];
            let mut m = vec![false; pads];
            row.extend(s.iter().map(|&(t, _)| t));
            m.extend(s.iter().map(|&(_, a)| a));
            rows.push(row);
            mask.push(m);
        }
        Self::new(rows, mask, pad_id)
    }

    pub fn rows(&self) -> &[Vec<TokenId>] {
        &self.rows
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }

    /// Number of leading pad positions in each row.
    pub fn leading_pads(&self) -> Vec<usize> {
        self.mask.iter().map(|m| m.iter().take_while(|&&a| !a).count()).collect()
    }

    /// Rows with masked positions removed.
    pub fn logical_contexts(&self) -> Vec<Vec<TokenId>> {
        self.rows
            .iter()
            .zip(&self.mask)
            .map(|(row, m)| row.iter().zip(m).filter(|(_, &a)| a).map(|(&t, _)| t).collect())
            .collect()
    }

    /// Appends one attended token to every row.
    pub fn push_shared(&mut self, token: TokenId) {
        for (row, m) in self.rows.iter_mut().zip(&mut self.mask) {
            row.push(token);
            m.push(true);
        }
    }
}

/// Left-pads prompt ‖ reasoning of every selected trace to one width.
pub fn align_contexts(traces: &[Trace], vocab: &Vocabulary) -> Result<PaddedBatch> {
    if traces.is_empty() {
        return Err(Error::Empty("trace list"));
    }
    if let Some(i) = traces.iter().position(|t| !t.is_ready()) {
        return Err(Error::Batch(format!("trace {i} is still thinking")));
    }
    let contexts: Vec<Vec<TokenId>> = traces.iter().map(Trace::context).collect();
    PaddedBatch::left_padded(&contexts, vocab.pad_id())
}
