//! Wire format for circulating submodels.
//!
//! A message carries exactly one submodel's weights plus routing state:
//!
//! ```text
//! [u8 kind] [u32 LE submodel_index] [u32 LE counter]
//! [u32 LE visit bitmap word count] [u64 LE words ...]
//! [u32 LE payload length] [f64 LE payload ...]
//! ```
//!
//! Nothing else ever crosses the wire: no data points, no codes. The payload
//! length is pinned to the submodel's weight count (input dim + 1 for an
//! encoder bit, code bits + 1 for a decoder row), so a message's size is a
//! function of the model shape alone, never of the shard.

use crate::model::SubmodelKind;

use super::RuntimeError;

const KIND_ENCODER: u8 = 0;
const KIND_DECODER: u8 = 1;

/// Set of machine ids, stored as a bitmap with the wire's word layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitSet {
    words: Vec<u64>,
}

impl VisitSet {
    pub fn empty() -> Self {
        VisitSet { words: Vec::new() }
    }

    pub fn from_ids(ids: &[usize]) -> Self {
        let mut s = VisitSet::empty();
        for &id in ids {
            s.insert(id);
        }
        s
    }

    pub fn insert(&mut self, id: usize) {
        let w = id / 64;
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << (id % 64);
    }

    pub fn remove(&mut self, id: usize) {
        let w = id / 64;
        if w < self.words.len() {
            self.words[w] &= !(1 << (id % 64));
        }
    }

    pub fn contains(&self, id: usize) -> bool {
        let w = id / 64;
        w < self.words.len() && self.words[w] & (1 << (id % 64)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Drops every id not present in `live`.
    pub fn retain_ids(&mut self, live: &VisitSet) {
        for (i, w) in self.words.iter_mut().enumerate() {
            *w &= live.words.get(i).copied().unwrap_or(0);
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, &w) in self.words.iter().enumerate() {
            for b in 0..64 {
                if w & (1 << b) != 0 {
                    out.push(i * 64 + b);
                }
            }
        }
        out
    }
}

/// One circulating submodel: identity, routing counter, the machines still
/// to visit, and the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: SubmodelKind,
    /// Visit count while training (starts at 1). Under fault-tolerant
    /// redistribution (empty `needs`) it instead counts the remaining
    /// delivery hops.
    pub counter: u32,
    /// Machines that have not yet trained this submodel in the current pass.
    pub needs: VisitSet,
    pub payload: Vec<f64>,
}

impl Message {
    /// Bytes this message occupies on the wire.
    pub fn encoded_len(&self) -> usize {
        1 + 4 + 4 + 4 + 8 * self.needs.words.len() + 4 + 8 * self.payload.len()
    }
}

pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    let (kind, index) = match msg.kind {
        SubmodelKind::EncoderBit(b) => (KIND_ENCODER, b),
        SubmodelKind::DecoderRow(r) => (KIND_DECODER, r),
    };
    out.push(kind);
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(&msg.counter.to_le_bytes());
    out.extend_from_slice(&(msg.needs.words.len() as u32).to_le_bytes());
    for w in &msg.needs.words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(msg.payload.len() as u32).to_le_bytes());
    for v in &msg.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes and validates against the model shape: an encoder-bit payload
/// must hold exactly `d + 1` weights and a decoder-row payload `l + 1`, so a
/// conforming stream cannot smuggle shard contents.
pub fn decode_message(bytes: &[u8], l: usize, d: usize) -> Result<Message, RuntimeError> {
    let bad = |what: &str| RuntimeError::BadMessage(what.to_string());
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8], RuntimeError> {
        if *at + n > bytes.len() {
            return Err(bad("truncated message"));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    let kind_byte = take(&mut at, 1)?[0];
    let index = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    let counter = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    let kind = match kind_byte {
        KIND_ENCODER if (index as usize) < l => SubmodelKind::EncoderBit(index),
        KIND_DECODER if (index as usize) < d => SubmodelKind::DecoderRow(index),
        KIND_ENCODER | KIND_DECODER => return Err(bad("submodel index out of range")),
        _ => return Err(bad("unknown submodel kind")),
    };
    let n_words = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
    }
    let n_payload = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let expected = match kind {
        SubmodelKind::EncoderBit(_) => d + 1,
        SubmodelKind::DecoderRow(_) => l + 1,
    };
    if n_payload != expected {
        return Err(bad("payload length does not match the submodel shape"));
    }
    let mut payload = Vec::with_capacity(n_payload);
    for _ in 0..n_payload {
        payload.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Message {
        kind,
        counter,
        needs: VisitSet { words },
        payload,
    })
}
