//! Byte-level tokenizer.
//!
//! The vocabulary is fixed: five special tokens followed by the 256 raw byte
//! values shifted by +5. Every Unicode string — Arabic, emoji, anything —
//! encodes through its UTF-8 bytes, so no input ever maps to [UNK] and the
//! same vocabulary serves both languages.

use crate::error::{Error, Result};
use ndarray::Array2;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const MASK: usize = 4;
const BYTE_OFFSET: usize = 5;

/// The fixed byte-level vocabulary.
pub struct Vocab;

impl Vocab {
    pub const SIZE: usize = 261;

    pub fn byte_id(b: u8) -> usize {
        b as usize + BYTE_OFFSET
    }

    /// Inverse of [`Vocab::byte_id`]; `None` for special ids.
    pub fn id_byte(id: usize) -> Option<u8> {
        if (BYTE_OFFSET..Self::SIZE).contains(&id) {
            Some((id - BYTE_OFFSET) as u8)
        } else {
            None
        }
    }

    pub fn is_special(id: usize) -> bool {
        id < BYTE_OFFSET
    }
}

/// One encoded sequence: `ids[0]` is always [CLS], segment ids are 0 over
/// the first sentence span (including its [SEP]) and 1 after, and the
/// attention mask is 1 exactly on non-[PAD] positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encode a single normalized text as `[CLS] bytes [SEP]`, right-truncating
/// the payload so the total length never exceeds `max_seq_len` and [SEP]
/// stays last.
pub fn encode(text: &str, max_seq_len: usize) -> Result<EncodedInput> {
    if max_seq_len < 2 {
        return Err(Error::Config(format!(
            "max_seq_len must be at least 2, got {max_seq_len}"
        )));
    }
    let bytes = text.as_bytes();
    let keep = bytes.len().min(max_seq_len - 2);
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(CLS);
    ids.extend(bytes[..keep].iter().map(|&b| Vocab::byte_id(b)));
    ids.push(SEP);
    let n = ids.len();
    Ok(EncodedInput {
        ids,
        segment_ids: vec![0; n],
        attention_mask: vec![1; n],
    })
}

/// Encode a sentence pair as `[CLS] a [SEP] b [SEP]` with segment ids 0
/// through the first [SEP] and 1 after. When the pair does not fit, bytes
/// are dropped from the end of whichever span is currently longer until it
/// does.
pub fn encode_pair(text_a: &str, text_b: &str, max_seq_len: usize) -> Result<EncodedInput> {
    if max_seq_len < 4 {
        return Err(Error::Config(format!(
            "max_seq_len must be at least 4 for pairs, got {max_seq_len}"
        )));
    }
    let bytes_a = text_a.as_bytes();
    let bytes_b = text_b.as_bytes();
    let budget = max_seq_len - 3;
    let mut len_a = bytes_a.len();
    let mut len_b = bytes_b.len();
    while len_a + len_b > budget {
        if len_a > len_b {
            len_a -= 1;
        } else {
            len_b -= 1;
        }
    }
    let mut ids = Vec::with_capacity(len_a + len_b + 3);
    let mut segment_ids = Vec::with_capacity(len_a + len_b + 3);
    ids.push(CLS);
    ids.extend(bytes_a[..len_a].iter().map(|&b| Vocab::byte_id(b)));
    ids.push(SEP);
    segment_ids.resize(ids.len(), 0);
    ids.extend(bytes_b[..len_b].iter().map(|&b| Vocab::byte_id(b)));
    ids.push(SEP);
    segment_ids.resize(ids.len(), 1);
    let n = ids.len();
    Ok(EncodedInput {
        ids,
        segment_ids,
        attention_mask: vec![1; n],
    })
}

/// A right-padded batch ready for the encoder. `mask` is 1.0 on real tokens
/// and 0.0 on padding.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Array2<usize>,
    pub segments: Array2<usize>,
    pub mask: Array2<f64>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.ids.nrows()
    }

    pub fn width(&self) -> usize {
        self.ids.ncols()
    }
}

/// Right-pad a non-empty list of encoded inputs to the batch maximum.
pub fn pad_batch(inputs: &[EncodedInput]) -> Result<Batch> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let width = inputs.iter().map(EncodedInput::len).max().unwrap_or(0);
    let rows = inputs.len();
    let mut ids = Array2::from_elem((rows, width), PAD);
    let mut segments = Array2::zeros((rows, width));
    let mut mask = Array2::zeros((rows, width));
    for (r, input) in inputs.iter().enumerate() {
        for (c, &id) in input.ids.iter().enumerate() {
            ids[(r, c)] = id;
            segments[(r, c)] = input.segment_ids[c];
            mask[(r, c)] = f64::from(input.attention_mask[c]);
        }
    }
    Ok(Batch {
        ids,
        segments,
        mask,
        lengths: inputs.iter().map(EncodedInput::len).collect(),
    })
}

/// Strip special tokens, undo the +5 shift, and decode the bytes as UTF-8.
pub fn decode(ids: &[usize]) -> Result<String> {
    let mut bytes = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= Vocab::SIZE {
            return Err(Error::Decode(format!("id {id} outside vocabulary")));
        }
        if let Some(b) = Vocab::id_byte(id) {
            bytes.push(b);
        }
    }
    String::from_utf8(bytes).map_err(|e| Error::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_specials_only() {
        assert_eq!(encode("", 16).unwrap().ids, vec![CLS, SEP]);
    }

    #[test]
    fn single_ascii_byte() {
        // 'A' = byte 65, shifted by +5.
        assert_eq!(encode("A", 16).unwrap().ids, vec![1, 70, 2]);
    }

    #[test]
    fn arabic_bytes_shift() {
        // "لا" is UTF-8 D9 84 D8 A7.
        assert_eq!(
            encode("لا", 16).unwrap().ids,
            vec![1, 222, 137, 221, 172, 2]
        );
    }

    #[test]
    fn truncation_keeps_sep_last() {
        let enc = encode("abcdef", 5).unwrap();
        assert_eq!(enc.len(), 5);
        assert_eq!(enc.ids[0], CLS);
        assert_eq!(*enc.ids.last().unwrap(), SEP);
        assert_eq!(enc.ids[1], Vocab::byte_id(b'a'));
    }

    #[test]
    fn length_formula() {
        for text in ["", "a", "hello", "тест 🙂"] {
            for max in [2usize, 4, 8, 64] {
                let enc = encode(text, max).unwrap();
                assert_eq!(enc.len(), (text.len() + 2).min(max));
            }
        }
    }

    #[test]
    fn tiny_max_seq_len_rejected() {
        assert!(matches!(encode("x", 1), Err(Error::Config(_))));
        assert!(matches!(encode_pair("x", "y", 3), Err(Error::Config(_))));
    }

    #[test]
    fn empty_pair() {
        let enc = encode_pair("", "", 8).unwrap();
        assert_eq!(enc.ids, vec![CLS, SEP, SEP]);
        assert_eq!(enc.segment_ids, vec![0, 0, 1]);
    }

    #[test]
    fn simple_pair() {
        let enc = encode_pair("A", "B", 8).unwrap();
        assert_eq!(enc.ids, vec![1, 70, 2, 71, 2]);
        assert_eq!(enc.segment_ids, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn pair_truncation_takes_from_longer_span() {
        // a has 4 bytes, b has 1; budget is 3 payload bytes, so a shrinks
        // to 2 and b survives.
        let enc = encode_pair("AAAA", "B", 6).unwrap();
        assert_eq!(enc.ids, vec![1, 70, 70, 2, 71, 2]);
        assert_eq!(enc.segment_ids, vec![0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn pad_batch_masks_padding() {
        let a = encode("", 16).unwrap(); // len 2
        let b = encode("abc", 16).unwrap(); // len 5
        let batch = pad_batch(&[a, b]).unwrap();
        assert_eq!(batch.width(), 5);
        assert_eq!(batch.mask.row(0).to_vec(), vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(batch.ids[(0, 4)], PAD);
        assert_eq!(batch.lengths, vec![2, 5]);
    }

    #[test]
    fn pad_batch_uniform_lengths_add_no_padding() {
        let xs: Vec<_> = (0..3).map(|_| encode("a", 16).unwrap()).collect();
        let batch = pad_batch(&xs).unwrap();
        assert_eq!(batch.width(), 3);
        assert!(batch.mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(matches!(pad_batch(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn decode_strips_specials() {
        assert_eq!(decode(&[1, 70, 2]).unwrap(), "A");
        assert_eq!(decode(&[1, 2]).unwrap(), "");
    }

    #[test]
    fn decode_rejects_broken_utf8() {
        // 0xFF alone is never valid UTF-8.
        assert!(matches!(
            decode(&[1, Vocab::byte_id(0xFF), 2]),
            Err(Error::Decode(_))
        ));
        assert!(matches!(decode(&[999]), Err(Error::Decode(_))));
    }

    #[test]
    fn round_trip_multilingual() {
        for text in ["fun 🙂 day", "لا أريد", "mixed لا text 🎉", "tabs kept\u{00a0}nbsp"] {
            let enc = encode(text, 128).unwrap();
            assert_eq!(decode(&enc.ids).unwrap(), text);
        }
    }

    #[test]
    fn byte_fallback_never_emits_unk() {
        for text in ["ascii", "علَم", "🙃🙂🤷", "\u{2028}\u{00a0}"] {
            let enc = encode(text, 512).unwrap();
            assert!(enc.ids.iter().all(|&id| id != UNK));
        }
    }
}
