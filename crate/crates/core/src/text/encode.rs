use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::{SegmentedExample, Vocabulary, PAD};
use crate::error::{Error, Result};

/// Segment embedding rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum SegmentId {
    Before = 0,
    AltLex = 1,
    After = 2,
    Pad = 3,
}

pub const SEGMENT_KINDS: usize = 4;

/// One encoded sentence; rows beyond the real tokens are PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub label: Option<u8>,
    pub no_altlex: bool,
}

impl EncodedExample {
    /// Number of rows including padding.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (unmasked) tokens.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Row range of one segment among the real tokens; may be empty.
    pub fn segment_rows(&self, seg: SegmentId) -> Range<usize> {
        let want = seg as usize;
        let rows = (0..self.len()).filter(|&i| self.mask[i] && self.segment_ids[i] == want);
        let (mut start, mut end) = (None, 0);
        for i in rows {
            start.get_or_insert(i);
            end = i + 1;
        }
        match start {
            Some(s) => s..end,
            None => {
                let at = match seg {
                    SegmentId::Before => 0,
                    _ => self.real_len(),
                };
                at..at
            }
        }
    }

    /// Appends `extra` PAD rows.
    pub fn with_padding(mut self, extra: usize) -> Self {
        let n = self.ids.len();
        self.ids.extend(core::iter::repeat_n(PAD, extra));
        self.positions.extend(n..n + extra);
        self.segment_ids.extend(core::iter::repeat_n(SegmentId::Pad as usize, extra));
        self.mask.extend(core::iter::repeat_n(false, extra));
        self
    }
}

/// Encodes one example without padding, keeping at most `max_len` tokens.
/// Tokens are dropped from the right unless that would cut into L, in
/// which case the window slides right just far enough to keep L.
pub fn encode_example(ex: &SegmentedExample, vocab: &Vocabulary, max_len: usize) -> Result<EncodedExample> {
    let s = ex.segments;
    let n = ex.tokens.len();
    if n == 0 {
        return Err(Error::Empty("token list"));
    }
    if s.l.len() > max_len {
        return Err(Error::AltLexTooLong {
            len: s.l.len(),
            max_len,
        });
    }
    let start = s.l.end.saturating_sub(max_len);
    let end = n.min(start + max_len);
    let mut ids = Vec::with_capacity(end - start);
    let mut segment_ids = Vec::with_capacity(end - start);
    for i in start..end {
        ids.push(vocab.id(&ex.tokens[i]));
        let seg = if i < s.l.start {
            SegmentId::Before
        } else if i < s.l.end {
            SegmentId::AltLex
        } else {
            SegmentId::After
        };
        segment_ids.push(seg as usize);
    }
    let len = ids.len();
    Ok(EncodedExample {
        ids,
        positions: (0..len).collect(),
        segment_ids,
        mask: vec![true; len],
        label: ex.label,
        no_altlex: ex.no_altlex,
    })
}

/// Row-major `B×max_len` encoding of a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    pub width: usize,
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub pad_mask: Vec<bool>,
    pub labels: Vec<Option<u8>>,
    pub no_altlex: Vec<bool>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example(&self, b: usize) -> EncodedExample {
        let r = b * self.width..(b + 1) * self.width;
        EncodedExample {
            ids: self.ids[r.clone()].to_vec(),
            positions: self.positions[r.clone()].to_vec(),
            segment_ids: self.segment_ids[r.clone()].to_vec(),
            mask: self.pad_mask[r].to_vec(),
            label: self.labels[b],
            no_altlex: self.no_altlex[b],
        }
    }
}

/// Encodes and pads every example to `max_len`.
pub fn encode_batch(examples: &[SegmentedExample], vocab: &Vocabulary, max_len: usize) -> Result<EncodedBatch> {
    if examples.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut batch = EncodedBatch {
        width: max_len,
        ids: Vec::new(),
        positions: Vec::new(),
        segment_ids: Vec::new(),
        pad_mask: Vec::new(),
        labels: Vec::new(),
        no_altlex: Vec::new(),
    };
    for ex in examples {
        let e = encode_example(ex, vocab, max_len)?;
        let e = {
            let extra = max_len - e.len();
            e.with_padding(extra)
        };
        batch.ids.extend(e.ids);
        batch.positions.extend(e.positions);
        batch.segment_ids.extend(e.segment_ids);
        batch.pad_mask.extend(e.mask);
        batch.labels.push(e.label);
        batch.no_altlex.push(e.no_altlex);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{segment_with_lexicon, tokenize, AltLexLexicon};
    use alloc::string::String;

    fn example(text: &str, marker: &str) -> SegmentedExample {
        let lex = AltLexLexicon::new([marker]).unwrap();
        segment_with_lexicon(tokenize(text), None, Some(&lex), Some(1)).unwrap()
    }

    #[test]
    fn short_example_is_padded() {
        let ex = example("rain caused floods", "caused");
        let v = Vocabulary::from_corpus([&ex.tokens[..]]);
        let b = encode_batch(&[ex], &v, 5).unwrap();
        assert_eq!(b.pad_mask, [true, true, true, false, false]);
        assert_eq!(b.positions, [0, 1, 2, 3, 4]);
        assert_eq!(b.segment_ids, [0, 1, 2, 3, 3]);
        assert_eq!(&b.ids[3..], &[PAD, PAD]);
    }

    #[test]
    fn table_one_segment_ids() {
        let ex = example(
            "A moving observer thus sees the light coming from a slightly different direction \
             and consequently sees the source at a position shifted from its original position.",
            "consequently",
        );
        let v = Vocabulary::from_corpus([&ex.tokens[..]]);
        let e = encode_example(&ex, &v, 128).unwrap();
        let l = ex.segments.l.start;
        assert!(e.segment_ids[..l].iter().all(|&s| s == 0));
        assert_eq!(e.segment_ids[l], 1);
        assert!(e.segment_ids[l + 1..].iter().all(|&s| s == 2));
        assert!(l > 0 && l + 1 < e.len());
    }

    #[test]
    fn identical_examples_give_identical_rows() {
        let ex = example("storms made roads close", "made");
        let v = Vocabulary::from_corpus([&ex.tokens[..]]);
        let b = encode_batch(&[ex.clone(), ex], &v, 6).unwrap();
        assert_eq!(b.example(0), b.example(1));
    }

    #[test]
    fn truncation_never_cuts_the_marker() {
        let text: String = (0..20).map(|i| alloc::format!("w{i} ")).collect::<String>() + "because end";
        let ex = example(&text, "because");
        let v = Vocabulary::from_corpus([&ex.tokens[..]]);
        let e = encode_example(&ex, &v, 8).unwrap();
        assert_eq!(e.len(), 8);
        assert_eq!(e.segment_rows(SegmentId::AltLex), 7..8);
        let e = encode_example(&ex, &v, 30).unwrap();
        assert_eq!(e.len(), 22);
        let too_long = example("a b because of this c", "because of this");
        assert!(matches!(
            encode_example(&too_long, &v, 2),
            Err(Error::AltLexTooLong { len: 3, max_len: 2 })
        ));
    }

    #[test]
    fn empty_batch_is_error() {
        assert!(encode_batch(&[], &Vocabulary::default(), 4).is_err());
    }
}
