use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use super::{AltLexLexicon, PAD_TOKEN};
use crate::error::{Error, Result};

/// Half-open token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

impl From<Range<usize>> for Span {
    fn from(r: Range<usize>) -> Self {
        Span {
            start: r.start,
            end: r.end,
        }
    }
}

/// BL / L / AL ranges partitioning `[0, n)` in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub bl: Span,
    pub l: Span,
    pub al: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedExample {
    pub tokens: Vec<String>,
    pub segments: Segmentation,
    pub label: Option<u8>,
    /// Set when no marker was found and a synthetic PAD token stands in
    /// for L.
    pub no_altlex: bool,
}

/// Splits `[0, n)` around the marker range.
pub fn segment(n: usize, altlex: Range<usize>) -> Result<Segmentation> {
    if altlex.start > altlex.end || altlex.end > n {
        return Err(Error::OutOfRange {
            what: "altlex span",
            index: altlex.end.max(altlex.start),
            len: n,
        });
    }
    Ok(Segmentation {
        bl: (0..altlex.start).into(),
        l: altlex.clone().into(),
        al: (altlex.end..n).into(),
    })
}

/// Segments with an explicit span when given, otherwise with the lexicon.
/// Without any match, a PAD token is appended as L and the example is
/// flagged.
pub fn segment_with_lexicon(
    mut tokens: Vec<String>,
    span: Option<Range<usize>>,
    lexicon: Option<&AltLexLexicon>,
    label: Option<u8>,
) -> Result<SegmentedExample> {
    let found = span.or_else(|| lexicon.and_then(|lex| lex.find(&tokens)));
    let (segments, no_altlex) = match found {
        Some(r) => (segment(tokens.len(), r)?, false),
        None => {
            let n = tokens.len();
            tokens.push(PAD_TOKEN.into());
            (segment(n + 1, n..n + 1)?, true)
        }
    };
    Ok(SegmentedExample {
        tokens,
        segments,
        label,
        no_altlex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn lex(p: &[&str]) -> AltLexLexicon {
        AltLexLexicon::new(p.iter().copied()).unwrap()
    }

    #[test]
    fn owing_to_case() {
        let t = tokenize(
            "The transfer was poorly received by some fans owing to a number of technical \
             and format changes that were viewed as detrimental to the show's presentation.",
        );
        let ex = segment_with_lexicon(t, None, Some(&lex(&["owing to"])), Some(1)).unwrap();
        let s = ex.segments;
        assert_eq!(ex.tokens[s.bl.end - 1], "fans");
        assert_eq!(ex.tokens[s.al.start], "a");
        assert_eq!(s.l.len(), 2);
    }

    #[test]
    fn marker_first_gives_empty_bl() {
        let s = segment(5, 0..1).unwrap();
        assert!(s.bl.is_empty());
        assert_eq!(s.al, Span { start: 1, end: 5 });
    }

    #[test]
    fn out_of_bounds() {
        assert!(segment(3, 2..4).is_err());
    }

    #[test]
    fn fallback_appends_pad() {
        let t = tokenize("no marker at all");
        let ex = segment_with_lexicon(t, None, Some(&lex(&["because"])), None).unwrap();
        assert!(ex.no_altlex);
        assert_eq!(ex.tokens.len(), 5);
        assert_eq!(ex.tokens[4], PAD_TOKEN);
        assert_eq!(ex.segments.bl, Span { start: 0, end: 4 });
        assert_eq!(ex.segments.l, Span { start: 4, end: 5 });
        assert!(ex.segments.al.is_empty());
    }
}
