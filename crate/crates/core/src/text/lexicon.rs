use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use super::tokenize;
use crate::error::{Error, Result};

/// Longest allowed marker, in tokens.
pub const MAX_PHRASE_TOKENS: usize = 6;

/// Set of lowercase AltLex phrases, stored as token sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AltLexLexicon {
    phrases: BTreeSet<Vec<String>>,
    by_first: BTreeMap<String, Vec<Vec<String>>>,
}

impl AltLexLexicon {
    /// Tokenizes each phrase; duplicates collapse. Empty or overlong
    /// phrases are rejected.
    pub fn new<'a>(phrases: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut lex = Self::default();
        for p in phrases {
            let tokens = tokenize(p);
            if tokens.is_empty() {
                return Err(Error::LexiconEntry {
                    entry: p.into(),
                    reason: "empty phrase",
                });
            }
            if tokens.len() > MAX_PHRASE_TOKENS {
                return Err(Error::LexiconEntry {
                    entry: p.into(),
                    reason: "more than 6 tokens",
                });
            }
            lex.phrases.insert(tokens);
        }
        for p in &lex.phrases {
            lex.by_first.entry(p[0].clone()).or_default().push(p.clone());
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &[String]> {
        self.phrases.iter().map(Vec::as_slice)
    }

    /// Leftmost match; at that start the longest phrase wins.
    pub fn find(&self, tokens: &[String]) -> Option<Range<usize>> {
        for start in 0..tokens.len() {
            let Some(candidates) = self.by_first.get(&tokens[start]) else {
                continue;
            };
            let best = candidates
                .iter()
                .filter(|p| tokens[start..].starts_with(p))
                .map(Vec::len)
                .max();
            if let Some(len) = best {
                return Some(start..start + len);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn longest_at_same_start() {
        let lex = AltLexLexicon::new(["due", "due to"]).unwrap();
        assert_eq!(lex.find(&toks("delays due to rain")), Some(1..3));
    }

    #[test]
    fn earliest_start_wins() {
        let lex = AltLexLexicon::new(["so that", "because"]).unwrap();
        assert_eq!(lex.find(&toks("because it rained so that x")), Some(0..1));
    }

    #[test]
    fn table_one_sentence() {
        let lex = AltLexLexicon::new(["consequently"]).unwrap();
        let t = toks(
            "A moving observer thus sees the light coming from a slightly different direction \
             and consequently sees the source at a position shifted from its original position.",
        );
        let r = lex.find(&t).unwrap();
        assert_eq!(t[r].join(" "), "consequently");
    }

    #[test]
    fn no_match() {
        let lex = AltLexLexicon::new(["because"]).unwrap();
        assert_eq!(lex.find(&toks("nothing here")), None);
    }

    #[test]
    fn rejects_bad_entries_and_dedupes() {
        assert!(AltLexLexicon::new([""]).is_err());
        assert!(AltLexLexicon::new(["a b c d e f g"]).is_err());
        assert_eq!(AltLexLexicon::new(["Owing to", "owing to"]).unwrap().len(), 1);
    }
}
