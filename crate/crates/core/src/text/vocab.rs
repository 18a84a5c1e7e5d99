use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

/// Token ↔ id map with PAD = 0 and OOV = 1 reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::new())
    }
}

impl Vocabulary {
    /// Reserved entries followed by `tokens` in order; repeats and the
    /// reserved spellings are skipped.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            ids: BTreeMap::new(),
        };
        v.insert(PAD_TOKEN.into());
        v.insert(OOV_TOKEN.into());
        for t in tokens {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, token: String) {
        if !self.ids.contains_key(&token) {
            self.ids.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    /// Corpus tokens that have a pretrained vector get their own id, in
    /// order of first appearance; every other token maps to OOV.
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a [String]>,
        embedding_vocab: &BTreeSet<String>,
    ) -> Self {
        let known = corpus
            .into_iter()
            .flatten()
            .filter(|t| embedding_vocab.contains(*t))
            .cloned();
        Self::from_tokens(known.collect::<Vec<_>>())
    }

    /// Every corpus token gets an id (no pretrained vectors available).
    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a [String]>) -> Self {
        Self::from_tokens(corpus.into_iter().flatten().cloned().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(OOV)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(x: &[&str]) -> Vec<String> {
        x.iter().map(|t| String::from(*t)).collect()
    }

    #[test]
    fn empty_corpus_has_reserved_only() {
        let v = Vocabulary::build(core::iter::empty(), &BTreeSet::new());
        assert_eq!(v.tokens(), &s(&[PAD_TOKEN, OOV_TOKEN])[..]);
    }

    #[test]
    fn embedding_membership_decides_ids() {
        let emb: BTreeSet<String> = s(&["rain", "flood"]).into_iter().collect();
        let sent = s(&["the", "flood", "made", "rain", "flood"]);
        let v = Vocabulary::build(vec![&sent[..]], &emb);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("flood"), 2);
        assert_eq!(v.id("rain"), 3);
        assert_eq!(v.id("the"), OOV);
        assert_eq!(v.id("made"), OOV);
        assert_eq!(v.id(PAD_TOKEN), PAD);
    }
}
