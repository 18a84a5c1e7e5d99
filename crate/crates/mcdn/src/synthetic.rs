//! Small generated datasets for gradient checks and overfit runs.

use mcdn_core::gradcheck::GradCheckReport;
use mcdn_core::text::{encode_example, segment, EncodedExample, SegmentedExample, Vocabulary};
use mcdn_core::{Mcdn, ModelConfig, Result, Rng};

/// Token whose presence makes an example causal in [`marker_dataset`].
pub const MARKER: &str = "because";

const FILLER: [&str; 16] = [
    "the", "river", "rose", "town", "people", "left", "after", "rain", "fell", "roads", "closed", "we", "saw", "old",
    "bridge", "night",
];
const CONNECTIVES: [&str; 4] = ["then", "so", "and", "later"];

/// The down-scaled model used for gradient checks.
pub fn reduced_config() -> ModelConfig {
    ModelConfig {
        d: 16,
        n_blocks: 2,
        heads: 2,
        k: 12,
        windows: vec![2, 3, 4],
        dg: 8,
        max_len: 32,
        ..ModelConfig::default()
    }
}

fn sentence(rng: &mut Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| FILLER[rng.below(FILLER.len())].to_owned()).collect()
}

/// `n` sentences of filler words with a one-word connective as L; the
/// label is 1 exactly when [`MARKER`] occurs.
pub fn marker_dataset(n: usize, seed: u64) -> Vec<SegmentedExample> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let causal = i % 2 == 0;
            let len = 4 + rng.below(6);
            let mut tokens = sentence(&mut rng, len);
            let at = 1 + rng.below(tokens.len() - 1);
            tokens.insert(at, CONNECTIVES[rng.below(CONNECTIVES.len())].to_owned());
            if causal {
                let m = rng.below(tokens.len() + 1);
                tokens.insert(m, MARKER.to_owned());
            }
            let l = tokens.iter().position(|t| CONNECTIVES.contains(&t.as_str())).expect("connective present");
            let segments = segment(tokens.len(), l..l + 1).expect("span in range");
            SegmentedExample {
                tokens,
                segments,
                label: Some(u8::from(causal)),
                no_altlex: false,
            }
        })
        .collect()
}

pub fn vocab_for(examples: &[SegmentedExample]) -> Vocabulary {
    Vocabulary::from_corpus(examples.iter().map(|e| e.tokens.as_slice()))
}

pub fn encode_all(examples: &[SegmentedExample], vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedExample>> {
    examples.iter().map(|e| encode_example(e, vocab, max_len)).collect()
}

/// Four random labelled sentences of 3 to 9 tokens with random marker
/// spans, some at the sentence edges.
pub fn random_batch(rng: &mut Rng) -> Vec<SegmentedExample> {
    (0..4)
        .map(|i| {
            let len = 3 + rng.below(7);
            let tokens = sentence(rng, len);
            let n = tokens.len();
            let len = 1 + rng.below(2);
            let start = rng.below(n - len + 1);
            SegmentedExample {
                segments: segment(n, start..start + len).expect("span in range"),
                tokens,
                label: Some(u8::from(i % 2 == 0)),
                no_altlex: false,
            }
        })
        .collect()
}

/// Gradient check of the full objective of a freshly initialized reduced
/// model on a random batch.
pub fn reduced_gradcheck(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let batch = random_batch(&mut rng);
    let vocab = vocab_for(&batch);
    let config = reduced_config();
    let max_len = config.max_len;
    let model = Mcdn::new(config, vocab, None, &mut rng)?;
    let encoded = encode_all(&batch, &model.vocab, max_len)?;
    model.gradient_check(&encoded, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_labels_follow_marker() {
        let data = marker_dataset(64, 9);
        assert_eq!(data.len(), 64);
        for ex in &data {
            let has = ex.tokens.iter().any(|t| t == MARKER);
            assert_eq!(ex.label, Some(u8::from(has)));
            assert_eq!(ex.segments.l.len(), 1);
        }
        assert_eq!(data.iter().filter(|e| e.label == Some(1)).count(), 32);
    }

    #[test]
    fn batches_are_seeded() {
        assert_eq!(random_batch(&mut Rng::new(4)), random_batch(&mut Rng::new(4)));
    }
}
