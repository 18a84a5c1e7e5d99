//! From raw sentences to encoded id sequences.

mod encode;
mod lexicon;
mod segment;
mod tokenize;
mod vocab;

pub use encode::{encode_batch, encode_example, EncodedBatch, EncodedExample, SegmentId, SEGMENT_KINDS};
pub use lexicon::AltLexLexicon;
pub use segment::{segment, segment_with_lexicon, Segmentation, SegmentedExample, Span};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, OOV, OOV_TOKEN, PAD, PAD_TOKEN};
