//! JSON Lines datasets, plain-text sentence lists and lexicon files.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use mcdn_core::text::{
    encode_example, segment_with_lexicon, tokenize, AltLexLexicon, EncodedExample, SegmentedExample, Vocabulary,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, ParseErrorKind, Result};

/// One dataset line: `{"sentence": ..., "label": 0|1, "altlex": [start, end]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub sentence: String,
    #[serde(default)]
    pub label: Option<u8>,
    /// Token range of the marker, end exclusive.
    #[serde(default)]
    pub altlex: Option<[usize; 2]>,
}

/// A record together with its 1-based line number in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Numbered<T> {
    pub line: usize,
    pub item: T,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<Numbered<Record>>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| ParseError::io(lineno, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| ParseError::new(lineno, ParseErrorKind::Json(e.to_string())))?;
        if let Some(l) = rec.label {
            if l > 1 {
                return Err(ParseError::new(
                    lineno,
                    ParseErrorKind::Invalid(format!("label must be 0 or 1, got {l}")),
                ));
            }
        }
        if let Some([s, e]) = rec.altlex {
            if s >= e {
                return Err(ParseError::new(
                    lineno,
                    ParseErrorKind::Invalid(format!("altlex span [{s}, {e}] is empty")),
                ));
            }
        }
        out.push(Numbered { line: lineno, item: rec });
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<Numbered<Record>>> {
    parse_records(open(path)?).map_err(|e| Error::Parse(e.at(path)))
}

/// One sentence per non-blank line.
pub fn load_sentences(path: &Path) -> Result<Vec<Numbered<String>>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(ParseError::io(i + 1, e).at(path)))?;
        if !line.trim().is_empty() {
            out.push(Numbered { line: i + 1, item: line });
        }
    }
    Ok(out)
}

pub fn parse_lexicon<R: BufRead>(reader: R) -> Result<AltLexLexicon, ParseError> {
    let mut phrases = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ParseError::io(i + 1, e))?;
        let phrase = line.trim();
        if phrase.is_empty() {
            continue;
        }
        AltLexLexicon::new([phrase])
            .map_err(|e| ParseError::new(i + 1, ParseErrorKind::Invalid(e.to_string())))?;
        phrases.push(phrase.to_owned());
    }
    AltLexLexicon::new(phrases.iter().map(String::as_str))
        .map_err(|e| ParseError::new(0, ParseErrorKind::Invalid(e.to_string())))
}

pub fn load_lexicon(path: &Path) -> Result<AltLexLexicon> {
    parse_lexicon(open(path)?).map_err(|e| Error::Parse(e.at(path)))
}

/// Tokenizes and segments a record, preferring its own span over the
/// lexicon.
pub fn segment_record(rec: &Numbered<Record>, lexicon: Option<&AltLexLexicon>) -> Result<SegmentedExample, ParseError> {
    let tokens = tokenize(&rec.item.sentence);
    if tokens.is_empty() {
        return Err(ParseError::new(rec.line, ParseErrorKind::Invalid("sentence has no tokens".into())));
    }
    let span = rec.item.altlex.map(|[s, e]| s..e);
    segment_with_lexicon(tokens, span, lexicon, rec.item.label)
        .map_err(|e| ParseError::new(rec.line, ParseErrorKind::Invalid(e.to_string())))
}

/// Loads, segments and checks labels of a training or evaluation file.
pub fn load_labelled(path: &Path, lexicon: Option<&AltLexLexicon>) -> Result<Vec<Numbered<SegmentedExample>>> {
    let records = load_records(path)?;
    if records.is_empty() {
        return Err(Error::Parse(
            ParseError::new(1, ParseErrorKind::Invalid("dataset is empty".into())).at(path),
        ));
    }
    records
        .iter()
        .map(|r| {
            if r.item.label.is_none() {
                return Err(ParseError::new(r.line, ParseErrorKind::Invalid("missing label".into())));
            }
            Ok(Numbered {
                line: r.line,
                item: segment_record(r, lexicon)?,
            })
        })
        .collect::<Result<_, ParseError>>()
        .map_err(|e| Error::Parse(e.at(path)))
}

pub fn encode_all(
    examples: &[Numbered<SegmentedExample>],
    vocab: &Vocabulary,
    max_len: usize,
    path: &Path,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|ex| {
            encode_example(&ex.item, vocab, max_len).map_err(|e| {
                Error::Parse(ParseError::new(ex.line, ParseErrorKind::Invalid(e.to_string())).at(path))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records() {
        let text = "{\"sentence\": \"a b\", \"label\": 1, \"altlex\": [0, 1]}\n\n{\"sentence\": \"c\"}\n";
        let r = parse_records(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].item.altlex, Some([0, 1]));
        assert_eq!(r[1].line, 3);
        assert_eq!(r[1].item.label, None);
    }

    #[test]
    fn bad_lines_report_line_numbers() {
        let cases = [
            "{\"sentence\": \"a\", \"label\": 1}\n{\"sentence\": \"a\", \"label\": 2}\n",
            "{\"sentence\": \"a\"}\nnot json\n",
            "{\"sentence\": \"a\"}\n{\"sentence\": \"a\", \"extra\": 1}\n",
            "{\"sentence\": \"a\"}\n{\"sentence\": \"a\", \"altlex\": [1, 1]}\n",
        ];
        for c in cases {
            assert_eq!(parse_records(c.as_bytes()).unwrap_err().line, 2, "{c}");
        }
    }

    #[test]
    fn span_out_of_range_is_reported() {
        let r = Numbered {
            line: 7,
            item: Record {
                sentence: "one two".into(),
                label: Some(0),
                altlex: Some([1, 5]),
            },
        };
        assert_eq!(segment_record(&r, None).unwrap_err().line, 7);
    }

    #[test]
    fn lexicon_file() {
        let lex = parse_lexicon("due to\n\nconsequently\ndue\n".as_bytes()).unwrap();
        assert_eq!(lex.len(), 3);
        let err = parse_lexicon("ok\na b c d e f g\n".as_bytes()).unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn record_uses_lexicon_without_span() {
        let lex = AltLexLexicon::new(["so"]).unwrap();
        let r = Numbered {
            line: 1,
            item: Record {
                sentence: "It rained so we stayed".into(),
                label: Some(1),
                altlex: None,
            },
        };
        let ex = segment_record(&r, Some(&lex)).unwrap();
        assert_eq!(ex.segments.l.range(), 2..3);
        assert!(!ex.no_altlex);
    }
}
