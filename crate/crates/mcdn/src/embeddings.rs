//! word2vec text format: a `count dim` header, then one `token v1 .. v_dim`
//! line per vector.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    dim: usize,
    tokens: Vec<String>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl Embeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tokens: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a vector; returns `false` (and changes nothing) when the token
    /// is already present or the length is wrong.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> bool {
        if vector.len() != self.dim || self.index.contains_key(token) {
            return false;
        }
        self.index.insert(token.to_owned(), self.tokens.len());
        self.tokens.push(token.to_owned());
        self.values.extend_from_slice(vector);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn token_set(&self) -> BTreeSet<String> {
        self.tokens.iter().cloned().collect()
    }

    /// Row-major `len × dim` matrix in file order.
    pub fn matrix(&self) -> &[f64] {
        &self.values
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, ParseError> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| ParseError::io(1, e))?,
            None => return Err(ParseError::new(1, ParseErrorKind::MissingHeader)),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match fields[..] {
            [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
                (Ok(c), Ok(d)) if d > 0 => (c, d),
                _ => return Err(ParseError::new(1, ParseErrorKind::BadHeader(header.clone()))),
            },
            _ => return Err(ParseError::new(1, ParseErrorKind::BadHeader(header.clone()))),
        };
        let mut emb = Self::new(dim);
        let mut row = Vec::with_capacity(dim);
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| ParseError::io(lineno, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default();
            row.clear();
            for p in parts {
                let v = p
                    .parse::<f64>()
                    .map_err(|_| ParseError::new(lineno, ParseErrorKind::NotNumeric(p.to_owned())))?;
                row.push(v);
            }
            if row.len() != dim {
                return Err(ParseError::new(
                    lineno,
                    ParseErrorKind::Arity {
                        expected: dim,
                        found: row.len(),
                    },
                ));
            }
            if !emb.insert(token, &row) {
                return Err(ParseError::new(lineno, ParseErrorKind::DuplicateToken(token.to_owned())));
            }
        }
        if emb.len() != count {
            return Err(ParseError::new(
                emb.len() + 1,
                ParseErrorKind::Count {
                    expected: count,
                    found: emb.len(),
                },
            ));
        }
        Ok(emb)
    }

    /// Values are written in shortest round-trip form, so reading the
    /// output back gives identical vectors.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, token) in self.tokens.iter().enumerate() {
            write!(w, "{token}")?;
            for v in &self.values[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn load_word2vec_text(path: &Path) -> Result<Embeddings, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Embeddings::read(BufReader::new(file)).map_err(|e| Error::Parse(e.at(path)))
}

pub fn save_word2vec_text(emb: &Embeddings, path: &Path) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    emb.write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
