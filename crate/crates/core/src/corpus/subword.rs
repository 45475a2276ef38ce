use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Document, SpanRef};
use crate::error::{Error, Result};

const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

/// Wordpiece vocabulary. Piece 0 is always the unknown symbol; continuation
/// pieces are stored with their `##` marker.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    lowercase: bool,
}

impl SubwordVocab {
    pub fn new(
        unk: impl Into<String>,
        pieces: impl IntoIterator<Item = impl Into<String>>,
        lowercase: bool,
    ) -> Result<Self> {
        let unk = unk.into();
        if unk.is_empty() {
            return Err(Error::Config("unknown symbol must be non-empty".into()));
        }
        let mut vocab = SubwordVocab {
            pieces: vec![unk.clone()],
            index: HashMap::from([(unk, 0)]),
            lowercase,
        };
        for p in pieces {
            let p = p.into();
            if p.is_empty() || p == CONTINUATION {
                return Err(Error::Config(format!("empty vocabulary piece {p:?}")));
            }
            if !vocab.index.contains_key(&p) {
                vocab.index.insert(p.clone(), vocab.pieces.len() as u32);
                vocab.pieces.push(p);
            }
        }
        Ok(vocab)
    }

    /// Loads a vocab file: first line is the unknown symbol, then one piece
    /// per line.
    pub fn load(path: impl AsRef<Path>, lowercase: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let unk = match lines.next() {
            Some((_, l)) if !l.trim().is_empty() => l.trim().to_string(),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "missing unknown symbol".into(),
                })
            }
        };
        let mut pieces = Vec::new();
        for (i, l) in lines {
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            if l == CONTINUATION {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "empty continuation piece".into(),
                });
            }
            pieces.push(l.to_string());
        }
        SubwordVocab::new(unk, pieces, lowercase)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for p in &self.pieces {
            s.push_str(p);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unk(&self) -> &str {
        &self.pieces[0]
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    /// Greedy longest-match-first segmentation into piece ids. Whitespace
    /// separates words; a word with no matching prefix at some position
    /// becomes a single unknown piece.
    pub fn tokenize_ids(&self, surface: &str) -> Vec<u32> {
        let normalized;
        let text = if self.lowercase {
            normalized = surface.to_lowercase();
            normalized.as_str()
        } else {
            surface
        };
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.tokenize_word(word, &mut out);
        }
        out
    }

    fn tokenize_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(0);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let from = chars[start].0;
                let to = chars.get(end).map_or(word.len(), |c| c.0);
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[from..to]);
                if let Some(&id) = self.index.get(candidate.as_str()) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(0);
                    return;
                }
            }
        }
    }

    pub fn tokenize(&self, surface: &str) -> Vec<String> {
        self.tokenize_ids(surface)
            .into_iter()
            .map(|id| self.pieces[id as usize].clone())
            .collect()
    }
}

pub fn tokenize_subwords(surface: &str, vocab: &SubwordVocab) -> Vec<String> {
    vocab.tokenize(surface)
}

/// Mean, over the spans of `chain`, of the number of wordpieces covering each
/// span's tokens.
pub fn mean_subwords_per_span(chain: &[SpanRef], doc: &Document, vocab: &SubwordVocab) -> f64 {
    if chain.is_empty() {
        return 0.0;
    }
    let total: usize = chain
        .iter()
        .map(|s| {
            doc.tokens[s.start..=s.end]
                .iter()
                .map(|t| vocab.tokenize_ids(&t.surface).len())
                .sum::<usize>()
        })
        .sum();
    total as f64 / chain.len() as f64
}
