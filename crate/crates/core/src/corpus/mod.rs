//! Documents, spans and gold clusters, plus the line-delimited corpus format.
//!
//! A corpus file holds one JSON record per line:
//!
//! ```text
//! {"doc_id":"d0","tokens":["a","b"],"clusters":[[[0,0],[1,1]]],
//!  "concepts":[{"span":[0,0],"label":"problem","lexicon":"i2b2"}]}
//! ```
//!
//! Span indices are inclusive token positions.

mod subword;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use subword::{mean_subwords_per_span, tokenize_subwords, SubwordVocab};

/// Default upper bound on candidate span width, in tokens.
pub const DEFAULT_MAX_WIDTH: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub index: usize,
}

/// Inclusive token range `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct SpanRef {
    pub start: usize,
    pub end: usize,
}

impl SpanRef {
    pub const fn new(start: usize, end: usize) -> Self {
        SpanRef { start, end }
    }

    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn contains(&self, other: &SpanRef) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<[usize; 2]> for SpanRef {
    fn from(v: [usize; 2]) -> Self {
        SpanRef::new(v[0], v[1])
    }
}

impl From<SpanRef> for [usize; 2] {
    fn from(s: SpanRef) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for SpanRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

/// Concept labels attached to one span, keyed by lexicon id.
pub type SpanConcepts = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    pub gold_clusters: Vec<Vec<SpanRef>>,
    pub concept_annotations: BTreeMap<SpanRef, SpanConcepts>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    tokens: Vec<String>,
    #[serde(default)]
    clusters: Vec<Vec<SpanRef>>,
    #[serde(default)]
    concepts: Vec<ConceptRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConceptRecord {
    span: SpanRef,
    label: String,
    lexicon: String,
}

impl Document {
    /// Builds a document and checks every structural invariant.
    pub fn new(
        doc_id: impl Into<String>,
        tokens: Vec<String>,
        gold_clusters: Vec<Vec<SpanRef>>,
        concept_annotations: BTreeMap<SpanRef, SpanConcepts>,
    ) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            tokens: tokens
                .into_iter()
                .enumerate()
                .map(|(index, surface)| Token { surface, index })
                .collect(),
            gold_clusters,
            concept_annotations,
        };
        doc.validate()?;
        Ok(doc)
    }

    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidDocument {
            doc_id: self.doc_id.clone(),
            message: message.into(),
        }
    }

    fn check_span(&self, span: &SpanRef) -> Result<()> {
        if span.end < span.start {
            return Err(self.invalid(format!("span {span}: end before start")));
        }
        if span.end >= self.tokens.len() {
            return Err(self.invalid(format!(
                "span {span} out of bounds for {} tokens",
                self.tokens.len()
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.surface.is_empty() {
                return Err(self.invalid(format!("token {i} is empty")));
            }
            if tok.index != i {
                return Err(self.invalid(format!("token index {} at position {i}", tok.index)));
            }
        }
        let mut seen: HashMap<SpanRef, usize> = HashMap::new();
        for (c, cluster) in self.gold_clusters.iter().enumerate() {
            if cluster.is_empty() {
                return Err(self.invalid(format!("cluster {c} is empty")));
            }
            for span in cluster {
                self.check_span(span)?;
                if let Some(prev) = seen.insert(*span, c) {
                    return Err(self.invalid(format!(
                        "span {span} belongs to clusters {prev} and {c} (overlapping cluster membership)"
                    )));
                }
            }
        }
        for span in self.concept_annotations.keys() {
            self.check_span(span)?;
        }
        Ok(())
    }

    /// Checks that all labeled spans of each gold cluster agree on their
    /// label from `lexicon`. Only meaningful for coarse lexicons.
    pub fn check_concept_consistency(&self, lexicon: &str) -> Result<()> {
        for (c, cluster) in self.gold_clusters.iter().enumerate() {
            let mut label: Option<&str> = None;
            for span in cluster {
                if let Some(l) = self.concept(span, lexicon) {
                    match label {
                        Some(prev) if prev != l => {
                            return Err(self.invalid(format!(
                                "cluster {c} mixes {lexicon} concepts {prev} and {l}"
                            )))
                        }
                        _ => label = Some(l),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Surface text of a span, tokens joined by single spaces.
    pub fn surface(&self, span: &SpanRef) -> String {
        self.tokens[span.start..=span.end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn concept(&self, span: &SpanRef, lexicon: &str) -> Option<&str> {
        self.concept_annotations
            .get(span)
            .and_then(|m| m.get(lexicon))
            .map(String::as_str)
    }

    pub fn annotate(&mut self, span: SpanRef, lexicon: &str, label: &str) {
        self.concept_annotations
            .entry(span)
            .or_default()
            .insert(lexicon.to_string(), label.to_string());
    }

    /// Map from every gold span to the index of its cluster.
    pub fn cluster_index(&self) -> HashMap<SpanRef, usize> {
        self.gold_clusters
            .iter()
            .enumerate()
            .flat_map(|(c, cl)| cl.iter().map(move |s| (*s, c)))
            .collect()
    }

    /// All gold spans, sorted by `(start, end)`.
    pub fn gold_spans(&self) -> Vec<SpanRef> {
        let mut spans: Vec<SpanRef> = self.gold_clusters.iter().flatten().copied().collect();
        spans.sort();
        spans
    }

    /// Drops tokens past `max_tokens` together with any span touching them.
    pub fn truncated(&self, max_tokens: usize) -> Document {
        if self.tokens.len() <= max_tokens {
            return self.clone();
        }
        let keep = |s: &SpanRef| s.end < max_tokens;
        Document {
            doc_id: self.doc_id.clone(),
            tokens: self.tokens[..max_tokens].to_vec(),
            gold_clusters: self
                .gold_clusters
                .iter()
                .map(|c| c.iter().copied().filter(keep).collect::<Vec<_>>())
                .filter(|c| !c.is_empty())
                .collect(),
            concept_annotations: self
                .concept_annotations
                .iter()
                .filter(|(s, _)| keep(s))
                .map(|(s, m)| (*s, m.clone()))
                .collect(),
        }
    }

    fn from_record(rec: DocumentRecord) -> Result<Self> {
        let mut concepts: BTreeMap<SpanRef, SpanConcepts> = BTreeMap::new();
        for c in &rec.concepts {
            let slot = concepts.entry(c.span).or_default();
            if slot.insert(c.lexicon.clone(), c.label.clone()).is_some() {
                return Err(Error::InvalidDocument {
                    doc_id: rec.doc_id.clone(),
                    message: format!("span {} has two {} concepts", c.span, c.lexicon),
                });
            }
        }
        Document::new(rec.doc_id, rec.tokens, rec.clusters, concepts)
    }

    fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            doc_id: self.doc_id.clone(),
            tokens: self.tokens.iter().map(|t| t.surface.clone()).collect(),
            clusters: self.gold_clusters.clone(),
            concepts: self
                .concept_annotations
                .iter()
                .flat_map(|(span, m)| {
                    m.iter().map(move |(lexicon, label)| ConceptRecord {
                        span: *span,
                        label: label.clone(),
                        lexicon: lexicon.clone(),
                    })
                })
                .collect(),
        }
    }

    /// One corpus-file line (without trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("document records always serialize")
    }
}

/// Reads a line-delimited corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), path)
}

pub fn parse_corpus(reader: impl BufRead, path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(Document::from_record(rec)?);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for d in docs {
        out.extend_from_slice(d.to_json_line().as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusStats {
    pub documents: usize,
    pub mean_tokens: f64,
    pub mean_chain_length: f64,
}

pub fn corpus_stats(docs: &[Document]) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let tokens: usize = docs.iter().map(Document::len).sum();
    let (chains, spans) = docs
        .iter()
        .flat_map(|d| d.gold_clusters.iter())
        .fold((0usize, 0usize), |(c, s), cl| (c + 1, s + cl.len()));
    Ok(CorpusStats {
        documents: docs.len(),
        mean_tokens: tokens as f64 / docs.len() as f64,
        mean_chain_length: if chains == 0 {
            0.0
        } else {
            spans as f64 / chains as f64
        },
    })
}

/// Per-concept chain counts and mean chain lengths for one lexicon. A chain
/// takes the label of its first labeled span; unlabeled chains are skipped.
pub fn concept_chain_stats(docs: &[Document], lexicon: &str) -> BTreeMap<String, (usize, f64)> {
    let mut acc: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for d in docs {
        for cl in &d.gold_clusters {
            if let Some(label) = cl.iter().find_map(|s| d.concept(s, lexicon)) {
                let e = acc.entry(label.to_string()).or_default();
                e.0 += 1;
                e.1 += cl.len();
            }
        }
    }
    acc.into_iter()
        .map(|(k, (n, s))| (k, (n, s as f64 / n as f64)))
        .collect()
}

/// Every span of width at most `max_width`, ordered by `(start, end)`.
pub fn enumerate_candidate_spans(n_tokens: usize, max_width: usize) -> Vec<SpanRef> {
    let mut spans = Vec::new();
    for start in 0..n_tokens {
        let last = (start + max_width).min(n_tokens);
        for end in start..last {
            spans.push(SpanRef::new(start, end));
        }
    }
    spans
}

/// Number of distinct spans in `docs` that carry a label from `lexicon`.
pub fn labeled_span_count(docs: &[Document], lexicon: &str) -> usize {
    docs.iter()
        .map(|d| {
            d.concept_annotations
                .values()
                .filter(|m| m.contains_key(lexicon))
                .count()
        })
        .sum()
}

/// Distinct labels from `lexicon` found anywhere in `docs`.
pub fn labels_in(docs: &[Document], lexicon: &str) -> HashSet<String> {
    docs.iter()
        .flat_map(|d| d.concept_annotations.values())
        .filter_map(|m| m.get(lexicon).cloned())
        .collect()
}
