//! Concept lexicons and the matchers that attach concepts to spans.
//!
//! Lexicon files are UTF-8 text. The first non-empty line is a header
//! `#lexicon <lexicon_id> <coarse|fine>`; every following line holds one
//! concept as `code<TAB>surface|surface|...`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SpanRef};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Coarse,
    Fine,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Granularity::Coarse),
            "fine" => Ok(Granularity::Fine),
            other => Err(Error::Config(format!("unknown granularity {other:?}"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Coarse => "coarse",
            Granularity::Fine => "fine",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptId {
    pub lexicon_id: String,
    pub code: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Overlap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    pub mode: MatchMode,
    /// Fraction of a lexicon entry's tokens that must occur in the span.
    /// Inclusive; only read in overlap mode.
    pub overlap_threshold: f64,
    pub lowercase: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            mode: MatchMode::Exact,
            overlap_threshold: 1.0,
            lowercase: true,
        }
    }
}

impl MatchPolicy {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn overlap(threshold: f64) -> Self {
        MatchPolicy {
            mode: MatchMode::Overlap,
            overlap_threshold: threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == MatchMode::Overlap
            && !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0)
        {
            return Err(Error::Config(format!(
                "overlap threshold {} outside (0, 1]",
                self.overlap_threshold
            )));
        }
        Ok(())
    }
}

fn normalize(s: &str, lowercase: bool) -> String {
    let joined = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if lowercase {
        joined.to_lowercase()
    } else {
        joined
    }
}

#[derive(Clone, Debug)]
pub struct ConceptLexicon {
    pub lexicon_id: String,
    pub granularity: Granularity,
    concepts: BTreeMap<String, Vec<String>>,
    exact_cased: HashMap<String, Vec<String>>,
    exact_lower: HashMap<String, Vec<String>>,
    ambiguous: Vec<String>,
}

impl ConceptLexicon {
    pub fn new(
        lexicon_id: impl Into<String>,
        granularity: Granularity,
        concepts: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Result<Self> {
        let lexicon_id = lexicon_id.into();
        let invalid = |message: String| Error::InvalidLexicon {
            lexicon: lexicon_id.clone(),
            message,
        };
        let mut map = BTreeMap::new();
        for (code, surfaces) in concepts {
            if code.is_empty() {
                return Err(invalid("empty concept code".into()));
            }
            let surfaces: Vec<String> = surfaces
                .into_iter()
                .map(|s| normalize(&s, false))
                .filter(|s| !s.is_empty())
                .collect();
            if surfaces.is_empty() {
                return Err(invalid(format!("concept {code} has no surfaces")));
            }
            if map.insert(code.clone(), surfaces).is_some() {
                return Err(invalid(format!("duplicate concept {code}")));
            }
        }
        if map.is_empty() {
            return Err(invalid("no concepts".into()));
        }
        let mut exact_cased: HashMap<String, Vec<String>> = HashMap::new();
        let mut exact_lower: HashMap<String, Vec<String>> = HashMap::new();
        for (code, surfaces) in &map {
            for s in surfaces {
                push_unique(exact_cased.entry(s.clone()).or_default(), code);
                push_unique(exact_lower.entry(s.to_lowercase()).or_default(), code);
            }
        }
        let mut ambiguous: Vec<String> = exact_lower
            .iter()
            .filter(|(_, codes)| codes.len() > 1)
            .map(|(s, _)| s.clone())
            .collect();
        ambiguous.sort();
        if !ambiguous.is_empty() {
            log::warn!(
                "lexicon {lexicon_id}: {} surface(s) map to several concepts; the smallest code wins",
                ambiguous.len()
            );
        }
        Ok(ConceptLexicon {
            lexicon_id,
            granularity,
            concepts: map,
            exact_cased,
            exact_lower,
            ambiguous,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty lexicon file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "#lexicon" {
            return Err(err(
                hline + 1,
                "expected header `#lexicon <lexicon_id> <coarse|fine>`",
            ));
        }
        let granularity: Granularity = fields[2].parse().map_err(|_| {
            err(hline + 1, "granularity must be `coarse` or `fine`")
        })?;
        let mut concepts = Vec::new();
        for (i, line) in lines {
            let (code, surfaces) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "expected `code<TAB>surface|surface`"))?;
            concepts.push((
                code.trim().to_string(),
                surfaces.split('|').map(str::to_string).collect(),
            ));
        }
        ConceptLexicon::new(fields[1], granularity, concepts)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("#lexicon {} {}\n", self.lexicon_id, self.granularity);
        for (code, surfaces) in &self.concepts {
            s.push_str(code);
            s.push('\t');
            s.push_str(&surfaces.join("|"));
            s.push('\n');
        }
        s
    }

    pub fn concepts(&self) -> &BTreeMap<String, Vec<String>> {
        &self.concepts
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.concepts.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// Surfaces listed under more than one concept.
    pub fn ambiguous_surfaces(&self) -> &[String] {
        &self.ambiguous
    }

    fn id(&self, code: &str) -> ConceptId {
        ConceptId {
            lexicon_id: self.lexicon_id.clone(),
            code: code.to_string(),
        }
    }

    /// Dispatches on `policy.mode`.
    pub fn assign(&self, surface: &str, policy: &MatchPolicy) -> Option<ConceptId> {
        match policy.mode {
            MatchMode::Exact => assign_concept_exact(surface, self, policy),
            MatchMode::Overlap => assign_concept_overlap(surface, self, policy),
        }
    }
}

fn push_unique(v: &mut Vec<String>, code: &str) {
    if !v.iter().any(|c| c == code) {
        v.push(code.to_string());
        v.sort();
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<ConceptLexicon> {
    ConceptLexicon::load(path)
}

/// Whole-surface match after normalization. Ambiguous surfaces resolve to
/// the lexicographically smallest code.
pub fn assign_concept_exact(
    surface: &str,
    lex: &ConceptLexicon,
    policy: &MatchPolicy,
) -> Option<ConceptId> {
    let key = normalize(surface, policy.lowercase);
    let index = if policy.lowercase {
        &lex.exact_lower
    } else {
        &lex.exact_cased
    };
    let codes = index.get(&key)?;
    if codes.len() > 1 {
        log::debug!(
            "{}: surface {key:?} is ambiguous between {codes:?}",
            lex.lexicon_id
        );
    }
    codes.first().map(|c| lex.id(c))
}

/// Token-overlap match: a concept matches when some entry has at least
/// `overlap_threshold` of its tokens present in the surface. Best fraction
/// wins, then smallest code.
pub fn assign_concept_overlap(
    surface: &str,
    lex: &ConceptLexicon,
    policy: &MatchPolicy,
) -> Option<ConceptId> {
    let span_norm = normalize(surface, policy.lowercase);
    let span_tokens: BTreeSet<&str> = span_norm.split(' ').filter(|t| !t.is_empty()).collect();
    if span_tokens.is_empty() {
        return None;
    }
    let mut best: Option<(f64, &str)> = None;
    for (code, surfaces) in &lex.concepts {
        for entry in surfaces {
            let entry_norm = normalize(entry, policy.lowercase);
            let entry_tokens: BTreeSet<&str> = entry_norm.split(' ').collect();
            let shared = entry_tokens.intersection(&span_tokens).count();
            let frac = shared as f64 / entry_tokens.len() as f64;
            if frac >= policy.overlap_threshold && shared > 0 {
                // concepts iterate in code order, so strict > keeps the smallest code on ties
                if best.is_none_or(|(f, _)| frac > f) {
                    best = Some((frac, code));
                }
            }
        }
    }
    best.map(|(_, code)| lex.id(code))
}

/// Attaches `lex` concepts to every gold span whose surface matches.
/// Annotations from other lexicons are kept.
pub fn annotate_documents(
    docs: &[Document],
    lex: &ConceptLexicon,
    policy: &MatchPolicy,
) -> Vec<Document> {
    docs.iter()
        .map(|d| {
            let mut d = d.clone();
            let spans = d.gold_spans();
            annotate_spans(&mut d, &spans, lex, policy);
            d
        })
        .collect()
}

/// Annotates the given spans in place; returns how many matched.
pub fn annotate_spans(
    doc: &mut Document,
    spans: &[SpanRef],
    lex: &ConceptLexicon,
    policy: &MatchPolicy,
) -> usize {
    let mut matched = 0;
    for span in spans {
        let surface = doc.surface(span);
        if let Some(id) = lex.assign(&surface, policy) {
            doc.annotate(*span, &lex.lexicon_id, &id.code);
            matched += 1;
        }
    }
    matched
}
