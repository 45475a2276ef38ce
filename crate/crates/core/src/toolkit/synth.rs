//! Synthetic corpora with planted coreference chains, a coarse and a fine
//! concept lexicon, and out-of-vocabulary words that share a misleading
//! suffix piece across concepts.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, Document, SpanRef, SubwordVocab};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lexicon::{ConceptLexicon, Granularity, MatchPolicy};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::training::{DataConfig, LexiconRef, PhaseConfig, PhaseRole, RunConfig};

pub const COARSE_LEXICON: &str = "i2b2";
pub const FINE_LEXICON: &str = "umls";
pub const CONFOUND_SUFFIX: &str = "ia";

const FILLERS: &[&str] = &[
    "the", "was", "and", "noted", "with", "after", "on", "of", "a", "given", "showed", "for", "in", "then",
    "also", "were", "by", "at", "is", "be", "as", "due", "from", "until",
];
const MODIFIERS: &[&str] = &["severe", "mild", "acute", "chronic", "left", "recent"];
const WHOLE_INITIALS: &[char] = &['b', 'd', 'f', 'g', 'h', 'k', 'l'];
const STEM_INITIALS: &[char] = &['m', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub source_docs: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub coarse_concepts: Vec<String>,
    pub fine_per_coarse: usize,
    /// Whole-vocabulary surfaces per fine concept.
    pub whole_synonyms: usize,
    /// Multi-piece surfaces per fine concept.
    pub oov_synonyms: usize,
    /// Probability that a target-domain mention uses a multi-piece surface.
    pub oov_fraction: f64,
    /// Target fraction of cross-concept multi-piece surface pairs sharing the
    /// suffix piece.
    pub confound_fraction: f64,
    pub chains_per_doc: [usize; 2],
    pub chain_length: [usize; 2],
    pub filler_gap: [usize; 2],
    pub modifier_prob: f64,
    pub singletons_per_doc: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            source_docs: 20,
            train_docs: 20,
            test_docs: 50,
            coarse_concepts: vec!["problem".into(), "test".into()],
            fine_per_coarse: 4,
            whole_synonyms: 2,
            oov_synonyms: 2,
            oov_fraction: 0.5,
            confound_fraction: 0.5,
            chains_per_doc: [2, 3],
            chain_length: [2, 3],
            filler_gap: [1, 3],
            modifier_prob: 0.15,
            singletons_per_doc: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.oov_fraction) || !unit(self.confound_fraction) || !unit(self.modifier_prob) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if self.coarse_concepts.is_empty() || self.fine_per_coarse == 0 || self.whole_synonyms == 0 {
            return bad("need at least one coarse concept, fine concept and whole-word synonym".into());
        }
        if self.oov_fraction > 0.0 && self.oov_synonyms == 0 {
            return bad("oov_fraction > 0 needs oov_synonyms ≥ 1".into());
        }
        for (name, r) in [
            ("chains_per_doc", self.chains_per_doc),
            ("chain_length", self.chain_length),
            ("filler_gap", self.filler_gap),
        ] {
            if r[0] > r[1] {
                return bad(format!("{name} range is empty"));
            }
        }
        if self.chain_length[0] < 2 || self.chains_per_doc[0] == 0 {
            return bad("chains need at least 2 mentions and documents at least 1 chain".into());
        }
        let fine = self.coarse_concepts.len() * self.fine_per_coarse;
        if fine < self.chains_per_doc[1] + self.singletons_per_doc {
            return bad(format!("{fine} fine concepts cannot fill a document"));
        }
        if self.oov_synonyms > 20 || self.fine_per_coarse * self.coarse_concepts.len() > 40 {
            return bad("too many concepts for the piece alphabet".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct FineConcept {
    code: String,
    coarse: usize,
    whole: Vec<String>,
    oov: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub source: Vec<Document>,
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub coarse: ConceptLexicon,
    pub fine: ConceptLexicon,
    pub vocab: SubwordVocab,
    /// Multi-piece surfaces of every coarse concept.
    pub oov_surfaces: BTreeMap<String, Vec<String>>,
}

struct Generator {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Generator {
    fn syllable(&mut self, initials: &[char]) -> String {
        let c = *initials.choose(&mut self.rng).expect("non-empty");
        let v = *VOWELS.choose(&mut self.rng).expect("non-empty");
        format!("{c}{v}")
    }

    fn fresh(&mut self, mut make: impl FnMut(&mut Self) -> String) -> String {
        loop {
            let w = make(self);
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn range(&mut self, r: [usize; 2]) -> usize {
        self.rng.random_range(r[0]..=r[1])
    }
}

/// Builds the corpus described by `spec`; identical specs give identical
/// corpora.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        used: FILLERS.iter().chain(MODIFIERS).map(|s| s.to_string()).collect(),
    };
    let suffixes: Vec<String> = spec
        .coarse_concepts
        .iter()
        .map(|_| {
            g.fresh(|g| {
                let v1 = *VOWELS.choose(&mut g.rng).expect("vowel");
                format!("{v1}{}", g.syllable(CONSONANTS))
            })
        })
        .collect();

    let mut concepts = Vec::new();
    let mut pieces: Vec<String> = FILLERS.iter().chain(MODIFIERS).map(|s| s.to_string()).collect();
    pieces.push(format!("##{CONFOUND_SUFFIX}"));
    pieces.extend(suffixes.iter().map(|s| format!("##{s}")));
    for (ci, _) in spec.coarse_concepts.iter().enumerate() {
        for _ in 0..spec.fine_per_coarse {
            let code = format!("C{:04}", concepts.len() + 1);
            let whole: Vec<String> = (0..spec.whole_synonyms)
                .map(|_| {
                    g.fresh(|g| {
                        let a = g.syllable(WHOLE_INITIALS);
                        let b = g.syllable(CONSONANTS);
                        let c = g.syllable(CONSONANTS);
                        format!("{a}{b}{c}")
                    })
                })
                .collect();
            let stem = g.fresh(|g| g.syllable(STEM_INITIALS));
            let mut middles = HashSet::new();
            let oov: Vec<String> = (0..spec.oov_synonyms)
                .map(|_| loop {
                    let m = g.syllable(CONSONANTS);
                    if middles.insert(m.clone()) {
                        break m;
                    }
                })
                .collect();
            pieces.extend(whole.iter().cloned());
            pieces.push(stem.clone());
            pieces.extend(oov.iter().map(|m| format!("##{m}")));
            // suffixes are attached below, once the confound draw is made
            concepts.push(FineConcept {
                code,
                coarse: ci,
                whole,
                oov: oov.into_iter().map(|m| format!("{stem}{m}")).collect(),
            });
        }
    }

    // exactly round(√f · n) multi-piece surfaces of each coarse concept take
    // the shared suffix, so cross-concept pairs share it at rate ≈ f
    let share = spec.confound_fraction.sqrt();
    for ci in 0..spec.coarse_concepts.len() {
        let slots: Vec<(usize, usize)> = concepts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.coarse == ci)
            .flat_map(|(i, c)| (0..c.oov.len()).map(move |k| (i, k)))
            .collect();
        let n_shared = (share * slots.len() as f64).round() as usize;
        let mut order = slots.clone();
        order.shuffle(&mut g.rng);
        let shared: HashSet<(usize, usize)> = order.into_iter().take(n_shared).collect();
        for (i, k) in slots {
            let suffix = if shared.contains(&(i, k)) {
                CONFOUND_SUFFIX
            } else {
                suffixes[ci].as_str()
            };
            concepts[i].oov[k].push_str(suffix);
        }
    }

    let vocab = SubwordVocab::new("[UNK]", pieces, true)?;
    for c in &concepts {
        for w in &c.oov {
            if vocab.tokenize(w).len() != 3 {
                return Err(Error::Config(format!("synthetic surface {w} does not segment into three pieces")));
            }
        }
    }

    let coarse = ConceptLexicon::new(
        COARSE_LEXICON,
        Granularity::Coarse,
        spec.coarse_concepts.iter().enumerate().map(|(ci, name)| {
            let surfaces = concepts
                .iter()
                .filter(|c| c.coarse == ci)
                .flat_map(|c| c.whole.iter().chain(&c.oov).cloned())
                .collect();
            (name.clone(), surfaces)
        }),
    )?;
    let fine = ConceptLexicon::new(
        FINE_LEXICON,
        Granularity::Fine,
        concepts
            .iter()
            .map(|c| (c.code.clone(), c.whole.iter().chain(&c.oov).cloned().collect())),
    )?;

    let source = (0..spec.source_docs)
        .map(|i| document(&mut g, spec, &concepts, format!("source-{i:03}"), false))
        .collect();
    let train = (0..spec.train_docs)
        .map(|i| document(&mut g, spec, &concepts, format!("train-{i:03}"), true))
        .collect();
    let test = (0..spec.test_docs)
        .map(|i| document(&mut g, spec, &concepts, format!("test-{i:03}"), true))
        .collect();
    let oov_surfaces = spec
        .coarse_concepts
        .iter()
        .enumerate()
        .map(|(ci, name)| {
            let v = concepts.iter().filter(|c| c.coarse == ci).flat_map(|c| c.oov.clone()).collect();
            (name.clone(), v)
        })
        .collect();
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        source,
        train,
        test,
        coarse,
        fine,
        vocab,
        oov_surfaces,
    })
}

fn document(g: &mut Generator, spec: &SyntheticSpec, concepts: &[FineConcept], id: String, target: bool) -> Document {
    let chains = g.range(spec.chains_per_doc);
    let picks = rand::seq::index::sample(&mut g.rng, concepts.len(), chains + spec.singletons_per_doc).into_vec();
    // (concept, chain index or None for a singleton)
    let mut slots: Vec<(usize, Option<usize>)> = Vec::new();
    for (k, &c) in picks.iter().enumerate() {
        if k < chains {
            let len = g.range(spec.chain_length);
            slots.extend(std::iter::repeat_n((c, Some(k)), len));
        } else {
            slots.push((c, None));
        }
    }
    slots.shuffle(&mut g.rng);

    let mut tokens: Vec<String> = Vec::new();
    let filler = |g: &mut Generator, tokens: &mut Vec<String>, n: usize| {
        for _ in 0..n {
            tokens.push(FILLERS.choose(&mut g.rng).expect("filler").to_string());
        }
    };
    let mut clusters: Vec<Vec<SpanRef>> = vec![Vec::new(); chains];
    let mut labels = Vec::new();
    let gap = g.range(spec.filler_gap);
    filler(g, &mut tokens, gap);
    for (c, chain) in &slots {
        let start = tokens.len();
        if g.rng.random_bool(spec.modifier_prob) {
            tokens.push(MODIFIERS.choose(&mut g.rng).expect("modifier").to_string());
        }
        let concept = &concepts[*c];
        let surface = if target && !concept.oov.is_empty() && g.rng.random_bool(spec.oov_fraction) {
            concept.oov.choose(&mut g.rng)
        } else {
            concept.whole.choose(&mut g.rng)
        }
        .expect("surface")
        .clone();
        tokens.push(surface);
        let span = SpanRef::new(start, tokens.len() - 1);
        if let Some(k) = chain {
            clusters[*k].push(span);
            labels.push((span, concept.coarse));
        }
        let gap = g.range(spec.filler_gap);
        filler(g, &mut tokens, gap);
    }
    // keep every planted mention within the default pruning budget
    let mentions = slots.len();
    while (0.4 * tokens.len() as f64) < (mentions + 1) as f64 {
        filler(g, &mut tokens, 1);
    }
    let mut doc = Document::new(id, tokens, clusters, Default::default()).expect("generated document is valid");
    if target {
        for (span, coarse) in labels {
            doc.annotate(span, COARSE_LEXICON, &spec.coarse_concepts[coarse]);
        }
    }
    doc
}

/// Files written by [`SyntheticCorpus::write_to`].
#[derive(Clone, Debug)]
pub struct SyntheticFiles {
    pub config: PathBuf,
    pub source: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub vocab: PathBuf,
    pub coarse: PathBuf,
    pub fine: PathBuf,
}

impl SyntheticCorpus {
    /// A run configuration for this corpus, paths relative to its directory.
    pub fn run_config(&self) -> RunConfig {
        let weights = LossWeights {
            alpha_c: 1.0,
            alpha_k: [(COARSE_LEXICON.to_string(), 0.5), (FINE_LEXICON.to_string(), 0.2)].into(),
            beta: [1.0, 0.3, 0.3],
        };
        let phase = |name: &str, role, corpus: &str, epochs| PhaseConfig {
            name: name.into(),
            role,
            corpus: corpus.into(),
            epochs,
            base_lr: 1e-2,
            task_lr: 1e-2,
            weights: weights.clone(),
        };
        RunConfig {
            seed: self.spec.seed,
            execution: Execution::Parallel,
            checkpoint_dir: PathBuf::from("run"),
            data: DataConfig {
                vocab: "vocab.txt".into(),
                lowercase: Some(true),
                corpora: [
                    ("source".to_string(), PathBuf::from("source.jsonl")),
                    ("train".to_string(), PathBuf::from("train.jsonl")),
                    ("test".to_string(), PathBuf::from("test.jsonl")),
                ]
                .into(),
                lexicons: vec![
                    LexiconRef {
                        path: "i2b2.lex".into(),
                        policy: MatchPolicy::exact(),
                        annotate: true,
                    },
                    LexiconRef {
                        path: "umls.lex".into(),
                        policy: MatchPolicy::overlap(1.0),
                        annotate: true,
                    },
                ],
                eval_corpus: "test".into(),
                max_tokens: None,
            },
            model: ModelConfig {
                max_width: 3,
                ..ModelConfig::default()
            },
            phases: vec![
                phase("source", PhaseRole::Source, "source", 5),
                phase("target", PhaseRole::Target, "train", 10),
            ],
            ..RunConfig::default()
        }
    }

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<SyntheticFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SyntheticFiles {
            config: dir.join("run.toml"),
            source: dir.join("source.jsonl"),
            train: dir.join("train.jsonl"),
            test: dir.join("test.jsonl"),
            vocab: dir.join("vocab.txt"),
            coarse: dir.join("i2b2.lex"),
            fine: dir.join("umls.lex"),
        };
        write_corpus(&files.source, &self.source)?;
        write_corpus(&files.train, &self.train)?;
        write_corpus(&files.test, &self.test)?;
        let write = |p: &Path, s: String| fs::write(p, s).map_err(|e| Error::io(p, e));
        write(&files.vocab, self.vocab.to_file_string())?;
        write(&files.coarse, self.coarse.to_file_string())?;
        write(&files.fine, self.fine.to_file_string())?;
        write(&files.config, self.run_config().to_toml())?;
        Ok(files)
    }

    /// Fraction of cross-concept pairs of multi-piece surfaces that share
    /// their final piece.
    pub fn shared_suffix_rate(&self) -> f64 {
        let last = |w: &str| self.vocab.tokenize(w).last().cloned();
        let groups: Vec<Vec<Option<String>>> = self
            .oov_surfaces
            .values()
            .map(|ws| ws.iter().map(|w| last(w)).collect())
            .collect();
        let (mut shared, mut total) = (0usize, 0usize);
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                for a in &groups[i] {
                    for b in &groups[j] {
                        total += 1;
                        shared += usize::from(a == b);
                    }
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            shared as f64 / total as f64
        }
    }
}
