use std::collections::{BTreeMap, HashMap};

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::exec::Execution;
use crate::losses::{
    coref_loss, document_objective, retrofit_loss, scaffold_loss, LossSettings, LossWeights, Objective, PairSet,
    ScaffoldClasses, UnlabeledPolicy,
};
use crate::training::gradient_check_objective;

fn vocab() -> SubwordVocab {
    SubwordVocab::new(
        "[UNK]",
        ["the", "lap", "##aro", "##sco", "##py", "##tom", "##y", "pain", "was", "noted", "head"],
        true,
    )
    .unwrap()
}

fn doc() -> Document {
    let tokens = "the laparoscopy was noted head pain the laparotomy pain"
        .split(' ')
        .map(String::from)
        .collect();
    let s = SpanRef::new;
    let mut d = Document::new(
        "d1",
        tokens,
        vec![vec![s(1, 1), s(7, 7)], vec![s(4, 5), s(8, 8)]],
        BTreeMap::new(),
    )
    .unwrap();
    for (span, label) in [(s(1, 1), "test"), (s(7, 7), "test"), (s(4, 5), "problem"), (s(8, 8), "problem")] {
        d.annotate(span, "i2b2", label);
    }
    d
}

fn config() -> ModelConfig {
    ModelConfig {
        d_tok: 4,
        d_width: 2,
        window_radius: 1,
        hidden: 3,
        width_buckets: vec![1, 2, 3, 4, 5],
        max_width: 3,
        prune_ratio: 0.4,
        max_antecedents: 50,
    }
}

fn model(cfg: ModelConfig, seed: u64) -> Model {
    let mut m = Model::initialize(cfg, vocab(), 2, seed, InitMode::Uniform).unwrap();
    // give the zero-initialised scaffold head something to differentiate
    let w = &mut m.store.tensors[m.layout.scaffold].data;
    for (k, x) in w.iter_mut().enumerate() {
        *x = ((k as f64 + 1.0) * 0.71).sin() * 0.5;
    }
    m
}

fn objective() -> Objective {
    Objective {
        weights: LossWeights::new(1.0, &[("i2b2", 0.5)], [1.0, 0.3, 0.3]).unwrap(),
        settings: LossSettings::default(),
        scaffold: Some(ScaffoldClasses::new("i2b2", ["problem".to_string(), "test".to_string()], false)),
        candidate_lexicons: Vec::new(),
    }
}

fn zero_tensor(m: &mut Model, i: usize) {
    m.store.tensors[i].data.iter_mut().for_each(|x| *x = 0.0);
}

#[test]
fn width_buckets_and_dimensions() {
    assert_eq!(width_bucket(3, &[1, 2, 3, 4, 5]), 2);
    assert_eq!(width_bucket(1, &[1, 2, 3, 4, 5]), 0);
    assert_eq!(width_bucket(9, &[1, 2, 3, 4, 5]), 4);
    assert_eq!(width_bucket(6, &[1, 2, 3, 4, 5, 8]), 4);
    assert_eq!(width_bucket(8, &[1, 2, 3, 4, 5, 8]), 5);
    assert_eq!(config().span_dim(), 14);
    let m = model(config(), 1);
    let p = m.prepare(&doc());
    let h = m.span_representation(&p, &SpanRef::new(3, 5));
    assert_eq!(h.full().len(), 14);
}

#[test]
fn attention_examples() {
    let u = vec![1.0, 0.0];
    let v = vec![0.0, 1.0];
    assert_eq!(attend(std::slice::from_ref(&u), &[3.0]), u);
    assert_eq!(attend(&[vec![2.0, 4.0], vec![4.0, 0.0]], &[0.0, 0.0]), vec![3.0, 2.0]);
    let x = attend(&[u, v], &[1.0, 0.0]);
    assert_abs_diff_eq!(x[0], 0.7311, epsilon = 1e-4);
    assert_abs_diff_eq!(x[1], 0.2689, epsilon = 1e-4);
}

#[test]
fn antecedent_distribution_examples() {
    assert_eq!(antecedent_distribution(&[]).unwrap(), vec![1.0]);
    assert_eq!(antecedent_distribution(&[0.0]).unwrap(), vec![0.5, 0.5]);
    let p = antecedent_distribution(&[1.0, 0.0]).unwrap();
    // ε first, then the two antecedents
    for (a, b) in p.iter().zip([0.2119, 0.5761, 0.2119]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-4);
    }
    assert!(antecedent_distribution(&[f64::NAN]).is_err());
}

#[test]
fn pruning_examples() {
    let spans = enumerate_candidate_spans(10, 1);
    let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
    assert_eq!(prune_mentions(10, &spans, &scores, 1.0).spans.len(), 10);
    let kept = prune_mentions(10, &spans, &scores, 0.4);
    assert_eq!(kept.spans, (6..10).map(|i| SpanRef::new(i, i)).collect::<Vec<_>>());
    let flat = prune_mentions(10, &spans, &[1.0; 10], 0.4);
    assert_eq!(flat.spans, (0..4).map(|i| SpanRef::new(i, i)).collect::<Vec<_>>());
}

#[test]
fn encoder_examples() {
    let d = doc();
    let mut m = model(config(), 2);
    let i = m.layout.embed;
    zero_tensor(&mut m, i);
    let i = m.layout.mixer_bias;
    zero_tensor(&mut m, i);
    let p = m.prepare(&d);
    assert!(m.encode_tokens(&p).iter().flatten().all(|&x| x == 0.0));

    // identity on the centre slot, one token: output is its embedding row
    let mut m = model(config(), 3);
    let i = m.layout.mixer_bias;
    zero_tensor(&mut m, i);
    let dt = m.config.d_tok;
    let cols = m.store.tensors[m.layout.mixer].cols;
    let mixer = &mut m.store.tensors[m.layout.mixer].data;
    mixer.iter_mut().for_each(|x| *x = 0.0);
    for k in 0..dt {
        mixer[k * cols + dt + k] = 1.0;
    }
    let one = Document::new("one", vec!["pain".into()], vec![], BTreeMap::new()).unwrap();
    let p = m.prepare(&one);
    let id = m.vocab.id("pain").unwrap() as usize;
    let row = m.store.tensors[m.layout.embed].data[id * dt..(id + 1) * dt].to_vec();
    assert_eq!(m.encode_tokens(&p), vec![row]);
}

#[test]
fn radius_zero_is_local() {
    let m = model(ModelConfig { window_radius: 0, ..config() }, 4);
    let a = Document::new("a", vec!["the".into(), "pain".into(), "was".into()], vec![], BTreeMap::new()).unwrap();
    let b = Document::new("b", vec!["head".into(), "pain".into(), "noted".into()], vec![], BTreeMap::new()).unwrap();
    let xa = m.encode_tokens(&m.prepare(&a));
    let xb = m.encode_tokens(&m.prepare(&b));
    assert_eq!(xa[1], xb[1]);
    let wide = model(config(), 4);
    assert_ne!(wide.encode_tokens(&wide.prepare(&a))[1], wide.encode_tokens(&wide.prepare(&b))[1]);
}

#[test]
fn span_parts_use_wordpiece_boundaries() {
    let m = model(config(), 5);
    let p = m.prepare(&doc());
    let xs = m.encode_tokens(&p);
    // "laparoscopy" is pieces 1..=4
    let h = m.span_representation(&p, &SpanRef::new(1, 1));
    assert_eq!(h.boundary_start, xs[1]);
    assert_eq!(h.boundary_end, xs[4]);
    for k in 0..4 {
        let lo = (1..=4).map(|i| xs[i][k]).fold(f64::INFINITY, f64::min);
        let hi = (1..=4).map(|i| xs[i][k]).fold(f64::NEG_INFINITY, f64::max);
        assert!(h.internal[k] >= lo - 1e-12 && h.internal[k] <= hi + 1e-12);
    }
    let single = m.span_representation(&p, &SpanRef::new(0, 0));
    assert_eq!(single.boundary_start, single.boundary_end);
    assert_eq!(single.internal, single.boundary_start);
}

#[test]
fn linear_and_zero_scorers() {
    let mut m = model(ModelConfig { hidden: 0, ..config() }, 6);
    let dh = m.config.span_dim();
    let i = m.layout.mention.b1;
    zero_tensor(&mut m, i);
    let w: Vec<f64> = m.store.tensors[m.layout.mention.w1].data.clone();
    for k in [0, 5, dh - 1] {
        let mut e = vec![0.0; dh];
        e[k] = 1.0;
        let h = SpanRepresentation {
            boundary_start: e[..4].to_vec(),
            boundary_end: e[4..8].to_vec(),
            internal: e[8..12].to_vec(),
            width_feature: e[12..].to_vec(),
        };
        assert_abs_diff_eq!(m.mention_score(&h), w[k], epsilon = 1e-15);
    }
    let mut z = model(config(), 7);
    for i in 0..z.store.tensors.len() {
        zero_tensor(&mut z, i);
    }
    let p = z.prepare(&doc());
    let scored = z.score_document(&p);
    assert!(scored.pair_scores.iter().flatten().all(|&s| s == 0.0));
    assert!(scored.candidates.scores.iter().all(|&s| s == 0.0));
}

#[test]
fn pair_score_sums_parts() {
    let mut m = model(ModelConfig { hidden: 0, ..config() }, 8);
    let dh = m.config.span_dim();
    let mut mention_w = vec![0.0; dh];
    mention_w[0] = 1.0;
    m.store.tensors[m.layout.mention.w1].data = mention_w;
    let i = m.layout.mention.b1;
    zero_tensor(&mut m, i);
    let i = m.layout.pair.w1;
    zero_tensor(&mut m, i);
    m.store.tensors[m.layout.pair.b1].data = vec![0.5];
    let rep = |x0: f64| SpanRepresentation {
        boundary_start: vec![x0, 0.3, -0.2, 0.1],
        boundary_end: vec![0.0; 4],
        internal: vec![0.7; 4],
        width_feature: vec![0.1, 0.2],
    };
    let (i, j) = (SpanRef::new(4, 5), SpanRef::new(1, 1));
    assert_abs_diff_eq!(m.pair_score((&i, &rep(1.0)), (&j, &rep(2.0))).unwrap(), 3.5, epsilon = 1e-12);
    assert!(matches!(m.pair_score((&j, &rep(1.0)), (&i, &rep(2.0))), Err(Error::Ordering { .. })));
}

#[test]
fn decomposed_scores_match_full_scorer() {
    let m = model(ModelConfig { prune_ratio: 1.0, ..config() }, 9);
    let p = m.prepare(&doc());
    let scored = m.score_document(&p);
    let reps: Vec<SpanRepresentation> = scored
        .candidates
        .spans
        .iter()
        .map(|s| m.span_representation(&p, s))
        .collect();
    for (k, h) in reps.iter().enumerate() {
        assert_abs_diff_eq!(scored.candidates.scores[k], m.mention_score(h), epsilon = 1e-12);
    }
    for (i, ants) in scored.antecedents.iter().enumerate() {
        for (k, &j) in ants.iter().enumerate() {
            let full = m
                .pair_score(
                    (&scored.candidates.spans[i], &reps[i]),
                    (&scored.candidates.spans[j], &reps[j]),
                )
                .unwrap();
            assert_abs_diff_eq!(scored.pair_scores[i][k], full, epsilon = 1e-12);
        }
    }
}

#[test]
fn objective_matches_plain_losses() {
    let m = model(config(), 10);
    let d = doc();
    let p = m.prepare(&d);
    let obj = objective();
    let mut t = Tape::new();
    let pv = ParamVars::load(&mut t, &m.store);
    let o = document_objective(&mut t, &pv, &m.config, &m.layout, &p, &obj).unwrap();
    let [cl, rl, sl] = o.components(&t);

    let scored = m.score_document(&p);
    let plain_cl = coref_loss(&d, &scored.candidates.spans, &scored.antecedents, &scored.pair_scores).unwrap();
    assert_abs_diff_eq!(cl, plain_cl.value, epsilon = 1e-10);
    assert_eq!(o.pruning_misses, plain_cl.pruning_misses);

    let mut spans = d.gold_spans();
    spans.extend_from_slice(&scored.candidates.spans);
    let pairs = PairSet::sample(&d.doc_id, &spans, obj.settings.pair_budget, obj.settings.sampling_seed);
    let all: Vec<SpanRef> = pairs.pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let xs: HashMap<SpanRef, Vec<f64>> = all.iter().copied().zip(m.internals(&p, &all)).collect();
    let plain_rl = retrofit_loss(&[d.clone()], &[pairs], &[xs], &obj.weights, UnlabeledPolicy::Strict);
    assert_abs_diff_eq!(rl, plain_rl, epsilon = 1e-10);

    let classes = obj.scaffold.as_ref().unwrap();
    let gold = d.gold_spans();
    let labeled: Vec<(usize, Vec<f64>)> = gold
        .iter()
        .zip(m.internals(&p, &gold))
        .map(|(s, x)| (classes.class_of(d.concept(s, "i2b2")).unwrap(), x))
        .collect();
    let w = &m.store.tensors[m.layout.scaffold];
    let rows: Vec<Vec<f64>> = w.data.chunks(w.cols).map(<[f64]>::to_vec).collect();
    assert_abs_diff_eq!(sl, scaffold_loss(&[labeled], &rows), epsilon = 1e-10);
    assert_abs_diff_eq!(t.value(o.total), cl + 0.3 * rl + 0.3 * sl, epsilon = 1e-10);
}

#[test]
fn zero_beta_components_are_not_built() {
    let m = model(config(), 11);
    let p = m.prepare(&doc());
    let mut obj = objective();
    obj.weights.beta = [1.0, 0.0, 0.0];
    let mut t = Tape::new();
    let pv = ParamVars::load(&mut t, &m.store);
    let o = document_objective(&mut t, &pv, &m.config, &m.layout, &p, &obj).unwrap();
    assert!(o.rl.is_none() && o.sl.is_none());
    assert_eq!(o.components(&t)[1..], [0.0, 0.0]);
}

#[test]
fn analytic_gradients_match_central_differences() {
    let m = model(config(), 12);
    let docs = vec![m.prepare(&doc())];
    for beta in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.3, 0.3]] {
        let mut obj = objective();
        obj.weights.beta = beta;
        let r = gradient_check_objective(&m, &docs, &obj, 1e-5, 1e-4, 20, 1, Execution::Sequential).unwrap();
        assert!(r.passed(), "β = {beta:?}\n{}", r.to_csv());
    }
}

proptest! {
    #[test]
    fn distribution_sums_to_one_and_is_shift_invariant(
        scores in prop::collection::vec(-30.0f64..30.0, 0..8),
        c in -10.0f64..10.0,
    ) {
        let p = antecedent_distribution(&scores).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        // shifting every option, ε included, leaves P unchanged
        let mut all = vec![0.0];
        all.extend_from_slice(&scores);
        let shifted: Vec<f64> = all.iter().map(|s| s + c).collect();
        for (a, b) in tape::softmax(&all).iter().zip(tape::softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_stays_in_convex_hull(
        vs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
        seed in 0u64..1000,
    ) {
        let logits: Vec<f64> = (0..vs.len()).map(|i| ((i as u64 + seed) as f64 * 1.3).sin() * 4.0).collect();
        let x = attend(&vs, &logits);
        for k in 0..3 {
            let lo = vs.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            let hi = vs.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(x[k] >= lo - 1e-12 && x[k] <= hi + 1e-12);
        }
    }
}
