mod common;

use std::collections::BTreeSet;

use common::{plain_document, random_instance, random_tuple, window_by_definition};
use ctxoie::bootstrap::{combine, label_stats, CombinedLabels, Provenance};
use ctxoie::context::build_window;
use ctxoie::corpus::{
    corpus_stats, documents_to_jsonl, extractions_to_tsv, parse_documents_jsonl, parse_extractions,
    Document, Extraction, Sentence, SentenceKey,
};
use ctxoie::extractor::{Coarse, PatternExtractor, RelationPattern, Span};
use ctxoie::scorer::{score_extractions, MatchMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALPHABET: [Coarse; 5] = [Coarse::V, Coarse::W, Coarse::P, Coarse::N, Coarse::Other];

/// Every class sequence of length `len` over [`ALPHABET`].
fn all_sequences(len: usize) -> impl Iterator<Item = Vec<Coarse>> {
    (0..ALPHABET.len().pow(len as u32)).map(move |mut code| {
        (0..len)
            .map(|_| {
                let c = ALPHABET[code % ALPHABET.len()];
                code /= ALPHABET.len();
                c
            })
            .collect()
    })
}

/// The relation language written out word by word: `W^a V` and
/// `W^a V W^b P`, up to `max_len` classes.
fn relation_language(max_len: usize) -> BTreeSet<Vec<u8>> {
    let code = |c: Coarse| ALPHABET.iter().position(|&a| a == c).unwrap() as u8;
    let (v, w, p) = (code(Coarse::V), code(Coarse::W), code(Coarse::P));
    let mut words = BTreeSet::new();
    for a in 0..max_len {
        let mut base = vec![w; a];
        base.push(v);
        words.insert(base.clone());
        for b in 0..max_len.saturating_sub(a + 1) {
            let mut long = base.clone();
            long.extend(std::iter::repeat_n(w, b));
            long.push(p);
            words.insert(long);
        }
    }
    words.retain(|x| x.len() <= max_len);
    words
}

fn encode(classes: &[Coarse]) -> Vec<u8> {
    classes
        .iter()
        .map(|c| ALPHABET.iter().position(|a| a == c).unwrap() as u8)
        .collect()
}

/// Leftmost-longest scan against the word list, merging touching spans.
fn spans_by_language(classes: &[Coarse], language: &BTreeSet<Vec<u8>>) -> Vec<Span> {
    let code = encode(classes);
    let mut spans: Vec<Span> = Vec::new();
    let mut pos = 0;
    while pos < code.len() {
        let end = (pos + 1..=code.len())
            .rev()
            .find(|&e| language.contains(&code[pos..e]));
        match end {
            Some(e) => {
                if spans.last().is_some_and(|s| s.1 == pos) {
                    spans.last_mut().unwrap().1 = e;
                } else {
                    spans.push((pos, e));
                }
                pos = e;
            }
            None => pos += 1,
        }
    }
    spans
}

#[test]
fn relation_pattern_matches_the_written_out_language() {
    let language = relation_language(8);
    let pattern = RelationPattern::new();
    let mut checked = 0;
    for len in 0..=8 {
        for seq in all_sequences(len) {
            assert_eq!(
                pattern.accepts(&seq),
                language.contains(&encode(&seq)),
                "{seq:?}"
            );
            assert_eq!(
                pattern.find_spans(&seq),
                spans_by_language(&seq, &language),
                "{seq:?}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, (0..=8).map(|n| 5usize.pow(n)).sum::<usize>());
}

const TAGS: [&str; 9] = ["VBZ", "RB", "MD", "IN", "NN", "NNS", "DT", "JJ", ","];

fn tagged_sentence(tags: &[usize]) -> Sentence {
    let tokens = (0..tags.len()).map(|i| format!("t{i}")).collect();
    let tags = tags.iter().map(|&t| TAGS[t].to_string()).collect();
    Sentence::new("d", 0, tokens).with_tags(tags)
}

/// Position of `slot` as a contiguous run of the sentence tokens `t0 t1 ...`.
fn span_of(slot: &[String]) -> Option<Span> {
    let idx: Vec<usize> = slot.iter().map(|t| t[1..].parse().unwrap()).collect();
    let first = *idx.first()?;
    idx.iter()
        .enumerate()
        .all(|(k, &i)| i == first + k)
        .then(|| (first, first + idx.len()))
}

proptest! {
    #[test]
    fn extracted_slots_are_ordered_contiguous_spans(
        tags in prop::collection::vec(0..TAGS.len(), 0..16)
    ) {
        let sentence = tagged_sentence(&tags);
        let out = PatternExtractor::new().extract_sentence(&sentence).unwrap();
        let mut last_rel_end = 0;
        for ex in &out {
            let sub = span_of(&ex.subject).expect("non-empty subject");
            let rel = span_of(&ex.relation).expect("non-empty relation");
            prop_assert!(sub.1 <= rel.0);
            prop_assert!(rel.0 >= last_rel_end);
            last_rel_end = rel.1;
            if let Some(obj) = span_of(&ex.object) {
                prop_assert!(rel.1 <= obj.0);
            }
            prop_assert!((0.0..=1.0).contains(&ex.confidence));
        }
    }

    #[test]
    fn extractions_survive_a_tsv_round_trip(seed in any::<u64>(), n in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Extraction> = (0..n).map(|i| random_tuple(&mut rng, "doc", i % 3)).collect();
        let xs: Vec<Extraction> = xs.into_iter().filter(|e| !e.subject.is_empty()).collect();
        let text = extractions_to_tsv(&xs);
        let back = parse_extractions(&text).unwrap();
        prop_assert_eq!(&back, &xs);
        prop_assert_eq!(extractions_to_tsv(&back), text);
    }

    #[test]
    fn documents_survive_a_jsonl_round_trip(
        shape in prop::collection::vec(prop::collection::vec(1usize..5, 1..5), 1..4)
    ) {
        let docs: Vec<Document> = shape
            .iter()
            .enumerate()
            .map(|(d, lens)| {
                let id = format!("doc{d}");
                let sentences = lens
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| Sentence::new(&id, i, (0..n).map(|k| format!("w{k}")).collect()))
                    .collect();
                Document::new(&id, "test", sentences).unwrap()
            })
            .collect();
        let text = documents_to_jsonl(&docs);
        prop_assert_eq!(parse_documents_jsonl(&text).unwrap(), docs);
    }

    #[test]
    fn stats_count_every_unit(lens in prop::collection::vec(prop::collection::vec(1usize..30, 1..6), 1..5)) {
        let docs: Vec<Document> = lens
            .iter()
            .enumerate()
            .map(|(d, ls)| {
                let id = format!("doc{d}");
                let sentences = ls
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| Sentence::new(&id, i, vec!["x".to_string(); n]))
                    .collect();
                Document::new(&id, "test", sentences).unwrap()
            })
            .collect();
        let st = corpus_stats(&docs, &[]).unwrap();
        let all: Vec<usize> = lens.iter().flatten().copied().collect();
        prop_assert_eq!(st.n_doc, lens.len());
        prop_assert_eq!(st.n_sent, all.len());
        let sl = st.sentence_length.unwrap();
        prop_assert_eq!(sl.min as usize, *all.iter().min().unwrap());
        prop_assert_eq!(sl.max as usize, *all.iter().max().unwrap());
        let mean = all.iter().sum::<usize>() as f64 / all.len() as f64;
        prop_assert!((sl.average - mean).abs() < 1e-12);
        prop_assert!(sl.min <= sl.average && sl.average <= sl.max);
    }

    #[test]
    fn combined_labels_follow_the_per_sentence_rule(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let universe: Vec<SentenceKey> = (0..6).map(|i| SentenceKey::new("d", i)).collect();
        let (main, fallback) = random_instance(&mut rng, 6, 2);
        let c = combine(&main, &fallback, &universe).unwrap();
        for key in &universe {
            let m: Vec<&Extraction> = main.iter().filter(|e| &e.key() == key).collect();
            let f: Vec<&Extraction> = fallback.iter().filter(|e| &e.key() == key).collect();
            match c.get(key) {
                Some(l) if !m.is_empty() => {
                    prop_assert_eq!(l.provenance, Provenance::Main);
                    prop_assert_eq!(l.tuples.iter().collect::<Vec<_>>(), m);
                }
                Some(l) => {
                    prop_assert_eq!(l.provenance, Provenance::Fallback);
                    prop_assert_eq!(l.tuples.iter().collect::<Vec<_>>(), f);
                }
                None => prop_assert!(m.is_empty() && f.is_empty()),
            }
        }
        let again = combine(&c.extractions(), &fallback, &universe).unwrap();
        prop_assert_eq!(again.extractions(), c.extractions());
        let st = label_stats(&c);
        prop_assert_eq!(st.n_tuple, c.extractions().len());
        prop_assert_eq!(st.main_sent + st.fallback_sent, st.n_sent);
        prop_assert_eq!(CombinedLabels::from_main(main.clone()).len(), main.iter().map(Extraction::key).collect::<BTreeSet<_>>().len());
    }

    #[test]
    fn scoring_ignores_prediction_order(seed in any::<u64>(), lenient in any::<bool>()) {
        let mode = if lenient { MatchMode::BinaryLenient } else { MatchMode::TokenGraded };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, golds) = random_instance(&mut rng, 3, 4);
        let base = score_extractions(&preds, &golds, mode).unwrap();
        let mut rev = preds.clone();
        rev.reverse();
        let mut rot = preds.clone();
        rot.rotate_left(preds.len() / 2);
        prop_assert_eq!(&score_extractions(&rev, &golds, mode).unwrap(), &base);
        prop_assert_eq!(&score_extractions(&rot, &golds, mode).unwrap(), &base);
        for c in &base.curve {
            prop_assert!((0.0..=1.0).contains(&c.precision));
            prop_assert!((0.0..=1.0).contains(&c.recall));
        }
        prop_assert!((0.0..=1.0).contains(&base.auc));
    }
}

#[test]
fn windows_match_the_set_definition() {
    for n in 1..=10 {
        let doc = plain_document("d", n);
        for i in 0..n {
            for t in 0..=6 {
                let w = build_window(&doc, i, t).unwrap();
                assert_eq!(
                    w.context,
                    window_by_definition(n, i, t),
                    "n={n} i={i} t={t}"
                );
                assert!(w.context.len() <= 2 * t);
            }
        }
        assert!(build_window(&doc, n, 1).is_err());
    }
}
