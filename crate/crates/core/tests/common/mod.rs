#![allow(dead_code)]

use ctxoie::context::{build_example, build_window, LayoutConfig, TrainingExample};
use ctxoie::corpus::{Document, Extraction, Sentence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// `n` three-sentence documents. The middle sentence of each is labeled
/// with its `(noun; verb; a noun)` tuple.
pub fn copy_task(n: usize, seed: u64) -> (Vec<Document>, Vec<Extraction>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut tuples = Vec::new();
    for d in 0..n {
        let doc_id = format!("doc{d}");
        let mut sentences = Vec::new();
        for i in 0..3 {
            let subj = format!("n{}", rng.gen_range(0..40));
            let verb = format!("v{}", rng.gen_range(0..12));
            let obj = format!("n{}", rng.gen_range(0..40));
            let tokens = vec![
                "the".into(),
                subj.clone(),
                verb.clone(),
                "a".into(),
                obj.clone(),
                ".".into(),
            ];
            if i == 1 {
                tuples.push(Extraction::new(
                    &doc_id,
                    1,
                    vec![subj],
                    vec![verb],
                    vec!["a".into(), obj],
                    1.0,
                ));
            }
            sentences.push(Sentence::new(&doc_id, i, tokens));
        }
        docs.push(Document::new(&doc_id, "synthetic", sentences).unwrap());
    }
    (docs, tuples)
}

/// One example per labeled middle sentence, with a one-sentence window.
pub fn copy_examples(docs: &[Document], tuples: &[Extraction]) -> Vec<TrainingExample> {
    let layout = LayoutConfig::default();
    docs.iter()
        .zip(tuples)
        .map(|(doc, t)| build_example(doc, &build_window(doc, 1, 1).unwrap(), t, &layout).unwrap())
        .collect()
}

/// Exhaustive maximum-weight one-to-one assignment value.
pub fn best_assignment(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = go(w, row + 1, used);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    let cols = w.first().map_or(0, Vec::len);
    go(w, 0, &mut vec![false; cols])
}

const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn slot(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<String> {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string())
        .collect()
}

/// A random tuple over a six-word vocabulary with confidence on a coarse
/// grid, so thresholds tie.
pub fn random_tuple(rng: &mut ChaCha8Rng, doc_id: &str, sent_idx: usize) -> Extraction {
    Extraction::new(
        doc_id,
        sent_idx,
        slot(rng, 1, 2),
        slot(rng, 1, 2),
        slot(rng, 0, 2),
        rng.gen_range(1..=5) as f64 / 5.0,
    )
}

/// Random predictions and gold tuples over `n_sent` sentences, each side
/// holding up to `max_per` tuples per sentence. Gold is never empty.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n_sent: usize,
    max_per: usize,
) -> (Vec<Extraction>, Vec<Extraction>) {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for s in 0..n_sent {
        for _ in 0..rng.gen_range(0..=max_per) {
            preds.push(random_tuple(rng, "d", s));
        }
        for _ in 0..rng.gen_range(0..=max_per) {
            golds.push(random_tuple(rng, "d", s));
        }
    }
    if golds.is_empty() {
        golds.push(random_tuple(rng, "d", 0));
    }
    (preds, golds)
}

/// Context indices by definition: every `j != i` in the document with
/// `|i - j| <= t`, preceding ones first.
pub fn window_by_definition(n: usize, i: usize, t: usize) -> Vec<usize> {
    let near = |j: usize| j != i && i.abs_diff(j) <= t;
    let before = (0..n).filter(|&j| j < i && near(j));
    let after = (0..n).filter(|&j| j > i && near(j));
    before.chain(after).collect()
}

pub fn plain_document(doc_id: &str, n: usize) -> Document {
    let sentences = (0..n)
        .map(|i| Sentence::new(doc_id, i, vec![format!("w{i}")]))
        .collect();
    Document::new(doc_id, "synthetic", sentences).unwrap()
}
