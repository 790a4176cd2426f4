//! Context windows and the `[source; context]` example layout.
//!
//! The encoder input for source sentence `i` with window `t` is
//!
//! ```text
//! <bos> s_i <sep> s_{i-t} <sep> ... s_{i-1} <sep> s_{i+1} <sep> ... s_{i+t} <sep>
//! ```
//!
//! with segment id 0 up to and including the first `<sep>` and 1 after it.
//! The decoder target is `<sub> subject <rel> relation <obj> object <eot>`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::CombinedLabels;
use crate::corpus::{Document, Extraction};
use crate::{Error, Result};

pub const BOS: &str = "<bos>";
pub const SEP: &str = "<sep>";
pub const SUB: &str = "<sub>";
pub const REL: &str = "<rel>";
pub const OBJ: &str = "<obj>";
pub const EOT: &str = "<eot>";

/// Maximum encoder input length used at desk scale.
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub max_len: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub doc_id: String,
    pub source: usize,
    pub t: usize,
    /// Preceding sentences ascending, then following sentences ascending.
    pub context: Vec<usize>,
}

/// The up to `t` sentences on each side of sentence `i`, clipped at the
/// document boundaries.
pub fn build_window(doc: &Document, i: usize, t: usize) -> Result<ContextWindow> {
    let n = doc.len();
    if i >= n {
        return Err(Error::IndexOutOfRange {
            doc_id: doc.doc_id.clone(),
            index: i,
            len: n,
        });
    }
    let lo = i.saturating_sub(t);
    let hi = i.saturating_add(t).min(n - 1);
    Ok(ContextWindow {
        doc_id: doc.doc_id.clone(),
        source: i,
        t,
        context: (lo..i).chain(i + 1..=hi).collect(),
    })
}

/// Encoder input with its segment ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderInput {
    pub input: Vec<String>,
    pub segment_ids: Vec<u8>,
    /// Context sentence indices that survived truncation, in layout order.
    #[serde(skip)]
    pub kept_context: Vec<usize>,
}

/// One `(sentence, tuple)` training pair in its serialized layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: Vec<String>,
    pub segment_ids: Vec<u8>,
    pub target: Vec<String>,
    /// For each target token, the index in the source sentence of its first
    /// occurrence (`null` for delimiters and tokens absent from the source).
    pub copy: Vec<Option<usize>>,
}

impl TrainingExample {
    /// Length of the segment-0 block: `<bos>`, source tokens and `<sep>`.
    pub fn source_block_len(&self) -> usize {
        source_block_len(&self.segment_ids)
    }

    pub fn source_tokens(&self) -> &[String] {
        let n = self.source_block_len();
        &self.input[1..n.saturating_sub(1).max(1)]
    }
}

/// Number of leading segment-0 positions.
pub fn source_block_len(segment_ids: &[u8]) -> usize {
    segment_ids.iter().take_while(|&&s| s == 0).count()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

/// Lays out source and context. When the input exceeds `cfg.max_len`,
/// whole context sentences are dropped outermost-first, alternating sides
/// and starting with the side whose outermost sentence is farther from the
/// source (the following side on ties). If the single remaining context
/// sentence still does not fit, its tail is cut.
pub fn build_input(
    doc: &Document,
    window: &ContextWindow,
    cfg: &LayoutConfig,
) -> Result<EncoderInput> {
    let i = window.source;
    let source = &doc
        .sentences
        .get(i)
        .ok_or_else(|| Error::IndexOutOfRange {
            doc_id: doc.doc_id.clone(),
            index: i,
            len: doc.len(),
        })?
        .tokens;
    let budget = cfg.max_len.saturating_sub(2);
    if source.len() > budget {
        return Err(Error::SourceTooLong {
            len: source.len(),
            max: budget,
        });
    }

    let mut left: Vec<usize> = window.context.iter().copied().filter(|&c| c < i).collect();
    let mut right: Vec<usize> = window.context.iter().copied().filter(|&c| c > i).collect();
    let cost = |c: usize| doc.sentences[c].len() + 1;
    let mut total: usize =
        2 + source.len() + window.context.iter().map(|&c| cost(c)).sum::<usize>();

    let mut side = match (left.first(), right.last()) {
        (Some(&l), Some(&r)) if i - l > r - i => Side::Left,
        (Some(_), None) => Side::Left,
        _ => Side::Right,
    };
    while total > cfg.max_len && left.len() + right.len() > 1 {
        let dropped = match side {
            Side::Left if !left.is_empty() => left.remove(0),
            Side::Right if !right.is_empty() => right.pop().expect("non-empty"),
            Side::Left => right.pop().expect("one side non-empty"),
            Side::Right => left.remove(0),
        };
        total -= cost(dropped);
        side = match side {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        };
    }

    let mut input = Vec::with_capacity(total.min(cfg.max_len));
    input.push(BOS.to_string());
    input.extend(source.iter().cloned());
    input.push(SEP.to_string());
    let mut segment_ids = vec![0u8; input.len()];

    let mut kept_context = Vec::new();
    for c in left.into_iter().chain(right) {
        let tokens = &doc.sentences[c].tokens;
        let room = cfg.max_len - input.len();
        if room < 2 {
            break;
        }
        let take = tokens.len().min(room - 1);
        input.extend(tokens[..take].iter().cloned());
        input.push(SEP.to_string());
        segment_ids.resize(input.len(), 1);
        kept_context.push(c);
    }
    Ok(EncoderInput {
        input,
        segment_ids,
        kept_context,
    })
}

/// `<sub> subject <rel> relation <obj> object <eot>`.
pub fn serialize_tuple(tuple: &Extraction) -> Vec<String> {
    let mut out =
        Vec::with_capacity(tuple.subject.len() + tuple.relation.len() + tuple.object.len() + 4);
    out.push(SUB.to_string());
    out.extend(tuple.subject.iter().cloned());
    out.push(REL.to_string());
    out.extend(tuple.relation.iter().cloned());
    out.push(OBJ.to_string());
    out.extend(tuple.object.iter().cloned());
    out.push(EOT.to_string());
    out
}

pub fn is_delimiter(token: &str) -> bool {
    matches!(token, SUB | REL | OBJ | EOT)
}

/// Inverse of [`serialize_tuple`]: `None` for a sequence that breaks the
/// grammar or has an empty subject or relation.
pub fn parse_tuple<S: AsRef<str>>(tokens: &[S]) -> Option<(Vec<String>, Vec<String>, Vec<String>)> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let [SUB, rest @ ..] = toks.as_slice() else {
        return None;
    };
    let rel_at = rest.iter().position(|&t| t == REL)?;
    let obj_at = rest.iter().position(|&t| t == OBJ)?;
    let eot_at = rest.iter().position(|&t| t == EOT)?;
    if !(rel_at < obj_at && obj_at < eot_at && eot_at == rest.len() - 1) {
        return None;
    }
    let subject = &rest[..rel_at];
    let relation = &rest[rel_at + 1..obj_at];
    let object = &rest[obj_at + 1..eot_at];
    let clean = |s: &[&str]| !s.iter().any(|t| is_delimiter(t));
    if subject.is_empty()
        || relation.is_empty()
        || !clean(subject)
        || !clean(relation)
        || !clean(object)
    {
        return None;
    }
    let own = |s: &[&str]| s.iter().map(|t| t.to_string()).collect();
    Some((own(subject), own(relation), own(object)))
}

pub fn build_example(
    doc: &Document,
    window: &ContextWindow,
    tuple: &Extraction,
    cfg: &LayoutConfig,
) -> Result<TrainingExample> {
    let enc = build_input(doc, window, cfg)?;
    let source = &doc.sentences[window.source].tokens;
    let target = serialize_tuple(tuple);
    let copy = target
        .iter()
        .map(|t| {
            if is_delimiter(t) {
                None
            } else {
                source.iter().position(|s| s == t)
            }
        })
        .collect();
    Ok(TrainingExample {
        input: enc.input,
        segment_ids: enc.segment_ids,
        target,
        copy,
    })
}

/// One example per labeled `(sentence, tuple)` pair, in sentence-key order.
pub fn build_dataset(
    docs: &[Document],
    labels: &CombinedLabels,
    t: usize,
    cfg: &LayoutConfig,
) -> Result<Vec<TrainingExample>> {
    let by_id: std::collections::HashMap<&str, &Document> =
        docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let entries: Vec<_> = labels.iter().collect();
    let per_sentence: Vec<Vec<TrainingExample>> = entries
        .par_iter()
        .map(|(key, labeled)| {
            let at = |e: Error| Error::AtSentence {
                doc_id: key.doc_id.clone(),
                sent_idx: key.sent_idx,
                source: Box::new(e),
            };
            let doc = by_id
                .get(key.doc_id.as_str())
                .ok_or_else(|| Error::UnknownSentence {
                    doc_id: key.doc_id.clone(),
                    sent_idx: key.sent_idx,
                })?;
            let window = build_window(doc, key.sent_idx, t).map_err(at)?;
            labeled
                .tuples
                .iter()
                .map(|tuple| build_example(doc, &window, tuple, cfg).map_err(at))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_sentence.into_iter().flatten().collect())
}

pub fn examples_to_jsonl(examples: &[TrainingExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_examples(text: &str) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample =
            serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if ex.input.len() != ex.segment_ids.len() || ex.target.len() != ex.copy.len() {
            return Err(Error::parse(lineno, "parallel arrays differ in length"));
        }
        if ex.segment_ids.iter().any(|&s| s > 1) {
            return Err(Error::parse(lineno, "segment ids must be 0 or 1"));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn save_examples(path: impl AsRef<Path>, examples: &[TrainingExample]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, examples_to_jsonl(examples)).map_err(|e| Error::io(path, e))
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    let path = path.as_ref();
    parse_examples(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn doc_from(sents: &[&str]) -> Document {
        let sentences = sents
            .iter()
            .enumerate()
            .map(|(i, s)| Sentence::new("d", i, s.split_whitespace().map(String::from).collect()))
            .collect();
        Document::new("d", "x", sentences).unwrap()
    }

    fn numbered(n: usize) -> Document {
        let sents: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = sents.iter().map(String::as_str).collect();
        doc_from(&refs)
    }

    fn joined(v: &[String]) -> String {
        v.join(" ")
    }

    #[test]
    fn window_examples() {
        let d = numbered(10);
        assert_eq!(build_window(&d, 5, 2).unwrap().context, vec![3, 4, 6, 7]);
        assert_eq!(build_window(&d, 0, 5).unwrap().context, vec![1, 2, 3, 4, 5]);
        assert_eq!(build_window(&d, 9, 3).unwrap().context, vec![6, 7, 8]);
        assert!(build_window(&d, 4, 0).unwrap().context.is_empty());
        assert!(build_window(&d, 10, 1).is_err());
        assert_eq!(build_window(&d, 5, usize::MAX).unwrap().context.len(), 9);
    }

    #[test]
    fn layout_with_one_context_sentence() {
        let d = doc_from(&["a b c", "d e"]);
        let w = build_window(&d, 0, 1).unwrap();
        let tuple = Extraction::from_strs("d", 0, "a", "b", "c", 1.0);
        let ex = build_example(&d, &w, &tuple, &LayoutConfig::default()).unwrap();
        assert_eq!(joined(&ex.input), "<bos> a b c <sep> d e <sep>");
        assert_eq!(ex.segment_ids, vec![0, 0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(joined(&ex.target), "<sub> a <rel> b <obj> c <eot>");
        assert_eq!(
            ex.copy,
            vec![None, Some(0), None, Some(1), None, Some(2), None]
        );
        assert_eq!(ex.source_block_len(), 5);
        assert_eq!(joined(ex.source_tokens()), "a b c");
    }

    #[test]
    fn layout_without_context() {
        let d = doc_from(&["a b c", "d e"]);
        let w = build_window(&d, 0, 0).unwrap();
        let tuple = Extraction::from_strs("d", 0, "a", "zz", "", 1.0);
        let ex = build_example(&d, &w, &tuple, &LayoutConfig::default()).unwrap();
        assert_eq!(joined(&ex.input), "<bos> a b c <sep>");
        assert!(ex.segment_ids.iter().all(|&s| s == 0));
        assert_eq!(ex.copy, vec![None, Some(0), None, None, None, None]);
    }

    #[test]
    fn outermost_context_dropped_first() {
        // i = 2, t = 2: left [0, 1], right [3, 4]; tie on distance -> right first
        let d = doc_from(&["l0 l0", "l1 l1", "s", "r3 r3", "r4 r4"]);
        let w = build_window(&d, 2, 2).unwrap();
        let full = build_input(&d, &w, &LayoutConfig { max_len: 100 }).unwrap();
        assert_eq!(full.input.len(), 3 + 4 * 3);
        assert_eq!(full.kept_context, vec![0, 1, 3, 4]);

        let drop_one = build_input(&d, &w, &LayoutConfig { max_len: 14 }).unwrap();
        assert_eq!(drop_one.kept_context, vec![0, 1, 3]);
        let drop_two = build_input(&d, &w, &LayoutConfig { max_len: 11 }).unwrap();
        assert_eq!(drop_two.kept_context, vec![1, 3]);
        let drop_three = build_input(&d, &w, &LayoutConfig { max_len: 8 }).unwrap();
        assert_eq!(drop_three.kept_context, vec![1]);
        assert_eq!(joined(&drop_three.input), "<bos> s <sep> l1 l1 <sep>");
        // the last sentence is cut at the tail
        let cut = build_input(&d, &w, &LayoutConfig { max_len: 5 }).unwrap();
        assert_eq!(joined(&cut.input), "<bos> s <sep> l1 <sep>");
        assert_eq!(cut.segment_ids, vec![0, 0, 0, 1, 1]);
        let none = build_input(&d, &w, &LayoutConfig { max_len: 4 }).unwrap();
        assert_eq!(joined(&none.input), "<bos> s <sep>");
    }

    #[test]
    fn farther_side_dropped_first() {
        // i = 1, t = 3: left [0] (distance 1), right [2, 3, 4] (distance 3)
        let d = doc_from(&["a", "s", "b", "c", "e"]);
        let w = build_window(&d, 1, 3).unwrap();
        let ex = build_input(&d, &w, &LayoutConfig { max_len: 9 }).unwrap();
        assert_eq!(ex.kept_context, vec![0, 2, 3]);
        // next drop alternates to the left side
        let ex = build_input(&d, &w, &LayoutConfig { max_len: 7 }).unwrap();
        assert_eq!(ex.kept_context, vec![2, 3]);
    }

    #[test]
    fn source_too_long() {
        let d = doc_from(&["a b c d"]);
        let w = build_window(&d, 0, 0).unwrap();
        assert!(matches!(
            build_input(&d, &w, &LayoutConfig { max_len: 5 }),
            Err(Error::SourceTooLong { len: 4, max: 3 })
        ));
        assert!(build_input(&d, &w, &LayoutConfig { max_len: 6 }).is_ok());
    }

    #[test]
    fn tuple_grammar() {
        let t = Extraction::from_strs("d", 0, "he", "ate", "", 1.0);
        let ser = serialize_tuple(&t);
        assert_eq!(
            parse_tuple(&ser),
            Some((vec!["he".into()], vec!["ate".into()], vec![]))
        );
        for bad in [
            "<sub> he <obj> x <rel> ate <eot>",
            "<sub> <rel> ate <obj> <eot>",
            "<sub> he <rel> ate <obj> x",
            "he <rel> ate <obj> x <eot>",
            "<sub> he <rel> ate <obj> x <eot> y",
            "<sub> he <rel> ate <sub> <obj> x <eot>",
        ] {
            let toks: Vec<&str> = bad.split(' ').collect();
            assert_eq!(parse_tuple(&toks), None, "{bad}");
        }
    }

    #[test]
    fn dataset_expands_tuples() {
        use crate::bootstrap::combine;
        use crate::corpus::SentenceKey;
        let d = doc_from(&["a b", "c d", "e f"]);
        let main = vec![
            Extraction::from_strs("d", 1, "c", "d", "", 0.5),
            Extraction::from_strs("d", 1, "d", "c", "", 0.5),
        ];
        let universe: Vec<SentenceKey> = (0..3).map(|i| SentenceKey::new("d", i)).collect();
        let labels = combine(&main, &[], &universe).unwrap();
        let exs = build_dataset(&[d], &labels, 1, &LayoutConfig::default()).unwrap();
        assert_eq!(exs.len(), 2);
        assert_eq!(exs[0].input, exs[1].input);
        assert_eq!(joined(&exs[0].input), "<bos> c d <sep> a b <sep> e f <sep>");
        assert_ne!(exs[0].target, exs[1].target);
    }

    #[test]
    fn jsonl_schema() {
        let ex = TrainingExample {
            input: vec!["<bos>".into(), "a".into(), "<sep>".into()],
            segment_ids: vec![0, 0, 0],
            target: vec!["<sub>".into(), "a".into()],
            copy: vec![None, Some(0)],
        };
        let line = examples_to_jsonl(std::slice::from_ref(&ex));
        assert_eq!(
            line,
            "{\"input\":[\"<bos>\",\"a\",\"<sep>\"],\"segment_ids\":[0,0,0],\"target\":[\"<sub>\",\"a\"],\"copy\":[null,0]}\n"
        );
        assert_eq!(parse_examples(&line).unwrap(), vec![ex]);
        assert!(
            parse_examples("{\"input\":[\"a\"],\"segment_ids\":[],\"target\":[],\"copy\":[]}")
                .is_err()
        );
    }
}
