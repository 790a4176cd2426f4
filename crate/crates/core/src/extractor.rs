//! A small part-of-speech pattern extractor.
//!
//! Relation phrases are verb-anchored spans over coarse tag classes:
//!
//! ```text
//! relation := W* V | W* V W* P
//! ```
//!
//! matched leftmost-longest from left to right, with adjacent matches merged
//! ("wants to extend", "is often used"). A leading `W*` run absorbs modals
//! and adverbs directly in front of the verb ("can be"). Arguments are the
//! nearest noun phrases `DET? ADJ* N+` on either side of the relation.
//!
//! Tagging is not done here: sentences must carry Penn-Treebank-style tags.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Extraction, Sentence};
use crate::{Error, Result};

/// Coarse part-of-speech classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coarse {
    /// Verbs (`VB*`).
    V,
    /// Adverbs and modals (`RB*`, `MD`).
    W,
    /// Prepositions, `to` and particles (`IN`, `TO`, `RP`).
    P,
    /// Nouns, personal pronouns and numbers (`NN*`, `PRP`, `CD`).
    N,
    Det,
    Adj,
    Other,
}

/// Maps one fine-grained tag to its coarse class. Unknown tags map to
/// [`Coarse::Other`].
pub fn coarse_class(tag: &str) -> Coarse {
    match tag {
        t if t.starts_with("VB") => Coarse::V,
        "IN" | "TO" | "RP" => Coarse::P,
        t if t.starts_with("NN") => Coarse::N,
        "PRP" | "CD" => Coarse::N,
        "DT" => Coarse::Det,
        t if t.starts_with("JJ") => Coarse::Adj,
        t if t.starts_with("RB") => Coarse::W,
        "MD" => Coarse::W,
        _ => Coarse::Other,
    }
}

pub fn coarse_tag<S: AsRef<str>>(tags: &[S]) -> Vec<Coarse> {
    tags.iter().map(|t| coarse_class(t.as_ref())).collect()
}

/// Half-open token span `[start, end)`.
pub type Span = (usize, usize);

/// The relation-phrase automaton.
#[derive(Debug, Clone, Copy, Default)]
pub struct RelationPattern {
    /// Merge relation spans that touch.
    pub merge_adjacent: bool,
}

impl RelationPattern {
    pub fn new() -> Self {
        RelationPattern {
            merge_adjacent: true,
        }
    }

    /// Length of the longest match starting at `start`, if any.
    pub fn longest_match_at(&self, classes: &[Coarse], start: usize) -> Option<usize> {
        let mut pos = start;
        while pos < classes.len() && classes[pos] == Coarse::W {
            pos += 1;
        }
        if pos >= classes.len() || classes[pos] != Coarse::V {
            return None;
        }
        let verb_end = pos + 1;
        let mut after = verb_end;
        while after < classes.len() && classes[after] == Coarse::W {
            after += 1;
        }
        if after < classes.len() && classes[after] == Coarse::P {
            Some(after + 1 - start)
        } else {
            Some(verb_end - start)
        }
    }

    /// Whether the whole of `classes` is a relation phrase.
    pub fn accepts(&self, classes: &[Coarse]) -> bool {
        // W* V, or W* V W* P
        let mut rest = classes;
        while let [Coarse::W, tail @ ..] = rest {
            rest = tail;
        }
        let [Coarse::V, tail @ ..] = rest else {
            return false;
        };
        rest = tail;
        if rest.is_empty() {
            return true;
        }
        while let [Coarse::W, tail @ ..] = rest {
            rest = tail;
        }
        rest == [Coarse::P]
    }

    /// Leftmost-longest, non-overlapping matches, merged when adjacent.
    pub fn find_spans(&self, classes: &[Coarse]) -> Vec<Span> {
        let mut spans: Vec<Span> = Vec::new();
        let mut pos = 0;
        while pos < classes.len() {
            match self.longest_match_at(classes, pos) {
                Some(len) => {
                    let span = (pos, pos + len);
                    match spans.last_mut() {
                        Some(last) if self.merge_adjacent && last.1 == span.0 => last.1 = span.1,
                        _ => spans.push(span),
                    }
                    pos += len;
                }
                None => pos += 1,
            }
        }
        spans
    }
}

/// Maximal `DET? ADJ* N+` spans, left to right.
pub fn noun_phrases(classes: &[Coarse]) -> Vec<Span> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < classes.len() {
        let mut p = pos;
        if classes[p] == Coarse::Det {
            p += 1;
        }
        while p < classes.len() && classes[p] == Coarse::Adj {
            p += 1;
        }
        let nouns_start = p;
        while p < classes.len() && classes[p] == Coarse::N {
            p += 1;
        }
        if p > nouns_start {
            out.push((pos, p));
            pos = p;
        } else {
            pos += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct PatternExtractor {
    pattern: RelationPattern,
}

const BASE_CONFIDENCE: f64 = 0.5;
const BOTH_ARGUMENTS_BONUS: f64 = 0.1;

impl PatternExtractor {
    pub fn new() -> Self {
        PatternExtractor {
            pattern: RelationPattern::new(),
        }
    }

    /// Extracts one tuple per relation span that has a subject noun phrase
    /// to its left. The object is the nearest noun phrase to the right, or
    /// empty.
    pub fn extract_sentence(&self, sentence: &Sentence) -> Result<Vec<Extraction>> {
        let tags = sentence
            .tags
            .as_ref()
            .ok_or_else(|| Error::InvalidSentence {
                doc_id: sentence.doc_id.clone(),
                index: sentence.index,
                message: "sentence has no POS tags".into(),
            })?;
        if tags.len() != sentence.tokens.len() {
            return Err(Error::InvalidSentence {
                doc_id: sentence.doc_id.clone(),
                index: sentence.index,
                message: "tag count differs from token count".into(),
            });
        }
        let classes = coarse_tag(tags);
        let nps = noun_phrases(&classes);
        let slice = |(s, e): Span| sentence.tokens[s..e].to_vec();

        let mut out = Vec::new();
        for rel in self.pattern.find_spans(&classes) {
            let Some(subject) = nps.iter().rev().find(|np| np.1 <= rel.0) else {
                continue;
            };
            let object = nps.iter().find(|np| np.0 >= rel.1);
            let mut confidence = BASE_CONFIDENCE;
            if object.is_some() {
                confidence += BOTH_ARGUMENTS_BONUS;
            }
            out.push(Extraction::new(
                sentence.doc_id.clone(),
                sentence.index,
                slice(*subject),
                slice(rel),
                object.map(|&o| slice(o)).unwrap_or_default(),
                confidence.min(1.0),
            ));
        }
        Ok(out)
    }

    /// Runs over many sentences in parallel; output follows input order.
    pub fn extract_all(&self, sentences: &[Sentence]) -> Result<Vec<Extraction>> {
        let per: Vec<Vec<Extraction>> = sentences
            .par_iter()
            .map(|s| self.extract_sentence(s))
            .collect::<Result<_>>()?;
        Ok(per.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Coarse::*;

    fn tagged(words: &str, tags: &str) -> Sentence {
        let tokens = words.split_whitespace().map(String::from).collect();
        let tags = tags.split_whitespace().map(String::from).collect();
        Sentence::new("d", 0, tokens).with_tags(tags)
    }

    fn strs(v: &[String]) -> String {
        v.join(" ")
    }

    #[test]
    fn coarse_table() {
        assert_eq!(coarse_tag(&["NNP", "MD", "VB"]), vec![N, W, V]);
        assert_eq!(coarse_tag(&["VBZ", "RB", "IN"]), vec![V, W, P]);
        assert_eq!(coarse_tag(&["XYZ"]), vec![Other]);
        assert_eq!(
            coarse_tag(&["TO", "RP", "PRP", "CD", "DT", "JJS", "RBR", "NNS", "VBN", "."]),
            vec![P, P, N, N, Det, Adj, W, N, V, Other]
        );
    }

    #[test]
    fn pattern_language() {
        let p = RelationPattern::new();
        assert!(p.accepts(&[V]));
        assert!(p.accepts(&[V, P]));
        assert!(p.accepts(&[V, W, W, P]));
        assert!(p.accepts(&[W, V]));
        assert!(!p.accepts(&[V, W]));
        assert!(!p.accepts(&[P]));
        assert!(!p.accepts(&[V, P, P]));
        assert!(!p.accepts(&[]));
    }

    #[test]
    fn adjacent_matches_merge() {
        // wants(V) to(P) extend(V)
        assert_eq!(
            RelationPattern::new().find_spans(&[N, V, P, V, N]),
            vec![(1, 4)]
        );
        // is(V) often(W) used(V)
        assert_eq!(
            RelationPattern::new().find_spans(&[N, V, W, V, N]),
            vec![(1, 4)]
        );
        let unmerged = RelationPattern {
            merge_adjacent: false,
        };
        assert_eq!(unmerged.find_spans(&[N, V, P, V, N]), vec![(1, 3), (3, 4)]);
    }

    #[test]
    fn node_b_example() {
        let s = tagged(
            "Node-B can be a device a cellular base station",
            "NNP MD VB DT NN DT JJ NN NN",
        );
        let exs = PatternExtractor::new().extract_sentence(&s).unwrap();
        assert_eq!(exs.len(), 1);
        assert_eq!(strs(&exs[0].subject), "Node-B");
        assert_eq!(strs(&exs[0].relation), "can be");
        assert_eq!(strs(&exs[0].object), "a device");
        assert!((exs[0].confidence - 0.6).abs() < 1e-12);
    }

    #[test]
    fn parsing_is_fun() {
        let s = tagged("Parsing is fun", "NNP VBZ JJ");
        let exs = PatternExtractor::new().extract_sentence(&s).unwrap();
        assert_eq!(exs.len(), 1);
        assert_eq!(strs(&exs[0].subject), "Parsing");
        assert_eq!(strs(&exs[0].relation), "is");
        assert!(exs[0].object.is_empty());
        assert_eq!(exs[0].confidence, 0.5);
    }

    #[test]
    fn all_nouns_yield_nothing() {
        let s = tagged("base station network", "NN NN NN");
        assert!(PatternExtractor::new()
            .extract_sentence(&s)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn relation_without_subject_is_skipped() {
        let s = tagged("Run the test", "VB DT NN");
        assert!(PatternExtractor::new()
            .extract_sentence(&s)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn untagged_sentence_is_rejected() {
        let s = Sentence::new("d", 0, vec!["a".into()]);
        assert!(PatternExtractor::new().extract_sentence(&s).is_err());
    }

    #[test]
    fn two_relations() {
        let s = tagged(
            "The device sends a signal and the station receives it",
            "DT NN VBZ DT NN CC DT NN VBZ PRP",
        );
        let exs = PatternExtractor::new().extract_sentence(&s).unwrap();
        let got: Vec<_> = exs
            .iter()
            .map(|e| (strs(&e.subject), strs(&e.relation), strs(&e.object)))
            .collect();
        assert_eq!(
            got,
            vec![
                ("The device".into(), "sends".into(), "a signal".into()),
                ("the station".into(), "receives".into(), "it".into()),
            ]
        );
    }
}
