//! Documents, extractions and the file formats that carry them.
//!
//! Input is always pre-tokenized: a token is a whitespace-free unit and is
//! never re-tokenized here. Every token is NFC-normalized on load so that
//! visually identical strings compare equal downstream.
//!
//! File formats:
//!
//! * `documents.jsonl`: one object per line,
//!   `{"doc_id": str, "domain": str, "sentences": [[str]], "tags": [[str]]?}`.
//! * plain text: one sentence per line, tokens separated by spaces, a blank
//!   line between documents.
//! * extraction TSV: `doc_id, sent_idx, confidence, subject, relation, object`
//!   with slot tokens joined by single spaces (the object may be empty).
//! * gold TSV: the same without the confidence column.
//! * tagged CoNLL: a `# doc=<id> sent=<idx>` header, then `token<TAB>tag`
//!   lines, then a blank line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

/// Identifies one sentence of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceKey {
    pub doc_id: String,
    pub sent_idx: usize,
}

impl SentenceKey {
    pub fn new(doc_id: impl Into<String>, sent_idx: usize) -> Self {
        SentenceKey {
            doc_id: doc_id.into(),
            sent_idx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<String>,
    pub tags: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(doc_id: impl Into<String>, index: usize, tokens: Vec<String>) -> Self {
        Sentence {
            doc_id: doc_id.into(),
            index,
            tokens,
            tags: None,
        }
    }

    pub fn with_tags(mut self, tags: Vec<String>) -> Self {
        self.tags = Some(tags);
        self
    }

    pub fn key(&self) -> SentenceKey {
        SentenceKey::new(self.doc_id.clone(), self.index)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let invalid = |message: &str| Error::InvalidSentence {
            doc_id: self.doc_id.clone(),
            index: self.index,
            message: message.to_string(),
        };
        if self.tokens.is_empty() {
            return Err(invalid("no tokens"));
        }
        if self.tokens.iter().any(|t| !is_valid_token(t)) {
            return Err(invalid("empty token or token containing whitespace"));
        }
        if let Some(tags) = &self.tags {
            if tags.len() != self.tokens.len() {
                return Err(invalid("tag count differs from token count"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub domain: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Builds a document, checking that sentence indices run `0..N` in order
    /// and that every sentence has at least one token.
    pub fn new(
        doc_id: impl Into<String>,
        domain: impl Into<String>,
        sentences: Vec<Sentence>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        if sentences.is_empty() {
            return Err(Error::EmptyDocument(doc_id));
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.index != i || s.doc_id != doc_id {
                return Err(Error::InvalidSentence {
                    doc_id: s.doc_id.clone(),
                    index: s.index,
                    message: format!("expected {doc_id}#{i}"),
                });
            }
            s.validate()?;
        }
        Ok(Document {
            doc_id,
            domain: domain.into(),
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// A `(subject; relation; object)` tuple extracted from one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub doc_id: String,
    pub sent_idx: usize,
    pub subject: Vec<String>,
    pub relation: Vec<String>,
    pub object: Vec<String>,
    pub confidence: f64,
}

impl Extraction {
    pub fn new(
        doc_id: impl Into<String>,
        sent_idx: usize,
        subject: Vec<String>,
        relation: Vec<String>,
        object: Vec<String>,
        confidence: f64,
    ) -> Self {
        Extraction {
            doc_id: doc_id.into(),
            sent_idx,
            subject,
            relation,
            object,
            confidence,
        }
    }

    pub fn key(&self) -> SentenceKey {
        SentenceKey::new(self.doc_id.clone(), self.sent_idx)
    }

    /// Same tuple with the slots given as space-separated strings.
    pub fn from_strs(
        doc_id: &str,
        sent_idx: usize,
        subject: &str,
        relation: &str,
        object: &str,
        confidence: f64,
    ) -> Self {
        Extraction::new(
            doc_id,
            sent_idx,
            split_slot(subject),
            split_slot(relation),
            split_slot(object),
            confidence,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject.is_empty() {
            return Err(Error::InvalidExtraction("empty subject".into()));
        }
        if self.relation.is_empty() {
            return Err(Error::InvalidExtraction("empty relation".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidExtraction(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        let slots = [&self.subject, &self.relation, &self.object];
        if slots.iter().any(|s| s.iter().any(|t| !is_valid_token(t))) {
            return Err(Error::InvalidExtraction(
                "empty token or token containing whitespace".into(),
            ));
        }
        Ok(())
    }
}

fn is_valid_token(t: &str) -> bool {
    !t.is_empty() && !t.chars().any(char::is_whitespace)
}

/// NFC-normalizes a token.
pub fn normalize_token(token: &str) -> String {
    token.nfc().collect()
}

fn split_slot(slot: &str) -> Vec<String> {
    slot.split_whitespace().map(normalize_token).collect()
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Documents

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Jsonl,
    Plain,
}

#[derive(Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    #[serde(default)]
    domain: String,
    sentences: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<Vec<String>>>,
}

pub fn load_documents(path: impl AsRef<Path>, format: DocFormat) -> Result<Vec<Document>> {
    let text = read_file(path.as_ref())?;
    match format {
        DocFormat::Jsonl => parse_documents_jsonl(&text),
        DocFormat::Plain => parse_documents_plain(&text),
    }
}

pub fn parse_documents_jsonl(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if record.sentences.is_empty() {
            return Err(Error::parse(
                lineno,
                format!("empty document: {}", record.doc_id),
            ));
        }
        if let Some(tags) = &record.tags {
            if tags.len() != record.sentences.len() {
                return Err(Error::parse(lineno, "tags and sentences differ in length"));
            }
        }
        let mut sentences = Vec::with_capacity(record.sentences.len());
        for (i, tokens) in record.sentences.into_iter().enumerate() {
            let tokens = tokens.iter().map(|t| normalize_token(t)).collect();
            let mut sentence = Sentence::new(record.doc_id.clone(), i, tokens);
            if let Some(tags) = &record.tags {
                sentence.tags = Some(tags[i].clone());
            }
            sentences.push(sentence);
        }
        let doc = Document::new(record.doc_id, record.domain, sentences)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Plain text: documents get ids `doc0`, `doc1`, ... in file order.
pub fn parse_documents_plain(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut current: Vec<Sentence> = Vec::new();
    let flush = |current: &mut Vec<Sentence>, docs: &mut Vec<Document>| -> Result<()> {
        if !current.is_empty() {
            let doc_id = format!("doc{}", docs.len());
            let sentences = std::mem::take(current)
                .into_iter()
                .map(|mut s| {
                    s.doc_id = doc_id.clone();
                    s
                })
                .collect();
            docs.push(Document::new(doc_id, "", sentences)?);
        }
        Ok(())
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut docs)?;
            continue;
        }
        let tokens = split_slot(line);
        let index = current.len();
        current.push(Sentence::new("", index, tokens));
    }
    flush(&mut current, &mut docs)?;
    Ok(docs)
}

pub fn documents_to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        let tags = if doc.sentences.iter().all(|s| s.tags.is_some()) {
            Some(
                doc.sentences
                    .iter()
                    .map(|s| s.tags.clone().unwrap_or_default())
                    .collect(),
            )
        } else {
            None
        };
        let record = DocumentRecord {
            doc_id: doc.doc_id.clone(),
            domain: doc.domain.clone(),
            sentences: doc.sentences.iter().map(|s| s.tokens.clone()).collect(),
            tags,
        };
        out.push_str(&serde_json::to_string(&record).expect("document record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_documents(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    write_file(path.as_ref(), &documents_to_jsonl(docs))
}

/// All `(doc_id, sent_idx)` keys of a corpus, in document order.
pub fn sentence_universe(docs: &[Document]) -> Vec<SentenceKey> {
    docs.iter()
        .flat_map(|d| d.sentences.iter().map(Sentence::key))
        .collect()
}

// ---------------------------------------------------------------------------
// Tagged CoNLL

/// Reads pre-tagged sentences. Sentence order is file order.
pub fn parse_tagged_conll(text: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut header: Option<(usize, SentenceKey)> = None;
    let mut tokens = Vec::new();
    let mut tags = Vec::new();

    let mut finish = |header: &mut Option<(usize, SentenceKey)>,
                      tokens: &mut Vec<String>,
                      tags: &mut Vec<String>|
     -> Result<()> {
        if let Some((line, key)) = header.take() {
            if tokens.is_empty() {
                return Err(Error::parse(line, "sentence without tokens"));
            }
            out.push(
                Sentence::new(key.doc_id, key.sent_idx, std::mem::take(tokens))
                    .with_tags(std::mem::take(tags)),
            );
        }
        Ok(())
    };

    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if let Some(rest) = line.strip_prefix('#') {
            finish(&mut header, &mut tokens, &mut tags)?;
            header = Some((lineno, parse_conll_header(rest, lineno)?));
        } else if line.trim().is_empty() {
            finish(&mut header, &mut tokens, &mut tags)?;
        } else {
            if header.is_none() {
                return Err(Error::parse(lineno, "token line before a '# doc=' header"));
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(tok), Some(tag), None) if is_valid_token(tok) && !tag.is_empty() => {
                    tokens.push(normalize_token(tok));
                    tags.push(tag.to_string());
                }
                _ => return Err(Error::parse(lineno, "expected 'token<TAB>tag'")),
            }
        }
    }
    finish(&mut header, &mut tokens, &mut tags)?;
    Ok(out)
}

fn parse_conll_header(rest: &str, lineno: usize) -> Result<SentenceKey> {
    let mut doc = None;
    let mut sent = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("doc=") {
            doc = Some(v.to_string());
        } else if let Some(v) = field.strip_prefix("sent=") {
            sent = Some(
                v.parse::<usize>()
                    .map_err(|_| Error::parse(lineno, format!("bad sentence index '{v}'")))?,
            );
        }
    }
    match (doc, sent) {
        (Some(d), Some(s)) => Ok(SentenceKey::new(d, s)),
        _ => Err(Error::parse(
            lineno,
            "header must be '# doc=<id> sent=<idx>'",
        )),
    }
}

pub fn load_tagged_conll(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    parse_tagged_conll(&read_file(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Extraction files

fn parse_rows(
    text: &str,
    with_confidence: bool,
    mut extra: impl FnMut(usize, &str) -> Result<()>,
) -> Result<Vec<Extraction>> {
    let base = if with_confidence { 6 } else { 5 };
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != base && fields.len() != base + 1 {
            return Err(Error::parse(
                lineno,
                format!(
                    "expected {base} tab-separated columns, found {}",
                    fields.len()
                ),
            ));
        }
        let sent_idx = fields[1]
            .parse::<usize>()
            .map_err(|_| Error::parse(lineno, format!("bad sentence index '{}'", fields[1])))?;
        let (confidence, slots) = if with_confidence {
            let c = fields[2]
                .parse::<f64>()
                .map_err(|_| Error::parse(lineno, format!("bad confidence '{}'", fields[2])))?;
            (c, &fields[3..6])
        } else {
            (1.0, &fields[2..5])
        };
        let ex = Extraction::from_strs(
            fields[0], sent_idx, slots[0], slots[1], slots[2], confidence,
        );
        if ex.doc_id.is_empty() {
            return Err(Error::parse(lineno, "empty doc_id"));
        }
        ex.validate()
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if fields.len() == base + 1 {
            extra(lineno, fields[base])?;
        } else {
            extra(lineno, "")?;
        }
        out.push(ex);
    }
    Ok(out)
}

/// Parses an extraction TSV. A seventh column, when present, is ignored
/// here; see [`crate::bootstrap::parse_combined`] for the provenance-aware
/// reader.
pub fn parse_extractions(text: &str) -> Result<Vec<Extraction>> {
    parse_rows(text, true, |_, _| Ok(()))
}

pub(crate) fn parse_extractions_with_extra(text: &str) -> Result<(Vec<Extraction>, Vec<String>)> {
    let mut extras = Vec::new();
    let rows = parse_rows(text, true, |_, e| {
        extras.push(e.to_string());
        Ok(())
    })?;
    Ok((rows, extras))
}

/// Parses a gold TSV (no confidence column). Every tuple gets confidence 1.
pub fn parse_gold(text: &str) -> Result<Vec<Extraction>> {
    parse_rows(text, false, |lineno, extra| {
        if extra.is_empty() {
            Ok(())
        } else {
            Err(Error::parse(lineno, "expected 5 tab-separated columns"))
        }
    })
}

pub fn load_extractions(path: impl AsRef<Path>) -> Result<Vec<Extraction>> {
    parse_extractions(&read_file(path.as_ref())?)
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<Vec<Extraction>> {
    parse_gold(&read_file(path.as_ref())?)
}

pub(crate) fn push_extraction_row(out: &mut String, ex: &Extraction, with_confidence: bool) {
    out.push_str(&ex.doc_id);
    let _ = write!(out, "\t{}", ex.sent_idx);
    if with_confidence {
        let _ = write!(out, "\t{}", ex.confidence);
    }
    for slot in [&ex.subject, &ex.relation, &ex.object] {
        out.push('\t');
        out.push_str(&slot.join(" "));
    }
}

pub fn extractions_to_tsv(extractions: &[Extraction]) -> String {
    let mut out = String::new();
    for ex in extractions {
        push_extraction_row(&mut out, ex, true);
        out.push('\n');
    }
    out
}

pub fn gold_to_tsv(extractions: &[Extraction]) -> String {
    let mut out = String::new();
    for ex in extractions {
        push_extraction_row(&mut out, ex, false);
        out.push('\n');
    }
    out
}

pub fn save_extractions(path: impl AsRef<Path>, extractions: &[Extraction]) -> Result<()> {
    write_file(path.as_ref(), &extractions_to_tsv(extractions))
}

pub fn save_gold(path: impl AsRef<Path>, extractions: &[Extraction]) -> Result<()> {
    write_file(path.as_ref(), &gold_to_tsv(extractions))
}

/// Groups extractions by sentence, preserving input order within a sentence.
pub fn group_by_sentence(extractions: &[Extraction]) -> BTreeMap<SentenceKey, Vec<&Extraction>> {
    let mut map: BTreeMap<SentenceKey, Vec<&Extraction>> = BTreeMap::new();
    for ex in extractions {
        map.entry(ex.key()).or_default().push(ex);
    }
    map
}

// ---------------------------------------------------------------------------
// Statistics

/// Average, minimum and maximum of one metric over its unit population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub average: f64,
    pub min: f64,
    pub max: f64,
}

impl MetricSummary {
    /// `None` for an empty population.
    pub fn from_values(values: impl IntoIterator<Item = usize>) -> Option<Self> {
        let mut count = 0usize;
        let mut sum = 0u64;
        let mut min = usize::MAX;
        let mut max = 0usize;
        for v in values {
            count += 1;
            sum += v as u64;
            min = min.min(v);
            max = max.max(v);
        }
        (count > 0).then(|| MetricSummary {
            count,
            average: sum as f64 / count as f64,
            min: min as f64,
            max: max as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_doc: usize,
    /// Sentences with at least one gold tuple, or every sentence when no
    /// gold tuples are given.
    pub n_sent: usize,
    pub n_tuple: usize,
    pub sentences_per_doc: MetricSummary,
    pub sentence_length: Option<MetricSummary>,
    pub tuples_per_sentence: Option<MetricSummary>,
    pub subject_length: Option<MetricSummary>,
    pub relation_length: Option<MetricSummary>,
    pub object_length: Option<MetricSummary>,
}

impl CorpusStats {
    /// A fixed-width table, values rounded to two decimals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "documents  {}", self.n_doc);
        let _ = writeln!(out, "sentences  {}", self.n_sent);
        let _ = writeln!(out, "tuples     {}", self.n_tuple);
        let rows = [
            ("N_sent/doc", Some(self.sentences_per_doc)),
            ("L_sent", self.sentence_length),
            ("N_tuple", self.tuples_per_sentence),
            ("L_sub", self.subject_length),
            ("L_rel", self.relation_length),
            ("L_obj", self.object_length),
        ];
        for (name, m) in rows {
            match m {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{name:<11}{:>8.2}  {}~{}",
                        m.average, m.min as usize, m.max as usize
                    );
                }
                None => {
                    let _ = writeln!(out, "{name:<11}{:>8}", "-");
                }
            }
        }
        out
    }
}

pub fn corpus_stats(docs: &[Document], gold: &[Extraction]) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(Error::NoDocuments);
    }
    let mut lengths: BTreeMap<SentenceKey, usize> = BTreeMap::new();
    for doc in docs {
        for s in &doc.sentences {
            lengths.insert(s.key(), s.len());
        }
    }
    let mut tuples_per: BTreeMap<SentenceKey, usize> = BTreeMap::new();
    for ex in gold {
        let key = ex.key();
        if !lengths.contains_key(&key) {
            return Err(Error::UnknownSentence {
                doc_id: key.doc_id,
                sent_idx: key.sent_idx,
            });
        }
        *tuples_per.entry(key).or_default() += 1;
    }

    let population: BTreeSet<&SentenceKey> = if gold.is_empty() {
        lengths.keys().collect()
    } else {
        tuples_per.keys().collect()
    };

    Ok(CorpusStats {
        n_doc: docs.len(),
        n_sent: population.len(),
        n_tuple: gold.len(),
        sentences_per_doc: MetricSummary::from_values(docs.iter().map(Document::len))
            .expect("non-empty corpus"),
        sentence_length: MetricSummary::from_values(population.iter().map(|k| lengths[*k])),
        tuples_per_sentence: MetricSummary::from_values(tuples_per.values().copied()),
        subject_length: MetricSummary::from_values(gold.iter().map(|e| e.subject.len())),
        relation_length: MetricSummary::from_values(gold.iter().map(|e| e.relation.len())),
        object_length: MetricSummary::from_values(gold.iter().map(|e| e.object.len())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn jsonl_single_document() {
        let docs = parse_documents_jsonl(
            r#"{"doc_id":"d1","domain":"healthcare","sentences":[["a","b"]]}"#,
        )
        .unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].domain, "healthcare");
        assert_eq!(docs[0].sentences.len(), 1);
        assert_eq!(docs[0].sentences[0].tokens, toks("a b"));
        assert_eq!(docs[0].sentences[0].index, 0);
    }

    #[test]
    fn plain_blank_line_separates_documents() {
        let docs = parse_documents_plain("x y\n\nz w\n").unwrap();
        assert_eq!(docs.len(), 2);
        assert!(docs.iter().all(|d| d.sentences.len() == 1));
        assert_eq!(docs[1].sentences[0].tokens, toks("z w"));
        assert_eq!(docs[1].sentences[0].doc_id, "doc1");
    }

    #[test]
    fn empty_document_is_an_error() {
        let err =
            parse_documents_jsonl(r#"{"doc_id":"d1","domain":"x","sentences":[]}"#).unwrap_err();
        assert!(err.to_string().contains("empty document"), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = "{\"doc_id\":\"d1\",\"sentences\":[[\"a\"]]}\n{oops\n";
        match parse_documents_jsonl(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn misaligned_tags_rejected() {
        let text = r#"{"doc_id":"d1","sentences":[["a","b"]],"tags":[["DT"]]}"#;
        assert!(parse_documents_jsonl(text).is_err());
    }

    #[test]
    fn tokens_are_nfc_normalized() {
        // "e" + combining acute accent
        let text = "{\"doc_id\":\"d\",\"sentences\":[[\"caf\\u0065\\u0301\"]]}";
        let docs = parse_documents_jsonl(text).unwrap();
        assert_eq!(docs[0].sentences[0].tokens[0], "caf\u{e9}");
    }

    #[test]
    fn extraction_row_parses() {
        let exs = parse_extractions("d1\t0\t0.9\tNode-B\tcan be\ta device\n").unwrap();
        assert_eq!(exs.len(), 1);
        assert_eq!(exs[0].confidence, 0.9);
        assert_eq!(exs[0].subject, toks("Node-B"));
        assert_eq!(exs[0].relation, toks("can be"));
        assert_eq!(exs[0].object, toks("a device"));
    }

    #[test]
    fn empty_object_column() {
        let exs = parse_extractions("d1\t0\t0.5\tParsing\tis\t\n").unwrap();
        assert!(exs[0].object.is_empty());
    }

    #[test]
    fn confidence_out_of_range() {
        assert!(parse_extractions("d1\t0\t1.5\ta\tb\tc\n").is_err());
        assert!(parse_extractions("d1\t0\t-0.1\ta\tb\tc\n").is_err());
        assert!(parse_extractions("d1\t0\tNaN\ta\tb\tc\n").is_err());
    }

    #[test]
    fn empty_relation_rejected() {
        let err = parse_extractions("d1\t0\t0.5\ta\t\tc\n").unwrap_err();
        assert!(err.to_string().contains("empty relation"), "{err}");
    }

    #[test]
    fn gold_rows_get_unit_confidence() {
        let gold = parse_gold("d1\t3\the\tate quickly\tan apple\n").unwrap();
        assert_eq!(gold[0].sent_idx, 3);
        assert_eq!(gold[0].confidence, 1.0);
        assert_eq!(gold_to_tsv(&gold), "d1\t3\the\tate quickly\tan apple\n");
    }

    #[test]
    fn canonical_tsv_round_trips() {
        let text =
            "d1\t0\t0.9\tNode-B\tcan be\ta device\nd1\t1\t1\tx\ty\t\nd2\t0\t0.25\tp q\tr\ts\n";
        assert_eq!(extractions_to_tsv(&parse_extractions(text).unwrap()), text);
    }

    #[test]
    fn conll_reader() {
        let text = "# doc=d1 sent=0\nParsing\tNNP\nis\tVBZ\nfun\tJJ\n\n# doc=d1 sent=1\nOk\tUH\n";
        let s = parse_tagged_conll(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens, toks("Parsing is fun"));
        assert_eq!(s[0].tags.as_deref().unwrap(), toks("NNP VBZ JJ").as_slice());
        assert_eq!(s[1].key(), SentenceKey::new("d1", 1));
        assert!(parse_tagged_conll("Parsing\tNNP\n").is_err());
    }

    fn doc(id: &str, lens: &[usize]) -> Document {
        let sentences = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| Sentence::new(id, i, (0..n).map(|k| format!("t{k}")).collect()))
            .collect();
        Document::new(id, "healthcare", sentences).unwrap()
    }

    #[test]
    fn stats_singleton() {
        let docs = vec![doc("d", &[5])];
        let gold = vec![Extraction::from_strs("d", 0, "a", "b", "c", 1.0)];
        let st = corpus_stats(&docs, &gold).unwrap();
        assert_eq!((st.n_doc, st.n_sent, st.n_tuple), (1, 1, 1));
        for m in [
            Some(st.sentences_per_doc),
            st.sentence_length,
            st.tuples_per_sentence,
            st.subject_length,
            st.relation_length,
            st.object_length,
        ] {
            let m = m.unwrap();
            assert_eq!(m.min, m.max);
            assert_eq!(m.average, m.min);
        }
        assert_eq!(st.sentence_length.unwrap().average, 5.0);
    }

    #[test]
    fn stats_exclude_unannotated_sentences() {
        // sentence 0 has two tuples, sentence 1 none: N_tuple over {s0} only
        let docs = vec![doc("d", &[4, 6])];
        let gold = vec![
            Extraction::from_strs("d", 0, "a", "b", "c", 1.0),
            Extraction::from_strs("d", 0, "a b", "c", "", 1.0),
        ];
        let st = corpus_stats(&docs, &gold).unwrap();
        assert_eq!(st.n_sent, 1);
        let nt = st.tuples_per_sentence.unwrap();
        assert_eq!((nt.count, nt.average, nt.min, nt.max), (1, 2.0, 2.0, 2.0));
        assert_eq!(st.sentence_length.unwrap().average, 4.0);
        assert_eq!(st.object_length.unwrap().min, 0.0);
        assert_eq!(st.subject_length.unwrap().average, 1.5);
    }

    #[test]
    fn stats_errors() {
        assert!(matches!(corpus_stats(&[], &[]), Err(Error::NoDocuments)));
        let docs = vec![doc("d", &[3])];
        let gold = vec![Extraction::from_strs("d", 7, "a", "b", "c", 1.0)];
        assert!(matches!(
            corpus_stats(&docs, &gold),
            Err(Error::UnknownSentence { .. })
        ));
    }

    #[test]
    fn stats_without_gold_use_every_sentence() {
        let st = corpus_stats(&[doc("a", &[2, 4]), doc("b", &[6])], &[]).unwrap();
        assert_eq!(st.n_sent, 3);
        assert_eq!(st.sentence_length.unwrap().average, 4.0);
        assert_eq!(st.sentences_per_doc.average, 1.5);
        assert!(st.tuples_per_sentence.is_none());
    }
}
