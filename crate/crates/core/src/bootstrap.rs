//! Main + fallback combination of pseudo labels.
//!
//! For every sentence the main system's tuples are kept when it produced at
//! least one; otherwise the fallback's tuples are used; sentences where both
//! are empty are left out. Tuples are never merged across systems and
//! duplicates are kept verbatim.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Extraction, SentenceKey};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Main,
    Fallback,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Main => "main",
            Provenance::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSentence {
    pub provenance: Provenance,
    pub tuples: Vec<Extraction>,
}

/// Pseudo labels keyed by sentence. Only sentences with at least one tuple
/// are present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CombinedLabels {
    sentences: BTreeMap<SentenceKey, LabeledSentence>,
}

impl CombinedLabels {
    pub fn get(&self, key: &SentenceKey) -> Option<&LabeledSentence> {
        self.sentences.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SentenceKey, &LabeledSentence)> {
        self.sentences.iter()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// All tuples in sentence-key order.
    pub fn extractions(&self) -> Vec<Extraction> {
        self.sentences
            .values()
            .flat_map(|l| l.tuples.iter().cloned())
            .collect()
    }

    /// Builds labels from tuples that each carry their provenance. Sentences
    /// must not mix provenances.
    pub fn from_tagged(rows: Vec<(Extraction, Provenance)>) -> Result<Self> {
        let mut sentences: BTreeMap<SentenceKey, LabeledSentence> = BTreeMap::new();
        for (ex, provenance) in rows {
            let entry = sentences
                .entry(ex.key())
                .or_insert_with(|| LabeledSentence {
                    provenance,
                    tuples: Vec::new(),
                });
            if entry.provenance != provenance {
                return Err(Error::InvalidExtraction(format!(
                    "sentence {}#{} mixes main and fallback tuples",
                    ex.doc_id, ex.sent_idx
                )));
            }
            entry.tuples.push(ex);
        }
        Ok(CombinedLabels { sentences })
    }

    /// Every tuple attributed to the main system.
    pub fn from_main(extractions: Vec<Extraction>) -> Self {
        Self::from_tagged(
            extractions
                .into_iter()
                .map(|e| (e, Provenance::Main))
                .collect(),
        )
        .expect("single provenance")
    }
}

pub fn combine(
    main: &[Extraction],
    fallback: &[Extraction],
    universe: &[SentenceKey],
) -> Result<CombinedLabels> {
    let known: HashSet<&SentenceKey> = universe.iter().collect();
    let check = |ex: &Extraction| -> Result<()> {
        if known.contains(&ex.key()) {
            Ok(())
        } else {
            Err(Error::UnknownSentence {
                doc_id: ex.doc_id.clone(),
                sent_idx: ex.sent_idx,
            })
        }
    };
    main.iter().try_for_each(check)?;
    fallback.iter().try_for_each(check)?;

    let main_by = corpus::group_by_sentence(main);
    let fallback_by = corpus::group_by_sentence(fallback);

    let mut sentences = BTreeMap::new();
    for key in universe {
        let chosen = match (main_by.get(key), fallback_by.get(key)) {
            (Some(m), _) => Some((Provenance::Main, m)),
            (None, Some(f)) => Some((Provenance::Fallback, f)),
            (None, None) => None,
        };
        if let Some((provenance, tuples)) = chosen {
            sentences.insert(
                key.clone(),
                LabeledSentence {
                    provenance,
                    tuples: tuples.iter().map(|e| (*e).clone()).collect(),
                },
            );
        }
    }
    Ok(CombinedLabels { sentences })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelStats {
    pub n_sent: usize,
    pub n_tuple: usize,
    pub main_sent: usize,
    pub fallback_sent: usize,
    pub main_tuple: usize,
    pub fallback_tuple: usize,
}

pub fn label_stats(labels: &CombinedLabels) -> LabelStats {
    let mut st = LabelStats::default();
    for l in labels.sentences.values() {
        if l.tuples.is_empty() {
            continue;
        }
        st.n_sent += 1;
        st.n_tuple += l.tuples.len();
        match l.provenance {
            Provenance::Main => {
                st.main_sent += 1;
                st.main_tuple += l.tuples.len();
            }
            Provenance::Fallback => {
                st.fallback_sent += 1;
                st.fallback_tuple += l.tuples.len();
            }
        }
    }
    st
}

/// Extraction TSV with a trailing provenance column.
pub fn combined_to_tsv(labels: &CombinedLabels) -> String {
    let mut out = String::new();
    for l in labels.sentences.values() {
        for ex in &l.tuples {
            corpus::push_extraction_row(&mut out, ex, true);
            let _ = writeln!(out, "\t{}", l.provenance.as_str());
        }
    }
    out
}

/// Reads a combined TSV. Rows without a provenance column count as main.
pub fn parse_combined(text: &str) -> Result<CombinedLabels> {
    let (rows, extras) = corpus::parse_extractions_with_extra(text)?;
    let mut tagged = Vec::with_capacity(rows.len());
    for (ex, extra) in rows.into_iter().zip(extras) {
        let provenance = match extra.as_str() {
            "" | "main" => Provenance::Main,
            "fallback" => Provenance::Fallback,
            other => {
                return Err(Error::InvalidExtraction(format!(
                    "unknown provenance '{other}'"
                )))
            }
        };
        tagged.push((ex, provenance));
    }
    CombinedLabels::from_tagged(tagged)
}

pub fn load_combined(path: impl AsRef<Path>) -> Result<CombinedLabels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_combined(&text)
}

pub fn save_combined(path: impl AsRef<Path>, labels: &CombinedLabels) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, combined_to_tsv(labels)).map_err(|e| Error::io(path, e))
}
