//! Tuple-level evaluation.
//!
//! Predictions are matched to gold tuples one-to-one within each sentence.
//! Two pair scores are available:
//!
//! * [`MatchMode::TokenGraded`]: matched tokens pooled over the three slots,
//!   divided by the prediction's (precision) or the gold tuple's (recall)
//!   token count.
//! * [`MatchMode::BinaryLenient`]: 1 when every non-empty gold slot shares a
//!   token with the corresponding predicted slot, otherwise 0.
//!
//! Tokens are compared case-insensitively after NFC normalization.
//!
//! The assignment is greedy in descending pair F1 with ties broken by the
//! lower prediction index and then the lower gold index. Inside
//! [`score_extractions`] the predictions of a sentence are first put in a
//! canonical order (descending confidence, then slot text), so the result
//! does not depend on input order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Extraction, SentenceKey};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[serde(rename = "graded")]
    TokenGraded,
    #[serde(rename = "lenient")]
    BinaryLenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PairScore {
    pub fn new(precision: f64, recall: f64) -> Self {
        PairScore {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    pub const ZERO: PairScore = PairScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn match_key(token: &str) -> String {
    token.nfc().flat_map(char::to_lowercase).collect()
}

fn normalize_slot<S: AsRef<str>>(slot: &[S]) -> Vec<String> {
    let mut v: Vec<String> = slot.iter().map(|t| match_key(t.as_ref())).collect();
    v.sort_unstable();
    v
}

/// Multiset intersection size of two sorted token lists.
fn overlap(a: &[String], b: &[String]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn ratio(shared: usize, pred: usize, gold: usize, denom: usize) -> f64 {
    match (pred, gold) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => shared as f64 / denom as f64,
    }
}

/// Token precision and recall of one slot against its gold counterpart.
pub fn slot_score<S: AsRef<str>>(pred: &[S], gold: &[S]) -> (f64, f64) {
    let (p, g) = (normalize_slot(pred), normalize_slot(gold));
    let shared = overlap(&p, &g);
    (
        ratio(shared, p.len(), g.len(), p.len()),
        ratio(shared, p.len(), g.len(), g.len()),
    )
}

/// Slots of one tuple, normalized and sorted for multiset comparisons.
#[derive(Debug, Clone)]
struct NormTuple {
    slots: [Vec<String>; 3],
}

impl NormTuple {
    fn new(ex: &Extraction) -> Self {
        NormTuple {
            slots: [
                normalize_slot(&ex.subject),
                normalize_slot(&ex.relation),
                normalize_slot(&ex.object),
            ],
        }
    }
}

fn match_norm(pred: &NormTuple, gold: &NormTuple, mode: MatchMode) -> PairScore {
    match mode {
        MatchMode::TokenGraded => {
            let mut shared = 0;
            let mut n_pred = 0;
            let mut n_gold = 0;
            for (p, g) in pred.slots.iter().zip(&gold.slots) {
                shared += overlap(p, g);
                n_pred += p.len();
                n_gold += g.len();
            }
            PairScore::new(
                ratio(shared, n_pred, n_gold, n_pred),
                ratio(shared, n_pred, n_gold, n_gold),
            )
        }
        MatchMode::BinaryLenient => {
            let relation_shared = overlap(&pred.slots[1], &gold.slots[1]) > 0;
            let slots_ok = pred
                .slots
                .iter()
                .zip(&gold.slots)
                .all(|(p, g)| g.is_empty() || overlap(p, g) > 0);
            if relation_shared && slots_ok {
                PairScore::new(1.0, 1.0)
            } else {
                PairScore::ZERO
            }
        }
    }
}

/// Scores a predicted tuple against a gold tuple, slot by slot.
pub fn tuple_match(pred: &Extraction, gold: &Extraction, mode: MatchMode) -> PairScore {
    match_norm(&NormTuple::new(pred), &NormTuple::new(gold), mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pred: usize,
    pub gold: usize,
    pub score: PairScore,
}

fn ranked_pairs(preds: &[NormTuple], golds: &[NormTuple], mode: MatchMode) -> Vec<Assignment> {
    let mut pairs = Vec::with_capacity(preds.len() * golds.len());
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in golds.iter().enumerate() {
            let score = match_norm(p, g, mode);
            if score.f1 > 0.0 {
                pairs.push(Assignment {
                    pred: pi,
                    gold: gi,
                    score,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.score
            .f1
            .total_cmp(&a.score.f1)
            .then(a.pred.cmp(&b.pred))
            .then(a.gold.cmp(&b.gold))
    });
    pairs
}

/// Greedy one-to-one matching over `ranked` restricted to predictions with
/// index below `n_kept`.
fn greedy(ranked: &[Assignment], n_kept: usize, n_pred: usize, n_gold: usize) -> Vec<Assignment> {
    let mut pred_used = vec![false; n_pred];
    let mut gold_used = vec![false; n_gold];
    let mut out = Vec::new();
    for a in ranked {
        if a.pred < n_kept && !pred_used[a.pred] && !gold_used[a.gold] {
            pred_used[a.pred] = true;
            gold_used[a.gold] = true;
            out.push(*a);
        }
    }
    out
}

/// One-to-one assignment of predictions to gold tuples of the same sentence.
/// Pairs with zero F1 are never assigned.
pub fn assign_matches(
    preds: &[Extraction],
    golds: &[Extraction],
    mode: MatchMode,
) -> Vec<Assignment> {
    let p: Vec<NormTuple> = preds.iter().map(NormTuple::new).collect();
    let g: Vec<NormTuple> = golds.iter().map(NormTuple::new).collect();
    greedy(&ranked_pairs(&p, &g, mode), p.len(), p.len(), g.len())
}

/// One point of a precision-recall curve. Serialized as
/// `[precision, recall, threshold]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct CurvePoint {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

impl From<[f64; 3]> for CurvePoint {
    fn from([precision, recall, threshold]: [f64; 3]) -> Self {
        CurvePoint {
            precision,
            recall,
            threshold,
        }
    }
}

impl From<CurvePoint> for [f64; 3] {
    fn from(p: CurvePoint) -> Self {
        [p.precision, p.recall, p.threshold]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: MatchMode,
    /// Sorted by descending threshold.
    pub curve: Vec<CurvePoint>,
    pub auc: f64,
    pub best_f1: f64,
    pub precision_at_best: f64,
    pub recall_at_best: f64,
    pub threshold_at_best: Option<f64>,
    pub n_pred: usize,
    pub n_gold: usize,
}

/// Trapezoidal area under `(recall, precision)` points, extended to recall 0
/// at the precision of the lowest-recall point.
pub fn pr_auc(curve: &[CurvePoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|c| (c.recall, c.precision)).collect();
    // stable: keeps threshold order among equal recalls
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, pts[0].1);
    for &(r, p) in &pts {
        area += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    area
}

fn canonical_cmp(a: &(f64, NormTuple), b: &(f64, NormTuple)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.slots.cmp(&b.1.slots))
}

/// Per-sentence matching state reused across thresholds.
struct SentenceTable {
    confidences: Vec<f64>,
    ranked: Vec<Assignment>,
    n_gold: usize,
}

impl SentenceTable {
    fn sums_at(&self, threshold: f64) -> (f64, f64) {
        let n_kept = self.confidences.partition_point(|&c| c >= threshold);
        let assigned = greedy(&self.ranked, n_kept, self.confidences.len(), self.n_gold);
        let mut p = 0.0;
        let mut r = 0.0;
        for a in &assigned {
            p += a.score.precision;
            r += a.score.recall;
        }
        (p, r)
    }
}

/// Scored predictions and gold tuples of one sentence.
type SentenceGroup = (Vec<(f64, NormTuple)>, Vec<NormTuple>);

/// Precision-recall curve over every distinct prediction confidence.
///
/// At threshold `t` the predictions with confidence `>= t` are kept and
/// matched per sentence. Precision is the summed pair precision over the
/// number of kept predictions (0 when none are kept); recall is the summed
/// pair recall over the number of gold tuples.
pub fn score_extractions(
    preds: &[Extraction],
    golds: &[Extraction],
    mode: MatchMode,
) -> Result<ScoreReport> {
    if golds.is_empty() {
        return Err(Error::NoGold);
    }
    let mut by_key: BTreeMap<SentenceKey, SentenceGroup> = BTreeMap::new();
    for p in preds {
        by_key
            .entry(p.key())
            .or_default()
            .0
            .push((p.confidence, NormTuple::new(p)));
    }
    for g in golds {
        by_key.entry(g.key()).or_default().1.push(NormTuple::new(g));
    }

    let tables: Vec<SentenceTable> = by_key
        .into_par_iter()
        .map(|(_, (mut ps, gs))| {
            ps.sort_by(canonical_cmp);
            let confidences = ps.iter().map(|(c, _)| *c).collect();
            let tuples: Vec<NormTuple> = ps.into_iter().map(|(_, t)| t).collect();
            SentenceTable {
                confidences,
                ranked: ranked_pairs(&tuples, &gs, mode),
                n_gold: gs.len(),
            }
        })
        .collect();

    let thresholds: Vec<f64> = {
        let mut t: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t
    };

    let n_gold = golds.len();
    let curve: Vec<CurvePoint> = thresholds
        .par_iter()
        .map(|&threshold| {
            // sequential sum in sentence-key order keeps results bit-stable
            let mut sum_p = 0.0;
            let mut sum_r = 0.0;
            let mut kept = 0usize;
            for t in &tables {
                let (p, r) = t.sums_at(threshold);
                sum_p += p;
                sum_r += r;
                kept += t.confidences.partition_point(|&c| c >= threshold);
            }
            CurvePoint {
                precision: if kept == 0 { 0.0 } else { sum_p / kept as f64 },
                recall: sum_r / n_gold as f64,
                threshold,
            }
        })
        .collect();

    let mut best: Option<(f64, &CurvePoint)> = None;
    for c in &curve {
        let f = f1(c.precision, c.recall);
        if best.is_none_or(|(bf, _)| f > bf) {
            best = Some((f, c));
        }
    }
    let (best_f1, precision_at_best, recall_at_best, threshold_at_best) = match best {
        Some((f, c)) => (f, c.precision, c.recall, Some(c.threshold)),
        None => (0.0, 0.0, 0.0, None),
    };

    Ok(ScoreReport {
        mode,
        auc: pr_auc(&curve),
        curve,
        best_f1,
        precision_at_best,
        recall_at_best,
        threshold_at_best,
        n_pred: preds.len(),
        n_gold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Prf {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    /// Per-metric arithmetic mean. The mean F1 is the mean of the two F1
    /// values, not the F1 of the mean precision and recall.
    pub fn mean(a: Prf, b: Prf) -> Prf {
        Prf {
            precision: (a.precision + b.precision) / 2.0,
            recall: (a.recall + b.recall) / 2.0,
            f1: (a.f1 + b.f1) / 2.0,
        }
    }
}

/// Agreement between two annotators. `a_from_b` scores A's tuples with B's
/// as gold; `b_from_a` swaps the roles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub a_from_b: Prf,
    pub b_from_a: Prf,
    pub average: Prf,
}

fn directed(pred: &[Extraction], gold: &[Extraction]) -> Result<Prf> {
    let pred: Vec<Extraction> = pred
        .iter()
        .cloned()
        .map(|mut e| {
            e.confidence = 1.0;
            e
        })
        .collect();
    let report = score_extractions(&pred, gold, MatchMode::BinaryLenient)?;
    Ok(match report.curve.first() {
        Some(c) => Prf::new(c.precision, c.recall),
        None => Prf::new(0.0, 0.0),
    })
}

/// Dual-annotator consistency with binary lenient matching.
pub fn consistency(annot_a: &[Extraction], annot_b: &[Extraction]) -> Result<Consistency> {
    let keys = |xs: &[Extraction]| xs.iter().map(Extraction::key).collect::<BTreeSet<_>>();
    if keys(annot_a) != keys(annot_b) {
        return Err(Error::UniverseMismatch);
    }
    let a_from_b = directed(annot_a, annot_b)?;
    let b_from_a = directed(annot_b, annot_a)?;
    Ok(Consistency {
        a_from_b,
        b_from_a,
        average: Prf::mean(a_from_b, b_from_a),
    })
}
