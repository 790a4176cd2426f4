//! Beam-search tuple extraction.

use std::collections::HashMap;

use rayon::prelude::*;

use super::network::{
    decode_step, decoder_memory, encode, initial_state, surface_distribution, DecoderState,
};
use super::params::ModelParams;
use super::vocab::{PAD, UNK};
use crate::context::{
    build_input, build_window, parse_tuple, source_block_len, LayoutConfig, BOS, EOT, SEP,
};
use crate::corpus::{Document, Extraction};
use crate::{Error, Result};

/// A finished decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    /// Sum of token log-probabilities.
    pub log_prob: f64,
}

impl Hypothesis {
    /// Length-normalized score, `log_prob / len`.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    pub fn confidence(&self) -> f64 {
        self.score().exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeamOutput {
    /// Parsed tuples, most confident first.
    pub extractions: Vec<Extraction>,
    /// Finished hypotheses that did not parse as a tuple.
    pub malformed: usize,
}

/// Tokens never proposed by the decoder.
fn blocked(token: &str) -> bool {
    matches!(token, PAD | UNK | BOS | SEP)
}

struct Live {
    tokens: Vec<String>,
    log_prob: f64,
    state: DecoderState,
    last_id: usize,
}

/// Length-normalized beam search of width `k` over an encoder input.
/// Returns up to `k` finished hypotheses, best first. Hypotheses that
/// reach the length limit without `<eot>` are returned unfinished.
pub fn beam_search<S: AsRef<str>>(
    params: &ModelParams,
    input: &[S],
    segment_ids: &[u8],
    k: usize,
) -> Result<Vec<Hypothesis>> {
    if k == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    let states = encode(params, input, segment_ids)?;
    let src_len = source_block_len(segment_ids);
    let source: Vec<&str> = input[..src_len].iter().map(AsRef::as_ref).collect();
    let memory = decoder_memory(params, &states.h2_src);
    let vocab = &params.vocab;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: initial_state(params, &memory),
        last_id: vocab.id_or_unk(BOS),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..params.config.max_decode_len {
        // (normalized score, live index, token, log-prob, state)
        let mut candidates = Vec::new();
        for (li, hyp) in live.iter().enumerate() {
            let out = decode_step(params, &memory, &hyp.state, hyp.last_id, None);
            let mut dist = surface_distribution(params, &out, &source);
            dist.retain(|(t, p)| *p > 0.0 && !blocked(t));
            dist.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            dist.truncate(k);
            for (tok, p) in dist {
                let lp = hyp.log_prob + p.ln();
                let score = lp / (hyp.tokens.len() + 1) as f64;
                candidates.push((score, li, tok, lp, out.state.clone()));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        candidates.truncate(k - finished.len());
        let mut next = Vec::new();
        for (_, li, tok, lp, state) in candidates {
            let mut tokens = live[li].tokens.clone();
            tokens.push(tok.clone());
            if tok == EOT {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                });
            } else {
                next.push(Live {
                    tokens,
                    log_prob: lp,
                    state,
                    last_id: vocab.id_or_unk(&tok),
                });
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= k {
            break;
        }
    }
    finished.extend(live.into_iter().map(|h| Hypothesis {
        tokens: h.tokens,
        log_prob: h.log_prob,
    }));
    finished.sort_by(|a, b| b.score().total_cmp(&a.score()));
    finished.truncate(k);
    Ok(finished)
}

type TupleKey = (Vec<String>, Vec<String>, Vec<String>);

/// Decodes tuples for sentence `sent_idx` of `doc_id`, whose encoder input
/// is `input`/`segment_ids`. Malformed hypotheses are dropped and counted;
/// duplicates keep their highest confidence.
pub fn beam_extract<S: AsRef<str>>(
    params: &ModelParams,
    doc_id: &str,
    sent_idx: usize,
    input: &[S],
    segment_ids: &[u8],
    k: usize,
) -> Result<BeamOutput> {
    let hyps = beam_search(params, input, segment_ids, k)?;
    let mut out = BeamOutput::default();
    let mut seen: HashMap<TupleKey, usize> = HashMap::new();
    for h in hyps {
        let Some((subject, relation, object)) = parse_tuple(&h.tokens) else {
            out.malformed += 1;
            continue;
        };
        let conf = h.confidence();
        let key = (subject, relation, object);
        if let Some(&i) = seen.get(&key) {
            let e: &mut Extraction = &mut out.extractions[i];
            e.confidence = e.confidence.max(conf);
            continue;
        }
        seen.insert(key.clone(), out.extractions.len());
        let (subject, relation, object) = key;
        out.extractions.push(Extraction::new(
            doc_id, sent_idx, subject, relation, object, conf,
        ));
    }
    out.extractions
        .sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

/// Runs [`beam_extract`] on every sentence of `docs` with a context window
/// of `t` sentences. Output follows document and sentence order.
pub fn predict_documents(
    params: &ModelParams,
    docs: &[Document],
    t: usize,
    k: usize,
) -> Result<BeamOutput> {
    let layout = LayoutConfig {
        max_len: params.config.max_len,
    };
    let jobs: Vec<(&Document, usize)> = docs
        .iter()
        .flat_map(|d| (0..d.len()).map(move |i| (d, i)))
        .collect();
    let parts = jobs
        .par_iter()
        .map(|&(doc, i)| -> Result<BeamOutput> {
            let window = build_window(doc, i, t)?;
            let enc = build_input(doc, &window, &layout)?;
            beam_extract(params, &doc.doc_id, i, &enc.input, &enc.segment_ids, k).map_err(|e| {
                Error::AtSentence {
                    doc_id: doc.doc_id.clone(),
                    sent_idx: i,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = BeamOutput::default();
    for p in parts {
        all.extractions.extend(p.extractions);
        all.malformed += p.malformed;
    }
    Ok(all)
}
