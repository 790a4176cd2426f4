//! Encoder, decoder and the teacher-forced loss.
//!
//! The bottom blocks read the whole `[source; context]` input. Only the
//! source block of their output is projected and passed through the top
//! blocks, and only that reaches the decoder.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Block, Linear, ModelParams, Norm};
use super::tensor::Tensor;
use super::vocab::UNK_ID;
use crate::context::{TrainingExample, BOS};
use crate::{Error, Result};

/// Encoder activations for one input.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    /// Bottom-block output over every input position.
    pub h1_full: Tensor,
    /// Rows of `h1_full` belonging to the source block.
    pub h1_src: Tensor,
    /// Top-block output over the source block.
    pub h2_src: Tensor,
}

/// Recurrent decoder state. `ctx` is the previous attention context,
/// fed back as input to the next step.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h: Tensor,
    pub c: Tensor,
    pub ctx: Tensor,
}

/// Encoder-side values the decoder attends over, computed once per input.
#[derive(Debug, Clone)]
pub struct DecoderMemory {
    pub h2_src: Tensor,
    enc_proj: Tensor,
    /// `true` for source-block positions that cannot be attended to
    /// (`<bos>` and the closing `<sep>`).
    mask: Vec<bool>,
}

/// Output of one decoder step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: DecoderState,
    /// Generation distribution over the vocabulary.
    pub gen: Tensor,
    /// Attention over source-block positions; also the copy distribution.
    pub attn: Tensor,
    /// Probability of generating rather than copying.
    pub gate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOutput {
    /// Mean negative log-likelihood per target token.
    pub loss: f64,
    pub n_tokens: usize,
    /// Target tokens found neither in the vocabulary nor in the source.
    pub unknown_targets: usize,
}

pub fn token_ids<S: AsRef<str>>(params: &ModelParams, tokens: &[S]) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| params.vocab.id_or_unk(t.as_ref()))
        .collect()
}

fn check_input(params: &ModelParams, len: usize, segment_ids: &[u8]) -> Result<()> {
    if len != segment_ids.len() {
        return Err(Error::Config(format!(
            "{} tokens but {} segment ids",
            len,
            segment_ids.len()
        )));
    }
    if len == 0 {
        return Err(Error::Config("empty encoder input".into()));
    }
    if len > params.config.max_len {
        return Err(Error::SourceTooLong {
            len,
            max: params.config.max_len,
        });
    }
    if segment_ids.iter().any(|&s| s > 1) {
        return Err(Error::Config("segment ids must be 0 or 1".into()));
    }
    Ok(())
}

// ---- graph building blocks ----

struct Net<'g, 'p> {
    g: &'g mut Graph<'p>,
    params: &'p ModelParams,
    dropout: f64,
}

impl<'g, 'p> Net<'g, 'p> {
    fn linear(&mut self, l: Linear, x: Var) -> Var {
        let w = self.g.param(l.w);
        let b = self.g.param(l.b);
        let y = self.g.matmul(x, w);
        self.g.add_row(y, b)
    }

    fn layer_norm(&mut self, n: Norm, x: Var) -> Var {
        let gain = self.g.param(n.gain);
        let bias = self.g.param(n.bias);
        let y = self.g.normalize(x);
        let y = self.g.mul_row(y, gain);
        self.g.add_row(y, bias)
    }

    fn embed(&mut self, ids: &[usize], segment_ids: &[u8]) -> Var {
        let lay = &self.params.layout;
        let (tok, seg, pos) = (lay.tok_emb, lay.seg_emb, lay.pos_emb);
        let segs: Vec<usize> = segment_ids.iter().map(|&s| s as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = self.g.param(tok);
        let seg = self.g.param(seg);
        let pos = self.g.param(pos);
        let e = self.g.gather(tok, ids);
        let s = self.g.gather(seg, &segs);
        let p = self.g.gather(pos, &positions);
        let es = self.g.add(e, s);
        self.g.add(es, p)
    }

    fn attention(
        &mut self,
        blk: &Block,
        x: Var,
        mask: Option<&[bool]>,
        probs: &mut Option<Vec<Tensor>>,
    ) -> Var {
        let heads = self.params.config.n_heads;
        let d = self.g.value(x).cols();
        let dh = d / heads;
        let q = self.linear(blk.q, x);
        let wk = self.g.param(blk.k);
        let k = self.g.matmul(x, wk);
        let v = self.linear(blk.v, x);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.g.slice_cols(q, h * dh, dh);
            let kh = self.g.slice_cols(k, h * dh, dh);
            let vh = self.g.slice_cols(v, h * dh, dh);
            let scores = self.g.matmul_bt(qh, kh);
            let scores = self.g.scale(scores, 1.0 / (dh as f64).sqrt());
            let a = self.g.softmax(scores, mask);
            if let Some(p) = probs.as_mut() {
                p.push(self.g.value(a).clone());
            }
            outs.push(self.g.matmul(a, vh));
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            self.g.concat_cols(&outs)
        };
        self.linear(blk.o, cat)
    }

    /// Pre-norm transformer block.
    fn block(
        &mut self,
        blk: &Block,
        x: Var,
        mask: Option<&[bool]>,
        probs: &mut Option<Vec<Tensor>>,
    ) -> Var {
        let n1 = self.layer_norm(blk.ln_attn, x);
        let a = self.attention(blk, n1, mask, probs);
        let a = self.g.dropout(a, self.dropout);
        let x = self.g.add(x, a);
        let n2 = self.layer_norm(blk.ln_ffn, x);
        let f = self.linear(blk.ff_in, n2);
        let f = self.g.gelu(f);
        let f = self.linear(blk.ff_out, f);
        let f = self.g.dropout(f, self.dropout);
        self.g.add(x, f)
    }

    fn encode_bottom(
        &mut self,
        x: Var,
        mask: Option<&[bool]>,
        probs: &mut Option<Vec<Tensor>>,
    ) -> Var {
        let x = self.g.dropout(x, self.dropout);
        let blocks = self.params.layout.bottom.clone();
        if blocks.is_empty() {
            return x;
        }
        let mut h = x;
        for blk in &blocks {
            h = self.block(blk, h, mask, probs);
        }
        self.layer_norm(self.params.layout.bottom_ln, h)
    }

    fn encode_top(&mut self, h1_src: Var) -> Var {
        let proj = self.linear(self.params.layout.proj, h1_src);
        let blocks = self.params.layout.top.clone();
        if blocks.is_empty() {
            return proj;
        }
        let mut h = proj;
        for blk in &blocks {
            h = self.block(blk, h, None, &mut None);
        }
        self.layer_norm(self.params.layout.top_ln, h)
    }

    /// Returns `h2_src` for an unpadded input.
    fn encode(&mut self, ids: &[usize], segment_ids: &[u8], src_len: usize) -> Var {
        let e = self.embed(ids, segment_ids);
        let h1 = self.encode_bottom(e, None, &mut None);
        let h1_src = self.g.slice_rows(h1, 0, src_len);
        self.encode_top(h1_src)
    }

    fn memory(&mut self, h2: Var) -> Var {
        let w = self.g.param(self.params.layout.att_enc);
        self.g.matmul(h2, w)
    }

    fn init_state(&mut self, h2: Var) -> (Var, Var, Var) {
        let cfg = &self.params.config;
        let (d_dec, d_top) = (cfg.d_dec, cfg.d_top);
        let mean = self.g.mean_rows(h2);
        let h = self.linear(self.params.layout.dec_init, mean);
        let h = self.g.tanh(h);
        let c = self.g.input(Tensor::zeros(1, d_dec));
        let ctx = self.g.input(Tensor::zeros(1, d_top));
        (h, c, ctx)
    }

    /// One decoder step: recurrent update, additive attention, generation
    /// distribution and copy gate. Returns `(h, c, ctx, gen, attn, gate)`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        h2: Var,
        enc_proj: Var,
        mask: &[bool],
        state: (Var, Var, Var),
        prev_id: usize,
        gate_override: Option<f64>,
    ) -> [Var; 6] {
        let lay = self.params.layout.clone();
        let d = self.params.config.d_dec;
        let (h_prev, c_prev, ctx_prev) = state;

        let table = self.g.param(lay.dec_emb);
        let emb = self.g.gather(table, &[prev_id]);
        let x = self.g.concat_cols(&[emb, ctx_prev]);
        let zx = self.linear(lay.lstm_x, x);
        let wh = self.g.param(lay.lstm_h);
        let zh = self.g.matmul(h_prev, wh);
        let z = self.g.add(zx, zh);
        let zi = self.g.slice_cols(z, 0, d);
        let zf = self.g.slice_cols(z, d, d);
        let zo = self.g.slice_cols(z, 2 * d, d);
        let zu = self.g.slice_cols(z, 3 * d, d);
        let i = self.g.sigmoid(zi);
        let f = self.g.sigmoid(zf);
        let o = self.g.sigmoid(zo);
        let u = self.g.tanh(zu);
        let fc = self.g.mul(f, c_prev);
        let iu = self.g.mul(i, u);
        let c = self.g.add(fc, iu);
        let tc = self.g.tanh(c);
        let h = self.g.mul(o, tc);

        let hd = self.linear(lay.att_dec, h);
        let e = self.g.add_row(enc_proj, hd);
        let e = self.g.tanh(e);
        let v = self.g.param(lay.att_v);
        let scores = self.g.matmul(e, v);
        let scores = self.g.transpose(scores);
        let attn = self.g.softmax(scores, Some(mask));
        let ctx = self.g.matmul(attn, h2);

        let hc = self.g.concat_cols(&[h, ctx]);
        let hc_drop = self.g.dropout(hc, self.dropout);
        let logits = self.linear(lay.out, hc_drop);
        let gen = self.g.softmax(logits, None);
        let gate = match gate_override {
            Some(v) => self.g.input(Tensor::filled(1, 1, v)),
            None => {
                let feats = self.g.concat_cols(&[h, ctx, emb]);
                let z = self.linear(lay.gate, feats);
                self.g.sigmoid(z)
            }
        };
        [h, c, ctx, gen, attn, gate]
    }
}

fn attention_mask(src_len: usize) -> Vec<bool> {
    (0..src_len).map(|p| p == 0 || p + 1 == src_len).collect()
}

fn new_graph<'p>(params: &'p ModelParams, rng: Option<ChaCha8Rng>) -> (Graph<'p>, f64) {
    let g = Graph::new(params.tensors());
    match rng {
        Some(r) if params.config.dropout > 0.0 => (g.with_dropout_rng(r), params.config.dropout),
        _ => (g, 0.0),
    }
}

// ---- public encoder API ----

/// `E[token] + S[segment] + P[position]` for every input position.
pub fn embed_inputs<S: AsRef<str>>(
    params: &ModelParams,
    tokens: &[S],
    segment_ids: &[u8],
) -> Result<Tensor> {
    check_input(params, tokens.len(), segment_ids)?;
    let ids = token_ids(params, tokens);
    let (mut g, _) = new_graph(params, None);
    let mut net = Net {
        g: &mut g,
        params,
        dropout: 0.0,
    };
    let e = net.embed(&ids, segment_ids);
    Ok(g.value(e).clone())
}

fn bottom_with_probs(
    params: &ModelParams,
    embedded: &Tensor,
    pad_mask: &[bool],
    probs: &mut Option<Vec<Tensor>>,
) -> Tensor {
    assert_eq!(embedded.rows(), pad_mask.len(), "pad mask length");
    let (mut g, _) = new_graph(params, None);
    let mut net = Net {
        g: &mut g,
        params,
        dropout: 0.0,
    };
    let x = net.g.input(embedded.clone());
    let mask = pad_mask.iter().any(|&m| m).then_some(pad_mask);
    let h = net.encode_bottom(x, mask, probs);
    g.value(h).clone()
}

/// Bottom blocks over all positions; positions flagged in `pad_mask` are
/// never attended to.
pub fn encode_bottom(params: &ModelParams, embedded: &Tensor, pad_mask: &[bool]) -> Tensor {
    bottom_with_probs(params, embedded, pad_mask, &mut None)
}

/// Self-attention weights of every bottom layer and head, in order.
pub fn bottom_attention(params: &ModelParams, embedded: &Tensor, pad_mask: &[bool]) -> Vec<Tensor> {
    let mut probs = Some(Vec::new());
    bottom_with_probs(params, embedded, pad_mask, &mut probs);
    probs.unwrap_or_default()
}

/// Keeps the first `src_len` rows of `h1_full`, projects them to the top
/// width and runs the top blocks over them.
pub fn encode_top(params: &ModelParams, h1_full: &Tensor, src_len: usize) -> Tensor {
    assert!(src_len <= h1_full.rows(), "source block longer than input");
    let (mut g, _) = new_graph(params, None);
    let mut net = Net {
        g: &mut g,
        params,
        dropout: 0.0,
    };
    let x = net.g.input(h1_full.slice_rows(0, src_len));
    let h = net.encode_top(x);
    g.value(h).clone()
}

/// Runs both encoders on an input laid out as `<bos> source <sep> context`.
pub fn encode<S: AsRef<str>>(
    params: &ModelParams,
    tokens: &[S],
    segment_ids: &[u8],
) -> Result<EncoderStates> {
    let e = embed_inputs(params, tokens, segment_ids)?;
    let h1_full = encode_bottom(params, &e, &vec![false; tokens.len()]);
    let src_len = crate::context::source_block_len(segment_ids);
    let h1_src = h1_full.slice_rows(0, src_len);
    let h2_src = encode_top(params, &h1_full, src_len);
    Ok(EncoderStates {
        h1_full,
        h1_src,
        h2_src,
    })
}

// ---- public decoder API ----

pub fn decoder_memory(params: &ModelParams, h2_src: &Tensor) -> DecoderMemory {
    let (mut g, _) = new_graph(params, None);
    let mut net = Net {
        g: &mut g,
        params,
        dropout: 0.0,
    };
    let h2 = net.g.input(h2_src.clone());
    let p = net.memory(h2);
    DecoderMemory {
        h2_src: h2_src.clone(),
        enc_proj: g.value(p).clone(),
        mask: attention_mask(h2_src.rows()),
    }
}

pub fn initial_state(params: &ModelParams, memory: &DecoderMemory) -> DecoderState {
    let (mut g, _) = new_graph(params, None);
    let mut net = Net {
        g: &mut g,
        params,
        dropout: 0.0,
    };
    let h2 = net.g.input(memory.h2_src.clone());
    let (h, c, ctx) = net.init_state(h2);
    DecoderState {
        h: g.value(h).clone(),
        c: g.value(c).clone(),
        ctx: g.value(ctx).clone(),
    }
}

/// Advances the decoder by one token. `gate_override` clamps the
/// generate/copy gate.
pub fn decode_step(
    params: &ModelParams,
    memory: &DecoderMemory,
    prev: &DecoderState,
    prev_token: usize,
    gate_override: Option<f64>,
) -> StepOutput {
    let (mut g, _) = new_graph(params, None);
    let mut net = Net {
        g: &mut g,
        params,
        dropout: 0.0,
    };
    let h2 = net.g.input(memory.h2_src.clone());
    let proj = net.g.input(memory.enc_proj.clone());
    let h = net.g.input(prev.h.clone());
    let c = net.g.input(prev.c.clone());
    let ctx = net.g.input(prev.ctx.clone());
    let [h, c, ctx, gen, attn, gate] = net.step(
        h2,
        proj,
        &memory.mask,
        (h, c, ctx),
        prev_token,
        gate_override,
    );
    StepOutput {
        state: DecoderState {
            h: g.value(h).clone(),
            c: g.value(c).clone(),
            ctx: g.value(ctx).clone(),
        },
        gen: g.value(gen).clone(),
        attn: g.value(attn).clone(),
        gate: g.value(gate).get(0, 0),
    }
}

/// Final output distribution over surface tokens: vocabulary entries
/// followed by source tokens missing from the vocabulary, each with
/// `gate * gen + (1 - gate) * copy` mass. `source` is the source block
/// including `<bos>` and `<sep>`.
pub fn surface_distribution<S: AsRef<str>>(
    params: &ModelParams,
    step: &StepOutput,
    source: &[S],
) -> Vec<(String, f64)> {
    let vocab = &params.vocab;
    let g = step.gate;
    let mut out: Vec<(String, f64)> = vocab
        .tokens()
        .iter()
        .zip(step.gen.data())
        .map(|(t, &p)| (t.clone(), g * p))
        .collect();
    for (pos, tok) in source.iter().enumerate() {
        let a = step.attn.get(0, pos);
        if a == 0.0 {
            continue;
        }
        let tok = tok.as_ref();
        let idx = match vocab.id(tok) {
            Some(i) => i,
            None => match out[vocab.len()..].iter().position(|(t, _)| t == tok) {
                Some(j) => vocab.len() + j,
                None => {
                    out.push((tok.to_string(), 0.0));
                    out.len() - 1
                }
            },
        };
        out[idx].1 += (1.0 - g) * a;
    }
    out
}

// ---- loss ----

/// Builds the teacher-forced loss on `g`. Returns the loss node, the per
/// step output nodes and the unknown-target count.
fn build_loss<'p>(
    g: &mut Graph<'p>,
    params: &'p ModelParams,
    ex: &TrainingExample,
    dropout: f64,
    gate_override: Option<f64>,
) -> Result<(Var, Vec<[Var; 6]>, usize)> {
    check_input(params, ex.input.len(), &ex.segment_ids)?;
    let src_len = ex.source_block_len();
    if src_len < 3 || ex.input[0] != BOS {
        return Err(Error::Config("encoder input lacks a source block".into()));
    }
    if ex.target.is_empty() {
        return Err(Error::Config("empty target".into()));
    }
    let ids = token_ids(params, &ex.input);
    let source = &ex.input[..src_len];
    let mask = attention_mask(src_len);
    let mut net = Net { g, params, dropout };
    let h2 = net.encode(&ids, &ex.segment_ids, src_len);
    let proj = net.memory(h2);
    let mut state = net.init_state(h2);
    let mut prev = params.vocab.id_or_unk(BOS);
    let mut total: Option<Var> = None;
    let mut steps = Vec::with_capacity(ex.target.len());
    let mut unknown = 0;
    for tok in &ex.target {
        let out = net.step(h2, proj, &mask, state, prev, gate_override);
        let [h, c, ctx, gen, attn, gate] = out;
        let positions: Vec<usize> = (1..src_len - 1).filter(|&p| source[p] == *tok).collect();
        let mut vocab_id = params.vocab.id(tok);
        if vocab_id.is_none() && positions.is_empty() {
            vocab_id = Some(UNK_ID);
            unknown += 1;
        }
        let p = net.g.copy_mix(gen, attn, gate, vocab_id, &positions);
        let lp = net.g.ln(p);
        total = Some(match total {
            None => lp,
            Some(t) => net.g.add(t, lp),
        });
        steps.push(out);
        state = (h, c, ctx);
        prev = params.vocab.id_or_unk(tok);
    }
    let loss = net.g.scale(
        total.expect("non-empty target"),
        -1.0 / ex.target.len() as f64,
    );
    Ok((loss, steps, unknown))
}

/// Teacher-forced negative log-likelihood of `ex.target`, per token.
pub fn forward_loss(params: &ModelParams, ex: &TrainingExample) -> Result<LossOutput> {
    forward_loss_with(params, ex, None)
}

pub fn forward_loss_with(
    params: &ModelParams,
    ex: &TrainingExample,
    gate_override: Option<f64>,
) -> Result<LossOutput> {
    let (mut g, _) = new_graph(params, None);
    let (loss, _, unknown) = build_loss(&mut g, params, ex, 0.0, gate_override)?;
    Ok(LossOutput {
        loss: g.value(loss).get(0, 0),
        n_tokens: ex.target.len(),
        unknown_targets: unknown,
    })
}

/// Loss and its gradient for every parameter tensor. Dropout is active
/// only when `rng` is given.
pub fn loss_and_gradients(
    params: &ModelParams,
    ex: &TrainingExample,
    rng: Option<ChaCha8Rng>,
) -> Result<(LossOutput, Vec<Tensor>)> {
    let (mut g, dropout) = new_graph(params, rng);
    let (loss, _, unknown) = build_loss(&mut g, params, ex, dropout, None)?;
    let mut grads = params.zeros_like();
    g.backward(loss, &mut grads);
    let out = LossOutput {
        loss: g.value(loss).get(0, 0),
        n_tokens: ex.target.len(),
        unknown_targets: unknown,
    };
    Ok((out, grads))
}

/// Fraction of target tokens whose teacher-forced surface distribution
/// puts its maximum on the reference token.
pub fn teacher_forced_accuracy(params: &ModelParams, examples: &[TrainingExample]) -> Result<f64> {
    use rayon::prelude::*;
    let counts = examples
        .par_iter()
        .map(|ex| -> Result<(usize, usize)> {
            let (mut g, _) = new_graph(params, None);
            let (_, steps, _) = build_loss(&mut g, params, ex, 0.0, None)?;
            let source = &ex.input[..ex.source_block_len()];
            let mut hits = 0;
            for (out, tok) in steps.iter().zip(&ex.target) {
                let step = StepOutput {
                    state: DecoderState {
                        h: Tensor::zeros(0, 0),
                        c: Tensor::zeros(0, 0),
                        ctx: Tensor::zeros(0, 0),
                    },
                    gen: g.value(out[3]).clone(),
                    attn: g.value(out[4]).clone(),
                    gate: g.value(out[5]).get(0, 0),
                };
                let dist = surface_distribution(params, &step, source);
                let best = argmax(&dist);
                if dist[best].0 == *tok {
                    hits += 1;
                }
            }
            Ok((hits, ex.target.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |(h, t), (a, b)| (h + a, t + b));
    Ok(if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    })
}

/// Index of the largest probability; the earliest on ties.
pub(crate) fn argmax(dist: &[(String, f64)]) -> usize {
    let mut best = 0;
    for (i, (_, p)) in dist.iter().enumerate() {
        if *p > dist[best].1 {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::vocab::Vocab;
    use rand::{Rng, SeedableRng};

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_bottom: 8,
            n_bottom: 2,
            d_top: 6,
            d_ffn: 10,
            n_top: 1,
            n_heads: 2,
            d_dec: 5,
            d_emb_dec: 4,
            max_len: 16,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn params_with(cfg: &ModelConfig) -> ModelParams {
        let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e", "f"]);
        ModelParams::init(cfg, vocab).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn example() -> TrainingExample {
        TrainingExample {
            input: toks("<bos> a b zz <sep> c d <sep>"),
            segment_ids: vec![0, 0, 0, 0, 0, 1, 1, 1],
            target: toks("<sub> a <rel> zz <obj> qq <eot>"),
            copy: vec![None, Some(0), None, Some(2), None, None, None],
        }
    }

    #[test]
    fn zero_tables_embed_to_zero() {
        let mut p = params_with(&cfg());
        for name in ["embed.token", "embed.segment", "embed.position"] {
            p.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let e = embed_inputs(&p, &toks("<bos> a <sep>"), &[0, 0, 0]).unwrap();
        assert!(e.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn embedding_decomposes() {
        let p = params_with(&cfg());
        let e0 = embed_inputs(&p, &toks("<bos> a <sep> b"), &[0, 0, 0, 0]).unwrap();
        let e1 = embed_inputs(&p, &toks("<bos> a <sep> b"), &[0, 0, 0, 1]).unwrap();
        let s = p.get("embed.segment").unwrap();
        for c in 0..e0.cols() {
            let diff = e1.get(3, c) - e0.get(3, c);
            assert!((diff - (s.get(1, c) - s.get(0, c))).abs() < 1e-15);
        }
        let one = embed_inputs(&p, &toks("a"), &[0]).unwrap();
        let id = p.vocab.id("a").unwrap();
        for c in 0..one.cols() {
            let expect = p.get("embed.token").unwrap().get(id, c)
                + s.get(0, c)
                + p.get("embed.position").unwrap().get(0, c);
            assert_eq!(one.get(0, c), expect);
        }
    }

    #[test]
    fn too_long_input_is_rejected() {
        let p = params_with(&cfg());
        let tokens = vec!["a".to_string(); 17];
        assert!(embed_inputs(&p, &tokens, &[0; 17]).is_err());
    }

    #[test]
    fn padding_does_not_leak() {
        let p = params_with(&cfg());
        let base = toks("<bos> a b <sep> c d <sep>");
        let segs = vec![0, 0, 0, 0, 1, 1, 1];
        let mut padded = base.clone();
        padded.extend(toks("<pad> <pad> <pad>"));
        let mut psegs = segs.clone();
        psegs.extend([1, 1, 1]);
        let e = embed_inputs(&p, &base, &segs).unwrap();
        let ep = embed_inputs(&p, &padded, &psegs).unwrap();
        let h = encode_bottom(&p, &e, &[false; 7]);
        let mut mask = vec![false; 7];
        mask.extend([true; 3]);
        let hp = encode_bottom(&p, &ep, &mask);
        assert_eq!(hp.rows(), 10);
        assert!(h.max_abs_diff(&hp.slice_rows(0, 7)) <= 1e-6);
        for a in bottom_attention(&p, &ep, &mask) {
            for r in 0..a.rows() {
                let row = a.row(r);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row[7..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn top_without_layers_is_projection() {
        let c = ModelConfig { n_top: 0, ..cfg() };
        let p = params_with(&c);
        let st = encode(&p, &toks("<bos> a b <sep> c <sep>"), &[0, 0, 0, 0, 1, 1]).unwrap();
        let w = p.get("top.proj.w").unwrap();
        let b = p.get("top.proj.b").unwrap();
        let mut expect = st.h1_src.matmul(w);
        for r in 0..expect.rows() {
            for (x, y) in expect.row_mut(r).iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        assert_eq!(st.h2_src, expect);
    }

    #[test]
    fn top_sees_only_the_source_block() {
        let p = params_with(&cfg());
        let st = encode(
            &p,
            &toks("<bos> a b <sep> c d <sep>"),
            &[0, 0, 0, 0, 1, 1, 1],
        )
        .unwrap();
        assert_eq!(st.h1_src.rows(), 4);
        assert_eq!(st.h2_src.shape(), (4, 6));
        let mut h1 = st.h1_full.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in 4..7 {
            for x in h1.row_mut(r) {
                *x += rng.gen_range(-5.0..5.0);
            }
        }
        let h2 = encode_top(&p, &h1, 4);
        assert!(h2.max_abs_diff(&st.h2_src) <= 1e-12);
    }

    #[test]
    fn context_tokens_reach_the_source() {
        let p = params_with(&cfg());
        let segs = [0, 0, 0, 0, 1, 1, 1];
        let a = encode(&p, &toks("<bos> a b <sep> c d <sep>"), &segs).unwrap();
        let b = encode(&p, &toks("<bos> a b <sep> e d <sep>"), &segs).unwrap();
        assert!(a.h1_src.max_abs_diff(&b.h1_src) >= 1e-6);
    }

    fn step_for(p: &ModelParams, gate: Option<f64>) -> (StepOutput, Vec<String>) {
        let input = toks("<bos> a zz zz <sep> c <sep>");
        let st = encode(p, &input, &[0, 0, 0, 0, 0, 1, 1]).unwrap();
        let mem = decoder_memory(p, &st.h2_src);
        let s0 = initial_state(p, &mem);
        let out = decode_step(p, &mem, &s0, p.vocab.id_or_unk(BOS), gate);
        (out, input[..5].to_vec())
    }

    #[test]
    fn distributions_are_normalized() {
        let p = params_with(&cfg());
        let (out, source) = step_for(&p, None);
        assert!((out.gen.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((out.attn.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(out.attn.get(0, 0), 0.0);
        assert_eq!(out.attn.get(0, 4), 0.0);
        assert!(out.gate > 0.0 && out.gate < 1.0);
        let dist = surface_distribution(&p, &out, &source);
        assert!((dist.iter().map(|d| d.1).sum::<f64>() - 1.0).abs() < 1e-9);
        // one extended entry for the repeated out-of-vocabulary token
        assert_eq!(dist.len(), p.vocab.len() + 1);
    }

    #[test]
    fn clamped_gate_restricts_support() {
        let p = params_with(&cfg());
        let (out, source) = step_for(&p, Some(0.0));
        for (tok, prob) in surface_distribution(&p, &out, &source) {
            if prob > 0.0 {
                assert!(tok == "a" || tok == "zz", "{tok}");
            }
        }
        let (out, source) = step_for(&p, Some(1.0));
        let dist = surface_distribution(&p, &out, &source);
        for (tok, prob) in &dist[p.vocab.len()..] {
            assert_eq!(*prob, 0.0, "{tok}");
        }
    }

    #[test]
    fn uniform_mixture_gives_log_vocab() {
        let vocab = Vocab::from_tokens((0..12).map(|i| format!("w{i}")));
        assert_eq!(vocab.len(), 20);
        let mut p = ModelParams::init(&cfg(), vocab).unwrap();
        p.get_mut("decoder.out.w").unwrap().data_mut().fill(0.0);
        p.get_mut("decoder.out.b").unwrap().data_mut().fill(0.0);
        let ex = TrainingExample {
            input: toks("<bos> w1 w2 <sep>"),
            segment_ids: vec![0; 4],
            target: toks("<sub> w1 <rel> w5 <obj> <eot>"),
            copy: vec![None; 6],
        };
        let out = forward_loss_with(&p, &ex, Some(1.0)).unwrap();
        assert!((out.loss - 20f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.9957).abs() < 5e-5);
    }

    #[test]
    fn loss_is_stateless_and_counts_unknowns() {
        let p = params_with(&cfg());
        let ex = example();
        let a = forward_loss(&p, &ex).unwrap();
        let b = forward_loss(&p, &ex).unwrap();
        assert_eq!(a, b);
        assert!(a.loss >= 0.0 && a.loss.is_finite());
        assert_eq!(a.unknown_targets, 1);
        let (c, _) = loss_and_gradients(&p, &ex, None).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn dead_segment_row_has_zero_gradient() {
        let p = params_with(&cfg());
        let ex = TrainingExample {
            input: toks("<bos> a b <sep>"),
            segment_ids: vec![0; 4],
            target: toks("<sub> a <rel> b <obj> <eot>"),
            copy: vec![None; 6],
        };
        let (_, grads) = loss_and_gradients(&p, &ex, None).unwrap();
        let s = p.index_of("embed.segment").unwrap();
        assert!(grads[s].row(1).iter().all(|&x| x == 0.0));
        assert!(grads[s].row(0).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn accuracy_is_a_fraction() {
        let p = params_with(&cfg());
        let acc = teacher_forced_accuracy(&p, &[example()]).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
