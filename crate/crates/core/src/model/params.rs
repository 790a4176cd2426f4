//! Parameter store, initialization and the JSON weights file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::tensor::Tensor;
use super::vocab::Vocab;
use crate::{Error, Result};

const FORMAT: &str = "ctxoie-model/1";

/// Optimizer group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Embeddings and bottom transformer blocks.
    Bottom,
    Other,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub ln_attn: Norm,
    pub q: Linear,
    /// Keys carry no bias: it would shift every score in a row equally.
    pub k: usize,
    pub v: Linear,
    pub o: Linear,
    pub ln_ffn: Norm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

/// Indices of every named tensor in the store.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub seg_emb: usize,
    pub pos_emb: usize,
    pub bottom: Vec<Block>,
    pub bottom_ln: Norm,
    pub proj: Linear,
    pub top: Vec<Block>,
    pub top_ln: Norm,
    pub dec_emb: usize,
    pub dec_init: Linear,
    pub lstm_x: Linear,
    pub lstm_h: usize,
    pub att_enc: usize,
    pub att_dec: Linear,
    pub att_v: usize,
    pub out: Linear,
    pub gate: Linear,
}

enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    group: ParamGroup,
    init: Init,
}

#[derive(Default)]
struct Registry {
    specs: Vec<Spec>,
}

impl Registry {
    fn add(
        &mut self,
        name: String,
        rows: usize,
        cols: usize,
        group: ParamGroup,
        init: Init,
    ) -> usize {
        self.specs.push(Spec {
            name,
            rows,
            cols,
            group,
            init,
        });
        self.specs.len() - 1
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize, group: ParamGroup) -> usize {
        let bound = 1.0 / (cols as f64).sqrt();
        self.add(name.into(), rows, cols, group, Init::Uniform(bound))
    }

    /// `x · w + b` with `w` of shape `fan_in x fan_out`, fan-in scaled.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: self.add(
                format!("{name}.w"),
                fan_in,
                fan_out,
                group,
                Init::Uniform(bound),
            ),
            b: self.add(format!("{name}.b"), 1, fan_out, group, Init::Uniform(bound)),
        }
    }

    fn matrix(&mut self, name: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name.into(), fan_in, fan_out, group, Init::Uniform(bound))
    }

    fn norm(&mut self, name: &str, dim: usize, group: ParamGroup) -> Norm {
        Norm {
            gain: self.add(format!("{name}.gain"), 1, dim, group, Init::Ones),
            bias: self.add(format!("{name}.bias"), 1, dim, group, Init::Zeros),
        }
    }

    fn block(&mut self, name: &str, d: usize, ffn: usize, group: ParamGroup) -> Block {
        Block {
            ln_attn: self.norm(&format!("{name}.ln_attn"), d, group),
            q: self.linear(&format!("{name}.q"), d, d, group),
            k: self.matrix(&format!("{name}.k"), d, d, group),
            v: self.linear(&format!("{name}.v"), d, d, group),
            o: self.linear(&format!("{name}.o"), d, d, group),
            ln_ffn: self.norm(&format!("{name}.ln_ffn"), d, group),
            ff_in: self.linear(&format!("{name}.ff_in"), d, ffn, group),
            ff_out: self.linear(&format!("{name}.ff_out"), ffn, d, group),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Registry) {
    use ParamGroup::{Bottom, Other};
    let mut r = Registry::default();
    let v = cfg.vocab_size;
    let layout = Layout {
        tok_emb: r.embedding("embed.token", v, cfg.d_bottom, Bottom),
        seg_emb: r.embedding("embed.segment", 2, cfg.d_bottom, Bottom),
        pos_emb: r.embedding("embed.position", cfg.max_len, cfg.d_bottom, Bottom),
        bottom: (0..cfg.n_bottom)
            .map(|i| r.block(&format!("bottom.{i}"), cfg.d_bottom, cfg.d_ffn, Bottom))
            .collect(),
        bottom_ln: r.norm("bottom.ln", cfg.d_bottom, Bottom),
        proj: r.linear("top.proj", cfg.d_bottom, cfg.d_top, Other),
        top: (0..cfg.n_top)
            .map(|i| r.block(&format!("top.{i}"), cfg.d_top, cfg.d_ffn, Other))
            .collect(),
        top_ln: r.norm("top.ln", cfg.d_top, Other),
        dec_emb: r.embedding("decoder.embed", v, cfg.d_emb_dec, Other),
        dec_init: r.linear("decoder.init", cfg.d_top, cfg.d_dec, Other),
        lstm_x: r.linear(
            "decoder.lstm_x",
            cfg.d_emb_dec + cfg.d_top,
            4 * cfg.d_dec,
            Other,
        ),
        lstm_h: r.matrix("decoder.lstm_h", cfg.d_dec, 4 * cfg.d_dec, Other),
        att_enc: r.matrix("decoder.att_enc", cfg.d_top, cfg.d_dec, Other),
        att_dec: r.linear("decoder.att_dec", cfg.d_dec, cfg.d_dec, Other),
        att_v: r.matrix("decoder.att_v", cfg.d_dec, 1, Other),
        out: r.linear("decoder.out", cfg.d_dec + cfg.d_top, v, Other),
        gate: r.linear(
            "decoder.gate",
            cfg.d_dec + cfg.d_top + cfg.d_emb_dec,
            1,
            Other,
        ),
    };
    (layout, r)
}

/// All trainable tensors plus the configuration and vocabulary they were
/// built for.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub vocab: Vocab,
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: ModelConfig,
    vocab: Vocab,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Random fan-in-scaled uniform initialization; layer-norm gains start
    /// at 1 and biases at 0. `config.vocab_size` is taken from `vocab`.
    pub fn init(config: &ModelConfig, vocab: Vocab) -> Result<Self> {
        let config = ModelConfig {
            vocab_size: vocab.len(),
            ..config.clone()
        };
        config.validate()?;
        let (layout, registry) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::new();
        let mut groups = Vec::new();
        let mut tensors = Vec::new();
        for spec in registry.specs {
            let data = (0..spec.rows * spec.cols)
                .map(|_| match spec.init {
                    Init::Uniform(b) => rng.gen_range(-b..=b),
                    Init::Ones => 1.0,
                    Init::Zeros => 0.0,
                })
                .collect();
            names.push(spec.name);
            groups.push(spec.group);
            tensors.push(Tensor::from_vec(spec.rows, spec.cols, data));
        }
        Ok(ModelParams {
            config,
            vocab,
            names,
            groups,
            tensors,
            layout,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT.into(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors: self
                .names
                .iter()
                .cloned()
                .zip(self.tensors.iter().cloned())
                .collect(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT {
            return Err(Error::ModelFormat(format!(
                "unknown format '{}'",
                file.format
            )));
        }
        if file.config.vocab_size != file.vocab.len() {
            return Err(Error::ModelFormat(
                "vocab_size does not match vocabulary".into(),
            ));
        }
        let mut params = ModelParams::init(&file.config, file.vocab)?;
        for (name, slot) in params.names.iter().zip(params.tensors.iter_mut()) {
            let t = file
                .tensors
                .remove(name)
                .ok_or_else(|| Error::ModelFormat(format!("missing tensor '{name}'")))?;
            if t.shape() != slot.shape() {
                return Err(Error::ModelFormat(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::ModelFormat(format!("tensor '{name}' is not finite")));
            }
            *slot = t;
        }
        if let Some(extra) = file.tensors.keys().next() {
            return Err(Error::ModelFormat(format!("unexpected tensor '{extra}'")));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
