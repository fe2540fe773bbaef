//! Decoder-only transformer shared by the three language models.
//!
//! * MPLM: semantic prefix (bidirectional) + coarse acoustic continuation (causal).
//! * ELM: coarse acoustic stream only, sliding-window causal attention.
//! * PLM: semantic prefix + summed acoustic layers, fully bidirectional, one
//!   codec layer per pass selected by a layer-index embedding.
//!
//! Positions come from one learned table indexed on a time grid whose unit is
//! the gcd of the two frame durations, so a semantic frame and the acoustic
//! frames it covers sit at nearby rows regardless of sequence layout.

mod checkpoint;
mod forward;
mod infer;
mod train;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokens::VocabConfig;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use forward::{batch_loss, Example, LossParts, MplmExample, PlmExample};
pub(crate) use infer::{KvCache, Stream};
pub use train::{
    build_examples, train, unigram_entropy, validation_loss, TrainConfig, TrainData, TrainLogRow, TrainSummary,
    TRAIN_LOG_FILE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mplm,
    Elm,
    Plm,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Mplm => 0,
            ModelKind::Elm => 1,
            ModelKind::Plm => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [ModelKind::Mplm, ModelKind::Elm, ModelKind::Plm].into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mplm => "mplm",
            ModelKind::Elm => "elm",
            ModelKind::Plm => "plm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mplm" => Ok(ModelKind::Mplm),
            "elm" => Ok(ModelKind::Elm),
            "plm" => Ok(ModelKind::Plm),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Rows of the time-grid position table.
    pub max_positions: usize,
    /// ELM attention window w; ignored by the other kinds.
    pub window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { num_layers: 4, num_heads: 4, embed_dim: 128, ff_dim: 512, dropout: 0.1, max_positions: 1024, window: 20 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.embed_dim == 0 || self.ff_dim == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if self.max_positions == 0 || self.window == 0 {
            return Err(Error::config("max_positions and window must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BlockIdx {
    pub ln1: (usize, usize),
    pub q: (usize, usize),
    pub k: (usize, usize),
    pub v: (usize, usize),
    pub o: (usize, usize),
    pub ln2: (usize, usize),
    pub ff1: (usize, usize),
    pub ff2: (usize, usize),
}

/// Indices of every parameter tensor, by role.
#[derive(Clone, Debug)]
pub(crate) struct ParamLayout {
    pub pos: usize,
    pub sem_emb: Option<usize>,
    /// One table for MPLM/ELM; one per codec layer for the PLM.
    pub ac_emb: Vec<usize>,
    pub layer_emb: Option<usize>,
    pub blocks: Vec<BlockIdx>,
    pub ln_f: (usize, usize),
    pub sem_head: Option<(usize, usize)>,
    pub ac_head: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct LmModel {
    kind: ModelKind,
    config: ModelConfig,
    vocab: VocabConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub(crate) layout: ParamLayout,
}

enum Init {
    Normal(f64),
    Ones,
    Zeros,
    Sinusoid(f64),
}

impl LmModel {
    /// Fresh model with zeroed output heads, so every head starts uniform.
    pub fn new(kind: ModelKind, config: ModelConfig, vocab: VocabConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        vocab.validate()?;
        if kind == ModelKind::Plm && vocab.num_layers < 2 {
            return Err(Error::config("the PLM needs at least two codec layers"));
        }
        let d = config.embed_dim;
        let ff = config.ff_dim;
        let sv = vocab.semantic_head_size();
        let av = vocab.acoustic_head_size();
        let emb_std = 0.5;
        let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            specs.push((name, shape, init));
            specs.len() - 1
        };

        let pos = push("pos".into(), vec![config.max_positions, d], Init::Sinusoid(emb_std));
        let sem_emb = (kind != ModelKind::Elm).then(|| push("sem_emb".into(), vec![sv, d], Init::Normal(emb_std)));
        let ac_emb = match kind {
            ModelKind::Plm => (1..=vocab.num_layers)
                .map(|l| push(format!("ac_emb.{l}"), vec![av, d], Init::Normal(emb_std)))
                .collect(),
            _ => vec![push("ac_emb".into(), vec![av, d], Init::Normal(emb_std))],
        };
        let layer_emb = (kind == ModelKind::Plm)
            .then(|| push("layer_emb".into(), vec![vocab.num_layers as usize + 1, d], Init::Normal(emb_std)));
        let in_std = 1.0 / (d as f64).sqrt();
        let out_std = in_std / (2.0 * config.num_layers as f64).sqrt();
        let ff_out_std = 1.0 / (ff as f64).sqrt() / (2.0 * config.num_layers as f64).sqrt();
        let blocks = (0..config.num_layers)
            .map(|i| {
                let mut lin = |n: &str, fan_in: usize, fan_out: usize, std: f64| {
                    (
                        push(format!("blk{i}.{n}.w"), vec![fan_in, fan_out], Init::Normal(std)),
                        push(format!("blk{i}.{n}.b"), vec![fan_out], Init::Zeros),
                    )
                };
                let q = lin("q", d, d, in_std);
                let k = lin("k", d, d, in_std);
                let v = lin("v", d, d, in_std);
                let o = lin("o", d, d, out_std);
                let ff1 = lin("ff1", d, ff, in_std);
                let ff2 = lin("ff2", ff, d, ff_out_std);
                let ln1 = (
                    push(format!("blk{i}.ln1.g"), vec![d], Init::Ones),
                    push(format!("blk{i}.ln1.b"), vec![d], Init::Zeros),
                );
                let ln2 = (
                    push(format!("blk{i}.ln2.g"), vec![d], Init::Ones),
                    push(format!("blk{i}.ln2.b"), vec![d], Init::Zeros),
                );
                BlockIdx { ln1, q, k, v, o, ln2, ff1, ff2 }
            })
            .collect();
        let ln_f = (push("ln_f.g".into(), vec![d], Init::Ones), push("ln_f.b".into(), vec![d], Init::Zeros));
        let sem_head = (kind == ModelKind::Mplm).then(|| {
            (
                push("sem_head.w".into(), vec![d, sv], Init::Zeros),
                push("sem_head.b".into(), vec![sv], Init::Zeros),
            )
        });
        let ac_head = (push("ac_head.w".into(), vec![d, av], Init::Zeros), push("ac_head.b".into(), vec![av], Init::Zeros));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
                Init::Sinusoid(scale) => sinusoid_table(shape[0], shape[1], scale),
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        let layout = ParamLayout { pos, sem_emb, ac_emb, layer_emb, blocks, ln_f, sem_head, ac_head };
        Ok(Self { kind, config, vocab, names, params, layout })
    }

    /// Rebuilds a model from named tensors, checking that names and shapes
    /// match what `kind`/`config`/`vocab` imply.
    pub fn from_named(
        kind: ModelKind,
        config: ModelConfig,
        vocab: VocabConfig,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let mut model = Self::new(kind, config, vocab, 0)?;
        let mut by_name: HashMap<String, Tensor> = named.into_iter().collect();
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint { offset: 0, msg: format!("missing tensor {name}") })?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint {
                    offset: 0,
                    msg: format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape()),
                });
            }
            *slot = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint { offset: 0, msg: format!("unexpected tensor {extra}") });
        }
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &VocabConfig {
        &self.vocab
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn has_semantic_inputs(&self) -> bool {
        self.layout.sem_emb.is_some()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut off = 0;
        for t in &mut self.params {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Adds N(0, std²) noise to every parameter, heads included. Used to get
    /// non-degenerate random models for property tests.
    pub fn perturb(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, std).expect("finite std");
        for t in &mut self.params {
            t.data_mut().iter_mut().for_each(|x| *x += dist.sample(&mut rng));
        }
    }

    /// SHA-256 over kind, config and parameter bits; identifies a checkpoint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update([self.kind.tag()]);
        h.update(format!("{:?}{:?}", self.config, self.vocab).as_bytes());
        for (name, t) in self.names.iter().zip(&self.params) {
            h.update(name.as_bytes());
            for x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Time-grid row of semantic frame `i`.
    pub(crate) fn semantic_row(&self, i: usize) -> usize {
        i * self.vocab.position_strides().0
    }

    /// Time-grid row of acoustic frame `t`.
    pub(crate) fn acoustic_row(&self, t: usize) -> usize {
        t * self.vocab.position_strides().1
    }

    pub(crate) fn check_row(&self, row: usize) -> Result<()> {
        if row >= self.config.max_positions {
            return Err(Error::Capacity { len: row + 1, max: self.config.max_positions });
        }
        Ok(())
    }

    pub(crate) fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::config(format!("expected a {} model, got {}", kind.name(), self.kind.name())));
        }
        Ok(())
    }
}


fn sinusoid_table(rows: usize, d: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; rows * d];
    for p in 0..rows {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = p as f64 * freq;
            out[p * d + i] = scale * if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    out
}
