//! Fixtures shared by the benchmarks.

use lmvc_core::synth::{generate_corpus, Corpus, CorpusConfig};
use lmvc_core::{LmModel, ModelConfig, ModelKind};

pub fn desk_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        num_layers: if kind == ModelKind::Elm { 1 } else { 2 },
        num_heads: 4,
        embed_dim: 64,
        ff_dim: 256,
        dropout: 0.0,
        max_positions: 512,
        window: 20,
    }
}

pub fn small_corpus() -> Corpus {
    generate_corpus(&CorpusConfig { utterances_per_speaker: 20, ..CorpusConfig::default() }).expect("default corpus config is valid")
}

/// A randomly initialized model with non-zero heads so decoding does real work.
pub fn desk_model(kind: ModelKind, corpus: &Corpus, seed: u64) -> LmModel {
    let mut m = LmModel::new(kind, desk_config(kind), corpus.vocab().clone(), seed).expect("desk config is valid");
    m.perturb(seed ^ 0x5EED, 0.05);
    m
}
