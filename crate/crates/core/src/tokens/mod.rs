//! Semantic and multi-layer acoustic token streams, the frame-rate arithmetic
//! linking them, and prompt assembly for conversion.

mod file;

pub use file::{decode_tokens, encode_tokens, read_tokens, write_tokens, TOKEN_FILE_MAGIC, TOKEN_FILE_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Special ids allocated above both vocabularies, in this order.
pub const NUM_SPECIALS: usize = 4;

/// Vocabulary sizes, codec geometry and frame rates shared by every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabConfig {
    pub semantic_vocab: u32,
    pub acoustic_vocab: u32,
    pub num_layers: u16,
    pub semantic_frame_ms: f64,
    pub acoustic_frame_ms: f64,
}

impl Default for VocabConfig {
    /// Codec geometry of the reference system: 6 quantizers of 1024 codes at
    /// 12.5 ms, semantic units at 20 ms.
    fn default() -> Self {
        Self {
            semantic_vocab: 320,
            acoustic_vocab: 1024,
            num_layers: 6,
            semantic_frame_ms: 20.0,
            acoustic_frame_ms: 12.5,
        }
    }
}

fn centi_ms(ms: f64) -> Option<u32> {
    let c = (ms * 100.0).round();
    ((c - ms * 100.0).abs() < 1e-6 && c > 0.0 && c <= u16::MAX as f64).then_some(c as u32)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl VocabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::config("num_layers must be at least 1"));
        }
        if self.semantic_vocab == 0 || self.acoustic_vocab == 0 {
            return Err(Error::config("vocabularies must be non-empty"));
        }
        if self.mask_id() + NUM_SPECIALS as u32 > u16::MAX as u32 + 1 {
            return Err(Error::config("token ids must fit in 16 bits"));
        }
        if centi_ms(self.semantic_frame_ms).is_none() || centi_ms(self.acoustic_frame_ms).is_none() {
            return Err(Error::config(
                "frame durations must be positive multiples of 0.01 ms below 655.36 ms",
            ));
        }
        Ok(())
    }

    pub fn semantic_frame_cms(&self) -> u32 {
        centi_ms(self.semantic_frame_ms).unwrap_or(1)
    }

    pub fn acoustic_frame_cms(&self) -> u32 {
        centi_ms(self.acoustic_frame_ms).unwrap_or(1)
    }

    fn special_base(&self) -> TokenId {
        self.semantic_vocab.max(self.acoustic_vocab)
    }

    pub fn mask_id(&self) -> TokenId {
        self.special_base()
    }

    pub fn eos_id(&self) -> TokenId {
        self.special_base() + 1
    }

    pub fn pad_id(&self) -> TokenId {
        self.special_base() + 2
    }

    /// Start-of-stream id used as the first teacher-forced acoustic input.
    pub fn bos_id(&self) -> TokenId {
        self.special_base() + 3
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (self.special_base()..self.special_base() + NUM_SPECIALS as TokenId).contains(&id)
    }

    pub fn semantic_head_size(&self) -> usize {
        self.semantic_vocab as usize + NUM_SPECIALS
    }

    pub fn acoustic_head_size(&self) -> usize {
        self.acoustic_vocab as usize + NUM_SPECIALS
    }

    fn dense_index(&self, id: TokenId, vocab: u32) -> Result<usize> {
        if id < vocab {
            Ok(id as usize)
        } else if self.is_special(id) {
            Ok(vocab as usize + (id - self.special_base()) as usize)
        } else {
            Err(Error::Index(format!("token {id} outside vocabulary of {vocab}")))
        }
    }

    /// Row of `id` in semantic embedding / output tables.
    pub fn semantic_index(&self, id: TokenId) -> Result<usize> {
        self.dense_index(id, self.semantic_vocab)
    }

    /// Row of `id` in acoustic embedding / output tables.
    pub fn acoustic_index(&self, id: TokenId) -> Result<usize> {
        self.dense_index(id, self.acoustic_vocab)
    }

    /// Inverse of [`acoustic_index`](Self::acoustic_index).
    pub fn acoustic_token(&self, index: usize) -> TokenId {
        let v = self.acoustic_vocab as usize;
        if index < v {
            index as TokenId
        } else {
            self.special_base() + (index - v) as TokenId
        }
    }

    /// Steps of the shared time grid covered by one (semantic, acoustic) frame.
    /// At 20 ms / 12.5 ms the grid unit is 2.5 ms and the strides are (8, 5).
    pub fn position_strides(&self) -> (usize, usize) {
        let (s, a) = (self.semantic_frame_cms(), self.acoustic_frame_cms());
        let g = gcd(s, a);
        ((s / g) as usize, (a / g) as usize)
    }

    /// Acoustic frames spanning `t_s` semantic frames, rounded to nearest.
    pub fn expected_acoustic_len(&self, t_s: usize) -> usize {
        let num = t_s as u64 * self.semantic_frame_cms() as u64;
        let den = self.acoustic_frame_cms() as u64;
        ((2 * num + den) / (2 * den)) as usize
    }

    pub fn check_semantic(&self, id: TokenId) -> bool {
        id < self.semantic_vocab || self.is_special(id)
    }

    pub fn check_acoustic(&self, id: TokenId) -> bool {
        id < self.acoustic_vocab || self.is_special(id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SemanticSeq(Vec<TokenId>);

impl SemanticSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &SemanticSeq) -> SemanticSeq {
        SemanticSeq(self.0.iter().chain(&other.0).copied().collect())
    }

    pub fn prefix(&self, n: usize) -> SemanticSeq {
        SemanticSeq(self.0[..n.min(self.0.len())].to_vec())
    }
}

/// L rows of acoustic ids, one per codec layer; row 0 is the coarse stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AcousticGrid {
    layers: Vec<Vec<TokenId>>,
}

impl AcousticGrid {
    pub fn new(layers: Vec<Vec<TokenId>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("acoustic grid needs at least one layer"));
        }
        let t = layers[0].len();
        if layers.iter().any(|r| r.len() != t) {
            return Err(Error::shape("acoustic grid rows differ in length"));
        }
        Ok(Self { layers })
    }

    pub fn filled(num_layers: usize, len: usize, id: TokenId) -> Self {
        Self { layers: vec![vec![id; len]; num_layers.max(1)] }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.layers[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Zero-based layer row (0 is the coarse layer).
    pub fn layer(&self, l: usize) -> &[TokenId] {
        &self.layers[l]
    }

    pub fn coarse(&self) -> &[TokenId] {
        &self.layers[0]
    }

    pub fn layers(&self) -> &[Vec<TokenId>] {
        &self.layers
    }

    pub fn set_layer(&mut self, l: usize, row: Vec<TokenId>) -> Result<()> {
        if row.len() != self.len() {
            return Err(Error::shape("replacement row length differs"));
        }
        self.layers[l] = row;
        Ok(())
    }

    /// First `n` frames of every layer.
    pub fn prefix(&self, n: usize) -> AcousticGrid {
        let n = n.min(self.len());
        Self { layers: self.layers.iter().map(|r| r[..n].to_vec()).collect() }
    }
}

/// One utterance as aligned semantic and acoustic token streams.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtterancePair {
    pub speaker_id: u32,
    pub semantic: SemanticSeq,
    pub acoustic: AcousticGrid,
}

impl UtterancePair {
    pub fn validate(&self, vocab: &VocabConfig) -> Result<()> {
        if let Some(id) = self.semantic.tokens().iter().find(|&&id| !vocab.check_semantic(id)) {
            return Err(Error::Index(format!("semantic id {id} out of range")));
        }
        if self.acoustic.num_layers() != vocab.num_layers as usize {
            return Err(Error::shape(format!(
                "{} acoustic layers, vocabulary declares {}",
                self.acoustic.num_layers(),
                vocab.num_layers
            )));
        }
        for row in self.acoustic.layers() {
            if let Some(id) = row.iter().find(|&&id| !vocab.check_acoustic(id)) {
                return Err(Error::Index(format!("acoustic id {id} out of range")));
            }
        }
        let expected = vocab.expected_acoustic_len(self.semantic.len());
        if self.acoustic.len().abs_diff(expected) > 1 {
            return Err(Error::shape(format!(
                "{} acoustic frames for {} semantic frames (expected {expected})",
                self.acoustic.len(),
                self.semantic.len()
            )));
        }
        Ok(())
    }

    /// The first `t_s` semantic frames and the acoustic frames spanning them.
    pub fn truncate(&self, t_s: usize, vocab: &VocabConfig) -> UtterancePair {
        let t_s = t_s.min(self.semantic.len());
        UtterancePair {
            speaker_id: self.speaker_id,
            semantic: self.semantic.prefix(t_s),
            acoustic: self.acoustic.prefix(vocab.expected_acoustic_len(t_s)),
        }
    }
}

/// Inputs of coarse generation: `[s̃ ∥ s]`, the target grid whose layer-1
/// row is the acoustic prefix, and segment boundaries `[0, |s̃|, |s̃|+|s|]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarsePrompt {
    pub semantic: SemanticSeq,
    pub prompt_grid: AcousticGrid,
    pub offsets: Vec<usize>,
    pub target_speaker: u32,
}

impl CoarsePrompt {
    pub fn acoustic_prefix(&self) -> &[TokenId] {
        self.prompt_grid.coarse()
    }

    pub fn target_semantic_len(&self) -> usize {
        self.offsets[1]
    }

    pub fn source_semantic_len(&self) -> usize {
        self.offsets[2] - self.offsets[1]
    }
}

/// Prompt for converting `source_semantic` into the voice of `target`.
pub fn build_coarse_prompt(target: &UtterancePair, source_semantic: &SemanticSeq) -> Result<CoarsePrompt> {
    if target.semantic.is_empty() || target.acoustic.is_empty() {
        return Err(Error::EmptyInput("target utterance is empty".into()));
    }
    if source_semantic.is_empty() {
        return Err(Error::EmptyInput("source semantic sequence is empty".into()));
    }
    let t1 = target.semantic.len();
    Ok(CoarsePrompt {
        semantic: target.semantic.concat(source_semantic),
        prompt_grid: target.acoustic.clone(),
        offsets: vec![0, t1, t1 + source_semantic.len()],
        target_speaker: target.speaker_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_vocab() -> VocabConfig {
        VocabConfig { semantic_vocab: 320, acoustic_vocab: 1024, num_layers: 4, ..Default::default() }
    }

    #[test]
    fn ten_seconds_is_1300_tokens() {
        let v = VocabConfig::default();
        assert_eq!(v.expected_acoustic_len(500), 800);
        assert_eq!(500 + v.expected_acoustic_len(500), 1300);
        assert_eq!(v.expected_acoustic_len(0), 0);
        assert_eq!(v.expected_acoustic_len(5), 8);
        assert_eq!(v.position_strides(), (8, 5));
    }

    #[test]
    fn default_geometry() {
        let v = VocabConfig::default();
        assert_eq!((v.acoustic_vocab, v.num_layers), (1024, 6));
        v.validate().unwrap();
    }

    #[test]
    fn specials_are_distinct_and_above_vocab() {
        let v = toy_vocab();
        let ids = [v.mask_id(), v.eos_id(), v.pad_id(), v.bos_id()];
        for (i, a) in ids.iter().enumerate() {
            assert!(*a >= 1024);
            assert!(v.is_special(*a));
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(v.semantic_index(v.eos_id()).unwrap(), 321);
        assert_eq!(v.acoustic_index(v.eos_id()).unwrap(), 1025);
        assert_eq!(v.acoustic_token(1025), v.eos_id());
        assert!(v.semantic_index(500).is_err());
    }

    #[test]
    fn invalid_vocab() {
        let mut v = toy_vocab();
        v.num_layers = 0;
        assert!(v.validate().is_err());
        let mut v = toy_vocab();
        v.acoustic_frame_ms = 0.0;
        assert!(v.validate().is_err());
    }

    #[test]
    fn coarse_prompt_lengths_and_offsets() {
        let v = toy_vocab();
        let target = UtterancePair {
            speaker_id: 1,
            semantic: SemanticSeq::new((0..10).collect()),
            acoustic: AcousticGrid::filled(4, 16, 7),
        };
        let source = SemanticSeq::new((100..120).collect());
        let p = build_coarse_prompt(&target, &source).unwrap();
        assert_eq!(p.semantic.len(), 30);
        assert_eq!(p.acoustic_prefix().len(), 16);
        assert_eq!(p.offsets, vec![0, 10, 30]);
        assert_eq!(&p.semantic.tokens()[..10], target.semantic.tokens());
        assert_eq!(&p.semantic.tokens()[10..], source.tokens());
        target.validate(&v).unwrap();
        assert!(matches!(
            build_coarse_prompt(&target, &SemanticSeq::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn self_conversion_prompt() {
        let u = UtterancePair {
            speaker_id: 2,
            semantic: SemanticSeq::new(vec![4, 5, 6, 7, 8]),
            acoustic: AcousticGrid::new(vec![(0..8).collect(); 4]).unwrap(),
        };
        let p = build_coarse_prompt(&u, &u.semantic).unwrap();
        assert_eq!(p.acoustic_prefix(), u.acoustic.coarse());
        assert_eq!(p.target_semantic_len(), p.source_semantic_len());
    }

    proptest! {
        #[test]
        fn acoustic_len_monotone(t in 0usize..5000) {
            let v = VocabConfig::default();
            prop_assert!(v.expected_acoustic_len(t) <= v.expected_acoustic_len(t + 1));
            prop_assert_eq!(v.expected_acoustic_len(5 * t), 8 * t);
        }

        #[test]
        fn prompt_preserves_segment_order(a in prop::collection::vec(0u32..320, 1..40),
                                          b in prop::collection::vec(0u32..320, 1..40)) {
            let target = UtterancePair {
                speaker_id: 0,
                semantic: SemanticSeq::new(a.clone()),
                acoustic: AcousticGrid::filled(4, 3, 1),
            };
            let p = build_coarse_prompt(&target, &SemanticSeq::new(b.clone())).unwrap();
            let (lo, hi) = p.semantic.tokens().split_at(a.len());
            prop_assert_eq!(lo, &a[..]);
            prop_assert_eq!(hi, &b[..]);
            prop_assert!(p.offsets.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
