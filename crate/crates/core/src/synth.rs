//! Synthetic paired token corpus with exact inverse oracles.
//!
//! Content is a sequence over a small alphabet drawn from a sparse Markov
//! chain. Each speaker owns a keyed injective map from (content symbol,
//! repeat phase) to layer-1 codec ids, and keyed hashes for the finer layers,
//! so that both the spoken content and the speaker of any acoustic grid can be
//! recovered exactly. Semantic tokens optionally leak the speaker through
//! speaker-specific aliases of each content symbol.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::{read_tokens, write_tokens, AcousticGrid, SemanticSeq, TokenId, UtterancePair, VocabConfig};

/// Decoded symbol for a frame that the claimed speaker's map cannot invert.
pub const FAILURE: u32 = u32::MAX;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CORPUS_CONFIG_FILE: &str = "corpus.toml";

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive mix of several words into one seed.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x51_7CC1_B727_220A_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub num_speakers: u32,
    pub utterances_per_speaker: u32,
    /// Inclusive semantic length range.
    pub min_len: usize,
    pub max_len: usize,
    /// Lengths are multiples of this (5 semantic frames = 8 acoustic frames).
    pub length_quantum: usize,
    pub alphabet: u32,
    pub markov_order: u32,
    /// Successors allowed per Markov context; `alphabet` gives a dense chain.
    pub branching: u32,
    pub leak_prob: f64,
    pub acoustic_vocab: u32,
    pub num_layers: u16,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_speakers: 4,
            utterances_per_speaker: 1500,
            min_len: 10,
            max_len: 30,
            length_quantum: 5,
            alphabet: 64,
            markov_order: 2,
            branching: 4,
            leak_prob: 0.3,
            acoustic_vocab: 1024,
            num_layers: 4,
            valid_frac: 0.1,
            test_frac: 0.1,
            seed: 17,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.num_speakers < 1 || self.utterances_per_speaker < 1 {
            return bad("speaker and utterance counts must be at least 1");
        }
        if self.length_quantum < 1 || self.min_len > self.max_len {
            return bad("length range is empty");
        }
        if self.max_len / self.length_quantum < self.min_len.div_ceil(self.length_quantum).max(1) {
            return bad("no multiple of length_quantum inside [min_len, max_len]");
        }
        if self.alphabet < 1 || self.branching < 1 || self.branching > self.alphabet {
            return bad("branching must lie in [1, alphabet]");
        }
        if self.markov_order > 3 {
            return bad("markov_order above 3 is not supported");
        }
        if !(0.0..=1.0).contains(&self.leak_prob) {
            return bad("leak_prob must lie in [0, 1]");
        }
        if 2 * self.alphabet > self.acoustic_vocab {
            return bad("acoustic vocabulary too small for (symbol, phase) pairs");
        }
        if self.valid_frac < 0.0 || self.test_frac < 0.0 || self.valid_frac + self.test_frac >= 1.0 {
            return bad("split fractions must be non-negative and leave a training share");
        }
        self.vocab().validate()
    }

    /// Base symbols plus one alias block per speaker.
    pub fn vocab(&self) -> VocabConfig {
        VocabConfig {
            semantic_vocab: self.alphabet * (1 + self.num_speakers),
            acoustic_vocab: self.acoustic_vocab,
            num_layers: self.num_layers,
            semantic_frame_ms: 20.0,
            acoustic_frame_ms: 12.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MarkovChain {
    order: usize,
    alphabet: u32,
    successors: Vec<Vec<u32>>,
}

impl MarkovChain {
    pub fn new(order: u32, alphabet: u32, branching: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let contexts = (alphabet as usize).pow(order);
        let all: Vec<u32> = (0..alphabet).collect();
        let successors = (0..contexts)
            .map(|_| {
                let mut s: Vec<u32> = all.choose_multiple(&mut rng, branching as usize).copied().collect();
                s.sort_unstable();
                s
            })
            .collect();
        Self { order: order as usize, alphabet, successors }
    }

    fn context(&self, history: &[u32]) -> usize {
        history[history.len() - self.order..]
            .iter()
            .fold(0, |acc, &c| acc * self.alphabet as usize + c as usize)
    }

    pub fn successors(&self, history: &[u32]) -> &[u32] {
        &self.successors[self.context(history)]
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let next = if out.len() < self.order {
                rng.gen_range(0..self.alphabet)
            } else {
                *self.successors(&out).choose(rng).expect("branching >= 1")
            };
            out.push(next);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSpeaker {
    pub speaker_id: u32,
    pub mapping_seed: u64,
    pub leak_prob: f64,
    /// (symbol · phases + phase) → layer-1 id.
    forward: Vec<TokenId>,
    /// layer-1 id → (symbol, phase).
    inverse: Vec<Option<(u32, u32)>>,
}

impl SyntheticSpeaker {
    fn new(speaker_id: u32, mapping_seed: u64, leak_prob: f64, alphabet: u32, phases: u32, vocab: &VocabConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mapping_seed);
        let mut perm: Vec<TokenId> = (0..vocab.acoustic_vocab).collect();
        perm.shuffle(&mut rng);
        let forward: Vec<TokenId> = perm[..(alphabet * phases) as usize].to_vec();
        let mut inverse = vec![None; vocab.acoustic_vocab as usize];
        for (k, &id) in forward.iter().enumerate() {
            inverse[id as usize] = Some((k as u32 / phases, k as u32 % phases));
        }
        Self { speaker_id, mapping_seed, leak_prob, forward, inverse }
    }

    /// The ids this speaker can emit on layer 1.
    pub fn coarse_ids(&self) -> &[TokenId] {
        &self.forward
    }
}

/// Frame-level alignment between a semantic sequence and its acoustic frames.
fn semantic_index_of_frame(j: usize, vocab: &VocabConfig) -> usize {
    j * vocab.acoustic_frame_cms() as usize / vocab.semantic_frame_cms() as usize
}

fn first_frame_of_semantic(i: usize, vocab: &VocabConfig) -> usize {
    (i * vocab.semantic_frame_cms() as usize).div_ceil(vocab.acoustic_frame_cms() as usize)
}

/// The speaker-keyed codec standing in for the semantic extractor and neural
/// codec, plus the content process.
#[derive(Clone, Debug)]
pub struct SyntheticCodec {
    config: CorpusConfig,
    vocab: VocabConfig,
    phases: u32,
    chain: MarkovChain,
    speakers: Vec<SyntheticSpeaker>,
}

impl SyntheticCodec {
    pub fn new(config: &CorpusConfig) -> Result<Self> {
        config.validate()?;
        let vocab = config.vocab();
        let phases = vocab.semantic_frame_cms().div_ceil(vocab.acoustic_frame_cms());
        let chain = MarkovChain::new(
            config.markov_order,
            config.alphabet,
            config.branching,
            mix_seed(&[config.seed, 0xC4A1]),
        );
        let speakers: Vec<_> = (0..config.num_speakers)
            .map(|s| {
                let seed = mix_seed(&[config.seed, 0x5BEA, s as u64]);
                SyntheticSpeaker::new(s, seed, config.leak_prob, config.alphabet, phases, &vocab)
            })
            .collect();
        let mut seen = HashSet::new();
        for sp in &speakers {
            if !seen.insert(sp.forward.clone()) {
                return Err(Error::config(format!("speaker {} duplicates another layer-1 map", sp.speaker_id)));
            }
        }
        Ok(Self { config: config.clone(), vocab, phases, chain, speakers })
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn vocab(&self) -> &VocabConfig {
        &self.vocab
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn speakers(&self) -> &[SyntheticSpeaker] {
        &self.speakers
    }

    pub fn speaker(&self, id: u32) -> Result<&SyntheticSpeaker> {
        self.speakers.get(id as usize).ok_or(Error::UnknownSpeaker(id))
    }

    /// A content sequence whose length is a multiple of the length quantum
    /// within the configured range.
    pub fn gen_content<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        let q = self.config.length_quantum;
        let lo = self.config.min_len.div_ceil(q).max(1);
        let hi = self.config.max_len / q;
        let len = rng.gen_range(lo..=hi) * q;
        self.chain.sample(len, rng)
    }

    pub fn alias(&self, speaker: u32, symbol: u32) -> TokenId {
        self.config.alphabet * (1 + speaker) + symbol
    }

    /// Underlying content symbol of a semantic id (aliases resolve to their base).
    pub fn untint(&self, id: TokenId) -> u32 {
        let a = self.config.alphabet;
        if id < a {
            id
        } else {
            (id - a) % a
        }
    }

    /// Speaker revealed by a semantic alias, if any.
    pub fn tint_speaker(&self, id: TokenId) -> Option<u32> {
        let a = self.config.alphabet;
        (id >= a && id < self.vocab.semantic_vocab).then(|| (id - a) / a)
    }

    pub fn content_of(&self, semantic: &SemanticSeq) -> Vec<u32> {
        semantic.tokens().iter().map(|&id| self.untint(id)).collect()
    }

    /// Deterministic codec output for `content` spoken by `speaker`.
    pub fn oracle_acoustic(&self, speaker: u32, content: &[u32]) -> Result<AcousticGrid> {
        let sp = self.speaker(speaker)?;
        if let Some(c) = content.iter().find(|&&c| c >= self.config.alphabet) {
            return Err(Error::Index(format!("content symbol {c} outside alphabet")));
        }
        let t_a = self.vocab.expected_acoustic_len(content.len());
        let mut coarse = Vec::with_capacity(t_a);
        let mut prev = usize::MAX;
        let mut phase = 0;
        for j in 0..t_a {
            let i = semantic_index_of_frame(j, &self.vocab).min(content.len() - 1);
            phase = if i == prev { phase + 1 } else { 0 };
            prev = i;
            let k = content[i] * self.phases + phase.min(self.phases - 1);
            coarse.push(sp.forward[k as usize]);
        }
        let mut layers = vec![coarse];
        for l in 1..self.vocab.num_layers as u64 {
            let row = layers[0].iter().map(|&c| self.fine_token(sp, l, c)).collect();
            layers.push(row);
        }
        AcousticGrid::new(layers)
    }

    fn fine_token(&self, sp: &SyntheticSpeaker, layer: u64, coarse: TokenId) -> TokenId {
        (mix_seed(&[sp.mapping_seed, sp.speaker_id as u64, layer, coarse as u64]) % self.vocab.acoustic_vocab as u64)
            as TokenId
    }

    /// Expected layer `layer` (zero-based, ≥ 1) token for a layer-1 id.
    pub fn oracle_fine(&self, speaker: u32, layer: usize, coarse: TokenId) -> Result<TokenId> {
        let sp = self.speaker(speaker)?;
        Ok(self.fine_token(sp, layer as u64, coarse))
    }

    /// Inverts the speaker's layer-1 map and keeps one frame per semantic
    /// frame; frames outside the map decode to [`FAILURE`].
    pub fn oracle_decode_content(&self, grid: &AcousticGrid, speaker: u32) -> Result<Vec<u32>> {
        let sp = self.speaker(speaker)?;
        let row = grid.coarse();
        let mut out = Vec::new();
        let mut i = 0;
        loop {
            let j = first_frame_of_semantic(i, &self.vocab);
            if j >= row.len() {
                break;
            }
            let sym = sp.inverse.get(row[j] as usize).copied().flatten().map_or(FAILURE, |(c, _)| c);
            out.push(sym);
            i += 1;
        }
        Ok(out)
    }

    /// One utterance of `speaker`; returns the pair and its underlying content.
    pub fn gen_utterance<R: Rng + ?Sized>(&self, speaker: u32, rng: &mut R) -> Result<(UtterancePair, Vec<u32>)> {
        let sp = self.speaker(speaker)?;
        let content = self.gen_content(rng);
        let semantic = content
            .iter()
            .map(|&c| if rng.gen::<f64>() < sp.leak_prob { self.alias(speaker, c) } else { c })
            .collect();
        let acoustic = self.oracle_acoustic(speaker, &content)?;
        Ok((UtterancePair { speaker_id: speaker, semantic: SemanticSeq::new(semantic), acoustic }, content))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub path: String,
    pub pair: UtterancePair,
    pub content: Vec<u32>,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub codec: SyntheticCodec,
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn vocab(&self) -> &VocabConfig {
        self.codec.vocab()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusItem> {
        self.items.iter().filter(move |it| it.split == split)
    }

    pub fn pairs(&self, split: Split) -> Vec<UtterancePair> {
        self.split(split).map(|it| it.pair.clone()).collect()
    }
}

fn split_of(content: &[u32], cfg: &CorpusConfig) -> Split {
    let h = mix_seed(&content.iter().map(|&c| c as u64).chain([content.len() as u64]).collect::<Vec<_>>());
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < cfg.test_frac {
        Split::Test
    } else if u < cfg.test_frac + cfg.valid_frac {
        Split::Valid
    } else {
        Split::Train
    }
}

/// Generates the whole corpus in memory. Each utterance draws from its own
/// rng stream keyed by (seed, speaker, index).
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    let codec = SyntheticCodec::new(cfg)?;
    let mut items = Vec::with_capacity((cfg.num_speakers * cfg.utterances_per_speaker) as usize);
    for s in 0..cfg.num_speakers {
        for u in 0..cfg.utterances_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x077E, s as u64, u as u64]));
            let (pair, content) = codec.gen_utterance(s, &mut rng)?;
            items.push(CorpusItem {
                path: format!("utt/spk{s:03}_{u:05}.tok"),
                split: split_of(&content, cfg),
                pair,
                content,
            });
        }
    }
    Ok(Corpus { codec, items })
}

/// Writes token files, the manifest and the generating config under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("utt"))?;
    let mut manifest = String::from("# path\tspeaker_id\tsplit\tT_s\tT_a\n");
    for it in &corpus.items {
        write_tokens(&dir.join(&it.path), corpus.vocab(), &it.pair)?;
        writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}",
            it.path,
            it.pair.speaker_id,
            it.split.as_str(),
            it.pair.semantic.len(),
            it.pair.acoustic.len()
        )
        .expect("string write");
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    let cfg = toml::to_string(corpus.codec.config()).map_err(|e| Error::config(e.to_string()))?;
    fs::write(dir.join(CORPUS_CONFIG_FILE), cfg)?;
    Ok(())
}

pub fn gen_corpus(cfg: &CorpusConfig, dir: &Path) -> Result<Corpus> {
    let corpus = generate_corpus(cfg)?;
    write_corpus(&corpus, dir)?;
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub speaker_id: u32,
    pub split: Split,
    pub t_s: usize,
    pub t_a: usize,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::config(format!("manifest line {}: malformed record {line:?}", n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        rows.push(ManifestRow {
            path: f[0].to_string(),
            speaker_id: f[1].parse().map_err(|_| bad())?,
            split: Split::parse(f[2])?,
            t_s: f[3].parse().map_err(|_| bad())?,
            t_a: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Reloads a corpus directory written by [`write_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let cfg_path = dir.join(CORPUS_CONFIG_FILE);
    let man_path = dir.join(MANIFEST_FILE);
    for p in [&cfg_path, &man_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let cfg: CorpusConfig =
        toml::from_str(&fs::read_to_string(&cfg_path)?).map_err(|e| Error::config(e.to_string()))?;
    let codec = SyntheticCodec::new(&cfg)?;
    let mut items = Vec::new();
    for row in parse_manifest(&fs::read_to_string(&man_path)?)? {
        let (vocab, pair) = read_tokens(&dir.join(&row.path))?;
        if &vocab != codec.vocab() {
            return Err(Error::config(format!("{}: vocabulary differs from corpus config", row.path)));
        }
        if pair.speaker_id != row.speaker_id || pair.semantic.len() != row.t_s || pair.acoustic.len() != row.t_a {
            return Err(Error::config(format!("{}: header disagrees with manifest", row.path)));
        }
        let content = codec.content_of(&pair.semantic);
        items.push(CorpusItem { path: row.path, pair, content, split: row.split });
    }
    Ok(Corpus { codec, items })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CorpusConfig {
        CorpusConfig { utterances_per_speaker: 20, ..CorpusConfig::default() }
    }

    #[test]
    fn uniform_order_zero_chain() {
        let chain = MarkovChain::new(0, 64, 64, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = chain.sample(100_000, &mut rng);
        let mut counts = [0usize; 64];
        for d in draws {
            counts[d as usize] += 1;
        }
        let p: f64 = 1.0 / 64.0;
        let mean = 100_000.0 * p;
        let sd = (100_000.0 * p * (1.0 - p)).sqrt();
        // 3σ per symbol, allowing one of 64 to stray by chance
        let within3 = counts.iter().filter(|&&c| (c as f64 - mean).abs() <= 3.0 * sd).count();
        assert!(within3 >= 63);
    }

    #[test]
    fn content_is_deterministic_and_in_range() {
        let cfg = CorpusConfig { min_len: 40, max_len: 60, ..small_cfg() };
        let codec = SyntheticCodec::new(&cfg).unwrap();
        let a = codec.gen_content(&mut ChaCha8Rng::seed_from_u64(9));
        let b = codec.gen_content(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let c = codec.gen_content(&mut rng);
            assert!((40..=60).contains(&c.len()));
            assert_eq!(c.len() % 5, 0);
        }
    }

    #[test]
    fn upsample_five_to_eight() {
        let codec = SyntheticCodec::new(&small_cfg()).unwrap();
        let g = codec.oracle_acoustic(0, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.num_layers(), 4);
        // repeated semantic frames 0, 1, 3 appear in phase 0 then phase 1
        let sp = codec.speaker(0).unwrap();
        let fwd = |c: u32, ph: u32| sp.coarse_ids()[(c * 2 + ph) as usize];
        assert_eq!(
            g.coarse(),
            &[fwd(1, 0), fwd(1, 1), fwd(2, 0), fwd(2, 1), fwd(3, 0), fwd(4, 0), fwd(4, 1), fwd(5, 0)]
        );
        assert_eq!(codec.oracle_acoustic(0, &[1, 2, 3, 4, 5]).unwrap(), g);
        assert!(matches!(codec.oracle_acoustic(9, &[1]), Err(Error::UnknownSpeaker(9))));
    }

    #[test]
    fn speakers_differ_on_layer_one() {
        let codec = SyntheticCodec::new(&small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let content = codec.chain().sample(200, &mut rng);
        let a = codec.oracle_acoustic(0, &content).unwrap();
        let b = codec.oracle_acoustic(1, &content).unwrap();
        let same = a.coarse().iter().zip(b.coarse()).filter(|(x, y)| x == y).count();
        assert!(same as f64 <= 0.1 * a.len() as f64, "{same} shared positions");
    }

    #[test]
    fn decode_inverts_encode() {
        let codec = SyntheticCodec::new(&small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in 0..4 {
            for _ in 0..20 {
                let (pair, content) = codec.gen_utterance(s, &mut rng).unwrap();
                assert_eq!(codec.oracle_decode_content(&pair.acoustic, s).unwrap(), content);
            }
        }
    }

    #[test]
    fn wrong_speaker_decodes_to_garbage() {
        let codec = SyntheticCodec::new(&small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let content = codec.chain().sample(500, &mut rng);
        let g = codec.oracle_acoustic(0, &content).unwrap();
        let dec = codec.oracle_decode_content(&g, 1).unwrap();
        let wrong = dec.iter().zip(&content).filter(|(d, c)| d != c).count();
        assert!(wrong as f64 >= 0.9 * content.len() as f64);
    }

    #[test]
    fn all_pad_decodes_to_failures() {
        let codec = SyntheticCodec::new(&small_cfg()).unwrap();
        let pad = codec.vocab().pad_id();
        let g = AcousticGrid::filled(4, 16, pad);
        let dec = codec.oracle_decode_content(&g, 2).unwrap();
        assert_eq!(dec, vec![FAILURE; 10]);
    }

    #[test]
    fn leak_probability_extremes_and_rate() {
        let base = small_cfg();
        for (p, lo, hi) in [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)] {
            let codec = SyntheticCodec::new(&CorpusConfig { leak_prob: p, ..base.clone() }).unwrap();
            let (pair, content) = codec.gen_utterance(1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let tinted = pair.semantic.tokens().iter().filter(|&&t| codec.tint_speaker(t).is_some()).count();
            let frac = tinted as f64 / content.len() as f64;
            assert!((lo..=hi).contains(&frac));
            if p == 0.0 {
                assert_eq!(pair.semantic.tokens(), &content[..]);
            } else {
                assert!(pair.semantic.tokens().iter().all(|&t| codec.tint_speaker(t) == Some(1)));
            }
        }
        let cfg = CorpusConfig { leak_prob: 0.3, min_len: 10_000, max_len: 10_000, ..base };
        let codec = SyntheticCodec::new(&cfg).unwrap();
        let (pair, content) = codec.gen_utterance(2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let tinted = pair.semantic.tokens().iter().filter(|&&t| codec.tint_speaker(t) == Some(2)).count();
        let frac = tinted as f64 / 10_000.0;
        assert!((frac - 0.3).abs() <= 0.02, "{frac}");
        assert_eq!(codec.content_of(&pair.semantic), content);
    }

    #[test]
    fn corpus_counts_determinism_and_disjoint_splits() {
        let cfg = CorpusConfig { utterances_per_speaker: 250, ..CorpusConfig::default() };
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let c = gen_corpus(&cfg, dir1.path()).unwrap();
        gen_corpus(&cfg, dir2.path()).unwrap();
        assert_eq!(c.items.len(), 1000);
        let manifest = fs::read_to_string(dir1.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(parse_manifest(&manifest).unwrap().len(), 1000);
        for it in c.items.iter().take(50) {
            let a = fs::read(dir1.path().join(&it.path)).unwrap();
            let b = fs::read(dir2.path().join(&it.path)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(manifest, fs::read_to_string(dir2.path().join(MANIFEST_FILE)).unwrap());

        let train: HashSet<_> = c.split(Split::Train).map(|i| i.content.clone()).collect();
        let test: HashSet<_> = c.split(Split::Test).map(|i| i.content.clone()).collect();
        let valid: HashSet<_> = c.split(Split::Valid).map(|i| i.content.clone()).collect();
        assert_eq!(train.intersection(&test).count(), 0);
        assert_eq!(train.intersection(&valid).count(), 0);
        assert!(!test.is_empty() && !valid.is_empty());

        let loaded = load_corpus(dir1.path()).unwrap();
        assert_eq!(loaded.items, c.items);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            CorpusConfig { num_speakers: 0, ..CorpusConfig::default() },
            CorpusConfig { min_len: 30, max_len: 20, ..CorpusConfig::default() },
            CorpusConfig { min_len: 11, max_len: 14, ..CorpusConfig::default() },
            CorpusConfig { leak_prob: 1.5, ..CorpusConfig::default() },
            CorpusConfig { acoustic_vocab: 100, ..CorpusConfig::default() },
        ];
        for cfg in bad {
            assert!(SyntheticCodec::new(&cfg).is_err(), "{cfg:?}");
        }
    }
}
