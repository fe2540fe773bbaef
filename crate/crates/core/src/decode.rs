//! Coarse generation with shallow fusion, fine-layer reconstruction, and the
//! end-to-end conversion.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KvCache, LmModel, ModelKind, Stream};
use crate::numerics::log_softmax;
use crate::tokens::{build_coarse_prompt, AcousticGrid, CoarsePrompt, SemanticSeq, TokenId, UtterancePair, VocabConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Argmax,
    TopK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Generation stops after this multiple of the source's expected length.
    pub max_len_factor: f64,
    /// Weight of the ELM log-probabilities in the fused score.
    pub fusion_weight: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { mode: SamplingMode::TopK, k: 10, temperature: 1.0, seed: 0, max_len_factor: 1.25, fusion_weight: 0.3 }
    }
}

impl SamplingConfig {
    pub fn argmax() -> Self {
        Self { mode: SamplingMode::Argmax, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.mode == SamplingMode::TopK && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive when sampling"));
        }
        if !(self.max_len_factor >= 1.0 && self.max_len_factor.is_finite()) {
            return Err(Error::config("max_len_factor must be at least 1"));
        }
        if !(self.fusion_weight >= 0.0 && self.fusion_weight.is_finite()) {
            return Err(Error::config("fusion_weight must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `logp_mplm + λ·logp_elm`, elementwise and unnormalized.
pub fn fuse_logits(logp_mplm: &[f64], logp_elm: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if logp_mplm.len() != logp_elm.len() {
        return Err(Error::shape(format!("fusing {} scores with {}", logp_mplm.len(), logp_elm.len())));
    }
    Ok(logp_mplm.iter().zip(logp_elm).map(|(a, b)| a + lambda * b).collect())
}

/// Index of the largest allowed score; ties go to the lower index.
pub fn argmax(scores: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if allowed(i) && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn sample_top_k(scores: &[f64], allowed: impl Fn(usize) -> bool, k: usize, temperature: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| allowed(i)).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    let top = scores[*idx.first()?];
    let weights: Vec<f64> = idx.iter().map(|&i| ((scores[i] - top) / temperature).exp()).collect();
    let dist = WeightedIndex::new(&weights).ok()?;
    Some(idx[dist.sample(rng)])
}

/// Generated layer-1 row, without prompt prefix or EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseOutput {
    pub tokens: Vec<TokenId>,
    /// The length cap was reached before EOS.
    pub truncated: bool,
}

/// Length cap for a source of `t_s` semantic frames.
pub fn max_coarse_len(model: &LmModel, t_s: usize, factor: f64) -> usize {
    (factor * model.vocab().expected_acoustic_len(t_s) as f64).floor() as usize
}

struct ElmWindow<'a> {
    model: &'a LmModel,
}

impl ElmWindow<'_> {
    /// Log-probabilities for the token after `inputs`, seen through the last
    /// `w + 1` inputs at their absolute positions.
    fn next_logp(&self, inputs: &[TokenId]) -> Result<Vec<f64>> {
        let m = self.model;
        let j = inputs.len() - 1;
        let lo = j.saturating_sub(m.config().window);
        let mut x = Vec::with_capacity((j + 1 - lo) * m.config().embed_dim);
        for (pos, &id) in inputs.iter().enumerate().skip(lo) {
            x.extend(m.embed_plain(Stream::Acoustic, id, pos)?);
        }
        let mut cache = KvCache::new(m);
        let h = m.forward_cached(&mut cache, &x, false)?;
        let d = m.config().embed_dim;
        Ok(log_softmax(&m.acoustic_head_plain(&h[h.len() - d..])))
    }
}

/// Autoregressive layer-1 generation for the source segment of `prompt`.
/// The ELM, when present, is fused with weight `cfg.fusion_weight`.
pub fn generate_coarse(mplm: &LmModel, elm: Option<&LmModel>, prompt: &CoarsePrompt, cfg: &SamplingConfig) -> Result<CoarseOutput> {
    cfg.validate()?;
    mplm.expect_kind(ModelKind::Mplm)?;
    if let Some(e) = elm {
        e.expect_kind(ModelKind::Elm)?;
        if e.vocab().acoustic_head_size() != mplm.vocab().acoustic_head_size() {
            return Err(Error::config("MPLM and ELM acoustic vocabularies differ"));
        }
    }
    let vocab = mplm.vocab().clone();
    let d = mplm.config().embed_dim;
    let cap = max_coarse_len(mplm, prompt.source_semantic_len(), cfg.max_len_factor);
    let eos = vocab.acoustic_index(vocab.eos_id())?;
    let allowed = |i: usize| i < vocab.acoustic_vocab as usize || i == eos;

    let mut cache = KvCache::new(mplm);
    let mut x = Vec::new();
    for (i, &id) in prompt.semantic.tokens().iter().enumerate() {
        x.extend(mplm.embed_plain(Stream::Semantic, id, mplm.semantic_row(i))?);
    }
    mplm.forward_cached(&mut cache, &x, true)?;
    let mut inputs = mplm.teacher_forced(prompt.acoustic_prefix());
    let mut x = Vec::new();
    for (j, &id) in inputs.iter().enumerate() {
        x.extend(mplm.embed_plain(Stream::Acoustic, id, mplm.acoustic_row(j))?);
    }
    let mut h = mplm.forward_cached(&mut cache, &x, false)?;

    let elm = elm.map(|model| ElmWindow { model });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    loop {
        let last = &h[h.len() - d..];
        let logp = log_softmax(&mplm.acoustic_head_plain(last));
        let scores = match &elm {
            Some(e) => fuse_logits(&logp, &e.next_logp(&inputs)?, cfg.fusion_weight)?,
            None => logp,
        };
        let pick = match cfg.mode {
            SamplingMode::Argmax => argmax(&scores, allowed),
            SamplingMode::TopK => sample_top_k(&scores, allowed, cfg.k, cfg.temperature, &mut rng),
        }
        .ok_or_else(|| Error::Numeric("no selectable token".into()))?;
        if pick == eos {
            return Ok(CoarseOutput { tokens: out, truncated: false });
        }
        if out.len() == cap {
            return Ok(CoarseOutput { tokens: out, truncated: true });
        }
        let id = vocab.acoustic_token(pick);
        out.push(id);
        inputs.push(id);
        let x = mplm.embed_plain(Stream::Acoustic, id, mplm.acoustic_row(inputs.len() - 1))?;
        h = mplm.forward_cached(&mut cache, &x, false)?;
    }
}

/// Fills codec layers `2..=L` for `coarse`, one greedy non-autoregressive
/// pass per layer, with the prompt's full grid as context.
pub fn generate_fine(plm: &LmModel, prompt: &CoarsePrompt, coarse: &[TokenId]) -> Result<AcousticGrid> {
    plm.expect_kind(ModelKind::Plm)?;
    if coarse.is_empty() {
        return Err(Error::EmptyInput("coarse row is empty".into()));
    }
    let vocab = plm.vocab();
    let num_layers = vocab.num_layers as usize;
    let p = prompt.prompt_grid.len();
    if prompt.prompt_grid.num_layers() != num_layers {
        return Err(Error::shape(format!("prompt grid has {} layers, PLM expects {num_layers}", prompt.prompt_grid.num_layers())));
    }
    let mut layers: Vec<Vec<TokenId>> = prompt.prompt_grid.layers().to_vec();
    layers[0].extend_from_slice(coarse);
    for row in layers.iter_mut().skip(1) {
        row.resize(p + coarse.len(), vocab.pad_id());
    }
    let mut grid = AcousticGrid::new(layers)?;
    let real = vocab.acoustic_vocab as usize;
    for l in 2..=num_layers {
        let logits = plm.plm_logits(&prompt.semantic, &grid, p, l)?;
        let mut row = grid.layer(l - 1).to_vec();
        for (t, slot) in row.iter_mut().enumerate().skip(p) {
            let best = argmax(logits.row(t), |i| i < real).expect("acoustic vocabulary is non-empty");
            *slot = best as TokenId;
        }
        grid.set_layer(l - 1, row)?;
    }
    let fine = grid.layers().iter().map(|r| r[p..].to_vec()).collect();
    AcousticGrid::new(fine)
}

pub struct Models<'a> {
    pub mplm: &'a LmModel,
    pub elm: Option<&'a LmModel>,
    pub plm: &'a LmModel,
}

/// Where a converted grid came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub mplm: String,
    pub elm: Option<String>,
    pub plm: String,
    pub source_speaker: u32,
    pub target_speaker: u32,
    pub sampling: SamplingConfig,
    pub truncated: bool,
}

impl Provenance {
    /// `key<TAB>value` lines.
    pub fn to_text(&self) -> String {
        let s = &self.sampling;
        let mode = match s.mode {
            SamplingMode::Argmax => "argmax",
            SamplingMode::TopK => "top-k",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(out, "{k}\t{v}").unwrap();
        kv("mplm", &self.mplm);
        kv("elm", &self.elm.as_deref().unwrap_or("none"));
        kv("plm", &self.plm);
        kv("source_speaker", &self.source_speaker);
        kv("target_speaker", &self.target_speaker);
        kv("mode", &mode);
        kv("k", &s.k);
        kv("temperature", &s.temperature);
        kv("seed", &s.seed);
        kv("max_len_factor", &s.max_len_factor);
        kv("fusion_weight", &s.fusion_weight);
        kv("truncated", &self.truncated);
        out
    }
}

#[derive(Clone, Debug)]
pub struct Conversion {
    pub grid: AcousticGrid,
    pub provenance: Provenance,
    pub source_semantic: SemanticSeq,
}

impl Conversion {
    /// The converted grid as a storable pair for the target speaker. The
    /// source semantic row is cut or PAD-extended to match the grid length.
    pub fn to_pair(&self, vocab: &VocabConfig) -> UtterancePair {
        let t_a = self.grid.len();
        let (s, a) = (vocab.semantic_frame_cms() as usize, vocab.acoustic_frame_cms() as usize);
        let mut t_s = (2 * t_a * a + s) / (2 * s);
        while vocab.expected_acoustic_len(t_s) > t_a + 1 {
            t_s -= 1;
        }
        while vocab.expected_acoustic_len(t_s) + 1 < t_a {
            t_s += 1;
        }
        let mut semantic = self.source_semantic.tokens().to_vec();
        semantic.resize(t_s, vocab.pad_id());
        UtterancePair { speaker_id: self.provenance.target_speaker, semantic: SemanticSeq::new(semantic), acoustic: self.grid.clone() }
    }
}

/// Re-voices `source` with the speaker of `target`.
pub fn convert(source: &UtterancePair, target: &UtterancePair, models: &Models, cfg: &SamplingConfig) -> Result<Conversion> {
    let prompt = build_coarse_prompt(target, &source.semantic)?;
    let coarse = generate_coarse(models.mplm, models.elm, &prompt, cfg)?;
    let grid = if coarse.tokens.is_empty() {
        AcousticGrid::filled(models.plm.vocab().num_layers as usize, 0, 0)
    } else {
        generate_fine(models.plm, &prompt, &coarse.tokens)?
    };
    Ok(Conversion {
        grid,
        provenance: Provenance {
            mplm: models.mplm.fingerprint(),
            elm: models.elm.map(|e| e.fingerprint()),
            plm: models.plm.fingerprint(),
            source_speaker: source.speaker_id,
            target_speaker: target.speaker_id,
            sampling: cfg.clone(),
            truncated: coarse.truncated,
        },
        source_semantic: source.semantic.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn vocab() -> VocabConfig {
        VocabConfig { semantic_vocab: 12, acoustic_vocab: 20, num_layers: 3, ..VocabConfig::default() }
    }

    fn model(kind: ModelKind, seed: u64) -> LmModel {
        let cfg = ModelConfig {
            num_layers: 2,
            num_heads: 2,
            embed_dim: 8,
            ff_dim: 16,
            dropout: 0.0,
            max_positions: 512,
            window: 4,
        };
        let mut m = LmModel::new(kind, cfg, vocab(), seed).unwrap();
        m.perturb(seed + 100, 0.5);
        m
    }

    fn prompt() -> CoarsePrompt {
        let target = UtterancePair {
            speaker_id: 1,
            semantic: SemanticSeq::new(vec![1, 2, 3, 4, 5]),
            acoustic: AcousticGrid::new(vec![
                vec![3, 4, 5, 6, 7, 8, 9, 10],
                vec![1; 8],
                vec![2; 8],
            ])
            .unwrap(),
        };
        build_coarse_prompt(&target, &SemanticSeq::new(vec![6, 7, 8, 9, 10])).unwrap()
    }

    #[test]
    fn fused_hand_example() {
        let f = fuse_logits(&[-1.0, -1.1], &[-3.0, -0.5], 0.3).unwrap();
        assert!((f[0] + 1.9).abs() < 1e-12 && (f[1] + 1.25).abs() < 1e-12);
        assert_eq!(argmax(&f, |_| true), Some(1));
        let f0 = fuse_logits(&[-1.0, -1.1], &[-3.0, -0.5], 0.0).unwrap();
        assert_eq!(argmax(&f0, |_| true), Some(0));
        assert!(fuse_logits(&[0.0], &[0.0, 1.0], 0.3).is_err());
    }

    #[test]
    fn coarse_generation_is_capped_and_deterministic() {
        let (mplm, elm) = (model(ModelKind::Mplm, 1), model(ModelKind::Elm, 2));
        let p = prompt();
        let cap = max_coarse_len(&mplm, 5, 1.25);
        assert_eq!(cap, 10);
        for mode in [SamplingMode::Argmax, SamplingMode::TopK] {
            let cfg = SamplingConfig { mode, seed: 9, ..SamplingConfig::default() };
            let a = generate_coarse(&mplm, Some(&elm), &p, &cfg).unwrap();
            let b = generate_coarse(&mplm, Some(&elm), &p, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.tokens.len() <= cap);
            assert_eq!(a.truncated, a.tokens.len() == cap);
            assert!(a.tokens.iter().all(|&t| t < 20));
        }
    }

    #[test]
    fn zero_weight_matches_mplm_alone() {
        let (mplm, elm) = (model(ModelKind::Mplm, 3), model(ModelKind::Elm, 4));
        let p = prompt();
        for mode in [SamplingMode::Argmax, SamplingMode::TopK] {
            let cfg = SamplingConfig { mode, fusion_weight: 0.0, seed: 5, ..SamplingConfig::default() };
            let fused = generate_coarse(&mplm, Some(&elm), &p, &cfg).unwrap();
            let alone = generate_coarse(&mplm, None, &p, &cfg).unwrap();
            assert_eq!(fused, alone);
        }
    }

    #[test]
    fn greedy_step_matches_tape_logits() {
        let mplm = model(ModelKind::Mplm, 5);
        let p = prompt();
        let out = generate_coarse(&mplm, None, &p, &SamplingConfig::argmax()).unwrap();
        let mut coarse = p.acoustic_prefix().to_vec();
        coarse.extend(&out.tokens);
        let (_, ac) = mplm.mplm_logits(&p.semantic, &coarse).unwrap();
        let v = mplm.vocab();
        let eos = v.acoustic_index(v.eos_id()).unwrap();
        for (g, &tok) in out.tokens.iter().enumerate() {
            let row = ac.row(p.acoustic_prefix().len() + g);
            assert_eq!(argmax(row, |i| i < 20 || i == eos), Some(tok as usize));
        }
    }

    #[test]
    fn fine_generation_shape_and_purity() {
        let plm = model(ModelKind::Plm, 6);
        let p = prompt();
        let coarse = vec![1, 2, 3, 4, 5, 6];
        let a = generate_fine(&plm, &p, &coarse).unwrap();
        assert_eq!((a.num_layers(), a.len()), (3, 6));
        assert_eq!(a.coarse(), &coarse[..]);
        assert!(a.layers().iter().flatten().all(|&t| t < 20));
        assert_eq!(a, generate_fine(&plm, &p, &coarse).unwrap());
        assert!(generate_fine(&plm, &p, &[]).is_err());
    }

    #[test]
    fn wrong_kinds_and_bad_configs_are_rejected() {
        let mplm = model(ModelKind::Mplm, 1);
        let p = prompt();
        assert!(generate_coarse(&mplm, Some(&mplm), &p, &SamplingConfig::argmax()).is_err());
        assert!(generate_fine(&mplm, &p, &[1]).is_err());
        for bad in [
            SamplingConfig { k: 0, ..SamplingConfig::default() },
            SamplingConfig { temperature: 0.0, ..SamplingConfig::default() },
            SamplingConfig { max_len_factor: 0.5, ..SamplingConfig::default() },
            SamplingConfig { fusion_weight: -1.0, ..SamplingConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn provenance_records_models_and_seed() {
        let (mplm, plm) = (model(ModelKind::Mplm, 1), model(ModelKind::Plm, 2));
        let p = prompt();
        let source = UtterancePair {
            speaker_id: 0,
            semantic: SemanticSeq::new(p.semantic.tokens()[5..].to_vec()),
            acoustic: p.prompt_grid.clone(),
        };
        let target = UtterancePair { speaker_id: 1, semantic: SemanticSeq::new(vec![1, 2, 3, 4, 5]), acoustic: p.prompt_grid.clone() };
        let cfg = SamplingConfig { seed: 42, ..SamplingConfig::argmax() };
        let c = convert(&source, &target, &Models { mplm: &mplm, elm: None, plm: &plm }, &cfg).unwrap();
        let text = c.provenance.to_text();
        assert!(text.contains(&format!("mplm\t{}", mplm.fingerprint())));
        assert!(text.contains("elm\tnone") && text.contains("seed\t42") && text.contains("target_speaker\t1"));
        let v = vocab();
        let pair = c.to_pair(&v);
        pair.validate(&v).unwrap();
        assert_eq!(pair.acoustic, c.grid);
        for t_a in 1..40 {
            let grid = AcousticGrid::filled(3, t_a, 0);
            let pair = Conversion { grid, ..c.clone() }.to_pair(&v);
            pair.validate(&v).unwrap();
        }
    }
}
