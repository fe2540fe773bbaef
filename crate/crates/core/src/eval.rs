//! Oracle-scored evaluation: content error, speaker accuracy, the fusion
//! ablation grid and the source-speaker leakage probe.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decode::{convert, Models, SamplingConfig, SamplingMode};
use crate::error::{Error, Result};
use crate::model::LmModel;
use crate::synth::{Corpus, Split, SyntheticCodec};
use crate::tokens::{AcousticGrid, TokenId, UtterancePair};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over `max(|ref|, |hyp|)`; 0 when both are empty.
pub fn normalized_edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> f64 {
    let n = reference.len().max(hyp.len());
    if n == 0 {
        return 0.0;
    }
    edit_distance(reference, hyp) as f64 / n as f64
}

/// Content recovered from `converted` through the claimed speaker's inverse
/// map, scored against the source content.
pub fn content_error_rate(codec: &SyntheticCodec, converted: &AcousticGrid, source_content: &[u32], speaker: u32) -> Result<f64> {
    let decoded = codec.oracle_decode_content(converted, speaker)?;
    Ok(normalized_edit_distance(source_content, &decoded))
}

/// Nearest-centroid speaker classifier over normalized layer-1 histograms,
/// compared by cosine similarity.
#[derive(Clone, Debug)]
pub struct SpeakerClassifier {
    bins: usize,
    centroids: BTreeMap<u32, Vec<f64>>,
}

fn histogram(row: &[TokenId], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let mut n = 0.0;
    for &t in row {
        if (t as usize) < bins {
            h[t as usize] += 1.0;
            n += 1.0;
        }
    }
    if n > 0.0 {
        h.iter_mut().for_each(|v| *v /= n);
    }
    h
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl SpeakerClassifier {
    pub fn fit<'a>(pairs: impl IntoIterator<Item = &'a UtterancePair>, acoustic_vocab: u32) -> Result<Self> {
        let bins = acoustic_vocab as usize;
        let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
        for p in pairs {
            let h = histogram(p.acoustic.coarse(), bins);
            let e = sums.entry(p.speaker_id).or_insert_with(|| (vec![0.0; bins], 0));
            e.0.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
            e.1 += 1;
        }
        if sums.is_empty() {
            return Err(Error::EmptyInput("no utterances to fit the speaker classifier".into()));
        }
        let centroids = sums
            .into_iter()
            .map(|(s, (sum, n))| (s, sum.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(Self { bins, centroids })
    }

    pub fn speakers(&self) -> impl Iterator<Item = u32> + '_ {
        self.centroids.keys().copied()
    }

    /// Closest speaker; ties go to the lower id.
    pub fn classify(&self, grid: &AcousticGrid) -> u32 {
        let h = histogram(grid.coarse(), self.bins);
        let mut best = (f64::NEG_INFINITY, 0);
        for (&s, c) in &self.centroids {
            let sim = cosine(&h, c);
            if sim > best.0 {
                best = (sim, s);
            }
        }
        best.1
    }

    fn check(&self, speaker: u32) -> Result<()> {
        if self.centroids.contains_key(&speaker) {
            Ok(())
        } else {
            Err(Error::UnknownSpeaker(speaker))
        }
    }
}

/// Fraction of grids classified as their paired speaker.
pub fn speaker_accuracy(classifier: &SpeakerClassifier, grids: &[AcousticGrid], speakers: &[u32]) -> Result<f64> {
    if grids.len() != speakers.len() {
        return Err(Error::shape("one speaker label per grid"));
    }
    if grids.is_empty() {
        return Err(Error::EmptyInput("no grids to classify".into()));
    }
    let mut hits = 0;
    for (g, &s) in grids.iter().zip(speakers) {
        classifier.check(s)?;
        hits += usize::from(classifier.classify(g) == s);
    }
    Ok(hits as f64 / grids.len() as f64)
}

/// Half-width of the normal-approximation 95% interval for a rate `p` over `n` trials.
pub fn binomial_half_width(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// One cross-speaker conversion job on held-out data.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub source_path: String,
    pub target_path: String,
    pub source: UtterancePair,
    pub source_content: Vec<u32>,
    pub target: UtterancePair,
}

/// Draws `n` (source, target) pairs with distinct speakers from `split`. The
/// target is cut to `prompt_frames` semantic frames and the source to at most
/// `max_source_frames`.
pub fn eval_pairs(
    corpus: &Corpus,
    split: Split,
    n: usize,
    prompt_frames: usize,
    max_source_frames: usize,
    seed: u64,
) -> Result<Vec<EvalPair>> {
    let items: Vec<_> = corpus.split(split).collect();
    let vocab = corpus.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let src = *items.choose(&mut rng).ok_or_else(|| Error::EmptyInput(format!("{} split is empty", split.as_str())))?;
        let others: Vec<_> = items.iter().filter(|it| it.pair.speaker_id != src.pair.speaker_id).collect();
        let tgt = **others.choose(&mut rng).ok_or_else(|| Error::EmptyInput("no second speaker to convert into".into()))?;
        let t_s = src.pair.semantic.len().min(max_source_frames);
        let t_p = tgt.pair.semantic.len().min(prompt_frames);
        out.push(EvalPair {
            source_path: src.path.clone(),
            target_path: tgt.path.clone(),
            source: src.pair.truncate(t_s, vocab),
            source_content: src.content[..t_s].to_vec(),
            target: tgt.pair.truncate(t_p, vocab),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairResult {
    pub source_path: String,
    pub target_path: String,
    pub source_speaker: u32,
    pub target_speaker: u32,
    pub predicted_speaker: u32,
    pub content_error_rate: f64,
    pub converted_len: usize,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub content_error_rate: f64,
    pub speaker_accuracy: f64,
    pub speaker_accuracy_half_width: f64,
    /// Fraction of conversions classified as the source speaker.
    pub source_leakage: f64,
    pub truncation_rate: f64,
    pub pairs: Vec<PairResult>,
    pub config_echo: String,
}

impl EvalReport {
    pub fn from_pairs(pairs: Vec<PairResult>, config_echo: String) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("no evaluated pairs".into()));
        }
        let n = pairs.len() as f64;
        let frac = |f: &dyn Fn(&PairResult) -> bool| pairs.iter().filter(|p| f(p)).count() as f64 / n;
        let speaker_accuracy = frac(&|p| p.predicted_speaker == p.target_speaker);
        Ok(Self {
            content_error_rate: pairs.iter().map(|p| p.content_error_rate).sum::<f64>() / n,
            speaker_accuracy,
            speaker_accuracy_half_width: binomial_half_width(speaker_accuracy, pairs.len()),
            source_leakage: frac(&|p| p.predicted_speaker == p.source_speaker),
            truncation_rate: frac(&|p| p.truncated),
            pairs,
            config_echo,
        })
    }

    pub fn summary_tsv(&self) -> String {
        format!(
            "metric\tvalue\ncontent_error_rate\t{:.6}\nspeaker_accuracy\t{:.6}\nspeaker_accuracy_ci95\t{:.6}\nsource_leakage\t{:.6}\ntruncation_rate\t{:.6}\npairs\t{}\n",
            self.content_error_rate,
            self.speaker_accuracy,
            self.speaker_accuracy_half_width,
            self.source_leakage,
            self.truncation_rate,
            self.pairs.len()
        )
    }

    pub fn pairs_tsv(&self) -> String {
        let mut s = String::from("source\ttarget\tsource_speaker\ttarget_speaker\tpredicted_speaker\tcontent_error_rate\tconverted_len\ttruncated\n");
        for p in &self.pairs {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
                p.source_path, p.target_path, p.source_speaker, p.target_speaker, p.predicted_speaker, p.content_error_rate, p.converted_len, p.truncated
            )
            .unwrap();
        }
        s
    }
}

/// Converts every pair and scores it against the oracles.
pub fn evaluate(
    codec: &SyntheticCodec,
    classifier: &SpeakerClassifier,
    models: &Models,
    pairs: &[EvalPair],
    cfg: &SamplingConfig,
    config_echo: String,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        classifier.check(p.target.speaker_id)?;
        let job = SamplingConfig { seed: crate::synth::mix_seed(&[cfg.seed, i as u64]), ..cfg.clone() };
        let c = convert(&p.source, &p.target, models, &job)?;
        rows.push(PairResult {
            source_path: p.source_path.clone(),
            target_path: p.target_path.clone(),
            source_speaker: p.source.speaker_id,
            target_speaker: p.target.speaker_id,
            predicted_speaker: classifier.classify(&c.grid),
            content_error_rate: content_error_rate(codec, &c.grid, &p.source_content, p.target.speaker_id)?,
            converted_len: c.grid.len(),
            truncated: c.provenance.truncated,
        });
    }
    EvalReport::from_pairs(rows, config_echo)
}

/// Everything the ablation needs apart from the ELMs.
pub struct AblationSetup<'a> {
    pub codec: &'a SyntheticCodec,
    pub classifier: &'a SpeakerClassifier,
    pub mplm: &'a LmModel,
    pub plm: &'a LmModel,
    pub pairs: &'a [EvalPair],
    pub sampling: SamplingConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    /// `None` for the MPLM-only baseline.
    pub window: Option<usize>,
    pub lambda: f64,
    pub seed: u64,
    pub content_error_rate: f64,
    pub speaker_accuracy: f64,
    pub truncation_rate: f64,
    /// Per-pair error rates, kept for exact comparisons between cells.
    pub per_pair: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, window: Option<usize>, lambda: f64, seed: u64) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.window == window && c.lambda == lambda && c.seed == seed)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("window\tlambda\tseed\tcontent_error_rate\tspeaker_accuracy\ttruncation_rate\n");
        for c in &self.cells {
            let w = c.window.map_or("none".to_string(), |w| w.to_string());
            writeln!(s, "{w}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}", c.lambda, c.seed, c.content_error_rate, c.speaker_accuracy, c.truncation_rate).unwrap();
        }
        s
    }

    /// `x y series` rows: fusion weight against content error, one series per
    /// window, averaged over seeds.
    pub fn plot_data(&self) -> String {
        let mut groups: BTreeMap<(String, u64), (f64, f64, usize)> = BTreeMap::new();
        for c in &self.cells {
            let series = c.window.map_or("mplm-only".to_string(), |w| format!("w={w}"));
            let e = groups.entry((series, c.lambda.to_bits())).or_insert((c.lambda, 0.0, 0));
            e.1 += c.content_error_rate;
            e.2 += 1;
        }
        let mut s = String::from("x\ty\tseries\n");
        for ((series, _), (x, sum, n)) in groups {
            writeln!(s, "{x}\t{:.6}\t{series}", sum / n as f64).unwrap();
        }
        s
    }
}

/// Scores every (window, λ, seed) cell plus an MPLM-only baseline per seed.
/// `elms` holds one trained ELM per window.
pub fn ablate_fusion(setup: &AblationSetup, elms: &[(usize, &LmModel)], lambdas: &[f64], seeds: &[u64]) -> Result<AblationTable> {
    let mut cells = Vec::new();
    let run = |elm: Option<&LmModel>, lambda: f64, seed: u64| -> Result<EvalReport> {
        let cfg = SamplingConfig { fusion_weight: lambda, seed, ..setup.sampling.clone() };
        let models = Models { mplm: setup.mplm, elm, plm: setup.plm };
        evaluate(setup.codec, setup.classifier, &models, setup.pairs, &cfg, String::new())
    };
    let cell = |window, lambda, seed, r: EvalReport| AblationCell {
        window,
        lambda,
        seed,
        content_error_rate: r.content_error_rate,
        speaker_accuracy: r.speaker_accuracy,
        truncation_rate: r.truncation_rate,
        per_pair: r.pairs.iter().map(|p| p.content_error_rate).collect(),
    };
    for &seed in seeds {
        cells.push(cell(None, 0.0, seed, run(None, 0.0, seed)?));
        for &(w, elm) in elms {
            if elm.config().window != w {
                return Err(Error::config(format!("ELM listed for window {w} has window {}", elm.config().window)));
            }
            for &lambda in lambdas {
                cells.push(cell(Some(w), lambda, seed, run(Some(elm), lambda, seed)?));
            }
        }
    }
    Ok(AblationTable { cells })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub variant: String,
    pub seed: u64,
    pub source_leakage: f64,
    pub speaker_accuracy: f64,
    pub content_error_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\tseed\tsource_leakage\tspeaker_accuracy\tcontent_error_rate\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{:.6}\t{:.6}\t{:.6}", r.variant, r.seed, r.source_leakage, r.speaker_accuracy, r.content_error_rate).unwrap();
        }
        s
    }

    fn leakage(&self, variant: &str, seed: u64) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant && r.seed == seed).map(|r| r.source_leakage)
    }

    /// Seeds at which `a` leaks no more than `b`.
    pub fn wins(&self, a: &str, b: &str) -> Vec<(u64, bool)> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        seeds
            .into_iter()
            .filter_map(|s| Some((s, self.leakage(a, s)? <= self.leakage(b, s)?)))
            .collect()
    }
}

/// Source-speaker leakage of each MPLM variant under greedy MPLM-only
/// decoding. `variants` holds `(name, model seed, model)`.
pub fn disentanglement_probe(
    codec: &SyntheticCodec,
    classifier: &SpeakerClassifier,
    plm: &LmModel,
    pairs: &[EvalPair],
    variants: &[(&str, u64, &LmModel)],
) -> Result<ProbeReport> {
    let cfg = SamplingConfig { mode: SamplingMode::Argmax, ..SamplingConfig::default() };
    let mut rows = Vec::new();
    for &(name, seed, mplm) in variants {
        let r = evaluate(codec, classifier, &Models { mplm, elm: None, plm }, pairs, &cfg, String::new())?;
        rows.push(ProbeRow {
            variant: name.to_string(),
            seed,
            source_leakage: r.source_leakage,
            speaker_accuracy: r.speaker_accuracy,
            content_error_rate: r.content_error_rate,
        });
    }
    Ok(ProbeReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelKind};
    use crate::synth::{generate_corpus, CorpusConfig};

    fn small_corpus() -> Corpus {
        generate_corpus(&CorpusConfig { utterances_per_speaker: 40, ..CorpusConfig::default() }).unwrap()
    }

    #[test]
    fn edit_distances() {
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance::<u8>(b"", b"abc"), 3);
        assert_eq!(edit_distance(b"abc", b"abc"), 0);
        assert_eq!(normalized_edit_distance::<u8>(&[], &[]), 0.0);
        assert_eq!(normalized_edit_distance(b"ab", b"abcd"), 0.5);
    }

    #[test]
    fn oracle_grids_score_zero_and_pad_scores_one() {
        let c = small_corpus();
        for it in c.items.iter().take(40) {
            assert_eq!(content_error_rate(&c.codec, &it.pair.acoustic, &it.content, it.pair.speaker_id).unwrap(), 0.0);
            let pad = AcousticGrid::filled(4, it.pair.acoustic.len(), c.vocab().pad_id());
            assert_eq!(content_error_rate(&c.codec, &pad, &it.content, it.pair.speaker_id).unwrap(), 1.0);
        }
    }

    #[test]
    fn substituted_block_counts_by_hand() {
        let c = small_corpus();
        let it = &c.items[0];
        let sp = it.pair.speaker_id;
        let mut row = it.pair.acoustic.coarse().to_vec();
        // frames 8..16 hold semantic frames 5..10; overwrite them with codes no speaker uses
        let used: std::collections::HashSet<_> = c.codec.speakers().iter().flat_map(|s| s.coarse_ids().to_vec()).collect();
        let spare = (0..1024).find(|t| !used.contains(t)).unwrap();
        row[8..16].iter_mut().for_each(|t| *t = spare);
        let mut grid = it.pair.acoustic.clone();
        grid.set_layer(0, row).unwrap();
        let cer = content_error_rate(&c.codec, &grid, &it.content, sp).unwrap();
        assert_eq!(cer, 5.0 / it.content.len() as f64);
    }

    #[test]
    fn classifier_is_exact_on_oracle_grids_and_chance_on_shuffled_labels() {
        let c = small_corpus();
        let train = c.pairs(Split::Train);
        let clf = SpeakerClassifier::fit(&train, c.vocab().acoustic_vocab).unwrap();
        let test: Vec<_> = c.items.iter().collect();
        let grids: Vec<_> = test.iter().map(|it| it.pair.acoustic.clone()).collect();
        let labels: Vec<u32> = test.iter().map(|it| it.pair.speaker_id).collect();
        assert_eq!(speaker_accuracy(&clf, &grids, &labels).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        let n = labels.len() as f64;
        let chance = 0.25;
        let acc = speaker_accuracy(&clf, &grids, &shuffled).unwrap();
        assert!(acc <= chance + 3.0 * (chance * (1.0 - chance) / n).sqrt(), "{acc}");

        let mut order: Vec<usize> = (0..grids.len()).collect();
        order.shuffle(&mut rng);
        let g2: Vec<_> = order.iter().map(|&i| grids[i].clone()).collect();
        let l2: Vec<_> = order.iter().map(|&i| shuffled[i]).collect();
        assert_eq!(speaker_accuracy(&clf, &g2, &l2).unwrap(), acc);
        assert!(matches!(speaker_accuracy(&clf, &grids[..1], &[9]), Err(Error::UnknownSpeaker(9))));
    }

    #[test]
    fn binomial_interval() {
        assert!((binomial_half_width(0.5, 100) - 0.098).abs() < 1e-12);
        assert_eq!(binomial_half_width(1.0, 10), 0.0);
    }

    #[test]
    fn eval_pairs_cross_speakers_on_held_out_content() {
        let c = small_corpus();
        let pairs = eval_pairs(&c, Split::Test, 30, 10, 20, 1).unwrap();
        assert_eq!(pairs.len(), 30);
        let train: std::collections::HashSet<_> = c.split(Split::Train).map(|it| it.content.clone()).collect();
        for p in &pairs {
            assert_ne!(p.source.speaker_id, p.target.speaker_id);
            assert_eq!(p.target.semantic.len(), 10);
            assert_eq!(p.target.acoustic.len(), 16);
            assert!(p.source.semantic.len() <= 20);
            assert_eq!(p.source_content.len(), p.source.semantic.len());
            let full = c.items.iter().find(|it| it.path == p.source_path).unwrap();
            assert!(!train.contains(&full.content));
        }
    }

    fn tiny(kind: ModelKind, vocab: &crate::tokens::VocabConfig, window: usize, seed: u64) -> LmModel {
        let cfg = ModelConfig { num_layers: 1, num_heads: 2, embed_dim: 8, ff_dim: 16, dropout: 0.0, max_positions: 512, window };
        let mut m = LmModel::new(kind, cfg, vocab.clone(), seed).unwrap();
        m.perturb(seed, 0.3);
        m
    }

    #[test]
    fn ablation_grid_and_zero_weight_column() {
        let c = small_corpus();
        let clf = SpeakerClassifier::fit(c.items.iter().map(|it| &it.pair), 1024).unwrap();
        let pairs = eval_pairs(&c, Split::Test, 3, 5, 5, 2).unwrap();
        let v = c.vocab();
        let (mplm, plm) = (tiny(ModelKind::Mplm, v, 20, 1), tiny(ModelKind::Plm, v, 20, 2));
        let (e2, e20) = (tiny(ModelKind::Elm, v, 2, 3), tiny(ModelKind::Elm, v, 20, 4));
        let setup = AblationSetup {
            codec: &c.codec,
            classifier: &clf,
            mplm: &mplm,
            plm: &plm,
            pairs: &pairs,
            sampling: SamplingConfig { max_len_factor: 1.0, ..SamplingConfig::default() },
        };
        let lambdas = [0.0, 0.3];
        let table = ablate_fusion(&setup, &[(2, &e2), (20, &e20)], &lambdas, &[7, 8]).unwrap();
        assert_eq!(table.cells.len(), 2 * (1 + 2 * 2));
        for seed in [7, 8] {
            let base = table.cell(None, 0.0, seed).unwrap();
            for w in [2, 20] {
                assert_eq!(table.cell(Some(w), 0.0, seed).unwrap().per_pair, base.per_pair);
            }
            assert!(table.cell(Some(20), 0.3, seed).is_some());
        }
        assert_eq!(table.to_tsv().lines().count(), 1 + table.cells.len());
        assert_eq!(table.plot_data().lines().count(), 1 + 1 + 2 * 2);
        assert!(ablate_fusion(&setup, &[(5, &e2)], &lambdas, &[1]).is_err());
    }

    #[test]
    fn probe_rows_and_wins() {
        let c = small_corpus();
        let clf = SpeakerClassifier::fit(c.items.iter().map(|it| &it.pair), 1024).unwrap();
        let pairs = eval_pairs(&c, Split::Test, 2, 5, 5, 2).unwrap();
        let v = c.vocab();
        let plm = tiny(ModelKind::Plm, v, 20, 2);
        let (a, b) = (tiny(ModelKind::Mplm, v, 20, 5), tiny(ModelKind::Mplm, v, 20, 6));
        let rep = disentanglement_probe(&c.codec, &clf, &plm, &pairs, &[("masked", 1, &a), ("unmasked", 1, &b), ("masked", 2, &a), ("unmasked", 2, &b)]).unwrap();
        assert_eq!(rep.rows.len(), 4);
        let wins = rep.wins("masked", "unmasked");
        assert_eq!(wins.len(), 2);
        assert_eq!(wins[0].1, wins[1].1);
        assert_eq!(rep.to_tsv().lines().count(), 5);
    }
}
