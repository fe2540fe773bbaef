//! Minibatch AdamW training with per-epoch validation, checkpoints and a
//! plain-text step log.
//!
//! All randomness of step `k` (batch order, mask ratio, span starts, PLM
//! layer and prompt split, dropout) is derived from `(seed, k)`, so a run
//! resumed from a checkpoint replays exactly the steps it would have taken.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::forward::{batch_loss, Example, LossParts, MplmExample, PlmExample};
use super::{LmModel, ModelKind};
use crate::error::{Error, Result};
use crate::masks::apply_span_mask;
use crate::numerics::{clip_global_norm, optimizer_step, OptimState};
use crate::synth::{mix_seed, Corpus, Split};
use crate::tokens::UtterancePair;

pub const TRAIN_LOG_FILE: &str = "train.log";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub decay_ratio: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Span-mask ratio r is drawn per batch from [min, max].
    pub mask_ratio_min: f64,
    pub mask_ratio_max: f64,
    pub span: usize,
    /// MPLM only: turn span masking off for the unmasked ablation.
    pub span_masking: bool,
    /// Validation utterances scored at each epoch end (0 disables).
    pub valid_examples: usize,
    /// Checkpoint period in steps (0: only at the end).
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 8,
            lr: 5e-4,
            decay_ratio: 0.986,
            weight_decay: 0.01,
            clip_norm: 1.0,
            mask_ratio_min: 0.02,
            mask_ratio_max: 0.04,
            span: 10,
            span_masking: true,
            valid_examples: 32,
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.decay_ratio) {
            return Err(Error::config("lr must be positive and decay_ratio in [0, 1]"));
        }
        if !(0.0..=self.mask_ratio_max).contains(&self.mask_ratio_min) || self.mask_ratio_max > 1.0 {
            return Err(Error::config("mask ratios must satisfy 0 <= min <= max <= 1"));
        }
        if self.span == 0 {
            return Err(Error::config("span must be at least 1"));
        }
        if self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return Err(Error::config("weight_decay and clip_norm must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub train: Vec<UtterancePair>,
    pub valid: Vec<UtterancePair>,
}

impl TrainData {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self { train: corpus.pairs(Split::Train), valid: corpus.pairs(Split::Valid) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub valid: bool,
    pub loss: LossParts,
}

impl TrainLogRow {
    fn to_line(&self) -> String {
        let mut s = format!(
            "{}\t{}\t{}\t{:e}\t{:.6}",
            if self.valid { "valid" } else { "train" },
            self.step,
            self.epoch,
            self.lr,
            self.loss.total
        );
        for (n, v) in &self.loss.components {
            write!(s, "\t{n}={v:.6}").expect("string write");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub rows: Vec<TrainLogRow>,
    pub optim: OptimState,
}

impl TrainSummary {
    pub fn train_losses(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| !r.valid).map(|r| r.loss.total).collect()
    }

    pub fn last_valid(&self) -> Option<&LossParts> {
        self.rows.iter().rev().find(|r| r.valid).map(|r| &r.loss)
    }
}

/// Turns utterances into training examples for `kind`, drawing masks,
/// codec layers and prompt splits from `rng`.
pub fn build_examples<R: Rng + ?Sized>(
    model: &LmModel,
    pairs: &[&UtterancePair],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<Example>> {
    let vocab = model.vocab();
    match model.kind() {
        ModelKind::Mplm => {
            let ratio = if cfg.span_masking { rng.gen_range(cfg.mask_ratio_min..=cfg.mask_ratio_max) } else { 0.0 };
            pairs
                .iter()
                .map(|p| {
                    let (semantic, plan) = apply_span_mask(&p.semantic, ratio, cfg.span, vocab.mask_id(), rng)?;
                    Ok(Example::Mplm(MplmExample { semantic, plan, coarse: p.acoustic.coarse().to_vec() }))
                })
                .collect()
        }
        ModelKind::Elm => Ok(pairs.iter().map(|p| Example::Elm(p.acoustic.coarse().to_vec())).collect()),
        ModelKind::Plm => {
            let (sem_stride, ac_stride) = vocab.position_strides();
            pairs
                .iter()
                .map(|p| {
                    let layer = rng.gen_range(2..=vocab.num_layers as usize);
                    // an exact block is `ac_stride` semantic frames = `sem_stride` acoustic frames
                    let (bs, ba) = (ac_stride, sem_stride);
                    let blocks = (p.semantic.len() / bs).min(p.acoustic.len() / ba);
                    let k = if blocks >= 2 { rng.gen_range(1..blocks) } else { 0 };
                    Ok(Example::Plm(PlmExample {
                        semantic: p.semantic.clone(),
                        grid: p.acoustic.clone(),
                        prompt_len: k * ba,
                        layer,
                    }))
                })
                .collect()
        }
    }
}

/// Loss over (at most) `cfg.valid_examples` validation utterances with a
/// fixed masking draw, no dropout.
pub fn validation_loss(model: &LmModel, valid: &[UtterancePair], cfg: &TrainConfig) -> Result<Option<LossParts>> {
    let n = cfg.valid_examples.min(valid.len());
    if n == 0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x7A11D]));
    let refs: Vec<&UtterancePair> = valid[..n].iter().collect();
    let mut parts = Vec::new();
    for chunk in refs.chunks(cfg.batch_size) {
        let ex = build_examples(model, chunk, cfg, &mut rng)?;
        parts.push(batch_loss(model, &ex, None, false)?.0);
    }
    Ok(LossParts::merge(&parts))
}

/// Entropy (nats) of the layer-1 unigram distribution, EOS included once per
/// utterance: the loss of the best context-free predictor.
pub fn unigram_entropy(pairs: &[UtterancePair]) -> f64 {
    let mut counts = std::collections::HashMap::new();
    let mut total = 0usize;
    for p in pairs {
        for &id in p.acoustic.coarse() {
            *counts.entry(Some(id)).or_insert(0usize) += 1;
        }
        *counts.entry(None).or_insert(0) += 1;
        total += p.acoustic.len() + 1;
    }
    counts
        .values()
        .map(|&c| {
            let q = c as f64 / total as f64;
            -q * q.ln()
        })
        .sum()
}

/// Trains `model` up to `cfg.steps` optimizer steps in total. With `resume`,
/// continues from the optimizer state's step count. When `out_dir` is given,
/// appends to its step log and writes `<kind>.ckpt` checkpoints there.
pub fn train(
    model: &mut LmModel,
    data: &TrainData,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<OptimState>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyInput("no training utterances".into()));
    }
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let mut optim = match resume {
        Some(o) => {
            if o.m.len() != model.params().len() {
                return Err(Error::config("optimizer state does not match the model"));
            }
            o
        }
        None => OptimState::new(model.params(), cfg.lr, cfg.decay_ratio, cfg.weight_decay),
    };
    let ckpt_path = out_dir.map(|d| d.join(format!("{}.ckpt", model.kind().name())));
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(TRAIN_LOG_FILE);
            let fresh = !path.exists() || optim.step == 0;
            let mut f = OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(path)?;
            if fresh {
                writeln!(f, "# split\tstep\tepoch\tlr\ttotal\tcomponents")?;
            }
            Some(f)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut emit = |row: TrainLogRow, log: &mut Option<fs::File>| -> Result<()> {
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", row.to_line())?;
        }
        rows.push(row);
        Ok(())
    };

    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = u64::MAX;
    while optim.step < cfg.steps {
        let step = optim.step;
        let epoch = step / steps_per_epoch;
        if epoch != order_epoch {
            order = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0xE90C, epoch])));
            order_epoch = epoch;
        }
        let lo = ((step % steps_per_epoch) as usize) * cfg.batch_size;
        let batch: Vec<&UtterancePair> = order[lo..(lo + cfg.batch_size).min(n)].iter().map(|&i| &data.train[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x57E9, step]));
        let examples = build_examples(model, &batch, cfg, &mut rng)?;
        let dropout = (model.config().dropout > 0.0)
            .then(|| ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0xD409, step])));
        let (loss, grads) = batch_loss(model, &examples, dropout, true).map_err(|e| match e {
            Error::Numeric(msg) => Error::Divergence { step, msg },
            other => other,
        })?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence { step, msg: format!("loss {}", loss.total) });
        }
        let mut grads = grads.expect("requested gradients");
        if cfg.clip_norm > 0.0 {
            clip_global_norm(&mut grads, cfg.clip_norm);
        }
        let lr = optim.lr;
        optimizer_step(model.params_mut(), &grads, &mut optim)
            .map_err(|e| Error::Divergence { step, msg: e.to_string() })?;
        emit(TrainLogRow { step: step + 1, epoch, lr, valid: false, loss }, &mut log)?;

        if optim.step % steps_per_epoch == 0 {
            optim.end_epoch();
            if let Some(v) = validation_loss(model, &data.valid, cfg)? {
                if !v.total.is_finite() {
                    return Err(Error::Divergence { step, msg: format!("validation loss {}", v.total) });
                }
                emit(TrainLogRow { step: optim.step, epoch, lr: optim.lr, valid: true, loss: v }, &mut log)?;
            }
        }
        if let Some(path) = &ckpt_path {
            if cfg.checkpoint_every > 0 && optim.step % cfg.checkpoint_every == 0 {
                save_checkpoint(path, model, Some(&optim))?;
            }
        }
    }
    if let Some(path) = &ckpt_path {
        save_checkpoint(path, model, Some(&optim))?;
    }
    Ok(TrainSummary { rows, optim })
}
