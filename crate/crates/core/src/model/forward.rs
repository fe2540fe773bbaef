//! Differentiable forward passes and the three training objectives.

use rand_chacha::ChaCha8Rng;

use super::{LmModel, ModelKind};
use crate::error::{Error, Result};
use crate::masks::{causal_mask, full_mask, mplm_mask, window_mask, SpanMaskPlan};
use crate::numerics::{Segment, Tape, Tensor, Var};
use crate::tokens::{AcousticGrid, SemanticSeq, TokenId};

/// `(row, table index)` pairs for one embedding lookup.
type Lookups = Vec<(usize, usize)>;

const IGNORE: usize = usize::MAX;

/// One MPLM training item: span-masked semantic input, its plan, and the
/// layer-1 row of the same utterance.
#[derive(Clone, Debug)]
pub struct MplmExample {
    pub semantic: SemanticSeq,
    pub plan: SpanMaskPlan,
    pub coarse: Vec<TokenId>,
}

/// One PLM training item. Frames `[0, prompt_len)` form the prompt region
/// (all layers visible, no loss); the rest predict codec layer `layer`
/// (1-based, in `2..=L`) from layers below it.
#[derive(Clone, Debug)]
pub struct PlmExample {
    pub semantic: SemanticSeq,
    pub grid: AcousticGrid,
    pub prompt_len: usize,
    pub layer: usize,
}

#[derive(Clone, Debug)]
pub enum Example {
    Mplm(MplmExample),
    Elm(Vec<TokenId>),
    Plm(PlmExample),
}

/// Batch loss: `total` is the sum of the named components, each a token-level
/// mean over the `counts[i]` tokens it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
    pub counts: Vec<usize>,
}

impl LossParts {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    /// Token-weighted combination of losses over disjoint batches.
    pub fn merge(parts: &[LossParts]) -> Option<LossParts> {
        let first = parts.first()?;
        let mut components: Vec<(&'static str, f64)> = first.components.iter().map(|(n, _)| (*n, 0.0)).collect();
        let mut counts = vec![0; components.len()];
        for p in parts {
            for (i, ((_, v), &c)) in p.components.iter().zip(&p.counts).enumerate() {
                components[i].1 += v * c as f64;
                counts[i] += c;
            }
        }
        for (c, &n) in components.iter_mut().zip(&counts) {
            if n > 0 {
                c.1 /= n as f64;
            }
        }
        let total = components.iter().map(|(_, v)| v).sum();
        Some(LossParts { total, components, counts })
    }
}

impl LmModel {
    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    fn backbone(&self, tape: &mut Tape, p: &[Var], mut x: Var, segments: Vec<Segment>) -> Result<Var> {
        let drop = self.config.dropout;
        for b in &self.layout.blocks {
            let h = tape.layer_norm(x, p[b.ln1.0], p[b.ln1.1])?;
            let q = tape.linear(h, p[b.q.0], p[b.q.1])?;
            let k = tape.linear(h, p[b.k.0], p[b.k.1])?;
            let v = tape.linear(h, p[b.v.0], p[b.v.1])?;
            let a = tape.attention(q, k, v, self.config.num_heads, segments.clone())?;
            let o = tape.linear(a, p[b.o.0], p[b.o.1])?;
            let o = tape.dropout(o, drop);
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, p[b.ln2.0], p[b.ln2.1])?;
            let f = tape.linear(h, p[b.ff1.0], p[b.ff1.1])?;
            let f = tape.gelu(f);
            let f = tape.linear(f, p[b.ff2.0], p[b.ff2.1])?;
            let f = tape.dropout(f, drop);
            x = tape.add(x, f)?;
        }
        tape.layer_norm(x, p[self.layout.ln_f.0], p[self.layout.ln_f.1])
    }

    fn semantic_lookups(&self, semantic: &[TokenId]) -> Result<(Lookups, Lookups)> {
        let mut tok = Vec::with_capacity(semantic.len());
        let mut pos = Vec::with_capacity(semantic.len());
        for (i, &id) in semantic.iter().enumerate() {
            let row = self.semantic_row(i);
            self.check_row(row)?;
            tok.push((i, self.vocab.semantic_index(id)?));
            pos.push((i, row));
        }
        Ok((tok, pos))
    }

    /// MPLM logits: semantic head at every semantic position and acoustic head
    /// at every acoustic input position. `acoustic_in` is the teacher-forced
    /// stream, starting with BOS.
    pub(crate) fn mplm_tape(
        &self,
        tape: &mut Tape,
        p: &[Var],
        semantic: &[TokenId],
        acoustic_in: &[TokenId],
    ) -> Result<(Var, Var)> {
        self.expect_kind(ModelKind::Mplm)?;
        let t_s = semantic.len();
        let mask = mplm_mask(t_s, acoustic_in.len())?;
        let (sem_tok, mut pos) = self.semantic_lookups(semantic)?;
        let mut ac_tok = Vec::with_capacity(acoustic_in.len());
        for (j, &id) in acoustic_in.iter().enumerate() {
            let row = self.acoustic_row(j);
            self.check_row(row)?;
            ac_tok.push((t_s + j, self.vocab.acoustic_index(id)?));
            pos.push((t_s + j, row));
        }
        let n = mask.size();
        let l = &self.layout;
        let sem_emb = l.sem_emb.expect("mplm has a semantic table");
        let x = tape.embed_sum(
            n,
            self.config.embed_dim,
            vec![(p[sem_emb], sem_tok), (p[l.ac_emb[0]], ac_tok), (p[l.pos], pos)],
        )?;
        let x = tape.dropout(x, self.config.dropout);
        let h = self.backbone(tape, p, x, vec![Segment { start: 0, mask }])?;
        let hs = tape.row_range(h, 0, t_s)?;
        let ha = tape.row_range(h, t_s, acoustic_in.len())?;
        let (sw, sb) = l.sem_head.expect("mplm has a semantic head");
        let sem = tape.linear(hs, p[sw], p[sb])?;
        let ac = tape.linear(ha, p[l.ac_head.0], p[l.ac_head.1])?;
        Ok((sem, ac))
    }

    /// ELM logits at every input position of the teacher-forced stream.
    ///
    /// With one layer the banded window mask has receptive field exactly w.
    /// Deeper stacks would widen it to layers·w, so each query is instead run
    /// through the whole stack on its own window and only its last row kept.
    pub(crate) fn elm_tape(&self, tape: &mut Tape, p: &[Var], inputs: &[TokenId]) -> Result<Var> {
        self.expect_kind(ModelKind::Elm)?;
        if inputs.is_empty() {
            return Err(Error::EmptyInput("elm input is empty".into()));
        }
        let w = self.config.window;
        let l = &self.layout;
        self.check_row(inputs.len() - 1)?;
        let mut tok = Vec::new();
        let mut pos = Vec::new();
        let mut segments = Vec::new();
        let mut last_rows = Vec::new();
        if self.config.num_layers == 1 {
            for (j, &id) in inputs.iter().enumerate() {
                tok.push((j, self.vocab.acoustic_index(id)?));
                pos.push((j, j));
            }
            segments.push(Segment { start: 0, mask: window_mask(inputs.len(), w) });
        } else {
            let mut cursor = 0;
            for t in 0..inputs.len() {
                let lo = t.saturating_sub(w);
                for (j, &id) in inputs.iter().enumerate().take(t + 1).skip(lo) {
                    tok.push((cursor + j - lo, self.vocab.acoustic_index(id)?));
                    pos.push((cursor + j - lo, j));
                }
                let len = t - lo + 1;
                segments.push(Segment { start: cursor, mask: causal_mask(len) });
                cursor += len;
                last_rows.push(cursor - 1);
            }
        }
        let rows = tok.len();
        let x = tape.embed_sum(rows, self.config.embed_dim, vec![(p[l.ac_emb[0]], tok), (p[l.pos], pos)])?;
        let x = tape.dropout(x, self.config.dropout);
        let mut h = self.backbone(tape, p, x, segments)?;
        if self.config.num_layers > 1 {
            h = tape.select_rows(h, last_rows)?;
        }
        tape.linear(h, p[l.ac_head.0], p[l.ac_head.1])
    }

    /// PLM logits for codec layer `layer` at every acoustic frame of `grid`.
    pub(crate) fn plm_tape(
        &self,
        tape: &mut Tape,
        p: &[Var],
        semantic: &[TokenId],
        grid: &AcousticGrid,
        prompt_len: usize,
        layer: usize,
    ) -> Result<Var> {
        self.expect_kind(ModelKind::Plm)?;
        let num_layers = self.vocab.num_layers as usize;
        if !(2..=num_layers).contains(&layer) {
            return Err(Error::Index(format!("codec layer {layer} outside [2, {num_layers}]")));
        }
        if grid.num_layers() != num_layers {
            return Err(Error::shape(format!("{} grid layers, model expects {num_layers}", grid.num_layers())));
        }
        if prompt_len > grid.len() {
            return Err(Error::shape("prompt region longer than the grid"));
        }
        let t_s = semantic.len();
        let t_a = grid.len();
        let l = &self.layout;
        let (sem_tok, mut pos) = self.semantic_lookups(semantic)?;
        let mut lookups = vec![(p[l.sem_emb.expect("plm has a semantic table")], sem_tok)];
        for m in 0..num_layers {
            let visible = if m + 1 < layer { t_a } else { prompt_len };
            let mut pairs = Vec::with_capacity(visible);
            for t in 0..visible {
                pairs.push((t_s + t, self.vocab.acoustic_index(grid.layer(m)[t])?));
            }
            if !pairs.is_empty() {
                lookups.push((p[l.ac_emb[m]], pairs));
            }
        }
        let layer_emb = l.layer_emb.expect("plm has a layer table");
        lookups.push((p[layer_emb], (0..t_a).map(|t| (t_s + t, layer)).collect()));
        for t in 0..t_a {
            let row = self.acoustic_row(t);
            self.check_row(row)?;
            pos.push((t_s + t, row));
        }
        lookups.push((p[l.pos], pos));
        let n = t_s + t_a;
        if n == 0 {
            return Err(Error::EmptyInput("plm input is empty".into()));
        }
        let x = tape.embed_sum(n, self.config.embed_dim, lookups)?;
        let x = tape.dropout(x, self.config.dropout);
        let h = self.backbone(tape, p, x, vec![Segment { start: 0, mask: full_mask(n) }])?;
        let ha = tape.row_range(h, t_s, t_a)?;
        tape.linear(ha, p[l.ac_head.0], p[l.ac_head.1])
    }

    /// `(semantic logits, acoustic logits)` for a semantic prefix and a
    /// layer-1 row; acoustic row `t` predicts `coarse[t]` (EOS at `t = T`).
    pub fn mplm_logits(&self, semantic: &SemanticSeq, coarse: &[TokenId]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let inputs = self.teacher_forced(coarse);
        let (s, a) = self.mplm_tape(&mut tape, &p, semantic.tokens(), &inputs)?;
        Ok((tape.value(s).clone(), tape.value(a).clone()))
    }

    /// ELM logits; row `t` predicts `coarse[t]` (EOS at `t = T`).
    pub fn elm_logits(&self, coarse: &[TokenId]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let inputs = self.teacher_forced(coarse);
        let v = self.elm_tape(&mut tape, &p, &inputs)?;
        Ok(tape.value(v).clone())
    }

    pub fn plm_logits(&self, semantic: &SemanticSeq, grid: &AcousticGrid, prompt_len: usize, layer: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let v = self.plm_tape(&mut tape, &p, semantic.tokens(), grid, prompt_len, layer)?;
        Ok(tape.value(v).clone())
    }

    pub(crate) fn teacher_forced(&self, coarse: &[TokenId]) -> Vec<TokenId> {
        std::iter::once(self.vocab.bos_id()).chain(coarse.iter().copied()).collect()
    }

    fn coarse_targets(&self, coarse: &[TokenId]) -> Result<Vec<usize>> {
        coarse
            .iter()
            .chain(std::iter::once(&self.vocab.eos_id()))
            .map(|&id| self.vocab.acoustic_index(id))
            .collect()
    }
}

/// Batch loss, plus gradients in parameter order when `with_grads` is set.
/// Dropout is live only when `dropout_rng` is given.
pub fn batch_loss(
    model: &LmModel,
    examples: &[Example],
    dropout_rng: Option<ChaCha8Rng>,
    with_grads: bool,
) -> Result<(LossParts, Option<Vec<Vec<f64>>>)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let mut tape = match dropout_rng {
        Some(rng) => Tape::with_dropout(rng),
        None => Tape::new(),
    };
    let p = model.bind(&mut tape, with_grads);
    let vocab = model.vocab();

    let mut terms: Vec<(usize, Var)> = Vec::new();
    let mut counts = vec![0; if model.kind() == ModelKind::Mplm { 2 } else { 1 }];
    let names: &[&'static str] = match model.kind() {
        ModelKind::Mplm => &["mask", "ar"],
        ModelKind::Elm => &["war"],
        ModelKind::Plm => &["nar"],
    };
    match model.kind() {
        ModelKind::Mplm => {
            let mut n_mask = 0;
            let mut n_ar = 0;
            for ex in examples {
                let Example::Mplm(ex) = ex else { return Err(Error::config("non-MPLM example in MPLM batch")) };
                n_mask += ex.plan.positions.len();
                n_ar += ex.coarse.len() + 1;
            }
            counts = vec![n_mask, n_ar];
            for ex in examples {
                let Example::Mplm(ex) = ex else { unreachable!() };
                let inputs = model.teacher_forced(&ex.coarse);
                let (sem, ac) = model.mplm_tape(&mut tape, &p, ex.semantic.tokens(), &inputs)?;
                if !ex.plan.is_empty() {
                    let rows = tape.select_rows(sem, ex.plan.positions.clone())?;
                    let targets =
                        ex.plan.originals.iter().map(|&id| vocab.semantic_index(id)).collect::<Result<Vec<_>>>()?;
                    terms.push((0, tape.cross_entropy(rows, targets, IGNORE, 1.0 / n_mask as f64)?));
                }
                let targets = model.coarse_targets(&ex.coarse)?;
                terms.push((1, tape.cross_entropy(ac, targets, IGNORE, 1.0 / n_ar as f64)?));
            }
        }
        ModelKind::Elm => {
            let total: usize = examples
                .iter()
                .map(|ex| match ex {
                    Example::Elm(row) => Ok(row.len() + 1),
                    _ => Err(Error::config("non-ELM example in ELM batch")),
                })
                .sum::<Result<usize>>()?;
            counts[0] = total;
            for ex in examples {
                let Example::Elm(row) = ex else { unreachable!() };
                let logits = model.elm_tape(&mut tape, &p, &model.teacher_forced(row))?;
                let targets = model.coarse_targets(row)?;
                terms.push((0, tape.cross_entropy(logits, targets, IGNORE, 1.0 / total as f64)?));
            }
        }
        ModelKind::Plm => {
            let total: usize = examples
                .iter()
                .map(|ex| match ex {
                    Example::Plm(ex) => Ok(ex.grid.len() - ex.prompt_len.min(ex.grid.len())),
                    _ => Err(Error::config("non-PLM example in PLM batch")),
                })
                .sum::<Result<usize>>()?;
            counts[0] = total;
            for ex in examples {
                let Example::Plm(ex) = ex else { unreachable!() };
                if ex.prompt_len >= ex.grid.len() {
                    continue;
                }
                let logits = model.plm_tape(&mut tape, &p, ex.semantic.tokens(), &ex.grid, ex.prompt_len, ex.layer)?;
                let row = ex.grid.layer(ex.layer - 1);
                let targets = (0..ex.grid.len())
                    .map(|t| if t < ex.prompt_len { Ok(IGNORE) } else { vocab.acoustic_index(row[t]) })
                    .collect::<Result<Vec<_>>>()?;
                terms.push((0, tape.cross_entropy(logits, targets, IGNORE, 1.0 / total as f64)?));
            }
        }
    }

    let mut components: Vec<(&'static str, f64)> = names.iter().map(|n| (*n, 0.0)).collect();
    for &(c, v) in &terms {
        components[c].1 += tape.value(v).data()[0];
    }
    let total = components.iter().map(|(_, v)| v).sum();
    let parts = LossParts { total, components, counts };
    if !with_grads || terms.is_empty() {
        let grads = with_grads.then(|| model.params().iter().map(|t| vec![0.0; t.len()]).collect());
        return Ok((parts, grads));
    }
    let mut root = terms[0].1;
    for &(_, v) in &terms[1..] {
        root = tape.add(root, v)?;
    }
    tape.backward(root)?;
    let grads = p
        .iter()
        .zip(model.params())
        .map(|(&v, t)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    Ok((parts, Some(grads)))
}
