//! Tape-free forward pass with a key/value cache, for decoding.
//!
//! Computes the same function as the tape forward (dropout off) but appends
//! rows incrementally. Agreement with the tape is checked in tests.

use super::LmModel;
use crate::error::{Error, Result};
use crate::numerics::{gelu, gemm, masked_softmax_row, Layout};
use crate::tokens::TokenId;

const LN_EPS: f64 = 1e-5;

/// Per-layer keys and values of every row fed so far.
#[derive(Clone, Debug)]
pub(crate) struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn new(model: &LmModel) -> Self {
        let n = model.config.num_layers;
        Self { k: vec![Vec::new(); n], v: vec![Vec::new(); n], len: 0 }
    }
}

/// Which embedding table a plain input row draws from.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    Semantic,
    Acoustic,
}

fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64], k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        out[r * n..(r + 1) * n].copy_from_slice(b);
    }
    gemm(rows, k, n, x, Layout::N, w, Layout::N, &mut out, 1.0);
    out
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        for c in 0..d {
            o[c] = (row[c] - mean) * is * g[c] + b[c];
        }
    }
    out
}

impl LmModel {
    fn p(&self, i: usize) -> &[f64] {
        self.params[i].data()
    }

    /// Embeds one token of `stream` at time-grid row `pos_row`.
    pub(crate) fn embed_plain(&self, stream: Stream, id: TokenId, pos_row: usize) -> Result<Vec<f64>> {
        self.check_row(pos_row)?;
        let d = self.config.embed_dim;
        let (table, idx) = match stream {
            Stream::Semantic => (
                self.layout.sem_emb.ok_or_else(|| Error::config("model has no semantic inputs"))?,
                self.vocab.semantic_index(id)?,
            ),
            Stream::Acoustic => (self.layout.ac_emb[0], self.vocab.acoustic_index(id)?),
        };
        let t = self.p(table);
        let pos = self.p(self.layout.pos);
        Ok((0..d).map(|c| t[idx * d + c] + pos[pos_row * d + c]).collect())
    }

    /// Feeds `n` embedded rows through the stack, extending `cache`, and
    /// returns their final-norm outputs. New rows always see every cached
    /// row; among themselves they see each other fully when `group` is set,
    /// otherwise causally.
    pub(crate) fn forward_cached(&self, cache: &mut KvCache, x: &[f64], group: bool) -> Result<Vec<f64>> {
        let d = self.config.embed_dim;
        if !x.len().is_multiple_of(d) {
            return Err(Error::shape("input width"));
        }
        let n = x.len() / d;
        let heads = self.config.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let base = cache.len;
        let mut x = x.to_vec();
        for (li, b) in self.layout.blocks.iter().enumerate() {
            let h = layer_norm(&x, d, self.p(b.ln1.0), self.p(b.ln1.1));
            let q = linear(&h, n, self.p(b.q.0), self.p(b.q.1), d, d);
            let k = linear(&h, n, self.p(b.k.0), self.p(b.k.1), d, d);
            let v = linear(&h, n, self.p(b.v.0), self.p(b.v.1), d, d);
            cache.k[li].extend_from_slice(&k);
            cache.v[li].extend_from_slice(&v);
            let (kc, vc) = (&cache.k[li], &cache.v[li]);
            let total = base + n;
            let mut att = vec![0.0; n * d];
            let mut scores = vec![0.0; total];
            let mut probs = vec![0.0; total];
            let allowed = vec![true; total];
            for r in 0..n {
                let visible = if group { total } else { base + r + 1 };
                for hh in 0..heads {
                    let qh = &q[r * d + hh * dh..r * d + (hh + 1) * dh];
                    for j in 0..visible {
                        let kh = &kc[j * d + hh * dh..j * d + (hh + 1) * dh];
                        scores[j] = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    masked_softmax_row(&scores[..visible], &allowed[..visible], &mut probs[..visible])?;
                    let out = &mut att[r * d + hh * dh..r * d + (hh + 1) * dh];
                    for j in 0..visible {
                        let vh = &vc[j * d + hh * dh..j * d + (hh + 1) * dh];
                        out.iter_mut().zip(vh).for_each(|(o, v)| *o += probs[j] * v);
                    }
                }
            }
            let o = linear(&att, n, self.p(b.o.0), self.p(b.o.1), d, d);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let h = layer_norm(&x, d, self.p(b.ln2.0), self.p(b.ln2.1));
            let ff = self.config.ff_dim;
            let mut f = linear(&h, n, self.p(b.ff1.0), self.p(b.ff1.1), d, ff);
            f.iter_mut().for_each(|v| *v = gelu(*v));
            let f = linear(&f, n, self.p(b.ff2.0), self.p(b.ff2.1), ff, d);
            x.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
        }
        cache.len += n;
        Ok(layer_norm(&x, d, self.p(self.layout.ln_f.0), self.p(self.layout.ln_f.1)))
    }

    /// Acoustic-head logits for one final-norm row.
    pub(crate) fn acoustic_head_plain(&self, h: &[f64]) -> Vec<f64> {
        let (w, b) = self.layout.ac_head;
        linear(h, 1, self.p(w), self.p(b), self.config.embed_dim, self.vocab.acoustic_head_size())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelKind};
    use crate::tokens::{SemanticSeq, VocabConfig};

    fn model(kind: ModelKind, layers: usize) -> LmModel {
        let cfg = ModelConfig {
            num_layers: layers,
            num_heads: 2,
            embed_dim: 8,
            ff_dim: 16,
            dropout: 0.0,
            max_positions: 256,
            window: 3,
        };
        let vocab = VocabConfig { semantic_vocab: 12, acoustic_vocab: 20, num_layers: 2, ..VocabConfig::default() };
        let mut m = LmModel::new(kind, cfg, vocab, 7).unwrap();
        m.perturb(8, 0.2);
        m
    }

    #[test]
    fn cached_mplm_matches_tape() {
        let m = model(ModelKind::Mplm, 2);
        let sem = SemanticSeq::new(vec![1, 5, 11, 3, 0]);
        let coarse = vec![4, 19, 2, 2, 7, 0, 13, 9];
        let (_, ac) = m.mplm_logits(&sem, &coarse).unwrap();

        let mut cache = KvCache::new(&m);
        let mut x = Vec::new();
        for (i, &id) in sem.tokens().iter().enumerate() {
            x.extend(m.embed_plain(Stream::Semantic, id, m.semantic_row(i)).unwrap());
        }
        m.forward_cached(&mut cache, &x, true).unwrap();
        let inputs = m.teacher_forced(&coarse);
        // feed the first three acoustic rows at once, then one at a time
        let mut outs = Vec::new();
        let first: Vec<f64> = (0..3)
            .flat_map(|j| m.embed_plain(Stream::Acoustic, inputs[j], m.acoustic_row(j)).unwrap())
            .collect();
        let h = m.forward_cached(&mut cache, &first, false).unwrap();
        outs.extend(h.chunks(8).map(|r| m.acoustic_head_plain(r)));
        for (j, &id) in inputs.iter().enumerate().skip(3) {
            let x = m.embed_plain(Stream::Acoustic, id, m.acoustic_row(j)).unwrap();
            let h = m.forward_cached(&mut cache, &x, false).unwrap();
            outs.push(m.acoustic_head_plain(&h));
        }
        assert_eq!(outs.len(), ac.rows());
        for (t, row) in outs.iter().enumerate() {
            for (a, b) in row.iter().zip(ac.row(t)) {
                assert!((a - b).abs() < 1e-9, "row {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn windowed_elm_matches_per_window_recompute() {
        for layers in [1, 2] {
            let m = model(ModelKind::Elm, layers);
            let coarse: Vec<u32> = vec![3, 1, 4, 1, 5, 9, 2, 6, 5, 3];
            let tape_logits = m.elm_logits(&coarse).unwrap();
            let inputs = m.teacher_forced(&coarse);
            let w = m.config().window;
            for t in 0..inputs.len() {
                let lo = t.saturating_sub(w);
                let x: Vec<f64> = (lo..=t)
                    .flat_map(|j| m.embed_plain(Stream::Acoustic, inputs[j], j).unwrap())
                    .collect();
                let mut cache = KvCache::new(&m);
                let h = m.forward_cached(&mut cache, &x, false).unwrap();
                let logits = m.acoustic_head_plain(&h[h.len() - 8..]);
                for (a, b) in logits.iter().zip(tape_logits.row(t)) {
                    assert!((a - b).abs() < 1e-9, "layers {layers} row {t}: {a} vs {b}");
                }
            }
        }
    }
}
