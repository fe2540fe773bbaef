//! Attention masks for the three language models, and span corruption of
//! semantic inputs.
//!
//! A mask is a square boolean matrix: entry `(q, k)` is true when query
//! position `q` may attend key position `k`. Every constructor here produces
//! masks with a true diagonal, so no row is ever fully masked.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tokens::{SemanticSeq, TokenId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    size: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(size * size);
        for q in 0..size {
            for k in 0..size {
                allowed.push(f(q, k));
            }
        }
        Self { size, allowed }
    }

    /// Builds a mask from explicit rows, rejecting non-square input.
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::shape("attention mask rows must form a square matrix"));
        }
        Ok(Self { size, allowed: rows.iter().flatten().copied().collect() })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.size + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.size..(q + 1) * self.size]
    }

    pub fn row_count(&self, q: usize) -> usize {
        self.row(q).iter().filter(|&&b| b).count()
    }

    /// Checks the structural invariants: a true diagonal and no empty row.
    pub fn validate(&self) -> Result<()> {
        for q in 0..self.size {
            if !self.allows(q, q) {
                return Err(Error::shape(format!("mask diagonal is false at row {q}")));
            }
        }
        Ok(())
    }

    /// One text line per query row, `#` for allowed and `.` for masked.
    pub fn to_ascii(&self) -> Vec<String> {
        (0..self.size)
            .map(|q| self.row(q).iter().map(|&b| if b { '#' } else { '.' }).collect())
            .collect()
    }
}

/// Prefix-LM mask: bidirectional over the semantic prefix `[0, t_s)`,
/// causal over the acoustic continuation, which also sees the whole prefix.
pub fn mplm_mask(t_s: usize, t_a: usize) -> Result<AttnMask> {
    if t_s == 0 {
        return Err(Error::EmptyInput("mplm mask needs at least one semantic position".into()));
    }
    Ok(AttnMask::from_fn(t_s + t_a, |q, k| {
        if q < t_s {
            k < t_s
        } else {
            k <= q
        }
    }))
}

pub fn causal_mask(t: usize) -> AttnMask {
    AttnMask::from_fn(t, |q, k| k <= q)
}

/// Sliding causal window: row `t` sees keys `max(0, t - w) ..= t`.
pub fn window_mask(t: usize, w: usize) -> AttnMask {
    AttnMask::from_fn(t, |q, k| k <= q && k + w >= q)
}

pub fn full_mask(t: usize) -> AttnMask {
    AttnMask::from_fn(t, |_, _| true)
}

/// Record of one span-masking draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanMaskPlan {
    pub ratio: f64,
    pub span: usize,
    /// Sorted masked positions.
    pub positions: Vec<usize>,
    /// Original tokens at `positions`, in the same order.
    pub originals: Vec<TokenId>,
}

impl SpanMaskPlan {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Number of span starts drawn for a sequence of `len` tokens at ratio `r`.
pub fn span_start_count(len: usize, ratio: f64) -> usize {
    // guard against 0.02 * 100 = 2.0000000000000004 rounding up to 3
    let raw = ratio * len as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(len)
}

/// Replaces spans of `span` tokens, starting at `⌈ratio·T⌉` distinct uniformly
/// drawn positions, by `mask_token`. Spans clip at the sequence end and
/// overlapping spans merge.
pub fn apply_span_mask<R: Rng + ?Sized>(
    seq: &SemanticSeq,
    ratio: f64,
    span: usize,
    mask_token: TokenId,
    rng: &mut R,
) -> Result<(SemanticSeq, SpanMaskPlan)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!("mask ratio {ratio} outside [0, 1]")));
    }
    if span == 0 {
        return Err(Error::config("span length must be at least 1"));
    }
    let len = seq.len();
    let starts = span_start_count(len, ratio);
    let mut hit = vec![false; len];
    if starts > 0 {
        for s in index::sample(rng, len, starts).iter() {
            for flag in hit.iter_mut().skip(s).take(span) {
                *flag = true;
            }
        }
    }
    let mut tokens = seq.tokens().to_vec();
    let mut positions = Vec::new();
    let mut originals = Vec::new();
    for (i, flag) in hit.iter().enumerate() {
        if *flag {
            positions.push(i);
            originals.push(tokens[i]);
            tokens[i] = mask_token;
        }
    }
    let plan = SpanMaskPlan { ratio, span, positions, originals };
    Ok((SemanticSeq::new(tokens), plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(m: &AttnMask) -> Vec<String> {
        (0..m.size())
            .map(|q| m.row(q).iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }

    #[test]
    fn mplm_small_enumeration() {
        let m = mplm_mask(2, 2).unwrap();
        assert_eq!(bits(&m), ["1100", "1100", "1110", "1111"]);
        assert_eq!(m.to_ascii(), ["##..", "##..", "###.", "####"]);
        m.validate().unwrap();
    }

    #[test]
    fn mplm_pure_prefix() {
        let m = mplm_mask(3, 0).unwrap();
        assert!((0..3).all(|q| (0..3).all(|k| m.allows(q, k))));
    }

    #[test]
    fn mplm_prefix_never_sees_continuation() {
        let (t_s, t_a) = (5, 7);
        let m = mplm_mask(t_s, t_a).unwrap();
        for q in 0..t_s {
            for k in t_s..t_s + t_a {
                assert!(!m.allows(q, k));
            }
        }
        assert!(matches!(mplm_mask(0, 3), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn causal_rows() {
        assert_eq!(bits(&causal_mask(1)), ["1"]);
        assert_eq!(bits(&causal_mask(3)), ["100", "110", "111"]);
        let m = causal_mask(9);
        for t in 0..9 {
            assert_eq!(m.row_count(t), t + 1);
        }
    }

    #[test]
    fn window_rows() {
        assert_eq!(bits(&window_mask(4, 2)), ["1000", "1100", "1110", "0111"]);
        assert_eq!(window_mask(6, 5), causal_mask(6));
        assert_eq!(window_mask(6, 9), causal_mask(6));
        let m = window_mask(12, 3);
        for t in 0..12 {
            assert_eq!(m.row_count(t), t.min(3) + 1);
            assert!((0..12).all(|k| m.allows(t, k) == (k <= t && k + 3 >= t)));
        }
    }

    #[test]
    fn full_rows() {
        assert_eq!(bits(&full_mask(2)), ["11", "11"]);
        let m = full_mask(5);
        for q in 0..5 {
            assert_eq!(m.row_count(q), 5);
            for k in 0..5 {
                assert_eq!(m.allows(q, k), m.allows(k, q));
            }
        }
    }

    #[test]
    fn span_mask_zero_ratio() {
        let seq = SemanticSeq::new((0..30).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, plan) = apply_span_mask(&seq, 0.0, 10, 999, &mut rng).unwrap();
        assert_eq!(out, seq);
        assert!(plan.is_empty());
    }

    #[test]
    fn span_mask_counts() {
        assert_eq!(span_start_count(100, 0.02), 2);
        assert_eq!(span_start_count(500, 0.03), 15);
        assert_eq!(span_start_count(7, 0.5), 4);
        let seq = SemanticSeq::new((0..100).collect());
        // find a draw whose two spans do not overlap and do not clip
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, plan) = apply_span_mask(&seq, 0.02, 10, 999, &mut rng).unwrap();
            assert!(plan.positions.len() <= 20);
            for (&p, &o) in plan.positions.iter().zip(&plan.originals) {
                assert_eq!(out.tokens()[p], 999);
                assert_eq!(o, p as TokenId);
            }
            if plan.positions.len() == 20 {
                return;
            }
        }
        panic!("no non-overlapping draw found");
    }

    #[test]
    fn span_mask_default_fraction_bound() {
        let seq = SemanticSeq::new(vec![3; 500]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for r in [0.02, 0.03, 0.04] {
            for _ in 0..50 {
                let (_, plan) = apply_span_mask(&seq, r, 10, 999, &mut rng).unwrap();
                assert!(plan.positions.len() as f64 / 500.0 <= r * 10.0 + 1e-12);
            }
        }
    }

    #[test]
    fn span_mask_rejects_bad_args() {
        let seq = SemanticSeq::new(vec![1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_span_mask(&seq, 1.5, 10, 9, &mut rng).is_err());
        assert!(apply_span_mask(&seq, 0.1, 0, 9, &mut rng).is_err());
    }
}
