//! Reverse-mode differentiation over a flat operation tape.
//!
//! Every op appends one node holding its forward value plus whatever it needs
//! for the backward sweep. `backward` walks the tape once in reverse.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, Layout, Tensor};
use super::{gelu, gelu_grad, masked_softmax_row};
use crate::error::{Error, Result};
use crate::masks::AttnMask;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A group of consecutive rows that attend only among themselves under `mask`.
#[derive(Clone, Debug)]
pub struct Segment {
    pub start: usize,
    pub mask: AttnMask,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    SumAll { x: Var },
    EmbedSum { lookups: Vec<(Var, Vec<(usize, usize)>)> },
    SelectRows { x: Var, rows: Vec<usize> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu { x: Var },
    Dropout { x: Var, keep: Vec<f64> },
    MaskedSoftmax { x: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, segments: Vec<Segment>, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, scale: f64, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), dropout_rng: None }
    }

    /// A tape whose `dropout` calls are live, driven by `rng`.
    pub fn with_dropout(rng: ChaCha8Rng) -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), dropout_rng: Some(rng) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        if wt.shape().len() != 2 || xt.cols() != wt.shape()[0] || bt.len() != wt.shape()[1] {
            return Err(Error::shape(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                xt.shape(),
                wt.shape(),
                bt.shape()
            )));
        }
        let (m, k, n) = (xt.rows(), xt.cols(), wt.shape()[1]);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bt.data());
        }
        gemm(m, k, n, xt.data(), Layout::N, wt.data(), Layout::N, &mut out, 1.0);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", at.shape(), bt.shape())));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(Error::shape(format!("mul: {:?} vs {:?}", at.shape(), bt.shape())));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xt = self.value(x);
        let value = Tensor::new(xt.shape().to_vec(), xt.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, s }, rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, rg)
    }

    /// Output row `r` is the sum of `table[j]` over every `(r, j)` pair of
    /// every lookup. Rows that no lookup touches stay zero.
    pub fn embed_sum(
        &mut self,
        rows: usize,
        dim: usize,
        lookups: Vec<(Var, Vec<(usize, usize)>)>,
    ) -> Result<Var> {
        let mut out = vec![0.0; rows * dim];
        let mut rg = false;
        for (table, pairs) in &lookups {
            let t = self.value(*table);
            if t.cols() != dim {
                return Err(Error::shape(format!("embedding table width {} != {dim}", t.cols())));
            }
            for &(r, j) in pairs {
                if r >= rows || j >= t.rows() {
                    return Err(Error::Index(format!(
                        "embedding lookup ({r}, {j}) outside {rows} rows / table of {}",
                        t.rows()
                    )));
                }
                let src = t.row(j);
                out[r * dim..(r + 1) * dim].iter_mut().zip(src).for_each(|(o, s)| *o += s);
            }
            rg |= self.rg(*table);
        }
        Ok(self.push(Tensor::new(vec![rows, dim], out)?, Op::EmbedSum { lookups }, rg))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            if r >= xt.rows() {
                return Err(Error::Index(format!("row {r} of {}", xt.rows())));
            }
            out.extend_from_slice(xt.row(r));
        }
        let value = Tensor::new(vec![rows.len(), c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SelectRows { x, rows }, rg))
    }

    pub fn row_range(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.select_rows(x, (start..start + len).collect())
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xt, gt, bt) = (self.value(x), self.value(gain), self.value(bias));
        let (m, n) = (xt.rows(), xt.cols());
        if gt.len() != n || bt.len() != n {
            return Err(Error::shape("layer norm parameter width"));
        }
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for r in 0..m {
            let row = xt.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * gt.data()[c] + bt.data()[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let value = Tensor::new(xt.shape().to_vec(), xt.data().iter().map(|&v| gelu(v)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Gelu { x }, rg)
    }

    /// Inverted dropout; the identity on tapes built without a dropout rng.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let n = self.nodes[x.0].value.len();
        let keep: Vec<f64> =
            (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect();
        let xt = self.value(x);
        let data = xt.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let value = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Dropout { x, keep }, rg)
    }

    pub fn masked_softmax(&mut self, x: Var, mask: &AttnMask) -> Result<Var> {
        let value = super::masked_softmax_rows(self.value(x), mask)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaskedSoftmax { x }, rg))
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q`, `k`, `v` (all N×d). Rows outside every segment produce zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<Segment>,
    ) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qt.rows(), qt.cols());
        if kt.shape() != qt.shape() || vt.shape() != qt.shape() {
            return Err(Error::shape("attention q/k/v shapes differ"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(format!("width {d} not divisible by {heads} heads")));
        }
        for s in &segments {
            if s.start + s.mask.size() > n {
                return Err(Error::shape("attention segment exceeds sequence"));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; n * d];
        let mut probs = Vec::new();
        let mut qh = Vec::new();
        let mut kh = Vec::new();
        let mut vh = Vec::new();
        let mut oh = Vec::new();
        for seg in &segments {
            let len = seg.mask.size();
            for h in 0..heads {
                gather_head(qt.data(), d, seg.start, len, h * dh, dh, &mut qh);
                gather_head(kt.data(), d, seg.start, len, h * dh, dh, &mut kh);
                gather_head(vt.data(), d, seg.start, len, h * dh, dh, &mut vh);
                let mut s = vec![0.0; len * len];
                gemm(len, dh, len, &qh, Layout::N, &kh, Layout::T, &mut s, 0.0);
                s.iter_mut().for_each(|x| *x *= scale);
                let mut p = vec![0.0; len * len];
                for r in 0..len {
                    masked_softmax_row(&s[r * len..(r + 1) * len], seg.mask.row(r), &mut p[r * len..(r + 1) * len])
                        .map_err(|_| Error::DegenerateRow { row: seg.start + r })?;
                }
                oh.clear();
                oh.resize(len * dh, 0.0);
                gemm(len, len, dh, &p, Layout::N, &vh, Layout::N, &mut oh, 0.0);
                scatter_head(&oh, &mut out, d, seg.start, len, h * dh, dh);
                probs.extend_from_slice(&p);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(value, Op::Attention { q, k, v, heads, segments, probs }, rg))
    }

    /// `scale · Σ −log softmax(logits[r])[targets[r]]` over rows whose target
    /// is not `ignore`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
        scale: f64,
    ) -> Result<Var> {
        let lt = self.value(logits);
        let (m, v) = (lt.rows(), lt.cols());
        if targets.len() != m {
            return Err(Error::shape(format!("{} targets for {m} logit rows", targets.len())));
        }
        let mut probs = vec![0.0; m * v];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            if t >= v {
                return Err(Error::Index(format!("target {t} outside vocabulary of {v}")));
            }
            let row = lt.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                probs[r * v + c] = e;
                z += e;
            }
            probs[r * v..(r + 1) * v].iter_mut().for_each(|p| *p /= z);
            total += (mx + z.ln() - row[t]) * scale;
        }
        if !total.is_finite() {
            return Err(Error::Numeric("non-finite cross-entropy".into()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, targets, ignore, scale, probs },
            rg,
        ))
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Takes ownership of the gradient buffer of `v`.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward root must be a scalar"));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Inputs always precede node `i`, so the split hands out disjoint borrows.
        let (before, rest) = self.nodes.split_at(i);
        let node = &rest[0];
        let grads = &mut self.grads;
        fn slot<'g>(before: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
            let n = &before[v.0];
            if !n.requires_grad {
                return None;
            }
            let len = n.value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (at, bt) = (&before[a.0].value, &before[b.0].value);
                let (m, k, n) = (at.rows(), at.cols(), bt.cols());
                if let Some(ga) = slot(before, grads, *a) {
                    gemm(m, n, k, g, Layout::N, bt.data(), Layout::T, ga, 1.0);
                }
                if let Some(gb) = slot(before, grads, *b) {
                    gemm(k, m, n, at.data(), Layout::T, g, Layout::N, gb, 1.0);
                }
            }
            Op::Linear { x, w, b } => {
                let (xt, wt) = (&before[x.0].value, &before[w.0].value);
                let (m, k, n) = (xt.rows(), xt.cols(), wt.shape()[1]);
                if let Some(gx) = slot(before, grads, *x) {
                    gemm(m, n, k, g, Layout::N, wt.data(), Layout::T, gx, 1.0);
                }
                if let Some(gw) = slot(before, grads, *w) {
                    gemm(k, m, n, xt.data(), Layout::T, g, Layout::N, gw, 1.0);
                }
                if let Some(gb) = slot(before, grads, *b) {
                    for r in 0..m {
                        gb.iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(gv) = slot(before, grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (at, bt) = (&before[a.0].value, &before[b.0].value);
                if let Some(ga) = slot(before, grads, *a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(bt.data()) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = slot(before, grads, *b) {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(at.data()) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale { x, s } => {
                if let Some(gx) = slot(before, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * s);
                }
            }
            Op::SumAll { x } => {
                if let Some(gx) = slot(before, grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::EmbedSum { lookups } => {
                let dim = node.value.cols();
                for (table, pairs) in lookups {
                    if let Some(gt) = slot(before, grads, *table) {
                        for &(r, j) in pairs {
                            gt[j * dim..(j + 1) * dim]
                                .iter_mut()
                                .zip(&g[r * dim..(r + 1) * dim])
                                .for_each(|(o, x)| *o += x);
                        }
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let c = node.value.cols();
                if let Some(gx) = slot(before, grads, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        gx[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g[i * c..(i + 1) * c])
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let n = node.value.cols();
                let m = node.value.rows();
                let gv = before[gain.0].value.data();
                if let Some(gg) = slot(before, grads, *gain) {
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if let Some(gb) = slot(before, grads, *bias) {
                    for r in 0..m {
                        gb.iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(o, v)| *o += v);
                    }
                }
                if let Some(gx) = slot(before, grads, *x) {
                    let nf = n as f64;
                    for r in 0..m {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..n {
                            let dh = g[r * n + c] * gv[c];
                            sum_d += dh;
                            sum_dx += dh * xhat[r * n + c];
                        }
                        for c in 0..n {
                            let dh = g[r * n + c] * gv[c];
                            gx[r * n + c] +=
                                inv_std[r] / nf * (nf * dh - sum_d - xhat[r * n + c] * sum_dx);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xt = &before[x.0].value;
                if let Some(gx) = slot(before, grads, *x) {
                    for ((o, v), &xv) in gx.iter_mut().zip(g).zip(xt.data()) {
                        *o += v * gelu_grad(xv);
                    }
                }
            }
            Op::Dropout { x, keep } => {
                if let Some(gx) = slot(before, grads, *x) {
                    for ((o, v), k) in gx.iter_mut().zip(g).zip(keep) {
                        *o += v * k;
                    }
                }
            }
            Op::MaskedSoftmax { x, .. } => {
                let p = &node.value;
                let c = p.cols();
                if let Some(gx) = slot(before, grads, *x) {
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += pr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, segments, probs } => {
                let (qt, kt, vt) = (&before[q.0].value, &before[k.0].value, &before[v.0].value);
                let d = qt.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let n_rows = qt.rows();
                let mut dq = vec![0.0; n_rows * d];
                let mut dk = vec![0.0; n_rows * d];
                let mut dv = vec![0.0; n_rows * d];
                let mut qh = Vec::new();
                let mut kh = Vec::new();
                let mut vh = Vec::new();
                let mut goh = Vec::new();
                let mut off = 0;
                for seg in segments {
                    let len = seg.mask.size();
                    for h in 0..*heads {
                        let p = &probs[off..off + len * len];
                        off += len * len;
                        gather_head(qt.data(), d, seg.start, len, h * dh, dh, &mut qh);
                        gather_head(kt.data(), d, seg.start, len, h * dh, dh, &mut kh);
                        gather_head(vt.data(), d, seg.start, len, h * dh, dh, &mut vh);
                        gather_head(g, d, seg.start, len, h * dh, dh, &mut goh);
                        // dP = dO · Vᵀ ; dV = Pᵀ · dO
                        let mut dp = vec![0.0; len * len];
                        gemm(len, dh, len, &goh, Layout::N, &vh, Layout::T, &mut dp, 0.0);
                        let mut dvh = vec![0.0; len * dh];
                        gemm(len, len, dh, p, Layout::T, &goh, Layout::N, &mut dvh, 0.0);
                        // dS = P ⊙ (dP − rowdot(dP, P)) · scale
                        for r in 0..len {
                            let pr = &p[r * len..(r + 1) * len];
                            let dr = &mut dp[r * len..(r + 1) * len];
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for j in 0..len {
                                dr[j] = pr[j] * (dr[j] - dot) * scale;
                            }
                        }
                        let mut dqh = vec![0.0; len * dh];
                        gemm(len, len, dh, &dp, Layout::N, &kh, Layout::N, &mut dqh, 0.0);
                        let mut dkh = vec![0.0; len * dh];
                        gemm(len, len, dh, &dp, Layout::T, &qh, Layout::N, &mut dkh, 0.0);
                        scatter_add_head(&dqh, &mut dq, d, seg.start, len, h * dh, dh);
                        scatter_add_head(&dkh, &mut dk, d, seg.start, len, h * dh, dh);
                        scatter_add_head(&dvh, &mut dv, d, seg.start, len, h * dh, dh);
                    }
                }
                for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
                    if let Some(gv) = slot(before, grads, *var) {
                        gv.iter_mut().zip(&buf).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, ignore, scale, probs } => {
                let v = before[logits.0].value.cols();
                if let Some(gl) = slot(before, grads, *logits) {
                    let s = g[0] * scale;
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        for c in 0..v {
                            gl[r * v + c] += s * probs[r * v + c];
                        }
                        gl[r * v + t] -= s;
                    }
                }
            }
        }
        Ok(())
    }
}

fn gather_head(src: &[f64], d: usize, start: usize, len: usize, col: usize, dh: usize, dst: &mut Vec<f64>) {
    dst.clear();
    for r in start..start + len {
        dst.extend_from_slice(&src[r * d + col..r * d + col + dh]);
    }
}

fn scatter_head(src: &[f64], dst: &mut [f64], d: usize, start: usize, len: usize, col: usize, dh: usize) {
    for i in 0..len {
        let r = start + i;
        dst[r * d + col..r * d + col + dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
    }
}

fn scatter_add_head(src: &[f64], dst: &mut [f64], d: usize, start: usize, len: usize, col: usize, dh: usize) {
    for i in 0..len {
        let r = start + i;
        dst[r * d + col..r * d + col + dh]
            .iter_mut()
            .zip(&src[i * dh..(i + 1) * dh])
            .for_each(|(o, x)| *o += x);
    }
}
