//! Dense fp64 tensors, reverse-mode differentiation, AdamW, and
//! finite-difference gradient verification.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, sample_coords};
pub use optim::{clip_global_norm, optimizer_step, OptimState};
pub use tape::{Segment, Tape, Var};
pub use tensor::{matmul, Tensor};
pub(crate) use tensor::{gemm, Layout};

use crate::error::{Error, Result};
use crate::masks::AttnMask;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Softmax over the allowed entries of one row. Disallowed entries are
/// written as exactly 0.
pub(crate) fn masked_softmax_row(x: &[f64], allowed: &[bool], out: &mut [f64]) -> Result<()> {
    let mut mx = f64::NEG_INFINITY;
    for (v, &a) in x.iter().zip(allowed) {
        if a && *v > mx {
            mx = *v;
        }
    }
    if mx == f64::NEG_INFINITY {
        return Err(Error::DegenerateRow { row: 0 });
    }
    let mut z = 0.0;
    for ((o, v), &a) in out.iter_mut().zip(x).zip(allowed) {
        *o = if a { (v - mx).exp() } else { 0.0 };
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
    Ok(())
}

/// Row-wise softmax of `logits` with disallowed entries forced to 0.
pub fn masked_softmax_rows(logits: &Tensor, mask: &AttnMask) -> Result<Tensor> {
    let (r, c) = (logits.rows(), logits.cols());
    if logits.shape().len() != 2 || r != mask.size() || c != mask.size() {
        return Err(Error::shape(format!(
            "logits {:?} vs mask {}x{}",
            logits.shape(),
            mask.size(),
            mask.size()
        )));
    }
    let mut out = vec![0.0; r * c];
    for q in 0..r {
        masked_softmax_row(logits.row(q), mask.row(q), &mut out[q * c..(q + 1) * c])
            .map_err(|_| Error::DegenerateRow { row: q })?;
    }
    Tensor::new(vec![r, c], out)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean of `−log softmax(logits[r])[targets[r]]` over rows whose target is
/// not `ignore`; 0 when every row is ignored.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], ignore: usize) -> Result<f64> {
    let count = targets.iter().filter(|&&t| t != ignore).count();
    if count == 0 {
        if targets.len() != logits.rows() {
            return Err(Error::shape("one logit row per target"));
        }
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, targets.to_vec(), ignore, 1.0 / count as f64)?;
    Ok(tape.value(loss).data()[0])
}

#[cfg(test)]
mod tests;
