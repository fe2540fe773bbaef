//! Self-describing binary checkpoint.
//!
//! ```text
//! magic "LMVCCKPT" | u16 version (1) | u8 kind
//! model: u32 layers, heads, embed, ff | f64 dropout | u32 max_positions, window
//! vocab: u32 V_s, V_a | u16 L | f64 semantic_ms, acoustic_ms
//! u32 n | n × (u16 name_len, name, u8 ndim, ndim × u32 dim, u64 element offset)
//! f64 payload, tensors concatenated in table order
//! u8 has_optimizer [u64 step | f64 lr, decay, beta1, beta2, eps, wd | m payload | v payload]
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{LmModel, ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::numerics::{OptimState, Tensor};
use crate::tokens::VocabConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LMVCCKPT";
const VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: LmModel,
    pub optim: Option<OptimState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

pub fn encode_checkpoint(model: &LmModel, optim: Option<&OptimState>) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64 + 8 * model.num_params() * if optim.is_some() { 3 } else { 1 }));
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u16(VERSION);
    w.u8(model.kind().tag());
    let c = model.config();
    for v in [c.num_layers, c.num_heads, c.embed_dim, c.ff_dim] {
        w.u32(v);
    }
    w.f64(c.dropout);
    w.u32(c.max_positions);
    w.u32(c.window);
    let v = model.vocab();
    w.u32(v.semantic_vocab as usize);
    w.u32(v.acoustic_vocab as usize);
    w.u16(v.num_layers);
    w.f64(v.semantic_frame_ms);
    w.f64(v.acoustic_frame_ms);

    w.u32(model.params().len());
    let mut offset = 0u64;
    for (name, t) in model.names().iter().zip(model.params()) {
        w.u16(name.len() as u16);
        w.0.extend_from_slice(name.as_bytes());
        w.u8(t.shape().len() as u8);
        t.shape().iter().for_each(|&d| w.u32(d));
        w.u64(offset);
        offset += t.len() as u64;
    }
    model.params().iter().for_each(|t| w.f64s(t.data()));

    match optim {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            w.u64(o.step);
            for x in [o.lr, o.decay_ratio, o.beta1, o.beta2, o.eps, o.weight_decay] {
                w.f64(x);
            }
            o.m.iter().for_each(|m| w.f64s(m));
            o.v.iter().for_each(|v| w.f64s(v));
        }
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint { offset: self.pos as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("payload size overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint { offset: 0, msg: "bad magic, not a checkpoint".into() });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint { offset: 8, msg: format!("unsupported version {version}") });
    }
    let at = r.pos;
    let kind = ModelKind::from_tag(r.u8()?)
        .ok_or_else(|| Error::Checkpoint { offset: at as u64, msg: "unknown model kind".into() })?;
    let config = ModelConfig {
        num_layers: r.u32()?,
        num_heads: r.u32()?,
        embed_dim: r.u32()?,
        ff_dim: r.u32()?,
        dropout: r.f64()?,
        max_positions: r.u32()?,
        window: r.u32()?,
    };
    let vocab = VocabConfig {
        semantic_vocab: r.u32()? as u32,
        acoustic_vocab: r.u32()? as u32,
        num_layers: r.u16()?,
        semantic_frame_ms: r.f64()?,
        acoustic_frame_ms: r.f64()?,
    };
    let header_end = r.pos;
    config.validate().map_err(|e| Error::Checkpoint { offset: 11, msg: e.to_string() })?;
    vocab.validate().map_err(|e| Error::Checkpoint { offset: header_end as u64 - 26, msg: e.to_string() })?;

    let n = r.u32()?;
    let mut table = Vec::with_capacity(n.min(4096));
    let mut expected_offset = 0u64;
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.err("tensor name is not UTF-8"))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let at = r.pos;
        let offset = r.u64()?;
        if offset != expected_offset {
            return Err(Error::Checkpoint { offset: at as u64, msg: format!("tensor {name} payload offset {offset}") });
        }
        expected_offset += shape.iter().product::<usize>() as u64;
        table.push((name, shape));
    }
    let mut named = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let data = r.f64s(shape.iter().product())?;
        named.push((name, Tensor::new(shape, data)?));
    }
    let payload_end = r.pos;
    let model = LmModel::from_named(kind, config, vocab, named).map_err(|e| match e {
        Error::Checkpoint { msg, .. } => Error::Checkpoint { offset: payload_end as u64, msg },
        other => other,
    })?;

    let optim = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let mut h = [0.0; 6];
            for x in &mut h {
                *x = r.f64()?;
            }
            let sizes: Vec<usize> = model.params().iter().map(Tensor::len).collect();
            let m = sizes.iter().map(|&s| r.f64s(s)).collect::<Result<Vec<_>>>()?;
            let v = sizes.iter().map(|&s| r.f64s(s)).collect::<Result<Vec<_>>>()?;
            Some(OptimState {
                m,
                v,
                step,
                lr: h[0],
                decay_ratio: h[1],
                beta1: h[2],
                beta2: h[3],
                eps: h[4],
                weight_decay: h[5],
            })
        }
        other => return Err(Error::Checkpoint { offset: r.pos as u64 - 1, msg: format!("bad optimizer flag {other}") }),
    };
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { model, optim })
}

pub fn save_checkpoint(path: &Path, model: &LmModel, optim: Option<&OptimState>) -> Result<()> {
    // write-then-rename so an interrupted save never leaves a torn checkpoint
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, encode_checkpoint(model, optim))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?)
}
