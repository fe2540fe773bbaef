//! Binary token file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "LMVCTOKS" | u16 version (1)
//! u32 V_s | u32 V_a | u16 L | u16 semantic frame (0.01 ms) | u16 acoustic frame (0.01 ms)
//! u32 speaker_id | u32 T_s | u32 T_a
//! T_s × u16 semantic ids
//! L·T_a × u16 acoustic ids, layer-major
//! ```

use std::fs;
use std::path::Path;

use super::{AcousticGrid, SemanticSeq, TokenId, UtterancePair, VocabConfig};
use crate::error::{Error, Result};

pub const TOKEN_FILE_MAGIC: &[u8; 8] = b"LMVCTOKS";
pub const TOKEN_FILE_VERSION: u16 = 1;

pub fn encode_tokens(vocab: &VocabConfig, pair: &UtterancePair) -> Result<Vec<u8>> {
    vocab.validate()?;
    pair.validate(vocab)?;
    let t_s = pair.semantic.len();
    let t_a = pair.acoustic.len();
    let mut out = Vec::with_capacity(36 + 2 * (t_s + t_a * pair.acoustic.num_layers()));
    out.extend_from_slice(TOKEN_FILE_MAGIC);
    out.extend_from_slice(&TOKEN_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&vocab.semantic_vocab.to_le_bytes());
    out.extend_from_slice(&vocab.acoustic_vocab.to_le_bytes());
    out.extend_from_slice(&vocab.num_layers.to_le_bytes());
    out.extend_from_slice(&(vocab.semantic_frame_cms() as u16).to_le_bytes());
    out.extend_from_slice(&(vocab.acoustic_frame_cms() as u16).to_le_bytes());
    out.extend_from_slice(&pair.speaker_id.to_le_bytes());
    out.extend_from_slice(&(t_s as u32).to_le_bytes());
    out.extend_from_slice(&(t_a as u32).to_le_bytes());
    for &id in pair.semantic.tokens() {
        out.extend_from_slice(&(id as u16).to_le_bytes());
    }
    for row in pair.acoustic.layers() {
        for &id in row {
            out.extend_from_slice(&(id as u16).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated payload reading {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tokens(bytes: &[u8]) -> Result<(VocabConfig, UtterancePair)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != TOKEN_FILE_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, not a token file".into() });
    }
    let version = r.u16("version")?;
    if version != TOKEN_FILE_VERSION {
        return Err(Error::Format { offset: 8, msg: format!("unsupported version {version}") });
    }
    let semantic_vocab = r.u32("V_s")?;
    let acoustic_vocab = r.u32("V_a")?;
    let num_layers = r.u16("L")?;
    let sem_cms = r.u16("semantic frame")?;
    let ac_cms = r.u16("acoustic frame")?;
    let vocab = VocabConfig {
        semantic_vocab,
        acoustic_vocab,
        num_layers,
        semantic_frame_ms: sem_cms as f64 / 100.0,
        acoustic_frame_ms: ac_cms as f64 / 100.0,
    };
    vocab
        .validate()
        .map_err(|e| Error::Format { offset: 10, msg: format!("invalid header: {e}") })?;
    let speaker_id = r.u32("speaker id")?;
    let t_s = r.u32("T_s")? as usize;
    let t_a = r.u32("T_a")? as usize;

    let mut semantic = Vec::with_capacity(t_s.min(bytes.len()));
    for _ in 0..t_s {
        let at = r.pos;
        let id = r.u16("semantic ids")? as TokenId;
        if !vocab.check_semantic(id) {
            return Err(Error::Format { offset: at as u64, msg: format!("semantic id {id} out of range") });
        }
        semantic.push(id);
    }
    let mut layers = Vec::with_capacity(num_layers as usize);
    for l in 0..num_layers {
        let mut row = Vec::with_capacity(t_a.min(bytes.len()));
        for _ in 0..t_a {
            let at = r.pos;
            let id = r.u16(&format!("acoustic layer {}", l + 1))? as TokenId;
            if !vocab.check_acoustic(id) {
                return Err(Error::Format {
                    offset: at as u64,
                    msg: format!("acoustic id {id} out of range"),
                });
            }
            row.push(id);
        }
        layers.push(row);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let pair = UtterancePair {
        speaker_id,
        semantic: SemanticSeq::new(semantic),
        acoustic: AcousticGrid::new(layers).map_err(|e| r.err(e.to_string()))?,
    };
    Ok((vocab, pair))
}

pub fn write_tokens(path: &Path, vocab: &VocabConfig, pair: &UtterancePair) -> Result<()> {
    fs::write(path, encode_tokens(vocab, pair)?)?;
    Ok(())
}

pub fn read_tokens(path: &Path) -> Result<(VocabConfig, UtterancePair)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_tokens(&fs::read(path)?)
}
