//! Binary model checkpoints.
//!
//! Layout (all integers `u32` little-endian): magic `GRNDRANK`, format
//! version, token count, then per token its byte length and UTF-8 bytes;
//! tensor count, then per tensor its name length, name, rank, extents and
//! `f32` little-endian data.

use std::path::Path;

use super::model::{Model, ModelParams, PARAM_NAMES};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::grad::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRNDRANK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut buf, model.vocab.len());
    for t in model.vocab.tokens() {
        put_str(&mut buf, t);
    }
    let tensors = model.params.tensors();
    put_u32(&mut buf, tensors.len());
    for (name, t) in PARAM_NAMES.iter().zip(tensors) {
        put_str(&mut buf, name);
        put_u32(&mut buf, t.shape().len());
        for &e in t.shape() {
            put_u32(&mut buf, e);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::malformed(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let path = self.path;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::malformed(path, "string is not UTF-8"))
    }
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<Model> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "GRNDRANK".into(),
        });
    }
    let mut r = Reader { bytes, pos: 8, path };
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: path.into(),
            version,
        });
    }
    let n_tokens = r.u32()?;
    let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
    for _ in 0..n_tokens {
        tokens.push(r.string()?);
    }
    let vocab = Vocabulary::from_tokens(tokens)?;
    let n_tensors = r.u32()?;
    let mut slots: [Option<Tensor<f32>>; 6] = Default::default();
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::malformed(path, "tensor too large"))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::malformed(path, "tensor too large"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let slot = PARAM_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::malformed(path, format!("unknown tensor {name}")))?;
        slots[slot] = Some(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::malformed(path, "trailing bytes"));
    }
    let mut tensors = Vec::with_capacity(6);
    for (slot, name) in slots.into_iter().zip(PARAM_NAMES) {
        tensors.push(slot.ok_or_else(|| Error::malformed(path, format!("missing tensor {name}")))?);
    }
    let tensors: [Tensor<f32>; 6] = tensors.try_into().expect("six tensors");
    let params = ModelParams::from_tensors(tensors)?;
    if params.vocab_size() != vocab.len() {
        return Err(Error::Dimension {
            expected: vocab.len(),
            found: params.vocab_size(),
            context: "embedding rows vs vocabulary".into(),
        });
    }
    Ok(Model { vocab, params })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}
