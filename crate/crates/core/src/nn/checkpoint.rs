//! Binary checkpoint format.
//!
//! ```text
//! magic   b"ANT1"
//! u32     block count
//! per block:
//!   u32   name length, then UTF-8 name bytes
//!   u32   rank, then rank x u64 dims
//!   f64   values, row-major
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"ANT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub tensor: Tensor,
}

impl Block {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

pub fn encode(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        let (r, c) = b.tensor.shape();
        out.extend_from_slice(&(r as u64).to_le_bytes());
        out.extend_from_slice(&(c as u64).to_le_bytes());
        for v in b.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Block>> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, expected ANT1".into()));
    }
    let count = cur.u32()? as usize;
    let mut blocks = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("block name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.u32()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::Checkpoint(format!(
                    "block {name} has unsupported rank {rank}"
                )))
            }
        };
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("block {name} is too large")))?;
        let raw = cur.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push(Block::new(name, Tensor::from_vec(rows, cols, data)?));
    }
    if cur.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last block",
            buf.len() - cur.pos
        )));
    }
    Ok(blocks)
}

pub fn save(path: &Path, blocks: &[Block]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(blocks)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Block>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

/// Finds a block by name.
pub fn take_block<'a>(blocks: &'a [Block], name: &str) -> Result<&'a Tensor> {
    blocks
        .iter()
        .find(|b| b.name == name)
        .map(|b| &b.tensor)
        .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
}

/// One block per parameter, named `{prefix}{parameter name}`.
pub fn store_blocks(prefix: &str, store: &ParamStore) -> Vec<Block> {
    store
        .iter()
        .map(|(_, p)| Block::new(format!("{prefix}{}", p.name), p.value.clone()))
        .collect()
}

/// Overwrites every parameter of `store` from its block; shapes must match.
pub fn restore_store(prefix: &str, blocks: &[Block], store: &mut ParamStore) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = format!("{prefix}{}", store.get(id).name);
        let t = take_block(blocks, &name)?;
        store
            .set_value(id, t.clone())
            .map_err(|e| Error::Checkpoint(format!("block {name}: {e}")))?;
    }
    Ok(())
}
