//! Weight checkpoint file.
//!
//! ```text
//! "HMCK" | version u16 | config_len u32 | config JSON
//! | count u32 | count × (name_len u16, name, rank u8, rank × dim u32, offset u64)
//! | value_count u64 | value_count × f32 | crc32 of everything before it
//! ```
//!
//! All integers little-endian; `offset` counts f32 values from the start of
//! the value block.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HMCK";
const VERSION: u16 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Network description as JSON; interpreted by the caller.
    pub config: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.values.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for t in &self.tensors {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 4 + 4 + 8 + 4 {
            return Err(Error::Truncated("checkpoint"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic("checkpoint"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum {
                what: "checkpoint",
                stored,
                computed,
            });
        }
        let mut r = Cursor { bytes: body, pos: 4 };
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::InvalidArgument(format!("checkpoint version {version}")));
        }
        let config_len = r.u32()? as usize;
        let config = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| Error::InvalidArgument("checkpoint config is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut table = Vec::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::InvalidArgument("checkpoint tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            if rank > MAX_RANK {
                return Err(Error::InvalidArgument(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let offset = r.u64()?;
            table.push((name, shape, offset));
        }
        let value_count = r.u64()?;
        let rest = body.len() - r.pos;
        if value_count.checked_mul(4) != Some(rest as u64) {
            return Err(Error::Truncated("checkpoint values"));
        }
        let values = r.take(rest)?;
        let mut tensors = Vec::with_capacity(count);
        let mut expected = 0u64;
        for (name, shape, offset) in table {
            let n = shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .filter(|&n| offset == expected && offset + n <= value_count)
                .ok_or_else(|| Error::InvalidArgument(format!("tensor {name} has a bad table entry")))?;
            let start = offset as usize * 4;
            let data = values[start..start + n as usize * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected += n;
            tensors.push(NamedTensor {
                name,
                shape,
                values: data,
            });
        }
        if expected != value_count {
            return Err(Error::InvalidArgument("checkpoint has unreferenced values".into()));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// The file's trailing CRC32 (over everything before it); identifies
    /// the model in containers. Hashing the whole file instead would give the
    /// same constant for every checkpoint.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated("checkpoint"))?;
        let s = &self.bytes[self.pos..end];
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
