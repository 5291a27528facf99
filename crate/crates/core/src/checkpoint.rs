//! `FTLK` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FTLK" | version: u32 = 1 | entries: u32
//! per entry: name_len: u16 | name (UTF-8) | rank: u8 | dims: u32 × rank | values: f64 × prod(dims)
//! trailer_len: u32 | trailer JSON {"role": ..., "net": {...}}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{DenoiserNet, NetConfig, ParamStore, RoleTag, Trainable};

pub const MAGIC: &[u8; 4] = b"FTLK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Trailer {
    role: RoleTag,
    net: NetConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: RoleTag,
    pub net: NetConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_net(net: &DenoiserNet, role: RoleTag) -> Self {
        Self { role, net: net.config().clone(), params: net.params().clone() }
    }

    pub fn into_net(self) -> Result<DenoiserNet> {
        DenoiserNet::from_params(self.net, self.params).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.params.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for i in 0..self.params.len() {
            let name = self.params.name(i).as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint("parameter name too long".into()))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            let shape = self.params.shape(i);
            out.push(u8::try_from(shape.len()).map_err(|_| Error::Checkpoint("rank exceeds 255".into()))?);
            for &d in shape {
                let d = u32::try_from(d).map_err(|_| Error::Checkpoint("dimension exceeds u32".into()))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in self.params.value(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let trailer = serde_json::to_vec(&Trailer { role: self.role, net: self.net.clone() })?;
        out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
        out.extend_from_slice(&trailer);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_owned();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("entry too large".into()))?)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.push(name, shape, values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        let tlen = r.u32()? as usize;
        let trailer: Trailer = serde_json::from_slice(r.take(tlen)?)
            .map_err(|e| Error::Checkpoint(format!("trailer: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after trailer".into()));
        }
        Ok(Self { role: trailer.role, net: trailer.net, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
