//! Binary weight container.
//!
//! Layout, little-endian: `OBNW`, u16 version, u64 architecture hash,
//! u32 tensor count, then per tensor a u16-prefixed name, u8 dtype,
//! u8 rank, u32 dims and raw values, and finally a CRC32 of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use super::arch::{Network, PolicyArchitecture};
use super::real::Real;
use super::tape::ParamStore;
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"OBNW";
pub const FORMAT_VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 8 + 4;

pub fn encode<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&net.arch.hash().to_le_bytes());
    out.extend_from_slice(&(net.params.len() as u32).to_le_bytes());
    for p in &net.params.params {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(T::DTYPE);
        out.push(p.value.shape.len() as u8);
        for &d in &p.value.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.value.data {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).ok_or(NnError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(NnError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a container written for `arch`.
pub fn decode<T: Real>(bytes: &[u8], arch: &PolicyArchitecture) -> Result<Network<T>, NnError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(if bytes.len() < 4 { NnError::Truncated } else { NnError::BadMagic });
    }
    if bytes.len() < HEADER + 4 {
        return Err(NnError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(NnError::Checksum);
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(NnError::Version(version));
    }
    let found = r.u64()?;
    let expected = arch.hash();
    if found != expected {
        return Err(NnError::ArchMismatch { expected, found });
    }
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| NnError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != T::DTYPE {
            return Err(NnError::Malformed(format!("{name} has dtype {dtype}, expected {}", T::DTYPE)));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(NnError::Truncated)?;
        let raw = r.take(n.checked_mul(T::BYTES).ok_or(NnError::Truncated)?)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let trainable = !(name.ends_with(".mean") || name.ends_with(".var"));
        params.push(name, Tensor { shape, data }, trainable);
    }
    if r.pos != body.len() {
        return Err(NnError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Network::from_params(arch.clone(), params)
}

pub fn save<T: Real>(net: &Network<T>, path: &Path) -> Result<(), NnError> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path, arch: &PolicyArchitecture) -> Result<Network<T>, NnError> {
    decode(&fs::read(path)?, arch)
}
