//! `AISN` weight container.
//!
//! All integers little-endian; values in the scalar width recorded in the
//! header (4 for `f32`, 8 for `f64`).
//!
//! ```text
//! "AISN" | u16 version (=1) | u8 scalar bytes | u32 n | n bytes spec TOML
//! | u32 layer count | per layer: u32 name length, name, u32 weight count,
//!   u32 bias count, weights, biases
//! | u64 Adam step | per parameter buffer: first moments, second moments
//! | u32 CRC-32 of everything before it
//! ```

use std::fs;
use std::path::Path;

use super::{Network, NetworkSpec, NnError};
use crate::scalar::Real;

pub const NETWORK_MAGIC: &[u8; 4] = b"AISN";
pub const NETWORK_VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_values<T: Real>(out: &mut Vec<u8>, values: &[T]) {
    for v in values {
        v.to_le_vec(out);
    }
}

pub fn encode<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(NETWORK_MAGIC);
    out.extend_from_slice(&NETWORK_VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    let spec = toml::to_string(&net.spec).expect("spec serializes");
    put_u32(&mut out, spec.len());
    out.extend_from_slice(spec.as_bytes());
    put_u32(&mut out, net.layers.len());
    for l in &net.layers {
        put_u32(&mut out, l.name.len());
        out.extend_from_slice(l.name.as_bytes());
        put_u32(&mut out, l.weight.len());
        put_u32(&mut out, l.bias.len());
        put_values(&mut out, &l.weight);
        put_values(&mut out, &l.bias);
    }
    out.extend_from_slice(&net.adam.step.to_le_bytes());
    for (m, v) in net.adam.m.iter().zip(&net.adam.v) {
        put_values(&mut out, m);
        put_values(&mut out, v);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| NnError::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }

    fn values<T: Real>(&mut self, n: usize, width: usize) -> Result<Vec<T>, NnError> {
        let raw = self.take(n.checked_mul(width).ok_or_else(|| NnError::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::lit(f32::from_le_bytes(c.try_into().expect("four bytes")) as f64),
                _ => T::lit(f64::from_le_bytes(c.try_into().expect("eight bytes"))),
            })
            .collect())
    }
}

/// Decodes a container. Weights stored at another scalar width are
/// converted; `expected`, when given, must equal the stored spec.
pub fn decode<T: Real>(bytes: &[u8], expected: Option<&NetworkSpec>) -> Result<Network<T>, NnError> {
    if bytes.len() < 4 + 2 + 1 + 4 || &bytes[..4] != NETWORK_MAGIC {
        return Err(NnError::Format("not an AISN file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("four bytes")) {
        return Err(NnError::Format("checksum mismatch".into()));
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("two bytes"));
    if version != NETWORK_VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let width = c.take(1)?[0] as usize;
    if width != 4 && width != 8 {
        return Err(NnError::Format(format!("scalar width {width}")));
    }
    let n = c.u32()?;
    let text = std::str::from_utf8(c.take(n)?).map_err(|e| NnError::Format(e.to_string()))?;
    let spec: NetworkSpec = toml::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
    if let Some(exp) = expected {
        if *exp != spec {
            return Err(NnError::SpecMismatch { file: spec, expected: *exp });
        }
    }
    let mut net = Network::<T>::build(spec, 0)?;
    if c.u32()? != net.layers.len() {
        return Err(NnError::Format("layer count does not match the spec".into()));
    }
    for l in &mut net.layers {
        let name_len = c.u32()?;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|e| NnError::Format(e.to_string()))?;
        let (nw, nb) = (c.u32()?, c.u32()?);
        if name != l.name || nw != l.weight.len() || nb != l.bias.len() {
            return Err(NnError::Format(format!("layer {name} does not match the spec")));
        }
        l.weight = c.values(nw, width)?;
        l.bias = c.values(nb, width)?;
    }
    net.adam.step = u64::from_le_bytes(c.take(8)?.try_into().expect("eight bytes"));
    for (m, v) in net.adam.m.iter_mut().zip(net.adam.v.iter_mut()) {
        let len = m.len();
        *m = c.values(len, width)?;
        *v = c.values(len, width)?;
    }
    if c.pos != body.len() {
        return Err(NnError::Format("trailing bytes".into()));
    }
    Ok(net)
}

pub fn save_network<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<(), NnError> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load_network<T: Real>(path: impl AsRef<Path>, expected: Option<&NetworkSpec>) -> Result<Network<T>, NnError> {
    decode(&fs::read(path)?, expected)
}
