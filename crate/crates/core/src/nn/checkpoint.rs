//! Binary network container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes   "QNETCKPT"
//! version    u32       1
//! spec       u32 length + UTF-8 JSON of the NetworkSpec
//! groups     u32 count, then per group:
//!   name       u32 length + UTF-8
//!   weights    u32 rank, rank × u32 dims, f64 × len
//!   bias       u32 rank, rank × u32 dims, f64 × len
//!   flags      u8: bit 0 quantizer block present, bit 1 shadow weights present
//!   quantizer  (bit 0) M as u32, Δ as f64, one i8 code per weight
//!   shadow     (bit 1) f64 × len, same shape as weights
//! ```
//!
//! When a quantizer block is present every stored weight must equal `code·Δ`;
//! loading rejects files where they disagree.

use std::fs;
use std::path::Path;

use super::{Network, NetworkSpec, WeightGroup};
use crate::error::{Error, Result};
use crate::quantizer::{code, QuantizerSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"QNETCKPT";
pub const VERSION: u32 = 1;

const HAS_QUANTIZER: u8 = 1;
const HAS_SHADOW: u8 = 2;

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let spec = serde_json::to_string(net.spec()).expect("spec serializes");
    put_str(&mut buf, &spec);
    put_u32(&mut buf, net.groups().len() as u32);
    for g in net.groups() {
        put_str(&mut buf, &g.name);
        put_tensor(&mut buf, &g.weights);
        put_tensor(&mut buf, &g.bias);
        let mut flags = 0;
        if g.quantizer.is_some() {
            flags |= HAS_QUANTIZER;
        }
        if g.shadow_weights.is_some() {
            flags |= HAS_SHADOW;
        }
        buf.push(flags);
        if let Some(q) = &g.quantizer {
            put_u32(&mut buf, q.levels());
            buf.extend_from_slice(&q.delta().to_le_bytes());
            buf.extend(g.weights.data().iter().map(|&w| code(w, q) as i8 as u8));
        }
        if let Some(s) = &g.shadow_weights {
            put_f64s(&mut buf, s.data());
        }
    }
    buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let spec: NetworkSpec =
        serde_json::from_str(&r.string()?).map_err(|e| Error::Format(format!("checkpoint network spec: {e}")))?;
    let count = r.u32()? as usize;
    let mut groups = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string()?;
        let weights = r.tensor()?;
        let bias = r.tensor()?;
        let flags = r.take(1)?[0];
        if flags & !(HAS_QUANTIZER | HAS_SHADOW) != 0 {
            return Err(Error::Format(format!("group {name:?}: unknown flags {flags:#x}")));
        }
        let quantizer = if flags & HAS_QUANTIZER != 0 {
            let levels = r.u32()?;
            let delta = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let q = QuantizerSpec::new(levels, delta).map_err(|e| Error::Format(format!("group {name:?}: {e}")))?;
            let codes = r.take(weights.len())?;
            for (&c, &w) in codes.iter().zip(weights.data()) {
                let c = c as i8 as i32;
                if c.abs() > q.max_code() || q.value_of(c) != w {
                    return Err(Error::Format(format!(
                        "group {name:?}: stored weight {w} does not match code {c} at step {delta}"
                    )));
                }
            }
            Some(q)
        } else {
            None
        };
        let shadow_weights = if flags & HAS_SHADOW != 0 {
            let data = r.f64s(weights.len())?;
            Some(Tensor::new(weights.shape().to_vec(), data)?)
        } else {
            None
        };
        groups.push(WeightGroup {
            name,
            weights,
            bias,
            shadow_weights,
            quantizer,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last weight group",
            bytes.len() - r.pos
        )));
    }
    Network::from_parts(spec, groups)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    buf.reserve(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    put_u32(buf, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(buf, d as u32);
    }
    put_f64s(buf, t.data());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated checkpoint: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let data = self.f64s(n)?;
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}
