//! Versioned binary checkpoint of a [`ParamSet`] plus optional [`AdamState`].
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      4 bytes  "C2VK"
//! version    u16      = 1
//! flags      u8       bit 0: optimizer state present
//! reserved   u8       = 0
//! n_params   u32
//! adam_t     u64      (0 when no optimizer state)
//! n_params times, in sorted-name order:
//!   name_len u16, name (UTF-8, name_len bytes)
//!   ndim u8, dims u32 × ndim
//!   values f64 × numel
//!   if optimizer state present:
//!     has_moments u8; when 1: m f64 × numel, then v f64 × numel
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a write/read round trip is bit-exact.

use std::path::Path;

use crate::adam::AdamState;
use crate::error::{NnError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"C2VK";
pub const VERSION: u16 = 1;

pub fn encode(params: &ParamSet, adam: Option<&AdamState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(u8::from(adam.is_some()));
    out.push(0);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    out.extend_from_slice(&adam.map_or(0, |a| a.t).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f64s(&mut out, t.data());
        if let Some(a) = adam {
            match a.moments(name) {
                Some((m, v)) => {
                    out.push(1);
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
                None => out.push(0),
            }
        }
    }
    out
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Checkpoint(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| NnError::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamSet, Option<AdamState>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let has_adam = r.u8()? & 1 == 1;
    r.u8()?;
    let n = r.u32()?;
    let t = r.u64()?;
    let mut params = ParamSet::new();
    let mut adam = has_adam.then(|| AdamState {
        t,
        ..Default::default()
    });
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| NnError::Checkpoint("shape overflow".into()))?;
        let data = r.f64s(numel)?;
        if let Some(a) = adam.as_mut() {
            if r.u8()? == 1 {
                let m = r.f64s(numel)?;
                let v = r.f64s(numel)?;
                a.insert_moments(name.clone(), m, v);
            }
        }
        params
            .insert(name, Tensor::from_vec(&dims, data)?)
            .map_err(|e| NnError::Checkpoint(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok((params, adam))
}

pub fn save(path: &Path, params: &ParamSet, adam: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, encode(params, adam))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamSet, Option<AdamState>)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::{adam_step, AdamConfig};
    use rand::SeedableRng;

    fn sample() -> (ParamSet, AdamState) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        p.init_conv("enc", 4, 2, 3, &mut rng).unwrap();
        p.init_conv("head", 1, 4, 1, &mut rng).unwrap();
        let mut g = p.clone();
        g.scale(0.3);
        let mut s = AdamState::new();
        adam_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        (p, s)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (p, s) = sample();
        let bytes = encode(&p, Some(&s));
        let (p2, s2) = decode(&bytes).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.as_ref(), Some(&s));
        assert_eq!(encode(&p2, s2.as_ref()), bytes);
    }

    #[test]
    fn params_only() {
        let (p, _) = sample();
        let (p2, s2) = decode(&encode(&p, None)).unwrap();
        assert_eq!(p2, p);
        assert!(s2.is_none());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let (p, s) = sample();
        let mut bytes = encode(&p, Some(&s));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }
}
