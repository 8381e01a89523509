//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "THRPARAM"
//! version  u32      = 1
//! V        u32      vocabulary size
//! eos      u32
//! d        u32      feature dimension
//! seed     u64
//! sigma_h  f64      feature init scale
//! W        V*d f64  row-major
//! n        u64      number of feature records
//! n times:
//!   question_id  u64
//!   prefix_len   u32
//!   prefix       prefix_len u32
//!   feature      d f64
//! ```
//!
//! Records are written in ascending `ContextKey` order and the decoder
//! rejects duplicates, out-of-vocabulary tokens and trailing bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{ContextKey, PolicyParams, TokenId, Vocab};

pub const MAGIC: &[u8; 8] = b"THRPARAM";
pub const VERSION: u32 = 1;

const MAX_VOCAB: usize = 1 << 20;
const MAX_DIM: usize = 1 << 16;

pub fn encode(params: &PolicyParams) -> Vec<u8> {
    let vocab = params.vocab();
    let mut out = Vec::with_capacity(48 + 8 * params.readout().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(vocab.size() as u32).to_le_bytes());
    out.extend_from_slice(&vocab.eos().to_le_bytes());
    out.extend_from_slice(&(params.dim() as u32).to_le_bytes());
    out.extend_from_slice(&params.seed().to_le_bytes());
    out.extend_from_slice(&params.init_scale().to_le_bytes());
    for w in params.readout() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(params.features().len() as u64).to_le_bytes());
    for (ctx, h) in params.features() {
        out.extend_from_slice(&ctx.question_id.to_le_bytes());
        out.extend_from_slice(&(ctx.prefix.len() as u32).to_le_bytes());
        for t in &ctx.prefix {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for x in h {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<PolicyParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let v = r.u32("vocabulary size")? as usize;
    let eos = r.u32("eos")?;
    let d = r.u32("dimension")? as usize;
    if v > MAX_VOCAB || d > MAX_DIM || d == 0 {
        return Err(Error::Checkpoint(format!("implausible shape {v} x {d}")));
    }
    let vocab = Vocab::new(v, eos).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let seed = r.u64("seed")?;
    let init_scale = r.f64("init scale")?;
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::Checkpoint(format!("bad init scale {init_scale}")));
    }
    let n_w = v * d;
    if r.remaining() / 8 < n_w {
        return Err(Error::Checkpoint("truncated readout".into()));
    }
    let readout = (0..n_w).map(|_| r.f64("readout")).collect::<Result<Vec<_>>>()?;
    let n = r.u64("record count")?;
    // Smallest possible record: id + prefix length + d floats.
    let min_record = 12 + 8 * d as u64;
    if n > r.remaining() as u64 / min_record {
        return Err(Error::Checkpoint(format!("record count {n} exceeds payload")));
    }
    let mut features = BTreeMap::new();
    for _ in 0..n {
        let question_id = r.u64("question id")?;
        let len = r.u32("prefix length")? as usize;
        if r.remaining() / 4 < len {
            return Err(Error::Checkpoint("truncated prefix".into()));
        }
        let prefix = (0..len)
            .map(|_| {
                let t = r.u32("prefix token")?;
                if t as usize >= v {
                    return Err(Error::Checkpoint(format!("token {t} outside vocabulary")));
                }
                Ok(t as TokenId)
            })
            .collect::<Result<Vec<_>>>()?;
        let h = (0..d).map(|_| r.f64("feature")).collect::<Result<Vec<_>>>()?;
        let key = ContextKey::new(question_id, prefix);
        if features.insert(key, h).is_some() {
            return Err(Error::Checkpoint("duplicate context record".into()));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    PolicyParams::from_parts(vocab, d, init_scale, seed, readout, features)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PolicyParams {
        let mut p = PolicyParams::new(Vocab::with_trailing_eos(5).unwrap(), 3, 0.5, 17).unwrap();
        p.materialize(&ContextKey::root(2));
        p.materialize(&ContextKey::new(2, vec![1, 4]));
        p.materialize(&ContextKey::new(0, vec![3]));
        p
    }

    #[test]
    fn roundtrip_is_exact() {
        let p = sample();
        let bytes = encode(&p);
        assert_eq!(decode(&bytes).unwrap(), p);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(decode(&version).is_err());
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn rejects_huge_record_count_without_allocating() {
        let mut bytes = encode(&PolicyParams::new(Vocab::with_trailing_eos(2).unwrap(), 1, 0.5, 1).unwrap());
        let n_pos = bytes.len() - 8;
        bytes[n_pos..].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn decode_never_panics(data in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode(&data);
        }

        #[test]
        fn decode_survives_bit_flips(idx in any::<prop::sample::Index>(), bit in 0u8..8) {
            let mut bytes = encode(&sample());
            let i = idx.index(bytes.len());
            bytes[i] ^= 1 << bit;
            let _ = decode(&bytes);
        }
    }
}
