//! Binary checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MGIC" | version | json_len | arch JSON
//! n_params  | n × (name_len | name | rank | extents… | f32 values…)
//! n_buffers | same record layout
//! CRC-32 of everything above
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{build_network, ArchSpec, Network};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MGIC";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit the checkpoint's u32 fields")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank())?;
    for &e in t.shape() {
        put_u32(out, e)?;
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes(net: &Network, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(&net.arch).map_err(|e| Error::Contract(e.to_string()))?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, store.len())?;
    for p in store.params() {
        put_record(&mut out, &p.name, &p.value)?;
    }
    put_u32(&mut out, store.buffers().len())?;
    for b in store.buffers() {
        put_record(&mut out, &b.name, &b.value)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
                Error::Corrupt(format!("record at byte {} runs past the end of the payload", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let at = self.pos;
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Corrupt(format!("record name at byte {at} is not UTF-8")))?;
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel.ok_or_else(|| Error::Corrupt(format!("record `{name}` has overflowing extents")))?;
        let raw =
            self.take(numel.checked_mul(4).ok_or_else(|| Error::Corrupt(format!("record `{name}` too large")))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let t = Tensor::from_vec(shape, data).map_err(|e| Error::Corrupt(format!("record `{name}`: {e}")))?;
        Ok((name, t))
    }
}

/// Decodes a checkpoint and rebuilds its network. Nothing is returned unless
/// the checksum, version and every record agree with the architecture.
pub fn from_bytes(bytes: &[u8]) -> Result<(Network, ParamStore<f32>)> {
    if bytes.len() < 12 {
        return Err(Error::Corrupt(format!("{} bytes is too short for a checkpoint", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, detail: "missing MGIC magic".into() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corrupt(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let json_len = r.u32()?;
    let arch: ArchSpec =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| Error::Corrupt(format!("embedded architecture: {e}")))?;
    let mut store = ParamStore::<f32>::new();
    let net = build_network(&arch, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;

    let n = r.u32()?;
    if n != store.len() {
        return Err(Error::Corrupt(format!("{n} parameter records for an architecture with {}", store.len())));
    }
    for id in store.ids().collect::<Vec<_>>() {
        let (name, t) = r.record()?;
        if name != store.param(id).name {
            return Err(Error::Corrupt(format!("expected parameter `{}`, found `{name}`", store.param(id).name)));
        }
        store.set_value(id, t).map_err(|e| Error::Corrupt(e.to_string()))?;
    }
    let nb = r.u32()?;
    if nb != store.buffers().len() {
        return Err(Error::Corrupt(format!("{nb} buffer records for an architecture with {}", store.buffers().len())));
    }
    for i in 0..nb {
        let (name, t) = r.record()?;
        let id = store.find_buffer(&name).ok_or_else(|| Error::Corrupt(format!("unknown buffer `{name}`")))?;
        if id.index() != i {
            return Err(Error::Corrupt(format!("buffer `{name}` out of order")));
        }
        store.set_buffer(id, t).map_err(|e| Error::Corrupt(e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt(format!("{} unread bytes before the checksum", body.len() - r.pos)));
    }
    Ok((net, store))
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network, store: &ParamStore<f32>) -> Result<()> {
    std::fs::write(path, to_bytes(net, store)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, ParamStore<f32>)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgic::BlockTemplate;
    use crate::models::BlockChoice;

    fn sample() -> (Network, ParamStore<f32>) {
        let arch = ArchSpec::Block {
            channels: 8,
            hw: [2, 2],
            block: BlockChoice::Mgic {
                s_g: 2,
                s_c: 2,
                template: BlockTemplate::SimpleConv { d: 3 },
                clamp: Default::default(),
            },
        };
        let mut store = ParamStore::new();
        let net = build_network(&arch, &mut store, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (net, store)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (net, store) = sample();
        let bytes = to_bytes(&net, &store).unwrap();
        let (net2, store2) = from_bytes(&bytes).unwrap();
        assert_eq!(net2.arch, net.arch);
        for (a, b) in store.params().iter().zip(store2.params()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.bit_eq(&b.value));
        }
        for (a, b) in store.buffers().iter().zip(store2.buffers()) {
            assert!(a.value.bit_eq(&b.value));
        }
        assert_eq!(to_bytes(&net2, &store2).unwrap(), bytes);
    }

    #[test]
    fn damage_is_detected() {
        let (net, store) = sample();
        let bytes = to_bytes(&net, &store).unwrap();
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 0x10;
        assert!(matches!(from_bytes(&flipped), Err(Error::Corrupt(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 7]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn unknown_version_is_reported() {
        let (net, store) = sample();
        let mut bytes = to_bytes(&net, &store).unwrap();
        bytes[4] = 9;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(Error::Version { found: 9, expected: 1 })));
    }
}
