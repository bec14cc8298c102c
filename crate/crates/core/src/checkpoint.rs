//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DGNC1"
//! u32 config length, then that many bytes of UTF-8 key=value lines
//!     (the architecture plus `regions=V`)
//! u32 tensor count, then per tensor:
//!     u32 name length, name bytes (UTF-8)
//!     u32 rank, rank × u64 dimensions
//!     product(dimensions) × f64 values
//! ```

use std::fs;
use std::path::Path;

use crate::config::parse_pairs;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"DGNC1";

fn ckpt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

pub fn encode(config: &ModelConfig, regions: usize, store: &ParamStore) -> Vec<u8> {
    let mut text = String::new();
    for (k, v) in config.to_pairs() {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&format!("regions={regions}\n"));

    let mut out = Vec::with_capacity(64 + store.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return ckpt_err("truncated checkpoint");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).or_else(|_| ckpt_err("invalid UTF-8"))
    }
}

/// Decodes a checkpoint into its architecture, region count and tensors.
pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, usize, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return ckpt_err("bad magic, not a DGNC1 checkpoint");
    }
    let n = r.u32()?;
    let text = r.string(n)?;
    let mut pairs = parse_pairs(&text)?;
    let Some(pos) = pairs.iter().position(|(k, _)| k == "regions") else {
        return ckpt_err("missing regions entry");
    };
    let regions: usize = pairs
        .remove(pos)
        .1
        .parse()
        .or_else(|_| ckpt_err("invalid regions entry"))?;
    let config = ModelConfig::from_pairs(&pairs)?;

    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = r.string(n)?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if numel > (bytes.len() - r.pos) / 8 {
            return ckpt_err(format!("truncated values for {name}"));
        }
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return ckpt_err("trailing bytes after last tensor");
    }
    Ok((config, regions, store))
}

pub fn save(path: &Path, model: &Model, store: &ParamStore) -> Result<()> {
    fs::write(path, encode(&model.config, model.regions, store))?;
    Ok(())
}

/// Loads a checkpoint and rebuilds the model, rejecting tensors whose names
/// or shapes differ from what the stored architecture expects.
pub fn load(path: &Path) -> Result<(Model, ParamStore)> {
    let bytes = fs::read(path)?;
    let (config, regions, store) = decode(&bytes)?;
    load_into(&config, regions, store)
}

/// Builds the model for `config` and checks `store` against it.
pub fn load_into(
    config: &ModelConfig,
    regions: usize,
    store: ParamStore,
) -> Result<(Model, ParamStore)> {
    let mut expected = ParamStore::new();
    let model = Model::new(config, regions, &mut expected, 0)?;
    expected.check_compatible(&store)?;
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        let mut c = ModelConfig::default();
        c.window_size = 4;
        c.attn_heads = 2;
        c.d_gcn = 4;
        c.encoder.d_model = 4;
        c.encoder.num_heads = 2;
        c.encoder.num_layers = 1;
        c.encoder.d_ff = 8;
        c
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut store = ParamStore::new();
        let model = Model::new(&small(), 5, &mut store, 9).unwrap();
        let bytes = encode(&model.config, 5, &store);
        assert_eq!(&bytes[..5], b"DGNC1");
        let (cfg, regions, back) = decode(&bytes).unwrap();
        assert_eq!(cfg, model.config);
        assert_eq!(regions, 5);
        assert_eq!(back, store);
        assert!(load_into(&cfg, regions, back).is_ok());
    }

    #[test]
    fn rejects_corruption_and_shape_mismatch() {
        let mut store = ParamStore::new();
        let model = Model::new(&small(), 5, &mut store, 9).unwrap();
        let bytes = encode(&model.config, 5, &store);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let (cfg, _, back) = decode(&bytes).unwrap();
        let err = load_into(&cfg, 6, back).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }
}
