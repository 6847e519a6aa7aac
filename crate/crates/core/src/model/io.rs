//! Binary snapshot container.
//!
//! Layout (little-endian): magic `ULAB`, `u32` version, `u64` config length,
//! config JSON, `u64` tensor count, then per tensor: `u64` name length, name,
//! `u64` rank, `u64` dims, `f64` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ULAB";
const VERSION: u32 = 1;
/// Upper bound on any length field; guards against corrupt files.
const MAX_LEN: u64 = 1 << 32;

pub fn save_parameters(params: &Parameters, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    write_to(params, &mut w).map_err(|e| Error::io(&tmp, e))?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_to(params: &Parameters, w: &mut impl Write) -> std::io::Result<()> {
    let config = serde_json::to_vec(params.config()).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&(params.tensors().len() as u64).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_parameters(path: &Path) -> Result<Parameters> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_from(&mut r, path)
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Contract(format!("corrupt snapshot: {}", detail.into()))
}

fn read_from(r: &mut impl Read, path: &Path) -> Result<Parameters> {
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let read_u64 = |r: &mut dyn Read| -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
        let v = u64::from_le_bytes(b);
        if v > MAX_LEN {
            return Err(corrupt(format!("length {v} too large")));
        }
        Ok(v)
    };
    let read_bytes = |r: &mut dyn Read, n: u64| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n as usize];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(buf)
    };

    let n = read_u64(r)?;
    let config: ModelConfig = serde_json::from_slice(&read_bytes(r, n)?)?;
    let count = read_u64(r)?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let n = read_u64(r)?;
        let name = String::from_utf8(read_bytes(r, n)?).map_err(|_| corrupt("non-utf8 tensor name"))?;
        let rank = read_u64(r)?;
        let mut shape = Vec::new();
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = read_bytes(r, numel as u64 * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    Parameters::from_tensors(config, names, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ModelConfig { n_layers: 2, d_model: 4, d_ff: 6, n_heads: 2, vocab_size: 9, max_seq_len: 8, rmu_layer: 1, ..Default::default() };
        let p = Parameters::init(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.bin");
        save_parameters(&p, &path).unwrap();
        let q = load_parameters(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_parameters(&path).is_err());
    }
}
