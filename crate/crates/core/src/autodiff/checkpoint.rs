//! Named-tensor container file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   b"MSAGETNS"
//! version  1 byte    1
//! count    u32
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims u64 × ndim
//!   payload  f64 × product(dims), row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MSAGETNS";
pub const VERSION: u8 = 1;

pub fn write_params(w: &mut impl Write, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params(r: &mut impl Read) -> Result<ParamSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("missing header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)
        .map_err(|_| Error::Checkpoint("missing version byte".into()))?;
    if version[0] != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            version[0]
        )));
    }
    let count = read_u32(r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: shape overflow")))?;
        let mut data = Vec::with_capacity(numel.min(1 << 24));
        for _ in 0..numel {
            data.push(f64::from_bits(read_u64(r)?));
        }
        params.push(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(&mut f, params)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut p = ParamSet::new();
        p.push("enc.w", Tensor::matrix(2, 3, vec![0.1, -2.5, 1e-300, 3.0, f64::MIN_POSITIVE, 7.0]).unwrap());
        p.push("b", Tensor::vector(vec![1.0 / 3.0]));
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf[8], VERSION);
        let q = read_params(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(read_params(&mut &b"NOTMAGIC\x01"[..]).is_err());
        let mut p = ParamSet::new();
        p.push("w", Tensor::vector(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_params(&mut buf.as_slice()).is_err());
    }
}
