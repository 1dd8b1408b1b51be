//! Binary checkpoint container.
//!
//! ```text
//! magic    4 bytes  "CF3D"
//! version  u32 LE
//! count    u32 LE
//! count x {
//!     name_len u32 LE, name UTF-8 bytes,
//!     trainable u8,
//!     rank u32 LE, rank x dim u64 LE,
//!     values f64 LE (product of dims)
//! }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CF3D";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
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
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(TensorError::Format("bad magic, not a CF3D checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TensorError::Format(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| TensorError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let trainable = r.take(1)?[0] != 0;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data)?;
        if trainable {
            store.add(name, t);
        } else {
            store.add_buffer(name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(TensorError::Format("trailing bytes after last tensor".into()));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_exact() {
        let mut s = ParamStore::new();
        s.add("conv.kernel", Tensor::new(&[1, 2, 3], vec![0.1, -2.5, 3e-300, 4.0, f64::MAX, -0.0]).unwrap());
        s.add_buffer("bn.running_mean", Tensor::from_vec(vec![1.0, 2.0]));
        let bytes = encode(&s);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        assert!(!back.get(back.find("bn.running_mean").unwrap()).trainable);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let s = ParamStore::new();
        let mut bytes = encode(&s);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(TensorError::Format(_))));
        let mut bytes = encode(&s);
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(TensorError::Format(_))));
        assert!(decode(&encode(&s)[..6]).is_err());
    }
}
