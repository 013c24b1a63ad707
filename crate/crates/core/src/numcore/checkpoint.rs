//! Binary parameter container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic   8 bytes  "SATCKPT1"
//! count   u32      number of parameters
//! repeat count times:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, rank extents (u32 each)
//!   product(extents) scalars as little-endian f32
//! ```

use std::fs;
use std::path::Path;

use super::{DiffTensor, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SATCKPT1";

/// One named parameter as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode_checkpoint<T: Scalar>(params: &[(String, DiffTensor<T>)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data().iter() {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    buf
}

pub fn write_checkpoint<T: Scalar>(path: &Path, params: &[(String, DiffTensor<T>)]) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                path: self.path.to_string(),
                line: 0,
                msg: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint(buf: &[u8], path: &str) -> Result<Vec<StoredParam>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: "bad checkpoint magic".into(),
        });
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: "parameter name is not UTF-8".into(),
        })?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 4)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(StoredParam {
            name,
            shape,
            values,
        });
    }
    Ok(out)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<StoredParam>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let t = DiffTensor::<f64>::new(&[2], vec![1.0, -2.0]).unwrap();
        let buf = encode_checkpoint(&[("w".to_string(), t)]);
        let mut expect = b"SATCKPT1".to_vec();
        expect.extend([1, 0, 0, 0]);
        expect.extend([1, 0, 0, 0, b'w']);
        expect.extend([1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend(1f32.to_le_bytes());
        expect.extend((-2f32).to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn round_trip() {
        let a = DiffTensor::<f32>::new(&[2, 3], (0..6).map(|i| i as f32 * 0.5).collect()).unwrap();
        let b = DiffTensor::<f32>::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let buf = encode_checkpoint(&[("enc.a".into(), a.clone()), ("b".into(), b)]);
        let back = decode_checkpoint(&buf, "mem").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].name, "enc.a");
        assert_eq!(back[0].shape, vec![2, 3]);
        assert_eq!(back[0].values, a.to_vec());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let t = DiffTensor::<f64>::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let buf = encode_checkpoint(&[("x".to_string(), t)]);
        assert!(decode_checkpoint(&buf[..buf.len() - 2], "m").is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, "m").is_err());
    }
}
