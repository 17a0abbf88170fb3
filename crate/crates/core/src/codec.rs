//! Little-endian primitives shared by the checkpoint, attribution-map and
//! teacher-output containers.

use std::io::{self, Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_len(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("length {v} exceeds u32")))?;
    Ok(write_u32(w, v)?)
}

/// Writes `name length, name bytes, rank, dims, payload`.
pub fn write_tensor_record(w: &mut impl Write, name: &str, t: &Tensor<f32>) -> Result<()> {
    write_len(w, name.len())?;
    w.write_all(name.as_bytes())?;
    write_len(w, t.rank())?;
    for &d in t.shape() {
        write_len(w, d)?;
    }
    w.write_all(&t.to_le_bytes())?;
    Ok(())
}

/// Byte reader that remembers its position for error reports.
pub struct ByteReader<R> {
    inner: R,
    offset: u64,
    kind: &'static str,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R, kind: &'static str) -> Self {
        Self {
            inner,
            offset: 0,
            kind,
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            offset: self.offset,
            reason: reason.into(),
        }
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(self.error(format!(
                "unexpected end of file reading {} bytes",
                buf.len()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let mut buf = vec![0; magic.len()];
        self.read_exact(&mut buf)?;
        if buf != magic {
            self.offset -= magic.len() as u64;
            return Err(self.error(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_len(&mut self, limit: usize, what: &str) -> Result<usize> {
        let v = self.read_u32()? as usize;
        if v > limit {
            return Err(self.error(format!("{what} {v} exceeds limit {limit}")));
        }
        Ok(v)
    }

    pub fn read_f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0; n * 4];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn read_string(&mut self, limit: usize) -> Result<String> {
        let n = self.read_len(limit, "string length")?;
        let mut bytes = vec![0; n];
        self.read_exact(&mut bytes)?;
        String::from_utf8(bytes).map_err(|_| self.error("string is not valid UTF-8"))
    }

    pub fn read_tensor_record(&mut self) -> Result<(String, Tensor<f32>)> {
        const MAX_NAME: usize = 1 << 12;
        const MAX_RANK: usize = 8;
        const MAX_ELEMS: usize = 1 << 30;
        let name = self.read_string(MAX_NAME)?;
        let rank = self.read_len(MAX_RANK, "rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.read_len(MAX_ELEMS, "dimension")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= MAX_ELEMS)
            .ok_or_else(|| self.error(format!("tensor {name} is too large: {shape:?}")))?;
        let data = self.read_f32s(count)?;
        Ok((name, Tensor::new(shape, data)?))
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(self.error("trailing bytes after last record")),
        }
    }
}
