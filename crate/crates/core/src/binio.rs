//! Little-endian record encoding shared by the checkpoint and dataset files.

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
    pub fn values<T: Scalar>(&mut self, data: &[T]) {
        for &v in data {
            v.write_le(&mut self.buf);
        }
    }

    /// Named tensor: name, dtype tag, rank, extents, payload.
    pub fn tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.str(name);
        self.u8(T::DTYPE.tag());
        self.u32(t.rank() as u32);
        for &e in t.shape() {
            self.u64(e as u64);
        }
        self.values(t.data());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    pub fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            msg: format!("{what} is not UTF-8"),
        })
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            self.pos -= 4;
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    pub fn dtype(&mut self) -> Result<DType> {
        let tag = self.u8("dtype tag")?;
        DType::from_tag(tag).ok_or_else(|| {
            self.pos -= 1;
            self.err(format!("unknown dtype tag {tag}"))
        })
    }

    /// `count` values stored as `dtype`, converted to `T`.
    pub fn values<T: Scalar>(&mut self, dtype: DType, count: usize, what: &str) -> Result<Vec<T>> {
        let size = dtype.size();
        let bytes = count
            .checked_mul(size)
            .ok_or_else(|| self.err(format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        })
    }

    pub fn tensor<T: Scalar>(&mut self) -> Result<(String, DType, Tensor<T>)> {
        let name = self.str("tensor name")?;
        let dtype = self.dtype()?;
        let rank = self.u32("rank")? as usize;
        if rank > 8 {
            return Err(self.err(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64("extent")? as usize);
        }
        let at = self.pos;
        let count = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let count = count.ok_or_else(|| self.err("extent product overflows"))?;
        let data = self.values(dtype, count, &name)?;
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format {
            offset: at as u64,
            msg: e.to_string(),
        })?;
        Ok((name, dtype, t))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
