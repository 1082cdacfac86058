//! `STDS` dataset files.
//!
//! Header: magic `STDS`, `u32` version, `u64` N, T, C, H, W, `u8` dtype tag,
//! `u8` normalization flag (1 = values in `[0, 1]`). The payload follows as
//! N*T*C*H*W little-endian values, sample-major.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"STDS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 5 * 8 + 1 + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile<T> {
    pub normalized: bool,
    /// `[N, T, C, H, W]`.
    pub frames: Tensor<T>,
}

impl<T: Scalar> DatasetFile<T> {
    pub fn new(frames: Tensor<T>, normalized: bool) -> Result<Self> {
        if frames.rank() != 5 {
            return Err(Error::dim("dataset", "frames must be [N, T, C, H, W]"));
        }
        let f = Self { normalized, frames };
        f.check_range()?;
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_range(&self) -> Result<()> {
        if self.normalized {
            let bad = self
                .frames
                .data()
                .iter()
                .any(|&v| !(T::zero()..=T::one()).contains(&v));
            if bad {
                return Err(Error::Contract("normalized dataset holds values outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        for &e in self.frames.shape() {
            w.u64(e as u64);
        }
        w.u8(T::DTYPE.tag());
        w.u8(self.normalized as u8);
        w.values(self.frames.data());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported dataset version {version}"),
            });
        }
        let mut shape = [0usize; 5];
        for (axis, s) in ["N", "T", "C", "H", "W"].iter().zip(&mut shape) {
            let at = r.offset();
            *s = r.u64(axis)? as usize;
            if *s == 0 {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("extent {axis} is zero"),
                });
            }
        }
        let dtype = r.dtype()?;
        let at = r.offset();
        let normalized = match r.u8("normalization flag")? {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("normalization flag {v}"),
                })
            }
        };
        let count = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| r.err("payload size overflows"))?;
        let data = r.values(dtype, count, "payload")?;
        r.finish()?;
        let frames = Tensor::from_vec(&shape, data)?;
        Ok(Self { normalized, frames })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Samples `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            normalized: self.normalized,
            frames: crate::learning::gather(&self.frames, idx)?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> DatasetFile<U> {
        DatasetFile {
            normalized: self.normalized,
            frames: self.frames.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetFile<f32> {
        DatasetFile::new(Tensor::from_fn(&[2, 3, 1, 2, 2], |i| i as f32 / 24.0), true).unwrap()
    }

    #[test]
    fn header_arithmetic() {
        let f = sample();
        let b = f.to_bytes();
        assert_eq!(HEADER_LEN, 50);
        assert_eq!(b.len(), 50 + 2 * 3 * 2 * 2 * 4);
        assert_eq!(&b[..4], b"STDS");
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(b[48], 0);
        assert_eq!(b[49], 1);
        assert_eq!(&b[50 + 4..58], &(1.0f32 / 24.0).to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let b = f.to_bytes();
        let g = DatasetFile::<f32>::from_bytes(&b).unwrap();
        assert_eq!(g, f);
        assert_eq!(g.to_bytes(), b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.stds");
        f.write(&p).unwrap();
        assert_eq!(DatasetFile::<f32>::read(&p).unwrap(), f);
    }

    #[test]
    fn errors_carry_offsets() {
        let b = sample().to_bytes();
        let e = DatasetFile::<f32>::from_bytes(&b[..b.len() - 1]).unwrap_err();
        assert!(matches!(e, Error::Format { offset: 50, .. }), "{e}");
        let mut bad = b.clone();
        bad[1] = b'X';
        assert!(matches!(DatasetFile::<f32>::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let e = DatasetFile::<f32>::from_bytes(&b[..20]).unwrap_err();
        assert!(matches!(e, Error::Format { offset: 16, .. }), "{e}");
        assert!(DatasetFile::new(Tensor::<f32>::full(&[1, 1, 1, 1, 1], 2.0), true).is_err());
    }
}
