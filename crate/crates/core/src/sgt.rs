//! SGT1 tensor files.
//!
//! Layout: magic `SGT1`, `u8` dtype (0 = f32, 1 = u8, 2 = f64), `u8` rank,
//! `rank` little-endian `u32` dimensions, then the row-major payload in
//! little-endian byte order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"SGT1";

#[derive(Clone, Debug, PartialEq)]
pub enum SgtData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl SgtData {
    fn dtype(&self) -> u8 {
        match self {
            SgtData::F32(_) => 0,
            SgtData::U8(_) => 1,
            SgtData::F64(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            SgtData::F32(v) => v.len(),
            SgtData::U8(v) => v.len(),
            SgtData::F64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgtTensor {
    pub shape: Vec<usize>,
    pub data: SgtData,
}

impl SgtTensor {
    pub fn new(shape: Vec<usize>, data: SgtData) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(SgtTensor { shape, data })
    }

    pub fn from_f32(t: &Tensor<f32>) -> Self {
        SgtTensor {
            shape: t.shape().to_vec(),
            data: SgtData::F32(t.data().to_vec()),
        }
    }

    pub fn from_f64(t: &Tensor<f64>) -> Self {
        SgtTensor {
            shape: t.shape().to_vec(),
            data: SgtData::F64(t.data().to_vec()),
        }
    }

    /// Floating payload converted to `T`; `u8` payloads are rejected.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.data {
            SgtData::F32(v) => v.iter().map(|&x| T::of(f64::from(x))).collect(),
            SgtData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
            SgtData::U8(_) => return Err(Error::Format("expected a floating-point tensor, found u8".into())),
        };
        Tensor::new(&self.shape, data)
    }
}

pub fn write_sgt<W: Write>(w: &mut W, t: &SgtTensor) -> Result<()> {
    w.write_all(MAGIC)?;
    let rank = u8::try_from(t.shape.len()).map_err(|_| Error::Format("rank above 255".into()))?;
    w.write_all(&[t.data.dtype(), rank])?;
    for &d in &t.shape {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    match &t.data {
        SgtData::F32(v) => {
            let mut buf = Vec::with_capacity(v.len() * 4);
            v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            w.write_all(&buf)?;
        }
        SgtData::U8(v) => w.write_all(v)?,
        SgtData::F64(v) => {
            let mut buf = Vec::with_capacity(v.len() * 8);
            v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn read_sgt<R: Read>(r: &mut R) -> Result<SgtTensor> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("missing SGT1 magic".into()));
    }
    let (dtype, rank) = (head[4], head[5] as usize);
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let n: usize = shape.iter().product();
    let data = match dtype {
        0 => {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            SgtData::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        1 => {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)?;
            SgtData::U8(buf)
        }
        2 => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            SgtData::F64(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        }
        other => return Err(Error::Format(format!("unknown dtype {other}"))),
    };
    Ok(SgtTensor { shape, data })
}

pub fn save_sgt(path: &Path, t: &SgtTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sgt(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_sgt(path: &Path) -> Result<SgtTensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_sgt(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = SgtTensor::new(vec![2, 1], SgtData::U8(vec![7, 9])).unwrap();
        let mut buf = Vec::new();
        write_sgt(&mut buf, &t).unwrap();
        assert_eq!(buf, [b'S', b'G', b'T', b'1', 1, 2, 2, 0, 0, 0, 1, 0, 0, 0, 7, 9]);

        let t = SgtTensor::new(vec![1], SgtData::F32(vec![1.0])).unwrap();
        let mut buf = Vec::new();
        write_sgt(&mut buf, &t).unwrap();
        assert_eq!(&buf[4..10], &[0, 1, 1, 0, 0, 0]);
        assert_eq!(&buf[10..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        assert!(read_sgt(&mut &b"XGT1\x00\x00"[..]).is_err());
        assert!(read_sgt(&mut &b"SGT1\x07\x00"[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>(), dtype in 0u8..3) {
            let n: usize = dims.iter().product();
            let data = match dtype {
                0 => SgtData::F32((0..n).map(|i| (seed.wrapping_add(i as u64) % 1000) as f32 * 0.37 - 10.0).collect()),
                1 => SgtData::U8((0..n).map(|i| (seed.wrapping_add(i as u64) % 256) as u8).collect()),
                _ => SgtData::F64((0..n).map(|i| (seed.wrapping_add(i as u64) % 1000) as f64 * 1e-3).collect()),
            };
            let t = SgtTensor::new(dims, data).unwrap();
            let mut buf = Vec::new();
            write_sgt(&mut buf, &t).unwrap();
            prop_assert_eq!(read_sgt(&mut buf.as_slice()).unwrap(), t);
        }
    }
}
