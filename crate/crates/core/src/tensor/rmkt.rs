//! RMKT binary tensor interchange.
//!
//! Layout: magic `RMKT`, version byte `0x01`, dtype byte (0 = f32, 1 = f64),
//! ndim byte, `ndim` little-endian u32 extents, then the row-major
//! little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

use super::Tensor;

pub const MAGIC: [u8; 4] = *b"RMKT";
pub const VERSION: u8 = 0x01;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.ndim() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Header fields of an RMKT blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub payload_offset: usize,
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 7 || bytes[..4] != MAGIC {
        return Err(Error::Format("missing RMKT magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported RMKT version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[5])))?;
    let ndim = bytes[6] as usize;
    let payload_offset = 7 + 4 * ndim;
    if bytes.len() < payload_offset {
        return Err(Error::Format("truncated RMKT header".into()));
    }
    let dims = (0..ndim)
        .map(|i| {
            let o = 7 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    Ok(Header {
        dtype,
        dims,
        payload_offset,
    })
}

fn decode_payload<T: Scalar, S: Scalar>(h: &Header, bytes: &[u8]) -> Result<Tensor<T>> {
    let n: usize = h.dims.iter().product();
    let size = S::DTYPE.size();
    let payload = &bytes[h.payload_offset..];
    if payload.len() != n * size {
        return Err(Error::Format(format!(
            "payload holds {} bytes, dims {:?} need {}",
            payload.len(),
            h.dims,
            n * size
        )));
    }
    let data = payload
        .chunks_exact(size)
        .map(|c| T::lit(S::read_le(c).to_f64_lossy()))
        .collect();
    Tensor::new(h.dims.clone(), data)
}

/// Decodes a blob whose dtype must match `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = read_header(bytes)?;
    if h.dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "RMKT dtype {:?} does not match requested {:?}",
            h.dtype,
            T::DTYPE
        )));
    }
    decode_payload::<T, T>(&h, bytes)
}

/// Decodes a blob of either dtype, converting to `T`.
pub fn decode_any<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = read_header(bytes)?;
    match h.dtype {
        DType::F32 => decode_payload::<T, f32>(&h, bytes),
        DType::F64 => decode_payload::<T, f64>(&h, bytes),
    }
}

pub fn write<T: Scalar, W: Write>(t: &Tensor<T>, mut w: W) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

pub fn read<T: Scalar, R: Read>(mut r: R) -> Result<Tensor<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&std::fs::read(path)?)
}

pub fn load_any<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_any(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..7], &[0x52, 0x4D, 0x4B, 0x54, 0x01, 0x00, 0x02]);
        assert_eq!(&b[7..15], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[15..19], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 15 + 8);
    }

    #[test]
    fn rejects_bad_blobs() {
        let t = Tensor::<f64>::full(&[3], 1.5).unwrap();
        let mut b = encode(&t);
        assert!(decode::<f32>(&b).is_err());
        assert_eq!(decode_any::<f32>(&b).unwrap().data(), &[1.5f32; 3]);
        b.pop();
        assert!(decode::<f64>(&b).is_err());
        assert!(decode::<f64>(b"RMKX\x01\x01\x00").is_err());
        let mut v = encode(&t);
        v[4] = 2;
        assert!(decode::<f64>(&v).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let bits: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(i as u32) & !(0x7FFu64 << 52) | (0x3FFu64 << 52)))
                .collect();
            let t = Tensor::new(dims, bits).unwrap();
            let back: Tensor<f64> = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.dims(), t.dims());
        }
    }
}
