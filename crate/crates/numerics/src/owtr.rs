//! OWTR binary tensor files.
//!
//! Layout (all little-endian): magic `OWTR`, version `u16 = 1`, dtype
//! `u8 = 1` (f32), `u8` rank, `rank × u32` extents, row-major f32 payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"OWTR";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

pub fn encode(tensor: &Tensor<f32>) -> Result<Vec<u8>> {
    let shape = tensor.shape();
    if shape.len() > u8::MAX as usize {
        return Err(NumericsError::Format(format!("rank {} exceeds 255", shape.len())));
    }
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * tensor.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| NumericsError::Format(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let take = |at: usize, n: usize| {
        bytes.get(at..at + n).ok_or_else(|| NumericsError::Format(format!("truncated at byte {at}")))
    };
    if take(0, 4)? != MAGIC {
        return Err(NumericsError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(4, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(NumericsError::Format(format!("unsupported version {version}")));
    }
    let dtype = take(6, 1)?[0];
    if dtype != DTYPE_F32 {
        return Err(NumericsError::Format(format!("unsupported dtype {dtype}")));
    }
    let rank = take(7, 1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32::from_le_bytes(take(8 + 4 * i, 4)?.try_into().unwrap()) as usize);
    }
    let start = 8 + 4 * rank;
    let numel: usize = shape.iter().product();
    let payload = take(start, 4 * numel)?;
    if bytes.len() != start + 4 * numel {
        return Err(NumericsError::Format(format!("expected {} bytes, found {}", start + 4 * numel, bytes.len())));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data)
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor<f32>) -> Result<()> {
    let bytes = encode(tensor)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = encode(&t).unwrap();
        assert_eq!(&b[..4], b"OWTR");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 1);
        assert_eq!(b[7], 2);
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &3u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 16 + 24);
    }

    #[test]
    fn rejects_corrupt_headers() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let good = encode(&t).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode(&bad).is_err());
        let mut bad = good.clone();
        bad[6] = 2;
        assert!(decode(&bad).is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut long = good;
        long.push(0);
        assert!(decode(&long).is_err());
    }

    proptest! {
        #[test]
        fn bitwise_round_trip(shape in proptest::collection::vec(1usize..5, 0..4),
                              seed in any::<u64>()) {
            let numel: usize = shape.iter().product();
            let mut s = seed;
            let data: Vec<f32> = (0..numel).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits((s >> 32) as u32 & 0x7f7f_ffff)
            }).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
