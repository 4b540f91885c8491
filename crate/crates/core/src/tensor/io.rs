//! Flat binary tensor records: `"TPN1"`, u8 dtype tag, u8 rank,
//! rank × u64 little-endian dims, then little-endian scalars in row-major
//! order.

use super::{DType, Scalar, Shape, Tensor};
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"TPN1";

/// Header plus payload size of a rank-4 record of `numel` values.
pub fn record_len(dtype: DType, numel: usize) -> usize {
    4 + 1 + 1 + 4 * 8 + numel * dtype.size()
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(record_len(T::DTYPE, t.numel()));
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.tag());
    out.push(4);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

/// Reads one record, converting to `T` if the stored dtype differs.
pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let dtype = DType::from_tag(head[4]).ok_or_else(|| Error::Format(format!("unknown dtype tag {}", head[4])))?;
    let rank = head[5] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let shape = Shape::from_dims(&dims).ok_or_else(|| Error::Format(format!("rank {rank} exceeds 4")))?;
    let mut payload = vec![0u8; shape.numel() * dtype.size()];
    r.read_exact(&mut payload)?;
    let data: Vec<T> = match dtype {
        DType::F32 => payload.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
    };
    Tensor::from_vec(shape, data)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    read_tensor(&mut &bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_fn(Shape::new(1, 2, 1, 3), |i| i as f32);
        let b = encode(&t);
        assert_eq!(&b[..4], b"TPN1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 4);
        assert_eq!(u64::from_le_bytes(b[6..14].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[14..22].try_into().unwrap()), 2);
        assert_eq!(b.len(), record_len(DType::F32, 6));
        assert_eq!(&b[42..46], &1.0f32.to_le_bytes());
    }

    #[test]
    fn lower_rank_records_pad_trailing_dims() {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&[1, 1]);
        b.extend_from_slice(&3u64.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let t: Tensor<f64> = decode(&b).unwrap();
        assert_eq!(t.shape(), Shape::vector(3));
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(decode::<f32>(b"TPN2\0\0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
            let t = Tensor::<f64>::from_fn(Shape::new(n, c, h, w), |i| ((i as u64 ^ seed) as f64).sin() * 1e3);
            let back: Tensor<f64> = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back, t.clone());
            let narrow = t.cast::<f32>();
            let back32: Tensor<f32> = decode(&encode(&narrow)).unwrap();
            prop_assert_eq!(back32, narrow);
        }
    }
}
