//! VRT1 binary tensor format.
//!
//! Layout: magic `VRT1`, u32 LE version, u8 dtype code (0 = f32, 1 = f64),
//! u8 rank, `rank` × u64 LE dims, then raw little-endian element data.

use crate::error::{Result, TensorError};
use crate::{Real, Tensor};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VRT1";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * t.rank() + t.numel() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE_CODE);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_tensor<T: Real, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Format("truncated tensor".into()),
        _ => TensorError::Io(e),
    })?;
    Ok(buf)
}

/// Reads one tensor, requiring its stored dtype to be `T`.
pub fn read_tensor<T: Real, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let head = read_exact(r, 10)?;
    if &head[..4] != MAGIC {
        return Err(TensorError::Format(format!("bad magic {:?}", &head[..4])));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    if head[8] != T::DTYPE_CODE {
        return Err(TensorError::Format(format!(
            "dtype code {} where {} ({}) was expected",
            head[8],
            T::DTYPE_CODE,
            T::NAME
        )));
    }
    let rank = head[9] as usize;
    let dims = read_exact(r, rank * 8)?;
    let shape: Vec<usize> = dims
        .chunks(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::Format(format!("shape {shape:?} overflows")))?;
    let raw = read_exact(r, numel * T::BYTES)?;
    let data = raw.chunks(T::BYTES).map(T::read_le).collect();
    Tensor::new(&shape, data)
}

pub fn save<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(TensorError::Format(format!(
            "{} trailing bytes after tensor",
            cursor.len()
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -0.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"VRT1");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(b[8], 0);
        assert_eq!(b[9], 2);
        assert_eq!(&b[10..18], &2u64.to_le_bytes());
        assert_eq!(&b[18..26], &1u64.to_le_bytes());
        assert_eq!(&b[26..30], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 34);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let t = Tensor::<f64>::zeros(&[3]);
        let mut b = encode(&t);
        assert!(read_tensor::<f32, _>(&mut b.as_slice()).is_err());
        b[0] = b'X';
        assert!(read_tensor::<f64, _>(&mut b.as_slice()).is_err());
    }

    #[test]
    fn rejects_truncation() {
        let b = encode(&Tensor::<f32>::zeros(&[4, 4]));
        assert!(read_tensor::<f32, _>(&mut &b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_lossless(
            dims in prop::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32 * 40503) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(&dims, data).unwrap();
            let back: Tensor<f32> = read_tensor(&mut encode(&t).as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
