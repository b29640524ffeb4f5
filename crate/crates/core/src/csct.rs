//! The `CSCT` binary tensor format.
//!
//! Layout: the 4 magic bytes `CSCT`, a version byte (`1`), a byte holding the
//! number of dimensions, each dimension as a little-endian `u64`, then the
//! entries in row-major order as little-endian IEEE-754 doubles.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayView, Dimension, IxDyn};

use crate::error::{CscError, Result};

pub const MAGIC: &[u8; 4] = b"CSCT";
pub const VERSION: u8 = 1;

pub fn write_tensor<W: Write, D: Dimension>(mut w: W, a: ArrayView<'_, f64, D>) -> Result<()> {
    let ndim = u8::try_from(a.ndim()).map_err(|_| CscError::Format("more than 255 dims".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, ndim])?;
    for &d in a.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    // iter() walks in logical (row-major) order regardless of memory layout
    for v in a.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<ArrayD<f64>> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)
        .map_err(|_| CscError::Format("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(CscError::Format("bad magic bytes".into()));
    }
    if head[4] != VERSION {
        return Err(CscError::Format(format!("unsupported version {}", head[4])));
    }
    let ndim = head[5] as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut buf = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut buf)
            .map_err(|_| CscError::Format("truncated dimensions".into()))?;
        shape.push(
            usize::try_from(u64::from_le_bytes(buf))
                .map_err(|_| CscError::Format("dimension overflows usize".into()))?,
        );
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CscError::Format("tensor size overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(CscError::Format(format!(
            "expected {} data bytes for shape {shape:?}, found {}",
            len * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| CscError::Format(e.to_string()))
}

pub fn save<D: Dimension>(path: impl AsRef<Path>, a: ArrayView<'_, f64, D>) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), a)
}

pub fn load(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    read_tensor(BufReader::new(File::open(path)?))
}

pub fn to_bytes<D: Dimension>(a: ArrayView<'_, f64, D>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * (a.ndim() + a.len()));
    write_tensor(&mut out, a).expect("writing to a Vec cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let bytes = to_bytes(a.view());
        assert_eq!(&bytes[..4], b"CSCT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(&bytes[14..22], &3u64.to_le_bytes());
        assert_eq!(&bytes[22..30], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 8..], &6.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 6 + 16 + 48);
    }

    #[test]
    fn transposed_views_are_written_row_major() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let t = a.t();
        let back = read_tensor(to_bytes(t).as_slice()).unwrap();
        assert_eq!(back, t.into_dyn());
    }

    #[test]
    fn rejects_corrupt_input() {
        let a = array![1.0, 2.0];
        let mut bytes = to_bytes(a.view());
        assert!(read_tensor(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(read_tensor(bytes.as_slice()).is_err());
        let mut bytes = to_bytes(a.view());
        bytes[4] = 2;
        assert!(read_tensor(bytes.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(dims in (1usize..4, 1usize..5, 1usize..6), seed in any::<u64>()) {
            let (a, b, c) = dims;
            let t = Array3::from_shape_fn((a, b, c), |(i, j, k)| {
                (seed as f64).sin() * (i as f64 + 0.5) - (j * c + k) as f64 * 1e-3
            });
            let back = read_tensor(to_bytes(t.view()).as_slice()).unwrap();
            prop_assert_eq!(back, t.into_dyn());
        }
    }
}
