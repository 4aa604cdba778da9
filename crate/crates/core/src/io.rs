//! Binary tensor files.
//!
//! Layout: magic `"DTEN1"`, a little-endian `u32` mode count `M`, then `M`
//! little-endian `u32` extents, then all elements as little-endian `f64` in
//! canonical order (mode-0 index fastest). Matrices are written as order-2
//! tensors `[rows, cols]`, which makes the payload exactly their
//! column-major storage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;

const MAGIC: &[u8; 5] = b"DTEN1";

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(t.order() as u32).to_le_bytes())?;
    for &e in t.shape() {
        if e > u32::MAX as usize {
            return Err(Error::Value(format!("extent {e} exceeds u32 range")));
        }
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &x in t.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| Error::Format("truncated mode count".into()))?;
    let order = u32::from_le_bytes(b4) as usize;
    if order == 0 {
        return Err(Error::Format("zero-mode tensor".into()));
    }
    let mut shape = Vec::with_capacity(order);
    for m in 0..order {
        r.read_exact(&mut b4).map_err(|_| Error::Format(format!("truncated extent {m}")))?;
        let e = u32::from_le_bytes(b4) as usize;
        if e == 0 {
            return Err(Error::Format(format!("zero extent in mode {m}")));
        }
        shape.push(e);
    }
    let n: usize = shape.iter().product();
    let mut data = vec![0.0f64; n];
    let mut b8 = [0u8; 8];
    for (i, slot) in data.iter_mut().enumerate() {
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format(format!("truncated payload at element {i} of {n}")))?;
        *slot = f64::from_le_bytes(b8);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    DenseTensor::new(shape, data)
}

/// Writes a matrix as an order-2 tensor `[rows, cols]`.
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let t = DenseTensor::new(vec![m.rows(), m.cols()], m.as_slice().to_vec())?;
    write_tensor(path, &t)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let t = read_tensor(path)?;
    if t.order() != 2 {
        return Err(Error::Format(format!("expected order-2 tensor, got order {}", t.order())));
    }
    let (rows, cols) = (t.extent(0), t.extent(1));
    Matrix::new(rows, cols, t.into_vec())
}

/// Writes a vector as an order-1 tensor.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_tensor(path, &DenseTensor::from_vec1(v.to_vec()))
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let t = read_tensor(path)?;
    if t.order() != 1 {
        return Err(Error::Format(format!("expected order-1 tensor, got order {}", t.order())));
    }
    Ok(t.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("tenfact-io-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn roundtrip_tensor() {
        let t = DenseTensor::from_fn(&[3, 2, 4], |i| {
            i[0] as f64 + 0.5 * i[1] as f64 - 2.25 * i[2] as f64
        })
        .unwrap();
        let p = tmpfile("roundtrip.dten");
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back, t);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn header_layout_is_exact() {
        let t = DenseTensor::new(vec![2, 3], (0..6).map(|x| x as f64).collect()).unwrap();
        let p = tmpfile("header.dten");
        write_tensor(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..5], b"DTEN1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 17 + 6 * 8);
        assert_eq!(f64::from_le_bytes(bytes[17..25].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(bytes[25..33].try_into().unwrap()), 1.0);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = tmpfile("bad.dten");
        std::fs::write(&p, b"NOPE!").unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Format(_))));
        let t = DenseTensor::from_vec1(vec![1.0, 2.0]);
        write_tensor(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Format(_))));
        std::fs::write(&p, [bytes.clone(), vec![7u8]].concat()).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Format(_))));
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn matrix_payload_is_column_major() {
        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
        let p = tmpfile("mat.dten");
        write_matrix(&p, &m).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let payload: Vec<f64> = bytes[17..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(payload, vec![1.0, 2.0, 3.0, 4.0]);
        let back = read_matrix(&p).unwrap();
        assert_eq!(back, m);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn vector_roundtrip() {
        let p = tmpfile("vec.dten");
        write_vector(&p, &[1.5, -2.5]).unwrap();
        assert_eq!(read_vector(&p).unwrap(), vec![1.5, -2.5]);
        std::fs::remove_file(&p).ok();
    }
}
