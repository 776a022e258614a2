//! Binary parameter checkpoints.
//!
//! Layout: `b"PFMW"`, version `u32`, then records until end of file, each
//! `name_len: u16`, name bytes (UTF-8), `rows: u32`, `cols: u32`, and
//! `rows * cols` little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Matrix, Module};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFMW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Matrix)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, m) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("tensor too large".into()))?;
        let cols = u32::try_from(m.cols()).map_err(|_| Error::Format("tensor too large".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(Error::Format("truncated tensor record".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("truncated tensor record".into())
    } else {
        e.into()
    }
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Matrix)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a parameter checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    let mut len_buf = [0u8; 2];
    while read_exact_or_eof(&mut r, &mut len_buf)? {
        let mut name = vec![0u8; u16::from_le_bytes(len_buf) as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[(String, Matrix)]) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), tensors)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Matrix)>> {
    read_tensors(BufReader::new(File::open(path)?))
}

pub fn save_module<M: Module + ?Sized>(module: &M, path: &Path) -> Result<()> {
    save_tensors(path, &module.named_values())
}

pub fn load_module<M: Module + ?Sized>(module: &mut M, path: &Path) -> Result<()> {
    module.load_named_values(&load_tensors(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let tensors = vec![
            ("a.weight".to_string(), Matrix::from_vec(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -3.25, 0.1]).unwrap()),
            ("b".to_string(), Matrix::zeros(1, 1)),
        ];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &tensors).unwrap();
        let back = read_tensors(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, m0), (n1, m1)) in tensors.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(m0.shape(), m1.shape());
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(m0), bits(m1));
        }
    }

    #[test]
    fn header_is_pinned() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("x".into(), Matrix::filled(1, 1, 2.0))]).unwrap();
        assert_eq!(&buf[..4], b"PFMW");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..10], &1u16.to_le_bytes());
        assert_eq!(buf[10], b'x');
        assert_eq!(&buf[19..27], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 27);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_tensors(&b"NOPE\x01\0\0\0"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("x".into(), Matrix::filled(2, 2, 1.0))]).unwrap();
        buf.pop();
        assert!(matches!(read_tensors(buf.as_slice()), Err(Error::Format(_))));
    }
}
