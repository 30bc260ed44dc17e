//! `ETNS` tensor files.
//!
//! ```text
//! "ETNS" | u8 version = 1 | u8 dtype (0 = f32, 1 = f64) | u8 ndim
//!        | ndim × u64 LE extents | row-major LE scalars
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ETNS";
pub const VERSION: u8 = 1;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * t.ndim() + T::BYTES * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::PRECISION.code());
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

struct Header {
    precision: Precision,
    dims: Vec<usize>,
}

fn read_header(r: &mut impl Read) -> Result<Header> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head).map_err(|_| Error::Format("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    let precision = Precision::from_code(head[5]).ok_or_else(|| Error::Format(format!("unknown dtype {}", head[5])))?;
    let ndim = head[6] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated extents".into()))?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    Ok(Header { precision, dims })
}

pub fn read<T: Scalar>(r: &mut impl Read) -> Result<Tensor<T>> {
    let h = read_header(r)?;
    if h.precision != T::PRECISION {
        return Err(Error::PrecisionMismatch { expected: T::PRECISION.name(), found: h.precision.name() });
    }
    let n: usize = h.dims.iter().product();
    let mut raw = vec![0u8; n * T::BYTES];
    r.read_exact(&mut raw).map_err(|_| Error::Format("truncated payload".into()))?;
    let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(h.dims, data)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut cursor = bytes;
    let t = read(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(t)
}

pub fn write<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read(&mut r)
}

/// Precision recorded in a file's header.
pub fn peek_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let mut r = BufReader::new(File::open(path)?);
    Ok(read_header(&mut r)?.precision)
}
