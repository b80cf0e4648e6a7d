//! Flat binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"VRPB"            magic
//! u32                format version (1)
//! u32                tensor count
//! per tensor:
//!   u32              name length in bytes, then the UTF-8 name
//!   u32              number of dimensions, then one u64 per dimension
//! then, tensor by tensor, the values as little-endian f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VRPB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn vector(name: &str, data: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: vec![data.len()],
            data,
        }
    }
}

pub fn write_params(w: &mut impl Write, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::ParamFormat(format!(
                "tensor {:?}: shape {:?} holds {expected} values, got {}",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for t in tensors {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params(r: &mut impl Read) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ParamFormat("bad magic bytes".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::ParamFormat(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut headers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::ParamFormat("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        headers.push((name, shape));
    }
    let mut out = Vec::with_capacity(headers.len());
    for (name, shape) in headers {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}

pub fn save_params(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(&mut f, tensors)?;
    f.flush()?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tensors = vec![
            NamedTensor::vector("phi", vec![0.5, -1.25, f64::MIN_POSITIVE]),
            NamedTensor {
                name: "w".into(),
                shape: vec![2, 2],
                data: vec![1.0, 2.0, 3.0, 4.0],
            },
        ];
        let mut buf = Vec::new();
        write_params(&mut buf, &tensors).unwrap();
        assert_eq!(&buf[..4], b"VRPB");
        assert_eq!(read_params(&mut buf.as_slice()).unwrap(), tensors);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_params(&mut buf, &[NamedTensor::vector("x", vec![1.0])]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_params(&mut bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_params(&mut bad.as_slice()).is_err());
        assert!(read_params(&mut &buf[..buf.len() - 1]).is_err());
        let wrong_shape = NamedTensor {
            name: "y".into(),
            shape: vec![3],
            data: vec![1.0],
        };
        assert!(write_params(&mut Vec::new(), &[wrong_shape]).is_err());
    }
}
