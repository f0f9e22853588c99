//! STN1 raw tensor files: magic `STN1`, axis count (u8), axes as
//! little-endian u32, then little-endian f32 payload in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_shape, Scalar, Tensor};
use crate::error::{Error, Result};

pub const STN_MAGIC: &[u8; 4] = b"STN1";

pub fn write_stn_to<T: Scalar, W: Write>(tensor: &Tensor<T>, mut out: W) -> Result<()> {
    let shape = tensor.shape();
    out.write_all(STN_MAGIC)?;
    out.write_all(&[shape.len() as u8])?;
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("axis {d} does not fit in u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.len() * 4);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_stn_from<T: Scalar, R: Read>(mut input: R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != STN_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected STN1")));
    }
    let mut ndim = [0u8; 1];
    input.read_exact(&mut ndim)?;
    let mut shape = Vec::with_capacity(ndim[0] as usize);
    for _ in 0..ndim[0] {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let numel = check_shape(&shape)?;
    let mut payload = vec![0u8; numel * 4];
    input.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap())
        .collect();
    Tensor::new(shape, data)
}

pub fn write_stn<T: Scalar>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stn_to(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_stn<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_stn_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_is_exact() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_stn_to(&t, &mut buf).unwrap();
        let mut expected = b"STN1".to_vec();
        expected.push(2);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
        let back: Tensor<f32> = read_stn_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_stn_from::<f32, _>(&b"STN2\x01\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_stn_to(&Tensor::<f32>::zeros(vec![4]), &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_stn_from::<f32, _>(buf.as_slice()).is_err());
    }
}
