//! WTSR tensor files: `"WTSR"`, u8 version, u8 rank, rank × u32 dims, then
//! f32 data in row-major order. All integers and floats little-endian.

use std::io::{Read, Write};

use crate::net::Tensor;
use crate::{Error, Result};

pub const WTSR_MAGIC: &[u8; 4] = b"WTSR";
pub const WTSR_VERSION: u8 = 1;

fn err(msg: impl Into<String>) -> Error {
    Error::format("WTSR", msg)
}

pub fn write_wtsr<W: Write>(t: &Tensor, mut w: W) -> Result<()> {
    let rank = u8::try_from(t.dims().len()).map_err(|_| err("rank above 255"))?;
    w.write_all(WTSR_MAGIC)?;
    w.write_all(&[WTSR_VERSION, rank])?;
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| err("dimension above u32::MAX"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &x in t.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_wtsr<R: Read>(mut r: R) -> Result<Tensor> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(|_| err("truncated header"))?;
    if &head[..4] != WTSR_MAGIC {
        return Err(err("bad magic"));
    }
    if head[4] != WTSR_VERSION {
        return Err(err(format!("unsupported version {}", head[4])));
    }
    let rank = head[5] as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| err("truncated dims"))?;
        let d = u32::from_le_bytes(b) as usize;
        count = count.checked_mul(d).ok_or_else(|| err("tensor too large"))?;
        dims.push(d);
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(err(format!("expected {} data bytes, found {}", count * 4, bytes.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_for_f32_values() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i as f32 * 0.37).sin() as f64);
        let mut buf = Vec::new();
        write_wtsr(&t, &mut buf).unwrap();
        assert_eq!(buf.len(), 6 + 3 * 4 + 24 * 4);
        assert_eq!(&buf[..6], b"WTSR\x01\x03");
        assert_eq!(read_wtsr(&buf[..]).unwrap(), t);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::zeros(&[2, 2]);
        let mut buf = Vec::new();
        write_wtsr(&t, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_wtsr(&bad[..]).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_wtsr(&bad[..]).is_err());
        assert!(read_wtsr(&buf[..buf.len() - 1]).is_err());
        let mut long = buf;
        long.push(0);
        assert!(read_wtsr(&long[..]).is_err());
    }
}
