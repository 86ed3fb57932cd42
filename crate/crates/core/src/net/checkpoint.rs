//! WOCK checkpoints.
//!
//! ```text
//! "WOCK" | u8 version=1 | u32 count | count × tensor | u32 count | count × tensor
//! tensor = u16 name_len | name | u8 rank | rank × u32 dim | f32 data…
//! ```
//!
//! The first block holds the network parameters plus `meta.fingerprint`
//! (the architecture hash split into four 16-bit words); the second block
//! holds the optimizer state (`adam.step`, `adam.m.*`, `adam.v.*`) and is
//! empty when no state was saved. Values are stored as f32, so forward
//! outputs survive a round trip bit-exactly when the parameters are
//! f32-representable (see [`Network::round_params_to_f32`]).

use std::io::{Read, Write};

use super::{AdamState, Network, NetworkSpec, Tensor};
use crate::{Error, Result};

pub const WOCK_MAGIC: &[u8; 4] = b"WOCK";
pub const WOCK_VERSION: u8 = 1;
const FINGERPRINT: &str = "meta.fingerprint";

fn err(msg: impl Into<String>) -> Error {
    Error::format("WOCK", msg)
}

fn u64_words(x: u64) -> Tensor {
    Tensor::from_fn(&[4], |i| ((x >> (16 * i)) & 0xFFFF) as f64)
}

fn words_u64(t: &Tensor) -> Result<u64> {
    if t.dims() != [4] {
        return Err(err("malformed 64-bit word tensor"));
    }
    Ok(t.data()
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &w)| acc | ((w as u64 & 0xFFFF) << (16 * i))))
}

pub(crate) fn write_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| err("tensor name too long"))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    let rank = u8::try_from(t.dims().len()).map_err(|_| err("tensor rank too large"))?;
    buf.push(rank);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| err("dimension too large"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| err("tensor name is not UTF-8"))?
            .to_string();
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((name, Tensor::new(dims, data)?))
    }

    fn block(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        (0..count).map(|_| self.tensor()).collect()
    }
}

pub fn save_checkpoint<W: Write>(net: &Network, adam: Option<&AdamState>, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WOCK_MAGIC);
    buf.push(WOCK_VERSION);
    buf.extend_from_slice(&(net.params().len() as u32 + 1).to_le_bytes());
    write_tensor(&mut buf, FINGERPRINT, &u64_words(net.spec().fingerprint()))?;
    for (name, t) in net.names().iter().zip(net.params()) {
        write_tensor(&mut buf, name, t)?;
    }
    match adam {
        None => buf.extend_from_slice(&0u32.to_le_bytes()),
        Some(st) => {
            buf.extend_from_slice(&(2 * st.m.len() as u32 + 1).to_le_bytes());
            write_tensor(&mut buf, "adam.step", &u64_words(st.step))?;
            for (name, t) in net.names().iter().zip(&st.m) {
                write_tensor(&mut buf, &format!("adam.m.{name}"), t)?;
            }
            for (name, t) in net.names().iter().zip(&st.v) {
                write_tensor(&mut buf, &format!("adam.v.{name}"), t)?;
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Loads a checkpoint written for `spec`; refuses other architectures.
pub fn load_checkpoint<R: Read>(spec: &NetworkSpec, mut r: R) -> Result<(Network, Option<AdamState>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != WOCK_MAGIC {
        return Err(err("bad magic"));
    }
    let version = c.u8()?;
    if version != WOCK_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let params = c.block()?;
    let optimizer = c.block()?;
    if c.pos != bytes.len() {
        return Err(err("trailing bytes after optimizer state"));
    }

    let fp = params
        .iter()
        .find(|(n, _)| n == FINGERPRINT)
        .ok_or_else(|| err("missing architecture fingerprint"))?;
    let stored = words_u64(&fp.1)?;
    if stored != spec.fingerprint() {
        return Err(err(format!(
            "architecture fingerprint mismatch (file {stored:016x}, expected {:016x})",
            spec.fingerprint()
        )));
    }

    let template = Network::new(spec.clone(), 0)?;
    let lookup = |list: &[(String, Tensor)], name: &str| -> Result<Tensor> {
        list.iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| err(format!("missing tensor `{name}`")))
    };
    let tensors = template
        .names()
        .iter()
        .map(|n| lookup(&params, n))
        .collect::<Result<Vec<_>>>()?;
    let net = Network::from_params(spec.clone(), tensors)?;

    let adam = if optimizer.is_empty() {
        None
    } else {
        let step = words_u64(&lookup(&optimizer, "adam.step")?)?;
        let m = net
            .names()
            .iter()
            .map(|n| lookup(&optimizer, &format!("adam.m.{n}")))
            .collect::<Result<Vec<_>>>()?;
        let v = net
            .names()
            .iter()
            .map(|n| lookup(&optimizer, &format!("adam.v.{n}")))
            .collect::<Result<Vec<_>>>()?;
        Some(AdamState { m, v, step })
    };
    Ok((net, adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{adam_step, AdamParams, DeskScale};

    fn spec(ch: usize) -> NetworkSpec {
        NetworkSpec::desk_scale(
            &[2, 6, 12],
            &[5, 7],
            &DeskScale { enc_channels: vec![ch, 4], embed_dim: 4, dec_channels: vec![2], dec_seed: (2, 2) },
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut net = Network::new(spec(3), 9).unwrap();
        let grads: Vec<Tensor> = net.params().iter().map(|p| Tensor::from_fn(p.dims(), |i| (i as f64).cos())).collect();
        let mut st = AdamState::new(net.params());
        adam_step(net.params_mut(), &grads, &mut st, 1e-2, AdamParams::default()).unwrap();
        net.round_params_to_f32();
        let x = Tensor::from_fn(&[2, 6, 12], |i| (i as f64 * 0.1).sin());
        let before = net.forward(&x).unwrap();

        let mut buf = Vec::new();
        save_checkpoint(&net, Some(&st), &mut buf).unwrap();
        let (loaded, st2) = load_checkpoint(&spec(3), buf.as_slice()).unwrap();
        let after = loaded.forward(&x).unwrap();
        assert_eq!(before.embedding, after.embedding);
        assert_eq!(before.decoded, after.decoded);
        let st2 = st2.unwrap();
        assert_eq!(st2.step, 1);
        assert_eq!(st2.m.len(), st.m.len());
    }

    #[test]
    fn wrong_fingerprint_is_refused() {
        let net = Network::new(spec(3), 1).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&net, None, &mut buf).unwrap();
        let e = load_checkpoint(&spec(5), buf.as_slice()).unwrap_err();
        assert!(e.to_string().contains("fingerprint"), "{e}");
    }

    #[test]
    fn corrupted_magic_is_refused() {
        let net = Network::new(spec(3), 1).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&net, None, &mut buf).unwrap();
        buf[1] = b'X';
        let e = load_checkpoint(&spec(3), buf.as_slice()).unwrap_err();
        assert!(e.to_string().contains("bad magic"), "{e}");
        assert!(load_checkpoint(&spec(3), &buf[..3]).is_err());
    }

    #[test]
    fn header_layout() {
        let net = Network::new(spec(3), 1).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&net, None, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"WOCK");
        assert_eq!(buf[4], 1);
        assert_eq!(u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize, net.params().len() + 1);
        assert_eq!(u16::from_le_bytes([buf[9], buf[10]]) as usize, FINGERPRINT.len());
        assert_eq!(&buf[buf.len() - 4..], &0u32.to_le_bytes());
    }
}
