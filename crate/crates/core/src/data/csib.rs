//! CSIB: little-endian binary container for one [`CsiRecord`].
//!
//! ```text
//! "CSIB" | u8 version=1 | u32 packets | u16 subcarriers | u8 antennas | u8 0
//! f64 sample_rate | f64 carrier_freq | i32 label | i32 user | i32 location
//! i32 orientation | packets·subcarriers·antennas × (f32 re, f32 im)
//! ```

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{validate_record, CsiRecord, DomainTag};
use crate::{Error, Result};

pub const CSIB_MAGIC: &[u8; 4] = b"CSIB";
pub const CSIB_VERSION: u8 = 1;
pub const CSIB_HEADER_LEN: usize = 45;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::format("CSIB", msg)
}

fn to_i32(name: &str, v: u32) -> Result<i32> {
    i32::try_from(v).map_err(|_| fmt_err(format!("{name} {v} does not fit in i32")))
}

pub fn write_csib<W: Write>(rec: &CsiRecord, mut w: W) -> Result<()> {
    let violations = validate_record(rec);
    if !violations.is_empty() {
        return Err(Error::InvalidRecord(violations));
    }
    let packets = u32::try_from(rec.packets).map_err(|_| fmt_err("too many packets"))?;
    let subcarriers = u16::try_from(rec.subcarriers).map_err(|_| fmt_err("too many subcarriers"))?;
    let antennas = u8::try_from(rec.antennas).map_err(|_| fmt_err("too many antennas"))?;

    let mut buf = Vec::with_capacity(CSIB_HEADER_LEN + rec.samples.len() * 8);
    buf.extend_from_slice(CSIB_MAGIC);
    buf.push(CSIB_VERSION);
    buf.extend_from_slice(&packets.to_le_bytes());
    buf.extend_from_slice(&subcarriers.to_le_bytes());
    buf.push(antennas);
    buf.push(0);
    buf.extend_from_slice(&rec.sample_rate.to_le_bytes());
    buf.extend_from_slice(&rec.carrier_freq.to_le_bytes());
    buf.extend_from_slice(&to_i32("label", rec.label)?.to_le_bytes());
    buf.extend_from_slice(&to_i32("user", rec.domain.user)?.to_le_bytes());
    buf.extend_from_slice(&to_i32("location", rec.domain.location)?.to_le_bytes());
    buf.extend_from_slice(&to_i32("orientation", rec.domain.orientation)?.to_le_bytes());
    for z in &rec.samples {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_csib<R: Read>(mut r: R) -> Result<CsiRecord> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < CSIB_HEADER_LEN {
        return Err(fmt_err(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != CSIB_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    if bytes[4] != CSIB_VERSION {
        return Err(fmt_err(format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let i32_at = |o: usize| i32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

    let packets = u32_at(5) as usize;
    let subcarriers = u16::from_le_bytes([bytes[9], bytes[10]]) as usize;
    let antennas = bytes[11] as usize;
    if bytes[12] != 0 {
        return Err(fmt_err("reserved byte is not zero"));
    }
    let sample_rate = f64_at(13);
    let carrier_freq = f64_at(21);
    let ids = [i32_at(29), i32_at(33), i32_at(37), i32_at(41)];
    if let Some(neg) = ids.iter().find(|&&v| v < 0) {
        return Err(fmt_err(format!("negative label/domain id {neg}")));
    }

    let n = packets * subcarriers * antennas;
    let expected = CSIB_HEADER_LEN + n * 8;
    if bytes.len() != expected {
        return Err(fmt_err(format!(
            "payload length {} does not match header ({} expected)",
            bytes.len(),
            expected
        )));
    }
    let samples = bytes[CSIB_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    CsiRecord::new(
        packets,
        subcarriers,
        antennas,
        samples,
        sample_rate,
        carrier_freq,
        ids[0] as u32,
        DomainTag {
            user: ids[1] as u32,
            location: ids[2] as u32,
            orientation: ids[3] as u32,
        },
    )
}
