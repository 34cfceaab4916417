//! Binary field snapshots.
//!
//! Layout: `b"GDNLS1"`, `u32` point count, `f64` domain length, `f64` time,
//! `f64` sigma, then `n` interleaved `(re, im)` `f64` pairs. Everything is
//! little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::{make_grid, Field, C64};

pub const MAGIC: &[u8; 6] = b"GDNLS1";
const HEADER_LEN: usize = 6 + 4 + 8 + 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub field: Field,
    pub time: f64,
    pub sigma: f64,
}

pub fn encode_snapshot(field: &Field, time: f64, sigma: f64) -> Result<Vec<u8>> {
    let n = u32::try_from(field.len())
        .map_err(|_| Error::Snapshot(format!("{} points do not fit a u32", field.len())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * field.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&field.grid().domain_length().to_le_bytes());
    out.extend_from_slice(&time.to_le_bytes());
    out.extend_from_slice(&sigma.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

fn f64_at(bytes: &[u8], offset: usize) -> f64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[offset..offset + 8]);
    f64::from_le_bytes(buf)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Snapshot(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..6] != MAGIC {
        return Err(Error::Snapshot("bad magic, expected GDNLS1".into()));
    }
    let n = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let domain_length = f64_at(bytes, 10);
    let time = f64_at(bytes, 18);
    let sigma = f64_at(bytes, 26);
    let expected = HEADER_LEN + 16 * n;
    if bytes.len() != expected {
        return Err(Error::Snapshot(format!(
            "payload holds {} bytes, expected {} for {n} points",
            bytes.len() - HEADER_LEN,
            16 * n
        )));
    }
    let grid = make_grid(n, domain_length)?;
    let values = (0..n)
        .map(|j| {
            let at = HEADER_LEN + 16 * j;
            C64::new(f64_at(bytes, at), f64_at(bytes, at + 8))
        })
        .collect();
    Ok(Snapshot {
        field: Field::new(grid, values)?,
        time,
        sigma,
    })
}

pub fn write_snapshot(path: &Path, field: &Field, time: f64, sigma: f64) -> Result<()> {
    std::fs::write(path, encode_snapshot(field, time, sigma)?)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    decode_snapshot(&std::fs::read(path)?)
}
