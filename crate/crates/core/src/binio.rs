//! Little-endian helpers shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, x: f64) -> Result<()> {
    write_u64(w, x.to_bits())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    write_u64(w, xs.len() as u64)?;
    for &x in xs {
        write_f64(w, x)?;
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

pub(crate) fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let n = read_u64(r)?;
    if n > (1 << 32) {
        return Err(Error::Format(format!("implausible length {n}")));
    }
    Ok(n as usize)
}

pub(crate) fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_len(r)?;
    (0..n).map(|_| read_f64(r)).collect()
}

pub(crate) fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4], version: u32, what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!("not a {what}")));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let got = u32::from_le_bytes(v);
    if got != version {
        return Err(Error::Format(format!("unsupported {what} version {got}")));
    }
    Ok(())
}

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], version: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    Ok(())
}
