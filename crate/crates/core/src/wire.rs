//! Little-endian primitives shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{format_err, Result};

pub(crate) fn put_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn get_array<R: Read, const N: usize>(r: &mut R, what: &'static str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| format_err(what, format!("truncated input ({e})")))?;
    Ok(buf)
}

pub(crate) fn get_u8<R: Read>(r: &mut R, what: &'static str) -> Result<u8> {
    Ok(get_array::<R, 1>(r, what)?[0])
}

pub(crate) fn get_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    Ok(u32::from_le_bytes(get_array(r, what)?))
}

pub(crate) fn get_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    Ok(u64::from_le_bytes(get_array(r, what)?))
}

pub(crate) fn get_f64<R: Read>(r: &mut R, what: &'static str) -> Result<f64> {
    Ok(f64::from_le_bytes(get_array(r, what)?))
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8], what: &'static str) -> Result<()> {
    let mut buf = vec![0u8; magic.len()];
    r.read_exact(&mut buf)
        .map_err(|e| format_err(what, format!("truncated magic ({e})")))?;
    if buf != magic {
        return Err(format_err(
            what,
            format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&buf), String::from_utf8_lossy(magic)),
        ));
    }
    Ok(())
}
