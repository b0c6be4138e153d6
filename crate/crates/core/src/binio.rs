//! Little-endian primitives shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::format("string too long"))?;
    write_u32(w, len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::format(format!("truncated {what}: {e}")))?;
    Ok(buf)
}

pub(crate) fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    Ok(read_array::<R, 1>(r, what)?[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|e| Error::format(format!("truncated {what}: {e}")))?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub(crate) fn read_bytes<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes).map_err(|e| Error::format(format!("truncated {what}: {e}")))?;
    Ok(bytes)
}

pub(crate) fn read_str<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    let bytes = read_bytes(r, len, what)?;
    String::from_utf8(bytes).map_err(|_| Error::format(format!("{what} is not valid UTF-8")))
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let got: [u8; 4] = read_array(r, "magic")?;
    if &got != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}
