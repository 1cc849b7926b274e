//! Primitives for the versioned binary containers (checkpoints, indexes).
//! All integers and floats are little-endian; strings are u32-length-prefixed
//! UTF-8; tensors are row-major f64 with declared shapes.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use std::io::{Read, Write};

use crate::error::{FocError, Result};

pub(crate) fn write_magic(w: &mut impl Write, magic: &[u8; 8]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub(crate) fn read_magic(r: &mut impl Read, expected: &[u8; 8]) -> Result<()> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != expected {
        return Err(FocError::parse(format!(
            "bad magic: expected {:?}, got {:?}",
            String::from_utf8_lossy(expected),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}

pub(crate) fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_string(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 64 * 1024 * 1024 {
        return Err(FocError::parse(format!("string length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| FocError::parse(format!("invalid utf-8: {e}")))
}

pub(crate) fn write_opt_string(w: &mut impl Write, s: &Option<String>) -> Result<()> {
    match s {
        Some(s) => {
            w.write_u8(1)?;
            write_string(w, s)
        }
        None => {
            w.write_u8(0)?;
            Ok(())
        }
    }
}

pub(crate) fn read_opt_string(r: &mut impl Read) -> Result<Option<String>> {
    match r.read_u8()? {
        0 => Ok(None),
        1 => Ok(Some(read_string(r)?)),
        other => Err(FocError::parse(format!("bad option tag: {other}"))),
    }
}

pub(crate) fn write_string_list(w: &mut impl Write, list: &[String]) -> Result<()> {
    w.write_u32::<LittleEndian>(list.len() as u32)?;
    for s in list {
        write_string(w, s)?;
    }
    Ok(())
}

pub(crate) fn read_string_list(r: &mut impl Read) -> Result<Vec<String>> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    (0..len).map(|_| read_string(r)).collect()
}

pub(crate) fn write_matrix(w: &mut impl Write, m: &Array2<f64>) -> Result<()> {
    w.write_u64::<LittleEndian>(m.nrows() as u64)?;
    w.write_u64::<LittleEndian>(m.ncols() as u64)?;
    for &v in m.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub(crate) fn read_matrix(r: &mut impl Read) -> Result<Array2<f64>> {
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let cols = r.read_u64::<LittleEndian>()? as usize;
    let mut data = vec![0.0; rows * cols];
    for v in data.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| FocError::parse(format!("tensor shape: {e}")))
}

pub(crate) fn write_vector(w: &mut impl Write, v: &Array1<f64>) -> Result<()> {
    w.write_u64::<LittleEndian>(v.len() as u64)?;
    for &x in v.iter() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub(crate) fn read_vector(r: &mut impl Read) -> Result<Array1<f64>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut data = vec![0.0; len];
    for v in data.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(Array1::from(data))
}

pub(crate) fn write_f64_slice(w: &mut impl Write, v: &[f64]) -> Result<()> {
    w.write_u32::<LittleEndian>(v.len() as u32)?;
    for &x in v {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub(crate) fn read_f64_slice(r: &mut impl Read) -> Result<Vec<f64>> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0; len];
    for v in data.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(data)
}
