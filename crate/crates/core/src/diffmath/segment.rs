//! Binary parameter segments.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u32 name_len, name bytes          segment name
//! u64 step                          optimizer step counter
//! u32 count                         number of parameters
//! count × manifest entry:
//!     u32 name_len, name bytes
//!     u32 rank, rank × u64 extent
//!     u64 offset                    element offset of the value block
//! u64 data_len                      number of f64 elements that follow
//! data_len × f64                    per parameter: value, first moment,
//!                                   second moment, each `numel` long
//! ```

use std::io::{Read, Write};

use super::array::Array;
use super::params::ParameterSet;

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed segment: {0}")]
    Format(String),
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn get_u32(r: &mut impl Read) -> Result<u32, SegmentError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_u64(r: &mut impl Read) -> Result<u64, SegmentError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_str(r: &mut impl Read) -> Result<String, SegmentError> {
    let len = get_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(SegmentError::Format(format!("string length {len}")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| SegmentError::Format(e.to_string()))
}

pub fn write_segment(w: &mut impl Write, name: &str, params: &ParameterSet) -> Result<(), SegmentError> {
    let (names, values, m, v) = params.parts();
    put_str(w, name)?;
    put_u64(w, params.step())?;
    put_u32(w, names.len() as u32)?;
    let mut offset = 0u64;
    for (n, val) in names.iter().zip(values) {
        put_str(w, n)?;
        put_u32(w, val.shape().len() as u32)?;
        for &d in val.shape() {
            put_u64(w, d as u64)?;
        }
        put_u64(w, offset)?;
        offset += 3 * val.len() as u64;
    }
    put_u64(w, offset)?;
    for i in 0..names.len() {
        for block in [values[i].data(), m[i].data(), v[i].data()] {
            for x in block {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_segment(r: &mut impl Read) -> Result<(String, ParameterSet), SegmentError> {
    let seg_name = get_str(r)?;
    let step = get_u64(r)?;
    let count = get_u32(r)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name = get_str(r)?;
        let rank = get_u32(r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(SegmentError::Format(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank)
            .map(|_| get_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let offset = get_u64(r)? as usize;
        manifest.push((name, shape, offset));
    }
    let data_len = get_u64(r)? as usize;
    let expected: usize = manifest
        .iter()
        .map(|(_, s, _)| 3 * s.iter().product::<usize>())
        .sum();
    if data_len != expected {
        return Err(SegmentError::Format(format!(
            "data length {data_len}, manifest implies {expected}"
        )));
    }
    let mut data = vec![0f64; data_len];
    let mut b = [0u8; 8];
    for x in data.iter_mut() {
        r.read_exact(&mut b)?;
        *x = f64::from_le_bytes(b);
    }
    let mut names = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    let mut first = Vec::with_capacity(count);
    let mut second = Vec::with_capacity(count);
    for (name, shape, offset) in manifest {
        let n: usize = shape.iter().product();
        if offset + 3 * n > data.len() {
            return Err(SegmentError::Format(format!("offset out of range for {name}")));
        }
        let block = |k: usize| {
            Array::new(&shape, data[offset + k * n..offset + (k + 1) * n].to_vec())
                .map_err(|e| SegmentError::Format(e.to_string()))
        };
        values.push(block(0)?);
        first.push(block(1)?);
        second.push(block(2)?);
        names.push(name);
    }
    Ok((seg_name, ParameterSet::from_parts(names, values, first, second, step)))
}
