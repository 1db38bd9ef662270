//! fvecs / bvecs readers and writers.
//!
//! Both formats store one record per point: a little-endian `i32` dimension
//! followed by `dim` components (`f32` for fvecs, `u8` for bvecs). All
//! records in a file must share the same dimension. EOF is only legal at a
//! record boundary.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{DataError, Dataset};

// A dimension header beyond this is treated as a corrupt record rather than
// an allocation request.
const MAX_DIM: i32 = 1 << 24;

fn read_dim<R: Read>(
    reader: &mut R,
    offset: &mut u64,
    record: usize,
    expected: Option<usize>,
) -> Result<Option<usize>, DataError> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = reader.read(&mut header[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None); // clean EOF at a record boundary
            }
            return Err(DataError::MalformedRecord {
                offset: *offset + filled as u64,
                detail: "truncated dimension header".into(),
            });
        }
        filled += n;
    }
    *offset += 4;
    let dim = i32::from_le_bytes(header);
    if dim <= 0 || dim > MAX_DIM {
        return Err(DataError::MalformedRecord {
            offset: *offset - 4,
            detail: format!("dimension header {dim} out of range"),
        });
    }
    let dim = dim as usize;
    if let Some(expected) = expected {
        if dim != expected {
            return Err(DataError::InconsistentDim {
                record,
                expected,
                got: dim,
            });
        }
    }
    Ok(Some(dim))
}

/// Reads an entire fvecs stream into real-valued storage (f32 widened to
/// f64). An empty stream yields an empty dataset of dimension 0.
pub fn read_fvecs<R: Read>(mut reader: R) -> Result<Dataset, DataError> {
    let mut values: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut offset = 0u64;
    let mut record = 0usize;
    while let Some(d) = read_dim(&mut reader, &mut offset, record, dim)? {
        dim = Some(d);
        for _ in 0..d {
            let v = reader
                .read_f32::<LittleEndian>()
                .map_err(|_| DataError::MalformedRecord {
                    offset,
                    detail: format!("truncated components in record {record}"),
                })?;
            offset += 4;
            values.push(f64::from(v));
        }
        record += 1;
    }
    let dim = dim.unwrap_or(0);
    Dataset::from_real(record, dim, values)
}

/// Reads an entire bvecs stream into byte storage (decode scale 1).
pub fn read_bvecs<R: Read>(mut reader: R) -> Result<Dataset, DataError> {
    let mut bytes: Vec<u8> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut offset = 0u64;
    let mut record = 0usize;
    while let Some(d) = read_dim(&mut reader, &mut offset, record, dim)? {
        dim = Some(d);
        let start = bytes.len();
        bytes.resize(start + d, 0);
        reader
            .read_exact(&mut bytes[start..])
            .map_err(|_| DataError::MalformedRecord {
                offset,
                detail: format!("truncated components in record {record}"),
            })?;
        offset += d as u64;
        record += 1;
    }
    let dim = dim.unwrap_or(0);
    Dataset::from_bytes(record, dim, bytes, 1.0)
}

/// Writes a dataset as fvecs (components narrowed to f32).
pub fn write_fvecs<W: Write>(data: &Dataset, mut writer: W) -> Result<(), DataError> {
    let mut row = vec![0.0; data.dim()];
    for i in 0..data.n_points() {
        writer.write_i32::<LittleEndian>(data.dim() as i32)?;
        data.copy_row_into(i, &mut row);
        for &v in &row {
            writer.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(())
}

/// Writes a dataset as bvecs. Components must already be byte-valued
/// (integers in [0, 255] after decoding).
pub fn write_bvecs<W: Write>(data: &Dataset, mut writer: W) -> Result<(), DataError> {
    let mut row = vec![0.0; data.dim()];
    for i in 0..data.n_points() {
        writer.write_i32::<LittleEndian>(data.dim() as i32)?;
        data.copy_row_into(i, &mut row);
        for &v in &row {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(DataError::InvalidArgument(format!(
                    "value {v} in record {i} is not a byte"
                )));
            }
            writer.write_u8(v as u8)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fvecs_bytes(records: &[&[f32]]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in records {
            out.extend_from_slice(&(r.len() as i32).to_le_bytes());
            for v in *r {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn fvecs_reads_known_layout() {
        let raw = fvecs_bytes(&[&[1.0, -2.5], &[0.0, 4.0]]);
        let d = read_fvecs(&raw[..]).unwrap();
        assert_eq!(d.n_points(), 2);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.get(0, 1), -2.5);
        assert_eq!(d.get(1, 1), 4.0);
    }

    #[test]
    fn fvecs_empty_stream_is_empty_dataset() {
        let d = read_fvecs(&[][..]).unwrap();
        assert_eq!(d.n_points(), 0);
        assert_eq!(d.dim(), 0);
    }

    #[test]
    fn fvecs_rejects_truncated_record() {
        let mut raw = fvecs_bytes(&[&[1.0, 2.0]]);
        raw.truncate(raw.len() - 2);
        assert!(matches!(
            read_fvecs(&raw[..]),
            Err(DataError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn fvecs_rejects_dimension_change() {
        let mut raw = fvecs_bytes(&[&[1.0, 2.0]]);
        raw.extend_from_slice(&fvecs_bytes(&[&[1.0, 2.0, 3.0]]));
        assert!(matches!(
            read_fvecs(&raw[..]),
            Err(DataError::InconsistentDim {
                record: 1,
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn fvecs_rejects_partial_header() {
        let mut raw = fvecs_bytes(&[&[1.0]]);
        raw.extend_from_slice(&[7, 0]); // half a dimension header
        assert!(matches!(
            read_fvecs(&raw[..]),
            Err(DataError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn bvecs_roundtrip() {
        let d = Dataset::from_bytes(2, 3, vec![0, 127, 255, 1, 2, 3], 1.0).unwrap();
        let mut raw = Vec::new();
        write_bvecs(&d, &mut raw).unwrap();
        let back = read_bvecs(&raw[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn fvecs_roundtrip_exact_for_f32_values() {
        let d = Dataset::from_real(3, 2, vec![1.5, -0.25, 3.0, 0.0, -7.125, 2.0]).unwrap();
        let mut raw = Vec::new();
        write_fvecs(&d, &mut raw).unwrap();
        let back = read_fvecs(&raw[..]).unwrap();
        assert_eq!(back, d);
    }
}
