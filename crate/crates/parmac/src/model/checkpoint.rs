//! Model checkpoint serialization.
//!
//! Layout: magic `PMAC`, then little-endian `u32` version, `u32 L`, `u32 D`,
//! then the encoder matrix `A` (`L x (D+1)`, row-major f64, bias last per
//! row), then the decoder matrix `F` (`D x (L+1)`, same conventions).

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{BAModel, Decoder, Encoder, ModelError};

const MAGIC: &[u8; 4] = b"PMAC";
pub const CHECKPOINT_VERSION: u32 = 1;

// Dimensions above this are rejected as corrupt rather than allocated.
const MAX_SIDE: u32 = 1 << 24;

pub fn write_checkpoint<W: Write>(model: &BAModel, mut writer: W) -> Result<(), ModelError> {
    writer.write_all(MAGIC)?;
    writer.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    writer.write_u32::<LittleEndian>(model.bits() as u32)?;
    writer.write_u32::<LittleEndian>(model.dim() as u32)?;
    for &w in model.encoder.weights() {
        writer.write_f64::<LittleEndian>(w)?;
    }
    for &w in model.decoder.weights() {
        writer.write_f64::<LittleEndian>(w)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut reader: R) -> Result<BAModel, ModelError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = reader.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let l = reader.read_u32::<LittleEndian>().map_err(truncated)?;
    let d = reader.read_u32::<LittleEndian>().map_err(truncated)?;
    if l == 0 || d == 0 || l > MAX_SIDE || d > MAX_SIDE {
        return Err(ModelError::ShapeMismatch(format!(
            "implausible checkpoint dimensions L={l} D={d}"
        )));
    }
    let (l, d) = (l as usize, d as usize);
    let mut enc = vec![0.0; l * (d + 1)];
    for w in &mut enc {
        *w = reader.read_f64::<LittleEndian>().map_err(truncated)?;
    }
    let mut dec = vec![0.0; d * (l + 1)];
    for w in &mut dec {
        *w = reader.read_f64::<LittleEndian>().map_err(truncated)?;
    }
    // Anything left over means the header lied about the shape.
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(ModelError::ShapeMismatch(
            "trailing bytes after checkpoint payload".into(),
        ));
    }
    Ok(BAModel {
        encoder: Encoder::from_weights(l, d, enc)?,
        decoder: Decoder::from_weights(d, l, dec)?,
    })
}

fn truncated(e: std::io::Error) -> ModelError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ModelError::Truncated
    } else {
        ModelError::Io(e)
    }
}
