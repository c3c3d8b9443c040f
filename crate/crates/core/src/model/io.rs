//! Flat binary weight format.
//!
//! ```text
//! magic        4 bytes  "MTIW"
//! version      u32 LE
//! vocab_size   u32 LE
//! dim          u32 LE
//! n_layers     u32 LE
//! n_heads      u32 LE
//! max_context  u32 LE
//! norm_eps     u32 LE   (IEEE-754 bit pattern of the f32)
//! tensors      f32 LE   in ModelWeights fill order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ModelConfig, ModelError, ModelWeights};

pub const MAGIC: [u8; 4] = *b"MTIW";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 7;

pub fn write_weights(weights: &ModelWeights, out: &mut impl Write) -> Result<(), ModelError> {
    let c = &weights.config;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * weights.parameter_count());
    buf.extend_from_slice(&MAGIC);
    for field in [
        FORMAT_VERSION,
        to_u32(c.vocab_size, "vocab_size")?,
        to_u32(c.dim, "dim")?,
        to_u32(c.n_layers, "n_layers")?,
        to_u32(c.n_heads, "n_heads")?,
        to_u32(c.max_context, "max_context")?,
        c.norm_eps.to_bits(),
    ] {
        buf.extend_from_slice(&field.to_le_bytes());
    }
    weights.visit(|_, t| {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    out.write_all(&buf)?;
    Ok(())
}

fn to_u32(v: usize, name: &str) -> Result<u32, ModelError> {
    u32::try_from(v).map_err(|_| ModelError::InvalidConfig(format!("{name} {v} exceeds u32")))
}

pub fn read_weights(bytes: &[u8]) -> Result<ModelWeights, ModelError> {
    if bytes.len() < 4 {
        return Err(ModelError::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(ModelError::BadMagic { found: magic });
    }
    if bytes.len() < 8 {
        return Err(ModelError::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let config = ModelConfig {
        vocab_size: word(1) as usize,
        dim: word(2) as usize,
        n_layers: word(3) as usize,
        n_heads: word(4) as usize,
        max_context: word(5) as usize,
        norm_eps: f32::from_bits(word(6)),
    };
    config
        .validate()
        .map_err(|e| ModelError::ShapeMismatch(format!("header describes an invalid model: {e}")))?;

    let mut weights = ModelWeights::zeros(config);
    let expected = HEADER_LEN + 4 * weights.parameter_count();
    if bytes.len() < expected {
        return Err(ModelError::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(ModelError::ShapeMismatch(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - expected
        )));
    }
    let mut chunks = bytes[HEADER_LEN..].chunks_exact(4);
    weights.visit_mut(|_, t| {
        for (v, c) in t.iter_mut().zip(&mut chunks) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
    });
    weights.check()?;
    Ok(weights)
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_weights(weights, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, ModelError> {
    read_weights(&fs::read(path)?)
}
