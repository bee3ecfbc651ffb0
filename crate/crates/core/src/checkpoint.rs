//! Binary checkpoint format (all integers and reals little-endian):
//!
//! ```text
//! offset  size        field
//! 0       8           magic "DENSEKGE"
//! 8       4   u32     format version (1)
//! 12      4   u32     flags: bit 0 rotation-only, bit 1 reciprocal relation table
//! 16      8   u64     k (units per embedding)
//! 24      8   u64     E (entity rows)
//! 32      8   u64     R′ (relation rows)
//! 40      E·k·3·8     entity table, f64, row-major [E][k][x, y, z]
//! ...     R′·k·4·8    relation table, f64, row-major [R′][k][a, b, c, d]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const MAGIC: &[u8; 8] = b"DENSEKGE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

const FLAG_ROTATION_ONLY: u32 = 1;
const FLAG_RECIPROCAL: u32 = 2;

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(HEADER_LEN + 8 * (params.entities.len() + params.relations.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mut flags = 0u32;
    if params.rotation_only {
        flags |= FLAG_ROTATION_ONLY;
    }
    if params.reciprocal {
        flags |= FLAG_RECIPROCAL;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    for n in [params.k(), params.num_entities(), params.num_relations()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in params.entities.iter().chain(&params.relations) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint("file shorter than header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let flags = u32_at(12);
    let (k, ne, nr) = (
        u64_at(16) as usize,
        u64_at(24) as usize,
        u64_at(32) as usize,
    );
    let n_ent = ne
        .checked_mul(k)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Checkpoint("entity table size overflows".into()))?;
    let n_rel = nr
        .checked_mul(k)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Checkpoint("relation table size overflows".into()))?;
    let expected = HEADER_LEN + 8 * (n_ent + n_rel);
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} bytes for k={k}, E={ne}, R={nr}, found {}",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let entities: Vec<f64> = values.by_ref().take(n_ent).collect();
    let relations: Vec<f64> = values.collect();
    let mut params = ModelParams::from_tables(k, ne, nr, entities, relations)?;
    params.rotation_only = flags & FLAG_ROTATION_ONLY != 0;
    params.reciprocal = flags & FLAG_RECIPROCAL != 0;
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_everything() {
        let mut p = init_params(5, 4, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        p.rotation_only = true;
        p.reciprocal = true;
        let bytes = encode(&p);
        assert_eq!(&bytes[..8], b"DENSEKGE");
        assert_eq!(bytes.len(), 40 + 8 * (5 * 9 + 4 * 12));
        assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let p = init_params(2, 1, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(decode(&bad).is_err());
    }
}
