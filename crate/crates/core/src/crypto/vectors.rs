//! Binary test-vector files for mask expansion.
//!
//! A file is a sequence of records, each laid out as a 16-byte seed, a
//! 4-byte little-endian dimension, then `dim` 8-byte little-endian field
//! elements.

use std::io::{self, Read, Write};

use super::{expand_mask, FieldElement, Seed, MODULUS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    pub seed: Seed,
    pub elements: Vec<FieldElement>,
}

impl MaskVector {
    /// Record for `seed` expanded to `dim` elements with [`expand_mask`].
    pub fn generate(seed: Seed, dim: usize) -> Self {
        MaskVector { seed, elements: expand_mask(&seed, dim) }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let dim = u32::try_from(self.elements.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))?;
        w.write_all(&self.seed.0)?;
        w.write_all(&dim.to_le_bytes())?;
        for e in &self.elements {
            w.write_all(&e.value().to_le_bytes())?;
        }
        Ok(())
    }
}

/// Reads every record until end of input.
pub fn read_mask_vectors<R: Read>(r: &mut R) -> io::Result<Vec<MaskVector>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut out = Vec::new();
    let mut rest = bytes.as_slice();
    while !rest.is_empty() {
        if rest.len() < 20 {
            return Err(bad("truncated record header"));
        }
        let seed = Seed(rest[..16].try_into().expect("16 bytes"));
        let dim = u32::from_le_bytes(rest[16..20].try_into().expect("4 bytes")) as usize;
        rest = &rest[20..];
        if rest.len() < dim * 8 {
            return Err(bad("truncated record body"));
        }
        let elements = rest[..dim * 8]
            .chunks_exact(8)
            .map(|c| {
                let v = u64::from_le_bytes(c.try_into().expect("8 bytes"));
                if v < MODULUS {
                    Ok(FieldElement::new(v))
                } else {
                    Err(bad("element outside the field"))
                }
            })
            .collect::<io::Result<Vec<_>>>()?;
        rest = &rest[dim * 8..];
        out.push(MaskVector { seed, elements });
    }
    Ok(out)
}
