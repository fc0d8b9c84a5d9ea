use crate::error::{Error, Result};

/// Binary weight mask over a flattened parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn ones(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn zeros(len: usize) -> Self {
        Mask(vec![false; len])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    /// Mask from 0/1 integers; any other value is rejected.
    pub fn from_u8(values: &[u8]) -> Result<Self> {
        values
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("mask entry {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Mask)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn all_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }

    pub fn slice(&self, start: usize, len: usize) -> Mask {
        Mask(self.0[start..start + len].to_vec())
    }

    /// Elementwise product (logical and).
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_len(other, "mask intersection")?;
        Ok(Mask(
            self.0.iter().zip(&other.0).map(|(&a, &b)| a && b).collect(),
        ))
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.0.len() == other.0.len() && !self.0.iter().zip(&other.0).any(|(&a, &b)| a && b)
    }

    /// Bit-packed bytes, least significant bit first.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.0.len().div_ceil(8)];
        for (i, &b) in self.0.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn unpack(bytes: &[u8], len: usize) -> Result<Mask> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "packed mask of {len} bits needs {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let bits: Vec<bool> = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        let padding = len % 8;
        if padding != 0 && bytes[len / 8] >> padding != 0 {
            return Err(Error::Format("nonzero padding bits in packed mask".into()));
        }
        Ok(Mask(bits))
    }

    fn check_len(&self, other: &Mask, context: &str) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::shape(context, &[self.0.len()], &[other.0.len()]));
        }
        Ok(())
    }
}

/// Elementwise sum of masks, as integer counts.
pub fn mask_sum(masks: &[Mask]) -> Vec<u32> {
    let len = masks.first().map_or(0, Mask::len);
    let mut sum = vec![0u32; len];
    for m in masks {
        for (s, &b) in sum.iter_mut().zip(m.bits()) {
            *s += b as u32;
        }
    }
    sum
}
