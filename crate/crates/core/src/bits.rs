//! Small bit containers used across the crate.
//!
//! [`BitString`] is an ordered sequence of bits, the unit of communication on
//! the blackboard. [`ItemMask`] is a fixed-universe bitset used by the welfare
//! oracles, where unions and popcounts dominate the running time.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An ordered bit sequence. Equality and hashing are exact, which the
/// rejection samplers rely on when matching messages.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BitString { bits }
    }

    /// Single-bit string, handy for one-bit protocols.
    pub fn from_bit(b: bool) -> Self {
        BitString { bits: vec![b] }
    }

    pub fn push(&mut self, b: bool) {
        self.bits.push(b);
    }

    /// Appends `v` as exactly 32 bits, most significant first.
    pub fn push_u32(&mut self, v: u32) {
        for i in (0..32).rev() {
            self.bits.push((v >> i) & 1 == 1);
        }
    }

    /// Reads back 32 bits starting at `pos`. Returns `None` past the end.
    pub fn read_u32(&self, pos: usize) -> Option<u32> {
        if pos + 32 > self.bits.len() {
            return None;
        }
        let mut v = 0u32;
        for i in 0..32 {
            v = (v << 1) | u32::from(self.bits[pos + i]);
        }
        Some(v)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }
}

impl std::fmt::Display for BitString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Serialized as a compact "0101" string so transcripts stay readable.
impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let mut bits = Vec::with_capacity(text.len());
        for c in text.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return Err(D::Error::custom("bit string must contain only 0 and 1")),
            }
        }
        Ok(BitString { bits })
    }
}

/// Fixed-universe bitset over item indices `0..m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemMask {
    words: Vec<u64>,
}

impl ItemMask {
    pub fn empty(universe: usize) -> Self {
        ItemMask { words: vec![0; universe.div_ceil(64)] }
    }

    pub fn from_items(universe: usize, items: &[u32]) -> Self {
        let mut mask = Self::empty(universe);
        for &it in items {
            mask.insert(it);
        }
        mask
    }

    pub fn insert(&mut self, item: u32) {
        self.words[item as usize / 64] |= 1u64 << (item % 64);
    }

    pub fn contains(&self, item: u32) -> bool {
        (self.words[item as usize / 64] >> (item % 64)) & 1 == 1
    }

    pub fn union_with(&mut self, other: &ItemMask) {
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w |= o;
        }
    }

    pub fn intersect_with(&mut self, other: &ItemMask) {
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w &= o;
        }
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Number of bits in `other` not already present in `self`.
    pub fn marginal(&self, other: &ItemMask) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(w, o)| (o & !w).count_ones())
            .sum()
    }

    pub fn intersect_count(&self, other: &ItemMask) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(w, o)| (w & o).count_ones())
            .sum()
    }

    pub fn iter_items(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64).filter_map(move |b| {
                if (w >> b) & 1 == 1 {
                    Some((wi * 64 + b) as u32)
                } else {
                    None
                }
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u32_roundtrip() {
        let mut s = BitString::new();
        s.push_u32(0xdead_beef);
        s.push_u32(7);
        assert_eq!(s.len(), 64);
        assert_eq!(s.read_u32(0), Some(0xdead_beef));
        assert_eq!(s.read_u32(32), Some(7));
        assert_eq!(s.read_u32(33), None);
    }

    #[test]
    fn display_and_serde_agree() {
        let s = BitString::from_bits(vec![true, false, true, true]);
        assert_eq!(s.to_string(), "1011");
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"1011\"");
        let back: BitString = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn mask_marginal_counts_new_bits_only() {
        let a = ItemMask::from_items(130, &[0, 64, 129]);
        let b = ItemMask::from_items(130, &[64, 65, 129]);
        assert_eq!(a.marginal(&b), 1);
        assert_eq!(a.intersect_count(&b), 2);
        let mut u = a.clone();
        u.union_with(&b);
        assert_eq!(u.count(), 4);
        assert_eq!(u.iter_items().collect::<Vec<_>>(), vec![0, 64, 65, 129]);
    }
}
