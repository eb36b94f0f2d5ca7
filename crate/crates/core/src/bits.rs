//! Packed bit strings.
//!
//! Bit `i` lives in word `i / 64` at position `i % 64`. The external byte
//! representation is most-significant-bit first: bit 0 of the string is the
//! high bit of byte 0.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(64)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Self::zeros(len);
        for i in 0..len {
            b.set(i, true);
        }
        b
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut b = Self::new();
        for bit in iter {
            b.push(bit);
        }
        b
    }

    /// Parses a string of `'0'`/`'1'` characters; ASCII whitespace is skipped.
    pub fn from_ascii01(s: &str) -> Result<Self> {
        let mut b = Self::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => b.push(false),
                '1' => b.push(true),
                c if c.is_ascii_whitespace() => {}
                c => return Err(Error::Input(format!("unexpected character {c:?} in bit string"))),
            }
        }
        Ok(b)
    }

    pub fn from_msb_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if len > bytes.len() * 8 {
            return Err(Error::LengthMismatch {
                expected: len.div_ceil(8),
                got: bytes.len(),
            });
        }
        let mut b = Self::with_capacity(len);
        for i in 0..len {
            b.push((bytes[i / 8] >> (7 - i % 8)) & 1 == 1);
        }
        Ok(b)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        if bit {
            self.words[self.len / 64] |= 1 << (self.len % 64);
        }
        self.len += 1;
    }

    /// Appends the `width` low bits of `value`, most significant first.
    pub fn push_word(&mut self, value: u32, width: u32) {
        for k in (0..width).rev() {
            self.push((value >> k) & 1 == 1);
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        if bit {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &Bits) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: other.len,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub fn xor(&self, other: &Bits) -> Result<Bits> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: other.len,
            });
        }
        Ok(Bits {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        })
    }

    pub fn not(&self) -> Bits {
        Bits::from_bools(self.iter().map(|b| !b))
    }

    pub fn extend(&mut self, other: &Bits) {
        if self.len.is_multiple_of(64) {
            self.words.truncate(self.len / 64);
            self.words.extend_from_slice(&other.words);
            self.len += other.len;
        } else {
            for bit in other.iter() {
                self.push(bit);
            }
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Bits {
        assert!(start <= end && end <= self.len);
        Bits::from_bools((start..end).map(|i| self.get(i)))
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i / 64] >> (i % 64)) & 1 == 1)
    }

    /// One byte per bit with value 0 or 1.
    pub fn to_vec01(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    pub fn to_msb_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for (i, bit) in self.iter().enumerate() {
            if bit {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn to_ascii01(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }
}

impl FromIterator<bool> for Bits {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Bits::from_bools(iter)
    }
}

#[derive(Serialize, Deserialize)]
struct BitsRepr {
    len: usize,
    hex: String,
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BitsRepr {
            len: self.len,
            hex: hex::encode(self.to_msb_bytes()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = BitsRepr::deserialize(deserializer)?;
        let bytes = hex::decode(&repr.hex).map_err(serde::de::Error::custom)?;
        Bits::from_msb_bytes(&bytes, repr.len).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msb_first_byte_order() {
        let b = Bits::from_ascii01("10110001").unwrap();
        assert_eq!(b.to_msb_bytes(), vec![0xB1]);
    }

    #[test]
    fn push_word_is_msb_first() {
        let mut b = Bits::new();
        b.push_word(0b1101, 4);
        assert_eq!(b.to_ascii01(), "1101");
    }

    #[test]
    fn hamming_rejects_length_mismatch() {
        assert!(Bits::zeros(3).hamming(&Bits::zeros(4)).is_err());
    }

    #[test]
    fn extend_across_word_boundary() {
        let mut a = Bits::ones(70);
        a.extend(&Bits::zeros(70));
        assert_eq!(a.len(), 140);
        assert_eq!(a.count_ones(), 70);
        let mut c = Bits::ones(64);
        c.extend(&Bits::ones(3));
        assert_eq!(c.count_ones(), 67);
    }

    proptest! {
        #[test]
        fn byte_and_serde_round_trip(v in proptest::collection::vec(any::<bool>(), 0..300)) {
            let b = Bits::from_bools(v.iter().copied());
            let back = Bits::from_msb_bytes(&b.to_msb_bytes(), b.len()).unwrap();
            prop_assert_eq!(&back, &b);
            let json = serde_json::to_string(&b).unwrap();
            let back: Bits = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
