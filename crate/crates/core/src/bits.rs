//! Fixed-length bit strings with most-significant-bit-first hex encoding.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid hex string {0:?}")]
    InvalidHex(String),
    #[error("invalid bit string {0:?}")]
    InvalidBits(String),
    #[error("value does not fit in {0} bits")]
    Overflow(usize),
}

/// A bit string; index 0 is the leftmost (most significant) bit.
/// Serializes as a string of `0`/`1` characters.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitString(Vec<u8>);

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString(vec![0; len])
    }

    pub fn ones(len: usize) -> Self {
        BitString(vec![1; len])
    }

    /// Builds from 0/1 values; any nonzero entry counts as 1.
    pub fn from_bits(bits: &[u8]) -> Self {
        BitString(bits.iter().map(|&b| (b != 0) as u8).collect())
    }

    /// The low `len` bits of `value`, most significant first.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= 64, "from_u64 supports at most 64 bits");
        BitString((0..len).map(|i| ((value >> (len - 1 - i)) & 1) as u8).collect())
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        BitString((0..len).map(|_| rng.gen_range(0..2u8)).collect())
    }

    pub fn to_u64(&self) -> u64 {
        assert!(self.0.len() <= 64, "to_u64 supports at most 64 bits");
        self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, bit: u8) {
        self.0[i] = (bit != 0) as u8;
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, BitsError> {
        self.check_len(other)?;
        Ok(BitString(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect()))
    }

    /// Inner product mod 2.
    pub fn dot(&self, other: &BitString) -> Result<u8, BitsError> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).fold(0, |acc, (a, b)| acc ^ (a & b)))
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        BitString(v)
    }

    pub fn slice(&self, start: usize, end: usize) -> BitString {
        BitString(self.0[start..end].to_vec())
    }

    pub fn split_at(&self, mid: usize) -> (BitString, BitString) {
        (self.slice(0, mid), self.slice(mid, self.len()))
    }

    /// Lowercase hex, most significant bit first, left-padded to whole nibbles.
    pub fn to_hex(&self) -> String {
        let pad = (4 - self.0.len() % 4) % 4;
        let padded: Vec<u8> = std::iter::repeat_n(0, pad).chain(self.0.iter().copied()).collect();
        padded
            .chunks(4)
            .map(|c| {
                let nib = c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                std::char::from_digit(nib, 16).unwrap()
            })
            .collect()
    }

    /// Parses `to_hex` output back into a string of exactly `len` bits.
    pub fn from_hex(s: &str, len: usize) -> Result<BitString, BitsError> {
        let digits = len.div_ceil(4);
        if s.len() != digits || !s.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()) {
            return Err(BitsError::InvalidHex(s.to_string()));
        }
        let mut bits = Vec::with_capacity(digits * 4);
        for c in s.chars() {
            let nib = c.to_digit(16).unwrap();
            for k in (0..4).rev() {
                bits.push(((nib >> k) & 1) as u8);
            }
        }
        let pad = digits * 4 - len;
        if bits[..pad].iter().any(|&b| b != 0) {
            return Err(BitsError::Overflow(len));
        }
        Ok(BitString(bits[pad..].to_vec()))
    }

    /// Every bit string of the given length in lexicographic order.
    pub fn all(len: usize) -> impl Iterator<Item = BitString> {
        assert!(len < 64);
        (0..(1u64 << len)).map(move |v| BitString::from_u64(v, len))
    }

    fn check_len(&self, other: &BitString) -> Result<(), BitsError> {
        if self.len() != other.len() {
            return Err(BitsError::LengthMismatch(self.len(), other.len()));
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({})", self)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{}", b)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for BitString {
    type Err = BitsError;

    /// Parses a literal string of `0`/`1` characters.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(BitsError::InvalidBits(s.to_string())),
            })
            .collect::<Result<Vec<u8>, _>>()
            .map(BitString)
    }
}

impl From<BitString> for String {
    fn from(b: BitString) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for BitString {
    type Error = BitsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Parity of the bitwise AND of two integers.
pub fn parity_dot(a: u64, b: u64) -> u8 {
    ((a & b).count_ones() & 1) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_with_padding() {
        let b: BitString = "10110".parse().unwrap();
        assert_eq!(b.to_hex(), "16");
        assert_eq!(BitString::from_hex("16", 5).unwrap(), b);
        assert!(BitString::from_hex("36", 5).is_err());
        assert_eq!(BitString::zeros(0).to_hex(), "");
    }

    #[test]
    fn u64_msb_first() {
        let b = BitString::from_u64(0b1001, 4);
        assert_eq!(b.bits(), &[1, 0, 0, 1]);
        assert_eq!(b.to_u64(), 9);
    }

    #[test]
    fn dot_and_xor() {
        let a: BitString = "1101".parse().unwrap();
        let b: BitString = "1011".parse().unwrap();
        assert_eq!(a.dot(&b).unwrap(), 0);
        assert_eq!(a.xor(&b).unwrap().to_string(), "0110");
        assert!(a.xor(&BitString::zeros(3)).is_err());
        assert_eq!(parity_dot(0b1101, 0b1011), 0);
    }
}
