//! Arithmetic in GF(2^w) and the affine pairwise-independent permutation family.
//!
//! An element is a `w`-bit integer whose bit `i` (least significant first) is
//! the coefficient of `x^i`. Each width uses a fixed irreducible polynomial:
//! the lowest trinomial `x^w + x^k + 1` (smallest `k`) when one exists, and
//! otherwise the pentanomial `x^w + x^a + x^b + x^c + 1` with `(a, b, c)`
//! lexicographically smallest.
//!
//! | w  | polynomial                  | w  | polynomial                  |
//! |----|-----------------------------|----|-----------------------------|
//! | 2  | x²+x+1                      | 3  | x³+x+1                      |
//! | 4  | x⁴+x+1                      | 5  | x⁵+x²+1                     |
//! | 6  | x⁶+x+1                      | 7  | x⁷+x+1                      |
//! | 8  | x⁸+x⁴+x³+x+1                | 9  | x⁹+x+1                      |
//! | 10 | x¹⁰+x³+1                    | 11 | x¹¹+x²+1                    |
//! | 12 | x¹²+x³+1                    | 13 | x¹³+x⁴+x³+x+1               |
//! | 14 | x¹⁴+x⁵+1                    | 15 | x¹⁵+x+1                     |
//! | 16 | x¹⁶+x⁵+x³+x+1               | 32 | x³²+x⁷+x³+x²+1              |
//! | 64 | x⁶⁴+x⁴+x³+x+1               |    |                             |
//!
//! The remaining widths up to 64 are listed in [`reduction_polynomial`].
//! Permutations are `π(x) = a·x + b` with `a ≠ 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;

pub const MIN_WIDTH: u32 = 2;
pub const MAX_WIDTH: u32 = 64;

/// Low-order terms of the reduction polynomial for widths 2..=64 (the x^w term is implicit).
const POLY_LOW: [u64; 63] = [
    0x3, 0x3, 0x3, 0x5, 0x3, 0x3, 0x1b, 0x3, 0x9, 0x5, 0x9, 0x1b, 0x21, 0x3, 0x2b, // 2..=16
    0x9, 0x9, 0x27, 0x9, 0x5, 0x3, 0x21, 0x1b, 0x9, 0x1b, 0x27, 0x3, 0x5, 0x3, 0x9, 0x8d, // 17..=32
    0x401, 0x81, 0x5, 0x201, 0x53, 0x63, 0x11, 0x39, 0x9, 0x81, 0x59, 0x21, 0x1b, 0x3, 0x21, 0x2d, // 33..=48
    0x201, 0x1d, 0x4b, 0x9, 0x47, 0x201, 0x81, 0x95, 0x11, 0x80001, 0x95, 0x3, 0x27, 0x20000001, 0x3, 0x1b, // 49..=64
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GfError {
    #[error("width {0} outside supported range {MIN_WIDTH}..={MAX_WIDTH}")]
    UnsupportedWidth(u32),
    #[error("width mismatch: {0} vs {1}")]
    WidthMismatch(u32, u32),
    #[error("value {value:#x} does not fit in {width} bits")]
    ValueTooLarge { value: u64, width: u32 },
    #[error("zero has no multiplicative inverse")]
    InverseOfZero,
    #[error("permutation multiplier must be nonzero")]
    ZeroMultiplier,
}

/// Low-order terms of the fixed reduction polynomial for `width`.
pub fn reduction_polynomial(width: u32) -> Result<u64, GfError> {
    check_width(width)?;
    Ok(POLY_LOW[(width - MIN_WIDTH) as usize])
}

fn check_width(width: u32) -> Result<(), GfError> {
    if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
        return Err(GfError::UnsupportedWidth(width));
    }
    Ok(())
}

fn mask(width: u32) -> u64 {
    if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldElement {
    bits: u64,
    width: u32,
}

impl FieldElement {
    pub fn new(bits: u64, width: u32) -> Result<Self, GfError> {
        check_width(width)?;
        if bits & !mask(width) != 0 {
            return Err(GfError::ValueTooLarge { value: bits, width });
        }
        Ok(FieldElement { bits, width })
    }

    pub fn zero(width: u32) -> Result<Self, GfError> {
        FieldElement::new(0, width)
    }

    pub fn one(width: u32) -> Result<Self, GfError> {
        FieldElement::new(1, width)
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    /// Reads a bit string of length `width`, first bit as the highest coefficient.
    pub fn from_bitstring(b: &BitString) -> Result<Self, GfError> {
        FieldElement::new(b.to_u64(), b.len() as u32)
    }

    pub fn to_bitstring(&self) -> BitString {
        BitString::from_u64(self.bits, self.width as usize)
    }

    pub fn add(&self, other: &FieldElement) -> Result<FieldElement, GfError> {
        same_width(self, other)?;
        Ok(FieldElement { bits: self.bits ^ other.bits, width: self.width })
    }
}

fn same_width(x: &FieldElement, y: &FieldElement) -> Result<(), GfError> {
    if x.width != y.width {
        return Err(GfError::WidthMismatch(x.width, y.width));
    }
    Ok(())
}

/// Carry-less product of two values below 2^64.
fn clmul(x: u64, y: u64) -> u128 {
    let mut acc = 0u128;
    let mut y = y;
    let mut shift = 0;
    while y != 0 {
        if y & 1 == 1 {
            acc ^= (x as u128) << shift;
        }
        y >>= 1;
        shift += 1;
    }
    acc
}

fn reduce(mut p: u128, width: u32, low: u64) -> u64 {
    let full = (1u128 << width) | low as u128;
    for deg in (width..128).rev() {
        if (p >> deg) & 1 == 1 {
            p ^= full << (deg - width);
        }
    }
    p as u64
}

pub fn gf_mul(x: &FieldElement, y: &FieldElement) -> Result<FieldElement, GfError> {
    same_width(x, y)?;
    let low = reduction_polynomial(x.width)?;
    Ok(FieldElement { bits: reduce(clmul(x.bits, y.bits), x.width, low), width: x.width })
}

/// Multiplicative inverse as x^(2^w − 2).
pub fn gf_inv(x: &FieldElement) -> Result<FieldElement, GfError> {
    if x.is_zero() {
        return Err(GfError::InverseOfZero);
    }
    let mut result = FieldElement::one(x.width)?;
    let mut base = *x;
    // 2^w − 2 = 0b11…10 (w − 1 ones followed by a zero).
    base = gf_mul(&base, &base)?;
    for _ in 1..x.width {
        result = gf_mul(&result, &base)?;
        base = gf_mul(&base, &base)?;
    }
    Ok(result)
}

/// Key of the permutation `x ↦ a·x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PermKey {
    a: FieldElement,
    b: FieldElement,
}

impl PermKey {
    pub fn new(a: FieldElement, b: FieldElement) -> Result<Self, GfError> {
        same_width(&a, &b)?;
        if a.is_zero() {
            return Err(GfError::ZeroMultiplier);
        }
        Ok(PermKey { a, b })
    }

    pub fn identity(width: u32) -> Result<Self, GfError> {
        PermKey::new(FieldElement::one(width)?, FieldElement::zero(width)?)
    }

    pub fn a(&self) -> FieldElement {
        self.a
    }

    pub fn b(&self) -> FieldElement {
        self.b
    }

    pub fn width(&self) -> u32 {
        self.a.width
    }

    /// Every key of the family for `width` (only sensible for small widths).
    pub fn all(width: u32) -> Result<Vec<PermKey>, GfError> {
        check_width(width)?;
        assert!(width <= 20, "enumerating the family is limited to small widths");
        let n = 1u64 << width;
        let mut keys = Vec::with_capacity(((n - 1) * n) as usize);
        for a in 1..n {
            for b in 0..n {
                keys.push(PermKey { a: FieldElement { bits: a, width }, b: FieldElement { bits: b, width } });
            }
        }
        Ok(keys)
    }

    pub fn eval_element(&self, x: &FieldElement) -> Result<FieldElement, GfError> {
        gf_mul(&self.a, x)?.add(&self.b)
    }

    pub fn invert_element(&self, y: &FieldElement) -> Result<FieldElement, GfError> {
        gf_mul(&gf_inv(&self.a)?, &y.add(&self.b)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PermKeyWire {
    width: u32,
    a_hex: String,
    b_hex: String,
}

impl Serialize for PermKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PermKeyWire { width: self.width(), a_hex: self.a.to_bitstring().to_hex(), b_hex: self.b.to_bitstring().to_hex() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PermKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let w = PermKeyWire::deserialize(d)?;
        let parse = |h: &str| -> Result<FieldElement, D::Error> {
            let b = BitString::from_hex(h, w.width as usize).map_err(D::Error::custom)?;
            FieldElement::from_bitstring(&b).map_err(D::Error::custom)
        };
        PermKey::new(parse(&w.a_hex)?, parse(&w.b_hex)?).map_err(D::Error::custom)
    }
}

/// Uniform nonzero `a`, uniform `b`.
pub fn pip_sample<R: Rng + ?Sized>(width: u32, rng: &mut R) -> Result<PermKey, GfError> {
    check_width(width)?;
    let m = mask(width);
    let a = loop {
        let v = rng.gen::<u64>() & m;
        if v != 0 {
            break v;
        }
    };
    let b = rng.gen::<u64>() & m;
    PermKey::new(FieldElement::new(a, width)?, FieldElement::new(b, width)?)
}

pub fn pip_eval(k: &PermKey, x: &BitString) -> Result<BitString, GfError> {
    check_len(k, x)?;
    Ok(k.eval_element(&FieldElement::from_bitstring(x)?)?.to_bitstring())
}

pub fn pip_invert(k: &PermKey, y: &BitString) -> Result<BitString, GfError> {
    check_len(k, y)?;
    Ok(k.invert_element(&FieldElement::from_bitstring(y)?)?.to_bitstring())
}

fn check_len(k: &PermKey, x: &BitString) -> Result<(), GfError> {
    if x.len() as u32 != k.width() {
        return Err(GfError::WidthMismatch(k.width(), x.len() as u32));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn fe(v: u64, w: u32) -> FieldElement {
        FieldElement::new(v, w).unwrap()
    }

    fn poly_mulmod(a: u128, b: u128, f: u128, deg: u32) -> u128 {
        let mut acc = 0u128;
        for i in 0..deg {
            if (b >> i) & 1 == 1 {
                acc ^= a << i;
            }
        }
        poly_mod(acc, f, deg)
    }

    fn poly_mod(mut p: u128, f: u128, deg: u32) -> u128 {
        for d in (deg..128).rev() {
            if (p >> d) & 1 == 1 {
                p ^= f << (d - deg);
            }
        }
        p
    }

    fn poly_deg(p: u128) -> i32 {
        127 - p.leading_zeros() as i32
    }

    fn poly_gcd(mut a: u128, mut b: u128) -> u128 {
        while b != 0 {
            let db = poly_deg(b);
            while a != 0 && poly_deg(a) >= db {
                a ^= b << (poly_deg(a) - db);
            }
            std::mem::swap(&mut a, &mut b);
        }
        a
    }

    /// Rabin's irreducibility test, independent of the field code.
    fn rabin_irreducible(low: u64, w: u32) -> bool {
        let f = (1u128 << w) | low as u128;
        let x_pow_2k = |k: u32| {
            let mut t = 2u128; // x
            for _ in 0..k {
                t = poly_mulmod(t, t, f, w);
            }
            t
        };
        if x_pow_2k(w) != 2 {
            return false;
        }
        let primes: Vec<u32> = (2..=w).filter(|p| w.is_multiple_of(*p) && (2..*p).all(|q| p % q != 0)).collect();
        primes.iter().all(|p| poly_gcd(f, x_pow_2k(w / p) ^ 2) == 1)
    }

    #[test]
    fn every_table_entry_is_irreducible() {
        for w in MIN_WIDTH..=MAX_WIDTH {
            assert!(rabin_irreducible(reduction_polynomial(w).unwrap(), w), "width {w}");
        }
        assert_eq!(reduction_polynomial(4).unwrap(), 0b0011);
        assert_eq!(reduction_polynomial(8).unwrap(), 0x1b);
        assert!(reduction_polynomial(1).is_err());
        assert!(reduction_polynomial(65).is_err());
    }

    #[test]
    fn mul_examples() {
        for x in 0..16 {
            assert_eq!(gf_mul(&fe(x, 4), &fe(1, 4)).unwrap(), fe(x, 4));
        }
        assert_eq!(gf_mul(&fe(0x2, 4), &fe(0x8, 4)).unwrap(), fe(0x3, 4));
        assert_eq!(gf_inv(&fe(1, 4)).unwrap(), fe(1, 4));
        // AES field: {57}·{83} = {c1}.
        assert_eq!(gf_mul(&fe(0x57, 8), &fe(0x83, 8)).unwrap(), fe(0xc1, 8));
        assert_eq!(gf_inv(&fe(0, 4)), Err(GfError::InverseOfZero));
        assert_eq!(gf_mul(&fe(1, 4), &fe(1, 5)), Err(GfError::WidthMismatch(4, 5)));
    }

    #[test]
    fn field_axioms_w4_exhaustive() {
        let w = 4;
        for a in 0..16 {
            for b in 0..16 {
                let (fa, fb) = (fe(a, w), fe(b, w));
                assert_eq!(gf_mul(&fa, &fb).unwrap(), gf_mul(&fb, &fa).unwrap());
                for c in 0..16 {
                    let fc = fe(c, w);
                    let l = gf_mul(&gf_mul(&fa, &fb).unwrap(), &fc).unwrap();
                    let r = gf_mul(&fa, &gf_mul(&fb, &fc).unwrap()).unwrap();
                    assert_eq!(l, r);
                    let d = gf_mul(&fa, &fb.add(&fc).unwrap()).unwrap();
                    assert_eq!(d, gf_mul(&fa, &fb).unwrap().add(&gf_mul(&fa, &fc).unwrap()).unwrap());
                }
            }
            if a != 0 {
                assert_eq!(gf_mul(&fe(a, w), &gf_inv(&fe(a, w)).unwrap()).unwrap(), fe(1, w));
            }
        }
    }

    #[test]
    fn inverses_at_large_widths() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for w in [16, 31, 48, 64] {
            for _ in 0..20 {
                let v = rng.gen::<u64>() & mask(w);
                if v == 0 {
                    continue;
                }
                let x = fe(v, w);
                assert_eq!(gf_mul(&x, &gf_inv(&x).unwrap()).unwrap(), fe(1, w));
            }
        }
    }

    #[test]
    fn identity_key_and_round_trip() {
        let id = PermKey::identity(4).unwrap();
        for x in BitString::all(4) {
            assert_eq!(pip_eval(&id, &x).unwrap(), x);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..20 {
            let k = pip_sample(4, &mut rng).unwrap();
            for x in BitString::all(4) {
                assert_eq!(pip_invert(&k, &pip_eval(&k, &x).unwrap()).unwrap(), x);
            }
        }
        assert!(pip_eval(&id, &BitString::zeros(3)).is_err());
        assert_eq!(PermKey::new(fe(0, 4), fe(1, 4)), Err(GfError::ZeroMultiplier));
    }

    #[test]
    fn pairwise_independence_exhaustive() {
        for w in 2..=4u32 {
            let keys = PermKey::all(w).unwrap();
            let n = 1usize << w;
            for (x1, x2) in [(0u64, 1u64), (1, (n - 1) as u64), (2, 3)] {
                let mut fwd = vec![0usize; n * n];
                let mut inv = vec![0usize; n * n];
                for k in &keys {
                    let y1 = k.eval_element(&fe(x1, w)).unwrap().bits() as usize;
                    let y2 = k.eval_element(&fe(x2, w)).unwrap().bits() as usize;
                    fwd[y1 * n + y2] += 1;
                    let z1 = k.invert_element(&fe(x1, w)).unwrap().bits() as usize;
                    let z2 = k.invert_element(&fe(x2, w)).unwrap().bits() as usize;
                    inv[z1 * n + z2] += 1;
                }
                for i in 0..n {
                    for j in 0..n {
                        let expected = if i == j { 0 } else { 1 };
                        assert_eq!(fwd[i * n + j], expected, "w={w}");
                        assert_eq!(inv[i * n + j], expected, "w={w}");
                    }
                }
            }
        }
    }

    #[test]
    fn perm_key_json_round_trip() {
        let k = PermKey::new(fe(0x5, 4), fe(0xc, 4)).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"width":4,"a_hex":"5","b_hex":"c"}"#);
        assert_eq!(serde_json::from_str::<PermKey>(&s).unwrap(), k);
        assert!(serde_json::from_str::<PermKey>(r#"{"width":4,"a_hex":"0","b_hex":"c"}"#).is_err());
    }
}
