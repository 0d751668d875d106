//! Functional mock of an extended trapdoor claw-free function family.
//!
//! **Not secure.** A public key carries everything needed to invert it. The
//! backend is noiseless: every `f_{k,b}(x)` is a single point, so honest
//! provers pass every check with probability exactly one.
//!
//! A key fixes a keyed permutation `π` on `w + 1` bits (an 8-round
//! alternating Feistel network). Injective keys (θ = 0) evaluate
//! `y = π(b ‖ x)`; claw-free keys (θ = 1) evaluate `y = π(0 ‖ (x ⊕ b·Δ))`
//! for a secret nonzero offset `Δ`, so `(x, x ⊕ Δ)` is the claw of `y`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::parity_dot;

pub const MIN_WIDTH: u32 = 2;
pub const MAX_WIDTH: u32 = 16;
const ROUNDS: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EntcfError {
    #[error("width {0} outside {MIN_WIDTH}..={MAX_WIDTH}")]
    WidthOutOfRange(u32),
    #[error("operation requires a {expected:?}-mode trapdoor")]
    ModeMismatch { expected: BasisChoice },
    #[error("image {0:#x} is not in the image set")]
    InvalidImage(u64),
    #[error("image {0:#x} has no preimages under this key")]
    OutsideSupport(u64),
    #[error("value {value:#x} does not fit in {bits} bits")]
    OutOfRange { value: u64, bits: u32 },
    #[error("malformed key: {0}")]
    Malformed(String),
}

/// Basis bit θ: 0 selects injective keys (computational basis), 1 claw-free keys (Hadamard basis).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum BasisChoice {
    Computational,
    Hadamard,
}

impl BasisChoice {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            BasisChoice::Computational
        } else {
            BasisChoice::Hadamard
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            BasisChoice::Computational => 0,
            BasisChoice::Hadamard => 1,
        }
    }
}

impl From<BasisChoice> for u8 {
    fn from(b: BasisChoice) -> u8 {
        b.bit()
    }
}

impl TryFrom<u8> for BasisChoice {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(BasisChoice::Computational),
            1 => Ok(BasisChoice::Hadamard),
            _ => Err(format!("basis choice must be 0 or 1, got {v}")),
        }
    }
}

/// Alternating Feistel permutation on `bits` bits; the left part holds ⌈bits/2⌉ bits.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Feistel {
    left: u32,
    right: u32,
    round_keys: [u64; ROUNDS],
}

fn mix(k: u64, v: u64) -> u64 {
    let mut z = k ^ v.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Feistel {
    fn new(seed: &[u8; 16], bits: u32) -> Self {
        let left = bits.div_ceil(2);
        let mut round_keys = [0u64; ROUNDS];
        for (i, rk) in round_keys.iter_mut().enumerate() {
            let mut h = Sha256::new();
            h.update(b"entcf-feistel");
            h.update(seed);
            h.update([i as u8]);
            let d = h.finalize();
            *rk = u64::from_le_bytes(d[..8].try_into().unwrap());
        }
        Feistel { left, right: bits - left, round_keys }
    }

    fn round(&self, i: usize, l: &mut u64, r: &mut u64) {
        let lmask = (1u64 << self.left) - 1;
        let rmask = (1u64 << self.right) - 1;
        if i.is_multiple_of(2) {
            *l ^= mix(self.round_keys[i], *r) & lmask;
        } else {
            *r ^= mix(self.round_keys[i], *l) & rmask;
        }
    }

    fn forward(&self, v: u64) -> u64 {
        let (mut l, mut r) = (v >> self.right, v & ((1u64 << self.right) - 1));
        for i in 0..ROUNDS {
            self.round(i, &mut l, &mut r);
        }
        (l << self.right) | r
    }

    fn inverse(&self, v: u64) -> u64 {
        let (mut l, mut r) = (v >> self.right, v & ((1u64 << self.right) - 1));
        for i in (0..ROUNDS).rev() {
            self.round(i, &mut l, &mut r);
        }
        (l << self.right) | r
    }
}

/// Wire/disk form shared by public keys and trapdoors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct KeyRecord {
    mode: BasisChoice,
    width: u32,
    seed_hex: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    delta_hex: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct KeyCore {
    mode: BasisChoice,
    width: u32,
    seed: [u8; 16],
    delta: Option<u64>,
    prp: Feistel,
}

impl KeyCore {
    fn new(mode: BasisChoice, width: u32, seed: [u8; 16], delta: Option<u64>) -> Result<Self, EntcfError> {
        if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
            return Err(EntcfError::WidthOutOfRange(width));
        }
        match (mode, delta) {
            (BasisChoice::Computational, Some(_)) => return Err(EntcfError::Malformed("injective key with a claw offset".into())),
            (BasisChoice::Hadamard, None) => return Err(EntcfError::Malformed("claw-free key without a claw offset".into())),
            (BasisChoice::Hadamard, Some(d)) if d == 0 || d >> width != 0 => {
                return Err(EntcfError::Malformed(format!("invalid claw offset {d:#x}")))
            }
            _ => {}
        }
        Ok(KeyCore { mode, width, seed, delta, prp: Feistel::new(&seed, width + 1) })
    }

    fn record(&self) -> KeyRecord {
        KeyRecord {
            mode: self.mode,
            width: self.width,
            seed_hex: hex::encode(self.seed),
            delta_hex: self.delta.map(|d| crate::bits::BitString::from_u64(d, self.width as usize).to_hex()),
        }
    }

    fn from_record(r: KeyRecord) -> Result<Self, EntcfError> {
        let seed: [u8; 16] = hex::decode(&r.seed_hex)
            .map_err(|e| EntcfError::Malformed(e.to_string()))?
            .try_into()
            .map_err(|_| EntcfError::Malformed("seed must be 16 bytes".into()))?;
        let delta = match r.delta_hex {
            Some(h) => Some(
                crate::bits::BitString::from_hex(&h, r.width as usize)
                    .map_err(|e| EntcfError::Malformed(e.to_string()))?
                    .to_u64(),
            ),
            None => None,
        };
        KeyCore::new(r.mode, r.width, seed, delta)
    }
}

macro_rules! key_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                self.0.record().serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let r = KeyRecord::deserialize(d)?;
                KeyCore::from_record(r).map(Self).map_err(serde::de::Error::custom)
            }
        }
    };
}

/// Evaluation key sent to the prover.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey(KeyCore);

/// Inversion capability kept by the verifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trapdoor(KeyCore);

key_serde!(PublicKey);
key_serde!(Trapdoor);

impl PublicKey {
    pub fn mode(&self) -> BasisChoice {
        self.0.mode
    }

    pub fn width(&self) -> u32 {
        self.0.width
    }

    /// Bits in an image point (`w + 1`).
    pub fn image_bits(&self) -> u32 {
        self.0.width + 1
    }
}

impl Trapdoor {
    pub fn mode(&self) -> BasisChoice {
        self.0.mode
    }

    pub fn width(&self) -> u32 {
        self.0.width
    }

    /// Claw offset Δ (claw-free mode only).
    pub fn delta(&self) -> Option<u64> {
        self.0.delta
    }

    /// The public key this trapdoor belongs to.
    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntcfKeyPair {
    pub key: PublicKey,
    pub trapdoor: Trapdoor,
}

/// Samples a fresh key pair; claw-free keys get a uniform nonzero Δ.
pub fn gen<R: Rng + ?Sized>(mode: BasisChoice, width: u32, rng: &mut R) -> Result<EntcfKeyPair, EntcfError> {
    if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
        return Err(EntcfError::WidthOutOfRange(width));
    }
    let seed: [u8; 16] = rng.gen();
    let delta = match mode {
        BasisChoice::Computational => None,
        BasisChoice::Hadamard => Some(rng.gen_range(1..(1u64 << width))),
    };
    let core = KeyCore::new(mode, width, seed, delta)?;
    Ok(EntcfKeyPair { key: PublicKey(core.clone()), trapdoor: Trapdoor(core) })
}

/// `f_{k,b}(x)`. Panics if `b > 1` or `x` has more than `w` bits.
pub fn eval(key: &PublicKey, b: u8, x: u64) -> u64 {
    let k = &key.0;
    assert!(b <= 1 && x >> k.width == 0, "eval input out of range");
    let pre = match k.delta {
        None => ((b as u64) << k.width) | x,
        Some(delta) => x ^ if b == 1 { delta } else { 0 },
    };
    k.prp.forward(pre)
}

/// Whether `y` is the image of `(b, x)`; false for out-of-range inputs.
pub fn chk(key: &PublicKey, y: u64, b: u8, x: u64) -> bool {
    let w = key.0.width;
    b <= 1 && x >> w == 0 && y >> (w + 1) == 0 && eval(key, b, x) == y
}

fn check_image(td: &Trapdoor, y: u64) -> Result<(), EntcfError> {
    if y >> (td.0.width + 1) != 0 {
        return Err(EntcfError::InvalidImage(y));
    }
    Ok(())
}

/// `b̂(k, y)`: first bit of `π⁻¹(y)`; injective keys only.
pub fn decode_b(td: &Trapdoor, y: u64) -> Result<u8, EntcfError> {
    if td.0.mode != BasisChoice::Computational {
        return Err(EntcfError::ModeMismatch { expected: BasisChoice::Computational });
    }
    check_image(td, y)?;
    Ok((td.0.prp.inverse(y) >> td.0.width) as u8)
}

/// `x̂_b(k, y)`, or `None` (⊥) when `y` has no preimage with first bit `b`.
pub fn decode_x(td: &Trapdoor, y: u64, b: u8) -> Result<Option<u64>, EntcfError> {
    check_image(td, y)?;
    let w = td.0.width;
    let pre = td.0.prp.inverse(y);
    let (tag, z) = (pre >> w, pre & ((1u64 << w) - 1));
    Ok(match td.0.delta {
        None => (tag == b as u64).then_some(z),
        Some(delta) => (tag == 0).then_some(z ^ if b == 1 { delta } else { 0 }),
    })
}

/// `û(k, y, d) = d · (x̂_0 ⊕ x̂_1)`; claw-free keys and in-support images only.
pub fn decode_u(td: &Trapdoor, y: u64, d: u64) -> Result<u8, EntcfError> {
    if td.0.delta.is_none() {
        return Err(EntcfError::ModeMismatch { expected: BasisChoice::Hadamard });
    }
    if d >> td.0.width != 0 {
        return Err(EntcfError::OutOfRange { value: d, bits: td.0.width });
    }
    let x0 = decode_x(td, y, 0)?.ok_or(EntcfError::OutsideSupport(y))?;
    let x1 = decode_x(td, y, 1)?.ok_or(EntcfError::OutsideSupport(y))?;
    Ok(parity_dot(d, x0 ^ x1))
}

/// `d · Δ`, which equals `û(k, y, d)` for every in-support `y` in this backend.
pub fn claw_parity(td: &Trapdoor, d: u64) -> Result<u8, EntcfError> {
    let delta = td.0.delta.ok_or(EntcfError::ModeMismatch { expected: BasisChoice::Hadamard })?;
    Ok(parity_dot(d, delta))
}
