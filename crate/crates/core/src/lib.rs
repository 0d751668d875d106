//! Classically-instructed parallel remote state preparation of BB84 states.
//!
//! The crate contains a dense quantum simulator ([`quantum`]), binary-field
//! arithmetic and pairwise-independent permutations ([`gf2`]), a functional
//! mock of an extended trapdoor claw-free function family ([`entcf`]), the
//! verifier/prover protocol machinery ([`protocol`]), numerical rigidity
//! diagnostics ([`rigidity`]) and the applications built on top:
//! unclonable encryption ([`unclonable`]), copy-protection of point
//! functions ([`copy_protection`]) and delegated computation glue
//! ([`delegation`]).
//!
//! The claw-free backend is insecure by design: public keys can be inverted.
//! It exists to make honest behaviour exact and every statistic checkable.

pub mod bits;
pub mod copy_protection;
pub mod delegation;
pub mod entcf;
pub mod gf2;
pub mod protocol;
pub mod quantum;
pub mod rigidity;
pub mod unclonable;

pub use bits::BitString;
pub use entcf::{BasisChoice, EntcfKeyPair, PublicKey, Trapdoor};
pub use gf2::{FieldElement, PermKey};

pub use protocol::{MultiRoundConfig, ProtocolResult, ProtocolTranscript};
pub use rigidity::Device;
pub use quantum::{DensityMatrix, Operator, QuantumState, StateVector, C64};

