//! Classical verifier and simulated provers for parallel BB84 state preparation.
//!
//! A session is a sequence of rounds. Test rounds use `n` keys of one
//! uniformly chosen type and are checked either on preimages or on Hadamard
//! answers. The final preparation round uses per-copy key types `θ_i` and
//! leaves the honest prover holding `⊗ H^{θ_i}|v_i⟩`, where only the
//! verifier knows `v` and `θ`.

mod messages;
mod prover;
mod transcript;
mod transport;
mod verifier;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use messages::{Flag, Message, PreimagePair, RoundType};
pub use prover::{bb84_state, commit, commit_branches, commit_register, CheatStrategy, HonestProver, Prover, SimulatedProver};
pub use transcript::{replay, Body, Direction, LocalRecord, Mismatch, ProtocolTranscript, ReplayReport, RoundKind, TranscriptEntry};
pub use transport::{read_message, serve_prover, write_message, RemoteProver};
pub use verifier::{
    hadamard_flag, prep_outputs, preimage_flag, run_multi_round, run_multi_round_with_theta, run_prep_round, run_test_round,
    session_id, MultiRoundConfig, PrepRecord, ProtocolResult, Session, TestRoundRecord,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unexpected message: expected {expected}, got {got}")]
    UnexpectedMessage { expected: String, got: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("transcript parse error: {0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Entcf(#[from] crate::entcf::EntcfError),
    #[error(transparent)]
    Quantum(#[from] crate::quantum::QuantumError),
}

/// Deterministic per-party, per-round generator derived from a root seed.
pub fn derive_rng(root: u64, party: &str, index: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"rsp-rng");
    h.update(root.to_le_bytes());
    h.update((party.len() as u64).to_le_bytes());
    h.update(party.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;
    use rand::Rng;

    #[test]
    fn derived_streams_differ() {
        let a: u64 = derive_rng(1, "verifier", 0).gen();
        let b: u64 = derive_rng(1, "prover", 0).gen();
        let c: u64 = derive_rng(1, "verifier", 1).gen();
        assert!(a != b && a != c);
        assert_eq!(a, derive_rng(1, "verifier", 0).gen::<u64>());
    }

    #[test]
    fn honest_run_accepts_and_matches_ideal_state() {
        for seed in 0..5 {
            let cfg = MultiRoundConfig { n: 3, m: 4, width: 3, seed, ..Default::default() };
            let mut p = SimulatedProver::honest(seed);
            let res = run_multi_round(&cfg, &mut p).unwrap();
            assert!(res.accepted);
            assert_eq!(res.failures(), 0);
            let ideal = bb84_state(res.theta.as_ref().unwrap(), res.v.as_ref().unwrap()).unwrap();
            let f = res.prover_state.unwrap().fidelity(&ideal).unwrap();
            assert!((f - 1.0).abs() < 1e-9, "fidelity {f}");
            let rep = replay(&res.transcript).unwrap();
            assert!(rep.is_consistent(), "{:?}", rep.mismatches);
        }
    }

    #[test]
    fn transcript_round_trips_through_jsonl() {
        let cfg = MultiRoundConfig { n: 2, m: 3, width: 2, seed: 9, ..Default::default() };
        let res = run_multi_round(&cfg, &mut SimulatedProver::honest(9)).unwrap();
        let text = res.transcript.to_jsonl();
        let back = ProtocolTranscript::from_jsonl(&text).unwrap();
        assert_eq!(back, res.transcript);
    }

    #[test]
    fn flipped_answer_is_detected_on_replay() {
        let cfg = MultiRoundConfig { n: 2, m: 6, width: 2, seed: 4, ..Default::default() };
        let mut res = run_multi_round(&cfg, &mut SimulatedProver::honest(4)).unwrap();
        let target = res.transcript.entries.iter_mut().find_map(|e| match &mut e.msg {
            Body::Wire(Message::Answers { v }) => {
                v[0] ^= 1;
                Some(e.round)
            }
            _ => None,
        });
        let Some(round) = target else { return };
        let rep = replay(&res.transcript).unwrap();
        assert!(rep.mismatches.iter().any(|m| m.round == round && m.field == "flag"));
    }

    #[test]
    fn fixed_theta_is_used() {
        let theta: BitString = "101".parse().unwrap();
        let cfg = MultiRoundConfig { n: 3, m: 2, width: 2, seed: 2, ..Default::default() };
        let res = run_multi_round_with_theta(&cfg, Some(&theta), &mut SimulatedProver::honest(2)).unwrap();
        assert_eq!(res.theta.unwrap(), theta);
    }
}
