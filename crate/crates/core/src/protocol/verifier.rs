//! Verifier side: test rounds, the preparation round and the multi-round driver.

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bits::BitString;
use crate::entcf::{self, BasisChoice, PublicKey, Trapdoor};
use crate::quantum::QuantumState;

use super::messages::{
    decode_bits, decode_pairs, decode_values, Flag, Message, RoundType,
};
use super::transcript::{Body, Direction, LocalRecord, ProtocolTranscript, RoundKind};
use super::{derive_rng, Prover, ProtocolError};

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct MultiRoundConfig {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub width: u32,
    pub seed: u64,
    /// Also apply the block threshold to the trailing `R − 1` rounds.
    pub strict: bool,
}

impl Default for MultiRoundConfig {
    fn default() -> Self {
        MultiRoundConfig { n: 1, m: 8, delta: 0.05, width: 4, seed: 0, strict: false }
    }
}

impl MultiRoundConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n == 0 || self.n > crate::quantum::MAX_QUBITS {
            return Err(ProtocolError::Config(format!("n must be in 1..={}", crate::quantum::MAX_QUBITS)));
        }
        if self.m == 0 {
            return Err(ProtocolError::Config("m must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(ProtocolError::Config("delta must lie in [0, 1]".into()));
        }
        if !(entcf::MIN_WIDTH..=entcf::MAX_WIDTH).contains(&self.width) {
            return Err(ProtocolError::Config(format!("width must be in {}..={}", entcf::MIN_WIDTH, entcf::MAX_WIDTH)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestRoundRecord {
    pub round: u32,
    pub theta: u8,
    pub round_type: RoundType,
    pub flag: Flag,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrepRecord {
    pub round: u32,
    pub theta: BitString,
    pub v: BitString,
}

#[derive(Clone, Debug)]
pub struct ProtocolResult {
    pub accepted: bool,
    pub theta: Option<BitString>,
    pub v: Option<BitString>,
    /// 1-based index of the block that triggered rejection; `s + 1` for the trailing rounds.
    pub abort_block: Option<usize>,
    pub s: usize,
    pub r: usize,
    pub test_rounds: Vec<TestRoundRecord>,
    pub transcript: ProtocolTranscript,
    pub prover_state: Option<QuantumState>,
}

impl ProtocolResult {
    pub fn failures(&self) -> usize {
        self.test_rounds.iter().filter(|t| !t.flag.is_ok()).count()
    }
}

/// Checks preimages against the public keys.
pub fn preimage_flag(keys: &[PublicKey], ys: &[u64], pairs: &[(u8, u64)]) -> Flag {
    let ok = keys.len() == ys.len()
        && ys.len() == pairs.len()
        && keys.iter().zip(ys).zip(pairs).all(|((k, &y), &(b, x))| entcf::chk(k, y, b, x));
    if ok {
        Flag::Ok
    } else {
        Flag::FailPre
    }
}

/// Checks Hadamard-round answers: `v_i = b̂(k_i, y_i)` for θ = 0 and
/// `v_i = û(k_i, y_i, d_i)` for θ = 1, at every index. Images outside the
/// support fail.
pub fn hadamard_flag(tds: &[Trapdoor], theta: u8, ys: &[u64], ds: &[u64], v: &[u8]) -> Flag {
    let n = tds.len();
    if ys.len() != n || ds.len() != n || v.len() != n {
        return Flag::FailHad;
    }
    let ok = tds.iter().zip(ys).zip(ds).zip(v).all(|(((td, &y), &d), &vi)| {
        let expected = if theta == 0 { entcf::decode_b(td, y) } else { entcf::decode_u(td, y, d) };
        expected == Ok(vi)
    });
    if ok {
        Flag::Ok
    } else {
        Flag::FailHad
    }
}

/// Verifier outputs of the preparation round: `b̂` for θ_i = 0, `û` for θ_i = 1.
pub fn prep_outputs(tds: &[Trapdoor], theta: &[u8], ys: &[u64], ds: &[u64]) -> Result<Vec<u8>, ProtocolError> {
    tds.iter()
        .zip(theta)
        .zip(ys.iter().zip(ds))
        .map(|((td, &t), (&y, &d))| {
            let r = if t == 0 { entcf::decode_b(td, y) } else { entcf::decode_u(td, y, d) };
            r.map_err(|e| ProtocolError::Malformed(format!("preparation round: {e}")))
        })
        .collect()
}

/// Block bookkeeping for accept/reject decisions.
pub(crate) struct BlockTally {
    m: usize,
    delta: f64,
    s: usize,
    r: usize,
    strict: bool,
    count: usize,
    block_fail: usize,
    trailing_fail: usize,
}

impl BlockTally {
    pub(crate) fn new(m: usize, delta: f64, s: usize, r: usize, strict: bool) -> Self {
        BlockTally { m, delta, s, r, strict, count: 0, block_fail: 0, trailing_fail: 0 }
    }

    pub(crate) fn total(&self) -> usize {
        self.s * self.m + self.r - 1
    }

    /// Records one flag; returns the aborting block index if the threshold is exceeded.
    pub(crate) fn record(&mut self, flag: Flag) -> Option<usize> {
        let idx = self.count;
        self.count += 1;
        let fail = !flag.is_ok() as usize;
        if idx < self.s * self.m {
            self.block_fail += fail;
            if (idx + 1).is_multiple_of(self.m) {
                let frac = self.block_fail as f64 / self.m as f64;
                self.block_fail = 0;
                if frac > self.delta {
                    return Some((idx + 1) / self.m);
                }
            }
        } else {
            self.trailing_fail += fail;
            if self.count == self.total() && self.strict {
                let frac = self.trailing_fail as f64 / (self.r - 1) as f64;
                if frac > self.delta {
                    return Some(self.s + 1);
                }
            }
        }
        None
    }

    pub(crate) fn complete(&self) -> bool {
        self.count == self.total()
    }
}

/// Round index, trapdoors, public keys and images of one key exchange.
type KeyExchange = (u32, Vec<Trapdoor>, Vec<PublicKey>, Vec<u64>);

/// One verifier session talking to one prover.
pub struct Session<'a> {
    session_id: String,
    n: usize,
    width: u32,
    prover: &'a mut dyn Prover,
    transcript: ProtocolTranscript,
    next_round: u32,
}

impl<'a> Session<'a> {
    pub fn new(session_id: impl Into<String>, n: usize, width: u32, prover: &'a mut dyn Prover) -> Self {
        Session { session_id: session_id.into(), n, width, prover, transcript: ProtocolTranscript::default(), next_round: 1 }
    }

    pub fn transcript(&self) -> &ProtocolTranscript {
        &self.transcript
    }

    pub fn into_transcript(self) -> ProtocolTranscript {
        self.transcript
    }

    pub fn record_local(&mut self, round: u32, rec: LocalRecord) {
        self.transcript.push(round, Direction::Local, Body::Local(rec));
    }

    fn send(&mut self, round: u32, msg: Message) -> Result<Option<Message>, ProtocolError> {
        let expects = msg.expects_reply();
        self.transcript.push(round, Direction::VerifierToProver, Body::Wire(msg.clone()));
        let reply = self.prover.handle(&msg)?;
        match (&reply, expects) {
            (Some(r), true) => self.transcript.push(round, Direction::ProverToVerifier, Body::Wire(r.clone())),
            (None, false) => {}
            (Some(r), false) => {
                return Err(ProtocolError::UnexpectedMessage { expected: "no reply".into(), got: r.kind().into() })
            }
            (None, true) => return Err(ProtocolError::UnexpectedMessage { expected: "a reply".into(), got: "none".into() }),
        }
        Ok(reply)
    }

    fn exchange_keys<R: Rng + ?Sized>(
        &mut self,
        kind: RoundKind,
        theta: &[u8],
        rng: &mut R,
    ) -> Result<KeyExchange, ProtocolError> {
        let round = self.next_round;
        self.next_round += 1;
        let mut tds = Vec::with_capacity(self.n);
        for &t in theta {
            tds.push(entcf::gen(BasisChoice::from_bit(t), self.width, rng)?.trapdoor);
        }
        let keys: Vec<PublicKey> = tds.iter().map(|t| t.public_key()).collect();
        self.record_local(
            round,
            LocalRecord::Trapdoors { kind, theta: BitString::from_bits(theta).to_hex(), trapdoors: tds.clone() },
        );
        let reply = self.send(round, Message::Keys { session: self.session_id.clone(), round, keys: keys.clone() })?;
        let ys = match reply {
            Some(Message::Images { y }) => decode_values(&y, self.n, self.width + 1, "images")?,
            other => return Err(unexpected("IMAGES", other)),
        };
        Ok((round, tds, keys, ys))
    }

    /// One test round with uniform θ and uniform round type.
    pub fn test_round<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<TestRoundRecord, ProtocolError> {
        let theta: u8 = rng.gen_range(0..2);
        let round_type = if rng.gen_bool(0.5) { RoundType::Hadamard } else { RoundType::Preimage };
        self.test_round_with(theta, round_type, rng)
    }

    pub fn test_round_with<R: Rng + ?Sized>(
        &mut self,
        theta: u8,
        round_type: RoundType,
        rng: &mut R,
    ) -> Result<TestRoundRecord, ProtocolError> {
        let (round, tds, keys, ys) = self.exchange_keys(RoundKind::Test, &vec![theta; self.n], rng)?;
        let reply = self.send(round, Message::RoundType { round_type })?;
        let flag = match round_type {
            RoundType::Preimage => match reply {
                Some(Message::Preimages { pairs }) => preimage_flag(&keys, &ys, &decode_pairs(&pairs, self.n, self.width)?),
                other => return Err(unexpected("PREIMAGES", other)),
            },
            RoundType::Hadamard => {
                let ds = match reply {
                    Some(Message::Equations { d }) => decode_values(&d, self.n, self.width, "equations")?,
                    other => return Err(unexpected("EQUATIONS", other)),
                };
                let v = match self.send(round, Message::Question { q: theta })? {
                    Some(Message::Answers { v }) => decode_bits(&v, self.n)?,
                    other => return Err(unexpected("ANSWERS", other)),
                };
                hadamard_flag(&tds, theta, &ys, &ds, &v)
            }
        };
        self.send(round, Message::Verdict { flag })?;
        Ok(TestRoundRecord { round, theta, round_type, flag })
    }

    /// The preparation round with per-copy bases `theta`.
    pub fn prep_round<R: Rng + ?Sized>(&mut self, theta: &BitString, rng: &mut R) -> Result<PrepRecord, ProtocolError> {
        if theta.len() != self.n {
            return Err(ProtocolError::Config(format!("theta has {} bits, expected {}", theta.len(), self.n)));
        }
        let (round, tds, _, ys) = self.exchange_keys(RoundKind::Prep, theta.bits(), rng)?;
        let ds = match self.send(round, Message::RoundType { round_type: RoundType::Hadamard })? {
            Some(Message::Equations { d }) => decode_values(&d, self.n, self.width, "equations")?,
            other => return Err(unexpected("EQUATIONS", other)),
        };
        let v = prep_outputs(&tds, theta.bits(), &ys, &ds)?;
        Ok(PrepRecord { round, theta: theta.clone(), v: BitString::from_bits(&v) })
    }

    pub fn finish(&mut self, accepted: bool, note: &str) -> Result<(), ProtocolError> {
        let round = self.next_round.saturating_sub(1);
        self.send(round, Message::Final { accepted, theta: None, note: note.into() })?;
        Ok(())
    }
}

fn unexpected(expected: &str, got: Option<Message>) -> ProtocolError {
    ProtocolError::UnexpectedMessage {
        expected: expected.into(),
        got: got.map(|m| m.kind().to_string()).unwrap_or_else(|| "none".into()),
    }
}

/// Session identifier derived from the root seed.
pub fn session_id(seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(b"rsp-session");
    h.update(seed.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Runs the full protocol with fresh uniform preparation bases.
pub fn run_multi_round(cfg: &MultiRoundConfig, prover: &mut dyn Prover) -> Result<ProtocolResult, ProtocolError> {
    run_multi_round_with_theta(cfg, None, prover)
}

/// Runs the full protocol; `theta` fixes the preparation bases when given.
pub fn run_multi_round_with_theta(
    cfg: &MultiRoundConfig,
    theta: Option<&BitString>,
    prover: &mut dyn Prover,
) -> Result<ProtocolResult, ProtocolError> {
    cfg.validate()?;
    let mut plan_rng = derive_rng(cfg.seed, "verifier-plan", 0);
    let s = plan_rng.gen_range(0..cfg.m);
    let r = plan_rng.gen_range(1..=cfg.m);

    let mut session = Session::new(session_id(cfg.seed), cfg.n, cfg.width, prover);
    session.record_local(
        0,
        LocalRecord::Plan { n: cfg.n, m: cfg.m, delta: cfg.delta, width: cfg.width, s, r, strict: cfg.strict },
    );

    let mut tally = BlockTally::new(cfg.m, cfg.delta, s, r, cfg.strict);
    let mut test_rounds = Vec::with_capacity(tally.total());
    for _ in 0..tally.total() {
        let mut rng = derive_rng(cfg.seed, "verifier", session.next_round as u64);
        let rec = session.test_round(&mut rng)?;
        let flag = rec.flag;
        test_rounds.push(rec);
        if let Some(block) = tally.record(flag) {
            let note = if block > s {
                "trailing rounds exceeded the failure threshold".to_string()
            } else {
                format!("block {block} exceeded the failure threshold")
            };
            session.finish(false, &note)?;
            session.record_local(0, LocalRecord::Summary { accepted: false, abort_block: Some(block), theta: None, v: None });
            let transcript = session.into_transcript();
            let prover_state = prover.held_state();
            return Ok(ProtocolResult {
                accepted: false,
                theta: None,
                v: None,
                abort_block: Some(block),
                s,
                r,
                test_rounds,
                transcript,
                prover_state,
            });
        }
    }

    let mut rng = derive_rng(cfg.seed, "verifier", session.next_round as u64);
    let theta = match theta {
        Some(t) => t.clone(),
        None => BitString::random(cfg.n, &mut rng),
    };
    let prep = session.prep_round(&theta, &mut rng)?;
    session.finish(true, "accepted")?;
    session.record_local(
        prep.round,
        LocalRecord::Summary { accepted: true, abort_block: None, theta: Some(theta.to_hex()), v: Some(prep.v.to_hex()) },
    );
    let transcript = session.into_transcript();
    let prover_state = prover.held_state();
    Ok(ProtocolResult {
        accepted: true,
        theta: Some(theta),
        v: Some(prep.v),
        abort_block: None,
        s,
        r,
        test_rounds,
        transcript,
        prover_state,
    })
}

/// Acceptance of a single test round against `prover`, using a throwaway session.
pub fn run_test_round<R: Rng + ?Sized>(
    n: usize,
    width: u32,
    prover: &mut dyn Prover,
    rng: &mut R,
) -> Result<TestRoundRecord, ProtocolError> {
    let mut s = Session::new("adhoc", n, width, prover);
    s.test_round(rng)
}

/// Single preparation round without preceding tests. Returns the record and the prover's held state.
pub fn run_prep_round<R: Rng + ?Sized>(
    n: usize,
    width: u32,
    theta: &BitString,
    prover: &mut dyn Prover,
    rng: &mut R,
) -> Result<(PrepRecord, Option<QuantumState>), ProtocolError> {
    let rec = {
        let mut s = Session::new("adhoc", n, width, prover);
        let rec = s.prep_round(theta, rng)?;
        s.finish(true, "accepted")?;
        rec
    };
    Ok((rec, prover.held_state()))
}
