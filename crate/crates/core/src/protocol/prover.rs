//! Simulated provers: the honest quantum prover and a set of cheating strategies.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::entcf::{self, PublicKey};
use crate::quantum::{gates, QuantumState, StateVector};

use super::messages::{encode_value, Message, PreimagePair, RoundType};
use super::{derive_rng, ProtocolError};

/// Anything that answers verifier messages.
pub trait Prover {
    /// Returns the reply, or `None` for messages that expect none.
    fn handle(&mut self, msg: &Message) -> Result<Option<Message>, ProtocolError>;

    /// Qubits the prover still holds after the preparation round.
    fn held_state(&self) -> Option<QuantumState> {
        None
    }
}

/// Cheating strategies used to exercise the verifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheatStrategy {
    /// Valid images, uniformly random preimages, equations and answers.
    RandomAnswer,
    /// Honest, but answers the question in the opposite basis.
    WrongBasis,
    /// Honest, but always answers 0.
    ConstantV,
    /// Measures its committed register right after sending images.
    DelayedClassical,
    /// Honest, but flips every preimage bit and every answer.
    AlwaysWrong,
}

impl CheatStrategy {
    pub const ALL: [CheatStrategy; 5] = [
        CheatStrategy::RandomAnswer,
        CheatStrategy::WrongBasis,
        CheatStrategy::ConstantV,
        CheatStrategy::DelayedClassical,
        CheatStrategy::AlwaysWrong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheatStrategy::RandomAnswer => "random_answer",
            CheatStrategy::WrongBasis => "wrong_basis",
            CheatStrategy::ConstantV => "constant_v",
            CheatStrategy::DelayedClassical => "delayed_classical",
            CheatStrategy::AlwaysWrong => "always_wrong",
        }
    }
}

impl std::str::FromStr for CheatStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CheatStrategy::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Register `[b, x_1..x_w, y_1..y_{w+1}]` after `H` on `b, x` and the evaluation unitary.
pub fn commit_register(key: &PublicKey) -> Result<StateVector, ProtocolError> {
    let w = key.width() as usize;
    let q = 2 * w + 2;
    let amp = crate::quantum::C64::new((1.0 / (1u64 << (w + 1)) as f64).sqrt(), 0.0);
    let mut amps = vec![crate::quantum::C64::new(0.0, 0.0); 1 << q];
    for bx in 0..(1usize << (w + 1)) {
        let (b, x) = ((bx >> w) as u8, (bx & ((1 << w) - 1)) as u64);
        let y = entcf::eval(key, b, x) as usize;
        amps[(bx << (w + 1)) | y] = amp;
    }
    Ok(StateVector::new(amps)?)
}

pub(crate) fn y_targets(w: usize) -> Vec<usize> {
    (w + 1..2 * w + 2).collect()
}

/// Measures the image register; returns `y` and the post-measurement state on `b, x`.
pub fn commit<R: Rng + ?Sized>(key: &PublicKey, rng: &mut R) -> Result<(u64, StateVector), ProtocolError> {
    let w = key.width() as usize;
    let reg = commit_register(key)?;
    let ys = y_targets(w);
    let (y, post) = reg.measure(&ys, rng)?;
    Ok((y.to_u64(), post.discard_measured(&ys, &y)?))
}

/// Every image outcome with its probability and post-measurement state on `b, x`.
pub fn commit_branches(key: &PublicKey) -> Result<Vec<(u64, f64, StateVector)>, ProtocolError> {
    let w = key.width() as usize;
    let ys = y_targets(w);
    commit_register(key)?
        .enumerate(&ys)?
        .into_iter()
        .map(|br| Ok((br.outcome.to_u64(), br.probability, br.state.discard_measured(&ys, &br.outcome)?)))
        .collect()
}

enum Copy {
    Committed(StateVector),
    Qubit(StateVector),
    Spent,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Behaviour {
    Honest,
    Cheat(CheatStrategy),
}

/// A prover simulated on the dense state-vector backend.
pub struct SimulatedProver {
    seed: u64,
    behaviour: Behaviour,
    width: u32,
    keys: Vec<PublicKey>,
    copies: Vec<Copy>,
    rng: ChaCha20Rng,
    expecting: Expect,
    held: Option<QuantumState>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Expect {
    Keys,
    RoundType,
    QuestionOrEnd,
    End,
}

pub type HonestProver = SimulatedProver;

impl SimulatedProver {
    pub fn honest(seed: u64) -> Self {
        Self::build(seed, Behaviour::Honest)
    }

    pub fn cheating(strategy: CheatStrategy, seed: u64) -> Self {
        Self::build(seed, Behaviour::Cheat(strategy))
    }

    fn build(seed: u64, behaviour: Behaviour) -> Self {
        SimulatedProver {
            seed,
            behaviour,
            width: 0,
            keys: Vec::new(),
            copies: Vec::new(),
            rng: derive_rng(seed, "prover", 0),
            expecting: Expect::Keys,
            held: None,
        }
    }

    fn cheat(&self, s: CheatStrategy) -> bool {
        self.behaviour == Behaviour::Cheat(s)
    }

    fn unexpected(&self, msg: &Message) -> ProtocolError {
        ProtocolError::UnexpectedMessage { expected: format!("{:?}", self.expecting), got: msg.kind().into() }
    }

    fn on_keys(&mut self, round: u32, keys: &[PublicKey]) -> Result<Message, ProtocolError> {
        let width = keys.first().map(|k| k.width()).unwrap_or(0);
        if keys.iter().any(|k| k.width() != width) {
            return Err(ProtocolError::Malformed("keys of mixed width".into()));
        }
        self.rng = derive_rng(self.seed, "prover", round as u64);
        self.width = width;
        self.keys = keys.to_vec();
        self.copies.clear();
        self.held = None;
        let w = width as usize;
        let mut ys = Vec::with_capacity(keys.len());
        for k in keys {
            if self.cheat(CheatStrategy::RandomAnswer) {
                let b = self.rng.gen_range(0..2u8);
                let x = self.rng.gen_range(0..(1u64 << w));
                ys.push(entcf::eval(k, b, x));
                self.copies.push(Copy::Spent);
                continue;
            }
            let (y, mut state) = commit(k, &mut self.rng)?;
            if self.cheat(CheatStrategy::DelayedClassical) {
                let all: Vec<usize> = (0..=w).collect();
                let (bx, _) = state.measure(&all, &mut self.rng)?;
                state = StateVector::from_bits(&bx)?;
            }
            ys.push(y);
            self.copies.push(Copy::Committed(state));
        }
        let y = ys.iter().map(|&y| encode_value(y, width + 1)).collect();
        Ok(Message::Images { y })
    }

    fn on_preimage(&mut self) -> Result<Message, ProtocolError> {
        let w = self.width as usize;
        let mut pairs = Vec::with_capacity(self.copies.len());
        for c in std::mem::take(&mut self.copies) {
            let (mut b, x) = match c {
                Copy::Committed(state) => {
                    let all: Vec<usize> = (0..=w).collect();
                    let (bx, _) = state.measure(&all, &mut self.rng)?;
                    (bx.get(0), bx.slice(1, w + 1).to_u64())
                }
                _ => (self.rng.gen_range(0..2u8), self.rng.gen_range(0..(1u64 << w))),
            };
            if self.cheat(CheatStrategy::AlwaysWrong) {
                b ^= 1;
            }
            pairs.push(PreimagePair { b, x: encode_value(x, self.width) });
            self.copies.push(Copy::Spent);
        }
        Ok(Message::Preimages { pairs })
    }

    fn on_hadamard(&mut self) -> Result<Message, ProtocolError> {
        let w = self.width as usize;
        let xs: Vec<usize> = (1..=w).collect();
        let mut d = Vec::with_capacity(self.copies.len());
        for c in std::mem::take(&mut self.copies) {
            match c {
                Copy::Committed(mut state) => {
                    for &q in &xs {
                        state = state.apply(&gates::h(), &[q])?;
                    }
                    let (dv, post) = state.measure(&xs, &mut self.rng)?;
                    d.push(encode_value(dv.to_u64(), self.width));
                    self.copies.push(Copy::Qubit(post.discard_measured(&xs, &dv)?));
                }
                _ => {
                    d.push(encode_value(self.rng.gen_range(0..(1u64 << w)), self.width));
                    self.copies.push(Copy::Spent);
                }
            }
        }
        Ok(Message::Equations { d })
    }

    fn on_question(&mut self, q: u8) -> Result<Message, ProtocolError> {
        let basis = if self.cheat(CheatStrategy::WrongBasis) { q ^ 1 } else { q };
        let mut v = Vec::with_capacity(self.copies.len());
        for c in std::mem::take(&mut self.copies) {
            let mut bit = match c {
                Copy::Qubit(mut state) => {
                    if basis == 1 {
                        state = state.apply(&gates::h(), &[0])?;
                    }
                    state.measure(&[0], &mut self.rng)?.0.get(0)
                }
                _ => self.rng.gen_range(0..2u8),
            };
            if self.cheat(CheatStrategy::ConstantV) {
                bit = 0;
            }
            if self.cheat(CheatStrategy::AlwaysWrong) {
                bit ^= 1;
            }
            v.push(bit);
            self.copies.push(Copy::Spent);
        }
        Ok(Message::Answers { v })
    }

    fn keep_qubits(&mut self) -> Result<(), ProtocolError> {
        let mut state: Option<QuantumState> = None;
        for c in &self.copies {
            let Copy::Qubit(q) = c else {
                self.held = None;
                return Ok(());
            };
            let q = QuantumState::Pure(q.clone());
            state = Some(match state {
                None => q,
                Some(s) => s.tensor(&q)?,
            });
        }
        self.held = state;
        Ok(())
    }
}

impl Prover for SimulatedProver {
    fn handle(&mut self, msg: &Message) -> Result<Option<Message>, ProtocolError> {
        match (self.expecting, msg) {
            (_, Message::Keys { round, keys, .. }) => {
                let reply = self.on_keys(*round, keys)?;
                self.expecting = Expect::RoundType;
                Ok(Some(reply))
            }
            (Expect::RoundType, Message::RoundType { round_type }) => {
                let reply = match round_type {
                    RoundType::Preimage => {
                        self.expecting = Expect::End;
                        self.on_preimage()?
                    }
                    RoundType::Hadamard => {
                        self.expecting = Expect::QuestionOrEnd;
                        self.on_hadamard()?
                    }
                };
                Ok(Some(reply))
            }
            (Expect::QuestionOrEnd, Message::Question { q }) if *q <= 1 => {
                self.expecting = Expect::End;
                Ok(Some(self.on_question(*q)?))
            }
            (Expect::QuestionOrEnd, Message::Final { .. }) => {
                self.keep_qubits()?;
                self.expecting = Expect::Keys;
                Ok(None)
            }
            (Expect::End, Message::Verdict { .. }) => {
                self.expecting = Expect::Keys;
                Ok(None)
            }
            (Expect::Keys | Expect::End, Message::Final { .. }) => {
                self.expecting = Expect::Keys;
                Ok(None)
            }
            _ => Err(self.unexpected(msg)),
        }
    }

    fn held_state(&self) -> Option<QuantumState> {
        self.held.clone()
    }
}

/// The ideal output `⊗_i H^{θ_i} |v_i⟩`.
pub fn bb84_state(theta: &BitString, v: &BitString) -> Result<QuantumState, ProtocolError> {
    let mut state = StateVector::from_bits(v)?;
    for i in 0..theta.len() {
        if theta.get(i) == 1 {
            state = state.apply(&gates::h(), &[i])?;
        }
    }
    Ok(QuantumState::Pure(state))
}
