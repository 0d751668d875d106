//! Interfaces for quantum computing on encrypted data with a classical client.
//!
//! Key setup, a classical one-time pad, RSP-backed state preparation and a
//! transparent reference evaluator, plus the history-state builder for
//! circuits over `{X, Z, H, S, CNOT, T}`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitString, BitsError};
use crate::entcf::PublicKey;
use crate::protocol::{self, Body, Message, MultiRoundConfig, ProtocolError, ProtocolTranscript, Prover};
use crate::quantum::{gates, Operator, QuantumError, QuantumState, StateVector, C64};

pub const MAX_HISTORY_GATES: usize = 8;
pub const MAX_HISTORY_QUBITS: usize = 6;
pub const MAX_CIRCUIT_QUBITS: usize = 16;

#[derive(Debug, Error)]
pub enum DelegationError {
    #[error("length mismatch: expected {expected} bits, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid circuit: {0}")]
    Circuit(String),
    #[error("size guard: {0}")]
    Guard(String),
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

type Result<T> = std::result::Result<T, DelegationError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    X,
    Z,
    H,
    S,
    T,
    #[serde(rename = "CNOT")]
    Cnot,
}

impl GateKind {
    pub const ALL: [GateKind; 6] = [GateKind::X, GateKind::Z, GateKind::H, GateKind::S, GateKind::T, GateKind::Cnot];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Cnot => 2,
            _ => 1,
        }
    }

    pub fn operator(self) -> Operator {
        match self {
            GateKind::X => gates::x(),
            GateKind::Z => gates::z(),
            GateKind::H => gates::h(),
            GateKind::S => gates::s(),
            GateKind::T => gates::t(),
            GateKind::Cnot => gates::cnot(),
        }
    }
}

/// One gate; for CNOT the targets are `[control, target]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub gate: GateKind,
    pub targets: Vec<usize>,
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{:?}", self.gate, self.targets)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Circuit {
    pub n: usize,
    pub gates: Vec<Gate>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CircuitFile {
    Full { n: usize, gates: Vec<Gate> },
    List(Vec<Gate>),
}

impl Circuit {
    pub fn new(n: usize, gates: Vec<Gate>) -> Result<Self> {
        if n == 0 || n > MAX_CIRCUIT_QUBITS {
            return Err(DelegationError::Circuit(format!("width {n} outside 1..={MAX_CIRCUIT_QUBITS}")));
        }
        for (i, g) in gates.iter().enumerate() {
            if g.targets.len() != g.gate.arity() {
                return Err(DelegationError::Circuit(format!("gate {i} ({g}) needs {} targets", g.gate.arity())));
            }
            if g.targets.iter().any(|&t| t >= n) {
                return Err(DelegationError::Circuit(format!("gate {i} ({g}) targets a qubit outside 0..{n}")));
            }
            if g.targets.len() == 2 && g.targets[0] == g.targets[1] {
                return Err(DelegationError::Circuit(format!("gate {i} ({g}) repeats a qubit")));
            }
        }
        Ok(Circuit { n, gates })
    }

    /// Accepts `{"n": .., "gates": [..]}` or a bare gate list, whose width is one past the largest target.
    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: CircuitFile = serde_json::from_str(text).map_err(|e| DelegationError::Circuit(e.to_string()))?;
        match parsed {
            CircuitFile::Full { n, gates } => Circuit::new(n, gates),
            CircuitFile::List(gates) => {
                let n = gates.iter().flat_map(|g| g.targets.iter()).max().map_or(1, |m| m + 1);
                Circuit::new(n, gates)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn t_count(&self) -> usize {
        self.gates.iter().filter(|g| g.gate == GateKind::T).count()
    }

    pub fn random<R: Rng + ?Sized>(n: usize, len: usize, rng: &mut R) -> Result<Self> {
        let kinds: Vec<GateKind> = GateKind::ALL.iter().copied().filter(|k| n > 1 || k.arity() == 1).collect();
        let mut gates = Vec::with_capacity(len);
        for _ in 0..len {
            let gate = kinds[rng.gen_range(0..kinds.len())];
            let targets = if gate.arity() == 2 {
                let c = rng.gen_range(0..n);
                let t = (c + rng.gen_range(1..n)) % n;
                vec![c, t]
            } else {
                vec![rng.gen_range(0..n)]
            };
            gates.push(Gate { gate, targets });
        }
        Circuit::new(n, gates)
    }

    /// `U_{t} ⋯ U_1 |ψ⟩` for the first `t` gates.
    pub fn apply_prefix(&self, psi: &StateVector, t: usize) -> Result<StateVector> {
        let mut out = psi.clone();
        for g in &self.gates[..t] {
            out = out.apply(&g.gate.operator(), &g.targets)?;
        }
        Ok(out)
    }

    pub fn simulate(&self, psi: &StateVector) -> Result<StateVector> {
        self.apply_prefix(psi, self.len())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DelegationError::Length { expected, got });
    }
    Ok(())
}

pub fn otp_enc(key: &BitString, m: &BitString) -> Result<BitString> {
    check_len(key.len(), m.len())?;
    Ok(key.xor(m)?)
}

pub fn otp_dec(key: &BitString, c: &BitString) -> Result<BitString> {
    otp_enc(key, c)
}

/// Computation key `(v, θ)` bound from the RSP outcome.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CompKey {
    pub v: BitString,
    pub theta: BitString,
}

#[derive(Clone, Debug)]
pub struct QcedKeys {
    pub sk_in: BitString,
    /// Empty until state preparation binds it; stays empty for T-free circuits.
    pub sk_comp: Option<CompKey>,
    pub pk: Vec<PublicKey>,
    pub transcript: Option<ProtocolTranscript>,
    pub rsp: MultiRoundConfig,
}

/// Samples the input pad and fixes RSP parameters with `n` = T-count.
pub fn qced_setup<R: Rng + ?Sized>(c: &Circuit, n: usize, base: &MultiRoundConfig, rng: &mut R) -> Result<QcedKeys> {
    check_len(c.n, n)?;
    let rsp = MultiRoundConfig { n: c.t_count(), seed: rng.gen(), ..base.clone() };
    Ok(QcedKeys { sk_in: BitString::random(n, rng), sk_comp: None, pk: Vec::new(), transcript: None, rsp })
}

pub struct StatePrepOutput {
    pub keys: QcedKeys,
    /// Prover's auxiliary register, when the prover is simulated in-process.
    pub aux: Option<QuantumState>,
}

/// Runs RSP with the configured parameters; `None` (⊥) on abort.
pub fn qced_stateprep(keys: &QcedKeys, prover: &mut dyn Prover) -> Result<Option<StatePrepOutput>> {
    let mut keys = keys.clone();
    if keys.rsp.n == 0 {
        return Ok(Some(StatePrepOutput { keys, aux: None }));
    }
    let res = protocol::run_multi_round(&keys.rsp, prover)?;
    if !res.accepted {
        return Ok(None);
    }
    let (Some(v), Some(theta)) = (res.v.clone(), res.theta.clone()) else {
        return Err(DelegationError::Protocol(ProtocolError::Malformed("accepted run without outputs".into())));
    };
    keys.pk = res
        .transcript
        .entries
        .iter()
        .rev()
        .find_map(|e| match &e.msg {
            Body::Wire(Message::Keys { keys, .. }) => Some(keys.clone()),
            _ => None,
        })
        .unwrap_or_default();
    keys.sk_comp = Some(CompKey { v, theta });
    keys.transcript = Some(res.transcript);
    Ok(Some(StatePrepOutput { keys, aux: res.prover_state }))
}

/// NON-PRIVATE reference evaluator: decrypts the input, simulates the circuit, measures and re-pads.
/// It exists to check the pipeline end to end and offers no privacy.
pub fn qced_evaluate_reference<R: Rng + ?Sized>(
    keys: &QcedKeys,
    c: &Circuit,
    ct_in: &BitString,
    rng: &mut R,
) -> Result<(BitString, BitString)> {
    check_len(c.n, ct_in.len())?;
    let m = otp_dec(&keys.sk_in, ct_in)?;
    let out = c.simulate(&StateVector::from_bits(&m)?)?;
    let all: Vec<usize> = (0..c.n).collect();
    let (w, _) = out.measure(&all, rng)?;
    let sk_star = BitString::random(c.n, rng);
    let ct_star = otp_enc(&sk_star, &w)?;
    Ok((sk_star, ct_star))
}

/// Exact output distribution of the reference path, indexed by the decrypted output.
pub fn qced_reference_distribution(keys: &QcedKeys, c: &Circuit, ct_in: &BitString) -> Result<Vec<f64>> {
    check_len(c.n, ct_in.len())?;
    let m = otp_dec(&keys.sk_in, ct_in)?;
    let out = c.simulate(&StateVector::from_bits(&m)?)?;
    let all: Vec<usize> = (0..c.n).collect();
    Ok(out.outcome_probabilities(&all)?)
}

/// Index of the unary clock value `t` among `T + 1` clock qubits: qubit `t` set.
pub fn clock_index(t: usize, clock_qubits: usize) -> usize {
    1usize << (clock_qubits - 1 - t)
}

/// `(T+1)^{-1/2} Σ_t |t⟩ ⊗ U_t ⋯ U_1 |x⟩` with a unary clock on the first `T + 1` qubits.
pub fn history_state(c: &Circuit, x: &BitString) -> Result<StateVector> {
    check_len(c.n, x.len())?;
    let steps = c.len();
    if steps > MAX_HISTORY_GATES || c.n > MAX_HISTORY_QUBITS {
        return Err(DelegationError::Guard(format!(
            "history state needs T <= {MAX_HISTORY_GATES} and n <= {MAX_HISTORY_QUBITS}, got T = {steps}, n = {}",
            c.n
        )));
    }
    let clock = steps + 1;
    let data_dim = 1usize << c.n;
    let mut amps = vec![C64::new(0.0, 0.0); (1usize << clock) * data_dim];
    let w = 1.0 / (clock as f64).sqrt();
    let mut psi = StateVector::from_bits(x)?;
    for t in 0..=steps {
        if t > 0 {
            let g = &c.gates[t - 1];
            psi = psi.apply(&g.gate.operator(), &g.targets)?;
        }
        let base = clock_index(t, clock) * data_dim;
        for (i, a) in psi.amplitudes().iter().enumerate() {
            amps[base + i] = a * w;
        }
    }
    Ok(StateVector::new(amps)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(44)
    }

    #[test]
    fn otp_basics() {
        let m: BitString = "1011".parse().unwrap();
        assert_eq!(otp_enc(&BitString::zeros(4), &m).unwrap(), m);
        let k: BitString = "0110".parse().unwrap();
        assert_eq!(otp_dec(&k, &otp_enc(&k, &m).unwrap()).unwrap(), m);
        assert!(otp_enc(&k, &BitString::zeros(3)).is_err());
    }

    #[test]
    fn circuit_json_forms() {
        let c = Circuit::from_json(r#"[{"gate":"H","targets":[0]},{"gate":"CNOT","targets":[0,2]}]"#).unwrap();
        assert_eq!(c.n, 3);
        let d = Circuit::from_json(r#"{"n":4,"gates":[{"gate":"T","targets":[3]}]}"#).unwrap();
        assert_eq!((d.n, d.t_count()), (4, 1));
        assert!(Circuit::from_json(r#"[{"gate":"CNOT","targets":[1]}]"#).is_err());
        assert!(Circuit::from_json(r#"{"n":1,"gates":[{"gate":"X","targets":[1]}]}"#).is_err());
    }

    #[test]
    fn history_state_small_cases() {
        let x: BitString = "10".parse().unwrap();
        let c = Circuit::new(2, vec![]).unwrap();
        let h = history_state(&c, &x).unwrap();
        let expected = StateVector::from_bits(&"110".parse().unwrap()).unwrap();
        assert_eq!(h, expected);

        let c = Circuit::new(1, vec![Gate { gate: GateKind::H, targets: vec![0] }]).unwrap();
        let h = history_state(&c, &BitString::zeros(1)).unwrap();
        let s = 0.5f64.sqrt();
        let t0 = StateVector::from_bits(&"100".parse().unwrap()).unwrap();
        let t1 = StateVector::new(vec![0.0, 0.0, s, s, 0.0, 0.0, 0.0, 0.0].into_iter().map(|r| C64::new(r, 0.0)).collect()).unwrap();
        assert!((h.inner(&t0).unwrap().re - s).abs() < 1e-12);
        assert!((h.inner(&t1).unwrap().re - s).abs() < 1e-12);
    }

    #[test]
    fn history_guard() {
        let mut g = rng();
        let c = Circuit::random(2, 9, &mut g).unwrap();
        assert!(matches!(history_state(&c, &BitString::zeros(2)), Err(DelegationError::Guard(_))));
    }

    #[test]
    fn t_free_circuit_skips_stateprep() {
        let mut g = rng();
        let c = Circuit::new(2, vec![Gate { gate: GateKind::H, targets: vec![0] }]).unwrap();
        let keys = qced_setup(&c, 2, &MultiRoundConfig::default(), &mut g).unwrap();
        let mut p = protocol::SimulatedProver::honest(1);
        let out = qced_stateprep(&keys, &mut p).unwrap().unwrap();
        assert!(out.keys.sk_comp.is_none() && out.keys.transcript.is_none());
    }

    #[test]
    fn honest_stateprep_binds_rsp_outputs() {
        let mut g = rng();
        let c = Circuit::from_json(r#"[{"gate":"T","targets":[0]},{"gate":"H","targets":[1]},{"gate":"T","targets":[1]}]"#).unwrap();
        let base = MultiRoundConfig { m: 2, width: 2, ..Default::default() };
        let keys = qced_setup(&c, 2, &base, &mut g).unwrap();
        let mut p = protocol::SimulatedProver::honest(keys.rsp.seed);
        let out = qced_stateprep(&keys, &mut p).unwrap().unwrap();
        let comp = out.keys.sk_comp.clone().unwrap();
        assert_eq!(comp.v.len(), 2);
        assert_eq!(out.keys.pk.len(), 2);
        let ideal = protocol::bb84_state(&comp.theta, &comp.v).unwrap();
        assert!((out.aux.unwrap().fidelity(&ideal).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn aborting_prover_yields_bottom() {
        let mut g = rng();
        let c = Circuit::from_json(r#"[{"gate":"T","targets":[0]}]"#).unwrap();
        let base = MultiRoundConfig { m: 4, width: 2, ..Default::default() };
        let keys = qced_setup(&c, 1, &base, &mut g).unwrap();
        let mut p = protocol::SimulatedProver::cheating(protocol::CheatStrategy::AlwaysWrong, 3);
        assert!(qced_stateprep(&keys, &mut p).unwrap().is_none());
    }

    #[test]
    fn reference_pipeline_single_gates() {
        let mut g = rng();
        let base = MultiRoundConfig { m: 2, width: 2, ..Default::default() };
        let c = Circuit::new(1, vec![Gate { gate: GateKind::X, targets: vec![0] }]).unwrap();
        let keys = qced_setup(&c, 1, &base, &mut g).unwrap();
        let m: BitString = "0".parse().unwrap();
        let ct = otp_enc(&keys.sk_in, &m).unwrap();
        let (sk, ct_star) = qced_evaluate_reference(&keys, &c, &ct, &mut g).unwrap();
        assert_eq!(otp_dec(&sk, &ct_star).unwrap(), "1".parse().unwrap());
    }
}
