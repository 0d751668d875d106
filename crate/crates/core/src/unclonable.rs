//! Conjugate-coding encryption, cloning experiments, wrong-key detection and hybrid encryption.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bits::{BitString, BitsError};
use crate::gf2::{self, GfError, PermKey};
use crate::protocol::{self, MultiRoundConfig, ProtocolError, ProtocolResult, Prover};
use crate::quantum::{gates, DensityMatrix, Matrix, Operator, QuantumError, QuantumState, StateVector, C64};

pub const MAX_LAMBDA: usize = 12;
pub const MAX_EXHAUSTIVE_LAMBDA: usize = 4;
/// Largest λ whose `B ⊗ C` register (2λ qubits) the cloning harness simulates densely.
pub const MAX_ATTACK_LAMBDA: usize = 5;

#[derive(Debug, Error)]
pub enum UnclonableError {
    #[error("length mismatch: expected {expected} bits, got {got}")]
    Length { expected: usize, got: usize },
    #[error("lambda {0} outside the supported range")]
    Lambda(usize),
    #[error("attack output has {got} qubits, expected {expected}")]
    AttackDimension { expected: usize, got: usize },
    #[error("malformed ciphertext: {0}")]
    Malformed(String),
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error(transparent)]
    Gf(#[from] GfError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

type Result<T> = std::result::Result<T, UnclonableError>;

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(UnclonableError::Length { expected, got });
    }
    Ok(())
}

fn check_lambda(lambda: usize, max: usize) -> Result<()> {
    if lambda == 0 || lambda > max {
        return Err(UnclonableError::Lambda(lambda));
    }
    Ok(())
}

/// Conjugate-coding key: pad `r` and bases `θ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ConjKey {
    pub r: BitString,
    pub theta: BitString,
}

impl ConjKey {
    pub fn new(r: BitString, theta: BitString) -> Result<Self> {
        check_len(r.len(), theta.len())?;
        Ok(ConjKey { r, theta })
    }

    pub fn lambda(&self) -> usize {
        self.r.len()
    }

    /// `r ‖ θ`.
    pub fn to_bits(&self) -> BitString {
        self.r.concat(&self.theta)
    }

    pub fn from_bits(bits: &BitString) -> Result<Self> {
        if !bits.len().is_multiple_of(2) {
            return Err(UnclonableError::Malformed(format!("key of odd length {}", bits.len())));
        }
        let (r, theta) = bits.split_at(bits.len() / 2);
        Ok(ConjKey { r, theta })
    }

    /// Every key of length `lambda`.
    pub fn all(lambda: usize) -> impl Iterator<Item = ConjKey> {
        BitString::all(2 * lambda).map(|b| ConjKey::from_bits(&b).expect("even length"))
    }
}

pub fn cc_keygen<R: Rng + ?Sized>(lambda: usize, rng: &mut R) -> Result<ConjKey> {
    check_lambda(lambda, MAX_LAMBDA)?;
    Ok(ConjKey { r: BitString::random(lambda, rng), theta: BitString::random(lambda, rng) })
}

/// `⊗_i H^{θ_i} |r_i ⊕ m_i⟩`.
pub fn cc_enc(k: &ConjKey, m: &BitString) -> Result<QuantumState> {
    check_len(k.lambda(), m.len())?;
    check_lambda(k.lambda(), MAX_LAMBDA)?;
    Ok(protocol::bb84_state(&k.theta, &k.r.xor(m)?)?)
}

fn undo_bases(k: &ConjKey, state: &QuantumState) -> Result<QuantumState> {
    check_len(k.lambda(), state.qubit_count())?;
    Ok(crate::quantum::hadamard_layer(state, &k.theta)?)
}

/// Applies the `H^θ` layer, measures, and removes the pad.
pub fn cc_dec<R: Rng + ?Sized>(k: &ConjKey, state: &QuantumState, rng: &mut R) -> Result<BitString> {
    let rotated = undo_bases(k, state)?;
    let all: Vec<usize> = (0..k.lambda()).collect();
    let (w, _) = crate::quantum::measure_computational(&rotated, &all, rng)?;
    Ok(w.xor(&k.r)?)
}

/// Exact output distribution of [`cc_dec`].
pub fn cc_dec_distribution(k: &ConjKey, state: &QuantumState) -> Result<Vec<(BitString, f64)>> {
    let rotated = undo_bases(k, state)?;
    let all: Vec<usize> = (0..k.lambda()).collect();
    crate::quantum::enumerate_computational(&rotated, &all)?
        .into_iter()
        .map(|b| Ok((b.outcome.xor(&k.r)?, b.probability)))
        .collect()
}

/// `E_k cc_enc(k, m)` over all `4^λ` keys.
pub fn key_averaged_ciphertext(m: &BitString) -> Result<DensityMatrix> {
    let lambda = m.len();
    check_lambda(lambda, MAX_EXHAUSTIVE_LAMBDA)?;
    let dim = 1usize << lambda;
    let mut acc = Matrix::zeros(dim, dim);
    let count = 1usize << (2 * lambda);
    for k in ConjKey::all(lambda) {
        acc += cc_enc(&k, m)?.to_density().matrix();
    }
    Ok(DensityMatrix::new(acc / C64::new(count as f64, 0.0))?)
}

/// Attack on the cloning experiment: a splitting channel plus one decoding POVM per party.
pub trait CloningAttack {
    fn name(&self) -> &str;
    fn b_qubits(&self, lambda: usize) -> usize;
    fn c_qubits(&self, lambda: usize) -> usize;
    /// Maps the ciphertext to a state on `B ⊗ C`.
    fn split(&self, ct: &DensityMatrix) -> Result<DensityMatrix>;
    /// POVM element of `B` for guessing `m`, given the true key.
    fn decoder_b(&self, key: &ConjKey, m: &BitString) -> Result<Operator>;
    fn decoder_c(&self, key: &ConjKey, m: &BitString) -> Result<Operator>;
}

/// Measures each qubit in the basis rotated by π/8 and gives the outcome to both parties.
#[derive(Clone, Copy, Debug, Default)]
pub struct BreidbartAttack;

/// `B` receives the ciphertext, `C` guesses uniformly.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardAttack;

pub fn breidbart_attack() -> BreidbartAttack {
    BreidbartAttack
}

pub fn forward_attack() -> ForwardAttack {
    ForwardAttack
}

fn basis_projector(bits: &BitString) -> Result<Operator> {
    Ok(Operator::projector_onto(&StateVector::from_bits(bits)?))
}

/// Outcome distribution of measuring every qubit of `rho` in the Breidbart basis.
pub fn breidbart_distribution(rho: &DensityMatrix) -> Result<Vec<f64>> {
    let lambda = rho.qubit_count();
    let rot = gates::ry_angle(PI / 8.0).adjoint();
    let mut r = rho.clone();
    for q in 0..lambda {
        r = r.apply(&rot, &[q])?;
    }
    let all: Vec<usize> = (0..lambda).collect();
    Ok(r.outcome_probabilities(&all)?)
}

impl CloningAttack for BreidbartAttack {
    fn name(&self) -> &str {
        "breidbart"
    }

    fn b_qubits(&self, lambda: usize) -> usize {
        lambda
    }

    fn c_qubits(&self, lambda: usize) -> usize {
        lambda
    }

    fn split(&self, ct: &DensityMatrix) -> Result<DensityMatrix> {
        let lambda = ct.qubit_count();
        if lambda > MAX_ATTACK_LAMBDA {
            return Err(UnclonableError::Lambda(lambda));
        }
        let probs = breidbart_distribution(ct)?;
        let dim = 1usize << lambda;
        let mut out = Matrix::zeros(dim * dim, dim * dim);
        for (w, p) in probs.iter().enumerate() {
            let idx = w * dim + w;
            out[(idx, idx)] = C64::new(*p, 0.0);
        }
        Ok(DensityMatrix::new(out)?)
    }

    fn decoder_b(&self, key: &ConjKey, m: &BitString) -> Result<Operator> {
        basis_projector(&m.xor(&key.r)?)
    }

    fn decoder_c(&self, key: &ConjKey, m: &BitString) -> Result<Operator> {
        basis_projector(&m.xor(&key.r)?)
    }
}

impl CloningAttack for ForwardAttack {
    fn name(&self) -> &str {
        "forward"
    }

    fn b_qubits(&self, lambda: usize) -> usize {
        lambda
    }

    fn c_qubits(&self, _lambda: usize) -> usize {
        0
    }

    fn split(&self, ct: &DensityMatrix) -> Result<DensityMatrix> {
        Ok(ct.clone())
    }

    fn decoder_b(&self, key: &ConjKey, m: &BitString) -> Result<Operator> {
        let psi = cc_enc(key, m)?;
        match psi {
            QuantumState::Pure(v) => Ok(Operator::projector_onto(&v)),
            QuantumState::Mixed(_) => unreachable!("cc_enc is pure"),
        }
    }

    fn decoder_c(&self, _key: &ConjKey, m: &BitString) -> Result<Operator> {
        let guess = 1.0 / (1u64 << m.len()) as f64;
        Ok(Operator::identity(1).scale(C64::new(guess, 0.0)))
    }
}

/// Success probability of one (key, message) pair against the split state.
pub fn cloning_success_on(attack: &dyn CloningAttack, key: &ConjKey, m: &BitString, ct: &DensityMatrix) -> Result<f64> {
    let lambda = key.lambda();
    let split = attack.split(ct)?;
    let expected = attack.b_qubits(lambda) + attack.c_qubits(lambda);
    if split.qubit_count() != expected {
        return Err(UnclonableError::AttackDimension { expected, got: split.qubit_count() });
    }
    let eb = attack.decoder_b(key, m)?;
    let ec = attack.decoder_c(key, m)?;
    let joint = Operator::new(eb.matrix().kronecker(ec.matrix()));
    Ok(split.expectation(&joint)?.re)
}

#[derive(Clone, Debug, Serialize)]
pub struct CloningResult {
    pub lambda: usize,
    pub attack: String,
    pub mode: String,
    pub success: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// `(1/2 + 1/(2√2))^λ`.
    pub reference: f64,
}

pub fn breidbart_value(lambda: usize) -> f64 {
    (0.5 + 0.5 / 2f64.sqrt()).powi(lambda as i32)
}

/// Exact expectation over all keys and messages.
pub fn cloning_experiment_exact(attack: &dyn CloningAttack, lambda: usize) -> Result<CloningResult> {
    check_lambda(lambda, MAX_EXHAUSTIVE_LAMBDA)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for key in ConjKey::all(lambda) {
        for m in BitString::all(lambda) {
            let ct = cc_enc(&key, &m)?.to_density();
            total += cloning_success_on(attack, &key, &m, &ct)?;
            count += 1;
        }
    }
    Ok(CloningResult {
        lambda,
        attack: attack.name().into(),
        mode: "exact".into(),
        success: total / count as f64,
        stderr: None,
        trials: None,
        reference: breidbart_value(lambda),
    })
}

fn mc_result(attack: &dyn CloningAttack, lambda: usize, mode: &str, wins: usize, trials: usize) -> CloningResult {
    let p = wins as f64 / trials as f64;
    CloningResult {
        lambda,
        attack: attack.name().into(),
        mode: mode.into(),
        success: p,
        stderr: Some((p * (1.0 - p) / trials as f64).sqrt()),
        trials: Some(trials),
        reference: breidbart_value(lambda),
    }
}

/// Seeded Monte Carlo: each trial draws a key and message and succeeds with its exact probability.
pub fn cloning_experiment_mc<R: Rng + ?Sized>(
    attack: &dyn CloningAttack,
    lambda: usize,
    trials: usize,
    rng: &mut R,
) -> Result<CloningResult> {
    check_lambda(lambda, MAX_ATTACK_LAMBDA)?;
    let mut wins = 0;
    for _ in 0..trials {
        let key = cc_keygen(lambda, rng)?;
        let m = BitString::random(lambda, rng);
        let ct = cc_enc(&key, &m)?.to_density();
        let p = cloning_success_on(attack, &key, &m, &ct)?.clamp(0.0, 1.0);
        wins += rng.gen_bool(p) as usize;
    }
    Ok(mc_result(attack, lambda, "mc", wins, trials))
}

/// Outcome of encrypting through the RSP protocol.
pub struct ClassicalClientOutcome {
    pub key: ConjKey,
    pub prover_state: Option<QuantumState>,
    pub protocol: ProtocolResult,
}

/// Runs RSP with `n = λ`; on acceptance the key is `(v ⊕ m, θ)`. Returns `None` on abort.
pub fn cc_enc_classical_client(
    m: &BitString,
    cfg: &MultiRoundConfig,
    prover: &mut dyn Prover,
) -> Result<Option<ClassicalClientOutcome>> {
    check_len(cfg.n, m.len())?;
    let res = protocol::run_multi_round(cfg, prover)?;
    if !res.accepted {
        return Ok(None);
    }
    let (v, theta) = match (&res.v, &res.theta) {
        (Some(v), Some(t)) => (v.clone(), t.clone()),
        _ => return Err(UnclonableError::Malformed("accepted run without outputs".into())),
    };
    let key = ConjKey::new(v.xor(m)?, theta)?;
    Ok(Some(ClassicalClientOutcome { key, prover_state: res.prover_state.clone(), protocol: res }))
}

/// Cloning experiment for the classical-client scheme with honest RSP provers.
///
/// A trial fails when the protocol aborts; otherwise the attack acts on the
/// prover's register and the trial succeeds with the exact probability.
pub fn cloning_experiment_classical_client<R: Rng + ?Sized>(
    attack: &dyn CloningAttack,
    lambda: usize,
    trials: usize,
    base: &MultiRoundConfig,
    rng: &mut R,
) -> Result<CloningResult> {
    check_lambda(lambda, MAX_ATTACK_LAMBDA)?;
    let mut wins = 0;
    for _ in 0..trials {
        let seed: u64 = rng.gen();
        let cfg = MultiRoundConfig { n: lambda, seed, ..base.clone() };
        let m = BitString::random(lambda, rng);
        let mut prover = protocol::SimulatedProver::honest(seed);
        let Some(out) = cc_enc_classical_client(&m, &cfg, &mut prover)? else { continue };
        let Some(state) = out.prover_state else { continue };
        let p = cloning_success_on(attack, &out.key, &m, &state.to_density())?.clamp(0.0, 1.0);
        wins += rng.gen_bool(p) as usize;
    }
    Ok(mc_result(attack, lambda, "mc-classical-client", wins, trials))
}

/// Wrong-key-detecting ciphertext: conjugate coding of `r ‖ m` under `π(k)`, with `r` and `π` in the clear.
#[derive(Clone, Debug)]
pub struct WkdCiphertext {
    pub quantum: QuantumState,
    pub r: BitString,
    pub perm: PermKey,
}

/// Bits in a WKD key for messages of `lambda` bits: the inner conjugate-coding key on `2λ` qubits.
pub fn wkd_key_bits(lambda: usize) -> usize {
    4 * lambda
}

fn inner_key(k: &BitString, perm: &PermKey) -> Result<ConjKey> {
    ConjKey::from_bits(&gf2::pip_eval(perm, k)?)
}

pub fn wkd_keygen<R: Rng + ?Sized>(lambda: usize, rng: &mut R) -> Result<BitString> {
    check_lambda(lambda, MAX_LAMBDA / 2)?;
    Ok(BitString::random(wkd_key_bits(lambda), rng))
}

pub fn wkd_enc<R: Rng + ?Sized>(k: &BitString, m: &BitString, rng: &mut R) -> Result<WkdCiphertext> {
    let lambda = m.len();
    check_lambda(lambda, MAX_LAMBDA / 2)?;
    check_len(wkd_key_bits(lambda), k.len())?;
    let r = BitString::random(lambda, rng);
    let perm = gf2::pip_sample(k.len() as u32, rng)?;
    wkd_enc_with(k, m, &r, &perm)
}

/// Deterministic encryption with given prefix and permutation.
pub fn wkd_enc_with(k: &BitString, m: &BitString, r: &BitString, perm: &PermKey) -> Result<WkdCiphertext> {
    let lambda = m.len();
    check_len(wkd_key_bits(lambda), k.len())?;
    check_len(lambda, r.len())?;
    let key = inner_key(k, perm)?;
    Ok(WkdCiphertext { quantum: cc_enc(&key, &r.concat(m))?, r: r.clone(), perm: *perm })
}

fn check_ct(k: &BitString, ct: &WkdCiphertext) -> Result<usize> {
    let lambda = ct.r.len();
    if ct.quantum.qubit_count() != 2 * lambda || ct.perm.width() as usize != k.len() {
        return Err(UnclonableError::Malformed("inconsistent ciphertext dimensions".into()));
    }
    check_len(wkd_key_bits(lambda), k.len())?;
    Ok(lambda)
}

/// Decrypts under `π(k)`; `None` (⊥) unless the prefix equals `r`.
pub fn wkd_dec<R: Rng + ?Sized>(k: &BitString, ct: &WkdCiphertext, rng: &mut R) -> Result<Option<BitString>> {
    let lambda = check_ct(k, ct)?;
    let key = inner_key(k, &ct.perm)?;
    let out = cc_dec(&key, &ct.quantum, rng)?;
    let (prefix, m) = out.split_at(lambda);
    Ok((prefix == ct.r).then_some(m))
}

/// Exact probability that [`wkd_dec`] under `k` does not return ⊥.
pub fn wkd_accept_probability(k: &BitString, ct: &WkdCiphertext) -> Result<f64> {
    let lambda = check_ct(k, ct)?;
    let key = inner_key(k, &ct.perm)?;
    Ok(cc_dec_distribution(&key, &ct.quantum)?
        .into_iter()
        .filter(|(out, _)| out.slice(0, lambda) == ct.r)
        .map(|(_, p)| p)
        .sum())
}

/// Exact output distribution of [`wkd_dec`] under `k`; `None` stands for ⊥.
pub fn wkd_dec_distribution(k: &BitString, ct: &WkdCiphertext) -> Result<Vec<(Option<BitString>, f64)>> {
    let lambda = check_ct(k, ct)?;
    let key = inner_key(k, &ct.perm)?;
    let mut reject = 0.0;
    let mut out = Vec::new();
    for (w, p) in cc_dec_distribution(&key, &ct.quantum)? {
        let (prefix, m) = w.split_at(lambda);
        if prefix == ct.r {
            out.push((Some(m), p));
        } else {
            reject += p;
        }
    }
    if reject > 0.0 {
        out.push((None, reject));
    }
    Ok(out)
}

/// Acceptance of inner key `kd` on a ciphertext made under inner key `ke`, per qubit of the prefix.
pub fn prefix_accept_probability(ke: &ConjKey, kd: &ConjKey, prefix_len: usize) -> f64 {
    (0..prefix_len)
        .map(|j| {
            if ke.theta.get(j) == kd.theta.get(j) {
                (ke.r.get(j) == kd.r.get(j)) as u8 as f64
            } else {
                0.5
            }
        })
        .product()
}

/// Wrong-key acceptance averaged over the permutation family: `(2^{3λ} − 1)/(2^{4λ} − 1)`.
pub fn wkd_wrong_key_rate(lambda: usize) -> f64 {
    let n = 2f64.powi(4 * lambda as i32);
    let hit = 2f64.powi(3 * lambda as i32);
    (hit - 1.0) / (n - 1.0)
}

/// Same quantity by direct enumeration over distinct inner-key pairs, factorized per prefix qubit.
pub fn wkd_wrong_key_rate_enumerated(lambda: usize) -> f64 {
    // Per prefix qubit the four key bits (r, θ, r', θ') contribute a weight; suffix bits are free.
    let mut per_qubit = 0.0;
    for bits in 0..16u32 {
        let (r, t, r2, t2) = (bits >> 3 & 1, bits >> 2 & 1, bits >> 1 & 1, bits & 1);
        per_qubit += if t == t2 { (r == r2) as u8 as f64 } else { 0.5 };
    }
    let n = 2f64.powi(4 * lambda as i32);
    let all_pairs = n * n * (per_qubit / 16.0).powi(lambda as i32);
    // `all_pairs` counts ordered pairs including equal keys, which always accept.
    (all_pairs - n) / (n * (n - 1.0))
}

/// Hybrid ciphertext: WKD encryption of a fresh pad plus the padded message.
#[derive(Clone, Debug)]
pub struct HybridCiphertext {
    pub inner: WkdCiphertext,
    pub pad: BitString,
}

pub fn hybrid_enc<R: Rng + ?Sized>(k: &BitString, m: &BitString, rng: &mut R) -> Result<HybridCiphertext> {
    let r = BitString::random(m.len(), rng);
    let inner = wkd_enc(k, &r, rng)?;
    Ok(HybridCiphertext { inner, pad: r.xor(m)? })
}

pub fn hybrid_dec<R: Rng + ?Sized>(k: &BitString, ct: &HybridCiphertext, rng: &mut R) -> Result<Option<BitString>> {
    check_len(ct.inner.r.len(), ct.pad.len())?;
    match wkd_dec(k, &ct.inner, rng)? {
        Some(r) => Ok(Some(r.xor(&ct.pad)?)),
        None => Ok(None),
    }
}
