//! Copy-protection of multi-bit point functions with a classical client.
//!
//! A point function `f_{y,m}` maps the marked input `y` (4λ bits) to `m` (λ bits)
//! and every other input to `0^λ`. Protection runs RSP on `2λ` qubits with bases
//! taken from `π(y)`; evaluation checks a prefix coherently and rewinds on failure.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitString, BitsError};
use crate::gf2::{self, GfError, PermKey};
use crate::protocol::{self, MultiRoundConfig, ProtocolError, Prover};
use crate::quantum::{self, gates, DensityMatrix, Matrix, Operator, QuantumError, QuantumState, StateVector, C64};
use crate::unclonable::breidbart_distribution;

pub const MAX_CP_LAMBDA: usize = 4;
/// Largest `B ⊗ C` register the piracy harness simulates densely.
pub const MAX_PIRACY_QUBITS: usize = 10;

#[derive(Debug, Error)]
pub enum CopyProtectionError {
    #[error("lambda {0} outside 1..={MAX_CP_LAMBDA}")]
    Lambda(usize),
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("pirate output has {got} qubits, expected {expected}")]
    PirateDimension { expected: usize, got: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error(transparent)]
    Gf(#[from] GfError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Unclonable(#[from] crate::unclonable::UnclonableError),
}

type Result<T> = std::result::Result<T, CopyProtectionError>;

fn check_lambda(lambda: usize) -> Result<()> {
    if lambda == 0 || lambda > MAX_CP_LAMBDA {
        return Err(CopyProtectionError::Lambda(lambda));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointFunction {
    pub y: BitString,
    pub m: BitString,
}

impl PointFunction {
    pub fn new(y: BitString, m: BitString) -> Result<Self> {
        if y.len() != 4 * m.len() {
            return Err(CopyProtectionError::Malformed(format!("marked input of {} bits for output of {} bits", y.len(), m.len())));
        }
        check_lambda(m.len())?;
        Ok(PointFunction { y, m })
    }

    pub fn random<R: Rng + ?Sized>(lambda: usize, rng: &mut R) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(PointFunction { y: BitString::random(4 * lambda, rng), m: BitString::random(lambda, rng) })
    }

    pub fn lambda(&self) -> usize {
        self.m.len()
    }

    pub fn eval(&self, x: &BitString) -> BitString {
        if *x == self.y {
            self.m.clone()
        } else {
            BitString::zeros(self.lambda())
        }
    }
}

/// Classical side data of a protected program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramPublic {
    pub lambda: usize,
    pub r: BitString,
    pub perm: PermKey,
    pub t: BitString,
}

impl ProgramPublic {
    fn check(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.r.len() != self.lambda || self.t.len() != self.lambda || self.perm.width() as usize != 4 * self.lambda {
            return Err(CopyProtectionError::Malformed("classical part has inconsistent lengths".into()));
        }
        Ok(())
    }

    /// `(s_{x,0}, s_{x,1}, θ_x)` from `π(x)`.
    fn derive(&self, x: &BitString) -> Result<(BitString, BitString, BitString)> {
        if x.len() != 4 * self.lambda {
            return Err(CopyProtectionError::Malformed(format!("input of {} bits, expected {}", x.len(), 4 * self.lambda)));
        }
        let px = gf2::pip_eval(&self.perm, x)?;
        let (s, theta) = px.split_at(2 * self.lambda);
        let (s0, s1) = s.split_at(self.lambda);
        Ok((s0, s1, theta))
    }
}

#[derive(Clone, Debug)]
pub struct ProtectedProgram {
    pub sigma: QuantumState,
    pub public: ProgramPublic,
}

impl ProtectedProgram {
    pub fn lambda(&self) -> usize {
        self.public.lambda
    }

    fn check(&self) -> Result<()> {
        self.public.check()?;
        if self.sigma.qubit_count() != 2 * self.lambda() {
            return Err(CopyProtectionError::Malformed(format!(
                "program state has {} qubits, expected {}",
                self.sigma.qubit_count(),
                2 * self.lambda()
            )));
        }
        Ok(())
    }
}

/// Bases and the RSP outcome behind a program, known only to the protector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramSecret {
    pub theta: BitString,
    pub v: BitString,
}

/// Classical part of Protect given the RSP outcome `v`.
pub fn protect_classical(f: &PointFunction, perm: &PermKey, v: &BitString) -> Result<(ProgramPublic, BitString)> {
    let lambda = f.lambda();
    if perm.width() as usize != 4 * lambda || v.len() != 2 * lambda {
        return Err(CopyProtectionError::Malformed("permutation or RSP output of the wrong width".into()));
    }
    let (s, theta) = gf2::pip_eval(perm, &f.y)?.split_at(2 * lambda);
    let (s0, s1) = s.split_at(lambda);
    let (v0, v1) = v.split_at(lambda);
    let public = ProgramPublic { lambda, r: v0.xor(&s0)?, perm: *perm, t: v1.xor(&s1)?.xor(&f.m)? };
    Ok((public, theta))
}

/// Protect with an ideal state preparation: the program state is `⊗ H^{θ_i}|v_i⟩`.
pub fn cp_protect_ideal(f: &PointFunction, perm: &PermKey, v: &BitString) -> Result<(ProtectedProgram, ProgramSecret)> {
    let (public, theta) = protect_classical(f, perm, v)?;
    let sigma = protocol::bb84_state(&theta, v)?;
    Ok((ProtectedProgram { sigma, public }, ProgramSecret { theta, v: v.clone() }))
}

/// Interactive Protect: samples `π`, runs RSP with `n = 2λ` and bases from `π(y)`. `None` on abort.
pub fn cp_protect<R: Rng + ?Sized>(
    f: &PointFunction,
    base: &MultiRoundConfig,
    prover: &mut dyn Prover,
    rng: &mut R,
) -> Result<Option<(ProtectedProgram, ProgramSecret)>> {
    let lambda = f.lambda();
    check_lambda(lambda)?;
    let perm = gf2::pip_sample(4 * lambda as u32, rng)?;
    let theta = gf2::pip_eval(&perm, &f.y)?.slice(2 * lambda, 4 * lambda);
    let cfg = MultiRoundConfig { n: 2 * lambda, ..base.clone() };
    let res = protocol::run_multi_round_with_theta(&cfg, Some(&theta), prover)?;
    if !res.accepted {
        return Ok(None);
    }
    let v = res.v.ok_or_else(|| CopyProtectionError::Malformed("accepted run without output".into()))?;
    let sigma = res
        .prover_state
        .ok_or_else(|| CopyProtectionError::Unsupported("the prover does not expose its register".into()))?;
    let (public, theta2) = protect_classical(f, &perm, &v)?;
    debug_assert_eq!(theta, theta2);
    Ok(Some((ProtectedProgram { sigma, public }, ProgramSecret { theta, v })))
}

/// Flips the ancilla (last qubit) when the `λ` prefix qubits equal `target`.
fn prefix_check(lambda: usize, target: &BitString) -> Operator {
    let q = 2 * lambda + 1;
    let dim = 1usize << q;
    let want = target.to_u64() as usize;
    let mut m = Matrix::zeros(dim, dim);
    for i in 0..dim {
        let prefix = i >> (lambda + 1);
        let j = if prefix == want { i ^ 1 } else { i };
        m[(j, i)] = C64::new(1.0, 0.0);
    }
    Operator::new(m)
}

fn drop_ancilla(state: &QuantumState, data_qubits: usize) -> Result<QuantumState> {
    let anc = [data_qubits];
    Ok(match state {
        QuantumState::Pure(s) => QuantumState::Pure(s.discard_measured(&anc, &BitString::zeros(1))?),
        QuantumState::Mixed(d) => {
            let keep: Vec<usize> = (0..data_qubits).collect();
            QuantumState::Mixed(quantum::partial_trace(d, &keep)?)
        }
    })
}

struct Prepared {
    lambda: usize,
    state: QuantumState,
    check: Operator,
    theta_x: BitString,
    s_x1: BitString,
}

fn prepare(prog: &ProtectedProgram, x: &BitString) -> Result<Prepared> {
    prog.check()?;
    let lambda = prog.lambda();
    let (s_x0, s_x1, theta_x) = prog.public.derive(x)?;
    let target = prog.public.r.xor(&s_x0)?;
    let anc = QuantumState::Pure(StateVector::zero(1)?);
    let mut mask = theta_x.clone();
    mask = mask.concat(&BitString::zeros(1));
    let state = quantum::hadamard_layer(&prog.sigma.tensor(&anc)?, &mask)?;
    let check = prefix_check(lambda, &target);
    let all: Vec<usize> = (0..2 * lambda + 1).collect();
    let state = state.apply(&check, &all)?;
    Ok(Prepared { lambda, state, check, theta_x, s_x1 })
}

impl Prepared {
    fn all(&self) -> Vec<usize> {
        (0..2 * self.lambda + 1).collect()
    }

    fn rewind_false(&self, branch: &QuantumState) -> Result<QuantumState> {
        let back = branch.apply(&self.check, &self.all())?;
        let mask = self.theta_x.concat(&BitString::zeros(1));
        let back = quantum::hadamard_layer(&back, &mask)?;
        drop_ancilla(&back, 2 * self.lambda)
    }

    fn uncheck_true(&self, branch: &QuantumState) -> Result<QuantumState> {
        let back = branch.apply(&self.check, &self.all())?;
        drop_ancilla(&back, 2 * self.lambda)
    }

    fn output(&self, public: &ProgramPublic, w: &BitString) -> Result<BitString> {
        Ok(w.slice(self.lambda, 2 * self.lambda).xor(&self.s_x1)?.xor(&public.t)?)
    }
}

/// One exact outcome of [`cp_eval`].
#[derive(Clone, Debug)]
pub struct EvalBranch {
    pub verdict: bool,
    pub output: BitString,
    pub probability: f64,
    pub state: QuantumState,
}

/// Every outcome of Eval with its exact probability and post-evaluation program state.
pub fn cp_eval_branches(prog: &ProtectedProgram, x: &BitString) -> Result<Vec<EvalBranch>> {
    let prep = prepare(prog, x)?;
    let lambda = prep.lambda;
    let data: Vec<usize> = (0..2 * lambda).collect();
    let mut out = Vec::new();
    for b in quantum::enumerate_computational(&prep.state, &[2 * lambda])? {
        if b.outcome.get(0) == 0 {
            out.push(EvalBranch {
                verdict: false,
                output: BitString::zeros(lambda),
                probability: b.probability,
                state: prep.rewind_false(&b.state)?,
            });
        } else {
            let post = prep.uncheck_true(&b.state)?;
            for w in quantum::enumerate_computational(&post, &data)? {
                out.push(EvalBranch {
                    verdict: true,
                    output: prep.output(&prog.public, &w.outcome)?,
                    probability: b.probability * w.probability,
                    state: w.state,
                });
            }
        }
    }
    Ok(out)
}

/// Sampled Eval: output and the post-evaluation program.
pub fn cp_eval<R: Rng + ?Sized>(prog: &ProtectedProgram, x: &BitString, rng: &mut R) -> Result<(BitString, ProtectedProgram)> {
    let prep = prepare(prog, x)?;
    let lambda = prep.lambda;
    let (a, branch) = quantum::measure_computational(&prep.state, &[2 * lambda], rng)?;
    let (output, state) = if a.get(0) == 0 {
        (BitString::zeros(lambda), prep.rewind_false(&branch)?)
    } else {
        let post = prep.uncheck_true(&branch)?;
        let data: Vec<usize> = (0..2 * lambda).collect();
        let (w, state) = quantum::measure_computational(&post, &data, rng)?;
        (prep.output(&prog.public, &w)?, state)
    };
    Ok((output, ProtectedProgram { sigma: state, public: prog.public.clone() }))
}

/// Probability that qubit `j` of `⊗H^{θ_i}|v_i⟩`, measured after `H^{θ'_j}`, gives `bit`.
fn qubit_prob(theta: u8, v: u8, theta_x: u8, bit: u8) -> f64 {
    if theta == theta_x {
        (v == bit) as u8 as f64
    } else {
        0.5
    }
}

/// Closed-form verdict and zero-output probabilities of Eval on an honest program.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOdds {
    /// `Pr[verdict = true]`.
    pub accept: f64,
    /// `Pr[output = 0^λ]`.
    pub zero: f64,
}

pub fn eval_odds_closed_form(secret: &ProgramSecret, public: &ProgramPublic, x: &BitString) -> Result<EvalOdds> {
    public.check()?;
    let lambda = public.lambda;
    let (s_x0, s_x1, theta_x) = public.derive(x)?;
    let target = public.r.xor(&s_x0)?;
    let zero_target = s_x1.xor(&public.t)?;
    let mut accept = 1.0;
    let mut suffix_zero = 1.0;
    for j in 0..lambda {
        accept *= qubit_prob(secret.theta.get(j), secret.v.get(j), theta_x.get(j), target.get(j));
        let k = lambda + j;
        suffix_zero *= qubit_prob(secret.theta.get(k), secret.v.get(k), theta_x.get(k), zero_target.get(j));
    }
    Ok(EvalOdds { accept, zero: (1.0 - accept) + accept * suffix_zero })
}

/// Verdict-true probability for `x ≠ y` averaged over the permutation family and RSP outputs.
pub fn false_accept_rate(lambda: usize) -> f64 {
    let n = 2f64.powi(4 * lambda as i32);
    (2f64.powi(3 * lambda as i32) - 1.0) / (n - 1.0)
}

/// POVM element of Eval on `x` producing `out`; `rotate = false` gives the same test on a classical register.
pub fn eval_povm(public: &ProgramPublic, x: &BitString, out: &BitString, rotate: bool) -> Result<Operator> {
    public.check()?;
    let lambda = public.lambda;
    let (s_x0, s_x1, theta_x) = public.derive(x)?;
    let target = public.r.xor(&s_x0)?.to_u64();
    let pad = s_x1.xor(&public.t)?.to_u64();
    let want = out.to_u64();
    let dim = 1usize << (2 * lambda);
    let low = (1u64 << lambda) - 1;
    let mut diag = Matrix::zeros(dim, dim);
    for w in 0..dim as u64 {
        let produced = if w >> lambda == target { (w & low) ^ pad } else { 0 };
        if produced == want {
            diag[(w as usize, w as usize)] = C64::new(1.0, 0.0);
        }
    }
    let op = Operator::new(diag);
    if !rotate {
        return Ok(op);
    }
    let mut u = Operator::identity(1);
    for j in 0..2 * lambda {
        let g = if theta_x.get(j) == 1 { gates::h() } else { gates::i() };
        u = Operator::new(u.matrix().kronecker(g.matrix()));
    }
    Ok(u.compose(&op)?.compose(&u)?)
}

/// Splitting channel and per-party decoders of a piracy attack.
pub trait Pirate {
    fn name(&self) -> &str;
    fn b_qubits(&self, lambda: usize) -> usize;
    fn c_qubits(&self, lambda: usize) -> usize;
    fn split(&self, prog: &ProtectedProgram) -> Result<DensityMatrix>;
    fn povm_b(&self, public: &ProgramPublic, x: &BitString, out: &BitString) -> Result<Operator>;
    fn povm_c(&self, public: &ProgramPublic, x: &BitString, out: &BitString) -> Result<Operator>;
}

/// `B` keeps the program and evaluates honestly; `C` guesses uniformly.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardPirate;

/// Measures every program qubit in the Breidbart basis; both parties evaluate on the outcome.
#[derive(Clone, Copy, Debug, Default)]
pub struct BreidbartPirate;

/// Both parties answer `0^λ` without any quantum data.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPirate;

fn constant_povm(out: &BitString, answer: &BitString) -> Operator {
    let v = (out == answer) as u8 as f64;
    Operator::identity(1).scale(C64::new(v, 0.0))
}

impl Pirate for ForwardPirate {
    fn name(&self) -> &str {
        "forward"
    }

    fn b_qubits(&self, lambda: usize) -> usize {
        2 * lambda
    }

    fn c_qubits(&self, _lambda: usize) -> usize {
        0
    }

    fn split(&self, prog: &ProtectedProgram) -> Result<DensityMatrix> {
        Ok(prog.sigma.to_density())
    }

    fn povm_b(&self, public: &ProgramPublic, x: &BitString, out: &BitString) -> Result<Operator> {
        eval_povm(public, x, out, true)
    }

    fn povm_c(&self, public: &ProgramPublic, _x: &BitString, _out: &BitString) -> Result<Operator> {
        let p = 0.5f64.powi(public.lambda as i32);
        Ok(Operator::identity(1).scale(C64::new(p, 0.0)))
    }
}

impl Pirate for BreidbartPirate {
    fn name(&self) -> &str {
        "breidbart"
    }

    fn b_qubits(&self, lambda: usize) -> usize {
        2 * lambda
    }

    fn c_qubits(&self, lambda: usize) -> usize {
        2 * lambda
    }

    fn split(&self, prog: &ProtectedProgram) -> Result<DensityMatrix> {
        let probs = breidbart_distribution(&prog.sigma.to_density())?;
        let dim = probs.len();
        let mut out = Matrix::zeros(dim * dim, dim * dim);
        for (w, p) in probs.iter().enumerate() {
            let idx = w * dim + w;
            out[(idx, idx)] = C64::new(*p, 0.0);
        }
        Ok(DensityMatrix::new(out)?)
    }

    fn povm_b(&self, public: &ProgramPublic, x: &BitString, out: &BitString) -> Result<Operator> {
        eval_povm(public, x, out, false)
    }

    fn povm_c(&self, public: &ProgramPublic, x: &BitString, out: &BitString) -> Result<Operator> {
        eval_povm(public, x, out, false)
    }
}

impl Pirate for ZeroPirate {
    fn name(&self) -> &str {
        "zero"
    }

    fn b_qubits(&self, _lambda: usize) -> usize {
        0
    }

    fn c_qubits(&self, _lambda: usize) -> usize {
        0
    }

    fn split(&self, _prog: &ProtectedProgram) -> Result<DensityMatrix> {
        Ok(DensityMatrix::new(Matrix::identity(1, 1))?)
    }

    fn povm_b(&self, public: &ProgramPublic, _x: &BitString, out: &BitString) -> Result<Operator> {
        Ok(constant_povm(out, &BitString::zeros(public.lambda)))
    }

    fn povm_c(&self, public: &ProgramPublic, _x: &BitString, out: &BitString) -> Result<Operator> {
        Ok(constant_povm(out, &BitString::zeros(public.lambda)))
    }
}

pub fn pirate_by_name(name: &str) -> Option<Box<dyn Pirate>> {
    match name {
        "forward" => Some(Box::new(ForwardPirate)),
        "breidbart" => Some(Box::new(BreidbartPirate)),
        "zero" => Some(Box::new(ZeroPirate)),
        _ => None,
    }
}

/// Challenge distribution; each party independently receives `y` with probability `p_marked`,
/// otherwise a uniform input different from `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChallengeDist {
    BothMarked,
    Independent { p_marked: f64 },
    NeverMarked,
}

impl ChallengeDist {
    pub fn p_marked(&self) -> f64 {
        match self {
            ChallengeDist::BothMarked => 1.0,
            ChallengeDist::Independent { p_marked } => *p_marked,
            ChallengeDist::NeverMarked => 0.0,
        }
    }

    fn sample_one<R: Rng + ?Sized>(&self, y: &BitString, rng: &mut R) -> BitString {
        if rng.gen_bool(self.p_marked().clamp(0.0, 1.0)) {
            return y.clone();
        }
        loop {
            let x = BitString::random(y.len(), rng);
            if x != *y {
                return x;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, y: &BitString, rng: &mut R) -> (BitString, BitString) {
        let b = self.sample_one(y, rng);
        let c = self.sample_one(y, rng);
        (b, c)
    }

    /// `Pr[x_B ≠ y ≠ x_C] + max{Pr[x_B ≠ y = x_C], Pr[x_B = y ≠ x_C]}`.
    pub fn trivial_baseline(&self) -> f64 {
        let p = self.p_marked();
        let q = 1.0 - p;
        q * q + (q * p).max(p * q)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PiracyResult {
    pub lambda: usize,
    pub pirate: String,
    pub challenge: ChallengeDist,
    pub mode: String,
    pub success: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    pub p_triv: f64,
}

fn split_checked(pirate: &dyn Pirate, prog: &ProtectedProgram) -> Result<DensityMatrix> {
    let lambda = prog.lambda();
    let expected = pirate.b_qubits(lambda) + pirate.c_qubits(lambda);
    if expected > MAX_PIRACY_QUBITS {
        return Err(CopyProtectionError::Unsupported(format!("pirate register of {expected} qubits is too large to simulate")));
    }
    let rho = pirate.split(prog)?;
    if rho.qubit_count() != expected {
        return Err(CopyProtectionError::PirateDimension { expected, got: rho.qubit_count() });
    }
    Ok(rho)
}

fn joint_success(rho: &DensityMatrix, eb: &Operator, ec: &Operator) -> Result<f64> {
    Ok(rho.expectation(&Operator::new(eb.matrix().kronecker(ec.matrix())))?.re)
}

/// Exact success for fixed challenges.
pub fn piracy_success_on(
    pirate: &dyn Pirate,
    f: &PointFunction,
    prog: &ProtectedProgram,
    xb: &BitString,
    xc: &BitString,
) -> Result<f64> {
    let rho = split_checked(pirate, prog)?;
    let eb = pirate.povm_b(&prog.public, xb, &f.eval(xb))?;
    let ec = pirate.povm_c(&prog.public, xc, &f.eval(xc))?;
    joint_success(&rho, &eb, &ec)
}

/// Decoder averaged over one party's challenge marginal.
fn averaged_povm(
    f: &PointFunction,
    public: &ProgramPublic,
    p_marked: f64,
    povm: impl Fn(&ProgramPublic, &BitString, &BitString) -> Result<Operator>,
) -> Result<Operator> {
    let mut acc: Option<Operator> = None;
    let mut add = |op: Operator, w: f64| -> Result<()> {
        let op = op.scale(C64::new(w, 0.0));
        acc = Some(match acc.take() {
            Some(a) => a.add(&op)?,
            None => op,
        });
        Ok(())
    };
    add(povm(public, &f.y, &f.m)?, p_marked)?;
    if p_marked < 1.0 {
        let others = (1u64 << f.y.len()) - 1;
        let w = (1.0 - p_marked) / others as f64;
        let zero = BitString::zeros(f.lambda());
        for x in BitString::all(f.y.len()) {
            if x != f.y {
                add(povm(public, &x, &zero)?, w)?;
            }
        }
    }
    Ok(acc.expect("at least one challenge"))
}

/// Exact expectation over the permutation family, marked outputs, RSP outcomes and challenges,
/// with an ideal state preparation. Limited to `λ = 1`.
pub fn piracy_experiment_exact(pirate: &dyn Pirate, lambda: usize, dist: ChallengeDist) -> Result<PiracyResult> {
    if lambda != 1 {
        return Err(CopyProtectionError::Unsupported("exhaustive piracy enumeration is limited to lambda = 1".into()));
    }
    // The family is closed under input translation, so the marked input can be fixed.
    let y = BitString::zeros(4 * lambda);
    let perms = PermKey::all(4 * lambda as u32)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for m in BitString::all(lambda) {
        let f = PointFunction::new(y.clone(), m)?;
        for perm in &perms {
            for v in BitString::all(2 * lambda) {
                let (prog, _) = cp_protect_ideal(&f, perm, &v)?;
                let rho = split_checked(pirate, &prog)?;
                let p = dist.p_marked();
                let eb = averaged_povm(&f, &prog.public, p, |pb, x, o| pirate.povm_b(pb, x, o))?;
                let ec = averaged_povm(&f, &prog.public, p, |pb, x, o| pirate.povm_c(pb, x, o))?;
                total += joint_success(&rho, &eb, &ec)?;
                count += 1;
            }
        }
    }
    Ok(PiracyResult {
        lambda,
        pirate: pirate.name().into(),
        challenge: dist,
        mode: "exact".into(),
        success: total / count as f64,
        stderr: None,
        trials: None,
        p_triv: dist.trivial_baseline(),
    })
}

/// Seeded trials with interactive Protect against honest RSP provers. A trial whose
/// protocol aborts counts as a loss; otherwise it succeeds with its exact probability.
pub fn piracy_experiment_trials<R: Rng + ?Sized>(
    pirate: &dyn Pirate,
    lambda: usize,
    dist: ChallengeDist,
    trials: usize,
    base: &MultiRoundConfig,
    rng: &mut R,
) -> Result<PiracyResult> {
    check_lambda(lambda)?;
    let mut wins = 0usize;
    for _ in 0..trials {
        let f = PointFunction::random(lambda, rng)?;
        let seed: u64 = rng.gen();
        let cfg = MultiRoundConfig { seed, ..base.clone() };
        let mut prover = protocol::SimulatedProver::honest(seed);
        let Some((prog, _)) = cp_protect(&f, &cfg, &mut prover, rng)? else { continue };
        let (xb, xc) = dist.sample(&f.y, rng);
        let p = piracy_success_on(pirate, &f, &prog, &xb, &xc)?.clamp(0.0, 1.0);
        wins += rng.gen_bool(p) as usize;
    }
    let p = wins as f64 / trials.max(1) as f64;
    Ok(PiracyResult {
        lambda,
        pirate: pirate.name().into(),
        challenge: dist,
        mode: "trials".into(),
        success: p,
        stderr: Some((p * (1.0 - p) / trials.max(1) as f64).sqrt()),
        trials: Some(trials),
        p_triv: dist.trivial_baseline(),
    })
}

/// Exact success of the Breidbart pirate on marked challenges: `c^{2λ} + 2^{-λ}(1 − c^λ)` with `c = cos²(π/8)`.
pub fn breidbart_pirate_marked_value(lambda: usize) -> f64 {
    let c = crate::unclonable::breidbart_value(1);
    c.powi(2 * lambda as i32) + 0.5f64.powi(lambda as i32) * (1.0 - c.powi(lambda as i32))
}

/// On-disk form of a program: classical JSON plus a side file of amplitudes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProgramFile {
    #[serde(flatten)]
    pub public: ProgramPublic,
    pub state_file: String,
    pub state_format: String,
}

const STATE_FORMAT: &str = "simulated statevector, little-endian f64 (re, im) pairs; not a physical encoding";

pub fn save_program(prog: &ProtectedProgram, json_path: &Path) -> Result<PathBuf> {
    prog.check()?;
    let QuantumState::Pure(sv) = &prog.sigma else {
        return Err(CopyProtectionError::Unsupported("only pure program states can be saved".into()));
    };
    let state_path = json_path.with_extension("state.bin");
    let mut bytes = Vec::with_capacity(sv.dim() * 16);
    for a in sv.amplitudes() {
        bytes.extend_from_slice(&a.re.to_le_bytes());
        bytes.extend_from_slice(&a.im.to_le_bytes());
    }
    fs::write(&state_path, bytes).map_err(|e| CopyProtectionError::Io(e.to_string()))?;
    let file = ProgramFile {
        public: prog.public.clone(),
        state_file: state_path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        state_format: STATE_FORMAT.into(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| CopyProtectionError::Io(e.to_string()))?;
    fs::write(json_path, text).map_err(|e| CopyProtectionError::Io(e.to_string()))?;
    Ok(state_path)
}

pub fn load_program(json_path: &Path) -> Result<ProtectedProgram> {
    let text = fs::read_to_string(json_path).map_err(|e| CopyProtectionError::Io(e.to_string()))?;
    let file: ProgramFile = serde_json::from_str(&text).map_err(|e| CopyProtectionError::Malformed(e.to_string()))?;
    file.public.check()?;
    let state_path = json_path.parent().unwrap_or(Path::new(".")).join(&file.state_file);
    let bytes = fs::read(&state_path).map_err(|e| CopyProtectionError::Io(e.to_string()))?;
    let dim = 1usize << (2 * file.public.lambda);
    if bytes.len() != dim * 16 {
        return Err(CopyProtectionError::Malformed(format!("state file has {} bytes, expected {}", bytes.len(), dim * 16)));
    }
    let amps = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    let prog = ProtectedProgram { sigma: QuantumState::Pure(StateVector::new(amps)?), public: file.public };
    prog.check()?;
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(33)
    }

    fn ideal(lambda: usize, g: &mut ChaCha20Rng) -> (PointFunction, ProtectedProgram, ProgramSecret) {
        let f = PointFunction::random(lambda, g).unwrap();
        let perm = gf2::pip_sample(4 * lambda as u32, g).unwrap();
        let v = BitString::random(2 * lambda, g);
        let (p, s) = cp_protect_ideal(&f, &perm, &v).unwrap();
        (f, p, s)
    }

    #[test]
    fn marked_input_returns_marked_output() {
        let mut g = rng();
        for lambda in 1..=3 {
            for _ in 0..5 {
                let (f, prog, _) = ideal(lambda, &mut g);
                let br = cp_eval_branches(&prog, &f.y).unwrap();
                let p: f64 = br.iter().filter(|b| b.output == f.m).map(|b| b.probability).sum();
                assert!((p - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simulator_matches_closed_form_on_all_inputs() {
        let mut g = rng();
        for lambda in 1..=2 {
            for _ in 0..3 {
                let (_, prog, secret) = ideal(lambda, &mut g);
                for x in BitString::all(4 * lambda) {
                    let br = cp_eval_branches(&prog, &x).unwrap();
                    let accept: f64 = br.iter().filter(|b| b.verdict).map(|b| b.probability).sum();
                    let zero: f64 = br.iter().filter(|b| b.output.to_u64() == 0).map(|b| b.probability).sum();
                    let odds = eval_odds_closed_form(&secret, &prog.public, &x).unwrap();
                    assert!((accept - odds.accept).abs() < 1e-12);
                    assert!((zero - odds.zero).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn false_branch_rewinds_exactly_when_deterministic() {
        let mut g = rng();
        let (f, prog, secret) = ideal(2, &mut g);
        for x in BitString::all(8) {
            if x == f.y {
                continue;
            }
            let odds = eval_odds_closed_form(&secret, &prog.public, &x).unwrap();
            if odds.accept.abs() < 1e-15 {
                let br = cp_eval_branches(&prog, &x).unwrap();
                assert_eq!(br.len(), 1);
                assert!((br[0].state.fidelity(&prog.sigma).unwrap() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permutation_average_of_false_accept() {
        let y = BitString::zeros(4);
        let x = BitString::from_u64(5, 4);
        let f = PointFunction::new(y, "1".parse().unwrap()).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for perm in PermKey::all(4).unwrap() {
            for v in BitString::all(2) {
                let (prog, secret) = cp_protect_ideal(&f, &perm, &v).unwrap();
                total += eval_odds_closed_form(&secret, &prog.public, &x).unwrap().accept;
                count += 1;
            }
        }
        assert!((total / count as f64 - false_accept_rate(1)).abs() < 1e-12);
    }

    #[test]
    fn interactive_protect_round_trip() {
        let mut g = rng();
        let f = PointFunction::random(2, &mut g).unwrap();
        let cfg = MultiRoundConfig { m: 2, width: 2, seed: 5, ..Default::default() };
        let mut prover = protocol::SimulatedProver::honest(5);
        let (prog, secret) = cp_protect(&f, &cfg, &mut prover, &mut g).unwrap().unwrap();
        let expected = protocol::bb84_state(&secret.theta, &secret.v).unwrap();
        assert!((prog.sigma.fidelity(&expected).unwrap() - 1.0).abs() < 1e-9);
        for _ in 0..5 {
            let (out, _) = cp_eval(&prog, &f.y, &mut g).unwrap();
            assert_eq!(out, f.m);
        }
    }

    #[test]
    fn forward_and_zero_pirates() {
        let fwd = piracy_experiment_exact(&ForwardPirate, 1, ChallengeDist::BothMarked).unwrap();
        assert!((fwd.success - 0.5).abs() < 1e-12);
        assert!(fwd.p_triv.abs() < 1e-12);
        let zero = piracy_experiment_exact(&ZeroPirate, 1, ChallengeDist::NeverMarked).unwrap();
        assert!((zero.success - 1.0).abs() < 1e-12);
        assert!((zero.p_triv - 1.0).abs() < 1e-12);
    }

    #[test]
    fn breidbart_pirate_exact_value() {
        let r = piracy_experiment_exact(&BreidbartPirate, 1, ChallengeDist::BothMarked).unwrap();
        assert!((r.success - breidbart_pirate_marked_value(1)).abs() < 1e-12, "{}", r.success);
    }

    #[test]
    fn program_file_round_trip() {
        let mut g = rng();
        let (f, prog, _) = ideal(2, &mut g);
        let dir = std::env::temp_dir().join(format!("cp-file-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("prog.json");
        save_program(&prog, &path).unwrap();
        let back = load_program(&path).unwrap();
        assert_eq!(back.public, prog.public);
        assert!((back.sigma.fidelity(&prog.sigma).unwrap() - 1.0).abs() < 1e-15);
        let (out, _) = cp_eval(&back, &f.y, &mut g).unwrap();
        assert_eq!(out, f.m);
        fs::remove_dir_all(&dir).ok();
    }
}
