//! Device-level diagnostics for small `n`.
//!
//! A [`Device`] stores, per copy and per key mode, the image branches of the
//! honest prover compressed to the span `{|0, x̂_0⟩, |1, x̂_1⟩}`. States for
//! arbitrary `θ⃗` are tensor products of per-copy blocks, so every quantity is
//! an exact finite sum over `(y⃗, d⃗)` blocks.
//!
//! Perturbed devices carry a classical label in the device register: with
//! weight `1 − ε` the honest answer measurement is used, and with weight
//! `ε / 2^n` each fixed answer string `r` is returned regardless of state.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bits::{parity_dot, BitString};
use crate::entcf::{self, BasisChoice, EntcfError, PublicKey, Trapdoor};
use crate::protocol::{commit_branches, ProtocolError};
use crate::quantum::{gates, max_abs, pauli_string, trace_norm, Matrix, Operator, QuantumError, C64};

pub const MAX_DEVICE_COPIES: usize = 3;
pub const MAX_DEVICE_WIDTH: u32 = 2;
pub const MAX_ISOMETRY_COPIES: usize = 2;

#[derive(Debug, Error)]
pub enum RigidityError {
    #[error("dimension guard: {0}")]
    Guard(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("compressed honest state lost weight {0}")]
    Compression(f64),
    #[error(transparent)]
    Entcf(#[from] EntcfError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

type Result<T> = std::result::Result<T, RigidityError>;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn bit(mask: u32, i: usize, n: usize) -> u8 {
    ((mask >> (n - 1 - i)) & 1) as u8
}

fn to_bits(mask: u32, n: usize) -> BitString {
    BitString::from_u64(mask as u64, n)
}

#[derive(Clone, Debug)]
struct Branch {
    y: u64,
    weight: f64,
    xhat: [u64; 2],
    /// 2×2 density matrix on the compressed space.
    rho: Matrix,
}

#[derive(Clone, Debug)]
struct CopyModel {
    trapdoor: Trapdoor,
    branches: Vec<Branch>,
}

/// Explicit device model `(S, Π, M, P)` for up to three copies.
#[derive(Clone, Debug)]
pub struct Device {
    n: usize,
    width: u32,
    /// `models[i][mode]`.
    models: Vec<[CopyModel; 2]>,
    epsilon: f64,
}

/// One `(y⃗)` block of `ψ^(θ⃗)`.
#[derive(Clone, Debug)]
pub struct PsiBlock {
    pub ys: Vec<u64>,
    pub rho: Matrix,
}

/// One `(y⃗, d⃗, label)` block of `σ^(θ⃗)`.
#[derive(Clone, Debug)]
pub struct SigmaBlock {
    pub ys: Vec<u64>,
    pub ds: Vec<u64>,
    /// Fixed-answer label of a perturbed device; `None` for the honest part.
    pub junk: Option<u32>,
    /// Verifier value `v⃗` of this block (`b̂` for θ_i = 0, `û` for θ_i = 1), copy 0 in the top bit.
    pub v: u32,
    /// `û` of the claw-free key of each copy.
    pub u: u32,
    pub rho: Matrix,
}

#[derive(Clone, Debug)]
pub struct SigmaState {
    pub n: usize,
    pub theta: BitString,
    pub blocks: Vec<SigmaBlock>,
}

impl SigmaState {
    pub fn total_trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.rho.trace().re).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ObservableKind {
    Z,
    X,
    Xtilde,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ObservableSpec {
    pub kind: ObservableKind,
    pub a: BitString,
}

fn proj(v: u8) -> Matrix {
    let mut m = Matrix::zeros(2, 2);
    m[(v as usize, v as usize)] = c(1.0);
    m
}

fn kron_all(ms: &[Matrix]) -> Matrix {
    let mut out = Matrix::from_element(1, 1, c(1.0));
    for m in ms {
        out = out.kronecker(m);
    }
    out
}

impl Device {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn trapdoor(&self, copy: usize, mode: BasisChoice) -> &Trapdoor {
        &self.models[copy][mode.bit() as usize].trapdoor
    }

    pub fn public_key(&self, copy: usize, mode: BasisChoice) -> PublicKey {
        self.trapdoor(copy, mode).public_key()
    }

    fn check_theta(&self, theta: &BitString) -> Result<()> {
        if theta.len() != self.n {
            return Err(RigidityError::Invalid(format!("theta has {} bits, expected {}", theta.len(), self.n)));
        }
        Ok(())
    }

    /// Blocks of `ψ^(θ⃗)`, one per image tuple.
    pub fn psi(&self, theta: &BitString) -> Result<Vec<PsiBlock>> {
        self.check_theta(theta)?;
        let mut out = vec![PsiBlock { ys: vec![], rho: Matrix::from_element(1, 1, c(1.0)) }];
        for i in 0..self.n {
            let model = &self.models[i][theta.get(i) as usize];
            let mut next = Vec::with_capacity(out.len() * model.branches.len());
            for blk in &out {
                for br in &model.branches {
                    let mut ys = blk.ys.clone();
                    ys.push(br.y);
                    next.push(PsiBlock { ys, rho: blk.rho.kronecker(&(&br.rho * c(br.weight))) });
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Kraus operator of outcome `d` of the equation measurement on one copy.
    fn kraus(&self, xhat: [u64; 2], d: u64) -> Matrix {
        let s = (1u64 << self.width) as f64;
        let mut k = Matrix::zeros(2, 2);
        for b in 0..2 {
            let sign = if parity_dot(d, xhat[b]) == 1 { -1.0 } else { 1.0 };
            k[(b, b)] = c(sign / s.sqrt());
        }
        k
    }

    /// Preimage projector `Π^{(b,x)}` of one copy on branch `y`.
    fn preimage_projector(&self, br: &Branch, b: u8, x: u64) -> Matrix {
        if br.xhat[b as usize] == x {
            proj(b)
        } else {
            Matrix::zeros(2, 2)
        }
    }

    /// Honest answer projector `P_q^{(v⃗)}` for the unlabeled part.
    fn honest_answer(&self, q: u8, v: u32) -> Matrix {
        let h = gates::h().into_matrix();
        let parts: Vec<Matrix> = (0..self.n)
            .map(|i| {
                let p = proj(bit(v, i, self.n));
                if q == 1 {
                    &h * p * &h
                } else {
                    p
                }
            })
            .collect();
        kron_all(&parts)
    }

    /// `P_q^{(v⃗)}` on a block with the given label.
    pub fn answer_projector(&self, q: u8, v: u32, junk: Option<u32>) -> Matrix {
        match junk {
            None => self.honest_answer(q, v),
            Some(r) if r == v => Matrix::identity(self.dim(), self.dim()),
            Some(_) => Matrix::zeros(self.dim(), self.dim()),
        }
    }

    fn labels(&self) -> Vec<(Option<u32>, f64)> {
        let mut out = Vec::new();
        if self.epsilon < 1.0 {
            out.push((None, 1.0 - self.epsilon));
        }
        if self.epsilon > 0.0 {
            let w = self.epsilon / self.dim() as f64;
            out.extend((0..self.dim() as u32).map(|r| (Some(r), w)));
        }
        out
    }

    /// `σ^(θ⃗)`: every `(y⃗, d⃗)` outcome of the equation measurement applied to `ψ^(θ⃗)`.
    pub fn sigma_state(&self, theta: &BitString) -> Result<SigmaState> {
        self.check_theta(theta)?;
        struct Partial {
            ys: Vec<u64>,
            ds: Vec<u64>,
            v: u32,
            u: u32,
            rho: Matrix,
        }
        let mut out = vec![Partial { ys: vec![], ds: vec![], v: 0, u: 0, rho: Matrix::from_element(1, 1, c(1.0)) }];
        for i in 0..self.n {
            let t = theta.get(i);
            let model = &self.models[i][t as usize];
            let claw_td = &self.models[i][1].trapdoor;
            let mut per_copy = Vec::new();
            for br in &model.branches {
                for d in 0..(1u64 << self.width) {
                    let k = self.kraus(br.xhat, d);
                    let rho = &k * (&br.rho * c(br.weight)) * k.adjoint();
                    let v = if t == 0 { entcf::decode_b(&model.trapdoor, br.y)? } else { entcf::decode_u(&model.trapdoor, br.y, d)? };
                    let u = if t == 1 { v } else { entcf::claw_parity(claw_td, d)? };
                    per_copy.push((br.y, d, v, u, rho));
                }
            }
            let mut next = Vec::with_capacity(out.len() * per_copy.len());
            for p in &out {
                for (y, d, v, u, rho) in &per_copy {
                    let mut ys = p.ys.clone();
                    ys.push(*y);
                    let mut ds = p.ds.clone();
                    ds.push(*d);
                    next.push(Partial {
                        ys,
                        ds,
                        v: (p.v << 1) | *v as u32,
                        u: (p.u << 1) | *u as u32,
                        rho: p.rho.kronecker(rho),
                    });
                }
            }
            out = next;
        }
        let labels = self.labels();
        let mut blocks = Vec::with_capacity(out.len() * labels.len());
        for p in out {
            for &(junk, w) in &labels {
                blocks.push(SigmaBlock {
                    ys: p.ys.clone(),
                    ds: p.ds.clone(),
                    junk,
                    v: p.v,
                    u: p.u,
                    rho: &p.rho * c(w),
                });
            }
        }
        Ok(SigmaState { n: self.n, theta: theta.clone(), blocks })
    }

    /// Checks normalization of every `ψ^(θ⃗)` and completeness/projectivity of Π, M and P.
    pub fn check(&self, tol: f64) -> Result<()> {
        let d = self.dim();
        for t in BitString::all(self.n) {
            let tr: f64 = self.psi(&t)?.iter().map(|b| b.rho.trace().re).sum();
            if (tr - 1.0).abs() > tol {
                return Err(RigidityError::Invalid(format!("psi trace {tr} for theta {t}")));
            }
        }
        let id2 = Matrix::identity(2, 2);
        for copy in &self.models {
            for model in copy {
                for br in &model.branches {
                    let mut sum = Matrix::zeros(2, 2);
                    for b in 0..2u8 {
                        for x in 0..(1u64 << self.width) {
                            let p = self.preimage_projector(br, b, x);
                            if max_abs(&(&p * &p - &p)) > tol {
                                return Err(RigidityError::Invalid("preimage element is not a projector".into()));
                            }
                            sum += p;
                        }
                    }
                    if max_abs(&(sum - &id2)) > tol {
                        return Err(RigidityError::Invalid("preimage measurement is incomplete".into()));
                    }
                    let mut ksum = Matrix::zeros(2, 2);
                    for dd in 0..(1u64 << self.width) {
                        let k = self.kraus(br.xhat, dd);
                        ksum += k.adjoint() * &k;
                    }
                    if max_abs(&(ksum - &id2)) > tol {
                        return Err(RigidityError::Invalid("equation measurement is incomplete".into()));
                    }
                }
            }
        }
        for (junk, _) in self.labels() {
            for q in 0..2 {
                let mut sum = Matrix::zeros(d, d);
                for v in 0..d as u32 {
                    let p = self.answer_projector(q, v, junk);
                    if max_abs(&(&p * &p - &p)) > tol {
                        return Err(RigidityError::Invalid("answer element is not a projector".into()));
                    }
                    sum += p;
                }
                if max_abs(&(sum - Matrix::identity(d, d))) > tol {
                    return Err(RigidityError::Invalid("answer measurement is incomplete".into()));
                }
            }
        }
        Ok(())
    }
}

/// Builds the honest device from the simulated prover, one key per copy and mode.
pub fn device_from_honest<R: Rng + ?Sized>(n: usize, width: u32, rng: &mut R) -> Result<Device> {
    if n == 0 || n > MAX_DEVICE_COPIES || width > MAX_DEVICE_WIDTH {
        return Err(RigidityError::Guard(format!(
            "n = {n}, width = {width}; need 1 ≤ n ≤ {MAX_DEVICE_COPIES} and width ≤ {MAX_DEVICE_WIDTH}"
        )));
    }
    let w = width as usize;
    let mut models = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pair = Vec::with_capacity(2);
        for mode in [BasisChoice::Computational, BasisChoice::Hadamard] {
            let kp = entcf::gen(mode, width, rng)?;
            let mut branches = Vec::new();
            for (y, p, state) in commit_branches(&kp.key)? {
                let x0 = entcf::decode_x(&kp.trapdoor, y, 0)?;
                let x1 = entcf::decode_x(&kp.trapdoor, y, 1)?;
                let xs = [x0, x1];
                let placeholder = x0.or(x1).unwrap_or(0);
                let xhat = [x0.unwrap_or(placeholder), x1.unwrap_or(placeholder)];
                let amps = state.amplitudes();
                let mut col = Matrix::zeros(2, 1);
                for b in 0..2 {
                    if let Some(x) = xs[b] {
                        col[(b, 0)] = amps[(b << w) | x as usize];
                    }
                }
                let kept: f64 = col.iter().map(|a| a.norm_sqr()).sum();
                if (kept - 1.0).abs() > 1e-10 {
                    return Err(RigidityError::Compression(1.0 - kept));
                }
                branches.push(Branch { y, weight: p, xhat, rho: &col * col.adjoint() });
            }
            pair.push(CopyModel { trapdoor: kp.trapdoor, branches });
        }
        let claw = pair.pop().unwrap();
        let inj = pair.pop().unwrap();
        models.push([inj, claw]);
    }
    Ok(Device { n, width, models, epsilon: 0.0 })
}

/// Replaces the answer measurement with a uniformly random answer with probability `epsilon`.
pub fn perturb_device(dev: &Device, epsilon: f64) -> Result<Device> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(RigidityError::Invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let combined = 1.0 - (1.0 - dev.epsilon) * (1.0 - epsilon);
    Ok(Device { epsilon: combined, ..dev.clone() })
}

/// Blocks of `σ^(θ⃗, v, a⃗)`: those whose verifier value satisfies `v⃗ · a⃗ = v`.
pub fn partial_sigma(dev: &Device, theta: &BitString, v: u8, a: &BitString) -> Result<SigmaState> {
    let mut s = dev.sigma_state(theta)?;
    let am = a.to_u64();
    s.blocks.retain(|b| parity_dot(b.v as u64, am) == v);
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Gammas {
    pub gamma_p: f64,
    pub gamma_h: f64,
}

/// Exact failure probabilities of preimage and Hadamard rounds, θ uniform.
pub fn gammas(dev: &Device) -> Result<Gammas> {
    let mut gamma_p = 0.0;
    let mut gamma_h = 0.0;
    for t in 0..2u8 {
        let theta = if t == 0 { BitString::zeros(dev.n) } else { BitString::ones(dev.n) };
        let mut pass = 1.0;
        for i in 0..dev.n {
            let model = &dev.models[i][t as usize];
            let key = model.trapdoor.public_key();
            let mut p_i = 0.0;
            for br in &model.branches {
                for b in 0..2u8 {
                    for x in 0..(1u64 << dev.width) {
                        if entcf::chk(&key, br.y, b, x) {
                            let p = dev.preimage_projector(br, b, x);
                            p_i += br.weight * (p * &br.rho).trace().re;
                        }
                    }
                }
            }
            pass *= p_i;
        }
        gamma_p += 0.5 * (1.0 - pass);

        let sigma = dev.sigma_state(&theta)?;
        let projectors = answer_table(dev, t);
        let mut fail = 0.0;
        for blk in &sigma.blocks {
            for v in 0..dev.dim() as u32 {
                if v != blk.v {
                    fail += trace_prod(&projectors.get(blk.junk, v, dev), &blk.rho);
                }
            }
        }
        gamma_h += 0.5 * fail;
    }
    Ok(Gammas { gamma_p, gamma_h })
}

struct AnswerTable {
    honest: Vec<Matrix>,
    q: u8,
}

impl AnswerTable {
    fn get(&self, junk: Option<u32>, v: u32, dev: &Device) -> Matrix {
        match junk {
            None => self.honest[v as usize].clone(),
            Some(_) => dev.answer_projector(self.q, v, junk),
        }
    }
}

fn answer_table(dev: &Device, q: u8) -> AnswerTable {
    AnswerTable { honest: (0..dev.dim() as u32).map(|v| dev.honest_answer(q, v)).collect(), q }
}

fn trace_prod(a: &Matrix, b: &Matrix) -> f64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s.re
}

fn trace_prod_c(a: &Matrix, b: &Matrix) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

/// Cached `Z(a⃗)` and `X(a⃗)` per block label.
pub struct Observables {
    n: usize,
    z: Vec<Vec<Matrix>>,
    x: Vec<Vec<Matrix>>,
}

impl Observables {
    pub fn new(dev: &Device) -> Self {
        let d = dev.dim();
        let labels: Vec<Option<u32>> = std::iter::once(None).chain((0..d as u32).map(Some)).collect();
        let build = |q: u8, junk: Option<u32>| -> Vec<Matrix> {
            let ps: Vec<Matrix> = (0..d as u32).map(|v| dev.answer_projector(q, v, junk)).collect();
            (0..d as u64)
                .map(|a| {
                    let mut m = Matrix::zeros(d, d);
                    for (v, p) in ps.iter().enumerate() {
                        let s = if parity_dot(a, v as u64) == 1 { -1.0 } else { 1.0 };
                        m += p * c(s);
                    }
                    m
                })
                .collect()
        };
        let z = labels.iter().map(|&j| build(0, j)).collect();
        let x = labels.iter().map(|&j| build(1, j)).collect();
        Observables { n: dev.n, z, x }
    }

    fn slot(junk: Option<u32>) -> usize {
        junk.map(|r| r as usize + 1).unwrap_or(0)
    }

    pub fn z(&self, a: u32, junk: Option<u32>) -> &Matrix {
        &self.z[Self::slot(junk)][a as usize]
    }

    pub fn x(&self, a: u32, junk: Option<u32>) -> &Matrix {
        &self.x[Self::slot(junk)][a as usize]
    }

    pub fn xtilde(&self, a: u32, blk: &SigmaBlock) -> Matrix {
        let x = self.x(a, blk.junk);
        if parity_dot(a as u64, blk.u as u64) == 1 {
            -x
        } else {
            x.clone()
        }
    }

    /// Projector onto outcome `v` of `Z(a⃗)`.
    pub fn z_outcome(&self, a: u32, v: u8, junk: Option<u32>) -> Matrix {
        self.outcome(self.z(a, junk), v)
    }

    pub fn x_outcome(&self, a: u32, v: u8, junk: Option<u32>) -> Matrix {
        self.outcome(self.x(a, junk), v)
    }

    fn outcome(&self, o: &Matrix, v: u8) -> Matrix {
        let d = 1 << self.n;
        let id = Matrix::identity(d, d);
        let s = if v == 1 { -1.0 } else { 1.0 };
        (id + o * c(s)) * c(0.5)
    }
}

/// The observable of `spec` on one block.
pub fn observable(dev: &Device, spec: &ObservableSpec, blk: &SigmaBlock) -> Result<Operator> {
    if spec.a.len() != dev.n {
        return Err(RigidityError::Invalid(format!("a has {} bits, expected {}", spec.a.len(), dev.n)));
    }
    let obs = Observables::new(dev);
    let a = spec.a.to_u64() as u32;
    let m = match spec.kind {
        ObservableKind::Z => obs.z(a, blk.junk).clone(),
        ObservableKind::X => obs.x(a, blk.junk).clone(),
        ObservableKind::Xtilde => obs.xtilde(a, blk),
    };
    Ok(Operator::new(m))
}

/// `Tr[(A − B)†(A − B) ψ]`.
pub fn state_dep_distance(a: &Operator, b: &Operator, psi: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() || a.cols() != psi.nrows() || psi.nrows() != psi.ncols() {
        return Err(QuantumError::DimensionMismatch { expected: a.cols(), got: psi.nrows() }.into());
    }
    let diff = a.matrix() - b.matrix();
    Ok((diff.adjoint() * diff * psi).trace().re)
}

#[derive(Clone, Debug, Serialize)]
pub struct SuccessRow {
    pub kind: ObservableKind,
    pub a: String,
    pub v: u8,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct XtildeRow {
    pub a: String,
    pub value: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuccessReport {
    pub n: usize,
    pub epsilon: f64,
    pub gamma_h: f64,
    pub rows: Vec<SuccessRow>,
    pub xtilde: Vec<XtildeRow>,
    pub max_gap: f64,
    pub max_xtilde_gap: f64,
}

/// Success relations of observables on partial post-measurement states.
pub fn success_relations_report(dev: &Device) -> Result<SuccessReport> {
    let n = dev.n;
    let obs = Observables::new(dev);
    let s0 = dev.sigma_state(&BitString::zeros(n))?;
    let s1 = dev.sigma_state(&BitString::ones(n))?;
    let mut rows = Vec::new();
    for a in 0..(1u32 << n) {
        for v in 0..2u8 {
            for (kind, sigma) in [(ObservableKind::Z, &s0), (ObservableKind::X, &s1)] {
                let (mut lhs, mut rhs) = (0.0, 0.0);
                for blk in sigma.blocks.iter().filter(|b| parity_dot(b.v as u64, a as u64) == v) {
                    let p = match kind {
                        ObservableKind::Z => obs.z_outcome(a, v, blk.junk),
                        _ => obs.x_outcome(a, v, blk.junk),
                    };
                    lhs += trace_prod(&p, &blk.rho);
                    rhs += blk.rho.trace().re;
                }
                rows.push(SuccessRow { kind, a: to_bits(a, n).to_string(), v, lhs, rhs, gap: (lhs - rhs).abs() });
            }
        }
    }
    let mut xtilde = Vec::new();
    for a in 0..(1u32 << n) {
        let value: f64 = s1.blocks.iter().map(|b| trace_prod(&obs.xtilde(a, b), &b.rho)).sum();
        xtilde.push(XtildeRow { a: to_bits(a, n).to_string(), value, gap: (1.0 - value).abs() });
    }
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    let max_xtilde_gap = xtilde.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(SuccessReport { n, epsilon: dev.epsilon, gamma_h: gammas(dev)?.gamma_h, rows, xtilde, max_gap, max_xtilde_gap })
}

/// `Tr[Z(a⃗) X̃(b⃗) Z(a⃗) X̃(b⃗) σ^(1⃗)]`, evaluated blockwise.
pub fn pauli_relation_value(dev: &Device, a: &BitString, b: &BitString) -> Result<C64> {
    let sigma = dev.sigma_state(&BitString::ones(dev.n))?;
    let obs = Observables::new(dev);
    Ok(pauli_value_on(&obs, &sigma, a.to_u64() as u32, b.to_u64() as u32))
}

fn pauli_value_on(obs: &Observables, sigma: &SigmaState, a: u32, b: u32) -> C64 {
    let mut total = C64::new(0.0, 0.0);
    for blk in &sigma.blocks {
        let z = obs.z(a, blk.junk);
        let xt = obs.xtilde(b, blk);
        let prod = z * &xt * z * &xt;
        total += trace_prod_c(&prod, &blk.rho);
    }
    total
}

#[derive(Clone, Debug, Serialize)]
pub struct PauliEntry {
    pub a: String,
    pub b: String,
    pub re: f64,
    pub im: f64,
    pub expected: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PauliGrid {
    pub n: usize,
    pub epsilon: f64,
    pub entries: Vec<PauliEntry>,
    pub max_gap: f64,
}

impl PauliGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,re,im,expected,gap\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:.12e},{:.12e},{},{:.3e}\n", e.a, e.b, e.re, e.im, e.expected, e.gap));
        }
        out
    }
}

/// All `4^n` relation values in lexicographic `(a⃗, b⃗)` order.
pub fn pauli_grid(dev: &Device) -> Result<PauliGrid> {
    let n = dev.n;
    let sigma = dev.sigma_state(&BitString::ones(n))?;
    let obs = Observables::new(dev);
    let mut entries = Vec::with_capacity(1 << (2 * n));
    for a in 0..(1u32 << n) {
        for b in 0..(1u32 << n) {
            let v = pauli_value_on(&obs, &sigma, a, b);
            let expected = if parity_dot(a as u64, b as u64) == 1 { -1.0 } else { 1.0 };
            let gap = (v - c(expected)).norm();
            entries.push(PauliEntry { a: to_bits(a, n).to_string(), b: to_bits(b, n).to_string(), re: v.re, im: v.im, expected, gap });
        }
    }
    let max_gap = entries.iter().map(|e| e.gap).fold(0.0, f64::max);
    Ok(PauliGrid { n, epsilon: dev.epsilon, entries, max_gap })
}

/// `Tr[Z_i X̃_i Z_i σ^(1⃗^i)]` where `1⃗^i` has a single 1 at copy `i`.
pub fn anticommutation_value(dev: &Device, i: usize) -> Result<f64> {
    if i >= dev.n {
        return Err(RigidityError::Invalid(format!("copy index {i} out of range")));
    }
    let mut theta = BitString::zeros(dev.n);
    theta.set(i, 1);
    let sigma = dev.sigma_state(&theta)?;
    let obs = Observables::new(dev);
    let e = 1u32 << (dev.n - 1 - i);
    let mut total = 0.0;
    for blk in &sigma.blocks {
        let z = obs.z(e, blk.junk);
        let prod = z * obs.xtilde(e, blk) * z;
        total += trace_prod(&prod, &blk.rho);
    }
    Ok(total)
}

fn epr(n: usize) -> Matrix {
    let d = 1usize << n;
    let mut v = Matrix::zeros(d * d, 1);
    for s in 0..d {
        v[(s * d + s, 0)] = c(1.0 / (d as f64).sqrt());
    }
    v
}

fn pauli_xz(n: usize, a: u32, b: u32) -> Matrix {
    pauli_string(&to_bits(a, n), &to_bits(b, n)).expect("equal lengths").into_matrix()
}

/// `V_blk` (or `Ṽ_blk`): `H_D → H_D ⊗ H_A ⊗ H_Q`, normalized by `2^{-n}`.
pub fn rounding_isometry(dev: &Device, obs: &Observables, blk: &SigmaBlock, use_tilde: bool) -> Result<Operator> {
    let n = dev.n;
    if n > MAX_ISOMETRY_COPIES {
        return Err(RigidityError::Guard(format!("isometry needs n ≤ {MAX_ISOMETRY_COPIES}")));
    }
    let d = dev.dim();
    let e = epr(n);
    let id_q = Matrix::identity(d, d);
    let mut v = Matrix::zeros(d * d * d, d);
    for a in 0..d as u32 {
        let xa = if use_tilde { obs.xtilde(a, blk) } else { obs.x(a, blk.junk).clone() };
        for b in 0..d as u32 {
            let dev_op = &xa * obs.z(b, blk.junk);
            let anc = pauli_xz(n, a, b).kronecker(&id_q) * &e;
            v += dev_op.kronecker(&anc);
        }
    }
    Ok(Operator::new(v * c(1.0 / d as f64)))
}

#[derive(Clone, Debug, Serialize)]
pub struct IsometryReport {
    pub n: usize,
    pub blocks: usize,
    pub max_isometry_defect: f64,
    pub max_tilde_isometry_defect: f64,
    pub max_relation_gap: f64,
}

/// Checks `V†V = I`, `Ṽ†Ṽ = I` and `V = σ_Z(û)_A σ_Z(û)_Q Ṽ` on every block of `σ^(θ⃗)`.
pub fn isometry_report(dev: &Device, theta: &BitString) -> Result<IsometryReport> {
    let n = dev.n;
    let d = dev.dim();
    let sigma = dev.sigma_state(theta)?;
    let obs = Observables::new(dev);
    let id = Matrix::identity(d, d);
    let (mut iso, mut iso_t, mut rel) = (0.0f64, 0.0f64, 0.0f64);
    for blk in &sigma.blocks {
        let v = rounding_isometry(dev, &obs, blk, false)?;
        let vt = rounding_isometry(dev, &obs, blk, true)?;
        iso = iso.max(max_abs(&(v.matrix().adjoint() * v.matrix() - &id)));
        iso_t = iso_t.max(max_abs(&(vt.matrix().adjoint() * vt.matrix() - &id)));
        let zu = pauli_xz(n, 0, blk.u);
        let corr = id.kronecker(&zu).kronecker(&zu);
        let gap = Operator::new(v.matrix() - corr * vt.matrix()).op_norm();
        rel = rel.max(gap);
    }
    Ok(IsometryReport { n, blocks: sigma.blocks.len(), max_isometry_defect: iso, max_tilde_isometry_defect: iso_t, max_relation_gap: rel })
}

#[derive(Clone, Debug, Serialize)]
pub struct Bb84Row {
    pub v: String,
    pub weight: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Bb84Report {
    pub n: usize,
    pub epsilon: f64,
    pub theta: String,
    pub rows: Vec<Bb84Row>,
    pub max_distance: f64,
    /// Largest trace distance between normalized `α^(θ⃗, v⃗)` states, summed over blocks on `D ⊗ A`.
    pub alpha_spread: f64,
}

fn trace_out_q(m: &Matrix, outer: usize, q: usize) -> Matrix {
    let mut out = Matrix::zeros(outer, outer);
    for i in 0..outer {
        for j in 0..outer {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..q {
                s += m[(i * q + k, j * q + k)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Distance of `V σ^(θ⃗, v⃗) V†` from `α^(θ⃗, v⃗) ⊗ (⊗ H^{θ_i}|v_i⟩⟨v_i|H^{θ_i})` for every `v⃗`.
pub fn bb84_report(dev: &Device, theta: &BitString) -> Result<Bb84Report> {
    let n = dev.n;
    let d = dev.dim();
    let sigma = dev.sigma_state(theta)?;
    let obs = Observables::new(dev);
    let h = gates::h().into_matrix();
    let betas: Vec<Matrix> = (0..d as u32)
        .map(|v| {
            let parts: Vec<Matrix> = (0..n)
                .map(|i| {
                    let p = proj(bit(v, i, n));
                    if theta.get(i) == 1 {
                        &h * p * &h
                    } else {
                        p
                    }
                })
                .collect();
            kron_all(&parts)
        })
        .collect();
    let outer = d * d;
    let mut dist = vec![0.0; d];
    let mut weight = vec![0.0; d];
    let mut alpha: Vec<Matrix> = vec![Matrix::zeros(outer, outer); d];
    for blk in &sigma.blocks {
        let v = rounding_isometry(dev, &obs, blk, false)?;
        let out = v.matrix() * &blk.rho * v.matrix().adjoint();
        let a = trace_out_q(&out, outer, d);
        let diff = &out - a.kronecker(&betas[blk.v as usize]);
        dist[blk.v as usize] += 0.5 * trace_norm(&diff);
        weight[blk.v as usize] += blk.rho.trace().re;
        alpha[blk.v as usize] += a;
    }
    let mut spread = 0.0f64;
    for i in 0..d {
        for j in i + 1..d {
            if weight[i] > 1e-15 && weight[j] > 1e-15 {
                let diff = &alpha[i] * c(1.0 / weight[i]) - &alpha[j] * c(1.0 / weight[j]);
                spread = spread.max(0.5 * trace_norm(&diff));
            }
        }
    }
    let rows: Vec<Bb84Row> = (0..d)
        .map(|v| Bb84Row { v: to_bits(v as u32, n).to_string(), weight: weight[v], distance: dist[v] })
        .collect();
    let max_distance = dist.iter().copied().fold(0.0, f64::max);
    Ok(Bb84Report { n, epsilon: dev.epsilon, theta: theta.to_string(), rows, max_distance, alpha_spread: spread })
}

#[derive(Clone, Debug, Serialize)]
pub struct ArgmaxReport {
    /// Hadamard-round pass probability at θ = 1 from the answer measurement and verifier check.
    pub direct: f64,
    /// The same probability from `2^{-n} Σ_a Tr[X̃(a⃗) σ^(1⃗)]`.
    pub from_observables: f64,
    pub gap: f64,
}

/// Recomputes the θ = 1 Hadamard pass probability along two code paths.
pub fn argmax_report(dev: &Device) -> Result<ArgmaxReport> {
    let n = dev.n;
    let sigma = dev.sigma_state(&BitString::ones(n))?;
    let table = answer_table(dev, 1);
    let obs = Observables::new(dev);
    let mut direct = 0.0;
    let mut via = 0.0;
    for blk in &sigma.blocks {
        direct += trace_prod(&table.get(blk.junk, blk.v, dev), &blk.rho);
        for a in 0..dev.dim() as u32 {
            via += trace_prod(&obs.xtilde(a, blk), &blk.rho);
        }
    }
    via /= dev.dim() as f64;
    Ok(ArgmaxReport { direct, from_observables: via, gap: (direct - via).abs() })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub width: u32,
    pub epsilon: f64,
    pub gamma_p: f64,
    pub gamma_h: f64,
    pub pauli_max_gap: f64,
    pub anticommutation: Vec<f64>,
    pub xtilde_max_gap: f64,
    pub success_max_gap: f64,
    pub argmax_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isometry: Option<IsometryReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bb84: Vec<Bb84Report>,
}

/// Everything the CLI prints for one device. Isometry and BB84 sections only for `n ≤ 2`.
pub fn diagnose(dev: &Device) -> Result<(DiagnosticsReport, PauliGrid)> {
    let g = gammas(dev)?;
    let grid = pauli_grid(dev)?;
    let succ = success_relations_report(dev)?;
    let anti = (0..dev.n).map(|i| anticommutation_value(dev, i)).collect::<Result<Vec<_>>>()?;
    let argmax = argmax_report(dev)?;
    let (isometry, bb84) = if dev.n <= MAX_ISOMETRY_COPIES {
        let iso = isometry_report(dev, &BitString::ones(dev.n))?;
        let bb = BitString::all(dev.n).map(|t| bb84_report(dev, &t)).collect::<Result<Vec<_>>>()?;
        (Some(iso), bb)
    } else {
        (None, Vec::new())
    };
    let report = DiagnosticsReport {
        n: dev.n,
        width: dev.width,
        epsilon: dev.epsilon,
        gamma_p: g.gamma_p,
        gamma_h: g.gamma_h,
        pauli_max_gap: grid.max_gap,
        anticommutation: anti,
        xtilde_max_gap: succ.max_xtilde_gap,
        success_max_gap: succ.max_gap,
        argmax_gap: argmax.gap,
        isometry,
        bb84,
    };
    Ok((report, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn honest(n: usize) -> Device {
        device_from_honest(n, 2, &mut ChaCha20Rng::seed_from_u64(5 + n as u64)).unwrap()
    }

    #[test]
    fn guard_rejects_large_devices() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(device_from_honest(4, 2, &mut rng).is_err());
        assert!(device_from_honest(1, 3, &mut rng).is_err());
    }

    #[test]
    fn honest_device_is_valid() {
        for n in 1..=2 {
            honest(n).check(1e-10).unwrap();
            let s = honest(n).sigma_state(&BitString::ones(n)).unwrap();
            assert!((s.total_trace() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn n1_psi_blocks_match_modes() {
        let dev = honest(1);
        for blk in dev.psi(&BitString::zeros(1)).unwrap() {
            let r = &blk.rho / blk.rho.trace();
            let diag0 = r[(0, 0)].re;
            assert!(diag0.abs() < 1e-12 || (diag0 - 1.0).abs() < 1e-12);
        }
        for blk in dev.psi(&BitString::ones(1)).unwrap() {
            let r = &blk.rho / blk.rho.trace();
            assert!((r[(0, 1)].norm() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn honest_gammas_vanish_and_full_noise_matches() {
        for n in 1..=2 {
            let g = gammas(&honest(n)).unwrap();
            assert!(g.gamma_p.abs() < 1e-12 && g.gamma_h.abs() < 1e-12);
            let g1 = gammas(&perturb_device(&honest(n), 1.0).unwrap()).unwrap();
            assert!((g1.gamma_h - (1.0 - 0.5f64.powi(n as i32))).abs() < 1e-10);
            assert!(g1.gamma_p.abs() < 1e-12);
        }
    }

    #[test]
    fn partial_sigmas_partition() {
        let dev = honest(2);
        let theta: BitString = "10".parse().unwrap();
        let full = dev.sigma_state(&theta).unwrap().total_trace();
        for a in BitString::all(2) {
            let s0 = partial_sigma(&dev, &theta, 0, &a).unwrap().total_trace();
            let s1 = partial_sigma(&dev, &theta, 1, &a).unwrap().total_trace();
            assert!((s0 + s1 - full).abs() < 1e-12);
            if a.is_zero() {
                assert!(s1.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn observables_are_involutions() {
        let dev = perturb_device(&honest(2), 0.3).unwrap();
        let obs = Observables::new(&dev);
        let s = dev.sigma_state(&BitString::ones(2)).unwrap();
        let id = Matrix::identity(4, 4);
        for blk in s.blocks.iter().take(50) {
            for a in 0..4 {
                let x = obs.xtilde(a, blk);
                assert!(max_abs(&(&x * &x - &id)) < 1e-10);
                let z = obs.z(a, blk.junk);
                assert!(max_abs(&(z * z - &id)) < 1e-10);
            }
        }
        let zero = observable(&dev, &ObservableSpec { kind: ObservableKind::Z, a: BitString::zeros(2) }, &s.blocks[0]).unwrap();
        assert!(max_abs(&(zero.matrix() - &id)) < 1e-12);
    }

    #[test]
    fn honest_n1_z_is_diagonal() {
        let dev = honest(1);
        let obs = Observables::new(&dev);
        let z = obs.z(1, None);
        assert!((z[(0, 0)].re - 1.0).abs() < 1e-12 && (z[(1, 1)].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_dependent_distance_examples() {
        let z = gates::z();
        let mz = z.scale(c(-1.0));
        let half = Matrix::identity(2, 2) * c(0.5);
        assert!((state_dep_distance(&z, &mz, &half).unwrap() - 4.0).abs() < 1e-12);
        assert!(state_dep_distance(&z, &z, &half).unwrap().abs() < 1e-15);
    }

    #[test]
    fn honest_n2_relations_exact() {
        let dev = honest(2);
        assert!(pauli_grid(&dev).unwrap().max_gap < 1e-9);
        for i in 0..2 {
            assert!((anticommutation_value(&dev, i).unwrap() + 1.0).abs() < 1e-9);
        }
        let succ = success_relations_report(&dev).unwrap();
        assert!(succ.max_gap < 1e-10 && succ.max_xtilde_gap < 1e-10);
        assert!(argmax_report(&dev).unwrap().gap < 1e-12);
    }

    #[test]
    fn honest_isometry_and_bb84_form() {
        for n in 1..=2 {
            let dev = honest(n);
            let iso = isometry_report(&dev, &BitString::ones(n)).unwrap();
            assert!(iso.max_isometry_defect < 1e-9 && iso.max_tilde_isometry_defect < 1e-9);
            assert!(iso.max_relation_gap < 1e-10, "{}", iso.max_relation_gap);
            for t in BitString::all(n) {
                let r = bb84_report(&dev, &t).unwrap();
                assert!(r.max_distance < 1e-8, "theta {t}: {}", r.max_distance);
            }
        }
    }

    #[test]
    fn perturbed_values_follow_closed_forms() {
        let eps = 0.2;
        let dev = perturb_device(&honest(2), eps).unwrap();
        let a: BitString = "11".parse().unwrap();
        let b: BitString = "10".parse().unwrap();
        let v = pauli_relation_value(&dev, &a, &b).unwrap();
        assert!((v.re - (-(1.0 - eps) + eps)).abs() < 1e-10);
        assert!((anticommutation_value(&dev, 0).unwrap() + 1.0 - eps).abs() < 1e-10);
        let succ = success_relations_report(&dev).unwrap();
        assert!((succ.max_xtilde_gap - eps).abs() < 1e-10);
        assert!(argmax_report(&dev).unwrap().gap < 1e-12);
    }
}
