//! Dense quantum linear algebra on small registers.
//!
//! Qubit 0 is the leftmost, most significant bit of a basis index: on three
//! qubits, `|011⟩` is basis index 3 and qubit 0 holds the leading `0`.
//! Registers are limited to [`MAX_QUBITS`] qubits.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::bits::BitString;

pub type C64 = Complex64;
pub type Matrix = DMatrix<C64>;

pub const MAX_QUBITS: usize = 20;

const NORM_TOL: f64 = 1e-10;
const ZERO_BRANCH: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum QuantumError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("qubit index {index} out of range for {qubits} qubits")]
    IndexOutOfRange { index: usize, qubits: usize },
    #[error("duplicate target qubit {0}")]
    DuplicateTarget(usize),
    #[error("register of {0} qubits exceeds the limit of {MAX_QUBITS}")]
    TooManyQubits(usize),
    #[error("state is not normalized (squared norm {0})")]
    NotNormalized(f64),
    #[error("matrix is not a valid density matrix: {0}")]
    InvalidDensity(String),
    #[error("operator check failed: {0}")]
    OperatorCheck(String),
    #[error("requested measurement branch has zero probability")]
    ZeroNormBranch,
    #[error("cannot combine a state vector with a density matrix")]
    KindMismatch,
    #[error("basis map is not a permutation")]
    NotAPermutation,
}

pub type Result<T> = std::result::Result<T, QuantumError>;

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(QuantumError::NotPowerOfTwo(dim));
    }
    let q = dim.trailing_zeros() as usize;
    if q > MAX_QUBITS {
        return Err(QuantumError::TooManyQubits(q));
    }
    Ok(q)
}

/// Offsets of the sub-basis spanned by `targets` plus the mask of target bits.
///
/// `targets[0]` is the most significant qubit of the operator's own index.
struct TargetLayout {
    offsets: Vec<usize>,
    mask: usize,
}

impl TargetLayout {
    fn new(qubits: usize, targets: &[usize]) -> Result<Self> {
        let mut mask = 0usize;
        for &t in targets {
            if t >= qubits {
                return Err(QuantumError::IndexOutOfRange { index: t, qubits });
            }
            let bit = 1usize << (qubits - 1 - t);
            if mask & bit != 0 {
                return Err(QuantumError::DuplicateTarget(t));
            }
            mask |= bit;
        }
        let k = targets.len();
        let offsets = (0..1usize << k)
            .map(|s| {
                targets.iter().enumerate().fold(0usize, |acc, (j, &t)| {
                    if (s >> (k - 1 - j)) & 1 == 1 {
                        acc | 1usize << (qubits - 1 - t)
                    } else {
                        acc
                    }
                })
            })
            .collect();
        Ok(TargetLayout { offsets, mask })
    }

    /// Index of the target sub-basis state that `index` lies in.
    fn local_index(&self, index: usize) -> usize {
        self.offsets.iter().position(|&o| o == index & self.mask).unwrap()
    }
}

fn apply_to_vector(op: &Matrix, layout: &TargetLayout, v: &mut [C64]) {
    let d = layout.offsets.len();
    let mut buf = vec![C64::new(0.0, 0.0); d];
    for base in 0..v.len() {
        if base & layout.mask != 0 {
            continue;
        }
        for (s, &o) in layout.offsets.iter().enumerate() {
            buf[s] = v[base + o];
        }
        for (r, &o) in layout.offsets.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (c, b) in buf.iter().enumerate() {
                acc += op[(r, c)] * b;
            }
            v[base + o] = acc;
        }
    }
}

/// Pure state on `q` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
    qubits: usize,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        let qubits = qubits_for_dim(amps.len())?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized(norm));
        }
        Ok(StateVector { amps, qubits })
    }

    /// Rescales arbitrary nonzero amplitudes to unit norm.
    pub fn normalized(amps: Vec<C64>) -> Result<Self> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < ZERO_BRANCH {
            return Err(QuantumError::ZeroNormBranch);
        }
        StateVector::new(amps.into_iter().map(|a| a / norm).collect())
    }

    pub fn basis(qubits: usize, index: usize) -> Result<Self> {
        if qubits > MAX_QUBITS {
            return Err(QuantumError::TooManyQubits(qubits));
        }
        let dim = 1usize << qubits;
        if index >= dim {
            return Err(QuantumError::IndexOutOfRange { index, qubits });
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(StateVector { amps, qubits })
    }

    pub fn zero(qubits: usize) -> Result<Self> {
        StateVector::basis(qubits, 0)
    }

    /// Computational basis state `|bits⟩`.
    pub fn from_bits(bits: &BitString) -> Result<Self> {
        let index = bits.bits().iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        StateVector::basis(bits.len(), index)
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(QuantumError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn to_density(&self) -> DensityMatrix {
        let v = Matrix::from_column_slice(self.dim(), 1, &self.amps);
        DensityMatrix::from_matrix_unchecked(&v * v.adjoint())
    }

    pub fn apply(&self, op: &Operator, targets: &[usize]) -> Result<StateVector> {
        check_op_targets(op, targets)?;
        let layout = TargetLayout::new(self.qubits, targets)?;
        let mut amps = self.amps.clone();
        apply_to_vector(&op.m, &layout, &mut amps);
        Ok(StateVector { amps, qubits: self.qubits })
    }

    /// Applies the basis permutation `index ↦ f(index)`.
    pub fn permute_basis<F: Fn(usize) -> usize>(&self, f: F) -> Result<StateVector> {
        let mut amps = vec![C64::new(0.0, 0.0); self.dim()];
        let mut hit = vec![false; self.dim()];
        for (i, a) in self.amps.iter().enumerate() {
            let j = f(i);
            if j >= self.dim() || hit[j] {
                return Err(QuantumError::NotAPermutation);
            }
            hit[j] = true;
            amps[j] = *a;
        }
        Ok(StateVector { amps, qubits: self.qubits })
    }

    /// Born probabilities of every outcome on `targets`, indexed by outcome value.
    pub fn outcome_probabilities(&self, targets: &[usize]) -> Result<Vec<f64>> {
        let layout = TargetLayout::new(self.qubits, targets)?;
        let mut probs = vec![0.0; layout.offsets.len()];
        for (i, a) in self.amps.iter().enumerate() {
            probs[layout.local_index(i)] += a.norm_sqr();
        }
        Ok(probs)
    }

    /// Projects `targets` onto `outcome` and renormalizes.
    pub fn project(&self, targets: &[usize], outcome: &BitString) -> Result<(f64, StateVector)> {
        check_outcome(targets, outcome)?;
        let layout = TargetLayout::new(self.qubits, targets)?;
        let want = layout.offsets[outcome.to_u64() as usize];
        let mut amps = self.amps.clone();
        let mut p = 0.0;
        for (i, a) in amps.iter_mut().enumerate() {
            if i & layout.mask == want {
                p += a.norm_sqr();
            } else {
                *a = C64::new(0.0, 0.0);
            }
        }
        if p < ZERO_BRANCH {
            return Err(QuantumError::ZeroNormBranch);
        }
        let s = p.sqrt();
        amps.iter_mut().for_each(|a| *a /= s);
        Ok((p, StateVector { amps, qubits: self.qubits }))
    }

    pub fn measure<R: Rng + ?Sized>(&self, targets: &[usize], rng: &mut R) -> Result<(BitString, StateVector)> {
        let probs = self.outcome_probabilities(targets)?;
        let k = sample_index(&probs, rng);
        let outcome = BitString::from_u64(k as u64, targets.len());
        let (_, post) = self.project(targets, &outcome)?;
        Ok((outcome, post))
    }

    /// All outcomes with nonzero probability, with exact probabilities.
    pub fn enumerate(&self, targets: &[usize]) -> Result<Vec<Branch<StateVector>>> {
        let probs = self.outcome_probabilities(targets)?;
        let mut out = Vec::new();
        for (k, &p) in probs.iter().enumerate() {
            if p < ZERO_BRANCH {
                continue;
            }
            let outcome = BitString::from_u64(k as u64, targets.len());
            let (_, state) = self.project(targets, &outcome)?;
            out.push(Branch { outcome, probability: p, state });
        }
        Ok(out)
    }

    /// Drops `targets`, which must hold the definite value `outcome`.
    pub fn discard_measured(&self, targets: &[usize], outcome: &BitString) -> Result<StateVector> {
        check_outcome(targets, outcome)?;
        let layout = TargetLayout::new(self.qubits, targets)?;
        let want = layout.offsets[outcome.to_u64() as usize];
        let amps: Vec<C64> = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & layout.mask == want)
            .map(|(_, a)| *a)
            .collect();
        StateVector::normalized(amps)
    }

    /// Reduced density matrix on `keep`.
    pub fn reduced(&self, keep: &[usize]) -> Result<DensityMatrix> {
        partial_trace(&self.to_density(), keep)
    }
}

/// Positive semidefinite matrix with trace `weight`; subnormalized blocks have weight < 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: Matrix,
    qubits: usize,
    weight: f64,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10) and positivity (eigenvalues ≥ −1e-8).
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(QuantumError::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        qubits_for_dim(m.nrows())?;
        let herm = max_abs(&(&m - m.adjoint()));
        if herm > 1e-10 {
            return Err(QuantumError::InvalidDensity(format!("not Hermitian (gap {herm:e})")));
        }
        let min = m.clone().symmetric_eigen().eigenvalues.min();
        if min < -1e-8 {
            return Err(QuantumError::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        let d = DensityMatrix::from_matrix_unchecked(m);
        if d.weight > 1.0 + 1e-10 {
            return Err(QuantumError::InvalidDensity(format!("trace {} exceeds 1", d.weight)));
        }
        Ok(d)
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        let qubits = m.nrows().trailing_zeros() as usize;
        let weight = m.trace().re;
        DensityMatrix { m, qubits, weight }
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        psi.to_density()
    }

    pub fn maximally_mixed(qubits: usize) -> Result<Self> {
        if qubits > MAX_QUBITS {
            return Err(QuantumError::TooManyQubits(qubits));
        }
        let dim = 1usize << qubits;
        Ok(DensityMatrix::from_matrix_unchecked(Matrix::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0)))
    }

    pub fn zeros(qubits: usize) -> Self {
        let dim = 1usize << qubits;
        DensityMatrix::from_matrix_unchecked(Matrix::zeros(dim, dim))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Trace of the (possibly subnormalized) state.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.m[(i, j)]
    }

    pub fn scale(&self, f: f64) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(&self.m * C64::new(f, 0.0))
    }

    pub fn add(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        if self.dim() != other.dim() {
            return Err(QuantumError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(DensityMatrix::from_matrix_unchecked(&self.m + &other.m))
    }

    /// Rescales to unit trace.
    pub fn normalize(&self) -> Result<DensityMatrix> {
        if self.weight < ZERO_BRANCH {
            return Err(QuantumError::ZeroNormBranch);
        }
        Ok(self.scale(1.0 / self.weight))
    }

    /// Tr[op · ρ] for an operator on the full register.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.rows() != self.dim() || op.cols() != self.dim() {
            return Err(QuantumError::DimensionMismatch { expected: self.dim(), got: op.rows() });
        }
        Ok((&op.m * &self.m).trace())
    }

    /// ρ ↦ O ρ O† with O acting on `targets`.
    pub fn apply(&self, op: &Operator, targets: &[usize]) -> Result<DensityMatrix> {
        check_op_targets(op, targets)?;
        let layout = TargetLayout::new(self.qubits, targets)?;
        let left = left_apply(&op.m, &layout, &self.m);
        let both = left_apply(&op.m, &layout, &left.adjoint());
        Ok(DensityMatrix::from_matrix_unchecked(both.adjoint()))
    }

    /// Conjugation by an operator on the whole register, O ρ O†; O may be rectangular.
    pub fn conjugate(&self, op: &Operator) -> Result<DensityMatrix> {
        if op.cols() != self.dim() {
            return Err(QuantumError::DimensionMismatch { expected: self.dim(), got: op.cols() });
        }
        qubits_for_dim(op.rows())?;
        Ok(DensityMatrix::from_matrix_unchecked(&op.m * &self.m * op.m.adjoint()))
    }

    pub fn outcome_probabilities(&self, targets: &[usize]) -> Result<Vec<f64>> {
        let layout = TargetLayout::new(self.qubits, targets)?;
        let mut probs = vec![0.0; layout.offsets.len()];
        for i in 0..self.dim() {
            probs[layout.local_index(i)] += self.m[(i, i)].re;
        }
        let total = self.weight.max(ZERO_BRANCH);
        Ok(probs.into_iter().map(|p| p / total).collect())
    }

    /// Projects `targets` onto `outcome`; returns the probability and the renormalized state.
    pub fn project(&self, targets: &[usize], outcome: &BitString) -> Result<(f64, DensityMatrix)> {
        check_outcome(targets, outcome)?;
        let layout = TargetLayout::new(self.qubits, targets)?;
        let want = layout.offsets[outcome.to_u64() as usize];
        let keep: Vec<bool> = (0..self.dim()).map(|i| i & layout.mask == want).collect();
        let mut m = self.m.clone();
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                if !(keep[i] && keep[j]) {
                    m[(i, j)] = C64::new(0.0, 0.0);
                }
            }
        }
        let p = m.trace().re / self.weight.max(ZERO_BRANCH);
        if p < ZERO_BRANCH {
            return Err(QuantumError::ZeroNormBranch);
        }
        let post = DensityMatrix::from_matrix_unchecked(m);
        let post = post.scale(1.0 / post.weight);
        Ok((p, post))
    }

    pub fn measure<R: Rng + ?Sized>(&self, targets: &[usize], rng: &mut R) -> Result<(BitString, DensityMatrix)> {
        let probs = self.outcome_probabilities(targets)?;
        let k = sample_index(&probs, rng);
        let outcome = BitString::from_u64(k as u64, targets.len());
        let (_, post) = self.project(targets, &outcome)?;
        Ok((outcome, post))
    }

    pub fn enumerate(&self, targets: &[usize]) -> Result<Vec<Branch<DensityMatrix>>> {
        let probs = self.outcome_probabilities(targets)?;
        let mut out = Vec::new();
        for (k, &p) in probs.iter().enumerate() {
            if p < ZERO_BRANCH {
                continue;
            }
            let outcome = BitString::from_u64(k as u64, targets.len());
            let (_, state) = self.project(targets, &outcome)?;
            out.push(Branch { outcome, probability: p, state });
        }
        Ok(out)
    }

    /// Checks the density-matrix invariants with the given tolerances.
    pub fn validate(&self) -> Result<()> {
        DensityMatrix::new(self.m.clone()).map(|_| ())
    }
}

/// Largest entry modulus.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn left_apply(op: &Matrix, layout: &TargetLayout, m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let slice = col.as_mut_slice();
        apply_to_vector(op, layout, slice);
    }
    out
}

fn check_op_targets(op: &Operator, targets: &[usize]) -> Result<()> {
    let expected = 1usize << targets.len();
    if op.rows() != expected || op.cols() != expected {
        return Err(QuantumError::DimensionMismatch { expected, got: op.rows().max(op.cols()) });
    }
    Ok(())
}

fn check_outcome(targets: &[usize], outcome: &BitString) -> Result<()> {
    if outcome.len() != targets.len() {
        return Err(QuantumError::DimensionMismatch { expected: targets.len(), got: outcome.len() });
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i;
        if u < p {
            return i;
        }
        u -= p;
    }
    last
}

/// One outcome of an exact measurement enumeration.
#[derive(Clone, Debug)]
pub struct Branch<S> {
    pub outcome: BitString,
    pub probability: f64,
    pub state: S,
}

/// Verified properties attached to an operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OperatorFlags {
    pub unitary: bool,
    pub isometry: bool,
    pub projector: bool,
}

/// Dense complex matrix, possibly rectangular.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    m: Matrix,
    flags: OperatorFlags,
}

impl Operator {
    pub fn new(m: Matrix) -> Self {
        Operator { m, flags: OperatorFlags::default() }
    }

    /// Row-major real entries.
    pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> Self {
        Operator::new(Matrix::from_row_iterator(rows, cols, entries.iter().map(|&x| C64::new(x, 0.0))))
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Operator::new(Matrix::identity(dim, dim));
        op.flags = OperatorFlags { unitary: true, isometry: true, projector: true };
        op
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Operator::new(Matrix::zeros(rows, cols))
    }

    /// |φ⟩⟨φ|.
    pub fn projector_onto(psi: &StateVector) -> Self {
        let mut op = Operator::new(psi.to_density().m);
        op.flags.projector = true;
        op
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix {
        self.m
    }

    pub fn flags(&self) -> OperatorFlags {
        self.flags
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.m[(i, j)]
    }

    pub fn with_unitary_flag(mut self) -> Result<Self> {
        if !self.is_unitary(NORM_TOL) {
            return Err(QuantumError::OperatorCheck("U†U ≠ I or not square".into()));
        }
        self.flags.unitary = true;
        self.flags.isometry = true;
        Ok(self)
    }

    pub fn with_isometry_flag(mut self) -> Result<Self> {
        if !self.is_isometry(NORM_TOL) {
            return Err(QuantumError::OperatorCheck("V†V ≠ I".into()));
        }
        self.flags.isometry = true;
        Ok(self)
    }

    pub fn with_projector_flag(mut self) -> Result<Self> {
        if !self.is_projector(NORM_TOL) {
            return Err(QuantumError::OperatorCheck("P² ≠ P or P ≠ P†".into()));
        }
        self.flags.projector = true;
        Ok(self)
    }

    pub fn is_isometry(&self, tol: f64) -> bool {
        let g = self.m.adjoint() * &self.m;
        max_abs(&(g - Matrix::identity(self.cols(), self.cols()))) <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.rows() == self.cols() && self.is_isometry(tol)
    }

    pub fn is_projector(&self, tol: f64) -> bool {
        self.rows() == self.cols() && max_abs(&(&self.m * &self.m - &self.m)) <= tol && max_abs(&(self.m.adjoint() - &self.m)) <= tol
    }

    pub fn adjoint(&self) -> Operator {
        Operator { m: self.m.adjoint(), flags: OperatorFlags { isometry: self.flags.unitary, ..self.flags } }
    }

    /// Matrix product `self · rhs`.
    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        if self.cols() != rhs.rows() {
            return Err(QuantumError::DimensionMismatch { expected: self.cols(), got: rhs.rows() });
        }
        Ok(Operator::new(&self.m * &rhs.m))
    }

    pub fn scale(&self, f: C64) -> Operator {
        Operator::new(&self.m * f)
    }

    pub fn add(&self, rhs: &Operator) -> Result<Operator> {
        self.check_same_shape(rhs)?;
        Ok(Operator::new(&self.m + &rhs.m))
    }

    pub fn sub(&self, rhs: &Operator) -> Result<Operator> {
        self.check_same_shape(rhs)?;
        Ok(Operator::new(&self.m - &rhs.m))
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        if self.m.is_empty() {
            return 0.0;
        }
        self.m.singular_values().max()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.m)
    }

    fn check_same_shape(&self, rhs: &Operator) -> Result<()> {
        if self.rows() != rhs.rows() || self.cols() != rhs.cols() {
            return Err(QuantumError::DimensionMismatch { expected: self.rows() * self.cols(), got: rhs.rows() * rhs.cols() });
        }
        Ok(())
    }
}

/// Standard gates.
pub mod gates {
    use super::{Operator, C64};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn flagged(op: Operator) -> Operator {
        op.with_unitary_flag().expect("standard gate is unitary")
    }

    pub fn i() -> Operator {
        Operator::identity(2)
    }

    pub fn x() -> Operator {
        flagged(Operator::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]))
    }

    pub fn z() -> Operator {
        flagged(Operator::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]))
    }

    pub fn y() -> Operator {
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)]);
        flagged(Operator::new(m))
    }

    pub fn h() -> Operator {
        let s = FRAC_1_SQRT_2;
        flagged(Operator::from_real(2, 2, &[s, s, s, -s]))
    }

    pub fn s() -> Operator {
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0)]);
        flagged(Operator::new(m))
    }

    pub fn t() -> Operator {
        let m = nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)],
        );
        flagged(Operator::new(m))
    }

    /// Control on the first target, flip on the second.
    pub fn cnot() -> Operator {
        #[rustfmt::skip]
        let e = [
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
        ];
        flagged(Operator::from_real(4, 4, &e))
    }

    /// Real rotation taking |0⟩ to cos(φ)|0⟩ + sin(φ)|1⟩.
    pub fn ry_angle(phi: f64) -> Operator {
        let (s, c) = phi.sin_cos();
        flagged(Operator::from_real(2, 2, &[c, -s, s, c]))
    }
}

/// Kronecker product; qubit counts add.
pub trait Tensor: Sized {
    fn tensor(&self, other: &Self) -> Result<Self>;
}

impl Tensor for StateVector {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let q = self.qubits + other.qubits;
        if q > MAX_QUBITS {
            return Err(QuantumError::TooManyQubits(q));
        }
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ok(StateVector { amps, qubits: q })
    }
}

impl Tensor for DensityMatrix {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let q = self.qubits + other.qubits;
        if q > MAX_QUBITS {
            return Err(QuantumError::TooManyQubits(q));
        }
        Ok(DensityMatrix::from_matrix_unchecked(self.m.kronecker(&other.m)))
    }
}

impl Tensor for Operator {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let flags = OperatorFlags {
            unitary: self.flags.unitary && other.flags.unitary,
            isometry: self.flags.isometry && other.flags.isometry,
            projector: self.flags.projector && other.flags.projector,
        };
        Ok(Operator { m: self.m.kronecker(&other.m), flags })
    }
}

/// Either representation of a register's state.
#[derive(Clone, Debug, PartialEq)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl QuantumState {
    pub fn qubit_count(&self) -> usize {
        match self {
            QuantumState::Pure(s) => s.qubit_count(),
            QuantumState::Mixed(d) => d.qubit_count(),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            QuantumState::Pure(s) => s.to_density(),
            QuantumState::Mixed(d) => d.clone(),
        }
    }

    pub fn tensor(&self, other: &QuantumState) -> Result<QuantumState> {
        match (self, other) {
            (QuantumState::Pure(a), QuantumState::Pure(b)) => Ok(QuantumState::Pure(a.tensor(b)?)),
            (QuantumState::Mixed(a), QuantumState::Mixed(b)) => Ok(QuantumState::Mixed(a.tensor(b)?)),
            _ => Err(QuantumError::KindMismatch),
        }
    }

    pub fn apply(&self, op: &Operator, targets: &[usize]) -> Result<QuantumState> {
        Ok(match self {
            QuantumState::Pure(s) => QuantumState::Pure(s.apply(op, targets)?),
            QuantumState::Mixed(d) => QuantumState::Mixed(d.apply(op, targets)?),
        })
    }

    /// Fidelity (squared convention): |⟨ψ|φ⟩|² for pure pairs, ⟨ψ|ρ|ψ⟩ for pure/mixed.
    pub fn fidelity(&self, other: &QuantumState) -> Result<f64> {
        match (self, other) {
            (QuantumState::Pure(a), QuantumState::Pure(b)) => Ok(a.inner(b)?.norm_sqr()),
            (QuantumState::Pure(a), QuantumState::Mixed(r)) | (QuantumState::Mixed(r), QuantumState::Pure(a)) => {
                if a.dim() != r.dim() {
                    return Err(QuantumError::DimensionMismatch { expected: a.dim(), got: r.dim() });
                }
                let v = Matrix::from_column_slice(a.dim(), 1, a.amplitudes());
                Ok((v.adjoint() * r.matrix() * v)[(0, 0)].re)
            }
            (QuantumState::Mixed(a), QuantumState::Mixed(b)) => fidelity(a, b),
        }
    }
}

pub fn tensor_product<T: Tensor>(a: &T, b: &T) -> Result<T> {
    a.tensor(b)
}

pub fn apply_operator(op: &Operator, state: &QuantumState, targets: &[usize]) -> Result<QuantumState> {
    state.apply(op, targets)
}

/// Sampled computational-basis measurement of `targets`.
pub fn measure_computational<R: Rng + ?Sized>(state: &QuantumState, targets: &[usize], rng: &mut R) -> Result<(BitString, QuantumState)> {
    Ok(match state {
        QuantumState::Pure(s) => {
            let (o, p) = s.measure(targets, rng)?;
            (o, QuantumState::Pure(p))
        }
        QuantumState::Mixed(d) => {
            let (o, p) = d.measure(targets, rng)?;
            (o, QuantumState::Mixed(p))
        }
    })
}

/// Deterministic variant: every outcome with its exact probability.
pub fn enumerate_computational(state: &QuantumState, targets: &[usize]) -> Result<Vec<Branch<QuantumState>>> {
    Ok(match state {
        QuantumState::Pure(s) => s
            .enumerate(targets)?
            .into_iter()
            .map(|b| Branch { outcome: b.outcome, probability: b.probability, state: QuantumState::Pure(b.state) })
            .collect(),
        QuantumState::Mixed(d) => d
            .enumerate(targets)?
            .into_iter()
            .map(|b| Branch { outcome: b.outcome, probability: b.probability, state: QuantumState::Mixed(b.state) })
            .collect(),
    })
}

/// Applies H to every qubit `i` with `mask[i] = 1`.
pub fn hadamard_layer(state: &QuantumState, mask: &BitString) -> Result<QuantumState> {
    if mask.len() != state.qubit_count() {
        return Err(QuantumError::DimensionMismatch { expected: state.qubit_count(), got: mask.len() });
    }
    let h = gates::h();
    let mut out = state.clone();
    for (i, &b) in mask.bits().iter().enumerate() {
        if b == 1 {
            out = out.apply(&h, &[i])?;
        }
    }
    Ok(out)
}

/// ⊗_i σ_X^{a_i} σ_Z^{b_i}.
pub fn pauli_string(a: &BitString, b: &BitString) -> Result<Operator> {
    if a.len() != b.len() {
        return Err(QuantumError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    if n > MAX_QUBITS {
        return Err(QuantumError::TooManyQubits(n));
    }
    let dim = 1usize << n;
    let (av, bv) = (a.to_u64() as usize, b.to_u64() as usize);
    let mut m = Matrix::zeros(dim, dim);
    for s in 0..dim {
        let sign = if (s & bv).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        m[(s ^ av, s)] = C64::new(sign, 0.0);
    }
    let mut op = Operator::new(m);
    op.flags = OperatorFlags { unitary: true, isometry: true, projector: av == 0 && bv == 0 };
    Ok(op)
}

/// Reduced state on `keep`, in the order given.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let n = rho.qubit_count();
    let mut seen = 0usize;
    for &k in keep {
        if k >= n {
            return Err(QuantumError::IndexOutOfRange { index: k, qubits: n });
        }
        if seen & (1 << k) != 0 {
            return Err(QuantumError::DuplicateTarget(k));
        }
        seen |= 1 << k;
    }
    let traced: Vec<usize> = (0..n).filter(|q| seen & (1 << q) == 0).collect();
    let kl = TargetLayout::new(n, keep)?;
    let tl = TargetLayout::new(n, &traced)?;
    let dk = kl.offsets.len();
    let mut out = Matrix::zeros(dk, dk);
    for i in 0..dk {
        for j in 0..dk {
            let mut acc = C64::new(0.0, 0.0);
            for &t in &tl.offsets {
                acc += rho.m[(kl.offsets[i] | t, kl.offsets[j] | t)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// ½‖a − b‖₁, from the singular values of the difference.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(QuantumError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(0.5 * trace_norm(&(&a.m - &b.m)))
}

/// Sum of singular values.
pub fn trace_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().sum()
}

/// Uhlmann fidelity, squared convention: (Tr √(√a b √a))².
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(QuantumError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let sa = psd_sqrt(&a.m);
    let inner = &sa * &b.m * &sa;
    let eig = inner.symmetric_eigen().eigenvalues;
    let s: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok(s * s)
}

fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = m.clone().symmetric_eigen();
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn ket(bits: &str) -> StateVector {
        StateVector::from_bits(&bits.parse().unwrap()).unwrap()
    }

    fn plus() -> StateVector {
        StateVector::new(vec![c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)]).unwrap()
    }

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn tensor_examples() {
        assert_eq!(ket("0").tensor(&ket("1")).unwrap().amplitudes(), &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        let i4 = gates::i().tensor(&gates::i()).unwrap();
        assert_eq!(i4.matrix(), &Matrix::identity(4, 4));
        let pp = plus().tensor(&plus()).unwrap();
        assert!(close(pp.amplitudes(), &[c(0.5); 4], 1e-15));
    }

    #[test]
    fn tensor_kind_mismatch() {
        let a = QuantumState::Pure(ket("0"));
        let b = QuantumState::Mixed(ket("0").to_density());
        assert_eq!(a.tensor(&b), Err(QuantumError::KindMismatch));
    }

    #[test]
    fn apply_examples() {
        let s = ket("0").apply(&gates::h(), &[0]).unwrap();
        assert!(close(s.amplitudes(), plus().amplitudes(), 1e-15));
        let m = plus().apply(&gates::z(), &[0]).unwrap();
        assert!(close(m.amplitudes(), &[c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2)], 1e-15));
        let t = ket("10").apply(&gates::cnot(), &[0, 1]).unwrap();
        assert_eq!(t, ket("11"));
        // Control on qubit 1, target qubit 0.
        let u = ket("01").apply(&gates::cnot(), &[1, 0]).unwrap();
        assert_eq!(u, ket("11"));
    }

    #[test]
    fn apply_errors() {
        assert!(matches!(ket("00").apply(&gates::h(), &[2]), Err(QuantumError::IndexOutOfRange { .. })));
        assert!(matches!(ket("00").apply(&gates::cnot(), &[0]), Err(QuantumError::DimensionMismatch { .. })));
        assert!(matches!(ket("00").apply(&gates::cnot(), &[1, 1]), Err(QuantumError::DuplicateTarget(1))));
        assert!(matches!(StateVector::zero(21), Err(QuantumError::TooManyQubits(21))));
    }

    #[test]
    fn density_apply_matches_pure() {
        let psi = ket("10").apply(&gates::h(), &[1]).unwrap();
        let rho = psi.to_density().apply(&gates::cnot(), &[0, 1]).unwrap();
        let direct = psi.apply(&gates::cnot(), &[0, 1]).unwrap().to_density();
        assert!(max_abs(&(rho.matrix() - direct.matrix())) < 1e-14);
    }

    #[test]
    fn measurement_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (o, post) = ket("0").measure(&[0], &mut rng).unwrap();
        assert_eq!((o.to_u64(), post), (0, ket("0")));
        let branches = plus().enumerate(&[0]).unwrap();
        assert_eq!(branches.len(), 2);
        assert!(branches.iter().all(|b| (b.probability - 0.5).abs() < 1e-15));
        let bell = StateVector::new(vec![c(FRAC_1_SQRT_2), c(0.0), c(0.0), c(FRAC_1_SQRT_2)]).unwrap();
        let br = bell.enumerate(&[0]).unwrap();
        assert_eq!(br[0].state, ket("00"));
        assert_eq!(br[1].state, ket("11"));
        assert!((br[0].probability - 0.5).abs() < 1e-15);
        assert!(matches!(ket("0").project(&[0], &"1".parse().unwrap()), Err(QuantumError::ZeroNormBranch)));
    }

    #[test]
    fn density_measurement_matches_pure() {
        let bell = StateVector::new(vec![c(FRAC_1_SQRT_2), c(0.0), c(0.0), c(FRAC_1_SQRT_2)]).unwrap();
        let br = bell.to_density().enumerate(&[1]).unwrap();
        assert_eq!(br.len(), 2);
        assert!(max_abs(&(br[1].state.matrix() - ket("11").to_density().matrix())) < 1e-15);
    }

    #[test]
    fn hadamard_layer_examples() {
        let s = QuantumState::Pure(ket("00"));
        assert_eq!(hadamard_layer(&s, &"00".parse().unwrap()).unwrap(), s);
        let out = hadamard_layer(&s, &"10".parse().unwrap()).unwrap();
        let expected = plus().tensor(&ket("0")).unwrap();
        match out {
            QuantumState::Pure(v) => assert!(close(v.amplitudes(), expected.amplitudes(), 1e-15)),
            _ => unreachable!(),
        }
        assert!(hadamard_layer(&s, &"1".parse().unwrap()).is_err());
    }

    #[test]
    fn pauli_examples() {
        let z1: BitString = "0".parse().unwrap();
        assert_eq!(pauli_string(&z1, &z1).unwrap().matrix(), &Matrix::identity(2, 2));
        let o: BitString = "1".parse().unwrap();
        let xz = pauli_string(&o, &o).unwrap();
        assert_eq!(xz.matrix(), Operator::from_real(2, 2, &[0.0, -1.0, 1.0, 0.0]).matrix());
        assert!(xz.flags().unitary);
    }

    #[test]
    fn pauli_group_relation_exhaustive() {
        for n in 1..=2 {
            for a in BitString::all(n) {
                for b in BitString::all(n) {
                    for a2 in BitString::all(n) {
                        for b2 in BitString::all(n) {
                            let lhs = pauli_string(&a, &b).unwrap().compose(&pauli_string(&a2, &b2).unwrap()).unwrap();
                            let sign = if a2.dot(&b).unwrap() == 1 { -1.0 } else { 1.0 };
                            let rhs = pauli_string(&a.xor(&a2).unwrap(), &b.xor(&b2).unwrap()).unwrap().scale(c(sign));
                            assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-15);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn partial_trace_examples() {
        let r = partial_trace(&ket("00").to_density(), &[0]).unwrap();
        assert_eq!(r.matrix(), ket("0").to_density().matrix());
        let bell = StateVector::new(vec![c(FRAC_1_SQRT_2), c(0.0), c(0.0), c(FRAC_1_SQRT_2)]).unwrap();
        let r = partial_trace(&bell.to_density(), &[0]).unwrap();
        assert!(max_abs(&(r.matrix() - DensityMatrix::maximally_mixed(1).unwrap().matrix())) < 1e-15);
        let a = plus().to_density();
        let b = ket("1").to_density();
        let ab = a.tensor(&b).unwrap();
        assert!(max_abs(&(partial_trace(&ab, &[0]).unwrap().matrix() - a.matrix())) < 1e-15);
        assert!(max_abs(&(partial_trace(&ab, &[1]).unwrap().matrix() - b.matrix())) < 1e-15);
        assert!(partial_trace(&ab, &[2]).is_err());
    }

    #[test]
    fn distance_examples() {
        let z = ket("0").to_density();
        assert!(trace_distance(&z, &z).unwrap().abs() < 1e-15);
        assert!((trace_distance(&z, &ket("1").to_density()).unwrap() - 1.0).abs() < 1e-12);
        assert!((trace_distance(&z, &plus().to_density()).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((fidelity(&z, &plus().to_density()).unwrap() - 0.5).abs() < 1e-12);
        assert!((fidelity(&z, &z).unwrap() - 1.0).abs() < 1e-12);
        assert!(trace_distance(&z, &ket("00").to_density()).is_err());
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(Operator::from_real(2, 2, &[0.5, 0.6, 0.6, 0.5]).into_matrix()).is_err());
        assert!(DensityMatrix::new(Operator::from_real(2, 2, &[0.5, 0.1, 0.2, 0.5]).into_matrix()).is_err());
        let d = DensityMatrix::new(Operator::from_real(2, 2, &[0.3, 0.1, 0.1, 0.2]).into_matrix()).unwrap();
        assert!((d.weight() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn operator_flags() {
        assert!(Operator::from_real(2, 2, &[1.0, 1.0, 0.0, 1.0]).with_unitary_flag().is_err());
        assert!(Operator::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).with_projector_flag().is_ok());
        let v = Operator::from_real(2, 1, &[1.0, 0.0]).with_isometry_flag().unwrap();
        assert!(v.flags().isometry && !v.flags().unitary);
    }
}
