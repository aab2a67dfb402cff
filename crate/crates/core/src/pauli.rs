//! Pauli strings, complex Pauli sums, and real-weighted qubit Hamiltonians.
//!
//! A string is stored as an (x, z) bit pair per qubit: I=(0,0), X=(1,0),
//! Z=(0,1), Y=(1,1). Text labels list qubit 0 first, e.g. `"XZI"` is
//! X on qubit 0 and Z on qubit 1.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::statevector::{c, C64};

/// Largest register a string can address.
pub const MAX_QUBITS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PauliString {
    x: u64,
    z: u64,
}

impl PauliString {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn single(q: usize, p: Pauli) -> Self {
        Self::identity().with(q, p)
    }

    /// Builds a string from `(qubit, letter)` pairs; later pairs overwrite earlier ones.
    pub fn from_pairs(pairs: &[(usize, Pauli)]) -> Self {
        pairs.iter().fold(Self::identity(), |s, &(q, p)| s.with(q, p))
    }

    pub fn with(mut self, q: usize, p: Pauli) -> Self {
        assert!(q < MAX_QUBITS, "qubit {q} beyond {MAX_QUBITS}");
        let bit = 1u64 << q;
        self.x &= !bit;
        self.z &= !bit;
        match p {
            Pauli::I => {}
            Pauli::X => self.x |= bit,
            Pauli::Z => self.z |= bit,
            Pauli::Y => {
                self.x |= bit;
                self.z |= bit;
            }
        }
        self
    }

    pub fn get(&self, q: usize) -> Pauli {
        match (self.x >> q & 1, self.z >> q & 1) {
            (0, 0) => Pauli::I,
            (1, 0) => Pauli::X,
            (0, 1) => Pauli::Z,
            _ => Pauli::Y,
        }
    }

    pub fn x_mask(&self) -> u64 {
        self.x
    }

    pub fn z_mask(&self) -> u64 {
        self.z
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    pub fn is_diagonal(&self) -> bool {
        self.x == 0
    }

    /// Highest qubit index touched, plus one.
    pub fn support_len(&self) -> usize {
        let m = self.x | self.z;
        (MAX_QUBITS as u32 - m.leading_zeros()) as usize
    }

    /// `self * other = phase * result`.
    pub fn mul(&self, other: &PauliString) -> (C64, PauliString) {
        // Track the power of i from single-qubit products, e.g. XY = iZ.
        let mut power = 0i32;
        let touched = self.x | self.z | other.x | other.z;
        for q in 0..MAX_QUBITS {
            if touched >> q & 1 == 0 {
                continue;
            }
            power += match (self.get(q), other.get(q)) {
                (Pauli::X, Pauli::Y) | (Pauli::Y, Pauli::Z) | (Pauli::Z, Pauli::X) => 1,
                (Pauli::Y, Pauli::X) | (Pauli::Z, Pauli::Y) | (Pauli::X, Pauli::Z) => -1,
                _ => 0,
            };
        }
        let phase = match power.rem_euclid(4) {
            0 => c(1.0, 0.0),
            1 => c(0.0, 1.0),
            2 => c(-1.0, 0.0),
            _ => c(0.0, -1.0),
        };
        (
            phase,
            PauliString {
                x: self.x ^ other.x,
                z: self.z ^ other.z,
            },
        )
    }

    /// `P|basis> = phase |basis ^ x_mask>`.
    #[inline]
    pub fn apply_to_basis(&self, basis: usize) -> (C64, usize) {
        let y_count = (self.x & self.z).count_ones();
        let sign_flips = (basis as u64 & self.z).count_ones();
        let mut phase = match y_count % 4 {
            0 => c(1.0, 0.0),
            1 => c(0.0, 1.0),
            2 => c(-1.0, 0.0),
            _ => c(0.0, -1.0),
        };
        if sign_flips % 2 == 1 {
            phase = -phase;
        }
        (phase, basis ^ self.x as usize)
    }

    pub fn label(&self, n_qubits: usize) -> String {
        (0..n_qubits)
            .map(|q| match self.get(q) {
                Pauli::I => 'I',
                Pauli::X => 'X',
                Pauli::Y => 'Y',
                Pauli::Z => 'Z',
            })
            .collect()
    }

    pub fn parse(label: &str) -> Result<Self> {
        label.chars().enumerate().try_fold(Self::identity(), |s, (q, ch)| {
            let p = match ch {
                'I' => Pauli::I,
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                other => return Err(Error::Parse(format!("bad Pauli letter {other:?}"))),
            };
            Ok(s.with(q, p))
        })
    }
}

/// Complex linear combination of Pauli strings.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PauliOp {
    n_qubits: usize,
    terms: BTreeMap<PauliString, C64>,
}

impl PauliOp {
    pub fn zero(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self::term(n_qubits, c(1.0, 0.0), PauliString::identity())
    }

    pub fn term(n_qubits: usize, coeff: C64, s: PauliString) -> Self {
        let mut op = Self::zero(n_qubits);
        op.add_term(coeff, s);
        op
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn add_term(&mut self, coeff: C64, s: PauliString) {
        assert!(s.support_len() <= self.n_qubits, "string exceeds register");
        *self.terms.entry(s).or_insert(c(0.0, 0.0)) += coeff;
    }

    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, &C64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Drops terms with |coeff| <= tol.
    pub fn pruned(mut self, tol: f64) -> Self {
        self.terms.retain(|_, v| v.norm() > tol);
        self
    }

    pub fn scale(mut self, k: C64) -> Self {
        self.terms.values_mut().for_each(|v| *v *= k);
        self
    }

    pub fn add(mut self, other: &PauliOp) -> Self {
        assert_eq!(self.n_qubits, other.n_qubits);
        for (s, v) in &other.terms {
            self.add_term(*v, *s);
        }
        self
    }

    pub fn mul(&self, other: &PauliOp) -> Self {
        assert_eq!(self.n_qubits, other.n_qubits);
        let mut out = Self::zero(self.n_qubits);
        for (a, va) in &self.terms {
            for (b, vb) in &other.terms {
                let (phase, s) = a.mul(b);
                out.add_term(phase * va * vb, s);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self {
            n_qubits: self.n_qubits,
            terms: self.terms.iter().map(|(s, v)| (*s, v.conj())).collect(),
        }
    }

    /// `{self, other}`.
    pub fn anticommutator(&self, other: &PauliOp) -> Self {
        self.mul(other).add(&other.mul(self))
    }

    /// Row-major dense matrix; intended for small registers.
    pub fn to_dense(&self) -> Vec<C64> {
        let dim = 1usize << self.n_qubits;
        let mut m = vec![c(0.0, 0.0); dim * dim];
        for (s, v) in &self.terms {
            for col in 0..dim {
                let (phase, row) = s.apply_to_basis(col);
                m[row * dim + col] += phase * v;
            }
        }
        m
    }

    /// Converts to a Hamiltonian, failing if any coefficient has an imaginary part above `tol`.
    pub fn to_hamiltonian(&self, tol: f64) -> Result<QubitHamiltonian> {
        let mut h = QubitHamiltonian::new(self.n_qubits);
        for (s, v) in &self.terms {
            if v.im.abs() > tol {
                return Err(Error::InvalidModel(format!(
                    "non-Hermitian term {} with coefficient {v}",
                    s.label(self.n_qubits)
                )));
            }
            h.add_term(v.re, *s);
        }
        Ok(h.canonical())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FermionKind {
    Creation,
    Annihilation,
}

/// Jordan-Wigner image of `a_j^dagger` or `a_j`: `(prod_{k<j} -Z_k) (X_j -/+ iY_j)/2`.
pub fn jordan_wigner(j: usize, kind: FermionKind, n_qubits: usize) -> Result<PauliOp> {
    if j >= n_qubits {
        return Err(Error::QubitOutOfRange { index: j, n_qubits });
    }
    let mut string = PauliOp::identity(n_qubits);
    for k in 0..j {
        string = string.mul(&PauliOp::term(n_qubits, c(-1.0, 0.0), PauliString::single(k, Pauli::Z)));
    }
    let y_sign = match kind {
        FermionKind::Creation => -0.5,
        FermionKind::Annihilation => 0.5,
    };
    let mut ladder = PauliOp::term(n_qubits, c(0.5, 0.0), PauliString::single(j, Pauli::X));
    ladder.add_term(c(0.0, y_sign), PauliString::single(j, Pauli::Y));
    Ok(string.mul(&ladder))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliTerm {
    pub coeff: f64,
    pub string: PauliString,
}

/// Hermitian operator as a real-weighted sum of Pauli strings.
#[derive(Clone, Debug, PartialEq)]
pub struct QubitHamiltonian {
    n_qubits: usize,
    terms: Vec<PauliTerm>,
}

impl QubitHamiltonian {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            terms: Vec::new(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn add_term(&mut self, coeff: f64, string: PauliString) {
        assert!(string.support_len() <= self.n_qubits, "string exceeds register");
        self.terms.push(PauliTerm { coeff, string });
    }

    pub fn add(mut self, other: &QubitHamiltonian) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.canonical()
    }

    /// Merges duplicate strings, drops exact zeros, sorts by string.
    pub fn canonical(self) -> Self {
        let mut merged: BTreeMap<PauliString, f64> = BTreeMap::new();
        for t in self.terms {
            *merged.entry(t.string).or_insert(0.0) += t.coeff;
        }
        Self {
            n_qubits: self.n_qubits,
            terms: merged
                .into_iter()
                .filter(|(_, v)| *v != 0.0)
                .map(|(string, coeff)| PauliTerm { coeff, string })
                .collect(),
        }
    }

    pub fn coefficient(&self, s: &PauliString) -> f64 {
        self.terms.iter().filter(|t| t.string == *s).map(|t| t.coeff).sum()
    }

    /// Sum of |coefficients|: an upper bound on the operator norm.
    pub fn one_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.abs()).sum()
    }

    pub fn to_pauli_op(&self) -> PauliOp {
        let mut op = PauliOp::zero(self.n_qubits);
        for t in &self.terms {
            op.add_term(c(t.coeff, 0.0), t.string);
        }
        op
    }

    /// `H |psi>` without forming a matrix.
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let mut out = vec![c(0.0, 0.0); psi.len()];
        for t in &self.terms {
            for (col, a) in psi.iter().enumerate() {
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let (phase, row) = t.string.apply_to_basis(col);
                out[row] += phase * a * t.coeff;
            }
        }
        out
    }

    pub fn expectation(&self, psi: &[C64]) -> f64 {
        let h = self.apply(psi);
        psi.iter().zip(&h).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

impl fmt::Display for QubitHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{}*{}", t.coeff, t.string.label(self.n_qubits))?;
        }
        Ok(())
    }
}
