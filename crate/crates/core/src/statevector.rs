//! Dense statevector simulator.
//!
//! Qubit 0 is the least-significant bit of the amplitude index. Gates act on
//! one or two target qubits; a two-qubit matrix is indexed by
//! `bit(targets[0]) + 2 * bit(targets[1])`, so `targets[0]` is the low bit of
//! the local 4x4 basis. Non-adjacent targets are handled by index arithmetic.

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::rng;

pub type C64 = Complex64;

const UNITARITY_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A one- or two-qubit unitary together with the qubits it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMatrix {
    targets: Vec<usize>,
    /// Row-major `dim x dim`.
    entries: Vec<C64>,
}

impl GateMatrix {
    /// Validates arity, shape, distinct targets and unitarity (tolerance 1e-12).
    pub fn new(targets: Vec<usize>, entries: Vec<C64>) -> Result<Self> {
        let arity = targets.len();
        if !(1..=2).contains(&arity) {
            return Err(Error::GateShape {
                arity,
                expected: 1 << arity,
                len: entries.len(),
            });
        }
        let dim = 1 << arity;
        if entries.len() != dim * dim {
            return Err(Error::GateShape {
                arity,
                expected: dim,
                len: entries.len(),
            });
        }
        if arity == 2 && targets[0] == targets[1] {
            return Err(Error::DuplicateTargets(targets));
        }
        let deviation = unitarity_deviation(&entries, dim);
        if deviation > UNITARITY_TOL {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(Self { targets, entries })
    }

    pub fn single(target: usize, m: [[C64; 2]; 2]) -> Result<Self> {
        Self::new(vec![target], m.iter().flatten().copied().collect())
    }

    pub fn two(q0: usize, q1: usize, m: [[C64; 4]; 4]) -> Result<Self> {
        Self::new(vec![q0, q1], m.iter().flatten().copied().collect())
    }

    pub fn hadamard(target: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::single(target, [[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]]).expect("Hadamard is unitary")
    }

    pub fn pauli_x(target: usize) -> Self {
        Self::single(target, [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]).expect("X is unitary")
    }

    pub fn pauli_y(target: usize) -> Self {
        Self::single(target, [[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]]).expect("Y is unitary")
    }

    pub fn pauli_z(target: usize) -> Self {
        Self::single(target, [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]).expect("Z is unitary")
    }

    /// Phase gate `R(phi) = diag(1, e^{i phi})`.
    pub fn phase(target: usize, phi: f64) -> Self {
        Self::single(
            target,
            [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), C64::from_polar(1.0, phi)]],
        )
        .expect("phase gate is unitary")
    }

    /// `R_X(theta) = exp(-i theta X / 2)`.
    pub fn rx(target: usize, theta: f64) -> Self {
        let (s, co) = (theta / 2.0).sin_cos();
        Self::single(target, [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]]).expect("R_X is unitary")
    }

    pub fn arity(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.targets.len()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn element(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim() + col]
    }

    fn check_targets(&self, n_qubits: usize) -> Result<()> {
        for &t in &self.targets {
            if t >= n_qubits {
                return Err(Error::QubitOutOfRange { index: t, n_qubits });
            }
        }
        Ok(())
    }
}

fn unitarity_deviation(m: &[C64], dim: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..dim {
                acc += m[k * dim + i].conj() * m[k * dim + j];
            }
            if i == j {
                acc -= 1.0;
            }
            worst = worst.max(acc.norm());
        }
    }
    worst
}

/// Outcome counts of repeated single-qubit measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShotCounts {
    pub n0: u64,
    pub n1: u64,
    pub seed: u64,
}

impl ShotCounts {
    pub fn shots(&self) -> u64 {
        self.n0 + self.n1
    }

    /// `(n0 - n1) / shots`, the unbiased estimator of `p0 - p1`.
    pub fn bias(&self) -> f64 {
        (self.n0 as f64 - self.n1 as f64) / self.shots() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        amps[index] = C64::new(1.0, 0.0);
        Self { n_qubits, amps }
    }

    /// Takes ownership of `amps`; the length must be `2^n_qubits` and the
    /// norm must be one within 1e-10.
    pub fn from_amplitudes(n_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << n_qubits {
            return Err(Error::StateLength {
                got: amps.len(),
                expected: 1 << n_qubits,
            });
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { n_qubits, amps })
    }

    /// Rescales `amps` to unit norm.
    pub fn normalized(n_qubits: usize, mut amps: Vec<C64>) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::NotNormalized(0.0));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::from_amplitudes(n_qubits, amps)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// Appends one qubit in `|0>` above the existing register; returns its index.
    pub fn with_ancilla(&self) -> (StateVector, usize) {
        let mut amps = self.amps.clone();
        amps.resize(self.amps.len() * 2, C64::new(0.0, 0.0));
        (
            StateVector {
                n_qubits: self.n_qubits + 1,
                amps,
            },
            self.n_qubits,
        )
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            Err(Error::QubitOutOfRange {
                index: q,
                n_qubits: self.n_qubits,
            })
        } else {
            Ok(())
        }
    }

    pub fn apply_gate(&mut self, gate: &GateMatrix) -> Result<()> {
        gate.check_targets(self.n_qubits)?;
        self.apply_masked(gate, 0, 0);
        Ok(())
    }

    /// Applies `gate` on the subspace where `control` is 1.
    pub fn apply_controlled(&mut self, control: usize, gate: &GateMatrix) -> Result<()> {
        gate.check_targets(self.n_qubits)?;
        self.check_qubit(control)?;
        if gate.targets().contains(&control) {
            return Err(Error::ControlOverlap(control));
        }
        let bit = 1usize << control;
        self.apply_masked(gate, bit, bit);
        Ok(())
    }

    /// Applies the gate on every block whose index satisfies `i & mask == want`.
    fn apply_masked(&mut self, gate: &GateMatrix, mask: usize, want: usize) {
        match gate.targets() {
            [t] => {
                let bt = 1usize << t;
                let m = gate.entries();
                for i in 0..self.amps.len() {
                    if i & bt != 0 || i & mask != want {
                        continue;
                    }
                    let j = i | bt;
                    let (a0, a1) = (self.amps[i], self.amps[j]);
                    self.amps[i] = m[0] * a0 + m[1] * a1;
                    self.amps[j] = m[2] * a0 + m[3] * a1;
                }
            }
            [t0, t1] => {
                let (b0, b1) = (1usize << t0, 1usize << t1);
                let m = gate.entries();
                for i in 0..self.amps.len() {
                    if i & (b0 | b1) != 0 || i & mask != want {
                        continue;
                    }
                    let idx = [i, i | b0, i | b1, i | b0 | b1];
                    let a = idx.map(|k| self.amps[k]);
                    for (r, &k) in idx.iter().enumerate() {
                        let row = &m[4 * r..4 * r + 4];
                        self.amps[k] = row[0] * a[0] + row[1] * a[1] + row[2] * a[2] + row[3] * a[3];
                    }
                }
            }
            _ => unreachable!("arity validated at construction"),
        }
    }

    /// Probability of reading 0 on `qubit`.
    pub fn prob_zero(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let bit = 1usize << qubit;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Exact `p0 - p1` on `ancilla`.
    pub fn ancilla_expectation(&self, ancilla: usize) -> Result<f64> {
        self.check_qubit(ancilla)?;
        let bit = 1usize << ancilla;
        let mut acc = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            if i & bit == 0 {
                acc += a.norm_sqr();
            } else {
                acc -= a.norm_sqr();
            }
        }
        Ok(acc.clamp(-1.0, 1.0))
    }

    /// Binomial draw of `shots` measurements of `ancilla`, reproducible from `seed`.
    pub fn sample_ancilla(&self, ancilla: usize, shots: u64, seed: u64) -> Result<ShotCounts> {
        let p0 = self.prob_zero(ancilla)?;
        sample_binary(p0, shots, seed)
    }
}

/// Draws `n0 ~ Binomial(shots, p0)` from a ChaCha8 stream keyed by `seed`.
pub fn sample_binary(p0: f64, shots: u64, seed: u64) -> Result<ShotCounts> {
    if shots == 0 {
        return Err(Error::ZeroShots);
    }
    let mut rng = rng::stream(seed);
    let n0 = Binomial::new(shots, p0.clamp(0.0, 1.0))
        .expect("probability clamped to [0, 1]")
        .sample(&mut rng);
    Ok(ShotCounts {
        n0,
        n1: shots - n0,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    /// Dense 2^n matrix of `gate` (optionally controlled), built column by column
    /// from basis-index arithmetic only.
    fn explicit_matrix(n: usize, gate: &GateMatrix, control: Option<usize>) -> Vec<Vec<C64>> {
        let dim = 1 << n;
        let mut out = vec![vec![C64::new(0.0, 0.0); dim]; dim];
        for col in 0..dim {
            let active = control.is_none_or(|c| col >> c & 1 == 1);
            if !active {
                out[col][col] = C64::new(1.0, 0.0);
                continue;
            }
            let local_col = gate
                .targets()
                .iter()
                .enumerate()
                .fold(0, |acc, (k, &t)| acc | ((col >> t & 1) << k));
            for local_row in 0..gate.dim() {
                let mut row = col;
                for (k, &t) in gate.targets().iter().enumerate() {
                    row = (row & !(1 << t)) | ((local_row >> k & 1) << t);
                }
                out[row][col] += gate.element(local_row, local_col);
            }
        }
        out
    }

    fn matvec(m: &[Vec<C64>], v: &[C64]) -> Vec<C64> {
        m.iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    #[test]
    fn x_flips_zero() {
        let mut s = StateVector::zero(1);
        s.apply_gate(&GateMatrix::pauli_x(0)).unwrap();
        assert!(close(s.amplitudes()[1], c(1.0, 0.0)));
    }

    #[test]
    fn hadamard_then_phase() {
        let mut s = StateVector::zero(1);
        s.apply_gate(&GateMatrix::hadamard(0)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(s.amplitudes()[0], c(h, 0.0)));
        assert!(close(s.amplitudes()[1], c(h, 0.0)));
        s.apply_gate(&GateMatrix::phase(0, -std::f64::consts::FRAC_PI_2))
            .unwrap();
        assert!(close(s.amplitudes()[1], c(0.0, -h)));
    }

    #[test]
    fn out_of_range_and_non_unitary_rejected() {
        let mut s = StateVector::zero(2);
        assert!(matches!(
            s.apply_gate(&GateMatrix::pauli_x(2)),
            Err(Error::QubitOutOfRange { .. })
        ));
        let bad = GateMatrix::single(0, [[c(1.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]);
        assert!(matches!(bad, Err(Error::NotUnitary { .. })));
        let dup = GateMatrix::new(vec![1, 1], vec![c(0.0, 0.0); 16]);
        assert!(matches!(dup, Err(Error::DuplicateTargets(_))));
    }

    #[test]
    fn controlled_respects_control() {
        // control off: nothing happens
        let mut s = StateVector::zero(2);
        s.apply_controlled(1, &GateMatrix::pauli_x(0)).unwrap();
        assert_eq!(s, StateVector::zero(2));
        // control on: CNOT
        let mut s = StateVector::basis(2, 0b10);
        s.apply_controlled(1, &GateMatrix::pauli_x(0)).unwrap();
        assert!(close(s.amplitudes()[0b11], c(1.0, 0.0)));
        assert!(matches!(
            s.apply_controlled(0, &GateMatrix::pauli_x(0)),
            Err(Error::ControlOverlap(0))
        ));
    }

    #[test]
    fn controlled_pairing_block_matches_dense() {
        let lam: f64 = 0.37;
        let (sn, cs) = lam.sin_cos();
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        let block = GateMatrix::two(
            0,
            1,
            [
                [one, z, z, z],
                [z, c(cs, 0.0), c(0.0, sn), z],
                [z, c(0.0, sn), c(cs, 0.0), z],
                [z, z, z, one],
            ],
        )
        .unwrap();
        // ancilla (qubit 2) = 1, system |10> meaning qubit 1 set
        let input = StateVector::basis(3, 0b110);
        let mut s = input.clone();
        s.apply_controlled(2, &block).unwrap();
        let dense = explicit_matrix(3, &block, Some(2));
        let expected = matvec(&dense, input.amplitudes());
        for (a, b) in s.amplitudes().iter().zip(&expected) {
            assert!(close(*a, *b));
        }
        assert!(close(s.amplitudes()[0b101], c(0.0, sn)));
    }

    #[test]
    fn expectation_of_basis_and_plus() {
        assert_eq!(StateVector::zero(2).ancilla_expectation(1).unwrap(), 1.0);
        assert_eq!(StateVector::basis(2, 0b10).ancilla_expectation(1).unwrap(), -1.0);
        let mut s = StateVector::zero(2);
        s.apply_gate(&GateMatrix::hadamard(1)).unwrap();
        assert_abs_diff_eq!(s.ancilla_expectation(1).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sampling_edge_cases() {
        let s = StateVector::zero(1);
        let counts = s.sample_ancilla(0, 100, 7).unwrap();
        assert_eq!((counts.n0, counts.n1), (100, 0));
        assert_eq!(s.sample_ancilla(0, 0, 7), Err(Error::ZeroShots));

        let mut plus = StateVector::zero(1);
        plus.apply_gate(&GateMatrix::hadamard(0)).unwrap();
        let a = plus.sample_ancilla(0, 10_000, 42).unwrap();
        let b = plus.sample_ancilla(0, 10_000, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.bias().abs() < 0.05);
    }

    #[test]
    fn sampling_converges_to_exact() {
        let mut s = StateVector::zero(2);
        s.apply_gate(&GateMatrix::rx(1, 1.1)).unwrap();
        let exact = s.ancilla_expectation(1).unwrap();
        let shots = 1_000_000;
        let est = s.sample_ancilla(1, shots, 3).unwrap().bias();
        assert!((est - exact).abs() < 5.0 / (shots as f64).sqrt());
    }

    fn arb_state(n: usize) -> impl Strategy<Value = StateVector> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1 << n).prop_filter_map("nonzero", move |v| {
            StateVector::normalized(n, v.into_iter().map(|(r, i)| c(r, i)).collect()).ok()
        })
    }

    fn arb_gate(n: usize) -> impl Strategy<Value = GateMatrix> {
        (0..n, 0..n, -3.0f64..3.0, -3.0f64..3.0, 0usize..4).prop_map(move |(a, b, x, y, kind)| {
            let b = if a == b { (a + 1) % n } else { b };
            match kind {
                0 => GateMatrix::rx(a, x),
                1 => GateMatrix::phase(a, y),
                2 => GateMatrix::hadamard(a),
                _ => {
                    let (s, co) = x.sin_cos();
                    let z = c(0.0, 0.0);
                    let one = c(1.0, 0.0);
                    GateMatrix::two(
                        a,
                        b,
                        [
                            [one, z, z, z],
                            [z, c(co, 0.0), c(0.0, -s), z],
                            [z, c(0.0, -s), c(co, 0.0), z],
                            [z, z, z, C64::from_polar(1.0, y)],
                        ],
                    )
                    .unwrap()
                }
            }
        })
    }

    proptest! {
        #[test]
        fn norm_preserved(state in arb_state(4), gates in proptest::collection::vec(arb_gate(4), 1..30)) {
            let mut s = state;
            for g in &gates {
                s.apply_gate(g).unwrap();
            }
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12 * gates.len() as f64);
        }

        #[test]
        fn controlled_matches_explicit(state in arb_state(4), gate in arb_gate(3)) {
            let mut s = state.clone();
            s.apply_controlled(3, &gate).unwrap();
            let dense = explicit_matrix(4, &gate, Some(3));
            let expected = matvec(&dense, state.amplitudes());
            for (a, b) in s.amplitudes().iter().zip(&expected) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }
    }
}
