//! Full-space dense Hamiltonian with a cached eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::models::InitialState;
use crate::pauli::QubitHamiltonian;
use crate::statevector::{c, StateVector, C64};

pub const DENSE_QUBIT_LIMIT: usize = 12;

#[derive(Clone, Debug)]
pub struct DenseHamiltonian {
    n_qubits: usize,
    matrix: DMatrix<C64>,
    /// Ascending.
    energies: Vec<f64>,
    /// Column `a` is the eigenvector of `energies[a]`.
    vectors: DMatrix<C64>,
}

pub fn build_dense(h: &QubitHamiltonian) -> Result<DenseHamiltonian> {
    DenseHamiltonian::new(h)
}

impl DenseHamiltonian {
    pub fn new(h: &QubitHamiltonian) -> Result<Self> {
        let n = h.n_qubits();
        if n > DENSE_QUBIT_LIMIT {
            return Err(Error::TooManyQubits {
                n_qubits: n,
                limit: DENSE_QUBIT_LIMIT,
            });
        }
        let dim = 1usize << n;
        let mut matrix = DMatrix::<C64>::zeros(dim, dim);
        for t in h.terms() {
            for col in 0..dim {
                let (phase, row) = t.string.apply_to_basis(col);
                matrix[(row, col)] += phase * t.coeff;
            }
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = order.iter().map(|&a| eig.eigenvalues[a]).collect();
        let vectors = DMatrix::from_fn(dim, dim, |r, k| eig.eigenvectors[(r, order[k])]);
        Ok(Self {
            n_qubits: n,
            matrix,
            energies,
            vectors,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    pub fn eigenvector(&self, a: usize) -> StateVector {
        let amps = self.vectors.column(a).iter().copied().collect();
        StateVector::normalized(self.n_qubits, amps).expect("eigenvectors are unit vectors")
    }

    /// max |H - H^dag|.
    pub fn hermiticity_deviation(&self) -> f64 {
        let d = &self.matrix - self.matrix.adjoint();
        d.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `w_a = sum_i weight_i |<a|phi_i>|^2`.
    pub fn weights(&self, init: &InitialState) -> Vec<f64> {
        let mut w = vec![0.0; self.dim()];
        for (wi, member) in init.iter() {
            let phi = DVector::from_column_slice(member.amplitudes());
            let proj = self.vectors.adjoint() * phi;
            for (a, p) in proj.iter().enumerate() {
                w[a] += wi * p.norm_sqr();
            }
        }
        w
    }

    /// `(E_a, w_a)` with `w_a > tol`, degenerate levels (|dE| <= merge) summed.
    pub fn spectral_support(&self, init: &InitialState, tol: f64, merge: f64) -> Vec<(f64, f64)> {
        let w = self.weights(init);
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (&e, &wa) in self.energies.iter().zip(&w) {
            match out.last_mut() {
                Some(last) if (e - last.0).abs() <= merge => {
                    let total = last.1 + wa;
                    if total > 0.0 {
                        last.0 = (last.0 * last.1 + e * wa) / total;
                    }
                    last.1 = total;
                }
                _ => out.push((e, wa)),
            }
        }
        out.retain(|&(_, wa)| wa > tol);
        out
    }

    /// Lowest energy carrying weight above `tol` in `init`.
    pub fn ground_energy_in_support(&self, init: &InitialState, tol: f64) -> f64 {
        let w = self.weights(init);
        self.energies
            .iter()
            .zip(&w)
            .find(|(_, &wa)| wa > tol)
            .map(|(&e, _)| e)
            .unwrap_or(self.energies[0])
    }

    /// `exp(-i t H)` as a dense matrix.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        let phases = DVector::from_iterator(self.dim(), self.energies.iter().map(|&e| C64::from_polar(1.0, -e * t)));
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, k| self.vectors[(r, k)] * phases[k]);
        scaled * self.vectors.adjoint()
    }

    /// `exp(-i t H) |psi>`.
    pub fn evolve(&self, psi: &StateVector, t: f64) -> StateVector {
        let v = DVector::from_column_slice(psi.amplitudes());
        let mut proj = self.vectors.adjoint() * v;
        for (p, &e) in proj.iter_mut().zip(&self.energies) {
            *p *= C64::from_polar(1.0, -e * t);
        }
        let out = &self.vectors * proj;
        StateVector::normalized(self.n_qubits, out.iter().copied().collect()).expect("unitary evolution keeps the norm")
    }

    /// `H |psi>` as raw amplitudes.
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let v = DVector::from_column_slice(psi);
        (&self.matrix * v).iter().copied().collect()
    }

    /// Operator norm of `[H, B]` for a Hermitian `B` on the same register.
    pub fn commutator_norm(&self, other: &QubitHamiltonian) -> Result<f64> {
        let b = DenseHamiltonian::new(other)?;
        let comm = &self.matrix * &b.matrix - &b.matrix * &self.matrix;
        Ok(comm.singular_values().iter().copied().fold(0.0, f64::max))
    }
}

/// Global-phase-insensitive distance `min_phi ||A - e^{i phi} B||_F / sqrt(dim)`.
pub fn phase_insensitive_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let overlap: C64 = a.iter().zip(b.iter()).map(|(x, y)| y.conj() * x).sum();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        c(1.0, 0.0)
    };
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - phase * y).norm_sqr()).sum();
    (diff / a.nrows() as f64).sqrt()
}
