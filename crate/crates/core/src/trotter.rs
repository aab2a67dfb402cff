//! First-order Trotter step circuits and (controlled) time evolution.
//!
//! Gate order inside a step: the first factor then the second, each in
//! ascending qubit order. Hubbard: hopping blocks, then interaction blocks.
//! Pairing: level phases, then pair-exchange blocks for p > q.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::models::{HubbardModel, Model, PairingModel};
use crate::statevector::{c, GateMatrix, StateVector, C64};

/// Time-step products used for noiseless runs.
pub const HUBBARD_DT_J: f64 = 0.02;
pub const PAIRING_DT_DE: f64 = 0.002;

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<GateMatrix>,
    dt: f64,
    n_steps: usize,
}

impl Circuit {
    pub fn new(n_qubits: usize, gates: Vec<GateMatrix>, dt: f64, n_steps: usize) -> Result<Self> {
        for g in &gates {
            if let Some(&q) = g.targets().iter().find(|&&q| q >= n_qubits) {
                return Err(Error::QubitOutOfRange { index: q, n_qubits });
            }
        }
        Ok(Self {
            n_qubits,
            gates,
            dt,
            n_steps,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[GateMatrix] {
        &self.gates
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        for g in &self.gates {
            state.apply_gate(g)?;
        }
        Ok(())
    }

    /// Applies every gate controlled on `ancilla`, in circuit order.
    pub fn apply_controlled(&self, state: &mut StateVector, ancilla: usize) -> Result<()> {
        for g in &self.gates {
            state.apply_controlled(ancilla, g)?;
        }
        Ok(())
    }

    /// The circuit as a dense `2^n x 2^n` unitary.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let dim = 1usize << self.n_qubits;
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        for col in 0..dim {
            let mut psi = StateVector::basis(self.n_qubits, col);
            self.apply(&mut psi).expect("targets validated at construction");
            for (r, a) in psi.amplitudes().iter().enumerate() {
                m[(r, col)] = *a;
            }
        }
        m
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::InvalidArgument(format!("time step must be >= 0, got {dt}")));
    }
    Ok(())
}

/// `[[1,0,0,0],[0,cos,s,0],[0,s,cos,0],[0,0,0,1]]` with `s = i * sign * sin(lambda)`.
fn exchange_block(a: usize, b: usize, lambda: f64, sign: f64) -> Result<GateMatrix> {
    let (s, co) = lambda.sin_cos();
    let o = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let off = c(0.0, sign * s);
    GateMatrix::two(
        a,
        b,
        [
            [one, o, o, o],
            [o, c(co, 0.0), off, o],
            [o, off, c(co, 0.0), o],
            [o, o, o, one],
        ],
    )
}

pub fn trotter_step_hubbard(model: &HubbardModel, dt: f64) -> Result<Circuit> {
    check_dt(dt)?;
    let m = model.n_sites();
    let lambda = dt * model.hopping();
    let mut gates = Vec::new();
    for (a, b) in model.hopping_links() {
        gates.push(exchange_block(a, b, lambda, -1.0)?);
    }
    let o = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let phase = C64::from_polar(1.0, -dt * model.onsite());
    for a in 0..m {
        gates.push(GateMatrix::two(
            a,
            a + m,
            [[one, o, o, o], [o, one, o, o], [o, o, one, o], [o, o, o, phase]],
        )?);
    }
    Circuit::new(2 * m, gates, dt, 1)
}

pub fn trotter_step_pairing(model: &PairingModel, dt: f64) -> Result<Circuit> {
    check_dt(dt)?;
    let m = model.n_levels();
    let mut gates: Vec<GateMatrix> = model
        .eps()
        .iter()
        .enumerate()
        .map(|(p, &e)| GateMatrix::phase(p, -2.0 * e * dt))
        .collect();
    for p in 0..m {
        for q in 0..p {
            gates.push(exchange_block(q, p, model.g(p, q) * dt, 1.0)?);
        }
    }
    Circuit::new(m, gates, dt, 1)
}

pub fn trotter_step(model: &Model, dt: f64) -> Result<Circuit> {
    match model {
        Model::Pairing(m) => trotter_step_pairing(m, dt),
        Model::Hubbard(m) => trotter_step_hubbard(m, dt),
    }
}

/// How many Trotter steps to use for a total time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NStepsPolicy {
    /// Always this many steps.
    Fixed(usize),
    /// `ceil(t / dt_ref)` steps, at least one.
    ReferenceStep(f64),
}

impl NStepsPolicy {
    /// Reference step from `dt*J = 0.02` (Hubbard) or `dt*de = 0.002` (pairing, de = lowest level).
    pub fn reference_for(model: &Model) -> Self {
        let scale = match model {
            Model::Pairing(m) => m
                .eps()
                .iter()
                .map(|e| e.abs())
                .find(|&e| e > 0.0)
                .map(|e| e / PAIRING_DT_DE),
            Model::Hubbard(m) => (m.hopping() != 0.0).then(|| m.hopping().abs() / HUBBARD_DT_J),
        };
        // A model without the reference scale falls back to its one-norm.
        let scale = scale.unwrap_or_else(|| model.to_qubits().one_norm().max(1.0) / HUBBARD_DT_J);
        NStepsPolicy::ReferenceStep(1.0 / scale)
    }

    pub fn n_steps(&self, t: f64) -> usize {
        match *self {
            NStepsPolicy::Fixed(n) => n.max(1),
            NStepsPolicy::ReferenceStep(dt) => {
                // tolerate round-off when t is an exact multiple of dt
                let k = (t.abs() / dt * (1.0 - 1e-12)).ceil();
                (k as usize).max(1)
            }
        }
    }
}

/// `n_steps` repetitions of the step circuit with `dt = t / n_steps`.
pub fn evolve(state: &StateVector, model: &Model, t: f64, n_steps: usize) -> Result<StateVector> {
    let mut out = state.clone();
    if t == 0.0 {
        return Ok(out);
    }
    let step = step_for(model, t, n_steps)?;
    for _ in 0..n_steps {
        step.apply(&mut out)?;
    }
    Ok(out)
}

/// As [`evolve`] with every gate controlled on `ancilla`.
pub fn controlled_evolve(
    state: &StateVector,
    model: &Model,
    t: f64,
    n_steps: usize,
    ancilla: usize,
) -> Result<StateVector> {
    if ancilla < model.n_qubits() {
        return Err(Error::ControlOverlap(ancilla));
    }
    let mut out = state.clone();
    if t == 0.0 {
        return Ok(out);
    }
    let step = step_for(model, t, n_steps)?;
    for _ in 0..n_steps {
        step.apply_controlled(&mut out, ancilla)?;
    }
    Ok(out)
}

fn step_for(model: &Model, t: f64, n_steps: usize) -> Result<Circuit> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("evolution time must be >= 0, got {t}")));
    }
    trotter_step(model, t / n_steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{build_dense, phase_insensitive_distance};
    use crate::pauli::QubitHamiltonian;
    use approx::assert_abs_diff_eq;

    fn two_level(g: f64) -> Model {
        Model::Pairing(PairingModel::uniform(2, 1, 1.0, g).unwrap())
    }

    fn dense_exp(h: &QubitHamiltonian, t: f64) -> DMatrix<C64> {
        build_dense(h).unwrap().propagator(t)
    }

    #[test]
    fn zero_hopping_blocks_are_identity() {
        let m = HubbardModel::new(3, 0.0, 1.0, 1, 1).unwrap();
        let step = trotter_step_hubbard(&m, 0.1).unwrap();
        let links = m.hopping_links().len();
        for g in &step.gates()[..links] {
            for r in 0..4 {
                for col in 0..4 {
                    let want = if r == col { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(g.element(r, col).re, want, epsilon = 1e-15);
                    assert_abs_diff_eq!(g.element(r, col).im, 0.0, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn quarter_turn_hop_swaps_with_minus_i() {
        let g = exchange_block(0, 1, std::f64::consts::FRAC_PI_2, -1.0).unwrap();
        let mut psi = StateVector::basis(2, 0b01);
        psi.apply_gate(&g).unwrap();
        assert!((psi.amplitudes()[0b10] - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn free_pairing_step_is_diagonal() {
        let m = PairingModel::uniform(3, 1, 1.0, 0.0).unwrap();
        let u = trotter_step_pairing(&m, 0.3).unwrap().to_dense();
        for r in 0..8 {
            for col in 0..8 {
                if r != col {
                    assert_eq!(u[(r, col)], c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn pairing_step_matches_split_exponentials() {
        let m = PairingModel::uniform(2, 1, 1.0, 1.0).unwrap();
        let dt = 0.17;
        let full = m.to_qubits();
        let diag = {
            let mut h = QubitHamiltonian::new(2);
            for t in full.terms().iter().filter(|t| t.string.is_diagonal()) {
                h.add_term(t.coeff, t.string);
            }
            h
        };
        let off = {
            let mut h = QubitHamiltonian::new(2);
            for t in full.terms().iter().filter(|t| !t.string.is_diagonal()) {
                h.add_term(t.coeff, t.string);
            }
            h
        };
        // the circuit applies the level phases first
        let want = dense_exp(&off, dt) * dense_exp(&diag, dt);
        let got = trotter_step_pairing(&m, dt).unwrap().to_dense();
        assert!((got - want).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn hubbard_step_matches_split_exponentials() {
        let m = HubbardModel::new(2, 0.8, 1.3, 1, 1).unwrap();
        let dt = 0.21;
        let want = dense_exp(&m.interaction_part(), dt) * dense_exp(&m.hopping_part(), dt);
        let got = trotter_step_hubbard(&m, dt).unwrap().to_dense();
        assert!((got - want).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn step_circuits_are_unitary() {
        let models = [
            Model::Pairing(PairingModel::uniform(4, 2, 1.0, 0.6).unwrap()),
            Model::Hubbard(HubbardModel::new(3, 1.0, 2.0, 1, 1).unwrap()),
        ];
        for model in &models {
            let u = trotter_step(model, 0.05).unwrap().to_dense();
            let n = u.nrows();
            let dev = u.adjoint() * &u - DMatrix::<C64>::identity(n, n);
            assert!(dev.iter().all(|v| v.norm() < 1e-10));
        }
    }

    #[test]
    fn zero_time_and_commuting_parts_are_exact() {
        let model = two_level(0.0);
        let psi = StateVector::basis(2, 0b01);
        assert_eq!(evolve(&psi, &model, 0.0, 3).unwrap(), psi);
        let d = build_dense(&model.to_qubits()).unwrap();
        for n in [1, 2, 7] {
            let got = evolve(&psi, &model, 1.3, n).unwrap();
            let want = d.evolve(&psi, 1.3);
            assert!(got
                .amplitudes()
                .iter()
                .zip(want.amplitudes())
                .all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }

    fn trotter_error(model: &Model, t: f64, n: usize) -> f64 {
        let d = build_dense(&model.to_qubits()).unwrap();
        let step = trotter_step(model, t / n as f64).unwrap().to_dense();
        let mut u = DMatrix::<C64>::identity(step.nrows(), step.nrows());
        for _ in 0..n {
            u = &step * u;
        }
        phase_insensitive_distance(&u, &d.propagator(t))
    }

    #[test]
    fn error_halves_when_steps_double() {
        let model = two_level(1.0);
        let e1 = trotter_error(&model, 1.0, 64);
        let e2 = trotter_error(&model, 1.0, 128);
        assert!((e1 / e2 - 2.0).abs() < 0.05, "{}", e1 / e2);
    }

    #[test]
    fn controlled_evolution_branches() {
        let model = two_level(1.0);
        let psi = StateVector::basis(2, 0b01);
        let (with_anc, anc) = psi.with_ancilla();
        let off = controlled_evolve(&with_anc, &model, 0.7, 5, anc).unwrap();
        assert_eq!(off, with_anc);

        let mut on = with_anc.clone();
        on.apply_gate(&GateMatrix::pauli_x(anc)).unwrap();
        let on = controlled_evolve(&on, &model, 0.7, 5, anc).unwrap();
        let plain = evolve(&psi, &model, 0.7, 5).unwrap();
        assert_eq!(&on.amplitudes()[4..], plain.amplitudes());

        assert!(controlled_evolve(&with_anc, &model, 0.7, 5, 1).is_err());
    }

    #[test]
    fn eigenstate_picks_up_relative_phase() {
        let model = two_level(1.0);
        let d = build_dense(&model.to_qubits()).unwrap();
        // ground state of the one-pair sector
        let init = model.default_initial_state().unwrap();
        let w = d.weights(&init);
        let a = (0..4).find(|&a| w[a] > 0.5).unwrap();
        let phi = d.eigenvector(a);
        let (mut s, anc) = phi.with_ancilla();
        s.apply_gate(&GateMatrix::hadamard(anc)).unwrap();
        let t = 0.4;
        let s = controlled_evolve(&s, &model, t, 4000, anc).unwrap();
        // <branch0|branch1> = e^{-i t E_a}
        let amps = s.amplitudes();
        let overlap: C64 = (0..4).map(|i| amps[i].conj() * amps[i + 4]).sum::<C64>() * 2.0;
        let want = C64::from_polar(1.0, -t * d.energies()[a]);
        assert!((overlap - want).norm() < 1e-3, "{overlap} vs {want}");
    }

    #[test]
    fn step_policy() {
        let p = NStepsPolicy::ReferenceStep(0.002);
        assert_eq!(p.n_steps(0.0), 1);
        assert_eq!(p.n_steps(0.002), 1);
        assert_eq!(p.n_steps(0.0021), 2);
        assert_eq!(p.n_steps(1.0), 500);
        assert_eq!(NStepsPolicy::Fixed(0).n_steps(3.0), 1);
        let model = Model::Hubbard(HubbardModel::new(4, 2.0, 2.0, 2, 2).unwrap());
        assert_eq!(NStepsPolicy::reference_for(&model), NStepsPolicy::ReferenceStep(0.01));
    }
}
