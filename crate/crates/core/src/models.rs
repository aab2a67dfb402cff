//! Pairing and 1-D Fermi-Hubbard models, their qubit encodings, and initial states.
//!
//! Pairing: one qubit per level, `|1>` means the level holds a pair.
//! Hubbard: spin-up site `i` is qubit `i`, spin-down site `i` is qubit `i + M`.

use std::fmt;

use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString, QubitHamiltonian};
use crate::statevector::StateVector;

#[derive(Clone, Debug, PartialEq)]
pub struct PairingModel {
    eps: Vec<f64>,
    /// Row-major `M x M`, symmetric.
    g: Vec<f64>,
    pair_count: usize,
}

impl PairingModel {
    pub fn new(eps: Vec<f64>, g: Vec<f64>, pair_count: usize) -> Result<Self> {
        let m = eps.len();
        if m == 0 {
            return Err(Error::InvalidModel("pairing model needs at least one level".into()));
        }
        if g.len() != m * m {
            return Err(Error::InvalidModel(format!(
                "coupling matrix has {} entries, expected {}",
                g.len(),
                m * m
            )));
        }
        for p in 0..m {
            for q in 0..p {
                if g[p * m + q] != g[q * m + p] {
                    return Err(Error::InvalidModel(format!(
                        "coupling matrix not symmetric at ({p}, {q})"
                    )));
                }
            }
        }
        if pair_count > m {
            return Err(Error::InvalidModel(format!(
                "{pair_count} pairs do not fit in {m} levels"
            )));
        }
        if eps.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(Self { eps, g, pair_count })
    }

    /// Equally spaced levels `eps_p = p * delta_e` (p = 1..M) with constant coupling `g`.
    pub fn uniform(n_levels: usize, pair_count: usize, delta_e: f64, g: f64) -> Result<Self> {
        let eps = (1..=n_levels).map(|p| p as f64 * delta_e).collect();
        Self::new(eps, vec![g; n_levels * n_levels], pair_count)
    }

    pub fn n_levels(&self) -> usize {
        self.eps.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn g(&self, p: usize, q: usize) -> f64 {
        self.g[p * self.n_levels() + q]
    }

    /// `H = sum_p eps_p (I - Z_p) - 1/2 sum_{p>q} g_pq (X_p X_q + Y_p Y_q)`.
    pub fn to_qubits(&self) -> QubitHamiltonian {
        let m = self.n_levels();
        let mut h = QubitHamiltonian::new(m);
        for (p, &e) in self.eps.iter().enumerate() {
            h.add_term(e, PauliString::identity());
            h.add_term(-e, PauliString::single(p, Pauli::Z));
        }
        for p in 0..m {
            for q in 0..p {
                let g = self.g(p, q);
                for letter in [Pauli::X, Pauli::Y] {
                    h.add_term(-0.5 * g, PauliString::from_pairs(&[(p, letter), (q, letter)]));
                }
            }
        }
        h.canonical()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HubbardModel {
    n_sites: usize,
    hopping: f64,
    onsite: f64,
    n_up: usize,
    n_down: usize,
}

impl HubbardModel {
    pub fn new(n_sites: usize, hopping: f64, onsite: f64, n_up: usize, n_down: usize) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::InvalidModel("Hubbard chain needs at least 2 sites".into()));
        }
        if n_up > n_sites || n_down > n_sites {
            return Err(Error::InvalidModel(format!(
                "{n_up} up / {n_down} down particles do not fit on {n_sites} sites"
            )));
        }
        if !hopping.is_finite() || !onsite.is_finite() {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(Self {
            n_sites,
            hopping,
            onsite,
            n_up,
            n_down,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn hopping(&self) -> f64 {
        self.hopping
    }

    pub fn onsite(&self) -> f64 {
        self.onsite
    }

    pub fn n_up(&self) -> usize {
        self.n_up
    }

    pub fn n_down(&self) -> usize {
        self.n_down
    }

    /// Qubit pairs `(alpha, alpha + 1)` joined by a hopping term; the link
    /// between the last up site and the first down site is excluded.
    pub fn hopping_links(&self) -> Vec<(usize, usize)> {
        (0..2 * self.n_sites - 1)
            .filter(|&a| a != self.n_sites - 1)
            .map(|a| (a, a + 1))
            .collect()
    }

    pub fn hopping_part(&self) -> QubitHamiltonian {
        let mut h = QubitHamiltonian::new(2 * self.n_sites);
        for (a, b) in self.hopping_links() {
            for letter in [Pauli::X, Pauli::Y] {
                h.add_term(0.5 * self.hopping, PauliString::from_pairs(&[(a, letter), (b, letter)]));
            }
        }
        h.canonical()
    }

    /// `U/4 sum_a (I - Z_a)(I - Z_{a+M})`.
    pub fn interaction_part(&self) -> QubitHamiltonian {
        let m = self.n_sites;
        let k = 0.25 * self.onsite;
        let mut h = QubitHamiltonian::new(2 * m);
        for a in 0..m {
            h.add_term(k, PauliString::identity());
            h.add_term(-k, PauliString::single(a, Pauli::Z));
            h.add_term(-k, PauliString::single(a + m, Pauli::Z));
            h.add_term(k, PauliString::from_pairs(&[(a, Pauli::Z), (a + m, Pauli::Z)]));
        }
        h.canonical()
    }

    pub fn to_qubits(&self) -> QubitHamiltonian {
        self.hopping_part().add(&self.interaction_part())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Pairing(PairingModel),
    Hubbard(HubbardModel),
}

impl Model {
    pub fn n_qubits(&self) -> usize {
        match self {
            Model::Pairing(m) => m.n_levels(),
            Model::Hubbard(m) => 2 * m.n_sites(),
        }
    }

    pub fn to_qubits(&self) -> QubitHamiltonian {
        match self {
            Model::Pairing(m) => m.to_qubits(),
            Model::Hubbard(m) => m.to_qubits(),
        }
    }

    /// Total particle-number operator `sum_q (I - Z_q)/2` (pairs for the pairing model).
    pub fn number_operator(&self) -> QubitHamiltonian {
        let n = self.n_qubits();
        let mut h = QubitHamiltonian::new(n);
        for q in 0..n {
            h.add_term(0.5, PauliString::identity());
            h.add_term(-0.5, PauliString::single(q, Pauli::Z));
        }
        h.canonical()
    }

    pub fn default_initial_state(&self) -> Result<InitialState> {
        match self {
            Model::Pairing(_) => self.initial_state(&InitialStateSpec::PairingLowestFilled),
            Model::Hubbard(_) => self.initial_state(&InitialStateSpec::HubbardSpinSaturatedMixture),
        }
    }

    pub fn initial_state(&self, spec: &InitialStateSpec) -> Result<InitialState> {
        let n = self.n_qubits();
        let occupations: Vec<u64> = match (spec, self) {
            (InitialStateSpec::PairingLowestFilled, Model::Pairing(m)) => {
                vec![(1u64 << m.pair_count()) - 1]
            }
            (InitialStateSpec::HubbardSpinSaturatedMixture, Model::Hubbard(m)) => {
                if m.n_up() != m.n_down() {
                    return Err(Error::InvalidInitialState(format!(
                        "paired mixture needs equal spin counts, got {} up and {} down",
                        m.n_up(),
                        m.n_down()
                    )));
                }
                let sites = m.n_sites();
                subsets(sites, m.n_up()).into_iter().map(|s| s | (s << sites)).collect()
            }
            (InitialStateSpec::Bitstrings(list), _) => {
                list.iter().map(|b| parse_bitstring(b, n)).collect::<Result<_>>()?
            }
            (spec, _) => {
                return Err(Error::InvalidInitialState(format!(
                    "{spec} does not apply to this model"
                )))
            }
        };
        for &occ in &occupations {
            self.check_occupation(occ)?;
        }
        let mut sorted = occupations.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != occupations.len() {
            return Err(Error::InvalidInitialState("repeated determinant".into()));
        }
        InitialState::uniform(
            occupations
                .into_iter()
                .map(|occ| StateVector::basis(n, occ as usize))
                .collect(),
        )
    }

    fn check_occupation(&self, occ: u64) -> Result<()> {
        match self {
            Model::Pairing(m) => {
                let got = occ.count_ones() as usize;
                if got != m.pair_count() {
                    return Err(Error::InvalidInitialState(format!(
                        "{got} pairs occupied, model has {}",
                        m.pair_count()
                    )));
                }
            }
            Model::Hubbard(m) => {
                let mask = (1u64 << m.n_sites()) - 1;
                let up = (occ & mask).count_ones() as usize;
                let down = (occ >> m.n_sites()).count_ones() as usize;
                if up != m.n_up() || down != m.n_down() {
                    return Err(Error::InvalidInitialState(format!(
                        "{up} up / {down} down occupied, model has {} / {}",
                        m.n_up(),
                        m.n_down()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short parameter summary used in file headers.
    pub fn fingerprint(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Pairing(m) => {
                let eps: Vec<String> = m.eps().iter().map(|e| e.to_string()).collect();
                let m_ = m.n_levels();
                let g0 = m.g(m_.min(2) - 1, 0);
                let uniform = (0..m_).all(|p| (0..p).all(|q| m.g(p, q) == g0));
                let g = if uniform { g0.to_string() } else { "matrix".to_string() };
                write!(
                    f,
                    "pairing(M={},N={},eps=[{}],g={})",
                    m_,
                    m.pair_count(),
                    eps.join(";"),
                    g
                )
            }
            Model::Hubbard(m) => write!(
                f,
                "hubbard(M={},J={},U={},up={},down={})",
                m.n_sites(),
                m.hopping(),
                m.onsite(),
                m.n_up(),
                m.n_down()
            ),
        }
    }
}

/// Which initial state to prepare.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitialStateSpec {
    /// Pairs in the lowest `N` levels.
    PairingLowestFilled,
    /// Uniform mixture of all determinants placing up/down pairs on the same sites.
    HubbardSpinSaturatedMixture,
    /// Explicit occupations; each string lists qubit 0 first. Several strings form a uniform mixture.
    Bitstrings(Vec<String>),
}

impl fmt::Display for InitialStateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialStateSpec::PairingLowestFilled => write!(f, "pairing-lowest-filled"),
            InitialStateSpec::HubbardSpinSaturatedMixture => {
                write!(f, "hubbard-spin-saturated-mixture")
            }
            InitialStateSpec::Bitstrings(b) => write!(f, "{}", b.join(",")),
        }
    }
}

impl std::str::FromStr for InitialStateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pairing-lowest-filled" => Ok(Self::PairingLowestFilled),
            "hubbard-spin-saturated-mixture" => Ok(Self::HubbardSpinSaturatedMixture),
            other => Ok(Self::Bitstrings(
                other.split(',').map(|b| b.trim().to_string()).collect(),
            )),
        }
    }
}

/// Occupation bitstring with qubit 0 first, e.g. `"1100"` sets qubits 0 and 1.
pub fn parse_bitstring(s: &str, n_qubits: usize) -> Result<u64> {
    if s.len() != n_qubits {
        return Err(Error::InvalidInitialState(format!(
            "bitstring {s:?} has length {}, register has {n_qubits} qubits",
            s.len()
        )));
    }
    s.chars().enumerate().try_fold(0u64, |acc, (q, ch)| match ch {
        '0' => Ok(acc),
        '1' => Ok(acc | 1 << q),
        other => Err(Error::InvalidInitialState(format!(
            "bad occupation character {other:?}"
        ))),
    })
}

/// All `k`-element subsets of `0..n` as bitmasks, in increasing numeric order.
fn subsets(n: usize, k: usize) -> Vec<u64> {
    (0u64..1 << n).filter(|s| s.count_ones() as usize == k).collect()
}

/// A pure state or an equally weighted mixture of pure states.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    members: Vec<StateVector>,
    weights: Vec<f64>,
}

impl InitialState {
    pub fn pure(state: StateVector) -> Self {
        Self {
            members: vec![state],
            weights: vec![1.0],
        }
    }

    pub fn uniform(members: Vec<StateVector>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidInitialState("empty mixture".into()));
        }
        let n = members[0].n_qubits();
        if members.iter().any(|m| m.n_qubits() != n) {
            return Err(Error::InvalidInitialState("mixture members differ in size".into()));
        }
        let w = 1.0 / members.len() as f64;
        Ok(Self {
            weights: vec![w; members.len()],
            members,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.members[0].n_qubits()
    }

    pub fn members(&self) -> &[StateVector] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &StateVector)> {
        self.weights.iter().copied().zip(&self.members)
    }
}
