//! Generating function `F(t) = <exp(-i t H)>` by the spectral formula and by Hadamard tests.
//!
//! The Hadamard test puts the ancilla (highest qubit) in `|+>`, applies the
//! Trotterized evolution controlled on it, optionally the phase `R(-pi/2)`
//! on the ancilla, and a final Hadamard. Then `p0 - p1` is `Re F` without
//! the phase and `Im F` with it.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dense::DenseHamiltonian;
use crate::error::{Error, Result};
use crate::models::{InitialState, Model};
use crate::rng;
use crate::statevector::{c, sample_binary, GateMatrix, StateVector, C64};
use crate::trotter::{trotter_step, Circuit, NStepsPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Exact,
    Statevector,
    Sampled,
    Mitigated,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::Exact => "exact",
            Route::Statevector => "statevector",
            Route::Sampled => "sampled",
            Route::Mitigated => "mitigated",
        })
    }
}

impl FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Route::Exact),
            "statevector" => Ok(Route::Statevector),
            "sampled" => Ok(Route::Sampled),
            "mitigated" => Ok(Route::Mitigated),
            other => Err(Error::Parse(format!("unknown route {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    Re,
    Im,
}

impl Quadrature {
    pub const BOTH: [Quadrature; 2] = [Quadrature::Re, Quadrature::Im];

    fn index(self) -> u64 {
        match self {
            Quadrature::Re => 0,
            Quadrature::Im => 1,
        }
    }
}

/// F(t) samples on a time grid with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct GfSeries {
    pub t: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub re_err: Vec<f64>,
    pub im_err: Vec<f64>,
    /// Total shots per quadrature and point; 0 for noiseless routes.
    pub shots: u64,
    pub route: Route,
    pub model: String,
    pub seed: u64,
}

impl GfSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn value(&self, k: usize) -> C64 {
        c(self.re[k], self.im[k])
    }

    /// Checks column lengths and `|F| <= 1 + 3 err` at every point.
    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if [self.re.len(), self.im.len(), self.re_err.len(), self.im_err.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::InvalidGrid("series columns differ in length".into()));
        }
        for k in 0..n {
            let err = self.re_err[k].hypot(self.im_err[k]);
            if self.value(k).norm() > 1.0 + 3.0 * err + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "|F| = {} exceeds 1 at t = {}",
                    self.value(k).norm(),
                    self.t[k]
                )));
            }
        }
        Ok(())
    }

    /// Uniform step if the grid is uniform within `rel_tol`.
    pub fn uniform_step(&self, rel_tol: f64) -> Option<f64> {
        uniform_step(&self.t, rel_tol)
    }
}

pub(crate) fn uniform_step(t: &[f64], rel_tol: f64) -> Option<f64> {
    if t.len() < 2 {
        return None;
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let ok = dt > 0.0
        && t.iter()
            .enumerate()
            .all(|(k, &x)| (x - (t[0] + k as f64 * dt)).abs() <= rel_tol * dt);
    ok.then_some(dt)
}

/// `k * dt` for `k = 0..n`.
pub fn uniform_grid(dt: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * dt).collect()
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::InvalidGrid("empty time grid".into()));
    }
    if t_grid[0] != 0.0 {
        return Err(Error::InvalidGrid("time grid must start at 0".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidGrid("time grid must be finite and non-decreasing".into()));
    }
    Ok(())
}

/// `F(t) = sum_a w_a exp(-i t E_a)` from the eigendecomposition.
pub fn gf_exact(dense: &DenseHamiltonian, init: &InitialState, t_grid: &[f64], model: &str) -> GfSeries {
    let w = dense.weights(init);
    let support: Vec<(f64, f64)> = dense
        .energies()
        .iter()
        .copied()
        .zip(w)
        .filter(|&(_, wa)| wa > 0.0)
        .collect();
    let values: Vec<C64> = t_grid
        .par_iter()
        .map(|&t| support.iter().map(|&(e, wa)| C64::from_polar(wa, -e * t)).sum())
        .collect();
    let n = t_grid.len();
    GfSeries {
        t: t_grid.to_vec(),
        re: values.iter().map(|v| v.re).collect(),
        im: values.iter().map(|v| v.im).collect(),
        re_err: vec![0.0; n],
        im_err: vec![0.0; n],
        shots: 0,
        route: Route::Exact,
        model: model.to_string(),
        seed: 0,
    }
}

/// One gate, optionally controlled.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitOp {
    pub gate: GateMatrix,
    pub control: Option<usize>,
}

impl CircuitOp {
    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        match self.control {
            Some(ctl) => state.apply_controlled(ctl, &self.gate),
            None => state.apply_gate(&self.gate),
        }
    }

    /// Targets and control.
    pub fn touched(&self) -> Vec<usize> {
        let mut q = self.gate.targets().to_vec();
        q.extend(self.control);
        q
    }
}

/// Full Hadamard-test gate list on `model.n_qubits() + 1` qubits; the ancilla is the last qubit.
pub fn hadamard_test_ops(model: &Model, t: f64, n_steps: usize, quadrature: Quadrature) -> Result<Vec<CircuitOp>> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let anc = model.n_qubits();
    let plain = |gate| CircuitOp { gate, control: None };
    let mut ops = vec![plain(GateMatrix::hadamard(anc))];
    if t != 0.0 {
        let step = trotter_step(model, t / n_steps as f64)?;
        for _ in 0..n_steps {
            ops.extend(step.gates().iter().map(|g| CircuitOp {
                gate: g.clone(),
                control: Some(anc),
            }));
        }
    }
    ops.extend(tail_ops(anc, quadrature).into_iter().map(plain));
    Ok(ops)
}

fn tail_ops(anc: usize, quadrature: Quadrature) -> Vec<GateMatrix> {
    match quadrature {
        Quadrature::Re => vec![GateMatrix::hadamard(anc)],
        Quadrature::Im => vec![
            GateMatrix::phase(anc, -std::f64::consts::FRAC_PI_2),
            GateMatrix::hadamard(anc),
        ],
    }
}

/// One grid point of a Hadamard-test estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfPoint {
    pub re: f64,
    pub im: f64,
    pub re_err: f64,
    pub im_err: f64,
    /// Shots actually spent per quadrature (budget rounded down to a multiple of the mixture size).
    pub shots: u64,
}

/// Exact ancilla biases `(Re, Im)` for each mixture member after the controlled evolution `state`.
fn biases(controlled: &StateVector, anc: usize) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for q in Quadrature::BOTH {
        let mut s = controlled.clone();
        for g in tail_ops(anc, q) {
            s.apply_gate(&g)?;
        }
        out[q.index() as usize] = s.ancilla_expectation(anc)?;
    }
    Ok(out)
}

fn prepared(member: &StateVector) -> Result<(StateVector, usize)> {
    let (mut s, anc) = member.with_ancilla();
    s.apply_gate(&GateMatrix::hadamard(anc))?;
    Ok((s, anc))
}

fn shots_per_member(shots: u64, members: usize) -> Result<u64> {
    if shots == 0 {
        return Ok(0);
    }
    let per = shots / members as u64;
    if per == 0 {
        return Err(Error::InvalidArgument(format!(
            "{shots} shots cannot be split over {members} mixture members"
        )));
    }
    Ok(per)
}

/// Combines per-member exact biases into estimates; `per_member = 0` means no sampling.
fn combine(init: &InitialState, exact: &[[f64; 2]], per_member: u64, seed: u64) -> Result<GfPoint> {
    let mut est = [0.0; 2];
    let mut var = [0.0; 2];
    for (i, ((w, _), b)) in init.iter().zip(exact).enumerate() {
        for q in Quadrature::BOTH {
            let qi = q.index() as usize;
            if per_member == 0 {
                est[qi] += w * b[qi];
                continue;
            }
            let p0 = 0.5 * (1.0 + b[qi]);
            let counts = sample_binary(p0, per_member, rng::derive(seed, &[i as u64, q.index()]))?;
            let x = counts.bias();
            est[qi] += w * x;
            var[qi] += w * w * (1.0 - x * x) / per_member as f64;
        }
    }
    Ok(GfPoint {
        re: est[0],
        im: est[1],
        re_err: var[0].sqrt(),
        im_err: var[1].sqrt(),
        shots: per_member * init.len() as u64,
    })
}

/// Hadamard-test estimate of `F(t)`; `shots = 0` uses exact ancilla expectations.
pub fn gf_hadamard(
    model: &Model,
    init: &InitialState,
    t: f64,
    n_steps: usize,
    shots: u64,
    seed: u64,
) -> Result<GfPoint> {
    check_register(model, init)?;
    let per_member = shots_per_member(shots, init.len())?;
    let exact = init
        .members()
        .iter()
        .map(|m| {
            let (s, anc) = prepared(m)?;
            let s = crate::trotter::controlled_evolve(&s, model, t, n_steps, anc)?;
            biases(&s, anc)
        })
        .collect::<Result<Vec<_>>>()?;
    combine(init, &exact, per_member, seed)
}

fn check_register(model: &Model, init: &InitialState) -> Result<()> {
    if init.n_qubits() != model.n_qubits() {
        return Err(Error::InvalidInitialState(format!(
            "initial state has {} qubits, model needs {}",
            init.n_qubits(),
            model.n_qubits()
        )));
    }
    Ok(())
}

/// Grid points evaluated together by reusing the evolved state.
const CHUNK: usize = 16;

/// Hadamard-test series over `t_grid`.
///
/// Point `k` uses seed `derive(seed, [k])`. Consecutive points whose step
/// sizes agree to 1e-13 relative continue from the previous evolved state, so
/// results depend on the grid but not on the thread count.
pub fn gf_series(
    model: &Model,
    init: &InitialState,
    t_grid: &[f64],
    policy: NStepsPolicy,
    shots: u64,
    seed: u64,
) -> Result<GfSeries> {
    check_grid(t_grid)?;
    check_register(model, init)?;
    let per_member = shots_per_member(shots, init.len())?;
    let chunks: Vec<(usize, usize)> = (0..t_grid.len())
        .step_by(CHUNK)
        .flat_map(|start| {
            let end = (start + CHUNK).min(t_grid.len());
            (0..init.len()).map(move |m| (start * init.len() + m, end))
        })
        .collect();
    // biases[member][k]
    let results: Vec<Vec<[f64; 2]>> = chunks
        .par_iter()
        .map(|&(key, end)| {
            let (start, member) = (key / init.len(), key % init.len());
            sweep(model, &init.members()[member], &t_grid[start..end], policy)
        })
        .collect::<Result<_>>()?;
    let mut exact = vec![vec![[0.0; 2]; init.len()]; t_grid.len()];
    for (&(key, _), res) in chunks.iter().zip(results) {
        let (start, member) = (key / init.len(), key % init.len());
        for (j, b) in res.into_iter().enumerate() {
            exact[start + j][member] = b;
        }
    }
    let points: Vec<GfPoint> = exact
        .par_iter()
        .enumerate()
        .map(|(k, b)| combine(init, b, per_member, rng::derive(seed, &[k as u64])))
        .collect::<Result<_>>()?;
    Ok(GfSeries {
        t: t_grid.to_vec(),
        re: points.iter().map(|p| p.re).collect(),
        im: points.iter().map(|p| p.im).collect(),
        re_err: points.iter().map(|p| p.re_err).collect(),
        im_err: points.iter().map(|p| p.im_err).collect(),
        shots: points.first().map_or(0, |p| p.shots),
        route: if shots == 0 { Route::Statevector } else { Route::Sampled },
        model: model.fingerprint(),
        seed,
    })
}

/// Exact ancilla biases along a contiguous run of grid points for one member.
fn sweep(model: &Model, member: &StateVector, ts: &[f64], policy: NStepsPolicy) -> Result<Vec<[f64; 2]>> {
    let (start_state, anc) = prepared(member)?;
    let mut state = start_state.clone();
    let mut done = 0usize;
    let mut current: Option<Circuit> = None;
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        if t == 0.0 {
            out.push(biases(&start_state, anc)?);
            continue;
        }
        let n = policy.n_steps(t);
        let dt = t / n as f64;
        let reuse = match &current {
            Some(step) => (step.dt() - dt).abs() <= 1e-13 * dt && n >= done,
            None => false,
        };
        if !reuse {
            current = Some(trotter_step(model, dt)?);
            state = start_state.clone();
            done = 0;
        }
        let step = current.as_ref().expect("set above");
        for _ in done..n {
            step.apply_controlled(&mut state, anc)?;
        }
        done = n;
        out.push(biases(&state, anc)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::build_dense;
    use crate::models::{HubbardModel, PairingModel};

    fn two_level() -> (Model, InitialState, DenseHamiltonian) {
        let model = Model::Pairing(PairingModel::uniform(2, 1, 1.0, 1.0).unwrap());
        let init = model.default_initial_state().unwrap();
        let d = build_dense(&model.to_qubits()).unwrap();
        (model, init, d)
    }

    #[test]
    fn exact_route_basics() {
        let (model, init, d) = two_level();
        let grid = [0.0, 0.3, -0.3, 1.1, -1.1];
        let s = gf_exact(&d, &init, &grid, &model.fingerprint());
        assert_eq!((s.re[0], s.im[0]), (1.0, 0.0));
        for k in [1, 3] {
            assert!((s.re[k] - s.re[k + 1]).abs() < 1e-12);
            assert!((s.im[k] + s.im[k + 1]).abs() < 1e-12);
        }
        s.validate().unwrap();
    }

    #[test]
    fn exact_route_two_level_closed_form() {
        let (model, init, d) = two_level();
        let r2 = 2f64.sqrt();
        // weight of the lower eigenvector of [[2,-1],[-1,4]] on the first basis state
        let w0 = 1.0 / (1.0 + (r2 - 1.0).powi(2));
        let grid: Vec<f64> = (0..20).map(|k| k as f64 * 0.37).collect();
        let s = gf_exact(&d, &init, &grid, &model.fingerprint());
        for (k, &t) in grid.iter().enumerate() {
            let want = C64::from_polar(w0, -(3.0 - r2) * t) + C64::from_polar(1.0 - w0, -(3.0 + r2) * t);
            assert!((s.value(k) - want).norm() < 1e-12);
        }
    }

    #[test]
    fn eigenstate_has_unit_modulus() {
        let (_, _, d) = two_level();
        let phi = d.eigenvector(1);
        let init = InitialState::pure(phi);
        let s = gf_exact(&d, &init, &[0.0, 0.5, 2.0, 9.0], "x");
        for k in 0..4 {
            assert!((s.value(k).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hadamard_at_zero_time() {
        let (model, init, _) = two_level();
        let p = gf_hadamard(&model, &init, 0.0, 1, 0, 1).unwrap();
        assert!((p.re - 1.0).abs() < 1e-15 && p.im.abs() < 1e-15);
        assert_eq!((p.re_err, p.im_err, p.shots), (0.0, 0.0, 0));
    }

    #[test]
    fn hadamard_matches_exact_with_fine_steps() {
        let (model, init, d) = two_level();
        for &t in &[0.4, 1.3] {
            let p = gf_hadamard(&model, &init, t, 10_000, 0, 0).unwrap();
            let want = gf_exact(&d, &init, &[t], "").value(0);
            assert!((c(p.re, p.im) - want).norm() < 1e-4, "t={t}");
        }
    }

    #[test]
    fn im_sign_checked_on_eigenstate() {
        let (model, _, d) = two_level();
        let a = 1;
        let init = InitialState::pure(d.eigenvector(a));
        let t = 0.9;
        let p = gf_hadamard(&model, &init, t, 20_000, 0, 0).unwrap();
        let want = C64::from_polar(1.0, -t * d.energies()[a]);
        assert!((p.im - want.im).abs() < 1e-3);
        assert!((p.re - want.re).abs() < 1e-3);
    }

    #[test]
    fn series_reuse_matches_pointwise() {
        let (model, init, _) = two_level();
        let policy = NStepsPolicy::ReferenceStep(0.01);
        let grid = uniform_grid(0.05, 40);
        let s = gf_series(&model, &init, &grid, policy, 0, 0).unwrap();
        assert_eq!(s.route, Route::Statevector);
        for k in [1, 17, 39] {
            let p = gf_hadamard(&model, &init, grid[k], policy.n_steps(grid[k]), 0, 0).unwrap();
            assert!((p.re - s.re[k]).abs() < 1e-11);
            assert!((p.im - s.im[k]).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_grid_is_constant() {
        let (model, init, _) = two_level();
        let s = gf_series(&model, &init, &[0.0; 5], NStepsPolicy::Fixed(1), 0, 0).unwrap();
        assert!(s.re.iter().all(|&r| r == 1.0));
        assert!(s.im.iter().all(|&i| i == 0.0));
    }

    #[test]
    fn sampled_series_is_deterministic_and_consistent() {
        let model = Model::Hubbard(HubbardModel::new(2, 1.0, 1.0, 1, 1).unwrap());
        let init = model.default_initial_state().unwrap();
        assert_eq!(init.len(), 2);
        let grid = uniform_grid(0.1, 10);
        let policy = NStepsPolicy::reference_for(&model);
        let a = gf_series(&model, &init, &grid, policy, 1001, 9).unwrap();
        let b = gf_series(&model, &init, &grid, policy, 1001, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shots, 1000);
        assert_eq!(a.route, Route::Sampled);
        let c_ = gf_series(&model, &init, &grid, policy, 1001, 10).unwrap();
        assert_ne!(a.re, c_.re);
        a.validate().unwrap();
    }

    #[test]
    fn reported_error_matches_spread() {
        let (model, init, _) = two_level();
        let shots = 2000;
        let est: Vec<GfPoint> = (0..100)
            .map(|s| gf_hadamard(&model, &init, 0.8, 20, shots, s).unwrap())
            .collect();
        for pick in [|p: &GfPoint| (p.re, p.re_err), |p: &GfPoint| (p.im, p.im_err)] {
            let vals: Vec<f64> = est.iter().map(|p| pick(p).0).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
            let reported = est.iter().map(|p| pick(p).1).sum::<f64>() / est.len() as f64;
            assert!((sd / reported - 1.0).abs() < 0.2, "sd {sd} reported {reported}");
        }
    }

    #[test]
    fn bad_inputs() {
        let (model, init, _) = two_level();
        assert!(gf_series(&model, &init, &[0.1, 0.2], NStepsPolicy::Fixed(1), 0, 0).is_err());
        assert!(gf_series(&model, &init, &[0.0, 0.2, 0.1], NStepsPolicy::Fixed(1), 0, 0).is_err());
        let hub = Model::Hubbard(HubbardModel::new(4, 1.0, 1.0, 2, 2).unwrap());
        let mix = hub.default_initial_state().unwrap();
        assert!(gf_hadamard(&hub, &mix, 0.1, 1, 5, 0).is_err());
        assert!(gf_hadamard(&model, &mix, 0.1, 1, 0, 0).is_err());
    }

    #[test]
    fn ops_list_shape() {
        let (model, _, _) = two_level();
        let ops = hadamard_test_ops(&model, 0.5, 3, Quadrature::Im).unwrap();
        // H, 3 x (2 phases + 1 block), R, H
        assert_eq!(ops.len(), 1 + 9 + 2);
        assert!(ops[1..10].iter().all(|o| o.control == Some(2)));
        assert_eq!(ops[3].touched(), vec![0, 1, 2]);
        assert_eq!(ops[5].touched(), vec![1, 2]);
    }
}
