//! Synthetic readout and depolarizing noise on the Hadamard-test sampling path,
//! with readout inversion and a reference correction calibrated at `t = 0`.
//!
//! Confusion matrices are indexed `[reported][true]`, so columns sum to one.
//! Both corrections act on the ancilla outcome probability as affine maps,
//! which makes error propagation a rescaling.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gf::{hadamard_test_ops, CircuitOp, GfSeries, Quadrature, Route};
use crate::models::{InitialState, Model};
use crate::rng;
use crate::statevector::{sample_binary, GateMatrix, ShotCounts, StateVector};

pub type Confusion = [[f64; 2]; 2];

const IDENTITY: Confusion = [[1.0, 0.0], [0.0, 1.0]];

fn check_stochastic(m: &Confusion) -> Result<()> {
    for col in 0..2 {
        let (a, b) = (m[0][col], m[1][col]);
        if !(a >= 0.0 && b >= 0.0) || (a + b - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "confusion column {col} = ({a}, {b}) is not a probability vector"
            )));
        }
    }
    Ok(())
}

/// `p_reported_0 = m[0][1] + (m[0][0] - m[0][1]) p_true_0`; returns the slope.
fn slope(m: &Confusion) -> f64 {
    m[0][0] - m[0][1]
}

/// Per-qubit readout confusion.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutModel {
    confusion: Vec<Confusion>,
}

impl ReadoutModel {
    pub fn new(confusion: Vec<Confusion>) -> Result<Self> {
        confusion.iter().try_for_each(check_stochastic)?;
        Ok(Self { confusion })
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self {
            confusion: vec![IDENTITY; n_qubits],
        }
    }

    /// Same matrix on every qubit.
    pub fn uniform(n_qubits: usize, m: Confusion) -> Result<Self> {
        Self::new(vec![m; n_qubits])
    }

    pub fn n_qubits(&self) -> usize {
        self.confusion.len()
    }

    pub fn confusion(&self, qubit: usize) -> Result<&Confusion> {
        self.confusion.get(qubit).ok_or(Error::QubitOutOfRange {
            index: qubit,
            n_qubits: self.confusion.len(),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.confusion.iter().all(|m| *m == IDENTITY)
    }

    /// Reported outcome probabilities for true probabilities `p`.
    pub fn apply(&self, qubit: usize, p: [f64; 2]) -> Result<[f64; 2]> {
        let m = self.confusion(qubit)?;
        Ok([m[0][0] * p[0] + m[0][1] * p[1], m[1][0] * p[0] + m[1][1] * p[1]])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub readout: ReadoutModel,
    /// Chance that a touched qubit is replaced by the maximally mixed state after a gate.
    pub p_dep: f64,
}

impl NoiseConfig {
    pub fn new(readout: ReadoutModel, p_dep: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_dep) {
            return Err(Error::InvalidArgument(format!("p_dep = {p_dep} outside [0, 1]")));
        }
        Ok(Self { readout, p_dep })
    }

    pub fn noiseless(n_qubits: usize) -> Self {
        Self {
            readout: ReadoutModel::identity(n_qubits),
            p_dep: 0.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.p_dep == 0.0 && self.readout.is_identity()
    }
}

fn random_pauli(q: usize, which: u8) -> Option<GateMatrix> {
    match which {
        1 => Some(GateMatrix::pauli_x(q)),
        2 => Some(GateMatrix::pauli_y(q)),
        3 => Some(GateMatrix::pauli_z(q)),
        _ => None,
    }
}

/// Runs `ops` on `input` for `shots` trajectories and measures `ancilla` through the readout model.
///
/// Every (gate, touched qubit) pair is an error slot hit with probability `p_dep`;
/// a hit applies one of I, X, Y, Z uniformly. Error-free shots share one
/// statevector and are drawn in a single binomial; the remaining shots get
/// their error patterns by geometric skipping over the slots.
pub fn noisy_sample(
    ops: &[CircuitOp],
    input: &StateVector,
    ancilla: usize,
    shots: u64,
    cfg: &NoiseConfig,
    seed: u64,
) -> Result<ShotCounts> {
    if shots == 0 {
        return Err(Error::ZeroShots);
    }
    let report = |p0: f64| -> Result<f64> { Ok(cfg.readout.apply(ancilla, [p0, 1.0 - p0])?[0]) };
    let mut ideal = input.clone();
    for op in ops {
        op.apply(&mut ideal)?;
    }
    let p0_ideal = report(ideal.prob_zero(ancilla)?)?;
    if cfg.p_dep == 0.0 {
        return sample_binary(p0_ideal, shots, seed);
    }
    // slot s belongs to op slot_op[s] and qubit slot_qubit[s]
    let mut slot_op = Vec::new();
    let mut slot_qubit = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        for q in op.touched() {
            slot_op.push(i);
            slot_qubit.push(q);
        }
    }
    let n_slots = slot_op.len();
    let mut rng = rng::stream(seed);
    let keep = 1.0 - cfg.p_dep;
    let clean_prob = keep.powi(n_slots as i32);
    let clean = Binomial::new(shots, clean_prob.clamp(0.0, 1.0))
        .expect("probability in range")
        .sample(&mut rng);
    let mut n0 = if clean > 0 {
        Binomial::new(clean, p0_ideal.clamp(0.0, 1.0))
            .expect("probability in range")
            .sample(&mut rng)
    } else {
        0
    };
    let skip = (cfg.p_dep < 1.0).then(|| Geometric::new(cfg.p_dep).expect("p_dep in (0, 1)"));
    let mut hits: Vec<(usize, u8)> = Vec::new();
    for _ in clean..shots {
        hits.clear();
        match &skip {
            None => hits.extend((0..n_slots).map(|s| (s, rng.random_range(0..4u8)))),
            Some(geo) => {
                // first hit conditioned on at least one
                let u: f64 = rng.random();
                let first = ((1.0 - u * (1.0 - clean_prob)).ln() / keep.ln()).floor() as usize;
                let mut s = first.min(n_slots - 1);
                while s < n_slots {
                    hits.push((s, rng.random_range(0..4u8)));
                    s = s.saturating_add(1).saturating_add(geo.sample(&mut rng) as usize);
                }
            }
        }
        let mut state = input.clone();
        let mut next = 0;
        for (i, op) in ops.iter().enumerate() {
            op.apply(&mut state)?;
            while next < hits.len() && slot_op[hits[next].0] == i {
                if let Some(g) = random_pauli(slot_qubit[hits[next].0], hits[next].1) {
                    state.apply_gate(&g)?;
                }
                next += 1;
            }
        }
        let p0 = report(state.prob_zero(ancilla)?)?;
        if rng.random::<f64>() < p0 {
            n0 += 1;
        }
    }
    Ok(ShotCounts {
        n0,
        n1: shots - n0,
        seed,
    })
}

/// Hadamard-test series under noise; point `k`, member `m`, quadrature `q` uses
/// seed `derive(seed, [k, m, q])`.
pub fn noisy_series(
    model: &Model,
    init: &InitialState,
    t_grid: &[f64],
    n_steps: usize,
    shots: u64,
    cfg: &NoiseConfig,
    seed: u64,
) -> Result<GfSeries> {
    if shots == 0 {
        return Err(Error::ZeroShots);
    }
    if init.n_qubits() != model.n_qubits() {
        return Err(Error::InvalidInitialState("register size mismatch".into()));
    }
    if cfg.readout.n_qubits() <= model.n_qubits() {
        return Err(Error::InvalidArgument(format!(
            "readout model covers {} qubits, circuit has {}",
            cfg.readout.n_qubits(),
            model.n_qubits() + 1
        )));
    }
    let per_member = shots / init.len() as u64;
    if per_member == 0 {
        return Err(Error::InvalidArgument("fewer shots than mixture members".into()));
    }
    let anc = model.n_qubits();
    let points: Vec<[f64; 4]> = t_grid
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut est = [0.0; 2];
            let mut var = [0.0; 2];
            for (q, quad) in Quadrature::BOTH.into_iter().enumerate() {
                let ops = hadamard_test_ops(model, t, n_steps, quad)?;
                for (m, (w, member)) in init.iter().enumerate() {
                    let (input, _) = member.with_ancilla();
                    let s = rng::derive(seed, &[k as u64, m as u64, q as u64]);
                    let b = noisy_sample(&ops, &input, anc, per_member, cfg, s)?.bias();
                    est[q] += w * b;
                    var[q] += w * w * (1.0 - b * b) / per_member as f64;
                }
            }
            Ok([est[0], est[1], var[0].sqrt(), var[1].sqrt()])
        })
        .collect::<Result<_>>()?;
    Ok(GfSeries {
        t: t_grid.to_vec(),
        re: points.iter().map(|p| p[0]).collect(),
        im: points.iter().map(|p| p[1]).collect(),
        re_err: points.iter().map(|p| p[2]).collect(),
        im_err: points.iter().map(|p| p[3]).collect(),
        shots: per_member * init.len() as u64,
        route: Route::Sampled,
        model: model.fingerprint(),
        seed,
    })
}

/// Corrected outcome probabilities; `clipped` flags a result pulled back into the simplex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corrected {
    pub probs: [f64; 2],
    pub clipped: bool,
}

fn invert_affine(m: &Confusion, p_reported: [f64; 2]) -> Result<Corrected> {
    let s = slope(m);
    if s.abs() <= 1e-6 {
        return Err(Error::Singular(s));
    }
    let total = p_reported[0] + p_reported[1];
    let p0 = (p_reported[0] / total - m[0][1]) / s;
    let clipped = !(0.0..=1.0).contains(&p0);
    let p0 = p0.clamp(0.0, 1.0);
    Ok(Corrected {
        probs: [p0, 1.0 - p0],
        clipped,
    })
}

/// Applies the inverse confusion of `qubit`.
pub fn mitigate_readout(p_reported: [f64; 2], readout: &ReadoutModel, qubit: usize) -> Result<Corrected> {
    invert_affine(readout.confusion(qubit)?, p_reported)
}

/// Map from ideal to observed ancilla probabilities, fixed at `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceCorrection {
    pub matrix: Confusion,
}

impl ReferenceCorrection {
    pub fn identity() -> Self {
        Self { matrix: IDENTITY }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Corrected ancilla bias and a clipping flag.
    pub fn correct_bias(&self, b: f64) -> Result<(f64, bool)> {
        let c = invert_affine(&self.matrix, [0.5 * (1.0 + b), 0.5 * (1.0 - b)])?;
        Ok((c.probs[0] - c.probs[1], c.clipped))
    }
}

/// Calibrates from the `t = 0` biases of both circuits, where `F(0) = 1`.
///
/// The Re circuit ideally reads `p = (1, 0)` and the Im circuit `p = (1/2, 1/2)`;
/// together they fix both columns of one matrix shared by the two quadratures.
pub fn calibrate_reference(re0: f64, im0: f64) -> Result<ReferenceCorrection> {
    let col0 = [0.5 * (1.0 + re0), 0.5 * (1.0 - re0)];
    let half = [0.5 * (1.0 + im0), 0.5 * (1.0 - im0)];
    let col1 = [2.0 * half[0] - col0[0], 2.0 * half[1] - col0[1]];
    let r = ReferenceCorrection {
        matrix: [[col0[0], col1[0]], [col0[1], col1[1]]],
    };
    if r.determinant().abs() <= 1e-6 {
        return Err(Error::Singular(r.determinant()));
    }
    Ok(r)
}

/// Per-point readout inversion on the ancilla, then the optional reference correction.
/// Error bars scale with the inverse slopes of both maps.
pub fn mitigate_series(
    noisy: &GfSeries,
    readout: &ReadoutModel,
    ancilla: usize,
    reference: Option<&ReferenceCorrection>,
) -> Result<GfSeries> {
    let conf = readout.confusion(ancilla)?;
    let mut gain = 1.0 / slope(conf).abs();
    if let Some(r) = reference {
        gain /= slope(&r.matrix).abs();
    }
    let fix = |b: f64| -> Result<f64> {
        let p = invert_affine(conf, [0.5 * (1.0 + b), 0.5 * (1.0 - b)])?;
        let b = p.probs[0] - p.probs[1];
        match reference {
            Some(r) => Ok(r.correct_bias(b)?.0),
            None => Ok(b),
        }
    };
    Ok(GfSeries {
        re: noisy.re.iter().map(|&b| fix(b)).collect::<Result<_>>()?,
        im: noisy.im.iter().map(|&b| fix(b)).collect::<Result<_>>()?,
        re_err: noisy.re_err.iter().map(|e| e * gain).collect(),
        im_err: noisy.im_err.iter().map(|e| e * gain).collect(),
        route: Route::Mitigated,
        ..noisy.clone()
    })
}

/// Readout inversion, reference calibration on the first point (which must be `t = 0`), and correction.
pub fn mitigate_full(
    noisy: &GfSeries,
    readout: &ReadoutModel,
    ancilla: usize,
) -> Result<(GfSeries, ReferenceCorrection)> {
    if noisy.t.first() != Some(&0.0) {
        return Err(Error::InvalidGrid(
            "reference correction needs t = 0 as the first point".into(),
        ));
    }
    let ro = mitigate_series(noisy, readout, ancilla, None)?;
    let reference = calibrate_reference(ro.re[0], ro.im[0])?;
    Ok((mitigate_series(noisy, readout, ancilla, Some(&reference))?, reference))
}

/// Root-mean-square of `|F - F_exact|` over the grid.
pub fn rms_deviation(a: &GfSeries, exact: &GfSeries) -> f64 {
    let n = a.len().min(exact.len());
    let s: f64 = (0..n).map(|k| (a.value(k) - exact.value(k)).norm_sqr()).sum();
    (s / n.max(1) as f64).sqrt()
}
