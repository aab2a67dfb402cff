//! Imaginary-time energy `E(tau)` from cumulants: truncated Taylor series of
//! `dE/dtau`, Padé resummation, and integration to large `tau`.
//!
//! Padé fits work in the dimensionless variable `x = tau * sigma` with
//! `sigma^2 = kappa_2`, where `dE/dtau = sigma^2 g(x)` and
//! `E(tau) = <H> + sigma * int_0^x g`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dense::DenseHamiltonian;
use crate::error::{Error, Result};
use crate::models::InitialState;
use crate::moments::{binomial_row, MomentSet};
use crate::quad;

/// Cumulants `kappa_K` for `K = 0..=L` (`kappa_0 = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantSet {
    pub kappa: Vec<f64>,
}

impl CumulantSet {
    pub fn max_order(&self) -> usize {
        self.kappa.len() - 1
    }
}

/// `kappa_n = <X^n> - sum_{k=1}^{n-1} C(n-1, k-1) kappa_k <X^{n-k}>` on plain moments.
pub fn cumulants_from_raw(moments: &[f64]) -> Vec<f64> {
    let mut kappa = vec![0.0; moments.len()];
    for n in 1..moments.len() {
        let binom = binomial_row(n - 1);
        let mut s = moments[n];
        for k in 1..n {
            s -= binom[k - 1] * kappa[k] * moments[n - k];
        }
        kappa[n] = s;
    }
    kappa
}

/// Cumulants of `H`, computed in the moment set's frame and mapped back.
pub fn cumulants_from_moments(m: &MomentSet) -> CumulantSet {
    let mut kappa = cumulants_from_raw(m.values());
    for (k, v) in kappa.iter_mut().enumerate().skip(1) {
        *v *= m.scale().powi(k as i32);
    }
    if kappa.len() > 1 {
        kappa[1] += m.shift();
    }
    CumulantSet { kappa }
}

/// Coefficient of `tau^K` in `dE/dtau = -sum_K (-tau)^K / K! kappa_{K+2}`, for `K = 0..=M`.
pub fn taylor_dedtau(c: &CumulantSet, m: usize) -> Result<Vec<f64>> {
    if m + 2 > c.max_order() {
        return Err(Error::InsufficientMoments {
            needed: m + 2,
            available: c.max_order(),
        });
    }
    let mut fact = 1.0;
    Ok((0..=m)
        .map(|k| {
            if k > 0 {
                fact *= k as f64;
            }
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            sign * c.kappa[k + 2] / fact
        })
        .collect())
}

/// Rational approximant `a(x) / b(x)` with `b_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PadeApproximant {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    /// Condition number of the denominator system.
    pub cond: f64,
    /// Max residual of the defining linear system.
    pub residual: f64,
}

impl PadeApproximant {
    pub fn orders(&self) -> (usize, usize) {
        (self.num.len() - 1, self.den.len() - 1)
    }

    pub fn zero() -> Self {
        Self {
            num: vec![0.0],
            den: vec![1.0],
            cond: 1.0,
            residual: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        horner(&self.num, x) / horner(&self.den, x)
    }

    /// First `n` Taylor coefficients of `a / b`.
    pub fn taylor(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for k in 0..n {
            let mut s = self.num.get(k).copied().unwrap_or(0.0);
            for j in 1..self.den.len().min(k + 1) {
                s -= self.den[j] * out[k - j];
            }
            out[k] = s;
        }
        out
    }

    /// Real roots of the denominator.
    pub fn real_poles(&self) -> Vec<f64> {
        real_roots(&self.den)
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Real roots of `sum c_k x^k` from the companion matrix.
fn real_roots(c: &[f64]) -> Vec<f64> {
    let mut deg = c.len() - 1;
    while deg > 0 && c[deg] == 0.0 {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let comp = DMatrix::from_fn(deg, deg, |r, k| {
        if r == 0 {
            -c[deg - 1 - k] / lead
        } else if r == k + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut out: Vec<f64> = comp
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * z.re.abs().max(1.0))
        .map(|z| z.re)
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Padé[I, J] matching `coeffs[0..=I+J]`.
pub fn pade_fit(coeffs: &[f64], i: usize, j: usize) -> Result<PadeApproximant> {
    if coeffs.len() < i + j + 1 {
        return Err(Error::InsufficientMoments {
            needed: i + j,
            available: coeffs.len().saturating_sub(1),
        });
    }
    let cf = |k: i64| if k < 0 { 0.0 } else { coeffs[k as usize] };
    let mut den = vec![1.0];
    let mut cond = 1.0;
    let mut residual = 0.0;
    if j > 0 {
        // rows k = I+1..=I+J: sum_{l=1}^{J} b_l c_{k-l} = -c_k
        let a = DMatrix::from_fn(j, j, |r, l| cf((i + 1 + r) as i64 - (l + 1) as i64));
        let rhs = DVector::from_fn(j, |r, _| -cf((i + 1 + r) as i64));
        let sv = a.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if smax == 0.0 {
            // zero series: b = 1 reproduces it
            return Ok(PadeApproximant {
                num: vec![0.0; i + 1],
                den: [vec![1.0], vec![0.0; j]].concat(),
                cond: 1.0,
                residual: 0.0,
            });
        }
        cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if cond > 1e12 {
            return Err(Error::IllConditioned { cond });
        }
        let b = a.clone().lu().solve(&rhs).ok_or(Error::Singular(smin))?;
        residual = (&a * &b - &rhs).amax();
        den.extend(b.iter());
    }
    let num = (0..=i)
        .map(|k| (0..=j.min(k)).map(|l| den[l] * cf((k - l) as i64)).sum())
        .collect();
    Ok(PadeApproximant {
        num,
        den,
        cond,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PadeCriteria {
    /// Upper end of the dimensionless evaluation window `[0, x_max]`.
    pub x_max: f64,
    /// Largest tolerated `|x g(x)|` at `x_max` and positive area of `g` on the window.
    pub tail_tol: f64,
    /// Samples of the evaluation grid.
    pub grid_points: usize,
}

impl Default for PadeCriteria {
    fn default() -> Self {
        Self {
            x_max: 20.0,
            tail_tol: 2e-3,
            grid_points: 4001,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Accepted,
    Rejected(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub i: usize,
    pub j: usize,
    pub cond: f64,
    pub verdict: Verdict,
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pade[{},{}] cond={:.3e}: ", self.i, self.j, self.cond)?;
        match &self.verdict {
            Verdict::Accepted => write!(f, "admissible"),
            Verdict::Rejected(why) => write!(f, "rejected ({why})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PadeSelection {
    pub chosen: PadeApproximant,
    pub candidates: Vec<Candidate>,
}

impl PadeSelection {
    pub fn report(&self) -> String {
        let (i, j) = self.chosen.orders();
        let mut s: String = self.candidates.iter().map(|c| format!("{c}\n")).collect();
        s.push_str(&format!("selected Pade[{i},{j}]\n"));
        s
    }
}

/// Screens `g = a/b` on `[0, x_max]`.
fn screen(p: &PadeApproximant, crit: &PadeCriteria) -> std::result::Result<(), String> {
    if let Some(x) = p.real_poles().into_iter().find(|&x| (0.0..=crit.x_max).contains(&x)) {
        return Err(format!("real pole at x={x:.4}"));
    }
    let n = crit.grid_points.max(2);
    let h = crit.x_max / (n - 1) as f64;
    let mut positive_area = 0.0;
    let mut max_val = f64::MIN;
    for k in 0..n {
        let x = k as f64 * h;
        let v = p.eval(x);
        if !v.is_finite() {
            return Err(format!("non-finite value at x={x:.4}"));
        }
        max_val = max_val.max(v);
        if v > 0.0 {
            positive_area += v * h;
        }
    }
    if positive_area > crit.tail_tol {
        return Err(format!(
            "positive on the window (area {positive_area:.3e}, max {max_val:.3e})"
        ));
    }
    let tail = (crit.x_max * p.eval(crit.x_max)).abs();
    if tail > crit.tail_tol {
        return Err(format!("tail not decaying (|x g| = {tail:.3e} at x={})", crit.x_max));
    }
    Ok(())
}

/// Tries every `(I, J)` with `I + J = M`, `J - I >= 2`; keeps the admissible one with largest `I`,
/// then smallest condition number.
pub fn pade_select(coeffs: &[f64], m: usize, crit: &PadeCriteria) -> Result<PadeSelection> {
    if coeffs.len() < m + 1 {
        return Err(Error::InsufficientMoments {
            needed: m,
            available: coeffs.len().saturating_sub(1),
        });
    }
    if coeffs[..=m].iter().all(|&c| c == 0.0) {
        return Ok(PadeSelection {
            chosen: PadeApproximant::zero(),
            candidates: vec![Candidate {
                i: 0,
                j: 0,
                cond: 1.0,
                verdict: Verdict::Accepted,
            }],
        });
    }
    let mut candidates = Vec::new();
    let mut best: Option<PadeApproximant> = None;
    for i in (0..=m).rev() {
        let j = m - i;
        if j < i + 2 {
            continue;
        }
        let (cond, verdict, fit) = match pade_fit(coeffs, i, j) {
            Ok(p) => {
                let v = match screen(&p, crit) {
                    Ok(()) => Verdict::Accepted,
                    Err(why) => Verdict::Rejected(why),
                };
                (p.cond, v, Some(p))
            }
            Err(Error::IllConditioned { cond }) => {
                (cond, Verdict::Rejected("condition number above 1e12".into()), None)
            }
            Err(e) => (f64::INFINITY, Verdict::Rejected(e.to_string()), None),
        };
        if verdict == Verdict::Accepted {
            let better = match &best {
                None => true,
                Some(b) => {
                    let (bi, _) = b.orders();
                    i > bi || (i == bi && cond < b.cond)
                }
            };
            if better {
                best = fit;
            }
        }
        candidates.push(Candidate { i, j, cond, verdict });
    }
    match best {
        Some(chosen) => Ok(PadeSelection { chosen, candidates }),
        None => Err(Error::NoAdmissiblePade(
            candidates.iter().map(|c| format!("{c}\n")).collect(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyCurve {
    pub tau: Vec<f64>,
    pub energy: Vec<f64>,
    pub dedtau: Vec<f64>,
    /// `E` at the last grid point.
    pub energy_at_end: f64,
    /// `E` at the last grid point plus the integrated tail to infinity.
    pub asymptote: f64,
    /// Magnitude of that tail, a proxy for the extrapolation uncertainty.
    pub tail: f64,
}

impl EnergyCurve {
    fn constant(tau: &[f64], e: f64) -> Self {
        Self {
            tau: tau.to_vec(),
            energy: vec![e; tau.len()],
            dedtau: vec![0.0; tau.len()],
            energy_at_end: e,
            asymptote: e,
            tail: 0.0,
        }
    }
}

/// `E(tau) = <H> + sigma * int_0^{sigma tau} g`, tolerance 1e-10 per segment.
pub fn integrate_energy(p: &PadeApproximant, mean: f64, sigma: f64, tau: &[f64]) -> Result<EnergyCurve> {
    if tau.is_empty() || tau[0] != 0.0 || tau.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidGrid("tau grid must start at 0 and increase".into()));
    }
    let g = |x: f64| p.eval(x);
    let mut energy = Vec::with_capacity(tau.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &t in tau {
        let x = t * sigma;
        acc += quad::integrate(g, prev, x, 1e-10 / sigma.max(1.0))?.0;
        prev = x;
        energy.push(mean + sigma * acc);
    }
    let (tail, _) = quad::integrate_to_infinity(g, prev, 1e-10 / sigma.max(1.0))?;
    if !tail.is_finite() {
        return Err(Error::Integration("divergent tail".into()));
    }
    let end = *energy.last().expect("non-empty grid");
    Ok(EnergyCurve {
        dedtau: tau.iter().map(|&t| sigma * sigma * g(t * sigma)).collect(),
        energy_at_end: end,
        asymptote: end + sigma * tail,
        tail: (sigma * tail).abs(),
        tau: tau.to_vec(),
        energy,
    })
}

/// Exact `E(tau) = sum w E e^{-tau E} / sum w e^{-tau E}` from the eigendecomposition.
pub fn imaginary_time_oracle(dense: &DenseHamiltonian, init: &InitialState, tau: &[f64]) -> EnergyCurve {
    let support: Vec<(f64, f64)> = dense
        .energies()
        .iter()
        .copied()
        .zip(dense.weights(init))
        .filter(|&(_, w)| w > 1e-300)
        .collect();
    let emin = support.iter().map(|s| s.0).fold(f64::MAX, f64::min);
    let mut energy = Vec::with_capacity(tau.len());
    let mut dedtau = Vec::with_capacity(tau.len());
    for &t in tau {
        let (mut z, mut h1, mut h2) = (0.0, 0.0, 0.0);
        for &(e, w) in &support {
            let b = w * (-t * (e - emin)).exp();
            z += b;
            h1 += b * (e - emin);
            h2 += b * (e - emin) * (e - emin);
        }
        let m1 = h1 / z;
        energy.push(emin + m1);
        dedtau.push(-(h2 / z - m1 * m1).max(0.0));
    }
    let end = energy.last().copied().unwrap_or(emin);
    EnergyCurve {
        tau: tau.to_vec(),
        energy,
        dedtau,
        energy_at_end: end,
        asymptote: emin,
        tail: (end - emin).abs(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TExpansion {
    pub cumulants: CumulantSet,
    /// Physical Taylor coefficients of `dE/dtau`.
    pub taylor: Vec<f64>,
    /// `None` when the variance vanishes and no resummation is needed.
    pub selection: Option<PadeSelection>,
    pub sigma: f64,
    pub curve: EnergyCurve,
}

/// Full pipeline from moments to `E(tau)` on `[0, x_max / sigma]`.
pub fn t_expand(m: &MomentSet, order: usize, crit: &PadeCriteria, n_tau: usize) -> Result<TExpansion> {
    m.require(order + 2)?;
    let cumulants = cumulants_from_moments(m);
    let taylor = taylor_dedtau(&cumulants, order)?;
    let var = cumulants.kappa[2];
    let mean = cumulants.kappa[1];
    if var <= 1e-12 * mean.abs().max(1.0).powi(2) {
        let tau = crate::gf::uniform_grid(crit.x_max / n_tau.max(2) as f64, n_tau.max(2));
        return Ok(TExpansion {
            cumulants,
            taylor,
            selection: None,
            sigma: 0.0,
            curve: EnergyCurve::constant(&tau, mean),
        });
    }
    let sigma = var.sqrt();
    let dimensionless: Vec<f64> = taylor
        .iter()
        .enumerate()
        .map(|(k, c)| c / sigma.powi(k as i32 + 2))
        .collect();
    let selection = pade_select(&dimensionless, order, crit)?;
    let tau_max = crit.x_max / sigma;
    let n = n_tau.max(2);
    let tau: Vec<f64> = (0..n).map(|k| tau_max * k as f64 / (n - 1) as f64).collect();
    let curve = integrate_energy(&selection.chosen, mean, sigma, &tau)?;
    Ok(TExpansion {
        cumulants,
        taylor,
        selection: Some(selection),
        sigma,
        curve,
    })
}
