//! Hamiltonian moments `<H^K>` from exact spectra, finite differences of F at
//! t = 0, or a spectral decomposition of F.
//!
//! A [`MomentSet`] stores moments of the rescaled operator `(H - shift) / scale`.
//! Raw moments follow by binomial re-expansion. Centering keeps the Hankel
//! matrices built from high moments well conditioned.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::dense::DenseHamiltonian;
use crate::error::{Error, Result};
use crate::gf::GfSeries;
use crate::models::InitialState;
use crate::statevector::{c, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentRoute {
    Exact,
    Fdm,
    Fourier,
}

impl fmt::Display for MomentRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MomentRoute::Exact => "exact",
            MomentRoute::Fdm => "fdm",
            MomentRoute::Fourier => "fourier",
        })
    }
}

impl FromStr for MomentRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MomentRoute::Exact),
            "fdm" => Ok(MomentRoute::Fdm),
            "fourier" => Ok(MomentRoute::Fourier),
            other => Err(Error::Parse(format!("unknown moment route {other:?}"))),
        }
    }
}

pub(crate) fn binomial_row(k: usize) -> Vec<f64> {
    let mut row = vec![1.0; k + 1];
    for j in 1..k {
        row[j] = row[j - 1] * (k + 1 - j) as f64 / j as f64;
    }
    row
}

/// Moments `mu_K = <((H - shift)/scale)^K>` for `K = 0..=L`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSet {
    values: Vec<f64>,
    errors: Vec<f64>,
    route: MomentRoute,
    shift: f64,
    scale: f64,
    source: String,
}

impl MomentSet {
    pub fn new(
        values: Vec<f64>,
        errors: Vec<f64>,
        route: MomentRoute,
        shift: f64,
        scale: f64,
        source: impl Into<String>,
    ) -> Result<Self> {
        if values.is_empty() || values.len() != errors.len() {
            return Err(Error::InvalidArgument(
                "moment and error columns must be non-empty and equally long".into(),
            ));
        }
        if (values[0] - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "zeroth moment must be 1, got {}",
                values[0]
            )));
        }
        if !(scale > 0.0) || !shift.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "frame needs finite shift and positive scale, got {shift}, {scale}"
            )));
        }
        Ok(Self {
            values,
            errors,
            route,
            shift,
            scale,
            source: source.into(),
        })
    }

    /// Raw moments `<H^K>` in an unshifted, unscaled frame.
    pub fn from_raw(values: Vec<f64>, errors: Vec<f64>, route: MomentRoute, source: impl Into<String>) -> Result<Self> {
        Self::new(values, errors, route, 0.0, 1.0, source)
    }

    pub fn max_order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn route(&self) -> MomentRoute {
        self.route
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Keeps orders `0..=l`.
    pub fn truncated(&self, l: usize) -> Result<Self> {
        self.require(l)?;
        let mut out = self.clone();
        out.values.truncate(l + 1);
        out.errors.truncate(l + 1);
        Ok(out)
    }

    pub fn require(&self, l: usize) -> Result<()> {
        if l > self.max_order() {
            return Err(Error::InsufficientMoments {
                needed: l,
                available: self.max_order(),
            });
        }
        Ok(())
    }

    /// Same moments expressed for `(H - shift)/scale`.
    pub fn reframed(&self, shift: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !shift.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "frame needs finite shift and positive scale, got {shift}, {scale}"
            )));
        }
        // (H - s')/σ' = α + β X with X = (H - s)/σ
        let alpha = (self.shift - shift) / scale;
        let beta = self.scale / scale;
        let mut values = Vec::with_capacity(self.values.len());
        let mut errors = Vec::with_capacity(self.values.len());
        for k in 0..self.values.len() {
            let binom = binomial_row(k);
            let mut v = 0.0;
            let mut e = 0.0;
            for j in 0..=k {
                let w = binom[j] * alpha.powi((k - j) as i32) * beta.powi(j as i32);
                v += w * self.values[j];
                e += w.abs() * self.errors[j];
            }
            values.push(v);
            errors.push(e);
        }
        values[0] = 1.0;
        Ok(Self {
            values,
            errors,
            route: self.route,
            shift,
            scale,
            source: self.source.clone(),
        })
    }

    pub fn raw(&self) -> Vec<f64> {
        self.reframed(0.0, 1.0).expect("unit frame is valid").values
    }

    pub fn raw_errors(&self) -> Vec<f64> {
        self.reframed(0.0, 1.0).expect("unit frame is valid").errors
    }

    /// `<H>`.
    pub fn mean(&self) -> f64 {
        self.shift + self.scale * self.values.get(1).copied().unwrap_or(0.0)
    }

    /// `<H^2> - <H>^2`.
    pub fn variance(&self) -> f64 {
        match self.values.len() {
            0..=2 => 0.0,
            _ => self.scale * self.scale * (self.values[2] - self.values[1] * self.values[1]),
        }
    }

    /// Frame centered on `<H>` and scaled by the standard deviation (or 1 if it vanishes).
    pub fn natural_frame(&self) -> Self {
        let var = self.variance();
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        self.reframed(self.mean(), sd).expect("positive scale")
    }

    /// Smallest eigenvalue of the largest Hankel matrix `O_LK = mu_{L+K}` divided by its largest.
    pub fn hankel_min_ratio(&self) -> f64 {
        let n = self.values.len().div_ceil(2);
        let o = DMatrix::from_fn(n, n, |r, k| self.values[r + k]);
        let eig = SymmetricEigen::new(o);
        let max = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
        let min = eig.eigenvalues.iter().copied().fold(f64::MAX, f64::min);
        min / max.abs()
    }
}

/// `<H^K> = sum_a w_a E_a^K`, stored centered on `<H>` and scaled by the standard deviation.
pub fn moments_exact(dense: &DenseHamiltonian, init: &InitialState, l: usize) -> MomentSet {
    let w = dense.weights(init);
    let e = dense.energies();
    let mean: f64 = e.iter().zip(&w).map(|(e, w)| e * w).sum();
    let var: f64 = e.iter().zip(&w).map(|(e, w)| w * (e - mean).powi(2)).sum();
    let scale = if var > 1e-300 { var.sqrt() } else { 1.0 };
    let values = (0..=l)
        .map(|k| {
            if k == 0 {
                return 1.0;
            }
            e.iter()
                .zip(&w)
                .map(|(e, w)| w * ((e - mean) / scale).powi(k as i32))
                .sum()
        })
        .collect();
    MomentSet::new(values, vec![0.0; l + 1], MomentRoute::Exact, mean, scale, "dense").expect("weights sum to one")
}

/// Fornberg's algorithm: weights `c[k][j]` for the `k`-th derivative at `z` from samples at `x[j]`.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cw = vec![vec![0.0; n]; m + 1];
    if n == 0 {
        return cw;
    }
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    cw[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    cw[k][i] = c1 * (k as f64 * cw[k - 1][i - 1] - c5 * cw[k][i - 1]) / c2;
                }
                cw[0][i] = -c1 * c5 * cw[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                cw[k][j] = (c4 * cw[k][j] - k as f64 * cw[k - 1][j]) / c3;
            }
            cw[0][j] = c4 * cw[0][j] / c3;
        }
        c1 = c2;
    }
    cw
}

/// Central stencil for one derivative order on integer nodes `-P..=P` (unit step).
#[derive(Clone, Debug, PartialEq)]
pub struct FdmStencil {
    pub order: usize,
    pub accuracy: usize,
    /// `coeffs[j + P]` multiplies the sample at `j`.
    pub coeffs: Vec<f64>,
}

impl FdmStencil {
    /// `P = floor((K+1)/2) - 1 + a/2` gives accuracy `a` (even) for derivative `K`.
    pub fn central(order: usize, accuracy: usize) -> Result<Self> {
        if accuracy == 0 || accuracy % 2 == 1 {
            return Err(Error::InvalidArgument(format!(
                "central stencils need an even accuracy order, got {accuracy}"
            )));
        }
        let half = if order == 0 {
            0
        } else {
            order.div_ceil(2) - 1 + accuracy / 2
        };
        let nodes: Vec<f64> = (-(half as i64)..=half as i64).map(|j| j as f64).collect();
        let w = fornberg_weights(0.0, &nodes, order);
        Ok(Self {
            order,
            accuracy,
            coeffs: w[order].clone(),
        })
    }

    pub fn half_width(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn abs_sum(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    /// `sum_j c_j F(j s dt)` using `F(-t) = conj F(t)`; `None` if the series is too short.
    fn apply(&self, series: &GfSeries, stride: usize) -> Option<C64> {
        let p = self.half_width();
        if p * stride >= series.len() {
            return None;
        }
        let mut acc = c(0.0, 0.0);
        for (idx, &cj) in self.coeffs.iter().enumerate() {
            let j = idx as i64 - p as i64;
            let f = series.value(j.unsigned_abs() as usize * stride);
            acc += cj * if j < 0 { f.conj() } else { f };
        }
        Some(acc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdmOptions {
    /// Even accuracy order of the central stencils.
    pub accuracy: usize,
    /// Fixed stride in grid steps; `None` tunes it per order.
    pub stride: Option<usize>,
    /// Largest stride tried while tuning.
    pub max_stride: usize,
}

impl Default for FdmOptions {
    fn default() -> Self {
        Self {
            accuracy: 8,
            stride: None,
            max_stride: 4096,
        }
    }
}

/// Step chosen for one derivative order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdmChoice {
    pub order: usize,
    pub h: f64,
    pub truncation: f64,
    pub noise: f64,
}

/// `<H^K> = Re(i^K F^(K)(0))` from central differences of a uniform series starting at 0.
///
/// Per order the stride `s` (step `h = s dt`) minimizes
/// `|D_a - D_{a+2}| + noise * sum|c| / h^K`, where `D_a` is the estimate of
/// accuracy `a` and `noise` the largest per-sample standard error, floored
/// at double-precision rounding. The scan over increasing strides ends once
/// the cost exceeds its running minimum by 1e3.
pub fn moments_fdm(series: &GfSeries, l: usize, opts: &FdmOptions) -> Result<(MomentSet, Vec<FdmChoice>)> {
    let dt = require_uniform_from_zero(series)?;
    let noise_floor = f64::EPSILON;
    let noise = (0..series.len())
        .map(|k| series.re_err[k].hypot(series.im_err[k]))
        .fold(noise_floor, f64::max);
    let results: Vec<(f64, f64, FdmChoice)> = (0..=l)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                let choice = FdmChoice {
                    order: 0,
                    h: 0.0,
                    truncation: 0.0,
                    noise,
                };
                return Ok((series.re[0], series.re_err[0], choice));
            }
            let lo = FdmStencil::central(k, opts.accuracy)?;
            let hi = FdmStencil::central(k, opts.accuracy + 2)?;
            let ik = C64::i().powi(k as i32);
            let strides: Vec<usize> = match opts.stride {
                Some(s) => vec![s.max(1)],
                None => (1..=opts.max_stride).collect(),
            };
            let mut best: Option<(f64, f64, FdmChoice)> = None;
            for s in strides {
                let (Some(a), Some(b)) = (lo.apply(series, s), hi.apply(series, s)) else {
                    break;
                };
                let h = s as f64 * dt;
                let hk = h.powi(k as i32);
                let est = (ik * b / hk).re;
                let trunc = ((ik * (a - b)) / hk).re.abs();
                let amp = noise * hi.abs_sum() / hk;
                let total = trunc + amp;
                if !total.is_finite() {
                    continue;
                }
                // past the first minimum; at very large h both estimates collapse and agree spuriously
                if best.as_ref().is_some_and(|(_, e, _)| total > 1e3 * *e) {
                    break;
                }
                if best.as_ref().is_none_or(|(_, e, _)| total < *e) {
                    best = Some((
                        est,
                        total,
                        FdmChoice {
                            order: k,
                            h,
                            truncation: trunc,
                            noise: amp,
                        },
                    ));
                }
            }
            best.ok_or_else(|| {
                Error::InvalidGrid(format!(
                    "{} points cannot hold the order-{k} stencil of half-width {}",
                    series.len(),
                    hi.half_width()
                ))
            })
        })
        .collect::<Result<_>>()?;
    let values = results.iter().map(|r| r.0).collect::<Vec<_>>();
    let errors = results.iter().map(|r| r.1).collect();
    let choices = results.into_iter().map(|r| r.2).collect();
    let mut values = values;
    values[0] = 1.0;
    let set = MomentSet::from_raw(values, errors, MomentRoute::Fdm, series.model.clone())?;
    Ok((set, choices))
}

fn require_uniform_from_zero(series: &GfSeries) -> Result<f64> {
    if series.is_empty() || series.t[0] != 0.0 {
        return Err(Error::InvalidGrid("series must start at t = 0".into()));
    }
    series
        .uniform_step(1e-9)
        .ok_or_else(|| Error::InvalidGrid("series grid is not uniform".into()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    Rectangular,
    Hann,
    /// Kaiser window with shape parameter beta.
    Kaiser(f64),
}

impl Window {
    /// Weight at offset `n` of a symmetric window spanning `-half..=half`.
    fn weight(&self, n: i64, half: usize) -> f64 {
        let x = n as f64 / (half as f64 + 1.0);
        match *self {
            Window::Rectangular => 1.0,
            Window::Hann => 0.5 * (1.0 + (std::f64::consts::PI * x).cos()),
            Window::Kaiser(beta) => bessel_i0(beta * (1.0 - x * x).max(0.0).sqrt()) / bessel_i0(beta),
        }
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralOptions {
    /// Operator-norm bound; when given, grids with `dt >= pi / e_bound` are rejected.
    pub e_bound: Option<f64>,
    pub window: Window,
    /// Peaks below this fraction of the largest spectral power are ignored.
    pub threshold: f64,
    /// Zero-padding factor of the transform.
    pub padding: usize,
    /// Least-squares refinement of energies and weights on the raw samples.
    pub refine: bool,
    /// Residual re-detection rounds after the first refinement.
    pub rounds: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            e_bound: None,
            window: Window::Kaiser(30.0),
            threshold: 1e-16,
            padding: 4,
            refine: true,
            rounds: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub energy: f64,
    pub weight: f64,
    pub energy_err: f64,
    pub weight_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDecomposition {
    /// Ascending in energy.
    pub peaks: Vec<Peak>,
    /// Residual power fraction `sum|F - model|^2 / sum|F|^2` over the samples.
    pub residual: f64,
    /// Sum of weights before any renormalization.
    pub raw_weight_sum: f64,
    pub source: String,
}

impl SpectralDecomposition {
    pub fn weight_sum(&self) -> f64 {
        self.peaks.iter().map(|p| p.weight).sum()
    }
}

/// Grid satisfying `dt <= pi / (2 e_bound)` and a transform bin width `pi / t_max <= gap`.
pub fn fourier_grid(e_bound: f64, gap_target: f64) -> Result<(f64, usize)> {
    if !(e_bound > 0.0) || !(gap_target > 0.0) {
        return Err(Error::InvalidArgument(
            "energy bound and gap target must be positive".into(),
        ));
    }
    let dt = std::f64::consts::PI / (2.0 * e_bound);
    let t_max = std::f64::consts::PI / gap_target;
    Ok((dt, (t_max / dt).ceil() as usize + 1))
}

/// Locates spectral lines of F and their weights.
pub fn spectral_peaks(series: &GfSeries, opts: &SpectralOptions) -> Result<SpectralDecomposition> {
    let dt = require_uniform_from_zero(series)?;
    if let Some(bound) = opts.e_bound {
        if dt >= std::f64::consts::PI / bound {
            return Err(Error::Aliasing(format!(
                "step {dt} cannot resolve energies up to {bound} (needs dt < {})",
                std::f64::consts::PI / bound
            )));
        }
    }
    if series.len() < 3 {
        return Err(Error::InvalidGrid("need at least 3 samples".into()));
    }
    let samples: Vec<C64> = (0..series.len()).map(|k| series.value(k)).collect();
    let total_power: f64 = samples.iter().map(|v| v.norm_sqr()).sum();
    let spectrum = Spectrum::new(&samples, dt, opts);
    let mut energies = spectrum.peaks(spectrum.max_power * opts.threshold);
    if energies.is_empty() {
        return Ok(SpectralDecomposition {
            peaks: Vec::new(),
            residual: 1.0,
            raw_weight_sum: 0.0,
            source: series.model.clone(),
        });
    }
    let lobe = spectrum.lobe_half_width();
    let fit = if opts.refine {
        let mut fit = Fit::new(&samples, dt, &energies)?;
        fit.refine()?;
        for _ in 0..opts.rounds {
            let residual: Vec<C64> = fit.residual();
            let res_spec = Spectrum::new(&residual, dt, opts);
            let extra: Vec<f64> = res_spec
                .peaks(spectrum.max_power * opts.threshold)
                .into_iter()
                .filter(|e| fit.energies.iter().all(|f| (e - f).abs() > 0.25 * lobe))
                .collect();
            if extra.is_empty() {
                break;
            }
            energies = fit.energies.clone();
            energies.extend(extra);
            fit = Fit::new(&samples, dt, &energies)?;
            fit.refine()?;
        }
        fit.merge(0.01 * lobe)?;
        fit
    } else {
        let amps = energies.iter().map(|&e| spectrum.amplitude_at(&samples, e)).collect();
        Fit::from_parts(&samples, dt, energies, amps)
    };
    let residual_power: f64 = fit.residual().iter().map(|v| v.norm_sqr()).sum();
    let errs = fit.uncertainties();
    let mut peaks: Vec<Peak> = fit
        .energies
        .iter()
        .zip(&fit.amps)
        .zip(errs)
        .map(|((&energy, a), (ee, we))| Peak {
            energy,
            weight: a.re.max(0.0),
            energy_err: ee,
            weight_err: we,
        })
        .filter(|p| p.weight > 0.0)
        .collect();
    peaks.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    let sum: f64 = peaks.iter().map(|p| p.weight).sum();
    if (0.98..=1.02).contains(&sum) {
        for p in &mut peaks {
            p.weight /= sum;
            p.weight_err /= sum;
        }
    }
    Ok(SpectralDecomposition {
        peaks,
        residual: residual_power / total_power.max(f64::MIN_POSITIVE),
        raw_weight_sum: sum,
        source: series.model.clone(),
    })
}

/// Windowed, zero-padded transform of the conjugate-extended samples.
struct Spectrum {
    power: Vec<f64>,
    /// Frequency step of the padded transform.
    domega: f64,
    max_power: f64,
    n_half: usize,
    window: Window,
    beta_width: f64,
    dt: f64,
}

impl Spectrum {
    fn new(samples: &[C64], dt: f64, opts: &SpectralOptions) -> Self {
        let half = samples.len() - 1;
        let span = 2 * half + 1;
        let len = span * opts.padding.max(1);
        let mut buf = vec![c(0.0, 0.0); len];
        for n in -(half as i64)..=half as i64 {
            let f = samples[n.unsigned_abs() as usize];
            let f = if n < 0 { f.conj() } else { f };
            buf[n.rem_euclid(len as i64) as usize] = f * opts.window.weight(n, half);
        }
        // inverse transform: sum_n x_n exp(+i w n dt) peaks at w = E for F ~ exp(-i E t)
        FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
        let power: Vec<f64> = buf.iter().map(|v| v.norm_sqr()).collect();
        let max_power = power.iter().copied().fold(0.0, f64::max);
        let beta_width = match opts.window {
            Window::Rectangular => 1.0,
            Window::Hann => 2.0,
            Window::Kaiser(beta) => (1.0 + (beta / std::f64::consts::PI).powi(2)).sqrt(),
        };
        Self {
            domega: 2.0 * std::f64::consts::PI / (len as f64 * dt),
            power,
            max_power,
            n_half: half,
            window: opts.window,
            beta_width,
            dt,
        }
    }

    /// Main-lobe half width in energy units.
    fn lobe_half_width(&self) -> f64 {
        self.beta_width * 2.0 * std::f64::consts::PI / ((2 * self.n_half + 1) as f64 * self.dt)
    }

    fn frequency(&self, k: usize) -> f64 {
        let len = self.power.len();
        let signed = if k >= len.div_ceil(2) {
            k as f64 - len as f64
        } else {
            k as f64
        };
        signed * self.domega
    }

    /// Local maxima above `floor`, refined by a parabola through the log-power.
    fn peaks(&self, floor: f64) -> Vec<f64> {
        let len = self.power.len();
        let mut out = Vec::new();
        for k in 0..len {
            let p0 = self.power[k];
            let pm = self.power[(k + len - 1) % len];
            let pp = self.power[(k + 1) % len];
            if p0 <= floor || p0 < pm || p0 <= pp {
                continue;
            }
            let (ym, y0, yp) = (pm.max(1e-300).ln(), p0.ln(), pp.max(1e-300).ln());
            let denom = ym - 2.0 * y0 + yp;
            let delta = if denom < 0.0 { 0.5 * (ym - yp) / denom } else { 0.0 };
            out.push(self.frequency(k) + delta.clamp(-0.5, 0.5) * self.domega);
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Windowed transform evaluated at energy `e`, normalized by the window sum.
    fn amplitude_at(&self, samples: &[C64], e: f64) -> C64 {
        let half = self.n_half as i64;
        let mut acc = c(0.0, 0.0);
        let mut wsum = 0.0;
        for n in -half..=half {
            let f = samples[n.unsigned_abs() as usize];
            let f = if n < 0 { f.conj() } else { f };
            let w = self.window.weight(n, self.n_half);
            acc += f * w * C64::from_polar(1.0, e * n as f64 * self.dt);
            wsum += w;
        }
        acc / wsum
    }
}

/// Nonlinear least-squares model `F(t_n) ~ sum_a A_a exp(-i E_a t_n)` on the raw samples.
struct Fit<'a> {
    samples: &'a [C64],
    dt: f64,
    energies: Vec<f64>,
    amps: Vec<C64>,
    /// Inverse normal matrix of the last accepted step, for uncertainties.
    covariance: Option<DMatrix<f64>>,
}

impl<'a> Fit<'a> {
    fn from_parts(samples: &'a [C64], dt: f64, energies: Vec<f64>, amps: Vec<C64>) -> Self {
        Self {
            samples,
            dt,
            energies,
            amps,
            covariance: None,
        }
    }

    /// Starts from `energies` with amplitudes solved linearly.
    fn new(samples: &'a [C64], dt: f64, energies: &[f64]) -> Result<Self> {
        let mut fit = Self::from_parts(samples, dt, energies.to_vec(), vec![c(0.0, 0.0); energies.len()]);
        fit.solve_amplitudes()?;
        Ok(fit)
    }

    fn n(&self) -> usize {
        self.energies.len()
    }

    /// `sum_n t_n^m exp(i (E_a - E_b) t_n)` for m = 0, 1, 2.
    fn gram(&self) -> [DMatrix<C64>; 3] {
        let p = self.n();
        let dt = self.dt;
        let len = self.samples.len();
        // G_m(a, b) = conj G_m(b, a), so only b >= a is summed
        let rows: Vec<Vec<[C64; 3]>> = (0..p)
            .into_par_iter()
            .map(|a| {
                (a..p)
                    .map(|b| {
                        let w = (self.energies[a] - self.energies[b]) * dt;
                        let mut s = [c(0.0, 0.0); 3];
                        let step = C64::from_polar(1.0, w);
                        let mut z = c(1.0, 0.0);
                        for n in 0..len {
                            if n % 512 == 0 {
                                z = C64::from_polar(1.0, w * n as f64);
                            }
                            let t = n as f64 * dt;
                            s[0] += z;
                            s[1] += z * t;
                            s[2] += z * (t * t);
                            z *= step;
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        let pick = |m: usize| {
            DMatrix::from_fn(p, p, |a, b| {
                if b >= a {
                    rows[a][b - a][m]
                } else {
                    rows[b][a - b][m].conj()
                }
            })
        };
        [pick(0), pick(1), pick(2)]
    }

    fn residual(&self) -> Vec<C64> {
        (0..self.samples.len())
            .into_par_iter()
            .map(|n| {
                let t = n as f64 * self.dt;
                let model: C64 = self
                    .energies
                    .iter()
                    .zip(&self.amps)
                    .map(|(&e, a)| a * C64::from_polar(1.0, -e * t))
                    .sum();
                self.samples[n] - model
            })
            .collect()
    }

    fn cost(&self) -> f64 {
        self.residual().iter().map(|v| v.norm_sqr()).sum()
    }

    /// `sum_n t_n^m exp(i E_a t_n) r_n` for m = 0, 1.
    fn projections(&self, r: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let out: Vec<(C64, C64)> = self
            .energies
            .par_iter()
            .map(|&e| {
                let mut s0 = c(0.0, 0.0);
                let mut s1 = c(0.0, 0.0);
                for (n, rn) in r.iter().enumerate() {
                    let t = n as f64 * self.dt;
                    let z = C64::from_polar(1.0, e * t) * rn;
                    s0 += z;
                    s1 += z * t;
                }
                (s0, s1)
            })
            .collect();
        out.into_iter().unzip()
    }

    fn solve_amplitudes(&mut self) -> Result<()> {
        let [g0, _, _] = self.gram();
        let (proj, _) = self.projections(self.samples);
        let rhs = DVector::from_vec(proj);
        let sol = g0
            .clone()
            .lu()
            .solve(&rhs)
            .or_else(|| g0.pseudo_inverse(1e-12).ok().map(|pinv| pinv * &rhs))
            .ok_or(Error::Singular(0.0))?;
        self.amps = sol.iter().copied().collect();
        Ok(())
    }

    /// Real normal equations in `(E_a, Re A_a, Im A_a)` and the gradient side.
    fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.n();
        let [g0, g1, g2] = self.gram();
        let r = self.residual();
        let (r0, r1) = self.projections(&r);
        let i = C64::i();
        let mut a = DMatrix::<f64>::zeros(3 * p, 3 * p);
        let mut g = DVector::<f64>::zeros(3 * p);
        // column blocks: u_a = e_a (Re A), v_a = i e_a (Im A), d_a = -i t A_a e_a (E)
        for x in 0..p {
            for y in 0..p {
                let (ax, ay) = (self.amps[x], self.amps[y]);
                let uu = g0[(x, y)];
                let uv = i * g0[(x, y)];
                let vu = -i * g0[(x, y)];
                let ud = -i * ay * g1[(x, y)];
                let vd = -ay * g1[(x, y)];
                let du = i * ax.conj() * g1[(x, y)];
                let dv = -ax.conj() * g1[(x, y)];
                let dd = ax.conj() * ay * g2[(x, y)];
                let (ux, vx, dx) = (3 * x + 1, 3 * x + 2, 3 * x);
                let (uy, vy, dy) = (3 * y + 1, 3 * y + 2, 3 * y);
                a[(ux, uy)] = uu.re;
                a[(ux, vy)] = uv.re;
                a[(vx, uy)] = vu.re;
                a[(vx, vy)] = uu.re;
                a[(ux, dy)] = ud.re;
                a[(vx, dy)] = vd.re;
                a[(dx, uy)] = du.re;
                a[(dx, vy)] = dv.re;
                a[(dx, dy)] = dd.re;
            }
            g[3 * x + 1] = r0[x].re;
            g[3 * x + 2] = (-i * r0[x]).re;
            g[3 * x] = (i * self.amps[x].conj() * r1[x]).re;
        }
        (a, g)
    }

    /// Levenberg-Marquardt iterations.
    fn refine(&mut self) -> Result<()> {
        let mut cost = self.cost();
        let mut lambda = 1e-6;
        for _ in 0..60 {
            let (a, g) = self.normal_equations();
            let mut improved = false;
            for _ in 0..12 {
                let mut damped = a.clone();
                for k in 0..damped.nrows() {
                    damped[(k, k)] += lambda * a[(k, k)].max(1e-300);
                }
                let Some(step) = damped.clone().cholesky().map(|ch| ch.solve(&g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let saved = (self.energies.clone(), self.amps.clone());
                for x in 0..self.n() {
                    self.energies[x] += step[3 * x];
                    self.amps[x] += c(step[3 * x + 1], step[3 * x + 2]);
                }
                let new_cost = self.cost();
                if new_cost.is_finite() && new_cost <= cost {
                    let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    cost = new_cost;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = rel > 1e-12;
                    self.covariance = a.clone().cholesky().map(|ch| ch.inverse());
                    break;
                }
                (self.energies, self.amps) = saved;
                lambda *= 4.0;
            }
            if !improved {
                break;
            }
        }
        if self.covariance.is_none() {
            let (a, _) = self.normal_equations();
            self.covariance = a.cholesky().map(|ch| ch.inverse());
        }
        Ok(())
    }

    /// Joins lines closer than `tol`, then re-solves the amplitudes.
    fn merge(&mut self, tol: f64) -> Result<()> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| self.energies[a].total_cmp(&self.energies[b]));
        let mut merged: Vec<(f64, C64)> = Vec::new();
        for k in order {
            let (e, a) = (self.energies[k], self.amps[k]);
            match merged.last_mut() {
                Some((le, la)) if (e - *le).abs() < tol => {
                    let (wl, wa) = (la.norm(), a.norm());
                    if wl + wa > 0.0 {
                        *le = (*le * wl + e * wa) / (wl + wa);
                    }
                    *la += a;
                }
                _ => merged.push((e, a)),
            }
        }
        if merged.len() != self.n() {
            self.energies = merged.iter().map(|m| m.0).collect();
            self.solve_amplitudes()?;
            self.covariance = None;
            let (a, _) = self.normal_equations();
            self.covariance = a.cholesky().map(|ch| ch.inverse());
        }
        Ok(())
    }

    /// One-sigma `(energy, weight)` errors from the residual variance and the normal matrix.
    fn uncertainties(&self) -> Vec<(f64, f64)> {
        let p = self.n();
        let dof = (2 * self.samples.len()).saturating_sub(3 * p).max(1);
        let s2 = self.cost() / dof as f64;
        match &self.covariance {
            Some(cov) if cov.nrows() == 3 * p => (0..p)
                .map(|x| {
                    (
                        (s2 * cov[(3 * x, 3 * x)]).max(0.0).sqrt(),
                        (s2 * cov[(3 * x + 1, 3 * x + 1)]).max(0.0).sqrt(),
                    )
                })
                .collect(),
            _ => vec![(0.0, 0.0); p],
        }
    }
}

/// `<H^K> = sum_a p_a E_a^K`, stored in the frame centered on the spectral mean.
pub fn moments_fourier(spec: &SpectralDecomposition, l: usize) -> Result<MomentSet> {
    let total: f64 = spec.weight_sum();
    if spec.peaks.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidArgument("spectral decomposition has no weight".into()));
    }
    let norm = |w: f64| w / total;
    let mean: f64 = spec.peaks.iter().map(|p| norm(p.weight) * p.energy).sum();
    let var: f64 = spec
        .peaks
        .iter()
        .map(|p| norm(p.weight) * (p.energy - mean).powi(2))
        .sum();
    let scale = if var > 1e-300 { var.sqrt() } else { 1.0 };
    let mut values = Vec::with_capacity(l + 1);
    let mut errors = Vec::with_capacity(l + 1);
    for k in 0..=l {
        let mut v = 0.0;
        let mut e = 0.0;
        for p in &spec.peaks {
            let x = (p.energy - mean) / scale;
            let w = norm(p.weight);
            v += w * x.powi(k as i32);
            let dx = if k > 0 {
                k as f64 * x.abs().powi(k as i32 - 1)
            } else {
                0.0
            };
            e += w * dx * p.energy_err / scale + x.abs().powi(k as i32) * p.weight_err / total;
        }
        values.push(v);
        errors.push(e);
    }
    values[0] = 1.0;
    MomentSet::new(values, errors, MomentRoute::Fourier, mean, scale, spec.source.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::build_dense;
    use crate::gf::{gf_exact, uniform_grid, Route};
    use crate::models::{Model, PairingModel};
    use proptest::prelude::*;

    fn two_level() -> (DenseHamiltonian, InitialState) {
        let model = Model::Pairing(PairingModel::uniform(2, 1, 1.0, 1.0).unwrap());
        let init = model.default_initial_state().unwrap();
        (build_dense(&model.to_qubits()).unwrap(), init)
    }

    fn tone(e: f64, dt: f64, n: usize) -> GfSeries {
        let t = uniform_grid(dt, n);
        let v: Vec<C64> = t.iter().map(|&t| C64::from_polar(1.0, -e * t)).collect();
        GfSeries {
            re: v.iter().map(|v| v.re).collect(),
            im: v.iter().map(|v| v.im).collect(),
            re_err: vec![0.0; n],
            im_err: vec![0.0; n],
            t,
            shots: 0,
            route: Route::Exact,
            model: "tone".into(),
            seed: 0,
        }
    }

    /// Matrix-power oracle: `e_0^T A^K e_0` for `A = [[2,-1],[-1,4]]`.
    fn two_level_matrix_moments(l: usize) -> Vec<f64> {
        let mut out = vec![1.0];
        let mut w = [1.0, 0.0];
        for _ in 0..l {
            w = [2.0 * w[0] - w[1], -w[0] + 4.0 * w[1]];
            out.push(w[0]);
        }
        out
    }

    #[test]
    fn exact_two_level_moments() {
        let (d, init) = two_level();
        let m = moments_exact(&d, &init, 12);
        let raw = m.raw();
        let want = two_level_matrix_moments(12);
        assert!((raw[1] - 2.0).abs() < 1e-12);
        assert!((raw[2] - 5.0).abs() < 1e-12);
        for k in 0..=12 {
            assert!((raw[k] - want[k]).abs() <= 1e-12 * want[k].abs(), "K={k}");
        }
        assert!((m.mean() - 2.0).abs() < 1e-12);
        assert!((m.variance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_hamiltonian_and_eigenstate() {
        let mut h = crate::pauli::QubitHamiltonian::new(1);
        h.add_term(0.0, crate::pauli::PauliString::identity());
        let d = build_dense(&h).unwrap();
        let init = InitialState::pure(crate::statevector::StateVector::zero(1));
        let raw = moments_exact(&d, &init, 4).raw();
        assert_eq!(raw, vec![1.0, 0.0, 0.0, 0.0, 0.0]);

        let (d, _) = two_level();
        let phi = InitialState::pure(d.eigenvector(2));
        let e = d.energies()[2];
        let raw = moments_exact(&d, &phi, 6).raw();
        for (k, v) in raw.iter().enumerate() {
            assert!((v - e.powi(k as i32)).abs() < 1e-10 * e.powi(k as i32).max(1.0));
        }
    }

    #[test]
    fn reframing_round_trip() {
        let (d, init) = two_level();
        let m = moments_exact(&d, &init, 10);
        let back = m
            .reframed(0.0, 1.0)
            .unwrap()
            .reframed(1.7, 0.3)
            .unwrap()
            .natural_frame();
        for k in 0..=10 {
            // the raw frame reaches 4.4^K, so cancellation costs digits
            let tol = 1e-13 * 4.5f64.powi(k as i32);
            assert!((back.values()[k] - m.values()[k]).abs() < tol, "K={k}");
        }
    }

    #[test]
    fn fornberg_known_stencils() {
        let s = FdmStencil::central(1, 2).unwrap();
        assert_eq!(s.coeffs, vec![-0.5, 0.0, 0.5]);
        let s = FdmStencil::central(2, 2).unwrap();
        assert_eq!(s.coeffs, vec![1.0, -2.0, 1.0]);
        let s = FdmStencil::central(4, 2).unwrap();
        assert_eq!(s.coeffs, vec![1.0, -4.0, 6.0, -4.0, 1.0]);
        assert!(FdmStencil::central(2, 3).is_err());
    }

    #[test]
    fn stencils_differentiate_monomials() {
        for k in 1..=14 {
            for a in [2, 4, 8] {
                let s = FdmStencil::central(k, a).unwrap();
                let p = s.half_width() as i64;
                for m in 0..(k + a) {
                    let got: f64 = s
                        .coeffs
                        .iter()
                        .enumerate()
                        .map(|(idx, cj)| cj * ((idx as i64 - p) as f64).powi(m as i32))
                        .sum();
                    let want = if m == k {
                        (1..=k).map(|x| x as f64).product()
                    } else {
                        0.0
                    };
                    let scale = (p as f64).powi(m as i32).max(1.0) * s.abs_sum();
                    assert!((got - want).abs() < 1e-9 * scale, "K={k} a={a} m={m}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn fdm_low_orders_accurate() {
        let (d, init) = two_level();
        let series = gf_exact(&d, &init, &uniform_grid(1e-3, 4000), "2lvl");
        let (m, choices) = moments_fdm(&series, 14, &FdmOptions::default()).unwrap();
        let want = two_level_matrix_moments(14);
        let raw = m.raw();
        assert_eq!(raw[0], 1.0);
        let rel = |k: usize| ((raw[k] - want[k]) / want[k]).abs();
        for k in 1..=6 {
            assert!(rel(k) < 1e-3, "K={k}: {}", rel(k));
        }
        assert!(rel(14) > rel(6));
        assert!(choices.iter().skip(1).all(|c| c.h > 0.0));
    }

    #[test]
    fn fdm_rejects_short_grid() {
        let s = tone(1.0, 0.1, 5);
        assert!(moments_fdm(&s, 6, &FdmOptions::default()).is_err());
    }

    #[test]
    fn single_tone_peak() {
        let s = tone(2.5, 0.05, 2000);
        let spec = spectral_peaks(&s, &SpectralOptions::default()).unwrap();
        assert_eq!(spec.peaks.len(), 1);
        assert!((spec.peaks[0].energy - 2.5).abs() < 1e-9);
        assert!((spec.peaks[0].weight - 1.0).abs() < 1e-9);
        let m = moments_fourier(&spec, 8).unwrap();
        let raw = m.raw();
        for (k, v) in raw.iter().enumerate() {
            assert!((v - 2.5f64.powi(k as i32)).abs() < 1e-7 * 2.5f64.powi(k as i32));
        }
    }

    #[test]
    fn unrefined_tone_within_resolution() {
        let s = tone(-1.25, 0.05, 1000);
        let opts = SpectralOptions {
            refine: false,
            ..SpectralOptions::default()
        };
        let spec = spectral_peaks(&s, &opts).unwrap();
        assert_eq!(spec.peaks.len(), 1);
        assert!((spec.peaks[0].energy + 1.25).abs() < 2.0 * std::f64::consts::PI / 50.0 / 4.0);
        assert!((spec.peaks[0].weight - 1.0).abs() < 0.05);
    }

    #[test]
    fn two_level_peaks_and_moments() {
        let (d, init) = two_level();
        let (dt, n) = fourier_grid(6.0, 0.05).unwrap();
        let series = gf_exact(&d, &init, &uniform_grid(dt, n), "2lvl");
        let opts = SpectralOptions {
            e_bound: Some(6.0),
            ..SpectralOptions::default()
        };
        let spec = spectral_peaks(&series, &opts).unwrap();
        let support = d.spectral_support(&init, 1e-12, 1e-9);
        assert_eq!(spec.peaks.len(), 2);
        for (p, (e, w)) in spec.peaks.iter().zip(&support) {
            assert!((p.energy - e).abs() < 1e-9);
            assert!((p.weight - w).abs() < 1e-9);
        }
        let m = moments_fourier(&spec, 20).unwrap().raw();
        let want = two_level_matrix_moments(20);
        for k in 0..=20 {
            assert!(((m[k] - want[k]) / want[k]).abs() < 1e-6, "K={k}");
        }
    }

    #[test]
    fn aliasing_rejected() {
        let s = tone(1.0, 0.5, 100);
        let opts = SpectralOptions {
            e_bound: Some(10.0),
            ..SpectralOptions::default()
        };
        assert!(matches!(spectral_peaks(&s, &opts), Err(Error::Aliasing(_))));
    }

    #[test]
    fn bessel_reference() {
        // I0(1) and I0(5) reference values
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }

    proptest! {
        #[test]
        fn variance_nonnegative_and_mean_bounded(
            es in prop::collection::vec(-5.0f64..5.0, 1..6),
            ws in prop::collection::vec(0.01f64..1.0, 6),
        ) {
            let total: f64 = ws[..es.len()].iter().sum();
            let peaks: Vec<Peak> = es.iter().zip(&ws).map(|(&e, &w)| Peak {
                energy: e, weight: w / total, energy_err: 0.0, weight_err: 0.0,
            }).collect();
            let spec = SpectralDecomposition { peaks, residual: 0.0, raw_weight_sum: 1.0, source: String::new() };
            let m = moments_fourier(&spec, 4).unwrap();
            let lo = es.iter().copied().fold(f64::MAX, f64::min);
            let hi = es.iter().copied().fold(f64::MIN, f64::max);
            prop_assert!(m.mean() >= lo - 1e-12 && m.mean() <= hi + 1e-12);
            prop_assert!(m.variance() >= -1e-10);
            prop_assert!(m.hankel_min_ratio() >= -1e-8);
        }
    }
}
