//! Krylov-subspace diagonalization driven by moments, survival probabilities,
//! the coupled equations in the non-orthogonal basis, and the short-time error order.
//!
//! Matrices are assembled in the frame of the supplied [`MomentSet`]: with
//! `X = (H - shift) / scale`, `O_LK = <X^{L+K}>` and `Hm_LK = <X^{L+K+1}>`.
//! The subspace is the same as for powers of `H`, so eigenvalues map back exactly
//! through `E = shift + scale * e`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dense::DenseHamiltonian;
use crate::error::{Error, Result};
use crate::models::InitialState;
use crate::moments::MomentSet;
use crate::statevector::{c, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct KrylovMatrices {
    pub order: usize,
    pub overlap: DMatrix<f64>,
    pub hamiltonian: DMatrix<f64>,
    pub shift: f64,
    pub scale: f64,
}

impl KrylovMatrices {
    pub fn dim(&self) -> usize {
        self.order + 1
    }

    /// Ratio of the extreme overlap eigenvalues.
    pub fn overlap_condition(&self) -> f64 {
        let s = SymmetricEigen::new(self.overlap.clone()).eigenvalues;
        let max = s.max();
        let min = s.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Hankel matrices of subspace order `m` (dimension `m + 1`); needs moments through `2m + 1`.
pub fn build_krylov_matrices(moments: &MomentSet, m: usize) -> Result<KrylovMatrices> {
    moments.require(2 * m + 1)?;
    let v = moments.values();
    Ok(KrylovMatrices {
        order: m,
        overlap: DMatrix::from_fn(m + 1, m + 1, |l, k| v[l + k]),
        hamiltonian: DMatrix::from_fn(m + 1, m + 1, |l, k| v[l + k + 1]),
        shift: moments.shift(),
        scale: moments.scale(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrylovSolution {
    pub order: usize,
    pub retained: usize,
    /// Physical eigenvalues, ascending.
    pub energies: Vec<f64>,
    /// `|<alpha|Phi_0>|^2`.
    pub weights: Vec<f64>,
    pub cutoff: f64,
    pub overlap_condition: f64,
}

impl KrylovSolution {
    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Retained-subspace map `X = V_kept s_kept^{-1/2}` and the kept spectrum of `O`.
fn canonical_basis(o: &DMatrix<f64>, cutoff: f64) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(o.clone());
    let smax = eig.eigenvalues.max();
    if !(smax > 0.0) {
        return Err(Error::DegenerateOverlap);
    }
    let kept: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > cutoff * smax)
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateOverlap);
    }
    let smin = kept.iter().map(|&i| eig.eigenvalues[i]).fold(f64::MAX, f64::min);
    let x = DMatrix::from_fn(o.nrows(), kept.len(), |r, k| {
        eig.eigenvectors[(r, kept[k])] / eig.eigenvalues[kept[k]].sqrt()
    });
    Ok((x, smax / smin))
}

/// Canonical orthogonalization, keeping overlap eigenvalues above `cutoff * max`.
pub fn solve_generalized(k: &KrylovMatrices, cutoff: f64) -> Result<KrylovSolution> {
    let (x, cond) = canonical_basis(&k.overlap, cutoff)?;
    let hx = x.transpose() * &k.hamiltonian * &x;
    let hx = (&hx + hx.transpose()) * 0.5;
    let eig = SymmetricEigen::new(hx);
    // coordinates of Phi_0 = e_0 in the orthonormal basis
    let phi = x.transpose() * k.overlap.column(0);
    let proj = eig.eigenvectors.transpose() * phi;
    let mut pairs: Vec<(f64, f64)> = (0..eig.eigenvalues.len())
        .map(|a| (k.shift + k.scale * eig.eigenvalues[a], proj[a] * proj[a]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(KrylovSolution {
        order: k.order,
        retained: pairs.len(),
        energies: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        cutoff,
        overlap_condition: cond,
    })
}

/// `P_0(t) = |sum_alpha q_alpha e^{-i E_alpha t}|^2`.
pub fn survival_probability(sol: &KrylovSolution, t: &[f64]) -> Vec<f64> {
    t.iter()
        .map(|&t| {
            sol.energies
                .iter()
                .zip(&sol.weights)
                .map(|(&e, &q)| C64::from_polar(q, -e * t))
                .sum::<C64>()
                .norm_sqr()
        })
        .collect()
}

/// Exact survival probability `|sum w e^{-iEt}|^2` from the eigendecomposition.
pub fn survival_exact(dense: &DenseHamiltonian, init: &InitialState, t: &[f64]) -> Vec<f64> {
    let sol = KrylovSolution {
        order: 0,
        retained: dense.dim(),
        energies: dense.energies().to_vec(),
        weights: dense.weights(init),
        cutoff: 0.0,
        overlap_condition: 1.0,
    };
    survival_probability(&sol, t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdceCoefficients {
    pub t: Vec<f64>,
    /// `c[k][K]` at time `t[k]`.
    pub c: Vec<Vec<C64>>,
    /// `|(O c)_0|^2`.
    pub survival: Vec<f64>,
    /// Largest `|c^dagger O c - 1|` seen.
    pub norm_drift: f64,
    pub step: f64,
}

fn quadratic_form(o: &DMatrix<C64>, v: &DVector<C64>) -> f64 {
    v.dotc(&(o * v)).re
}

/// Integrates `i O dc/dt = Hm c` with `c(0) = e_0` by fixed-step RK4.
///
/// `O` is inverted on the subspace retained with `cutoff`; the default step is
/// `0.01 / E_bound` with `E_bound` the largest retained `|E|`. The step is halved
/// up to three times while the norm drifts by more than 1e-6.
pub fn tdce_integrate(k: &KrylovMatrices, t: &[f64], cutoff: f64) -> Result<TdceCoefficients> {
    if t.is_empty() || t[0] != 0.0 || t.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidGrid("time grid must start at 0 and increase".into()));
    }
    let (x, _) = canonical_basis(&k.overlap, cutoff)?;
    let n = k.dim();
    // generator in physical units: shift + scale * O^+ Hm
    let pinv = &x * x.transpose();
    let gen = (&pinv * &k.hamiltonian) * k.scale + DMatrix::identity(n, n) * k.shift;
    let gen = gen.map(|v| c(0.0, -v));
    let o = k.overlap.map(|v| c(v, 0.0));
    let sol = solve_generalized(k, cutoff)?;
    let e_bound = sol.energies.iter().map(|e| e.abs()).fold(0.0, f64::max).max(1e-12);
    let mut h = 0.01 / e_bound;
    for _ in 0..4 {
        let mut cv = DVector::from_element(n, c(0.0, 0.0));
        cv[0] = c(1.0, 0.0);
        let norm0 = quadratic_form(&o, &cv);
        let mut out = Vec::with_capacity(t.len());
        let mut drift: f64 = 0.0;
        let mut now = 0.0;
        for &target in t {
            let span = target - now;
            if span > 0.0 {
                let steps = (span / h).ceil().max(1.0) as usize;
                let dt = span / steps as f64;
                for _ in 0..steps {
                    let k1 = &gen * &cv;
                    let k2 = &gen * (&cv + &k1 * c(0.5 * dt, 0.0));
                    let k3 = &gen * (&cv + &k2 * c(0.5 * dt, 0.0));
                    let k4 = &gen * (&cv + &k3 * c(dt, 0.0));
                    cv += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
                }
                now = target;
            }
            drift = drift.max((quadratic_form(&o, &cv) - norm0).abs());
            out.push(cv.clone());
        }
        if drift <= 1e-6 {
            let survival = out.iter().map(|v| (o.row(0) * v)[0].norm_sqr()).collect();
            return Ok(TdceCoefficients {
                t: t.to_vec(),
                c: out.into_iter().map(|v| v.iter().copied().collect()).collect(),
                survival,
                norm_drift: drift,
                step: h,
            });
        }
        h *= 0.5;
    }
    Err(Error::Integration(format!(
        "norm drift above 1e-6 after halving the step to {h:e}"
    )))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderFit {
    pub order: usize,
    pub slope: f64,
    /// `(t, Delta_M(t))` for every requested time.
    pub samples: Vec<(f64, f64)>,
    /// Number of samples inside the fit window.
    pub used: usize,
}

/// Fits the log-log slope of `||(e^{-itH} - e^{-itH_M}) Phi_0||` over samples with
/// `Delta` in `[1e-10, 1e-3]`, where `H_M` is `H` projected on the order-`m` Krylov space.
pub fn error_order_check(dense: &DenseHamiltonian, init: &InitialState, m: usize, times: &[f64]) -> Result<OrderFit> {
    if init.len() != 1 {
        return Err(Error::InvalidArgument(
            "the error-order check needs a pure initial state".into(),
        ));
    }
    let (_, phi) = init.iter().next().expect("one member");
    let dim = dense.dim();
    // orthonormal Krylov basis by twice-iterated Gram-Schmidt
    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut v = phi.amplitudes().to_vec();
    for _ in 0..=m {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let p: C64 = q.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= p * qi;
                }
            }
        }
        let nv: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nw: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nw <= 1e-10 * nv.max(1e-300) {
            break;
        }
        let q: Vec<C64> = w.iter().map(|z| z / nw).collect();
        v = dense.apply(&q);
        basis.push(q);
    }
    let r = basis.len();
    let q = DMatrix::from_fn(dim, r, |i, k| basis[k][i]);
    let hq = DMatrix::from_fn(dim, r, |_, _| c(0.0, 0.0));
    let mut hq = hq;
    for k in 0..r {
        let col = dense.apply(&basis[k]);
        for i in 0..dim {
            hq[(i, k)] = col[i];
        }
    }
    let small = q.adjoint() * hq;
    let small = (&small + small.adjoint()) * c(0.5, 0.0);
    let eig = small.symmetric_eigen();
    let phi_vec = DVector::from_column_slice(phi.amplitudes());
    let coords = eig.eigenvectors.adjoint() * (q.adjoint() * &phi_vec);
    let mut samples = Vec::with_capacity(times.len());
    for &t in times {
        let exact = dense.evolve(phi, t);
        let phased = DVector::from_fn(r, |a, _| coords[a] * C64::from_polar(1.0, -eig.eigenvalues[a] * t));
        let approx = &q * (&eig.eigenvectors * phased);
        let delta: f64 = exact
            .amplitudes()
            .iter()
            .zip(approx.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        samples.push((t, delta));
    }
    let window: Vec<(f64, f64)> = samples
        .iter()
        .filter(|&&(t, d)| t > 0.0 && (1e-10..=1e-3).contains(&d))
        .map(|&(t, d)| (t.ln(), d.ln()))
        .collect();
    if window.len() < 2 {
        return Err(Error::BelowNumericFloor);
    }
    let n = window.len() as f64;
    let mx = window.iter().map(|p| p.0).sum::<f64>() / n;
    let my = window.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = window.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = window.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(OrderFit {
        order: m,
        slope: sxy / sxx,
        used: window.len(),
        samples,
    })
}
