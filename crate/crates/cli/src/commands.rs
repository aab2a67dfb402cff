use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

use genfunc::dense::{build_dense, DenseHamiltonian};
use genfunc::gf::{gf_exact, gf_series, GfSeries, Route};
use genfunc::io::{
    curve_table, eigen_table, fmt_f64, gf_from_table, gf_table, moments_from_table, moments_table, survival_table,
    Table,
};
use genfunc::krylov::{build_krylov_matrices, solve_generalized, survival_exact, survival_probability};
use genfunc::models::{InitialState, Model};
use genfunc::moments::{
    fourier_grid, moments_exact, moments_fdm, moments_fourier, spectral_peaks, FdmOptions, MomentRoute, MomentSet,
    SpectralOptions,
};
use genfunc::noise::{mitigate_full, noisy_series, rms_deviation};
use genfunc::texpand::{imaginary_time_oracle, t_expand};

use crate::config::{GfRoute, RunConfig};
use crate::manifest::Recorder;

/// Deviation of the Krylov survival probability that ends its validity window.
const SURVIVAL_TOL: f64 = 0.02;

struct Problem {
    model: Model,
    init: InitialState,
    dense: DenseHamiltonian,
}

fn problem(cfg: &RunConfig) -> Result<Problem> {
    let model = cfg.build_model()?;
    let init = cfg.initial_state()?;
    let dense = build_dense(&model.to_qubits())?;
    Ok(Problem { model, init, dense })
}

fn linspace(t_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect()
}

fn ground_energy(p: &Problem) -> f64 {
    p.dense.ground_energy_in_support(&p.init, 1e-10)
}

fn load_table(rec: &mut Recorder, path: &std::path::Path) -> Result<Table> {
    let bytes = rec.read_input(path)?;
    Table::read_from(&bytes[..]).with_context(|| format!("parsing {}", path.display()))
}

pub fn gf(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let p = problem(cfg)?;
    let t = cfg.grid.points();
    let fp = p.model.fingerprint();
    rec.lap("setup");
    let exact = (cfg.gf.route == GfRoute::Exact || cfg.gf.overlay_exact).then(|| gf_exact(&p.dense, &p.init, &t, &fp));
    let series = match cfg.gf.route {
        GfRoute::Exact => exact.clone().expect("computed above"),
        GfRoute::Hadamard => {
            let policy = cfg.trotter_policy(&p.model);
            gf_series(&p.model, &p.init, &t, policy, cfg.gf.shots, cfg.seed)?
        }
    };
    rec.lap("evaluate");
    let overlay = if cfg.gf.overlay_exact { exact.as_ref() } else { None };
    rec.write("gf.csv", &gf_table(&series, overlay)?.to_bytes()?)?;
    rec.lap("write");
    Ok(())
}

/// Series to post-process: the configured input file, or a noiseless trace on `(dt, n)`.
fn source_series(cfg: &RunConfig, rec: &mut Recorder, p: &Problem, dt: f64, n: usize) -> Result<GfSeries> {
    match &cfg.moments.input {
        Some(path) => Ok(gf_from_table(&load_table(rec, path)?)?),
        None => {
            let t = genfunc::gf::uniform_grid(dt, n);
            Ok(gf_exact(&p.dense, &p.init, &t, &p.model.fingerprint()))
        }
    }
}

pub fn moments(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let p = problem(cfg)?;
    let l = cfg.moments.order;
    let oracle = moments_exact(&p.dense, &p.init, l).raw();
    rec.lap("setup");
    let mut report = String::new();
    let m = match cfg.moments.route()? {
        MomentRoute::Exact => moments_exact(&p.dense, &p.init, l),
        MomentRoute::Fdm => {
            let series = source_series(cfg, rec, &p, cfg.moments.fdm_dt, cfg.moments.fdm_points)?;
            let opts = FdmOptions {
                accuracy: cfg.moments.fdm_accuracy,
                ..FdmOptions::default()
            };
            let (m, choices) = moments_fdm(&series, l, &opts)?;
            writeln!(report, "route=fdm points={} accuracy={}", series.len(), opts.accuracy)?;
            writeln!(report, "K h truncation noise")?;
            for c in &choices {
                writeln!(report, "{} {:.6e} {:.3e} {:.3e}", c.order, c.h, c.truncation, c.noise)?;
            }
            m
        }
        MomentRoute::Fourier => {
            let e_bound = p.model.to_qubits().one_norm();
            let (dt, n) = fourier_grid(e_bound, cfg.moments.fourier_gap)?;
            let series = source_series(cfg, rec, &p, dt, n)?;
            let opts = SpectralOptions {
                e_bound: Some(e_bound),
                threshold: cfg.moments.fourier_threshold,
                ..SpectralOptions::default()
            };
            let spec = spectral_peaks(&series, &opts)?;
            writeln!(
                report,
                "route=fourier points={} peaks={} residual={:.3e} weight_sum={:.15}",
                series.len(),
                spec.peaks.len(),
                spec.residual,
                spec.weight_sum()
            )?;
            writeln!(report, "energy weight energy_err weight_err")?;
            for pk in &spec.peaks {
                writeln!(
                    report,
                    "{} {} {:.3e} {:.3e}",
                    fmt_f64(pk.energy),
                    fmt_f64(pk.weight),
                    pk.energy_err,
                    pk.weight_err
                )?;
            }
            moments_fourier(&spec, l)?
        }
    };
    rec.lap("extract");
    let raw = m.raw();
    writeln!(report, "\nK raw oracle rel_error")?;
    for k in 0..=l {
        let rel = (raw[k] - oracle[k]).abs() / oracle[k].abs().max(f64::MIN_POSITIVE);
        writeln!(report, "{k} {} {} {rel:.3e}", fmt_f64(raw[k]), fmt_f64(oracle[k]))?;
    }
    rec.write("moments.csv", &moments_table(&m).to_bytes()?)?;
    rec.write("moments_report.txt", report.as_bytes())?;
    rec.lap("write");
    Ok(())
}

fn moments_for(rec: &mut Recorder, p: &Problem, file: Option<&std::path::Path>, needed: usize) -> Result<MomentSet> {
    match file {
        Some(path) => {
            let m = moments_from_table(&load_table(rec, path)?)?;
            m.require(needed)?;
            Ok(m)
        }
        None => Ok(moments_exact(&p.dense, &p.init, needed)),
    }
}

pub fn texpand(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let p = problem(cfg)?;
    let order = cfg.texpand.order;
    let m = moments_for(rec, &p, cfg.texpand.moments.as_deref(), order + 2)?;
    rec.lap("moments");
    let tx = t_expand(&m, order, &cfg.texpand.criteria(), cfg.texpand.points)?;
    rec.lap("resum");
    let oracle = imaginary_time_oracle(&p.dense, &p.init, &tx.curve.tau);
    let e_gs = ground_energy(&p);
    let mut report = match &tx.selection {
        Some(sel) => sel.report(),
        None => "variance vanishes: initial state is an eigenstate, no Pade stage\n".to_string(),
    };
    let c = &tx.curve;
    writeln!(report, "energy_at_end={}", fmt_f64(c.energy_at_end))?;
    writeln!(report, "asymptote={}", fmt_f64(c.asymptote))?;
    writeln!(report, "exact_ground={}", fmt_f64(e_gs))?;
    writeln!(
        report,
        "relative_error={:.6e}",
        (c.asymptote - e_gs).abs() / e_gs.abs().max(f64::MIN_POSITIVE)
    )?;
    writeln!(
        report,
        "max_dedtau={:.6e}",
        c.dedtau.iter().copied().fold(f64::MIN, f64::max)
    )?;
    rec.write("energy.csv", &curve_table(c, Some(&oracle)).to_bytes()?)?;
    rec.write("pade_report.txt", report.as_bytes())?;
    rec.lap("write");
    Ok(())
}

pub fn krylov(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let p = problem(cfg)?;
    let kc = &cfg.krylov;
    let max_order = *kc.orders.iter().max().expect("validated non-empty");
    let m = moments_for(rec, &p, kc.moments.as_deref(), 2 * max_order + 1)?;
    rec.lap("moments");
    let t = linspace(kc.t_max, kc.points);
    let exact = survival_exact(&p.dense, &p.init, &t);
    let e_gs = ground_energy(&p);
    let mut solutions = Vec::with_capacity(kc.orders.len());
    let mut report = format!(
        "exact_ground={}\nM retained E0 rel_error overlap_cond t_valid\n",
        fmt_f64(e_gs)
    );
    for &order in &kc.orders {
        let sol = solve_generalized(&build_krylov_matrices(&m, order)?, kc.cutoff)?;
        let approx = survival_probability(&sol, &t);
        let t_valid = t
            .iter()
            .zip(approx.iter().zip(&exact))
            .find(|(_, (a, e))| (*a - *e).abs() > SURVIVAL_TOL)
            .map_or("none".to_string(), |(t, _)| fmt_f64(*t));
        writeln!(
            report,
            "{order} {} {} {:.6e} {:.3e} {t_valid}",
            sol.retained,
            fmt_f64(sol.ground_energy()),
            (sol.ground_energy() - e_gs).abs() / e_gs.abs().max(f64::MIN_POSITIVE),
            sol.overlap_condition
        )?;
        rec.write(
            &format!("survival_M{order}.csv"),
            &survival_table(&t, &approx, &exact).to_bytes()?,
        )?;
        solutions.push(sol);
    }
    rec.lap("solve");
    rec.write("eigen.csv", &eigen_table(&solutions).to_bytes()?)?;
    rec.write("krylov_report.txt", report.as_bytes())?;
    rec.lap("write");
    Ok(())
}

pub fn noise(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let Some(block) = &cfg.noise else {
        bail!(crate::ConfigError("the noise command needs a [noise] block".into()));
    };
    let p = problem(cfg)?;
    let anc = p.model.n_qubits();
    let nc = block.config(anc + 1)?;
    let t = block.grid();
    let exact = gf_exact(&p.dense, &p.init, &t, &p.model.fingerprint());
    rec.lap("setup");
    let raw = noisy_series(&p.model, &p.init, &t, block.trotter_steps, block.shots, &nc, cfg.seed)?;
    rec.lap("sample");
    let mut summary = String::new();
    let mitigated = if nc.is_noiseless() {
        writeln!(summary, "noise disabled: mitigated equals raw")?;
        GfSeries {
            route: Route::Mitigated,
            ..raw.clone()
        }
    } else {
        let (mitigated, reference) = mitigate_full(&raw, &nc.readout, anc)?;
        let r = reference.matrix;
        writeln!(
            summary,
            "reference=[[{:.6}, {:.6}], [{:.6}, {:.6}]]",
            r[0][0], r[0][1], r[1][0], r[1][1]
        )?;
        mitigated
    };
    let rms_raw = rms_deviation(&raw, &exact);
    let rms_mit = rms_deviation(&mitigated, &exact);
    writeln!(
        summary,
        "F0_mitigated=({:.6}, {:.6}) err=({:.6}, {:.6})",
        mitigated.re[0], mitigated.im[0], mitigated.re_err[0], mitigated.im_err[0]
    )?;
    writeln!(
        summary,
        "rms_raw={rms_raw:.6e} rms_mitigated={rms_mit:.6e} ratio={:.4}",
        rms_mit / rms_raw.max(f64::MIN_POSITIVE)
    )?;
    rec.write("noise_exact.csv", &gf_table(&exact, None)?.to_bytes()?)?;
    rec.write("noise_raw.csv", &gf_table(&raw, None)?.to_bytes()?)?;
    rec.write("noise_mitigated.csv", &gf_table(&mitigated, None)?.to_bytes()?)?;
    rec.write("noise_summary.txt", summary.as_bytes())?;
    rec.lap("write");
    Ok(())
}
