//! Run configuration: TOML schema, validation, and construction of library objects.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use genfunc::models::{HubbardModel, InitialState, InitialStateSpec, Model, PairingModel};
use genfunc::moments::{MomentRoute, SpectralOptions};
use genfunc::noise::{NoiseConfig, ReadoutModel};
use genfunc::texpand::PadeCriteria;
use genfunc::trotter::NStepsPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelConfig,
    /// `pairing-lowest-filled`, `hubbard-spin-saturated-mixture`, or comma-separated bitstrings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<String>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub gf: GfConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
    #[serde(default)]
    pub texpand: TexpandConfig,
    #[serde(default)]
    pub krylov: KrylovConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseBlock>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Pairing(PairingConfig),
    Hubbard(HubbardConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    pub levels: usize,
    pub pairs: usize,
    /// Level spacing; levels sit at `eps_p = p * delta_e` unless `eps` is given.
    #[serde(default = "one")]
    pub delta_e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    /// Uniform pairing strength.
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubbardConfig {
    pub sites: usize,
    pub hopping: f64,
    pub onsite: f64,
    pub n_up: usize,
    pub n_down: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_max: f64,
    pub dt: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { t_max: 10.0, dt: 0.05 }
    }
}

impl GridConfig {
    pub fn points(&self) -> Vec<f64> {
        let n = (self.t_max / self.dt).round() as usize + 1;
        genfunc::gf::uniform_grid(self.dt, n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GfRoute {
    Hadamard,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfConfig {
    pub route: GfRoute,
    /// Shots per quadrature and point; 0 gives noiseless statevector estimates.
    pub shots: u64,
    /// Fixed Trotter step count; the reference step size is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trotter_steps: Option<usize>,
    pub overlay_exact: bool,
}

impl Default for GfConfig {
    fn default() -> Self {
        Self {
            route: GfRoute::Hadamard,
            shots: 10_000,
            trotter_steps: None,
            overlay_exact: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    /// `exact`, `fdm` or `fourier`.
    pub route: String,
    pub order: usize,
    /// Series CSV to differentiate or transform; generated from the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub fdm_accuracy: usize,
    pub fdm_dt: f64,
    pub fdm_points: usize,
    pub fourier_gap: f64,
    pub fourier_threshold: f64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            route: "exact".into(),
            order: 21,
            input: None,
            fdm_accuracy: 8,
            fdm_dt: 1e-3,
            fdm_points: 20_001,
            fourier_gap: 5e-3,
            fourier_threshold: SpectralOptions::default().threshold,
        }
    }
}

impl MomentsConfig {
    pub fn route(&self) -> Result<MomentRoute> {
        self.route.parse().map_err(anyhow::Error::from)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TexpandConfig {
    pub order: usize,
    /// Moment CSV; exact moments of the model are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<PathBuf>,
    pub x_max: f64,
    pub tail_tol: f64,
    pub points: usize,
}

impl Default for TexpandConfig {
    fn default() -> Self {
        let c = PadeCriteria::default();
        Self {
            order: 10,
            moments: None,
            x_max: c.x_max,
            tail_tol: c.tail_tol,
            points: 401,
        }
    }
}

impl TexpandConfig {
    pub fn criteria(&self) -> PadeCriteria {
        PadeCriteria {
            x_max: self.x_max,
            tail_tol: self.tail_tol,
            ..PadeCriteria::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovConfig {
    pub orders: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<PathBuf>,
    pub t_max: f64,
    pub points: usize,
    pub cutoff: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            orders: (1..=8).collect(),
            moments: None,
            t_max: 10.0,
            points: 501,
            cutoff: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub shots: u64,
    pub p_dep: f64,
    /// Confusion matrix `[reported][true]` applied to every qubit.
    pub readout: [[f64; 2]; 2],
    pub trotter_steps: usize,
    pub t_max: f64,
    pub points: usize,
}

impl NoiseBlock {
    pub fn grid(&self) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n).map(|k| self.t_max * k as f64 / (n - 1) as f64).collect()
    }

    pub fn config(&self, n_qubits: usize) -> Result<NoiseConfig> {
        let readout = ReadoutModel::uniform(n_qubits, self.readout)?;
        Ok(NoiseConfig::new(readout, self.p_dep)?)
    }
}

fn finite_positive(name: &str, v: f64) -> Result<()> {
    ensure!(v.is_finite() && v > 0.0, "{name} must be positive and finite, got {v}");
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelConfig::Pairing(p) => {
                ensure!((1..=16).contains(&p.levels), "levels must be in 1..=16");
                ensure!(p.pairs <= p.levels, "more pairs than levels");
                finite_positive("delta_e", p.delta_e)?;
                ensure!(p.g.is_finite(), "g must be finite");
                if let Some(e) = &p.eps {
                    ensure!(e.len() == p.levels, "eps needs {} entries", p.levels);
                    ensure!(e.iter().all(|v| v.is_finite()), "eps must be finite");
                }
            }
            ModelConfig::Hubbard(h) => {
                ensure!((1..=8).contains(&h.sites), "sites must be in 1..=8");
                ensure!(h.n_up <= h.sites && h.n_down <= h.sites, "too many electrons");
                ensure!(
                    h.hopping.is_finite() && h.onsite.is_finite(),
                    "couplings must be finite"
                );
            }
        }
        finite_positive("grid.dt", self.grid.dt)?;
        ensure!(
            self.grid.t_max >= 0.0 && self.grid.t_max.is_finite(),
            "grid.t_max must be >= 0"
        );
        ensure!(self.grid.t_max / self.grid.dt <= 1e7, "grid has too many points");
        if let Some(n) = self.gf.trotter_steps {
            ensure!(n >= 1, "gf.trotter_steps must be at least 1");
        }
        self.moments.route()?;
        ensure!(self.moments.order <= 64, "moments.order must be <= 64");
        ensure!(
            self.moments.fdm_accuracy >= 2 && self.moments.fdm_accuracy.is_multiple_of(2),
            "moments.fdm_accuracy must be even and >= 2"
        );
        finite_positive("moments.fdm_dt", self.moments.fdm_dt)?;
        ensure!(self.moments.fdm_points >= 3, "moments.fdm_points must be >= 3");
        finite_positive("moments.fourier_gap", self.moments.fourier_gap)?;
        finite_positive("moments.fourier_threshold", self.moments.fourier_threshold)?;
        ensure!(
            self.texpand.order >= 1 && self.texpand.order <= 40,
            "texpand.order must be in 1..=40"
        );
        finite_positive("texpand.x_max", self.texpand.x_max)?;
        finite_positive("texpand.tail_tol", self.texpand.tail_tol)?;
        ensure!(self.texpand.points >= 2, "texpand.points must be >= 2");
        ensure!(!self.krylov.orders.is_empty(), "krylov.orders is empty");
        ensure!(
            self.krylov.orders.iter().all(|&m| m <= 30),
            "krylov orders must be <= 30"
        );
        ensure!(
            self.krylov.t_max >= 0.0 && self.krylov.t_max.is_finite(),
            "krylov.t_max must be >= 0"
        );
        ensure!(self.krylov.points >= 2, "krylov.points must be >= 2");
        ensure!(
            self.krylov.cutoff > 0.0 && self.krylov.cutoff < 1.0,
            "krylov.cutoff must be in (0, 1)"
        );
        if let Some(n) = &self.noise {
            ensure!(n.shots >= 1, "noise.shots must be >= 1");
            ensure!((0.0..=1.0).contains(&n.p_dep), "noise.p_dep must be in [0, 1]");
            ensure!(n.trotter_steps >= 1, "noise.trotter_steps must be >= 1");
            ensure!(n.points >= 2, "noise.points must be >= 2");
            ensure!(n.t_max >= 0.0 && n.t_max.is_finite(), "noise.t_max must be >= 0");
            n.config(1)?;
        }
        self.build_model()?;
        self.initial_state()?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model> {
        Ok(match &self.model {
            ModelConfig::Pairing(p) => {
                let eps = p
                    .eps
                    .clone()
                    .unwrap_or_else(|| (1..=p.levels).map(|k| k as f64 * p.delta_e).collect());
                let n = p.levels;
                Model::Pairing(PairingModel::new(eps, vec![p.g; n * n], p.pairs)?)
            }
            ModelConfig::Hubbard(h) => {
                Model::Hubbard(HubbardModel::new(h.sites, h.hopping, h.onsite, h.n_up, h.n_down)?)
            }
        })
    }

    pub fn initial_state(&self) -> Result<InitialState> {
        let model = self.build_model()?;
        match &self.initial_state {
            None => Ok(model.default_initial_state()?),
            Some(s) => {
                let spec: InitialStateSpec = s.parse()?;
                Ok(model.initial_state(&spec)?)
            }
        }
    }

    pub fn trotter_policy(&self, model: &Model) -> NStepsPolicy {
        match self.gf.trotter_steps {
            Some(n) => NStepsPolicy::Fixed(n),
            None => NStepsPolicy::reference_for(model),
        }
    }
}

/// Preset configurations shipped with the binary.
pub const PRESETS: &[(&str, &str)] = &[
    ("gf-pairing", include_str!("../presets/gf-pairing.toml")),
    ("gf-hubbard", include_str!("../presets/gf-hubbard.toml")),
    ("moments-fourier", include_str!("../presets/moments-fourier.toml")),
    ("moments-fdm", include_str!("../presets/moments-fdm.toml")),
    ("texpand-g1", include_str!("../presets/texpand-g1.toml")),
    ("texpand-g2", include_str!("../presets/texpand-g2.toml")),
    ("krylov-g2", include_str!("../presets/krylov-g2.toml")),
    ("noise", include_str!("../presets/noise.toml")),
];

pub fn preset(name: &str) -> Result<&'static str> {
    match PRESETS.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => Ok(text),
        None => {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            bail!("unknown preset {name:?}; available: {}", names.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, text) in PRESETS {
            let cfg = RunConfig::parse(text).unwrap_or_else(|e| panic!("{name}: {e:#}"));
            let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(again, cfg, "{name}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let base = "[model]\nkind = \"pairing\"\nlevels = 2\npairs = 1\ng = 1.0\n";
        assert!(RunConfig::parse(base).is_ok());
        assert!(RunConfig::parse(&format!("{base}colour = 3\n")).is_err());
        assert!(RunConfig::parse(&format!("bogus = 1\n{base}")).is_err());
        assert!(RunConfig::parse(&format!("{base}[grid]\nt_max = 1.0\ndt = 0.1\nextra = 2\n")).is_err());
    }

    #[test]
    fn ranges_are_checked() {
        let base = "[model]\nkind = \"pairing\"\nlevels = 2\npairs = 3\ng = 1.0\n";
        assert!(RunConfig::parse(base).is_err());
        let base = "[model]\nkind = \"pairing\"\nlevels = 2\npairs = 1\ng = 1.0\n[grid]\nt_max = 1.0\ndt = -0.1\n";
        assert!(RunConfig::parse(base).is_err());
    }

    #[test]
    fn uniform_pairing_matches_library() {
        let cfg = RunConfig::parse("[model]\nkind = \"pairing\"\nlevels = 4\npairs = 2\ng = 0.5\n").unwrap();
        let lib = Model::Pairing(PairingModel::uniform(4, 2, 1.0, 0.5).unwrap());
        assert_eq!(cfg.build_model().unwrap(), lib);
    }
}
