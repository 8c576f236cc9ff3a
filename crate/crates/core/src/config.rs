//! Pipeline configuration: a TOML file with one section per stage. Every
//! algorithmic constant appears with its default, so a serialised config is
//! a complete record of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consistency::{TAU_EPS, TAU_SL};
use crate::drawing::{EvolveParams, MergeParams};
use crate::hypothesis::{HypothesisParams, ViewPairStrategy};
use crate::verification::VerificationParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Directory holding `cameras.txt` and `view_<id>.curves` files.
    pub data_dir: Option<PathBuf>,
    /// Synthetic scene specification, used when `data_dir` is absent.
    pub scene: Option<PathBuf>,
    /// Ground-truth curves for evaluation (3D curve format).
    pub ground_truth: Option<PathBuf>,
    /// Overrides the scene seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisConfig {
    pub tau_overlap: f64,
    pub min_curve_edgels: usize,
    /// `0` pairs every view with every other; `w > 0` only pairs views at
    /// most `w` positions apart.
    pub baseline_window: usize,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        let d = HypothesisParams::default();
        Self { tau_overlap: d.tau_overlap, min_curve_edgels: d.min_curve_edgels, baseline_window: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub delta_d: f64,
    pub delta_theta_deg: f64,
    pub tau_v: f64,
    pub n_min_views: usize,
    pub min_run: usize,
    pub reliability_floor: f64,
    pub tangent_window: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        let d = VerificationParams::default();
        Self {
            delta_d: d.delta_d,
            delta_theta_deg: d.delta_theta.to_degrees().round(),
            tau_v: d.tau_v,
            n_min_views: d.n_min_views,
            min_run: d.min_run,
            reliability_floor: d.reliability_floor,
            tangent_window: d.tangent_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Minimum weight of a strong sample link.
    pub tau_eps: u32,
    /// Minimum number of strong sample links for a curve link.
    pub tau_sl: usize,
    /// Longest run of unlinked samples that gap filling bridges.
    pub g_max: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { tau_eps: TAU_EPS, tau_sl: TAU_SL, g_max: 5 }
    }
}

/// Lengths are multiples of the sample spacing `ds`, which defaults to the
/// scene diameter divided by `diameter_divisions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrawingConfig {
    pub diameter_divisions: f64,
    /// Absolute sample spacing; overrides `diameter_divisions` when set.
    pub spacing: Option<f64>,
    pub alpha: f64,
    pub max_iters: usize,
    pub tol_factor: f64,
    pub reach_factor: f64,
    pub d_merge_factor: f64,
    pub junction_radius_factor: f64,
    pub snap_radius_factor: f64,
    pub min_component_factor: f64,
    pub duplicate_radius_factor: f64,
}

impl Default for DrawingConfig {
    fn default() -> Self {
        let e = EvolveParams::for_spacing(1.0);
        let m = MergeParams::for_spacing(1.0);
        Self {
            diameter_divisions: 2000.0,
            spacing: None,
            alpha: e.alpha,
            max_iters: e.max_iters,
            tol_factor: e.tol,
            reach_factor: e.reach,
            d_merge_factor: m.d_merge,
            junction_radius_factor: m.junction_radius,
            snap_radius_factor: m.snap_radius,
            min_component_factor: m.min_component_length,
            duplicate_radius_factor: m.duplicate_radius,
        }
    }
}

impl DrawingConfig {
    pub fn spacing_for(&self, diameter: f64) -> f64 {
        self.spacing.unwrap_or(diameter / self.diameter_divisions)
    }

    pub fn evolve_params(&self, ds: f64) -> EvolveParams {
        EvolveParams {
            alpha: self.alpha,
            max_iters: self.max_iters,
            tol: self.tol_factor * ds,
            reach: self.reach_factor * ds,
        }
    }

    pub fn merge_params(&self, ds: f64) -> MergeParams {
        MergeParams {
            d_merge: self.d_merge_factor * ds,
            junction_radius: self.junction_radius_factor * ds,
            snap_radius: self.snap_radius_factor * ds,
            min_component_length: self.min_component_factor * ds,
            duplicate_radius: self.duplicate_radius_factor * ds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Proximity threshold as a fraction of the ground-truth diagonal.
    pub tau_prox_fraction: f64,
    /// Absolute proximity threshold; overrides the fraction when set.
    pub tau_prox: Option<f64>,
    /// Evaluation sampling as a fraction of the ground-truth diagonal.
    pub spacing_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tau_prox_fraction: 0.005, tau_prox: None, spacing_fraction: 1.0 / 2000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: InputConfig,
    pub hypothesis: HypothesisConfig,
    pub verification: VerificationConfig,
    pub consistency: ConsistencyConfig,
    pub drawing: DrawingConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative input paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input.data_dir, &mut cfg.input.scene, &mut cfg.input.ground_truth].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical serialisation, as hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let h = &self.hypothesis;
        if !(0.0..=1.0).contains(&h.tau_overlap) {
            return bad("hypothesis.tau_overlap must lie in [0, 1]");
        }
        let v = &self.verification;
        if !(v.delta_d > 0.0) || !(v.delta_theta_deg > 0.0) || !(v.tau_v >= 0.0) {
            return bad("verification.delta_d and delta_theta_deg must be positive, tau_v non-negative");
        }
        let d = &self.drawing;
        if !(d.diameter_divisions > 0.0) || d.spacing.is_some_and(|s| !(s > 0.0)) {
            return bad("drawing spacing must be positive");
        }
        if !(d.alpha > 0.0 && d.alpha <= 1.0) {
            return bad("drawing.alpha must lie in (0, 1]");
        }
        let e = &self.eval;
        if !(e.tau_prox_fraction > 0.0) || e.tau_prox.is_some_and(|t| !(t > 0.0)) || !(e.spacing_fraction > 0.0) {
            return bad("eval thresholds must be positive");
        }
        Ok(())
    }

    pub fn hypothesis_params(&self) -> HypothesisParams {
        HypothesisParams { tau_overlap: self.hypothesis.tau_overlap, min_curve_edgels: self.hypothesis.min_curve_edgels }
    }

    pub fn view_pair_strategy(&self) -> ViewPairStrategy {
        match self.hypothesis.baseline_window {
            0 => ViewPairStrategy::Exhaustive,
            w => ViewPairStrategy::BaselineWindow(w),
        }
    }

    pub fn verification_params(&self) -> VerificationParams {
        let v = &self.verification;
        VerificationParams {
            delta_d: v.delta_d,
            delta_theta: v.delta_theta_deg.to_radians(),
            tau_v: v.tau_v,
            n_min_views: v.n_min_views,
            min_run: v.min_run,
            reliability_floor: v.reliability_floor,
            tangent_window: v.tangent_window,
        }
    }
}
