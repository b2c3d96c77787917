use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::integrator::{InitialData, StepperConfig};
use crate::nonlinearity::NonlinearitySpec;
use crate::operator::NormMethod;

/// One run: mesh, operator, nonlinearity, stepper and the section of the chosen subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory name under the output root; defaults to the subcommand.
    #[serde(default)]
    pub name: Option<String>,
    /// Seeds every random draw of the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default = "NonlinearitySpec::linear")]
    pub nonlinearity: NonlinearitySpec,
    #[serde(default)]
    pub stepper: Option<StepperConfig>,
    /// Defaults to smooth random data of unit `H_0` norm drawn from `seed`.
    #[serde(default)]
    pub initial: Option<InitialData>,
    #[serde(default)]
    pub resolvent: Option<ResolventSection>,
    #[serde(default)]
    pub semigroup: Option<SemigroupSection>,
    #[serde(default)]
    pub fractional: Option<FractionalSection>,
    #[serde(default)]
    pub sampling: Option<SamplingSection>,
    #[serde(default)]
    pub absorb: Option<AbsorbSection>,
    #[serde(default)]
    pub contract: Option<PairSection>,
    #[serde(default)]
    pub usc: Option<UscSection>,
    #[serde(default)]
    pub decompose: Option<PairSection>,
    #[serde(default)]
    pub dimension: Option<DimensionSection>,
    #[serde(default)]
    pub transitivity: Option<TransitivitySection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n_r: usize,
    pub n_theta: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            n_r: 4,
            n_theta: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub alpha: f64,
    pub omega: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            omega: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventSection {
    pub beta_min: f64,
    pub beta_max: f64,
    pub points: usize,
    /// Fit window; the whole grid when absent.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default)]
    pub method: NormMethod,
    /// When set, the run passes only if the fitted slope is within `slope_tolerance`.
    #[serde(default)]
    pub expected_slope: Option<f64>,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
}

fn default_slope_tolerance() -> f64 {
    0.15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupSection {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionalSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Relative tolerance of the half-power composition against `(−A)⁻¹`.
    #[serde(default = "default_composition_tol")]
    pub composition_tol: f64,
    #[serde(default = "default_bound_tol")]
    pub bound_tol: f64,
}

impl Default for FractionalSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            lambdas: default_lambdas(),
            composition_tol: default_composition_tol(),
            bound_tol: default_bound_tol(),
        }
    }
}

fn default_samples() -> usize {
    5
}
fn default_lambdas() -> Vec<f64> {
    vec![1.0, 10.0, 100.0]
}
fn default_composition_tol() -> f64 {
    1e-5
}
fn default_bound_tol() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub s0: f64,
    pub s1: f64,
    pub n_samples: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            s0: 10.0,
            s1: 1e4,
            n_samples: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorbSection {
    pub alphas: Vec<f64>,
    pub radii: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_forcing_floor")]
    pub forcing_floor: f64,
    #[serde(default)]
    pub r0: Option<f64>,
}

fn default_modes() -> usize {
    4
}
fn default_decay() -> f64 {
    2.0
}
fn default_forcing_floor() -> f64 {
    1e-3
}

/// Two trajectories: `[initial]` and `second`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSection {
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Defaults to smooth random data drawn from `seed + 1` with the norm of the first datum.
    #[serde(default)]
    pub second: Option<InitialData>,
    /// Radii for the separation envelope; empty skips it.
    #[serde(default)]
    pub separation_radii: Vec<f64>,
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

fn default_perturbation() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UscSection {
    pub alphas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSection {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    /// `H_0` norm of each initial datum.
    pub radius: f64,
    /// Snapshots before this time are discarded.
    pub burn_in: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    #[serde(default = "default_radius_points")]
    pub radius_points: usize,
    #[serde(default)]
    pub projection_dim: Option<usize>,
}

fn default_trajectories() -> usize {
    4
}
fn default_stride() -> usize {
    1
}
fn default_radius_points() -> usize {
    12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitivitySection {
    pub c: f64,
    pub k: f64,
    pub c1: f64,
    pub a1: f64,
    pub c2: f64,
    pub a2: f64,
}
