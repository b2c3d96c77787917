//! Attractor-level probes built on the integrator: absorbing balls,
//! contraction of paired trajectories, continuous dependence, the α → 0 scan,
//! the weak decay decomposition and box counting.

mod absorbing;
mod contraction;
mod decomposition;
mod dimension;
mod usc;

pub use absorbing::{absorbing_set_probe, AbsorbingConfig, AbsorbingReport, AbsorbingRun};
pub use contraction::{
    contraction_probe, separation_envelope, ContractionReport, SeparationConfig, SeparationReport,
    SeparationRun,
};
pub use decomposition::{weak_decomposition_probe, DecompositionReport};
pub use dimension::{box_dimension, embed_hminus1, DimensionReport};
pub use usc::{usc_scan, UscConfig, UscReport};

use serde::{Deserialize, Serialize};

use crate::error::ExperimentError;
use crate::nonlinearity::{
    validate_assumptions, AssumptionReport, NonlinearitySpec, SamplingOptions,
};

/// Halvings of ε tried when a sandwich inequality fails.
pub const MAX_EPSILON_HALVINGS: usize = 4;

/// `0.1·min(1, μ̂₁ω/2, μ̂₂ω/2)` from the sampled sign margins.
pub fn default_epsilon(report: &AssumptionReport, omega: f64) -> Result<f64, ExperimentError> {
    let eps = 0.1
        * 1f64
            .min(report.mu1_hat * omega / 2.0)
            .min(report.mu2_hat * omega / 2.0);
    if eps > 0.0 && eps.is_finite() {
        Ok(eps)
    } else {
        Err(ExperimentError::InvalidConfig(format!(
            "sign margins mu1_hat = {}, mu2_hat = {} give no admissible epsilon; set epsilon explicitly",
            report.mu1_hat, report.mu2_hat
        )))
    }
}

/// The explicit ε if given, otherwise [`default_epsilon`] with default sampling.
pub fn resolve_epsilon(
    epsilon: Option<f64>,
    spec: &NonlinearitySpec,
    omega: f64,
) -> Result<f64, ExperimentError> {
    match epsilon {
        Some(e) if e > 0.0 && e.is_finite() => Ok(e),
        Some(e) => Err(ExperimentError::InvalidConfig(format!(
            "epsilon = {e} must be positive"
        ))),
        None => default_epsilon(
            &validate_assumptions(spec, &SamplingOptions::default()),
            omega,
        ),
    }
}

/// Named columns of equal length.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    /// 17 significant digits, `.` decimal point, `\n` line ends.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Least-squares slope of `ln y` against `t` over the points with `y > 0`.
pub(crate) fn log_linear_rate(t: &[f64], y: &[f64]) -> Option<f64> {
    let (x, ly): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(a, b)| (*a, b.ln()))
        .unzip();
    crate::fit::linear_fit(&x, &ly).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_seventeen_digits() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![0.1, 1.0 / 3.0]);
        let csv = t.to_csv();
        assert_eq!(csv, "a,b\n1.0000000000000001e-1,3.3333333333333331e-1\n");
        let back: f64 = csv
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(back, 1.0 / 3.0);
    }

    #[test]
    fn epsilon_follows_margins() {
        let eps = resolve_epsilon(None, &NonlinearitySpec::linear(), 1.0).unwrap();
        assert!((eps - 0.05).abs() < 1e-15);
        assert!(resolve_epsilon(Some(-1.0), &NonlinearitySpec::linear(), 1.0).is_err());
    }
}
