use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::ExperimentError;
use crate::fit::power_law_fit;
use crate::geometry::FemMatrices;
use crate::integrator::{evolve, InitialData, StepperConfig};
use crate::nonlinearity::NonlinearitySpec;
use crate::operator::BlockOperator;

/// Smallest slope of `log D` against `log α` accepted.
pub const MIN_USC_SLOPE: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UscConfig {
    pub alphas: Vec<f64>,
    pub omega: f64,
    pub initial: InitialData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UscReport {
    pub alphas: Vec<f64>,
    /// `sup_{t≤T} ‖S_α(t)z0 − S_0(t)z0‖_{H_0}`
    pub distance: Vec<f64>,
    /// Below `100·newton_tol·max(1, ‖z0‖)`; left out of the fit.
    pub indistinguishable: Vec<bool>,
    pub fitted_slope: Option<f64>,
    pub fitted_constant: Option<f64>,
    /// `max D(α)/√α` over the fitted points.
    pub m_hat: Option<f64>,
    pub envelope_ok: bool,
    /// `D` nondecreasing in α. Reported only.
    pub monotone: bool,
    pub passed: bool,
}

impl UscReport {
    pub fn series(&self) -> Table {
        let mut t = Table::new(&["alpha", "distance", "indistinguishable"]);
        for k in 0..self.alphas.len() {
            t.push(vec![
                self.alphas[k],
                self.distance[k],
                if self.indistinguishable[k] { 1.0 } else { 0.0 },
            ]);
        }
        t
    }
}

/// Distance of each `S_α` trajectory from the `α = 0` trajectory with the same data and grid.
pub fn usc_scan(
    fem: Arc<FemMatrices>,
    spec: &NonlinearitySpec,
    stepper: &StepperConfig,
    cfg: &UscConfig,
) -> Result<UscReport, ExperimentError> {
    if cfg.alphas.is_empty() || cfg.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(ExperimentError::InvalidConfig(
            "alpha grid must be nonempty and inside [0, 1]".into(),
        ));
    }
    let mut sc = stepper.clone();
    sc.state_stride = 1;
    let base_op = BlockOperator::new(fem.clone(), 0.0, cfg.omega)?;
    let z0 = cfg.initial.generate(&base_op)?;
    let base = evolve(&z0, &sc, spec, &base_op)?;

    let distance = cfg
        .alphas
        .par_iter()
        .map(|&alpha| -> Result<f64, ExperimentError> {
            let op = BlockOperator::new(fem.clone(), alpha, cfg.omega)?;
            let rec = evolve(&z0, &sc, spec, &op)?;
            Ok(rec
                .snapshots
                .iter()
                .zip(&base.snapshots)
                .map(|(a, b)| base_op.h0_norm(&a.state.sub(&b.state)))
                .fold(0.0f64, f64::max))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let floor = 100.0 * stepper.newton_tol * base_op.h0_norm(&z0).max(1.0);
    let indistinguishable: Vec<bool> = distance.iter().map(|d| *d < floor).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = cfg
        .alphas
        .iter()
        .zip(&distance)
        .zip(&indistinguishable)
        .filter(|((a, _), skip)| **a > 0.0 && !**skip)
        .map(|((a, d), _)| (*a, *d))
        .unzip();
    let fit = power_law_fit(&x, &y);
    let m_hat = (!x.is_empty()).then(|| {
        x.iter()
            .zip(&y)
            .map(|(a, d)| d / a.sqrt())
            .fold(0.0f64, f64::max)
    });
    // compared as ratios: √α·(D/√α) can round below D at the maximizing point
    let envelope_ok =
        m_hat.is_some_and(|m| m.is_finite() && x.iter().zip(&y).all(|(a, d)| d / a.sqrt() <= m));

    let mut order: Vec<(f64, f64)> = cfg
        .alphas
        .iter()
        .copied()
        .zip(distance.iter().copied())
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = order.windows(2).all(|w| w[0].1 <= w[1].1);
    let passed = envelope_ok && fit.is_some_and(|(s, _)| s >= MIN_USC_SLOPE);
    Ok(UscReport {
        alphas: cfg.alphas.clone(),
        distance,
        indistinguishable,
        fitted_slope: fit.map(|f| f.0),
        fitted_constant: fit.map(|f| f.1),
        m_hat,
        envelope_ok,
        monotone,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble, build_disk_mesh};

    #[test]
    fn zero_alpha_is_exactly_zero_and_fit_is_positive() {
        let fem = Arc::new(assemble(&build_disk_mesh(3, 12).unwrap()).unwrap());
        let cfg = UscConfig {
            alphas: vec![0.0, 1e-3, 1e-2, 1e-1],
            omega: 1.0,
            initial: InitialData::RandomSmooth {
                seed: 2,
                modes: 3,
                decay: 1.0,
                radius: 2.0,
            },
        };
        let r = usc_scan(
            fem,
            &NonlinearitySpec::sine_gordon(),
            &StepperConfig::new(0.02, 1.0),
            &cfg,
        )
        .unwrap();
        assert_eq!(r.distance[0], 0.0);
        assert!(r.indistinguishable[0]);
        assert!(r.envelope_ok && r.monotone);
        assert!(r.fitted_slope.unwrap() >= MIN_USC_SLOPE, "{r:?}");
    }
}
