use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_linear_rate, resolve_epsilon, Table, MAX_EPSILON_HALVINGS};
use crate::error::ExperimentError;
use crate::integrator::{InitialData, Stepper, StepperConfig};
use crate::nonlinearity::NonlinearitySpec;
use crate::operator::{BlockOperator, PhaseVector};

/// Steps two trajectories on the same grid, calling `observe(t, ζ¹, ζ²)` at every
/// recorded time including `t = 0`.
pub(crate) fn paired_run<F>(
    op: &BlockOperator,
    spec: &NonlinearitySpec,
    cfg: &StepperConfig,
    z1: &PhaseVector,
    z2: &PhaseVector,
    mut observe: F,
) -> Result<(), ExperimentError>
where
    F: FnMut(f64, &PhaseVector, &PhaseVector),
{
    let mut s1 = Stepper::new(op, spec, cfg)?;
    let mut s2 = Stepper::new(op, spec, cfg)?;
    let (steps, last) = cfg.grid();
    let (mut a, mut b) = (z1.clone(), z2.clone());
    observe(0.0, &a, &b);
    for k in 1..=steps {
        let dt = if k == steps { last } else { cfg.dt };
        let t0 = (k - 1) as f64 * cfg.dt;
        let t1 = if k == steps {
            cfg.t_final
        } else {
            k as f64 * cfg.dt
        };
        a = s1.step(&a, dt, t0)?.0;
        b = s2.step(&b, dt, t0)?.0;
        observe(t1, &a, &b);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub alpha: f64,
    pub omega: f64,
    pub times: Vec<f64>,
    /// `‖ζ¹ − ζ²‖²_{H_0}`
    pub dist_sq: Vec<f64>,
    /// `I(t)` evaluated on the difference.
    pub multiplier: Vec<f64>,
    /// `‖u¹ − u²‖²_{L²(Ω)} + ‖u¹ − u²‖²_{L²(Γ)}`
    pub l2_sq: Vec<f64>,
    pub epsilon: f64,
    pub epsilon_halvings: usize,
    pub sandwich_ok: bool,
    /// Rate `ε̂` in the integrated inequality; equal to the accepted ε.
    pub rate: f64,
    /// Smallest `Ĉ` making the integrated inequality hold at every recorded time.
    pub c_hat: f64,
    /// `−d/dt ln ‖ζ¹ − ζ²‖` fitted on the second half of the horizon.
    pub decay_rate: Option<f64>,
    pub passed: bool,
}

impl ContractionReport {
    /// `L = ½‖d‖² + εI` at every recorded time.
    pub fn lyapunov(&self) -> Vec<f64> {
        self.dist_sq
            .iter()
            .zip(&self.multiplier)
            .map(|(d, i)| 0.5 * d + self.epsilon * i)
            .collect()
    }

    pub fn series(&self) -> Table {
        let mut t = Table::new(&["t", "dist_sq", "E", "I", "L", "l2_sq"]);
        for (k, l) in self.lyapunov().into_iter().enumerate() {
            t.push(vec![
                self.times[k],
                self.dist_sq[k],
                0.5 * self.dist_sq[k],
                self.multiplier[k],
                l,
                self.l2_sq[k],
            ]);
        }
        t
    }
}

fn sandwich_holds(dist_sq: &[f64], multiplier: &[f64], eps: f64, omega: f64) -> bool {
    dist_sq.iter().zip(multiplier).all(|(d, i)| {
        let l = 0.5 * d + eps * i;
        let slack = 1e-12 * d.max(f64::MIN_POSITIVE);
        0.25 * d <= l + slack && l <= (1.0 + omega) * d + slack
    })
}

/// Runs `ζ¹`, `ζ²` in lock-step and checks the `L` sandwich and the integrated
/// difference inequality.
pub fn contraction_probe(
    op: &BlockOperator,
    spec: &NonlinearitySpec,
    cfg: &StepperConfig,
    z01: &PhaseVector,
    z02: &PhaseVector,
    epsilon: Option<f64>,
) -> Result<ContractionReport, ExperimentError> {
    let eps0 = resolve_epsilon(epsilon, spec, op.omega)?;
    let fem = op.fem();
    let (alpha, omega) = (op.alpha, op.omega);
    let mut times = Vec::new();
    let mut dist_sq = Vec::new();
    let mut multiplier = Vec::new();
    let mut l2_sq = Vec::new();
    paired_run(op, spec, cfg, z01, z02, |t, a, b| {
        let d = a.sub(b);
        let mo = fem.mass_omega.quad(&d.u);
        let mg = fem.mass_gamma.quad(&d.u);
        let i = 0.5 * omega * fem.stiff_omega.quad(&d.u)
            + 0.5 * alpha * omega * fem.stiff_gamma.quad(&d.u)
            + mo
            + mg
            + fem.mass_omega.bilinear(&d.v, &d.u)
            + fem.mass_gamma.bilinear(&d.v, &d.u);
        times.push(t);
        dist_sq.push(op.weights().h0_norm_sq(&d));
        multiplier.push(i);
        l2_sq.push(mo + mg);
    })?;

    let mut eps = eps0;
    let mut halvings = 0;
    while !sandwich_holds(&dist_sq, &multiplier, eps, omega) {
        if halvings == MAX_EPSILON_HALVINGS {
            return Err(ExperimentError::SandwichViolated(halvings));
        }
        eps /= 2.0;
        halvings += 1;
    }

    let d0 = dist_sq[0];
    let mut sup_l2 = 0.0f64;
    let mut c_hat = 0.0f64;
    for k in 0..times.len() {
        sup_l2 = sup_l2.max(l2_sq[k]);
        let bound = (-eps * times[k]).exp() * d0 + times[k] * sup_l2;
        if bound > 0.0 {
            c_hat = c_hat.max(dist_sq[k] / bound);
        } else if dist_sq[k] > 0.0 {
            c_hat = f64::INFINITY;
        }
    }
    let half = cfg.t_final / 2.0;
    let (lt, ld): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&dist_sq)
        .filter(|(t, _)| **t >= half)
        .map(|(t, d)| (*t, d.sqrt()))
        .unzip();
    let decay_rate = log_linear_rate(&lt, &ld).map(|s| -s);
    Ok(ContractionReport {
        alpha,
        omega,
        times,
        dist_sq,
        multiplier,
        l2_sq,
        epsilon: eps,
        epsilon_halvings: halvings,
        sandwich_ok: true,
        rate: eps,
        c_hat,
        decay_rate,
        passed: c_hat.is_finite() && eps > 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationConfig {
    pub radii: Vec<f64>,
    pub seed: u64,
    /// `H_0` size of the perturbation relative to the radius.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "default_modes")]
    pub modes: usize,
}

fn default_perturbation() -> f64 {
    1e-3
}

fn default_modes() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRun {
    pub radius: f64,
    pub times: Vec<f64>,
    pub separation: Vec<f64>,
    /// `‖ζ¹(t)‖_{H_0}`
    pub norm: Vec<f64>,
    /// `max(0, sup_{t>0} ln(‖d(t)‖/‖d(0)‖)/t)`
    pub growth_rate: f64,
    pub envelope_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub runs: Vec<SeparationRun>,
    /// Largest separation when both trajectories start from the same data.
    pub identical_separation: f64,
    /// Growth rate nondecreasing in the radius. Reported only.
    pub rate_monotone: bool,
    /// `sup_t ‖ζ(t)‖` nondecreasing in the radius. Reported only.
    pub bound_monotone: bool,
    pub passed: bool,
}

impl SeparationReport {
    pub fn series(&self) -> Table {
        let mut t = Table::new(&["radius", "t", "separation", "norm"]);
        for run in &self.runs {
            for k in 0..run.times.len() {
                t.push(vec![
                    run.radius,
                    run.times[k],
                    run.separation[k],
                    run.norm[k],
                ]);
            }
        }
        t
    }
}

/// Separation of perturbed pairs on a grid of radii against `‖d(0)‖e^{Ĉt}`.
pub fn separation_envelope(
    op: &BlockOperator,
    spec: &NonlinearitySpec,
    cfg: &StepperConfig,
    sep: &SeparationConfig,
) -> Result<SeparationReport, ExperimentError> {
    if sep.radii.is_empty() || sep.radii.iter().any(|r| !(*r > 0.0)) || !(sep.perturbation > 0.0) {
        return Err(ExperimentError::InvalidConfig(
            "radii must be positive and nonempty, perturbation positive".into(),
        ));
    }
    let data = |seed: u64, radius: f64| {
        InitialData::RandomSmooth {
            seed,
            modes: sep.modes,
            decay: 2.0,
            radius,
        }
        .generate(op)
    };
    let runs = sep
        .radii
        .par_iter()
        .map(|&radius| -> Result<SeparationRun, ExperimentError> {
            let z1 = data(sep.seed, radius)?;
            let z2 = z1.add(&data(sep.seed.wrapping_add(1), radius * sep.perturbation)?);
            let mut times = Vec::new();
            let mut separation = Vec::new();
            let mut norm = Vec::new();
            paired_run(op, spec, cfg, &z1, &z2, |t, a, b| {
                times.push(t);
                separation.push(op.h0_norm(&a.sub(b)));
                norm.push(op.h0_norm(a));
            })?;
            let d0 = separation[0];
            let growth_rate = times
                .iter()
                .zip(&separation)
                .skip(1)
                .map(|(t, d)| (d / d0).ln() / t)
                .fold(0.0f64, f64::max);
            let envelope_ok = times
                .iter()
                .zip(&separation)
                .all(|(t, d)| (d / d0).ln() <= growth_rate * t + 1e-12);
            Ok(SeparationRun {
                radius,
                times,
                separation,
                norm,
                growth_rate,
                envelope_ok,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let z = data(sep.seed, sep.radii[0])?;
    let mut identical_separation = 0.0f64;
    paired_run(op, spec, cfg, &z, &z, |_, a, b| {
        identical_separation = identical_separation.max(a.sub(b).max_abs());
    })?;

    let mut order: Vec<&SeparationRun> = runs.iter().collect();
    order.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    let rate_monotone = order
        .windows(2)
        .all(|w| w[0].growth_rate <= w[1].growth_rate);
    let sup = |r: &SeparationRun| r.norm.iter().fold(0.0f64, |m, n| m.max(*n));
    let bound_monotone = order.windows(2).all(|w| sup(w[0]) <= sup(w[1]));
    let passed = identical_separation == 0.0
        && runs
            .iter()
            .all(|r| r.envelope_ok && r.growth_rate >= 0.0 && r.growth_rate.is_finite());
    Ok(SeparationReport {
        runs,
        identical_separation,
        rate_monotone,
        bound_monotone,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble, build_disk_mesh};
    use std::sync::Arc;

    fn op() -> BlockOperator {
        let fem = Arc::new(assemble(&build_disk_mesh(2, 8).unwrap()).unwrap());
        BlockOperator::new(fem, 1.0, 1.0).unwrap()
    }

    fn data(op: &BlockOperator, seed: u64, radius: f64) -> PhaseVector {
        InitialData::RandomSmooth {
            seed,
            modes: 3,
            decay: 2.0,
            radius,
        }
        .generate(op)
        .unwrap()
    }

    #[test]
    fn identical_data_vanish() {
        let op = op();
        let z = data(&op, 3, 2.0);
        let r = contraction_probe(
            &op,
            &NonlinearitySpec::sine_gordon(),
            &StepperConfig::new(0.05, 1.0),
            &z,
            &z,
            None,
        )
        .unwrap();
        assert!(r.dist_sq.iter().chain(&r.multiplier).all(|x| *x == 0.0));
        assert!(r.lyapunov().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn linear_pairs_decay_exponentially() {
        let op = op();
        let r = contraction_probe(
            &op,
            &NonlinearitySpec::linear(),
            &StepperConfig::new(0.05, 10.0),
            &data(&op, 1, 2.0),
            &data(&op, 2, 2.0),
            None,
        )
        .unwrap();
        assert!(r.sandwich_ok && r.passed);
        assert!(r.decay_rate.unwrap() > 0.0, "{:?}", r.decay_rate);
    }

    #[test]
    fn sine_gordon_sandwich() {
        let op = op();
        let r = contraction_probe(
            &op,
            &NonlinearitySpec::sine_gordon(),
            &StepperConfig::new(0.05, 5.0),
            &data(&op, 1, 3.0),
            &data(&op, 2, 3.0),
            None,
        )
        .unwrap();
        assert!(r.passed && r.c_hat >= 1.0);
    }

    #[test]
    fn separation_envelope_holds() {
        let op = op();
        let sep = SeparationConfig {
            radii: vec![1.0, 4.0],
            seed: 5,
            perturbation: 1e-3,
            modes: 3,
        };
        let r = separation_envelope(
            &op,
            &NonlinearitySpec::sine_gordon(),
            &StepperConfig::new(0.05, 2.0),
            &sep,
        )
        .unwrap();
        assert!(
            r.passed,
            "{:?}",
            r.runs.iter().map(|x| x.growth_rate).collect::<Vec<_>>()
        );
        assert_eq!(r.identical_separation, 0.0);
    }
}
