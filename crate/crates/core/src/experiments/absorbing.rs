use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{resolve_epsilon, Table, MAX_EPSILON_HALVINGS};
use crate::error::ExperimentError;
use crate::geometry::FemMatrices;
use crate::integrator::{evolve_with, InitialData, Stepper, StepperConfig};
use crate::nonlinearity::{validate_assumptions, NonlinearitySpec, SamplingOptions};
use crate::operator::BlockOperator;
use crate::sparse::CsrMatrix;

/// Relative slack allowed on the ball radius after entry.
pub const INVARIANCE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorbingConfig {
    pub alphas: Vec<f64>,
    pub omega: f64,
    /// `H_0` radii of the initial data.
    pub radii: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Lower bound on the forcing constant per unit measure, used when the
    /// sampled pairing constants vanish (any positive radius is then absorbing).
    #[serde(default = "default_forcing_floor")]
    pub forcing_floor: f64,
    /// Fixed ball radius instead of the one built from the fitted constants.
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingRun {
    pub alpha: f64,
    pub radius: f64,
    pub times: Vec<f64>,
    pub h0_norm_sq: Vec<f64>,
    pub energy: Vec<f64>,
    /// `vᵀ(M_Ω + M_Γ)u`
    pub cross: Vec<f64>,
    pub h1_bulk: Vec<f64>,
    pub h1_surf: Vec<f64>,
    pub entry_time: Option<f64>,
    pub invariant: bool,
    pub max_norm: f64,
    /// Largest norm on the second half of the horizon.
    pub late_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingReport {
    pub runs: Vec<AbsorbingRun>,
    pub epsilon: f64,
    pub epsilon_halvings: usize,
    /// Integrated constants `c₁|Ω|, c₂|Ω|, c₃|Γ|, c₄|Γ|`.
    pub c_integrated: [f64; 4],
    /// `inf (Ψ + 2c₂|Ω| + 2c₄|Γ|)/‖ζ‖²` per α, over the recorded nonzero states.
    pub c1_hat: Vec<f64>,
    /// `sup Ψ / (‖ζ‖² + ‖u‖⁶ + ‖u‖ + ‖u|_Γ‖^{ρ+1} + ‖u|_Γ‖)` per α.
    pub c2_hat: Vec<f64>,
    /// Coefficient in `Ψ' + ν₁‖ζ‖² ≤ C`: `min(3/2 − ε, ε(1 − ε), ε·m₁)`.
    pub nu1: f64,
    /// `C = ε(c₁|Ω| + c₃|Γ|)`, floored.
    pub forcing: f64,
    /// `√(2C/ν₁)`: beyond this radius Ψ decreases.
    pub r_star: f64,
    /// Ball radius per α, in the order of `alphas`.
    pub r0_by_alpha: Vec<f64>,
    pub r0: f64,
    /// `(max − min)/max` of `r0_by_alpha`.
    pub alpha_variation: f64,
    pub all_invariant: bool,
    /// Entry time nondecreasing in the initial radius for every α. Reported only.
    pub entry_monotone: bool,
    pub passed: bool,
}

impl AbsorbingReport {
    /// One row per recorded time of every run.
    pub fn series(&self) -> Table {
        let mut t = Table::new(&[
            "alpha",
            "radius",
            "t",
            "h0_norm_sq",
            "energy",
            "cross",
            "h1_bulk",
            "h1_surf",
            "psi",
        ]);
        for run in &self.runs {
            for k in 0..run.times.len() {
                t.push(vec![
                    run.alpha,
                    run.radius,
                    run.times[k],
                    run.h0_norm_sq[k],
                    run.energy[k],
                    run.cross[k],
                    run.h1_bulk[k],
                    run.h1_surf[k],
                    run.energy[k] + self.epsilon * run.cross[k],
                ]);
            }
        }
        t
    }
}

fn run_one(
    fem: &Arc<FemMatrices>,
    spec: &NonlinearitySpec,
    stepper_cfg: &StepperConfig,
    cfg: &AbsorbingConfig,
    alpha: f64,
    radius: f64,
) -> Result<AbsorbingRun, ExperimentError> {
    let op = BlockOperator::new(fem.clone(), alpha, cfg.omega)?;
    let z0 = InitialData::RandomSmooth {
        seed: cfg.seed,
        modes: cfg.modes,
        decay: cfg.decay,
        radius,
    }
    .generate(&op)?;
    let bulk = CsrMatrix::linear_combination(&[(1.0, &fem.stiff_omega), (1.0, &fem.mass_omega)]);
    let surf = CsrMatrix::linear_combination(&[(1.0, &fem.stiff_gamma), (1.0, &fem.mass_gamma)]);
    let mass = op.mass().clone();

    let mut cross = vec![mass.bilinear(&z0.v, &z0.u)];
    let mut h1_bulk = vec![bulk.quad(&z0.u).max(0.0).sqrt()];
    let mut h1_surf = vec![surf.quad(&z0.u).max(0.0).sqrt()];
    let mut quiet = stepper_cfg.clone();
    quiet.state_stride = 0;
    let mut stepper = Stepper::new(&op, spec, &quiet)?;
    let rec = evolve_with(&mut stepper, &z0, |_, z, _| {
        cross.push(mass.bilinear(&z.v, &z.u));
        h1_bulk.push(bulk.quad(&z.u).max(0.0).sqrt());
        h1_surf.push(surf.quad(&z.u).max(0.0).sqrt());
    })?;

    let h0_norm_sq: Vec<f64> = rec.h0_norm.iter().map(|n| n * n).collect();
    let half = stepper_cfg.t_final / 2.0;
    let late_max = rec
        .times
        .iter()
        .zip(&rec.h0_norm)
        .filter(|(t, _)| **t >= half)
        .fold(0.0f64, |m, (_, n)| m.max(*n));
    let max_norm = rec.h0_norm.iter().fold(0.0f64, |m, n| m.max(*n));
    Ok(AbsorbingRun {
        alpha,
        radius,
        times: rec.times,
        h0_norm_sq,
        energy: rec.energy,
        cross,
        h1_bulk,
        h1_surf,
        entry_time: None,
        invariant: false,
        max_norm,
        late_max,
    })
}

fn states<'a>(
    runs: &'a [&'a AbsorbingRun],
) -> impl Iterator<Item = (&'a AbsorbingRun, usize)> + 'a {
    runs.iter()
        .flat_map(|r| (0..r.times.len()).map(move |k| (*r, k)))
}

/// Lower sandwich constant for a given ε; `+∞` when every state is zero.
fn lower_constant(runs: &[&AbsorbingRun], eps: f64, shift: f64) -> f64 {
    states(runs)
        .filter(|(r, k)| r.h0_norm_sq[*k] > 0.0)
        .map(|(r, k)| (r.energy[k] + eps * r.cross[k] + shift) / r.h0_norm_sq[k])
        .fold(f64::INFINITY, f64::min)
}

/// `r² + r⁶ + r + r^{ρ+1} + r`, the shape of the upper sandwich bound with both
/// `H¹` norms replaced by the phase-space radius.
fn upper_shape(r: f64, rho: f64) -> f64 {
    r * r + r.powi(6) + 2.0 * r + r.powf(rho + 1.0)
}

fn upper_constant(runs: &[&AbsorbingRun], eps: f64, rho: f64) -> f64 {
    states(runs)
        .filter_map(|(r, k)| {
            let (b, s) = (r.h1_bulk[k], r.h1_surf[k]);
            let ub = r.h0_norm_sq[k] + b.powi(6) + b + s.powf(rho + 1.0) + s;
            (ub > 0.0).then(|| (r.energy[k] + eps * r.cross[k]) / ub)
        })
        .fold(0.0f64, f64::max)
}

/// Evolves every (α, radius) pair from seeded smooth data, fits both sides of the
/// Ψ sandwich, builds the absorbing radius from the dissipative inequality
/// `Ψ' + ν₁‖ζ‖² ≤ C`, and checks entry into and invariance of that ball.
pub fn absorbing_set_probe(
    fem: Arc<FemMatrices>,
    spec: &NonlinearitySpec,
    stepper: &StepperConfig,
    cfg: &AbsorbingConfig,
) -> Result<AbsorbingReport, ExperimentError> {
    if cfg.alphas.is_empty() || cfg.radii.is_empty() {
        return Err(ExperimentError::InvalidConfig(
            "alphas and radii must be nonempty".into(),
        ));
    }
    if cfg.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) || cfg.radii.iter().any(|r| !(*r >= 0.0))
    {
        return Err(ExperimentError::InvalidConfig(
            "need alpha in [0, 1] and radius >= 0".into(),
        ));
    }
    if !(cfg.forcing_floor > 0.0) || !(cfg.omega > 0.0 && cfg.omega <= 1.0) {
        return Err(ExperimentError::InvalidConfig(
            "need forcing_floor > 0 and omega in (0, 1]".into(),
        ));
    }
    spec.validate()?;
    stepper.validate()?;
    let eps0 = resolve_epsilon(cfg.epsilon, spec, cfg.omega)?;

    let pairs: Vec<(f64, f64)> = cfg
        .alphas
        .iter()
        .flat_map(|a| cfg.radii.iter().map(move |r| (*a, *r)))
        .collect();
    let mut runs = pairs
        .par_iter()
        .map(|(a, r)| run_one(&fem, spec, stepper, cfg, *a, *r))
        .collect::<Result<Vec<_>, _>>()?;

    let assumptions = validate_assumptions(spec, &SamplingOptions::default());
    let c_integrated = [
        assumptions.c1 * fem.area,
        assumptions.c2 * fem.area,
        assumptions.c3 * fem.perimeter,
        assumptions.c4 * fem.perimeter,
    ];
    let shift = 2.0 * c_integrated[1] + 2.0 * c_integrated[3];
    let by_alpha: Vec<Vec<&AbsorbingRun>> = cfg
        .alphas
        .iter()
        .map(|a| runs.iter().filter(|r| r.alpha == *a).collect())
        .collect();

    let mut eps = eps0;
    let mut halvings = 0;
    let c1_hat = loop {
        let c: Vec<f64> = by_alpha
            .iter()
            .map(|rs| lower_constant(rs, eps, shift))
            .collect();
        if c.iter().all(|x| *x > 0.0) {
            break c;
        }
        if halvings == MAX_EPSILON_HALVINGS {
            return Err(ExperimentError::SandwichViolated(halvings));
        }
        eps /= 2.0;
        halvings += 1;
    };
    let c2_hat: Vec<f64> = by_alpha
        .iter()
        .map(|rs| upper_constant(rs, eps, spec.rho))
        .collect();

    let m1 = assumptions.mu1_hat.min(assumptions.mu2_hat) - 2.0 * eps / cfg.omega;
    if !(m1 > 0.0) {
        return Err(ExperimentError::InvalidConfig(format!(
            "epsilon = {eps} leaves no sign margin (m1 = {m1})"
        )));
    }
    let nu1 = (1.5 - eps).min(eps * (1.0 - eps)).min(eps * m1);
    let forcing = (eps * (c_integrated[0] + c_integrated[2]))
        .max(eps * cfg.forcing_floor * (fem.area + fem.perimeter));
    let r_star = (2.0 * forcing / nu1).sqrt();
    let shape = upper_shape(r_star, spec.rho);
    let r0_by_alpha: Vec<f64> = c1_hat
        .iter()
        .zip(&c2_hat)
        .map(|(lo, hi)| {
            let psi_max = hi * shape;
            // the ball must at least contain the region where Ψ may still grow
            ((psi_max + shift) / lo).sqrt().max(r_star)
        })
        .collect();
    let rmax = r0_by_alpha.iter().fold(0.0f64, |m, r| m.max(*r));
    let rmin = r0_by_alpha.iter().fold(f64::INFINITY, |m, r| m.min(*r));
    let alpha_variation = if rmax > 0.0 {
        (rmax - rmin) / rmax
    } else {
        0.0
    };
    let r0 = cfg.r0.unwrap_or(rmax);

    let limit = r0 * (1.0 + INVARIANCE_SLACK);
    for run in &mut runs {
        let entry = run.h0_norm_sq.iter().position(|n2| n2.sqrt() <= r0);
        run.entry_time = entry.map(|k| run.times[k]);
        run.invariant =
            entry.is_some_and(|k| run.h0_norm_sq[k..].iter().all(|n2| n2.sqrt() <= limit));
    }
    if let Some(worst) = runs
        .iter()
        .filter(|r| r.entry_time.is_none())
        .map(|r| r.max_norm)
        .reduce(f64::max)
    {
        return Err(ExperimentError::NoEntry(worst));
    }

    let entry_monotone = cfg.alphas.iter().all(|a| {
        let mut by_radius: Vec<(f64, f64)> = runs
            .iter()
            .filter(|r| r.alpha == *a)
            .map(|r| (r.radius, r.entry_time.unwrap_or(f64::INFINITY)))
            .collect();
        by_radius.sort_by(|x, y| x.0.total_cmp(&y.0));
        by_radius.windows(2).all(|w| w[0].1 <= w[1].1)
    });
    let all_invariant = runs.iter().all(|r| r.invariant);
    let passed = all_invariant && alpha_variation < 0.1 && c2_hat.iter().all(|c| c.is_finite());
    Ok(AbsorbingReport {
        runs,
        epsilon: eps,
        epsilon_halvings: halvings,
        c_integrated,
        c1_hat,
        c2_hat,
        nu1,
        forcing,
        r_star,
        r0_by_alpha,
        r0,
        alpha_variation,
        all_invariant,
        entry_monotone,
        passed,
    })
}
