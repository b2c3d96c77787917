use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use super::config::{FractionalSection, PairSection, RunConfig, SamplingSection};
use super::{classify, json_report, CliError, Outcome, Probe};
use crate::error::ExperimentError;
use crate::experiments::{
    absorbing_set_probe, box_dimension, contraction_probe, embed_hminus1, separation_envelope,
    usc_scan, weak_decomposition_probe, AbsorbingConfig, SeparationConfig, Table, UscConfig,
};
use crate::fit::log_space;
use crate::geometry::{assemble, build_disk_mesh, FemMatrices};
use crate::integrator::{energy_identity_residual, evolve, InitialData, StepperConfig};
use crate::nonlinearity::{validate_assumptions, SamplingOptions};
use crate::operator::{
    fractional_power_apply, resolution_limit, resolvent_scan, semigroup_smoothing_probe,
    transitivity_rate, BlockOperator, FractionalOptions, PhaseVector,
};

/// Level of `β·‖R(iβ)‖` whose last crossing is reported as the resolution limit.
const RESOLUTION_LEVEL: f64 = 3.0;

fn default_initial(seed: u64, radius: f64) -> InitialData {
    InitialData::RandomSmooth {
        seed,
        modes: 4,
        decay: 2.0,
        radius,
    }
}

/// Fills every defaulted section the probe reads, so the manifest echoes what actually ran.
pub(super) fn resolve_defaults(probe: Probe, cfg: &mut RunConfig) {
    let seed = cfg.seed;
    let initial = cfg
        .initial
        .get_or_insert_with(|| default_initial(seed, 1.0))
        .clone();
    let radius = match initial {
        InitialData::RandomSmooth { radius, .. } => radius,
        _ => 1.0,
    };
    let fill = |pair: &mut Option<PairSection>| {
        let p = pair.get_or_insert_with(PairSection::default);
        p.second
            .get_or_insert_with(|| default_initial(seed.wrapping_add(1), radius));
    };
    match probe {
        Probe::FracPowerCheck => {
            cfg.fractional
                .get_or_insert_with(FractionalSection::default);
        }
        Probe::ValidateNonlinearity => {
            cfg.sampling.get_or_insert_with(SamplingSection::default);
        }
        Probe::Contract => fill(&mut cfg.contract),
        Probe::Decompose => fill(&mut cfg.decompose),
        _ => {}
    }
}

fn require<'a, T>(section: &'a Option<T>, name: &str, probe: Probe) -> Result<&'a T, CliError> {
    section
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{} needs a [{name}] section", probe.name())))
}

struct Setup {
    fem: Arc<FemMatrices>,
    op: BlockOperator,
}

fn setup(probe: Probe, cfg: &RunConfig) -> Result<Setup, CliError> {
    cfg.nonlinearity
        .validate()
        .map_err(|e| classify(probe, e))?;
    let mesh = build_disk_mesh(cfg.mesh.n_r, cfg.mesh.n_theta).map_err(|e| classify(probe, e))?;
    let fem = Arc::new(assemble(&mesh).map_err(|e| classify(probe, e))?);
    let op = BlockOperator::new(fem.clone(), cfg.operator.alpha, cfg.operator.omega)
        .map_err(|e| classify(probe, e))?;
    Ok(Setup { fem, op })
}

fn initial(probe: Probe, cfg: &RunConfig, op: &BlockOperator) -> Result<PhaseVector, CliError> {
    let data = cfg.initial.as_ref().expect("defaults resolved");
    data.generate(op).map_err(|e| classify(probe, e))
}

fn second(probe: Probe, pair: &PairSection, op: &BlockOperator) -> Result<PhaseVector, CliError> {
    let data = pair.second.as_ref().expect("defaults resolved");
    data.generate(op).map_err(|e| classify(probe, e))
}

pub(super) fn dispatch(probe: Probe, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match probe {
        Probe::Simulate => simulate(cfg),
        Probe::ResolventScan => resolvent(cfg),
        Probe::SemigroupProbe => semigroup(cfg),
        Probe::FracPowerCheck => fractional(cfg),
        Probe::ValidateNonlinearity => nonlinearity(cfg),
        Probe::Absorb => absorb(cfg),
        Probe::Contract => contract(cfg),
        Probe::UscScan => usc(cfg),
        Probe::Decompose => decompose(cfg),
        Probe::Dimension => dimension(cfg),
        Probe::Transitivity => transitivity(cfg),
    }
}

fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::Simulate;
    let stepper = require(&cfg.stepper, "stepper", p)?;
    let s = setup(p, cfg)?;
    let z0 = initial(p, cfg, &s.op)?;
    let traj = evolve(&z0, stepper, &cfg.nonlinearity, &s.op).map_err(|e| classify(p, e))?;

    let mut state = Table::new(&["x", "y", "u", "v"]);
    for (i, node) in s.fem.nodes.iter().enumerate() {
        state.push(vec![
            node[0],
            node[1],
            traj.final_state.u[i],
            traj.final_state.v[i],
        ]);
    }
    let max_residual = energy_identity_residual(&traj)
        .iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    let summary = json!({
        "steps": traj.len() - 1,
        "t_final": traj.times.last(),
        "energy_initial": traj.energy.first(),
        "energy_final": traj.energy.last(),
        "max_energy_residual": max_residual,
        "halvings": traj.halvings.iter().sum::<usize>(),
        "max_newton_iterations": traj.newton_iterations.iter().max(),
    });
    Ok(Outcome {
        passed: true,
        files: vec![
            ("trajectory.csv".into(), traj.to_csv()),
            ("final_state.csv".into(), state.to_csv()),
            ("report.json".into(), json_report(p, true, &summary)),
        ],
        summary,
    })
}

fn resolvent(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::ResolventScan;
    let sec = require(&cfg.resolvent, "resolvent", p)?;
    if !(sec.beta_min > 0.0 && sec.beta_max > sec.beta_min) || sec.points < 4 {
        return Err(CliError::Config(
            "resolvent grid needs 0 < beta_min < beta_max and at least 4 points".into(),
        ));
    }
    let s = setup(p, cfg)?;
    let grid = log_space(sec.beta_min, sec.beta_max, sec.points);
    let window = sec.window.unwrap_or((grid[0], grid[grid.len() - 1]));
    let scan = resolvent_scan(&s.op, &grid, window, sec.method).map_err(|e| classify(p, e))?;
    let limit = resolution_limit(&scan.grid, &scan.values, RESOLUTION_LEVEL);
    let passed = sec
        .expected_slope
        .is_none_or(|e| (scan.fitted_slope - e).abs() <= sec.slope_tolerance);

    let mut t = Table::new(&["beta", "resolvent_norm"]);
    for (b, v) in scan.grid.iter().zip(&scan.values) {
        t.push(vec![*b, *v]);
    }
    let summary = json!({
        "fitted_slope": scan.fitted_slope,
        "fitted_constant": scan.fitted_constant,
        "window": scan.window,
        "resolution_limit": limit,
        "expected_slope": sec.expected_slope,
    });
    let report =
        json!({ "scan": scan, "resolution_limit": limit, "resolution_level": RESOLUTION_LEVEL });
    Ok(Outcome {
        passed,
        files: vec![
            ("resolvent.csv".into(), t.to_csv()),
            ("report.json".into(), json_report(p, passed, &report)),
        ],
        summary,
    })
}

fn semigroup(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::SemigroupProbe;
    let sec = require(&cfg.semigroup, "semigroup", p)?;
    if !(sec.t_min > 0.0 && sec.t_max > sec.t_min) {
        return Err(CliError::Config(
            "semigroup grid needs 0 < t_min < t_max".into(),
        ));
    }
    let s = setup(p, cfg)?;
    let grid = log_space(sec.t_min, sec.t_max, sec.points);
    let r = semigroup_smoothing_probe(&s.op, &grid).map_err(|e| classify(p, e))?;
    let passed = r.sup_weighted.is_finite();
    let mut t = Table::new(&["t", "weighted_norm", "semigroup_norm"]);
    for k in 0..grid.len() {
        t.push(vec![grid[k], r.scan.values[k], r.semigroup_norms[k]]);
    }
    let summary = json!({ "gamma": r.gamma, "sup_weighted": r.sup_weighted, "fitted_slope": r.scan.fitted_slope });
    Ok(Outcome {
        passed,
        files: vec![
            ("semigroup.csv".into(), t.to_csv()),
            ("report.json".into(), json_report(p, passed, &r)),
        ],
        summary,
    })
}

fn fractional(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::FracPowerCheck;
    let sec = cfg.fractional.as_ref().expect("defaults resolved");
    if sec.samples == 0 || sec.lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(CliError::Config(
            "fractional needs samples >= 1 and positive lambdas".into(),
        ));
    }
    let s = setup(p, cfg)?;
    let opts = FractionalOptions::default();
    let mut t = Table::new(&["sample", "lambda", "composition_error", "bound_ratio"]);
    let mut worst_composition = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for k in 0..sec.samples {
        let z = default_initial(cfg.seed.wrapping_add(k as u64), 1.0)
            .generate(&s.op)
            .map_err(|e| classify(p, e))?;
        let half = fractional_power_apply(&s.op, 0.5, &z, &opts).map_err(|e| classify(p, e))?;
        let twice = fractional_power_apply(&s.op, 0.5, &half, &opts).map_err(|e| classify(p, e))?;
        let inv = s.op.neg_inverse_apply(&z).map_err(|e| classify(p, e))?;
        let err = s.op.h0_norm(&twice.sub(&inv)) / s.op.h0_norm(&inv);
        worst_composition = worst_composition.max(err);
        for &lambda in &sec.lambdas {
            let y =
                s.op.resolvent_apply_real(lambda, &z)
                    .map_err(|e| classify(p, e))?;
            let ratio = lambda * s.fem.mass_omega.quad(&y.v).sqrt() / s.op.h0_norm(&z);
            worst_ratio = worst_ratio.max(ratio);
            t.push(vec![k as f64, lambda, err, ratio]);
        }
    }
    let passed = worst_composition <= sec.composition_tol && worst_ratio <= 1.0 + sec.bound_tol;
    let summary = json!({
        "worst_composition_error": worst_composition,
        "worst_bound_ratio": worst_ratio,
        "composition_tol": sec.composition_tol,
        "bound_tol": sec.bound_tol,
    });
    Ok(Outcome {
        passed,
        files: vec![
            ("fractional.csv".into(), t.to_csv()),
            ("report.json".into(), json_report(p, passed, &summary)),
        ],
        summary,
    })
}

fn nonlinearity(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::ValidateNonlinearity;
    let sec = cfg.sampling.as_ref().expect("defaults resolved");
    if !(sec.s0 > 0.0 && sec.s1 > sec.s0) || sec.n_samples == 0 {
        return Err(CliError::Config(
            "sampling needs 0 < s0 < s1 and n_samples >= 1".into(),
        ));
    }
    cfg.nonlinearity.validate().map_err(|e| classify(p, e))?;
    let opts = SamplingOptions {
        s0: sec.s0,
        s1: sec.s1,
        n_samples: sec.n_samples,
        seed: cfg.seed,
    };
    let r = validate_assumptions(&cfg.nonlinearity, &opts);
    let passed = r.sign_ok_f && r.sign_ok_g && r.growth_ok_f && r.growth_ok_g;
    let flag = |b: bool| if b { "1" } else { "0" };
    let mut csv = String::from("term,sign_ok,growth_ok,mu_hat,ell_hat,c_pairing,c_potential\n");
    for (name, t) in [("bulk", &r.bulk), ("boundary", &r.boundary)] {
        csv.push_str(&format!(
            "{name},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            flag(t.sign_ok),
            flag(t.growth_ok),
            t.mu_hat,
            t.ell_hat,
            t.c_pairing,
            t.c_potential
        ));
    }
    let summary = json!({
        "sign_ok": r.sign_ok_f && r.sign_ok_g,
        "growth_ok": r.growth_ok_f && r.growth_ok_g,
        "mu1_hat": r.mu1_hat,
        "mu2_hat": r.mu2_hat,
        "ell1_hat": r.ell1_hat,
        "ell2_hat": r.ell2_hat,
    });
    Ok(Outcome {
        passed,
        files: vec![
            ("nonlinearity.csv".into(), csv),
            ("report.json".into(), json_report(p, passed, &r)),
        ],
        summary,
    })
}

fn absorb(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::Absorb;
    let sec = require(&cfg.absorb, "absorb", p)?;
    let stepper = require(&cfg.stepper, "stepper", p)?;
    let s = setup(p, cfg)?;
    let acfg = AbsorbingConfig {
        alphas: sec.alphas.clone(),
        omega: cfg.operator.omega,
        radii: sec.radii.clone(),
        seed: cfg.seed,
        modes: sec.modes,
        decay: sec.decay,
        epsilon: sec.epsilon,
        forcing_floor: sec.forcing_floor,
        r0: sec.r0,
    };
    let r = absorbing_set_probe(s.fem, &cfg.nonlinearity, stepper, &acfg)
        .map_err(|e| classify(p, e))?;
    let summary = json!({
        "r0": r.r0,
        "r0_by_alpha": r.r0_by_alpha,
        "alpha_variation": r.alpha_variation,
        "all_invariant": r.all_invariant,
        "epsilon": r.epsilon,
    });
    Ok(Outcome {
        passed: r.passed,
        files: vec![
            ("absorbing.csv".into(), r.series().to_csv()),
            ("report.json".into(), json_report(p, r.passed, &r)),
        ],
        summary,
    })
}

fn contract(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::Contract;
    let pair = cfg.contract.as_ref().expect("defaults resolved");
    let stepper = require(&cfg.stepper, "stepper", p)?;
    let s = setup(p, cfg)?;
    let z1 = initial(p, cfg, &s.op)?;
    let z2 = second(p, pair, &s.op)?;
    let c = contraction_probe(&s.op, &cfg.nonlinearity, stepper, &z1, &z2, pair.epsilon)
        .map_err(|e| classify(p, e))?;
    let sep = if pair.separation_radii.is_empty() {
        None
    } else {
        let scfg = SeparationConfig {
            radii: pair.separation_radii.clone(),
            seed: cfg.seed,
            perturbation: pair.perturbation,
            modes: 4,
        };
        Some(
            separation_envelope(&s.op, &cfg.nonlinearity, stepper, &scfg)
                .map_err(|e| classify(p, e))?,
        )
    };
    let passed = c.passed && sep.as_ref().is_none_or(|r| r.passed);
    let mut files = vec![("contraction.csv".to_string(), c.series().to_csv())];
    if let Some(r) = &sep {
        files.push(("separation.csv".into(), r.series().to_csv()));
    }
    let summary = json!({
        "epsilon": c.epsilon,
        "sandwich_ok": c.sandwich_ok,
        "c_hat": c.c_hat,
        "decay_rate": c.decay_rate,
        "growth_rates": sep.as_ref().map(|r| r.runs.iter().map(|x| x.growth_rate).collect::<Vec<_>>()),
    });
    files.push((
        "report.json".into(),
        json_report(p, passed, &json!({ "contraction": c, "separation": sep })),
    ));
    Ok(Outcome {
        passed,
        files,
        summary,
    })
}

fn usc(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::UscScan;
    let sec = require(&cfg.usc, "usc", p)?;
    let stepper = require(&cfg.stepper, "stepper", p)?;
    let s = setup(p, cfg)?;
    let ucfg = UscConfig {
        alphas: sec.alphas.clone(),
        omega: cfg.operator.omega,
        initial: cfg.initial.clone().expect("defaults resolved"),
    };
    let r = usc_scan(s.fem, &cfg.nonlinearity, stepper, &ucfg).map_err(|e| classify(p, e))?;
    let summary =
        json!({ "fitted_slope": r.fitted_slope, "m_hat": r.m_hat, "envelope_ok": r.envelope_ok });
    Ok(Outcome {
        passed: r.passed,
        files: vec![
            ("usc.csv".into(), r.series().to_csv()),
            ("report.json".into(), json_report(p, r.passed, &r)),
        ],
        summary,
    })
}

fn decompose(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::Decompose;
    let pair = cfg.decompose.as_ref().expect("defaults resolved");
    let stepper = require(&cfg.stepper, "stepper", p)?;
    let s = setup(p, cfg)?;
    let z1 = initial(p, cfg, &s.op)?;
    let z2 = second(p, pair, &s.op)?;
    let r = weak_decomposition_probe(&s.op, &cfg.nonlinearity, stepper, &z1, &z2, pair.epsilon)
        .map_err(|e| classify(p, e))?;
    let summary = json!({
        "nu2_transform": r.nu2_transform,
        "nu2_direct": r.nu2_direct,
        "t_star": r.t_star,
        "kappa_hat": r.kappa_hat,
        "lambda_hat": r.lambda_hat,
        "max_residual": r.residual.iter().fold(0.0f64, |m, x| m.max(*x)),
        "residual_limit": r.residual_limit,
    });
    Ok(Outcome {
        passed: r.passed,
        files: vec![
            ("decomposition.csv".into(), r.series().to_csv()),
            ("report.json".into(), json_report(p, r.passed, &r)),
        ],
        summary,
    })
}

fn dimension(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::Dimension;
    let sec = require(&cfg.dimension, "dimension", p)?;
    let stepper = require(&cfg.stepper, "stepper", p)?;
    if sec.trajectories == 0 || sec.stride == 0 || sec.radius_points < 2 {
        return Err(CliError::Config(
            "dimension needs trajectories, stride >= 1 and radius_points >= 2".into(),
        ));
    }
    let s = setup(p, cfg)?;
    let mut sc: StepperConfig = stepper.clone();
    sc.state_stride = sec.stride;
    let runs = (0..sec.trajectories)
        .into_par_iter()
        .map(|k| -> Result<Vec<PhaseVector>, ExperimentError> {
            let z0 =
                default_initial(cfg.seed.wrapping_add(k as u64), sec.radius).generate(&s.op)?;
            let rec = evolve(&z0, &sc, &cfg.nonlinearity, &s.op)?;
            Ok(rec
                .snapshots
                .into_iter()
                .filter(|snap| snap.t >= sec.burn_in)
                .map(|snap| snap.state)
                .collect())
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| classify(p, e))?;
    let states: Vec<PhaseVector> = runs.into_iter().flatten().collect();
    let points = embed_hminus1(&s.op, &states).map_err(|e| classify(p, e))?;
    let radii = log_space(sec.radius_min, sec.radius_max, sec.radius_points);
    let r = box_dimension(&points, sec.projection_dim, &radii).map_err(|e| classify(p, e))?;
    let passed = r.warning.is_none() && r.dimension.is_finite();
    let summary = json!({
        "dimension": r.dimension,
        "points": r.points,
        "window": r.scan.window,
        "heuristic": r.heuristic,
        "warning": r.warning,
    });
    Ok(Outcome {
        passed,
        files: vec![
            ("dimension.csv".into(), r.series().to_csv()),
            ("report.json".into(), json_report(p, passed, &r)),
        ],
        summary,
    })
}

fn transitivity(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = Probe::Transitivity;
    let t = require(&cfg.transitivity, "transitivity", p)?;
    let (c_prime, a_prime) =
        transitivity_rate(t.c, t.k, t.c1, t.a1, t.c2, t.a2).map_err(|e| classify(p, e))?;
    let mut table = Table::new(&["c_prime", "a_prime"]);
    table.push(vec![c_prime, a_prime]);
    let summary = json!({ "c_prime": c_prime, "a_prime": a_prime });
    Ok(Outcome {
        passed: true,
        files: vec![
            ("transitivity.csv".into(), table.to_csv()),
            (
                "report.json".into(),
                json_report(
                    p,
                    true,
                    &json!({ "input": t, "c_prime": c_prime, "a_prime": a_prime }),
                ),
            ),
        ],
        summary,
    })
}
