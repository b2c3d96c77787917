//! End-to-end acceptance checks. Each test prints one verdict line.

use std::sync::Arc;

use dampwave::dense;
use dampwave::experiments::{
    absorbing_set_probe, contraction_probe, separation_envelope, usc_scan,
    weak_decomposition_probe, AbsorbingConfig, SeparationConfig, UscConfig,
};
use dampwave::fit::{halving_orders, log_space};
use dampwave::geometry::{assemble, build_disk_mesh, FemMatrices};
use dampwave::integrator::{
    energy_identity_residual, evolve, mild_solution_reference, InitialData, MildOptions,
    StepperConfig,
};
use dampwave::nonlinearity::{Family, NonlinearitySpec};
use dampwave::operator::{
    fractional_power_apply, resolution_limit, resolvent_scan, semigroup_smoothing_probe,
    transitivity_rate, BlockOperator, FractionalOptions, NormMethod, PhaseVector, ScanReport,
};
use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!(
        "criterion {id:>2} {name}: {} | {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fem(nr: usize, nt: usize) -> Arc<FemMatrices> {
    Arc::new(assemble(&build_disk_mesh(nr, nt).unwrap()).unwrap())
}

fn smooth(op: &BlockOperator, seed: u64, radius: f64) -> PhaseVector {
    InitialData::RandomSmooth {
        seed,
        modes: 4,
        decay: 2.0,
        radius,
    }
    .generate(op)
    .unwrap()
}

fn klein_gordon() -> NonlinearitySpec {
    let mut spec = NonlinearitySpec::new(
        Family::KleinGordon { exponent: 3.0 },
        Family::KleinGordon { exponent: 3.0 },
    );
    spec.rho = 3.0;
    spec
}

#[test]
fn c01_dissipativity_identity() {
    let f = fem(4, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for alpha in [0.0, 0.5, 1.0] {
        for omega in [0.1, 1.0] {
            let op = BlockOperator::new(f.clone(), alpha, omega).unwrap();
            for _ in 0..100 {
                let amp = 10f64.powf(rng.random_range(-2.0..2.0));
                let mut draw = || {
                    (0..op.dim())
                        .map(|_| amp * rng.random_range(-1.0..1.0))
                        .collect::<Vec<f64>>()
                };
                let z = PhaseVector::new(draw(), draw());
                let r = op.dissipativity_residual(&z).unwrap().abs();
                worst = worst.max(r / (1.0 + op.weights().h0_norm_sq(&z)));
            }
        }
    }
    let ok = worst <= 1e-12;
    verdict(
        1,
        "dissipativity identity",
        ok,
        format!("max |<Az,z> + vDv|/(1+|z|^2) = {worst:.3e}"),
    );
    assert!(ok);
}

#[test]
fn c02_energy_identity() {
    let f = fem(4, 16);
    let op = BlockOperator::new(f, 0.5, 1.0).unwrap();
    let z0 = smooth(&op, 7, 3.0);
    let lin = evolve(
        &z0,
        &StepperConfig::new(0.01, 2.0),
        &NonlinearitySpec::linear(),
        &op,
    )
    .unwrap();
    let emax = lin.energy.iter().fold(0.0f64, |m, e| m.max(*e));
    let lin_worst = energy_identity_residual(&lin)
        .iter()
        .fold(0.0f64, |m, r| m.max(r.abs()))
        / emax;

    let spec = NonlinearitySpec::sine_gordon();
    let global: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| {
            let rec = evolve(&z0, &StepperConfig::new(dt, 1.0), &spec, &op).unwrap();
            energy_identity_residual(&rec).iter().sum::<f64>().abs()
        })
        .collect();
    let orders = halving_orders(&global);
    let ok = lin_worst <= 1e-11 && orders.iter().all(|p| *p >= 1.9);
    verdict(
        2,
        "energy identity",
        ok,
        format!("linear max residual/maxE = {lin_worst:.3e}; sine-Gordon global residuals {}, orders {orders:.3?}", sci(&global)),
    );
    assert!(ok);
}

#[test]
fn c03_mild_solution_oracle() {
    let op = BlockOperator::new(fem(2, 8), 0.5, 1.0).unwrap();
    let z0 = smooth(&op, 11, 2.0);
    let spec = NonlinearitySpec::sine_gordon();
    let oracle = mild_solution_reference(&z0, 0.5, &spec, &op, &MildOptions::default()).unwrap();
    let errs: Vec<f64> = [0.05, 0.025, 0.0125]
        .iter()
        .map(|&dt| {
            let rec = evolve(&z0, &StepperConfig::new(dt, 0.5), &spec, &op).unwrap();
            op.h0_norm(&rec.final_state.sub(&oracle.state))
        })
        .collect();
    let orders = halving_orders(&errs);
    let ok = orders.iter().all(|p| *p >= 1.8);
    verdict(
        3,
        "mild-solution oracle",
        ok,
        format!("errors {}, orders {orders:.3?}", sci(&errs)),
    );
    assert!(ok);
}

#[test]
fn c04_resolvent_dichotomy() {
    let omega = 0.1;
    // dyadic grid, so one refinement moves mesh-scaled features by exactly 8 points
    let grid: Vec<f64> = (0..=80).map(|j| 2f64.powf(j as f64 / 8.0)).collect();
    let scan = |f: &Arc<FemMatrices>, alpha: f64, method: NormMethod| {
        let op = BlockOperator::new(f.clone(), alpha, omega).unwrap();
        resolvent_scan(&op, &grid, (grid[0], grid[grid.len() - 1]), method).unwrap()
    };
    // β_hi is a third of the frequency where β‖R(iβ)‖ last reaches 3
    let level = 3.0;
    let crossing = |s: &ScanReport| {
        let k = s
            .grid
            .iter()
            .zip(&s.values)
            .rposition(|(b, v)| b * v >= level)
            .unwrap();
        let (g0, g1) = (s.grid[k], s.grid[k + 1]);
        let (w0, w1) = ((g0 * s.values[k]).ln(), (g1 * s.values[k + 1]).ln());
        (g0.ln() + (w0 - level.ln()) / (w0 - w1) * (g1 / g0).ln()).exp()
    };
    let coarse = fem(8, 64);
    let s0 = scan(&coarse, 0.0, NormMethod::Auto);
    let s1 = scan(&coarse, 1.0, NormMethod::Auto);
    let beta_hi = resolution_limit(&s0.grid, &s0.values, level).unwrap() / 3.0;
    let window = (grid[0], beta_hi);
    let f0 = ScanReport::fit(s0.grid.clone(), s0.values.clone(), window).unwrap();
    let f1 = ScanReport::fit(s1.grid.clone(), s1.values.clone(), window).unwrap();

    let fine = scan(&fem(16, 128), 0.0, NormMethod::Iterative);
    let beta_hi_fine = resolution_limit(&fine.grid, &fine.values, level).unwrap() / 3.0;
    let interpolated = crossing(&fine) / crossing(&s0);

    let unit = {
        let op = BlockOperator::new(coarse.clone(), 1.0, 1.0).unwrap();
        resolvent_scan(&op, &log_space(10.0, 1e3, 9), (10.0, 1e3), NormMethod::Auto).unwrap()
    };

    let ok = (f1.fitted_slope + 1.0).abs() <= 0.15
        && (f0.fitted_slope + 0.5).abs() <= 0.15
        && f1.fitted_slope < f0.fitted_slope
        && f0.fitted_slope < 0.0
        && beta_hi_fine >= 2.0 * beta_hi * (1.0 - 1e-12)
        && (unit.fitted_slope + 1.0).abs() <= 0.15;
    verdict(
        4,
        "resolvent dichotomy",
        ok,
        format!(
            "omega = {omega}, window [1, {beta_hi:.3}]: slope(alpha=0) = {:.4}, slope(alpha=1) = {:.4}; refined beta_hi = {beta_hi_fine:.3} (interpolated ratio {interpolated:.4}); alpha=omega=1 on [10, 1e3]: {:.4}",
            f0.fitted_slope, f1.fitted_slope, unit.fitted_slope
        ),
    );
    assert!(ok);
}

#[test]
fn c05_smoothing_bounds() {
    let grid = log_space(1e-3, 1.0, 16);
    let mut lines = Vec::new();
    let mut ok = true;
    for alpha in [0.0, 1.0] {
        let sups: Vec<f64> = [(4, 16), (8, 32)]
            .iter()
            .map(|&(nr, nt)| {
                let op = BlockOperator::new(fem(nr, nt), alpha, 1.0).unwrap();
                semigroup_smoothing_probe(&op, &grid).unwrap().sup_weighted
            })
            .collect();
        let change = (sups[1] - sups[0]).abs() / sups[0];
        ok &= sups.iter().all(|s| s.is_finite()) && change <= 0.25;
        lines.push(format!(
            "alpha = {alpha}: sup {:.4} -> {:.4} ({:+.1}%)",
            sups[0],
            sups[1],
            100.0 * change
        ));
    }
    verdict(5, "smoothing bounds", ok, lines.join("; "));
    assert!(ok);
}

#[test]
fn c06_fractional_consistency() {
    let op = BlockOperator::new(fem(4, 16), 0.5, 1.0).unwrap();
    let opts = FractionalOptions::default();
    let mut worst_power = 0.0f64;
    for seed in 0..5 {
        let z = smooth(&op, 300 + seed, 1.0);
        let half = fractional_power_apply(&op, 0.5, &z, &opts).unwrap();
        let twice = fractional_power_apply(&op, 0.5, &half, &opts).unwrap();
        let inv = op.neg_inverse_apply(&z).unwrap();
        worst_power = worst_power.max(op.h0_norm(&twice.sub(&inv)) / op.h0_norm(&inv));
    }

    // worst case of ‖v‖_{L²(Ω)}·λ/‖Φ‖ over all Φ, from the dense congruent generator
    let n = op.dim();
    let b = op.dense_congruence().unwrap();
    let l_m = dense::cholesky_lower(op.mass().to_dense().as_ref()).unwrap();
    let l_mo = dense::cholesky_lower(op.fem().mass_omega.to_dense().as_ref()).unwrap();
    let l_m_inv_t = dense::solve_lower(l_m.as_ref(), Mat::<f64>::identity(n, n).as_ref())
        .transpose()
        .to_owned();
    let mut worst_v = 0.0f64;
    let mut worst_sample = 0.0f64;
    for lambda in [1.0, 10.0, 100.0] {
        let shifted = Mat::<f64>::from_fn(
            2 * n,
            2 * n,
            |i, j| if i == j { lambda } else { 0.0 } - b[(i, j)],
        );
        let r = shifted
            .partial_piv_lu()
            .solve(Mat::<f64>::identity(2 * n, 2 * n));
        let bottom = r.as_ref().submatrix(n, 0, n, 2 * n).to_owned();
        let map = l_mo.transpose() * &l_m_inv_t * &bottom;
        worst_v = worst_v.max(lambda * dense::spectral_norm(map.as_ref()).unwrap());
        for seed in 0..10 {
            let phi = smooth(&op, 400 + seed, 1.0);
            let y = op.resolvent_apply_real(lambda, &phi).unwrap();
            let v_l2 = op.fem().mass_omega.quad(&y.v).sqrt();
            worst_sample = worst_sample.max(lambda * v_l2 / op.h0_norm(&phi));
        }
    }
    let ok = worst_power <= 1e-5 && worst_v <= 1.0 + 1e-8 && worst_sample <= 1.0 + 1e-8;
    verdict(
        6,
        "fractional-power consistency",
        ok,
        format!("half∘half vs inverse rel err {worst_power:.3e}; sup lambda·|v|/|Phi| dense {worst_v:.6}, sampled {worst_sample:.6}"),
    );
    assert!(ok);
}

fn absorbing(spec: &NonlinearitySpec) -> dampwave::experiments::AbsorbingReport {
    let cfg = AbsorbingConfig {
        alphas: vec![0.0, 1.0],
        omega: 1.0,
        radii: vec![1.0, 5.0, 10.0],
        seed: 17,
        modes: 4,
        decay: 2.0,
        epsilon: None,
        forcing_floor: 1e-3,
        r0: None,
    };
    absorbing_set_probe(fem(4, 16), spec, &StepperConfig::new(0.02, 20.0), &cfg).unwrap()
}

#[test]
fn c07_absorbing_set() {
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, spec) in [
        ("sine-Gordon", NonlinearitySpec::sine_gordon()),
        ("Klein-Gordon", klein_gordon()),
    ] {
        let r = absorbing(&spec);
        ok &= r.passed;
        let entries: Vec<f64> = r
            .runs
            .iter()
            .map(|x| x.entry_time.unwrap_or(f64::NAN))
            .collect();
        lines.push(format!(
            "{name}: R0 = {:.4}, R0(alpha) = {:.4?}, variation {:.3}, entries {entries:.2?}, invariant {}, C1 = {:.4?}, C2 = {:.4?}",
            r.r0, r.r0_by_alpha, r.alpha_variation, r.all_invariant, r.c1_hat, r.c2_hat
        ));
    }
    verdict(7, "absorbing set", ok, lines.join("; "));
    assert!(ok);
}

#[test]
fn c08_continuous_dependence() {
    let op = BlockOperator::new(fem(4, 16), 1.0, 1.0).unwrap();
    let sep = SeparationConfig {
        radii: vec![1.0, 5.0, 10.0],
        seed: 23,
        perturbation: 1e-3,
        modes: 4,
    };
    let r = separation_envelope(
        &op,
        &NonlinearitySpec::sine_gordon(),
        &StepperConfig::new(0.02, 5.0),
        &sep,
    )
    .unwrap();
    let z = smooth(&op, 5, 3.0);
    let c = contraction_probe(
        &op,
        &NonlinearitySpec::sine_gordon(),
        &StepperConfig::new(0.02, 5.0),
        &z,
        &z,
        None,
    )
    .unwrap();
    let same_zero = c.dist_sq.iter().all(|d| *d == 0.0);
    let ok = r.passed && same_zero;
    let rates: Vec<f64> = r.runs.iter().map(|x| x.growth_rate).collect();
    verdict(
        8,
        "continuous dependence",
        ok,
        format!(
            "growth rates {rates:.4?}, identical-data separation {:e}",
            r.identical_separation
        ),
    );
    assert!(ok);
}

#[test]
fn c09_upper_semicontinuity() {
    let cfg = UscConfig {
        alphas: log_space(1e-4, 1e-1, 5),
        omega: 1.0,
        initial: InitialData::RandomSmooth {
            seed: 29,
            modes: 4,
            decay: 2.0,
            radius: 3.0,
        },
    };
    let r = usc_scan(
        fem(8, 48),
        &NonlinearitySpec::sine_gordon(),
        &StepperConfig::new(0.01, 5.0),
        &cfg,
    )
    .unwrap();
    let ok = r.passed;
    verdict(
        9,
        "upper-semicontinuity",
        ok,
        format!(
            "D(alpha) = {}, slope {:.4?}, M = {:.4?}, monotone {}",
            sci(&r.distance),
            r.fitted_slope,
            r.m_hat,
            r.monotone
        ),
    );
    assert!(ok);
}

#[test]
fn c10_weak_decomposition() {
    let op = BlockOperator::new(fem(4, 16), 1.0, 1.0).unwrap();
    let r = weak_decomposition_probe(
        &op,
        &NonlinearitySpec::sine_gordon(),
        &StepperConfig::new(0.02, 10.0),
        &smooth(&op, 31, 3.0),
        &smooth(&op, 37, 3.0),
        None,
    )
    .unwrap();
    let max_res = r.residual.iter().fold(0.0f64, |m, x| m.max(*x));
    let ok = r.passed;
    verdict(
        10,
        "weak decomposition",
        ok,
        format!(
            "residual {max_res:.3e} (limit {:.1e}); nu2 transform {:.4?}, direct {:.4?}; t* = {:?}, kappa = {:.4?}, Lambda = {:.4?}, sup |transformed w| = {:.4}",
            r.residual_limit, r.nu2_transform, r.nu2_direct, r.t_star, r.kappa_hat, r.lambda_hat, r.w_transform_sup
        ),
    );
    assert!(ok);
}

#[test]
fn c11_transitivity_formula() {
    let (c, rate) = transitivity_rate(2.0, 1.0, 3.0, 1.0, 1.0, 1.0).unwrap();
    let (_, swapped) = transitivity_rate(2.0, 1.0, 3.0, 0.7, 1.0, 0.2).unwrap();
    let (_, direct) = transitivity_rate(2.0, 1.0, 3.0, 0.2, 1.0, 0.7).unwrap();
    let ok = c == 7.0 && (rate - 1.0 / 3.0).abs() < 1e-15 && swapped == direct;
    verdict(
        11,
        "transitivity formula",
        ok,
        format!(
            "(2,1,3,1,1,1) -> ({c}, {rate}); swap symmetric {}",
            swapped == direct
        ),
    );
    assert!(ok);
}

#[test]
fn c12_determinism() {
    let op = BlockOperator::new(fem(3, 12), 1.0, 1.0).unwrap();
    let z = smooth(&op, 41, 3.0);
    let csv = || {
        evolve(
            &z,
            &StepperConfig::new(0.02, 2.0),
            &NonlinearitySpec::sine_gordon(),
            &op,
        )
        .unwrap()
        .to_csv()
    };
    let traj_same = csv() == csv();
    let probe = || {
        let cfg = AbsorbingConfig {
            alphas: vec![0.0, 1.0],
            omega: 1.0,
            radii: vec![1.0, 4.0],
            seed: 3,
            modes: 3,
            decay: 2.0,
            epsilon: None,
            forcing_floor: 1e-3,
            r0: None,
        };
        absorbing_set_probe(
            fem(3, 12),
            &NonlinearitySpec::sine_gordon(),
            &StepperConfig::new(0.05, 4.0),
            &cfg,
        )
        .unwrap()
        .series()
        .to_csv()
    };
    let probe_same = probe() == probe();
    let cli = |threads: &str| {
        let out = tempfile::tempdir().unwrap();
        let cfg =
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/simulate.toml");
        let run = std::process::Command::new(env!("CARGO_BIN_EXE_dampwave"))
            .arg("simulate")
            .arg(&cfg)
            .args(["--threads", threads, "--out"])
            .arg(out.path())
            .output()
            .unwrap();
        assert!(run.status.success());
        let dir = out.path().join("simulate-sine-gordon");
        ["trajectory.csv", "final_state.csv", "report.json"]
            .map(|f| std::fs::read(dir.join(f)).unwrap())
    };
    let cli_same = cli("1") == cli("4");
    let ok = traj_same && probe_same && cli_same;
    verdict(
        12,
        "determinism",
        ok,
        format!(
            "trajectory CSV identical {traj_same}, probe CSV identical {probe_same}, \
             CLI outputs identical across thread counts {cli_same}"
        ),
    );
    assert!(ok);
}
