use std::sync::{Arc, OnceLock};

use dampwave::experiments::{weak_decomposition_probe, Table};
use dampwave::geometry::{assemble, build_disk_mesh, FemMatrices};
use dampwave::integrator::{evolve, InitialData, StepperConfig};
use dampwave::nonlinearity::{
    nodal_nonlinear_force, nodal_potential, validate_assumptions, Family, NonlinearitySpec,
    SamplingOptions,
};
use dampwave::operator::{
    resolvent_norm_with, transitivity_rate, BlockOperator, NormMethod, PhaseVector,
};
use faer::c64;
use proptest::prelude::*;

fn small_fem() -> Arc<FemMatrices> {
    static FEM: OnceLock<Arc<FemMatrices>> = OnceLock::new();
    FEM.get_or_init(|| Arc::new(assemble(&build_disk_mesh(2, 8).unwrap()).unwrap()))
        .clone()
}

fn state(n: usize) -> impl Strategy<Value = PhaseVector> {
    (
        prop::collection::vec(-5.0..5.0f64, n),
        prop::collection::vec(-5.0..5.0f64, n),
    )
        .prop_map(|(u, v)| PhaseVector::new(u, v))
}

fn smooth(op: &BlockOperator, seed: u64, radius: f64) -> PhaseVector {
    InitialData::RandomSmooth {
        seed,
        modes: 3,
        decay: 2.0,
        radius,
    }
    .generate(op)
    .unwrap()
}

fn cubic() -> NonlinearitySpec {
    let mut s = NonlinearitySpec::new(
        Family::Polynomial {
            coefficients: vec![0.0, -2.0, 0.0, 1.0],
        },
        Family::SineGordon,
    );
    s.ell1 = 3.0;
    s
}

fn shipped() -> Vec<NonlinearitySpec> {
    let mut kg = NonlinearitySpec::new(
        Family::KleinGordon { exponent: 3.0 },
        Family::KleinGordon { exponent: 3.0 },
    );
    kg.rho = 3.0;
    vec![NonlinearitySpec::sine_gordon(), kg, cubic()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn refinement_approaches_the_disk_from_below(n_r in 1usize..5, n_theta in 3usize..24) {
        let coarse = build_disk_mesh(n_r, n_theta).unwrap();
        let a = assemble(&coarse).unwrap();
        let b = assemble(&coarse.refined().unwrap()).unwrap();
        let pi = std::f64::consts::PI;
        prop_assert!(a.area < b.area && b.area < pi);
        prop_assert!(a.perimeter < b.perimeter && b.perimeter < 2.0 * pi);
    }

    #[test]
    fn assembly_is_bit_identical(n_r in 1usize..4, n_theta in 3usize..16) {
        let mesh = build_disk_mesh(n_r, n_theta).unwrap();
        let (a, b) = (assemble(&mesh).unwrap(), assemble(&mesh).unwrap());
        for (x, y) in [(&a.mass_omega, &b.mass_omega), (&a.stiff_omega, &b.stiff_omega),
                       (&a.mass_gamma, &b.mass_gamma), (&a.stiff_gamma, &b.stiff_gamma)] {
            let tx: Vec<_> = x.triplets().map(|(i, j, v)| (i, j, v.to_bits())).collect();
            let ty: Vec<_> = y.triplets().map(|(i, j, v)| (i, j, v.to_bits())).collect();
            prop_assert_eq!(tx, ty);
        }
    }

    #[test]
    fn poincare_quotients_are_at_least_one(x in prop::collection::vec(-3.0..3.0f64, 17)) {
        let fem = small_fem();
        let ones = vec![1.0; 17];
        for (k, m) in [(&fem.stiff_omega, &fem.mass_omega), (&fem.stiff_gamma, &fem.mass_gamma)] {
            prop_assert!(k.mul_vec(&ones).iter().all(|v| v.abs() <= 1e-12));
            let mx = m.quad(&x);
            if mx > 1e-9 {
                prop_assert!((k.quad(&x) + mx) / mx >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn dissipativity_is_exact(z in state(17), alpha in 0.0..=1.0f64, omega in 0.01..2.0f64) {
        let op = BlockOperator::new(small_fem(), alpha, omega).unwrap();
        let r = op.dissipativity_residual(&z).unwrap();
        prop_assert!(r.abs() <= 1e-12 * (1.0 + op.weights().h0_norm_sq(&z)), "{}", r);
    }

    #[test]
    fn resolvent_is_bounded_by_inverse_real_part(
        re in 0.01..50.0f64, im in -50.0..50.0f64, alpha in 0.0..=1.0f64, omega in 0.1..2.0f64
    ) {
        let op = BlockOperator::new(small_fem(), alpha, omega).unwrap();
        let n = resolvent_norm_with(&op, c64::new(re, im), NormMethod::Dense).unwrap();
        prop_assert!(n <= (1.0 + 1e-10) / re, "{} > 1/{}", n, re);
    }

    #[test]
    fn weighted_norms_are_norms(a in state(17), b in state(17), c in -10.0..10.0f64) {
        let op = BlockOperator::new(small_fem(), 0.5, 1.0).unwrap();
        let sum = a.add(&b);
        let h0 = |z: &PhaseVector| op.h0_norm(z);
        let hm = |z: &PhaseVector| op.hminus1_norm(z).unwrap();
        for norm in [&h0 as &dyn Fn(&PhaseVector) -> f64, &hm] {
            let (na, nb) = (norm(&a), norm(&b));
            prop_assert!(norm(&sum) <= (na + nb) * (1.0 + 1e-12));
            prop_assert!((norm(&a.scale(c)) - c.abs() * na).abs() <= 1e-12 * (1.0 + c.abs() * na));
        }
    }

    #[test]
    fn potential_chain_rule(
        u in prop::collection::vec(-2.0..2.0f64, 17),
        du in prop::collection::vec(-1.0..1.0f64, 17),
        which in 0usize..3,
    ) {
        let spec = &shipped()[which];
        let fem = small_fem();
        let h = 1e-5;
        let at = |t: f64| -> Vec<f64> { u.iter().zip(&du).map(|(a, b)| a + t * b).collect() };
        let fd = (nodal_potential(spec, &fem, &at(h)).unwrap()
            - nodal_potential(spec, &fem, &at(-h)).unwrap()) / (2.0 * h);
        let force = nodal_nonlinear_force(spec, &fem, &u).unwrap();
        let exact: f64 = force.iter().zip(&du).map(|(f, d)| f * d).sum();
        prop_assert!((fd - exact).abs() <= 1e-7 * (1.0 + exact.abs()), "{} vs {}", fd, exact);
    }

    #[test]
    fn potential_lower_bound_holds_between_samples(s in -10.0..10.0f64, which in 0usize..3) {
        let spec = &shipped()[which];
        let opts = SamplingOptions::default();
        let r = validate_assumptions(spec, &opts);
        // interpolation error of the sampled sup: h²/8 · sup|(1−μ) + f'|
        let h = 2.0 * opts.s0 / (opts.n_samples - 1) as f64;
        let curvature = (0..=2000)
            .map(|k| -opts.s0 + 2.0 * opts.s0 * k as f64 / 2000.0)
            .map(|x| (1.0 - spec.mu1 + spec.f.derivative(x).unwrap()).abs())
            .fold(0.0f64, f64::max);
        let slack = h * h / 8.0 * curvature;
        let lower = -0.5 * (1.0 - spec.mu1) * s * s - r.c2;
        prop_assert!(spec.f.antiderivative(s).unwrap() >= lower - slack);
    }

    #[test]
    fn transitivity_is_symmetric(
        c in 0.1..10.0f64, k in 0.1..10.0f64, c1 in 0.1..10.0f64,
        a1 in 0.01..5.0f64, c2 in 0.1..10.0f64, a2 in 0.01..5.0f64,
    ) {
        let (_, x) = transitivity_rate(1.0, k, c1, a1, c2, a2).unwrap();
        let (_, y) = transitivity_rate(1.0, k, c2, a2, c1, a1).unwrap();
        prop_assert_eq!(x, y);
        let (cp, ap) = transitivity_rate(c, k, c1, a1, c2, a2).unwrap();
        prop_assert_eq!(cp, c * c1 + c2);
        prop_assert!(ap > 0.0 && ap < a1.min(a2));
    }

    #[test]
    fn csv_cells_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..8)) {
        let mut t = Table::new(&vec!["x"; values.len()]);
        t.push(values.clone());
        let csv = t.to_csv();
        let row = csv.lines().nth(1).unwrap();
        let back: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        prop_assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn trajectories_are_reproducible(seed in 0u64..1000, alpha in 0.0..=1.0f64) {
        let op = BlockOperator::new(small_fem(), alpha, 1.0).unwrap();
        let z = smooth(&op, seed, 2.0);
        let cfg = StepperConfig::new(0.05, 1.0);
        let a = evolve(&z, &cfg, &NonlinearitySpec::sine_gordon(), &op).unwrap();
        let b = evolve(&z, &cfg, &NonlinearitySpec::sine_gordon(), &op).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn norm_stays_below_the_energy_envelope(seed in 0u64..1000, which in 0usize..3) {
        let spec = &shipped()[which];
        let fem = small_fem();
        let op = BlockOperator::new(fem.clone(), 1.0, 1.0).unwrap();
        let cfg = StepperConfig::new(0.05, 4.0);
        // ‖ζ(t)‖² = E(t) − 2P(u) ≤ E(0) − 2 inf P, and inf F = −1 for the cubic, 0 otherwise
        let inf_p = if which == 2 { -fem.lumped_omega.iter().sum::<f64>() } else { 0.0 };
        let mut envelope = 0.0f64;
        for r in [0.5, 1.0, 2.0, 4.0] {
            let rec = evolve(&smooth(&op, seed, r), &cfg, spec, &op).unwrap();
            envelope = envelope.max(rec.energy[0] - 2.0 * inf_p);
            let sup = rec.h0_norm.iter().fold(0.0f64, |m, x| m.max(*x));
            prop_assert!(sup * sup <= envelope * (1.0 + 1e-9), "r = {}: {} > {}", r, sup * sup, envelope);
        }
    }

    #[test]
    fn superposition_residual_is_within_newton_tolerance(s1 in 0u64..1000, s2 in 0u64..1000) {
        prop_assume!(s1 != s2);
        let op = BlockOperator::new(small_fem(), 1.0, 1.0).unwrap();
        let cfg = StepperConfig::new(0.05, 2.0);
        let r = weak_decomposition_probe(
            &op, &NonlinearitySpec::sine_gordon(), &cfg, &smooth(&op, s1, 2.0), &smooth(&op, s2, 2.0), None,
        ).unwrap();
        prop_assert!(r.superposition_ok, "{:?}", r.residual);
    }
}
