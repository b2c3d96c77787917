use serde::{Deserialize, Serialize};

use super::{log_linear_rate, resolve_epsilon, Table};
use crate::error::ExperimentError;
use crate::integrator::{Stepper, StepperConfig};
use crate::nonlinearity::NonlinearitySpec;
use crate::operator::{BlockOperator, PhaseVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub epsilon: f64,
    pub times: Vec<f64>,
    /// `‖ζ¹ − ζ²‖_{H_0}`
    pub diff_h0: Vec<f64>,
    pub v_h0: Vec<f64>,
    pub v_hminus1: Vec<f64>,
    pub w_h0: Vec<f64>,
    /// `H_0` norm of the transformed v-part `(φ̄, φ̄_t)`.
    pub v_transform_h0: Vec<f64>,
    /// `H_0` norm of the transformed w-part.
    pub w_transform_h0: Vec<f64>,
    /// `‖ζ¹ − ζ² − v − w‖_{H_0}`
    pub residual: Vec<f64>,
    pub residual_limit: f64,
    pub superposition_ok: bool,
    /// Step halvings taken by either full trajectory; the splitting is exact only without them.
    pub halvings: usize,
    /// `ν̂₂` from the transformed v-part in `H_0`.
    pub nu2_transform: Option<f64>,
    /// `ν̂₂` from the direct `H_{-1}` norm of the v-part.
    pub nu2_direct: Option<f64>,
    /// `‖ζ̄₀‖_{H_{-1}}`
    pub initial_hminus1: f64,
    /// First recorded time with `κ̂ < ½`.
    pub t_star: Option<f64>,
    pub kappa_hat: Option<f64>,
    /// `sup ‖w‖_{H_0} / ‖ζ̄₀‖_{H_{-1}}`
    pub lambda_hat: Option<f64>,
    pub w_transform_sup: f64,
    /// Both trajectories coincide; every part is zero.
    pub degenerate: bool,
    pub passed: bool,
}

impl DecompositionReport {
    pub fn series(&self) -> Table {
        let mut t = Table::new(&[
            "t",
            "diff_h0",
            "v_h0",
            "v_hminus1",
            "w_h0",
            "v_transform_h0",
            "w_transform_h0",
            "residual",
        ]);
        for k in 0..self.times.len() {
            t.push(vec![
                self.times[k],
                self.diff_h0[k],
                self.v_h0[k],
                self.v_hminus1[k],
                self.w_h0[k],
                self.v_transform_h0[k],
                self.w_transform_h0[k],
                self.residual[k],
            ]);
        }
        t
    }
}

/// `∫₀ᵗ e^{−ε(t−τ)} ū(τ) dτ` by the trapezoid rule, carried with its time derivative `ū − εφ̄`.
struct Transform {
    eps: f64,
    phi: Vec<f64>,
    last: Vec<f64>,
}

impl Transform {
    fn new(eps: f64, u0: &[f64]) -> Self {
        Self {
            eps,
            phi: vec![0.0; u0.len()],
            last: u0.to_vec(),
        }
    }

    fn advance(&mut self, dt: f64, u: &[f64]) {
        let decay = (-self.eps * dt).exp();
        for i in 0..u.len() {
            self.phi[i] = decay * self.phi[i] + 0.5 * dt * (decay * self.last[i] + u[i]);
        }
        self.last.copy_from_slice(u);
    }

    fn state(&self) -> PhaseVector {
        let dphi = self
            .last
            .iter()
            .zip(&self.phi)
            .map(|(u, p)| u - self.eps * p)
            .collect();
        PhaseVector::new(self.phi.clone(), dphi)
    }
}

/// Splits `ζ¹ − ζ²` into the free linear evolution of `ζ̄₀ = ζ01 − ζ02` and the part
/// driven from rest by the difference of the nonlinear forces.
pub fn weak_decomposition_probe(
    op: &BlockOperator,
    spec: &NonlinearitySpec,
    cfg: &StepperConfig,
    z01: &PhaseVector,
    z02: &PhaseVector,
    epsilon: Option<f64>,
) -> Result<DecompositionReport, ExperimentError> {
    let eps = resolve_epsilon(epsilon, spec, op.omega)?;
    let linear = NonlinearitySpec::linear();
    let mut s1 = Stepper::new(op, spec, cfg)?;
    let mut s2 = Stepper::new(op, spec, cfg)?;
    let mut sv = Stepper::new(op, &linear, cfg)?;
    let mut sw = Stepper::new(op, &linear, cfg)?;

    let d0 = z01.sub(z02);
    let (mut a, mut b) = (z01.clone(), z02.clone());
    let mut v = d0.clone();
    let mut w = PhaseVector::zeros(d0.len());
    let mut tv = Transform::new(eps, &v.u);
    let mut tw = Transform::new(eps, &w.u);

    let mut rep = DecompositionReport {
        epsilon: eps,
        times: Vec::new(),
        diff_h0: Vec::new(),
        v_h0: Vec::new(),
        v_hminus1: Vec::new(),
        w_h0: Vec::new(),
        v_transform_h0: Vec::new(),
        w_transform_h0: Vec::new(),
        residual: Vec::new(),
        residual_limit: 0.0,
        superposition_ok: false,
        halvings: 0,
        nu2_transform: None,
        nu2_direct: None,
        initial_hminus1: op.hminus1_norm(&d0)?,
        t_star: None,
        kappa_hat: None,
        lambda_hat: None,
        w_transform_sup: 0.0,
        degenerate: d0.max_abs() == 0.0,
        passed: false,
    };
    let record = |rep: &mut DecompositionReport,
                  t: f64,
                  a: &PhaseVector,
                  b: &PhaseVector,
                  v: &PhaseVector,
                  w: &PhaseVector,
                  tv: &Transform,
                  tw: &Transform|
     -> Result<(), ExperimentError> {
        let d = a.sub(b);
        rep.times.push(t);
        rep.diff_h0.push(op.h0_norm(&d));
        rep.v_h0.push(op.h0_norm(v));
        rep.v_hminus1.push(op.hminus1_norm(v)?);
        rep.w_h0.push(op.h0_norm(w));
        rep.v_transform_h0.push(op.h0_norm(&tv.state()));
        rep.w_transform_h0.push(op.h0_norm(&tw.state()));
        rep.residual.push(op.h0_norm(&d.sub(v).sub(w)));
        Ok(())
    };
    record(&mut rep, 0.0, &a, &b, &v, &w, &tv, &tw)?;

    let (steps, last) = cfg.grid();
    for k in 1..=steps {
        let dt = if k == steps { last } else { cfg.dt };
        let t0 = (k - 1) as f64 * cfg.dt;
        let t1 = if k == steps {
            cfg.t_final
        } else {
            k as f64 * cfg.dt
        };
        let (na, ia) = s1.step(&a, dt, t0)?;
        let (nb, ib) = s2.step(&b, dt, t0)?;
        rep.halvings += ia.halvings + ib.halvings;
        let force: Vec<f64> = ia
            .midpoint_force
            .iter()
            .zip(&ib.midpoint_force)
            .map(|(x, y)| x - y)
            .collect();
        v = sv.step(&v, dt, t0)?.0;
        w = sw.step_linear_forced(&w, dt, &force)?;
        a = na;
        b = nb;
        tv.advance(dt, &v.u);
        tw.advance(dt, &w.u);
        record(&mut rep, t1, &a, &b, &v, &w, &tv, &tw)?;
    }

    let scale = rep.diff_h0.iter().fold(1.0f64, |m, x| m.max(*x));
    rep.residual_limit = 10.0 * cfg.newton_tol * scale;
    rep.superposition_ok = rep.residual.iter().all(|r| *r <= rep.residual_limit);
    rep.w_transform_sup = rep.w_transform_h0.iter().fold(0.0f64, |m, x| m.max(*x));
    if rep.degenerate {
        rep.passed = rep.superposition_ok && rep.v_h0.iter().chain(&rep.w_h0).all(|x| *x == 0.0);
        return Ok(rep);
    }

    let half = cfg.t_final / 2.0;
    let late = |ys: &[f64]| -> Option<f64> {
        let (t, y): (Vec<f64>, Vec<f64>) = rep
            .times
            .iter()
            .zip(ys)
            .filter(|(t, _)| **t >= half)
            .map(|(t, y)| (*t, *y))
            .unzip();
        log_linear_rate(&t, &y).map(|s| -2.0 * s)
    };
    rep.nu2_transform = late(&rep.v_transform_h0);
    rep.nu2_direct = late(&rep.v_hminus1);
    let h0 = rep.initial_hminus1;
    if let Some(k) = (1..rep.times.len()).find(|&k| rep.v_hminus1[k] < 0.5 * h0) {
        rep.t_star = Some(rep.times[k]);
        rep.kappa_hat = Some(rep.v_hminus1[k] / h0);
    }
    rep.lambda_hat = Some(rep.w_h0.iter().fold(0.0f64, |m, x| m.max(*x)) / h0);
    rep.passed = rep.superposition_ok
        && rep.nu2_transform.is_some_and(|r| r > 0.0)
        && rep.nu2_direct.is_some_and(|r| r > 0.0)
        && rep.t_star.is_some()
        && rep.lambda_hat.is_some_and(f64::is_finite)
        && rep.w_transform_sup.is_finite();
    Ok(rep)
}
