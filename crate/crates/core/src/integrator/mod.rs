//! Time stepping of the semi-discrete problem, the energy functional and
//! trajectory diagnostics.

mod initial;
mod mild;

pub use initial::InitialData;
pub use mild::{mild_solution_reference, MildOptions, MildSolution};

use serde::{Deserialize, Serialize};

use crate::error::IntegratorError;
use crate::nonlinearity::{
    nodal_force_jacobian, nodal_nonlinear_force, nodal_potential, NonlinearitySpec,
};
use crate::operator::{BlockOperator, PhaseVector};
use crate::sparse::{CsrMatrix, SpdPattern, SpdSolver};

/// Halvings of `dt` tried after a Newton failure.
pub const MAX_HALVINGS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ImplicitMidpoint,
    /// Two-step BDF; the first step and any step after a restart use the midpoint rule.
    Bdf2,
}

fn default_newton_tol() -> f64 {
    1e-10
}
fn default_newton_max() -> usize {
    25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    #[serde(rename = "t_final")]
    pub t_final: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max")]
    pub newton_max: usize,
    #[serde(default)]
    pub scheme: Scheme,
    /// Keep every `state_stride`-th state; 0 keeps none besides the last.
    #[serde(default)]
    pub state_stride: usize,
}

impl StepperConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            newton_tol: default_newton_tol(),
            newton_max: default_newton_max(),
            scheme: Scheme::default(),
            state_stride: 0,
        }
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(IntegratorError::InvalidConfig(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(IntegratorError::InvalidConfig(format!(
                "T = {} must be >= 0",
                self.t_final
            )));
        }
        if self.t_final > 0.0 && self.t_final < self.dt * (1.0 - 1e-12) {
            return Err(IntegratorError::InvalidConfig(format!(
                "T = {} is shorter than dt = {}",
                self.t_final, self.dt
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return Err(IntegratorError::InvalidConfig(
                "newton_tol and newton_max must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Step count and the length of the last step. Every other step is exactly `dt`,
    /// so runs over aligned horizons perform bit-identical steps.
    pub fn grid(&self) -> (usize, f64) {
        if self.t_final == 0.0 {
            return (0, 0.0);
        }
        let n = ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let rest = self.t_final - (n - 1) as f64 * self.dt;
        let last = if (rest - self.dt).abs() <= 1e-9 * self.dt {
            self.dt
        } else {
            rest
        };
        (n, last)
    }
}

/// What one macro step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub newton_iterations: usize,
    pub halvings: usize,
    /// `Σ 2·dt_s·v̄ᵀ D v̄` over the substeps, `v̄` the midpoint velocity.
    pub dissipation: f64,
    /// `Σ dt_s·v̄ᵀ(K_Ω + M_Ω)v̄` and the boundary analogue.
    pub diss_bulk: f64,
    pub diss_surf: f64,
    /// Time-weighted mean of the nodal force at the substep midpoints.
    pub midpoint_force: Vec<f64>,
}

struct NewtonFailure {
    update: f64,
}

/// Advances one trajectory; factorizations are reused while `dt` is unchanged.
pub struct Stepper<'a> {
    op: &'a BlockOperator,
    spec: &'a NonlinearitySpec,
    cfg: StepperConfig,
    linear: bool,
    pattern: SpdPattern,
    cache: Vec<(u64, CsrMatrix, Option<SpdSolver>)>,
    bulk_h1: CsrMatrix,
    surf_h1: CsrMatrix,
    history: Option<(PhaseVector, u64)>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        op: &'a BlockOperator,
        spec: &'a NonlinearitySpec,
        cfg: &StepperConfig,
    ) -> Result<Self, IntegratorError> {
        cfg.validate()?;
        spec.validate()?;
        let fem = op.fem();
        let pattern = SpdPattern::new(&Self::system(op, 1.0))?;
        Ok(Self {
            op,
            spec,
            cfg: cfg.clone(),
            linear: spec.is_linear(),
            pattern,
            cache: Vec::new(),
            bulk_h1: CsrMatrix::linear_combination(&[
                (1.0, &fem.stiff_omega),
                (1.0, &fem.mass_omega),
            ]),
            surf_h1: CsrMatrix::linear_combination(&[
                (1.0, &fem.stiff_gamma),
                (1.0, &fem.mass_gamma),
            ]),
            history: None,
        })
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &'a BlockOperator {
        self.op
    }

    /// `M/h + D + hK`
    fn system(op: &BlockOperator, h: f64) -> CsrMatrix {
        CsrMatrix::linear_combination(&[
            (1.0 / h, op.mass()),
            (1.0, op.damping()),
            (h, op.stiffness()),
        ])
    }

    fn cached(&mut self, h: f64) -> Result<usize, IntegratorError> {
        let key = h.to_bits();
        if let Some(pos) = self.cache.iter().position(|c| c.0 == key) {
            return Ok(pos);
        }
        let s = Self::system(self.op, h);
        let solver = if self.linear {
            Some(self.pattern.factor(&s)?)
        } else {
            None
        };
        if self.cache.len() >= 8 {
            self.cache.remove(0);
        }
        self.cache.push((key, s, solver));
        Ok(self.cache.len() - 1)
    }

    /// Solves `(M/h + D + hK) x + N(base + h x) + extra = rhs` by Newton from `guess`.
    fn solve_implicit(
        &mut self,
        h: f64,
        base: &[f64],
        rhs: &[f64],
        guess: &[f64],
        extra: Option<&[f64]>,
    ) -> Result<Result<(Vec<f64>, usize), NewtonFailure>, IntegratorError> {
        let idx = self.cached(h)?;
        let n = rhs.len();
        let rhs: Vec<f64> = match extra {
            Some(e) => rhs.iter().zip(e).map(|(r, f)| r - f).collect(),
            None => rhs.to_vec(),
        };
        if self.linear {
            let solver = self.cache[idx].2.as_ref().expect("linear factor cached");
            return Ok(Ok((solver.solve(&rhs), 1)));
        }
        let inf = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = inf(base).max(inf(guess));
        let mut x = guess.to_vec();
        let mut update = f64::INFINITY;
        for it in 1..=self.cfg.newton_max {
            let at: Vec<f64> = (0..n).map(|i| base[i] + h * x[i]).collect();
            let force = nodal_nonlinear_force(self.spec, self.op.fem(), &at)?;
            let jac = nodal_force_jacobian(self.spec, self.op.fem(), &at)?;
            let s = &self.cache[idx].1;
            let sx = s.mul_vec(&x);
            let mut delta: Vec<f64> = (0..n).map(|i| sx[i] + force[i] - rhs[i]).collect();
            let jdiag: Vec<f64> = jac.iter().map(|j| h * j).collect();
            let jm = CsrMatrix::linear_combination(&[
                (1.0, s),
                (1.0, &CsrMatrix::identity_scaled(&jdiag)),
            ]);
            let solver = match self.pattern.factor(&jm) {
                Ok(f) => f,
                Err(_) => return Ok(Err(NewtonFailure { update })),
            };
            solver.solve_in_place(&mut delta);
            for i in 0..n {
                x[i] -= delta[i];
            }
            update = inf(&delta);
            if !update.is_finite() {
                return Ok(Err(NewtonFailure { update }));
            }
            if update <= self.cfg.newton_tol * scale.max(inf(&x)).max(f64::MIN_POSITIVE) {
                return Ok(Ok((x, it)));
            }
        }
        Ok(Err(NewtonFailure { update }))
    }

    /// One implicit midpoint step; returns the new state and the midpoint velocity.
    fn midpoint(
        &mut self,
        z: &PhaseVector,
        dt: f64,
        extra: Option<&[f64]>,
    ) -> Result<Result<(PhaseVector, Vec<f64>, usize), NewtonFailure>, IntegratorError> {
        let h = 0.5 * dt;
        let mv = self.op.mass().mul_vec(&z.v);
        let ku = self.op.stiffness().mul_vec(&z.u);
        let rhs: Vec<f64> = mv.iter().zip(&ku).map(|(a, b)| a / h - b).collect();
        Ok(self
            .solve_implicit(h, &z.u, &rhs, &z.v, extra)?
            .map(|(w, it)| {
                let u = z.u.iter().zip(&w).map(|(a, b)| a + dt * b).collect();
                let v = z.v.iter().zip(&w).map(|(a, b)| 2.0 * b - a).collect();
                (PhaseVector::new(u, v), w, it)
            }))
    }

    fn bdf2(
        &mut self,
        prev: &PhaseVector,
        z: &PhaseVector,
        dt: f64,
    ) -> Result<Result<(PhaseVector, usize), NewtonFailure>, IntegratorError> {
        let h = 2.0 * dt / 3.0;
        let n = z.len();
        let ubar: Vec<f64> = (0..n).map(|i| (4.0 * z.u[i] - prev.u[i]) / 3.0).collect();
        let vbar: Vec<f64> = (0..n).map(|i| (4.0 * z.v[i] - prev.v[i]) / 3.0).collect();
        let mv = self.op.mass().mul_vec(&vbar);
        let ku = self.op.stiffness().mul_vec(&ubar);
        let rhs: Vec<f64> = mv.iter().zip(&ku).map(|(a, b)| a / h - b).collect();
        Ok(self
            .solve_implicit(h, &ubar, &rhs, &z.v, None)?
            .map(|(v, it)| {
                let u = (0..n).map(|i| ubar[i] + h * v[i]).collect();
                (PhaseVector::new(u, v), it)
            }))
    }

    fn account(&self, info: &mut StepInfo, vmid: &[f64], dt: f64) {
        info.dissipation += 2.0 * dt * self.op.damping().quad(vmid);
        info.diss_bulk += dt * self.bulk_h1.quad(vmid);
        info.diss_surf += dt * self.surf_h1.quad(vmid);
    }

    fn midpoint_force(
        &self,
        z: &PhaseVector,
        w: &[f64],
        dt: f64,
    ) -> Result<Vec<f64>, IntegratorError> {
        if self.linear {
            return Ok(vec![0.0; z.len()]);
        }
        let uh: Vec<f64> = z.u.iter().zip(w).map(|(a, b)| a + 0.5 * dt * b).collect();
        Ok(nodal_nonlinear_force(self.spec, self.op.fem(), &uh)?)
    }

    /// Advances `z` by `dt` starting at time `t` (used only in diagnostics).
    pub fn step(
        &mut self,
        z: &PhaseVector,
        dt: f64,
        t: f64,
    ) -> Result<(PhaseVector, StepInfo), IntegratorError> {
        if z.len() != self.op.dim() {
            return Err(crate::error::OperatorError::DimensionMismatch {
                expected: self.op.dim(),
                found: z.len(),
            }
            .into());
        }
        let n = z.len();
        let mut info = StepInfo {
            newton_iterations: 0,
            halvings: 0,
            dissipation: 0.0,
            diss_bulk: 0.0,
            diss_surf: 0.0,
            midpoint_force: vec![0.0; n],
        };
        let key = dt.to_bits();
        if self.cfg.scheme == Scheme::Bdf2 {
            if let Some((prev, k)) = self.history.take() {
                if k == key {
                    if let Ok((next, it)) = self.bdf2(&prev, z, dt)? {
                        let vmid: Vec<f64> = (0..n).map(|i| 0.5 * (z.v[i] + next.v[i])).collect();
                        self.account(&mut info, &vmid, dt);
                        info.newton_iterations = it;
                        let um: Vec<f64> = (0..n).map(|i| 0.5 * (z.u[i] + next.u[i])).collect();
                        if !self.linear {
                            info.midpoint_force =
                                nodal_nonlinear_force(self.spec, self.op.fem(), &um)?;
                        }
                        self.history = Some((z.clone(), key));
                        return Ok((next, info));
                    }
                }
            }
        }
        let mut last_update = f64::NAN;
        for halvings in 0..=MAX_HALVINGS {
            let parts = 1usize << halvings;
            let sub = dt / parts as f64;
            let mut cur = z.clone();
            let mut trial = StepInfo {
                halvings,
                ..info.clone()
            };
            let mut ok = true;
            for _ in 0..parts {
                match self.midpoint(&cur, sub, None)? {
                    Ok((next, w, it)) => {
                        self.account(&mut trial, &w, sub);
                        let f = self.midpoint_force(&cur, &w, sub)?;
                        for (acc, v) in trial.midpoint_force.iter_mut().zip(&f) {
                            *acc += v / parts as f64;
                        }
                        trial.newton_iterations += it;
                        cur = next;
                    }
                    Err(fail) => {
                        last_update = fail.update;
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                self.history = Some((z.clone(), key));
                return Ok((cur, trial));
            }
        }
        Err(IntegratorError::NewtonFailure {
            t,
            dt,
            halvings: MAX_HALVINGS,
            update: last_update,
        })
    }

    /// Linear midpoint step with a prescribed nodal force at the midpoint:
    /// the same discrete propagator as [`Stepper::step`] with `N(u_half)` replaced by `force`.
    pub fn step_linear_forced(
        &mut self,
        z: &PhaseVector,
        dt: f64,
        force: &[f64],
    ) -> Result<PhaseVector, IntegratorError> {
        let h = 0.5 * dt;
        let idx = self.cached(h)?;
        let mv = self.op.mass().mul_vec(&z.v);
        let ku = self.op.stiffness().mul_vec(&z.u);
        let mut w: Vec<f64> = (0..z.len()).map(|i| mv[i] / h - ku[i] - force[i]).collect();
        match &self.cache[idx].2 {
            Some(s) => s.solve_in_place(&mut w),
            None => {
                let f = self.pattern.factor(&self.cache[idx].1)?;
                f.solve_in_place(&mut w);
                self.cache[idx].2 = Some(f);
            }
        }
        let u = z.u.iter().zip(&w).map(|(a, b)| a + dt * b).collect();
        let v = z.v.iter().zip(&w).map(|(a, b)| 2.0 * b - a).collect();
        Ok(PhaseVector::new(u, v))
    }

    /// Forgets the BDF2 history.
    pub fn reset(&mut self) {
        self.history = None;
    }
}

/// A recorded state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub index: usize,
    pub t: f64,
    pub state: PhaseVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub h0_norm: Vec<f64>,
    /// Cumulative `∫‖u_t‖²_{H¹(Ω)}` and `∫‖u_t‖²_{H¹(Γ)}`.
    pub diss_bulk: Vec<f64>,
    pub diss_surf: Vec<f64>,
    /// Energy removed over the step ending at each index; 0 at index 0.
    pub dissipation: Vec<f64>,
    pub newton_iterations: Vec<usize>,
    pub halvings: Vec<usize>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: PhaseVector,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with columns `t, E, h0_norm, diss_bulk, diss_surf, energy_residual`.
    pub fn to_csv(&self) -> String {
        let r = energy_identity_residual(self);
        let mut out = String::from("t,E,h0_norm,diss_bulk,diss_surf,energy_residual\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.times[k],
                self.energy[k],
                self.h0_norm[k],
                self.diss_bulk[k],
                self.diss_surf[k],
                r[k]
            ));
        }
        out
    }
}

/// `‖ζ‖²_{H_0} + 2Σ M_lump F(u) + 2Σ M_lump G(u)`.
pub fn energy(
    z: &PhaseVector,
    spec: &NonlinearitySpec,
    op: &BlockOperator,
) -> Result<f64, IntegratorError> {
    Ok(op.weights().h0_norm_sq(z) + 2.0 * nodal_potential(spec, op.fem(), &z.u)?)
}

/// `r_n = E_{n+1} − E_n + 2·dt·v̄ᵀDv̄`, with `r_0 = 0`.
pub fn energy_identity_residual(traj: &TrajectoryRecord) -> Vec<f64> {
    let mut r = vec![0.0; traj.len()];
    for k in 1..traj.len() {
        r[k] = traj.energy[k] - traj.energy[k - 1] + traj.dissipation[k];
    }
    r
}

/// Runs `cfg.t_final / cfg.dt` steps from `z0`, recording diagnostics at every step.
pub fn evolve(
    z0: &PhaseVector,
    cfg: &StepperConfig,
    spec: &NonlinearitySpec,
    op: &BlockOperator,
) -> Result<TrajectoryRecord, IntegratorError> {
    let mut stepper = Stepper::new(op, spec, cfg)?;
    evolve_with(&mut stepper, z0, |_, _, _| {})
}

/// [`evolve`] with a callback receiving `(index, state, step info)` after each step.
pub fn evolve_with<F>(
    stepper: &mut Stepper<'_>,
    z0: &PhaseVector,
    mut observe: F,
) -> Result<TrajectoryRecord, IntegratorError>
where
    F: FnMut(usize, &PhaseVector, &StepInfo),
{
    let cfg = stepper.config().clone();
    let op = stepper.operator();
    let spec = stepper.spec;
    let (steps, last) = cfg.grid();
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
        h0_norm: Vec::with_capacity(steps + 1),
        diss_bulk: Vec::with_capacity(steps + 1),
        diss_surf: Vec::with_capacity(steps + 1),
        dissipation: Vec::with_capacity(steps + 1),
        newton_iterations: Vec::with_capacity(steps + 1),
        halvings: Vec::with_capacity(steps + 1),
        snapshots: Vec::new(),
        final_state: z0.clone(),
    };
    let push_state = |rec: &mut TrajectoryRecord, k: usize, t: f64, z: &PhaseVector| {
        if cfg.state_stride > 0 && k.is_multiple_of(cfg.state_stride) {
            rec.snapshots.push(Snapshot {
                index: k,
                t,
                state: z.clone(),
            });
        }
    };
    rec.times.push(0.0);
    rec.energy.push(energy(z0, spec, op)?);
    rec.h0_norm.push(op.h0_norm(z0));
    rec.diss_bulk.push(0.0);
    rec.diss_surf.push(0.0);
    rec.dissipation.push(0.0);
    rec.newton_iterations.push(0);
    rec.halvings.push(0);
    push_state(&mut rec, 0, 0.0, z0);

    stepper.reset();
    let mut z = z0.clone();
    for k in 1..=steps {
        let t0 = (k - 1) as f64 * cfg.dt;
        let t1 = if k == steps {
            cfg.t_final
        } else {
            k as f64 * cfg.dt
        };
        let (next, info) = stepper.step(&z, if k == steps { last } else { cfg.dt }, t0)?;
        z = next;
        let op = stepper.operator();
        rec.times.push(t1);
        rec.energy.push(energy(&z, spec, op)?);
        rec.h0_norm.push(op.h0_norm(&z));
        rec.diss_bulk.push(rec.diss_bulk[k - 1] + info.diss_bulk);
        rec.diss_surf.push(rec.diss_surf[k - 1] + info.diss_surf);
        rec.dissipation.push(info.dissipation);
        rec.newton_iterations.push(info.newton_iterations);
        rec.halvings.push(info.halvings);
        push_state(&mut rec, k, t1, &z);
        observe(k, &z, &info);
    }
    rec.final_state = z;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use crate::geometry::{assemble, build_disk_mesh};
    use crate::nonlinearity::Family;
    use faer::linalg::solvers::Solve;
    use faer::{Mat, Scale};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn op(nr: usize, nt: usize, alpha: f64, omega: f64) -> BlockOperator {
        let fem = Arc::new(assemble(&build_disk_mesh(nr, nt).unwrap()).unwrap());
        BlockOperator::new(fem, alpha, omega).unwrap()
    }

    fn smooth(op: &BlockOperator, seed: u64) -> PhaseVector {
        InitialData::RandomSmooth {
            seed,
            modes: 4,
            decay: 2.0,
            radius: 1.0,
        }
        .generate(op)
        .unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let a = op(2, 8, 0.5, 1.0);
        let spec = NonlinearitySpec::linear();
        let rec = evolve(
            &PhaseVector::zeros(a.dim()),
            &StepperConfig::new(0.1, 1.0),
            &spec,
            &a,
        )
        .unwrap();
        assert_eq!(rec.final_state.max_abs(), 0.0);
        assert_eq!(rec.len(), 11);
    }

    #[test]
    fn zero_horizon_is_identity() {
        let a = op(2, 8, 0.5, 1.0);
        let z0 = smooth(&a, 3);
        let rec = evolve(
            &z0,
            &StepperConfig::new(0.1, 0.0),
            &NonlinearitySpec::sine_gordon(),
            &a,
        )
        .unwrap();
        assert_eq!(rec.final_state, z0);
        assert_eq!(rec.len(), 1);
    }

    #[test]
    fn linear_step_matches_cayley_transform() {
        // one midpoint step is (I − dt/2·A)⁻¹(I + dt/2·A); its error against e^{A dt} is O(dt³)
        let a = op(2, 8, 1.0, 1.0);
        let spec = NonlinearitySpec::linear();
        let z0 = smooth(&a, 1);
        let dense_a = a.dense_matrix();
        let n2 = 2 * a.dim();
        let x0 = Mat::<f64>::from_fn(n2, 1, |i, _| z0.to_stacked()[i]);
        let mut errors = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3, 5e-4] {
            let mut st = Stepper::new(&a, &spec, &StepperConfig::new(dt, dt)).unwrap();
            let (z1, _) = st.step(&z0, dt, 0.0).unwrap();
            let id = Mat::<f64>::identity(n2, n2);
            let lhs = &id - Scale(0.5 * dt) * &dense_a;
            let rhs = (&id + Scale(0.5 * dt) * &dense_a) * &x0;
            let cayley = lhs.partial_piv_lu().solve(&rhs);
            let stacked = z1.to_stacked();
            let diff = (0..n2)
                .map(|i| (stacked[i] - cayley[(i, 0)]).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "{diff}");
            let exact = dense::expm((Scale(dt) * &dense_a).as_ref()) * &x0;
            let e = PhaseVector::from_stacked(&(0..n2).map(|i| exact[(i, 0)]).collect::<Vec<_>>());
            errors.push(a.h0_norm(&z1.sub(&e)));
        }
        let orders = crate::fit::halving_orders(&errors);
        assert!(orders.iter().all(|p| *p >= 2.7), "{orders:?}");
    }

    #[test]
    fn linear_energy_balance_is_exact() {
        let a = op(2, 8, 0.3, 0.7);
        let z0 = smooth(&a, 5);
        let rec = evolve(
            &z0,
            &StepperConfig::new(0.05, 2.0),
            &NonlinearitySpec::linear(),
            &a,
        )
        .unwrap();
        let emax = rec.energy.iter().copied().fold(0.0, f64::max);
        let r = energy_identity_residual(&rec);
        assert!(r.iter().all(|x| x.abs() <= 1e-11 * emax));
        assert!(rec.h0_norm.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-13)));
    }

    #[test]
    fn composition_is_bit_identical() {
        let a = op(2, 8, 0.5, 1.0);
        let spec = NonlinearitySpec::sine_gordon();
        let z0 = smooth(&a, 9);
        let full = evolve(&z0, &StepperConfig::new(0.05, 1.0), &spec, &a).unwrap();
        let first = evolve(&z0, &StepperConfig::new(0.05, 0.5), &spec, &a).unwrap();
        let second = evolve(
            &first.final_state,
            &StepperConfig::new(0.05, 0.5),
            &spec,
            &a,
        )
        .unwrap();
        assert_eq!(full.final_state.sub(&second.final_state).max_abs(), 0.0);
    }

    #[test]
    fn sine_gordon_newton_is_fast() {
        let a = op(2, 8, 1.0, 1.0);
        let spec = NonlinearitySpec::sine_gordon();
        let z0 = smooth(&a, 2).scale(3.0);
        let rec = evolve(&z0, &StepperConfig::new(0.05, 1.0), &spec, &a).unwrap();
        assert!(rec.newton_iterations[1..]
            .iter()
            .all(|&k| (1..=6).contains(&k)));
    }

    #[test]
    fn energy_of_constant_pi() {
        let a = op(1, 4, 1.0, 1.0);
        let spec = NonlinearitySpec::sine_gordon();
        let z = PhaseVector::new(vec![PI; a.dim()], vec![0.0; a.dim()]);
        let fem = a.fem();
        let h0 = PI * PI * (fem.area + fem.perimeter);
        let e = energy(&z, &spec, &a).unwrap();
        assert!((e - (h0 + 4.0 * (fem.area + fem.perimeter))).abs() < 1e-12);
    }

    #[test]
    fn bdf2_runs_and_dissipates() {
        let a = op(2, 8, 0.5, 1.0);
        let spec = NonlinearitySpec::new(Family::KleinGordon { exponent: 3.0 }, Family::SineGordon);
        let mut cfg = StepperConfig::new(0.02, 1.0);
        cfg.scheme = Scheme::Bdf2;
        let z0 = smooth(&a, 4);
        let rec = evolve(&z0, &cfg, &spec, &a).unwrap();
        assert!(rec.energy.last().unwrap() < &rec.energy[0]);
    }

    #[test]
    fn newton_failure_is_reported() {
        let a = op(1, 4, 0.5, 1.0);
        let spec = NonlinearitySpec::sine_gordon();
        let mut cfg = StepperConfig::new(0.1, 0.1);
        cfg.newton_max = 1;
        cfg.newton_tol = 1e-300;
        let z0 = PhaseVector::new(vec![1.0; a.dim()], vec![1.0; a.dim()]);
        let err = evolve(&z0, &cfg, &spec, &a).unwrap_err();
        assert!(matches!(
            err,
            IntegratorError::NewtonFailure {
                halvings: MAX_HALVINGS,
                ..
            }
        ));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(StepperConfig::new(0.0, 1.0).validate().is_err());
        assert!(StepperConfig::new(0.5, 0.1).validate().is_err());
    }
}
