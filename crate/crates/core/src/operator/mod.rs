//! The discrete block generator `A(u, v) = (v, −M⁻¹(Ku + Dv))`, phase-space
//! norms and the spectral probes built on it.

mod fractional;
mod resolvent;
mod semigroup;

use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

pub use fractional::{fractional_power_apply, FractionalOptions, FRACTIONAL_SIGN_CONVENTION};
pub use resolvent::{
    resolution_limit, resolvent_norm, resolvent_norm_with, resolvent_scan, NormMethod,
    DENSE_NODE_LIMIT,
};
pub use semigroup::{semigroup_smoothing_probe, SmoothingReport, DENSE_STATE_LIMIT};

use crate::dense;
use crate::error::OperatorError;
use crate::geometry::FemMatrices;
use crate::sparse::{CsrMatrix, SpdSolver};

/// Discrete state `ζ = (u, v)`; boundary entries double as the traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseVector {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Self {
        assert_eq!(u.len(), v.len(), "u and v must share the node count");
        Self { u, v }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &PhaseVector, b: f64) -> PhaseVector {
        let f = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        PhaseVector {
            u: f(&self.u, &other.u),
            v: f(&self.v, &other.v),
        }
    }

    pub fn sub(&self, other: &PhaseVector) -> PhaseVector {
        self.combine(1.0, other, -1.0)
    }

    pub fn add(&self, other: &PhaseVector) -> PhaseVector {
        self.combine(1.0, other, 1.0)
    }

    pub fn scale(&self, a: f64) -> PhaseVector {
        PhaseVector {
            u: self.u.iter().map(|x| a * x).collect(),
            v: self.v.iter().map(|x| a * x).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Stacked `[u; v]`.
    pub fn to_stacked(&self) -> Vec<f64> {
        self.u.iter().chain(&self.v).copied().collect()
    }

    pub fn from_stacked(x: &[f64]) -> PhaseVector {
        let n = x.len() / 2;
        PhaseVector::new(x[..n].to_vec(), x[n..].to_vec())
    }
}

/// Phase-space weights: `blockdiag(K, M)` for `H_0` and the dual-norm data for `H_{-1}`.
pub struct NormWeights {
    fem: Arc<FemMatrices>,
    k: CsrMatrix,
    m: CsrMatrix,
    mass_gamma_b: CsrMatrix,
    bulk_h1: SpdSolver,
    surf_h1: SpdSolver,
}

impl NormWeights {
    pub fn new(fem: Arc<FemMatrices>) -> Result<Self, OperatorError> {
        let bulk =
            CsrMatrix::linear_combination(&[(1.0, &fem.stiff_omega), (1.0, &fem.mass_omega)]);
        let surf =
            CsrMatrix::linear_combination(&[(1.0, &fem.stiff_gamma), (1.0, &fem.mass_gamma)])
                .restrict(&fem.boundary);
        Ok(Self {
            k: fem.stiffness(),
            m: fem.mass(),
            mass_gamma_b: fem.mass_gamma.restrict(&fem.boundary),
            bulk_h1: SpdSolver::new(&bulk)?,
            surf_h1: SpdSolver::new(&surf)?,
            fem,
        })
    }

    pub fn fem(&self) -> &FemMatrices {
        &self.fem
    }

    fn check(&self, z: &PhaseVector) -> Result<(), OperatorError> {
        let n = self.k.dim();
        if z.u.len() != n || z.v.len() != n {
            return Err(OperatorError::DimensionMismatch {
                expected: n,
                found: z.u.len().max(z.v.len()),
            });
        }
        Ok(())
    }

    pub fn h0_inner(&self, a: &PhaseVector, b: &PhaseVector) -> f64 {
        self.k.bilinear(&a.u, &b.u) + self.m.bilinear(&a.v, &b.v)
    }

    pub fn h0_norm_sq(&self, z: &PhaseVector) -> f64 {
        self.h0_inner(z, z)
    }

    pub fn h0_norm(&self, z: &PhaseVector) -> f64 {
        self.h0_norm_sq(z).max(0.0).sqrt()
    }

    pub fn hminus1_norm_sq(&self, z: &PhaseVector) -> Result<f64, OperatorError> {
        self.check(z)?;
        let fem = &self.fem;
        let ub = fem.trace(&z.u);
        let vb = fem.trace(&z.v);
        let r_omega = fem.mass_omega.mul_vec(&z.v);
        let r_gamma = self.mass_gamma_b.mul_vec(&vb);
        let s_omega = self.bulk_h1.solve(&r_omega);
        let s_gamma = self.surf_h1.solve(&r_gamma);
        let dual: f64 = r_omega
            .iter()
            .zip(&s_omega)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + r_gamma
                .iter()
                .zip(&s_gamma)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Ok(fem.mass_omega.quad(&z.u) + self.mass_gamma_b.quad(&ub) + dual)
    }

    pub fn hminus1_norm(&self, z: &PhaseVector) -> Result<f64, OperatorError> {
        Ok(self.hminus1_norm_sq(z)?.max(0.0).sqrt())
    }

    /// Linear map `E` with `‖Ez‖₂ = ‖z‖_{H_{-1}}`, as a dense matrix acting on `[u; v]`.
    pub fn hminus1_embedding(&self) -> Result<Mat<f64>, OperatorError> {
        let fem = &self.fem;
        let n = fem.node_count();
        let b = &fem.boundary;
        let nb = b.len();
        let l_mo = dense::cholesky_lower(fem.mass_omega.to_dense().as_ref())?;
        let l_mg = dense::cholesky_lower(self.mass_gamma_b.to_dense().as_ref())?;
        let bulk =
            CsrMatrix::linear_combination(&[(1.0, &fem.stiff_omega), (1.0, &fem.mass_omega)]);
        let surf =
            CsrMatrix::linear_combination(&[(1.0, &fem.stiff_gamma), (1.0, &fem.mass_gamma)])
                .restrict(b);
        let l_so = dense::cholesky_lower(bulk.to_dense().as_ref())?;
        let l_sg = dense::cholesky_lower(surf.to_dense().as_ref())?;
        // dual parts: ‖L⁻¹ M v‖ with (K+M) = L Lᵀ
        let dual_o = dense::solve_lower(l_so.as_ref(), fem.mass_omega.to_dense().as_ref());
        let dual_g = dense::solve_lower(l_sg.as_ref(), self.mass_gamma_b.to_dense().as_ref());
        let rows = 2 * n + 2 * nb;
        let mut e = Mat::<f64>::zeros(rows, 2 * n);
        for i in 0..n {
            for j in 0..n {
                e[(i, j)] = l_mo[(j, i)];
                e[(n + nb + i, n + j)] = dual_o[(i, j)];
            }
        }
        for i in 0..nb {
            for j in 0..nb {
                e[(n + i, b[j])] = l_mg[(j, i)];
                e[(2 * n + nb + i, n + b[j])] = dual_g[(i, j)];
            }
        }
        Ok(e)
    }
}

/// `A_α` for fixed `(α, ω)` with the factorizations its action needs.
pub struct BlockOperator {
    pub alpha: f64,
    pub omega: f64,
    fem: Arc<FemMatrices>,
    weights: NormWeights,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    damping: CsrMatrix,
    mass_solver: SpdSolver,
    stiffness_solver: SpdSolver,
}

impl BlockOperator {
    pub fn new(fem: Arc<FemMatrices>, alpha: f64, omega: f64) -> Result<Self, OperatorError> {
        if !(alpha >= 0.0) || !(omega > 0.0) {
            return Err(OperatorError::InvalidParameter(format!(
                "need alpha >= 0 and omega > 0, got alpha = {alpha}, omega = {omega}"
            )));
        }
        let mass = fem.mass();
        let stiffness = fem.stiffness();
        Ok(Self {
            alpha,
            omega,
            damping: fem.damping(alpha, omega),
            mass_solver: SpdSolver::new(&mass)?,
            stiffness_solver: SpdSolver::new(&stiffness)?,
            weights: NormWeights::new(fem.clone())?,
            mass,
            stiffness,
            fem,
        })
    }

    pub fn fem(&self) -> &FemMatrices {
        &self.fem
    }

    pub fn fem_arc(&self) -> Arc<FemMatrices> {
        self.fem.clone()
    }

    pub fn weights(&self) -> &NormWeights {
        &self.weights
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn damping(&self) -> &CsrMatrix {
        &self.damping
    }

    pub fn mass_solver(&self) -> &SpdSolver {
        &self.mass_solver
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    fn check(&self, z: &PhaseVector) -> Result<(), OperatorError> {
        self.weights.check(z)
    }

    pub fn apply(&self, z: &PhaseVector) -> Result<PhaseVector, OperatorError> {
        self.check(z)?;
        let ku = self.stiffness.mul_vec(&z.u);
        let dv = self.damping.mul_vec(&z.v);
        let mut w: Vec<f64> = ku.iter().zip(&dv).map(|(a, b)| -(a + b)).collect();
        self.mass_solver.solve_in_place(&mut w);
        Ok(PhaseVector::new(z.v.clone(), w))
    }

    /// `⟨Aζ, ζ⟩_{H_0}` plus the dissipation form assembled term by term; zero up to round-off.
    pub fn dissipativity_residual(&self, z: &PhaseVector) -> Result<f64, OperatorError> {
        let az = self.apply(z)?;
        let fem = &self.fem;
        let vb = &z.v;
        let dissipation = self.omega * fem.stiff_omega.quad(vb)
            + fem.mass_omega.quad(vb)
            + self.alpha * self.omega * fem.stiff_gamma.quad(vb)
            + fem.mass_gamma.quad(vb);
        Ok(self.weights.h0_inner(&az, z) + dissipation)
    }

    pub fn h0_norm(&self, z: &PhaseVector) -> f64 {
        self.weights.h0_norm(z)
    }

    pub fn hminus1_norm(&self, z: &PhaseVector) -> Result<f64, OperatorError> {
        self.weights.hminus1_norm(z)
    }

    /// `(−A)⁻¹ z`
    pub fn neg_inverse_apply(&self, z: &PhaseVector) -> Result<PhaseVector, OperatorError> {
        self.check(z)?;
        let mb = self.mass.mul_vec(&z.v);
        let da = self.damping.mul_vec(&z.u);
        let rhs: Vec<f64> = mb.iter().zip(&da).map(|(a, b)| a + b).collect();
        let x = self.stiffness_solver.solve(&rhs);
        Ok(PhaseVector::new(x, z.u.iter().map(|a| -a).collect()))
    }

    /// `(λ − A)⁻¹ z` for real `λ > 0`.
    pub fn resolvent_apply_real(
        &self,
        lambda: f64,
        z: &PhaseVector,
    ) -> Result<PhaseVector, OperatorError> {
        self.check(z)?;
        let zmat = self.shifted_system(lambda);
        let solver = SpdSolver::new(&zmat)?;
        Ok(self.resolvent_with(&solver, lambda, 1.0, z))
    }

    /// `K + λD + λ²M`, stored with the common pattern of all three.
    pub(crate) fn shifted_system(&self, lambda: f64) -> CsrMatrix {
        CsrMatrix::linear_combination(&[
            (1.0, &self.stiffness),
            (lambda, &self.damping),
            (lambda * lambda, &self.mass),
        ])
    }

    /// `solver` factors `c·(K + λD + λ²M)`.
    pub(crate) fn resolvent_with(
        &self,
        solver: &SpdSolver,
        lambda: f64,
        c: f64,
        z: &PhaseVector,
    ) -> PhaseVector {
        // Z x = M b + (λM + D) a and, without the cancellation in λx − a, Z y = λ M b − K a
        let mb = self.mass.mul_vec(&z.v);
        let ma = self.mass.mul_vec(&z.u);
        let da = self.damping.mul_vec(&z.u);
        let ka = self.stiffness.mul_vec(&z.u);
        let mut x: Vec<f64> = (0..mb.len())
            .map(|i| c * (mb[i] + lambda * ma[i] + da[i]))
            .collect();
        let mut y: Vec<f64> = (0..mb.len())
            .map(|i| c * (lambda * mb[i] - ka[i]))
            .collect();
        solver.solve_in_place(&mut x);
        solver.solve_in_place(&mut y);
        PhaseVector::new(x, y)
    }

    /// `F A F⁻¹` with `F = blockdiag(L_Kᵀ, L_Mᵀ)`: the generator in coordinates
    /// where the `H_0` norm is Euclidean.
    pub fn dense_congruence(&self) -> Result<Mat<f64>, OperatorError> {
        let n = self.dim();
        let l_k = dense::cholesky_lower(self.stiffness.to_dense().as_ref())?;
        let l_m = dense::cholesky_lower(self.mass.to_dense().as_ref())?;
        let x = dense::solve_lower(l_m.as_ref(), l_k.as_ref());
        let y = dense::solve_lower(l_m.as_ref(), self.damping.to_dense().as_ref());
        let b22 = dense::solve_lower(l_m.as_ref(), y.transpose());
        let mut b = Mat::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                b[(i, n + j)] = x[(j, i)];
                b[(n + i, j)] = -x[(i, j)];
                b[(n + i, n + j)] = -b22[(i, j)];
            }
        }
        Ok(b)
    }

    /// Dense `A` acting on stacked `[u; v]`.
    pub fn dense_matrix(&self) -> Mat<f64> {
        let n = self.dim();
        let mut a = Mat::<f64>::zeros(2 * n, 2 * n);
        let k = self.stiffness.to_dense();
        let d = self.damping.to_dense();
        for j in 0..n {
            a[(j, n + j)] = 1.0;
            let mut kc: Vec<f64> = (0..n).map(|i| -k[(i, j)]).collect();
            let mut dc: Vec<f64> = (0..n).map(|i| -d[(i, j)]).collect();
            self.mass_solver.solve_in_place(&mut kc);
            self.mass_solver.solve_in_place(&mut dc);
            for i in 0..n {
                a[(n + i, j)] = kc[i];
                a[(n + i, n + j)] = dc[i];
            }
        }
        a
    }
}

/// Rates of the composed exponential attraction: `C' = C·C1 + C2`, `a' = a1·a2/(K + a1 + a2)`.
pub fn transitivity_rate(
    c: f64,
    k: f64,
    c1: f64,
    a1: f64,
    c2: f64,
    a2: f64,
) -> Result<(f64, f64), OperatorError> {
    for (name, x) in [
        ("C", c),
        ("K", k),
        ("C1", c1),
        ("a1", a1),
        ("C2", c2),
        ("a2", a2),
    ] {
        if !(x > 0.0) || !x.is_finite() {
            return Err(OperatorError::InvalidParameter(format!(
                "{name} = {x} must be positive"
            )));
        }
    }
    Ok((c * c1 + c2, a1 * a2 / (k + (a1 + a2))))
}

/// Fitted log–log data over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub fitted_slope: f64,
    pub fitted_constant: f64,
    pub window: (f64, f64),
}

impl ScanReport {
    /// Least-squares power law on the points with abscissa inside `window`.
    pub fn fit(
        grid: Vec<f64>,
        values: Vec<f64>,
        window: (f64, f64),
    ) -> Result<Self, OperatorError> {
        let (x, y): (Vec<f64>, Vec<f64>) = grid
            .iter()
            .zip(&values)
            .filter(|(g, v)| {
                **g >= window.0 * (1.0 - 1e-12) && **g <= window.1 * (1.0 + 1e-12) && **v > 0.0
            })
            .map(|(g, v)| (*g, *v))
            .unzip();
        if x.len() < 4 {
            return Err(OperatorError::WindowTooSmall(x.len()));
        }
        let (slope, constant) =
            crate::fit::power_law_fit(&x, &y).ok_or(OperatorError::WindowTooSmall(x.len()))?;
        Ok(Self {
            grid,
            values,
            fitted_slope: slope,
            fitted_constant: constant,
            window,
        })
    }
}
