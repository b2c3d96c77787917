use std::f64::consts::PI;

use rayon::prelude::*;

use super::{BlockOperator, PhaseVector};
use crate::error::OperatorError;
use crate::sparse::{CsrMatrix, SpdPattern};

/// Recorded in run manifests.
pub const FRACTIONAL_SIGN_CONVENTION: &str =
    "fractional powers are taken of -A (spectrum in the right half plane): X_theta = (-A)^(-theta)";

#[derive(Clone, Debug, PartialEq)]
pub struct FractionalOptions {
    /// Trapezoid step in `s = ln λ` before refinement.
    pub initial_step: f64,
    pub max_refinements: usize,
    /// Relative change between successive halvings accepted as converged.
    pub tol: f64,
    /// Relative change above which the quadrature is declared failed.
    pub fail_tol: f64,
    /// Target size of the neglected tails relative to `‖z‖`.
    pub tail_tol: f64,
}

impl Default for FractionalOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            max_refinements: 6,
            tol: 1e-11,
            fail_tol: 1e-6,
            tail_tol: 1e-14,
        }
    }
}

/// `(−A)^{−θ} z = (sin πθ / π) ∫_ℝ e^{(1−θ)s} (e^s − A)⁻¹ z ds`, trapezoid rule
/// with step halving.
pub fn fractional_power_apply(
    op: &BlockOperator,
    theta: f64,
    z: &PhaseVector,
    opts: &FractionalOptions,
) -> Result<PhaseVector, OperatorError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(OperatorError::InvalidParameter(format!(
            "theta = {theta} not in (0, 1)"
        )));
    }
    let n = op.dim();
    if z.len() != n {
        return Err(OperatorError::DimensionMismatch {
            expected: n,
            found: z.len(),
        });
    }
    let znorm = op.h0_norm(z);
    if znorm == 0.0 {
        return Ok(PhaseVector::zeros(n));
    }
    // ‖R(λ)‖ ≤ 1/λ bounds the upper tail; the lower tail uses a generous bound on ‖A⁻¹‖
    let s_max = (1.0 / (theta * opts.tail_tol)).ln() / theta;
    let s_min = -(100.0 / ((1.0 - theta) * opts.tail_tol)).ln() / (1.0 - theta);
    if s_max > 700.0 || s_min < -700.0 {
        return Err(OperatorError::InvalidParameter(format!(
            "theta = {theta} needs quadrature over [{s_min:.0}, {s_max:.0}], beyond the range of exp"
        )));
    }
    let pattern = SpdPattern::new(&op.shifted_system(1.0))?;

    let integrand = |s: f64| -> Result<PhaseVector, OperatorError> {
        let lam = s.exp();
        // divide the shifted system by max(1, λ²) to keep it well scaled
        let (scale, sys) = if lam > 1.0 {
            let c = (-2.0 * s).exp();
            let sys = CsrMatrix::linear_combination(&[
                (c, op.stiffness()),
                ((-s).exp(), op.damping()),
                (1.0, op.mass()),
            ]);
            (c, sys)
        } else {
            (1.0, op.shifted_system(lam))
        };
        let solver = pattern.factor(&sys)?;
        let r = op.resolvent_with(&solver, lam, scale, z);
        Ok(r.scale(((1.0 - theta) * s).exp()))
    };
    let sum_nodes = |nodes: Vec<f64>| -> Result<PhaseVector, OperatorError> {
        let vals = nodes
            .par_iter()
            .map(|&s| integrand(s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut acc = PhaseVector::zeros(n);
        for v in &vals {
            acc = acc.add(v);
        }
        Ok(acc)
    };

    let mut h = opts.initial_step;
    let count = ((s_max - s_min) / h).ceil() as usize;
    let mut raw = sum_nodes((0..=count).map(|k| s_min + k as f64 * h).collect())?;
    let prefactor = (PI * theta).sin() / PI;
    let mut current = raw.scale(prefactor * h);
    let mut change = f64::INFINITY;
    for level in 1..=opts.max_refinements {
        let odd: Vec<f64> = (0..count << (level - 1))
            .map(|k| s_min + (k as f64 + 0.5) * h)
            .collect();
        raw = raw.add(&sum_nodes(odd)?);
        h *= 0.5;
        let next = raw.scale(prefactor * h);
        change = op.h0_norm(&next.sub(&current)) / op.h0_norm(&next).max(f64::MIN_POSITIVE);
        current = next;
        if change <= opts.tol {
            return Ok(current);
        }
    }
    if change <= opts.fail_tol {
        Ok(current)
    } else {
        Err(OperatorError::QuadratureNoConvergence(change))
    }
}
