use faer::Scale;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BlockOperator, ScanReport};
use crate::dense;
use crate::error::OperatorError;

/// Largest state dimension (2 × nodes) for dense exponentials.
pub const DENSE_STATE_LIMIT: usize = 1500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    /// `t^γ ‖A e^{At}‖` over the grid, with a power-law fit over the full grid.
    pub scan: ScanReport,
    pub gamma: f64,
    pub sup_weighted: f64,
    /// `‖e^{At}‖` on the same grid.
    pub semigroup_norms: Vec<f64>,
}

/// `sup_t t^γ ‖A e^{At}‖_{H_0}` with `γ = 2` for `α = 0` and `γ = 1` otherwise.
pub fn semigroup_smoothing_probe(
    op: &BlockOperator,
    t_grid: &[f64],
) -> Result<SmoothingReport, OperatorError> {
    let states = 2 * op.dim();
    if states > DENSE_STATE_LIMIT {
        return Err(OperatorError::TooLargeForDense(states, DENSE_STATE_LIMIT));
    }
    if t_grid.len() < 4 || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(OperatorError::InvalidParameter(
            "t_grid needs at least 4 positive times".into(),
        ));
    }
    let gamma = if op.alpha == 0.0 { 2.0 } else { 1.0 };
    let b = op.dense_congruence()?;
    let rows = t_grid
        .par_iter()
        .map(|&t| {
            let e = dense::expm((Scale(t) * &b).as_ref());
            let be = &b * &e;
            Ok((
                t.powf(gamma) * dense::spectral_norm(be.as_ref())?,
                dense::spectral_norm(e.as_ref())?,
            ))
        })
        .collect::<Result<Vec<(f64, f64)>, OperatorError>>()?;
    let (weighted, semigroup_norms): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let sup_weighted = weighted.iter().copied().fold(0.0, f64::max);
    let window = (t_grid[0], *t_grid.last().unwrap());
    Ok(SmoothingReport {
        scan: ScanReport::fit(t_grid.to_vec(), weighted, window)?,
        gamma,
        sup_weighted,
        semigroup_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble, build_disk_mesh};
    use std::sync::Arc;

    #[test]
    fn contraction_and_finite_sup() {
        let fem = Arc::new(assemble(&build_disk_mesh(2, 8).unwrap()).unwrap());
        let op = BlockOperator::new(fem, 1.0, 1.0).unwrap();
        let grid = crate::fit::log_space(1e-3, 1.0, 6);
        let r = semigroup_smoothing_probe(&op, &grid).unwrap();
        assert_eq!(r.gamma, 1.0);
        assert!(r.sup_weighted.is_finite() && r.sup_weighted > 0.0);
        assert!(r.semigroup_norms.iter().all(|n| *n <= 1.0 + 1e-10));
    }

    #[test]
    fn rejects_large_state() {
        let fem = Arc::new(assemble(&build_disk_mesh(10, 80).unwrap()).unwrap());
        let op = BlockOperator::new(fem, 0.0, 1.0).unwrap();
        let grid = [0.1, 0.2, 0.3, 0.4];
        assert!(matches!(
            semigroup_smoothing_probe(&op, &grid),
            Err(OperatorError::TooLargeForDense(..))
        ));
    }
}
