use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BlockOperator, ScanReport};
use crate::error::OperatorError;
use crate::sparse::{ComplexLu, CsrMatrix};

/// Largest node count for which the resolvent norm uses a dense SVD by default.
pub const DENSE_NODE_LIMIT: usize = 600;

const LANCZOS_TOL: f64 = 1e-10;
const LANCZOS_SEED: u64 = 0x5eed_1a2c;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    /// Dense up to [`DENSE_NODE_LIMIT`] nodes, iterative above.
    #[default]
    Auto,
    /// Smallest singular value of `λ − B` with `B` the congruent generator.
    Dense,
    /// Lanczos on `R*R` in the `H_0` inner product, sparse complex LU per shift.
    Iterative,
}

enum Engine {
    Dense(Mat<f64>),
    Iterative(faer::sparse::linalg::solvers::SymbolicLu<usize>),
}

impl Engine {
    fn new(op: &BlockOperator, method: NormMethod) -> Result<Self, OperatorError> {
        let dense = match method {
            NormMethod::Auto => op.dim() <= DENSE_NODE_LIMIT,
            NormMethod::Dense => true,
            NormMethod::Iterative => false,
        };
        if dense {
            Ok(Engine::Dense(op.dense_congruence()?))
        } else {
            let pattern = shifted(op, c64::new(1.0, 1.0));
            Ok(Engine::Iterative(ComplexLu::symbolic(&pattern)?))
        }
    }

    fn norm(&self, op: &BlockOperator, lambda: c64) -> Result<f64, OperatorError> {
        match self {
            Engine::Dense(b) => dense_norm(b, lambda),
            Engine::Iterative(sym) => iterative_norm(op, sym, lambda),
        }
    }
}

fn shifted(op: &BlockOperator, lambda: c64) -> faer::sparse::SparseColMat<usize, c64> {
    CsrMatrix::complex_combination(&[
        (c64::new(1.0, 0.0), op.stiffness()),
        (lambda, op.damping()),
        (lambda * lambda, op.mass()),
    ])
}

fn eigen_hit(lambda: c64) -> OperatorError {
    OperatorError::EigenvalueHit {
        re: lambda.re,
        im: lambda.im,
    }
}

fn dense_norm(b: &Mat<f64>, lambda: c64) -> Result<f64, OperatorError> {
    let n = b.nrows();
    let shifted = Mat::<c64>::from_fn(n, n, |i, j| {
        let d = if i == j { lambda } else { c64::new(0.0, 0.0) };
        d - c64::new(b[(i, j)], 0.0)
    });
    let s = shifted.singular_values().map_err(|e| {
        OperatorError::Linalg(crate::error::LinalgError::NoConvergence(format!("{e:?}")))
    })?;
    let smin = *s.last().unwrap();
    let scale = s[0].max(1.0);
    if !(smin > 1e-14 * scale) {
        return Err(eigen_hit(lambda));
    }
    Ok(1.0 / smin)
}

struct Pair {
    u: Vec<c64>,
    v: Vec<c64>,
}

fn iterative_norm(
    op: &BlockOperator,
    sym: &faer::sparse::linalg::solvers::SymbolicLu<usize>,
    lambda: c64,
) -> Result<f64, OperatorError> {
    let n = op.dim();
    let lu = ComplexLu::with_symbolic(sym, &shifted(op, lambda)).map_err(|_| eigen_hit(lambda))?;
    let (m, d, k) = (op.mass(), op.damping(), op.stiffness());
    let lc = lambda.conj();

    // (λ − A)⁻¹(a, b) with Z = K + λD + λ²M: x = Z⁻¹(Mb + (λM + D)a), y = Z⁻¹(λMb − Ka).
    // The second solve replaces y = λx − a, which cancels badly for large |λ|.
    let apply_r = |z: &Pair| -> Pair {
        let mb = m.mul_cvec(&z.v);
        let ma = m.mul_cvec(&z.u);
        let da = d.mul_cvec(&z.u);
        let ka = k.mul_cvec(&z.u);
        let mut x: Vec<c64> = (0..n).map(|i| mb[i] + lambda * ma[i] + da[i]).collect();
        let mut y: Vec<c64> = (0..n).map(|i| lambda * mb[i] - ka[i]).collect();
        lu.solve_in_place(&mut x);
        lu.solve_in_place(&mut y);
        Pair { u: x, v: y }
    };
    // H_0-adjoint: (λ̄ − A*)⁻¹(a, b) with A* = [[0, −I], [M⁻¹K, −M⁻¹D]];
    // x = Z⁻ᴴ(λ̄Ma + Da − Mb), y = Z⁻ᴴ(Ka + λ̄Mb)
    let apply_rstar = |z: &Pair| -> Pair {
        let mb = m.mul_cvec(&z.v);
        let ma = m.mul_cvec(&z.u);
        let da = d.mul_cvec(&z.u);
        let ka = k.mul_cvec(&z.u);
        let mut x: Vec<c64> = (0..n).map(|i| lc * ma[i] + da[i] - mb[i]).collect();
        let mut y: Vec<c64> = (0..n).map(|i| ka[i] + lc * mb[i]).collect();
        lu.solve_conjugate_in_place(&mut x);
        lu.solve_conjugate_in_place(&mut y);
        Pair { u: x, v: y }
    };
    let inner = |a: &Pair, b: &Pair| -> c64 {
        let kb = k.mul_cvec(&b.u);
        let mb = m.mul_cvec(&b.v);
        let mut s = c64::new(0.0, 0.0);
        for i in 0..n {
            s += a.u[i].conj() * kb[i] + a.v[i].conj() * mb[i];
        }
        s
    };
    let axpy = |y: &mut Pair, c: c64, x: &Pair| {
        for i in 0..n {
            y.u[i] -= c * x.u[i];
            y.v[i] -= c * x.v[i];
        }
    };
    let scale = |x: &mut Pair, s: f64| {
        for i in 0..n {
            x.u[i] *= s;
            x.v[i] *= s;
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let mut q = Pair {
        u: (0..n)
            .map(|_| c64::new(rng.random::<f64>() - 0.5, 0.0))
            .collect(),
        v: (0..n)
            .map(|_| c64::new(rng.random::<f64>() - 0.5, 0.0))
            .collect(),
    };
    let nq = inner(&q, &q).re.sqrt();
    scale(&mut q, 1.0 / nq);

    let max_steps = (2 * n).min(800);
    let mut basis: Vec<Pair> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut estimate = 0.0;
    for step in 0..max_steps {
        let rq = apply_r(&q);
        if rq
            .u
            .iter()
            .chain(&rq.v)
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(eigen_hit(lambda));
        }
        let mut w = apply_rstar(&rq);
        let a = inner(&q, &w).re;
        alphas.push(a);
        basis.push(q);
        for _ in 0..2 {
            for qj in &basis {
                let c = inner(qj, &w);
                axpy(&mut w, c, qj);
            }
        }
        let b = inner(&w, &w).re.max(0.0).sqrt();
        let kdim = alphas.len();
        let check = kdim.is_multiple_of(4) || b <= 1e-14 * a.abs().max(1e-300) || step + 1 == max_steps;
        if check {
            let t = Mat::<f64>::from_fn(kdim, kdim, |i, j| {
                if i == j {
                    alphas[i]
                } else if i == j + 1 {
                    betas[j]
                } else if j == i + 1 {
                    betas[i]
                } else {
                    0.0
                }
            });
            let evd = t.self_adjoint_eigen(faer::Side::Lower).map_err(|e| {
                OperatorError::Linalg(crate::error::LinalgError::NoConvergence(format!("{e:?}")))
            })?;
            let theta = evd.S()[kdim - 1];
            let resid = b * evd.U()[(kdim - 1, kdim - 1)].abs();
            estimate = theta;
            if resid <= LANCZOS_TOL * theta.abs() || b <= 1e-14 * theta.abs() {
                return Ok(theta.max(0.0).sqrt());
            }
        }
        betas.push(b);
        let mut next = w;
        scale(&mut next, 1.0 / b);
        q = next;
    }
    if estimate > 0.0 && max_steps == 2 * n {
        return Ok(estimate.sqrt());
    }
    Err(OperatorError::IterationLimit(max_steps))
}

/// `H_0` operator norm of `(λ − A)⁻¹`.
pub fn resolvent_norm(op: &BlockOperator, lambda: c64) -> Result<f64, OperatorError> {
    resolvent_norm_with(op, lambda, NormMethod::Auto)
}

pub fn resolvent_norm_with(
    op: &BlockOperator,
    lambda: c64,
    method: NormMethod,
) -> Result<f64, OperatorError> {
    Engine::new(op, method)?.norm(op, lambda)
}

/// `‖R(iβ, A)‖` over `betas` with a power-law fit on `window`.
pub fn resolvent_scan(
    op: &BlockOperator,
    betas: &[f64],
    window: (f64, f64),
    method: NormMethod,
) -> Result<ScanReport, OperatorError> {
    let inside = betas
        .iter()
        .filter(|b| **b >= window.0 * (1.0 - 1e-12) && **b <= window.1 * (1.0 + 1e-12))
        .count();
    if inside < 4 {
        return Err(OperatorError::WindowTooSmall(inside));
    }
    let engine = Engine::new(op, method)?;
    let values = betas
        .par_iter()
        .map(|&b| engine.norm(op, c64::new(0.0, b)))
        .collect::<Result<Vec<f64>, _>>()?;
    ScanReport::fit(betas.to_vec(), values, window)
}

/// Largest grid frequency with `β·‖R(iβ)‖ ≥ level`. For large `β` every discrete
/// generator has `β·‖R(iβ)‖ → 1`, so this marks where the mesh stops resolving the
/// modes and the norm falls onto the bounded-operator asymptote.
pub fn resolution_limit(grid: &[f64], values: &[f64], level: f64) -> Option<f64> {
    grid.iter()
        .zip(values)
        .filter(|(b, v)| **b * **v >= level)
        .map(|(b, _)| *b)
        .next_back()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble, build_disk_mesh};
    use std::sync::Arc;

    fn op(nr: usize, nt: usize, alpha: f64, omega: f64) -> BlockOperator {
        let fem = Arc::new(assemble(&build_disk_mesh(nr, nt).unwrap()).unwrap());
        BlockOperator::new(fem, alpha, omega).unwrap()
    }

    #[test]
    fn dense_and_iterative_agree() {
        for (alpha, omega) in [(0.0, 1.0), (1.0, 0.1), (0.5, 0.5)] {
            let a = op(2, 10, alpha, omega);
            for lam in [
                c64::new(0.0, 3.0),
                c64::new(0.0, 40.0),
                c64::new(0.5, -7.0),
                c64::new(0.0, 0.0),
            ] {
                let d = resolvent_norm_with(&a, lam, NormMethod::Dense).unwrap();
                let i = resolvent_norm_with(&a, lam, NormMethod::Iterative).unwrap();
                assert!(
                    (d - i).abs() <= 1e-8 * d,
                    "{alpha} {omega} {lam}: {d} vs {i}"
                );
            }
        }
    }

    #[test]
    fn hille_yosida_bound() {
        let a = op(2, 8, 0.3, 0.7);
        for lam in [0.5, 100.0] {
            let r = resolvent_norm(&a, c64::new(lam, 0.0)).unwrap();
            assert!(r <= (1.0 + 1e-10) / lam);
        }
    }

    #[test]
    fn eigenvalue_hit_is_reported() {
        // constants: K1 = D1 = M1, so s² + s + 1 = 0
        let a = op(1, 4, 0.0, 1.0);
        let root = c64::new(-0.5, 3f64.sqrt() / 2.0);
        let r = resolvent_norm_with(&a, root, NormMethod::Dense);
        assert!(matches!(r, Err(OperatorError::EigenvalueHit { .. })) || r.unwrap() > 1e10);
    }

    #[test]
    fn level_crossing() {
        let g = [1.0, 2.0, 4.0, 8.0, 16.0];
        let v = [1.0, 0.7, 0.5, 0.05, 0.1];
        assert_eq!(resolution_limit(&g, &v, 1.0), Some(16.0));
        assert_eq!(resolution_limit(&g, &v, 1.8), Some(4.0));
        assert_eq!(resolution_limit(&g, &v, 3.0), None);
    }
}
