//! Variation-of-constants oracle with dense exponentials.
//!
//! In coordinates `y = (L_Kᵀu, L_Mᵀv)` the `H_0` norm is Euclidean and the
//! generator is the congruent matrix `B`. On each panel the forcing is replaced
//! by its cubic interpolant at the four Gauss–Legendre nodes and integrated
//! exactly with `φ`-functions taken from one augmented exponential per offset.

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{IntegratorError, OperatorError};
use crate::nonlinearity::{nodal_nonlinear_force, NonlinearitySpec};
use crate::operator::{BlockOperator, PhaseVector};

/// Largest state dimension accepted.
pub const MILD_STATE_LIMIT: usize = 1500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MildOptions {
    /// Panels of four Gauss nodes each.
    pub panels: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for MildOptions {
    fn default() -> Self {
        Self {
            panels: 16,
            tol: 1e-10,
            max_sweeps: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MildSolution {
    pub state: PhaseVector,
    /// Picard sweeps after the free evolution, including the one that confirmed convergence.
    pub iterations: usize,
    pub last_change: f64,
}

fn gauss4() -> [f64; 4] {
    let a = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
    let b = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
    [0.5 - 0.5 * a, 0.5 - 0.5 * b, 0.5 + 0.5 * b, 0.5 + 0.5 * a]
}

/// `e^{θhB}` and `G_m = h θ^{m+1} m! φ_{m+1}(θhB) P` for `m = 0..4`, `P` the velocity block.
struct Offset {
    exp: Mat<f64>,
    g: Vec<Mat<f64>>,
}

fn offset(b: &Mat<f64>, n: usize, h: f64, theta: f64) -> Offset {
    let big = b.nrows();
    let size = big + 4 * n;
    let mut aug = Mat::<f64>::zeros(size, size);
    for i in 0..big {
        for j in 0..big {
            aug[(i, j)] = theta * h * b[(i, j)];
        }
    }
    for i in 0..n {
        aug[(n + i, big + i)] = 1.0;
        for k in 0..3 {
            aug[(big + k * n + i, big + (k + 1) * n + i)] = 1.0;
        }
    }
    let e = dense::expm(aug.as_ref());
    let exp = e.as_ref().submatrix(0, 0, big, big).to_owned();
    let mut fact = 1.0;
    let g = (0..4)
        .map(|m| {
            if m > 0 {
                fact *= m as f64;
            }
            let c = h * theta.powi(m as i32 + 1) * fact;
            Mat::<f64>::from_fn(big, n, |i, j| c * e[(i, big + m * n + j)])
        })
        .collect();
    Offset { exp, g }
}

fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj != 0.0 {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += a[(i, j)] * xj;
            }
        }
    }
    y
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `ζ(T)` from Picard iteration on `ζ(t) = e^{At}ζ0 + ∫₀ᵗ e^{A(t−s)}𝓕(ζ(s)) ds`.
pub fn mild_solution_reference(
    z0: &PhaseVector,
    t_final: f64,
    spec: &NonlinearitySpec,
    op: &BlockOperator,
    opts: &MildOptions,
) -> Result<MildSolution, IntegratorError> {
    let n = op.dim();
    if 2 * n > MILD_STATE_LIMIT {
        return Err(OperatorError::TooLargeForDense(2 * n, MILD_STATE_LIMIT).into());
    }
    if z0.len() != n {
        return Err(OperatorError::DimensionMismatch {
            expected: n,
            found: z0.len(),
        }
        .into());
    }
    if !(t_final >= 0.0) || opts.panels == 0 {
        return Err(IntegratorError::InvalidConfig(
            "need T >= 0 and at least one panel".into(),
        ));
    }
    if t_final == 0.0 {
        return Ok(MildSolution {
            state: z0.clone(),
            iterations: 0,
            last_change: 0.0,
        });
    }
    spec.validate()?;

    let l_k = dense::cholesky_lower(op.stiffness().to_dense().as_ref())?;
    let l_m = dense::cholesky_lower(op.mass().to_dense().as_ref())?;
    let id = Mat::<f64>::identity(n, n);
    let l_k_inv = dense::solve_lower(l_k.as_ref(), id.as_ref());
    let l_m_inv = dense::solve_lower(l_m.as_ref(), id.as_ref());
    let b = op.dense_congruence()?;

    let to_y = |z: &PhaseVector| -> Vec<f64> {
        let mut y = vec![0.0; 2 * n];
        for i in 0..n {
            for j in i..n {
                y[i] += l_k[(j, i)] * z.u[j];
                y[n + i] += l_m[(j, i)] * z.v[j];
            }
        }
        y
    };
    let from_y = |y: &[f64]| -> PhaseVector {
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        for i in 0..n {
            for j in 0..=i {
                u[j] += l_k_inv[(i, j)] * y[i];
                v[j] += l_m_inv[(i, j)] * y[n + i];
            }
        }
        PhaseVector::new(u, v)
    };
    // velocity block of F𝓕(ζ) = −L_M⁻¹ N(u)
    let forcing = |y: &[f64]| -> Result<Vec<f64>, IntegratorError> {
        let z = from_y(y);
        let f = nodal_nonlinear_force(spec, op.fem(), &z.u)?;
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in 0..=i {
                out[i] -= l_m_inv[(i, j)] * f[j];
            }
        }
        Ok(out)
    };

    let h = t_final / opts.panels as f64;
    let c = gauss4();
    let offsets: Vec<Offset> = c
        .iter()
        .chain(&[1.0])
        .map(|&th| offset(&b, n, h, th))
        .collect();
    let vander = Mat::<f64>::from_fn(4, 4, |i, m| c[i].powi(m as i32));
    let vinv = vander.partial_piv_lu().solve(Mat::<f64>::identity(4, 4));

    let y0 = to_y(z0);
    // nodes[p][0..4] at the Gauss points, nodes[p][4] at the panel end
    let sweep = |forces: Option<&Vec<[Vec<f64>; 4]>>| -> Vec<[Vec<f64>; 5]> {
        let mut start = y0.clone();
        let mut out = Vec::with_capacity(opts.panels);
        for p in 0..opts.panels {
            let coeffs: Option<Vec<Vec<f64>>> = forces.map(|fs| {
                (0..4)
                    .map(|m| {
                        let mut bm = vec![0.0; n];
                        for i in 0..4 {
                            let w = vinv[(m, i)];
                            for (acc, v) in bm.iter_mut().zip(&fs[p][i]) {
                                *acc += w * v;
                            }
                        }
                        bm
                    })
                    .collect()
            });
            let vals: [Vec<f64>; 5] = std::array::from_fn(|k| {
                let off = &offsets[k];
                let mut y = matvec(&off.exp, &start);
                if let Some(cs) = &coeffs {
                    for (g, bm) in off.g.iter().zip(cs) {
                        for (yi, gi) in y.iter_mut().zip(matvec(g, bm)) {
                            *yi += gi;
                        }
                    }
                }
                y
            });
            start = vals[4].clone();
            out.push(vals);
        }
        out
    };

    let mut current = sweep(None);
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_sweeps {
        let forces = current
            .iter()
            .map(|panel| -> Result<[Vec<f64>; 4], IntegratorError> {
                Ok([
                    forcing(&panel[0])?,
                    forcing(&panel[1])?,
                    forcing(&panel[2])?,
                    forcing(&panel[3])?,
                ])
            })
            .collect::<Result<Vec<_>, _>>()?;
        let next = sweep(Some(&forces));
        change = current
            .iter()
            .zip(&next)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| dist(x, y)))
            .fold(0.0, f64::max);
        current = next;
        if change < opts.tol {
            return Ok(MildSolution {
                state: from_y(&current[opts.panels - 1][4]),
                iterations: it,
                last_change: change,
            });
        }
    }
    Err(IntegratorError::PicardNoConvergence(
        opts.max_sweeps,
        change,
    ))
}
