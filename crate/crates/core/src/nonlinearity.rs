//! Bulk and boundary nonlinear terms `f`, `g`, their antiderivatives and
//! sampling-based checks of the sign and growth assumptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NonlinearityError;
use crate::geometry::FemMatrices;
use crate::sparse::SpdSolver;

/// A scalar nonlinearity with a closed-form antiderivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `f(s) = Σ c_k s^k`
    Polynomial { coefficients: Vec<f64> },
    /// `f(s) = sin s`
    SineGordon,
    /// `f(s) = |s|^{γ−1} s` with `γ ∈ [1, 3]` for the bulk term.
    KleinGordon { exponent: f64 },
    /// Piecewise linear interpolation of `(s_k, f_k)`; the knots must bracket 0.
    Table { s: Vec<f64>, f: Vec<f64> },
}

impl Family {
    pub fn zero() -> Self {
        Family::Polynomial {
            coefficients: vec![],
        }
    }

    pub fn validate(&self) -> Result<(), NonlinearityError> {
        match self {
            Family::Polynomial { coefficients } => {
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(NonlinearityError::Invalid(
                        "non-finite polynomial coefficient".into(),
                    ));
                }
            }
            Family::SineGordon => {}
            Family::KleinGordon { exponent } => {
                if !(*exponent >= 1.0 && exponent.is_finite()) {
                    return Err(NonlinearityError::Invalid(format!(
                        "klein_gordon exponent {exponent} < 1"
                    )));
                }
            }
            Family::Table { s, f } => {
                if s.len() < 2 || s.len() != f.len() {
                    return Err(NonlinearityError::Invalid(
                        "table needs at least two knots and matching value count".into(),
                    ));
                }
                if s.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(NonlinearityError::Invalid(
                        "table knots must be strictly increasing".into(),
                    ));
                }
                if s.iter().chain(f).any(|v| !v.is_finite()) {
                    return Err(NonlinearityError::Invalid("non-finite table entry".into()));
                }
                if s[0] > 0.0 || s[s.len() - 1] < 0.0 {
                    return Err(NonlinearityError::Invalid(
                        "table range must contain 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Closed interval on which the family is defined.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Family::Table { s, .. } => (s[0], s[s.len() - 1]),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn locate(s: &[f64], x: f64) -> Result<usize, NonlinearityError> {
        let (lo, hi) = (s[0], s[s.len() - 1]);
        if !(x >= lo && x <= hi) {
            return Err(NonlinearityError::Extrapolation { s: x, lo, hi });
        }
        // segment k covers [s_k, s_{k+1}]
        let k = s.partition_point(|v| *v <= x).saturating_sub(1);
        Ok(k.min(s.len() - 2))
    }

    pub fn value(&self, x: f64) -> Result<f64, NonlinearityError> {
        Ok(match self {
            Family::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            Family::SineGordon => x.sin(),
            Family::KleinGordon { exponent } => x.abs().powf(exponent - 1.0) * x,
            Family::Table { s, f } => {
                let k = Self::locate(s, x)?;
                let t = (x - s[k]) / (s[k + 1] - s[k]);
                f[k] + t * (f[k + 1] - f[k])
            }
        })
    }

    pub fn derivative(&self, x: f64) -> Result<f64, NonlinearityError> {
        Ok(match self {
            Family::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c),
            Family::SineGordon => x.cos(),
            Family::KleinGordon { exponent } => {
                if *exponent == 1.0 {
                    1.0
                } else {
                    exponent * x.abs().powf(exponent - 1.0)
                }
            }
            Family::Table { s, f } => {
                let k = Self::locate(s, x)?;
                (f[k + 1] - f[k]) / (s[k + 1] - s[k])
            }
        })
    }

    /// `∫₀ˣ f`, exact for every family.
    pub fn antiderivative(&self, x: f64) -> Result<f64, NonlinearityError> {
        Ok(match self {
            Family::Polynomial { coefficients } => {
                coefficients
                    .iter()
                    .enumerate()
                    .rev()
                    .fold(0.0, |acc, (k, c)| acc * x + c / (k + 1) as f64)
                    * x
            }
            Family::SineGordon => 1.0 - x.cos(),
            Family::KleinGordon { exponent } => x.abs().powf(exponent + 1.0) / (exponent + 1.0),
            Family::Table { s, f } => {
                Self::locate(s, x)?;
                table_integral(s, f, x) - table_integral(s, f, 0.0)
            }
        })
    }
}

/// `∫_{s_0}^x` of the piecewise linear interpolant, `x` inside the table.
fn table_integral(s: &[f64], f: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..s.len() - 1 {
        if x <= s[k] {
            break;
        }
        let b = x.min(s[k + 1]);
        let slope = (f[k + 1] - f[k]) / (s[k + 1] - s[k]);
        let fb = f[k] + slope * (b - s[k]);
        acc += 0.5 * (f[k] + fb) * (b - s[k]);
    }
    acc
}

fn default_ell() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    2.0
}
fn default_mu() -> f64 {
    0.5
}

/// Bulk term `f`, boundary term `g` and the declared structural constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub f: Family,
    pub g: Family,
    /// Growth constants of `f` and `g`.
    #[serde(default = "default_ell")]
    pub ell1: f64,
    #[serde(default = "default_ell")]
    pub ell2: f64,
    /// Boundary growth exponent, `ρ ≥ 2`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Sign-condition margins in `(0, 1]`.
    #[serde(default = "default_mu")]
    pub mu1: f64,
    #[serde(default = "default_mu")]
    pub mu2: f64,
}

impl NonlinearitySpec {
    pub fn linear() -> Self {
        Self::new(Family::zero(), Family::zero())
    }

    pub fn sine_gordon() -> Self {
        Self::new(Family::SineGordon, Family::SineGordon)
    }

    /// Declared constants at their defaults.
    pub fn new(f: Family, g: Family) -> Self {
        Self {
            f,
            g,
            ell1: default_ell(),
            ell2: default_ell(),
            rho: default_rho(),
            mu1: default_mu(),
            mu2: default_mu(),
        }
    }

    pub fn validate(&self) -> Result<(), NonlinearityError> {
        self.f.validate()?;
        self.g.validate()?;
        if let Family::KleinGordon { exponent } = self.f {
            if exponent > 3.0 {
                return Err(NonlinearityError::Invalid(format!(
                    "bulk klein_gordon exponent {exponent} exceeds 3"
                )));
            }
        }
        if !(self.rho >= 2.0 && self.rho.is_finite()) {
            return Err(NonlinearityError::Invalid(format!(
                "rho = {} < 2",
                self.rho
            )));
        }
        for (name, mu) in [("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(mu > 0.0 && mu <= 1.0) {
                return Err(NonlinearityError::Invalid(format!(
                    "{name} = {mu} not in (0, 1]"
                )));
            }
        }
        for (name, ell) in [("ell1", self.ell1), ("ell2", self.ell2)] {
            if !(ell >= 0.0 && ell.is_finite()) {
                return Err(NonlinearityError::Invalid(format!(
                    "{name} = {ell} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    /// True when both terms vanish identically.
    pub fn is_linear(&self) -> bool {
        let zero = |fam: &Family| match fam {
            Family::Polynomial { coefficients } => coefficients.iter().all(|c| *c == 0.0),
            Family::Table { f, .. } => f.iter().all(|v| *v == 0.0),
            _ => false,
        };
        zero(&self.f) && zero(&self.g)
    }
}

pub fn eval_f(spec: &NonlinearitySpec, s: f64) -> Result<f64, NonlinearityError> {
    spec.f.value(s)
}

pub fn eval_g(spec: &NonlinearitySpec, s: f64) -> Result<f64, NonlinearityError> {
    spec.g.value(s)
}

#[allow(non_snake_case)]
pub fn eval_F(spec: &NonlinearitySpec, s: f64) -> Result<f64, NonlinearityError> {
    spec.f.antiderivative(s)
}

#[allow(non_snake_case)]
pub fn eval_G(spec: &NonlinearitySpec, s: f64) -> Result<f64, NonlinearityError> {
    spec.g.antiderivative(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Sign condition is probed on `|s| ∈ [S0, S1]`.
    pub s0: f64,
    pub s1: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            s0: 10.0,
            s1: 1e4,
            n_samples: 4096,
            seed: 0xa55e_7a1d,
        }
    }
}

/// Witnessed constants for one of the two terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub sign_ok: bool,
    pub growth_ok: bool,
    /// `min(1, 1 + inf f(s)/s)` over the sign samples.
    pub mu_hat: f64,
    /// Supremum of the growth quotient over sampled pairs.
    pub ell_hat: f64,
    /// Pointwise constants of the lower bounds: `⟨f(s), s⟩ ≥ −(1−μ)s² − c_a`
    /// and `F(s) ≥ −((1−μ)/2)s² − c_b`, per unit measure.
    pub c_pairing: f64,
    pub c_potential: f64,
    /// Samples dropped because they fell outside a table's range.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub sign_ok_f: bool,
    pub sign_ok_g: bool,
    pub growth_ok_f: bool,
    pub growth_ok_g: bool,
    pub mu1_hat: f64,
    pub mu2_hat: f64,
    pub ell1_hat: f64,
    pub ell2_hat: f64,
    /// `c1, c2` for `f` and `c3, c4` for `g`, per unit measure.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub sampling: SamplingOptions,
    pub bulk: TermReport,
    pub boundary: TermReport,
}

fn sample_term(
    fam: &Family,
    mu: f64,
    ell: f64,
    growth_exponent: f64,
    opts: &SamplingOptions,
    rng: &mut ChaCha8Rng,
) -> TermReport {
    let (lo, hi) = fam.domain();
    let inside = |x: f64| x >= lo && x <= hi;
    let mut skipped = 0;

    let mut min_ratio = f64::INFINITY;
    for _ in 0..opts.n_samples {
        let mag = rng.random_range(opts.s0..=opts.s1);
        let s = if rng.random::<bool>() { mag } else { -mag };
        match fam.value(s) {
            Ok(v) if inside(s) => min_ratio = min_ratio.min(v / s),
            _ => skipped += 1,
        }
    }

    let (lmin, lmax) = (1e-3f64.ln(), opts.s1.ln());
    let mut ell_hat: f64 = 0.0;
    for k in 0..opts.n_samples {
        let draw = |rng: &mut ChaCha8Rng| {
            let m = rng.random_range(lmin..=lmax).exp();
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        };
        let s = draw(rng);
        // half the pairs are near-diagonal, where the quotient approaches |f'|
        let r = if k % 2 == 0 {
            draw(rng)
        } else {
            s * (1.0 + 1e-6 * rng.random_range(-1.0..=1.0))
        };
        if r == s {
            continue;
        }
        match (fam.value(r), fam.value(s)) {
            (Ok(fr), Ok(fs)) => {
                let w = 1.0 + r.abs().powf(growth_exponent) + s.abs().powf(growth_exponent);
                ell_hat = ell_hat.max((fr - fs).abs() / ((r - s).abs() * w));
            }
            _ => skipped += 1,
        }
    }

    // lower-bound constants: deterministic grid on [−S0, S0] plus the sign samples' range
    let mut c_pairing: f64 = 0.0;
    let mut c_potential: f64 = 0.0;
    let n = opts.n_samples.max(2);
    let grid = (0..n)
        .map(|k| -opts.s0 + 2.0 * opts.s0 * k as f64 / (n - 1) as f64)
        .chain((0..n).map(|k| {
            let m =
                (opts.s0.ln() + (opts.s1.ln() - opts.s0.ln()) * k as f64 / (n - 1) as f64).exp();
            if k % 2 == 0 {
                m
            } else {
                -m
            }
        }));
    for s in grid {
        if !inside(s) {
            continue;
        }
        if let (Ok(v), Ok(p)) = (fam.value(s), fam.antiderivative(s)) {
            c_pairing = c_pairing.max(-(1.0 - mu) * s * s - v * s);
            c_potential = c_potential.max(-0.5 * (1.0 - mu) * s * s - p);
        }
    }

    let mu_hat = if min_ratio.is_finite() {
        (1.0 + min_ratio).min(1.0)
    } else {
        f64::NAN
    };
    TermReport {
        sign_ok: min_ratio.is_finite() && min_ratio >= -1.0 + mu,
        growth_ok: ell_hat <= ell,
        mu_hat,
        ell_hat,
        c_pairing,
        c_potential,
        skipped,
    }
}

/// Sampling-based check of the sign and growth assumptions. A finite sample
/// cannot certify a `liminf`; the flags only say no counterexample was drawn.
pub fn validate_assumptions(spec: &NonlinearitySpec, opts: &SamplingOptions) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let bulk = sample_term(&spec.f, spec.mu1, spec.ell1, 2.0, opts, &mut rng);
    let boundary = sample_term(&spec.g, spec.mu2, spec.ell2, spec.rho - 1.0, opts, &mut rng);
    AssumptionReport {
        sign_ok_f: bulk.sign_ok,
        sign_ok_g: boundary.sign_ok,
        growth_ok_f: bulk.growth_ok,
        growth_ok_g: boundary.growth_ok,
        mu1_hat: bulk.mu_hat,
        mu2_hat: boundary.mu_hat,
        ell1_hat: bulk.ell_hat,
        ell2_hat: boundary.ell_hat,
        c1: bulk.c_pairing,
        c2: bulk.c_potential,
        c3: boundary.c_pairing,
        c4: boundary.c_potential,
        sampling: opts.clone(),
        bulk,
        boundary,
    }
}

fn check_len(fem: &FemMatrices, u: &[f64]) -> Result<(), NonlinearityError> {
    let n = fem.node_count();
    if u.len() != n {
        return Err(NonlinearityError::DimensionMismatch {
            expected: n,
            found: u.len(),
        });
    }
    Ok(())
}

/// `M_lump,Ω f(u) + M_lump,Γ g(u|_Γ)` on the full node set.
pub fn nodal_nonlinear_force(
    spec: &NonlinearitySpec,
    fem: &FemMatrices,
    u: &[f64],
) -> Result<Vec<f64>, NonlinearityError> {
    check_len(fem, u)?;
    let mut out = vec![0.0; u.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let w = fem.lumped_omega[i];
        if w != 0.0 {
            *o = w * spec.f.value(u[i])?;
        }
    }
    for &i in &fem.boundary {
        out[i] += fem.lumped_gamma[i] * spec.g.value(u[i])?;
    }
    Ok(out)
}

/// Diagonal of the Jacobian of [`nodal_nonlinear_force`].
pub fn nodal_force_jacobian(
    spec: &NonlinearitySpec,
    fem: &FemMatrices,
    u: &[f64],
) -> Result<Vec<f64>, NonlinearityError> {
    check_len(fem, u)?;
    let mut out = vec![0.0; u.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let w = fem.lumped_omega[i];
        if w != 0.0 {
            *o = w * spec.f.derivative(u[i])?;
        }
    }
    for &i in &fem.boundary {
        out[i] += fem.lumped_gamma[i] * spec.g.derivative(u[i])?;
    }
    Ok(out)
}

/// `Σ M_lump,Ω F(u) + Σ M_lump,Γ G(u)`; its gradient is [`nodal_nonlinear_force`].
pub fn nodal_potential(
    spec: &NonlinearitySpec,
    fem: &FemMatrices,
    u: &[f64],
) -> Result<f64, NonlinearityError> {
    check_len(fem, u)?;
    let mut acc = 0.0;
    for (i, &x) in u.iter().enumerate() {
        let w = fem.lumped_omega[i];
        if w != 0.0 {
            acc += w * spec.f.antiderivative(x)?;
        }
    }
    for &i in &fem.boundary {
        acc += fem.lumped_gamma[i] * spec.g.antiderivative(u[i])?;
    }
    Ok(acc)
}

/// Sampled Lipschitz constant of `u ↦ M⁻¹ N(u)` from the discrete `H¹` ball of
/// radius `radius` (norm `√(uᵀKu)`) into the `M`-norm, the velocity block of `H_0`.
pub fn lipschitz_on_ball(
    spec: &NonlinearitySpec,
    fem: &FemMatrices,
    radius: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64, NonlinearityError> {
    let n = fem.node_count();
    let k = fem.stiffness();
    let m = fem.mass();
    let msolve = SpdSolver::new(&m).map_err(|e| NonlinearityError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normalize = |x: Vec<f64>, r: f64| -> Vec<f64> {
        let nk = k.quad(&x).sqrt();
        x.into_iter().map(|v| v * r / nk).collect()
    };
    let dual_norm = |y: &[f64]| -> f64 { m.bilinear(&msolve.solve(y), y).max(0.0).sqrt() };
    let mut best: f64 = 0.0;
    for p in 0..n_pairs {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let u = normalize(raw, radius * rng.random_range(0.0..=1.0f64).sqrt());
        let w = if p % 2 == 0 {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            normalize(raw, radius * rng.random_range(0.0..=1.0f64).sqrt())
        } else {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let d = normalize(raw, 1e-4 * radius);
            let cand: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
            let nc = k.quad(&cand).sqrt();
            if nc > radius {
                cand.iter().map(|v| v * radius / nc).collect()
            } else {
                cand
            }
        };
        let diff: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - b).collect();
        let dn = k.quad(&diff).sqrt();
        if dn == 0.0 {
            continue;
        }
        let nu = nodal_nonlinear_force(spec, fem, &u)?;
        let nw = nodal_nonlinear_force(spec, fem, &w)?;
        let dforce: Vec<f64> = nu.iter().zip(&nw).map(|(a, b)| a - b).collect();
        best = best.max(dual_norm(&dforce) / dn);
    }
    Ok(best)
}
