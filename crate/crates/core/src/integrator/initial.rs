use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::IntegratorError;
use crate::operator::{BlockOperator, PhaseVector};

/// Initial-data families evaluated at the mesh nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Random trigonometric fields with amplitudes `(1 + |k|²)^{−decay/2}`,
    /// rescaled to `H_0` norm `radius`.
    RandomSmooth {
        seed: u64,
        modes: usize,
        decay: f64,
        radius: f64,
    },
    Constant {
        u: f64,
        v: f64,
    },
    /// `amplitude·exp(−|x − center|² / (2 width²))` in `u`, `velocity` times the same in `v`.
    Bump {
        center: [f64; 2],
        width: f64,
        amplitude: f64,
        #[serde(default)]
        velocity: f64,
    },
}

impl InitialData {
    pub fn generate(&self, op: &BlockOperator) -> Result<PhaseVector, IntegratorError> {
        let nodes = &op.fem().nodes;
        match self {
            InitialData::RandomSmooth {
                seed,
                modes,
                decay,
                radius,
            } => {
                if *modes == 0 || !(*radius >= 0.0) {
                    return Err(IntegratorError::InvalidConfig(
                        "random_smooth needs modes >= 1 and radius >= 0".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut field = || {
                    let mut vals = vec![0.0; nodes.len()];
                    for k1 in 0..*modes {
                        for k2 in 0..*modes {
                            let kk = (k1 * k1 + k2 * k2) as f64;
                            let amp = (1.0 + kk).powf(-0.5 * decay) * rng.random_range(-1.0..=1.0);
                            let phase = rng.random_range(0.0..std::f64::consts::TAU);
                            for (v, p) in vals.iter_mut().zip(nodes) {
                                let arg = std::f64::consts::PI
                                    * (k1 as f64 * p[0] + k2 as f64 * p[1])
                                    + phase;
                                *v += amp * arg.cos();
                            }
                        }
                    }
                    vals
                };
                let u = field();
                let v = field();
                let z = PhaseVector::new(u, v);
                let norm = op.h0_norm(&z);
                Ok(if norm > 0.0 {
                    z.scale(radius / norm)
                } else {
                    z
                })
            }
            InitialData::Constant { u, v } => Ok(PhaseVector::new(
                vec![*u; nodes.len()],
                vec![*v; nodes.len()],
            )),
            InitialData::Bump {
                center,
                width,
                amplitude,
                velocity,
            } => {
                if !(*width > 0.0) {
                    return Err(IntegratorError::InvalidConfig(
                        "bump width must be positive".into(),
                    ));
                }
                let shape: Vec<f64> = nodes
                    .iter()
                    .map(|p| {
                        let r2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                        (-r2 / (2.0 * width * width)).exp()
                    })
                    .collect();
                Ok(PhaseVector::new(
                    shape.iter().map(|s| amplitude * s).collect(),
                    shape.iter().map(|s| velocity * s).collect(),
                ))
            }
        }
    }
}
