use faer::Mat;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{ExperimentError, LinalgError};
use crate::fit::linear_fit;
use crate::operator::{BlockOperator, PhaseVector, ScanReport};

/// Fewest points accepted by [`box_dimension`].
pub const MIN_POINTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    /// Radii, greedy cover sizes and the fit of `ln N` against `ln r`.
    pub scan: ScanReport,
    /// `−slope`, the box-counting estimate.
    pub dimension: f64,
    pub points: usize,
    pub projection_dim: Option<usize>,
    /// Always true: box counting on finitely many samples is a heuristic.
    pub heuristic: bool,
    pub warning: Option<String>,
}

impl DimensionReport {
    pub fn series(&self) -> Table {
        let mut t = Table::new(&["radius", "count"]);
        for (r, n) in self.scan.grid.iter().zip(&self.scan.values) {
            t.push(vec![*r, *n]);
        }
        t
    }
}

/// Coordinates in which the Euclidean distance is the discrete `H_{-1}` distance.
pub fn embed_hminus1(
    op: &BlockOperator,
    states: &[PhaseVector],
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let e = op.weights().hminus1_embedding()?;
    Ok(states
        .iter()
        .map(|z| {
            let x = z.to_stacked();
            (0..e.nrows())
                .map(|i| (0..e.ncols()).map(|j| e[(i, j)] * x[j]).sum())
                .collect()
        })
        .collect())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Number of centres chosen by a single greedy pass at radius `r`.
fn greedy_cover(points: &[Vec<f64>], r: f64) -> usize {
    let mut centres: Vec<&[f64]> = Vec::new();
    for p in points {
        if !centres.iter().any(|c| dist(c, p) <= r) {
            centres.push(p);
        }
    }
    centres.len()
}

/// Scores on the leading `k` principal directions of the centred cloud.
fn project(points: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let n = points.len();
    let d = points[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let x = Mat::<f64>::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let svd = x
        .thin_svd()
        .map_err(|e| LinalgError::NoConvergence(format!("{e:?}")))
        .map_err(crate::error::OperatorError::from)?;
    let (u, s) = (svd.U(), svd.S());
    let k = k.min(u.ncols());
    Ok((0..n)
        .map(|i| (0..k).map(|j| u[(i, j)] * s[j]).collect())
        .collect())
}

/// Greedy box counting over `radii`; the dimension is minus the slope of `ln N(r)`
/// against `ln r` over the middle half of the unsaturated radii.
pub fn box_dimension(
    points: &[Vec<f64>],
    projection_dim: Option<usize>,
    radii: &[f64],
) -> Result<DimensionReport, ExperimentError> {
    if points.len() < MIN_POINTS {
        return Err(ExperimentError::InvalidConfig(format!(
            "box counting needs at least {MIN_POINTS} points, got {}",
            points.len()
        )));
    }
    if radii.len() < 2
        || radii.iter().any(|r| !(*r > 0.0))
        || radii.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(ExperimentError::InvalidConfig(
            "radii must be positive and increasing".into(),
        ));
    }
    if points.iter().any(|p| p.len() != points[0].len()) {
        return Err(ExperimentError::InvalidConfig(
            "points must share a dimension".into(),
        ));
    }
    let cloud = match projection_dim {
        Some(k) if k == 0 => {
            return Err(ExperimentError::InvalidConfig(
                "projection_dim must be positive".into(),
            ))
        }
        Some(k) => project(points, k)?,
        None => points.to_vec(),
    };
    let counts: Vec<f64> = radii
        .iter()
        .map(|&r| greedy_cover(&cloud, r) as f64)
        .collect();
    let diameter = cloud
        .iter()
        .enumerate()
        .flat_map(|(i, p)| cloud[i + 1..].iter().map(move |q| dist(p, q)))
        .fold(0.0f64, f64::max);

    let degenerate = |msg: &str, window| DimensionReport {
        scan: ScanReport {
            grid: radii.to_vec(),
            values: counts.clone(),
            fitted_slope: 0.0,
            fitted_constant: 1.0,
            window,
        },
        dimension: 0.0,
        points: points.len(),
        projection_dim,
        heuristic: true,
        warning: Some(msg.to_string()),
    };
    if diameter < radii[0] {
        return Ok(degenerate(
            "point cloud diameter is below the smallest radius",
            (radii[0], radii[0]),
        ));
    }
    let active: Vec<usize> = (0..radii.len())
        .filter(|&i| counts[i] > 1.0 && counts[i] < cloud.len() as f64)
        .collect();
    let lo = active.len() / 4;
    let hi = active.len() - active.len() / 4;
    let window: Vec<usize> = active[lo..hi].to_vec();
    let fit = (window.len() >= 2)
        .then(|| {
            let x: Vec<f64> = window.iter().map(|&i| radii[i].ln()).collect();
            let y: Vec<f64> = window.iter().map(|&i| counts[i].ln()).collect();
            linear_fit(&x, &y)
        })
        .flatten();
    let Some((slope, intercept)) = fit else {
        return Ok(degenerate(
            "fewer than two unsaturated radii",
            (radii[0], radii[radii.len() - 1]),
        ));
    };
    Ok(DimensionReport {
        scan: ScanReport {
            grid: radii.to_vec(),
            values: counts,
            fitted_slope: slope,
            fitted_constant: intercept.exp(),
            window: (radii[window[0]], radii[window[window.len() - 1]]),
        },
        dimension: -slope,
        points: points.len(),
        projection_dim,
        heuristic: true,
        warning: None,
    })
}
