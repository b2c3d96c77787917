//! Structured polar triangulation of the unit disk and P1 assembly of the
//! bulk and boundary-cycle matrices.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_cycle: Vec<usize>,
    pub n_r: usize,
    pub n_theta: usize,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Halves the mesh width: doubles both ring and sector counts.
    pub fn refined(&self) -> Result<Mesh, GeometryError> {
        build_disk_mesh(2 * self.n_r, 2 * self.n_theta)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mesh serializes")
    }
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

/// Node 0 is the center; ring `k` (1-based) sits at radius `k / n_r` with
/// nodes at angles `2πj / n_theta`. The outer ring is the boundary cycle.
pub fn build_disk_mesh(n_r: usize, n_theta: usize) -> Result<Mesh, GeometryError> {
    if n_theta < 3 {
        return Err(GeometryError::DegeneratePolygon(n_theta));
    }
    if n_r == 0 {
        return Err(GeometryError::NoRings);
    }
    let idx = |k: usize, j: usize| 1 + (k - 1) * n_theta + (j % n_theta);

    let mut nodes = Vec::with_capacity(1 + n_r * n_theta);
    nodes.push([0.0, 0.0]);
    for k in 1..=n_r {
        let r = k as f64 / n_r as f64;
        for j in 0..n_theta {
            let th = 2.0 * PI * j as f64 / n_theta as f64;
            nodes.push([r * th.cos(), r * th.sin()]);
        }
    }

    let mut triangles = Vec::with_capacity(n_theta * (2 * n_r - 1));
    for j in 0..n_theta {
        triangles.push([0, idx(1, j), idx(1, j + 1)]);
    }
    for k in 1..n_r {
        for j in 0..n_theta {
            let a = idx(k, j);
            let b = idx(k + 1, j);
            let c = idx(k + 1, j + 1);
            let d = idx(k, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let boundary_cycle = (0..n_theta).map(|j| idx(n_r, j)).collect();
    Ok(Mesh {
        nodes,
        triangles,
        boundary_cycle,
        n_r,
        n_theta,
    })
}

/// Bulk and boundary finite-element matrices on the full node set.
#[derive(Clone, Debug)]
pub struct FemMatrices {
    pub mass_omega: CsrMatrix,
    pub stiff_omega: CsrMatrix,
    pub mass_gamma: CsrMatrix,
    pub stiff_gamma: CsrMatrix,
    pub lumped_omega: Vec<f64>,
    pub lumped_gamma: Vec<f64>,
    pub boundary: Vec<usize>,
    pub area: f64,
    pub perimeter: f64,
    /// Node coordinates, copied from the mesh.
    pub nodes: Vec<[f64; 2]>,
}

impl FemMatrices {
    pub fn node_count(&self) -> usize {
        self.mass_omega.dim()
    }

    /// `M = M_Ω + M_Γ`
    pub fn mass(&self) -> CsrMatrix {
        CsrMatrix::linear_combination(&[(1.0, &self.mass_omega), (1.0, &self.mass_gamma)])
    }

    /// `K = K_Ω + M_Ω + K_Γ + M_Γ`
    pub fn stiffness(&self) -> CsrMatrix {
        CsrMatrix::linear_combination(&[
            (1.0, &self.stiff_omega),
            (1.0, &self.mass_omega),
            (1.0, &self.stiff_gamma),
            (1.0, &self.mass_gamma),
        ])
    }

    /// `D(α, ω) = ω K_Ω + M_Ω + α ω K_Γ + M_Γ`
    pub fn damping(&self, alpha: f64, omega: f64) -> CsrMatrix {
        CsrMatrix::linear_combination(&[
            (omega, &self.stiff_omega),
            (1.0, &self.mass_omega),
            (alpha * omega, &self.stiff_gamma),
            (1.0, &self.mass_gamma),
        ])
    }

    /// Restriction of a node vector to the boundary cycle.
    pub fn trace(&self, u: &[f64]) -> Vec<f64> {
        self.boundary.iter().map(|&i| u[i]).collect()
    }
}

pub fn assemble(mesh: &Mesh) -> Result<FemMatrices, GeometryError> {
    let n = mesh.node_count();
    let mut m_trip = Vec::with_capacity(9 * mesh.triangles.len());
    let mut k_trip = Vec::with_capacity(9 * mesh.triangles.len());
    let mut area = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if let Some(&node) = tri.iter().find(|&&i| i >= n) {
            return Err(GeometryError::BadIndex { index: t, node });
        }
        let p = tri.map(|i| mesh.nodes[i]);
        let a = signed_area(p[0], p[1], p[2]);
        if a.abs() <= 1e-14 {
            return Err(GeometryError::ZeroAreaTriangle { index: t });
        }
        area += a.abs();
        // gradient of barycentric coordinate i is the rotated opposite edge over 2A
        let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
            let q = p[(i + 1) % 3];
            let r = p[(i + 2) % 3];
            [(q[1] - r[1]) / (2.0 * a), (r[0] - q[0]) / (2.0 * a)]
        });
        for i in 0..3 {
            for j in 0..3 {
                let kij = a.abs() * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                let mij = a.abs() / 12.0 * if i == j { 2.0 } else { 1.0 };
                k_trip.push((tri[i], tri[j], kij));
                m_trip.push((tri[i], tri[j], mij));
            }
        }
    }

    let nb = mesh.boundary_cycle.len();
    let mut mg_trip = Vec::with_capacity(4 * nb);
    let mut kg_trip = Vec::with_capacity(4 * nb);
    let mut perimeter = 0.0;
    for e in 0..nb {
        let a = mesh.boundary_cycle[e];
        let b = mesh.boundary_cycle[(e + 1) % nb];
        let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        perimeter += len;
        for (i, j, m, k) in [
            (a, a, 2.0, 1.0),
            (b, b, 2.0, 1.0),
            (a, b, 1.0, -1.0),
            (b, a, 1.0, -1.0),
        ] {
            mg_trip.push((i, j, len / 6.0 * m));
            kg_trip.push((i, j, k / len));
        }
    }

    let mass_omega = CsrMatrix::from_triplets(n, &m_trip);
    let mass_gamma = CsrMatrix::from_triplets(n, &mg_trip);
    Ok(FemMatrices {
        lumped_omega: mass_omega.row_sums(),
        lumped_gamma: mass_gamma.row_sums(),
        stiff_omega: CsrMatrix::from_triplets(n, &k_trip),
        stiff_gamma: CsrMatrix::from_triplets(n, &kg_trip),
        mass_omega,
        mass_gamma,
        boundary: mesh.boundary_cycle.clone(),
        area,
        perimeter,
        nodes: mesh.nodes.clone(),
    })
}

/// Coordinate text format, one `row col value` line per stored entry.
pub fn matrix_to_coordinate_text(m: &CsrMatrix) -> String {
    let mut s = String::new();
    for (i, j, v) in m.triplets() {
        writeln!(s, "{i} {j} {v:.16e}").unwrap();
    }
    s
}
