//! Taylor–Hood (P2 velocity / P1 pressure) spaces on a triangle mesh.
//!
//! P2 degrees of freedom are numbered vertices first, then edge midpoints in
//! the order of [`Mesh::edges`]; P1 dofs coincide with the vertices. Local
//! P2 ordering on a triangle `(v0, v1, v2)` is `v0, v1, v2, e12, e20, e01`.

use std::collections::HashMap;

use crate::geometry::Point;
use crate::mesher::Mesh;
use crate::sparse::CsrMatrix;

/// Degree-5, 7-point Dunavant rule: barycentric coordinates and weights
/// summing to one.
pub const QUADRATURE: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const W1: f64 = 0.132_394_152_788_506;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W2: f64 = 0.125_939_180_544_827;
    const C: f64 = 1.0 / 3.0;
    [
        ([C, C, C], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};
const NQ: usize = QUADRATURE.len();
const EDGE_LOCAL: [(usize, usize); 3] = [(1, 2), (2, 0), (0, 1)];

fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

fn p2_gradients(l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        let s = 4.0 * l[i] - 1.0;
        g[i] = [s * gl[i][0], s * gl[i][1]];
    }
    for (k, &(i, j)) in EDGE_LOCAL.iter().enumerate() {
        g[3 + k] = [
            4.0 * (l[i] * gl[j][0] + l[j] * gl[i][0]),
            4.0 * (l[i] * gl[j][1] + l[j] * gl[i][1]),
        ];
    }
    g
}

/// Per-element geometry and basis data shared by all assembly routines.
pub struct TaylorHood {
    pub n_vertices: usize,
    pub n_dofs: usize,
    pub element_dofs: Vec<[usize; 6]>,
    pub element_vertices: Vec<[usize; 3]>,
    pub area: Vec<f64>,
    /// Gradients of the barycentric coordinates (constant per element).
    pub grad_lambda: Vec<[[f64; 2]; 3]>,
    /// P2 gradients at each quadrature point, per element.
    pub grad_phi: Vec<[[[f64; 2]; 6]; NQ]>,
    pub phi: [[f64; 6]; NQ],
    /// Coordinates of every P2 dof.
    pub dof_points: Vec<Point>,
    edge_index: HashMap<(usize, usize), usize>,
    p2_pattern: CsrMatrix,
    /// Positions of the local 6x6 block of each element in `p2_pattern`.
    p2_slots: Vec<[usize; 36]>,
}

impl TaylorHood {
    pub fn new(mesh: &Mesh) -> TaylorHood {
        let n_vertices = mesh.vertices.len();
        let edges = mesh.edges();
        let edge_index: HashMap<(usize, usize), usize> = edges
            .iter()
            .enumerate()
            .map(|(k, e)| ((e[0], e[1]), n_vertices + k))
            .collect();
        let n_dofs = n_vertices + edges.len();
        let mut dof_points = mesh.vertices.clone();
        for [a, b] in &edges {
            let (pa, pb) = (mesh.vertices[*a], mesh.vertices[*b]);
            dof_points.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }
        let phi = QUADRATURE.map(|(l, _)| p2_values(l));

        let mut element_dofs = Vec::with_capacity(mesh.triangles.len());
        let mut area = Vec::with_capacity(mesh.triangles.len());
        let mut grad_lambda = Vec::with_capacity(mesh.triangles.len());
        let mut grad_phi = Vec::with_capacity(mesh.triangles.len());
        for t in &mesh.triangles {
            let [p0, p1, p2] = t.map(|v| mesh.vertices[v]);
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let gl = [
                [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
            ];
            let mut dofs = [t[0], t[1], t[2], 0, 0, 0];
            for (k, &(i, j)) in EDGE_LOCAL.iter().enumerate() {
                let (a, b) = (t[i].min(t[j]), t[i].max(t[j]));
                dofs[3 + k] = edge_index[&(a, b)];
            }
            element_dofs.push(dofs);
            area.push(0.5 * det);
            grad_lambda.push(gl);
            grad_phi.push(QUADRATURE.map(|(l, _)| p2_gradients(l, &gl)));
        }

        let mut rows = vec![Vec::new(); n_dofs];
        for dofs in &element_dofs {
            for &i in dofs {
                rows[i].extend_from_slice(dofs);
            }
        }
        let p2_pattern = CsrMatrix::from_pattern(n_dofs, rows);
        let p2_slots = element_dofs
            .iter()
            .map(|dofs| {
                let mut slots = [0; 36];
                for a in 0..6 {
                    for b in 0..6 {
                        slots[6 * a + b] = p2_pattern.position(dofs[a], dofs[b]).unwrap();
                    }
                }
                slots
            })
            .collect();

        TaylorHood {
            n_vertices,
            n_dofs,
            element_dofs,
            element_vertices: mesh.triangles.clone(),
            area,
            grad_lambda,
            grad_phi,
            phi,
            dof_points,
            edge_index,
            p2_pattern,
            p2_slots,
        }
    }

    pub fn edge_dof(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn n_elements(&self) -> usize {
        self.element_dofs.len()
    }

    /// Empty matrix on the P2 pattern.
    pub fn p2_matrix(&self) -> CsrMatrix {
        self.p2_pattern.clone()
    }

    /// P2 mass and stiffness matrices.
    pub fn mass_and_stiffness(&self) -> (CsrMatrix, CsrMatrix) {
        let mut mass = self.p2_matrix();
        let mut stiff = self.p2_matrix();
        for e in 0..self.n_elements() {
            let slots = &self.p2_slots[e];
            for (q, (_, w)) in QUADRATURE.iter().enumerate() {
                let wa = w * self.area[e];
                let phi = &self.phi[q];
                let g = &self.grad_phi[e][q];
                for a in 0..6 {
                    for b in 0..6 {
                        mass.values[slots[6 * a + b]] += wa * phi[a] * phi[b];
                        stiff.values[slots[6 * a + b]] +=
                            wa * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    }
                }
            }
        }
        (mass, stiff)
    }

    /// Adds the convection operator `(w . grad u, v)` for the advecting P2
    /// field `(wx, wy)` into `target`, which must share the P2 pattern.
    pub fn add_convection(&self, wx: &[f64], wy: &[f64], target: &mut CsrMatrix) {
        for e in 0..self.n_elements() {
            let dofs = &self.element_dofs[e];
            let slots = &self.p2_slots[e];
            let lx = dofs.map(|d| wx[d]);
            let ly = dofs.map(|d| wy[d]);
            for (q, (_, w)) in QUADRATURE.iter().enumerate() {
                let phi = &self.phi[q];
                let g = &self.grad_phi[e][q];
                let (mut ax, mut ay) = (0.0, 0.0);
                for k in 0..6 {
                    ax += phi[k] * lx[k];
                    ay += phi[k] * ly[k];
                }
                let wa = w * self.area[e];
                let adv: [f64; 6] = std::array::from_fn(|b| ax * g[b][0] + ay * g[b][1]);
                for a in 0..6 {
                    let pa = wa * phi[a];
                    for b in 0..6 {
                        target.values[slots[6 * a + b]] += pa * adv[b];
                    }
                }
            }
        }
    }

    /// P1 mass and stiffness matrices.
    pub fn p1_mass_and_stiffness(&self) -> (CsrMatrix, CsrMatrix) {
        let mut trip_m = Vec::with_capacity(9 * self.n_elements());
        let mut trip_k = Vec::with_capacity(9 * self.n_elements());
        for e in 0..self.n_elements() {
            let v = self.element_vertices[e];
            let gl = &self.grad_lambda[e];
            let a = self.area[e];
            for i in 0..3 {
                for j in 0..3 {
                    let m = if i == j { a / 6.0 } else { a / 12.0 };
                    trip_m.push((v[i], v[j], m));
                    trip_k.push((v[i], v[j], a * (gl[i][0] * gl[j][0] + gl[i][1] * gl[j][1])));
                }
            }
        }
        (
            CsrMatrix::from_triplets(self.n_vertices, self.n_vertices, &trip_m),
            CsrMatrix::from_triplets(self.n_vertices, self.n_vertices, &trip_k),
        )
    }

    /// Divergence operators `B_c[q, j] = (psi_q, d phi_j / d x_c)`, P1 rows
    /// by P2 columns.
    pub fn divergence(&self) -> [CsrMatrix; 2] {
        let mut trip = [Vec::new(), Vec::new()];
        for e in 0..self.n_elements() {
            let v = self.element_vertices[e];
            let dofs = &self.element_dofs[e];
            for (q, (l, w)) in QUADRATURE.iter().enumerate() {
                let wa = w * self.area[e];
                let g = &self.grad_phi[e][q];
                for i in 0..3 {
                    for b in 0..6 {
                        for (c, t) in trip.iter_mut().enumerate() {
                            t.push((v[i], dofs[b], wa * l[i] * g[b][c]));
                        }
                    }
                }
            }
        }
        trip.map(|t| CsrMatrix::from_triplets(self.n_vertices, self.n_dofs, &t))
    }

    /// Gradient operators `G_c[i, q] = (phi_i, d psi_q / d x_c)`, P2 rows by
    /// P1 columns.
    pub fn gradient(&self) -> [CsrMatrix; 2] {
        let mut trip = [Vec::new(), Vec::new()];
        for e in 0..self.n_elements() {
            let v = self.element_vertices[e];
            let dofs = &self.element_dofs[e];
            let gl = &self.grad_lambda[e];
            let mut integral = [0.0; 6];
            for (q, (_, w)) in QUADRATURE.iter().enumerate() {
                for a in 0..6 {
                    integral[a] += w * self.area[e] * self.phi[q][a];
                }
            }
            for a in 0..6 {
                for j in 0..3 {
                    for (c, t) in trip.iter_mut().enumerate() {
                        t.push((dofs[a], v[j], integral[a] * gl[j][c]));
                    }
                }
            }
        }
        trip.map(|t| CsrMatrix::from_triplets(self.n_dofs, self.n_vertices, &t))
    }
}

/// Linear interpolation of a vertex field at `p`, or `None` outside the mesh.
pub fn interpolate_p1(mesh: &Mesh, field: &[f64], p: Point) -> Option<f64> {
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|v| mesh.vertices[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        let l0 = 1.0 - l1 - l2;
        let eps = -1e-12;
        if l0 >= eps && l1 >= eps && l2 >= eps {
            return Some(l0 * field[t[0]] + l1 * field[t[1]] + l2 * field[t[2]]);
        }
    }
    None
}
