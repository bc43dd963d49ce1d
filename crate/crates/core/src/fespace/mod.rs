//! Continuous piecewise-linear (P1) Lagrange elements over a simplicial
//! mesh. Nodes coincide with mesh vertices; basis functions are barycentric
//! coordinates, so gradients are constant per cell.

pub mod quadrature;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

pub use quadrature::{quadrature_for, QuadratureRule};

/// P1 Lagrange space: one degree of freedom per mesh vertex.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    /// Per-cell basis gradients: (dim + 1) gradients of dim components each,
    /// flattened per cell.
    gradients: Vec<f64>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let dim = mesh.dim();
        let n_basis = dim + 1;
        let mut gradients = vec![0.0; mesh.n_cells() * n_basis * dim];
        for k in 0..mesh.n_cells() {
            let inv = mesh.inv_jacobian(k);
            let base = k * n_basis * dim;
            // gradient of lambda_{i+1} is row i of the inverse Jacobian;
            // lambda_0 takes the negative sum.
            for i in 0..dim {
                for a in 0..dim {
                    let g = inv[i * dim + a];
                    gradients[base + (i + 1) * dim + a] = g;
                    gradients[base + a] -= g;
                }
            }
        }
        FeSpace { mesh, gradients }
    }

    pub fn from_mesh(mesh: Mesh) -> Self {
        Self::new(Arc::new(mesh))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        Arc::clone(&self.mesh)
    }

    /// Number of degrees of freedom (= mesh vertices for P1).
    pub fn n_dofs(&self) -> usize {
        self.mesh.n_vertices()
    }

    /// Basis gradient of local node `a` on cell `k` (constant over the cell).
    #[inline]
    pub fn basis_gradient(&self, k: usize, a: usize) -> &[f64] {
        let dim = self.mesh.dim();
        let n_basis = dim + 1;
        let base = k * n_basis * dim + a * dim;
        &self.gradients[base..base + dim]
    }

    /// Nodal interpolation: coefficients are the function values at the
    /// vertices. Fails on a non-finite value, naming the node.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn(&[f64]) -> f64) -> Result<NodalField> {
        let mesh = self.mesh();
        let mut coeffs = Vec::with_capacity(self.n_dofs());
        for i in 0..self.n_dofs() {
            let x = mesh.vertex(i);
            let value = f(x);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    coords: x.to_vec(),
                });
            }
            coeffs.push(value);
        }
        Ok(NodalField {
            space: Arc::clone(self),
            coeffs,
        })
    }

    /// Zero field.
    pub fn zero_field(self: &Arc<Self>) -> NodalField {
        NodalField {
            space: Arc::clone(self),
            coeffs: vec![0.0; self.n_dofs()],
        }
    }

    /// Wrap a coefficient vector.
    pub fn field_from(self: &Arc<Self>, coeffs: Vec<f64>) -> Result<NodalField> {
        if coeffs.len() != self.n_dofs() {
            return Err(Error::Domain(format!(
                "coefficient vector has length {}, space has {} dofs",
                coeffs.len(),
                self.n_dofs()
            )));
        }
        Ok(NodalField {
            space: Arc::clone(self),
            coeffs,
        })
    }
}

/// Scalar P1 field: one coefficient per node.
#[derive(Debug, Clone)]
pub struct NodalField {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl NodalField {
    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Point evaluation: barycentric combination of the containing cell's
    /// nodal values. Barycentric coordinates are clipped onto the simplex,
    /// so the result always lies within the local nodal range; interior
    /// evaluations are unaffected.
    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        let mesh = self.space.mesh();
        let (cell, bary) = mesh.locate_point(point)?;
        Ok(self.evaluate_in_cell(cell, &bary))
    }

    /// Evaluation with a known cell and barycentric coordinates.
    pub fn evaluate_in_cell(&self, cell: usize, bary: &[f64]) -> f64 {
        let mesh = self.space.mesh();
        let clipped: Vec<f64> = bary.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let mut value = 0.0;
        for (l, &v) in clipped.iter().zip(mesh.cell(cell)) {
            value += l * self.coeffs[v];
        }
        value / total
    }

    /// Gradient of the field on cell `k` (constant for P1).
    pub fn gradient_in_cell(&self, cell: usize) -> Vec<f64> {
        let mesh = self.space.mesh();
        let dim = mesh.dim();
        let mut g = vec![0.0; dim];
        for (a, &v) in mesh.cell(cell).iter().enumerate() {
            let gb = self.space.basis_gradient(cell, a);
            for i in 0..dim {
                g[i] += self.coeffs[v] * gb[i];
            }
        }
        g
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &c in &self.coeffs {
            lo = lo.min(c);
            hi = hi.max(c);
        }
        (lo, hi)
    }

    /// CSV dump: one `x_0,...,x_{dim-1},value` line per node in node order.
    pub fn dump_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        let mesh = self.space.mesh();
        for i in 0..self.coeffs.len() {
            let mut cols: Vec<String> =
                mesh.vertex(i).iter().map(|x| format!("{x:.12e}")).collect();
            cols.push(format!("{:.12e}", self.coeffs[i]));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Domain;
    use approx::assert_relative_eq;

    fn small_space() -> Arc<FeSpace> {
        let domain = Domain::new(vec![[0.0, 4.0]], [1.0, 70.0], vec![1.0]).unwrap();
        Arc::new(FeSpace::from_mesh(
            Mesh::build_structured(&domain, &[4, 4]).unwrap(),
        ))
    }

    #[test]
    fn interpolate_constant_one() {
        let space = small_space();
        let field = space.interpolate(|_| 1.0).unwrap();
        assert!(field.coeffs().iter().all(|&c| c == 1.0));
        assert_relative_eq!(
            field.evaluate(&[1.3, 33.0]).unwrap(),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn interpolate_reproduces_linears() {
        let space = small_space();
        let f = |x: &[f64]| 0.3 * x[0] - 0.02 * x[1] + 1.5;
        let field = space.interpolate(f).unwrap();
        for p in [[0.1, 2.0], [3.9, 69.0], [2.0, 35.5], [1.7, 12.3]] {
            assert_relative_eq!(field.evaluate(&p).unwrap(), f(&p), max_relative = 1e-12);
        }
    }

    #[test]
    fn interpolate_rejects_non_finite() {
        let space = small_space();
        let err = space.interpolate(|x| if x[0] == 0.0 { f64::NAN } else { 1.0 });
        match err {
            Err(Error::NonFinite { node, .. }) => assert_eq!(node, 0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_at_node_returns_coefficient() {
        let space = small_space();
        let field = space.interpolate(|x| x[0] * x[1]).unwrap();
        for i in [0usize, 3, 7, 24] {
            let x = space.mesh().vertex(i).to_vec();
            assert_relative_eq!(
                field.evaluate(&x).unwrap(),
                field.coeffs()[i],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn evaluate_at_centroid_is_mean() {
        let space = small_space();
        let field = space.interpolate(|x| x[0].powi(2) + x[1]).unwrap();
        let mesh = space.mesh();
        for k in [0usize, 5, 11] {
            let c = mesh.cell_centroid(k);
            let mean: f64 = mesh.cell(k).iter().map(|&v| field.coeffs()[v]).sum::<f64>() / 3.0;
            assert_relative_eq!(field.evaluate(&c).unwrap(), mean, max_relative = 1e-12);
        }
    }

    #[test]
    fn partition_of_unity_and_gradient_sums() {
        let space = small_space();
        let mesh = space.mesh();
        let rule = quadrature_for(4, 2).unwrap();
        for k in 0..mesh.n_cells() {
            for p in &rule.points {
                let s: f64 = p.iter().sum();
                assert!((s - 1.0).abs() < 1e-13);
            }
            let mut gsum = [0.0; 2];
            for a in 0..3 {
                let g = space.basis_gradient(k, a);
                gsum[0] += g[0];
                gsum[1] += g[1];
            }
            assert!(gsum[0].abs() < 1e-13 && gsum[1].abs() < 1e-13);
        }
    }

    #[test]
    fn affine_reproduction_after_refinement() {
        let domain = Domain::new(vec![[0.0, 1.0]], [1.0, 2.0], vec![1.0]).unwrap();
        let mesh = Mesh::build_structured(&domain, &[1, 1]).unwrap();
        let fine = mesh.refine(&[0]).unwrap();
        let space = Arc::new(FeSpace::from_mesh(fine));
        let f = |x: &[f64]| 2.0 * x[0] - 3.0 * x[1] + 0.25;
        let field = space.interpolate(f).unwrap();
        for p in [[0.2, 1.1], [0.9, 1.9], [0.5, 1.5], [0.31, 1.77]] {
            assert_relative_eq!(field.evaluate(&p).unwrap(), f(&p), max_relative = 1e-12);
        }
    }

    #[test]
    fn csv_dump_shape() {
        let space = small_space();
        let field = space.interpolate(|x| x[0]).unwrap();
        let mut buf = Vec::new();
        field.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), space.n_dofs());
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }
}
