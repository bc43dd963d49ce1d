//! Absorbed dose: the energy integral `int S(E) psi(x, E) / rho(x) dE`
//! approximated by a positive-weight quadrature along the energy axis,
//! followed by a spatial projection. Three projections are available with
//! different positivity behaviour: the L2 (Galerkin) projection converges
//! at full order but may undershoot zero, the elementwise-constant average
//! is nonnegative whenever the fluence is, and the constrained projection
//! keeps nodal values nonnegative by construction.

use std::sync::Arc;

use crate::assembly::{assemble_load, assemble_mass_matrix};
use crate::error::{Error, Result};
use crate::fespace::{quadrature_for, FeSpace, NodalField, QuadratureRule};
use crate::materials::MaterialField;
use crate::solvers::{solve_supg, solve_vi, BoundSet, ViOptions, ViReport};

/// Spatial quadrature degree used by dose projections.
const DOSE_QUADRATURE_DEGREE: usize = 4;

/// Quadrature along the energy axis: positive weights, nodes inside the
/// energy interval.
#[derive(Debug, Clone)]
pub struct EnergyQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EnergyQuadrature {
    /// Composite trapezoid rule on the given strictly increasing nodes.
    /// Weights sum to the node span.
    pub fn trapezoid(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Domain(
                "energy quadrature needs at least two nodes".into(),
            ));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain(
                    "energy quadrature nodes must increase strictly".into(),
                ));
            }
        }
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        weights[0] = 0.5 * (nodes[1] - nodes[0]);
        weights[n - 1] = 0.5 * (nodes[n - 1] - nodes[n - 2]);
        for i in 1..n - 1 {
            weights[i] = 0.5 * (nodes[i + 1] - nodes[i - 1]);
        }
        Ok(Self { nodes, weights })
    }

    /// Trapezoid rule on `n + 1` uniform nodes over the interval.
    pub fn uniform(interval: [f64; 2], n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::Domain(
                "energy quadrature needs at least one interval".into(),
            ));
        }
        let [lo, hi] = interval;
        let nodes = (0..=n)
            .map(|i| {
                if i == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / n as f64
                }
            })
            .collect();
        Self::trapezoid(nodes)
    }

    /// Trapezoid rule with nodes at the mesh's energy coordinates.
    pub fn from_mesh(mesh: &crate::mesh::Mesh) -> Result<Self> {
        Self::trapezoid(mesh.energy_coordinates())
    }

    pub fn span(&self) -> f64 {
        self.nodes[self.nodes.len() - 1] - self.nodes[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoseRepresentation {
    /// Nodal values of the L2 projection.
    GalerkinNodal,
    /// One value per spatial element.
    ElementConstant,
    /// Nodal values of the nonnegativity-constrained projection.
    ViNodal,
}

impl DoseRepresentation {
    pub fn label(&self) -> &'static str {
        match self {
            DoseRepresentation::GalerkinNodal => "galerkin-nodal",
            DoseRepresentation::ElementConstant => "element-constant",
            DoseRepresentation::ViNodal => "vi-nodal",
        }
    }
}

/// Spatial dose field in one of the three representations.
#[derive(Debug, Clone)]
pub struct DoseField {
    pub space: Arc<FeSpace>,
    pub representation: DoseRepresentation,
    /// Nodal values, or per-element values for the constant representation.
    pub values: Vec<f64>,
}

impl DoseField {
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Spatial location of the maximum: vertex (nodal representations) or
    /// element centroid (constant representation).
    pub fn argmax_position(&self) -> Vec<f64> {
        let mesh = self.space.mesh();
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        match self.representation {
            DoseRepresentation::ElementConstant => mesh.cell_centroid(best),
            _ => mesh.vertex(best).to_vec(),
        }
    }

    /// CSV dump: a `# representation: ...` comment, then
    /// `coords...,dose` rows (vertices for nodal representations, element
    /// centroids for the constant one).
    pub fn dump_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "# representation: {}", self.representation.label())?;
        let mesh = self.space.mesh();
        for (i, &v) in self.values.iter().enumerate() {
            let coords = match self.representation {
                DoseRepresentation::ElementConstant => mesh.cell_centroid(i),
                _ => mesh.vertex(i).to_vec(),
            };
            let mut cols: Vec<String> = coords.iter().map(|x| format!("{x:.12e}")).collect();
            cols.push(format!("{v:.12e}"));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Energy-line samples of the dose integrand at the given spatial points:
/// `sum_q w_q S(xi_q) / rho(x) psi_h(x, xi_q)`.
pub fn dose_integrand_samples(
    fluence: &NodalField,
    materials: &MaterialField,
    equad: &EnergyQuadrature,
    spatial_points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    spatial_points
        .iter()
        .map(|x| integrand_at(fluence, materials, equad, x))
        .collect()
}

fn integrand_at(
    fluence: &NodalField,
    materials: &MaterialField,
    equad: &EnergyQuadrature,
    x: &[f64],
) -> Result<f64> {
    let mat = materials.material_at(x)?;
    let mut point = x.to_vec();
    point.push(0.0);
    let last = point.len() - 1;
    let mut acc = 0.0;
    for (&e, &w) in equad.nodes.iter().zip(&equad.weights) {
        point[last] = e;
        acc += w * mat.s(e) * fluence.evaluate(&point)? / mat.rho;
    }
    Ok(acc)
}

/// L2 projection of the sampled integrand onto the spatial P1 space. The
/// mass system is solved to the direct-solve residual contract. No sign is
/// guaranteed: steep integrands can produce negative nodal values.
pub fn dose_galerkin(
    fluence: &NodalField,
    materials: &MaterialField,
    equad: &EnergyQuadrature,
    dose_space: &Arc<FeSpace>,
) -> Result<DoseField> {
    let mass = assemble_mass_matrix(dose_space)?;
    let rhs = dose_load(fluence, materials, equad, dose_space)?;
    let (values, _) = solve_supg(&mass, &rhs)?;
    Ok(DoseField {
        space: Arc::clone(dose_space),
        representation: DoseRepresentation::GalerkinNodal,
        values,
    })
}

/// Elementwise averages of the sampled integrand; nonnegative whenever the
/// fluence is nonnegative along the sampled lines.
pub fn dose_element_constant(
    fluence: &NodalField,
    materials: &MaterialField,
    equad: &EnergyQuadrature,
    dose_space: &Arc<FeSpace>,
) -> Result<DoseField> {
    let mesh = dose_space.mesh();
    let dim = mesh.dim();
    let rule = quadrature_for(DOSE_QUADRATURE_DEGREE, dim)?;
    let refvol = QuadratureRule::reference_measure(dim);
    let mut values = Vec::with_capacity(mesh.n_cells());
    let mut x = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let mut acc = 0.0;
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            acc += wq * integrand_at(fluence, materials, equad, &x)?;
        }
        // cell average: quadrature weights sum to the reference measure
        values.push(acc / refvol);
    }
    Ok(DoseField {
        space: Arc::clone(dose_space),
        representation: DoseRepresentation::ElementConstant,
        values,
    })
}

/// Nonnegativity-constrained projection: the mass system solved over the
/// admissible set `{v >= 0 at nodes}`. Nodal values are nonnegative exactly
/// and complementarity holds to the solver tolerance.
pub fn dose_vi(
    fluence: &NodalField,
    materials: &MaterialField,
    equad: &EnergyQuadrature,
    dose_space: &Arc<FeSpace>,
    opts: &ViOptions,
) -> Result<(DoseField, ViReport)> {
    let mass = assemble_mass_matrix(dose_space)?;
    let rhs = dose_load(fluence, materials, equad, dose_space)?;
    let (values, report) = solve_vi(&mass, &rhs, BoundSet::nonnegative(), opts)?;
    Ok((
        DoseField {
            space: Arc::clone(dose_space),
            representation: DoseRepresentation::ViNodal,
            values,
        },
        report,
    ))
}

fn dose_load(
    fluence: &NodalField,
    materials: &MaterialField,
    equad: &EnergyQuadrature,
    dose_space: &Arc<FeSpace>,
) -> Result<Vec<f64>> {
    assemble_load(dose_space, DOSE_QUADRATURE_DEGREE, |x| {
        integrand_at(fluence, materials, equad, x)
    })
}

/// Spatial integral of the sampled integrand with the projection quadrature;
/// equals `sum_K |K| D_K` of the elementwise representation by construction.
pub fn integrand_total(
    fluence: &NodalField,
    materials: &MaterialField,
    equad: &EnergyQuadrature,
    dose_space: &Arc<FeSpace>,
) -> Result<f64> {
    let mesh = dose_space.mesh();
    let dim = mesh.dim();
    let rule = quadrature_for(DOSE_QUADRATURE_DEGREE, dim)?;
    let refvol = QuadratureRule::reference_measure(dim);
    let mut total = 0.0;
    let mut x = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            total += wq * scale * integrand_at(fluence, materials, equad, &x)?;
        }
    }
    Ok(total)
}
