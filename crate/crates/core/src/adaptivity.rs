//! A posteriori driver: elementwise indicator combining the transport
//! residual with transverse-gradient jumps, maximum marking, and the
//! solve-estimate-mark-refine loop.

use std::sync::Arc;

use crate::analytic::ExactFluence;
use crate::assembly::{
    assemble_system, energy_norm, FieldView, TransportCoefficients, TransportProblem,
};
use crate::error::{Error, Result};
use crate::fespace::{FeSpace, QuadratureRule};
use crate::mesh::Mesh;
use crate::solvers::{solve_supg, solve_vi, BoundSet, ViOptions};
use crate::NodalField;

/// Per-cell indicator values `eta_K >= 0`.
#[derive(Debug, Clone)]
pub struct IndicatorField {
    pub eta: Vec<f64>,
}

impl IndicatorField {
    pub fn max(&self) -> f64 {
        self.eta.iter().fold(0.0f64, |m, &v| m.max(v))
    }

    /// Global estimator `sqrt(sum eta_K^2)`.
    pub fn total(&self) -> f64 {
        self.eta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `eta_K^2 = |L(psi_h) - f|^2_K + eps sum_e h_e |[grad psi_h . omega_perp]|^2_e`.
/// The jump term needs two spatial dimensions; each interior facet counts
/// towards both adjacent cells. Boundary facets contribute nothing.
pub fn estimate(
    space: &FeSpace,
    coeffs: &TransportCoefficients,
    psi: &NodalField,
) -> Result<IndicatorField> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let sd = dim - 1;
    let omega = coeffs.problem.omega();
    let rule = &coeffs.volume_rule;
    let refvol = QuadratureRule::reference_measure(dim);

    let mut eta_sq = vec![0.0; mesh.n_cells()];
    let mut x = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        let grad = psi.gradient_in_cell(k);
        let omega_grad: f64 = (0..sd).map(|i| omega[i] * grad[i]).sum();
        let mut acc = 0.0;
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let val: f64 = bary
                .iter()
                .zip(cell)
                .map(|(l, &v)| l * psi.coeffs()[v])
                .sum();
            let residual = omega_grad
                - mat.s_prime(e) * val
                - mat.s(e) * grad[dim - 1]
                - (coeffs.problem.source)(&x);
            acc += wq * scale * residual * residual;
        }
        eta_sq[k] = acc;
    }

    let eps = coeffs.problem.epsilon;
    if eps > 0.0 && sd == 2 {
        let perp = [-omega[1], omega[0]];
        for facet in mesh.interior_facets() {
            let [k1, k2] = facet.cells;
            let g1 = psi.gradient_in_cell(k1);
            let g2 = psi.gradient_in_cell(k2);
            let jump = perp[0] * (g1[0] - g2[0]) + perp[1] * (g1[1] - g2[1]);
            let contribution = eps * facet.diameter * facet.measure * jump * jump;
            eta_sq[k1] += contribution;
            eta_sq[k2] += contribution;
        }
    }

    Ok(IndicatorField {
        eta: eta_sq.iter().map(|v| v.sqrt()).collect(),
    })
}

/// Maximum marking: cells with `eta_K >= theta * max eta`, ids ascending.
pub fn mark(indicator: &IndicatorField, theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config(format!(
            "marking fraction must lie in (0, 1], got {theta}"
        )));
    }
    let threshold = theta * indicator.max();
    Ok(indicator
        .eta
        .iter()
        .enumerate()
        .filter(|(_, &e)| e >= threshold)
        .map(|(k, _)| k)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Supg,
    Vi,
}

#[derive(Debug, Clone)]
pub struct AdaptOptions {
    /// Maximum-marking fraction.
    pub theta: f64,
    /// Refinement rounds; level 0 solves on the initial mesh.
    pub max_levels: usize,
    pub solver: SolverChoice,
    pub vi: ViOptions,
    /// Admissible box for the constrained solver; defaults to
    /// `[0, g_sup]` of the current level.
    pub bounds: Option<BoundSet>,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            theta: 0.01,
            max_levels: 4,
            solver: SolverChoice::Vi,
            vi: ViOptions::default(),
            bounds: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptLevel {
    pub level: usize,
    pub dofs: usize,
    /// Cells marked at this level (0 on the final level).
    pub marked: usize,
    /// Global estimator value.
    pub eta_total: f64,
    /// Energy-norm error against the oracle, when one applies.
    pub energy_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaptReport {
    pub levels: Vec<AdaptLevel>,
}

impl AdaptReport {
    /// CSV dump: `level,dofs,marked,eta_sum,energy_error` rows.
    pub fn dump_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "level,dofs,marked,eta_sum,energy_error")?;
        for row in &self.levels {
            let err = row
                .energy_error
                .map(|e| format!("{e:.12e}"))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{:.12e},{}",
                row.level, row.dofs, row.marked, row.eta_total, err
            )?;
        }
        Ok(())
    }
}

/// Solve-estimate-mark-refine. Runs at most `max_levels` refinement rounds;
/// an empty marked set terminates early. Returns the solution on the final
/// mesh together with the per-level report.
pub fn adapt_loop(
    initial_mesh: Mesh,
    problem: &TransportProblem,
    opts: &AdaptOptions,
    oracle: Option<&ExactFluence>,
) -> Result<(NodalField, AdaptReport)> {
    let mut mesh = initial_mesh;
    let mut levels = Vec::new();
    let mut level = 0usize;
    loop {
        let space = Arc::new(FeSpace::new(Arc::new(mesh)));
        let coeffs = TransportCoefficients::new(&space, problem)?;
        let (a, rhs) = assemble_system(&space, &coeffs)?;
        let psi = match opts.solver {
            SolverChoice::Supg => {
                let (x, _) = solve_supg(&a, &rhs)?;
                space.field_from(x)?
            }
            SolverChoice::Vi => {
                let bounds = opts.bounds.unwrap_or(BoundSet::up_to(coeffs.g_sup));
                let (x, _) = solve_vi(&a, &rhs, bounds, &opts.vi)?;
                space.field_from(x)?
            }
        };
        let indicator = estimate(&space, &coeffs, &psi)?;
        let energy_error = match oracle {
            Some(exact) => Some(energy_norm(
                &space,
                &coeffs,
                &FieldView::ErrorAgainst {
                    exact,
                    approx: &psi,
                },
            )?),
            None => None,
        };

        let mut row = AdaptLevel {
            level,
            dofs: space.n_dofs(),
            marked: 0,
            eta_total: indicator.total(),
            energy_error,
        };

        if level == opts.max_levels {
            levels.push(row);
            return Ok((psi, AdaptReport { levels }));
        }
        let marked = mark(&indicator, opts.theta)?;
        row.marked = marked.len();
        levels.push(row);
        if marked.is_empty() {
            return Ok((psi, AdaptReport { levels }));
        }
        mesh = space.mesh().refine(&marked)?;
        level += 1;
    }
}
