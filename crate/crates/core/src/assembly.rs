//! Assembly of the discrete problem: transverse diffusion, stabilised
//! transport with weak inflow conditions, the load vector, and the energy
//! and star norms used by the error analysis.
//!
//! The transport operator is `L(u) = omega . grad_x u - d/dE (S(E) u)`,
//! expanded by the product rule as `omega . grad_x u - S'(E) u - S(E) dE u`.
//! Each cell adds the Galerkin term `(L u) v`, the streamline stabilisation
//! `delta_K (L u)(L v)` with `delta_K = h_K / (2 (|omega| + |mean_K S|))`,
//! and, in two spatial dimensions, the projected diffusion
//! `eps (omega_perp . grad_x u)(omega_perp . grad_x v)`. Inflow facets carry
//! the weak boundary weight `-1/2 (omega . n_x - S(E) n_E)` on both the
//! matrix and the load; transverse facets contribute nothing, which realises
//! the homogeneous Neumann condition on the sides.

use crate::error::{Error, Result};
use crate::fespace::{quadrature_for, FeSpace, NodalField, QuadratureRule};
use crate::materials::MaterialField;
use crate::mesh::FacetTag;

/// Scalar data function on the space-energy domain.
pub type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Default quadrature degree for volume and facet integrals. The stopping
/// power is not polynomial, so the rule is taken well above the element
/// degree.
pub const QUADRATURE_DEGREE: usize = 4;

/// Mesh-independent description of a transport problem.
pub struct TransportProblem {
    /// Medium layout; also carries the beam direction.
    pub materials: MaterialField,
    /// Transverse diffusion coefficient; must be 0 in one spatial dimension.
    pub epsilon: f64,
    /// Inflow data `g`, evaluated at full space-energy coordinates.
    pub inflow: ScalarFn,
    /// Volume source `f`.
    pub source: ScalarFn,
    /// Analytic supremum of `g` over the inflow boundary, when known; the
    /// sampled maximum is used otherwise.
    pub g_sup_hint: Option<f64>,
}

impl TransportProblem {
    pub fn new(materials: MaterialField, epsilon: f64, inflow: ScalarFn, source: ScalarFn) -> Self {
        Self {
            materials,
            epsilon,
            inflow,
            source,
            g_sup_hint: None,
        }
    }

    pub fn with_g_sup(mut self, g_sup: f64) -> Self {
        self.g_sup_hint = Some(g_sup);
        self
    }

    pub fn omega(&self) -> &[f64] {
        self.materials.omega()
    }
}

/// Mesh-bound coefficients: the stabilisation map, the energy-norm weight
/// and the inflow supremum, plus the quadrature rules shared by assembly and
/// norm evaluation.
pub struct TransportCoefficients<'a> {
    pub problem: &'a TransportProblem,
    /// Stabilisation parameter per cell.
    pub delta: Vec<f64>,
    /// L2 weight of the energy norm.
    pub mu: f64,
    /// Supremum of the inflow data; upper bound of the admissible box.
    pub g_sup: f64,
    pub volume_rule: QuadratureRule,
    pub facet_rule: QuadratureRule,
}

impl<'a> TransportCoefficients<'a> {
    pub fn new(space: &FeSpace, problem: &'a TransportProblem) -> Result<Self> {
        let mesh = space.mesh();
        let dim = mesh.dim();
        let sd = dim - 1;
        if !(1..=2).contains(&sd) {
            return Err(Error::Config(format!(
                "transport assembly needs a space-energy mesh of dimension 2 or 3, got {dim}"
            )));
        }
        if problem.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                problem.epsilon
            )));
        }
        if sd == 1 && problem.epsilon > 0.0 {
            return Err(Error::Config(
                "transverse diffusion requires two spatial dimensions; set epsilon = 0".into(),
            ));
        }
        if problem.omega().len() != sd {
            return Err(Error::Config(format!(
                "beam direction has {} components, mesh has {sd} spatial axes",
                problem.omega().len()
            )));
        }
        let volume_rule = quadrature_for(QUADRATURE_DEGREE, dim)?;
        let facet_rule = quadrature_for(QUADRATURE_DEGREE, dim - 1)?;

        let [_, e_max] = mesh.energy_interval();
        let mu = problem.materials.coercivity_mu(e_max)?;

        // delta_K = h_K / (2 (|omega| + |Pi_0 S|)) with Pi_0 the cell mean
        let refvol = QuadratureRule::reference_measure(dim);
        let mut delta = Vec::with_capacity(mesh.n_cells());
        for k in 0..mesh.n_cells() {
            let cell = mesh.cell(k);
            let mut mean_s = 0.0;
            for (bary, &wq) in volume_rule.points.iter().zip(&volume_rule.weights) {
                let mut x = vec![0.0; dim];
                for (lam, &v) in bary.iter().zip(cell) {
                    for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                        *xi += lam * vi;
                    }
                }
                let mat = problem.materials.material_at(&x[..sd])?;
                mean_s += wq * mat.s(x[dim - 1]);
            }
            mean_s /= refvol;
            delta.push(mesh.cell_diameter(k) / (2.0 * (1.0 + mean_s.abs())));
        }

        // inflow supremum: analytic hint if present, sampled otherwise
        let g_sup = match problem.g_sup_hint {
            Some(v) => v,
            None => {
                let mut sup: f64 = 0.0;
                for facet in mesh.boundary_facets() {
                    if facet.tag != FacetTag::Inflow {
                        continue;
                    }
                    for &v in &facet.vertices {
                        sup = sup.max((problem.inflow)(mesh.vertex(v)));
                    }
                    for bary in &facet_rule.points {
                        let mut x = vec![0.0; dim];
                        for (lam, &v) in bary.iter().zip(&facet.vertices) {
                            for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                                *xi += lam * vi;
                            }
                        }
                        sup = sup.max((problem.inflow)(&x));
                    }
                }
                sup
            }
        };
        if !(g_sup >= 0.0) {
            return Err(Error::Config(format!(
                "inflow supremum must be >= 0, got {g_sup}"
            )));
        }

        Ok(Self {
            problem,
            delta,
            mu,
            g_sup,
            volume_rule,
            facet_rule,
        })
    }
}

/// Sparse matrix in compressed sparse row form, with the sparsity pattern of
/// the P1 connectivity graph.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Zero operator with the node-adjacency pattern of the space.
    pub fn from_space(space: &FeSpace) -> Self {
        let mesh = space.mesh();
        let n = space.n_dofs();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..mesh.n_cells() {
            let cell = mesh.cell(k);
            for &i in cell {
                for &j in cell {
                    rows[i].push(j);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        SparseOperator {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Build from explicit triples; duplicate entries accumulate.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            rows[i].push(j);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        let mut op = SparseOperator {
            n,
            row_ptr,
            col_idx,
            values,
        };
        for &(i, j, v) in triplets {
            op.add(i, j, v);
        }
        op
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos] += v,
            Err(_) => panic!("entry ({i}, {j}) outside the sparsity pattern"),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Quadratic form `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        x.iter().zip(ay.iter()).map(|(a, b)| a * b).sum()
    }

    /// Text dump of the nonzeros as `row col value` triples (1-based), with
    /// a size header line.
    pub fn dump_matrix_market(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }

    /// Iterate nonzero triples `(row, col, value)`.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .map(move |(&j, &v)| (i, j, v))
                .collect::<Vec<_>>()
        })
    }
}

#[derive(Clone, Copy)]
struct Parts {
    transport: bool,
    supg: bool,
    boundary: bool,
    diffusion: bool,
    load: bool,
}

/// Full discrete system: operator encoding diffusion + stabilised transport
/// + weak inflow, and the load vector.
pub fn assemble_system(
    space: &FeSpace,
    coeffs: &TransportCoefficients,
) -> Result<(SparseOperator, Vec<f64>)> {
    assemble_parts(
        space,
        coeffs,
        Parts {
            transport: true,
            supg: true,
            boundary: true,
            diffusion: true,
            load: true,
        },
    )
}

/// Diffusion block alone (symmetric); used by tests.
#[cfg(test)]
pub(crate) fn assemble_diffusion_only(
    space: &FeSpace,
    coeffs: &TransportCoefficients,
) -> Result<SparseOperator> {
    let (a, _) = assemble_parts(
        space,
        coeffs,
        Parts {
            transport: false,
            supg: false,
            boundary: false,
            diffusion: true,
            load: false,
        },
    )?;
    Ok(a)
}

fn assemble_parts(
    space: &FeSpace,
    coeffs: &TransportCoefficients,
    parts: Parts,
) -> Result<(SparseOperator, Vec<f64>)> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let sd = dim - 1;
    let nb = dim + 1;
    let omega = coeffs.problem.omega();
    let eps = coeffs.problem.epsilon;
    let omega_perp: Option<[f64; 2]> = if sd == 2 {
        Some([-omega[1], omega[0]])
    } else {
        None
    };
    let refvol = QuadratureRule::reference_measure(dim);
    let rule = &coeffs.volume_rule;

    let mut op = SparseOperator::from_space(space);
    let mut rhs = vec![0.0; space.n_dofs()];

    let mut local = vec![0.0; nb * nb];
    let mut local_rhs = vec![0.0; nb];
    let mut x = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        let delta = coeffs.delta[k];
        let grads: Vec<&[f64]> = (0..nb).map(|a| space.basis_gradient(k, a)).collect();
        let omega_dot: Vec<f64> = grads
            .iter()
            .map(|g| (0..sd).map(|i| omega[i] * g[i]).sum())
            .collect();
        let trans: Vec<f64> = match omega_perp {
            Some(wp) => grads.iter().map(|g| wp[0] * g[0] + wp[1] * g[1]).collect(),
            None => vec![0.0; nb],
        };
        local.iter_mut().for_each(|v| *v = 0.0);
        local_rhs.iter_mut().for_each(|v| *v = 0.0);
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let s = mat.s(e);
            let sp = mat.s_prime(e);
            let w = wq * scale;
            let mut lphi = [0.0f64; 4];
            for a in 0..nb {
                lphi[a] = omega_dot[a] - sp * bary[a] - s * grads[a][dim - 1];
            }
            for a in 0..nb {
                for b in 0..nb {
                    let mut term = 0.0;
                    if parts.transport {
                        term += lphi[b] * bary[a];
                    }
                    if parts.supg {
                        term += delta * lphi[b] * lphi[a];
                    }
                    if parts.diffusion && eps > 0.0 {
                        term += eps * trans[b] * trans[a];
                    }
                    local[a * nb + b] += w * term;
                }
                if parts.load {
                    local_rhs[a] += w * (coeffs.problem.source)(&x) * bary[a];
                }
            }
        }
        for a in 0..nb {
            for b in 0..nb {
                op.add(cell[a], cell[b], local[a * nb + b]);
            }
            rhs[cell[a]] += local_rhs[a];
        }
    }

    if parts.boundary {
        let frule = &coeffs.facet_rule;
        let fref = QuadratureRule::reference_measure(dim - 1);
        for facet in mesh.boundary_facets() {
            if facet.tag != FacetTag::Inflow {
                continue;
            }
            let scale = facet.measure / fref;
            let n_e = facet.normal[dim - 1];
            let omega_n: f64 = (0..sd).map(|i| omega[i] * facet.normal[i]).sum();
            for (fb, &wq) in frule.points.iter().zip(&frule.weights) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (lam, &v) in fb.iter().zip(&facet.vertices) {
                    for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                        *xi += lam * vi;
                    }
                }
                let e = x[dim - 1];
                let mat = coeffs.problem.materials.material_at(&x[..sd])?;
                let weight = omega_n - mat.s(e) * n_e;
                let w = -0.5 * weight * wq * scale;
                for (ai, &av) in facet.vertices.iter().enumerate() {
                    for (bi, &bv) in facet.vertices.iter().enumerate() {
                        op.add(av, bv, w * fb[bi] * fb[ai]);
                    }
                    if parts.load {
                        rhs[av] += w * (coeffs.problem.inflow)(&x) * fb[ai];
                    }
                }
            }
        }
    }

    Ok((op, rhs))
}

/// Symmetric Gram matrix of the energy norm: `u^T N u = |||u|||^2` for
/// discrete fields, assembled with the same quadrature as the norm itself.
pub fn assemble_norm_matrix(
    space: &FeSpace,
    coeffs: &TransportCoefficients,
) -> Result<SparseOperator> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let sd = dim - 1;
    let nb = dim + 1;
    let omega = coeffs.problem.omega();
    let eps = coeffs.problem.epsilon;
    let omega_perp: Option<[f64; 2]> = if sd == 2 {
        Some([-omega[1], omega[0]])
    } else {
        None
    };
    let refvol = QuadratureRule::reference_measure(dim);
    let rule = &coeffs.volume_rule;

    let mut op = SparseOperator::from_space(space);
    let mut local = vec![0.0; nb * nb];
    let mut x = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        let delta = coeffs.delta[k];
        let grads: Vec<&[f64]> = (0..nb).map(|a| space.basis_gradient(k, a)).collect();
        let omega_dot: Vec<f64> = grads
            .iter()
            .map(|g| (0..sd).map(|i| omega[i] * g[i]).sum())
            .collect();
        let trans: Vec<f64> = match omega_perp {
            Some(wp) => grads.iter().map(|g| wp[0] * g[0] + wp[1] * g[1]).collect(),
            None => vec![0.0; nb],
        };
        local.iter_mut().for_each(|v| *v = 0.0);
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let s = mat.s(e);
            let sp = mat.s_prime(e);
            let w = wq * scale;
            let mut lphi = [0.0f64; 4];
            for a in 0..nb {
                lphi[a] = omega_dot[a] - sp * bary[a] - s * grads[a][dim - 1];
            }
            for a in 0..nb {
                for b in 0..nb {
                    local[a * nb + b] += w
                        * (coeffs.mu * bary[a] * bary[b]
                            + delta * lphi[a] * lphi[b]
                            + eps * trans[a] * trans[b]);
                }
            }
        }
        for a in 0..nb {
            for b in 0..nb {
                op.add(cell[a], cell[b], local[a * nb + b]);
            }
        }
    }

    // outflow boundary term, weight is nonnegative there
    let frule = &coeffs.facet_rule;
    let fref = QuadratureRule::reference_measure(dim - 1);
    for facet in mesh.boundary_facets() {
        if facet.tag != FacetTag::Outflow {
            continue;
        }
        let scale = facet.measure / fref;
        let n_e = facet.normal[dim - 1];
        let omega_n: f64 = (0..sd).map(|i| omega[i] * facet.normal[i]).sum();
        for (fb, &wq) in frule.points.iter().zip(&frule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in fb.iter().zip(&facet.vertices) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let weight = omega_n - mat.s(e) * n_e;
            let w = 0.5 * weight * wq * scale;
            for (ai, &av) in facet.vertices.iter().enumerate() {
                for (bi, &bv) in facet.vertices.iter().enumerate() {
                    op.add(av, bv, w * fb[bi] * fb[ai]);
                }
            }
        }
    }

    Ok(op)
}

/// Field that can be sampled with values and gradients: either a discrete
/// nodal field, an analytic function, or the difference exact - discrete
/// (error fields).
pub enum FieldView<'a> {
    Nodal(&'a NodalField),
    Analytic(&'a dyn AnalyticField),
    ErrorAgainst {
        exact: &'a dyn AnalyticField,
        approx: &'a NodalField,
    },
}

/// Analytic scalar field with a gradient.
pub trait AnalyticField {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

impl AnalyticField for crate::analytic::ExactFluence {
    fn value(&self, x: &[f64]) -> f64 {
        crate::analytic::ExactFluence::value(self, x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        crate::analytic::ExactFluence::gradient(self, x)
    }
}

impl FieldView<'_> {
    /// Value and gradient at a point of the given cell; the nodal part uses
    /// the cell-local basis, the analytic part evaluates the closure.
    fn sample(
        &self,
        space: &FeSpace,
        cell: usize,
        bary: &[f64],
        x: &[f64],
        nodal_grad: &[f64],
        grad_out: &mut [f64],
    ) -> f64 {
        let mesh = space.mesh();
        match self {
            FieldView::Nodal(f) => {
                grad_out.copy_from_slice(nodal_grad);
                bary.iter()
                    .zip(mesh.cell(cell))
                    .map(|(l, &v)| l * f.coeffs()[v])
                    .sum()
            }
            FieldView::Analytic(a) => {
                let g = a.gradient(x);
                grad_out.copy_from_slice(&g);
                a.value(x)
            }
            FieldView::ErrorAgainst { exact, approx } => {
                let g = exact.gradient(x);
                for (o, (ge, gn)) in grad_out.iter_mut().zip(g.iter().zip(nodal_grad)) {
                    *o = ge - gn;
                }
                let nodal: f64 = bary
                    .iter()
                    .zip(mesh.cell(cell))
                    .map(|(l, &v)| l * approx.coeffs()[v])
                    .sum();
                exact.value(x) - nodal
            }
        }
    }

    fn nodal_part(&self) -> Option<&NodalField> {
        match self {
            FieldView::Nodal(f) => Some(f),
            FieldView::ErrorAgainst { approx, .. } => Some(approx),
            FieldView::Analytic(_) => None,
        }
    }
}

/// Energy norm: square root of
/// `eps |P grad u|^2 + mu |u|^2 + sum_K delta_K |L u|^2_K
///  + 1/2 int_{outflow} (omega . n_x - S n_E) u^2`.
pub fn energy_norm(space: &FeSpace, coeffs: &TransportCoefficients, u: &FieldView) -> Result<f64> {
    Ok(norm_accumulate(space, coeffs, u, false)?.sqrt())
}

/// Star norm: energy norm plus `sum_K delta_K^{-1} |u|^2_K`.
pub fn star_norm(space: &FeSpace, coeffs: &TransportCoefficients, u: &FieldView) -> Result<f64> {
    Ok(norm_accumulate(space, coeffs, u, true)?.sqrt())
}

/// Plain L2 norm over the space-energy domain.
pub fn l2_norm(space: &FeSpace, coeffs: &TransportCoefficients, u: &FieldView) -> Result<f64> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let refvol = QuadratureRule::reference_measure(dim);
    let rule = &coeffs.volume_rule;
    let mut acc = 0.0;
    let mut x = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        let nodal_grad = u
            .nodal_part()
            .map(|f| f.gradient_in_cell(k))
            .unwrap_or_default();
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            let padded = pad_nodal_grad(&nodal_grad, dim);
            let val = u.sample(space, k, bary, &x, &padded, &mut grad);
            acc += wq * scale * val * val;
        }
    }
    Ok(acc.sqrt())
}

fn pad_nodal_grad(g: &[f64], dim: usize) -> Vec<f64> {
    if g.len() == dim {
        g.to_vec()
    } else {
        vec![0.0; dim]
    }
}

fn norm_accumulate(
    space: &FeSpace,
    coeffs: &TransportCoefficients,
    u: &FieldView,
    star: bool,
) -> Result<f64> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let sd = dim - 1;
    let omega = coeffs.problem.omega();
    let eps = coeffs.problem.epsilon;
    let omega_perp: Option<[f64; 2]> = if sd == 2 {
        Some([-omega[1], omega[0]])
    } else {
        None
    };
    let refvol = QuadratureRule::reference_measure(dim);
    let rule = &coeffs.volume_rule;

    let mut acc = 0.0;
    let mut x = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        let delta = coeffs.delta[k];
        let nodal_grad = u
            .nodal_part()
            .map(|f| f.gradient_in_cell(k))
            .unwrap_or_default();
        let padded = pad_nodal_grad(&nodal_grad, dim);
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let s = mat.s(e);
            let sp = mat.s_prime(e);
            let val = u.sample(space, k, bary, &x, &padded, &mut grad);
            let omega_grad: f64 = (0..sd).map(|i| omega[i] * grad[i]).sum();
            let lu = omega_grad - sp * val - s * grad[dim - 1];
            let mut dens = coeffs.mu * val * val + delta * lu * lu;
            if let Some(wp) = omega_perp {
                let t = wp[0] * grad[0] + wp[1] * grad[1];
                dens += eps * t * t;
            }
            if star {
                dens += val * val / delta;
            }
            acc += wq * scale * dens;
        }
    }

    // outflow term
    let frule = &coeffs.facet_rule;
    let fref = QuadratureRule::reference_measure(dim - 1);
    for facet in mesh.boundary_facets() {
        if facet.tag != FacetTag::Outflow {
            continue;
        }
        let scale = facet.measure / fref;
        let n_e = facet.normal[dim - 1];
        let omega_n: f64 = (0..sd).map(|i| omega[i] * facet.normal[i]).sum();
        let nodal_grad = u
            .nodal_part()
            .map(|f| f.gradient_in_cell(facet.cell))
            .unwrap_or_default();
        let padded = pad_nodal_grad(&nodal_grad, dim);
        for (fb, &wq) in frule.points.iter().zip(&frule.weights) {
            x.iter_mut().for_each(|v| *v = 0.0);
            for (lam, &v) in fb.iter().zip(&facet.vertices) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let weight = omega_n - mat.s(e) * n_e;
            // cell barycentric coordinates of the facet point
            let cell_bary = facet_to_cell_bary(facet, fb, dim);
            let val = u.sample(space, facet.cell, &cell_bary, &x, &padded, &mut grad);
            acc += 0.5 * weight * wq * scale * val * val;
        }
    }
    Ok(acc)
}

fn facet_to_cell_bary(
    facet: &crate::mesh::BoundaryFacet,
    facet_bary: &[f64],
    dim: usize,
) -> Vec<f64> {
    let mut bary = vec![0.0; dim + 1];
    for (lam, &local) in facet_bary.iter().zip(&facet.cell_local) {
        bary[local] = *lam;
    }
    bary
}

/// Value of the full bilinear form `A(u, v) + B_h(u, v)` for arbitrary
/// sampled fields, by the assembly quadrature. For two nodal fields this
/// matches `v^T A u` of [`assemble_system`] to roundoff.
pub fn apply_form(
    space: &FeSpace,
    coeffs: &TransportCoefficients,
    u: &FieldView,
    v: &FieldView,
) -> Result<f64> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let sd = dim - 1;
    let omega = coeffs.problem.omega();
    let eps = coeffs.problem.epsilon;
    let omega_perp: Option<[f64; 2]> = if sd == 2 {
        Some([-omega[1], omega[0]])
    } else {
        None
    };
    let refvol = QuadratureRule::reference_measure(dim);
    let rule = &coeffs.volume_rule;

    let mut acc = 0.0;
    let mut x = vec![0.0; dim];
    let mut gu = vec![0.0; dim];
    let mut gv = vec![0.0; dim];
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        let delta = coeffs.delta[k];
        let ugrad = u
            .nodal_part()
            .map(|f| f.gradient_in_cell(k))
            .unwrap_or_default();
        let vgrad = v
            .nodal_part()
            .map(|f| f.gradient_in_cell(k))
            .unwrap_or_default();
        let upad = pad_nodal_grad(&ugrad, dim);
        let vpad = pad_nodal_grad(&vgrad, dim);
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            x.iter_mut().for_each(|val| *val = 0.0);
            for (lam, &vtx) in bary.iter().zip(cell) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(vtx)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let s = mat.s(e);
            let sp = mat.s_prime(e);
            let uval = u.sample(space, k, bary, &x, &upad, &mut gu);
            let vval = v.sample(space, k, bary, &x, &vpad, &mut gv);
            let lu = (0..sd).map(|i| omega[i] * gu[i]).sum::<f64>() - sp * uval - s * gu[dim - 1];
            let lv = (0..sd).map(|i| omega[i] * gv[i]).sum::<f64>() - sp * vval - s * gv[dim - 1];
            let mut dens = lu * vval + delta * lu * lv;
            if let Some(wp) = omega_perp {
                dens += eps * (wp[0] * gu[0] + wp[1] * gu[1]) * (wp[0] * gv[0] + wp[1] * gv[1]);
            }
            acc += wq * scale * dens;
        }
    }

    let frule = &coeffs.facet_rule;
    let fref = QuadratureRule::reference_measure(dim - 1);
    for facet in mesh.boundary_facets() {
        if facet.tag != FacetTag::Inflow {
            continue;
        }
        let scale = facet.measure / fref;
        let n_e = facet.normal[dim - 1];
        let omega_n: f64 = (0..sd).map(|i| omega[i] * facet.normal[i]).sum();
        let ugrad = u
            .nodal_part()
            .map(|f| f.gradient_in_cell(facet.cell))
            .unwrap_or_default();
        let vgrad = v
            .nodal_part()
            .map(|f| f.gradient_in_cell(facet.cell))
            .unwrap_or_default();
        let upad = pad_nodal_grad(&ugrad, dim);
        let vpad = pad_nodal_grad(&vgrad, dim);
        for (fb, &wq) in frule.points.iter().zip(&frule.weights) {
            x.iter_mut().for_each(|val| *val = 0.0);
            for (lam, &vtx) in fb.iter().zip(&facet.vertices) {
                for (xi, vi) in x.iter_mut().zip(mesh.vertex(vtx)) {
                    *xi += lam * vi;
                }
            }
            let e = x[dim - 1];
            let mat = coeffs.problem.materials.material_at(&x[..sd])?;
            let weight = omega_n - mat.s(e) * n_e;
            let cell_bary = facet_to_cell_bary(facet, fb, dim);
            let uval = u.sample(space, facet.cell, &cell_bary, &x, &upad, &mut gu);
            let vval = v.sample(space, facet.cell, &cell_bary, &x, &vpad, &mut gv);
            acc += -0.5 * weight * wq * scale * uval * vval;
        }
    }
    Ok(acc)
}

/// Applier for the transport operator `L`: cellwise values at the volume
/// quadrature points.
pub struct TransportResidual<'a> {
    space: &'a FeSpace,
    coeffs: &'a TransportCoefficients<'a>,
}

pub fn transport_residual_operator<'a>(
    space: &'a FeSpace,
    coeffs: &'a TransportCoefficients<'a>,
) -> TransportResidual<'a> {
    TransportResidual { space, coeffs }
}

impl TransportResidual<'_> {
    /// `L(u)` at every volume quadrature point, one inner vector per cell.
    pub fn apply(&self, u: &NodalField) -> Result<Vec<Vec<f64>>> {
        let mesh = self.space.mesh();
        let dim = mesh.dim();
        let sd = dim - 1;
        let omega = self.coeffs.problem.omega();
        let rule = &self.coeffs.volume_rule;
        let mut out = Vec::with_capacity(mesh.n_cells());
        let mut x = vec![0.0; dim];
        for k in 0..mesh.n_cells() {
            let cell = mesh.cell(k);
            let grad = u.gradient_in_cell(k);
            let omega_grad: f64 = (0..sd).map(|i| omega[i] * grad[i]).sum();
            let mut cell_vals = Vec::with_capacity(rule.len());
            for bary in &rule.points {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (lam, &v) in bary.iter().zip(cell) {
                    for (xi, vi) in x.iter_mut().zip(mesh.vertex(v)) {
                        *xi += lam * vi;
                    }
                }
                let e = x[dim - 1];
                let mat = self.coeffs.problem.materials.material_at(&x[..sd])?;
                let val: f64 = bary.iter().zip(cell).map(|(l, &v)| l * u.coeffs()[v]).sum();
                cell_vals.push(omega_grad - mat.s_prime(e) * val - mat.s(e) * grad[dim - 1]);
            }
            out.push(cell_vals);
        }
        Ok(out)
    }
}

/// Mass matrix `int phi_i phi_j` over any mesh (used by dose projections).
pub fn assemble_mass_matrix(space: &FeSpace) -> Result<SparseOperator> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let nb = dim + 1;
    let rule = quadrature_for(2, dim)?;
    let refvol = QuadratureRule::reference_measure(dim);
    let mut op = SparseOperator::from_space(space);
    for k in 0..mesh.n_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_volume(k) / refvol;
        for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
            let w = wq * scale;
            for a in 0..nb {
                for b in 0..nb {
                    op.add(cell[a], cell[b], w * bary[a] * bary[b]);
                }
            }
        }
    }
    Ok(op)
}

/// Load vector `int f phi_i` with `f` sampled at quadrature points.
pub fn assemble_load(
    space: &FeSpace,
    degree: usize,
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let nb = dim + 1;
    let rule = quadrature_for(degree, dim)?;
    let refvol = QuadratureRule::reference_measure(dim);
    let mut rhs = vec![0.0; space.n_dofs()];
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
            let val = f(&x)?;
            let w = wq * scale;
            for a in 0..nb {
                rhs[cell[a]] += w * val * bary[a];
            }
        }
    }
    Ok(rhs)
}
