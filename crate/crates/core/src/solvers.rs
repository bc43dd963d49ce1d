//! Linear solves. The unconstrained stabilised system goes through a sparse
//! LU factorisation; the box-constrained problem is solved by a
//! reduced-space active-set method: nodes pinned at a bound are eliminated,
//! the remaining system is solved exactly, and the active set is updated
//! from primal violations and residual signs until feasibility and
//! complementarity hold together. The operator is nonsymmetric, so
//! optimality is expressed through residual complementarity rather than an
//! energy minimum.

use std::time::{Duration, Instant};

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::assembly::SparseOperator;
use crate::error::{Error, Result};

/// Relative residual contract of the direct solve.
pub const DIRECT_SOLVE_RTOL: f64 = 1e-10;

fn force_sequential() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

#[derive(Debug, Clone)]
pub struct LinearSolveReport {
    pub method: &'static str,
    /// Euclidean norm of `A x - b`.
    pub residual_norm: f64,
    /// Outer iterations (0 for a plain direct solve).
    pub iterations: usize,
    pub wall_time: Duration,
}

fn to_faer(a: &SparseOperator) -> Result<SparseColMat<usize, f64>> {
    let n = a.n_rows();
    let mut triplets = Vec::with_capacity(a.nnz());
    for (i, j, v) in a.triples() {
        triplets.push(Triplet::new(i, j, v));
    }
    SparseColMat::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Solver(format!("sparse conversion failed: {e:?}")))
}

fn lu_solve(a: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    force_sequential();
    let n = a.n_rows();
    let mat = to_faer(a)?;
    // the backend asserts (panics) on exactly singular pivots
    let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| mat.sp_lu()))
        .map_err(|_| Error::Solver("sparse LU hit a zero pivot (singular matrix)".into()))?
        .map_err(|e| Error::Solver(format!("sparse LU factorisation failed: {e:?}")))?;
    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    Ok((0..n).map(|i| x[(i, 0)]).collect())
}

fn residual_norm(a: &SparseOperator, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = a.matvec(x);
    ax.iter()
        .zip(rhs)
        .map(|(l, r)| (l - r) * (l - r))
        .sum::<f64>()
        .sqrt()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Direct sparse solve of the stabilised system. The residual must meet
/// `|A x - b| <= 1e-10 |b|`, otherwise the factorisation is reported as
/// failed (singular or catastrophically conditioned).
pub fn solve_supg(a: &SparseOperator, rhs: &[f64]) -> Result<(Vec<f64>, LinearSolveReport)> {
    if a.n_rows() != rhs.len() {
        return Err(Error::Solver(format!(
            "dimension mismatch: matrix {} x {}, rhs {}",
            a.n_rows(),
            a.n_rows(),
            rhs.len()
        )));
    }
    let start = Instant::now();
    let x = lu_solve(a, rhs)?;
    let res = residual_norm(a, &x, rhs);
    let scale = norm2(rhs);
    if !res.is_finite() || res > DIRECT_SOLVE_RTOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Solver(format!(
            "direct solve residual {res:.3e} exceeds {DIRECT_SOLVE_RTOL:.1e} * |rhs| = {:.3e}",
            DIRECT_SOLVE_RTOL * scale
        )));
    }
    Ok((
        x,
        LinearSolveReport {
            method: "sparse-lu",
            residual_norm: res,
            iterations: 0,
            wall_time: start.elapsed(),
        },
    ))
}

/// Nodal box `[lower, upper]`; `upper` may be infinite.
#[derive(Debug, Clone, Copy)]
pub struct BoundSet {
    pub lower: f64,
    pub upper: f64,
}

impl BoundSet {
    /// Nonnegativity alone.
    pub fn nonnegative() -> Self {
        Self {
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    /// `[0, g_sup]`, the admissible box when the source vanishes.
    pub fn up_to(g_sup: f64) -> Self {
        Self {
            lower: 0.0,
            upper: g_sup,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower <= self.upper) {
            return Err(Error::Config(format!(
                "inconsistent bounds [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Per-node constraint state after a constrained solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveFlag {
    AtLower,
    AtUpper,
    Free,
}

#[derive(Debug, Clone)]
pub struct ViOptions {
    pub max_outer: usize,
    /// Complementarity tolerance as a multiple of `|rhs|_inf`.
    pub tolerance_factor: f64,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            max_outer: 200,
            tolerance_factor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViReport {
    pub linear: LinearSolveReport,
    pub outer_iterations: usize,
    pub flags: Vec<ActiveFlag>,
    pub active_lower: usize,
    pub active_upper: usize,
    /// Largest complementarity violation of the returned iterate.
    pub complementarity: f64,
    /// Violation measure after each outer iteration.
    pub violation_history: Vec<f64>,
    /// Absolute complementarity tolerance used.
    pub tolerance: f64,
}

/// Residual-complementarity violation of a feasible iterate.
fn violation(r: &[f64], flags: &[ActiveFlag]) -> f64 {
    let mut v = 0.0f64;
    for (i, flag) in flags.iter().enumerate() {
        match flag {
            ActiveFlag::AtLower => v = v.max(-r[i]),
            ActiveFlag::AtUpper => v = v.max(r[i]),
            ActiveFlag::Free => v = v.max(r[i].abs()),
        }
    }
    v.max(0.0)
}

/// Box-constrained solve by the reduced-space active-set method. The
/// returned vector satisfies the bounds exactly (final projection) and the
/// residual `r = A x - b` satisfies the complementarity sign conditions to
/// within the configured tolerance.
pub fn solve_vi(
    a: &SparseOperator,
    rhs: &[f64],
    bounds: BoundSet,
    opts: &ViOptions,
) -> Result<(Vec<f64>, ViReport)> {
    bounds.validate()?;
    let n = a.n_rows();
    if rhs.len() != n {
        return Err(Error::Solver(
            "dimension mismatch in constrained solve".into(),
        ));
    }
    let start = Instant::now();
    let tol = opts.tolerance_factor * norm_inf(rhs).max(f64::MIN_POSITIVE);
    let lo = bounds.lower;
    let up = bounds.upper;

    // Warm start: the unconstrained solution seeds the active set with its
    // bound violations.
    let unconstrained = lu_solve(a, rhs)?;
    let mut flags: Vec<ActiveFlag> = unconstrained
        .iter()
        .map(|&x| {
            if x < lo {
                ActiveFlag::AtLower
            } else if x > up {
                ActiveFlag::AtUpper
            } else {
                ActiveFlag::Free
            }
        })
        .collect();

    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    let mut solves = 0usize;
    for outer in 1..=opts.max_outer {
        // reduced solve on the free set
        let free: Vec<usize> = (0..n).filter(|&i| flags[i] == ActiveFlag::Free).collect();
        let mut index = vec![usize::MAX; n];
        for (pos, &i) in free.iter().enumerate() {
            index[i] = pos;
        }
        for i in 0..n {
            x[i] = match flags[i] {
                ActiveFlag::AtLower => lo,
                ActiveFlag::AtUpper => up,
                ActiveFlag::Free => x[i],
            };
        }
        if !free.is_empty() {
            let mut triplets = Vec::new();
            let mut rhs_f = vec![0.0; free.len()];
            for (pos, &i) in free.iter().enumerate() {
                let (cols, vals) = a.row(i);
                let mut b = rhs[i];
                for (&j, &v) in cols.iter().zip(vals) {
                    if index[j] != usize::MAX {
                        triplets.push(Triplet::new(pos, index[j], v));
                    } else {
                        b -= v * x[j];
                    }
                }
                rhs_f[pos] = b;
            }
            force_sequential();
            let reduced = SparseColMat::<usize, f64>::try_new_from_triplets(
                free.len(),
                free.len(),
                &triplets,
            )
            .map_err(|e| Error::Solver(format!("reduced system build failed: {e:?}")))?;
            let lu = reduced.sp_lu().map_err(|e| {
                Error::Solver(format!(
                    "reduced LU failed with {} free nodes: {e:?}",
                    free.len()
                ))
            })?;
            let b = Mat::<f64>::from_fn(free.len(), 1, |i, _| rhs_f[i]);
            let sol = lu.solve(&b);
            solves += 1;
            for (pos, &i) in free.iter().enumerate() {
                x[i] = sol[(pos, 0)];
            }
        }

        let r = {
            let ax = a.matvec(&x);
            let mut r = vec![0.0; n];
            for i in 0..n {
                r[i] = ax[i] - rhs[i];
            }
            r
        };

        // update sets: pin primal violations, release wrong-signed actives
        let mut changed = false;
        for i in 0..n {
            match flags[i] {
                ActiveFlag::Free => {
                    if x[i] < lo {
                        flags[i] = ActiveFlag::AtLower;
                        changed = true;
                    } else if x[i] > up {
                        flags[i] = ActiveFlag::AtUpper;
                        changed = true;
                    }
                }
                ActiveFlag::AtLower => {
                    if r[i] < -tol {
                        flags[i] = ActiveFlag::Free;
                        changed = true;
                    }
                }
                ActiveFlag::AtUpper => {
                    if r[i] > tol {
                        flags[i] = ActiveFlag::Free;
                        changed = true;
                    }
                }
            }
        }

        // violation of the projected (feasible) iterate
        let feasible: Vec<f64> = x.iter().map(|&v| v.clamp(lo, up)).collect();
        let r_feasible = {
            let ax = a.matvec(&feasible);
            let mut r = vec![0.0; n];
            for i in 0..n {
                r[i] = ax[i] - rhs[i];
            }
            r
        };
        let feasible_flags: Vec<ActiveFlag> = feasible
            .iter()
            .map(|&v| {
                if v <= lo {
                    ActiveFlag::AtLower
                } else if v >= up {
                    ActiveFlag::AtUpper
                } else {
                    ActiveFlag::Free
                }
            })
            .collect();
        history.push(violation(&r_feasible, &feasible_flags));

        if !changed {
            // converged: project and report
            let comp = history.last().copied().unwrap_or(0.0);
            if comp > 10.0 * tol {
                return Err(Error::Solver(format!(
                    "active-set solve stalled: complementarity {comp:.3e} above tolerance {tol:.3e}"
                )));
            }
            let active_lower = feasible_flags
                .iter()
                .filter(|f| **f == ActiveFlag::AtLower)
                .count();
            let active_upper = feasible_flags
                .iter()
                .filter(|f| **f == ActiveFlag::AtUpper)
                .count();
            let res = residual_norm(a, &feasible, rhs);
            return Ok((
                feasible,
                ViReport {
                    linear: LinearSolveReport {
                        method: "reduced-space-active-set",
                        residual_norm: res,
                        iterations: solves,
                        wall_time: start.elapsed(),
                    },
                    outer_iterations: outer,
                    flags: feasible_flags,
                    active_lower,
                    active_upper,
                    complementarity: comp,
                    violation_history: history,
                    tolerance: tol,
                },
            ));
        }
    }

    let nl = flags.iter().filter(|f| **f == ActiveFlag::AtLower).count();
    let nu = flags.iter().filter(|f| **f == ActiveFlag::AtUpper).count();
    Err(Error::Solver(format!(
        "active-set method did not converge in {} outer iterations (last sets: {nl} at lower, {nu} at upper)",
        opts.max_outer
    )))
}

/// Dual norm `sqrt(r^T N^{-1} r)` with respect to an SPD norm matrix.
pub fn dual_norm(norm_matrix: &SparseOperator, r: &[f64]) -> Result<f64> {
    let y = lu_solve(norm_matrix, r)?;
    let v: f64 = r.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    Ok(v.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_to_sparse(m: &[Vec<f64>]) -> SparseOperator {
        let n = m.len();
        let mut triplets = Vec::new();
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        SparseOperator::from_triplets(n, &triplets)
    }

    #[test]
    fn identity_system() {
        let eye = dense_to_sparse(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let (x, report) = solve_supg(&eye, &[1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-14);
        assert_eq!(x[1], 0.0);
        assert!(report.residual_norm <= 1e-14);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn two_by_two_hand_solvable() {
        let a = dense_to_sparse(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (x, _) = solve_supg(&a, &[3.0, 3.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(x[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn singular_matrix_reports_failure() {
        let a = dense_to_sparse(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(solve_supg(&a, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn vi_inactive_constraints_match_unconstrained() {
        let a = dense_to_sparse(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let rhs = [3.0, 3.0];
        let (xu, _) = solve_supg(&a, &rhs).unwrap();
        let (xc, report) = solve_vi(&a, &rhs, BoundSet::up_to(5.0), &ViOptions::default()).unwrap();
        for (u, c) in xu.iter().zip(xc.iter()) {
            assert_relative_eq!(u, c, max_relative = 1e-10);
        }
        assert_eq!(report.active_lower + report.active_upper, 0);
    }

    #[test]
    fn vi_single_node_clamps() {
        // a x = b with a > 0, b < 0: unconstrained optimum is negative, so
        // the lower bound activates and the residual is -b >= 0.
        let a = dense_to_sparse(&[vec![3.0]]);
        let (x, report) =
            solve_vi(&a, &[-6.0], BoundSet::nonnegative(), &ViOptions::default()).unwrap();
        assert_eq!(x[0], 0.0);
        assert_eq!(report.flags[0], ActiveFlag::AtLower);
        // r = A x - b = 6 >= 0
        assert!(report.complementarity <= report.tolerance * 10.0);
    }

    /// Projected Gauss-Seidel reference, run to a tight tolerance.
    fn pgs_reference(a: &[Vec<f64>], rhs: &[f64], lo: f64, up: f64, iters: usize) -> Vec<f64> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        for _ in 0..iters {
            for i in 0..n {
                let mut acc = rhs[i];
                for j in 0..n {
                    if j != i {
                        acc -= a[i][j] * x[j];
                    }
                }
                x[i] = (acc / a[i][i]).clamp(lo, up);
            }
        }
        x
    }

    fn random_dominant(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        // strictly diagonally dominant nonsymmetric matrix: coercive, and
        // projected Gauss-Seidel converges on it
        let mut m = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j {
                    m[i][j] = rng.random_range(-1.0..1.0);
                    off += m[i][j].abs();
                }
            }
            m[i][i] = off + rng.random_range(0.5..1.5);
        }
        m
    }

    #[test]
    fn vi_matches_projected_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..5 {
            let n = 20;
            let dense = random_dominant(n, &mut rng);
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lo = 0.0;
            let up = if case % 2 == 0 { 0.8 } else { f64::INFINITY };
            let a = dense_to_sparse(&dense);
            let (x, report) = solve_vi(
                &a,
                &rhs,
                BoundSet {
                    lower: lo,
                    upper: up,
                },
                &ViOptions::default(),
            )
            .unwrap();
            let oracle = pgs_reference(&dense, &rhs, lo, up, 20_000);
            for i in 0..n {
                assert!(
                    (x[i] - oracle[i]).abs() <= 1e-8 * (1.0 + oracle[i].abs()),
                    "case {case} node {i}: {} vs oracle {}",
                    x[i],
                    oracle[i]
                );
                assert!(x[i] >= lo && x[i] <= up);
            }
            assert!(report.complementarity <= report.tolerance);
        }
    }

    #[test]
    fn vi_matches_exhaustive_active_set_enumeration() {
        // 6-node problem: enumerate all 3^6 lower/upper/free assignments,
        // solve each candidate subsystem densely, keep the ones satisfying
        // feasibility and complementarity signs.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 6;
        let dense = random_dominant(n, &mut rng);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lo = 0.0;
        let up = 0.6;

        let solve_dense = |rows: &Vec<Vec<f64>>, b: &Vec<f64>| -> Option<Vec<f64>> {
            // Gaussian elimination with partial pivoting
            let m = b.len();
            let mut aug: Vec<Vec<f64>> = rows
                .iter()
                .zip(b.iter())
                .map(|(r, &bi)| {
                    let mut row = r.clone();
                    row.push(bi);
                    row
                })
                .collect();
            for col in 0..m {
                let piv = (col..m)
                    .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())?;
                if aug[piv][col].abs() < 1e-12 {
                    return None;
                }
                aug.swap(col, piv);
                for row in col + 1..m {
                    let f = aug[row][col] / aug[col][col];
                    for k in col..=m {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
            let mut x = vec![0.0; m];
            for row in (0..m).rev() {
                let mut acc = aug[row][m];
                for k in row + 1..m {
                    acc -= aug[row][k] * x[k];
                }
                x[row] = acc / aug[row][row];
            }
            Some(x)
        };

        let mut best: Option<Vec<f64>> = None;
        for mask in 0..3usize.pow(n as u32) {
            let mut assign = Vec::with_capacity(n);
            let mut m = mask;
            for _ in 0..n {
                assign.push(m % 3); // 0 free, 1 lower, 2 upper
                m /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| assign[i] == 0).collect();
            let mut x = vec![0.0; n];
            for i in 0..n {
                x[i] = match assign[i] {
                    1 => lo,
                    2 => up,
                    _ => 0.0,
                };
            }
            if !free.is_empty() {
                let rows: Vec<Vec<f64>> = free
                    .iter()
                    .map(|&i| free.iter().map(|&j| dense[i][j]).collect())
                    .collect();
                let b: Vec<f64> = free
                    .iter()
                    .map(|&i| {
                        let mut acc = rhs[i];
                        for j in 0..n {
                            if assign[j] != 0 {
                                acc -= dense[i][j] * x[j];
                            }
                        }
                        acc
                    })
                    .collect();
                let Some(sol) = solve_dense(&rows, &b) else {
                    continue;
                };
                for (pos, &i) in free.iter().enumerate() {
                    x[i] = sol[pos];
                }
            }
            // check candidate optimality
            let mut ok = true;
            for (i, &ai) in assign.iter().enumerate() {
                let r: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum::<f64>() - rhs[i];
                match ai {
                    0 => ok &= x[i] >= lo - 1e-10 && x[i] <= up + 1e-10 && r.abs() <= 1e-9,
                    1 => ok &= r >= -1e-9,
                    _ => ok &= r <= 1e-9,
                }
            }
            if ok {
                best = Some(x);
                break;
            }
        }
        let oracle = best.expect("enumeration found no optimal active set");

        let a = dense_to_sparse(&dense);
        let (x, _) = solve_vi(
            &a,
            &rhs,
            BoundSet {
                lower: lo,
                upper: up,
            },
            &ViOptions::default(),
        )
        .unwrap();
        for i in 0..n {
            assert!(
                (x[i] - oracle[i]).abs() <= 1e-7 * (1.0 + oracle[i].abs()),
                "node {i}: {} vs enumerated {}",
                x[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn vi_result_independent_of_warm_start_bias() {
        // same system solved with both finite and infinite upper bound where
        // the upper bound never activates must agree
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = random_dominant(12, &mut rng);
        let rhs: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
        let a = dense_to_sparse(&dense);
        let (x1, _) = solve_vi(&a, &rhs, BoundSet::nonnegative(), &ViOptions::default()).unwrap();
        let (x2, _) = solve_vi(
            &a,
            &rhs,
            BoundSet {
                lower: 0.0,
                upper: 1e12,
            },
            &ViOptions::default(),
        )
        .unwrap();
        for (u, v) in x1.iter().zip(x2.iter()) {
            assert_relative_eq!(u, v, max_relative = 1e-9);
        }
    }
}
