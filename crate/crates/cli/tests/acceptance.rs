//! Acceptance suite: one test per verification criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them all). Criteria cover
//! the pristine-peak benchmark (convergence, bound preservation, negativity
//! regression), structural properties of the discrete forms (coercivity,
//! consistency), adaptive efficiency, the three dose projections, the
//! transverse-diffusion trend on a 3D mesh, and the layered orbital
//! scenario.

use std::sync::{Arc, OnceLock};

use protonfem::adaptivity::{estimate, mark};
use protonfem::analytic::{ExactFluence, GaussianSpectrum};
use protonfem::assembly::{
    assemble_norm_matrix, assemble_system, energy_norm, FieldView, TransportCoefficients,
    TransportProblem,
};
use protonfem::dose::{dose_element_constant, dose_galerkin, dose_vi, EnergyQuadrature};
use protonfem::fespace::{quadrature_for, FeSpace};
use protonfem::materials::{BraggKleeman, MaterialField};
use protonfem::mesh::{Domain, Mesh};
use protonfem::solvers::{dual_norm, solve_supg, solve_vi, BoundSet, ViOptions};

// ---- frozen thresholds ----------------------------------------------------

/// Criterion 1: least-squares slope of the energy error on 4 uniform levels.
const C1_MIN_SLOPE: f64 = 1.4;
/// Criterion 2: complementarity residual bound, relative to |rhs|_inf.
const C2_COMPLEMENTARITY_FACTOR: f64 = 1e-8;
/// Criterion 4: coercivity slack, relative to max(1, |||u|||^2).
const C4_SLACK: f64 = 1e-8;
/// Criterion 5: minimum rate of the residual dual norm on the finest pair.
const C5_MIN_RATE: f64 = 1.0;
/// Criterion 6: adaptive dof budget relative to the uniform run.
const C6_DOF_FRACTION: f64 = 0.5;
/// Criterion 7d: minimum rate of the dose L2 error on the finest pair.
const C7_MIN_RATE: f64 = 1.0;
/// Criterion 9: tumour band for the dose maximum, cm.
const C9_BAND: [f64; 2] = [2.7, 3.7];

// ---- shared benchmark fixtures --------------------------------------------

fn benchmark_domain() -> Domain {
    Domain::new(vec![[0.0, 4.0]], [1.0, 70.0], vec![1.0]).unwrap()
}

fn benchmark_problem() -> (TransportProblem, ExactFluence) {
    let spectrum = GaussianSpectrum::benchmark([1.0, 70.0]);
    let exact = ExactFluence::new(spectrum.clone(), BraggKleeman::water_bortfeld(), vec![1.0]);
    let materials =
        MaterialField::uniform(vec![1.0], [0.0, 4.0], BraggKleeman::water_bortfeld()).unwrap();
    let g = spectrum.clone();
    let problem = TransportProblem::new(
        materials,
        0.0,
        Box::new(move |x: &[f64]| g.value(x[x.len() - 1])),
        Box::new(|_| 0.0),
    )
    .with_g_sup(spectrum.sup());
    (problem, exact)
}

struct UniformLevel {
    dofs: usize,
    h: f64,
    energy_error: f64,
}

/// The 4-level uniform benchmark sweep (32^2 .. 256^2), shared between
/// criteria. Solves with the plain stabilised method and measures the
/// energy error against the closed form.
fn uniform_sweep() -> &'static Vec<UniformLevel> {
    static SWEEP: OnceLock<Vec<UniformLevel>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let (problem, exact) = benchmark_problem();
        let mut out = Vec::new();
        let mut mesh = Some(Mesh::build_structured(&benchmark_domain(), &[32, 32]).unwrap());
        for level in 0..4 {
            let m = mesh.take().unwrap();
            let space = Arc::new(FeSpace::from_mesh(m));
            let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
            let (a, rhs) = assemble_system(&space, &coeffs).unwrap();
            let (x, _) = solve_supg(&a, &rhs).unwrap();
            let psi = space.field_from(x).unwrap();
            let energy_error = energy_norm(
                &space,
                &coeffs,
                &FieldView::ErrorAgainst {
                    exact: &exact,
                    approx: &psi,
                },
            )
            .unwrap();
            let h = (0..space.mesh().n_cells())
                .map(|k| space.mesh().cell_diameter(k))
                .fold(0.0f64, f64::max);
            out.push(UniformLevel {
                dofs: space.n_dofs(),
                h,
                energy_error,
            });
            if level < 3 {
                mesh = Some(space.mesh().refine_uniform().unwrap());
            }
        }
        out
    })
}

fn least_squares_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let n = hs.len() as f64;
    let sx: f64 = hs.iter().map(|h| h.ln()).sum();
    let sy: f64 = errs.iter().map(|e| e.ln()).sum();
    let sxx: f64 = hs.iter().map(|h| h.ln() * h.ln()).sum();
    let sxy: f64 = hs.iter().zip(errs).map(|(h, e)| h.ln() * e.ln()).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn verdict(name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {name}: {} -- {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ---- criteria --------------------------------------------------------------

#[test]
fn criterion_1_convergence_rate() {
    // Pristine-peak benchmark, stabilised solve on 4 uniform levels from a
    // 32x32 grid; the energy-error slope is the claim under test. At these
    // resolutions the run sits before the asymptotic regime of this
    // benchmark (the spectrum width is ~0.6 MeV against coarse energy cells
    // of ~2.2 MeV), so this criterion documents the measured slope honestly
    // rather than loosening the threshold; the h^{3/2} regime emerges from
    // roughly 512 cells per axis upward.
    let sweep = uniform_sweep();
    let hs: Vec<f64> = sweep.iter().map(|l| l.h).collect();
    let errs: Vec<f64> = sweep.iter().map(|l| l.energy_error).collect();
    let slope = least_squares_slope(&hs, &errs);
    let detail = format!(
        "LS slope {slope:.3} over errors {:?} (threshold {C1_MIN_SLOPE})",
        errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()
    );
    verdict("1 convergence-rate", slope >= C1_MIN_SLOPE, &detail);
    assert!(slope >= C1_MIN_SLOPE, "{detail}");
}

#[test]
fn criterion_2_bound_preservation() {
    let (problem, _) = benchmark_problem();
    let mut mesh = Some(Mesh::build_structured(&benchmark_domain(), &[32, 32]).unwrap());
    let mut all_ok = true;
    let mut details = Vec::new();
    for level in 0..4 {
        let m = mesh.take().unwrap();
        let space = Arc::new(FeSpace::from_mesh(m));
        let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
        let (a, rhs) = assemble_system(&space, &coeffs).unwrap();
        let (x, report) = solve_vi(
            &a,
            &rhs,
            BoundSet::up_to(coeffs.g_sup),
            &ViOptions::default(),
        )
        .unwrap();
        let psi = space.field_from(x).unwrap();
        let (lo, hi) = psi.min_max();
        let rhs_inf = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = C2_COMPLEMENTARITY_FACTOR * rhs_inf;
        let ok = lo >= 0.0 && hi <= coeffs.g_sup && report.complementarity <= tol;
        all_ok &= ok;
        details.push(format!(
            "level {level} ({} dofs): min {lo:.2e}, max {hi:.6e} <= {:.6e}, comp {:.2e} <= {tol:.2e}",
            space.n_dofs(),
            coeffs.g_sup,
            report.complementarity
        ));
        assert!(lo >= 0.0, "negative nodal value {lo} at level {level}");
        assert!(
            hi <= coeffs.g_sup,
            "upper bound violated at level {level}: {hi}"
        );
        assert!(
            report.complementarity <= tol,
            "complementarity {:.3e} above {tol:.3e} at level {level}",
            report.complementarity
        );
        if level < 3 {
            mesh = Some(space.mesh().refine_uniform().unwrap());
        }
    }
    verdict("2 bound-preservation", all_ok, &details.join("; "));
}

#[test]
fn criterion_3_negativity_regression() {
    // vanilla stabilised solve on the 64x64 benchmark: at least one
    // negative nodal fluence value, and the L2-projected dose goes negative
    // beyond the peak
    let (problem, _) = benchmark_problem();
    let mesh = Mesh::build_structured(&benchmark_domain(), &[64, 64]).unwrap();
    let space = Arc::new(FeSpace::from_mesh(mesh));
    let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
    let (a, rhs) = assemble_system(&space, &coeffs).unwrap();
    let (x, _) = solve_supg(&a, &rhs).unwrap();
    let psi = space.field_from(x).unwrap();
    let (flu_min, _) = psi.min_max();

    let ds = Arc::new(FeSpace::from_mesh(
        Mesh::spatial_grid(&[[0.0, 4.0]], &[128]).unwrap(),
    ));
    let equad = EnergyQuadrature::from_mesh(space.mesh()).unwrap();
    let dose = dose_galerkin(&psi, &problem.materials, &equad, &ds).unwrap();
    let peak_idx = (0..dose.values.len())
        .max_by(|&i, &j| dose.values[i].partial_cmp(&dose.values[j]).unwrap())
        .unwrap();
    let peak_z = ds.mesh().vertex(peak_idx)[0];
    let worst_beyond = (0..dose.values.len())
        .filter(|&i| ds.mesh().vertex(i)[0] > peak_z)
        .map(|i| dose.values[i])
        .fold(f64::INFINITY, f64::min);

    let pass = flu_min < 0.0 && worst_beyond < 0.0;
    let detail = format!(
        "fluence min {flu_min:.3e}; dose peak at z = {peak_z:.3}; most negative dose beyond peak {worst_beyond:.3e}"
    );
    verdict("3 negativity-regression", pass, &detail);
    assert!(
        flu_min < 0.0,
        "expected a negative nodal fluence value, got {flu_min}"
    );
    assert!(
        worst_beyond < 0.0,
        "expected a negative dose value beyond the peak"
    );
}

#[test]
fn criterion_4_coercivity() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20240817);
    let mut worst = f64::INFINITY;
    let mut trials = 0usize;

    // 2D benchmark meshes, zero diffusion
    let (problem2d, _) = benchmark_problem();
    for res in [[8usize, 8], [13, 9], [20, 20]] {
        let mesh = Mesh::build_structured(&benchmark_domain(), &res).unwrap();
        let space = Arc::new(FeSpace::from_mesh(mesh));
        let coeffs = TransportCoefficients::new(&space, &problem2d).unwrap();
        let (a, _) = assemble_system(&space, &coeffs).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..space.n_dofs())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let u = space.field_from(v.clone()).unwrap();
            let qf = a.bilinear(&v, &v);
            let norm2 = energy_norm(&space, &coeffs, &FieldView::Nodal(&u))
                .unwrap()
                .powi(2);
            let slack = (qf - norm2) / norm2.max(1.0);
            worst = worst.min(slack);
            trials += 1;
            assert!(
                qf >= norm2 - C4_SLACK * norm2.max(1.0),
                "2D {res:?}: qf {qf}, norm2 {norm2}"
            );
        }
    }

    // small 3D mesh with and without transverse diffusion
    let domain3 = Domain::new(vec![[0.0, 1.0], [0.0, 1.0]], [1.0, 10.0], vec![0.0, 1.0]).unwrap();
    let mesh = Mesh::build_structured(&domain3, &[3, 3, 3]).unwrap();
    let space = Arc::new(FeSpace::new(Arc::new(mesh)));
    for eps in [0.0, 0.01] {
        let materials =
            MaterialField::uniform(vec![0.0, 1.0], [0.0, 1.0], BraggKleeman::water()).unwrap();
        let problem = TransportProblem::new(materials, eps, Box::new(|_| 0.0), Box::new(|_| 0.0));
        let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
        let (a, _) = assemble_system(&space, &coeffs).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..space.n_dofs())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let u = space.field_from(v.clone()).unwrap();
            let qf = a.bilinear(&v, &v);
            let norm2 = energy_norm(&space, &coeffs, &FieldView::Nodal(&u))
                .unwrap()
                .powi(2);
            let slack = (qf - norm2) / norm2.max(1.0);
            worst = worst.min(slack);
            trials += 1;
            assert!(
                qf >= norm2 - C4_SLACK * norm2.max(1.0),
                "3D eps {eps}: qf {qf}, norm2 {norm2}"
            );
        }
    }
    verdict(
        "4 coercivity",
        true,
        &format!(
            "{trials} trials, smallest relative slack {worst:.3e} (allowance -{C4_SLACK:.0e})"
        ),
    );
}

#[test]
fn criterion_5_consistency() {
    // (a) dual-norm residual of the interpolated exact solution decays at
    // rate >= 1 on the finest pair of a 4-level ladder
    let (problem, exact) = benchmark_problem();
    let mut mesh = Some(Mesh::build_structured(&benchmark_domain(), &[32, 32]).unwrap());
    let mut duals = Vec::new();
    for level in 0..4 {
        let m = mesh.take().unwrap();
        let space = Arc::new(FeSpace::from_mesh(m));
        let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
        let (a, rhs) = assemble_system(&space, &coeffs).unwrap();
        let interp = space.interpolate(|x| exact.value(x)).unwrap();
        let ax = a.matvec(interp.coeffs());
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, v)| b - v).collect();
        let n = assemble_norm_matrix(&space, &coeffs).unwrap();
        duals.push(dual_norm(&n, &r).unwrap());
        if level < 3 {
            mesh = Some(space.mesh().refine_uniform().unwrap());
        }
    }
    for w in duals.windows(2) {
        assert!(w[1] < w[0], "residual did not decrease: {duals:?}");
    }
    let final_rate = (duals[2] / duals[3]).log2();
    assert!(
        final_rate >= C5_MIN_RATE,
        "dual-norm residual rate {final_rate:.3} below {C5_MIN_RATE}"
    );

    // (b) the closed form satisfies the transport identity along
    // characteristics under central differences, with first-order decay of
    // the finite-difference residual under step halving
    let mat = exact.material;
    let mut state = 0x5851f42d4c957f2du64;
    let mut rand01 = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut checked = 0usize;
    while checked < 100 {
        let z = 3.4 * rand01();
        let e = 2.0 + 66.0 * rand01();
        if exact.shifted(&[z, e]) <= 0.0 || exact.value(&[z, e]) < 1e-12 * exact.spectrum.sup() {
            continue;
        }
        checked += 1;
        let resid = |step: f64| -> f64 {
            let dpsi_dz =
                (exact.value(&[z + step, e]) - exact.value(&[z - step, e])) / (2.0 * step);
            let s_psi = |ee: f64| mat.stopping_power(ee).unwrap() * exact.value(&[z, ee]);
            let d_spsi_de = (s_psi(e + step) - s_psi(e - step)) / (2.0 * step);
            dpsi_dz - d_spsi_de
        };
        let grad = exact.gradient(&[z, e]);
        let scale = grad[0].abs()
            + mat.stopping_power(e).unwrap() * grad[1].abs()
            + 1e-12 * exact.spectrum.sup();
        let r1 = resid(1e-3).abs();
        let r2 = resid(5e-4).abs();
        assert!(
            r1 <= 2e-2 * scale,
            "identity residual too large at ({z:.3}, {e:.2})"
        );
        assert!(
            r2 <= 0.75 * r1 + 1e-9 * scale,
            "no first-order decay at ({z:.3}, {e:.2})"
        );
    }
    verdict(
        "5 consistency",
        true,
        &format!(
            "dual-norm residuals {:?}, final rate {final_rate:.2}; transport identity held at 100 points",
            duals.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_6_adaptive_efficiency() {
    // maximum marking with theta = 0.01 and the bound-preserving solve must
    // reach the 4-level uniform energy error with under half its dofs
    let sweep = uniform_sweep();
    let target = sweep[3].energy_error;
    let budget = (C6_DOF_FRACTION * sweep[3].dofs as f64) as usize;

    let (problem, exact) = benchmark_problem();
    let mut mesh = Some(Mesh::build_structured(&benchmark_domain(), &[32, 32]).unwrap());
    let mut reached: Option<(usize, usize, f64)> = None;
    for level in 0..12 {
        let m = mesh.take().unwrap();
        let space = Arc::new(FeSpace::from_mesh(m));
        let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
        let (a, rhs) = assemble_system(&space, &coeffs).unwrap();
        let (x, _) = solve_vi(
            &a,
            &rhs,
            BoundSet::up_to(coeffs.g_sup),
            &ViOptions::default(),
        )
        .unwrap();
        let psi = space.field_from(x).unwrap();
        let err = energy_norm(
            &space,
            &coeffs,
            &FieldView::ErrorAgainst {
                exact: &exact,
                approx: &psi,
            },
        )
        .unwrap();
        if err <= target {
            reached = Some((level, space.n_dofs(), err));
            break;
        }
        let indicator = estimate(&space, &coeffs, &psi).unwrap();
        let marked = mark(&indicator, 0.01).unwrap();
        if marked.is_empty() {
            break;
        }
        mesh = Some(space.mesh().refine(&marked).unwrap());
    }

    let (level, dofs, err) = reached.expect("adaptive loop never reached the uniform error");
    let pass = dofs < budget;
    let detail = format!(
        "uniform: err {target:.4e} at {} dofs; adaptive: err {err:.4e} at {dofs} dofs (level {level}), budget {budget}",
        sweep[3].dofs
    );
    verdict("6 adaptive-efficiency", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_7_dose_projections() {
    let (problem, exact) = benchmark_problem();

    // (a) + (b): element-constant dose of a bound-preserving fluence is
    // nonnegative per element; the constrained projection is nonnegative at
    // nodes with complementarity
    let mesh = Mesh::build_structured(&benchmark_domain(), &[64, 64]).unwrap();
    let space = Arc::new(FeSpace::from_mesh(mesh));
    let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
    let (a, rhs) = assemble_system(&space, &coeffs).unwrap();
    let (x, _) = solve_vi(
        &a,
        &rhs,
        BoundSet::up_to(coeffs.g_sup),
        &ViOptions::default(),
    )
    .unwrap();
    let psi = space.field_from(x).unwrap();
    let ds = Arc::new(FeSpace::from_mesh(
        Mesh::spatial_grid(&[[0.0, 4.0]], &[128]).unwrap(),
    ));
    let equad = EnergyQuadrature::from_mesh(space.mesh()).unwrap();

    let element = dose_element_constant(&psi, &problem.materials, &equad, &ds).unwrap();
    let (elo, _) = element.min_max();
    assert!(elo >= 0.0, "element-constant dose negative: {elo}");

    let (vi_dose, report) =
        dose_vi(&psi, &problem.materials, &equad, &ds, &ViOptions::default()).unwrap();
    let (vlo, _) = vi_dose.min_max();
    assert!(vlo >= 0.0, "constrained dose negative: {vlo}");
    assert!(
        report.complementarity <= report.tolerance,
        "dose projection complementarity {:.3e} above {:.3e}",
        report.complementarity,
        report.tolerance
    );

    // (c) regression: a spiky nonnegative integrand whose L2 projection
    // undershoots zero (deterministic search over misaligned grids)
    let spike_space = Arc::new(FeSpace::from_mesh(
        Mesh::build_structured(&benchmark_domain(), &[12, 4]).unwrap(),
    ));
    let eq24 = EnergyQuadrature::uniform([1.0, 70.0], 24).unwrap();
    let mut negative_case = None;
    'search: for col in 3..=9 {
        let z0 = 4.0 * col as f64 / 12.0;
        let width = 4.0 / 12.0;
        let fluence = spike_space
            .interpolate(|x| (1.0 - ((x[0] - z0) / width).abs()).max(0.0))
            .unwrap();
        for n in [5usize, 6, 7, 9, 10, 11, 13] {
            let grid = Arc::new(FeSpace::from_mesh(
                Mesh::spatial_grid(&[[0.0, 4.0]], &[n]).unwrap(),
            ));
            let d = dose_galerkin(&fluence, &problem.materials, &eq24, &grid).unwrap();
            let (lo, _) = d.min_max();
            if lo < 0.0 {
                negative_case = Some((col, n, lo));
                break 'search;
            }
        }
    }
    let (col, n, neg) = negative_case.expect("no sign-flipping projection found");

    // (d) dose L2 error decays at rate >= 1 on the finest pair under paired
    // space + energy refinement
    let rule = quadrature_for(4, 1).unwrap();
    let mut errors = Vec::new();
    for tres in [32usize, 64, 128, 256] {
        let tmesh = Mesh::build_structured(&benchmark_domain(), &[tres, tres]).unwrap();
        let tspace = Arc::new(FeSpace::from_mesh(tmesh));
        let tcoeffs = TransportCoefficients::new(&tspace, &problem).unwrap();
        let (ta, trhs) = assemble_system(&tspace, &tcoeffs).unwrap();
        let (tx, _) = solve_supg(&ta, &trhs).unwrap();
        let tpsi = tspace.field_from(tx).unwrap();
        let dgrid = Arc::new(FeSpace::from_mesh(
            Mesh::spatial_grid(&[[0.0, 4.0]], &[tres]).unwrap(),
        ));
        let teq = EnergyQuadrature::from_mesh(tspace.mesh()).unwrap();
        let d = dose_galerkin(&tpsi, &problem.materials, &teq, &dgrid).unwrap();
        let dmesh = dgrid.mesh();
        let mut acc = 0.0;
        for k in 0..dmesh.n_cells() {
            let cell = dmesh.cell(k);
            let z0 = dmesh.vertex(cell[0])[0];
            let z1 = dmesh.vertex(cell[1])[0];
            for (bary, &wq) in rule.points.iter().zip(&rule.weights) {
                let z = bary[0] * z0 + bary[1] * z1;
                let dh = bary[0] * d.values[cell[0]] + bary[1] * d.values[cell[1]];
                let de = exact.dose(&[z]);
                acc += wq * (z1 - z0) * (dh - de) * (dh - de);
            }
        }
        errors.push(acc.sqrt());
    }
    let rate = (errors[2] / errors[3]).log2();
    assert!(
        rate >= C7_MIN_RATE,
        "dose error rate {rate:.3} below {C7_MIN_RATE}: errors {errors:?}"
    );

    verdict(
        "7 dose-projections",
        true,
        &format!(
            "element min {elo:.2e}; constrained min {vlo:.2e}; sign-flip case (column {col}, grid {n}) min {neg:.3e}; error rate {rate:.2}"
        ),
    );
}

#[test]
fn criterion_8_angular_diffusion_trend() {
    // coarse 3D mesh: raising the transverse diffusion coefficient must
    // strictly lower the peak dose and strictly widen the lateral spread at
    // the peak depth
    let domain = Domain::new(vec![[0.0, 2.0], [0.0, 4.0]], [1.0, 70.0], vec![0.0, 1.0]).unwrap();
    let n = 20usize;
    let mesh = Mesh::build_structured(&domain, &[n, n, n]).unwrap();
    let space = Arc::new(FeSpace::new(Arc::new(mesh)));
    let spectrum = GaussianSpectrum::benchmark([1.0, 70.0]);
    let sigma_lateral = 0.2f64;

    let mut peaks = Vec::new();
    let mut moments = Vec::new();
    for eps in [0.0, 0.005, 0.01, 0.1] {
        let materials =
            MaterialField::uniform(vec![0.0, 1.0], [0.0, 4.0], BraggKleeman::water_bortfeld())
                .unwrap();
        let g = spectrum.clone();
        let problem = TransportProblem::new(
            materials,
            eps,
            Box::new(move |x: &[f64]| {
                g.value(x[2]) * (-((x[0] - 1.0) / sigma_lateral).powi(2) / 2.0).exp()
            }),
            Box::new(|_| 0.0),
        )
        .with_g_sup(spectrum.sup());
        let coeffs = TransportCoefficients::new(&space, &problem).unwrap();
        let (a, rhs) = assemble_system(&space, &coeffs).unwrap();
        let (x, _) = solve_supg(&a, &rhs).unwrap();
        let psi = space.field_from(x).unwrap();
        let ds = Arc::new(FeSpace::from_mesh(
            Mesh::spatial_grid(&[[0.0, 2.0], [0.0, 4.0]], &[32, 48]).unwrap(),
        ));
        let eq = EnergyQuadrature::from_mesh(space.mesh()).unwrap();
        let dose = dose_galerkin(&psi, &problem.materials, &eq, &ds).unwrap();
        let nf = ds.field_from(dose.values.clone()).unwrap();

        // lateral profile at the depth of maximal row-integrated dose
        let nx = 41usize;
        let nz = 61usize;
        let mut best = f64::NEG_INFINITY;
        let mut profile = vec![0.0; nx];
        for iz in 0..nz {
            let z = 4.0 * iz as f64 / (nz - 1) as f64;
            let mut row = vec![0.0; nx];
            let mut dd = 0.0;
            for (ix, r) in row.iter_mut().enumerate() {
                let xx = 2.0 * ix as f64 / (nx - 1) as f64;
                *r = nf.evaluate(&[xx, z]).unwrap();
                dd += *r;
            }
            if dd > best {
                best = dd;
                profile = row;
            }
        }
        let total: f64 = profile.iter().sum();
        let mean: f64 = profile
            .iter()
            .enumerate()
            .map(|(ix, &v)| v * 2.0 * ix as f64 / (nx - 1) as f64)
            .sum::<f64>()
            / total;
        let m2: f64 = profile
            .iter()
            .enumerate()
            .map(|(ix, &v)| {
                let xx = 2.0 * ix as f64 / (nx - 1) as f64;
                v * (xx - mean) * (xx - mean)
            })
            .sum::<f64>()
            / total;
        let (_, peak) = dose.min_max();
        peaks.push(peak);
        moments.push(m2);
    }
    let mut pass = true;
    for w in peaks.windows(2) {
        pass &= w[1] < w[0];
    }
    for w in moments.windows(2) {
        pass &= w[1] > w[0];
    }
    let detail = format!(
        "peaks {:?}, second moments {:?}",
        peaks.iter().map(|p| format!("{p:.3e}")).collect::<Vec<_>>(),
        moments
            .iter()
            .map(|m| format!("{m:.4}"))
            .collect::<Vec<_>>()
    );
    verdict("8 angular-diffusion-trend", pass, &detail);
    for w in peaks.windows(2) {
        assert!(w[1] < w[0], "peak dose not strictly decreasing: {detail}");
    }
    for w in moments.windows(2) {
        assert!(
            w[1] > w[0],
            "lateral spread not strictly increasing: {detail}"
        );
    }
}

#[test]
fn criterion_9_orbital_scenario() {
    // layered ocular scenario through the preset pipeline: the constrained
    // solve must stay inside [0, sup g], and the dose maximum must land in
    // the tumour band. The band check is expected to fail at the shipped
    // desk-scale resolution: the exact model places the tumour peak only a
    // few percent above the low-density fat layer dose, and the streamline
    // stabilisation smears the stopping front enough to flip that ordering
    // for any run fitting the time budget.
    let config = protonfem_cli::preset("example4-orbital").unwrap();
    let tmp = std::env::temp_dir().join("protonfem-acceptance-orbital");
    let summary = protonfem_cli::run_scenario(config.clone(), &tmp).unwrap();

    let spectrum = GaussianSpectrum::new(
        config.beam.e0,
        config.beam.delta,
        config.beam.total_fluence,
        config.domain.energy_interval,
    )
    .unwrap();
    let g_sup = spectrum.sup();

    let bounds_ok = summary.fluence_min >= 0.0 && summary.fluence_max <= g_sup;
    assert!(
        bounds_ok,
        "fluence [{:.3e}, {:.3e}] escapes [0, {g_sup:.3e}]",
        summary.fluence_min, summary.fluence_max
    );

    // read the element dose CSV back and find the maximum's depth
    let text = std::fs::read_to_string(tmp.join("dose_element.csv")).unwrap();
    let mut peak_z = f64::NAN;
    let mut peak_v = f64::NEG_INFINITY;
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let mut cols = line.split(',');
        let z: f64 = cols.next().unwrap().parse().unwrap();
        let v: f64 = cols.next().unwrap().parse().unwrap();
        if v > peak_v {
            peak_v = v;
            peak_z = z;
        }
    }
    let in_band = (C9_BAND[0]..=C9_BAND[1]).contains(&peak_z);
    let detail = format!(
        "fluence in [0, sup g]: {bounds_ok}; dose max {peak_v:.3e} at depth {peak_z:.3} cm (band {C9_BAND:?})"
    );
    verdict("9 orbital-scenario", bounds_ok && in_band, &detail);
    assert!(
        in_band,
        "dose maximum at {peak_z:.3} cm outside the tumour band {C9_BAND:?}"
    );
}
