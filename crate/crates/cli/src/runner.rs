//! Scenario execution: lowering a config into core types, dispatching the
//! solve, and emitting the CSV artifacts and the run summary.

use std::fmt::Write as FmtWrite;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use protonfem::adaptivity::{adapt_loop, AdaptOptions, AdaptReport, SolverChoice};
use protonfem::analytic::{ExactFluence, GaussianSpectrum};
use protonfem::assembly::{
    assemble_system, energy_norm, l2_norm, FieldView, TransportCoefficients, TransportProblem,
};
use protonfem::dose::{dose_element_constant, dose_galerkin, dose_vi, DoseField, EnergyQuadrature};
use protonfem::fespace::FeSpace;
use protonfem::mesh::{Domain, Mesh};
use protonfem::solvers::{solve_supg, solve_vi, BoundSet, ViOptions};
use protonfem::NodalField;

use crate::config::ScenarioConfig;

#[derive(Debug)]
pub enum RunnerError {
    /// Invalid configuration; lists every violated field.
    Config(Vec<String>),
    Solver(String),
    Io(std::io::Error),
}

impl std::fmt::Display for RunnerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunnerError::Config(errs) => {
                writeln!(f, "configuration invalid ({} problem(s)):", errs.len())?;
                for e in errs {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            RunnerError::Solver(msg) => write!(f, "solver failure: {msg}"),
            RunnerError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for RunnerError {}

impl From<std::io::Error> for RunnerError {
    fn from(e: std::io::Error) -> Self {
        RunnerError::Io(e)
    }
}

fn solver_err(e: protonfem::Error) -> RunnerError {
    RunnerError::Solver(e.to_string())
}

pub type Result<T> = std::result::Result<T, RunnerError>;

/// Scenario lowered to core types.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub domain: Domain,
    pub problem: TransportProblem,
    pub spectrum: GaussianSpectrum,
    /// Closed-form reference, available for the homogeneous zero-diffusion
    /// benchmark configuration.
    pub oracle: Option<ExactFluence>,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Scenario> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(RunnerError::Config(violations));
        }
        let domain = Domain::new(
            config.domain.spatial_extent.clone(),
            config.domain.energy_interval,
            config.domain.beam_direction.clone(),
        )
        .map_err(|e| RunnerError::Config(vec![e.to_string()]))?;

        let spectrum = GaussianSpectrum::new(
            config.beam.e0,
            config.beam.delta,
            config.beam.total_fluence,
            config.domain.energy_interval,
        )
        .map_err(|e| RunnerError::Config(vec![e.to_string()]))?;

        let materials = config
            .material_field()
            .map_err(|e| RunnerError::Config(vec![e]))?;
        let epsilon = config
            .effective_epsilon()
            .map_err(|e| RunnerError::Config(vec![e]))?;

        let single_material = materials.layers().len() == 1;
        let oracle = if epsilon == 0.0
            && single_material
            && config.beam.lateral.is_none()
            && config.source.constant == 0.0
        {
            Some(ExactFluence::new(
                spectrum.clone(),
                materials.layers()[0].material,
                config.domain.beam_direction.clone(),
            ))
        } else {
            None
        };

        let sd = config.domain.spatial_extent.len();
        let omega = config.domain.beam_direction.clone();
        let lateral = config.beam.lateral.clone();
        let g_spectrum = spectrum.clone();
        let inflow = Box::new(move |x: &[f64]| -> f64 {
            let e = x[x.len() - 1];
            let mut g = g_spectrum.value(e);
            if let Some(lat) = &lateral {
                // transverse offset from the beam axis
                let dot: f64 = (0..sd).map(|i| omega[i] * (x[i] - lat.center[i])).sum();
                let mut r2 = 0.0;
                for i in 0..sd {
                    let t = (x[i] - lat.center[i]) - dot * omega[i];
                    r2 += t * t;
                }
                g *= (-r2 / (2.0 * lat.sigma * lat.sigma)).exp();
            }
            g
        });
        let f_const = config.source.constant;
        let source = Box::new(move |_: &[f64]| f_const);

        let problem =
            TransportProblem::new(materials, epsilon, inflow, source).with_g_sup(spectrum.sup());

        Ok(Scenario {
            config,
            domain,
            problem,
            spectrum,
            oracle,
        })
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.config.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        let interfaces: Vec<f64> = if self.config.mesh.snap_to_interfaces {
            self.problem.materials.interior_interfaces()
        } else {
            Vec::new()
        };
        Mesh::build_structured_snapped(&self.domain, &self.config.mesh.resolution, &interfaces)
            .map_err(|e| RunnerError::Config(vec![e.to_string()]))
    }

    fn vi_options(&self) -> ViOptions {
        ViOptions {
            max_outer: self.config.solver.vi_max_outer,
            tolerance_factor: self.config.solver.vi_tolerance,
        }
    }

    fn vi_bounds(&self, g_sup: f64) -> BoundSet {
        // the upper bound is only justified for source-free runs
        if self.config.source.constant == 0.0 {
            BoundSet::up_to(g_sup)
        } else {
            BoundSet::nonnegative()
        }
    }

    /// Assemble and solve on the given space; returns the fluence and a
    /// one-line solver description.
    pub fn solve_on(&self, space: &Arc<FeSpace>) -> Result<(NodalField, SolveInfo)> {
        let coeffs = TransportCoefficients::new(space, &self.problem).map_err(solver_err)?;
        let (a, rhs) = assemble_system(space, &coeffs).map_err(solver_err)?;
        match self.config.solver.kind.as_str() {
            "vi" => {
                let (x, report) =
                    solve_vi(&a, &rhs, self.vi_bounds(coeffs.g_sup), &self.vi_options())
                        .map_err(solver_err)?;
                let field = space.field_from(x).map_err(solver_err)?;
                Ok((
                    field,
                    SolveInfo {
                        method: report.linear.method.to_string(),
                        residual: report.linear.residual_norm,
                        iterations: report.outer_iterations,
                        complementarity: Some(report.complementarity),
                        wall_seconds: report.linear.wall_time.as_secs_f64(),
                    },
                ))
            }
            _ => {
                let (x, report) = solve_supg(&a, &rhs).map_err(solver_err)?;
                let field = space.field_from(x).map_err(solver_err)?;
                Ok((
                    field,
                    SolveInfo {
                        method: report.method.to_string(),
                        residual: report.residual_norm,
                        iterations: report.iterations,
                        complementarity: None,
                        wall_seconds: report.wall_time.as_secs_f64(),
                    },
                ))
            }
        }
    }

    pub fn energy_quadrature(&self, mesh: &Mesh) -> Result<EnergyQuadrature> {
        if self.config.dose.energy_nodes == 0 {
            EnergyQuadrature::from_mesh(mesh).map_err(solver_err)
        } else {
            EnergyQuadrature::uniform(
                self.config.domain.energy_interval,
                self.config.dose.energy_nodes,
            )
            .map_err(solver_err)
        }
    }

    pub fn dose_space(&self) -> Result<Option<Arc<FeSpace>>> {
        if self.config.dose.grid.is_empty() {
            return Ok(None);
        }
        let mesh = Mesh::spatial_grid(&self.config.domain.spatial_extent, &self.config.dose.grid)
            .map_err(|e| RunnerError::Config(vec![e.to_string()]))?;
        Ok(Some(Arc::new(FeSpace::from_mesh(mesh))))
    }
}

#[derive(Debug, Clone)]
pub struct SolveInfo {
    pub method: String,
    pub residual: f64,
    pub iterations: usize,
    pub complementarity: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scenario: String,
    pub hash: String,
    pub dofs: usize,
    pub solve: SolveInfo,
    pub fluence_min: f64,
    pub fluence_max: f64,
    /// (representation label, min, max) per emitted dose projection.
    pub dose_ranges: Vec<(String, f64, f64)>,
    pub manifest: Vec<PathBuf>,
    pub total_seconds: f64,
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn emit_doses(
    scenario: &Scenario,
    fluence: &NodalField,
    out_dir: &Path,
    manifest: &mut Vec<PathBuf>,
    ranges: &mut Vec<(String, f64, f64)>,
) -> Result<Vec<DoseField>> {
    let Some(ds) = scenario.dose_space()? else {
        return Ok(Vec::new());
    };
    let equad = scenario.energy_quadrature(fluence.space().mesh())?;
    let mut fields = Vec::new();
    for proj in &scenario.config.dose.projections {
        let (dose, file) = match proj.as_str() {
            "galerkin" => (
                dose_galerkin(fluence, &scenario.problem.materials, &equad, &ds)
                    .map_err(solver_err)?,
                "dose_galerkin.csv",
            ),
            "element" => (
                dose_element_constant(fluence, &scenario.problem.materials, &equad, &ds)
                    .map_err(solver_err)?,
                "dose_element.csv",
            ),
            _ => {
                let (dose, _) = dose_vi(
                    fluence,
                    &scenario.problem.materials,
                    &equad,
                    &ds,
                    &scenario.vi_options(),
                )
                .map_err(solver_err)?;
                (dose, "dose_vi.csv")
            }
        };
        let path = out_dir.join(file);
        write_file(&path, |w| dose.dump_csv(w))?;
        let (lo, hi) = dose.min_max();
        ranges.push((dose.representation.label().to_string(), lo, hi));
        manifest.push(path);
        fields.push(dose);
    }
    Ok(fields)
}

fn write_summary(out_dir: &Path, summary: &RunSummary) -> Result<PathBuf> {
    let path = out_dir.join("summary.txt");
    write_file(&path, |w| {
        writeln!(w, "scenario: {}", summary.scenario)?;
        writeln!(w, "hash: {}", summary.hash)?;
        writeln!(w, "dofs: {}", summary.dofs)?;
        writeln!(
            w,
            "solver: {} residual {:.6e} iterations {}{}",
            summary.solve.method,
            summary.solve.residual,
            summary.solve.iterations,
            summary
                .solve
                .complementarity
                .map(|c| format!(" complementarity {c:.6e}"))
                .unwrap_or_default()
        )?;
        writeln!(
            w,
            "fluence: min {:.12e} max {:.12e}",
            summary.fluence_min, summary.fluence_max
        )?;
        for (label, lo, hi) in &summary.dose_ranges {
            writeln!(w, "dose {label}: min {lo:.12e} max {hi:.12e}")?;
        }
        writeln!(
            w,
            "outputs: {}",
            summary
                .manifest
                .iter()
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join(", ")
        )?;
        writeln!(w, "timing: {:.3} s", summary.total_seconds)?;
        Ok(())
    })?;
    Ok(path)
}

/// Solve the scenario once (or run its adaptive loop when enabled) and emit
/// fluence, dose and summary artifacts. Outputs are deterministic for a
/// fixed scenario.
pub fn run_scenario(config: ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let scenario = Scenario::build(config)?;
    let mut manifest = Vec::new();

    let (fluence, info, adapt_report) = if scenario.config.adaptivity.enabled {
        let mesh = scenario.build_mesh()?;
        let opts = AdaptOptions {
            theta: scenario.config.adaptivity.theta,
            max_levels: scenario.config.adaptivity.max_levels,
            solver: if scenario.config.solver.kind == "vi" {
                SolverChoice::Vi
            } else {
                SolverChoice::Supg
            },
            vi: scenario.vi_options(),
            bounds: None,
        };
        let t0 = Instant::now();
        let (psi, report) = adapt_loop(mesh, &scenario.problem, &opts, scenario.oracle.as_ref())
            .map_err(solver_err)?;
        let info = SolveInfo {
            method: format!("{}-adaptive", scenario.config.solver.kind),
            residual: 0.0,
            iterations: report.levels.len(),
            complementarity: None,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        (psi, info, Some(report))
    } else {
        let mesh = scenario.build_mesh()?;
        let space = Arc::new(FeSpace::from_mesh(mesh));
        let (psi, info) = scenario.solve_on(&space)?;
        (psi, info, None)
    };

    let fluence_path = out_dir.join("fluence.csv");
    write_file(&fluence_path, |w| fluence.dump_csv(w))?;
    manifest.push(fluence_path);

    let mesh_path = out_dir.join("mesh.txt");
    write_file(&mesh_path, |w| fluence.space().mesh().dump_text(w))?;
    manifest.push(mesh_path);

    if let Some(report) = &adapt_report {
        let path = out_dir.join("adapt.csv");
        write_file(&path, |w| report.dump_csv(w))?;
        manifest.push(path);
    }

    let mut dose_ranges = Vec::new();
    emit_doses(
        &scenario,
        &fluence,
        out_dir,
        &mut manifest,
        &mut dose_ranges,
    )?;

    let (flo, fhi) = fluence.min_max();
    let mut summary = RunSummary {
        scenario: scenario.config.name.clone(),
        hash: scenario.hash(),
        dofs: fluence.len(),
        solve: info,
        fluence_min: flo,
        fluence_max: fhi,
        dose_ranges,
        manifest,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    let summary_path = write_summary(out_dir, &summary)?;
    summary.manifest.push(summary_path);
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub level: usize,
    pub dofs: usize,
    pub h: f64,
    pub energy_error: f64,
    pub l2_error: f64,
    /// Pairwise rate against the previous level; absent on the first row.
    pub slope: Option<f64>,
}

/// Uniform-refinement study against the closed-form reference. Requires a
/// scenario the oracle applies to (zero diffusion, single medium, no
/// lateral profile).
pub fn convergence_study(
    config: ScenarioConfig,
    levels: usize,
    out_dir: &Path,
) -> Result<(Vec<ConvergenceRow>, RunSummary)> {
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let scenario = Scenario::build(config)?;
    let Some(oracle) = scenario.oracle.clone() else {
        return Err(RunnerError::Config(vec![
            "convergence study needs the analytic reference: zero diffusion, a single medium and no lateral profile".into(),
        ]));
    };
    if levels == 0 {
        return Err(RunnerError::Config(vec!["levels: must be positive".into()]));
    }

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut mesh = Some(scenario.build_mesh()?);
    let mut last_info = None;
    for level in 0..levels {
        let m = mesh.take().unwrap();
        let space = Arc::new(FeSpace::from_mesh(m));
        let coeffs = TransportCoefficients::new(&space, &scenario.problem).map_err(solver_err)?;
        let (psi, info) = scenario.solve_on(&space)?;
        let err_view = FieldView::ErrorAgainst {
            exact: &oracle,
            approx: &psi,
        };
        let energy_error = energy_norm(&space, &coeffs, &err_view).map_err(solver_err)?;
        let l2_error = l2_norm(&space, &coeffs, &err_view).map_err(solver_err)?;
        let h = (0..space.mesh().n_cells())
            .map(|k| space.mesh().cell_diameter(k))
            .fold(0.0f64, f64::max);
        let slope = rows.last().map(|prev: &ConvergenceRow| {
            (prev.energy_error / energy_error).ln() / (prev.h / h).ln()
        });
        rows.push(ConvergenceRow {
            level,
            dofs: space.n_dofs(),
            h,
            energy_error,
            l2_error,
            slope,
        });
        last_info = Some(info);
        if level + 1 < levels {
            mesh = Some(space.mesh().refine_uniform().map_err(solver_err)?);
        }
    }

    let path = out_dir.join("convergence.csv");
    write_file(&path, |w| {
        writeln!(w, "level,dofs,energy_error,l2_error,slope")?;
        for r in &rows {
            let slope = r.slope.map(|s| format!("{s:.6}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{}",
                r.level, r.dofs, r.energy_error, r.l2_error, slope
            )?;
        }
        Ok(())
    })?;

    let last = rows.last().unwrap();
    let summary = RunSummary {
        scenario: scenario.config.name.clone(),
        hash: scenario.hash(),
        dofs: last.dofs,
        solve: last_info.unwrap(),
        fluence_min: 0.0,
        fluence_max: 0.0,
        dose_ranges: Vec::new(),
        manifest: vec![path],
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((rows, summary))
}

/// Adaptive loop entry point: runs solve-estimate-mark-refine and emits the
/// per-level report plus the final fluence.
pub fn adapt_scenario(config: ScenarioConfig, out_dir: &Path) -> Result<(AdaptReport, RunSummary)> {
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let mut config = config;
    config.adaptivity.enabled = true;
    let scenario = Scenario::build(config)?;
    let mesh = scenario.build_mesh()?;
    let opts = AdaptOptions {
        theta: scenario.config.adaptivity.theta,
        max_levels: scenario.config.adaptivity.max_levels,
        solver: if scenario.config.solver.kind == "vi" {
            SolverChoice::Vi
        } else {
            SolverChoice::Supg
        },
        vi: scenario.vi_options(),
        bounds: None,
    };
    let t0 = Instant::now();
    let (psi, report) =
        adapt_loop(mesh, &scenario.problem, &opts, scenario.oracle.as_ref()).map_err(solver_err)?;
    let solve_seconds = t0.elapsed().as_secs_f64();

    let mut manifest = Vec::new();
    let report_path = out_dir.join("adapt.csv");
    write_file(&report_path, |w| report.dump_csv(w))?;
    manifest.push(report_path);
    let fluence_path = out_dir.join("fluence.csv");
    write_file(&fluence_path, |w| psi.dump_csv(w))?;
    manifest.push(fluence_path);

    let mut dose_ranges = Vec::new();
    emit_doses(&scenario, &psi, out_dir, &mut manifest, &mut dose_ranges)?;

    let (flo, fhi) = psi.min_max();
    let mut summary = RunSummary {
        scenario: scenario.config.name.clone(),
        hash: scenario.hash(),
        dofs: psi.len(),
        solve: SolveInfo {
            method: format!("{}-adaptive", scenario.config.solver.kind),
            residual: 0.0,
            iterations: report.levels.len(),
            complementarity: None,
            wall_seconds: solve_seconds,
        },
        fluence_min: flo,
        fluence_max: fhi,
        dose_ranges,
        manifest,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    let summary_path = write_summary(out_dir, &summary)?;
    summary.manifest.push(summary_path);
    Ok((report, summary))
}

/// Dose-focused run: solve once, then emit every configured projection.
pub fn dose_scenario(config: ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    let mut config = config;
    if config.dose.grid.is_empty() {
        return Err(RunnerError::Config(vec![
            "dose.grid: a dose grid is required for the dose command".into(),
        ]));
    }
    config.adaptivity.enabled = false;
    run_scenario(config, out_dir)
}
