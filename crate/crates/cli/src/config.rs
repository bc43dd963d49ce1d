//! Scenario configuration: a single TOML document describing the domain,
//! mesh, medium, beam, solver, dose and adaptivity options. Validation
//! collects every violated field instead of stopping at the first.

use serde::{Deserialize, Serialize};

use protonfem::materials::{BraggKleeman, Layer, MaterialField};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub domain: DomainConfig,
    pub mesh: MeshConfig,
    pub material: MaterialConfig,
    #[serde(default)]
    pub scatter: ScatterConfig,
    pub beam: BeamConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dose: DoseConfig,
    #[serde(default)]
    pub adaptivity: AdaptivityConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Per-axis spatial interval, cm; one or two axes.
    pub spatial_extent: Vec<[f64; 2]>,
    /// `[E_min, E_max]`, MeV.
    pub energy_interval: [f64; 2],
    /// Unit beam direction with one component per spatial axis.
    pub beam_direction: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Cells per axis, spatial axes first, energy last.
    pub resolution: Vec<usize>,
    /// Move grid lines onto material interfaces (default on).
    #[serde(default = "default_true")]
    pub snap_to_interfaces: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    /// Named preset: water | muscle | bone | lung | water-bortfeld.
    #[serde(default)]
    pub preset: Option<String>,
    /// Explicit layers along the beam depth; overrides `preset`.
    #[serde(default)]
    pub layers: Option<Vec<LayerConfig>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub start: f64,
    pub end: f64,
    pub alpha: f64,
    pub p: f64,
    pub rho: f64,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterConfig {
    /// Transverse diffusion coefficient; exclusive with `g_hg`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Scattering anisotropy in [0, 1); mapped to `eps = (1 - g) / 2`.
    #[serde(default)]
    pub g_hg: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    /// Nominal energy, MeV.
    pub e0: f64,
    /// Relative energy spread.
    pub delta: f64,
    /// Total fluence, protons/cm^2.
    pub total_fluence: f64,
    /// Transverse beam profile; requires two spatial dimensions.
    #[serde(default)]
    pub lateral: Option<LateralConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateralConfig {
    /// Beam axis position, one entry per spatial axis.
    pub center: Vec<f64>,
    /// Gaussian width of the transverse profile, cm.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Constant volume source (0 for the physical scenarios).
    #[serde(default)]
    pub constant: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self { constant: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// `supg` or `vi`.
    #[serde(default = "default_solver")]
    pub kind: String,
    #[serde(default = "default_vi_max_outer")]
    pub vi_max_outer: usize,
    /// Complementarity tolerance as a multiple of `|rhs|_inf`.
    #[serde(default = "default_vi_tolerance")]
    pub vi_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: default_solver(),
            vi_max_outer: default_vi_max_outer(),
            vi_tolerance: default_vi_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseConfig {
    /// Dose grid resolution over the spatial extent (empty disables dose).
    #[serde(default)]
    pub grid: Vec<usize>,
    /// Projections to emit: galerkin | element | vi.
    #[serde(default = "default_projections")]
    pub projections: Vec<String>,
    /// Uniform energy-quadrature intervals; 0 uses the mesh energy lines.
    #[serde(default)]
    pub energy_nodes: usize,
}

impl Default for DoseConfig {
    fn default() -> Self {
        Self {
            grid: Vec::new(),
            projections: default_projections(),
            energy_nodes: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptivityConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_max_levels")]
    pub max_levels: usize,
}

impl Default for AdaptivityConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            theta: default_theta(),
            max_levels: default_max_levels(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_solver() -> String {
    "supg".to_string()
}
fn default_vi_max_outer() -> usize {
    200
}
fn default_vi_tolerance() -> f64 {
    1e-8
}
fn default_projections() -> Vec<String> {
    vec!["galerkin".into(), "element".into(), "vi".into()]
}
fn default_theta() -> f64 {
    0.01
}
fn default_max_levels() -> usize {
    4
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// Collects every violated field; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let sd = self.domain.spatial_extent.len();
        if !(1..=2).contains(&sd) {
            errs.push(format!("domain.spatial_extent: need 1 or 2 axes, got {sd}"));
        }
        for (i, ext) in self.domain.spatial_extent.iter().enumerate() {
            if !(ext[1] > ext[0]) {
                errs.push(format!(
                    "domain.spatial_extent[{i}]: empty interval [{}, {}]",
                    ext[0], ext[1]
                ));
            }
        }
        let [emin, emax] = self.domain.energy_interval;
        if !(emin > 0.0 && emin < emax) {
            errs.push(format!(
                "domain.energy_interval: need 0 < E_min < E_max, got [{emin}, {emax}]"
            ));
        }
        if self.domain.beam_direction.len() != sd {
            errs.push(format!(
                "domain.beam_direction: {} components for {sd} spatial axes",
                self.domain.beam_direction.len()
            ));
        } else {
            let norm: f64 = self
                .domain
                .beam_direction
                .iter()
                .map(|w| w * w)
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                errs.push(format!(
                    "domain.beam_direction: |omega| = {norm}, must be 1"
                ));
            }
        }
        if self.mesh.resolution.len() != sd + 1 {
            errs.push(format!(
                "mesh.resolution: {} entries for a {}-dimensional mesh",
                self.mesh.resolution.len(),
                sd + 1
            ));
        }
        if self.mesh.resolution.contains(&0) {
            errs.push("mesh.resolution: every axis needs at least one cell".into());
        }
        if self.material.preset.is_none() && self.material.layers.is_none() {
            errs.push("material: either a preset or explicit layers is required".into());
        }
        if let Some(name) = &self.material.preset {
            if material_preset(name).is_none() {
                errs.push(format!("material.preset: unknown preset '{name}'"));
            }
        }
        if let Some(layers) = &self.material.layers {
            for (i, l) in layers.iter().enumerate() {
                if !(l.end > l.start) {
                    errs.push(format!("material.layers[{i}]: empty interval"));
                }
                if !(l.alpha > 0.0) || !(1.0..=2.0).contains(&l.p) || !(l.rho > 0.0) {
                    errs.push(format!(
                        "material.layers[{i}]: need alpha > 0, p in [1,2], rho > 0"
                    ));
                }
            }
        }
        match (self.scatter.epsilon, self.scatter.g_hg) {
            (Some(_), Some(_)) => {
                errs.push("scatter: epsilon and g_hg are mutually exclusive".into())
            }
            (Some(e), None) if e < 0.0 => {
                errs.push(format!("scatter.epsilon: must be >= 0, got {e}"))
            }
            (None, Some(g)) if !(0.0..1.0).contains(&g) => {
                errs.push(format!("scatter.g_hg: must lie in [0, 1), got {g}"))
            }
            _ => {}
        }
        if sd == 1 && self.effective_epsilon().map(|e| e > 0.0).unwrap_or(false) {
            errs.push("scatter: one spatial dimension forces epsilon = 0".into());
        }
        if !(self.beam.e0 > 0.0) {
            errs.push(format!("beam.e0: must be positive, got {}", self.beam.e0));
        }
        if !(self.beam.delta > 0.0) {
            errs.push(format!(
                "beam.delta: must be positive, got {}",
                self.beam.delta
            ));
        }
        if !(self.beam.total_fluence > 0.0) {
            errs.push(format!(
                "beam.total_fluence: must be positive, got {}",
                self.beam.total_fluence
            ));
        }
        if let Some(lateral) = &self.beam.lateral {
            if sd != 2 {
                errs.push("beam.lateral: requires two spatial dimensions".into());
            }
            if lateral.center.len() != sd {
                errs.push(format!(
                    "beam.lateral.center: {} entries for {sd} spatial axes",
                    lateral.center.len()
                ));
            }
            if !(lateral.sigma > 0.0) {
                errs.push(format!(
                    "beam.lateral.sigma: must be positive, got {}",
                    lateral.sigma
                ));
            }
        }
        if !matches!(self.solver.kind.as_str(), "supg" | "vi") {
            errs.push(format!(
                "solver.kind: 'supg' or 'vi', got '{}'",
                self.solver.kind
            ));
        }
        if self.solver.vi_max_outer == 0 {
            errs.push("solver.vi_max_outer: must be positive".into());
        }
        if !(self.solver.vi_tolerance > 0.0) {
            errs.push("solver.vi_tolerance: must be positive".into());
        }
        if !self.dose.grid.is_empty() && self.dose.grid.len() != sd {
            errs.push(format!(
                "dose.grid: {} entries for {sd} spatial axes",
                self.dose.grid.len()
            ));
        }
        for p in &self.dose.projections {
            if !matches!(p.as_str(), "galerkin" | "element" | "vi") {
                errs.push(format!("dose.projections: unknown projection '{p}'"));
            }
        }
        if !(self.adaptivity.theta > 0.0 && self.adaptivity.theta <= 1.0) {
            errs.push(format!(
                "adaptivity.theta: must lie in (0, 1], got {}",
                self.adaptivity.theta
            ));
        }
        if self.adaptivity.enabled && sd != 1 {
            errs.push("adaptivity: refinement loops require a 2D space-energy mesh".into());
        }
        errs
    }

    pub fn effective_epsilon(&self) -> Result<f64, String> {
        match (self.scatter.epsilon, self.scatter.g_hg) {
            (Some(e), None) => Ok(e),
            (None, Some(g)) => protonfem::materials::epsilon_from_hg(g).map_err(|e| e.to_string()),
            (None, None) => Ok(0.0),
            (Some(_), Some(_)) => Err("epsilon and g_hg are mutually exclusive".into()),
        }
    }

    /// Materials of this scenario as a core field.
    pub fn material_field(&self) -> Result<MaterialField, String> {
        let omega = self.domain.beam_direction.clone();
        let depth = self.depth_extent();
        if let Some(layers) = &self.material.layers {
            let ls: Vec<Layer> = layers
                .iter()
                .map(|l| Layer {
                    start: l.start,
                    end: l.end,
                    material: BraggKleeman {
                        alpha: l.alpha,
                        p: l.p,
                        rho: l.rho,
                    },
                    name: if l.name.is_empty() {
                        "layer".into()
                    } else {
                        l.name.clone()
                    },
                })
                .collect();
            return MaterialField::layered(omega, ls).map_err(|e| e.to_string());
        }
        let preset = self.material.preset.as_deref().unwrap_or("water");
        let mat = material_preset(preset).ok_or_else(|| format!("unknown preset {preset}"))?;
        MaterialField::uniform(omega, depth, mat).map_err(|e| e.to_string())
    }

    /// Depth interval spanned by the domain along the beam direction.
    pub fn depth_extent(&self) -> [f64; 2] {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (w, ext) in self
            .domain
            .beam_direction
            .iter()
            .zip(&self.domain.spatial_extent)
        {
            let (a, b) = (w * ext[0], w * ext[1]);
            lo += a.min(b);
            hi += a.max(b);
        }
        [lo, hi]
    }
}

pub fn material_preset(name: &str) -> Option<BraggKleeman> {
    match name {
        "water" => Some(BraggKleeman::water()),
        "muscle" => Some(BraggKleeman::muscle()),
        "bone" => Some(BraggKleeman::bone()),
        "lung" => Some(BraggKleeman::lung()),
        "water-bortfeld" => Some(BraggKleeman::water_bortfeld()),
        _ => None,
    }
}

/// Built-in scenarios.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let benchmark_domain = DomainConfig {
        spatial_extent: vec![[0.0, 4.0]],
        energy_interval: [1.0, 70.0],
        beam_direction: vec![1.0],
    };
    let benchmark_beam = BeamConfig {
        e0: 62.0,
        delta: 0.01,
        total_fluence: 1.21e9,
        lateral: None,
    };
    match name {
        "example1-supg" => Some(ScenarioConfig {
            name: name.into(),
            domain: benchmark_domain,
            mesh: MeshConfig {
                resolution: vec![64, 64],
                snap_to_interfaces: true,
            },
            material: MaterialConfig {
                preset: Some("water-bortfeld".into()),
                layers: None,
            },
            scatter: ScatterConfig::default(),
            beam: benchmark_beam,
            source: SourceConfig::default(),
            solver: SolverConfig {
                kind: "supg".into(),
                ..Default::default()
            },
            dose: DoseConfig {
                grid: vec![128],
                ..Default::default()
            },
            adaptivity: AdaptivityConfig::default(),
        }),
        "example1-vi" => Some(ScenarioConfig {
            name: name.into(),
            domain: benchmark_domain,
            mesh: MeshConfig {
                resolution: vec![64, 64],
                snap_to_interfaces: true,
            },
            material: MaterialConfig {
                preset: Some("water-bortfeld".into()),
                layers: None,
            },
            scatter: ScatterConfig::default(),
            beam: benchmark_beam,
            source: SourceConfig::default(),
            solver: SolverConfig {
                kind: "vi".into(),
                ..Default::default()
            },
            dose: DoseConfig {
                grid: vec![128],
                ..Default::default()
            },
            adaptivity: AdaptivityConfig::default(),
        }),
        "example2-adaptive" => Some(ScenarioConfig {
            name: name.into(),
            domain: benchmark_domain,
            mesh: MeshConfig {
                resolution: vec![32, 32],
                snap_to_interfaces: true,
            },
            material: MaterialConfig {
                preset: Some("water-bortfeld".into()),
                layers: None,
            },
            scatter: ScatterConfig::default(),
            beam: benchmark_beam,
            source: SourceConfig::default(),
            solver: SolverConfig {
                kind: "vi".into(),
                ..Default::default()
            },
            dose: DoseConfig {
                grid: vec![128],
                ..Default::default()
            },
            adaptivity: AdaptivityConfig {
                enabled: true,
                theta: 0.01,
                max_levels: 4,
            },
        }),
        "example3-scatter" => Some(ScenarioConfig {
            name: name.into(),
            domain: DomainConfig {
                spatial_extent: vec![[0.0, 2.0], [0.0, 4.0]],
                energy_interval: [1.0, 70.0],
                beam_direction: vec![0.0, 1.0],
            },
            mesh: MeshConfig {
                resolution: vec![20, 20, 20],
                snap_to_interfaces: true,
            },
            material: MaterialConfig {
                preset: Some("water-bortfeld".into()),
                layers: None,
            },
            scatter: ScatterConfig {
                epsilon: None,
                g_hg: Some(0.98),
            },
            beam: BeamConfig {
                e0: 62.0,
                delta: 0.01,
                total_fluence: 1.21e9,
                lateral: Some(LateralConfig {
                    center: vec![1.0, 0.0],
                    sigma: 0.2,
                }),
            },
            source: SourceConfig::default(),
            solver: SolverConfig {
                kind: "supg".into(),
                ..Default::default()
            },
            dose: DoseConfig {
                grid: vec![32, 48],
                ..Default::default()
            },
            adaptivity: AdaptivityConfig::default(),
        }),
        "example4-orbital" => Some(ScenarioConfig {
            name: name.into(),
            domain: DomainConfig {
                spatial_extent: vec![[0.0, 5.0]],
                energy_interval: [1.0, 70.0],
                beam_direction: vec![1.0],
            },
            mesh: MeshConfig {
                resolution: vec![320, 128],
                snap_to_interfaces: true,
            },
            material: MaterialConfig {
                preset: None,
                layers: Some(vec![
                    LayerConfig {
                        start: 0.0,
                        end: 0.6,
                        alpha: 0.0021,
                        p: 1.75,
                        rho: 1.04,
                        name: "eyelid".into(),
                    },
                    LayerConfig {
                        start: 0.6,
                        end: 0.9,
                        alpha: 0.0011,
                        p: 1.77,
                        rho: 1.85,
                        name: "orbital-bone".into(),
                    },
                    LayerConfig {
                        start: 0.9,
                        end: 2.7,
                        alpha: 0.0033,
                        p: 1.74,
                        rho: 0.3,
                        name: "orbital-fat".into(),
                    },
                    LayerConfig {
                        start: 2.7,
                        end: 3.7,
                        alpha: 0.00246,
                        p: 1.75,
                        rho: 1.0,
                        name: "tumour".into(),
                    },
                    LayerConfig {
                        start: 3.7,
                        end: 4.1,
                        alpha: 0.00246,
                        p: 1.75,
                        rho: 1.0,
                        name: "post-tumour".into(),
                    },
                    LayerConfig {
                        start: 4.1,
                        end: 4.4,
                        alpha: 0.0011,
                        p: 1.77,
                        rho: 1.85,
                        name: "skull".into(),
                    },
                    LayerConfig {
                        start: 4.4,
                        end: 5.0,
                        alpha: 0.0021,
                        p: 1.75,
                        rho: 1.04,
                        name: "deep-tissue".into(),
                    },
                ]),
            },
            scatter: ScatterConfig::default(),
            // beam tuned so the stopping depth sits mid-tumour
            beam: BeamConfig {
                e0: 64.0,
                delta: 0.01,
                total_fluence: 1.21e9,
                lateral: None,
            },
            source: SourceConfig::default(),
            solver: SolverConfig {
                kind: "vi".into(),
                ..Default::default()
            },
            dose: DoseConfig {
                grid: vec![400],
                projections: vec!["element".into(), "vi".into()],
                ..Default::default()
            },
            adaptivity: AdaptivityConfig::default(),
        }),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &[
        "example1-supg",
        "example1-vi",
        "example2-adaptive",
        "example3-scatter",
        "example4-orbital",
    ]
}
