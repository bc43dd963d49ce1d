//! Stopping-power models and spatially layered media.
//!
//! The stopping power follows the power law `S(E) = E^(1-p) / (alpha p)`
//! with per-medium parameters `(alpha, p)` and mass density `rho`. Layered
//! media are described along the beam axis: a position is mapped to a depth
//! by projection onto the beam direction and looked up in an ordered list of
//! depth intervals.

use crate::error::{Error, Result};

/// Power-law stopping-power medium: `S(E) = E^(1-p) / (alpha p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BraggKleeman {
    /// Range coefficient, cm * MeV^-p.
    pub alpha: f64,
    /// Range exponent, dimensionless, in [1, 2].
    pub p: f64,
    /// Mass density, g/cm^3.
    pub rho: f64,
}

impl BraggKleeman {
    pub fn new(alpha: f64, p: f64, rho: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::Domain(format!("p must lie in [1, 2], got {p}")));
        }
        if !(rho > 0.0) {
            return Err(Error::Domain(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { alpha, p, rho })
    }

    /// Water, range-energy fit (p = 1.75, alpha = 0.00246).
    pub fn water() -> Self {
        Self {
            alpha: 0.00246,
            p: 1.75,
            rho: 1.0,
        }
    }

    /// Muscle (p = 1.75, alpha = 0.0021).
    pub fn muscle() -> Self {
        Self {
            alpha: 0.0021,
            p: 1.75,
            rho: 1.04,
        }
    }

    /// Bone (p = 1.77, alpha = 0.0011).
    pub fn bone() -> Self {
        Self {
            alpha: 0.0011,
            p: 1.77,
            rho: 1.85,
        }
    }

    /// Lung (p = 1.74, alpha = 0.0033).
    pub fn lung() -> Self {
        Self {
            alpha: 0.0033,
            p: 1.74,
            rho: 0.3,
        }
    }

    /// Water with the Bortfeld fit (alpha = 2.2e-3, p = 1.77), used by the
    /// pristine Bragg-peak benchmark.
    pub fn water_bortfeld() -> Self {
        Self {
            alpha: 2.2e-3,
            p: 1.77,
            rho: 1.0,
        }
    }

    /// Stopping power `S(E) = E^(1-p) / (alpha p)` in MeV/cm. `E` must be
    /// positive.
    pub fn stopping_power(&self, energy: f64) -> Result<f64> {
        if !(energy > 0.0) {
            return Err(Error::Domain(format!(
                "stopping power requires E > 0, got {energy}"
            )));
        }
        Ok(energy.powf(1.0 - self.p) / (self.alpha * self.p))
    }

    /// Derivative `S'(E) = (1-p) E^-p / (alpha p)`, nonpositive for p >= 1.
    pub fn stopping_power_derivative(&self, energy: f64) -> Result<f64> {
        if !(energy > 0.0) {
            return Err(Error::Domain(format!(
                "stopping power derivative requires E > 0, got {energy}"
            )));
        }
        Ok((1.0 - self.p) * energy.powf(-self.p) / (self.alpha * self.p))
    }

    /// `mu(E) = -S'(E) >= 0`, the dissipation coefficient at energy `E`.
    pub fn mu(&self, energy: f64) -> Result<f64> {
        Ok(-self.stopping_power_derivative(energy)?)
    }

    /// Unchecked stopping power, for hot loops where E > 0 is guaranteed by
    /// mesh construction.
    #[inline]
    pub(crate) fn s(&self, energy: f64) -> f64 {
        energy.powf(1.0 - self.p) / (self.alpha * self.p)
    }

    /// Unchecked derivative of the stopping power.
    #[inline]
    pub(crate) fn s_prime(&self, energy: f64) -> f64 {
        (1.0 - self.p) * energy.powf(-self.p) / (self.alpha * self.p)
    }

    /// Depth at which a proton of initial energy `e0` stops: `R = alpha e0^p`.
    pub fn range(&self, e0: f64) -> f64 {
        self.alpha * e0.powf(self.p)
    }
}

/// Maps a forward-peaked scattering anisotropy `g` in [0, 1) to the
/// transverse diffusion coefficient `eps = (1 - g) / 2`.
pub fn epsilon_from_hg(g_hg: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&g_hg) {
        return Err(Error::Domain(format!(
            "anisotropy must lie in [0, 1), got {g_hg}"
        )));
    }
    Ok(0.5 * (1.0 - g_hg))
}

/// Transverse (angular) diffusion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterModel {
    /// Diffusion coefficient, dimensionless, >= 0.
    pub epsilon: f64,
    /// Anisotropy the coefficient was derived from, if any.
    pub g_hg: Option<f64>,
}

impl ScatterModel {
    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        Ok(Self {
            epsilon,
            g_hg: None,
        })
    }

    pub fn from_anisotropy(g_hg: f64) -> Result<Self> {
        Ok(Self {
            epsilon: epsilon_from_hg(g_hg)?,
            g_hg: Some(g_hg),
        })
    }

    pub fn none() -> Self {
        Self {
            epsilon: 0.0,
            g_hg: None,
        }
    }
}

/// One homogeneous slab of a layered medium.
#[derive(Debug, Clone)]
pub struct Layer {
    /// Depth interval `[start, end)` along the beam axis, cm. The interface
    /// itself belongs to the deeper layer.
    pub start: f64,
    pub end: f64,
    pub material: BraggKleeman,
    pub name: String,
}

/// Piecewise-constant medium along the beam depth. Lookup projects a spatial
/// position onto the beam direction.
#[derive(Debug, Clone)]
pub struct MaterialField {
    omega: Vec<f64>,
    layers: Vec<Layer>,
}

impl MaterialField {
    /// A single medium spanning the depth interval covered by the domain.
    pub fn uniform(
        omega: Vec<f64>,
        depth_extent: [f64; 2],
        material: BraggKleeman,
    ) -> Result<Self> {
        Self::layered(
            omega,
            vec![Layer {
                start: depth_extent[0],
                end: depth_extent[1],
                material,
                name: "uniform".to_string(),
            }],
        )
    }

    /// Ordered layers. Intervals must partition the depth extent with no
    /// gaps or overlaps.
    pub fn layered(omega: Vec<f64>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain(
                "material field needs at least one layer".into(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            if !(layer.end > layer.start) {
                return Err(Error::Domain(format!(
                    "layer {i} ({}) has empty interval [{}, {}]",
                    layer.name, layer.start, layer.end
                )));
            }
            if i > 0 {
                let prev = &layers[i - 1];
                if (layer.start - prev.end).abs() > 1e-12 * (1.0 + layer.end.abs()) {
                    return Err(Error::Domain(format!(
                        "layers {} and {} do not meet: {} vs {}",
                        prev.name, layer.name, prev.end, layer.start
                    )));
                }
            }
        }
        Ok(Self { omega, layers })
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth_extent(&self) -> [f64; 2] {
        [self.layers[0].start, self.layers[self.layers.len() - 1].end]
    }

    /// Interface depths strictly inside the depth extent.
    pub fn interior_interfaces(&self) -> Vec<f64> {
        self.layers.iter().skip(1).map(|l| l.start).collect()
    }

    /// Layer lookup by depth. Interfaces belong to the deeper layer; the far
    /// end of the last layer belongs to that layer. A small tolerance admits
    /// facet quadrature points sitting on the extent boundary.
    pub fn at_depth(&self, depth: f64) -> Result<&BraggKleeman> {
        let [lo, hi] = self.depth_extent();
        let tol = 1e-10 * (1.0 + hi.abs().max(lo.abs()));
        if depth < lo - tol || depth > hi + tol {
            return Err(Error::Domain(format!(
                "depth {depth} outside layered extent [{lo}, {hi}]"
            )));
        }
        let d = depth.clamp(lo, hi);
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            if d < layer.end || last {
                return Ok(&layer.material);
            }
        }
        unreachable!()
    }

    /// Layer lookup by spatial position (projection onto the beam direction).
    pub fn material_at(&self, position: &[f64]) -> Result<&BraggKleeman> {
        let depth: f64 = self
            .omega
            .iter()
            .zip(position.iter())
            .map(|(w, x)| w * x)
            .sum();
        self.at_depth(depth)
    }

    /// Dissipation floor used as the L2 weight of the energy norm: half the
    /// smallest `-S'(E_max)` over all layers. The factor one half matches the
    /// exact identity behind the coercivity bound, and taking the minimum
    /// over layers and the top of the energy interval makes the bound hold
    /// pointwise. Rejects media with p = 1, where the floor degenerates.
    pub fn coercivity_mu(&self, e_max: f64) -> Result<f64> {
        let mut mu = f64::INFINITY;
        for layer in &self.layers {
            mu = mu.min(0.5 * layer.material.mu(e_max)?);
        }
        if !(mu > 0.0) {
            return Err(Error::Config(
                "energy-norm weight mu is not positive (p = 1 media are rejected)".into(),
            ));
        }
        Ok(mu)
    }
}
