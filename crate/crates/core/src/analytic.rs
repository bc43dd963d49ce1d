//! Closed-form pristine-Bragg-peak benchmark: Gaussian inflow spectrum, the
//! exact characteristic solution of the zero-diffusion transport problem in
//! a homogeneous medium, and the dose it induces. Used as the verification
//! oracle for convergence and consistency checks.

use crate::error::{Error, Result};
use crate::materials::BraggKleeman;

/// Gaussian energy spectrum `g(E) = Phi C exp(-(E - E0)^2 / (2 delta^2 E0^2))`
/// normalised so its integral over the energy interval equals `Phi`.
#[derive(Debug, Clone)]
pub struct GaussianSpectrum {
    /// Nominal beam energy, MeV.
    pub e0: f64,
    /// Relative energy spread.
    pub delta: f64,
    /// Total fluence, protons/cm^2.
    pub total_fluence: f64,
    /// Normalisation constant fixed by the integral condition.
    pub normalization: f64,
    pub energy_interval: [f64; 2],
}

impl GaussianSpectrum {
    pub fn new(e0: f64, delta: f64, total_fluence: f64, energy_interval: [f64; 2]) -> Result<Self> {
        if !(e0 > 0.0) || !(delta > 0.0) || !(total_fluence > 0.0) {
            return Err(Error::Domain(format!(
                "spectrum parameters must be positive: E0 = {e0}, delta = {delta}, Phi = {total_fluence}"
            )));
        }
        let [lo, hi] = energy_interval;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Domain(format!("bad energy interval [{lo}, {hi}]")));
        }
        let sigma = delta * e0;
        let mass = simpson(
            |e| (-((e - e0) / sigma).powi(2) / 2.0).exp(),
            lo,
            hi,
            1 << 14,
        );
        if !(mass > 0.0) {
            return Err(Error::Domain(
                "spectrum mass underflows on this interval".into(),
            ));
        }
        Ok(Self {
            e0,
            delta,
            total_fluence,
            normalization: 1.0 / mass,
            energy_interval,
        })
    }

    /// Benchmark spectrum: E0 = 62 MeV, delta = 0.01, 1.21e9 protons/cm^2.
    pub fn benchmark(energy_interval: [f64; 2]) -> Self {
        Self::new(62.0, 0.01, 1.21e9, energy_interval).expect("benchmark spectrum")
    }

    pub fn value(&self, energy: f64) -> f64 {
        let sigma = self.delta * self.e0;
        self.total_fluence
            * self.normalization
            * (-((energy - self.e0) / sigma).powi(2) / 2.0).exp()
    }

    fn value_derivative(&self, energy: f64) -> f64 {
        let sigma = self.delta * self.e0;
        self.value(energy) * (-(energy - self.e0) / (sigma * sigma))
    }

    /// Peak value `Phi C`, attained at `E0` (the benchmark keeps `E0` well
    /// inside the interval).
    pub fn sup(&self) -> f64 {
        let [lo, hi] = self.energy_interval;
        self.value(self.e0.clamp(lo, hi))
    }
}

/// Exact fluence of the zero-diffusion problem in a homogeneous medium:
/// protons entering at `omega . x = 0` with spectrum `g` slow down along the
/// characteristic `E -> (E^p + omega . x / alpha)^(1/p)`.
#[derive(Debug, Clone)]
pub struct ExactFluence {
    pub spectrum: GaussianSpectrum,
    pub material: BraggKleeman,
    /// Beam direction, spatial components only.
    pub omega: Vec<f64>,
}

impl ExactFluence {
    pub fn new(spectrum: GaussianSpectrum, material: BraggKleeman, omega: Vec<f64>) -> Self {
        Self {
            spectrum,
            material,
            omega,
        }
    }

    /// Depth at which a proton of the nominal energy stops.
    pub fn range(&self) -> f64 {
        self.material.range(self.spectrum.e0)
    }

    fn depth(&self, point: &[f64]) -> f64 {
        self.omega
            .iter()
            .zip(point.iter())
            .map(|(w, x)| w * x)
            .sum()
    }

    /// Shifted energy argument `A = E^p + omega . x / alpha`.
    pub fn shifted(&self, point: &[f64]) -> f64 {
        let energy = point[point.len() - 1];
        energy.powf(self.material.p) + self.depth(point) / self.material.alpha
    }

    /// Fluence at `point = (x..., E)`. Returns 0 once the shifted energy
    /// argument leaves the positive axis (the proton has already stopped).
    pub fn value(&self, point: &[f64]) -> f64 {
        let energy = point[point.len() - 1];
        if energy <= 0.0 {
            return 0.0;
        }
        let a = self.shifted(point);
        if a <= 0.0 {
            return 0.0;
        }
        let p = self.material.p;
        a.powf((1.0 - p) / p) * self.spectrum.value(a.powf(1.0 / p)) * energy.powf(p - 1.0)
    }

    /// Analytic gradient `(d/dx..., d/dE)` of the fluence. Differentiated in
    /// closed form; agreement with central differences is covered by tests.
    pub fn gradient(&self, point: &[f64]) -> Vec<f64> {
        let n = point.len();
        let energy = point[n - 1];
        let mut grad = vec![0.0; n];
        if energy <= 0.0 {
            return grad;
        }
        let a = self.shifted(point);
        if a <= 0.0 {
            return grad;
        }
        let p = self.material.p;
        let alpha = self.material.alpha;
        let e_shift = a.powf(1.0 / p);
        let g = self.spectrum.value(e_shift);
        let dg = self.spectrum.value_derivative(e_shift);
        // psi = F(A) E^(p-1) with F(A) = A^((1-p)/p) g(A^(1/p))
        let f_val = a.powf((1.0 - p) / p) * g;
        let f_prime =
            (1.0 - p) / p * a.powf((1.0 - 2.0 * p) / p) * g + a.powf(2.0 * (1.0 - p) / p) * dg / p;
        let e_pm1 = energy.powf(p - 1.0);
        for i in 0..n - 1 {
            grad[i] = f_prime * (self.omega[i] / alpha) * e_pm1;
        }
        grad[n - 1] =
            f_prime * p * energy.powf(p - 1.0) * e_pm1 + f_val * (p - 1.0) * energy.powf(p - 2.0);
        grad
    }

    /// Exact absorbed dose at a spatial point: energy integral of
    /// `S(E) psi(x, E) / rho` by composite Simpson quadrature.
    pub fn dose(&self, spatial_point: &[f64]) -> f64 {
        let [lo, hi] = self.spectrum.energy_interval;
        let rho = self.material.rho;
        let mut point = spatial_point.to_vec();
        point.push(0.0);
        let n = point.len();
        simpson(
            |e| {
                let mut x = point.clone();
                x[n - 1] = e;
                self.material.s(e) * self.value(&x) / rho
            },
            lo,
            hi,
            1 << 14,
        )
    }
}

/// Composite Simpson rule with `n` (rounded up to even) intervals.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n.is_multiple_of(2) { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        sum += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// Composite trapezoid rule with `n` intervals (used by oracle checks).
#[allow(dead_code)]
pub(crate) fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = 0.5 * (f(a) + f(b));
    for i in 1..n {
        sum += f(a + h * i as f64);
    }
    sum * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn benchmark() -> ExactFluence {
        ExactFluence::new(
            GaussianSpectrum::benchmark([1.0, 70.0]),
            BraggKleeman::water_bortfeld(),
            vec![1.0],
        )
    }

    #[test]
    fn spectrum_peak_and_sigma_points() {
        let spectrum = GaussianSpectrum::benchmark([1.0, 70.0]);
        let peak = spectrum.total_fluence * spectrum.normalization;
        assert_relative_eq!(spectrum.value(62.0), peak, max_relative = 1e-14);
        let sigma = 0.01 * 62.0;
        assert_relative_eq!(
            spectrum.value(62.0 + sigma),
            peak * (-0.5f64).exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            spectrum.value(62.0 - sigma),
            peak * (-0.5f64).exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(spectrum.sup(), peak, max_relative = 1e-14);
    }

    #[test]
    fn spectrum_normalisation_against_trapezoid_oracle() {
        let spectrum = GaussianSpectrum::benchmark([1.0, 70.0]);
        let integral = trapezoid(|e| spectrum.value(e), 1.0, 70.0, 10_000);
        assert_relative_eq!(integral, 1.21e9, max_relative = 1e-6);
    }

    #[test]
    fn fluence_collapses_to_spectrum_at_zero_depth() {
        let ex = benchmark();
        for e in [1.0, 20.0, 55.0, 62.0, 69.9] {
            assert_relative_eq!(
                ex.value(&[0.0, e]),
                ex.spectrum.value(e),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn fluence_dies_beyond_range() {
        let ex = benchmark();
        let r = ex.range();
        assert_relative_eq!(r, 2.2e-3 * 62f64.powf(1.77), max_relative = 1e-14);
        assert!((3.2..3.4).contains(&r));
        let peak = ex.spectrum.sup();
        // margin past the nominal range covers the spectrum spread
        let sigma_range = ex.material.alpha
            * ex.material.p
            * ex.spectrum.e0.powf(ex.material.p - 1.0)
            * (ex.spectrum.delta * ex.spectrum.e0);
        let margin = 5.6 * sigma_range;
        for i in 0..40 {
            let z = r + margin + (4.0 - r - margin) * i as f64 / 39.0;
            for j in 0..40 {
                let e = 1.0 + 69.0 * j as f64 / 39.0;
                assert!(
                    ex.value(&[z, e]) < 1e-6 * peak,
                    "fluence too large at z = {z}, E = {e}"
                );
            }
        }
    }

    #[test]
    fn shifted_energy_matches_characteristic_ode() {
        // Trace dE/dz = -S(E) backwards from (z, 20 MeV) to the inflow plane
        // and compare with the closed-form shifted energy.
        let ex = benchmark();
        let mat = ex.material;
        for &z in &[0.5, 1.0, 2.0, 3.0] {
            let mut e = 20.0f64;
            let dz: f64 = 1e-4;
            let steps = (z / dz).round() as usize;
            for _ in 0..steps {
                // RK4 on dE/ds = +S(E), s measuring distance back upstream
                let k1 = mat.s(e);
                let k2 = mat.s(e + 0.5 * dz * k1);
                let k3 = mat.s(e + 0.5 * dz * k2);
                let k4 = mat.s(e + dz * k3);
                e += dz / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            let closed_form = (20.0f64.powf(mat.p) + z / mat.alpha).powf(1.0 / mat.p);
            assert_relative_eq!(e, closed_form, max_relative = 1e-6);
            // and the fluence value is the spectrum at the traced energy
            // times the compression factor
            let jac = closed_form.powf(1.0 - mat.p) * 20.0f64.powf(mat.p - 1.0);
            assert_relative_eq!(
                ex.value(&[z, 20.0]),
                ex.spectrum.value(e) * jac,
                max_relative = 1e-5
            );
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let ex = benchmark();
        // points across the active band, away from the stopping front
        let pts = [
            [0.1, 60.0],
            [1.0, 50.0],
            [2.0, 40.0],
            [3.0, 20.0],
            [2.5, 31.0],
        ];
        for p in &pts {
            let grad = ex.gradient(p);
            for axis in 0..2 {
                let h = 1e-5 * (1.0 + p[axis].abs());
                let mut hi = *p;
                let mut lo = *p;
                hi[axis] += h;
                lo[axis] -= h;
                let fd = (ex.value(&hi) - ex.value(&lo)) / (2.0 * h);
                let scale = grad.iter().map(|g| g.abs()).fold(1e-30, f64::max);
                assert!(
                    (fd - grad[axis]).abs() <= 1e-4 * scale.max(fd.abs()),
                    "axis {axis} at {p:?}: fd = {fd}, analytic = {}",
                    grad[axis]
                );
            }
        }
    }

    #[test]
    fn transport_identity_along_characteristics() {
        // omega . grad_x psi - d/dE (S psi) = 0, checked by central
        // differences; the residual decays at first order or better under
        // step halving.
        let ex = benchmark();
        let mat = ex.material;
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rand01 = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut checked = 0;
        while checked < 100 {
            let z = 3.4 * rand01();
            let e = 2.0 + 66.0 * rand01();
            if ex.shifted(&[z, e]) <= 0.0 || ex.value(&[z, e]) < 1e-12 * ex.spectrum.sup() {
                continue;
            }
            checked += 1;
            let resid = |step: f64| -> f64 {
                let dpsi_dz = (ex.value(&[z + step, e]) - ex.value(&[z - step, e])) / (2.0 * step);
                let s_psi = |ee: f64| mat.s(ee) * ex.value(&[z, ee]);
                let d_spsi_de = (s_psi(e + step) - s_psi(e - step)) / (2.0 * step);
                dpsi_dz - d_spsi_de
            };
            // local derivative scale for a relative comparison
            let grad = ex.gradient(&[z, e]);
            let scale = grad[0].abs() + mat.s(e) * grad[1].abs() + 1e-12 * ex.spectrum.sup();
            let r1 = resid(1e-3).abs();
            let r2 = resid(5e-4).abs();
            assert!(
                r1 <= 2e-2 * scale,
                "O(step) residual too large: {r1} vs scale {scale}"
            );
            // first-order decay, with an absolute floor near roundoff
            assert!(r2 <= 0.75 * r1 + 1e-9 * scale, "no decay: {r1} -> {r2}");
        }
    }

    #[test]
    fn dose_peaks_near_range_and_scales_with_density() {
        let ex = benchmark();
        let r = ex.range();
        let mut best_z = 0.0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..400 {
            let z = 4.0 * i as f64 / 399.0;
            let d = ex.dose(&[z]);
            if d > best {
                best = d;
                best_z = z;
            }
        }
        assert!(
            best_z >= 0.9 * r && best_z <= r,
            "dose peak at {best_z}, range {r}"
        );
        // past the range the dose vanishes
        let tail = ex.dose(&[3.8]);
        assert!(tail < 1e-6 * best);
        // dose is linear in 1 / rho
        let mut dense = benchmark();
        dense.material.rho *= 2.0;
        assert_relative_eq!(
            dense.dose(&[2.0]),
            ex.dose(&[2.0]) / 2.0,
            max_relative = 1e-12
        );
    }
}
