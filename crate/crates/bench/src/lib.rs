//! Shared fixtures for the pipeline benchmarks.

use std::sync::Arc;

use protonfem::analytic::GaussianSpectrum;
use protonfem::assembly::TransportProblem;
use protonfem::materials::{BraggKleeman, MaterialField};
use protonfem::mesh::{Domain, Mesh};
use protonfem::FeSpace;

/// Pristine-peak benchmark pieces at the given per-axis resolution.
pub fn benchmark_fixture(res: usize) -> (Arc<FeSpace>, TransportProblem) {
    let domain = Domain::new(vec![[0.0, 4.0]], [1.0, 70.0], vec![1.0]).unwrap();
    let mesh = Mesh::build_structured(&domain, &[res, res]).unwrap();
    let space = Arc::new(FeSpace::from_mesh(mesh));
    let spectrum = GaussianSpectrum::benchmark([1.0, 70.0]);
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
    (space, problem)
}
