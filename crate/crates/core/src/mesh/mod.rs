//! Simplicial meshes of the space-energy box `Omega_x x [E_min, E_max]`.
//!
//! Coordinates list the spatial axes first and energy last, in raw units
//! (cm for space, MeV for energy); cell diameters are Euclidean in these
//! mixed coordinates. Boundary facets are classified into inflow, outflow
//! and transverse sets from the beam direction and the energy-axis normal.
//! Meshes are immutable; refinement produces a new mesh with parent links,
//! and boundary tags are recomputed from scratch each time.

mod locate;
mod refine;
mod structured;

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub use locate::CellLocator;

/// Space-energy box with a fixed beam direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    /// Number of spatial axes, 1 or 2.
    pub spatial_dim: usize,
    /// Per-axis spatial interval, cm.
    pub spatial_extent: Vec<[f64; 2]>,
    /// `[E_min, E_max]`, MeV, with `E_min > 0`.
    pub energy_interval: [f64; 2],
    /// Unit beam direction, `spatial_dim` components.
    pub beam_direction: Vec<f64>,
}

impl Domain {
    pub fn new(
        spatial_extent: Vec<[f64; 2]>,
        energy_interval: [f64; 2],
        beam_direction: Vec<f64>,
    ) -> Result<Self> {
        let spatial_dim = spatial_extent.len();
        if !(1..=2).contains(&spatial_dim) {
            return Err(Error::InvalidDomain(format!(
                "spatial dimension must be 1 or 2, got {spatial_dim}"
            )));
        }
        for (axis, ext) in spatial_extent.iter().enumerate() {
            if !(ext[1] > ext[0]) {
                return Err(Error::InvalidDomain(format!(
                    "spatial axis {axis} has empty extent [{}, {}]",
                    ext[0], ext[1]
                )));
            }
        }
        let [e_min, e_max] = energy_interval;
        if !(e_min > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "E_min must be positive, got {e_min}"
            )));
        }
        if !(e_min < e_max) {
            return Err(Error::InvalidDomain(format!(
                "energy interval [{e_min}, {e_max}] is empty"
            )));
        }
        if beam_direction.len() != spatial_dim {
            return Err(Error::InvalidDomain(format!(
                "beam direction has {} components, expected {spatial_dim}",
                beam_direction.len()
            )));
        }
        let norm: f64 = beam_direction.iter().map(|w| w * w).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDomain(format!(
                "beam direction must be a unit vector, |omega| = {norm}"
            )));
        }
        Ok(Self {
            spatial_dim,
            spatial_extent,
            energy_interval,
            beam_direction,
        })
    }

    /// Total mesh dimension: spatial axes plus energy.
    pub fn total_dim(&self) -> usize {
        self.spatial_dim + 1
    }

    /// Per-axis intervals in mesh order (spatial axes, then energy).
    pub fn axis_intervals(&self) -> Vec<[f64; 2]> {
        let mut out = self.spatial_extent.clone();
        out.push(self.energy_interval);
        out
    }

    /// Euclidean diameter of the box in mixed coordinates.
    pub fn diameter(&self) -> f64 {
        self.axis_intervals()
            .iter()
            .map(|iv| (iv[1] - iv[0]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Boundary facet classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetTag {
    /// Characteristic field points inward: spatial inflow or the E_max face.
    Inflow,
    /// Characteristic field points outward: spatial outflow or the E_min face.
    Outflow,
    /// Spatial side with `omega . n_x = 0`; receives no boundary integral.
    Transverse,
}

/// One boundary facet with its adjacency and outward geometry.
#[derive(Debug, Clone)]
pub struct BoundaryFacet {
    /// Facet vertex indices (dim of them), in adjacent-cell order.
    pub vertices: Vec<usize>,
    /// Adjacent cell.
    pub cell: usize,
    /// Local indices of the facet vertices within the adjacent cell.
    pub cell_local: Vec<usize>,
    /// Outward unit normal, `(n_x, n_E)`.
    pub normal: Vec<f64>,
    /// Length (dim 2 meshes) or area (dim 3 meshes) of the facet.
    pub measure: f64,
    pub tag: FacetTag,
}

/// Interior facet shared by two cells, used by jump indicators.
#[derive(Debug, Clone)]
pub struct InteriorFacet {
    pub vertices: Vec<usize>,
    pub cells: [usize; 2],
    pub measure: f64,
    /// Facet diameter (edge length in 2D, longest triangle edge in 3D).
    pub diameter: f64,
}

/// Conforming simplicial mesh. `dim` is the total dimension: 2 or 3 for
/// space-energy meshes, 1 or 2 for spatial dose grids.
#[derive(Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    boundary: Vec<BoundaryFacet>,
    cell_volumes: Vec<f64>,
    cell_diameters: Vec<f64>,
    inv_jacobians: Vec<f64>,
    /// Parent cell (in the mesh this one was refined from), per cell.
    parents: Option<Vec<usize>>,
    /// Beam direction when the last axis is energy; `None` for spatial grids.
    beam: Option<Vec<f64>>,
    /// Grid lines per axis for meshes that are still structured.
    axes: Option<Vec<Vec<f64>>>,
    locator: OnceLock<CellLocator>,
}

impl Mesh {
    /// Structured simplicial mesh of `domain` with `resolution[i]` cells per
    /// axis. Boxes are split into 2 triangles (dim 2) or 6 tetrahedra
    /// (dim 3) per grid cell.
    pub fn build_structured(domain: &Domain, resolution: &[usize]) -> Result<Mesh> {
        structured::build(domain, resolution, &[])
    }

    /// As [`Mesh::build_structured`], additionally moving the nearest grid
    /// line of the beam axis onto each of the given depths so cells never
    /// straddle a material interface. Requires an axis-aligned beam.
    pub fn build_structured_snapped(
        domain: &Domain,
        resolution: &[usize],
        snap_depths: &[f64],
    ) -> Result<Mesh> {
        structured::build(domain, resolution, snap_depths)
    }

    /// Structured spatial grid (no energy axis); used for dose spaces.
    pub fn spatial_grid(extents: &[[f64; 2]], resolution: &[usize]) -> Result<Mesh> {
        structured::build_spatial(extents, resolution)
    }

    /// Refine the given cells. Marked cells are quadrisected; conformity is
    /// restored by bisecting neighbours. Structured meshes with all cells
    /// marked are refined by doubling every axis, which reproduces uniform
    /// red refinement. Adaptive refinement is only supported in dimension 2.
    pub fn refine(&self, marked: &[usize]) -> Result<Mesh> {
        refine::refine(self, marked)
    }

    /// Refine every cell.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let all: Vec<usize> = (0..self.n_cells()).collect();
        refine::refine(self, &all)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    #[inline]
    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn cell(&self, k: usize) -> &[usize] {
        &self.cells[k * (self.dim + 1)..(k + 1) * (self.dim + 1)]
    }

    pub fn cell_volume(&self, k: usize) -> f64 {
        self.cell_volumes[k]
    }

    pub fn cell_diameter(&self, k: usize) -> f64 {
        self.cell_diameters[k]
    }

    pub fn cell_centroid(&self, k: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for &v in self.cell(k) {
            for (ci, xi) in c.iter_mut().zip(self.vertex(v)) {
                *ci += xi;
            }
        }
        let n = (self.dim + 1) as f64;
        c.iter_mut().for_each(|ci| *ci /= n);
        c
    }

    /// Inverse of the affine cell map, row-major `dim x dim`. Row `i` is the
    /// gradient of barycentric coordinate `i + 1`.
    #[inline]
    pub fn inv_jacobian(&self, k: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.inv_jacobians[k * d2..(k + 1) * d2]
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn parents(&self) -> Option<&[usize]> {
        self.parents.as_deref()
    }

    pub fn beam_omega(&self) -> Option<&[f64]> {
        self.beam.as_deref()
    }

    /// Grid lines per axis, when the mesh is still a structured product grid.
    pub fn axes(&self) -> Option<&[Vec<f64>]> {
        self.axes.as_deref()
    }

    pub fn domain_volume(&self) -> f64 {
        self.cell_volumes.iter().sum()
    }

    /// Energy interval `[min, max]` spanned by the last axis. Requires a
    /// space-energy mesh.
    pub fn energy_interval(&self) -> [f64; 2] {
        let e = self.dim - 1;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n_vertices() {
            let v = self.vertex(i)[e];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        [lo, hi]
    }

    /// Sorted unique energy coordinates of the mesh vertices.
    pub fn energy_coordinates(&self) -> Vec<f64> {
        let e = self.dim - 1;
        let mut vals: Vec<f64> = (0..self.n_vertices()).map(|i| self.vertex(i)[e]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        vals
    }

    /// Containing cell and barycentric coordinates of `point`. Ties at
    /// shared vertices/edges resolve to the lowest cell id.
    pub fn locate_point(&self, point: &[f64]) -> Result<(usize, Vec<f64>)> {
        self.locator
            .get_or_init(|| CellLocator::build(self))
            .locate(self, point)
    }

    /// Barycentric coordinates of `point` with respect to cell `k`.
    pub fn barycentric(&self, k: usize, point: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let v0 = self.vertex(self.cell(k)[0]);
        let inv = self.inv_jacobian(k);
        let mut bary = vec![0.0; d + 1];
        let mut sum = 0.0;
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += inv[i * d + j] * (point[j] - v0[j]);
            }
            bary[i + 1] = acc;
            sum += acc;
        }
        bary[0] = 1.0 - sum;
        bary
    }

    /// Interior facets with both adjacent cells (brute scan; intended for
    /// estimator assembly, not hot loops).
    pub fn interior_facets(&self) -> Vec<InteriorFacet> {
        let d = self.dim;
        let mut seen: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut out = Vec::new();
        for k in 0..self.n_cells() {
            let cell = self.cell(k);
            for drop in 0..=d {
                let mut key: Vec<usize> = cell
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, &v)| v)
                    .collect();
                key.sort_unstable();
                match seen.get(&key) {
                    None => {
                        seen.insert(key, k);
                    }
                    Some(&other) => {
                        let (measure, diameter) = self.facet_geometry(&key);
                        out.push(InteriorFacet {
                            vertices: key.clone(),
                            cells: [other.min(k), other.max(k)],
                            measure,
                            diameter,
                        });
                    }
                }
            }
        }
        out
    }

    fn facet_geometry(&self, vertices: &[usize]) -> (f64, f64) {
        match self.dim {
            1 => (1.0, 0.0),
            2 => {
                let a = self.vertex(vertices[0]);
                let b = self.vertex(vertices[1]);
                let len = dist(a, b);
                (len, len)
            }
            _ => {
                let a = self.vertex(vertices[0]);
                let b = self.vertex(vertices[1]);
                let c = self.vertex(vertices[2]);
                let ab = sub(b, a);
                let ac = sub(c, a);
                let cr = cross(&ab, &ac);
                let area = 0.5 * norm(&cr);
                let diam = dist(a, b).max(dist(a, c)).max(dist(b, c));
                (area, diam)
            }
        }
    }

    /// Plain-text dump: `dim n_vertices n_cells` header, vertex coordinate
    /// lines, cell connectivity lines, then boundary facet lines ending in
    /// the tag name.
    pub fn dump_text(&self, w: &mut impl IoWrite) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.n_vertices(), self.n_cells())?;
        for i in 0..self.n_vertices() {
            let line: Vec<String> = self.vertex(i).iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for k in 0..self.n_cells() {
            let line: Vec<String> = self.cell(k).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for facet in &self.boundary {
            let idx: Vec<String> = facet.vertices.iter().map(|v| v.to_string()).collect();
            let tag = match facet.tag {
                FacetTag::Inflow => "Inflow",
                FacetTag::Outflow => "Outflow",
                FacetTag::Transverse => "Transverse",
            };
            writeln!(w, "{} {}", idx.join(" "), tag)?;
        }
        Ok(())
    }

    /// Assemble a mesh from raw arrays: computes geometry, extracts and tags
    /// the boundary. Fails on degenerate (nonpositive-volume) cells.
    pub(crate) fn from_raw(
        dim: usize,
        coords: Vec<f64>,
        cells: Vec<usize>,
        beam: Option<Vec<f64>>,
        axes: Option<Vec<Vec<f64>>>,
        parents: Option<Vec<usize>>,
    ) -> Result<Mesh> {
        let n_cells = cells.len() / (dim + 1);
        let mut volumes = Vec::with_capacity(n_cells);
        let mut diameters = Vec::with_capacity(n_cells);
        let mut inv_jacobians = Vec::with_capacity(n_cells * dim * dim);
        for k in 0..n_cells {
            let cell = &cells[k * (dim + 1)..(k + 1) * (dim + 1)];
            let verts: Vec<&[f64]> = cell
                .iter()
                .map(|&v| &coords[v * dim..(v + 1) * dim])
                .collect();
            let vol = signed_volume(dim, &verts);
            if !(vol > 0.0) {
                return Err(Error::InvalidDomain(format!(
                    "cell {k} has nonpositive signed volume {vol}"
                )));
            }
            volumes.push(vol);
            let mut diam: f64 = 0.0;
            for i in 0..verts.len() {
                for j in i + 1..verts.len() {
                    diam = diam.max(dist(verts[i], verts[j]));
                }
            }
            diameters.push(diam);
            inv_jacobians.extend_from_slice(&invert_jacobian(dim, &verts));
        }
        let mut mesh = Mesh {
            dim,
            coords,
            cells,
            boundary: Vec::new(),
            cell_volumes: volumes,
            cell_diameters: diameters,
            inv_jacobians,
            parents,
            beam,
            axes,
            locator: OnceLock::new(),
        };
        mesh.boundary = mesh.extract_boundary()?;
        Ok(mesh)
    }

    fn extract_boundary(&self) -> Result<Vec<BoundaryFacet>> {
        let d = self.dim;
        // sorted facet key -> (cell, dropped local vertex, count)
        let mut table: BTreeMap<Vec<usize>, (usize, usize, usize)> = BTreeMap::new();
        for k in 0..self.n_cells() {
            let cell = self.cell(k);
            for drop in 0..=d {
                let mut key: Vec<usize> = cell
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, &v)| v)
                    .collect();
                key.sort_unstable();
                table
                    .entry(key)
                    .and_modify(|e| e.2 += 1)
                    .or_insert((k, drop, 1));
            }
        }
        let tol = self.tag_tolerance();
        let mut out = Vec::new();
        for (key, (cell_id, drop, count)) in table {
            if count != 1 {
                if count > 2 {
                    return Err(Error::InvalidDomain(format!(
                        "facet {key:?} is shared by {count} cells"
                    )));
                }
                continue;
            }
            let cell = self.cell(cell_id);
            let cell_local: Vec<usize> = (0..=d).filter(|&i| i != drop).collect();
            let vertices: Vec<usize> = cell_local.iter().map(|&i| cell[i]).collect();
            let normal = self.outward_normal(cell_id, drop, &vertices);
            let (measure, _) = self.facet_geometry(&vertices);
            let tag = self.classify(&normal, tol);
            out.push(BoundaryFacet {
                vertices,
                cell: cell_id,
                cell_local,
                normal,
                measure,
                tag,
            });
        }
        Ok(out)
    }

    fn tag_tolerance(&self) -> f64 {
        // Normals are unit vectors; exact-geometry structured boxes give
        // exactly axis-aligned components, so a tiny absolute tolerance does.
        1e-12
    }

    fn classify(&self, normal: &[f64], tol: f64) -> FacetTag {
        match &self.beam {
            None => FacetTag::Transverse,
            Some(omega) => {
                let n_e = normal[self.dim - 1];
                if n_e > tol {
                    FacetTag::Inflow
                } else if n_e < -tol {
                    FacetTag::Outflow
                } else {
                    let s: f64 = omega.iter().zip(normal.iter()).map(|(w, n)| w * n).sum();
                    if s < -tol {
                        FacetTag::Inflow
                    } else if s > tol {
                        FacetTag::Outflow
                    } else {
                        FacetTag::Transverse
                    }
                }
            }
        }
    }

    fn outward_normal(&self, cell_id: usize, drop: usize, vertices: &[usize]) -> Vec<f64> {
        let d = self.dim;
        let opposite = self.vertex(self.cell(cell_id)[drop]);
        match d {
            1 => {
                let x = self.vertex(vertices[0])[0];
                vec![if x > opposite[0] { 1.0 } else { -1.0 }]
            }
            2 => {
                let a = self.vertex(vertices[0]);
                let b = self.vertex(vertices[1]);
                let t = sub(b, a);
                let mut n = vec![t[1], -t[0]];
                let len = norm(&n);
                n.iter_mut().for_each(|x| *x /= len);
                let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                let d0: f64 = (0..2).map(|i| (mid[i] - opposite[i]) * n[i]).sum();
                if d0 < 0.0 {
                    n.iter_mut().for_each(|x| *x = -*x);
                }
                n
            }
            _ => {
                let a = self.vertex(vertices[0]);
                let b = self.vertex(vertices[1]);
                let c = self.vertex(vertices[2]);
                let mut n = cross(&sub(b, a), &sub(c, a));
                let len = norm(&n);
                n.iter_mut().for_each(|x| *x /= len);
                let mid = [
                    (a[0] + b[0] + c[0]) / 3.0,
                    (a[1] + b[1] + c[1]) / 3.0,
                    (a[2] + b[2] + c[2]) / 3.0,
                ];
                let d0: f64 = (0..3).map(|i| (mid[i] - opposite[i]) * n[i]).sum();
                if d0 < 0.0 {
                    n.iter_mut().for_each(|x| *x = -*x);
                }
                n
            }
        }
    }
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b.iter()).map(|(x, y)| x - y).collect()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn cross(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn signed_volume(dim: usize, verts: &[&[f64]]) -> f64 {
    match dim {
        1 => verts[1][0] - verts[0][0],
        2 => {
            let u = sub(verts[1], verts[0]);
            let v = sub(verts[2], verts[0]);
            0.5 * (u[0] * v[1] - u[1] * v[0])
        }
        _ => {
            let u = sub(verts[1], verts[0]);
            let v = sub(verts[2], verts[0]);
            let w = sub(verts[3], verts[0]);
            let c = cross(&u, &v);
            (c[0] * w[0] + c[1] * w[1] + c[2] * w[2]) / 6.0
        }
    }
}

/// Inverse of `J = [v1-v0 | ... | vd-v0]`, row-major.
fn invert_jacobian(dim: usize, verts: &[&[f64]]) -> Vec<f64> {
    match dim {
        1 => vec![1.0 / (verts[1][0] - verts[0][0])],
        2 => {
            let a = verts[1][0] - verts[0][0];
            let c = verts[1][1] - verts[0][1];
            let b = verts[2][0] - verts[0][0];
            let d = verts[2][1] - verts[0][1];
            let det = a * d - b * c;
            vec![d / det, -b / det, -c / det, a / det]
        }
        _ => {
            let mut j = [[0.0; 3]; 3];
            for col in 0..3 {
                for row in 0..3 {
                    j[row][col] = verts[col + 1][row] - verts[0][row];
                }
            }
            let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
            let cof = |r1: usize, c1: usize, r2: usize, c2: usize| {
                j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1]
            };
            // inverse = adjugate / det, laid out row-major
            vec![
                cof(1, 1, 2, 2) / det,
                -cof(0, 1, 2, 2) / det,
                cof(0, 1, 1, 2) / det,
                -cof(1, 0, 2, 2) / det,
                cof(0, 0, 2, 2) / det,
                -cof(0, 0, 1, 2) / det,
                cof(1, 0, 2, 1) / det,
                -cof(0, 0, 2, 1) / det,
                cof(0, 0, 1, 1) / det,
            ]
        }
    }
}
