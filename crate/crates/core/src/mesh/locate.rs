//! Point location: a uniform background grid bins cells by bounding box;
//! queries test candidate cells in ascending id order, so ties at shared
//! vertices and edges resolve to the lowest cell id.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

const BARY_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct CellLocator {
    mins: Vec<f64>,
    maxs: Vec<f64>,
    bins_per_axis: Vec<usize>,
    bins: Vec<Vec<u32>>,
}

impl CellLocator {
    pub fn build(mesh: &Mesh) -> Self {
        let dim = mesh.dim();
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for i in 0..mesh.n_vertices() {
            for (a, &x) in mesh.vertex(i).iter().enumerate() {
                mins[a] = mins[a].min(x);
                maxs[a] = maxs[a].max(x);
            }
        }
        let per_axis =
            ((mesh.n_cells() as f64).powf(1.0 / dim as f64).ceil() as usize).clamp(1, 192);
        let bins_per_axis = vec![per_axis; dim];
        let n_bins: usize = bins_per_axis.iter().product();
        let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_bins];

        let widths: Vec<f64> = (0..dim)
            .map(|a| ((maxs[a] - mins[a]) / per_axis as f64).max(f64::MIN_POSITIVE))
            .collect();
        let bin_index = |a: usize, x: f64| -> usize {
            (((x - mins[a]) / widths[a]).floor() as isize).clamp(0, per_axis as isize - 1) as usize
        };

        for k in 0..mesh.n_cells() {
            let mut lo = vec![usize::MAX; dim];
            let mut hi = vec![0usize; dim];
            for &v in mesh.cell(k) {
                for (a, &x) in mesh.vertex(v).iter().enumerate() {
                    let b = bin_index(a, x);
                    lo[a] = lo[a].min(b);
                    hi[a] = hi[a].max(b);
                }
            }
            // enumerate the bin box covered by the cell bbox
            let mut idx = lo.clone();
            'boxes: loop {
                let mut flat = 0;
                for a in 0..dim {
                    flat = flat * per_axis + idx[a];
                }
                bins[flat].push(k as u32);
                for a in (0..dim).rev() {
                    idx[a] += 1;
                    if idx[a] <= hi[a] {
                        continue 'boxes;
                    }
                    idx[a] = lo[a];
                    if a == 0 {
                        break 'boxes;
                    }
                }
            }
        }
        CellLocator {
            mins,
            maxs,
            bins_per_axis,
            bins,
        }
    }

    pub fn locate(&self, mesh: &Mesh, point: &[f64]) -> Result<(usize, Vec<f64>)> {
        let dim = mesh.dim();
        if point.len() != dim {
            return Err(Error::Domain(format!(
                "point has {} coordinates, mesh dimension is {dim}",
                point.len()
            )));
        }
        let scale: f64 = (0..dim)
            .map(|a| self.maxs[a] - self.mins[a])
            .fold(0.0, f64::max);
        let tol = 1e-9 * (1.0 + scale);
        for a in 0..dim {
            if point[a] < self.mins[a] - tol || point[a] > self.maxs[a] + tol {
                return Err(Error::PointNotFound(point.to_vec()));
            }
        }
        // clamp into the closed box so boundary evaluations are robust
        let q: Vec<f64> = (0..dim)
            .map(|a| point[a].clamp(self.mins[a], self.maxs[a]))
            .collect();

        if let Some(hit) = self.scan_bin(mesh, &q, 0) {
            return Ok(hit);
        }
        // widen by one bin ring to absorb roundoff at bin borders
        if let Some(hit) = self.scan_bin(mesh, &q, 1) {
            return Ok(hit);
        }
        // last resort: full scan, keeping the least-violating cell
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for k in 0..mesh.n_cells() {
            let bary = mesh.barycentric(k, &q);
            let worst = bary.iter().cloned().fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(_, _, bw)| worst > *bw) {
                best = Some((k, bary, worst));
            }
        }
        match best {
            Some((k, bary, worst)) if worst >= -1e-6 => Ok((k, bary)),
            _ => Err(Error::PointNotFound(point.to_vec())),
        }
    }

    fn scan_bin(&self, mesh: &Mesh, q: &[f64], ring: usize) -> Option<(usize, Vec<f64>)> {
        let dim = mesh.dim();
        let per_axis = self.bins_per_axis[0];
        let widths: Vec<f64> = (0..dim)
            .map(|a| ((self.maxs[a] - self.mins[a]) / per_axis as f64).max(f64::MIN_POSITIVE))
            .collect();
        let centers: Vec<usize> = (0..dim)
            .map(|a| {
                (((q[a] - self.mins[a]) / widths[a]).floor() as isize)
                    .clamp(0, per_axis as isize - 1) as usize
            })
            .collect();

        let mut candidates: Vec<u32> = Vec::new();
        let mut idx: Vec<isize> = centers
            .iter()
            .map(|&c| c as isize - ring as isize)
            .collect();
        let lo: Vec<isize> = idx.clone();
        let hi: Vec<isize> = centers
            .iter()
            .map(|&c| (c + ring).min(per_axis - 1) as isize)
            .collect();
        'boxes: loop {
            let mut ok = true;
            let mut flat = 0usize;
            for a in 0..dim {
                if idx[a] < 0 || idx[a] >= per_axis as isize {
                    ok = false;
                    break;
                }
                flat = flat * per_axis + idx[a] as usize;
            }
            if ok {
                candidates.extend_from_slice(&self.bins[flat]);
            }
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] <= hi[a] {
                    continue 'boxes;
                }
                idx[a] = lo[a];
                if a == 0 {
                    break 'boxes;
                }
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        for &k in &candidates {
            let bary = mesh.barycentric(k as usize, q);
            if bary.iter().all(|&l| l >= -BARY_TOL) {
                return Some((k as usize, bary));
            }
        }
        None
    }
}
