//! Structured simplicial meshing of boxes: 2 triangles per grid cell in
//! dimension 2, 6 tetrahedra (path subdivision) in dimension 3, segments in
//! dimension 1. Grid lines may be snapped onto material interfaces along the
//! beam axis so layers never cut through cells.

use crate::error::{Error, Result};
use crate::mesh::{Domain, Mesh};

pub(super) fn build(domain: &Domain, resolution: &[usize], snap_depths: &[f64]) -> Result<Mesh> {
    let dim = domain.total_dim();
    if resolution.len() != dim {
        return Err(Error::InvalidDomain(format!(
            "resolution has {} entries, expected {dim}",
            resolution.len()
        )));
    }
    let intervals = domain.axis_intervals();
    let mut axes = linspace_axes(&intervals, resolution)?;
    if !snap_depths.is_empty() {
        let beam_axis = axis_aligned_beam(&domain.beam_direction)?;
        snap_axis(&mut axes[beam_axis], snap_depths)?;
    }
    from_axes(dim, axes, Some(domain.beam_direction.clone()))
}

pub(super) fn build_spatial(extents: &[[f64; 2]], resolution: &[usize]) -> Result<Mesh> {
    let dim = extents.len();
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidDomain(format!(
            "spatial grids support dimension 1 or 2, got {dim}"
        )));
    }
    if resolution.len() != dim {
        return Err(Error::InvalidDomain(format!(
            "resolution has {} entries, expected {dim}",
            resolution.len()
        )));
    }
    let axes = linspace_axes(extents, resolution)?;
    from_axes(dim, axes, None)
}

/// Rebuild a mesh from explicit grid lines; used both by the initial build
/// and by uniform refinement of structured meshes.
pub(super) fn from_axes(dim: usize, axes: Vec<Vec<f64>>, beam: Option<Vec<f64>>) -> Result<Mesh> {
    let counts: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let n_vertices: usize = counts.iter().product();
    let mut coords = Vec::with_capacity(n_vertices * dim);
    let mut idx = vec![0usize; dim];
    'outer: loop {
        for (a, &i) in idx.iter().enumerate() {
            coords.push(axes[a][i]);
        }
        // lexicographic increment, last axis fastest
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                continue 'outer;
            }
            idx[a] = 0;
            if a == 0 {
                break 'outer;
            }
        }
    }

    let vid = |ijk: &[usize]| -> usize {
        let mut v = 0;
        for a in 0..dim {
            v = v * counts[a] + ijk[a];
        }
        v
    };

    let mut cells: Vec<usize> = Vec::new();
    match dim {
        1 => {
            for i in 0..counts[0] - 1 {
                cells.extend_from_slice(&[i, i + 1]);
            }
        }
        2 => {
            for i in 0..counts[0] - 1 {
                for j in 0..counts[1] - 1 {
                    let a = vid(&[i, j]);
                    let b = vid(&[i + 1, j]);
                    let c = vid(&[i + 1, j + 1]);
                    let d = vid(&[i, j + 1]);
                    // Diagonal a-c doubles as the refinement edge (first two
                    // vertices) of both triangles; orientation is CCW.
                    cells.extend_from_slice(&[c, a, b]);
                    cells.extend_from_slice(&[a, c, d]);
                }
            }
        }
        3 => {
            // Path subdivision: one tetrahedron per axis permutation, walking
            // from the low corner to the high corner of each grid cell.
            const PERMS: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            let parity = |p: &[usize; 3]| -> bool {
                // true when even
                matches!(p, [0, 1, 2] | [1, 2, 0] | [2, 0, 1])
            };
            for i in 0..counts[0] - 1 {
                for j in 0..counts[1] - 1 {
                    for k in 0..counts[2] - 1 {
                        let base = [i, j, k];
                        for perm in &PERMS {
                            let mut corner = base;
                            let mut tet = [vid(&corner), 0, 0, 0];
                            for (step, &axis) in perm.iter().enumerate() {
                                corner[axis] += 1;
                                tet[step + 1] = vid(&corner);
                            }
                            if !parity(perm) {
                                tet.swap(2, 3);
                            }
                            cells.extend_from_slice(&tet);
                        }
                    }
                }
            }
        }
        _ => {
            return Err(Error::InvalidDomain(format!(
                "structured meshes support dimension 1..=3, got {dim}"
            )))
        }
    }

    Mesh::from_raw(dim, coords, cells, beam, Some(axes), None)
}

fn linspace_axes(intervals: &[[f64; 2]], resolution: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut axes = Vec::with_capacity(intervals.len());
    for (axis, (&[lo, hi], &n)) in intervals.iter().zip(resolution.iter()).enumerate() {
        if n < 1 {
            return Err(Error::InvalidDomain(format!(
                "resolution must be >= 1 per axis, axis {axis} has {n}"
            )));
        }
        if !(hi > lo) {
            return Err(Error::InvalidDomain(format!(
                "axis {axis} has empty extent [{lo}, {hi}]"
            )));
        }
        let mut lines = Vec::with_capacity(n + 1);
        for i in 0..=n {
            // endpoints exact so boundary facets sit on the box
            let t = i as f64 / n as f64;
            lines.push(if i == 0 {
                lo
            } else if i == n {
                hi
            } else {
                lo + (hi - lo) * t
            });
        }
        axes.push(lines);
    }
    Ok(axes)
}

fn axis_aligned_beam(omega: &[f64]) -> Result<usize> {
    for (a, &w) in omega.iter().enumerate() {
        if (w - 1.0).abs() < 1e-12 {
            return Ok(a);
        }
    }
    Err(Error::Unsupported(
        "interface snapping requires the beam to point along a positive coordinate axis".into(),
    ))
}

/// Move the nearest interior grid line onto each snap target.
fn snap_axis(lines: &mut [f64], targets: &[f64]) -> Result<()> {
    let n = lines.len();
    let lo = lines[0];
    let hi = lines[n - 1];
    let mut taken = vec![false; n];
    taken[0] = true;
    taken[n - 1] = true;
    let mut sorted: Vec<f64> = targets.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &sorted {
        if t <= lo || t >= hi {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, (&line, &used)) in lines.iter().zip(taken.iter()).enumerate() {
            if used {
                continue;
            }
            let d = (line - t).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.ok_or_else(|| {
            Error::InvalidDomain(format!(
                "not enough grid lines to snap onto interface at depth {t}; raise the resolution"
            ))
        })?;
        lines[i] = t;
        taken[i] = true;
    }
    for w in lines.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidDomain(
                "interface snapping produced a non-monotone axis; raise the resolution".into(),
            ));
        }
    }
    Ok(())
}
