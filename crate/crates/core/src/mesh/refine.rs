//! Mesh refinement. Marked cells are quadrisected. Structured meshes with
//! every cell marked are refined by doubling each axis (uniform red
//! refinement); otherwise, in dimension 2, marked cells are split by
//! repeated bisection of their refinement edge and conformity is restored
//! by bisecting neighbours along shared edges. The refinement edge of a
//! triangle is the edge between its first two vertices; the vertex created
//! by a bisection always lands in the last slot, which keeps the pattern
//! shape-regular.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::mesh::{structured, Mesh};

pub(super) fn refine(mesh: &Mesh, marked: &[usize]) -> Result<Mesh> {
    let n_cells = mesh.n_cells();
    let mut marked_set: BTreeSet<usize> = BTreeSet::new();
    for &k in marked {
        if k >= n_cells {
            return Err(Error::Domain(format!(
                "marked cell {k} out of range (mesh has {n_cells} cells)"
            )));
        }
        marked_set.insert(k);
    }

    if marked_set.is_empty() {
        return copy_mesh(mesh);
    }

    let all_marked = marked_set.len() == n_cells;
    if all_marked {
        if let Some(axes) = mesh.axes() {
            return double_axes(mesh, axes);
        }
    }
    match mesh.dim() {
        2 => bisect_closure(mesh, &marked_set),
        3 => Err(Error::Unsupported(
            "adaptive refinement is not supported on dimension-3 meshes; mark all cells of a structured mesh instead".into(),
        )),
        d => Err(Error::Unsupported(format!(
            "adaptive refinement is not supported on dimension-{d} meshes"
        ))),
    }
}

fn copy_mesh(mesh: &Mesh) -> Result<Mesh> {
    let dim = mesh.dim();
    let coords: Vec<f64> = (0..mesh.n_vertices())
        .flat_map(|i| mesh.vertex(i).to_vec())
        .collect();
    let cells: Vec<usize> = (0..mesh.n_cells())
        .flat_map(|k| mesh.cell(k).to_vec())
        .collect();
    Mesh::from_raw(
        dim,
        coords,
        cells,
        mesh.beam_omega().map(|w| w.to_vec()),
        mesh.axes().map(|a| a.to_vec()),
        Some((0..mesh.n_cells()).collect()),
    )
}

/// Uniform refinement of a structured mesh: insert the midpoint of every
/// axis interval and re-mesh. Parent links come from centroid location in
/// the coarse mesh.
fn double_axes(mesh: &Mesh, axes: &[Vec<f64>]) -> Result<Mesh> {
    let mut fine_axes = Vec::with_capacity(axes.len());
    for axis in axes {
        let mut lines = Vec::with_capacity(axis.len() * 2 - 1);
        for w in axis.windows(2) {
            lines.push(w[0]);
            lines.push(0.5 * (w[0] + w[1]));
        }
        lines.push(*axis.last().unwrap());
        fine_axes.push(lines);
    }
    let fine = structured::from_axes(mesh.dim(), fine_axes, mesh.beam_omega().map(|w| w.to_vec()))?;
    let mut parents = Vec::with_capacity(fine.n_cells());
    for k in 0..fine.n_cells() {
        let centroid = fine.cell_centroid(k);
        let (parent, _) = mesh.locate_point(&centroid)?;
        parents.push(parent);
    }
    let coords: Vec<f64> = (0..fine.n_vertices())
        .flat_map(|i| fine.vertex(i).to_vec())
        .collect();
    let cells: Vec<usize> = (0..fine.n_cells())
        .flat_map(|k| fine.cell(k).to_vec())
        .collect();
    Mesh::from_raw(
        fine.dim(),
        coords,
        cells,
        fine.beam_omega().map(|w| w.to_vec()),
        fine.axes().map(|a| a.to_vec()),
        Some(parents),
    )
}

type EdgeKey = (usize, usize);

fn edge_key(a: usize, b: usize) -> EdgeKey {
    (a.min(b), a.max(b))
}

fn bisect_closure(mesh: &Mesh, marked: &BTreeSet<usize>) -> Result<Mesh> {
    let n_cells = mesh.n_cells();

    // Marked cells contribute all three edges; closure adds refinement edges
    // until every cell with a split edge also splits its refinement edge.
    let mut split: BTreeSet<EdgeKey> = BTreeSet::new();
    for &k in marked {
        let c = mesh.cell(k);
        split.insert(edge_key(c[0], c[1]));
        split.insert(edge_key(c[1], c[2]));
        split.insert(edge_key(c[2], c[0]));
    }
    loop {
        let mut changed = false;
        for k in 0..n_cells {
            let c = mesh.cell(k);
            let refinement = edge_key(c[0], c[1]);
            if split.contains(&refinement) {
                continue;
            }
            if split.contains(&edge_key(c[1], c[2])) || split.contains(&edge_key(c[2], c[0])) {
                split.insert(refinement);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut coords: Vec<f64> = (0..mesh.n_vertices())
        .flat_map(|i| mesh.vertex(i).to_vec())
        .collect();
    let mut midpoint: BTreeMap<EdgeKey, usize> = BTreeMap::new();
    for &(a, b) in &split {
        let id = coords.len() / 2;
        let va = mesh.vertex(a);
        let vb = mesh.vertex(b);
        coords.push(0.5 * (va[0] + vb[0]));
        coords.push(0.5 * (va[1] + vb[1]));
        midpoint.insert((a, b), id);
    }

    let mut cells: Vec<usize> = Vec::new();
    let mut parents: Vec<usize> = Vec::new();
    for k in 0..n_cells {
        let c = mesh.cell(k);
        emit(&(c[0], c[1], c[2]), k, &midpoint, &mut cells, &mut parents);
    }

    Mesh::from_raw(
        2,
        coords,
        cells,
        mesh.beam_omega().map(|w| w.to_vec()),
        None,
        Some(parents),
    )
}

/// Emit a triangle, bisecting recursively while its refinement edge is split.
/// Children place the new vertex last, so their refinement edges are the
/// parent's other two edges; recursion is at most two levels deep because
/// split edges always join original vertices.
fn emit(
    tri: &(usize, usize, usize),
    parent: usize,
    midpoint: &BTreeMap<EdgeKey, usize>,
    cells: &mut Vec<usize>,
    parents: &mut Vec<usize>,
) {
    let (a, b, c) = *tri;
    match midpoint.get(&edge_key(a, b)) {
        None => {
            cells.extend_from_slice(&[a, b, c]);
            parents.push(parent);
        }
        Some(&m) => {
            emit(&(c, a, m), parent, midpoint, cells, parents);
            emit(&(b, c, m), parent, midpoint, cells, parents);
        }
    }
}
