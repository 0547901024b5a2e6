//! Uniform tensor-product grids on axis-aligned boxes.
//!
//! The computational box is `D = (0, extents[0]) x ... x (0, extents[d-1])`
//! with `d` in {1, 2}. Nodes sit at integer multiples of the spacing `h` and
//! carry field values; the open boxes between adjacent nodes are the cells,
//! which carry masks, quadrature weights and cell-centered gradients.
//!
//! Flat indices are row-major with the **last axis fastest**: in 2D the node
//! `(i, j)` maps to `i * counts[1] + j`, and the cell `(i, j)` maps to
//! `i * (counts[1] - 1) + j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a uniform tensor grid.
///
/// Invariants (enforced by [`make_grid`]):
/// * `dim` is 1 or 2, and `extents`, `counts`, `h` all have length `dim`;
/// * every extent is a positive finite length;
/// * every axis has at least 3 nodes, so at least one interior node exists;
/// * `h[i] * (counts[i] - 1) == extents[i]` exactly as computed;
/// * `cell_volume` is the product of the spacings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    /// Side lengths of the box, one per axis.
    pub extents: Vec<f64>,
    /// Number of nodes per axis (boundary nodes included).
    pub counts: Vec<usize>,
    /// Node spacing per axis, `extents[i] / (counts[i] - 1)`.
    pub h: Vec<f64>,
    /// Volume of one cell, `h.iter().product()`.
    pub cell_volume: f64,
}

/// Builds a [`GridSpec`] after validating dimension, extents and coarseness.
pub fn make_grid(dim: usize, extents: &[f64], counts: &[usize]) -> Result<GridSpec> {
    if dim == 0 || dim > 2 {
        return Err(Error::InvalidDimension { dim });
    }
    if extents.len() != dim || counts.len() != dim {
        return Err(Error::InvalidDimension { dim });
    }
    for (axis, &extent) in extents.iter().enumerate() {
        if !extent.is_finite() || extent <= 0.0 {
            return Err(Error::BadExtent { axis, extent });
        }
    }
    for (axis, &count) in counts.iter().enumerate() {
        if count < 3 {
            return Err(Error::TooCoarse { axis, count });
        }
    }
    let h: Vec<f64> = extents
        .iter()
        .zip(counts)
        .map(|(&e, &n)| e / (n - 1) as f64)
        .collect();
    let cell_volume = h.iter().product();
    Ok(GridSpec {
        dim,
        extents: extents.to_vec(),
        counts: counts.to_vec(),
        h: h.clone(),
        cell_volume,
    })
}

impl GridSpec {
    /// Total number of nodes.
    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Total number of cells.
    pub fn num_cells(&self) -> usize {
        self.counts.iter().map(|&n| n - 1).product()
    }

    /// Number of cells along one axis.
    pub fn cells_along(&self, axis: usize) -> usize {
        self.counts[axis] - 1
    }

    /// Flat node index of multi-index `idx` (row-major, last axis fastest).
    pub fn node_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.counts[1] + idx[1],
        }
    }

    /// Multi-index of flat node index `flat`.
    pub fn node_coords(&self, flat: usize) -> [usize; 2] {
        debug_assert!(flat < self.num_nodes());
        match self.dim {
            1 => [flat, 0],
            _ => [flat / self.counts[1], flat % self.counts[1]],
        }
    }

    /// Physical position of a node given by flat index.
    pub fn node_pos(&self, flat: usize) -> [f64; 2] {
        let c = self.node_coords(flat);
        match self.dim {
            1 => [c[0] as f64 * self.h[0], 0.0],
            _ => [c[0] as f64 * self.h[0], c[1] as f64 * self.h[1]],
        }
    }

    /// Flat cell index of multi-index `idx`.
    pub fn cell_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        match self.dim {
            1 => idx[0],
            _ => idx[0] * (self.counts[1] - 1) + idx[1],
        }
    }

    /// Multi-index of flat cell index `flat`.
    pub fn cell_coords(&self, flat: usize) -> [usize; 2] {
        debug_assert!(flat < self.num_cells());
        match self.dim {
            1 => [flat, 0],
            _ => [flat / (self.counts[1] - 1), flat % (self.counts[1] - 1)],
        }
    }

    /// Physical position of a cell's center.
    pub fn cell_center(&self, flat: usize) -> [f64; 2] {
        let c = self.cell_coords(flat);
        match self.dim {
            1 => [(c[0] as f64 + 0.5) * self.h[0], 0.0],
            _ => [
                (c[0] as f64 + 0.5) * self.h[0],
                (c[1] as f64 + 0.5) * self.h[1],
            ],
        }
    }

    /// True if the node lies on the boundary of the box.
    pub fn is_boundary_node(&self, flat: usize) -> bool {
        let c = self.node_coords(flat);
        (0..self.dim).any(|a| c[a] == 0 || c[a] == self.counts[a] - 1)
    }

    /// Number of interior (non-boundary) nodes.
    pub fn num_interior_nodes(&self) -> usize {
        self.counts.iter().map(|&n| n - 2).product()
    }

    /// Flat indices of the cells adjacent to a node (up to `2^dim` of them).
    pub fn cells_around_node(&self, flat: usize) -> Vec<usize> {
        let c = self.node_coords(flat);
        let mut out = Vec::with_capacity(1 << self.dim);
        match self.dim {
            1 => {
                let i = c[0];
                if i > 0 {
                    out.push(i - 1);
                }
                if i + 1 < self.counts[0] {
                    out.push(i);
                }
            }
            _ => {
                let (i, j) = (c[0], c[1]);
                let (cx, cy) = (self.counts[0] - 1, self.counts[1] - 1);
                for ci in [i.wrapping_sub(1), i] {
                    for cj in [j.wrapping_sub(1), j] {
                        if ci < cx && cj < cy {
                            out.push(ci * cy + cj);
                        }
                    }
                }
            }
        }
        out
    }

    /// Smallest distance from a physical point to the boundary of the box.
    pub fn distance_to_box_boundary(&self, point: &[f64]) -> f64 {
        let mut dist = f64::INFINITY;
        for a in 0..self.dim {
            dist = dist.min(point[a]).min(self.extents[a] - point[a]);
        }
        dist
    }

    /// Largest node spacing over the axes.
    pub fn h_max(&self) -> f64 {
        self.h.iter().cloned().fold(0.0, f64::max)
    }

    /// Volume of the whole box.
    pub fn box_volume(&self) -> f64 {
        self.extents.iter().product()
    }

    /// Diameter of the box (length of its diagonal).
    pub fn diameter(&self) -> f64 {
        self.extents.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}
