//! Cell masks and the geometric measurements used by the shape diagnostics.
//!
//! Shapes live on cells: a [`ShapeMask`] marks each grid cell as inside or
//! outside. Volume is cell counting, perimeter is face counting (an `ℓ¹`
//! notion of surface area), membership of a cell in a ball or rectangle is
//! decided by its center, and a node belongs to the masked region exactly
//! when all its adjacent cells do (so box-boundary nodes never do).
//!
//! The complementary Hausdorff distance between two shapes,
//! `sup_x |dist(x, Ω₁ᶜ) - dist(x, Ω₂ᶜ)|`, is evaluated at grid nodes with an
//! exact Euclidean distance transform (lower-envelope-of-parabolas method),
//! so the only error is the node sampling itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::GridSpec;

/// Relative threshold below which a node value does not count as support.
pub const DEFAULT_SUPPORT_TAU: f64 = 1e-10;

/// A set of grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMask {
    pub grid: GridSpec,
    /// One flag per cell, `true` = inside the shape.
    pub cells: Vec<bool>,
}

impl ShapeMask {
    /// Wraps cell flags after checking the length against the grid.
    pub fn new(grid: &GridSpec, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.num_cells() {
            return Err(Error::GridMismatch {
                context: format!(
                    "mask has {} cells but the grid has {}",
                    cells.len(),
                    grid.num_cells()
                ),
            });
        }
        Ok(ShapeMask {
            grid: grid.clone(),
            cells,
        })
    }

    /// The empty shape.
    pub fn empty(grid: &GridSpec) -> Self {
        ShapeMask {
            grid: grid.clone(),
            cells: vec![false; grid.num_cells()],
        }
    }

    /// The whole box.
    pub fn full(grid: &GridSpec) -> Self {
        ShapeMask {
            grid: grid.clone(),
            cells: vec![true; grid.num_cells()],
        }
    }

    /// Number of cells inside.
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// True when no cell is inside.
    pub fn is_empty_shape(&self) -> bool {
        self.cells.iter().all(|&c| !c)
    }

    /// Cellwise union. Errors on different grids.
    pub fn union(&self, other: &ShapeMask) -> Result<ShapeMask> {
        self.check_same_grid(other)?;
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(&a, &b)| a || b)
            .collect();
        ShapeMask::new(&self.grid, cells)
    }

    /// Cellwise intersection. Errors on different grids.
    pub fn intersection(&self, other: &ShapeMask) -> Result<ShapeMask> {
        self.check_same_grid(other)?;
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(&a, &b)| a && b)
            .collect();
        ShapeMask::new(&self.grid, cells)
    }

    /// Cellwise complement within the box.
    pub fn complement(&self) -> ShapeMask {
        ShapeMask {
            grid: self.grid.clone(),
            cells: self.cells.iter().map(|&c| !c).collect(),
        }
    }

    fn check_same_grid(&self, other: &ShapeMask) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                context: "masks live on different grids".to_string(),
            });
        }
        Ok(())
    }

    /// `true` per node when every adjacent cell is inside the shape.
    /// Box-boundary nodes are always outside.
    pub fn nodes_inside(&self) -> Vec<bool> {
        let grid = &self.grid;
        (0..grid.num_nodes())
            .map(|k| {
                if grid.is_boundary_node(k) {
                    return false;
                }
                grid.cells_around_node(k).iter().all(|&c| self.cells[c])
            })
            .collect()
    }
}

/// A Euclidean ball used as a measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    /// Center (second coordinate ignored on one-dimensional grids).
    pub center: [f64; 2],
    /// Radius, strictly positive.
    pub radius: f64,
}

impl BallSpec {
    /// Validates the radius.
    pub fn new(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::DegenerateBall { radius });
        }
        Ok(BallSpec { center, radius })
    }

    /// True when `point` lies in the closed ball (first `dim` coordinates).
    pub fn contains(&self, point: [f64; 2], dim: usize) -> bool {
        let mut d2 = 0.0;
        for a in 0..dim {
            let d = point[a] - self.center[a];
            d2 += d * d;
        }
        d2 <= self.radius * self.radius
    }
}

/// A measurement window: a ball or an axis-aligned rectangle.
/// Rectangles make exact partitions of the box possible (each face midpoint
/// lands in exactly one member of a rectangular partition).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    Ball(BallSpec),
    Rect { lo: [f64; 2], hi: [f64; 2] },
}

impl Window {
    fn contains(&self, point: [f64; 2], dim: usize) -> bool {
        match self {
            Window::Ball(b) => b.contains(point, dim),
            Window::Rect { lo, hi } => {
                (0..dim).all(|a| point[a] >= lo[a] && point[a] < hi[a])
            }
        }
    }
}

/// Cells carrying a nonnegligible part of a field: a cell is in the support
/// when the largest `|value|` over its corner nodes exceeds
/// `tau * max_abs(u)`. The zero field has empty support.
pub fn support_mask(u: &ScalarField, tau: f64) -> ShapeMask {
    let grid = &u.grid;
    let m = u.max_abs();
    if m == 0.0 {
        return ShapeMask::empty(grid);
    }
    let threshold = tau * m;
    let cells = (0..grid.num_cells())
        .map(|c| cell_corner_max_abs(grid, &u.values, c) > threshold)
        .collect();
    ShapeMask {
        grid: grid.clone(),
        cells,
    }
}

fn cell_corner_max_abs(grid: &GridSpec, v: &[f64], cell: usize) -> f64 {
    let c = grid.cell_coords(cell);
    match grid.dim {
        1 => v[c[0]].abs().max(v[c[0] + 1].abs()),
        _ => {
            let ny = grid.counts[1];
            let k00 = c[0] * ny + c[1];
            v[k00]
                .abs()
                .max(v[k00 + 1].abs())
                .max(v[k00 + ny].abs())
                .max(v[k00 + ny + 1].abs())
        }
    }
}

/// Lebesgue volume of a mask: cell count times cell volume. Additive under
/// disjoint unions; exactly modular: `vol(A∪B) + vol(A∩B) = vol(A) + vol(B)`.
pub fn volume(mask: &ShapeMask) -> f64 {
    mask.count() as f64 * mask.grid.cell_volume
}

/// Face-count perimeter: every face separating an inside cell from an outside
/// cell (or from the exterior of the box) contributes its area — the
/// transverse spacing in 2D, the value 1 in 1D (faces are points). With a
/// window, only faces whose midpoint lies in the window count, which makes
/// perimeters exactly additive over rectangular partitions of the box.
pub fn perimeter(mask: &ShapeMask, window: Option<&Window>) -> f64 {
    let grid = &mask.grid;
    let mut total = 0.0;
    match grid.dim {
        1 => {
            let n = grid.cells_along(0);
            let h = grid.h[0];
            for c in 0..n {
                if !mask.cells[c] {
                    continue;
                }
                // Left and right faces.
                for (neighbor, x) in [
                    (c.checked_sub(1), c as f64 * h),
                    ((c + 1 < n).then_some(c + 1), (c + 1) as f64 * h),
                ] {
                    let outside = neighbor.map_or(true, |nb| !mask.cells[nb]);
                    if outside && window.map_or(true, |w| w.contains([x, 0.0], 1)) {
                        total += 1.0;
                    }
                }
            }
        }
        _ => {
            let (cx, cy) = (grid.cells_along(0), grid.cells_along(1));
            let (hx, hy) = (grid.h[0], grid.h[1]);
            for i in 0..cx {
                for j in 0..cy {
                    let c = i * cy + j;
                    if !mask.cells[c] {
                        continue;
                    }
                    // (neighbor cell, face midpoint, face area)
                    let faces = [
                        (
                            (i > 0).then(|| c - cy),
                            [i as f64 * hx, (j as f64 + 0.5) * hy],
                            hy,
                        ),
                        (
                            (i + 1 < cx).then(|| c + cy),
                            [(i + 1) as f64 * hx, (j as f64 + 0.5) * hy],
                            hy,
                        ),
                        (
                            (j > 0).then(|| c - 1),
                            [(i as f64 + 0.5) * hx, j as f64 * hy],
                            hx,
                        ),
                        (
                            (j + 1 < cy).then(|| c + 1),
                            [(i as f64 + 0.5) * hx, (j + 1) as f64 * hy],
                            hx,
                        ),
                    ];
                    for (neighbor, midpoint, area) in faces {
                        let outside = neighbor.map_or(true, |nb| !mask.cells[nb]);
                        if outside && window.map_or(true, |w| w.contains(midpoint, 2)) {
                            total += area;
                        }
                    }
                }
            }
        }
    }
    total
}

/// Fraction of the ball (restricted to the box) covered by the mask, by cell
/// counting: `#(mask cells with center in ball) / #(cells with center in
/// ball)`. Errors when the ball captures no cell center.
pub fn density_ratio(mask: &ShapeMask, ball: &BallSpec) -> Result<f64> {
    let grid = &mask.grid;
    let mut inside = 0usize;
    let mut covered = 0usize;
    for c in 0..grid.num_cells() {
        if ball.contains(grid.cell_center(c), grid.dim) {
            inside += 1;
            if mask.cells[c] {
                covered += 1;
            }
        }
    }
    if inside == 0 {
        return Err(Error::DegenerateBall {
            radius: ball.radius,
        });
    }
    Ok(covered as f64 / inside as f64)
}

/// Mask cells with at least one face neighbor inside the box that is not in
/// the mask — the discrete free boundary. Faces on the box boundary do not
/// make a cell a boundary cell (that part of the boundary is prescribed, not
/// free).
pub fn boundary_cells(mask: &ShapeMask) -> Vec<usize> {
    let grid = &mask.grid;
    let mut out = Vec::new();
    match grid.dim {
        1 => {
            let n = grid.cells_along(0);
            for c in 0..n {
                if !mask.cells[c] {
                    continue;
                }
                let left_out = c > 0 && !mask.cells[c - 1];
                let right_out = c + 1 < n && !mask.cells[c + 1];
                if left_out || right_out {
                    out.push(c);
                }
            }
        }
        _ => {
            let (cx, cy) = (grid.cells_along(0), grid.cells_along(1));
            for i in 0..cx {
                for j in 0..cy {
                    let c = i * cy + j;
                    if !mask.cells[c] {
                        continue;
                    }
                    let exposed = (i > 0 && !mask.cells[c - cy])
                        || (i + 1 < cx && !mask.cells[c + cy])
                        || (j > 0 && !mask.cells[c - 1])
                        || (j + 1 < cy && !mask.cells[c + 1]);
                    if exposed {
                        out.push(c);
                    }
                }
            }
        }
    }
    out
}

/// Representative point of a boundary cell on the discrete interface: the
/// mean of the midpoints of its faces shared with in-box complement cells.
/// Centering measurement balls here (rather than at the cell center) removes
/// the half-cell bias: a half-plane then scores density exactly 1/2.
pub fn boundary_interface_point(mask: &ShapeMask, cell: usize) -> [f64; 2] {
    let grid = &mask.grid;
    let c = grid.cell_coords(cell);
    let mut acc = [0.0f64; 2];
    let mut n = 0usize;
    match grid.dim {
        1 => {
            let h = grid.h[0];
            let ncells = grid.cells_along(0);
            if c[0] > 0 && !mask.cells[cell - 1] {
                acc[0] += c[0] as f64 * h;
                n += 1;
            }
            if c[0] + 1 < ncells && !mask.cells[cell + 1] {
                acc[0] += (c[0] + 1) as f64 * h;
                n += 1;
            }
        }
        _ => {
            let (cx, cy) = (grid.cells_along(0), grid.cells_along(1));
            let (hx, hy) = (grid.h[0], grid.h[1]);
            let (i, j) = (c[0], c[1]);
            let mut push = |pt: [f64; 2]| {
                acc[0] += pt[0];
                acc[1] += pt[1];
                n += 1;
            };
            if i > 0 && !mask.cells[cell - cy] {
                push([i as f64 * hx, (j as f64 + 0.5) * hy]);
            }
            if i + 1 < cx && !mask.cells[cell + cy] {
                push([(i + 1) as f64 * hx, (j as f64 + 0.5) * hy]);
            }
            if j > 0 && !mask.cells[cell - 1] {
                push([(i as f64 + 0.5) * hx, j as f64 * hy]);
            }
            if j + 1 < cy && !mask.cells[cell + 1] {
                push([(i as f64 + 0.5) * hx, (j + 1) as f64 * hy]);
            }
        }
    }
    if n == 0 {
        // Not a boundary cell; fall back to its center.
        return grid.cell_center(cell);
    }
    [acc[0] / n as f64, acc[1] / n as f64]
}

/// Boundary cells whose density ratio in the ball of radius `r` (centered at
/// their interface point) lies strictly inside `(delta, 1 - delta)` — the
/// discrete stand-in for the reduced boundary, where blow-ups look like
/// half-spaces. Errors with [`Error::NoBoundary`] when the mask has no
/// boundary cells.
pub fn reduced_boundary_proxy(mask: &ShapeMask, r: f64, delta: f64) -> Result<Vec<usize>> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::ConfigInvalid {
            key: "delta".to_string(),
            reason: format!("need 0 < delta < 0.5, got {delta}"),
        });
    }
    let boundary = boundary_cells(mask);
    if boundary.is_empty() {
        return Err(Error::NoBoundary);
    }
    let mut out = Vec::new();
    for cell in boundary {
        let ball = BallSpec::new(boundary_interface_point(mask, cell), r)?;
        let ratio = density_ratio(mask, &ball)?;
        if ratio > delta && ratio < 1.0 - delta {
            out.push(cell);
        }
    }
    Ok(out)
}

/// Distance from every node to the complement of the masked region, where a
/// node is inside the region when all its adjacent cells are masked. Exact
/// Euclidean distances to the nearest outside node.
pub fn distance_to_complement(mask: &ShapeMask) -> Vec<f64> {
    let grid = &mask.grid;
    let inside = mask.nodes_inside();
    let mut sq: Vec<f64> = inside
        .iter()
        .map(|&inb| if inb { f64::INFINITY } else { 0.0 })
        .collect();
    match grid.dim {
        1 => {
            let mut out = vec![0.0; sq.len()];
            dt1d(&sq, grid.h[0], &mut out);
            sq = out;
        }
        _ => {
            let (nx, ny) = (grid.counts[0], grid.counts[1]);
            // Pass along axis 1 (rows), then axis 0 (columns).
            let mut tmp = vec![0.0; sq.len()];
            for i in 0..nx {
                dt1d(&sq[i * ny..(i + 1) * ny], grid.h[1], &mut tmp[i * ny..(i + 1) * ny]);
            }
            let mut col_in = vec![0.0; nx];
            let mut col_out = vec![0.0; nx];
            for j in 0..ny {
                for i in 0..nx {
                    col_in[i] = tmp[i * ny + j];
                }
                dt1d(&col_in, grid.h[0], &mut col_out);
                for i in 0..nx {
                    sq[i * ny + j] = col_out[i];
                }
            }
        }
    }
    sq.iter().map(|&d2| d2.sqrt()).collect()
}

/// One-dimensional squared-distance transform (lower envelope of parabolas):
/// `out[q] = min_s ((q-s)·h)² + f[s]`. Exact for arbitrary nonnegative `f`,
/// including infinities.
fn dt1d(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    debug_assert!(n > 0 && out.len() == n);
    let x = |i: usize| i as f64 * h;
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        loop {
            let p = v[k];
            let s = if f[p] == f64::INFINITY {
                // The previous parabola is at infinity: this one wins everywhere.
                f64::NEG_INFINITY
            } else {
                ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)))
            };
            if s <= z[k] {
                if k == 0 {
                    // Replace the first parabola outright.
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < x(q) {
            k += 1;
        }
        let p = v[k];
        out[q] = if f[p] == f64::INFINITY {
            f64::INFINITY
        } else {
            let d = x(q) - x(p);
            d * d + f[p]
        };
    }
}

/// Complementary Hausdorff distance between two shapes on the same grid:
/// `max over nodes of |dist(x, Ω₁ᶜ) - dist(x, Ω₂ᶜ)|`.
pub fn hausdorff_comp_distance(a: &ShapeMask, b: &ShapeMask) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch {
            context: "Hausdorff distance of masks on different grids".to_string(),
        });
    }
    let da = distance_to_complement(a);
    let db = distance_to_complement(b);
    Ok(da
        .iter()
        .zip(&db)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Rasterizes a ball by the cell-center rule. A nonnegative radius smaller
/// than the distance from the center to the nearest cell center gives an
/// empty mask (in particular radius 0 does). Errors with
/// [`Error::OutOfBox`] when the ball is not contained in the closed box.
pub fn make_ball(grid: &GridSpec, center: [f64; 2], radius: f64) -> Result<ShapeMask> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::DegenerateBall { radius });
    }
    for a in 0..grid.dim {
        if center[a] - radius < 0.0 || center[a] + radius > grid.extents[a] {
            return Err(Error::OutOfBox {
                context: format!(
                    "ball center {:?} radius {radius} leaves (0, {})^d",
                    &center[..grid.dim],
                    grid.extents[a]
                ),
            });
        }
    }
    let ball = BallSpec { center, radius };
    let cells = (0..grid.num_cells())
        .map(|c| radius > 0.0 && ball.contains(grid.cell_center(c), grid.dim))
        .collect();
    ShapeMask::new(grid, cells)
}

/// Rasterizes the rectangle `[lo, hi)` by the cell-center rule. Errors with
/// [`Error::OutOfBox`] when the rectangle is not contained in the closed box
/// or is inverted.
pub fn make_rect(grid: &GridSpec, lo: [f64; 2], hi: [f64; 2]) -> Result<ShapeMask> {
    for a in 0..grid.dim {
        if lo[a] < 0.0 || hi[a] > grid.extents[a] || lo[a] > hi[a] {
            return Err(Error::OutOfBox {
                context: format!(
                    "rectangle [{:?}, {:?}) does not fit the box",
                    &lo[..grid.dim],
                    &hi[..grid.dim]
                ),
            });
        }
    }
    let cells = (0..grid.num_cells())
        .map(|c| {
            let center = grid.cell_center(c);
            (0..grid.dim).all(|a| center[a] >= lo[a] && center[a] < hi[a])
        })
        .collect();
    ShapeMask::new(grid, cells)
}

/// Rasterizes a ball whose cell count is calibrated to `target` cells by
/// bisection on the radius (the center is jittered off the symmetry axes by
/// the caller if exact counts are needed). Returns the best mask found and
/// its cell count.
pub fn make_ball_with_cell_count(
    grid: &GridSpec,
    center: [f64; 2],
    target: usize,
) -> Result<(ShapeMask, usize)> {
    let max_radius = (0..grid.dim)
        .map(|a| center[a].min(grid.extents[a] - center[a]))
        .fold(f64::INFINITY, f64::min);
    if target == 0 || max_radius <= 0.0 {
        return Err(Error::Infeasible {
            budget: target as f64,
            context: "ball calibration needs a positive target and interior center".to_string(),
        });
    }
    let count_at = |r: f64| -> usize {
        let ball = BallSpec { center, radius: r };
        (0..grid.num_cells())
            .filter(|&c| ball.contains(grid.cell_center(c), grid.dim))
            .count()
    };
    let (mut lo, mut hi) = (0.0f64, max_radius);
    if count_at(hi) < target {
        return Err(Error::Infeasible {
            budget: target as f64,
            context: format!(
                "largest inscribed ball holds {} cells, {} requested",
                count_at(hi),
                target
            ),
        });
    }
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if count_at(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mask = make_ball(grid, center, hi)?;
    let n = mask.count();
    Ok((mask, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn square_grid(n: usize) -> GridSpec {
        make_grid(2, &[2.0, 2.0], &[n, n]).unwrap()
    }

    fn random_mask(grid: &GridSpec, rng: &mut ChaCha8Rng, fill: f64) -> ShapeMask {
        let cells = (0..grid.num_cells())
            .map(|_| rng.random::<f64>() < fill)
            .collect();
        ShapeMask::new(grid, cells).unwrap()
    }

    #[test]
    fn volume_counts_cells() {
        let g = square_grid(129); // h = 2/128, dyadic
        let full = ShapeMask::full(&g);
        assert!((volume(&full) - 4.0).abs() < 1e-12);
        assert_eq!(volume(&ShapeMask::empty(&g)), 0.0);
    }

    #[test]
    fn volume_is_exactly_modular() {
        let g = square_grid(33);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_mask(&g, &mut rng, 0.4);
            let b = random_mask(&g, &mut rng, 0.6);
            let lhs = volume(&a.union(&b).unwrap()) + volume(&a.intersection(&b).unwrap());
            let rhs = volume(&a) + volume(&b);
            assert_eq!(lhs, rhs, "modularity must hold to the last bit");
        }
    }

    #[test]
    fn unit_square_has_perimeter_four() {
        let g = square_grid(129);
        let sq = make_rect(&g, [0.5, 0.5], [1.5, 1.5]).unwrap();
        assert!((volume(&sq) - 1.0).abs() < 1e-12, "volume {}", volume(&sq));
        assert!(
            (perimeter(&sq, None) - 4.0).abs() < 1e-12,
            "perimeter {}",
            perimeter(&sq, None)
        );
    }

    #[test]
    fn disk_face_count_perimeter_approaches_eight_radii() {
        // The ℓ¹ perimeter of a disk of radius r is 8r.
        let g = square_grid(257);
        let disk = make_ball(&g, [1.0, 1.0], 0.5).unwrap();
        let p = perimeter(&disk, None);
        assert!(
            (p - 4.0).abs() / 4.0 < 0.03,
            "face-count perimeter {p}, expected about 8·0.5 = 4"
        );
        let vol = volume(&disk);
        let band = perimeter(&disk, None) * g.h[0];
        assert!(
            (vol - std::f64::consts::PI * 0.25).abs() < band,
            "disk volume {vol} not within a boundary band of π/4"
        );
    }

    #[test]
    fn windowed_perimeters_add_up_over_a_rectangular_partition() {
        let g = square_grid(65);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = random_mask(&g, &mut rng, 0.5);
        let total = perimeter(&mask, None);
        let quadrants = [
            Window::Rect { lo: [0.0, 0.0], hi: [1.0, 1.0] },
            Window::Rect { lo: [1.0, 0.0], hi: [2.0, 1.0] },
            Window::Rect { lo: [0.0, 1.0], hi: [1.0, 2.0] },
            Window::Rect { lo: [1.0, 1.0], hi: [2.0, 2.0] },
        ];
        // Extend the last windows a hair past the box so faces on the outer
        // boundary (midpoint exactly at 2.0) are not orphaned by `hi`
        // exclusivity.
        let quadrants_closed = [
            quadrants[0],
            Window::Rect { lo: [1.0, 0.0], hi: [2.0 + 1e-9, 1.0] },
            Window::Rect { lo: [0.0, 1.0], hi: [1.0, 2.0 + 1e-9] },
            Window::Rect { lo: [1.0, 1.0], hi: [2.0 + 1e-9, 2.0 + 1e-9] },
        ];
        let sum: f64 = quadrants_closed
            .iter()
            .map(|w| perimeter(&mask, Some(w)))
            .sum();
        assert!(
            (sum - total).abs() < 1e-9,
            "partition sum {sum} vs total {total}"
        );
    }

    #[test]
    fn half_plane_density_is_one_half() {
        let g = square_grid(65);
        let half = make_rect(&g, [0.0, 0.0], [1.0, 2.0]).unwrap();
        // Ball centered on the dividing interface.
        let ball = BallSpec::new([1.0, 1.0], 0.3).unwrap();
        let ratio = density_ratio(&half, &ball).unwrap();
        assert_eq!(ratio, 0.5, "cell centers mirror across the interface");
    }

    #[test]
    fn quarter_plane_density_is_one_quarter() {
        let g = square_grid(65);
        let quarter = make_rect(&g, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let ball = BallSpec::new([1.0, 1.0], 0.3).unwrap();
        let ratio = density_ratio(&quarter, &ball).unwrap();
        assert_eq!(ratio, 0.25);
    }

    #[test]
    fn full_mask_density_is_one() {
        let g = square_grid(33);
        let full = ShapeMask::full(&g);
        let ball = BallSpec::new([0.5, 0.5], 0.4).unwrap();
        assert_eq!(density_ratio(&full, &ball).unwrap(), 1.0);
    }

    #[test]
    fn tiny_ball_with_no_cell_center_is_degenerate() {
        let g = square_grid(9);
        let full = ShapeMask::full(&g);
        // Radius far below the cell size, centered on a node.
        let ball = BallSpec::new([1.0, 1.0], 1e-6).unwrap();
        assert!(matches!(
            density_ratio(&full, &ball),
            Err(Error::DegenerateBall { .. })
        ));
    }

    #[test]
    fn half_plane_boundary_cells_line_the_interface() {
        let g = square_grid(65);
        let half = make_rect(&g, [0.0, 0.0], [1.0, 2.0]).unwrap();
        let boundary = boundary_cells(&half);
        assert_eq!(boundary.len(), 64, "one column of boundary cells");
        for &cell in &boundary {
            let pt = boundary_interface_point(&half, cell);
            assert!((pt[0] - 1.0).abs() < 1e-12, "interface at x = 1, got {pt:?}");
        }
        // Every boundary cell of a half plane sits on the reduced boundary.
        let proxy = reduced_boundary_proxy(&half, 4.0 * g.h[0], 0.2).unwrap();
        assert_eq!(proxy.len(), boundary.len());
    }

    #[test]
    fn reduced_boundary_requires_a_boundary() {
        let g = square_grid(17);
        assert!(matches!(
            reduced_boundary_proxy(&ShapeMask::empty(&g), 0.3, 0.2),
            Err(Error::NoBoundary)
        ));
    }

    #[test]
    fn hausdorff_distance_of_identical_masks_is_zero() {
        let g = square_grid(65);
        let disk = make_ball(&g, [1.0, 1.0], 0.7).unwrap();
        assert_eq!(hausdorff_comp_distance(&disk, &disk).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_distance_of_concentric_disks_is_the_radius_gap() {
        let g = square_grid(129);
        let big = make_ball(&g, [1.0, 1.0], 1.0 - 1e-9).unwrap();
        let small = make_ball(&g, [1.0, 1.0], 0.5).unwrap();
        let d = hausdorff_comp_distance(&big, &small).unwrap();
        // Achieved at the center: distances to the complements differ by 0.5.
        assert!(
            (d - 0.5).abs() <= 2.0 * g.h[0],
            "distance {d}, expected 0.5 within two cells"
        );
    }

    #[test]
    fn hausdorff_distance_is_a_pseudometric_on_random_masks() {
        let g = square_grid(33);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let a = random_mask(&g, &mut rng, 0.5);
            let b = random_mask(&g, &mut rng, 0.5);
            let c = random_mask(&g, &mut rng, 0.5);
            let dab = hausdorff_comp_distance(&a, &b).unwrap();
            let dba = hausdorff_comp_distance(&b, &a).unwrap();
            assert_eq!(dab, dba, "symmetry");
            let dac = hausdorff_comp_distance(&a, &c).unwrap();
            let dcb = hausdorff_comp_distance(&c, &b).unwrap();
            assert!(
                dab <= dac + dcb + 1e-12,
                "triangle inequality: {dab} > {dac} + {dcb}"
            );
        }
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let g = make_grid(2, &[1.0, 2.0], &[17, 23]).unwrap(); // anisotropic h
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mask = random_mask(&g, &mut rng, 0.7);
        let dist = distance_to_complement(&mask);
        let inside = mask.nodes_inside();
        for k in 0..g.num_nodes() {
            let p = g.node_pos(k);
            let mut best = f64::INFINITY;
            for m in 0..g.num_nodes() {
                if !inside[m] {
                    let q = g.node_pos(m);
                    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                    best = best.min(d);
                }
            }
            assert!(
                (dist[k] - best).abs() < 1e-9,
                "node {k}: transform {} vs brute force {best}",
                dist[k]
            );
        }
    }

    #[test]
    fn ball_outside_the_box_is_rejected() {
        let g = square_grid(17);
        assert!(matches!(
            make_ball(&g, [0.1, 1.0], 0.5),
            Err(Error::OutOfBox { .. })
        ));
        assert!(make_ball(&g, [1.0, 1.0], 0.0).unwrap().is_empty_shape());
    }

    #[test]
    fn rect_outside_the_box_is_rejected() {
        let g = square_grid(17);
        assert!(matches!(
            make_rect(&g, [-0.1, 0.0], [1.0, 1.0]),
            Err(Error::OutOfBox { .. })
        ));
        assert!(matches!(
            make_rect(&g, [0.5, 0.5], [0.4, 1.0]),
            Err(Error::OutOfBox { .. })
        ));
    }

    #[test]
    fn support_of_zero_field_is_empty() {
        let g = square_grid(17);
        let u = ScalarField::zeros(&g);
        assert!(support_mask(&u, DEFAULT_SUPPORT_TAU).is_empty_shape());
    }

    #[test]
    fn support_tracks_where_values_live() {
        let g = make_grid(1, &[1.0], &[11]).unwrap();
        let mut u = ScalarField::zeros(&g);
        u.values[3] = 0.5;
        u.values[4] = 1.0;
        let s = support_mask(&u, DEFAULT_SUPPORT_TAU);
        let expect: Vec<bool> = (0..10).map(|c| (2..=4).contains(&c)).collect();
        assert_eq!(s.cells, expect);
    }

    #[test]
    fn calibrated_ball_hits_the_requested_cell_count() {
        let g = square_grid(129);
        // Jittered center to break ties between symmetric cells.
        let target = 2016;
        let (mask, n) = make_ball_with_cell_count(&g, [1.0 + g.h[0] / 3.0, 1.0 + g.h[1] / 7.0], target).unwrap();
        assert!(
            (n as i64 - target as i64).abs() <= 4,
            "calibrated count {n} vs target {target}"
        );
        assert!(!mask.is_empty_shape());
    }

    #[test]
    fn nodes_inside_requires_all_adjacent_cells() {
        let g = make_grid(2, &[1.0, 1.0], &[5, 5]).unwrap();
        let mask = make_rect(&g, [0.25, 0.25], [0.75, 0.75]).unwrap();
        let inside = mask.nodes_inside();
        let expect_inside = g.node_index(&[2, 2]);
        assert!(inside[expect_inside]);
        assert_eq!(inside.iter().filter(|&&b| b).count(), 1);
    }
}
