//! Scalar fields on grid nodes and the discrete energy machinery.
//!
//! All integrals use the midpoint rule on cells. The gradient of a field is
//! piecewise constant per cell: along each axis it is the difference quotient
//! of the node values across the cell (averaged over the transverse corners in
//! 2D), which is exact for affine fields and second-order accurate at cell
//! centers. A field value at a cell center is the mean of the corner values.
//! Boundary nodes carry the homogeneous Dirichlet condition: admissible fields
//! vanish there, extending by zero outside the box.
//!
//! The quotient being minimized splits into three energy pieces,
//!
//! ```text
//! ep = (1/p) ∫ |∇u|^p,   e2 = (1/2) ∫ |∇u|²,   dq = (1/q) ∫ |u|^q,
//! R(u) = (ep + e2) / dq,
//! ```
//!
//! and every solver-facing quantity (quotient gradient, weak-form residual,
//! objective gradients) is assembled from the same cell pass, so analytic
//! gradients are exact for the discrete functional, not approximations of the
//! continuum one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// A field of values on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    /// The zero field.
    pub fn zeros(grid: &GridSpec) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.num_nodes()],
        }
    }

    /// Wraps node values after checking the length against the grid.
    pub fn new(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::GridMismatch {
                context: format!(
                    "field has {} values but the grid has {} nodes",
                    values.len(),
                    grid.num_nodes()
                ),
            });
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples a closure at node positions. Positions are `[x, y]` with
    /// `y = 0` on one-dimensional grids.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.num_nodes()).map(|k| f(grid.node_pos(k))).collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    /// Largest absolute node value.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Returns the field multiplied by a scalar.
    pub fn scaled(&self, s: f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// Errors unless `other` was built over the same grid.
    pub fn check_same_grid(&self, other: &GridSpec, context: &str) -> Result<()> {
        if self.grid != *other {
            return Err(Error::GridMismatch {
                context: context.to_string(),
            });
        }
        Ok(())
    }
}

/// Piecewise-constant gradient, one vector per cell.
#[derive(Debug, Clone)]
pub struct CellGradients {
    pub dim: usize,
    /// `dim`-strided components: `[g0x, g0y, g1x, g1y, ...]` in 2D.
    pub comps: Vec<f64>,
}

impl CellGradients {
    /// Gradient vector of one cell (`[g, 0]` on one-dimensional grids).
    pub fn at(&self, cell: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.comps[cell], 0.0],
            _ => [self.comps[2 * cell], self.comps[2 * cell + 1]],
        }
    }

    /// Euclidean norm of the gradient in one cell.
    pub fn norm_at(&self, cell: usize) -> f64 {
        let g = self.at(cell);
        (g[0] * g[0] + g[1] * g[1]).sqrt()
    }

    /// Number of cells covered.
    pub fn len(&self) -> usize {
        self.comps.len() / self.dim
    }

    /// True when there are no cells (never the case for a valid grid).
    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }
}

/// The three integral pieces of the quotient, evaluated at one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `(1/p) ∫ |∇u|^p`
    pub ep: f64,
    /// `(1/2) ∫ |∇u|²`
    pub e2: f64,
    /// `(1/q) ∫ |u|^q`
    pub dq: f64,
}

impl EnergyBreakdown {
    /// Numerator of the quotient.
    pub fn numerator(&self) -> f64 {
        self.ep + self.e2
    }

    /// The quotient `R = (ep + e2)/dq`, if the denominator is positive.
    pub fn quotient(&self) -> Option<f64> {
        (self.dq > 0.0).then(|| self.numerator() / self.dq)
    }

    /// The quotient of the rescaled field `t·u`, computed exactly from the
    /// homogeneity degrees: `R(t·u) = (t^p ep + t² e2) / (t^q dq)`.
    pub fn quotient_at_scale(&self, t: f64, p: f64, q: f64) -> f64 {
        (t.powf(p) * self.ep + t * t * self.e2) / (t.powf(q) * self.dq)
    }

    /// Derivative of `t ↦ R(t·u)` at `t = 1`; zero exactly at the
    /// amplitude-stationary scaling.
    pub fn amplitude_derivative(&self, p: f64, q: f64) -> f64 {
        (p * self.ep + 2.0 * self.e2 - q * (self.ep + self.e2)) / self.dq
    }
}

/// Validated exponent pair with precomputed fast-power dispatch.
///
/// Admissible pairs are `p > q >= 2` and the diagnostic pair `p = q = 2`.
#[derive(Debug, Clone, Copy)]
pub struct Exponents {
    pub p: f64,
    pub q: f64,
    kp: PowKind,
    kpm2: PowKind,
    kq: PowKind,
    kqm2: PowKind,
}

impl Exponents {
    /// Validates the pair; see [`Error::BadExponents`].
    pub fn new(p: f64, q: f64) -> Result<Self> {
        let ok = p.is_finite() && q.is_finite() && ((q >= 2.0 && p > q) || (p == 2.0 && q == 2.0));
        if !ok {
            return Err(Error::BadExponents { p, q });
        }
        Ok(Exponents {
            p,
            q,
            kp: PowKind::of(p),
            kpm2: PowKind::of(p - 2.0),
            kq: PowKind::of(q),
            kqm2: PowKind::of(q - 2.0),
        })
    }

    /// True for the `p = q = 2` diagnostic pair (purely linear operator).
    pub fn is_diagnostic_pair(&self) -> bool {
        self.p == 2.0 && self.q == 2.0
    }

    #[inline(always)]
    pub(crate) fn pow_p(&self, x: f64) -> f64 {
        self.kp.apply(x, self.p)
    }

    #[inline(always)]
    pub(crate) fn pow_pm2(&self, x: f64) -> f64 {
        self.kpm2.apply(x, self.p - 2.0)
    }

    #[inline(always)]
    pub(crate) fn pow_q(&self, x: f64) -> f64 {
        self.kq.apply(x, self.q)
    }

    #[inline(always)]
    pub(crate) fn pow_qm2(&self, x: f64) -> f64 {
        self.kqm2.apply(x, self.q - 2.0)
    }
}

/// Fast paths for `x^e` with `x >= 0`. The exponents that occur in practice
/// are small integers and half-integers; `powf` is the fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PowKind {
    Zero,
    Half,
    One,
    ThreeHalves,
    Two,
    FiveHalves,
    Three,
    Four,
    General,
}

impl PowKind {
    fn of(e: f64) -> Self {
        match e {
            x if x == 0.0 => PowKind::Zero,
            x if x == 0.5 => PowKind::Half,
            x if x == 1.0 => PowKind::One,
            x if x == 1.5 => PowKind::ThreeHalves,
            x if x == 2.0 => PowKind::Two,
            x if x == 2.5 => PowKind::FiveHalves,
            x if x == 3.0 => PowKind::Three,
            x if x == 4.0 => PowKind::Four,
            _ => PowKind::General,
        }
    }

    #[inline(always)]
    fn apply(self, x: f64, e: f64) -> f64 {
        debug_assert!(x >= 0.0);
        match self {
            PowKind::Zero => 1.0,
            PowKind::Half => x.sqrt(),
            PowKind::One => x,
            PowKind::ThreeHalves => x * x.sqrt(),
            PowKind::Two => x * x,
            PowKind::FiveHalves => x * x * x.sqrt(),
            PowKind::Three => x * x * x,
            PowKind::Four => {
                let y = x * x;
                y * y
            }
            PowKind::General => x.powf(e),
        }
    }
}

/// Cell-centered gradient of a field.
///
/// The zero field maps to zero gradients; affine fields are reproduced
/// exactly; for smooth fields the components converge at second order at the
/// cell centers.
pub fn gradient_field(u: &ScalarField) -> CellGradients {
    let grid = &u.grid;
    let v = &u.values;
    match grid.dim {
        1 => {
            let n = grid.counts[0];
            let h = grid.h[0];
            let comps = (0..n - 1).map(|c| (v[c + 1] - v[c]) / h).collect();
            CellGradients { dim: 1, comps }
        }
        _ => {
            let (nx, ny) = (grid.counts[0], grid.counts[1]);
            let (hx, hy) = (grid.h[0], grid.h[1]);
            let mut comps = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
            for i in 0..nx - 1 {
                for j in 0..ny - 1 {
                    let k00 = i * ny + j;
                    let (u00, u01, u10, u11) = (v[k00], v[k00 + 1], v[k00 + ny], v[k00 + ny + 1]);
                    comps.push((u10 - u00 + u11 - u01) / (2.0 * hx));
                    comps.push((u01 - u00 + u11 - u10) / (2.0 * hy));
                }
            }
            CellGradients { dim: 2, comps }
        }
    }
}

/// Energy pieces plus the exact gradients of numerator and denominator with
/// respect to the node values, assembled in a single cell pass.
///
/// `a[k] = ∂(ep + e2)/∂u_k` and `b[k] = ∂dq/∂u_k`; both vanish for nodes whose
/// adjacent cells all see zero data. `a` is also the discrete weak form of
/// `(-Δ_p - Δ) u` tested against the nodal basis function of node `k`, and `b`
/// the weak form of `|u|^{q-2} u`.
pub(crate) struct Assembled {
    pub bd: EnergyBreakdown,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub(crate) fn assemble(grid: &GridSpec, v: &[f64], ex: &Exponents) -> Assembled {
    debug_assert_eq!(v.len(), grid.num_nodes());
    let mut a = vec![0.0; v.len()];
    let mut b = vec![0.0; v.len()];
    let (mut sp, mut s2, mut sq) = (0.0f64, 0.0f64, 0.0f64);
    let vol = grid.cell_volume;
    match grid.dim {
        1 => {
            let n = grid.counts[0];
            let h = grid.h[0];
            for c in 0..n - 1 {
                let g = (v[c + 1] - v[c]) / h;
                let ag = g.abs();
                let g2 = g * g;
                let um = 0.5 * (v[c] + v[c + 1]);
                let au = um.abs();
                sp += ex.pow_p(ag);
                s2 += g2;
                sq += ex.pow_q(au);
                let w = (ex.pow_pm2(ag) + 1.0) * g / h * vol;
                a[c + 1] += w;
                a[c] -= w;
                let bb = ex.pow_qm2(au) * um * 0.5 * vol;
                b[c] += bb;
                b[c + 1] += bb;
            }
        }
        _ => {
            let (nx, ny) = (grid.counts[0], grid.counts[1]);
            let (hx, hy) = (grid.h[0], grid.h[1]);
            let (rx, ry) = (0.5 / hx, 0.5 / hy);
            for i in 0..nx - 1 {
                let row = i * ny;
                for j in 0..ny - 1 {
                    let k00 = row + j;
                    let (k01, k10, k11) = (k00 + 1, k00 + ny, k00 + ny + 1);
                    let (u00, u01, u10, u11) = (v[k00], v[k01], v[k10], v[k11]);
                    let gx = (u10 - u00 + u11 - u01) * rx;
                    let gy = (u01 - u00 + u11 - u10) * ry;
                    let g2 = gx * gx + gy * gy;
                    let ag = g2.sqrt();
                    let um = 0.25 * (u00 + u01 + u10 + u11);
                    let au = um.abs();
                    sp += ex.pow_p(ag);
                    s2 += g2;
                    sq += ex.pow_q(au);
                    let w = (ex.pow_pm2(ag) + 1.0) * vol;
                    let fx = w * gx * rx;
                    let fy = w * gy * ry;
                    a[k00] -= fx + fy;
                    a[k01] += fy - fx;
                    a[k10] += fx - fy;
                    a[k11] += fx + fy;
                    let bb = ex.pow_qm2(au) * um * 0.25 * vol;
                    b[k00] += bb;
                    b[k01] += bb;
                    b[k10] += bb;
                    b[k11] += bb;
                }
            }
        }
    }
    Assembled {
        bd: EnergyBreakdown {
            ep: vol * sp / ex.p,
            e2: vol * s2 / 2.0,
            dq: vol * sq / ex.q,
        },
        a,
        b,
    }
}

/// Applies the exact Hessian of the quadratic energy `e2` (the discrete
/// Dirichlet stiffness of this quadrature) to `x`, with homogeneous values at
/// non-free nodes: inputs there are treated as zero and outputs zeroed.
/// Symmetric positive definite on the free nodes whenever some cell touches a
/// pinned node, so it serves as the Sobolev preconditioner for descent.
pub(crate) fn stiffness_apply(grid: &GridSpec, x: &[f64], free: &[bool], y: &mut [f64]) {
    debug_assert_eq!(x.len(), grid.num_nodes());
    debug_assert_eq!(y.len(), grid.num_nodes());
    y.fill(0.0);
    let vol = grid.cell_volume;
    let at = |k: usize| if free[k] { x[k] } else { 0.0 };
    match grid.dim {
        1 => {
            let n = grid.counts[0];
            let h = grid.h[0];
            for c in 0..n - 1 {
                let g = (at(c + 1) - at(c)) / h;
                let w = g / h * vol;
                y[c + 1] += w;
                y[c] -= w;
            }
        }
        _ => {
            let (nx, ny) = (grid.counts[0], grid.counts[1]);
            let (hx, hy) = (grid.h[0], grid.h[1]);
            let (rx, ry) = (0.5 / hx, 0.5 / hy);
            for i in 0..nx - 1 {
                let row = i * ny;
                for j in 0..ny - 1 {
                    let k00 = row + j;
                    let (k01, k10, k11) = (k00 + 1, k00 + ny, k00 + ny + 1);
                    let gx = (at(k10) - at(k00) + at(k11) - at(k01)) * rx;
                    let gy = (at(k01) - at(k00) + at(k11) - at(k10)) * ry;
                    let fx = vol * gx * rx;
                    let fy = vol * gy * ry;
                    y[k00] -= fx + fy;
                    y[k01] += fy - fx;
                    y[k10] += fx - fy;
                    y[k11] += fx + fy;
                }
            }
        }
    }
    for k in 0..y.len() {
        if !free[k] {
            y[k] = 0.0;
        }
    }
}

/// Energy pieces only (cheaper pass for line searches).
pub(crate) fn energies_raw(grid: &GridSpec, v: &[f64], ex: &Exponents) -> EnergyBreakdown {
    debug_assert_eq!(v.len(), grid.num_nodes());
    let (mut sp, mut s2, mut sq) = (0.0f64, 0.0f64, 0.0f64);
    let vol = grid.cell_volume;
    match grid.dim {
        1 => {
            let n = grid.counts[0];
            let h = grid.h[0];
            for c in 0..n - 1 {
                let g = (v[c + 1] - v[c]) / h;
                let um = 0.5 * (v[c] + v[c + 1]);
                sp += ex.pow_p(g.abs());
                s2 += g * g;
                sq += ex.pow_q(um.abs());
            }
        }
        _ => {
            let (nx, ny) = (grid.counts[0], grid.counts[1]);
            let (hx, hy) = (grid.h[0], grid.h[1]);
            let (rx, ry) = (0.5 / hx, 0.5 / hy);
            for i in 0..nx - 1 {
                let row = i * ny;
                for j in 0..ny - 1 {
                    let k00 = row + j;
                    let (u00, u01, u10, u11) = (v[k00], v[k00 + 1], v[k00 + ny], v[k00 + ny + 1]);
                    let gx = (u10 - u00 + u11 - u01) * rx;
                    let gy = (u01 - u00 + u11 - u10) * ry;
                    let g2 = gx * gx + gy * gy;
                    let um = 0.25 * (u00 + u01 + u10 + u11);
                    sp += ex.pow_p(g2.sqrt());
                    s2 += g2;
                    sq += ex.pow_q(um.abs());
                }
            }
        }
    }
    EnergyBreakdown {
        ep: vol * sp / ex.p,
        e2: vol * s2 / 2.0,
        dq: vol * sq / ex.q,
    }
}

/// The three energy pieces of a field for exponents `(p, q)`.
pub fn energies(u: &ScalarField, p: f64, q: f64) -> Result<EnergyBreakdown> {
    let ex = Exponents::new(p, q)?;
    Ok(energies_raw(&u.grid, &u.values, &ex))
}

/// The quotient `R(u) = (ep + e2)/dq`.
///
/// Errors with [`Error::ZeroDenominator`] when `dq` vanishes (in particular
/// for the zero field).
pub fn rayleigh_quotient(u: &ScalarField, p: f64, q: f64) -> Result<f64> {
    energies(u, p, q)?
        .quotient()
        .ok_or(Error::ZeroDenominator)
}

/// Exact gradient of the discrete quotient with respect to the node values:
/// `((-Δ_p^h u - Δ^h u) · dq - (ep + e2) · |u|^{q-2} u) / dq²`, assembled from
/// the discrete weak form. The entries at box-boundary nodes are zero (those
/// values are pinned by the Dirichlet condition).
pub fn grad_rayleigh(u: &ScalarField, p: f64, q: f64) -> Result<ScalarField> {
    let ex = Exponents::new(p, q)?;
    let asm = assemble(&u.grid, &u.values, &ex);
    let r = asm.bd.quotient().ok_or(Error::ZeroDenominator)?;
    let mut values: Vec<f64> = asm
        .a
        .iter()
        .zip(&asm.b)
        .map(|(&ak, &bk)| (ak - r * bk) / asm.bd.dq)
        .collect();
    for k in 0..values.len() {
        if u.grid.is_boundary_node(k) {
            values[k] = 0.0;
        }
    }
    Ok(ScalarField {
        grid: u.grid.clone(),
        values,
    })
}

/// Weak-form residual of the eigenvalue equation at multiplier `lambda`:
/// for each node `k` away from the box boundary,
/// `r_k = ∫ (|∇u|^{p-2} + 1) ∇u · ∇φ_k - λ ∫ |u|^{q-2} u φ_k`
/// with `φ_k` the nodal basis function. Box-boundary entries are zero.
pub fn weak_form_residual(u: &ScalarField, lambda: f64, p: f64, q: f64) -> Result<ScalarField> {
    let ex = Exponents::new(p, q)?;
    let asm = assemble(&u.grid, &u.values, &ex);
    let mut values: Vec<f64> = asm
        .a
        .iter()
        .zip(&asm.b)
        .map(|(&ak, &bk)| ak - lambda * bk)
        .collect();
    for k in 0..values.len() {
        if u.grid.is_boundary_node(k) {
            values[k] = 0.0;
        }
    }
    Ok(ScalarField {
        grid: u.grid.clone(),
        values,
    })
}
