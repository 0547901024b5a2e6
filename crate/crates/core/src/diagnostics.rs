//! Diagnostics for computed optima: the boundary residual measure and its
//! growth rate, the domain-variation identity and its multiplier, the flux
//! limit at the free boundary, perimeter / density / Lipschitz scans, a
//! generalized weak identity, and the equivalence, continuity and
//! fixed-volume comparison experiments.
//!
//! Everything here is a pure function over immutable solver outputs. The
//! diagnostics falsify at a fixed mesh; they certify nothing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eigen::{solve_lambda1, EigenOptions};
use crate::error::{Error, Result};
use crate::field::{gradient_field, weak_form_residual, ScalarField};
use crate::free_boundary::{minimize_constrained, ProblemSpec};
use crate::geometry::{
    boundary_cells, boundary_interface_point, density_ratio, hausdorff_comp_distance, perimeter,
    reduced_boundary_proxy, support_mask, volume, BallSpec, ShapeMask, Window,
    DEFAULT_SUPPORT_TAU,
};
use crate::grid::GridSpec;

// ---------------------------------------------------------------------------
// Measures on the grid
// ---------------------------------------------------------------------------

/// A signed measure carried by the grid nodes.
///
/// The weight at node `i` is the mass the measure assigns to the hat function
/// of that node, so sums of weights over node sets approximate the measure of
/// the corresponding region.
#[derive(Debug, Clone)]
pub struct MeasureField {
    pub grid: GridSpec,
    /// One weight per node, in units of the weak residual.
    pub weights: Vec<f64>,
}

impl MeasureField {
    /// Wraps per-node weights after checking length and finiteness.
    pub fn new(grid: &GridSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.num_nodes() {
            return Err(Error::GridMismatch {
                context: format!(
                    "measure has {} weights but the grid has {} nodes",
                    weights.len(),
                    grid.num_nodes()
                ),
            });
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::ConfigInvalid {
                key: "weights".to_string(),
                reason: "measure weights must all be finite".to_string(),
            });
        }
        Ok(MeasureField {
            grid: grid.clone(),
            weights,
        })
    }

    /// Sum of all weights.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Smallest weight (negative values flag a failure of positivity).
    pub fn min_weight(&self) -> f64 {
        self.weights.iter().fold(f64::INFINITY, |m, &w| m.min(w))
    }

    /// Largest absolute weight.
    pub fn max_abs_weight(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, &w| m.max(w.abs()))
    }

    /// Mass inside a closed ball: the sum of weights of nodes lying in it.
    pub fn ball_mass(&self, ball: &BallSpec) -> f64 {
        let dim = self.grid.dim;
        (0..self.grid.num_nodes())
            .filter(|&k| ball.contains(self.grid.node_pos(k), dim))
            .map(|k| self.weights[k])
            .sum()
    }
}

/// The distributional residual `Δ_p u + Δ u + λ_c |u|^{q−2} u` as a nodal
/// measure: weight `i` is that expression paired weakly with the hat function
/// of node `i` (box-boundary nodes carry weight zero).
///
/// For an interior eigenpair every weight vanishes up to solver tolerance;
/// for a constrained optimum the weights are nonnegative and concentrate on
/// the free boundary, where the equation fails by a positive defect.
pub fn residual_measure(
    u: &ScalarField,
    lambda_c: f64,
    p: f64,
    q: f64,
) -> Result<MeasureField> {
    let r = weak_form_residual(u, lambda_c, p, q)?;
    let weights = r.values.iter().map(|&x| -x).collect();
    MeasureField::new(&u.grid, weights)
}

// ---------------------------------------------------------------------------
// Power-law growth fits
// ---------------------------------------------------------------------------

/// Log-log least-squares fit of values against radii:
/// `value ≈ constant · radius^slope`.
#[derive(Debug, Clone)]
pub struct GrowthFit {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub constant: f64,
}

/// Least-squares power law through the positive points; nonpositive values
/// carry no log-log information and are dropped.
fn fit_power_law(radii: &[f64], values: &[f64], context: &str) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(values.iter())
        .filter(|(_, &v)| v > 0.0)
        .map(|(&r, &v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::EmptyWindow {
            context: format!("{context}: fewer than two positive points to fit"),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let constant = (my - slope * mx).exp();
    Ok((slope, constant))
}

/// Growth-fit radii must stay above four cells (discreteness floor) and below
/// a quarter of the box diameter (windows leaving the box), and be strictly
/// increasing so the fit abscissas are distinct.
fn validate_growth_radii(grid: &GridSpec, radii: &[f64]) -> Result<()> {
    let lo = 4.0 * grid.h_max();
    let hi = grid.diameter() / 4.0;
    let reject = |reason: String| {
        Err(Error::ConfigInvalid {
            key: "radii".to_string(),
            reason,
        })
    };
    if radii.is_empty() {
        return reject("need at least one radius".to_string());
    }
    for &r in radii {
        if !r.is_finite() || r < lo * (1.0 - 1e-9) || r > hi * (1.0 + 1e-9) {
            return reject(format!("radius {r} outside the usable window [{lo}, {hi}]"));
        }
    }
    for w in radii.windows(2) {
        if w[1] <= w[0] {
            return reject(format!("radii must be strictly increasing, got {w:?}"));
        }
    }
    Ok(())
}

/// Average ball mass of the measure around the given centers, fitted to a
/// power law in the radius. The fitted slope is the observable growth rate,
/// to be compared with `d − 1` for boundary-concentrated measures.
pub fn measure_growth(
    m: &MeasureField,
    centers: &[[f64; 2]],
    radii: &[f64],
) -> Result<GrowthFit> {
    validate_growth_radii(&m.grid, radii)?;
    if centers.is_empty() {
        return Err(Error::EmptyWindow {
            context: "measure growth needs at least one center".to_string(),
        });
    }
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut acc = 0.0;
        for &c in centers {
            acc += m.ball_mass(&BallSpec::new(c, r)?);
        }
        values.push(acc / centers.len() as f64);
    }
    let (slope, constant) = fit_power_law(radii, &values, "measure growth")?;
    Ok(GrowthFit {
        radii: radii.to_vec(),
        values,
        slope,
        constant,
    })
}

// ---------------------------------------------------------------------------
// Compactly supported test fields
// ---------------------------------------------------------------------------

/// Support radius of the bump profile, in units of `sigma`.
const BUMP_CUT: f64 = 6.0;

/// A smooth, compactly supported vector field on the box:
/// `Φ(x) = g(x) · direction` with the radial profile
/// `g(x) = exp(−|x−center|²/(2σ²)) − exp(−18)` inside the ball of radius
/// `6σ` and zero outside. The constant shift makes the profile hit zero
/// exactly at the support edge, so the support is genuinely compact.
///
/// The Jacobian and divergence are analytic; construction cross-checks them
/// against central differences and rejects fields whose support is not
/// strictly inside the box.
#[derive(Debug, Clone)]
pub struct VectorTestField {
    pub center: [f64; 2],
    pub sigma: f64,
    pub direction: [f64; 2],
    dim: usize,
}

impl VectorTestField {
    pub fn new(
        grid: &GridSpec,
        center: [f64; 2],
        sigma: f64,
        direction: [f64; 2],
    ) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::ConfigInvalid {
                key: "sigma".to_string(),
                reason: format!("bump width must be positive and finite, got {sigma}"),
            });
        }
        if !direction.iter().all(|d| d.is_finite()) {
            return Err(Error::ConfigInvalid {
                key: "direction".to_string(),
                reason: "direction components must be finite".to_string(),
            });
        }
        let dim = grid.dim;
        let norm2: f64 = direction[..dim].iter().map(|d| d * d).sum();
        if norm2 == 0.0 {
            return Err(Error::ConfigInvalid {
                key: "direction".to_string(),
                reason: "direction must be nonzero".to_string(),
            });
        }
        for a in dim..2 {
            if direction[a] != 0.0 {
                return Err(Error::ConfigInvalid {
                    key: "direction".to_string(),
                    reason: format!(
                        "component {a} lies outside a {dim}-dimensional grid and must be zero"
                    ),
                });
            }
        }
        for a in 0..dim {
            let reach = BUMP_CUT * sigma;
            if !center[a].is_finite()
                || center[a] - reach <= 0.0
                || center[a] + reach >= grid.extents[a]
            {
                return Err(Error::OutOfBox {
                    context: format!(
                        "bump support [{:.6}, {:.6}] leaves the box extent [0, {:.6}] on axis {a}",
                        center[a] - reach,
                        center[a] + reach,
                        grid.extents[a]
                    ),
                });
            }
        }
        let field = VectorTestField {
            center,
            sigma,
            direction,
            dim,
        };
        field.spot_check()?;
        Ok(field)
    }

    /// Subtracted so the profile vanishes exactly at radius `6σ`.
    fn shift() -> f64 {
        (-BUMP_CUT * BUMP_CUT / 2.0).exp()
    }

    fn radius2(&self, x: [f64; 2]) -> f64 {
        let mut r2 = 0.0;
        for a in 0..self.dim {
            let d = x[a] - self.center[a];
            r2 += d * d;
        }
        r2
    }

    /// Scalar profile `g(x)`; zero outside the support ball.
    pub fn profile(&self, x: [f64; 2]) -> f64 {
        let r2 = self.radius2(x);
        let cut = BUMP_CUT * self.sigma;
        if r2 >= cut * cut {
            0.0
        } else {
            (-r2 / (2.0 * self.sigma * self.sigma)).exp() - Self::shift()
        }
    }

    fn profile_grad(&self, x: [f64; 2]) -> [f64; 2] {
        let r2 = self.radius2(x);
        let cut = BUMP_CUT * self.sigma;
        let mut g = [0.0, 0.0];
        if r2 < cut * cut {
            let s2 = self.sigma * self.sigma;
            let e = (-r2 / (2.0 * s2)).exp();
            for a in 0..self.dim {
                g[a] = -(x[a] - self.center[a]) / s2 * e;
            }
        }
        g
    }

    /// The vector field at a point.
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.profile(x);
        [g * self.direction[0], g * self.direction[1]]
    }

    /// Analytic Jacobian: `J[i][j] = ∂Φ_i/∂x_j = direction_i · ∂g/∂x_j`.
    pub fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let dg = self.profile_grad(x);
        [
            [self.direction[0] * dg[0], self.direction[0] * dg[1]],
            [self.direction[1] * dg[0], self.direction[1] * dg[1]],
        ]
    }

    /// Analytic divergence `∇·Φ = Σ_a direction_a · ∂g/∂x_a`.
    pub fn divergence(&self, x: [f64; 2]) -> f64 {
        let dg = self.profile_grad(x);
        let mut d = 0.0;
        for a in 0..self.dim {
            d += self.direction[a] * dg[a];
        }
        d
    }

    /// Central-difference cross-check of the analytic Jacobian and
    /// divergence at a few points well inside the support.
    fn spot_check(&self) -> Result<()> {
        let offsets: &[[f64; 2]] = if self.dim == 1 {
            &[[0.4, 0.0], [-0.9, 0.0], [1.3, 0.0]]
        } else {
            &[[0.4, 0.0], [0.0, -0.9], [0.9, 1.1]]
        };
        let step = 1e-5 * self.sigma;
        // First derivatives of the unit-amplitude profile scale like 1/σ.
        let tol_base = 1.0 + 1.0 / self.sigma;
        for off in offsets {
            let mut x = self.center;
            for a in 0..self.dim {
                x[a] += off[a] * self.sigma;
            }
            let jac = self.jacobian(x);
            let mut fd_div = 0.0;
            for j in 0..self.dim {
                let mut xp = x;
                let mut xm = x;
                xp[j] += step;
                xm[j] -= step;
                let fp = self.eval(xp);
                let fm = self.eval(xm);
                for i in 0..self.dim {
                    let fd = (fp[i] - fm[i]) / (2.0 * step);
                    if (fd - jac[i][j]).abs() > 1e-8 * (tol_base + jac[i][j].abs()) {
                        return Err(Error::ConfigInvalid {
                            key: "jacobian".to_string(),
                            reason: format!(
                                "analytic entry ({i},{j}) = {} disagrees with the finite \
                                 difference {fd} at offset {off:?}",
                                jac[i][j]
                            ),
                        });
                    }
                }
                fd_div += (fp[j] - fm[j]) / (2.0 * step);
            }
            let div = self.divergence(x);
            if (fd_div - div).abs() > 1e-8 * (tol_base + div.abs()) {
                return Err(Error::ConfigInvalid {
                    key: "divergence".to_string(),
                    reason: format!(
                        "analytic divergence {div} disagrees with the finite difference \
                         {fd_div} at offset {off:?}"
                    ),
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Domain-variation identity
// ---------------------------------------------------------------------------

/// Mean of the node values at the corners of a cell — the same cell value the
/// energy quadrature uses.
fn cell_mean(u: &ScalarField, cell: usize) -> f64 {
    let grid = &u.grid;
    let cc = grid.cell_coords(cell);
    if grid.dim == 1 {
        0.5 * (u.values[grid.node_index(&[cc[0]])] + u.values[grid.node_index(&[cc[0] + 1])])
    } else {
        0.25 * (u.values[grid.node_index(&[cc[0], cc[1]])]
            + u.values[grid.node_index(&[cc[0] + 1, cc[1]])]
            + u.values[grid.node_index(&[cc[0], cc[1] + 1])]
            + u.values[grid.node_index(&[cc[0] + 1, cc[1] + 1])])
    }
}

/// Smallest corner value of a cell; positive exactly when the cell lies
/// entirely inside the positivity set.
fn cell_min(u: &ScalarField, cell: usize) -> f64 {
    let grid = &u.grid;
    let cc = grid.cell_coords(cell);
    if grid.dim == 1 {
        u.values[grid.node_index(&[cc[0]])].min(u.values[grid.node_index(&[cc[0] + 1])])
    } else {
        u.values[grid.node_index(&[cc[0], cc[1]])]
            .min(u.values[grid.node_index(&[cc[0] + 1, cc[1]])])
            .min(u.values[grid.node_index(&[cc[0], cc[1] + 1])])
            .min(u.values[grid.node_index(&[cc[0] + 1, cc[1] + 1])])
    }
}

/// Left-hand side of the domain-variation identity for the test field `phi`:
///
/// `∫|∇u|^{p−2}(DΦ∇u,∇u) + ∫(DΦ∇u,∇u) − (1/p)∫|∇u|^p ∇·Φ`
/// `− (1/2)∫|∇u|² ∇·Φ + (λ_c/q)∫|u|^q ∇·Φ`,
///
/// evaluated by the midpoint rule with the analytic `DΦ` and `∇·Φ`. At an
/// optimum this equals `Λ·∫_{Ω_u}∇·Φ` for a single constant `Λ > 0`, so it
/// vanishes for test fields supported inside the positivity region.
pub fn el_lhs(u: &ScalarField, phi: &VectorTestField, lambda_c: f64, p: f64, q: f64) -> f64 {
    el_lhs_scaled(u, phi, lambda_c, p, q).0
}

/// Same quadrature as [`el_lhs`], returning `(value, scale)` where `scale`
/// sums the absolute values of the five terms — the magnitude against which
/// "the identity vanishes" is judged.
pub fn el_lhs_scaled(
    u: &ScalarField,
    phi: &VectorTestField,
    lambda_c: f64,
    p: f64,
    q: f64,
) -> (f64, f64) {
    let grid = &u.grid;
    let grads = gradient_field(u);
    let vol = grid.cell_volume;
    let mut value = 0.0;
    let mut scale = 0.0;
    for ci in 0..grid.num_cells() {
        let x = grid.cell_center(ci);
        let g = grads.at(ci);
        let ag = grads.norm_at(ci);
        let jac = phi.jacobian(x);
        let div = phi.divergence(x);
        let mut jg = [0.0, 0.0];
        for i in 0..2 {
            jg[i] = jac[i][0] * g[0] + jac[i][1] * g[1];
        }
        let dphig = jg[0] * g[0] + jg[1] * g[1];
        let um = cell_mean(u, ci).abs();
        let t1 = ag.powf(p - 2.0) * dphig;
        let t2 = dphig;
        let t3 = -ag.powf(p) / p * div;
        let t4 = -0.5 * ag * ag * div;
        let t5 = lambda_c / q * um.powf(q) * div;
        value += (t1 + t2 + t3 + t4 + t5) * vol;
        scale += (t1.abs() + t2.abs() + t3.abs() + t4.abs() + t5.abs()) * vol;
    }
    (value, scale)
}

/// Least-squares estimate of the multiplier `Λ` from the proportionality
/// `el_lhs(Φ) = Λ · ∫_{Ω_u}∇·Φ` over a family of test fields, together with
/// the coefficient of variation of the per-field ratios.
///
/// Fields whose support divergence nearly cancels over `Ω_u` (relative
/// cancellation below 0.1%) carry no information about `Λ` and are skipped;
/// fewer than four informative fields is an error, because a one-field
/// estimate cannot exhibit the required consistency across fields.
pub fn estimate_lambda(
    u: &ScalarField,
    phis: &[VectorTestField],
    spec: &ProblemSpec,
) -> Result<(f64, f64)> {
    let grid = &u.grid;
    let supp = support_mask(u, DEFAULT_SUPPORT_TAU);
    let vol = grid.cell_volume;
    let mut pairs = Vec::new();
    for phi in phis {
        let mut den = 0.0;
        let mut den_scale = 0.0;
        for ci in 0..grid.num_cells() {
            if supp.cells[ci] {
                let d = phi.divergence(grid.cell_center(ci));
                den += d * vol;
                den_scale += d.abs() * vol;
            }
        }
        if den_scale > 0.0 && den.abs() > 1e-3 * den_scale {
            let lhs = el_lhs(u, phi, spec.lambda_c, spec.p, spec.q);
            pairs.push((lhs, den));
        }
    }
    if pairs.len() < 4 {
        return Err(Error::DegenerateFields {
            context: format!(
                "only {} of {} test fields have support divergence bounded away from zero; \
                 need at least 4 boundary-crossing fields",
                pairs.len(),
                phis.len()
            ),
        });
    }
    let num: f64 = pairs.iter().map(|(l, d)| l * d).sum();
    let den2: f64 = pairs.iter().map(|(_, d)| d * d).sum();
    let lambda = num / den2;
    let ratios: Vec<f64> = pairs.iter().map(|(l, d)| l / d).collect();
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let spread = if mean == 0.0 {
        f64::INFINITY
    } else {
        var.sqrt() / mean.abs()
    };
    Ok((lambda, spread))
}

/// The boundary-layer flux functional
///
/// `(1/ε) ∫_{0<u<ε} (Φ·∇u) · ( (1−p)/p·|∇u|^p − (1/2)|∇u|² + Λ )`
///
/// for each `ε` in the list, in list order. At an optimum the values decay
/// toward zero as `ε` shrinks — down to the mesh floor around `ε ≈ 4h`,
/// below which the strip `{0<u<ε}` degenerates to fewer cells than the
/// quadrature can resolve. `lambda_big` is the multiplier `Λ`, normally
/// taken from [`estimate_lambda`] (pass 0 for fields with no active
/// constraint, which turns the value into a plain boundary-strip energy).
pub fn flux_limit(
    u: &ScalarField,
    phi: &VectorTestField,
    spec: &ProblemSpec,
    lambda_big: f64,
    eps_list: &[f64],
) -> Vec<(f64, f64)> {
    flux_limit_collar(u, phi, spec, lambda_big, eps_list, FLUX_COLLAR)
}

/// Width, in whole cells, of the interface collar that [`flux_limit`]
/// excludes from the strip quadrature.
pub const FLUX_COLLAR: usize = 1;

/// [`flux_limit`] with an explicit collar width.
pub fn flux_limit_collar(
    u: &ScalarField,
    phi: &VectorTestField,
    spec: &ProblemSpec,
    lambda_big: f64,
    eps_list: &[f64],
    collar: usize,
) -> Vec<(f64, f64)> {
    let grid = &u.grid;
    let grads = gradient_field(u);
    let vol = grid.cell_volume;
    let p = spec.p;
    // The strip {0 < u < eps} lies inside the open positivity region, so
    // cells straddling the free boundary are not valid sample points: they
    // see the jump to zero and carry an O(1) gradient artifact. The first
    // fully-interior ring still feels the one-sided interface layer (its
    // gradients overshoot), so admissible cells must sit at least one full
    // cell inside the positivity set. The excluded collar has width O(h),
    // a vanishing fraction of any fixed strip, so the quadrature stays
    // consistent with the strip integral.
    let k = collar as i64;
    let admissible: Vec<bool> = (0..grid.num_cells())
        .map(|ci| {
            let cc = grid.cell_coords(ci);
            let mut ok = true;
            if grid.dim == 1 {
                let last = (grid.counts[0] - 2) as i64;
                ok &= cc[0] as i64 >= k && cc[0] as i64 + k <= last;
                if ok {
                    for dx in -k..=k {
                        ok &= cell_min(u, grid.cell_index(&[(cc[0] as i64 + dx) as usize])) > 0.0;
                    }
                }
            } else {
                let last = [(grid.counts[0] - 2) as i64, (grid.counts[1] - 2) as i64];
                ok &= cc[0] as i64 >= k
                    && cc[0] as i64 + k <= last[0]
                    && cc[1] as i64 >= k
                    && cc[1] as i64 + k <= last[1];
                if ok {
                    'scan: for dx in -k..=k {
                        for dy in -k..=k {
                            let nb = [(cc[0] as i64 + dx) as usize, (cc[1] as i64 + dy) as usize];
                            if cell_min(u, grid.cell_index(&nb)) <= 0.0 {
                                ok = false;
                                break 'scan;
                            }
                        }
                    }
                }
            }
            ok
        })
        .collect();
    let mut curve = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut sum = 0.0;
        for ci in 0..grid.num_cells() {
            if !admissible[ci] {
                continue;
            }
            let um = cell_mean(u, ci);
            if um < eps {
                let x = grid.cell_center(ci);
                let g = grads.at(ci);
                let ag = grads.norm_at(ci);
                let ph = phi.eval(x);
                let flux = ph[0] * g[0] + ph[1] * g[1];
                sum += flux * ((1.0 - p) / p * ag.powf(p) - 0.5 * ag * ag + lambda_big) * vol;
            }
        }
        curve.push((eps, sum / eps));
    }
    curve
}

// ---------------------------------------------------------------------------
// Perimeter against measure
// ---------------------------------------------------------------------------

/// Growth fits of the relative perimeter and of the measure over the same
/// windows, plus the worst perimeter-to-measure ratio observed.
#[derive(Debug, Clone)]
pub struct PerimeterMeasureReport {
    pub perimeter_fit: GrowthFit,
    pub measure_fit: GrowthFit,
    /// Largest `P(Ω, B)/μ(B)` over individual windows with positive
    /// perimeter; infinite when some window sees perimeter but no mass.
    pub max_ratio: f64,
}

/// Probes the comparison `P(Ω, B(x,r)) ≤ C·μ(B(x,r))` on a family of ball
/// windows: fits both quantities' growth in `r` and reports the largest
/// per-window ratio (the observable `C`). Windows touching neither the
/// boundary nor the measure contribute zeros, which the fits drop.
pub fn perimeter_vs_measure(
    mask: &ShapeMask,
    m: &MeasureField,
    centers: &[[f64; 2]],
    radii: &[f64],
) -> Result<PerimeterMeasureReport> {
    if mask.grid.num_nodes() != m.grid.num_nodes() || mask.grid.extents != m.grid.extents {
        return Err(Error::GridMismatch {
            context: "shape mask and measure live on different grids".to_string(),
        });
    }
    validate_growth_radii(&m.grid, radii)?;
    if centers.is_empty() {
        return Err(Error::EmptyWindow {
            context: "perimeter-measure comparison needs at least one center".to_string(),
        });
    }
    let mut per_vals = Vec::with_capacity(radii.len());
    let mut mea_vals = Vec::with_capacity(radii.len());
    let mut max_ratio: f64 = 0.0;
    for &r in radii {
        let mut pacc = 0.0;
        let mut macc = 0.0;
        for &c in centers {
            let ball = BallSpec::new(c, r)?;
            let pwin = perimeter(mask, Some(&Window::Ball(ball.clone())));
            let mwin = m.ball_mass(&ball);
            pacc += pwin;
            macc += mwin;
            if pwin > 0.0 {
                max_ratio = max_ratio.max(if mwin > 0.0 { pwin / mwin } else { f64::INFINITY });
            }
        }
        per_vals.push(pacc / centers.len() as f64);
        mea_vals.push(macc / centers.len() as f64);
    }
    let (ps, pc) = fit_power_law(radii, &per_vals, "window perimeter")?;
    let (ms, mc) = fit_power_law(radii, &mea_vals, "window measure")?;
    Ok(PerimeterMeasureReport {
        perimeter_fit: GrowthFit {
            radii: radii.to_vec(),
            values: per_vals,
            slope: ps,
            constant: pc,
        },
        measure_fit: GrowthFit {
            radii: radii.to_vec(),
            values: mea_vals,
            slope: ms,
            constant: mc,
        },
        max_ratio,
    })
}

// ---------------------------------------------------------------------------
// Density scan
// ---------------------------------------------------------------------------

/// Extremes of the volume-density ratio over all boundary cells at one
/// radius, for the shape and (by complementarity) for its complement.
#[derive(Debug, Clone)]
pub struct DensityBounds {
    pub radius: f64,
    /// Smallest `|Ω ∩ B|/|B ∩ D|` over boundary-centered balls.
    pub lower: f64,
    /// Largest such ratio.
    pub upper: f64,
    /// Smallest complement ratio, `1 − upper`.
    pub comp_lower: f64,
    /// Largest complement ratio, `1 − lower`.
    pub comp_upper: f64,
}

/// Scans the density ratio of the shape in balls centered at every boundary
/// cell's interface point, one row per radius. Nondegenerate shapes keep the
/// ratios strictly inside `(0, 1)`: the shape and its complement both retain
/// a definite volume fraction near the boundary at all scales.
pub fn density_scan(mask: &ShapeMask, radii: &[f64]) -> Result<Vec<DensityBounds>> {
    let bcells = boundary_cells(mask);
    if bcells.is_empty() {
        return Err(Error::NoBoundary);
    }
    for &r in radii {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::ConfigInvalid {
                key: "radii".to_string(),
                reason: format!("density radii must be positive and finite, got {r}"),
            });
        }
    }
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut lower = f64::INFINITY;
        let mut upper = f64::NEG_INFINITY;
        for &ci in &bcells {
            let center = boundary_interface_point(mask, ci);
            let ratio = density_ratio(mask, &BallSpec::new(center, r)?)?;
            lower = lower.min(ratio);
            upper = upper.max(ratio);
        }
        out.push(DensityBounds {
            radius: r,
            lower,
            upper,
            comp_lower: 1.0 - upper,
            comp_upper: 1.0 - lower,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Lipschitz estimate
// ---------------------------------------------------------------------------

/// Largest cell-gradient magnitude over cells whose centers keep at least
/// `interior_margin` distance from the box boundary. Stability of this
/// number under mesh refinement is the observable form of interior
/// Lipschitz regularity.
pub fn lipschitz_estimate(u: &ScalarField, interior_margin: f64) -> Result<f64> {
    let grid = &u.grid;
    let floor = 2.0 * grid.h_max();
    if !(interior_margin.is_finite() && interior_margin >= floor * (1.0 - 1e-12)) {
        return Err(Error::ConfigInvalid {
            key: "interior_margin".to_string(),
            reason: format!(
                "margin must be at least two cells ({floor:.6e}), got {interior_margin:.6e}"
            ),
        });
    }
    let grads = gradient_field(u);
    let mut best: f64 = 0.0;
    for ci in 0..grid.num_cells() {
        let x = grid.cell_center(ci);
        if grid.distance_to_box_boundary(&x[..grid.dim]) >= interior_margin {
            best = best.max(grads.norm_at(ci));
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Generalized weak identity
// ---------------------------------------------------------------------------

/// Defect and magnitude of the composite-test identity; the identity holds
/// when `defect ≤ tol · scale`.
#[derive(Debug, Clone, Copy)]
pub struct WeakIdentityReport {
    pub defect: f64,
    pub scale: f64,
}

/// Tests the identity obtained by pairing the weak equation with the
/// composite function `P(u)·Ψ`:
///
/// `∫P′(u)(|∇u|^p + |∇u|²)Ψ + ∫P(u)(|∇u|^{p−2}+1)∇u·∇Ψ`
/// `− λ_c∫P(u)|u|^{q−2}uΨ = 0`  (for `P(0) = 0`).
///
/// The discrete evaluation pairs the nodal weak residual with the nodal
/// values `P(u_i)Ψ(x_i)` — the quadrature consistent with the discrete
/// eigenpair, under which the chain-rule expansion above is summed exactly.
/// `scale` is the same pairing with the stiffness and mass magnitudes kept
/// separate and absolute, so `defect/scale` measures genuine cancellation.
pub fn weak_identity_p(
    u: &ScalarField,
    p_fn: impl Fn(f64) -> f64,
    psi: impl Fn([f64; 2]) -> f64,
    spec: &ProblemSpec,
) -> Result<WeakIdentityReport> {
    if p_fn(0.0).abs() > 1e-12 {
        return Err(Error::ConfigInvalid {
            key: "P".to_string(),
            reason: format!("P must vanish at zero, got P(0) = {}", p_fn(0.0)),
        });
    }
    // Gradient side alone (λ = 0), then the full residual; their difference
    // is the mass side.
    let a = weak_form_residual(u, 0.0, spec.p, spec.q)?;
    let r = weak_form_residual(u, spec.lambda_c, spec.p, spec.q)?;
    let grid = &u.grid;
    let mut defect = 0.0;
    let mut scale = 0.0;
    for k in 0..grid.num_nodes() {
        let test = p_fn(u.values[k]) * psi(grid.node_pos(k));
        defect += r.values[k] * test;
        let mass = a.values[k] - r.values[k];
        scale += (a.values[k].abs() + mass.abs()) * test.abs();
    }
    Ok(WeakIdentityReport { defect, scale })
}

// ---------------------------------------------------------------------------
// Equivalence of the two problem forms
// ---------------------------------------------------------------------------

/// Outcome of solving the constrained problem and re-solving the plain
/// eigenvalue problem on the support the constrained solution selected.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// Multiplier realized by the constrained solve.
    pub constrained_lambda: f64,
    /// First eigenvalue of the extracted support.
    pub support_lambda: f64,
    /// `|constrained − support| / |support|`.
    pub relative_gap: f64,
    /// Volume of the extracted support.
    pub support_volume: f64,
}

/// Positive product-of-sines seed, the default start for solves that are not
/// given an initial field.
pub(crate) fn default_init(grid: &GridSpec) -> ScalarField {
    let dim = grid.dim;
    let extents = grid.extents.clone();
    ScalarField::from_fn(grid, move |x| {
        let mut v = 1.0;
        for a in 0..dim {
            v *= (std::f64::consts::PI * x[a] / extents[a]).sin();
        }
        v
    })
}

/// Checks that minimizing over fields with a volume budget and minimizing
/// the eigenvalue over the selected support agree: runs the constrained
/// solver, extracts the support, re-solves the eigenvalue problem there and
/// reports both values with their relative gap.
pub fn equivalence_check(
    spec: &ProblemSpec,
    grid: &GridSpec,
    opts: &EigenOptions,
) -> Result<EquivalenceReport> {
    let init = default_init(grid);
    let fb = minimize_constrained(spec, grid, &init, opts)?;
    let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
    let eig = solve_lambda1(&supp, spec.p, spec.q, opts)?;
    let denom = eig.lambda.abs().max(f64::MIN_POSITIVE);
    Ok(EquivalenceReport {
        constrained_lambda: fb.lambda_c,
        support_lambda: eig.lambda,
        relative_gap: (fb.lambda_c - eig.lambda).abs() / denom,
        support_volume: volume(&supp),
    })
}

// ---------------------------------------------------------------------------
// Spectral continuity
// ---------------------------------------------------------------------------

/// One perturbed shape: its complement-Hausdorff distance to the base shape,
/// its eigenvalue, and the gap to the base eigenvalue.
#[derive(Debug, Clone)]
pub struct ContinuityRow {
    pub distance: f64,
    pub lambda: f64,
    pub gap: f64,
}

/// Solves the eigenvalue problem on the base shape and on every
/// perturbation, returning rows `(d_{H^c}, λ, |λ − λ_base|)` sorted by
/// distance. Spectral continuity predicts the gaps shrink with the
/// distance.
pub fn continuity_experiment(
    base: &ShapeMask,
    perturbations: &[ShapeMask],
    spec: &ProblemSpec,
    opts: &EigenOptions,
) -> Result<Vec<ContinuityRow>> {
    let lambda0 = solve_lambda1(base, spec.p, spec.q, opts)?.lambda;
    let mut rows = Vec::with_capacity(perturbations.len());
    for mask in perturbations {
        let distance = hausdorff_comp_distance(mask, base)?;
        let lambda = solve_lambda1(mask, spec.p, spec.q, opts)?.lambda;
        rows.push(ContinuityRow {
            distance,
            lambda,
            gap: (lambda - lambda0).abs(),
        });
    }
    rows.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Fixed-volume shape comparison
// ---------------------------------------------------------------------------

/// A shape's position in the eigenvalue ranking.
#[derive(Debug, Clone)]
pub struct ShapeRank {
    /// Index of the shape in the input list.
    pub index: usize,
    pub lambda: f64,
    pub volume: f64,
}

/// Solves the eigenvalue problem on each shape and ranks them by eigenvalue,
/// ascending. The shapes must have (rasterized) equal volumes: mismatch
/// beyond one boundary band of cells — `max(cell volume, h · perimeter)` —
/// is rejected, since rasterizing smooth shapes onto cells cannot do better
/// than a band of boundary cells.
pub fn faber_krahn_compare(
    shapes: &[ShapeMask],
    spec: &ProblemSpec,
    opts: &EigenOptions,
) -> Result<Vec<ShapeRank>> {
    if shapes.is_empty() {
        return Err(Error::NoDomain {
            context: "shape comparison needs at least one shape".to_string(),
        });
    }
    let volumes: Vec<f64> = shapes.iter().map(volume).collect();
    let mut tolerance: f64 = 0.0;
    for s in shapes {
        let band = (s.grid.h_max() * perimeter(s, None)).max(s.grid.cell_volume);
        tolerance = tolerance.max(band);
    }
    let spread = volumes.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - volumes.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread > tolerance {
        return Err(Error::VolumeMismatch {
            volumes,
            tolerance,
        });
    }
    let mut ranks = Vec::with_capacity(shapes.len());
    for (i, s) in shapes.iter().enumerate() {
        let eig = solve_lambda1(s, spec.p, spec.q, opts)?;
        ranks.push(ShapeRank {
            index: i,
            lambda: eig.lambda,
            volume: volumes[i],
        });
    }
    ranks.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(ranks)
}

// ---------------------------------------------------------------------------
// Probe placement
// ---------------------------------------------------------------------------

/// Deterministic sample of boundary interface points, for centering growth
/// and density probes. Returns all boundary points when fewer than `count`
/// exist.
pub fn boundary_probe_points(
    mask: &ShapeMask,
    count: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let mut cells = boundary_cells(mask);
    if cells.is_empty() {
        return Err(Error::NoBoundary);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    cells.truncate(count.min(cells.len()));
    Ok(cells
        .iter()
        .map(|&ci| boundary_interface_point(mask, ci))
        .collect())
}

/// Boundary-crossing test bumps for the multiplier estimate: centers at
/// interface points of reduced-boundary cells (falling back to all boundary
/// cells when the density filter leaves none), widths drawn from `[h, 2h]`
/// so the support diameter spans 6–12 cells, directions drawn uniformly.
/// Bumps whose support would leave the box are skipped.
pub fn boundary_bumps(mask: &ShapeMask, count: usize, seed: u64) -> Result<Vec<VectorTestField>> {
    let grid = &mask.grid;
    let h = grid.h_max();
    let mut cells = match reduced_boundary_proxy(mask, 8.0 * h, 0.05) {
        Ok(v) if !v.is_empty() => v,
        _ => boundary_cells(mask),
    };
    if cells.is_empty() {
        return Err(Error::NoBoundary);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    let mut out = Vec::with_capacity(count);
    let max_attempts = 20 * count.max(1);
    let mut attempts = 0;
    'search: while out.len() < count && attempts < max_attempts {
        for &ci in &cells {
            if out.len() >= count || attempts >= max_attempts {
                break 'search;
            }
            attempts += 1;
            let center = boundary_interface_point(mask, ci);
            let sigma = h * rng.random_range(1.0..2.0);
            let direction = if grid.dim == 1 {
                [if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0]
            } else {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                [angle.cos(), angle.sin()]
            };
            if let Ok(f) = VectorTestField::new(grid, center, sigma, direction) {
                out.push(f);
            }
        }
    }
    if out.len() < count {
        return Err(Error::DegenerateFields {
            context: format!(
                "only {} of {count} requested boundary bumps fit strictly inside the box",
                out.len()
            ),
        });
    }
    Ok(out)
}

/// Test bumps for the boundary-strip flux functional: centers retract from
/// interface points by `10h` along the inward normal (taken from `∇u`, which
/// points into the positivity set), widths are `6h`, directions outward.
///
/// [`flux_limit`] samples the strip `{0 < u < ε}` away from the interface
/// collar, so a bump centered *on* the boundary wastes most of its weight on
/// excluded cells; retracting one strip-depth puts the Gaussian's mass where
/// the wider windows (`ε` up to `16h` in solution value, about `12h` in
/// depth) actually integrate. Bumps at degenerate-gradient cells or whose
/// support would leave the box are skipped.
pub fn flux_bumps(
    u: &ScalarField,
    mask: &ShapeMask,
    count: usize,
    seed: u64,
) -> Result<Vec<VectorTestField>> {
    let grid = &mask.grid;
    if u.grid != *grid {
        return Err(Error::GridMismatch {
            context: "flux bumps need the solution and mask on the same grid".to_string(),
        });
    }
    let h = grid.h_max();
    let sigma = 6.0 * h;
    let depth = 10.0 * h;
    let mut cells = boundary_cells(mask);
    if cells.is_empty() {
        return Err(Error::NoBoundary);
    }
    let grads = gradient_field(u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    let mut out = Vec::with_capacity(count);
    for &ci in &cells {
        if out.len() >= count {
            break;
        }
        let point = boundary_interface_point(mask, ci);
        let g = grads.at(ci);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if norm <= f64::EPSILON {
            continue;
        }
        let inward = [g[0] / norm, g[1] / norm];
        let center = [point[0] + depth * inward[0], point[1] + depth * inward[1]];
        if let Ok(f) = VectorTestField::new(grid, center, sigma, [-inward[0], -inward[1]]) {
            out.push(f);
        }
    }
    if out.len() < count {
        return Err(Error::DegenerateFields {
            context: format!(
                "only {} of {count} requested flux bumps fit strictly inside the box",
                out.len()
            ),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::solve_lambda1;
    use crate::field::ScalarField;
    use crate::free_boundary::FbResult;
    use crate::geometry::{make_ball, make_rect};
    use crate::grid::make_grid;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    fn opts() -> EigenOptions {
        EigenOptions::default()
    }

    /// Shared constrained optimum on (0,1), budget 1/2, p=3, q=2.5.
    fn optimum_1d() -> &'static (ProblemSpec, FbResult) {
        static OPT: OnceLock<(ProblemSpec, FbResult)> = OnceLock::new();
        OPT.get_or_init(|| {
            let grid = make_grid(1, &[1.0], &[257]).expect("grid");
            let spec = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).expect("spec");
            let init = ScalarField::from_fn(&grid, |x| (PI * x[0]).sin());
            let fb = minimize_constrained(&spec, &grid, &init, &opts()).expect("solve");
            let spec = spec.with_lambda_c(fb.lambda_c);
            (spec, fb)
        })
    }

    #[test]
    fn measure_of_the_zero_field_vanishes() {
        let grid = make_grid(1, &[1.0], &[65]).unwrap();
        let u = ScalarField::zeros(&grid);
        let m = residual_measure(&u, 1.0, 3.0, 2.5).unwrap();
        assert!(
            m.weights.iter().all(|&w| w == 0.0),
            "zero field must produce the zero measure"
        );
        assert_eq!(m.total_mass(), 0.0);
    }

    #[test]
    fn measure_of_an_unconstrained_eigenpair_vanishes_everywhere() {
        let grid = make_grid(1, &[1.0], &[129]).unwrap();
        let full = ShapeMask::full(&grid);
        let eig = solve_lambda1(&full, 3.0, 2.5, &opts()).unwrap();
        let u = eig.u.scaled(eig.amplitude);
        let m = residual_measure(&u, eig.lambda, 3.0, 2.5).unwrap();
        // Stiffness magnitude alone sets the scale for "zero".
        let scale = residual_measure(&u, 0.0, 3.0, 2.5).unwrap().max_abs_weight();
        assert!(scale > 0.0, "stiffness scale must be positive");
        assert!(
            m.max_abs_weight() <= 1e-6 * scale,
            "interior equation leaves residual mass {} against scale {}",
            m.max_abs_weight(),
            scale
        );
    }

    #[test]
    fn measure_of_a_constrained_optimum_is_positive_and_boundary_concentrated() {
        let (spec, fb) = optimum_1d();
        let m = residual_measure(&fb.u, spec.lambda_c, spec.p, spec.q).unwrap();
        let max = m.max_abs_weight();
        assert!(max > 0.0, "a binding budget must leave boundary mass");
        assert!(
            m.min_weight() >= -1e-8 * max,
            "measure must be nonnegative: min {} vs max {}",
            m.min_weight(),
            max
        );
        let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
        let dist = crate::geometry::distance_to_complement(&supp);
        let h = fb.u.grid.h_max();
        for k in 0..fb.u.grid.num_nodes() {
            if dist[k] >= 3.0 * h - 1e-12 {
                assert!(
                    m.weights[k].abs() <= 1e-6 * max,
                    "node {k} is {} deep inside the support yet carries weight {}",
                    dist[k],
                    m.weights[k]
                );
            }
        }
    }

    #[test]
    fn test_field_construction_validates_inputs() {
        let grid2 = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        assert!(VectorTestField::new(&grid2, [0.5, 0.5], 0.05, [1.0, 0.5]).is_ok());
        assert!(matches!(
            VectorTestField::new(&grid2, [0.05, 0.5], 0.05, [1.0, 0.0]),
            Err(Error::OutOfBox { .. })
        ));
        assert!(matches!(
            VectorTestField::new(&grid2, [0.5, 0.5], 0.0, [1.0, 0.0]),
            Err(Error::ConfigInvalid { .. })
        ));
        assert!(matches!(
            VectorTestField::new(&grid2, [0.5, 0.5], 0.05, [0.0, 0.0]),
            Err(Error::ConfigInvalid { .. })
        ));
        let grid1 = make_grid(1, &[1.0], &[65]).unwrap();
        assert!(matches!(
            VectorTestField::new(&grid1, [0.5, 0.0], 0.05, [1.0, 0.3]),
            Err(Error::ConfigInvalid { .. })
        ));
        assert!(VectorTestField::new(&grid1, [0.5, 0.0], 0.05, [-2.0, 0.0]).is_ok());
    }

    #[test]
    fn test_field_derivatives_match_finite_differences() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let f = VectorTestField::new(&grid, [0.4, 0.6], 0.05, [0.8, -0.6]).unwrap();
        let step = 1e-6;
        for &off in &[[0.3, -0.7], [1.5, 0.2], [-0.4, -0.9]] {
            let x = [0.4 + off[0] * f.sigma, 0.6 + off[1] * f.sigma];
            let jac = f.jacobian(x);
            let mut fd_div = 0.0;
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += step;
                xm[j] -= step;
                let (fp, fm) = (f.eval(xp), f.eval(xm));
                for i in 0..2 {
                    let fd = (fp[i] - fm[i]) / (2.0 * step);
                    assert!(
                        (fd - jac[i][j]).abs() <= 1e-6 * (1.0 / f.sigma + jac[i][j].abs()),
                        "Jacobian entry ({i},{j}) = {} vs finite difference {fd}",
                        jac[i][j]
                    );
                }
                fd_div += (fp[j] - fm[j]) / (2.0 * step);
            }
            assert!(
                (fd_div - f.divergence(x)).abs() <= 1e-6 * (1.0 / f.sigma + fd_div.abs()),
                "divergence {} vs finite difference {fd_div}",
                f.divergence(x)
            );
        }
        // Support is exactly compact: the profile vanishes at and beyond 6σ.
        assert_eq!(f.profile([0.4 + 6.0 * f.sigma, 0.6]), 0.0);
        assert_eq!(f.eval([0.4, 0.6 - 7.0 * f.sigma]), [0.0, 0.0]);
    }

    #[test]
    fn identity_quadrature_is_linear_in_the_test_field() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let u = ScalarField::from_fn(&grid, |x| (PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        let zero = ScalarField::zeros(&grid);
        let center = [0.45, 0.55];
        let sigma = 0.06;
        let f1 = VectorTestField::new(&grid, center, sigma, [1.0, 0.0]).unwrap();
        let f2 = VectorTestField::new(&grid, center, sigma, [0.0, 1.0]).unwrap();
        let (a, b) = (2.5, -1.5);
        let f3 = VectorTestField::new(&grid, center, sigma, [a, b]).unwrap();
        let (lambda_c, p, q) = (7.0, 3.0, 2.5);

        assert_eq!(el_lhs(&zero, &f1, lambda_c, p, q), 0.0);

        let v1 = el_lhs(&u, &f1, lambda_c, p, q);
        let v2 = el_lhs(&u, &f2, lambda_c, p, q);
        let (v3, scale3) = el_lhs_scaled(&u, &f3, lambda_c, p, q);
        assert!(
            (v3 - (a * v1 + b * v2)).abs() <= 1e-10 * scale3.max(1.0),
            "combination value {v3} vs {}",
            a * v1 + b * v2
        );

        let fneg = VectorTestField::new(&grid, center, sigma, [-1.0, 0.0]).unwrap();
        let vneg = el_lhs(&u, &fneg, lambda_c, p, q);
        assert!(
            (vneg + v1).abs() <= 1e-14 * v1.abs().max(1e-300),
            "flipping the field must flip the value: {vneg} vs {v1}"
        );
    }

    #[test]
    fn multiplier_estimate_needs_boundary_crossing_fields() {
        let (spec, fb) = optimum_1d();
        let grid = &fb.u.grid;
        let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
        // Center of the support interval.
        let inside = supp.nodes_inside();
        let xs: Vec<f64> = (0..grid.num_nodes())
            .filter(|&k| inside[k])
            .map(|k| grid.node_pos(k)[0])
            .collect();
        let mid = 0.5 * (xs.first().unwrap() + xs.last().unwrap());
        let h = grid.h_max();
        let bump = VectorTestField::new(grid, [mid, 0.0], 2.0 * h, [1.0, 0.0]).unwrap();
        let interior = vec![bump.clone(), bump.clone(), bump.clone(), bump];
        assert!(
            matches!(
                estimate_lambda(&fb.u, &interior, spec),
                Err(Error::DegenerateFields { .. })
            ),
            "fields inside the support carry no divergence mass over it"
        );
    }

    #[test]
    fn multiplier_estimate_is_positive_and_scale_invariant() {
        let (spec, fb) = optimum_1d();
        let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
        let bumps = boundary_bumps(&supp, 8, 11).unwrap();
        let (lambda1, spread1) = estimate_lambda(&fb.u, &bumps, spec).unwrap();
        assert!(
            lambda1 > 0.0,
            "multiplier must be positive, got {lambda1}"
        );
        let doubled: Vec<VectorTestField> = bumps
            .iter()
            .map(|b| {
                VectorTestField::new(
                    &fb.u.grid,
                    b.center,
                    b.sigma,
                    [2.0 * b.direction[0], 2.0 * b.direction[1]],
                )
                .unwrap()
            })
            .collect();
        let (lambda2, spread2) = estimate_lambda(&fb.u, &doubled, spec).unwrap();
        assert!(
            (lambda2 - lambda1).abs() <= 1e-12 * lambda1.abs(),
            "scaling every field must not move the estimate: {lambda1} vs {lambda2}"
        );
        assert!(
            (spread2 - spread1).abs() <= 1e-12 * (1.0 + spread1),
            "spread is a ratio statistic and must also be invariant"
        );
    }

    #[test]
    fn flux_curve_is_finite_and_covers_the_full_window() {
        let (spec, fb) = optimum_1d();
        let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
        let bumps = boundary_bumps(&supp, 4, 13).unwrap();
        let h = fb.u.grid.h_max();
        let (lambda_big, _) = estimate_lambda(
            &fb.u,
            &boundary_bumps(&supp, 8, 13).unwrap(),
            spec,
        )
        .unwrap();
        let curve = flux_limit(
            &fb.u,
            &bumps[0],
            spec,
            lambda_big,
            &[16.0 * h, 8.0 * h, 4.0 * h],
        );
        assert_eq!(curve.len(), 3);
        assert!((curve[0].0 - 16.0 * h).abs() < 1e-15, "input order kept");
        assert!(curve.iter().all(|(_, v)| v.is_finite()));
        // A window wider than the range of u integrates over the whole
        // support and stays finite.
        let full = flux_limit(
            &fb.u,
            &bumps[0],
            spec,
            lambda_big,
            &[1.5 * fb.u.max_abs()],
        );
        assert!(full[0].1.is_finite());
    }

    #[test]
    fn growth_fit_recovers_a_synthetic_power_law() {
        let radii = [0.1, 0.2, 0.4, 0.8];
        let values: Vec<f64> = radii.iter().map(|&r| 3.0 * f64::powf(r, 1.5)).collect();
        let (slope, constant) = fit_power_law(&radii, &values, "synthetic").unwrap();
        assert!((slope - 1.5).abs() <= 1e-12, "slope {slope}");
        assert!((constant - 3.0).abs() <= 1e-12 * 3.0, "constant {constant}");
    }

    #[test]
    fn uniform_line_measure_grows_linearly_with_the_radius() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let h = grid.h_max();
        let mut weights = vec![0.0; grid.num_nodes()];
        for k in 0..grid.num_nodes() {
            let p = grid.node_pos(k);
            if (p[1] - 0.5).abs() < 1e-12 && (0.2..=0.8).contains(&p[0]) {
                weights[k] = 1.0;
            }
        }
        let m = MeasureField::new(&grid, weights).unwrap();
        let centers = [[0.35, 0.5], [0.5, 0.5], [0.65, 0.5]];
        let radii = [4.0 * h, 6.0 * h, 8.0 * h, 12.0 * h, 16.0 * h];
        let fit = measure_growth(&m, &centers, &radii).unwrap();
        assert!(
            (fit.slope - 1.0).abs() <= 0.15,
            "a line measure grows linearly, got slope {}",
            fit.slope
        );
        assert!(fit.constant > 0.0);

        let zero = MeasureField::new(&grid, vec![0.0; grid.num_nodes()]).unwrap();
        assert!(matches!(
            measure_growth(&zero, &centers, &radii),
            Err(Error::EmptyWindow { .. })
        ));
    }

    #[test]
    fn growth_radii_are_validated() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let h = grid.h_max();
        let m = MeasureField::new(&grid, vec![1.0; grid.num_nodes()]).unwrap();
        let centers = [[0.5, 0.5]];
        for bad in [
            vec![h],                                // below the 4h floor
            vec![8.0 * h, 6.0 * h],                 // not increasing
            vec![4.0 * h, grid.diameter() / 2.0],   // beyond diameter/4
            vec![],                                 // empty
        ] {
            assert!(
                matches!(
                    measure_growth(&m, &centers, &bad),
                    Err(Error::ConfigInvalid { .. })
                ),
                "radii {bad:?} must be rejected"
            );
        }
    }

    #[test]
    fn perimeter_and_measure_grow_together_on_a_half_plane() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let h = grid.h_max();
        let mask = make_rect(&grid, [0.0, 0.0], [0.5, 1.0]).unwrap();
        let mut weights = vec![0.0; grid.num_nodes()];
        for k in 0..grid.num_nodes() {
            if (grid.node_pos(k)[0] - 0.5).abs() < 1e-12 {
                weights[k] = 1.0;
            }
        }
        let m = MeasureField::new(&grid, weights).unwrap();
        let centers = [[0.5, 0.4], [0.5, 0.5], [0.5, 0.6]];
        let radii = [4.0 * h, 8.0 * h, 16.0 * h];
        let report = perimeter_vs_measure(&mask, &m, &centers, &radii).unwrap();
        assert!(
            (report.perimeter_fit.slope - 1.0).abs() <= 0.3,
            "flat interface perimeter slope {}",
            report.perimeter_fit.slope
        );
        assert!(
            (report.measure_fit.slope - 1.0).abs() <= 0.3,
            "interface measure slope {}",
            report.measure_fit.slope
        );
        assert!(report.max_ratio.is_finite() && report.max_ratio > 0.0);

        let zero = MeasureField::new(&grid, vec![0.0; grid.num_nodes()]).unwrap();
        assert!(
            matches!(
                perimeter_vs_measure(&mask, &zero, &centers, &radii),
                Err(Error::EmptyWindow { .. })
            ),
            "perimeter without measure means an unbounded ratio, reported as failure"
        );
    }

    #[test]
    fn density_scan_of_a_half_plane_is_exactly_one_half() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let h = grid.h_max();
        let mask = make_rect(&grid, [0.0, 0.0], [0.5, 1.0]).unwrap();
        let rows = density_scan(&mask, &[4.0 * h, 8.0 * h]).unwrap();
        for row in &rows {
            assert!(
                (row.lower - 0.5).abs() < 1e-12 && (row.upper - 0.5).abs() < 1e-12,
                "half-plane density must be exactly 1/2, got [{}, {}]",
                row.lower,
                row.upper
            );
            assert!((row.comp_lower - 0.5).abs() < 1e-12);
            assert!((row.comp_upper - 0.5).abs() < 1e-12);
        }
        assert!(matches!(
            density_scan(&ShapeMask::full(&grid), &[4.0 * h]),
            Err(Error::NoBoundary)
        ));
    }

    #[test]
    fn lipschitz_estimate_returns_the_slope_of_a_ramp() {
        let grid1 = make_grid(1, &[1.0], &[65]).unwrap();
        let ramp = ScalarField::from_fn(&grid1, |x| 3.0 * x[0]);
        let h = grid1.h_max();
        let est = lipschitz_estimate(&ramp, 2.0 * h).unwrap();
        assert!((est - 3.0).abs() <= 1e-10 * 3.0, "ramp slope {est}");

        let grid2 = make_grid(2, &[1.0, 1.0], &[33, 33]).unwrap();
        let plane = ScalarField::from_fn(&grid2, |x| x[0] + 2.0 * x[1]);
        let est2 = lipschitz_estimate(&plane, 2.0 * grid2.h_max()).unwrap();
        let want = 5.0f64.sqrt();
        assert!((est2 - want).abs() <= 1e-10 * want, "plane slope {est2}");

        assert_eq!(
            lipschitz_estimate(&ScalarField::zeros(&grid1), 2.0 * h).unwrap(),
            0.0
        );
        assert!(matches!(
            lipschitz_estimate(&ramp, h),
            Err(Error::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn weak_identity_defect_is_negligible_for_an_eigenpair() {
        let grid = make_grid(1, &[1.0], &[129]).unwrap();
        let full = ShapeMask::full(&grid);
        let eig = solve_lambda1(&full, 3.0, 2.5, &opts()).unwrap();
        let u = eig.u.scaled(eig.amplitude);
        let spec = ProblemSpec::new(3.0, 2.5, 1.0, 0.0, 0.0)
            .unwrap()
            .with_lambda_c(eig.lambda);
        let psi = |x: [f64; 2]| {
            let t = (x[0] - 0.5) / 0.3;
            (1.0 - t * t).max(0.0).powi(2)
        };

        let zero = weak_identity_p(&u, |_| 0.0, psi, &spec).unwrap();
        assert_eq!(zero.defect, 0.0);
        assert_eq!(zero.scale, 0.0);

        let id = weak_identity_p(&u, |s| s, psi, &spec).unwrap();
        assert!(id.scale > 0.0);
        assert!(
            id.defect.abs() <= 1e-6 * id.scale,
            "identity defect {} vs scale {}",
            id.defect,
            id.scale
        );

        // Ramp cutoff rising over one cell: 0 for s ≤ 0, s/h up to 1.
        let n = 1.0 / grid.h_max();
        let cut = move |s: f64| (n * s).clamp(0.0, 1.0);
        let rep = weak_identity_p(&u, cut, psi, &spec).unwrap();
        assert!(
            rep.defect.abs() <= 1e-6 * rep.scale,
            "cutoff defect {} vs scale {}",
            rep.defect,
            rep.scale
        );

        assert!(matches!(
            weak_identity_p(&u, |_| 1.0, psi, &spec),
            Err(Error::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn equivalence_gap_is_small_and_vanishes_for_a_slack_budget() {
        let grid = make_grid(1, &[1.0], &[129]).unwrap();
        let spec = ProblemSpec::new(3.0, 2.5, 0.4, 0.0, 0.0).unwrap();
        let report = equivalence_check(&spec, &grid, &opts()).unwrap();
        assert!(report.support_lambda > 0.0);
        assert!(
            report.relative_gap < 0.01,
            "constrained multiplier {} vs support eigenvalue {}",
            report.constrained_lambda,
            report.support_lambda
        );
        assert!(report.support_volume <= 0.4 + grid.cell_volume + 1e-12);

        // A budget equal to the whole box never binds: both numbers are the
        // unconstrained eigenvalue.
        let slack = ProblemSpec::new(3.0, 2.5, 1.0, 0.0, 0.0).unwrap();
        let rep2 = equivalence_check(&slack, &grid, &opts()).unwrap();
        let free = solve_lambda1(&ShapeMask::full(&grid), 3.0, 2.5, &opts()).unwrap();
        assert!(rep2.relative_gap < 1e-9);
        assert!(
            (rep2.support_lambda - free.lambda).abs() <= 1e-9 * free.lambda,
            "slack budget changes nothing: {} vs {}",
            rep2.support_lambda,
            free.lambda
        );
    }

    #[test]
    fn identical_perturbations_have_zero_distance_and_zero_gap() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let ball = make_ball(&grid, [0.5, 0.5], 0.3).unwrap();
        let spec = ProblemSpec::new(3.0, 2.5, 1.0, 0.0, 0.0).unwrap();
        let rows =
            continuity_experiment(&ball, &[ball.clone(), ball.clone()], &spec, &opts()).unwrap();
        assert_eq!(rows.len(), 2);
        for row in rows {
            assert_eq!(row.distance, 0.0);
            assert_eq!(row.gap, 0.0, "same mask, same deterministic eigenvalue");
        }
    }

    #[test]
    fn slit_square_gaps_shrink_with_the_slit() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let base = make_rect(&grid, [0.1, 0.1], [0.9, 0.9]).unwrap();
        let h = grid.h_max();
        // Rows of cells inside the base rectangle at the slit column. The
        // column sits off the eigenfunction's crest so the shortest slit's
        // effect lands deep below the 1% mark, and the slit lengths stay
        // below the column's sideways distance to the complement so the
        // complement-Hausdorff distance equals the slit depth.
        let col = 12usize;
        let base_rows: Vec<usize> = (0..grid.cells_along(1))
            .filter(|&j| base.cells[grid.cell_index(&[col, j])])
            .collect();
        let first_row = *base_rows.first().unwrap();
        let mut perts = Vec::new();
        for len in [6usize, 4, 2] {
            let mut cells = base.cells.clone();
            for j in first_row..first_row + len {
                cells[grid.cell_index(&[col, j])] = false;
            }
            perts.push(ShapeMask::new(&grid, cells).unwrap());
        }
        let spec = ProblemSpec::new(3.0, 2.5, 1.0, 0.0, 0.0).unwrap();
        let rows = continuity_experiment(&base, &perts, &spec, &opts()).unwrap();
        let lambda0 = solve_lambda1(&base, 3.0, 2.5, &opts()).unwrap().lambda;
        for w in rows.windows(2) {
            assert!(
                w[0].distance <= w[1].distance,
                "rows must be sorted by distance"
            );
            assert!(
                w[0].gap <= w[1].gap + 1e-6 * lambda0,
                "a deeper slit must perturb the eigenvalue at least as much: gap {} at \
                 distance {} vs gap {} at distance {}",
                w[0].gap,
                w[0].distance,
                w[1].gap,
                w[1].distance
            );
        }
        let closest = &rows[0];
        assert!(
            closest.distance < 4.0 * h,
            "shortest slit should sit below the 4h resolution floor, got {}",
            closest.distance
        );
        assert!(
            closest.gap < 0.01 * lambda0,
            "a slit below the resolution floor moves the eigenvalue by {} of {}",
            closest.gap,
            lambda0
        );
    }

    #[test]
    fn equal_volume_ranking_is_deterministic_and_checks_volumes() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let disk = make_ball(&grid, [0.5, 0.5], 0.28).unwrap();
        let spec = ProblemSpec::new(3.0, 2.5, 1.0, 0.0, 0.0).unwrap();

        let single = faber_krahn_compare(std::slice::from_ref(&disk), &spec, &opts()).unwrap();
        assert_eq!(single.len(), 1);

        let twins = faber_krahn_compare(&[disk.clone(), disk.clone()], &spec, &opts()).unwrap();
        assert_eq!(
            twins[0].lambda, twins[1].lambda,
            "identical shapes must tie exactly"
        );

        let square = make_rect(&grid, [0.1, 0.1], [0.9, 0.9]).unwrap();
        assert!(matches!(
            faber_krahn_compare(&[disk, square], &spec, &opts()),
            Err(Error::VolumeMismatch { .. })
        ));
    }

    #[test]
    fn probe_placement_is_deterministic_per_seed() {
        let grid = make_grid(2, &[1.0, 1.0], &[65, 65]).unwrap();
        let mask = make_ball(&grid, [0.5, 0.5], 0.3).unwrap();

        let p1 = boundary_probe_points(&mask, 10, 7).unwrap();
        let p2 = boundary_probe_points(&mask, 10, 7).unwrap();
        assert_eq!(p1.len(), 10);
        assert_eq!(p1, p2, "same seed, same probes");

        let b1 = boundary_bumps(&mask, 8, 42).unwrap();
        let b2 = boundary_bumps(&mask, 8, 42).unwrap();
        assert_eq!(b1.len(), 8);
        for (x, y) in b1.iter().zip(b2.iter()) {
            assert_eq!(x.center, y.center);
            assert_eq!(x.sigma, y.sigma);
            assert_eq!(x.direction, y.direction);
        }
        let b3 = boundary_bumps(&mask, 8, 43).unwrap();
        assert!(
            b1.iter()
                .zip(b3.iter())
                .any(|(x, y)| x.center != y.center
                    || x.sigma != y.sigma
                    || x.direction != y.direction),
            "different seeds must explore different placements"
        );
        assert!(matches!(
            boundary_bumps(&ShapeMask::full(&grid), 4, 1),
            Err(Error::NoBoundary)
        ));
    }
}
