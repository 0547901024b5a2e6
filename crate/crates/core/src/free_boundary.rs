//! Volume-constrained minimization of the mixed quotient, in two equivalent
//! forms: a hard constraint `|Ω_u| ≤ c` enforced by truncation after every
//! step, and a penalty `μ·[|Ω_u| − c]⁺` added to the objective.
//!
//! The constrained solver alternates two moves. The inner loop runs the same
//! Sobolev-preconditioned projected descent as the eigensolver, but on the
//! shifted functional `J(w) = ep + e2 − λ_c·dq` with the volume truncation
//! applied to every trial point, so the support is free to migrate anywhere
//! in the box while its measure stays within budget. The outer loop freezes
//! the support the descent found, re-solves the eigenproblem on it, and feeds
//! the realized quotient back in as the next multiplier `λ_c`; the multiplier
//! settles exactly when the support stops improving.
//!
//! The penalized solver descends the full `J_μ` for a fixed multiplier. The
//! volume term is discontinuous in `w`, so it is never differentiated:
//! whenever the budget is exceeded, the solver offers explicit truncation
//! moves (at the projection threshold and fractions of it) and keeps them
//! only if they lower `J_μ`. Above the threshold `μ*` returned by
//! [`mu_star_estimate`] an infeasible minimizer cannot exist, which is the
//! inequality [`b_gap`] underpins; the two solvers then agree.

use crate::eigen::{precond_direction, project, solve_lambda1, EigenOptions};
use crate::error::{Error, Result};
use crate::field::{assemble, EnergyBreakdown, Exponents, ScalarField};
use crate::geometry::{support_mask, volume, ShapeMask, DEFAULT_SUPPORT_TAU};
use crate::grid::GridSpec;

/// Armijo sufficient-decrease constant for the shape descent.
const ARMIJO_C1: f64 = 1e-4;
/// Step halvings before a line search gives up.
const MAX_HALVINGS: usize = 60;
/// Descent iterations per multiplier update in the constrained solver.
const INNER_CAP: usize = 150;
/// Multiplier updates before the constrained solver reports failure.
const OUTER_CAP: usize = 50;
/// Relative multiplier change that ends the constrained outer loop.
const OUTER_RTOL: f64 = 1e-6;
/// Bisection steps used to resolve the truncation threshold.
const PROJECTION_BISECTIONS: usize = 64;

/// Data of one volume-budgeted minimization problem.
///
/// `mu` and `lambda_c` are carried even when a particular solver ignores
/// them: the constrained solver determines its own multiplier and never reads
/// `mu`, while the penalized solver requires both.
#[derive(Debug, Clone, Copy)]
pub struct ProblemSpec {
    /// Exponent of the degree-`p` gradient term.
    pub p: f64,
    /// Exponent of the denominator term.
    pub q: f64,
    /// Volume budget for the support.
    pub c: f64,
    /// Penalty weight on the excess volume (penalized form only).
    pub mu: f64,
    /// Multiplier on the denominator term (input to the penalized form,
    /// output of the constrained form).
    pub lambda_c: f64,
}

impl ProblemSpec {
    /// Validates `p > q ≥ 2`, `c > 0`, `mu ≥ 0`, `lambda_c ≥ 0`.
    ///
    /// The budget is checked against the grid (one-cell feasibility, and the
    /// inactive-constraint case `c ≥ |D|`) by the solvers, not here, since
    /// the spec is grid-independent.
    pub fn new(p: f64, q: f64, c: f64, mu: f64, lambda_c: f64) -> Result<Self> {
        if !(p.is_finite() && q.is_finite() && q >= 2.0 && p > q) {
            return Err(Error::BadExponents { p, q });
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::ConfigInvalid {
                key: "c".to_string(),
                reason: format!("volume budget must be positive and finite, got {c}"),
            });
        }
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::ConfigInvalid {
                key: "mu".to_string(),
                reason: format!("penalty weight must be nonnegative and finite, got {mu}"),
            });
        }
        if !(lambda_c.is_finite() && lambda_c >= 0.0) {
            return Err(Error::ConfigInvalid {
                key: "lambda_c".to_string(),
                reason: format!("multiplier must be nonnegative and finite, got {lambda_c}"),
            });
        }
        Ok(ProblemSpec {
            p,
            q,
            c,
            mu,
            lambda_c,
        })
    }

    /// Copy of the spec with the multiplier replaced.
    pub fn with_lambda_c(mut self, lambda_c: f64) -> Self {
        self.lambda_c = lambda_c;
        self
    }

    /// Copy of the spec with the penalty weight replaced.
    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    fn exponents(&self) -> Exponents {
        Exponents::new(self.p, self.q).expect("validated at construction")
    }
}

/// Outcome of a volume-budgeted minimization.
#[derive(Debug, Clone)]
pub struct FbResult {
    /// Minimizer at its true amplitude: nonnegative, zero on the box
    /// boundary.
    pub u: ScalarField,
    /// Realized quotient of `u` (the eigenvalue of its support).
    pub lambda_c: f64,
    /// Measure of the support of `u`.
    pub support_volume: f64,
    /// Final objective value of the respective solve: the shifted functional
    /// `ep + e2 − λ_c·dq` for the constrained form (zero at a self-consistent
    /// optimum), the full penalized functional `ep + e2 + λ_c(1 − dq) +
    /// μ[|Ω_u| − c]⁺` for the penalized form (equal to `λ_c` at a feasible
    /// self-consistent optimum).
    pub j_value: f64,
    /// Multiplier updates performed (constrained), or accepted descent
    /// iterations (penalized).
    pub outer_iterations: usize,
}

/// Nodewise `max(u − t, 0)`.
///
/// Errors with [`Error::NegativeThreshold`] unless `t ≥ 0` and finite.
pub fn truncate_plus(u: &ScalarField, t: f64) -> Result<ScalarField> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::NegativeThreshold { threshold: t });
    }
    Ok(ScalarField {
        grid: u.grid.clone(),
        values: u.values.iter().map(|&v| (v - t).max(0.0)).collect(),
    })
}

fn support_volume_of(u: &ScalarField) -> f64 {
    volume(&support_mask(u, DEFAULT_SUPPORT_TAU))
}

/// Smallest truncation that brings the support measure within budget.
///
/// Bisects on `t` for the least `t ≥ 0` with `|Ω_{(u−t)⁺}| ≤ c` and returns
/// the truncated field together with the threshold; `t = 0` (and the positive
/// part of `u` unchanged) when the input is already feasible. The threshold
/// is resolved to a relative width of `2⁻⁶⁴`, far below one node-value gap.
///
/// Errors with [`Error::Infeasible`] when the budget is smaller than one grid
/// cell, the finest support the grid can represent.
pub fn volume_projection(u: &ScalarField, c: f64) -> Result<(ScalarField, f64)> {
    if !c.is_finite() || c < u.grid.cell_volume {
        return Err(Error::Infeasible {
            budget: c,
            context: format!(
                "budget is below one grid cell ({:.3e}), the smallest nonempty support",
                u.grid.cell_volume
            ),
        });
    }
    let base = truncate_plus(u, 0.0)?;
    if support_volume_of(&base) <= c {
        return Ok((base, 0.0));
    }
    // Invariant: `lo` infeasible, `hi` feasible (the zero field at worst).
    let mut lo = 0.0f64;
    let mut hi = u.values.iter().fold(0.0f64, |m, &v| m.max(v));
    for _ in 0..PROJECTION_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if support_volume_of(&truncate_plus(u, mid)?) <= c {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((truncate_plus(u, hi)?, hi))
}

/// Value, gradient, and scale data of the shifted functional
/// `J(w) = ep + e2 − λ·dq` at one iterate.
struct ShiftedEval {
    bd: EnergyBreakdown,
    value: f64,
    grad: Vec<f64>,
    /// Largest magnitude among the assembled weak-form terms entering the
    /// gradient; the stationarity defect is measured relative to it.
    scale: f64,
    /// Magnitude the value was summed from (`ep + e2 + λ·dq`); float noise in
    /// `value` is proportional to this, not to the possibly-cancelled value.
    mag: f64,
}

fn shifted_eval(
    grid: &GridSpec,
    v: &[f64],
    ex: &Exponents,
    lambda: f64,
    free: &[bool],
) -> ShiftedEval {
    let asm = assemble(grid, v, ex);
    let mut grad = vec![0.0; v.len()];
    let mut scale = 0.0f64;
    for k in 0..v.len() {
        if free[k] {
            grad[k] = asm.a[k] - lambda * asm.b[k];
            scale = scale.max(asm.a[k].abs().max(lambda * asm.b[k].abs()));
        }
    }
    ShiftedEval {
        bd: asm.bd,
        value: asm.bd.ep + asm.bd.e2 - lambda * asm.bd.dq,
        grad,
        scale,
        mag: asm.bd.ep + asm.bd.e2 + lambda * asm.bd.dq,
    }
}

fn shifted_value(grid: &GridSpec, v: &[f64], ex: &Exponents, lambda: f64) -> f64 {
    let bd = crate::field::energies_raw(grid, v, ex);
    bd.ep + bd.e2 - lambda * bd.dq
}

/// Projected-gradient stationarity defect of the shifted functional,
/// relative to the magnitude of its weak-form terms. At an active bound
/// (`v = 0`) only the infeasible (negative) gradient part counts.
fn shifted_kkt(v: &[f64], eval: &ShiftedEval, free: &[bool]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..v.len() {
        if !free[k] {
            continue;
        }
        let g = if v[k] > 0.0 {
            eval.grad[k]
        } else {
            eval.grad[k].min(0.0)
        };
        worst = worst.max(g.abs());
    }
    if eval.scale > 0.0 {
        worst / eval.scale
    } else {
        worst
    }
}

/// Exact minimization of `t ↦ J(t·v)` from one energy breakdown: coarse
/// log-spaced scan of `t ∈ [1/4, 4]` followed by golden-section refinement.
/// Returns the rescaling when it beats the current value by more than the
/// float noise. The support is invariant under positive rescaling, so these
/// moves never disturb feasibility or the penalty term.
fn amplitude_improvement(
    bd: &EnergyBreakdown,
    p: f64,
    q: f64,
    lambda: f64,
    current: f64,
    noise: f64,
) -> Option<f64> {
    let phi =
        |t: f64| t.powf(p) * bd.ep + t * t * bd.e2 - lambda * t.powf(q) * bd.dq;
    // 17 points, four per octave, covering [1/4, 4].
    let mut best_i = 8usize;
    let mut best = phi(1.0);
    for (i, t) in (0..17).map(|i| (i, 0.25 * 2f64.powf(i as f64 / 4.0))) {
        let val = phi(t);
        if val < best {
            best = val;
            best_i = i;
        }
    }
    let at = |i: usize| 0.25 * 2f64.powf(i as f64 / 4.0);
    let (mut a, mut b) = (at(best_i.saturating_sub(1)), at((best_i + 1).min(16)));
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..60 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = phi(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = phi(x2);
        }
    }
    let t = 0.5 * (a + b);
    (phi(t) < current - noise).then_some(t)
}

/// One run of preconditioned projected descent on the shifted functional at a
/// frozen multiplier, truncating every trial point back into the volume
/// budget. Stops at stationarity, on a failed line search, or at the
/// iteration cap; the iterate is updated in place and stays feasible and
/// nonzero throughout.
fn constrained_descent(
    grid: &GridSpec,
    free: &[bool],
    ex: &Exponents,
    lambda: f64,
    c: f64,
    v: &mut Vec<f64>,
    alpha0: &mut f64,
    tol: f64,
) -> Result<()> {
    let mut cur = shifted_eval(grid, v, ex, lambda, free);
    for _ in 0..INNER_CAP {
        let cur_kkt = shifted_kkt(v, &cur, free);
        if cur_kkt <= tol * (1.0 + lambda.abs()) {
            break;
        }
        let d = precond_direction(grid, free, &cur.grad);
        let gd: f64 = cur.grad.iter().zip(&d).map(|(g, dk)| g * dk).sum();
        if gd <= 0.0 {
            break;
        }
        let noise = 4.0 * f64::EPSILON * cur.mag;
        let mut alpha = *alpha0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let mut w: Vec<f64> = v.iter().zip(&d).map(|(x, dk)| x - alpha * dk).collect();
            project(&mut w, free);
            let (wt, _) = volume_projection(&ScalarField::new(grid, w)?, c)?;
            // The zero field is a trivial root of the shifted functional;
            // never step onto it.
            if wt.max_abs() > 0.0 {
                if ARMIJO_C1 * alpha * gd > noise {
                    let trial = shifted_value(grid, &wt.values, ex, lambda);
                    if trial <= cur.value - ARMIJO_C1 * alpha * gd + noise {
                        *v = wt.values;
                        *alpha0 = (alpha * 2.0).clamp(1e-10, 8.0);
                        accepted = true;
                        break;
                    }
                } else {
                    // The step's predicted decrease drowns in the rounding of
                    // the functional value, so compare stationarity instead:
                    // the projected-gradient norm stays meaningful down to
                    // machine scale and cannot wander upward.
                    let trial_eval = shifted_eval(grid, &wt.values, ex, lambda, free);
                    if shifted_kkt(&wt.values, &trial_eval, free) < cur_kkt {
                        *v = wt.values;
                        *alpha0 = (alpha * 2.0).clamp(1e-10, 8.0);
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        cur = shifted_eval(grid, v, ex, lambda, free);
        // Rescaling moves cost one closed-form scan and keep the support —
        // hence feasibility — exactly unchanged.
        if let Some(t) = amplitude_improvement(&cur.bd, ex.p, ex.q, lambda, cur.value, noise) {
            for x in v.iter_mut() {
                *x *= t;
            }
            cur = shifted_eval(grid, v, ex, lambda, free);
        }
    }
    Ok(())
}

/// Minimizes the quotient over fields whose support measure is within the
/// budget `spec.c`, by alternating truncation-projected descent with
/// multiplier updates from eigensolves on the extracted support.
///
/// The returned field is the eigenfunction of the final support at its true
/// amplitude, so `lambda_c` is exactly the realized quotient and the interior
/// weak-form residual is at the eigensolver's own tolerance. A budget
/// `c ≥ |D|` is legal: the truncation never activates and the result matches
/// [`solve_lambda1`] on the full box.
///
/// Errors: [`Error::Infeasible`] when the budget is below one cell or the
/// descent support admits no interior node; [`Error::ZeroField`] when `init`
/// vanishes (also after projection onto the admissible set);
/// [`Error::NonConvergence`] when the multiplier has not settled within the
/// outer-iteration cap.
pub fn minimize_constrained(
    spec: &ProblemSpec,
    grid: &GridSpec,
    init: &ScalarField,
    opts: &EigenOptions,
) -> Result<FbResult> {
    init.check_same_grid(grid, "initial field was built over a different grid")?;
    if init.max_abs() == 0.0 {
        return Err(Error::ZeroField);
    }
    let ex = spec.exponents();
    let full = ShapeMask::full(grid);
    let free = full.nodes_inside();

    // Feasible nonnegative start.
    let mut v = init.values.clone();
    project(&mut v, &free);
    let (vf, _) = volume_projection(&ScalarField::new(grid, v)?, spec.c)?;
    let mut v = vf.values;
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroField);
    }

    // The unconstrained optimum on the full box initializes the multiplier;
    // by domain monotonicity it lower-bounds every constrained value.
    let mut lambda = solve_lambda1(&full, spec.p, spec.q, opts)?.lambda;

    let mut alpha0 = 1.0f64;
    let mut outer = 0usize;
    let mut rel = f64::INFINITY;
    while outer < OUTER_CAP {
        outer += 1;
        constrained_descent(
            grid, &free, &ex, lambda, spec.c, &mut v, &mut alpha0, opts.tol,
        )?;
        let supp = support_mask(&ScalarField::new(grid, v.clone())?, DEFAULT_SUPPORT_TAU);
        let eig = match solve_lambda1(&supp, spec.p, spec.q, opts) {
            Err(Error::NoDomain { .. }) => {
                return Err(Error::Infeasible {
                    budget: spec.c,
                    context: "descent support admits no interior node".to_string(),
                })
            }
            other => other?,
        };
        rel = (eig.lambda - lambda).abs() / eig.lambda.max(f64::MIN_POSITIVE);
        lambda = eig.lambda;
        // Restart the descent from the polished eigenpair at its true
        // amplitude; rescaling relations make that state amplitude-stationary
        // for the shifted functional as well.
        let amp = if eig.amplitude > 0.0 { eig.amplitude } else { 1.0 };
        v = eig.u.values.iter().map(|x| amp * x).collect();
        if rel < OUTER_RTOL {
            // Final deep polish: downstream positivity diagnostics compare
            // the interior weak-form residual against the boundary defect,
            // which demands a couple of orders more than the iteration
            // tolerance.
            let deep_opts = EigenOptions {
                tol: (opts.tol * 1e-2).max(1e-12),
                ..*opts
            };
            let deep = solve_lambda1(&supp, spec.p, spec.q, &deep_opts)?;
            let amp = if deep.amplitude > 0.0 {
                deep.amplitude
            } else {
                1.0
            };
            let u = ScalarField::new(
                grid,
                deep.u.values.iter().map(|x| amp * x).collect(),
            )?;
            let support_vol = support_volume_of(&u);
            let j_value = shifted_value(grid, &u.values, &ex, deep.lambda);
            return Ok(FbResult {
                u,
                lambda_c: deep.lambda,
                support_volume: support_vol,
                j_value,
                outer_iterations: outer,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: outer,
        residual: rel,
        tolerance: OUTER_RTOL,
    })
}

/// The penalized functional `J_μ(v) = ep + e2 + λ_c(1 − dq) + μ[|Ω_v| − c]⁺`
/// at one field, with its ingredients.
fn penalized_value(
    grid: &GridSpec,
    v: &ScalarField,
    ex: &Exponents,
    lambda: f64,
    mu: f64,
    c: f64,
) -> f64 {
    let smooth = shifted_value(grid, &v.values, ex, lambda);
    smooth + lambda + mu * (support_volume_of(v) - c).max(0.0)
}

/// Zeroes every node below the support threshold, making the field
/// measure-consistent: values too small to count toward `|Ω_v|` must not
/// carry energy either, or descent could grow an invisible skirt below the
/// threshold that wins smooth energy while dodging the volume penalty.
fn snap_to_support(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let thr = DEFAULT_SUPPORT_TAU * m;
    for x in v.iter_mut() {
        if x.abs() <= thr {
            *x = 0.0;
        }
    }
}

/// Minimizes the penalized functional `J_μ` at the frozen multiplier
/// `spec.lambda_c` and penalty weight `spec.mu`.
///
/// The smooth part is descended with the same preconditioned projected
/// gradient as everywhere else; the discontinuous volume term is never
/// differentiated — every trial is priced at its full `J_μ`, and explicit
/// truncation moves (at the projection threshold and at half and a quarter of
/// it) are offered whenever the budget is exceeded and kept only when they
/// lower `J_μ`. With `mu = 0` the penalty is absent and the support may
/// exceed the budget.
///
/// Stationarity has two parts, because at an active penalty the smooth
/// gradient at the support edge always points outward and only the penalty
/// jump blocks it: the smooth part must be at rest over the nodes whose
/// variation leaves the support unchanged (the interior of the support), and
/// no move of any kind — step, truncation, rescaling — may improve `J_μ`
/// beyond float noise.
///
/// Errors: [`Error::Infeasible`] (budget below one cell),
/// [`Error::ZeroField`] (vanishing `init`, also after projection),
/// [`Error::NonConvergence`] (stalled or capped before stationarity).
pub fn minimize_penalized(
    spec: &ProblemSpec,
    grid: &GridSpec,
    init: &ScalarField,
    opts: &EigenOptions,
) -> Result<FbResult> {
    init.check_same_grid(grid, "initial field was built over a different grid")?;
    if init.max_abs() == 0.0 {
        return Err(Error::ZeroField);
    }
    if !spec.c.is_finite() || spec.c < grid.cell_volume {
        return Err(Error::Infeasible {
            budget: spec.c,
            context: format!(
                "budget is below one grid cell ({:.3e}), the smallest nonempty support",
                grid.cell_volume
            ),
        });
    }
    let ex = spec.exponents();
    let lambda = spec.lambda_c;
    let mu = spec.mu;
    let free = ShapeMask::full(grid).nodes_inside();

    let mut v = init.values.clone();
    project(&mut v, &free);
    snap_to_support(&mut v);
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroField);
    }

    let mut field = ScalarField::new(grid, v)?;
    let mut cur = shifted_eval(grid, &field.values, &ex, lambda, &free);
    let mut supp = support_mask(&field, DEFAULT_SUPPORT_TAU);
    let mut penalty = mu * (volume(&supp) - spec.c).max(0.0);
    let mut alpha0 = 1.0f64;
    let mut accepted_total = 0usize;
    let mut converged = false;
    let mut iters = 0usize;

    while iters < opts.max_iters {
        iters += 1;
        let total = cur.value + lambda + penalty;
        let noise = 4.0 * f64::EPSILON * (cur.mag + penalty + lambda);

        // Stationarity over support-preserving variations: nodes all of
        // whose adjacent cells are already inside the support.
        let inside: Vec<bool> = supp
            .nodes_inside()
            .iter()
            .zip(&free)
            .map(|(a, b)| *a && *b)
            .collect();
        let stationary =
            shifted_kkt(&field.values, &cur, &inside) <= opts.tol * (1.0 + lambda.abs());

        // Once the interior is at rest, only moves that beat the float noise
        // outright count; the noise allowance that keeps long descents alive
        // would otherwise churn forever at the minimizer.
        let mut moved = false;

        // Preconditioned gradient step, priced at the full J_μ.
        let d = precond_direction(grid, &free, &cur.grad);
        let gd: f64 = cur.grad.iter().zip(&d).map(|(g, dk)| g * dk).sum();
        if gd > 0.0 {
            let mut alpha = alpha0;
            for _ in 0..MAX_HALVINGS {
                let mut w: Vec<f64> = field
                    .values
                    .iter()
                    .zip(&d)
                    .map(|(x, dk)| x - alpha * dk)
                    .collect();
                project(&mut w, &free);
                snap_to_support(&mut w);
                // The zero field sits at the trivial value λ_c; never step
                // onto it.
                if w.iter().any(|&x| x > 0.0) {
                    let wf = ScalarField::new(grid, w)?;
                    let trial = penalized_value(grid, &wf, &ex, lambda, mu, spec.c);
                    let required = if stationary {
                        (ARMIJO_C1 * alpha * gd).max(noise)
                    } else {
                        ARMIJO_C1 * alpha * gd - noise
                    };
                    if trial <= total - required {
                        field = wf;
                        alpha0 = (alpha * 2.0).clamp(1e-10, 8.0);
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if moved {
                cur = shifted_eval(grid, &field.values, &ex, lambda, &free);
                supp = support_mask(&field, DEFAULT_SUPPORT_TAU);
                penalty = mu * (volume(&supp) - spec.c).max(0.0);
            }
        }

        // Truncation moves whenever the budget is exceeded: full projection
        // threshold and fractions of it, all priced at J_μ and required to
        // beat the noise (surgery is pointless at noise level).
        if penalty > 0.0 {
            let total = cur.value + lambda + penalty;
            let (_, t_full) = volume_projection(&field, spec.c)?;
            let mut best: Option<(ScalarField, f64)> = None;
            for t in [t_full, 0.5 * t_full, 0.25 * t_full] {
                if t <= 0.0 {
                    continue;
                }
                let w = truncate_plus(&field, t)?;
                if w.max_abs() == 0.0 {
                    continue;
                }
                let val = penalized_value(grid, &w, &ex, lambda, mu, spec.c);
                if val < best.as_ref().map_or(total - noise, |(_, b)| *b) {
                    best = Some((w, val));
                }
            }
            if let Some((w, _)) = best {
                field = w;
                cur = shifted_eval(grid, &field.values, &ex, lambda, &free);
                supp = support_mask(&field, DEFAULT_SUPPORT_TAU);
                penalty = mu * (volume(&supp) - spec.c).max(0.0);
                moved = true;
            }
        }

        // Exact rescaling of the smooth part; the support — and with it the
        // penalty — is invariant under positive scaling.
        if let Some(t) = amplitude_improvement(&cur.bd, ex.p, ex.q, lambda, cur.value, noise) {
            for x in field.values.iter_mut() {
                *x *= t;
            }
            cur = shifted_eval(grid, &field.values, &ex, lambda, &free);
            moved = true;
        }

        if moved {
            accepted_total += 1;
            continue;
        }
        converged = stationary;
        break;
    }

    if iters >= opts.max_iters && !converged {
        // The cap landed mid-descent; the verdict is the stationarity test.
        let inside: Vec<bool> = supp
            .nodes_inside()
            .iter()
            .zip(&free)
            .map(|(a, b)| *a && *b)
            .collect();
        converged =
            shifted_kkt(&field.values, &cur, &inside) <= opts.tol * (1.0 + lambda.abs());
    }
    if !converged {
        let residual = shifted_kkt(&field.values, &cur, &free);
        return Err(Error::NonConvergence {
            iterations: iters,
            residual,
            tolerance: opts.tol * (1.0 + lambda.abs()),
        });
    }
    // Deep-polish the smooth part over the frozen support: with the
    // any-corner support rule every positive node varies without changing
    // the support, so this drives the interior weak-form residual well
    // below the boundary defect that downstream positivity diagnostics
    // measure against. The box volume as budget makes the projection inside
    // the descent a no-op.
    let inside: Vec<bool> = supp
        .nodes_inside()
        .iter()
        .zip(&free)
        .map(|(a, b)| *a && *b)
        .collect();
    let mut vdeep = field.values.clone();
    constrained_descent(
        grid,
        &inside,
        &ex,
        lambda,
        grid.box_volume(),
        &mut vdeep,
        &mut alpha0,
        (opts.tol * 1e-2).max(1e-12),
    )?;
    field = ScalarField::new(grid, vdeep)?;
    cur = shifted_eval(grid, &field.values, &ex, lambda, &free);
    supp = support_mask(&field, DEFAULT_SUPPORT_TAU);
    penalty = mu * (volume(&supp) - spec.c).max(0.0);

    let realized = cur.bd.quotient().ok_or(Error::ZeroDenominator)?;
    let support_vol = volume(&supp);
    let j_value = cur.value + lambda + penalty;
    Ok(FbResult {
        u: field,
        lambda_c: realized,
        support_volume: support_vol,
        j_value,
        outer_iterations: accepted_total,
    })
}

/// The constant `K = λ_c(|Ω_u| + ‖u‖_{L^p}^{q−1}·|Ω_u|^{(p+1−q)/p})` bounding
/// the energy the field holds in a thin slab `{0 < u < t}` above its free
/// boundary: the slab energy is at most `t·K` for small `t`.
pub(crate) fn penalty_chain_constant(spec: &ProblemSpec, u: &ScalarField) -> Result<f64> {
    if u.max_abs() == 0.0 {
        return Err(Error::ZeroField);
    }
    let vol = support_volume_of(u);
    let lp = lp_norm(u, spec.p);
    Ok(spec.lambda_c * (vol + lp.powf(spec.q - 1.0) * vol.powf((spec.p + 1.0 - spec.q) / spec.p)))
}

/// Midpoint-rule `L^p` norm from cell-mean values, matching the quadrature
/// used by the energies.
fn lp_norm(u: &ScalarField, p: f64) -> f64 {
    let grid = &u.grid;
    let mut sum = 0.0f64;
    for cell in 0..grid.num_cells() {
        let c = grid.cell_coords(cell);
        let mean = if grid.dim == 1 {
            let k0 = grid.node_index(&[c[0]]);
            let k1 = grid.node_index(&[c[0] + 1]);
            0.5 * (u.values[k0] + u.values[k1])
        } else {
            let k00 = grid.node_index(&[c[0], c[1]]);
            let k10 = grid.node_index(&[c[0] + 1, c[1]]);
            let k01 = grid.node_index(&[c[0], c[1] + 1]);
            let k11 = grid.node_index(&[c[0] + 1, c[1] + 1]);
            0.25 * (u.values[k00] + u.values[k10] + u.values[k01] + u.values[k11])
        };
        sum += mean.abs().powf(p) * grid.cell_volume;
    }
    sum.powf(1.0 / p)
}

/// Penalty threshold above which the penalized minimizer cannot exceed the
/// volume budget:
/// `μ* = K^{p/(p−1)} · ((p−1)/p) · C(d)^{−p/(p−1)} · c^{(1−d)p/(d(p−1))}`,
/// with `K` the slab-energy constant of the field and `C(d)` the Euclidean
/// isoperimetric constant (`2` in one dimension, `2√π` in two). In one
/// dimension the budget exponent vanishes, so `μ*` is independent of `c`.
///
/// Errors with [`Error::ZeroField`] when `u` vanishes.
pub fn mu_star_estimate(spec: &ProblemSpec, u: &ScalarField) -> Result<f64> {
    let k = penalty_chain_constant(spec, u)?;
    let p = spec.p;
    let d = u.grid.dim as f64;
    let cd = if u.grid.dim == 1 {
        2.0
    } else {
        2.0 * std::f64::consts::PI.sqrt()
    };
    let e = p / (p - 1.0);
    Ok(k.powf(e) * ((p - 1.0) / p) * cd.powf(-e) * spec.c.powf((1.0 - d) * p / (d * (p - 1.0))))
}

/// Smooth part of the descent objective,
/// `(1/p)∫|∇u|^p + (1/2)∫|∇u|² − (λ_c/q)∫|u|^q`.
///
/// The constrained objective is exactly this plus the volume constraint; the
/// penalized one adds the constant multiplier offset and the volume penalty,
/// neither of which depends smoothly on the node values. Both solvers
/// therefore descend on this function, and its gradient is what
/// [`smooth_objective_grad`] must match.
pub fn smooth_objective(u: &ScalarField, spec: &ProblemSpec) -> Result<f64> {
    let ex = Exponents::new(spec.p, spec.q)?;
    Ok(shifted_value(&u.grid, &u.values, &ex, spec.lambda_c))
}

/// Exact nodewise gradient of [`smooth_objective`] with respect to the
/// interior node values. Box-boundary nodes are pinned at zero by the
/// Dirichlet condition, so their entries are zero.
pub fn smooth_objective_grad(u: &ScalarField, spec: &ProblemSpec) -> Result<ScalarField> {
    let ex = Exponents::new(spec.p, spec.q)?;
    let grid = &u.grid;
    let free: Vec<bool> = (0..grid.num_nodes())
        .map(|k| !grid.is_boundary_node(k))
        .collect();
    let eval = shifted_eval(grid, &u.values, &ex, spec.lambda_c, &free);
    ScalarField::new(grid, eval.grad)
}

/// The convexity gap `B(x) = x^q − 1 − q(x − 1)`, nonnegative for `q ≥ 2`
/// with its only zero at `x = 1` (the tangent-line inequality for `x ↦ x^q`).
///
/// Errors with [`Error::NonPositiveX`] unless `x > 0`, and with
/// [`Error::ConfigInvalid`] for `q < 2`.
pub fn b_gap(x: f64, q: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::NonPositiveX { x });
    }
    if !q.is_finite() || q < 2.0 {
        return Err(Error::ConfigInvalid {
            key: "q".to_string(),
            reason: format!("the convexity gap needs q >= 2, got {q}"),
        });
    }
    Ok(x.powf(q) - 1.0 - q * (x - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::energies_raw;
    use crate::geometry::{make_rect, perimeter};
    use crate::grid::make_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_grid(extent: f64, n: usize) -> GridSpec {
        make_grid(1, &[extent], &[n]).expect("valid grid")
    }

    fn tent(grid: &GridSpec) -> ScalarField {
        let l = grid.extents[0];
        ScalarField::from_fn(grid, |pos| 1.0 - (2.0 * pos[0] / l - 1.0).abs())
    }

    #[test]
    fn truncation_is_componentwise_and_rejects_negative_thresholds() {
        let grid = line_grid(1.0, 3);
        let u = ScalarField::new(&grid, vec![0.5, 1.2, 0.3]).unwrap();
        let w = truncate_plus(&u, 0.4).unwrap();
        for (got, want) in w.values.iter().zip([0.1, 0.8, 0.0]) {
            assert!(
                (got - want).abs() < 1e-15,
                "componentwise (u - t)+: got {got}, want {want}"
            );
        }
        assert_eq!(w.values[2], 0.0, "values below the threshold clamp to exact zero");
        let v = ScalarField::new(&grid, vec![-0.5, 1.2, 0.3]).unwrap();
        let w0 = truncate_plus(&v, 0.0).unwrap();
        assert_eq!(
            w0.values,
            vec![0.0, 1.2, 0.3],
            "zero threshold takes the positive part"
        );
        assert!(matches!(
            truncate_plus(&u, -0.1),
            Err(Error::NegativeThreshold { .. })
        ));
    }

    #[test]
    fn truncation_support_shrinks_monotonically_with_the_threshold() {
        let grid = line_grid(1.0, 65);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = ScalarField::new(
            &grid,
            (0..grid.num_nodes()).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=10 {
            let t = 0.1 * i as f64;
            let vol = support_volume_of(&truncate_plus(&u, t).unwrap());
            assert!(
                vol <= prev + 1e-15,
                "support volume grew from {prev} to {vol} at threshold {t}"
            );
            prev = vol;
        }
    }

    #[test]
    fn volume_projection_halves_the_tent_at_half_budget() {
        let grid = line_grid(1.0, 513);
        let u = tent(&grid);
        let (w, t) = volume_projection(&u, 0.5).unwrap();
        let h = grid.h[0];
        assert!(
            (t - 0.5).abs() <= 2.0 * h,
            "tent threshold {t} should be half the height, within a couple of cells"
        );
        let vol = support_volume_of(&w);
        assert!(vol <= 0.5 + 1e-12, "projected support {vol} exceeds the budget");
        assert!(
            vol >= 0.5 - 2.0 * h,
            "projected support {vol} fell more than two cells short of the budget"
        );
    }

    #[test]
    fn volume_projection_is_the_identity_on_feasible_input() {
        let grid = line_grid(1.0, 129);
        let u = tent(&grid);
        let (w, t) = volume_projection(&u, grid.box_volume()).unwrap();
        assert_eq!(t, 0.0, "a budget of |D| never activates");
        assert_eq!(w.values, u.values, "feasible nonnegative input passes through");
        let (_, t2) = volume_projection(&u, 2.0).unwrap();
        assert_eq!(t2, 0.0, "budgets above |D| never activate");
    }

    #[test]
    fn volume_projection_rejects_budgets_below_one_cell() {
        let grid = line_grid(1.0, 129);
        let u = tent(&grid);
        assert!(matches!(
            volume_projection(&u, 0.5 * grid.cell_volume),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn convexity_gap_matches_closed_forms_and_rejects_bad_input() {
        for q in [2.0, 2.5, 3.0, 4.0] {
            assert_eq!(b_gap(1.0, q).unwrap(), 0.0, "gap vanishes at x = 1");
        }
        assert!((b_gap(2.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((b_gap(0.5, 3.0).unwrap() - 0.625).abs() < 1e-15);
        assert!(matches!(b_gap(0.0, 2.0), Err(Error::NonPositiveX { .. })));
        assert!(matches!(b_gap(-1.0, 2.0), Err(Error::NonPositiveX { .. })));
        assert!(matches!(b_gap(1.0, 1.5), Err(Error::ConfigInvalid { .. })));
    }

    #[test]
    fn convexity_gap_is_nonnegative_and_vanishes_only_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x = rng.random_range(f64::EPSILON..=10.0);
            let q = rng.random_range(2.0..=6.0);
            let gap = b_gap(x, q).unwrap();
            assert!(gap >= 0.0, "gap {gap} negative at x = {x}, q = {q}");
            if (x - 1.0).abs() > 1e-6 {
                assert!(gap > 0.0, "gap vanished away from x = 1 at x = {x}, q = {q}");
            }
        }
    }

    #[test]
    fn problem_spec_rejects_invalid_data() {
        assert!(matches!(
            ProblemSpec::new(2.0, 2.0, 0.5, 0.0, 0.0),
            Err(Error::BadExponents { .. })
        ), "the equal-exponent pair is outside the volume-budgeted problem class");
        assert!(matches!(
            ProblemSpec::new(2.0, 3.0, 0.5, 0.0, 0.0),
            Err(Error::BadExponents { .. })
        ));
        assert!(matches!(
            ProblemSpec::new(3.0, 1.5, 0.5, 0.0, 0.0),
            Err(Error::BadExponents { .. })
        ));
        assert!(matches!(
            ProblemSpec::new(3.0, 2.5, -1.0, 0.0, 0.0),
            Err(Error::ConfigInvalid { .. })
        ));
        assert!(matches!(
            ProblemSpec::new(3.0, 2.5, 0.5, -0.1, 0.0),
            Err(Error::ConfigInvalid { .. })
        ));
        assert!(matches!(
            ProblemSpec::new(3.0, 2.5, 0.5, 0.0, -0.1),
            Err(Error::ConfigInvalid { .. })
        ));
        assert!(ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).is_ok());
    }

    #[test]
    fn threshold_estimate_scales_with_the_multiplier_and_ignores_budget_in_1d() {
        let grid = line_grid(2.0, 257);
        let u = tent(&grid);
        let p = 4.0;
        let spec1 = ProblemSpec::new(p, 3.0, 1.0, 0.0, 5.0).unwrap();
        let spec2 = spec1.with_lambda_c(10.0);
        let m1 = mu_star_estimate(&spec1, &u).unwrap();
        let m2 = mu_star_estimate(&spec2, &u).unwrap();
        assert!(m1 > 0.0 && m1.is_finite());
        let expected = 2f64.powf(p / (p - 1.0));
        assert!(
            ((m2 / m1) - expected).abs() < 1e-10,
            "doubling the multiplier should scale the threshold by {expected}, got {}",
            m2 / m1
        );
        let spec3 = ProblemSpec::new(p, 3.0, 0.25, 0.0, 5.0).unwrap();
        let m3 = mu_star_estimate(&spec3, &u).unwrap();
        assert!(
            (m3 - m1).abs() < 1e-12 * m1,
            "in one dimension the threshold must not depend on the budget"
        );
        let zero = ScalarField::zeros(&grid);
        assert!(matches!(
            mu_star_estimate(&spec1, &zero),
            Err(Error::ZeroField)
        ));
    }

    #[test]
    fn constrained_solve_on_a_slack_budget_reduces_to_the_plain_eigensolve() {
        let grid = line_grid(1.0, 129);
        let spec = ProblemSpec::new(3.0, 2.5, 2.0, 0.0, 0.0).unwrap();
        let init = tent(&grid);
        let opts = EigenOptions::default();
        let fb = minimize_constrained(&spec, &grid, &init, &opts).unwrap();
        let eig = solve_lambda1(&ShapeMask::full(&grid), 3.0, 2.5, &opts).unwrap();
        assert!(
            (fb.lambda_c - eig.lambda).abs() <= 1e-12 * eig.lambda,
            "inactive budget must reproduce the unconstrained value: {} vs {}",
            fb.lambda_c,
            eig.lambda
        );
        assert!(
            (fb.support_volume - grid.box_volume()).abs() <= grid.cell_volume + 1e-12,
            "the unconstrained minimizer fills the box"
        );
        assert!(fb.j_value.abs() < 1e-9 * (1.0 + fb.lambda_c), "self-consistent optimum");
    }

    #[test]
    fn constrained_solve_in_1d_finds_the_unit_interval_optimum() {
        let n = 513;
        let grid = line_grid(2.0, n);
        let spec = ProblemSpec::new(4.0, 3.0, 1.0, 0.0, 0.0).unwrap();
        let init = tent(&grid);
        let opts = EigenOptions::default();
        let fb = minimize_constrained(&spec, &grid, &init, &opts).unwrap();
        let cell = grid.cell_volume;
        assert!(
            fb.support_volume <= 1.0 + cell + 1e-12,
            "support volume {} exceeds the budget",
            fb.support_volume
        );
        assert!(
            fb.support_volume >= 1.0 - 4.0 * cell,
            "support volume {} leaves the budget unused",
            fb.support_volume
        );
        // Translation invariance: any unit subinterval carries the optimum.
        let oracle_mask = make_rect(&grid, [0.0, 0.0], [1.0, 0.0]).unwrap();
        let oracle = solve_lambda1(&oracle_mask, 4.0, 3.0, &opts).unwrap();
        let rel = (fb.lambda_c - oracle.lambda).abs() / oracle.lambda;
        assert!(
            rel < 0.01,
            "budgeted optimum {} is {:.2}% from the unit-interval value {}",
            fb.lambda_c,
            100.0 * rel,
            oracle.lambda
        );
        // The support is one interval: its perimeter counts two faces.
        let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
        assert_eq!(
            perimeter(&supp, None),
            2.0,
            "a one-dimensional optimal support is a single interval"
        );
    }

    #[test]
    fn penalized_solve_fixes_the_constrained_solution_and_agrees_with_it() {
        let grid = line_grid(1.0, 257);
        let base = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).unwrap();
        let opts = EigenOptions::default();
        let init = tent(&grid);
        let fb = minimize_constrained(&base, &grid, &init, &opts).unwrap();
        let mu_star = mu_star_estimate(&base.with_lambda_c(fb.lambda_c), &fb.u).unwrap();
        let spec = base.with_lambda_c(fb.lambda_c).with_mu(2.0 * mu_star);
        let pen = minimize_penalized(&spec, &grid, &fb.u, &opts).unwrap();
        assert!(
            pen.support_volume <= spec.c + grid.cell_volume + 1e-12,
            "above the penalty threshold the support must stay within budget"
        );
        let rel = (pen.j_value - fb.lambda_c).abs() / fb.lambda_c;
        assert!(
            rel < 0.01,
            "penalized value {} differs from the constrained value {} by {:.3}%",
            pen.j_value,
            fb.lambda_c,
            100.0 * rel
        );
        let relq = (pen.lambda_c - fb.lambda_c).abs() / fb.lambda_c;
        assert!(
            relq < 0.01,
            "realized quotients disagree: {} vs {}",
            pen.lambda_c,
            fb.lambda_c
        );
    }

    #[test]
    fn penalized_solve_without_penalty_outgrows_the_budget() {
        let grid = line_grid(1.0, 257);
        let opts = EigenOptions::default();
        let init = tent(&grid);
        let constrained = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).unwrap();
        let fb = minimize_constrained(&constrained, &grid, &init, &opts).unwrap();
        // With the multiplier of the half-budget problem but no penalty, the
        // support is free to spread and the value to sink below λ_c.
        let spec = constrained.with_lambda_c(fb.lambda_c).with_mu(0.0);
        let pen = minimize_penalized(&spec, &grid, &init, &opts).unwrap();
        assert!(
            pen.support_volume > spec.c,
            "with no penalty the support ({}) should exceed the budget ({})",
            pen.support_volume,
            spec.c
        );
        assert!(
            pen.j_value < fb.lambda_c,
            "unpenalized value {} should undercut the constrained value {}",
            pen.j_value,
            fb.lambda_c
        );
    }

    #[test]
    fn slab_energy_above_the_free_boundary_is_linear_in_the_slab_height() {
        // Force an infeasible minimizer with a token penalty, then check the
        // thin-slab energy bound with the constant the threshold formula
        // uses.
        let grid = line_grid(1.0, 257);
        let opts = EigenOptions::default();
        let init = tent(&grid);
        let constrained = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).unwrap();
        let fb = minimize_constrained(&constrained, &grid, &init, &opts).unwrap();
        let mu_star = mu_star_estimate(&constrained.with_lambda_c(fb.lambda_c), &fb.u).unwrap();
        let spec = constrained
            .with_lambda_c(fb.lambda_c)
            .with_mu(0.01 * mu_star);
        let pen = minimize_penalized(&spec, &grid, &init, &opts).unwrap();
        assert!(
            pen.support_volume > spec.c,
            "the token penalty should leave the support infeasible"
        );
        let k = penalty_chain_constant(&spec, &pen.u).unwrap();
        let ex = Exponents::new(spec.p, spec.q).unwrap();
        let h = grid.h[0];
        let umax = pen.u.max_abs();
        for steps in [1.0, 2.0, 4.0] {
            let t = steps * h * umax;
            // Energy carried by cells whose mean sits in the slab (0, t).
            let mut slab_ep = 0.0;
            let mut slab_e2 = 0.0;
            let mut slab_vol = 0.0;
            for cell in 0..grid.num_cells() {
                let k0 = grid.node_index(&[cell]);
                let mean = 0.5 * (pen.u.values[k0] + pen.u.values[k0 + 1]);
                if mean > 0.0 && mean < t {
                    let g = (pen.u.values[k0 + 1] - pen.u.values[k0]) / h;
                    slab_ep += (1.0 / spec.p) * ex.pow_p(g.abs()) * grid.cell_volume;
                    slab_e2 += 0.5 * g * g * grid.cell_volume;
                    slab_vol += grid.cell_volume;
                }
            }
            let lhs = slab_ep + slab_e2 + spec.mu * slab_vol;
            assert!(
                lhs <= t * k,
                "slab energy {lhs} exceeds the linear bound {} at height {t}",
                t * k
            );
        }
    }

    #[test]
    fn solver_supports_satisfy_the_face_count_isoperimetric_inequality() {
        let opts = EigenOptions::default();
        // One dimension: any interval has exactly two faces.
        let grid1 = line_grid(2.0, 257);
        let spec1 = ProblemSpec::new(4.0, 3.0, 1.0, 0.0, 0.0).unwrap();
        let fb1 = minimize_constrained(&spec1, &grid1, &tent(&grid1), &opts).unwrap();
        let supp1 = support_mask(&fb1.u, DEFAULT_SUPPORT_TAU);
        assert!(
            perimeter(&supp1, None) >= 2.0,
            "a nonempty one-dimensional support has at least two faces"
        );
        // Two dimensions: face-count perimeter against the square constant.
        let grid2 = make_grid(2, &[2.0, 2.0], &[49, 49]).unwrap();
        let spec2 = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).unwrap();
        let init2 = ScalarField::from_fn(&grid2, |pos| {
            (std::f64::consts::PI * pos[0] / 2.0).sin()
                * (std::f64::consts::PI * pos[1] / 2.0).sin()
        });
        let fb2 = minimize_constrained(&spec2, &grid2, &init2, &opts).unwrap();
        let supp2 = support_mask(&fb2.u, DEFAULT_SUPPORT_TAU);
        let per = perimeter(&supp2, None);
        let vol = volume(&supp2);
        assert!(
            per >= 4.0 * vol.sqrt(),
            "face-count perimeter {per} beats the square bound {} — impossible",
            4.0 * vol.sqrt()
        );
    }

    #[test]
    fn constrained_solve_rejects_degenerate_inputs() {
        let grid = line_grid(1.0, 65);
        let spec = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).unwrap();
        let opts = EigenOptions::default();
        let zero = ScalarField::zeros(&grid);
        assert!(matches!(
            minimize_constrained(&spec, &grid, &zero, &opts),
            Err(Error::ZeroField)
        ));
        let tiny = ProblemSpec::new(3.0, 2.5, 0.25 * grid.cell_volume, 0.0, 0.0).unwrap();
        assert!(matches!(
            minimize_constrained(&tiny, &grid, &tent(&grid), &opts),
            Err(Error::Infeasible { .. })
        ));
        let other = line_grid(1.0, 5);
        assert!(matches!(
            minimize_constrained(&spec, &grid, &tent(&other), &opts),
            Err(Error::GridMismatch { .. })
        ));
        // A field that is negative inside and positive only on the boundary
        // projects to zero.
        let mut vals = vec![-1.0; grid.num_nodes()];
        vals[0] = 1.0;
        let bad = ScalarField::new(&grid, vals).unwrap();
        assert!(matches!(
            minimize_constrained(&spec, &grid, &bad, &opts),
            Err(Error::ZeroField)
        ));
    }

    #[test]
    fn realized_quotient_matches_an_eigensolve_on_the_extracted_support() {
        let grid = line_grid(2.0, 257);
        let spec = ProblemSpec::new(3.0, 2.5, 0.8, 0.0, 0.0).unwrap();
        let opts = EigenOptions::default();
        let fb = minimize_constrained(&spec, &grid, &tent(&grid), &opts).unwrap();
        let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
        let eig = solve_lambda1(&supp, spec.p, spec.q, &opts).unwrap();
        let rel = (fb.lambda_c - eig.lambda).abs() / eig.lambda;
        assert!(
            rel < 0.01,
            "returned multiplier {} disagrees with the support eigenvalue {}",
            fb.lambda_c,
            eig.lambda
        );
        // The returned field realizes that quotient at its own amplitude.
        let bd = energies_raw(&grid, &fb.u.values, &Exponents::new(spec.p, spec.q).unwrap());
        let realized = bd.quotient().expect("nonzero minimizer");
        assert!(
            (realized - fb.lambda_c).abs() <= 1e-9 * fb.lambda_c,
            "stored multiplier {} is not the realized quotient {realized}",
            fb.lambda_c
        );
    }

    #[test]
    fn smooth_objective_matches_the_energy_breakdown_and_central_differences() {
        let grid = line_grid(1.0, 65);
        let spec = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 1.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut values = vec![0.0; grid.num_nodes()];
        for (k, v) in values.iter_mut().enumerate() {
            if !grid.is_boundary_node(k) {
                *v = rng.random_range(0.1..1.0);
            }
        }
        let u = ScalarField::new(&grid, values.clone()).unwrap();

        let bd = energies_raw(&grid, &u.values, &spec.exponents());
        let value = smooth_objective(&u, &spec).unwrap();
        assert!(
            (value - (bd.ep + bd.e2 - spec.lambda_c * bd.dq)).abs() <= 1e-12 * bd.ep.abs(),
            "objective value disagrees with the energy breakdown"
        );

        let grad = smooth_objective_grad(&u, &spec).unwrap();
        let step = 1e-5;
        for k in [1, 13, 32, 50, 63] {
            let mut plus = values.clone();
            plus[k] += step;
            let mut minus = values.clone();
            minus[k] -= step;
            let fd = (smooth_objective(&ScalarField::new(&grid, plus).unwrap(), &spec).unwrap()
                - smooth_objective(&ScalarField::new(&grid, minus).unwrap(), &spec).unwrap())
                / (2.0 * step);
            let rel = (grad.values[k] - fd).abs() / fd.abs().max(1e-12);
            assert!(
                rel < 1e-6,
                "gradient at node {k} is {} but differences give {fd} (rel {rel:.2e})",
                grad.values[k]
            );
        }
    }
}
