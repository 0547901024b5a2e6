//! Projected-gradient solver for the smallest value of the mixed Rayleigh
//! quotient over nonnegative fields supported in a mask.
//!
//! The quotient `R(u) = (ep + e2)/dq` mixes homogeneity degrees, so shape and
//! amplitude are handled separately. Descent steps go along the Sobolev
//! (preconditioned) gradient `K⁻¹ ∇R`, where `K` is the exact Hessian of the
//! quadratic energy part and the solve is a loose conjugate-gradient run —
//! this makes the step scale mesh-independent, where raw nodal gradient
//! descent grinds to a halt as the grid refines. Steps are projected onto
//! `u ≥ 0` inside the mask and `u = 0` elsewhere, kept monotone by
//! backtracking, and followed by an exact one-dimensional minimization over
//! the rescaling `u ↦ t·u`, which costs nothing because `R(t·u)` is an
//! explicit function of one [`EnergyBreakdown`].
//!
//! For `q = 2 < p` the amplitude minimization has no positive solution: the
//! cheapest scale is `t → 0`, where the degree-`p` term dies and the quotient
//! sinks to the linear (Laplacian) quotient `e2/dq`. The solver detects this
//! — the clamped amplitude step hitting its lower bound many times in a row —
//! flags the result as degenerate, and finishes by minimizing the limiting
//! linear quotient itself, reporting amplitude 0.

use crate::error::{Error, Result};
use crate::field::{assemble, energies_raw, stiffness_apply, EnergyBreakdown, Exponents, ScalarField};
use crate::geometry::{distance_to_complement, ShapeMask};
use crate::grid::GridSpec;

/// Per-step amplitude rescaling is clamped to this interval around 1.
const AMPLITUDE_CLAMP: (f64, f64) = (0.5, 2.0);
/// Consecutive low-clamp hits before the run is declared degenerate.
const DEGENERACY_HITS: usize = 20;
/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;

/// Options for [`solve_lambda1`].
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Convergence threshold: the solver stops when the projected-gradient
    /// norm falls below `tol · (1 + |λ|)`.
    pub tol: f64,
    /// Iteration cap; exceeding it returns [`Error::NonConvergence`].
    pub max_iters: usize,
    /// Reproducibility seed. The default algorithm is deterministic and does
    /// not consume randomness; the seed is kept so run configurations stay
    /// stable if stochastic restarts are ever enabled.
    pub seed: u64,
    /// When set, the quotient value of every accepted iteration is stored in
    /// [`EigenResult::history`].
    pub record_history: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            max_iters: 50_000,
            seed: 0,
            record_history: false,
        }
    }
}

/// Outcome of a quotient minimization.
#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Smallest quotient value found (the λ₁ estimate).
    pub lambda: f64,
    /// Minimizer, normalized to unit maximum, nonnegative, zero outside the
    /// mask and on the box boundary.
    pub u: ScalarField,
    /// Scale at which `amplitude · u` is the stationary state the quotient
    /// was minimized at. `1` in the scale-invariant diagnostic mode, `0` when
    /// the run is degenerate (the infimum is a vanishing-amplitude limit).
    pub amplitude: f64,
    /// Accepted descent iterations performed.
    pub iterations: usize,
    /// Final projected-gradient (KKT) norm, measured relative to the
    /// magnitude of the assembled weak-form terms, hence dimensionless and
    /// comparable across grids.
    pub grad_norm: f64,
    /// Set when the optimal amplitude collapsed to zero and `lambda` is the
    /// limiting linear quotient.
    pub degenerate: bool,
    /// Quotient value per accepted iteration (empty unless requested).
    pub history: Vec<f64>,
}

/// The objective being descended: the mixed quotient, or — after amplitude
/// collapse — its vanishing-amplitude limit `e2/dq`, which equals half of the
/// `p = q = 2` quotient.
#[derive(Clone, Copy)]
struct Phase {
    ex: Exponents,
    /// True in the linear-limit phase, where the reported objective and
    /// gradient are half the `p = q = 2` values.
    linear_limit: bool,
}

impl Phase {
    fn factor(&self) -> f64 {
        if self.linear_limit {
            0.5
        } else {
            1.0
        }
    }
}

struct Evaluation {
    value: f64,
    grad: Vec<f64>,
    /// Natural magnitude of the gradient's ingredients at this iterate
    /// (`max(|a_k|, R·|b_k|)` mapped through the same scaling as `grad`);
    /// dividing the KKT norm by it yields a dimensionless stationarity
    /// defect, the quantity the tolerance is compared against.
    grad_scale: f64,
}

/// Objective value and its exact gradient, restricted to the free nodes.
fn evaluate(grid: &GridSpec, v: &[f64], free: &[bool], phase: &Phase) -> Result<Evaluation> {
    let asm = assemble(grid, v, &phase.ex);
    let r = asm.bd.quotient().ok_or(Error::ZeroDenominator)?;
    let f = phase.factor();
    let mut grad = vec![0.0; v.len()];
    let mut scale = 0.0f64;
    for k in 0..v.len() {
        if free[k] {
            grad[k] = f * (asm.a[k] - r * asm.b[k]) / asm.bd.dq;
            scale = scale.max(asm.a[k].abs().max(r * asm.b[k].abs()));
        }
    }
    Ok(Evaluation {
        value: f * r,
        grad,
        grad_scale: f * scale / asm.bd.dq,
    })
}

/// Objective value only (no gradient), for line-search trials.
fn objective(grid: &GridSpec, v: &[f64], phase: &Phase) -> Result<f64> {
    let bd = energies_raw(grid, v, &phase.ex);
    bd.quotient()
        .map(|r| phase.factor() * r)
        .ok_or(Error::ZeroDenominator)
}

/// Max-norm of the projected-gradient (KKT) residual relative to the natural
/// magnitude of the weak-form terms: dimensionless and mesh-independent, so
/// the tolerance means the same thing on every grid. At an active bound
/// (`u = 0`) only the infeasible (negative) gradient part counts.
fn kkt_norm(v: &[f64], eval: &Evaluation, free: &[bool]) -> f64 {
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
    if eval.grad_scale > 0.0 {
        worst / eval.grad_scale
    } else {
        worst
    }
}

pub(crate) fn project(v: &mut [f64], free: &[bool]) {
    for k in 0..v.len() {
        v[k] = if free[k] { v[k].max(0.0) } else { 0.0 };
    }
}

/// Approximate solve of `K d = g` (the Sobolev preconditioner) by conjugate
/// gradients with a loose relative tolerance. The returned direction always
/// satisfies `⟨g, d⟩ > 0` for nonzero `g`, so it is a descent direction.
pub(crate) fn precond_direction(grid: &GridSpec, free: &[bool], g: &[f64]) -> Vec<f64> {
    const CG_REL: f64 = 0.005;
    const CG_MAX: usize = 800;
    let n = g.len();
    let mut d = vec![0.0; n];
    let mut r: Vec<f64> = (0..n).map(|k| if free[k] { g[k] } else { 0.0 }).collect();
    let mut p = r.clone();
    let mut kp = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|x| x * x).sum();
    let rr0 = rr;
    if rr0 == 0.0 {
        return d;
    }
    for _ in 0..CG_MAX {
        stiffness_apply(grid, &p, free, &mut kp);
        let pkp: f64 = p.iter().zip(&kp).map(|(a, b)| a * b).sum();
        if pkp <= 0.0 {
            break;
        }
        let alpha = rr / pkp;
        for k in 0..n {
            d[k] += alpha * p[k];
            r[k] -= alpha * kp[k];
        }
        let rr_new: f64 = r.iter().map(|x| x * x).sum();
        if rr_new <= CG_REL * CG_REL * rr0 {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    d
}

/// Positive smooth starting bump: a product of sines when the free nodes
/// fill the interior of their bounding box exactly (rectangle-like masks),
/// otherwise the distance-to-complement profile, which is positive precisely
/// on the free nodes.
fn initial_bump(grid: &GridSpec, mask: &ShapeMask, free: &[bool]) -> Vec<f64> {
    let n = grid.num_nodes();
    // Bounding box of the free nodes, in node indices.
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    for k in 0..n {
        if free[k] {
            let c = grid.node_coords(k);
            for a in 0..grid.dim {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    // Rectangle-like: the free set is exactly the node-index box [lo, hi].
    let rectangle_like = (0..n).all(|k| {
        let c = grid.node_coords(k);
        let in_bbox = (0..grid.dim).all(|a| c[a] >= lo[a] && c[a] <= hi[a]);
        free[k] == in_bbox
    });
    if rectangle_like {
        let mut v = vec![0.0; n];
        for k in 0..n {
            if free[k] {
                let c = grid.node_coords(k);
                let mut s = 1.0;
                for a in 0..grid.dim {
                    // Zero at lo-1 and hi+1 (the pinned frame around the box).
                    let span = (hi[a] - lo[a] + 2) as f64;
                    let rel = (c[a] - lo[a] + 1) as f64 / span;
                    s *= (std::f64::consts::PI * rel).sin();
                }
                v[k] = s;
            }
        }
        v
    } else {
        distance_to_complement(mask)
    }
}

/// Closed-form minimizer of `t ↦ R(t·u)` for `p > q > 2`, from
/// `(p−q) t^{p−2} ep = (q−2) e2`.
fn amplitude_minimizer(bd: &EnergyBreakdown, p: f64, q: f64) -> Option<f64> {
    if q <= 2.0 || bd.ep <= 0.0 || bd.e2 <= 0.0 {
        return None;
    }
    Some((((q - 2.0) / (p - q)) * (bd.e2 / bd.ep)).powf(1.0 / (p - 2.0)))
}

/// Minimizes the quotient over nonnegative fields supported in `mask`.
///
/// Nodes are free when every adjacent cell is in the mask (so box-boundary
/// nodes are always pinned to zero). Errors with [`Error::NoDomain`] when no
/// node is free, and with [`Error::NonConvergence`] when the iteration cap is
/// reached before the projected gradient meets `tol · (1 + |λ|)`.
pub fn solve_lambda1(mask: &ShapeMask, p: f64, q: f64, opts: &EigenOptions) -> Result<EigenResult> {
    let ex = Exponents::new(p, q)?;
    let grid = &mask.grid;
    let free = mask.nodes_inside();
    if !free.iter().any(|&f| f) {
        return Err(Error::NoDomain {
            context: if mask.is_empty_shape() {
                "mask is empty".to_string()
            } else {
                "mask contains cells but no node has all its cells masked".to_string()
            },
        });
    }

    let mut phase = Phase {
        ex,
        linear_limit: false,
    };
    let mixed_amplitude = q > 2.0; // interior optimal scale exists
    let collapsing = q == 2.0 && p > 2.0; // optimal scale is t → 0

    let mut v = initial_bump(grid, mask, &free);
    project(&mut v, &free);
    normalize_max(&mut v);

    let mut eval = evaluate(grid, &v, &free, &phase)?;
    let mut history = Vec::new();
    if opts.record_history {
        history.push(eval.value);
    }

    let mut alpha0 = 1.0f64;
    let mut low_clamp_streak = 0usize;
    let mut degenerate = false;
    let mut iterations = 0usize;

    while iterations < opts.max_iters {
        let threshold = opts.tol * (1.0 + eval.value.abs());
        let cur_kkt = kkt_norm(&v, &eval, &free);
        if cur_kkt <= threshold {
            break;
        }

        // Sobolev direction; with K close to the objective's dominant
        // curvature, the natural step is O(1).
        let dir = precond_direction(grid, &free, &eval.grad);

        // Monotone backtracking on the projected step.
        let mut alpha = alpha0;
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = (0..v.len()).map(|k| v[k] - alpha * dir[k]).collect();
            project(&mut trial, &free);
            let mut gd = 0.0;
            let mut moved = false;
            for k in 0..v.len() {
                let d = trial[k] - v[k];
                gd += eval.grad[k] * d;
                moved |= d != 0.0;
            }
            if !moved {
                break; // stationary for this step length — and all smaller ones
            }
            let noise = 4.0 * f64::EPSILON * eval.value.abs();
            if ARMIJO_C1 * (-gd) > noise {
                // The predicted decrease is resolvable in floating point, so
                // classic Armijo acceptance on the objective applies; the
                // noise allowance keeps monotonicity honest to machine
                // precision.
                if let Ok(value) = objective(grid, &trial, &phase) {
                    if value <= eval.value + ARMIJO_C1 * gd + noise {
                        accepted = Some((trial, value));
                        // Cheap step-length adaptivity: retry a notch above
                        // the accepted length so one bad iteration cannot
                        // trap the step at a microscopic scale.
                        alpha0 = (alpha * 2.0).clamp(1e-10, 8.0);
                        break;
                    }
                }
            } else {
                // Objective differences of this size drown in rounding, so
                // an objective-based test would let the iterate wander.
                // Accept on a strict drop of the projected-gradient norm
                // instead, which stays meaningful down to machine scale.
                if let Ok(trial_eval) = evaluate(grid, &trial, &free, &phase) {
                    if kkt_norm(&trial, &trial_eval, &free) < cur_kkt {
                        accepted = Some((trial, trial_eval.value));
                        alpha0 = (alpha * 2.0).clamp(1e-10, 8.0);
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }

        let Some((mut new_v, _)) = accepted else {
            // No accepted move at any tried step length: the iterate is
            // stationary to float precision. Fall through to the final
            // gradient verdict instead of spinning.
            break;
        };

        // Amplitude line search on the accepted point.
        if mixed_amplitude {
            let bd = energies_raw(grid, &new_v, &phase.ex);
            if let Some(t_star) = amplitude_minimizer(&bd, p, q) {
                let t = t_star.clamp(AMPLITUDE_CLAMP.0, AMPLITUDE_CLAMP.1);
                if (t - 1.0).abs() > 1e-12 {
                    for x in new_v.iter_mut() {
                        *x *= t;
                    }
                }
            }
        } else if collapsing && !phase.linear_limit {
            // The optimal scale is 0: shrink by the maximal allowed factor
            // and watch for a persistent streak.
            for x in new_v.iter_mut() {
                *x *= AMPLITUDE_CLAMP.0;
            }
            low_clamp_streak += 1;
            if low_clamp_streak >= DEGENERACY_HITS {
                degenerate = true;
                phase = Phase {
                    ex: Exponents::new(2.0, 2.0)?,
                    linear_limit: true,
                };
                normalize_max(&mut new_v);
                alpha0 = 1.0; // objective changed; restart the step scale
            }
        }

        if phase.ex.is_diagnostic_pair() {
            // Scale-invariant objective: keep the iterate well-conditioned.
            let m = max_abs(&new_v);
            if m > 4.0 || m < 0.25 {
                for x in new_v.iter_mut() {
                    *x /= m;
                }
            }
        }
        eval = evaluate(grid, &new_v, &free, &phase)?;
        v = new_v;
        iterations += 1;
        if opts.record_history {
            history.push(eval.value);
        }
    }

    let grad_norm = kkt_norm(&v, &eval, &free);
    if grad_norm > opts.tol * (1.0 + eval.value.abs()) {
        return Err(Error::NonConvergence {
            iterations,
            residual: grad_norm,
            tolerance: opts.tol * (1.0 + eval.value.abs()),
        });
    }

    let amplitude = if degenerate {
        0.0
    } else if phase.ex.is_diagnostic_pair() {
        1.0
    } else {
        max_abs(&v)
    };
    normalize_max(&mut v);
    Ok(EigenResult {
        lambda: eval.value,
        u: ScalarField {
            grid: grid.clone(),
            values: v,
        },
        amplitude,
        iterations,
        grad_norm,
        degenerate,
        history,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

fn normalize_max(v: &mut [f64]) {
    let m = max_abs(v);
    if m > 0.0 {
        for x in v.iter_mut() {
            *x /= m;
        }
    }
}

/// The rescaling curve `t ↦ R(t·u)` sampled on `t_grid`, evaluated exactly
/// from one [`EnergyBreakdown`] (no further quadrature), together with the
/// interior minimizer of the full curve over `t ∈ (0, ∞)` when one exists
/// (`p > q > 2`; for `q = 2` the curve decreases monotonically toward its
/// `t → 0` limit and has no interior minimizer).
#[derive(Debug, Clone)]
pub struct AmplitudeProfile {
    pub ts: Vec<f64>,
    pub values: Vec<f64>,
    pub minimizer: Option<f64>,
}

/// Samples the amplitude rescaling curve of `u`.
///
/// Errors with [`Error::ZeroDenominator`] when `u` vanishes, and with
/// [`Error::ConfigInvalid`] when `t_grid` contains a nonpositive or
/// non-finite scale.
pub fn amplitude_profile(
    u: &ScalarField,
    p: f64,
    q: f64,
    t_grid: &[f64],
) -> Result<AmplitudeProfile> {
    let ex = Exponents::new(p, q)?;
    for &t in t_grid {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::ConfigInvalid {
                key: "t_grid".to_string(),
                reason: format!("scales must be positive and finite, got {t}"),
            });
        }
    }
    let bd = energies_raw(&u.grid, &u.values, &ex);
    if bd.quotient().is_none() {
        return Err(Error::ZeroDenominator);
    }
    let values = t_grid
        .iter()
        .map(|&t| bd.quotient_at_scale(t, p, q))
        .collect();
    Ok(AmplitudeProfile {
        ts: t_grid.to_vec(),
        values,
        minimizer: amplitude_minimizer(&bd, p, q),
    })
}
