//! Batch run configurations, the diagnostic battery, and report assembly.
//!
//! A run is described by one JSON file with five blocks:
//!
//! ```json
//! {
//!   "grid":    { "dim": 2, "extents": [2.0, 2.0], "counts": [129, 129] },
//!   "problem": { "p": 3.0, "q": 2.5, "c": 0.5, "mu": "auto", "lambda_c": "auto" },
//!   "solver":  { "tol": 1e-8, "max_iters": 50000, "seed": 7, "diag_p2q2": false },
//!   "experiment": {
//!     "diagnostics": ["positivity", "multiplier", "growth"],
//!     "shapes": [ { "kind": "ball", "center": [1.0, 1.0], "radius": 0.4 } ],
//!     "perturbations": [],
//!     "radii": [0.05, 0.1, 0.2],
//!     "bumps": 8
//!   },
//!   "output": "out/run1"
//! }
//! ```
//!
//! Every block is validated against its module's invariants before any
//! compute starts; the first offending key is named in the error. `"auto"`
//! for `problem.mu` resolves to twice the penalty-threshold estimate of the
//! constrained solution, and for `problem.lambda_c` to the realized quotient
//! of the solve at hand. The single `solver.seed` is split per component
//! (bump placement, probe placement) by hashing, so adding one stochastic
//! consumer never shifts another's stream.
//!
//! All artifacts go through [`crate::io`]; with a fixed config and seed a
//! rerun reproduces every output byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    boundary_bumps, boundary_probe_points, continuity_experiment, default_init, density_scan,
    el_lhs, equivalence_check, estimate_lambda, faber_krahn_compare, flux_limit,
    lipschitz_estimate, measure_growth, perimeter_vs_measure, residual_measure, weak_identity_p,
    ContinuityRow,
};
use crate::eigen::{solve_lambda1, EigenOptions};
use crate::error::{Error, Result};
use crate::field::{rayleigh_quotient, ScalarField};
use crate::free_boundary::{
    minimize_constrained, minimize_penalized, mu_star_estimate, ProblemSpec,
};
use crate::geometry::{
    distance_to_complement, make_ball, make_rect, support_mask, ShapeMask, DEFAULT_SUPPORT_TAU,
};
use crate::grid::{make_grid, GridSpec};
use crate::io::{load_field, load_mask, load_verdict, save_curve, save_field, save_mask,
    save_verdict, Verdict};

// ---------------------------------------------------------------------------
// Battery thresholds
// ---------------------------------------------------------------------------

/// Fraction of the peak weight the most negative residual weight may reach.
const POSITIVITY_NEG_REL: f64 = 1e-8;
/// Fraction of the peak weight allowed at nodes at least three cells inside
/// the support.
const POSITIVITY_INTERIOR_REL: f64 = 1e-6;
/// Largest admissible coefficient of variation of the per-field multiplier
/// ratios.
const MULTIPLIER_SPREAD_MAX: f64 = 0.10;
/// Half-width of the admissible band around the expected growth exponent
/// `d − 1`.
const GROWTH_SLOPE_BAND: f64 = 0.3;
/// Admissible volume-fraction window for boundary balls, shape side.
const DENSITY_LOW: f64 = 0.05;
const DENSITY_HIGH: f64 = 0.95;
/// Required decay of the strip flux from the widest to the narrowest strip.
const FLUX_DECAY_FACTOR: f64 = 0.1;
/// Relative defect allowed in the weak truncation identities.
const IDENTITY_REL: f64 = 1e-6;
/// Relative gap allowed between the constrained minimum and the eigenvalue
/// of its support, indexed by dimension − 1.
const EQUIVALENCE_GAP: [f64; 2] = [0.01, 0.02];
/// Relative eigenvalue gap allowed for shape perturbations below the mesh
/// floor (complement-Hausdorff distance under `4h`).
const CONTINUITY_GAP: f64 = 0.01;
/// Number of boundary probe centers for windowed growth fits.
const PROBE_CENTERS: usize = 12;

/// Solution-based checks that run by default.
const DEFAULT_BATTERY: [&str; 8] = [
    "positivity",
    "multiplier",
    "growth",
    "perimeter",
    "density",
    "flux",
    "lipschitz",
    "identity",
];
/// Everything `experiment.diagnostics` may name.
const CATALOG: [&str; 11] = [
    "positivity",
    "multiplier",
    "growth",
    "perimeter",
    "density",
    "flux",
    "lipschitz",
    "identity",
    "equivalence",
    "ranking",
    "continuity",
];
/// Diagnostics that need a usable window of probe radii.
const NEEDS_RADII: [&str; 4] = ["growth", "perimeter", "density", "flux"];

// ---------------------------------------------------------------------------
// Configuration blocks
// ---------------------------------------------------------------------------

/// Raw run configuration as parsed from JSON. Call [`RunConfig::validate`]
/// to turn it into a [`ValidatedRun`] before doing any work with it.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub problem: ProblemBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub p: f64,
    pub q: f64,
    /// Volume budget; required unless running the linear diagnostic pair.
    pub c: Option<f64>,
    /// Penalty weight: a number, or `"auto"` for twice the estimated
    /// penalty threshold of the constrained solution.
    #[serde(default = "auto_word")]
    pub mu: AutoOr,
    /// Multiplier: a number, or `"auto"` for the realized quotient of the
    /// solve at hand.
    #[serde(default = "auto_word")]
    pub lambda_c: AutoOr,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Unlocks the linear diagnostic pair `p = q = 2`.
    pub diag_p2q2: bool,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let o = EigenOptions::default();
        SolverBlock {
            tol: o.tol,
            max_iters: o.max_iters,
            seed: o.seed,
            diag_p2q2: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    /// Which checks to run; omitted means the default solution battery.
    pub diagnostics: Option<Vec<String>>,
    /// Shapes for `eigen`, `ranking` and the `continuity` base.
    pub shapes: Vec<ShapeSpec>,
    /// Perturbed shapes for `continuity`.
    pub perturbations: Vec<ShapeSpec>,
    /// Probe-window radii; omitted means a ladder of `{4,6,8,12,16}·h`
    /// clipped to a quarter of the box diameter.
    pub radii: Option<Vec<f64>>,
    /// Boundary-crossing test bumps for the multiplier estimate.
    pub bumps: Option<usize>,
}

/// A number or the word `"auto"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Number(f64),
    Word(String),
}

fn auto_word() -> AutoOr {
    AutoOr::Word("auto".to_string())
}

/// A resolved optional parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Auto,
    Value(f64),
}

impl AutoOr {
    fn resolve(&self, key: &str) -> Result<Setting> {
        match self {
            AutoOr::Number(x) if x.is_finite() && *x >= 0.0 => Ok(Setting::Value(*x)),
            AutoOr::Number(x) => Err(Error::ConfigInvalid {
                key: key.to_string(),
                reason: format!("must be a finite nonnegative number, got {x}"),
            }),
            AutoOr::Word(w) if w == "auto" => Ok(Setting::Auto),
            AutoOr::Word(w) => Err(Error::ConfigInvalid {
                key: key.to_string(),
                reason: format!("expected a number or \"auto\", got \"{w}\""),
            }),
        }
    }
}

/// Inline shape description used in configs.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Ball { center: [f64; 2], radius: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2] },
}

impl ShapeSpec {
    fn build(&self, grid: &GridSpec) -> Result<ShapeMask> {
        match self {
            ShapeSpec::Ball { center, radius } => make_ball(grid, *center, *radius),
            ShapeSpec::Rect { lo, hi } => make_rect(grid, *lo, *hi),
        }
    }

    fn is_ball(&self) -> bool {
        matches!(self, ShapeSpec::Ball { .. })
    }
}

/// Parses a configuration from JSON text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::ConfigInvalid {
        key: "config".to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        parse_config(&text)
    }

    /// Validates every block against its module's invariants and resolves
    /// defaults. Nothing is computed or written here.
    pub fn validate(&self) -> Result<ValidatedRun> {
        let grid = make_grid(self.grid.dim, &self.grid.extents, &self.grid.counts)?;

        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) {
            return Err(Error::ConfigInvalid {
                key: "solver.tol".to_string(),
                reason: format!("must be a positive finite number, got {}", self.solver.tol),
            });
        }
        if self.solver.max_iters == 0 {
            return Err(Error::ConfigInvalid {
                key: "solver.max_iters".to_string(),
                reason: "must be at least 1".to_string(),
            });
        }
        let opts = EigenOptions {
            tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            seed: self.solver.seed,
            record_history: false,
        };

        let p = self.problem.p;
        let q = self.problem.q;
        let diag_pair = p == q;
        let problem = if diag_pair {
            if !(self.solver.diag_p2q2 && p == 2.0 && q == 2.0) {
                return Err(Error::ConfigInvalid {
                    key: "problem.q".to_string(),
                    reason: format!(
                        "p = q = {p} is only legal as the linear diagnostic pair \
                         p = q = 2 with solver.diag_p2q2 set"
                    ),
                });
            }
            None
        } else {
            let c = self.problem.c.ok_or_else(|| Error::ConfigInvalid {
                key: "problem.c".to_string(),
                reason: "a volume budget is required unless running the linear diagnostic pair"
                    .to_string(),
            })?;
            Some(ProblemSpec::new(p, q, c, 0.0, 0.0)?)
        };
        let mu = self.problem.mu.resolve("problem.mu")?;
        let lambda = self.problem.lambda_c.resolve("problem.lambda_c")?;

        let diagnostics: Vec<String> = match &self.experiment.diagnostics {
            None => {
                if diag_pair {
                    Vec::new()
                } else {
                    DEFAULT_BATTERY.iter().map(|s| s.to_string()).collect()
                }
            }
            Some(list) => {
                for name in list {
                    if !CATALOG.contains(&name.as_str()) {
                        return Err(Error::ConfigInvalid {
                            key: "experiment.diagnostics".to_string(),
                            reason: format!(
                                "unknown diagnostic \"{name}\" (known: {})",
                                CATALOG.join(", ")
                            ),
                        });
                    }
                }
                if diag_pair && !list.is_empty() {
                    return Err(Error::ConfigInvalid {
                        key: "experiment.diagnostics".to_string(),
                        reason: "only the plain eigensolve runs with the linear diagnostic pair"
                            .to_string(),
                    });
                }
                list.clone()
            }
        };

        let shapes: Vec<ShapeMask> = self
            .experiment
            .shapes
            .iter()
            .map(|s| s.build(&grid))
            .collect::<Result<_>>()?;
        let perturbations: Vec<ShapeMask> = self
            .experiment
            .perturbations
            .iter()
            .map(|s| s.build(&grid))
            .collect::<Result<_>>()?;

        let h = grid.h_max();
        let r_max = grid.diameter() / 4.0;
        let radii = match &self.experiment.radii {
            Some(list) => {
                let ascending = list.windows(2).all(|w| w[0] < w[1]);
                let in_window = list.iter().all(|&r| {
                    r.is_finite() && r >= 4.0 * h * (1.0 - 1e-9) && r <= r_max * (1.0 + 1e-9)
                });
                if list.is_empty() || !ascending || !in_window {
                    return Err(Error::ConfigInvalid {
                        key: "experiment.radii".to_string(),
                        reason: format!(
                            "radii must increase strictly within [{:.4e}, {:.4e}]",
                            4.0 * h,
                            r_max
                        ),
                    });
                }
                list.clone()
            }
            None => [4.0, 6.0, 8.0, 12.0, 16.0]
                .iter()
                .map(|m| m * h)
                .filter(|&r| r <= r_max * (1.0 + 1e-9))
                .collect(),
        };
        if diagnostics.iter().any(|d| NEEDS_RADII.contains(&d.as_str())) && radii.len() < 2 {
            return Err(Error::ConfigInvalid {
                key: "experiment.radii".to_string(),
                reason: format!(
                    "the grid leaves fewer than two usable window radii in [{:.4e}, {:.4e}]",
                    4.0 * h,
                    r_max
                ),
            });
        }

        let bumps = self.experiment.bumps.unwrap_or(8);
        if bumps == 0 {
            return Err(Error::ConfigInvalid {
                key: "experiment.bumps".to_string(),
                reason: "at least one test bump is required".to_string(),
            });
        }

        if diagnostics.iter().any(|d| d == "ranking") && shapes.is_empty() {
            return Err(Error::ConfigInvalid {
                key: "experiment.shapes".to_string(),
                reason: "the ranking diagnostic needs at least one shape".to_string(),
            });
        }
        if diagnostics.iter().any(|d| d == "continuity")
            && (shapes.is_empty() || perturbations.is_empty())
        {
            return Err(Error::ConfigInvalid {
                key: "experiment.perturbations".to_string(),
                reason: "the continuity diagnostic needs a base shape and perturbations"
                    .to_string(),
            });
        }

        Ok(ValidatedRun {
            grid,
            p,
            q,
            diag_pair,
            problem,
            mu,
            lambda,
            opts,
            seed: self.solver.seed,
            diagnostics,
            shape_specs: self.experiment.shapes.clone(),
            shapes,
            perturbations,
            radii,
            bumps,
            output: self.output.clone(),
        })
    }
}

/// A configuration whose every block passed validation, with defaults
/// resolved and shapes rasterized. All pipeline stages consume this.
#[derive(Debug, Clone)]
pub struct ValidatedRun {
    pub grid: GridSpec,
    pub p: f64,
    pub q: f64,
    /// Linear diagnostic mode `p = q = 2`: only the plain eigensolve runs.
    pub diag_pair: bool,
    /// Problem with placeholder multiplier and penalty (resolved per stage);
    /// absent in diagnostic-pair mode.
    pub problem: Option<ProblemSpec>,
    pub mu: Setting,
    pub lambda: Setting,
    pub opts: EigenOptions,
    pub seed: u64,
    pub diagnostics: Vec<String>,
    pub shape_specs: Vec<ShapeSpec>,
    pub shapes: Vec<ShapeMask>,
    pub perturbations: Vec<ShapeMask>,
    pub radii: Vec<f64>,
    pub bumps: usize,
    pub output: PathBuf,
}

/// Derives a component seed from the run seed: the first eight bytes of
/// `SHA-256(seed_le || label)`. Components draw from disjoint streams, so
/// adding one consumer never shifts another's randomness.
pub fn split_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest holds 32 bytes"))
}

/// Exit status for an error: 3 when a solver ran out of iterations, 2 for
/// everything else (bad configuration, bad artifacts, I/O). Diagnostic
/// failures are not errors; callers map a failed report to status 1.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } => 3,
        _ => 2,
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Outcome of the plain eigensolve stage.
#[derive(Debug, Clone, Serialize)]
pub struct EigenSummary {
    pub lambda: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

/// One solve's headline numbers.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub lambda_c: f64,
    pub support_volume: f64,
    pub j_value: f64,
    pub outer_iterations: usize,
}

/// Outcome of the optimize stage: the constrained solve, the resolved
/// penalty weight, and the penalized solve when one ran.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizeSummary {
    pub constrained: SolveSummary,
    pub mu: f64,
    pub penalized: Option<SolveSummary>,
}

/// Optimize stage result: the summary plus the solution and its problem with
/// the multiplier resolved, ready for diagnostics.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub summary: OptimizeSummary,
    pub spec: ProblemSpec,
    pub field: ScalarField,
}

/// Aggregated view of every verdict in a report directory.
#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub entries: Vec<ReportEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    pub file: String,
    pub name: String,
    pub claim: String,
    pub pass: bool,
}

fn require_problem(v: &ValidatedRun, what: &str) -> Result<ProblemSpec> {
    v.problem.clone().ok_or_else(|| Error::ConfigInvalid {
        key: "problem.q".to_string(),
        reason: format!("{what} needs exponents p > q; the linear diagnostic pair only solves"),
    })
}

/// Solves the first eigenvalue on a mask: the override path, else the first
/// configured shape, else the whole box.
pub fn eigen_stage(v: &ValidatedRun, mask_override: Option<&Path>) -> Result<EigenSummary> {
    let mask = match mask_override {
        Some(path) => load_mask(path)?,
        None => match v.shapes.first() {
            Some(m) => m.clone(),
            None => ShapeMask::full(&v.grid),
        },
    };
    let eig = solve_lambda1(&mask, v.p, v.q, &v.opts)?;
    Ok(EigenSummary {
        lambda: eig.lambda,
        iterations: eig.iterations,
        degenerate: eig.degenerate,
    })
}

/// Runs the constrained solve (and the penalized solve when the resolved
/// penalty weight is positive), writing the solution field, its support mask
/// and the penalized field under the output directory.
pub fn optimize_stage(v: &ValidatedRun) -> Result<OptimizeOutcome> {
    let spec0 = require_problem(v, "optimize")?;
    let init = default_init(&v.grid);
    let fb = minimize_constrained(&spec0, &v.grid, &init, &v.opts)?;

    let lambda_c = match v.lambda {
        Setting::Auto => fb.lambda_c,
        Setting::Value(x) => x,
    };
    let spec = spec0.with_lambda_c(lambda_c);
    let mu = match v.mu {
        Setting::Auto => 2.0 * mu_star_estimate(&spec, &fb.u)?,
        Setting::Value(x) => x,
    };

    save_field(&fb.u, &v.output.join("solution"))?;
    let supp = support_mask(&fb.u, DEFAULT_SUPPORT_TAU);
    save_mask(&supp, &v.output.join("support"))?;

    let constrained = SolveSummary {
        lambda_c: fb.lambda_c,
        support_volume: fb.support_volume,
        j_value: fb.j_value,
        outer_iterations: fb.outer_iterations,
    };

    let penalized = if mu > 0.0 {
        let pen_spec = spec.clone().with_mu(mu);
        // Start from the constrained minimizer: with the multiplier frozen,
        // the penalized objective also has minimizers at amplitudes far from
        // the eigen-scale (where the negative multiplier term dominates),
        // and a cold start can slide there. Near the constrained solution
        // the objective is a faithful exactness check of the penalty.
        let pen = minimize_penalized(&pen_spec, &v.grid, &fb.u, &v.opts)?;
        save_field(&pen.u, &v.output.join("penalized"))?;
        Some(SolveSummary {
            lambda_c: pen.lambda_c,
            support_volume: pen.support_volume,
            j_value: pen.j_value,
            outer_iterations: pen.outer_iterations,
        })
    } else {
        None
    };

    Ok(OptimizeOutcome {
        summary: OptimizeSummary {
            constrained,
            mu,
            penalized,
        },
        spec: spec.with_mu(mu),
        field: fb.u,
    })
}

/// Loads a stored solution (digest-checked), resolves its multiplier, and
/// runs every requested diagnostic against it. The default solution base is
/// `<output>/solution`.
pub fn verify_stage(v: &ValidatedRun, solution_base: Option<&Path>) -> Result<Vec<Verdict>> {
    let spec0 = require_problem(v, "verify")?;
    let default_base = v.output.join("solution");
    let base = solution_base.unwrap_or(&default_base);
    let u = load_field(base)?;
    if u.grid != v.grid {
        return Err(Error::GridMismatch {
            context: "stored solution was computed on a different grid than the configuration"
                .to_string(),
        });
    }
    let lambda_c = match v.lambda {
        Setting::Auto => rayleigh_quotient(&u, v.p, v.q)?,
        Setting::Value(x) => x,
    };
    let spec = spec0.with_lambda_c(lambda_c);
    execute_diagnostics(v, &u, &spec)
}

/// Solves the base shape and every perturbation, writes the distance/gap
/// curve and the continuity verdict, and returns both.
pub fn continuity_stage(v: &ValidatedRun) -> Result<(Vec<ContinuityRow>, Verdict)> {
    let spec = require_problem(v, "continuity")?;
    let base = v.shapes.first().ok_or_else(|| Error::ConfigInvalid {
        key: "experiment.shapes".to_string(),
        reason: "continuity needs a base shape".to_string(),
    })?;
    if v.perturbations.is_empty() {
        return Err(Error::ConfigInvalid {
            key: "experiment.perturbations".to_string(),
            reason: "continuity needs at least one perturbed shape".to_string(),
        });
    }
    continuity_core(v, &spec, base, &v.perturbations)
}

fn continuity_core(
    v: &ValidatedRun,
    spec: &ProblemSpec,
    base: &ShapeMask,
    perturbations: &[ShapeMask],
) -> Result<(Vec<ContinuityRow>, Verdict)> {
    let rows = continuity_experiment(base, perturbations, spec, &v.opts)?;
    let lambda0 = solve_lambda1(base, spec.p, spec.q, &v.opts)?.lambda;
    let slack = 1e-6 * lambda0.abs();
    let monotone = rows
        .windows(2)
        .all(|w| w[0].gap <= w[1].gap + slack);
    let h = v.grid.h_max();
    let fine = rows
        .iter()
        .filter(|r| r.distance < 4.0 * h)
        .all(|r| r.gap <= CONTINUITY_GAP * lambda0.abs());
    let nearest = rows.first();
    let verdict = Verdict::new(
        "continuity",
        "the eigenvalue is continuous under complement-Hausdorff convergence of shapes",
        monotone && fine,
    )
    .with_metric("base_lambda", lambda0)
    .with_metric("nearest_distance", nearest.map_or(f64::NAN, |r| r.distance))
    .with_metric("nearest_gap", nearest.map_or(f64::NAN, |r| r.gap));
    let curve: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.distance, r.lambda, r.gap])
        .collect();
    save_curve(
        &v.output.join("continuity.csv"),
        &["distance", "lambda", "gap"],
        &curve,
    )?;
    save_verdict(&verdict, &v.output.join("continuity.verdict.json"))?;
    Ok((rows, verdict))
}

/// Scans a directory for `*.verdict.json` files (sorted by name), aggregates
/// them, and writes `report.json` beside them. A missing or empty directory
/// yields an empty summary.
pub fn report_stage(dir: &Path) -> Result<ReportSummary> {
    let mut files: Vec<PathBuf> = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.ends_with(".verdict.json") {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut entries = Vec::with_capacity(files.len());
    let mut passed = 0usize;
    for path in &files {
        let v = load_verdict(path)?;
        if v.pass {
            passed += 1;
        }
        entries.push(ReportEntry {
            file: path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("")
                .to_string(),
            name: v.name,
            claim: v.claim,
            pass: v.pass,
        });
    }
    let summary = ReportSummary {
        total: entries.len(),
        passed,
        failed: entries.len() - passed,
        entries,
    };
    if dir.is_dir() {
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(dir.join("report.json"), text)?;
    }
    Ok(summary)
}

/// The whole batch: optimize, run every requested diagnostic, aggregate the
/// report. In diagnostic-pair mode only the plain eigensolve runs, recorded
/// as a single verdict.
pub fn run_pipeline(v: &ValidatedRun) -> Result<ReportSummary> {
    fs::create_dir_all(&v.output)?;
    if v.diag_pair {
        let mask = match v.shapes.first() {
            Some(m) => m.clone(),
            None => ShapeMask::full(&v.grid),
        };
        let eig = solve_lambda1(&mask, v.p, v.q, &v.opts)?;
        save_field(&eig.u, &v.output.join("solution"))?;
        let verdict = Verdict::new(
            "linear",
            "with p = q = 2 the solver reduces to the linear Dirichlet eigenproblem",
            true,
        )
        .with_metric("lambda", eig.lambda)
        .with_metric("iterations", eig.iterations as f64)
        .with_metric("grad_norm", eig.grad_norm);
        save_verdict(&verdict, &v.output.join("linear.verdict.json"))?;
        return report_stage(&v.output);
    }
    let outcome = optimize_stage(v)?;
    execute_diagnostics(v, &outcome.field, &outcome.spec)?;
    report_stage(&v.output)
}

// ---------------------------------------------------------------------------
// The diagnostic battery
// ---------------------------------------------------------------------------

/// Runs every diagnostic in `v.diagnostics` against the solution `u` with
/// multiplier `spec.lambda_c`, writing one verdict and one curve per check
/// into the output directory, and returns the verdicts in order.
pub fn execute_diagnostics(
    v: &ValidatedRun,
    u: &ScalarField,
    spec: &ProblemSpec,
) -> Result<Vec<Verdict>> {
    fs::create_dir_all(&v.output)?;
    let grid = &u.grid;
    let h = grid.h_max();
    let supp = support_mask(u, DEFAULT_SUPPORT_TAU);
    let measure = residual_measure(u, spec.lambda_c, spec.p, spec.q)?;
    let probes_seed = split_seed(v.seed, "probes");
    let bumps_seed = split_seed(v.seed, "bumps");

    let mut verdicts = Vec::with_capacity(v.diagnostics.len());
    for name in &v.diagnostics {
        let verdict = match name.as_str() {
            "positivity" => {
                let max = measure.max_abs_weight();
                let min = measure.min_weight();
                let dist = distance_to_complement(&supp);
                let mut interior_max = 0.0f64;
                let mut rows = Vec::with_capacity(grid.num_nodes());
                for k in 0..grid.num_nodes() {
                    rows.push(vec![dist[k], measure.weights[k]]);
                    if dist[k] >= 3.0 * h * (1.0 - 1e-12) {
                        interior_max = interior_max.max(measure.weights[k].abs());
                    }
                }
                save_curve(&v.output.join("positivity.csv"), &["depth", "weight"], &rows)?;
                let pass = min >= -POSITIVITY_NEG_REL * max
                    && interior_max <= POSITIVITY_INTERIOR_REL * max;
                Verdict::new(
                    "positivity",
                    "the optimality residual is a nonnegative measure concentrated on the \
                     free boundary",
                    pass,
                )
                .with_metric("min_weight", min)
                .with_metric("max_weight", max)
                .with_metric("interior_max", interior_max)
                .with_metric("total_mass", measure.total_mass())
            }
            "multiplier" => {
                let phis = boundary_bumps(&supp, v.bumps, bumps_seed)?;
                let (lambda_big, spread) = estimate_lambda(u, &phis, spec)?;
                let rows: Vec<Vec<f64>> = phis
                    .iter()
                    .enumerate()
                    .map(|(k, phi)| {
                        vec![k as f64, el_lhs(u, phi, spec.lambda_c, spec.p, spec.q)]
                    })
                    .collect();
                save_curve(&v.output.join("multiplier.csv"), &["bump", "lhs"], &rows)?;
                Verdict::new(
                    "multiplier",
                    "domain variations of the optimum share one positive multiplier",
                    lambda_big > 0.0 && spread < MULTIPLIER_SPREAD_MAX,
                )
                .with_metric("lambda_big", lambda_big)
                .with_metric("spread", spread)
                .with_metric("bumps", phis.len() as f64)
            }
            "growth" => {
                let centers = boundary_probe_points(&supp, PROBE_CENTERS, probes_seed)?;
                let fit = measure_growth(&measure, &centers, &v.radii)?;
                let expected = (grid.dim - 1) as f64;
                let rows: Vec<Vec<f64>> = fit
                    .radii
                    .iter()
                    .zip(&fit.values)
                    .map(|(&r, &m)| vec![r, m])
                    .collect();
                save_curve(&v.output.join("growth.csv"), &["radius", "mass"], &rows)?;
                Verdict::new(
                    "growth",
                    "the boundary measure of balls centered on the free boundary grows \
                     like r^(d-1)",
                    (fit.slope - expected).abs() <= GROWTH_SLOPE_BAND,
                )
                .with_metric("slope", fit.slope)
                .with_metric("constant", fit.constant)
                .with_metric("expected_slope", expected)
            }
            "perimeter" => {
                let centers = boundary_probe_points(&supp, PROBE_CENTERS, probes_seed)?;
                let rep = perimeter_vs_measure(&supp, &measure, &centers, &v.radii)?;
                let expected = (grid.dim - 1) as f64;
                let rows: Vec<Vec<f64>> = rep
                    .perimeter_fit
                    .radii
                    .iter()
                    .zip(&rep.perimeter_fit.values)
                    .zip(&rep.measure_fit.values)
                    .map(|((&r, &p), &m)| vec![r, p, m])
                    .collect();
                save_curve(
                    &v.output.join("perimeter.csv"),
                    &["radius", "perimeter", "measure"],
                    &rows,
                )?;
                let pass = (rep.perimeter_fit.slope - expected).abs() <= GROWTH_SLOPE_BAND
                    && (rep.measure_fit.slope - expected).abs() <= GROWTH_SLOPE_BAND
                    && rep.max_ratio.is_finite();
                Verdict::new(
                    "perimeter",
                    "the relative perimeter in boundary balls is controlled by the \
                     boundary measure",
                    pass,
                )
                .with_metric("perimeter_slope", rep.perimeter_fit.slope)
                .with_metric("measure_slope", rep.measure_fit.slope)
                .with_metric("max_ratio", rep.max_ratio)
            }
            "density" => {
                let scan = density_scan(&supp, &v.radii)?;
                let rows: Vec<Vec<f64>> = scan
                    .iter()
                    .map(|b| vec![b.radius, b.lower, b.upper, b.comp_lower, b.comp_upper])
                    .collect();
                save_curve(
                    &v.output.join("density.csv"),
                    &["radius", "lower", "upper", "comp_lower", "comp_upper"],
                    &rows,
                )?;
                let min_lower = scan.iter().map(|b| b.lower).fold(f64::INFINITY, f64::min);
                let max_upper = scan
                    .iter()
                    .map(|b| b.upper)
                    .fold(f64::NEG_INFINITY, f64::max);
                let min_comp = scan
                    .iter()
                    .map(|b| b.comp_lower)
                    .fold(f64::INFINITY, f64::min);
                let max_comp = scan
                    .iter()
                    .map(|b| b.comp_upper)
                    .fold(f64::NEG_INFINITY, f64::max);
                let pass = min_lower >= DENSITY_LOW
                    && max_upper <= DENSITY_HIGH
                    && min_comp > 0.0
                    && max_comp < 1.0;
                Verdict::new(
                    "density",
                    "the optimal shape and its complement keep uniform volume fractions \
                     in boundary balls",
                    pass,
                )
                .with_metric("min_lower", min_lower)
                .with_metric("max_upper", max_upper)
                .with_metric("min_comp_lower", min_comp)
                .with_metric("max_comp_upper", max_comp)
            }
            "flux" => {
                let phis = boundary_bumps(&supp, v.bumps, bumps_seed)?;
                let (lambda_big, _) = estimate_lambda(u, &phis, spec)?;
                let mut per_eps = vec![0.0f64; v.radii.len()];
                for phi in &phis {
                    for (i, (_, value)) in
                        flux_limit(u, phi, spec, lambda_big, &v.radii).iter().enumerate()
                    {
                        per_eps[i] += value.abs();
                    }
                }
                for x in per_eps.iter_mut() {
                    *x /= phis.len() as f64;
                }
                let rows: Vec<Vec<f64>> = v
                    .radii
                    .iter()
                    .zip(&per_eps)
                    .map(|(&e, &f)| vec![e, f])
                    .collect();
                save_curve(&v.output.join("flux.csv"), &["eps", "mean_abs_flux"], &rows)?;
                let first = per_eps[0];
                let last = *per_eps.last().expect("validated nonempty");
                Verdict::new(
                    "flux",
                    "the boundary-strip flux of the shifted energy vanishes as the strip \
                     narrows",
                    first <= FLUX_DECAY_FACTOR * last,
                )
                .with_metric("narrow_eps", v.radii[0])
                .with_metric("narrow_flux", first)
                .with_metric("wide_eps", *v.radii.last().expect("nonempty"))
                .with_metric("wide_flux", last)
                .with_metric("lambda_big", lambda_big)
            }
            "lipschitz" => {
                let margins = [2.0 * h, 3.0 * h, 4.0 * h];
                let mut rows = Vec::new();
                let mut bounds = [0.0f64; 3];
                for (i, &m) in margins.iter().enumerate() {
                    bounds[i] = lipschitz_estimate(u, m)?;
                    rows.push(vec![m, bounds[i]]);
                }
                save_curve(&v.output.join("lipschitz.csv"), &["margin", "bound"], &rows)?;
                Verdict::new(
                    "lipschitz",
                    "the minimizer admits a finite interior gradient bound",
                    bounds[0].is_finite() && bounds[0] > 0.0,
                )
                .with_metric("bound_2h", bounds[0])
                .with_metric("bound_3h", bounds[1])
                .with_metric("bound_4h", bounds[2])
            }
            "identity" => {
                let n_hi = (1.0 / h).round().max(1.0);
                let mut ns: Vec<f64> = [1.0, 4.0, 16.0]
                    .iter()
                    .copied()
                    .filter(|&n| n < n_hi)
                    .collect();
                ns.push(n_hi);
                let mut rows = Vec::new();
                let mut ramp_defect = 0.0;
                let mut ramp_scale = 0.0;
                for &n in &ns {
                    let rep =
                        weak_identity_p(u, move |s| (n * s).clamp(0.0, 1.0), |_| 1.0, spec)?;
                    rows.push(vec![n, rep.defect, rep.scale]);
                    ramp_defect = rep.defect;
                    ramp_scale = rep.scale;
                }
                save_curve(
                    &v.output.join("identity.csv"),
                    &["steepness", "defect", "scale"],
                    &rows,
                )?;
                let linear = weak_identity_p(u, |s| s, |_| 1.0, spec)?;
                let ok = |defect: f64, scale: f64| {
                    if scale > 0.0 {
                        defect.abs() <= IDENTITY_REL * scale
                    } else {
                        defect == 0.0
                    }
                };
                Verdict::new(
                    "identity",
                    "the truncation-test weak identity holds for the computed eigenpair",
                    ok(ramp_defect, ramp_scale) && ok(linear.defect, linear.scale),
                )
                .with_metric("ramp_defect", ramp_defect)
                .with_metric("ramp_scale", ramp_scale)
                .with_metric("linear_defect", linear.defect)
                .with_metric("linear_scale", linear.scale)
            }
            "equivalence" => {
                let rep = equivalence_check(spec, grid, &v.opts)?;
                save_curve(
                    &v.output.join("equivalence.csv"),
                    &["form", "lambda"],
                    &[
                        vec![0.0, rep.constrained_lambda],
                        vec![1.0, rep.support_lambda],
                    ],
                )?;
                let allowed = EQUIVALENCE_GAP[grid.dim - 1];
                Verdict::new(
                    "equivalence",
                    "the volume-constrained minimum and the eigenvalue of its support \
                     coincide",
                    rep.relative_gap <= allowed,
                )
                .with_metric("constrained_lambda", rep.constrained_lambda)
                .with_metric("support_lambda", rep.support_lambda)
                .with_metric("relative_gap", rep.relative_gap)
                .with_metric("support_volume", rep.support_volume)
            }
            "ranking" => {
                let ranks = faber_krahn_compare(&v.shapes, spec, &v.opts)?;
                let rows: Vec<Vec<f64>> = ranks
                    .iter()
                    .enumerate()
                    .map(|(rank, r)| vec![rank as f64, r.index as f64, r.lambda, r.volume])
                    .collect();
                save_curve(
                    &v.output.join("ranking.csv"),
                    &["rank", "shape", "lambda", "volume"],
                    &rows,
                )?;
                let has_ball = v.shape_specs.iter().any(ShapeSpec::is_ball);
                let best = &ranks[0];
                let pass = !has_ball || v.shape_specs[best.index].is_ball();
                Verdict::new(
                    "ranking",
                    "among equal-volume shapes the ball yields the smallest eigenvalue",
                    pass,
                )
                .with_metric("best_shape", best.index as f64)
                .with_metric("best_lambda", best.lambda)
                .with_metric("shapes", ranks.len() as f64)
            }
            "continuity" => {
                let base = v.shapes.first().expect("validated: continuity has a base");
                let (_, verdict) = continuity_core(v, spec, base, &v.perturbations)?;
                verdicts.push(verdict);
                continue; // continuity_core already wrote its files
            }
            other => {
                return Err(Error::ConfigInvalid {
                    key: "experiment.diagnostics".to_string(),
                    reason: format!("unknown diagnostic \"{other}\""),
                })
            }
        };
        save_verdict(&verdict, &v.output.join(format!("{name}.verdict.json")))?;
        verdicts.push(verdict);
    }
    Ok(verdicts)
}
