//! Grid-based laboratory for a volume-constrained spectral shape problem.
//!
//! The object of study is the first eigenvalue of the mixed operator
//! `-Δ_p u - Δ u = λ |u|^{q-2} u` with homogeneous Dirichlet conditions,
//! for exponents `p > q >= 2`, and the shapes `Ω` inside a box `D` that
//! minimize it subject to the volume budget `|Ω| <= c`. The crate provides:
//!
//! * [`grid`] — uniform tensor grids in one and two dimensions;
//! * [`field`] — node fields, energies, the nonhomogeneous Rayleigh quotient
//!   and its exact discrete gradient;
//! * [`eigen`] — a projected-descent solver for the first eigenpair on a
//!   masked subdomain;
//! * [`geometry`] — cell masks, volumes, perimeters, density ratios and the
//!   complementary Hausdorff distance;
//! * [`free_boundary`] — constrained and penalized minimization over shapes,
//!   truncation projections, and the penalty-threshold estimate;
//! * [`diagnostics`] — the measure-theoretic health checks an optimal shape
//!   must satisfy (residual measure positivity and growth, boundary density
//!   bounds, the domain-variation identity and its multiplier, flux decay,
//!   Lipschitz estimates, spectral continuity and ball-vs-box comparisons);
//! * [`run`] — batch configurations, verdicts and report files;
//! * [`io`] — on-disk formats for fields, masks, curves and verdicts.

pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod field;
pub mod free_boundary;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod run;

pub use diagnostics::{GrowthFit, MeasureField, VectorTestField};
pub use error::{Error, Result};
pub use field::{EnergyBreakdown, ScalarField};
pub use free_boundary::{FbResult, ProblemSpec};
pub use grid::{make_grid, GridSpec};
pub use io::{MetricValue, Verdict};
pub use run::{exit_code, RunConfig, ValidatedRun};
