//! Error type shared by all solver and diagnostic entry points.

use thiserror::Error;

/// Everything that can go wrong when building grids, evaluating energies,
/// running solvers, or reading/writing artifacts.
#[derive(Debug, Error)]
pub enum Error {
    /// Grids are supported in one and two dimensions only.
    #[error("unsupported grid dimension {dim} (expected 1 or 2)")]
    InvalidDimension { dim: usize },

    /// Fewer than three nodes along an axis leaves no interior node.
    #[error("axis {axis} has {count} nodes; at least 3 are required")]
    TooCoarse { axis: usize, count: usize },

    /// Box extents must be positive finite lengths.
    #[error("axis {axis} has invalid extent {extent}")]
    BadExtent { axis: usize, extent: f64 },

    /// Energy evaluation requires p > q >= 2, or the p = q = 2 diagnostic mode.
    #[error("invalid exponent pair p = {p}, q = {q} (need p > q >= 2, or p = q = 2)")]
    BadExponents { p: f64, q: f64 },

    /// The Rayleigh quotient is undefined when the q-norm term vanishes.
    #[error("quotient denominator vanishes (field is zero almost everywhere)")]
    ZeroDenominator,

    /// A field or mask was paired with a grid it does not belong to.
    #[error("grid mismatch: {context}")]
    GridMismatch { context: String },

    /// The admissible region contains no free node.
    #[error("no admissible domain: {context}")]
    NoDomain { context: String },

    /// An iterative solver hit its iteration cap before meeting its tolerance.
    #[error("solver failed to converge within {iterations} iterations (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// Truncation levels must be nonnegative.
    #[error("negative truncation threshold {threshold}")]
    NegativeThreshold { threshold: f64 },

    /// The volume budget cannot be met on this grid.
    #[error("volume budget {budget} is infeasible: {context}")]
    Infeasible { budget: f64, context: String },

    /// An operation received an identically-zero field where a nonzero one is required.
    #[error("field is identically zero")]
    ZeroField,

    /// The scalar gap inequality is only defined for positive arguments.
    #[error("non-positive argument x = {x}")]
    NonPositiveX { x: f64 },

    /// A diagnostic ball must have a positive radius.
    #[error("degenerate ball: radius {radius} must be positive")]
    DegenerateBall { radius: f64 },

    /// A requested shape does not fit inside the computational box.
    #[error("shape leaves the computational box: {context}")]
    OutOfBox { context: String },

    /// A radius window or sample list selected no usable data.
    #[error("empty measurement window: {context}")]
    EmptyWindow { context: String },

    /// Least-squares multiplier estimation received no informative test fields.
    #[error("degenerate test fields: {context}")]
    DegenerateFields { context: String },

    /// A boundary-based diagnostic was asked about a mask without boundary cells.
    #[error("mask has no boundary cells")]
    NoBoundary,

    /// Shape comparisons require (near-)equal volumes.
    #[error("volume mismatch: {volumes:?} differ by more than {tolerance}")]
    VolumeMismatch { volumes: Vec<f64>, tolerance: f64 },

    /// A run configuration failed validation; names the offending key.
    #[error("invalid configuration `{key}`: {reason}")]
    ConfigInvalid { key: String, reason: String },

    /// A stored field or mask failed its integrity check on load.
    #[error("checksum error for {path}: expected {expected}, found {found}")]
    ChecksumMismatch {
        path: String,
        expected: String,
        found: String,
    },

    /// A stored artifact could not be parsed.
    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
