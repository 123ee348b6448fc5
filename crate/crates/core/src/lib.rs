//! Numerical laboratory for the Monge–Kantorovich transport density.
//!
//! The crate solves discrete optimal transport exactly, rasterizes the
//! transport density and the Beckmann flow onto box grids, builds
//! displacement interpolations, and evaluates Lorentz `L^{p,q}` quasinorms
//! of piecewise-constant densities in closed form.
//!
//! With the `parallel` feature (on by default) the rasterization kernels
//! and parameter sweeps fan out over rayon. Results are bitwise identical
//! regardless of thread count: work is split into fixed-size chunks whose
//! partial results are merged in a fixed order.

pub mod grid;
pub mod interp;
pub mod lorentz;
pub mod measures;
pub mod oracle;
mod par;
pub mod raster;
pub mod solver;

pub use grid::{Grid, GriddedDensity};
pub use interp::{
    bin_atoms_to_grid, interpolant_density, interpolant_norm_curve, interpolant_norm_curve_from_plan,
    interpolate_plan,
    sigma_interpolation_bound, AssignmentRegions, NormCurvePoint,
};
pub use lorentz::{
    decreasing_rearrangement, distribution_function, lorentz_quasinorm, maximal_quasinorm,
    norm_equivalence_check, plain_lp_norm, LorentzParams, LorentzQ, StepProfile,
};
pub use measures::{
    discretize_density, project_to_grid, projection_displacement, Atom, AtomicMeasure,
};
pub use oracle::{brute_transport, mc_sigma, mc_sigma_with_se, sampled_rearrangement};
pub use raster::{
    divergence_residual, rasterize_flow, rasterize_sigma, traverse_segment, CellVectorField,
    Polynomial,
};
pub use solver::{
    check_lip1, duality_gap, extract_rays, solve_kp, DualPotentials, PlanEntry, PotentialSite, Ray,
    Solution, TransportPlan,
};

/// Errors shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty measure")]
    EmptyMeasure,
    #[error("mass imbalance: source {supply}, target {demand}")]
    MassImbalance { supply: f64, demand: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("point ({0}, {1}, {2}) outside domain")]
    PointOutsideDomain(f64, f64, f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mismatched instance: {0}")]
    MismatchedInstance(String),
    #[error("Lip-1 only meaningful at eps=0")]
    LipOnlyAtExponentOne,
    #[error("oracle size cap: {0} atoms exceeds limit")]
    OracleSizeCap(usize),
    #[error("test polynomial degree {0} > 2: quadrature contract not guaranteed")]
    DegreeTooHigh(usize),
    #[error("grids do not match")]
    GridMismatch,
    #[error("ratio undefined for zero density")]
    ZeroDensity,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
