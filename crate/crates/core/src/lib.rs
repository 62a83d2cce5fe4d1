//! Numerical laboratory for double-phase Neumann problems.
//!
//! The approximate problems
//! `-div(|∇u|^{p-2}∇u + a(x)|∇u|^{q-2}∇u) = 0` in Ω with prescribed normal
//! flux `g` on ∂Ω are solved for `p > 1` by convex minimization over mean-zero
//! P1 fields. A continuation in `p ↓ 1` then produces the flux pair `(z, w)` of
//! the limiting 1-Laplacian/double-phase problem, and the verification layer
//! checks the limit conditions at the discrete level.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`). The `*64`
//! aliases below are what the command-line runner uses.

// negated comparisons below are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuation;
pub mod energy;
mod error;
pub mod fields;
pub mod mesh;
pub mod orlicz;
mod scalar;
pub mod solver;

pub use continuation::{
    default_p_schedule, estimate_poincare_constant, estimate_trace_constant, extract_flux,
    field_summary, poincare_ratio, run_continuation, smallness_check, verify_limit_solution, ContinuationOptions,
    ContinuationReport, FluxField, SmallnessCheck, StepSummary, VerificationRecord,
    VerificationTolerances,
};
pub use energy::{default_eps, limit_energy, ApproxFunctional};
pub use error::{Error, Result};
pub use fields::{
    boundary_integral, check_compatibility, check_muckenhoupt, check_weight_hypotheses,
    integrate_scalar, project_mean_zero, BoundaryData, CompatibilityCheck, HypothesisReport,
    ScalarField, WeightField,
};
pub use mesh::{
    build_interval_mesh, build_unit_square_mesh, gradient_operator, load_mesh_file, parse_mesh, BoundaryFacet, Mesh,
    Vector,
};
pub use orlicz::{
    boundary_fractional_seminorm, discrete_total_variation, luxemburg_norm, modular_theta,
    weighted_lq_norm, ElementMagnitudes, ExponentPair,
};
pub use scalar::Real;
pub use solver::{minimize_approx, oracle_minimize, SolveReport, SolverOptions, ORACLE_MAX_NODES};

pub type Mesh64 = Mesh<f64>;
pub type Mesh32 = Mesh<f32>;
pub type ScalarField64 = ScalarField<f64>;
pub type ScalarField32 = ScalarField<f32>;
pub type WeightField64 = WeightField<f64>;
pub type BoundaryData64 = BoundaryData<f64>;
pub type ExponentPair64 = ExponentPair<f64>;
pub type ExponentPair32 = ExponentPair<f32>;
pub type FluxField64 = FluxField<f64>;
pub type SolveReport64 = SolveReport<f64>;
pub type ContinuationReport64 = ContinuationReport<f64>;
