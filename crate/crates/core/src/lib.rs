//! Synthesis, program control, and Monte Carlo verification for
//! jump-diffusion systems that must keep a prescribed function
//! u(t, x) invariant along every path.
//!
//! Given a manifold function u and the free families f / h / phi / q00,
//! the crate constructs
//!
//! - diffusion columns B_k orthogonal to grad u ([`synthesis`]),
//! - a drift A that cancels the time derivative and the Ito correction,
//! - a jump response G(t, x, gamma) moving along the level set of u,
//! - the program control s solving P + Q s = A for a given plant
//!   ([`control`]),
//!
//! then checks the first-integral conditions numerically ([`verify`]) and
//! measures manifold adherence by simulation ([`sim`]).

// Index loops read best in the dense matrix code, and the negated
// comparisons (`!(x > 0.0)`) are NaN guards.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod expr;
pub mod manifold;
pub mod nlinalg;
pub mod scenario;
pub mod sim;
pub mod synthesis;
pub mod verify;

pub use control::{build_controlled_system, solve_control, Controlled, ControlledSystem, PlantSpec};
pub use error::{Error, EvalError, ParseError};
pub use expr::{Bindings, Expression, Gradient, Var};
pub use manifold::{HRows, IndependenceReport, ManifoldLevel, ManifoldSpec};
pub use nlinalg::{cross_nd, det, jacobian_fd, solve_linear, Matrix, Vector};
pub use scenario::{Scenario, ScenarioConfig};
pub use sim::{
    monte_carlo, sample_box, simulate_ensemble, simulate_path, AdherenceReport, JumpMeasureConfig,
    MarkDistribution, PathRng, SimConfig, TrajectoryRecord,
};
pub use synthesis::{SdeCoefficients, SynthesizedSystem};
pub use verify::{
    drift_residual, generator_residual, jump_residual, residual_report, wiener_residual,
    Perturbation, PerturbationTarget, Perturbed, ResidualReport, ResidualTolerances,
};
