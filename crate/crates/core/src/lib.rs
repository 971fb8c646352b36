//! Predictor feedback for nonlinear systems with a constant, known input delay.
//!
//! The crate is organised around the loop
//!
//! ```text
//!   X(t) ──► predictor 𝒫̂(X(t), U[t-D, t]) ──► κ(P̂(t), t + D) ──► delay line ──► plant f(X, U(t-D))
//! ```
//!
//! * [`dynamics`]: plants `f(X, U)` with their nominal delay-free controllers.
//! * [`predictor`]: numerical predictors (successive approximations, dense RK4 oracle)
//!   and the predictor Lipschitz constant.
//! * [`neural`]: a nonlocal neural operator with an averaging kernel, trained as a
//!   drop-in predictor.
//! * [`dataset`]: supervised pairs generated from noisy closed-loop rollouts.
//! * [`closed_loop`]: simulation of the delayed plant under any predictor.
//! * [`backstepping`]: transport-PDE reconstruction, backstepping transform and
//!   audits of the target-system and ISS estimates.
//! * [`bench`]: wall-clock comparison of numerical and neural predictors.

pub mod backstepping;
pub mod bench;
pub mod closed_loop;
pub mod dataset;
pub mod dynamics;
pub mod neural;
pub mod predictor;
pub mod util;

pub use dynamics::{ControlVector, LinearPlant, Manipulator, ManipulatorParams, State, System, SystemSpec};
pub use predictor::{ControlHistory, PredictorSolution, Quadrature, SolverConfig};
