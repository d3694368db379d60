//! Per-mode numerical laboratory for Schrödinger resolvents on asymptotically conic model manifolds.
//!
//! Each angular mode reduces to a radial Bessel-type ODE; this crate solves it with radiation
//! boundary conditions and measures weighted estimates, identities, energies and flows on the result.

pub mod counterexamples;
pub mod energies;
pub mod error;
pub mod evolution;
pub mod fit;
pub mod identities;
pub mod linalg;
pub mod radial;
pub mod resolvent;
pub mod runner;

pub use error::{LabError, Result};
pub use radial::{make_grid, ModeParams, Profiles, RadialFunction, RadialGrid, WeightSpec};
pub use resolvent::{solve_resolvent_mode, BcKind, Branch, ModeProblem, ModeSolution};
