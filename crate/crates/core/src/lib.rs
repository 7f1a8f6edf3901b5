//! Experimental design under knapsack constraints: convex relaxation,
//! regret-minimization rounding and local search for the D, A and E
//! objectives.

pub mod error;
pub mod graphapps;
pub mod instance;
pub mod linalg;
pub mod localsearch;
pub mod oracle;
pub mod pipeline;
pub mod regret;
pub mod relaxation;
pub mod report;
pub mod rounding;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
pub use instance::{DesignInstance, IntegralSolution, ObjectiveKind};
pub use relaxation::{solve_relaxation, FractionalSolution};
