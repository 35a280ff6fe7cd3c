//! Reduced-basis simulation middleware.
//!
//! A server side generates reduced bases for a parameterized full problem and
//! serves incremental updates; a client side answers queries from precomputed
//! reduced data with a residual error indicator attached to every answer.

pub mod basis;
pub mod bench;
pub mod error;
pub mod generation;
pub mod middleware;
pub mod numeric;
pub mod problem;
pub mod protocol;
pub mod reduced;
pub mod server;
pub mod solver;
pub mod store;
pub mod strategies;

pub use basis::{basis_identifier, BasisMetadata, BasisMode, ReducedBasis};
pub use error::{Error, Result};
pub use generation::{GenerationLog, Preset, TrainingSet, TrainingSpec};
pub use middleware::{ClientConfig, Event, Middleware};
pub use problem::{FullProblem, FullSolution, Parameter, QualitySpec, SeparableOperator, SeparableVector, Theta};
pub use protocol::{BasisRequest, BasisUpdate, GenerationMethod, ServerChannel, UpdateRequest};
pub use reduced::{ReducedSolveMethod, ReducedSystem};
pub use server::{BasisServer, LocalChannel};
pub use strategies::{Query, QueryAnswer, Reordering, Strategy};
