//! Robust model predictive control for uncertain linear systems.
//!
//! The toolkit synthesizes robust linear time-varying state-feedback
//! controllers for discrete-time LTI systems subject to norm-bounded model
//! uncertainty and additive disturbances. Controller synthesis is carried out
//! in the space of closed-loop system responses (System Level Synthesis) by
//! assembling and solving a convex quadratic program whose decision variables
//! are the response operators together with per-step bounds on the lumped
//! disturbance.
//!
//! Modules:
//! - [`blt`]: block-lower-triangular operator algebra over a finite horizon.
//! - [`geometry`]: H-representation polytopes, projection, redundancy removal.
//! - [`qp`]: embedded ADMM quadratic-program solver with infeasibility
//!   certificates.
//! - [`robust_sets`]: robust pre-sets, invariant sets, terminal ingredients.
//! - [`synthesis`]: assembly and decoding of the synthesis QP, the horizon-one
//!   exact feasibility oracle, and shifted-candidate construction.
//! - [`runtime`]: the receding-horizon loop with adaptive horizon selection,
//!   uncertainty sampling, and closed-loop instrumentation.

pub mod blt;
pub mod geometry;
pub mod qp;
pub mod robust_sets;
pub mod runtime;
pub mod synthesis;

pub use blt::{BltError, BltOperator, SystemModel, UncertaintyParams};
pub use geometry::{GeometryError, Polytope};
pub use qp::{QpError, QpSolution, Settings, SolveStatus, StandardQp};
pub use robust_sets::{InvariantSetResult, RobustSetsError, TerminalIngredients};
pub use runtime::{ClosedLoopTrace, HorizonStrategy, RuntimeError, UncertaintyRealization};
pub use synthesis::{Mode, OcpSpec, SynthesisError, SynthesisResult, VariableLayout};
