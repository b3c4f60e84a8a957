//! Learned object-relevance heuristics for pick-and-place task and motion
//! planning.
//!
//! The pipeline has three stages:
//!
//! 1. [`labeler`] samples tabletop scenes, solves them with the unguided
//!    planner ([`symbolic`] skeleton search + [`geometry`] feasibility
//!    checks) and records which objects the first feasible plan touched.
//! 2. [`net`] trains a patch-attention classifier that predicts, from a
//!    rasterized scene image and canonical object views, whether an object
//!    is relevant to the goal.
//! 3. [`planner`] uses the predictions to restrict the skeleton search,
//!    either with a fallback to the full object set (admissible) or without
//!    one (non-admissible), and [`planner::compare`] measures the savings.

pub mod error;
pub mod exec;
pub mod geometry;
pub mod labeler;
pub mod net;
pub mod planner;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod symbolic;
pub mod cli;

pub use error::{Error, Result};
pub use exec::Exec;
pub use scene::{GoalPredicate, ObjectId, PredicateKind, Scene};
