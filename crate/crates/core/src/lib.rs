//! Constraint-driven 3D scene layout.
//!
//! Objects described by a scene document are placed by a depth-first
//! search that honors typed spatial relations (left of, on, near, face to,
//! ...) while keeping every pair of boxes collision free. Around the solver
//! sit a refinement loop that re-asks a constraint proposer with solver
//! feedback, scene editing, external generation services, and export.

pub mod constraints;
pub mod corpus;
pub mod edit;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod geometry;
pub mod glb;
pub mod layout;
pub mod project;
pub mod prompts;
pub mod refine;
pub mod scene;
pub mod services;
pub mod solver;

pub use constraints::{Constraint, ConstraintKind, Relation, Thresholds};
pub use error::{
    ConstraintError, EditError, ExportError, GeometryError, PipelineError, ProjectError, ProposeError, SceneError, ServiceError,
    SolverError,
};
pub use geometry::{Aabb, Footprint, Vec3};
pub use layout::{Layout, Placement};
pub use scene::{AssetDims, ObjectSpec, Scene};
pub use solver::{SolverConfig, SolverReport, Termination};
