use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid dimension: size components must be positive and finite, got ({}, {}, {})", .0.x, .0.y, .0.z)]
    InvalidDimension(Vec3),
    #[error("pose contains a non-finite value")]
    NonFinite,
    #[error("facing direction undefined: source and target share the same horizontal position")]
    UndefinedDirection,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed scene JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scene document must be a JSON object with an \"items\" array")]
    NotAScene,
    #[error("item {index}{}: {message}", id.as_ref().map(|i| format!(" ({i})")).unwrap_or_default())]
    InvalidItem {
        index: usize,
        id: Option<String>,
        message: String,
    },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("unknown item id {0:?}")]
    UnknownId(String),
    #[error("invalid asset for {id}: {message}")]
    InvalidAsset { id: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("malformed constraint JSON: {0}")]
    Json(String),
    #[error("constraint document must be a JSON array")]
    NotAList,
    #[error("constraint {index}: missing or non-string field {field:?}")]
    MissingField { index: usize, field: &'static str },
    #[error("constraint {index}: unknown relation {relation:?}")]
    UnknownRelation { index: usize, relation: String },
    #[error("constraint {index}: unknown type {kind:?}")]
    UnknownKind { index: usize, kind: String },
    #[error("constraint {index}: {id:?} refers to itself")]
    SelfReference { index: usize, id: String },
    #[error("constraint {index} references unknown object {id:?}")]
    MissingObject { index: usize, id: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("object {0:?} is not part of the scene")]
    UnknownObject(String),
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport error (retriable): {0}")]
    Transport(String),
    #[error("service rejected request: {0}")]
    Rejected(String),
    #[error("invalid response after corrective retry: {message}")]
    InvalidResponse { message: String, raw: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("asset error: {0}")]
    Asset(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl ServiceError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ServiceError::Transport(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProposeError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("proposal rejected: {0}")]
    Invalid(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("mock proposer has no response for this request")]
    NoResponse,
}

impl ProposeError {
    /// Structural problems with an otherwise delivered proposal; these are
    /// fed back to the proposer instead of aborting.
    pub fn is_validation(&self) -> bool {
        matches!(self, ProposeError::Invalid(_))
    }
}

#[derive(Debug, Error)]
pub enum EditError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("invalid edit proposal: {0}")]
    Validation(String),
    #[error("ambiguous instruction: {0}")]
    Ambiguous(String),
    #[error(transparent)]
    Propose(#[from] ProposeError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("layout is empty; nothing to export")]
    EmptyLayout,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scene {
        path: PathBuf,
        #[source]
        source: SceneError,
    },
    #[error("{path}: {source}")]
    Constraint {
        path: PathBuf,
        #[source]
        source: ConstraintError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Service {
        stage: &'static str,
        #[source]
        source: ServiceError,
    },
    #[error(transparent)]
    Refine(#[from] crate::refine::RefineAbort),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("every object failed to generate")]
    NothingGenerated,
    #[error("no usable constraint proposal in {0} iteration(s)")]
    NoLayout(usize),
}
