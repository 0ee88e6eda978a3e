//! Crate-wide error type.

use std::fmt;

/// Everything that can go wrong while building a model or evaluating it.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The model document is not valid JSON (or not a recognized shape).
    Json(String),
    /// No preset with this name exists.
    UnknownPreset(String),
    /// An edge references a node that was never declared.
    UnknownNode(String),
    /// A node name appears more than once.
    DuplicateNode(String),
    /// The same ordered node pair carries more than one edge.
    DuplicateEdge(String, String),
    /// A role that must appear exactly once is missing or repeated.
    RoleCount { role: &'static str, count: usize },
    /// The directed graph contains a cycle (offending nodes listed).
    Cycle(Vec<String>),
    /// A path coefficient lies outside [-1, 1] or is not finite.
    CoefficientOutOfRange { from: String, to: String, coef: f64 },
    /// The selection node cannot be reached from the treatment node.
    SelectionNotDownstream { selection: String, treatment: String },
    /// A parameter name is not used by the chosen preset.
    UnknownParam { name: String, valid: &'static [&'static str] },
    /// Standardization is impossible: a shock variance would be non-positive.
    Infeasible { node: String, variance: f64 },
    /// A numeric argument left its valid range.
    OutOfRange { name: &'static str, value: f64 },
    /// A truncation direction is unusable (wrong length, not unit norm, or
    /// zero variance under the covariance it is applied to).
    BadDirection(String),
    /// Path enumeration exceeded the safety cap.
    PathExplosion { cap: usize },
    /// A conditioning variable has numerically zero residual variance.
    SingularConditioning(String),
    /// A denominator required by an estimand is numerically zero.
    Degenerate(String),
    /// Two reports that must describe the same scenario do not.
    ScenarioMismatch,
    /// Too few retained rows to estimate anything.
    TooFewRows { retained: usize },
    /// A sweep grid or axis is malformed.
    BadGrid(String),
    /// The request is structurally valid but not supported.
    Unsupported(String),
    /// Reading or writing a file or stream failed.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Json(msg) => write!(f, "invalid model document: {msg}"),
            Error::UnknownPreset(name) => write!(f, "unknown preset '{name}'"),
            Error::UnknownNode(name) => write!(f, "edge references undeclared node '{name}'"),
            Error::DuplicateNode(name) => write!(f, "node '{name}' declared more than once"),
            Error::DuplicateEdge(from, to) => {
                write!(f, "duplicate edge {from} -> {to}")
            }
            Error::RoleCount { role, count } => {
                write!(f, "expected exactly one {role} node, found {count}")
            }
            Error::Cycle(nodes) => write!(f, "graph contains a cycle among {}", nodes.join(", ")),
            Error::CoefficientOutOfRange { from, to, coef } => {
                write!(f, "coefficient {coef} on {from} -> {to} outside [-1, 1]")
            }
            Error::SelectionNotDownstream { selection, treatment } => write!(
                f,
                "selection node '{selection}' is not a descendant of treatment node '{treatment}'"
            ),
            Error::UnknownParam { name, valid } => {
                write!(f, "unknown parameter '{name}' (valid: {})", valid.join(", "))
            }
            Error::Infeasible { node, variance } => write!(
                f,
                "infeasible standardization: shock variance of '{node}' would be {variance}"
            ),
            Error::OutOfRange { name, value } => {
                write!(f, "{name} = {value} outside its valid range")
            }
            Error::BadDirection(msg) => write!(f, "bad truncation direction: {msg}"),
            Error::PathExplosion { cap } => {
                write!(f, "path enumeration exceeded the cap of {cap} paths")
            }
            Error::SingularConditioning(name) => {
                write!(f, "conditioning variable '{name}' has zero residual variance")
            }
            Error::Degenerate(msg) => write!(f, "degenerate estimand: {msg}"),
            Error::ScenarioMismatch => write!(f, "reports describe different scenarios"),
            Error::TooFewRows { retained } => {
                write!(f, "only {retained} retained rows; need at least 10")
            }
            Error::BadGrid(msg) => write!(f, "bad sweep grid: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Error {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Error {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
