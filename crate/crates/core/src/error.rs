use thiserror::Error;

use crate::model::{NodeId, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} has no channel action space (user device or wrong role)")]
    InvalidNode(NodeId),
    #[error("no path from {0} to the gateway")]
    NoPath(NodeId),
    #[error("node {node}: expected {expected} channels, got {got}")]
    TupleLength { node: NodeId, expected: usize, got: usize },
    #[error("at least one channel is required")]
    NoChannels,
    #[error("invalid location grid spacing {spacing}")]
    InvalidGrid { spacing: f64 },
    #[error("malformed network: {0}")]
    Structure(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("utilization {0} outside [0, 100]")]
    Domain(f64),
    #[error("empty path")]
    NoPath,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("action rejected: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Violations(Vec<Violation>),
    #[error("target ({x:.2}, {y:.2}) lies outside the deployment area")]
    OutOfArea { x: f64, y: f64 },
    #[error("node {0} cannot be repositioned")]
    Static(NodeId),
    #[error("unknown external AP `{0}`")]
    UnknownExternal(String),
    #[error("node {0} has no uplink")]
    NoUplink(NodeId),
    #[error("event timeline is not ordered by epoch")]
    UnorderedTimeline,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("counter went backwards ({earlier} -> {later}); snapshot discarded")]
    CounterReset { earlier: f64, later: f64 },
    #[error("sensing period must be positive")]
    NonPositivePeriod,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}, field `{field}`: {message}")]
    Parse { line: usize, field: String, message: String },
    #[error("knowledge-base dump is truncated: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("zero-cost exploration requires an idle network ({0} active users)")]
    TrafficPresent(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("need at least two orthogonal channels, have {0:?}")]
    TooFewOrthogonal(Vec<u8>),
    #[error("search space of {required} configurations exceeds the budget of {budget}")]
    OverBudget { required: u128, budget: u128 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("unknown scheme `{0}` (expected icalo, ugrl, single, cca, clica or brute)")]
    UnknownScheme(String),
    #[error("bad seed range `{0}` (expected a..b or a single integer)")]
    SeedRange(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}
