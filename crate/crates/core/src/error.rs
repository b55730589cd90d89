use thiserror::Error;

use crate::policy::PolicyId;
use crate::topology::PortId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("port {0} declared twice")]
    DuplicatePort(PortId),
    #[error("link references unknown port {0}")]
    UnknownPort(PortId),
    #[error("{0} must not have outgoing links")]
    SinkHasOutgoing(PortId),
    #[error("self-loop on port {0}")]
    SelfLoop(PortId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataPlaneError {
    #[error("port {0} is not an ingress port")]
    NotIngress(PortId),
    #[error("port {0} does not exist")]
    UnknownPort(PortId),
    #[error("injected packet already carries a tag")]
    AlreadyTagged,
    #[error("queue of port {0} is empty")]
    EmptyQueue(PortId),
    #[error("port {port}: rule forwards to {out}, which is not a successor")]
    NotASuccessor { port: PortId, out: PortId },
    #[error("{op} is not available in {mode} port mode")]
    WrongPortMode { op: &'static str, mode: &'static str },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policies {0} and {1} conflict; composition requires a conflict-free set")]
    NotConflictFree(PolicyId, PolicyId),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("script step {index} ({step}) is not enabled: {reason}")]
    ScriptStepNotEnabled {
        index: usize,
        step: String,
        reason: String,
    },
    #[error(transparent)]
    DataPlane(#[from] DataPlaneError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error("malformed history: {0}")]
    Malformed(String),
    #[error("event log line {line}: {msg}")]
    Log { line: usize, msg: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("path catalog exceeds the cap of {cap} paths")]
pub struct CatalogOverflow {
    pub cap: usize,
}

/// Any failure of a simulate-and-check pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Check(#[from] CheckError),
}
