//! The contract between the scheduler and protocol state machines.
//!
//! A controller is offered one step at a time. Each step performs exactly one
//! access to shared state (a port operation, a PS operation, an oracle query,
//! a message send or a response) and reports it as an [`Effect`]. Message
//! receipt and request invocation are local state changes driven by the
//! scheduler.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataplane::{DataPlane, Tag};
use crate::error::DataPlaneError;
use crate::policy::{Policy, PolicyId};
use crate::psm::{PolicySerializer, PsOp};
use crate::topology::PortId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControllerId(pub u32);

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Index of a request in the scenario workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub usize);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ack,
    Nack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MsgBody {
    /// FixTag: `origin` is about to install `policy` at the ingress ports.
    Intent { origin: ControllerId, policy: Policy },
    /// ReuseTag catch-up: the install of PS index `index` has completed.
    Installed { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortOpKind {
    Update,
    Read,
    Write,
}

/// What a port operation did, for the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortOpRecord {
    pub port: PortId,
    pub op: PortOpKind,
    pub ingress: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyId>,
    pub changed: bool,
    /// Tags appearing in rules this operation added.
    pub tags_written: Vec<Tag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    PortOp(PortOpRecord),
    Ps(PsOp),
    Send { to: ControllerId, body: MsgBody },
    Oracle { tags: BTreeSet<Tag>, open: bool },
    Respond { request: RequestId, outcome: Outcome },
}

/// Read-only view used to decide whether a controller can step.
pub struct View<'a> {
    pub dp: &'a DataPlane,
    pub ps: Option<&'a PolicySerializer>,
}

/// Mutable shared state a step may touch.
pub struct Shared<'a> {
    pub dp: &'a mut DataPlane,
    pub ps: Option<&'a mut PolicySerializer>,
}

impl Shared<'_> {
    pub fn ps(&mut self) -> &mut PolicySerializer {
        self.ps.as_deref_mut().expect("protocol requires the PS object")
    }
}

pub trait Controller: Send {
    fn id(&self) -> ControllerId;

    /// Accepts a new request. The scheduler only calls this when the
    /// controller has no outstanding request.
    fn invoke(&mut self, request: RequestId, policy: Policy);

    fn deliver(&mut self, from: ControllerId, body: &MsgBody);

    /// Whether the controller has a step to take right now.
    fn enabled(&self, view: &View<'_>) -> bool;

    /// Takes one step. Only called when [`Controller::enabled`] holds.
    fn step(&mut self, shared: &mut Shared<'_>) -> Result<Effect, DataPlaneError>;

    /// The request awaiting a response, if any.
    fn outstanding(&self) -> Option<RequestId>;
}
