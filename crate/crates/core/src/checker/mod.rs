//! Histories, packet traces and the sequential-composability decision.

pub mod sample;
mod search;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerId, Outcome, RequestId};
use crate::dataplane::{PacketUid, Tag};
use crate::error::CheckError;
use crate::policy::{self, Policy};
use crate::scheduler::events::{EventKind, EventLog};
use crate::topology::PortId;

pub use search::{
    sequentially_composable, Limits, Verdict, VerdictKind, Violation, WitnessEntry, DEFAULT_MAX_INJECTS,
    DEFAULT_MAX_REQUESTS,
};

/// One invocation of `apply` and, if it happened, its response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub id: RequestId,
    pub ctrl: ControllerId,
    pub policy: Policy,
    /// Sequence number of the invocation event.
    pub invoked: u64,
    pub response: Option<(u64, Outcome)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectRecord {
    pub uid: PacketUid,
    pub flow: u64,
    pub port: PortId,
    pub at: u64,
    /// Sequence number of the first forward out of the ingress queue.
    pub processed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub port: PortId,
    pub tag: Option<Tag>,
}

/// The ports a packet visited, with the tag it carried on arrival.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub uid: PacketUid,
    pub hops: Vec<Hop>,
    pub terminated: bool,
}

impl Trace {
    pub fn ports(&self) -> Vec<PortId> {
        self.hops.iter().map(|h| h.port).collect()
    }
}

/// The externally observable part of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    pub initial: Policy,
    pub requests: Vec<RequestRecord>,
    pub injects: Vec<InjectRecord>,
    /// `traces[i]` belongs to `injects[i]`.
    pub traces: Vec<Trace>,
}

/// Something that is ordered by real-time precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Item {
    Request(usize),
    Inject(usize),
}

/// One trace per inject, chained by packet uid.
pub fn extract_traces(log: &EventLog) -> Result<Vec<Trace>, CheckError> {
    let mut order = Vec::new();
    let mut traces: BTreeMap<PacketUid, Trace> = BTreeMap::new();
    for e in &log.events {
        match &e.kind {
            EventKind::Inject { uid, port, .. } => {
                let t = Trace { uid: *uid, hops: vec![Hop { port: *port, tag: None }], terminated: false };
                if traces.insert(*uid, t).is_some() {
                    return Err(CheckError::Malformed(format!("packet {} injected twice", uid.0)));
                }
                order.push(*uid);
            }
            EventKind::Forward { uid, from, to, tag_after, .. } => {
                let t = traces
                    .get_mut(uid)
                    .ok_or_else(|| CheckError::Malformed(format!("event {}: packet {} was never injected", e.seq, uid.0)))?;
                let at = t.hops.last().map(|h| h.port);
                if t.terminated || at != Some(*from) {
                    return Err(CheckError::Malformed(format!(
                        "event {}: packet {} forwarded from {from} but it is at {}",
                        e.seq,
                        uid.0,
                        at.map_or("nowhere".to_owned(), |p| p.to_string())
                    )));
                }
                t.hops.push(Hop { port: *to, tag: *tag_after });
                t.terminated = to.is_sink();
            }
            _ => {}
        }
    }
    Ok(order.into_iter().map(|u| traces.remove(&u).expect("recorded")).collect())
}

impl History {
    pub fn from_log(log: &EventLog) -> Result<History, CheckError> {
        let mut requests: Vec<RequestRecord> = Vec::new();
        let mut by_id: BTreeMap<RequestId, usize> = BTreeMap::new();
        let mut open: BTreeMap<ControllerId, RequestId> = BTreeMap::new();
        let mut injects = Vec::new();
        for e in &log.events {
            match &e.kind {
                EventKind::Invoke { ctrl, request, policy } => {
                    if let Some(r) = open.get(ctrl) {
                        return Err(CheckError::Malformed(format!("{ctrl} invoked {request} while {r} is pending")));
                    }
                    if by_id.insert(*request, requests.len()).is_some() {
                        return Err(CheckError::Malformed(format!("{request} invoked twice")));
                    }
                    open.insert(*ctrl, *request);
                    requests.push(RequestRecord {
                        id: *request,
                        ctrl: *ctrl,
                        policy: policy.clone(),
                        invoked: e.seq,
                        response: None,
                    });
                }
                EventKind::Response { ctrl, request, outcome } => {
                    if open.get(ctrl) != Some(request) {
                        return Err(CheckError::Malformed(format!("{ctrl} answered {request} which it does not hold")));
                    }
                    open.remove(ctrl);
                    requests[by_id[request]].response = Some((e.seq, *outcome));
                }
                EventKind::Inject { uid, flow, port, .. } => {
                    injects.push(InjectRecord { uid: *uid, flow: *flow, port: *port, at: e.seq, processed: None });
                }
                EventKind::Forward { uid, .. } => {
                    if let Some(i) = injects.iter().rposition(|x| x.uid == *uid) {
                        injects[i].processed.get_or_insert(e.seq);
                    }
                }
                _ => {}
            }
        }
        Ok(History { initial: log.header.initial_policy.clone(), requests, injects, traces: extract_traces(log)? })
    }

    fn start(&self, x: Item) -> u64 {
        match x {
            Item::Request(r) => self.requests[r].invoked,
            Item::Inject(i) => self.injects[i].at,
        }
    }

    fn end(&self, x: Item) -> Option<u64> {
        match x {
            Item::Request(r) => self.requests[r].response.map(|(s, _)| s),
            Item::Inject(i) => self.injects[i].processed,
        }
    }
}

/// Real-time precedence: `x` ends before `y` starts. An inject spans from
/// entering the ingress queue to being processed there; injects order each
/// other only when they enter at the same port.
pub fn precedes(h: &History, x: Item, y: Item) -> bool {
    if x == y {
        return false;
    }
    if let (Item::Inject(a), Item::Inject(b)) = (x, y) {
        return h.injects[a].port == h.injects[b].port && h.injects[a].at < h.injects[b].at;
    }
    h.end(x).is_some_and(|e| e < h.start(y))
}

/// An entry of a sequential history: a request immediately followed by its
/// response, or an inject together with the whole trace it produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeqEntry {
    Request { policy: Policy, outcome: Outcome },
    Inject { flow: u64, port: PortId, trace: Vec<PortId>, terminated: bool },
}

/// Whether a trace agrees with the path `expected`. A trace still in flight
/// only has to be a prefix of it.
pub fn trace_consistent(trace: &[PortId], terminated: bool, expected: &[PortId]) -> bool {
    if terminated {
        trace == expected
    } else {
        expected.starts_with(trace)
    }
}

/// Both legality clauses over a sequential complete history that starts with
/// `initial` committed.
pub fn is_legal(initial: &Policy, s: &[SeqEntry]) -> bool {
    let mut committed: Vec<&Policy> = vec![initial];
    for e in s {
        match e {
            SeqEntry::Request { policy, outcome } => {
                let fits = !policy::conflicts_with_any(policy, committed.iter().copied());
                if fits != (*outcome == Outcome::Ack) {
                    return false;
                }
                if fits {
                    committed.push(policy);
                }
            }
            SeqEntry::Inject { flow, port, trace, terminated } => {
                let expected = policy::expected_path(&committed, *flow, *port);
                if !trace_consistent(trace, *terminated, &expected) {
                    return false;
                }
            }
        }
    }
    true
}

/// Distinct tags that ever appear in a rule written by the protocol, in the
/// rules present at time zero, or on a packet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagStats {
    pub distinct: usize,
    pub max_tag: Option<Tag>,
    pub tags: Vec<Tag>,
}

pub fn tag_complexity(log: &EventLog) -> TagStats {
    let mut tags: BTreeSet<Tag> = log.header.initial_tags.iter().copied().collect();
    for e in &log.events {
        match &e.kind {
            EventKind::PortOp { record, .. } => tags.extend(record.tags_written.iter().copied()),
            EventKind::Forward { tag_before, tag_after, .. } => tags.extend(tag_before.iter().chain(tag_after)),
            _ => {}
        }
    }
    TagStats { distinct: tags.len(), max_tag: tags.iter().next_back().copied(), tags: tags.into_iter().collect() }
}

/// Loads a log, reconstructs its history and decides it.
pub fn check_log(log: &EventLog, limits: Limits) -> Result<Verdict, CheckError> {
    let h = History::from_log(log)?;
    let mut v = sequentially_composable(&h, limits);
    v.tags = tag_complexity(log);
    Ok(v)
}
