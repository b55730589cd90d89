//! Policies and the conflict-free composition algebra.
//!
//! A policy names a packet domain (a [`FlowSet`] over the flow header), a
//! priority and one loop-free path per ingress port. Two policies are
//! *independent* when their domains are disjoint and *conflict* when they
//! overlap at equal priority. A conflict-free set composes: a packet follows the
//! highest-priority member whose domain contains it.

mod flowset;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use flowset::FlowSet;

use crate::error::PolicyError;
use crate::topology::{PortId, Topology};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyId(pub String);

impl PolicyId {
    pub fn new(s: impl Into<String>) -> Self {
        PolicyId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PolicyId {
    fn from(s: &str) -> Self {
        PolicyId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub id: PolicyId,
    pub priority: u32,
    pub domain: FlowSet,
    /// Path per ingress port; each path starts at its key.
    #[serde(default)]
    pub paths: BTreeMap<PortId, Vec<PortId>>,
}

impl Policy {
    pub fn new(id: impl Into<PolicyId>, priority: u32, domain: FlowSet) -> Self {
        Policy { id: id.into(), priority, domain, paths: BTreeMap::new() }
    }

    pub fn with_path(mut self, path: impl IntoIterator<Item = PortId>) -> Self {
        let path: Vec<PortId> = path.into_iter().collect();
        if let Some(first) = path.first() {
            self.paths.insert(*first, path);
        }
        self
    }

    pub fn covers(&self, flow: u64) -> bool {
        self.domain.contains(flow)
    }

    pub fn path_at(&self, ingress: PortId) -> Option<&[PortId]> {
        self.paths.get(&ingress).map(Vec::as_slice)
    }

    /// Next hop per port across all of this policy's paths, or the first port
    /// where two paths disagree.
    pub fn next_hops(&self) -> Result<BTreeMap<PortId, PortId>, DivergentHop> {
        let mut hops = BTreeMap::new();
        for path in self.paths.values() {
            for w in path.windows(2) {
                match hops.insert(w[0], w[1]) {
                    Some(prev) if prev != w[1] => {
                        return Err(DivergentHop { port: w[0], first: prev, second: w[1] })
                    }
                    _ => {}
                }
            }
        }
        Ok(hops)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivergentHop {
    pub port: PortId,
    pub first: PortId,
    pub second: PortId,
}

pub fn independent(a: &Policy, b: &Policy) -> bool {
    !a.domain.intersects(&b.domain)
}

pub fn conflicts(a: &Policy, b: &Policy) -> bool {
    !independent(a, b) && a.priority == b.priority
}

/// First conflicting pair in `set`, if any.
pub fn find_conflict<'a, I>(set: I) -> Option<(&'a Policy, &'a Policy)>
where
    I: IntoIterator<Item = &'a Policy>,
{
    let v: Vec<&Policy> = set.into_iter().collect();
    for (i, a) in v.iter().enumerate() {
        for b in &v[i + 1..] {
            if conflicts(a, b) {
                return Some((a, b));
            }
        }
    }
    None
}

pub fn conflict_free<'a>(set: impl IntoIterator<Item = &'a Policy>) -> bool {
    find_conflict(set).is_none()
}

/// Whether `candidate` conflicts with any member of `set`.
pub fn conflicts_with_any<'a>(candidate: &Policy, set: impl IntoIterator<Item = &'a Policy>) -> bool {
    set.into_iter().any(|p| conflicts(candidate, p))
}

/// The policy of a conflict-free set that processes a packet of `flow`: the
/// highest-priority member whose domain contains it.
pub fn governing<'a>(set: &[&'a Policy], flow: u64) -> Option<&'a Policy> {
    // Conflict-freedom rules out priority ties among covering members.
    set.iter().copied().filter(|p| p.covers(flow)).max_by_key(|p| p.priority)
}

/// Path prescribed by the composition of `set` for a packet of `flow`
/// arriving at `ingress`; `None` when no member covers it or the governing
/// member has no path for this ingress.
pub fn resolve<'a>(
    set: &[&'a Policy],
    flow: u64,
    ingress: PortId,
) -> Result<Option<&'a [PortId]>, PolicyError> {
    if let Some((a, b)) = find_conflict(set.iter().copied()) {
        return Err(PolicyError::NotConflictFree(a.id.clone(), b.id.clone()));
    }
    Ok(resolve_unchecked(set, flow, ingress))
}

/// [`resolve`] without the conflict-freedom check.
pub fn resolve_unchecked<'a>(set: &[&'a Policy], flow: u64, ingress: PortId) -> Option<&'a [PortId]> {
    governing(set, flow).and_then(|p| p.path_at(ingress))
}

/// The port sequence a packet must follow: the resolved path, or straight to
/// `Drop` when nothing applies.
pub fn expected_path(set: &[&Policy], flow: u64, ingress: PortId) -> Vec<PortId> {
    match resolve_unchecked(set, flow, ingress) {
        Some(p) => p.to_vec(),
        None => vec![ingress, PortId::Drop],
    }
}

/// An owned, conflict-free sequence of committed policies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComposedState {
    policies: Vec<Policy>,
}

impl ComposedState {
    pub fn new() -> Self {
        ComposedState::default()
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn refs(&self) -> Vec<&Policy> {
        self.policies.iter().collect()
    }

    /// Appends `p` if it conflicts with no member; returns whether it was added.
    pub fn try_commit(&mut self, p: Policy) -> bool {
        if conflicts_with_any(&p, &self.policies) {
            return false;
        }
        self.policies.push(p);
        true
    }

    pub fn resolve(&self, flow: u64, ingress: PortId) -> Option<&[PortId]> {
        resolve_unchecked(&self.refs(), flow, ingress)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathViolation {
    NotIngress(PortId),
    StartMismatch { ingress: PortId, first: Option<PortId> },
    UnknownPort(PortId),
    BrokenLink { from: PortId, to: PortId },
    Loop(PortId),
    NonTerminalEnd(PortId),
}

impl fmt::Display for PathViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathViolation::NotIngress(p) => write!(f, "path keyed by non-ingress port {p}"),
            PathViolation::StartMismatch { ingress, first } => match first {
                Some(x) => write!(f, "path for ingress {ingress} starts at {x}"),
                None => write!(f, "path for ingress {ingress} is empty"),
            },
            PathViolation::UnknownPort(p) => write!(f, "unknown port {p}"),
            PathViolation::BrokenLink { from, to } => write!(f, "no link {from} -> {to}"),
            PathViolation::Loop(p) => write!(f, "loop: port {p} visited twice"),
            PathViolation::NonTerminalEnd(p) => write!(f, "non-terminal end at {p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyWarning {
    MissingPath(PortId),
    EmptyDomain,
}

/// Checks every path of `p` against `topo`. On success returns warnings
/// (ingress ports without a path, empty domain).
pub fn validate(p: &Policy, topo: &Topology) -> Result<Vec<PolicyWarning>, Vec<PathViolation>> {
    let mut errors = Vec::new();
    for (ingress, path) in &p.paths {
        if !topo.is_ingress(*ingress) {
            errors.push(PathViolation::NotIngress(*ingress));
        }
        if path.first() != Some(ingress) {
            errors.push(PathViolation::StartMismatch { ingress: *ingress, first: path.first().copied() });
            continue;
        }
        let mut seen = std::collections::BTreeSet::new();
        for port in path {
            if !topo.contains(*port) {
                errors.push(PathViolation::UnknownPort(*port));
            }
            if !seen.insert(*port) {
                errors.push(PathViolation::Loop(*port));
            }
        }
        for w in path.windows(2) {
            if !topo.has_link(w[0], w[1]) {
                errors.push(PathViolation::BrokenLink { from: w[0], to: w[1] });
            }
        }
        let last = *path.last().expect("non-empty: starts at ingress");
        if !last.is_sink() || path.len() < 2 {
            errors.push(PathViolation::NonTerminalEnd(last));
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let mut warnings: Vec<PolicyWarning> = topo
        .ingress()
        .filter(|i| !p.paths.contains_key(i))
        .map(PolicyWarning::MissingPath)
        .collect();
    if p.domain.is_empty() {
        warnings.push(PolicyWarning::EmptyDomain);
    }
    Ok(warnings)
}
