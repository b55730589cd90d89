//! FixTag: one static tag per loop-free path, internal rules installed once,
//! policies installed only at the network edge.
//!
//! A request first announces its intent to every other controller, then
//! updates the ingress ports in ascending order. Each ingress update is a
//! single atomic check: already present (no-op), conflicting with an installed
//! policy (abort) or install. Receivers rebroadcast an intent once and then
//! run the same ingress sequence on the origin's behalf, so a request whose
//! origin crashes still completes everywhere.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::controller::{
    Controller, ControllerId, Effect, MsgBody, Outcome, PortOpKind, PortOpRecord, RequestId, Shared, View,
};
use crate::dataplane::{Action, PortMode, Rule, RuleOrigin, Tag, TagMatch};
use crate::error::{CatalogOverflow, DataPlaneError};
use crate::policy::{FlowSet, Policy, PolicyId};
use crate::topology::{PortId, Topology};

pub const DEFAULT_CATALOG_CAP: usize = 10_000;

/// Every loop-free path from an ingress port to a sink, in lexicographic order.
/// A path's position in the catalog is its tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCatalog {
    paths: Vec<Vec<PortId>>,
    index: BTreeMap<Vec<PortId>, usize>,
}

impl PathCatalog {
    pub fn build(topo: &Topology, cap: usize) -> Result<Self, CatalogOverflow> {
        let mut paths = Vec::new();
        for ingress in topo.ingress() {
            let mut stack = vec![ingress];
            let mut on_path = BTreeSet::from([ingress]);
            extend(topo, &mut stack, &mut on_path, &mut paths, cap)?;
        }
        paths.sort();
        let index = paths.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Ok(PathCatalog { paths, index })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[Vec<PortId>] {
        &self.paths
    }

    pub fn tag_of(&self, path: &[PortId]) -> Option<Tag> {
        self.index.get(path).map(|i| Tag(*i as u32))
    }

    pub fn path(&self, tag: Tag) -> Option<&[PortId]> {
        self.paths.get(tag.0 as usize).map(Vec::as_slice)
    }

    /// Internal forwarding rules: at every internal port on path `k`, packets
    /// tagged `k` go to the next hop of path `k`.
    pub fn internal_rules(&self) -> BTreeMap<PortId, Vec<Rule>> {
        let mut out: BTreeMap<PortId, Vec<Rule>> = BTreeMap::new();
        for (k, path) in self.paths.iter().enumerate() {
            for w in path.windows(2).skip(1) {
                out.entry(w[0]).or_default().push(Rule {
                    flows: FlowSet::all(),
                    tag: TagMatch::Is(Tag(k as u32)),
                    priority: 0,
                    action: Action { set_tag: None, out: w[1] },
                    origin: RuleOrigin::default(),
                });
            }
        }
        out
    }

    /// The tagging rule `policy` needs at `ingress`. Without a path for this
    /// ingress the policy drops its packets there.
    pub fn ingress_rule(&self, policy: &Policy, ingress: PortId) -> Rule {
        let drop_path = [ingress, PortId::Drop];
        let path = policy.path_at(ingress).unwrap_or(&drop_path);
        let tag = self.tag_of(path).expect("validated policy paths are in the catalog");
        Rule {
            flows: policy.domain.clone(),
            tag: TagMatch::Untagged,
            priority: i64::from(policy.priority),
            action: Action { set_tag: Some(tag), out: path[1] },
            origin: RuleOrigin { policy: Some(policy.id.clone()), generation: None, plan: Vec::new() },
        }
    }
}

fn extend(
    topo: &Topology,
    stack: &mut Vec<PortId>,
    on_path: &mut BTreeSet<PortId>,
    out: &mut Vec<Vec<PortId>>,
    cap: usize,
) -> Result<(), CatalogOverflow> {
    let last = *stack.last().expect("non-empty");
    let next: Vec<PortId> = topo.successors(last).collect();
    for n in next {
        if n.is_sink() {
            if out.len() == cap {
                return Err(CatalogOverflow { cap });
            }
            let mut p = stack.clone();
            p.push(n);
            out.push(p);
        } else if on_path.insert(n) {
            stack.push(n);
            extend(topo, stack, on_path, out, cap)?;
            stack.pop();
            on_path.remove(&n);
        }
    }
    Ok(())
}

/// What an ingress update does for `policy` given the port's current rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngressDecision {
    Present,
    Conflict(PolicyId),
    Install,
}

pub fn decide(rules: &[Rule], policy: &Policy) -> IngressDecision {
    decide_parts(rules, &policy.id, i64::from(policy.priority), &policy.domain)
}

fn decide_parts(rules: &[Rule], id: &PolicyId, priority: i64, domain: &FlowSet) -> IngressDecision {
    let mut conflict = None;
    for r in rules {
        match &r.origin.policy {
            Some(other) if other == id => return IngressDecision::Present,
            Some(other) if r.priority == priority && r.flows.intersects(domain) && conflict.is_none() => {
                conflict = Some(other.clone())
            }
            _ => {}
        }
    }
    match conflict {
        Some(other) => IngressDecision::Conflict(other),
        None => IngressDecision::Install,
    }
}

/// Adds every rule of `missing` whose policy is neither present nor beaten by
/// a conflicting rule. Returns the rules actually added.
fn add_missing(rules: &mut Vec<Rule>, missing: &[Rule]) -> Vec<Rule> {
    let mut added = Vec::new();
    for m in missing {
        let id = m.origin.policy.as_ref().expect("plans belong to policies");
        if decide_parts(rules, id, m.priority, &m.flows) == IngressDecision::Install {
            rules.push(m.clone());
            added.push(m.clone());
        }
    }
    added
}

#[derive(Debug, Clone)]
enum Stage {
    Announce(usize),
    Ingress { idx: usize, read: Option<Vec<Rule>> },
    /// Completing the policies seen on the way, at the ports that lacked them.
    Finish { idx: usize, read: Option<(Vec<Rule>, Vec<Rule>)> },
    Respond(Outcome),
}

#[derive(Debug, Clone)]
struct Task {
    policy: Policy,
    request: Option<RequestId>,
    stage: Stage,
    outcome: Outcome,
    /// One ingress rule of each foreign policy met during the ingress pass.
    foreign: BTreeMap<PolicyId, Rule>,
    observed: BTreeSet<(PolicyId, PortId)>,
}

impl Task {
    fn new(policy: Policy, request: Option<RequestId>, announce: bool) -> Self {
        let stage = if announce { Stage::Announce(0) } else { Stage::Ingress { idx: 0, read: None } };
        Task {
            policy,
            request,
            stage,
            outcome: Outcome::Ack,
            foreign: BTreeMap::new(),
            observed: BTreeSet::new(),
        }
    }

    fn observe(&mut self, port: PortId, rules: &[Rule]) {
        for r in rules {
            if let Some(id) = &r.origin.policy {
                if *id != self.policy.id && !r.origin.plan.is_empty() {
                    self.foreign.entry(id.clone()).or_insert_with(|| r.clone());
                    self.observed.insert((id.clone(), port));
                }
            }
        }
    }
}

pub struct FixTagController {
    id: ControllerId,
    peers: Vec<ControllerId>,
    ingress: Vec<PortId>,
    catalog: Arc<PathCatalog>,
    mode: PortMode,
    own: Option<Task>,
    helping: VecDeque<Task>,
    seen: BTreeSet<PolicyId>,
}

impl FixTagController {
    pub fn new(
        id: ControllerId,
        all: &[ControllerId],
        topo: &Topology,
        catalog: Arc<PathCatalog>,
        mode: PortMode,
    ) -> Self {
        FixTagController {
            id,
            peers: all.iter().copied().filter(|c| *c != id).collect(),
            ingress: topo.ingress().collect(),
            catalog,
            mode,
            own: None,
            helping: VecDeque::new(),
            seen: BTreeSet::new(),
        }
    }

    /// Upper bound on own steps from invocation to response: the
    /// announcements, one pass over the ingress ports for the request and one
    /// for completing what it met there, and the response.
    pub fn step_bound(n: usize, ingress: usize, mode: PortMode) -> usize {
        let per_port = match mode {
            PortMode::Atomic => 1,
            PortMode::ReadWrite => 2,
        };
        n.saturating_sub(1) + 2 * ingress * per_port + 1
    }

    /// Rules of the foreign policies of `task` still to be added at ingress `idx`.
    fn missing_at(&self, task: &Task, idx: usize) -> Vec<Rule> {
        let port = self.ingress[idx];
        task.foreign
            .iter()
            .filter(|(id, _)| !task.observed.contains(&((*id).clone(), port)))
            .filter_map(|(_, r)| self.rule_from_plan(r, port))
            .collect()
    }

    fn rule_from_plan(&self, seen: &Rule, port: PortId) -> Option<Rule> {
        let tag = seen.origin.plan.iter().find(|(j, _)| *j == port).map(|(_, t)| *t)?;
        let out = *self.catalog.path(tag)?.get(1)?;
        Some(Rule { action: Action { set_tag: Some(tag), out }, ..seen.clone() })
    }

    /// The stage after the ingress pass, or after finishing port `from - 1`.
    fn finish_from(&self, task: &Task, from: usize) -> Stage {
        match (from..self.ingress.len()).find(|i| !self.missing_at(task, *i).is_empty()) {
            Some(idx) => Stage::Finish { idx, read: None },
            None => Stage::Respond(task.outcome),
        }
    }

    fn advance(&mut self, shared: &mut Shared<'_>, own: bool) -> Result<Effect, DataPlaneError> {
        let mut task = if own {
            self.own.take().expect("own task")
        } else {
            self.helping.pop_front().expect("helper task")
        };
        let effect = self.advance_task(&mut task, shared, own);
        let done = matches!(task.stage, Stage::Respond(_)) && !own;
        let responded = matches!(effect, Ok(Effect::Respond { .. }));
        if own && !responded {
            self.own = Some(task);
        } else if !own && !done {
            self.helping.push_front(task);
        }
        effect
    }

    fn advance_task(&self, task: &mut Task, shared: &mut Shared<'_>, own: bool) -> Result<Effect, DataPlaneError> {
        match task.stage.clone() {
            Stage::Announce(i) => {
                let to = self.peers[i];
                task.stage = if i + 1 < self.peers.len() {
                    Stage::Announce(i + 1)
                } else {
                    Stage::Ingress { idx: 0, read: None }
                };
                let body = MsgBody::Intent { origin: self.id, policy: task.policy.clone() };
                Ok(Effect::Send { to, body })
            }
            Stage::Ingress { idx, read } => {
                let port = self.ingress[idx];
                let rule = self.ingress_rule(&task.policy, port);
                let policy = task.policy.clone();
                let mut record = PortOpRecord {
                    port,
                    op: PortOpKind::Update,
                    ingress: true,
                    policy: Some(policy.id.clone()),
                    changed: false,
                    tags_written: Vec::new(),
                };
                let decision = match (self.mode, read) {
                    (PortMode::Atomic, _) => {
                        let (d, before) = shared.dp.port_update(port, |rules| {
                            let d = decide(rules, &policy);
                            let next = (d == IngressDecision::Install).then(|| {
                                let mut v = rules.to_vec();
                                v.push(rule.clone());
                                v
                            });
                            (next, (d, rules.to_vec()))
                        })?;
                        task.observe(port, &before);
                        d
                    }
                    (PortMode::ReadWrite, None) => {
                        let rules = shared.dp.port_read(port)?;
                        record.op = PortOpKind::Read;
                        task.observe(port, &rules);
                        let d = decide(&rules, &policy);
                        if d == IngressDecision::Install {
                            task.stage = Stage::Ingress { idx, read: Some(rules) };
                            return Ok(Effect::PortOp(record));
                        }
                        d
                    }
                    (PortMode::ReadWrite, Some(mut rules)) => {
                        rules.push(rule.clone());
                        shared.dp.port_write(port, rules)?;
                        record.op = PortOpKind::Write;
                        IngressDecision::Install
                    }
                };
                if let IngressDecision::Conflict(_) = decision {
                    task.outcome = Outcome::Nack;
                }
                task.stage = match decision {
                    IngressDecision::Conflict(_) if !own => Stage::Respond(Outcome::Nack),
                    IngressDecision::Conflict(_) => self.finish_from(task, 0),
                    _ if idx + 1 < self.ingress.len() => Stage::Ingress { idx: idx + 1, read: None },
                    _ if !own => Stage::Respond(Outcome::Ack),
                    _ => self.finish_from(task, 0),
                };
                if decision == IngressDecision::Install {
                    record.changed = true;
                    record.tags_written = rule.action.set_tag.into_iter().collect();
                }
                Ok(Effect::PortOp(record))
            }
            Stage::Finish { idx, read } => {
                let port = self.ingress[idx];
                let missing = self.missing_at(task, idx);
                let mut record = PortOpRecord {
                    port,
                    op: PortOpKind::Update,
                    ingress: true,
                    policy: None,
                    changed: false,
                    tags_written: Vec::new(),
                };
                let added = match (self.mode, read) {
                    (PortMode::Atomic, _) => shared.dp.port_update(port, |rules| {
                        let mut v = rules.to_vec();
                        let added = add_missing(&mut v, &missing);
                        ((!added.is_empty()).then_some(v), added)
                    })?,
                    (PortMode::ReadWrite, None) => {
                        let mut rules = shared.dp.port_read(port)?;
                        record.op = PortOpKind::Read;
                        let added = add_missing(&mut rules, &missing);
                        if !added.is_empty() {
                            task.stage = Stage::Finish { idx, read: Some((rules, added)) };
                            return Ok(Effect::PortOp(record));
                        }
                        Vec::new()
                    }
                    (PortMode::ReadWrite, Some((rules, added))) => {
                        shared.dp.port_write(port, rules)?;
                        record.op = PortOpKind::Write;
                        added
                    }
                };
                task.stage = self.finish_from(task, idx + 1);
                record.changed = !added.is_empty();
                record.tags_written = added.iter().filter_map(|r| r.action.set_tag).collect();
                Ok(Effect::PortOp(record))
            }
            Stage::Respond(outcome) => {
                let request = task.request.expect("only own tasks respond");
                Ok(Effect::Respond { request, outcome })
            }
        }
    }

    /// [`PathCatalog::ingress_rule`] annotated with the policy's tag at every
    /// ingress port.
    fn ingress_rule(&self, policy: &Policy, port: PortId) -> Rule {
        let mut rule = self.catalog.ingress_rule(policy, port);
        rule.origin.plan = self
            .ingress
            .iter()
            .map(|j| (*j, self.catalog.ingress_rule(policy, *j).action.set_tag.expect("ingress rules tag")))
            .collect();
        rule
    }
}

impl Controller for FixTagController {
    fn id(&self) -> ControllerId {
        self.id
    }

    fn invoke(&mut self, request: RequestId, policy: Policy) {
        debug_assert!(self.own.is_none());
        self.seen.insert(policy.id.clone());
        self.own = Some(Task::new(policy, Some(request), !self.peers.is_empty()));
        // a helper read taken before this point may be stale when resumed
        for t in &mut self.helping {
            match &mut t.stage {
                Stage::Ingress { read, .. } => *read = None,
                Stage::Finish { read, .. } => *read = None,
                _ => {}
            }
        }
    }

    fn deliver(&mut self, _from: ControllerId, body: &MsgBody) {
        if let MsgBody::Intent { policy, .. } = body {
            if self.seen.insert(policy.id.clone()) {
                self.helping.push_back(Task::new(policy.clone(), None, !self.peers.is_empty()));
            }
        }
    }

    fn enabled(&self, _view: &View<'_>) -> bool {
        self.own.is_some() || !self.helping.is_empty()
    }

    fn step(&mut self, shared: &mut Shared<'_>) -> Result<Effect, DataPlaneError> {
        let own = self.own.is_some();
        self.advance(shared, own)
    }

    fn outstanding(&self) -> Option<RequestId> {
        self.own.as_ref().and_then(|t| t.request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::{DataPlane, Packet, PacketUid};

    const W: PortId = PortId::World;
    const D: PortId = PortId::Drop;

    fn p(n: u32) -> PortId {
        PortId::Port(n)
    }

    fn line() -> Topology {
        Topology::new([1, 2, 3], [(p(1), p(2)), (p(2), p(3)), (p(3), W)]).unwrap()
    }

    /// Exhaustive enumeration by brute force over all port sequences.
    fn brute_force(topo: &Topology) -> Vec<Vec<PortId>> {
        let nodes: Vec<PortId> = topo.ports().filter(|x| !x.is_sink()).collect();
        let mut out = Vec::new();
        let mut frontier: Vec<Vec<PortId>> = topo.ingress().map(|i| vec![i]).collect();
        while let Some(path) = frontier.pop() {
            let last = *path.last().unwrap();
            for s in [W, D] {
                if topo.has_link(last, s) {
                    let mut q = path.clone();
                    q.push(s);
                    out.push(q);
                }
            }
            for n in &nodes {
                if topo.has_link(last, *n) && !path.contains(n) {
                    let mut q = path.clone();
                    q.push(*n);
                    frontier.push(q);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn linear_network_catalog() {
        let c = PathCatalog::build(&line(), DEFAULT_CATALOG_CAP).unwrap();
        assert_eq!(
            c.paths(),
            &[vec![p(1), p(2), p(3), W], vec![p(1), p(2), p(3), D], vec![p(1), p(2), D], vec![p(1), D]]
        );
        let rules = c.internal_rules();
        assert_eq!(rules[&p(2)].len(), 3);
        assert_eq!(rules[&p(3)].len(), 2);
        assert!(!rules.contains_key(&p(1)));
    }

    #[test]
    fn empty_topology_has_empty_catalog() {
        assert!(PathCatalog::build(&Topology::empty(), 10).unwrap().is_empty());
    }

    #[test]
    fn catalog_matches_brute_force_on_complete_three_switch_network() {
        // host port a on switch a; s_a_b = 10a + b faces switch b
        let mut ports = vec![1, 2, 3];
        let mut links = Vec::new();
        for a in 1..=3u32 {
            for b in 1..=3u32 {
                if a != b {
                    ports.push(10 * a + b);
                }
            }
        }
        for a in 1..=3u32 {
            let mine: Vec<u32> = std::iter::once(a).chain((1..=3).filter(|b| *b != a).map(|b| 10 * a + b)).collect();
            for x in mine {
                links.push((p(x), W));
                for b in (1..=3).filter(|b| *b != a) {
                    links.push((p(x), p(10 * b + a)));
                }
            }
        }
        let t = Topology::new(ports, links).unwrap();
        let c = PathCatalog::build(&t, DEFAULT_CATALOG_CAP).unwrap();
        assert_eq!(c.paths(), brute_force(&t).as_slice());
        assert!(c.len() > 20);
    }

    #[test]
    fn catalog_cap_is_enforced() {
        assert_eq!(PathCatalog::build(&line(), 3), Err(CatalogOverflow { cap: 3 }));
    }

    #[test]
    fn decide_detects_presence_and_conflict() {
        let t = line();
        let c = PathCatalog::build(&t, 100).unwrap();
        let a = Policy::new("a", 1, FlowSet::interval(0, 99)).with_path([p(1), p(2), p(3), W]);
        let b = Policy::new("b", 1, FlowSet::interval(50, 149)).with_path([p(1), p(2), D]);
        let hi = Policy::new("hi", 2, FlowSet::interval(50, 149)).with_path([p(1), D]);
        let rules = vec![c.ingress_rule(&a, p(1))];
        assert_eq!(decide(&rules, &a), IngressDecision::Present);
        assert_eq!(decide(&rules, &b), IngressDecision::Conflict("a".into()));
        assert_eq!(decide(&rules, &hi), IngressDecision::Install);
    }

    #[test]
    fn tagged_packet_follows_its_path() {
        let t = line();
        let c = PathCatalog::build(&t, 100).unwrap();
        let mut dp = DataPlane::new(t, PortMode::Atomic);
        for (port, rules) in c.internal_rules() {
            dp.preinstall(port, rules).unwrap();
        }
        let a = Policy::new("a", 1, FlowSet::interval(0, 99)).with_path([p(1), p(2), p(3), W]);
        dp.preinstall(p(1), [c.ingress_rule(&a, p(1))]).unwrap();
        dp.inject(Packet { uid: PacketUid(0), flow: 7, tag: None }, p(1)).unwrap();
        let mut hops = vec![p(1)];
        let mut at = p(1);
        while !at.is_sink() {
            at = dp.forward_step(at).unwrap().to;
            hops.push(at);
        }
        assert_eq!(hops, vec![p(1), p(2), p(3), W]);
    }

    #[test]
    fn step_bound_formula() {
        assert_eq!(FixTagController::step_bound(3, 3, PortMode::Atomic), 9);
        assert_eq!(FixTagController::step_bound(2, 2, PortMode::ReadWrite), 10);
    }
}
