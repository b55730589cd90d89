//! ReuseTag: policies are ordered and tagged by the PS object and installed
//! with a two-phase update, reusing at most `f + 2` tags.
//!
//! Every controller runs the same installer loop over the PS order. For the
//! `k`-th policy it waits until only the previous tag is in flight, adds the
//! generation-`k` rules at every internal port, flips each ingress port from
//! the previous tag to the new one, and finally removes rules of generations
//! that can no longer be carried by any packet.
//!
//! Rules written for generation `k` realise the whole composition up to `k`
//! under tag `τ_k`. Every ingress port also carries a lowest-priority default
//! rule that stamps the current tag and drops, so the "currently tags with the
//! previous tag" test is defined for every flow.

use std::collections::{BTreeMap, VecDeque};

use crate::controller::{
    Controller, ControllerId, Effect, MsgBody, Outcome, PortOpKind, PortOpRecord, RequestId, Shared, View,
};
use crate::dataplane::{Action, Rule, RuleOrigin, Tag, TagMatch};
use crate::error::DataPlaneError;
use crate::policy::{conflicts_with_any, DivergentHop, FlowSet, Policy};
use crate::psm::{PullResult, INITIAL_TAG};
use crate::topology::{PortId, Topology};

/// Priority of the ingress default rule; below every policy priority.
pub const DEFAULT_PRIORITY: i64 = -1;

#[derive(Debug, Clone)]
struct Entry {
    policy: Policy,
    hops: BTreeMap<PortId, PortId>,
    tag: Tag,
    generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Gate,
    Internal(usize),
    Ingress(usize),
    Cleanup(usize),
}

#[derive(Debug, Clone)]
struct Install {
    index: usize,
    prev_tag: Tag,
    prev_generation: u64,
    phase: Phase,
}

/// Rules of generation `gen` at internal port `port` for the composition `seq`.
fn internal_rules(seq: &[Entry], port: PortId, tag: Tag, gen: u64) -> Vec<Rule> {
    seq.iter()
        .filter_map(|e| {
            e.hops.get(&port).map(|out| Rule {
                flows: e.policy.domain.clone(),
                tag: TagMatch::Is(tag),
                priority: i64::from(e.policy.priority),
                action: Action { set_tag: None, out: *out },
                origin: RuleOrigin { policy: Some(e.policy.id.clone()), generation: Some(gen), plan: Vec::new() },
            })
        })
        .collect()
}

/// Complete rule set of ingress `port` for the composition `seq`.
fn ingress_rules(seq: &[Entry], port: PortId, tag: Tag, gen: u64) -> Vec<Rule> {
    let mut rules: Vec<Rule> = seq
        .iter()
        .map(|e| Rule {
            flows: e.policy.domain.clone(),
            tag: TagMatch::Untagged,
            priority: i64::from(e.policy.priority),
            action: Action {
                set_tag: Some(tag),
                out: e.policy.path_at(port).map_or(PortId::Drop, |p| p[1]),
            },
            origin: RuleOrigin { policy: Some(e.policy.id.clone()), generation: Some(gen), plan: Vec::new() },
        })
        .collect();
    rules.push(default_rule(tag, gen));
    rules
}

fn default_rule(tag: Tag, gen: u64) -> Rule {
    Rule {
        flows: FlowSet::all(),
        tag: TagMatch::Untagged,
        priority: DEFAULT_PRIORITY,
        action: Action { set_tag: Some(tag), out: PortId::Drop },
        origin: RuleOrigin { policy: None, generation: Some(gen), plan: Vec::new() },
    }
}

/// Tag currently stamped by an ingress port, read off its default rule.
pub fn ingress_tag(rules: &[Rule]) -> Option<Tag> {
    rules
        .iter()
        .find(|r| r.priority == DEFAULT_PRIORITY && r.origin.policy.is_none())
        .and_then(|r| r.action.set_tag)
}

/// Initial rules for the policy committed before time zero, tagged 0.
pub fn initial_rules(initial: &Policy, topo: &Topology) -> Result<BTreeMap<PortId, Vec<Rule>>, DivergentHop> {
    let seq = [Entry { hops: initial.next_hops()?, policy: initial.clone(), tag: INITIAL_TAG, generation: 0 }];
    let mut out = BTreeMap::new();
    for p in topo.internal() {
        let rules = internal_rules(&seq, p, INITIAL_TAG, 0);
        if !rules.is_empty() {
            out.insert(p, rules);
        }
    }
    for p in topo.ingress() {
        out.insert(p, ingress_rules(&seq, p, INITIAL_TAG, 0));
    }
    Ok(out)
}

pub struct ReuseTagController {
    id: ControllerId,
    peers: Vec<ControllerId>,
    internal: Vec<PortId>,
    ingress: Vec<PortId>,
    catchup: bool,
    seq: Vec<Entry>,
    cur: Option<(RequestId, Policy)>,
    push_pending: bool,
    install: Option<Install>,
    response: Option<(RequestId, Outcome)>,
    outbox: VecDeque<(ControllerId, MsgBody)>,
    known_installed: usize,
}

impl ReuseTagController {
    pub fn new(
        id: ControllerId,
        all: &[ControllerId],
        topo: &Topology,
        initial: &Policy,
        catchup: bool,
    ) -> Result<Self, DivergentHop> {
        Ok(ReuseTagController {
            id,
            peers: all.iter().copied().filter(|c| *c != id).collect(),
            internal: topo.internal().collect(),
            ingress: topo.ingress().collect(),
            catchup,
            seq: vec![Entry { hops: initial.next_hops()?, policy: initial.clone(), tag: INITIAL_TAG, generation: 0 }],
            cur: None,
            push_pending: false,
            install: None,
            response: None,
            outbox: VecDeque::new(),
            known_installed: 0,
        })
    }

    /// Policies this controller has committed locally, the initial one included.
    pub fn committed(&self) -> impl Iterator<Item = (&Policy, Tag)> {
        self.seq.iter().map(|e| (&e.policy, e.tag))
    }

    fn finish(&mut self, index: usize) {
        if self.catchup && index > self.known_installed {
            self.known_installed = index;
            for p in &self.peers {
                self.outbox.push_back((*p, MsgBody::Installed { index }));
            }
        }
    }

    fn on_pull(&mut self, index: usize, policy: Policy, tag: Tag) {
        let own = self.cur.as_ref().is_some_and(|(_, p)| p.id == policy.id);
        if conflicts_with_any(&policy, self.seq.iter().map(|e| &e.policy)) {
            if own {
                self.response = Some((self.cur.take().unwrap().0, Outcome::Nack));
            }
            return;
        }
        let hops = policy.next_hops().expect("port-consistency is checked at scenario load");
        let prev = self.seq.last().expect("initial policy").clone();
        self.seq.push(Entry { policy, hops, tag, generation: index as u64 });
        if self.catchup && index <= self.known_installed {
            if own {
                self.response = Some((self.cur.take().unwrap().0, Outcome::Ack));
            }
            return;
        }
        self.install = Some(Install {
            index,
            prev_tag: prev.tag,
            prev_generation: prev.generation,
            phase: Phase::Gate,
        });
    }

    fn install_step(&mut self, shared: &mut Shared<'_>) -> Result<Effect, DataPlaneError> {
        let inst = self.install.clone().expect("install in progress");
        let entry = self.seq.last().expect("entry being installed").clone();
        let (tag, gen) = (entry.tag, entry.generation);
        let pid = Some(entry.policy.id.clone());
        let next = |phase: Phase, this: &Self| -> Option<Phase> {
            match phase {
                Phase::Gate => Some(Phase::Internal(0)),
                Phase::Internal(i) if i + 1 < this.internal.len() => Some(Phase::Internal(i + 1)),
                Phase::Internal(_) => Some(Phase::Ingress(0)),
                Phase::Ingress(i) if i + 1 < this.ingress.len() => Some(Phase::Ingress(i + 1)),
                Phase::Ingress(_) => Some(Phase::Cleanup(0)),
                Phase::Cleanup(i) if i + 1 < this.internal.len() => Some(Phase::Cleanup(i + 1)),
                Phase::Cleanup(_) => None,
            }
        };
        let effect = match inst.phase {
            Phase::Gate => {
                let tags = shared.dp.tags_in_use();
                let open = tags.iter().all(|t| *t == inst.prev_tag);
                if !open {
                    return Ok(Effect::Oracle { tags, open });
                }
                Effect::Oracle { tags, open }
            }
            Phase::Internal(i) => {
                let port = self.internal[i];
                let wanted = internal_rules(&self.seq, port, tag, gen);
                let (changed, written) = shared.dp.port_update(port, |rules| {
                    let missing: Vec<Rule> = wanted.iter().filter(|r| !rules.contains(r)).cloned().collect();
                    if missing.is_empty() {
                        return (None, (false, Vec::new()));
                    }
                    let written: Vec<Tag> = missing.iter().flat_map(|r| r.tags()).collect();
                    let mut v = rules.to_vec();
                    v.extend(missing);
                    (Some(v), (true, written))
                })?;
                Effect::PortOp(port_op(port, false, pid, changed, written))
            }
            Phase::Ingress(i) => {
                let port = self.ingress[i];
                let wanted = ingress_rules(&self.seq, port, tag, gen);
                let changed = shared.dp.port_update(port, |rules| {
                    if ingress_tag(rules) == Some(inst.prev_tag) {
                        (Some(wanted.clone()), true)
                    } else {
                        (None, false)
                    }
                })?;
                let written = if changed { vec![tag] } else { Vec::new() };
                Effect::PortOp(port_op(port, true, pid, changed, written))
            }
            Phase::Cleanup(i) => {
                let port = self.internal[i];
                let stale = |r: &Rule| {
                    r.origin.generation.is_some_and(|g| g < gen && g != inst.prev_generation)
                };
                let changed = shared.dp.port_update(port, |rules| {
                    if rules.iter().any(stale) {
                        (Some(rules.iter().filter(|r| !stale(r)).cloned().collect()), true)
                    } else {
                        (None, false)
                    }
                })?;
                Effect::PortOp(port_op(port, false, pid, changed, Vec::new()))
            }
        };
        // skip phases that have no ports to visit
        let mut phase = next(inst.phase, self);
        while let Some(p) = phase {
            let empty = match p {
                Phase::Internal(_) | Phase::Cleanup(_) => self.internal.is_empty(),
                Phase::Ingress(_) => self.ingress.is_empty(),
                Phase::Gate => false,
            };
            if !empty {
                break;
            }
            phase = next(p, self);
        }
        match phase {
            Some(p) => self.install.as_mut().unwrap().phase = p,
            None => {
                self.install = None;
                if self.cur.as_ref().is_some_and(|(_, p)| p.id == entry.policy.id) {
                    self.response = Some((self.cur.take().unwrap().0, Outcome::Ack));
                }
                self.finish(inst.index);
            }
        }
        Ok(effect)
    }
}

fn port_op(
    port: PortId,
    ingress: bool,
    policy: Option<crate::policy::PolicyId>,
    changed: bool,
    tags_written: Vec<Tag>,
) -> PortOpRecord {
    let mut tags_written = tags_written;
    tags_written.sort();
    tags_written.dedup();
    PortOpRecord { port, op: PortOpKind::Update, ingress, policy, changed, tags_written }
}

impl Controller for ReuseTagController {
    fn id(&self) -> ControllerId {
        self.id
    }

    fn invoke(&mut self, request: RequestId, policy: Policy) {
        debug_assert!(self.cur.is_none());
        self.cur = Some((request, policy));
        self.push_pending = true;
    }

    fn deliver(&mut self, _from: ControllerId, body: &MsgBody) {
        if let MsgBody::Installed { index } = body {
            self.known_installed = self.known_installed.max(*index);
        }
    }

    fn enabled(&self, view: &View<'_>) -> bool {
        self.response.is_some()
            || self.push_pending
            || !self.outbox.is_empty()
            || self.install.is_some()
            || view.ps.is_some_and(|ps| ps.has_pending(self.id))
    }

    fn step(&mut self, shared: &mut Shared<'_>) -> Result<Effect, DataPlaneError> {
        if let Some((request, outcome)) = self.response.take() {
            return Ok(Effect::Respond { request, outcome });
        }
        if self.push_pending {
            self.push_pending = false;
            let policy = self.cur.as_ref().expect("push follows invoke").1.clone();
            return Ok(Effect::Ps(shared.ps().push(self.id, policy)));
        }
        if let Some((to, body)) = self.outbox.pop_front() {
            return Ok(Effect::Send { to, body });
        }
        if self.install.is_some() {
            return self.install_step(shared);
        }
        let (res, op) = shared.ps().pull(self.id);
        if let PullResult::Entry { index, policy, tag } = res {
            self.on_pull(index, policy, tag);
        }
        Ok(Effect::Ps(op))
    }

    fn outstanding(&self) -> Option<RequestId> {
        self.cur.as_ref().map(|(r, _)| *r).or(self.response.map(|(r, _)| r))
    }
}
