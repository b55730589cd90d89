//! The data plane: per-port FIFO queues, rule tables, atomic port updates and
//! the inject/forward semantics.

mod rule;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

pub use rule::{ambiguous_pair, select_rule, Action, Packet, PacketUid, Rule, RuleOrigin, Tag, TagMatch};

use crate::error::DataPlaneError;
use crate::topology::{PortId, Topology};

/// How controllers may touch a port's rule table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortMode {
    /// One atomic read-modify-write `update(i, g)`.
    #[default]
    Atomic,
    /// Separate atomic `read` and `write`; anything may interleave between them.
    ReadWrite,
}

impl PortMode {
    fn name(self) -> &'static str {
        match self {
            PortMode::Atomic => "atomic",
            PortMode::ReadWrite => "read_write",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PortState {
    pub queue: VecDeque<Packet>,
    pub rules: Vec<Rule>,
}

/// Result of one forward event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Forwarded {
    pub from: PortId,
    pub to: PortId,
    pub before: Packet,
    pub after: Packet,
    /// Origin of the applied rule; `None` when the default drop applied.
    pub rule: Option<RuleOrigin>,
}

impl Forwarded {
    pub fn terminated(&self) -> bool {
        self.to.is_sink()
    }
}

#[derive(Debug, Clone)]
pub struct DataPlane {
    topology: Topology,
    mode: PortMode,
    ports: BTreeMap<PortId, PortState>,
    next_uid: u64,
}

impl DataPlane {
    pub fn new(topology: Topology, mode: PortMode) -> Self {
        let ports = topology
            .ports()
            .filter(|p| !p.is_sink())
            .map(|p| (p, PortState::default()))
            .collect();
        DataPlane { topology, mode, ports, next_uid: 0 }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn mode(&self) -> PortMode {
        self.mode
    }

    pub fn port(&self, p: PortId) -> Option<&PortState> {
        self.ports.get(&p)
    }

    pub fn rules(&self, p: PortId) -> &[Rule] {
        self.ports.get(&p).map(|s| s.rules.as_slice()).unwrap_or(&[])
    }

    pub fn queue_len(&self, p: PortId) -> usize {
        self.ports.get(&p).map_or(0, |s| s.queue.len())
    }

    /// Ports whose queue is non-empty, ascending.
    pub fn busy_ports(&self) -> impl Iterator<Item = PortId> + '_ {
        self.ports.iter().filter(|(_, s)| !s.queue.is_empty()).map(|(p, _)| *p)
    }

    pub fn in_flight(&self) -> usize {
        self.ports.values().map(|s| s.queue.len()).sum()
    }

    /// Installs rules before time zero, bypassing the port mode.
    pub fn preinstall(&mut self, p: PortId, rules: impl IntoIterator<Item = Rule>) -> Result<(), DataPlaneError> {
        let rules: Vec<Rule> = rules.into_iter().collect();
        self.check_rules(p, &rules)?;
        self.ports
            .get_mut(&p)
            .ok_or(DataPlaneError::UnknownPort(p))?
            .rules
            .extend(rules);
        Ok(())
    }

    /// A fresh untagged packet with a unique id.
    pub fn new_packet(&mut self, flow: u64) -> Packet {
        let uid = PacketUid(self.next_uid);
        self.next_uid += 1;
        Packet { uid, flow, tag: None }
    }

    /// Appends `pk` to the queue of ingress port `j`.
    pub fn inject(&mut self, pk: Packet, j: PortId) -> Result<(), DataPlaneError> {
        if !self.topology.is_ingress(j) {
            return Err(DataPlaneError::NotIngress(j));
        }
        if pk.tag.is_some() {
            return Err(DataPlaneError::AlreadyTagged);
        }
        self.next_uid = self.next_uid.max(pk.uid.0 + 1);
        self.ports.get_mut(&j).expect("ingress ports exist").queue.push_back(pk);
        Ok(())
    }

    /// Processes the head of `Q_j` with the highest-priority matching rule;
    /// unmatched packets go to `Drop` unchanged.
    pub fn forward_step(&mut self, j: PortId) -> Result<Forwarded, DataPlaneError> {
        let state = self.ports.get_mut(&j).ok_or(DataPlaneError::UnknownPort(j))?;
        let before = state.queue.pop_front().ok_or(DataPlaneError::EmptyQueue(j))?;
        let (after, to, rule) = match select_rule(&state.rules, &before) {
            Some(r) => {
                let (after, to) = r.apply(&before);
                (after, to, Some(RuleOrigin { policy: r.origin.policy.clone(), generation: r.origin.generation, plan: Vec::new() }))
            }
            None => (before, PortId::Drop, None),
        };
        if !to.is_sink() {
            self.ports.get_mut(&to).expect("rule targets checked at install").queue.push_back(after);
        }
        Ok(Forwarded { from: j, to, before, after, rule })
    }

    /// Atomically reads the rules of `j` and lets `g` decide the new table and
    /// a response. `g` returning `None` leaves the table untouched.
    pub fn port_update<R>(
        &mut self,
        j: PortId,
        g: impl FnOnce(&[Rule]) -> (Option<Vec<Rule>>, R),
    ) -> Result<R, DataPlaneError> {
        if self.mode != PortMode::Atomic {
            return Err(DataPlaneError::WrongPortMode { op: "update", mode: self.mode.name() });
        }
        let current = &self.ports.get(&j).ok_or(DataPlaneError::UnknownPort(j))?.rules;
        let (next, resp) = g(current);
        if let Some(next) = next {
            self.check_rules(j, &next)?;
            self.ports.get_mut(&j).expect("checked above").rules = next;
        }
        Ok(resp)
    }

    pub fn port_read(&self, j: PortId) -> Result<Vec<Rule>, DataPlaneError> {
        if self.mode != PortMode::ReadWrite {
            return Err(DataPlaneError::WrongPortMode { op: "read", mode: self.mode.name() });
        }
        Ok(self.ports.get(&j).ok_or(DataPlaneError::UnknownPort(j))?.rules.clone())
    }

    pub fn port_write(&mut self, j: PortId, rules: Vec<Rule>) -> Result<(), DataPlaneError> {
        if self.mode != PortMode::ReadWrite {
            return Err(DataPlaneError::WrongPortMode { op: "write", mode: self.mode.name() });
        }
        self.check_rules(j, &rules)?;
        self.ports.get_mut(&j).ok_or(DataPlaneError::UnknownPort(j))?.rules = rules;
        Ok(())
    }

    /// The monitoring oracle: tags carried by packets in any queue right now.
    pub fn tags_in_use(&self) -> BTreeSet<Tag> {
        self.ports.values().flat_map(|s| s.queue.iter().filter_map(|pk| pk.tag)).collect()
    }

    fn check_rules(&self, j: PortId, rules: &[Rule]) -> Result<(), DataPlaneError> {
        if !self.ports.contains_key(&j) {
            return Err(DataPlaneError::UnknownPort(j));
        }
        if let Some(r) = rules.iter().find(|r| !self.topology.has_link(j, r.action.out)) {
            return Err(DataPlaneError::NotASuccessor { port: j, out: r.action.out });
        }
        debug_assert!(ambiguous_pair(rules).is_none(), "ambiguous rules at port {j}");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::FlowSet;

    const W: PortId = PortId::World;

    fn net(mode: PortMode) -> DataPlane {
        // 1 -> 3, 2 -> 3, 3 -> 4 | World, 4 -> World
        let t = Topology::new(
            [1, 2, 3, 4],
            [(1.into(), 3.into()), (2.into(), 3.into()), (3.into(), 4.into()), (3.into(), W), (4.into(), W)],
        )
        .unwrap();
        DataPlane::new(t, mode)
    }

    fn fwd(tag: TagMatch, set: Option<u32>, pr: i64, out: PortId) -> Rule {
        Rule {
            flows: FlowSet::all(),
            tag,
            priority: pr,
            action: Action { set_tag: set.map(Tag), out },
            origin: RuleOrigin::default(),
        }
    }

    #[test]
    fn inject_appends_in_order() {
        let mut dp = net(PortMode::Atomic);
        let a = dp.new_packet(5);
        let b = dp.new_packet(6);
        dp.inject(a, 1.into()).unwrap();
        assert_eq!(dp.port(1.into()).unwrap().queue, VecDeque::from([a]));
        dp.inject(b, 1.into()).unwrap();
        let flows: Vec<u64> = dp.port(1.into()).unwrap().queue.iter().map(|p| p.flow).collect();
        assert_eq!(flows, vec![5, 6]);
    }

    #[test]
    fn inject_at_internal_port_fails() {
        let mut dp = net(PortMode::Atomic);
        let pk = dp.new_packet(1);
        assert_eq!(dp.inject(pk, 3.into()), Err(DataPlaneError::NotIngress(3.into())));
    }

    #[test]
    fn forward_applies_single_matching_rule() {
        let mut dp = net(PortMode::Atomic);
        dp.preinstall(3.into(), [fwd(TagMatch::Is(Tag(0)), None, 0, 4.into())]).unwrap();
        dp.ports.get_mut(&3.into()).unwrap().queue.push_back(Packet {
            uid: PacketUid(9),
            flow: 1,
            tag: Some(Tag(0)),
        });
        let f = dp.forward_step(3.into()).unwrap();
        assert_eq!(f.to, PortId::Port(4));
        assert_eq!(dp.queue_len(4.into()), 1);
    }

    #[test]
    fn forward_prefers_higher_priority() {
        let mut dp = net(PortMode::Atomic);
        dp.preinstall(1.into(), [fwd(TagMatch::Any, Some(1), 1, PortId::Drop), fwd(TagMatch::Any, Some(2), 2, 3.into())])
            .unwrap();
        let pk = dp.new_packet(0);
        dp.inject(pk, 1.into()).unwrap();
        let f = dp.forward_step(1.into()).unwrap();
        assert_eq!((f.to, f.after.tag), (PortId::Port(3), Some(Tag(2))));
    }

    #[test]
    fn unmatched_packet_goes_to_drop() {
        let mut dp = net(PortMode::Atomic);
        let pk = dp.new_packet(0);
        dp.inject(pk, 2.into()).unwrap();
        let f = dp.forward_step(2.into()).unwrap();
        assert_eq!(f.to, PortId::Drop);
        assert!(f.rule.is_none() && f.terminated());
        assert_eq!(dp.in_flight(), 0);
    }

    #[test]
    fn forward_on_empty_queue_errors() {
        let mut dp = net(PortMode::Atomic);
        assert_eq!(dp.forward_step(1.into()), Err(DataPlaneError::EmptyQueue(1.into())));
    }

    #[test]
    fn conditional_update_replaces_only_on_match() {
        let mut dp = net(PortMode::Atomic);
        dp.preinstall(1.into(), [fwd(TagMatch::Any, Some(0), 0, 3.into())]).unwrap();
        let flip = |expect: u32, to: u32| {
            move |rules: &[Rule]| {
                if rules.iter().any(|r| r.action.set_tag == Some(Tag(expect))) {
                    (Some(vec![fwd(TagMatch::Any, Some(to), 0, 3.into())]), true)
                } else {
                    (None, false)
                }
            }
        };
        assert!(dp.port_update(1.into(), flip(0, 1)).unwrap());
        assert!(!dp.port_update(1.into(), flip(0, 2)).unwrap());
        assert_eq!(dp.rules(1.into())[0].action.set_tag, Some(Tag(1)));
    }

    #[test]
    fn update_rejects_rules_to_non_successors() {
        let mut dp = net(PortMode::Atomic);
        let r = dp.port_update(1.into(), |_| (Some(vec![fwd(TagMatch::Any, None, 0, 4.into())]), ()));
        assert_eq!(r, Err(DataPlaneError::NotASuccessor { port: 1.into(), out: 4.into() }));
        assert!(dp.rules(1.into()).is_empty());
    }

    #[test]
    fn port_modes_are_exclusive() {
        let mut atomic = net(PortMode::Atomic);
        assert!(atomic.port_read(1.into()).is_err());
        let mut weak = net(PortMode::ReadWrite);
        assert!(matches!(
            weak.port_update(1.into(), |_| (None, ())),
            Err(DataPlaneError::WrongPortMode { .. })
        ));
        assert!(atomic.port_write(1.into(), vec![]).is_err());
    }

    #[test]
    fn read_write_back_is_idempotent_and_interleaved_writes_clobber() {
        let mut dp = net(PortMode::ReadWrite);
        let mine = fwd(TagMatch::Any, Some(1), 1, 3.into());
        let theirs = fwd(TagMatch::Any, Some(2), 2, 3.into());
        let snapshot = dp.port_read(1.into()).unwrap();
        dp.port_write(1.into(), snapshot.clone()).unwrap();
        assert_eq!(dp.port_read(1.into()).unwrap(), snapshot);
        // p1 reads, p2 writes, p1 writes its stale view back
        let p1_view = dp.port_read(1.into()).unwrap();
        dp.port_write(1.into(), vec![theirs.clone()]).unwrap();
        let mut stale = p1_view;
        stale.push(mine.clone());
        dp.port_write(1.into(), stale).unwrap();
        assert_eq!(dp.port_read(1.into()).unwrap(), vec![mine]);
    }

    #[test]
    fn oracle_reports_tags_in_queues() {
        let mut dp = net(PortMode::Atomic);
        assert!(dp.tags_in_use().is_empty());
        dp.ports.get_mut(&3.into()).unwrap().queue.push_back(Packet {
            uid: PacketUid(1),
            flow: 0,
            tag: Some(Tag(1)),
        });
        assert_eq!(dp.tags_in_use(), BTreeSet::from([Tag(1)]));
    }

    fn arb_rule(outs: &'static [u32]) -> impl proptest::strategy::Strategy<Value = Rule> {
        use proptest::prelude::*;
        let tag = prop_oneof![Just(TagMatch::Any), Just(TagMatch::Untagged), (0u32..3).prop_map(|t| TagMatch::Is(Tag(t)))];
        let out = prop_oneof![proptest::sample::select(outs).prop_map(PortId::Port), Just(W), Just(PortId::Drop)];
        (0u64..20, 0u64..20, tag, -2i64..3, proptest::option::of(0u32..3), out).prop_map(|(a, b, tag, priority, set, out)| Rule {
            flows: FlowSet::interval(a.min(b), a.max(b)),
            tag,
            priority,
            action: Action { set_tag: set.map(Tag), out },
            origin: RuleOrigin::default(),
        })
    }

    proptest::proptest! {
        #[test]
        fn every_packet_reaches_a_sink(
            at1 in proptest::collection::vec(arb_rule(&[3]), 0..4),
            at3 in proptest::collection::vec(arb_rule(&[4]), 0..4),
            at4 in proptest::collection::vec(arb_rule(&[3]), 0..3),
            flows in proptest::collection::vec((0u64..25, proptest::bool::ANY), 1..12),
        ) {
            let mut dp = net(PortMode::Atomic);
            // rules to a non-successor are rejected; keep the valid ones
            for (p, rules) in [(1, at1), (3, at3), (4, at4)] {
                for r in rules {
                    let _ = dp.preinstall(p.into(), [r]);
                }
            }
            for (flow, second) in &flows {
                let pk = dp.new_packet(*flow);
                dp.inject(pk, if *second { 2.into() } else { 1.into() }).unwrap();
            }
            let mut exits = 0;
            for _ in 0..flows.len() * 4 {
                let Some(p) = dp.busy_ports().next() else { break };
                let f = dp.forward_step(p).unwrap();
                let chosen = select_rule(dp.rules(p), &f.before);
                proptest::prop_assert_eq!(chosen.map(|r| r.action.out).unwrap_or(PortId::Drop), f.to);
                if let Some(r) = chosen {
                    let best = dp.rules(p).iter().filter(|x| x.matches(&f.before)).map(|x| x.priority).max();
                    proptest::prop_assert_eq!(Some(r.priority), best);
                }
                exits += usize::from(f.terminated());
            }
            proptest::prop_assert_eq!(dp.in_flight(), 0);
            proptest::prop_assert_eq!(exits, flows.len());
        }
    }
}
