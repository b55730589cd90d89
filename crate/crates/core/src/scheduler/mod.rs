//! The scheduler: sole owner of global state. It interleaves injects, forwards,
//! message deliveries, controller steps and crashes, one event per step, either
//! by seeded age-weighted random choice or by following a script.

pub mod events;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use events::{Event, EventKind, EventLog, LogHeader};

use crate::controller::{Controller, ControllerId, Effect, MsgBody, Outcome, RequestId, Shared, View};
use crate::dataplane::{DataPlane, Tag};
use crate::error::{ScenarioError, SimError};
use crate::fixtag::{FixTagController, PathCatalog};
use crate::policy::PolicyId;
use crate::psm::PolicySerializer;
use crate::reusetag::{initial_rules, ReuseTagController};
use crate::scenario::{Cond, Directive, Prepared, ProtocolConfig, Schedule, DEFAULT_SEGMENT_CAP};
use crate::topology::PortId;

/// One schedulable action. The derived order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Crash(ControllerId),
    Invoke(usize),
    Inject(usize),
    Forward(PortId),
    Deliver(u64),
    Step(ControllerId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimOutcome {
    /// No action is enabled.
    Quiescent,
    /// The global step cap was reached.
    StepCap { steps: u64 },
    /// A scripted segment could not reach its condition.
    Stalled { directive: usize, reason: String },
    /// An enabled action waited longer than the fairness bound.
    Unfair { action: String, age: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestStats {
    pub request: RequestId,
    pub controller: ControllerId,
    pub policy: PolicyId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invoked_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responded_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    /// Steps of the issuing controller from invocation to response.
    pub local_steps: u64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub log: EventLog,
    pub outcome: SimOutcome,
    pub requests: Vec<RequestStats>,
    pub crashed: BTreeSet<ControllerId>,
    /// Global steps during which a controller had an outstanding request but
    /// no step to take.
    pub wait_steps: BTreeMap<ControllerId, u64>,
    pub max_age: u64,
    pub messages_sent: u64,
    pub dataplane: DataPlane,
    /// Own-step bound from invocation to response (FixTag only).
    pub step_bound: Option<usize>,
}

impl SimResult {
    /// Requests of never-crashed controllers that were invoked but not answered.
    pub fn unanswered(&self) -> Vec<RequestId> {
        self.requests
            .iter()
            .filter(|r| r.invoked_at.is_some() && r.outcome.is_none() && !self.crashed.contains(&r.controller))
            .map(|r| r.request)
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Filter {
    /// Everything except frozen controllers.
    All,
    /// Script `run`: no workload actions, no frozen controllers.
    Segment,
    Ctrl(ControllerId),
    Forwards,
}

struct Message {
    from: ControllerId,
    to: ControllerId,
    body: MsgBody,
}

pub struct Simulation {
    prepared: Prepared,
    dp: DataPlane,
    ps: Option<PolicySerializer>,
    ctrls: BTreeMap<ControllerId, Box<dyn Controller>>,
    rng: ChaCha8Rng,
    header: LogHeader,
    events: Vec<Event>,
    crashed: BTreeSet<ControllerId>,
    frozen: BTreeSet<ControllerId>,
    local_steps: BTreeMap<ControllerId, u64>,
    triggers: BTreeMap<ControllerId, (Option<u64>, Option<u64>)>,
    pending: BTreeMap<ControllerId, VecDeque<usize>>,
    current: BTreeMap<ControllerId, usize>,
    requests: Vec<RequestStats>,
    inject_done: Vec<bool>,
    messages: BTreeMap<u64, Message>,
    next_msg: u64,
    ages: BTreeMap<Action, u64>,
    max_age: u64,
    wait_steps: BTreeMap<ControllerId, u64>,
    step_bound: Option<usize>,
}

impl Simulation {
    pub fn new(prepared: Prepared) -> Result<Simulation, ScenarioError> {
        let sc = prepared.scenario.clone();
        let topo = prepared.topology.clone();
        let mut dp = DataPlane::new(topo.clone(), sc.port_mode);
        let ids = prepared.controllers.clone();
        let mut ctrls: BTreeMap<ControllerId, Box<dyn Controller>> = BTreeMap::new();
        let mut ps = None;
        let mut initial_tags = BTreeSet::new();
        let mut catalog_size = None;
        let mut step_bound = None;
        let invalid = |m: String| ScenarioError::Invalid(vec![m]);

        match &sc.protocol {
            ProtocolConfig::Fixtag { catalog_cap } => {
                let catalog = Arc::new(PathCatalog::build(&topo, *catalog_cap).map_err(|e| invalid(e.to_string()))?);
                for (port, rules) in catalog.internal_rules() {
                    dp.preinstall(port, rules).map_err(|e| invalid(e.to_string()))?;
                }
                if !prepared.initial.domain.is_empty() {
                    for j in topo.ingress() {
                        let r = catalog.ingress_rule(&prepared.initial, j);
                        initial_tags.extend(r.tags());
                        dp.preinstall(j, [r]).map_err(|e| invalid(e.to_string()))?;
                    }
                }
                catalog_size = Some(catalog.len());
                step_bound = Some(FixTagController::step_bound(ids.len(), topo.ingress().count(), sc.port_mode));
                for &c in &ids {
                    ctrls.insert(c, Box::new(FixTagController::new(c, &ids, &topo, catalog.clone(), sc.port_mode)));
                }
            }
            ProtocolConfig::Reusetag { catchup_broadcast, .. } => {
                let rules = initial_rules(&prepared.initial, &topo).map_err(|d| invalid(format!("{d:?}")))?;
                for (port, rs) in rules {
                    initial_tags.extend(rs.iter().flat_map(|r| r.tags()));
                    dp.preinstall(port, rs).map_err(|e| invalid(e.to_string()))?;
                }
                let budget = prepared.tag_budget().expect("reusetag has a budget");
                ps = Some(PolicySerializer::new(budget, Some(prepared.initial.clone())));
                for &c in &ids {
                    let ctrl = ReuseTagController::new(c, &ids, &topo, &prepared.initial, *catchup_broadcast)
                        .map_err(|d| invalid(format!("{d:?}")))?;
                    ctrls.insert(c, Box::new(ctrl));
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed());
        let mut triggers: BTreeMap<ControllerId, (Option<u64>, Option<u64>)> =
            sc.faults.crashes.iter().map(|c| (c.controller, (c.at_step, c.after_steps))).collect();
        if let Some(r) = &sc.faults.random {
            let count = rng.gen_range(0..=r.max) as usize;
            let mut pool: Vec<ControllerId> = ids.iter().copied().filter(|c| !triggers.contains_key(c)).collect();
            pool.shuffle(&mut rng);
            for c in pool.into_iter().take(count) {
                let after = rng.gen_range(0..r.window.max(1));
                triggers.insert(c, (None, Some(after)));
            }
        }

        let mut pending: BTreeMap<ControllerId, VecDeque<usize>> = BTreeMap::new();
        let requests = sc
            .requests
            .iter()
            .enumerate()
            .map(|(i, r)| {
                pending.entry(r.controller).or_default().push_back(i);
                RequestStats {
                    request: RequestId(i),
                    controller: r.controller,
                    policy: r.policy.clone(),
                    invoked_at: None,
                    responded_at: None,
                    outcome: None,
                    local_steps: 0,
                }
            })
            .collect();

        let header = LogHeader {
            format: events::LOG_FORMAT.into(),
            version: events::LOG_VERSION,
            scenario: sc.name.clone(),
            protocol: sc.protocol.name().into(),
            seed: sc.seed(),
            controllers: sc.controllers,
            f: sc.faults.f,
            tag_budget: prepared.tag_budget(),
            port_mode: sc.port_mode,
            topology: sc.topology.clone(),
            initial_policy: prepared.initial.clone(),
            initial_tags: initial_tags.into_iter().collect(),
            catalog_size,
        };

        Ok(Simulation {
            inject_done: vec![false; sc.injects.len()],
            local_steps: ids.iter().map(|c| (*c, 0)).collect(),
            wait_steps: ids.iter().map(|c| (*c, 0)).collect(),
            prepared,
            dp,
            ps,
            ctrls,
            rng,
            header,
            events: Vec::new(),
            crashed: BTreeSet::new(),
            frozen: BTreeSet::new(),
            triggers,
            pending,
            current: BTreeMap::new(),
            requests,
            messages: BTreeMap::new(),
            next_msg: 0,
            ages: BTreeMap::new(),
            max_age: 0,
            step_bound,
        })
    }

    fn now(&self) -> u64 {
        self.events.len() as u64
    }

    fn record(&mut self, kind: EventKind) {
        let seq = self.now();
        self.events.push(Event { seq, kind });
    }

    fn ctrl_enabled(&self, c: ControllerId) -> bool {
        let view = View { dp: &self.dp, ps: self.ps.as_ref() };
        self.ctrls[&c].enabled(&view)
    }

    fn live(&self, c: ControllerId) -> bool {
        !self.crashed.contains(&c)
    }

    fn due_crash(&self) -> Option<ControllerId> {
        let now = self.now();
        self.triggers.iter().find_map(|(c, (at, after))| {
            let due = at.is_some_and(|s| now >= s) || after.is_some_and(|n| self.local_steps[c] >= n);
            (due && self.live(*c)).then_some(*c)
        })
    }

    fn invocable(&self, i: usize) -> bool {
        let spec = &self.prepared.scenario.requests[i];
        let c = spec.controller;
        self.live(c)
            && !self.current.contains_key(&c)
            && self.pending.get(&c).and_then(|q| q.front()) == Some(&i)
    }

    fn enabled(&self, filter: Filter) -> Vec<Action> {
        let now = self.now();
        let sc = &self.prepared.scenario;
        let mut out = Vec::new();
        let workload = filter == Filter::All;
        if workload {
            for (i, r) in sc.requests.iter().enumerate() {
                if r.earliest_step <= now && self.invocable(i) && !self.frozen.contains(&r.controller) {
                    out.push(Action::Invoke(i));
                }
            }
            for (i, inj) in sc.injects.iter().enumerate() {
                if !self.inject_done[i] && inj.earliest_step <= now {
                    out.push(Action::Inject(i));
                }
            }
        }
        if matches!(filter, Filter::All | Filter::Segment | Filter::Forwards) {
            out.extend(self.dp.busy_ports().map(Action::Forward));
        }
        if matches!(filter, Filter::All | Filter::Segment) {
            for (id, m) in &self.messages {
                if self.live(m.to) && !self.frozen.contains(&m.to) {
                    out.push(Action::Deliver(*id));
                }
            }
            for &c in self.ctrls.keys() {
                if self.live(c) && !self.frozen.contains(&c) && self.ctrl_enabled(c) {
                    out.push(Action::Step(c));
                }
            }
        }
        if let Filter::Ctrl(c) = filter {
            if self.live(c) && self.ctrl_enabled(c) {
                out.push(Action::Step(c));
            }
        }
        out
    }

    fn count_waiting(&mut self) {
        let waiting: Vec<ControllerId> = self
            .current
            .keys()
            .copied()
            .filter(|c| self.live(*c) && !self.ctrl_enabled(*c))
            .collect();
        for c in waiting {
            *self.wait_steps.get_mut(&c).expect("known controller") += 1;
        }
    }

    fn apply(&mut self, action: Action) -> Result<(), SimError> {
        self.count_waiting();
        match action {
            Action::Crash(c) => {
                self.crashed.insert(c);
                self.record(EventKind::Crash { ctrl: c });
            }
            Action::Invoke(i) => {
                let spec = self.prepared.scenario.requests[i].clone();
                let policy = self.prepared.policies[&spec.policy].clone();
                let c = spec.controller;
                self.pending.get_mut(&c).expect("queued").pop_front();
                self.current.insert(c, i);
                self.requests[i].invoked_at = Some(self.now());
                self.ctrls.get_mut(&c).expect("known").invoke(RequestId(i), policy.clone());
                self.record(EventKind::Invoke { ctrl: c, request: RequestId(i), policy });
            }
            Action::Inject(i) => {
                let spec = self.prepared.scenario.injects[i].clone();
                let pk = self.dp.new_packet(spec.flow);
                self.dp.inject(pk, spec.port)?;
                self.inject_done[i] = true;
                self.record(EventKind::Inject { uid: pk.uid, flow: spec.flow, port: spec.port, workload: i });
            }
            Action::Forward(p) => {
                let f = self.dp.forward_step(p)?;
                self.record(EventKind::Forward {
                    uid: f.before.uid,
                    from: f.from,
                    to: f.to,
                    tag_before: f.before.tag,
                    tag_after: f.after.tag,
                    rule: f.rule,
                });
            }
            Action::Deliver(id) => {
                let m = self.messages.remove(&id).expect("pending message");
                self.ctrls.get_mut(&m.to).expect("known").deliver(m.from, &m.body);
                self.record(EventKind::MsgDeliver { msg: id, from: m.from, to: m.to });
            }
            Action::Step(c) => {
                *self.local_steps.get_mut(&c).expect("known") += 1;
                if let Some(&r) = self.current.get(&c) {
                    self.requests[r].local_steps += 1;
                }
                let mut shared = Shared { dp: &mut self.dp, ps: self.ps.as_mut() };
                let effect = self.ctrls.get_mut(&c).expect("known").step(&mut shared)?;
                let kind = match effect {
                    Effect::PortOp(record) => EventKind::PortOp { ctrl: c, record },
                    Effect::Ps(op) => EventKind::from_ps(op),
                    Effect::Send { to, body } => {
                        let msg = self.next_msg;
                        self.next_msg += 1;
                        self.messages.insert(msg, Message { from: c, to, body: body.clone() });
                        EventKind::MsgSend { msg, from: c, to, body }
                    }
                    Effect::Oracle { tags, open } => {
                        EventKind::OracleQuery { ctrl: c, tags: tags.into_iter().collect::<Vec<Tag>>(), open }
                    }
                    Effect::Respond { request, outcome } => {
                        self.current.remove(&c);
                        let st = &mut self.requests[request.0];
                        st.responded_at = Some(self.events.len() as u64);
                        st.outcome = Some(outcome);
                        EventKind::Response { ctrl: c, request, outcome }
                    }
                };
                self.record(kind);
            }
        }
        Ok(())
    }

    /// Applies a due crash, if any. Returns whether a step was taken.
    fn crash_if_due(&mut self) -> Result<bool, SimError> {
        match self.due_crash() {
            Some(c) => {
                self.apply(Action::Crash(c))?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn random_fair(&mut self) -> Result<SimOutcome, SimError> {
        let cap = self.prepared.scenario.step_cap;
        let bound = self.prepared.scenario.fairness_bound;
        self.ages.clear();
        loop {
            if self.now() >= cap {
                return Ok(SimOutcome::StepCap { steps: self.now() });
            }
            if self.crash_if_due()? {
                continue;
            }
            let acts = self.enabled(Filter::All);
            if acts.is_empty() {
                return Ok(SimOutcome::Quiescent);
            }
            let now = self.now();
            let mut ages = BTreeMap::new();
            let mut total = 0u64;
            for a in &acts {
                let since = self.ages.get(a).copied().unwrap_or(now);
                let age = now - since;
                if age > bound {
                    return Ok(SimOutcome::Unfair { action: format!("{a:?}"), age });
                }
                self.max_age = self.max_age.max(age);
                total += 1 + age;
                ages.insert(*a, since);
            }
            let mut pick = self.rng.gen_range(0..total);
            let mut chosen = acts[0];
            for a in &acts {
                let w = 1 + (now - ages[a]);
                if pick < w {
                    chosen = *a;
                    break;
                }
                pick -= w;
            }
            ages.remove(&chosen);
            self.ages = ages;
            self.apply(chosen)?;
        }
    }

    fn counts_toward(e: &Event, ctrl: Option<ControllerId>, policy: &Option<PolicyId>, ingress_only: bool) -> bool {
        match &e.kind {
            EventKind::PortOp { ctrl: c, record } => {
                ctrl.is_none_or(|x| x == *c)
                    && (!ingress_only || record.ingress)
                    && policy.as_ref().is_none_or(|p| record.policy.as_ref() == Some(p))
            }
            _ => false,
        }
    }

    /// Whether `cond` holds; `seen` is the number of matching port operations
    /// among the events before `*scanned`, and both are brought up to date.
    fn cond_met(&self, cond: &Cond, ctrl: Option<ControllerId>, scanned: &mut usize, seen: &mut u64) -> bool {
        match cond {
            Cond::Quiescent => false,
            Cond::Responded { request } => self.requests[*request].outcome.is_some(),
            Cond::PortOps { policy, ingress_only, count } => {
                let new = &self.events[*scanned..];
                *seen += new.iter().filter(|e| Self::counts_toward(e, ctrl, policy, *ingress_only)).count() as u64;
                *scanned = self.events.len();
                *seen >= *count
            }
        }
    }

    fn segment(&mut self, idx: usize, filter: Filter, cond: Option<&Cond>, max: u64) -> Result<Option<SimOutcome>, SimError> {
        let start = self.events.len();
        let ctrl = match filter {
            Filter::Ctrl(c) => Some(c),
            _ => None,
        };
        let mut taken = 0u64;
        let (mut scanned, mut seen) = (start, 0u64);
        loop {
            if cond.is_some_and(|c| self.cond_met(c, ctrl, &mut scanned, &mut seen)) {
                return Ok(None);
            }
            if self.now() >= self.prepared.scenario.step_cap {
                return Ok(Some(SimOutcome::StepCap { steps: self.now() }));
            }
            if taken >= max {
                return Ok(Some(SimOutcome::Stalled {
                    directive: idx,
                    reason: format!("condition not reached within {max} steps"),
                }));
            }
            if self.crash_if_due()? {
                taken += 1;
                continue;
            }
            let acts = self.enabled(filter);
            if acts.is_empty() {
                return Ok(match cond {
                    None | Some(Cond::Quiescent) => None,
                    Some(_) => Some(SimOutcome::Stalled {
                        directive: idx,
                        reason: "nothing left to schedule before the condition holds".into(),
                    }),
                });
            }
            let a = *acts.choose(&mut self.rng).expect("non-empty");
            self.apply(a)?;
            taken += 1;
        }
    }

    fn scripted(&mut self, script: &[Directive]) -> Result<Option<SimOutcome>, SimError> {
        for (i, d) in script.iter().enumerate() {
            let not_enabled = |reason: String| SimError::ScriptStepNotEnabled { index: i, step: format!("{d:?}"), reason };
            let stop = match d {
                Directive::Invoke { request } => {
                    if !self.invocable(*request) {
                        let c = self.prepared.scenario.requests[*request].controller;
                        return Err(not_enabled(format!("{c} is crashed, busy or has earlier requests pending")));
                    }
                    self.apply(Action::Invoke(*request))?;
                    None
                }
                Directive::Inject { inject } => {
                    if self.inject_done[*inject] {
                        return Err(not_enabled("inject already performed".into()));
                    }
                    self.apply(Action::Inject(*inject))?;
                    None
                }
                Directive::Freeze { ctrl } => {
                    self.frozen.insert(*ctrl);
                    self.record(EventKind::Freeze { ctrl: *ctrl });
                    None
                }
                Directive::Release { ctrl } => {
                    self.frozen.remove(ctrl);
                    self.record(EventKind::Release { ctrl: *ctrl });
                    None
                }
                Directive::Crash { ctrl } => {
                    if !self.live(*ctrl) {
                        return Err(not_enabled(format!("{ctrl} already crashed")));
                    }
                    self.apply(Action::Crash(*ctrl))?;
                    None
                }
                Directive::RunCtrl { ctrl, until, max_steps } => {
                    let cond = (*until != Cond::Quiescent).then_some(until);
                    self.segment(i, Filter::Ctrl(*ctrl), cond, max_steps.unwrap_or(DEFAULT_SEGMENT_CAP))?
                }
                Directive::Run { until, max_steps } => {
                    let cond = (*until != Cond::Quiescent).then_some(until);
                    self.segment(i, Filter::Segment, cond, max_steps.unwrap_or(DEFAULT_SEGMENT_CAP))?
                }
                Directive::Drain { max_steps } => {
                    self.segment(i, Filter::Forwards, None, max_steps.unwrap_or(DEFAULT_SEGMENT_CAP))?
                }
            };
            if stop.is_some() {
                return Ok(stop);
            }
        }
        Ok(None)
    }

    pub fn run(mut self) -> Result<SimResult, SimError> {
        let outcome = match self.prepared.scenario.schedule.clone() {
            Schedule::RandomFair { .. } => self.random_fair()?,
            Schedule::Scripted { script, .. } => match self.scripted(&script)? {
                Some(o) => o,
                None => self.random_fair()?,
            },
        };
        Ok(SimResult {
            log: EventLog { header: self.header, events: self.events },
            outcome,
            requests: self.requests,
            crashed: self.crashed,
            wait_steps: self.wait_steps,
            max_age: self.max_age,
            messages_sent: self.next_msg,
            dataplane: self.dp,
            step_bound: self.step_bound,
        })
    }
}

/// Validates, simulates and returns the result.
pub fn simulate(prepared: Prepared) -> Result<SimResult, crate::error::Error> {
    Ok(Simulation::new(prepared)?.run()?)
}
