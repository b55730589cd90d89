use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{is_legal, precedes, trace_consistent, History, Item, SeqEntry, TagStats};
use crate::controller::{ControllerId, Outcome, RequestId};
use crate::dataplane::PacketUid;
use crate::policy::{self, Policy, PolicyId};
use crate::topology::PortId;

pub const DEFAULT_MAX_REQUESTS: usize = 7;
pub const DEFAULT_MAX_INJECTS: usize = 10;

/// Beyond these sizes the checker answers `Undecided` instead of searching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_requests: usize,
    pub max_injects: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_requests: DEFAULT_MAX_REQUESTS, max_injects: DEFAULT_MAX_INJECTS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Composable,
    NotComposable,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum WitnessEntry {
    Request {
        request: RequestId,
        ctrl: ControllerId,
        policy: PolicyId,
        outcome: Outcome,
        /// False when the response was supplied by the completion.
        completed: bool,
        event: u64,
    },
    Inject {
        uid: PacketUid,
        flow: u64,
        port: PortId,
        event: u64,
    },
}

/// Why the search failed, taken from the furthest point it reached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Trace {
        uid: PacketUid,
        flow: u64,
        port: PortId,
        trace: Vec<PortId>,
        terminated: bool,
        committed: Vec<PolicyId>,
        expected: Vec<PortId>,
    },
    Outcome {
        request: RequestId,
        policy: PolicyId,
        outcome: Outcome,
        committed: Vec<PolicyId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    pub composable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<WitnessEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub tags: TagStats,
}

impl Verdict {
    fn undecided(reason: String) -> Verdict {
        Verdict {
            verdict: VerdictKind::Undecided,
            composable: false,
            witness: None,
            violation: None,
            reason: Some(reason),
            tags: TagStats::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct State {
    req: u64,
    com: u64,
    inj: u64,
}

struct Search<'a> {
    h: &'a History,
    req_preds: Vec<(u64, u64)>,
    inj_preds: Vec<(u64, u64)>,
    failed: HashSet<State>,
    consistent: HashMap<(usize, u64), bool>,
    deepest: Option<(u32, State)>,
}

fn masks(h: &History, y: Item) -> (u64, u64) {
    let req = (0..h.requests.len()).filter(|r| precedes(h, Item::Request(*r), y)).fold(0, |m, r| m | 1 << r);
    let inj = (0..h.injects.len()).filter(|i| precedes(h, Item::Inject(*i), y)).fold(0, |m, i| m | 1 << i);
    (req, inj)
}

impl<'a> Search<'a> {
    fn new(h: &'a History) -> Self {
        Search {
            h,
            req_preds: (0..h.requests.len()).map(|r| masks(h, Item::Request(r))).collect(),
            inj_preds: (0..h.injects.len()).map(|i| masks(h, Item::Inject(i))).collect(),
            failed: HashSet::new(),
            consistent: HashMap::new(),
            deepest: None,
        }
    }

    fn committed(&self, com: u64) -> Vec<&'a Policy> {
        let h = self.h;
        std::iter::once(&h.initial)
            .chain((0..h.requests.len()).filter(|r| com >> r & 1 == 1).map(|r| &h.requests[r].policy))
            .collect()
    }

    fn ready(&self, (req, inj): (u64, u64), s: State) -> bool {
        req & !s.req == 0 && inj & !s.inj == 0
    }

    fn consistent(&mut self, i: usize, com: u64) -> bool {
        if let Some(v) = self.consistent.get(&(i, com)) {
            return *v;
        }
        let (inj, t) = (&self.h.injects[i], &self.h.traces[i]);
        let expected = policy::expected_path(&self.committed(com), inj.flow, inj.port);
        let v = trace_consistent(&t.ports(), t.terminated, &expected);
        self.consistent.insert((i, com), v);
        v
    }

    /// Places every inject that can go now. Injects leave the state unchanged,
    /// so placing one as early as possible never loses a witness.
    fn settle(&mut self, mut s: State, path: &mut Vec<Item>) -> State {
        loop {
            let next = (0..self.h.injects.len())
                .find(|i| s.inj >> i & 1 == 0 && self.ready(self.inj_preds[*i], s) && self.consistent(*i, s.com));
            match next {
                Some(i) => {
                    s.inj |= 1 << i;
                    path.push(Item::Inject(i));
                }
                None => return s,
            }
        }
    }

    fn fits(&self, r: usize, com: u64) -> bool {
        !policy::conflicts_with_any(&self.h.requests[r].policy, self.committed(com))
    }

    fn dfs(&mut self, s: State, path: &mut Vec<Item>) -> bool {
        let mark = path.len();
        let s = self.settle(s, path);
        let (nr, ni) = (self.h.requests.len(), self.h.injects.len());
        let done = (s.req.count_ones() + s.inj.count_ones()) as usize;
        if done == nr + ni {
            return true;
        }
        if self.failed.contains(&s) {
            path.truncate(mark);
            return false;
        }
        if self.deepest.is_none_or(|(d, _)| (done as u32) > d) {
            self.deepest = Some((done as u32, s));
        }
        for r in 0..nr {
            if s.req >> r & 1 == 1 || !self.ready(self.req_preds[r], s) {
                continue;
            }
            let fits = self.fits(r, s.com);
            if let Some((_, outcome)) = self.h.requests[r].response {
                if fits != (outcome == Outcome::Ack) {
                    continue;
                }
            }
            let next = State { req: s.req | 1 << r, com: if fits { s.com | 1 << r } else { s.com }, inj: s.inj };
            path.push(Item::Request(r));
            if self.dfs(next, path) {
                return true;
            }
            path.pop();
        }
        self.failed.insert(s);
        path.truncate(mark);
        false
    }

    fn ids(&self, com: u64) -> Vec<PolicyId> {
        self.committed(com).iter().map(|p| p.id.clone()).collect()
    }

    fn violation(&mut self) -> Option<Violation> {
        let (_, s) = self.deepest?;
        let h = self.h;
        let mut pending: Vec<usize> = (0..h.injects.len()).filter(|i| s.inj >> i & 1 == 0).collect();
        pending.sort_by_key(|i| h.injects[*i].at);
        let blocked = pending.iter().copied().find(|i| self.ready(self.inj_preds[*i], s) && !self.consistent(*i, s.com));
        if let Some(i) = blocked {
            let (inj, t) = (&h.injects[i], &h.traces[i]);
            return Some(Violation::Trace {
                uid: inj.uid,
                flow: inj.flow,
                port: inj.port,
                trace: t.ports(),
                terminated: t.terminated,
                committed: self.ids(s.com),
                expected: policy::expected_path(&self.committed(s.com), inj.flow, inj.port),
            });
        }
        (0..h.requests.len()).find(|r| s.req >> r & 1 == 0 && self.ready(self.req_preds[*r], s)).and_then(|r| {
            let (_, outcome) = h.requests[r].response?;
            Some(Violation::Outcome {
                request: h.requests[r].id,
                policy: h.requests[r].policy.id.clone(),
                outcome,
                committed: self.ids(s.com),
            })
        })
    }
}

/// Turns a search path into witness entries, deciding each request's outcome
/// by the legality rule at its position.
fn witness(h: &History, path: &[Item]) -> (Vec<WitnessEntry>, Vec<SeqEntry>) {
    let mut committed: Vec<&Policy> = vec![&h.initial];
    let mut w = Vec::new();
    let mut seq = Vec::new();
    for x in path {
        match *x {
            Item::Request(r) => {
                let q = &h.requests[r];
                let ack = !policy::conflicts_with_any(&q.policy, committed.iter().copied());
                if ack {
                    committed.push(&q.policy);
                }
                let outcome = if ack { Outcome::Ack } else { Outcome::Nack };
                w.push(WitnessEntry::Request {
                    request: q.id,
                    ctrl: q.ctrl,
                    policy: q.policy.id.clone(),
                    outcome,
                    completed: q.response.is_some(),
                    event: q.invoked,
                });
                seq.push(SeqEntry::Request { policy: q.policy.clone(), outcome });
            }
            Item::Inject(i) => {
                let (inj, t) = (&h.injects[i], &h.traces[i]);
                w.push(WitnessEntry::Inject { uid: inj.uid, flow: inj.flow, port: inj.port, event: inj.at });
                seq.push(SeqEntry::Inject { flow: inj.flow, port: inj.port, trace: t.ports(), terminated: t.terminated });
            }
        }
    }
    (w, seq)
}

/// Independent check of a witness: legal, a linear extension of real-time
/// precedence, and faithful to every recorded response.
fn reverify(h: &History, path: &[Item], seq: &[SeqEntry]) -> bool {
    let n = h.requests.len() + h.injects.len();
    if path.len() != n || path.iter().collect::<HashSet<_>>().len() != n {
        return false;
    }
    for (a, x) in path.iter().enumerate() {
        if path[a + 1..].iter().any(|y| precedes(h, *y, *x)) {
            return false;
        }
    }
    let answered = path.iter().zip(seq).all(|(x, e)| match (x, e) {
        (Item::Request(r), SeqEntry::Request { outcome, .. }) => h.requests[*r].response.is_none_or(|(_, o)| o == *outcome),
        _ => true,
    });
    answered && is_legal(&h.initial, seq)
}

/// Searches for a legal sequential history equivalent to a completion of `h`
/// that respects its real-time order.
pub fn sequentially_composable(h: &History, limits: Limits) -> Verdict {
    let (nr, ni) = (h.requests.len(), h.injects.len());
    if nr > limits.max_requests.min(64) || ni > limits.max_injects.min(64) {
        return Verdict::undecided(format!(
            "{nr} requests and {ni} injects exceed the search limits of {} and {}",
            limits.max_requests, limits.max_injects
        ));
    }
    let mut search = Search::new(h);
    let mut path = Vec::new();
    if search.dfs(State { req: 0, com: 0, inj: 0 }, &mut path) {
        let (w, seq) = witness(h, &path);
        if !reverify(h, &path, &seq) {
            return Verdict::undecided("witness failed re-verification".into());
        }
        return Verdict {
            verdict: VerdictKind::Composable,
            composable: true,
            witness: Some(w),
            violation: None,
            reason: None,
            tags: TagStats::default(),
        };
    }
    Verdict {
        verdict: VerdictKind::NotComposable,
        composable: false,
        witness: None,
        violation: search.violation(),
        reason: None,
        tags: TagStats::default(),
    }
}
