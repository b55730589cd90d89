//! Random small histories for exercising the checker.
//!
//! Histories are built directly, without a data plane: each request gets its
//! own controller, and each trace is the path some plausible committed prefix
//! would give, occasionally swapped for a wrong one.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{History, Hop, InjectRecord, RequestRecord, Trace};
use crate::controller::{ControllerId, Outcome, RequestId};
use crate::dataplane::PacketUid;
use crate::policy::{self, FlowSet, Policy};
use crate::topology::PortId;

#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    pub max_requests: usize,
    pub max_injects: usize,
    /// Chance that a recorded outcome or trace is deliberately wrong.
    pub noise: f64,
    /// Chance that a request never receives a response.
    pub pending: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { max_requests: 4, max_injects: 6, noise: 0.15, pending: 0.2 }
    }
}

const INGRESS: [u32; 2] = [1, 2];
const FLOWS: u64 = 40;

fn path(k: u32, j: u32) -> Vec<PortId> {
    if k == 0 {
        vec![PortId::Port(j), PortId::World]
    } else {
        vec![PortId::Port(j), PortId::Port(10 * k + j), PortId::World]
    }
}

pub fn initial() -> Policy {
    INGRESS.iter().fold(Policy::new("pi0", 0, FlowSet::interval(0, FLOWS - 1)), |p, j| p.with_path(path(0, *j)))
}

pub fn random_history<R: Rng>(rng: &mut R, cfg: SampleConfig) -> History {
    let nr = rng.gen_range(0..=cfg.max_requests);
    let ni = rng.gen_range(0..=cfg.max_injects);

    let mut policies = Vec::new();
    for k in 1..=nr as u32 {
        let lo = rng.gen_range(0..FLOWS);
        let hi = (lo + rng.gen_range(0..15)).min(FLOWS - 1);
        let mut p = Policy::new(format!("p{k}").as_str(), rng.gen_range(1..=2), FlowSet::interval(lo, hi));
        for j in INGRESS {
            if rng.gen_bool(0.9) {
                p = p.with_path(path(k, j));
            }
        }
        policies.push(p);
    }

    // Each request is an interval on a shared clock; injects are instants.
    let mut marks: Vec<(u64, usize, Mark)> = Vec::new();
    let mut spans = Vec::new();
    for r in 0..nr {
        let a = rng.gen_range(0..100);
        let b = (!rng.gen_bool(cfg.pending)).then(|| a + rng.gen_range(1..40));
        spans.push((a, b));
        marks.push((a, marks.len(), Mark::Invoke(r)));
        if let Some(b) = b {
            marks.push((b, marks.len(), Mark::Respond(r)));
        }
    }
    for i in 0..ni {
        let t = rng.gen_range(0..140);
        marks.push((t, marks.len(), Mark::Inject(i)));
        // some packets wait in the ingress queue for a while
        let wait = if rng.gen_bool(0.3) { rng.gen_range(0..30) } else { 0 };
        marks.push((t + wait, marks.len(), Mark::Process(i)));
    }
    marks.sort();

    // Outcomes follow invocation order, then a few are flipped.
    let mut by_invoke: Vec<usize> = (0..nr).collect();
    by_invoke.sort_by_key(|r| spans[*r].0);
    let mut natural = vec![Outcome::Nack; nr];
    let mut committed: Vec<&Policy> = Vec::new();
    for r in by_invoke {
        if !policy::conflicts_with_any(&policies[r], committed.iter().copied()) {
            natural[r] = Outcome::Ack;
            committed.push(&policies[r]);
        }
    }

    let pi0 = initial();
    let mut h = History { initial: pi0.clone(), requests: Vec::new(), injects: Vec::new(), traces: Vec::new() };
    let mut seq_of = vec![(0u64, None); nr];
    for (seq, (t, _, m)) in marks.iter().enumerate() {
        let seq = seq as u64;
        match *m {
            Mark::Invoke(r) => seq_of[r].0 = seq,
            Mark::Respond(r) => {
                let mut o = natural[r];
                if rng.gen_bool(cfg.noise) {
                    o = if o == Outcome::Ack { Outcome::Nack } else { Outcome::Ack };
                }
                seq_of[r].1 = Some((seq, o));
            }
            Mark::Inject(i) => {
                let flow = rng.gen_range(0..FLOWS);
                let j = *INGRESS.choose(rng).expect("non-empty");
                let uid = PacketUid(i as u64);
                h.injects.push(InjectRecord { uid, flow, port: PortId::Port(j), at: seq, processed: None });
                h.traces.push(Trace { uid, hops: Vec::new(), terminated: false });
            }
            Mark::Process(i) => {
                let k = h.injects.iter().position(|x| x.uid.0 == i as u64).expect("injected first");
                let (flow, j) = (h.injects[k].flow, h.injects[k].port);
                h.injects[k].processed = Some(seq);
                // requests finished by now are in; running ones maybe
                let mut set: Vec<&Policy> = vec![&pi0];
                for r in 0..nr {
                    if natural[r] == Outcome::Ack {
                        let done = seq_of[r].1.is_some();
                        let started = spans[r].0 <= *t;
                        if done || (started && rng.gen_bool(0.5)) {
                            set.push(&policies[r]);
                        }
                    }
                }
                let mut ports = policy::expected_path(&set, flow, j);
                if rng.gen_bool(cfg.noise) {
                    let PortId::Port(jn) = j else { unreachable!() };
                    ports = path(rng.gen_range(0..=nr as u32), jn);
                }
                let mut terminated = true;
                if rng.gen_bool(0.1) && ports.len() > 1 {
                    ports.pop();
                    terminated = false;
                }
                h.traces[k] = Trace { uid: h.injects[k].uid, hops: ports.into_iter().map(|port| Hop { port, tag: None }).collect(), terminated };
            }
        }
    }
    for r in 0..nr {
        h.requests.push(RequestRecord {
            id: RequestId(r),
            ctrl: ControllerId(r as u32 + 1),
            policy: policies[r].clone(),
            invoked: seq_of[r].0,
            response: seq_of[r].1,
        });
    }
    h.requests.sort_by_key(|q| q.invoked);
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Mark {
    Invoke(usize),
    Respond(usize),
    Inject(usize),
    Process(usize),
}
