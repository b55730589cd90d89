//! Policy Serialization: the replicated state machine that orders policy
//! updates and hands out tags.
//!
//! It is modelled as one linearizable object owned by the scheduler. Every
//! `push`/`pull` is a single scheduler step, so the operation log *is* the
//! linearization.
//!
//! Indexing follows the protocol: `π_0` is the initially installed policy with
//! tag 0, pushes are numbered `π_1, π_2, …`, and a controller that has performed
//! `k − 1` non-trivial pulls asks for `π_k` next.
//!
//! Whether `π_k` commits depends only on `π_0 … π_k`, so it is fixed at push
//! time. A tag is chosen at the first pull that returns an index: the minimal
//! value of `{0, …, budget − 1}` that is neither the tag of the most recent
//! *committed* predecessor nor blocked. A controller blocks the predecessor tag
//! of the last index it pulled until it pulls again (a `⊥` answer counts).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerId;
use crate::dataplane::Tag;
use crate::policy::{conflicts_with_any, Policy, PolicyId};

pub const INITIAL_TAG: Tag = Tag(0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PullResult {
    Bottom,
    Entry { index: usize, policy: Policy, tag: Tag },
}

/// One linearized PS operation, as written to the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PsOp {
    Push {
        ctrl: ControllerId,
        index: usize,
        policy: Policy,
    },
    Pull {
        ctrl: ControllerId,
        /// Index the controller asked for (`k`).
        index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        policy: Option<PolicyId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<Tag>,
        /// Tags blocked by other controllers when the pull linearized.
        blocked: Vec<Tag>,
    },
}

#[derive(Debug, Clone)]
pub struct PolicySerializer {
    budget: u32,
    initial: Option<Policy>,
    pushed: Vec<(ControllerId, Policy)>,
    committed: Vec<bool>,
    tags: Vec<Option<Tag>>,
    cursors: BTreeMap<ControllerId, usize>,
    last_pull: BTreeMap<ControllerId, usize>,
}

impl PolicySerializer {
    /// `budget` is the number of tags available, `f + 2` for the protocol.
    pub fn new(budget: u32, initial: Option<Policy>) -> Self {
        assert!(budget >= 2, "at least two tags are needed to flip");
        PolicySerializer {
            budget,
            initial,
            pushed: Vec::new(),
            committed: Vec::new(),
            tags: Vec::new(),
            cursors: BTreeMap::new(),
            last_pull: BTreeMap::new(),
        }
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn pushes(&self) -> usize {
        self.pushed.len()
    }

    /// Number of non-trivial pulls performed by `i`.
    pub fn cursor(&self, i: ControllerId) -> usize {
        self.cursors.get(&i).copied().unwrap_or(0)
    }

    /// Whether `π_k` commits given everything before it.
    pub fn is_committed(&self, k: usize) -> bool {
        k == 0 || self.committed[k - 1]
    }

    pub fn tag_of(&self, k: usize) -> Option<Tag> {
        if k == 0 {
            Some(INITIAL_TAG)
        } else {
            self.tags.get(k - 1).copied().flatten()
        }
    }

    pub fn push(&mut self, i: ControllerId, policy: Policy) -> PsOp {
        let prior = self
            .initial
            .iter()
            .chain(self.pushed.iter().zip(&self.committed).filter(|(_, c)| **c).map(|((_, p), _)| p));
        let commits = !conflicts_with_any(&policy, prior);
        self.pushed.push((i, policy.clone()));
        self.committed.push(commits);
        self.tags.push(None);
        PsOp::Push { ctrl: i, index: self.pushed.len(), policy }
    }

    /// Tag of the most recent committed policy strictly before `k`.
    pub fn prev_committed_tag(&self, k: usize) -> Tag {
        (1..k)
            .rev()
            .find(|j| self.committed[j - 1])
            .map(|j| self.tags[j - 1].expect("committed predecessors were pulled before k"))
            .unwrap_or(INITIAL_TAG)
    }

    /// Index of the most recent committed policy strictly before `k` (0 for π_0).
    pub fn prev_committed_index(&self, k: usize) -> usize {
        (1..k).rev().find(|j| self.committed[j - 1]).unwrap_or(0)
    }

    /// Tags blocked by controllers other than `except`.
    pub fn blocked_tags(&self, except: Option<ControllerId>) -> BTreeSet<Tag> {
        self.last_pull
            .iter()
            .filter(|(c, _)| Some(**c) != except)
            .map(|(_, m)| self.prev_committed_tag(*m))
            .collect()
    }

    /// Minimal usable tag for `π_k`, given the blocked set.
    pub fn choose_tag(&self, k: usize, blocked: &BTreeSet<Tag>) -> Option<Tag> {
        let prev = self.prev_committed_tag(k);
        (0..self.budget).map(Tag).find(|t| *t != prev && !blocked.contains(t))
    }

    /// Whether a pull by `i` could return an entry right now.
    pub fn has_pending(&self, i: ControllerId) -> bool {
        self.pushed.len() > self.cursor(i)
    }

    pub fn pull(&mut self, i: ControllerId) -> (PullResult, PsOp) {
        let k = self.cursor(i) + 1;
        let blocked = self.blocked_tags(Some(i));
        let mut op = PsOp::Pull { ctrl: i, index: k, policy: None, tag: None, blocked: blocked.iter().copied().collect() };
        // any pull ends the blocking caused by the previous one
        self.last_pull.remove(&i);
        if self.pushed.len() < k {
            return (PullResult::Bottom, op);
        }
        let tag = match self.tags[k - 1] {
            Some(t) => t,
            // an aborted entry installs nothing and never needs a fresh tag
            None if !self.committed[k - 1] => {
                let t = self.prev_committed_tag(k);
                self.tags[k - 1] = Some(t);
                t
            }
            None => match self.choose_tag(k, &blocked) {
                Some(t) => {
                    self.tags[k - 1] = Some(t);
                    t
                }
                None => return (PullResult::Bottom, op),
            },
        };
        self.cursors.insert(i, k);
        self.last_pull.insert(i, k);
        let policy = self.pushed[k - 1].1.clone();
        if let PsOp::Pull { policy: p, tag: t, .. } = &mut op {
            *p = Some(policy.id.clone());
            *t = Some(tag);
        }
        (PullResult::Entry { index: k, policy, tag }, op)
    }
}

/// A mismatch found while replaying a PS operation log against the sequential
/// specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsDiscrepancy {
    pub position: usize,
    pub property: PsProperty,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsProperty {
    Agreement,
    TagValidity,
    NonTriviality,
    TagRange,
}

/// Replays a linearized PS log from scratch and checks every pull answer for
/// Agreement, Tag validity and Non-triviality.
///
/// This deliberately recomputes everything from the raw log rather than
/// reusing [`PolicySerializer`].
pub fn replay(budget: u32, initial: Option<&Policy>, ops: &[PsOp]) -> Vec<PsDiscrepancy> {
    let mut out = Vec::new();
    let mut policies: Vec<&Policy> = Vec::new();
    let mut commits: Vec<bool> = Vec::new();
    let mut committed_set: Vec<&Policy> = initial.into_iter().collect();
    let mut assigned: BTreeMap<usize, (PolicyId, Tag)> = BTreeMap::new();
    let mut nontrivial: BTreeMap<ControllerId, usize> = BTreeMap::new();
    let mut holding: BTreeMap<ControllerId, usize> = BTreeMap::new();

    let prev_tag = |k: usize, commits: &[bool], assigned: &BTreeMap<usize, (PolicyId, Tag)>| -> Option<Tag> {
        let mut j = k;
        while j > 1 {
            j -= 1;
            if commits[j - 1] {
                return assigned.get(&j).map(|(_, t)| *t);
            }
        }
        Some(INITIAL_TAG)
    };

    for (pos, op) in ops.iter().enumerate() {
        match op {
            PsOp::Push { index, policy, .. } => {
                if *index != policies.len() + 1 {
                    out.push(PsDiscrepancy {
                        position: pos,
                        property: PsProperty::Agreement,
                        detail: format!("push numbered {index}, expected {}", policies.len() + 1),
                    });
                }
                let ok = !committed_set.iter().any(|p| crate::policy::conflicts(p, policy));
                if ok {
                    committed_set.push(policy);
                }
                commits.push(ok);
                policies.push(policy);
            }
            PsOp::Pull { ctrl, index, policy, tag, .. } => {
                let k = nontrivial.get(ctrl).copied().unwrap_or(0) + 1;
                let mut blocked = BTreeSet::new();
                for (c, m) in &holding {
                    if c != ctrl {
                        match prev_tag(*m, &commits, &assigned) {
                            Some(t) => {
                                blocked.insert(t);
                            }
                            None => out.push(PsDiscrepancy {
                                position: pos,
                                property: PsProperty::TagValidity,
                                detail: format!("predecessor of index {m} has no tag"),
                            }),
                        }
                    }
                }
                holding.remove(ctrl);
                if *index != k {
                    out.push(PsDiscrepancy {
                        position: pos,
                        property: PsProperty::Agreement,
                        detail: format!("{ctrl} asked for index {index} but has {} non-trivial pulls", k - 1),
                    });
                }
                let expected: Option<(PolicyId, Tag, PsProperty)> = if policies.len() < k {
                    None
                } else if let Some((p, t)) = assigned.get(&k) {
                    Some((p.clone(), *t, PsProperty::Agreement))
                } else if !commits[k - 1] {
                    prev_tag(k, &commits, &assigned).map(|t| (policies[k - 1].id.clone(), t, PsProperty::TagValidity))
                } else {
                    let prev = prev_tag(k, &commits, &assigned);
                    (0..budget)
                        .map(Tag)
                        .find(|t| Some(*t) != prev && !blocked.contains(t))
                        .map(|t| (policies[k - 1].id.clone(), t, PsProperty::TagValidity))
                };
                let got = policy.clone().zip(*tag);
                match (expected, got) {
                    (None, None) => {}
                    (None, Some((p, t))) => out.push(PsDiscrepancy {
                        position: pos,
                        property: PsProperty::NonTriviality,
                        detail: format!("pull by {ctrl} returned ({p}, {t}) where ⊥ was required"),
                    }),
                    (Some((p, t, _)), None) => out.push(PsDiscrepancy {
                        position: pos,
                        property: PsProperty::NonTriviality,
                        detail: format!("pull by {ctrl} returned ⊥ although ({p}, {t}) was available"),
                    }),
                    (Some((ep, et, prop)), Some((p, t))) => {
                        if ep != p || et != t {
                            out.push(PsDiscrepancy {
                                position: pos,
                                property: prop,
                                detail: format!("pull by {ctrl} of index {k}: got ({p}, {t}), expected ({ep}, {et})"),
                            });
                        }
                        if t.0 >= budget {
                            out.push(PsDiscrepancy {
                                position: pos,
                                property: PsProperty::TagRange,
                                detail: format!("{t} outside the budget of {budget} tags"),
                            });
                        }
                        assigned.entry(k).or_insert((p, t));
                        nontrivial.insert(*ctrl, k);
                        holding.insert(*ctrl, k);
                    }
                }
            }
        }
    }
    out
}
