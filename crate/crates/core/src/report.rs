//! Running scenarios end to end and classifying the result.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checker::{self, Limits, TagStats, Verdict, VerdictKind};
use crate::controller::{ControllerId, RequestId};
use crate::error::Error;
use crate::policy::PolicyId;
use crate::psm::{self, PsDiscrepancy};
use crate::scenario::{ProtocolConfig, Scenario};
use crate::scheduler::{simulate, RequestStats, SimOutcome, SimResult};
use crate::scheduler::events::{EventKind, EventLog};
use crate::topology::PortId;

/// Worst-first: a violation outranks non-termination, which outranks an
/// undecided check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Undecided,
    NonTermination,
    Violation,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Violation => 2,
            Status::NonTermination => 3,
            Status::Undecided => 4,
        }
    }
}

/// A policy whose tagged packets were seen but whose ingress rules are missing
/// somewhere at the end of the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialInstall {
    pub policy: PolicyId,
    pub missing: Vec<PortId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub status: Status,
    /// Human-readable reasons behind a non-pass status.
    pub problems: Vec<String>,
    pub outcome: SimOutcome,
    pub verdict: Verdict,
    pub ps_discrepancies: Vec<PsDiscrepancy>,
    pub unanswered: Vec<RequestId>,
    pub requests: Vec<RequestStats>,
    pub crashed: BTreeSet<ControllerId>,
    pub tags: TagStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_budget: Option<u32>,
    pub steps: u64,
    pub max_age: u64,
    pub messages_sent: u64,
    pub wait_steps: BTreeMap<ControllerId, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_bound: Option<usize>,
    pub max_local_steps: u64,
    pub partial_installs: Vec<PartialInstall>,
}

/// Policies with a packet tagged at an ingress by one of their rules, and the
/// ingress ports that lack such a rule at the end.
pub fn partial_installs(result: &SimResult) -> Vec<PartialInstall> {
    let dp = &result.dataplane;
    let topo = dp.topology();
    let mut seen = BTreeSet::new();
    for e in &result.log.events {
        if let EventKind::Forward { from, rule: Some(origin), .. } = &e.kind {
            if topo.is_ingress(*from) {
                if let Some(p) = &origin.policy {
                    seen.insert(p.clone());
                }
            }
        }
    }
    seen.remove(&result.log.header.initial_policy.id);
    seen.into_iter()
        .filter_map(|policy| {
            let missing: Vec<PortId> = topo
                .ingress()
                .filter(|j| !dp.rules(*j).iter().any(|r| r.origin.policy.as_ref() == Some(&policy)))
                .collect();
            (!missing.is_empty()).then_some(PartialInstall { policy, missing })
        })
        .collect()
}

/// Classifies a finished simulation.
pub fn assess(scenario: &Scenario, result: &SimResult, limits: Limits) -> Result<RunReport, Error> {
    let log = &result.log;
    let verdict = checker::check_log(log, limits)?;
    let tags = verdict.tags.clone();
    let budget = log.header.tag_budget;
    let ps_discrepancies = match budget {
        Some(b) => psm::replay(b, Some(&log.header.initial_policy), &log.ps_ops()),
        None => Vec::new(),
    };
    let unanswered = result.unanswered();
    let is_fixtag = matches!(scenario.protocol, ProtocolConfig::Fixtag { .. });
    let max_local_steps = result.requests.iter().filter(|r| r.outcome.is_some()).map(|r| r.local_steps).max().unwrap_or(0);
    let partial = if is_fixtag && result.outcome == SimOutcome::Quiescent { partial_installs(result) } else { Vec::new() };

    let mut status = Status::Pass;
    let mut problems = Vec::new();
    let mut flag = |s: Status, msg: String| {
        status = status.max(s);
        problems.push(msg);
    };
    match verdict.verdict {
        VerdictKind::Composable => {}
        VerdictKind::NotComposable => flag(Status::Violation, "history is not sequentially composable".into()),
        VerdictKind::Undecided => flag(
            Status::Undecided,
            format!("undecided: {}", verdict.reason.clone().unwrap_or_default()),
        ),
    }
    for d in &ps_discrepancies {
        flag(Status::Violation, format!("policy serializer at op {}: {:?}: {}", d.position, d.property, d.detail));
    }
    if let Some(b) = budget {
        if tags.distinct > b as usize {
            flag(Status::Violation, format!("{} distinct tags exceed the budget of {b}", tags.distinct));
        }
    }
    if is_fixtag {
        if let Some(bound) = result.step_bound {
            if max_local_steps > bound as u64 {
                flag(Status::Violation, format!("a request took {max_local_steps} own steps, bound is {bound}"));
            }
        }
        for (c, w) in &result.wait_steps {
            if *w > 0 {
                flag(Status::Violation, format!("{c} had a pending request and no step for {w} steps"));
            }
        }
        for p in &partial {
            flag(Status::Violation, format!("policy {} tagged packets but is missing at {:?}", p.policy, p.missing));
        }
    }
    match &result.outcome {
        SimOutcome::Quiescent => {
            if !unanswered.is_empty() {
                flag(Status::NonTermination, format!("unanswered requests of correct controllers: {unanswered:?}"));
            }
        }
        SimOutcome::StepCap { steps } => flag(Status::NonTermination, format!("step cap of {steps} reached")),
        SimOutcome::Stalled { directive, reason } => {
            flag(Status::NonTermination, format!("script directive {directive} stalled: {reason}"))
        }
        SimOutcome::Unfair { action, age } => {
            flag(Status::NonTermination, format!("{action} waited {age} steps, above the fairness bound"))
        }
    }

    Ok(RunReport {
        scenario: log.header.scenario.clone(),
        protocol: log.header.protocol.clone(),
        seed: log.header.seed,
        status,
        problems,
        outcome: result.outcome.clone(),
        verdict,
        ps_discrepancies,
        unanswered,
        requests: result.requests.clone(),
        crashed: result.crashed.clone(),
        tags,
        tag_budget: budget,
        steps: log.events.len() as u64,
        max_age: result.max_age,
        messages_sent: result.messages_sent,
        wait_steps: result.wait_steps.clone(),
        step_bound: result.step_bound,
        max_local_steps,
        partial_installs: partial,
    })
}

/// A finished run: its log and its assessment.
#[derive(Debug, Clone)]
pub struct Run {
    pub log: EventLog,
    pub report: RunReport,
}

pub fn run(scenario: &Scenario, seed: Option<u64>, limits: Limits) -> Result<Run, Error> {
    let mut s = scenario.clone();
    if let Some(seed) = seed {
        s.schedule.set_seed(seed);
    }
    let result = simulate(s.prepare()?)?;
    let report = assess(&s, &result, limits)?;
    Ok(Run { log: result.log, report })
}

/// One failing seed of a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub seed: u64,
    pub status: Status,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scenario: String,
    pub seeds: (u64, u64),
    pub runs: usize,
    pub by_status: BTreeMap<Status, usize>,
    pub status: Status,
    pub composable: usize,
    pub max_distinct_tags: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tag: Option<u32>,
    pub max_local_steps: u64,
    pub max_steps: u64,
    pub max_age: u64,
    pub crashes: usize,
    pub answered: usize,
    pub unanswered: usize,
    pub failures: Vec<SweepFailure>,
}

/// Runs every seed of `seeds` in parallel. Each run is independent.
pub fn sweep(scenario: &Scenario, seeds: Range<u64>, limits: Limits) -> Result<SweepSummary, Error> {
    scenario.prepare()?;
    let reports: Vec<RunReport> = seeds
        .clone()
        .into_par_iter()
        .map(|seed| run(scenario, Some(seed), limits).map(|r| r.report))
        .collect::<Result<_, _>>()?;
    Ok(summarize(&scenario.name, seeds, &reports))
}

pub fn summarize(name: &str, seeds: Range<u64>, reports: &[RunReport]) -> SweepSummary {
    let mut by_status = BTreeMap::new();
    for r in reports {
        *by_status.entry(r.status).or_insert(0) += 1;
    }
    SweepSummary {
        scenario: name.to_owned(),
        seeds: (seeds.start, seeds.end),
        runs: reports.len(),
        by_status,
        status: reports.iter().map(|r| r.status).max().unwrap_or(Status::Pass),
        composable: reports.iter().filter(|r| r.verdict.composable).count(),
        max_distinct_tags: reports.iter().map(|r| r.tags.distinct).max().unwrap_or(0),
        max_tag: reports.iter().filter_map(|r| r.tags.max_tag).map(|t| t.0).max(),
        max_local_steps: reports.iter().map(|r| r.max_local_steps).max().unwrap_or(0),
        max_steps: reports.iter().map(|r| r.steps).max().unwrap_or(0),
        max_age: reports.iter().map(|r| r.max_age).max().unwrap_or(0),
        crashes: reports.iter().map(|r| r.crashed.len()).sum(),
        answered: reports.iter().flat_map(|r| &r.requests).filter(|q| q.outcome.is_some()).count(),
        unanswered: reports.iter().map(|r| r.unanswered.len()).sum(),
        failures: reports
            .iter()
            .filter(|r| r.status != Status::Pass)
            .map(|r| SweepFailure { seed: r.seed, status: r.status, problems: r.problems.clone() })
            .collect(),
    }
}
