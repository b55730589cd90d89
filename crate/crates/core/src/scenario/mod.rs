//! Scenario files: topology, policies, protocol, workload, faults and schedule.

pub mod canned;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerId;
use crate::dataplane::PortMode;
use crate::error::ScenarioError;
use crate::fixtag::DEFAULT_CATALOG_CAP;
use crate::policy::{validate, FlowSet, Policy, PolicyId};
use crate::topology::{PortId, Topology, TopologySpec};

pub const SCENARIO_VERSION: u32 = 1;
pub const DEFAULT_STEP_CAP: u64 = 1_000_000;
pub const DEFAULT_FAIRNESS_BOUND: u64 = 10_000;
pub const DEFAULT_SEGMENT_CAP: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub topology: TopologySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_policy: Option<Policy>,
    #[serde(default)]
    pub policies: Vec<Policy>,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub port_mode: PortMode,
    pub controllers: u32,
    #[serde(default)]
    pub requests: Vec<RequestSpec>,
    #[serde(default)]
    pub injects: Vec<InjectSpec>,
    #[serde(default)]
    pub faults: FaultPlan,
    pub schedule: Schedule,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    #[serde(default = "default_fairness_bound")]
    pub fairness_bound: u64,
}

fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}

fn default_fairness_bound() -> u64 {
    DEFAULT_FAIRNESS_BOUND
}

fn default_catalog_cap() -> usize {
    DEFAULT_CATALOG_CAP
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    Fixtag {
        #[serde(default = "default_catalog_cap")]
        catalog_cap: usize,
    },
    Reusetag {
        /// Number of tags; `f + 2` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag_budget: Option<u32>,
        #[serde(default)]
        catchup_broadcast: bool,
    },
}

impl ProtocolConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolConfig::Fixtag { .. } => "fixtag",
            ProtocolConfig::Reusetag { .. } => "reusetag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub controller: ControllerId,
    pub policy: PolicyId,
    #[serde(default)]
    pub earliest_step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectSpec {
    pub flow: u64,
    pub port: PortId,
    #[serde(default)]
    pub earliest_step: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub f: u32,
    #[serde(default)]
    pub crashes: Vec<CrashSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomCrashes>,
}

/// A crash fires at a global step or after the controller has taken a number
/// of its own steps, whichever comes first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub controller: ControllerId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_steps: Option<u64>,
}

/// Crash plans drawn from the run seed: up to `max` distinct controllers,
/// each after a uniform number of own steps below `window`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCrashes {
    pub max: u32,
    pub window: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    RandomFair {
        #[serde(default)]
        seed: u64,
    },
    Scripted {
        #[serde(default)]
        seed: u64,
        script: Vec<Directive>,
    },
}

impl Schedule {
    pub fn seed(&self) -> u64 {
        match self {
            Schedule::RandomFair { seed } | Schedule::Scripted { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, s: u64) {
        match self {
            Schedule::RandomFair { seed } | Schedule::Scripted { seed, .. } => *seed = s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Directive {
    /// Invoke workload request `request` now.
    Invoke { request: usize },
    /// Perform workload inject `inject` now.
    Inject { inject: usize },
    Freeze { ctrl: ControllerId },
    Release { ctrl: ControllerId },
    Crash { ctrl: ControllerId },
    /// Step only `ctrl` until the condition holds.
    RunCtrl {
        ctrl: ControllerId,
        until: Cond,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_steps: Option<u64>,
    },
    /// Random steps among forwards, deliveries and steps of unfrozen
    /// controllers until the condition holds.
    Run {
        until: Cond,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_steps: Option<u64>,
    },
    /// Forward packets until every queue is empty.
    Drain {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_steps: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Cond {
    Quiescent,
    Responded {
        request: usize,
    },
    /// At least `count` port operations in this segment.
    PortOps {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        policy: Option<PolicyId>,
        #[serde(default)]
        ingress_only: bool,
        count: u64,
    },
}

/// A scenario that passed validation, with its derived pieces.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub topology: Topology,
    pub initial: Policy,
    pub policies: BTreeMap<PolicyId, Policy>,
    pub controllers: Vec<ControllerId>,
}

impl Prepared {
    pub fn tag_budget(&self) -> Option<u32> {
        match self.scenario.protocol {
            ProtocolConfig::Reusetag { tag_budget, .. } => Some(tag_budget.unwrap_or(self.scenario.faults.f + 2)),
            ProtocolConfig::Fixtag { .. } => None,
        }
    }
}

pub fn empty_initial_policy() -> Policy {
    Policy::new("pi0", 0, FlowSet::empty())
}

impl Scenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_owned(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::from_json(&text, &path.display().to_string())
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn seed(&self) -> u64 {
        self.schedule.seed()
    }

    /// Checks every cross-reference and returns the derived data, or all
    /// problems found.
    pub fn prepare(&self) -> Result<Prepared, ScenarioError> {
        let mut errs = Vec::new();
        if self.version != SCENARIO_VERSION {
            errs.push(format!("unsupported version {} (expected {SCENARIO_VERSION})", self.version));
        }
        let topology = match Topology::from_spec(&self.topology) {
            Ok(t) => t,
            Err(e) => return Err(ScenarioError::Invalid(vec![format!("topology: {e}")])),
        };
        if self.controllers == 0 {
            errs.push("at least one controller is required".into());
        }
        let controllers: Vec<ControllerId> = (1..=self.controllers).map(ControllerId).collect();
        let known = |c: ControllerId| c.0 >= 1 && c.0 <= self.controllers;

        let initial = self.initial_policy.clone().unwrap_or_else(empty_initial_policy);
        let reuse = matches!(self.protocol, ProtocolConfig::Reusetag { .. });
        let mut policies = BTreeMap::new();
        for p in std::iter::once(&initial).chain(&self.policies) {
            if policies.insert(p.id.clone(), p.clone()).is_some() {
                errs.push(format!("policy id {} declared twice", p.id));
            }
            if let Err(v) = validate(p, &topology) {
                for e in v {
                    errs.push(format!("policy {}: {e}", p.id));
                }
            }
            if reuse {
                if let Err(d) = p.next_hops() {
                    errs.push(format!(
                        "policy {}: paths leave port {} towards both {} and {}; reusetag needs one next hop per port",
                        p.id, d.port, d.first, d.second
                    ));
                }
            }
        }

        match &self.protocol {
            ProtocolConfig::Reusetag { tag_budget, .. } => {
                if self.port_mode != PortMode::Atomic {
                    errs.push("reusetag requires atomic port updates".into());
                }
                if tag_budget.is_some_and(|b| b < 2) {
                    errs.push("tag_budget must be at least 2".into());
                }
            }
            ProtocolConfig::Fixtag { catalog_cap } => {
                if *catalog_cap == 0 {
                    errs.push("catalog_cap must be positive".into());
                }
            }
        }

        let mut requested = BTreeSet::new();
        for (i, r) in self.requests.iter().enumerate() {
            if !known(r.controller) {
                errs.push(format!("request {i}: unknown controller {}", r.controller));
            }
            if !policies.contains_key(&r.policy) || r.policy == initial.id {
                errs.push(format!("request {i}: unknown policy {}", r.policy));
            }
            if !requested.insert(r.policy.clone()) {
                errs.push(format!("request {i}: policy {} is requested twice", r.policy));
            }
        }
        for (i, inj) in self.injects.iter().enumerate() {
            if !topology.is_ingress(inj.port) {
                errs.push(format!("inject {i}: port {} is not an ingress port", inj.port));
            }
        }

        let f = self.faults.f;
        if f >= self.controllers && self.controllers > 0 {
            errs.push(format!("f = {f} must be below the number of controllers ({})", self.controllers));
        }
        let mut crash_set = BTreeSet::new();
        for c in &self.faults.crashes {
            if !known(c.controller) {
                errs.push(format!("crash: unknown controller {}", c.controller));
            }
            if !crash_set.insert(c.controller) {
                errs.push(format!("crash: controller {} listed twice", c.controller));
            }
            if c.at_step.is_none() && c.after_steps.is_none() {
                errs.push(format!("crash of {}: needs at_step or after_steps", c.controller));
            }
        }
        let scripted_crashes: BTreeSet<ControllerId> = match &self.schedule {
            Schedule::Scripted { script, .. } => script
                .iter()
                .filter_map(|d| match d {
                    Directive::Crash { ctrl } => Some(*ctrl),
                    _ => None,
                })
                .collect(),
            _ => BTreeSet::new(),
        };
        let planned = crash_set.union(&scripted_crashes).count() as u32;
        let random = self.faults.random.as_ref().map_or(0, |r| r.max);
        if planned + random > f {
            errs.push(format!("up to {} crashes planned but f = {f}", planned + random));
        }

        if let Schedule::Scripted { script, .. } = &self.schedule {
            for (i, d) in script.iter().enumerate() {
                let mut ctrl_ref = None;
                match d {
                    Directive::Invoke { request } if *request >= self.requests.len() => {
                        errs.push(format!("script[{i}]: no request {request}"))
                    }
                    Directive::Inject { inject } if *inject >= self.injects.len() => {
                        errs.push(format!("script[{i}]: no inject {inject}"))
                    }
                    Directive::Freeze { ctrl } | Directive::Release { ctrl } | Directive::Crash { ctrl } => {
                        ctrl_ref = Some(*ctrl)
                    }
                    Directive::RunCtrl { ctrl, until, .. } => {
                        ctrl_ref = Some(*ctrl);
                        check_cond(until, i, self, &mut errs);
                    }
                    Directive::Run { until, .. } => check_cond(until, i, self, &mut errs),
                    _ => {}
                }
                if let Some(c) = ctrl_ref {
                    if !known(c) {
                        errs.push(format!("script[{i}]: unknown controller {c}"));
                    }
                }
            }
        }

        if errs.is_empty() {
            Ok(Prepared { scenario: self.clone(), topology, initial, policies, controllers })
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }
}

fn check_cond(c: &Cond, i: usize, s: &Scenario, errs: &mut Vec<String>) {
    if let Cond::Responded { request } = c {
        if *request >= s.requests.len() {
            errs.push(format!("script[{i}]: condition names unknown request {request}"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
  "version": 1,
  "name": "tiny",
  "topology": {"ports": [1, 2], "links": [[1, 2], [2, "World"]]},
  "protocol": {"kind": "fixtag"},
  "controllers": 1,
  "schedule": {"mode": "random_fair", "seed": 3}
}"#
    }

    #[test]
    fn minimal_scenario_loads_with_defaults() {
        let s = Scenario::from_json(minimal(), "tiny.json").unwrap();
        assert_eq!(s.step_cap, DEFAULT_STEP_CAP);
        assert_eq!(s.seed(), 3);
        let p = s.prepare().unwrap();
        assert_eq!(p.initial.id.as_str(), "pi0");
        assert_eq!(p.controllers, vec![ControllerId(1)]);
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let text = minimal().replace("\"controllers\": 1", "\"controllers\": one");
        match Scenario::from_json(&text, "bad.json") {
            Err(ScenarioError::Parse { line, path, .. }) => {
                assert_eq!(line, 6);
                assert_eq!(path, "bad.json");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validation_collects_all_problems() {
        let mut s = Scenario::from_json(minimal(), "x").unwrap();
        s.requests.push(RequestSpec { controller: ControllerId(4), policy: "nope".into(), earliest_step: 0 });
        s.injects.push(InjectSpec { flow: 1, port: PortId::Port(2), earliest_step: 0 });
        s.faults.f = 1;
        let Err(ScenarioError::Invalid(errs)) = s.prepare() else { panic!() };
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn reusetag_rejects_divergent_policies() {
        let mut s = Scenario::from_json(minimal(), "x").unwrap();
        s.topology = TopologySpec {
            ports: vec![1, 2, 3, 4],
            links: vec![
                (1.into(), 3.into()),
                (2.into(), 3.into()),
                (3.into(), 4.into()),
                (3.into(), PortId::World),
                (4.into(), PortId::World),
            ],
        };
        s.protocol = ProtocolConfig::Reusetag { tag_budget: None, catchup_broadcast: false };
        s.policies.push(
            Policy::new("split", 1, FlowSet::interval(0, 9))
                .with_path([1.into(), 3.into(), PortId::World])
                .with_path([2.into(), 3.into(), 4.into(), PortId::World]),
        );
        let Err(ScenarioError::Invalid(errs)) = s.prepare() else { panic!() };
        assert!(errs[0].contains("one next hop per port"), "{errs:?}");
    }
}
