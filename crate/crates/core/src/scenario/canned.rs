//! Scenarios shipped with the crate. The JSON files under `scenarios/` are
//! generated from these builders and kept identical by a test.

use crate::controller::ControllerId;
use crate::dataplane::PortMode;
use crate::policy::{FlowSet, Policy};
use crate::topology::{PortId, TopologySpec};

use super::{
    Cond, CrashSpec, Directive, FaultPlan, InjectSpec, ProtocolConfig, RandomCrashes, RequestSpec, Scenario,
    Schedule, DEFAULT_FAIRNESS_BOUND, DEFAULT_STEP_CAP, SCENARIO_VERSION,
};

const W: PortId = PortId::World;

fn p(n: u32) -> PortId {
    PortId::Port(n)
}

fn c(n: u32) -> ControllerId {
    ControllerId(n)
}

fn pol(id: &str, pr: u32, lo: u64, hi: u64, paths: Vec<Vec<PortId>>) -> Policy {
    paths.into_iter().fold(Policy::new(id, pr, FlowSet::interval(lo, hi)), |acc, path| acc.with_path(path))
}

fn base(name: &str, topology: TopologySpec, protocol: ProtocolConfig, controllers: u32) -> Scenario {
    Scenario {
        version: SCENARIO_VERSION,
        name: name.into(),
        topology,
        initial_policy: None,
        policies: Vec::new(),
        protocol,
        port_mode: PortMode::Atomic,
        controllers,
        requests: Vec::new(),
        injects: Vec::new(),
        faults: FaultPlan::default(),
        schedule: Schedule::RandomFair { seed: 0 },
        step_cap: DEFAULT_STEP_CAP,
        fairness_bound: DEFAULT_FAIRNESS_BOUND,
    }
}

fn request(ctrl: u32, policy: &str, earliest_step: u64) -> RequestSpec {
    RequestSpec { controller: c(ctrl), policy: policy.into(), earliest_step }
}

fn inject(flow: u64, port: u32, earliest_step: u64) -> InjectSpec {
    InjectSpec { flow, port: p(port), earliest_step }
}

fn reusetag() -> ProtocolConfig {
    ProtocolConfig::Reusetag { tag_budget: None, catchup_broadcast: false }
}

/// `k` switches, fully meshed. Host port `a` sits on switch `a`; port `10a + b`
/// is the port of switch `a` facing switch `b`. Every port of switch `a` links
/// to the ports facing `a` on the other switches, and to `World`.
pub fn full_mesh(k: u32) -> TopologySpec {
    let mut ports: Vec<u32> = (1..=k).collect();
    let mut links = Vec::new();
    for a in 1..=k {
        for b in (1..=k).filter(|b| *b != a) {
            ports.push(10 * a + b);
        }
    }
    for a in 1..=k {
        let own = std::iter::once(a).chain((1..=k).filter(|b| *b != a).map(|b| 10 * a + b));
        for x in own {
            for b in (1..=k).filter(|b| *b != a) {
                links.push((p(x), p(10 * b + a)));
            }
            links.push((p(x), W));
        }
    }
    TopologySpec { ports, links }
}

/// Three controllers concurrently install three policies on a three-switch
/// network; the third conflicts with both others and is aborted.
pub fn fig1() -> Scenario {
    let mut s = base("fig1", full_mesh(3), reusetag(), 3);
    s.initial_policy = Some(pol("pi0", 0, 0, 999, vec![vec![p(1), p(21), p(12), W], vec![p(2), W], vec![p(3), W]]));
    s.policies = vec![
        pol("pi1", 1, 0, 99, vec![vec![p(1), p(21), W], vec![p(2), p(12), W], vec![p(3), W]]),
        pol("pi2", 1, 100, 199, vec![vec![p(1), p(31), W], vec![p(2), W], vec![p(3), p(13), W]]),
        pol("pi3", 1, 50, 149, vec![vec![p(1), W], vec![p(2), p(32), W], vec![p(3), W]]),
    ];
    s.requests = vec![request(1, "pi1", 0), request(2, "pi2", 0), request(3, "pi3", 0)];
    s.injects = vec![inject(10, 1, 0), inject(120, 2, 0), inject(150, 3, 0)];
    s.faults.f = 1;
    let until = |r| Cond::Responded { request: r };
    s.schedule = Schedule::Scripted {
        seed: 0,
        script: vec![
            Directive::Invoke { request: 0 },
            Directive::Invoke { request: 1 },
            Directive::Invoke { request: 2 },
            Directive::Inject { inject: 0 },
            Directive::Drain { max_steps: None },
            Directive::RunCtrl { ctrl: c(1), until: until(0), max_steps: None },
            Directive::Inject { inject: 1 },
            Directive::Drain { max_steps: None },
            Directive::RunCtrl { ctrl: c(2), until: until(1), max_steps: None },
            Directive::Inject { inject: 2 },
            Directive::Drain { max_steps: None },
            Directive::RunCtrl { ctrl: c(3), until: until(2), max_steps: None },
        ],
    };
    s
}

/// Read/write ports: `p1` reads port 2 before `p2` installs a refinement
/// there, then writes its outdated view back.
pub fn weakport() -> Scenario {
    let topo = TopologySpec {
        ports: vec![1, 2, 3, 4],
        links: vec![
            (p(1), p(3)),
            (p(1), p(4)),
            (p(1), W),
            (p(2), p(3)),
            (p(2), p(4)),
            (p(2), W),
            (p(3), W),
            (p(4), W),
        ],
    };
    let mut s = base("weakport", topo, ProtocolConfig::Fixtag { catalog_cap: crate::fixtag::DEFAULT_CATALOG_CAP }, 2);
    s.port_mode = PortMode::ReadWrite;
    s.initial_policy = Some(pol("pi0", 0, 0, 999, vec![vec![p(1), W], vec![p(2), W]]));
    s.policies = vec![
        pol("pi1", 1, 0, 99, vec![vec![p(1), p(3), W], vec![p(2), p(3), W]]),
        pol("pi2", 2, 0, 49, vec![vec![p(1), p(4), W], vec![p(2), p(4), W]]),
    ];
    s.requests = vec![request(1, "pi1", 0), request(2, "pi2", 0)];
    s.injects = vec![inject(10, 2, 0)];
    s.faults.f = 1;
    s.schedule = Schedule::Scripted {
        seed: 0,
        script: vec![
            Directive::Invoke { request: 0 },
            Directive::RunCtrl {
                ctrl: c(1),
                until: Cond::PortOps { policy: None, ingress_only: false, count: 3 },
                max_steps: None,
            },
            Directive::Invoke { request: 1 },
            Directive::RunCtrl { ctrl: c(2), until: Cond::Responded { request: 1 }, max_steps: None },
            Directive::RunCtrl { ctrl: c(1), until: Cond::Responded { request: 0 }, max_steps: None },
            Directive::Inject { inject: 0 },
            Directive::Drain { max_steps: None },
        ],
    };
    s
}

/// Port numbers of the loop network: ingress `A = 1`, `B = 2`; junction
/// `u_l = 10 l`; upper and lower branch of loop `l` are `10 l + 1`, `10 l + 2`.
pub fn loop_network(f: u32) -> TopologySpec {
    let loops = f + 1;
    let mut ports = vec![1, 2];
    let mut links = vec![(p(1), p(10)), (p(2), p(10))];
    for l in 1..=loops {
        let (u, up, low, next) = (10 * l, 10 * l + 1, 10 * l + 2, 10 * (l + 1));
        ports.extend([u, up, low]);
        links.extend([(p(u), p(up)), (p(u), p(low)), (p(up), p(next)), (p(low), p(next))]);
    }
    let last = 10 * (loops + 1);
    ports.push(last);
    links.push((p(last), W));
    TopologySpec { ports, links }
}

fn loop_path(f: u32, ingress: u32, lower_in: Option<u32>) -> Vec<PortId> {
    let mut path = vec![p(ingress)];
    for l in 1..=f + 1 {
        path.push(p(10 * l));
        path.push(p(10 * l + if Some(l) == lower_in { 2 } else { 1 }));
    }
    path.push(p(10 * (f + 2)));
    path.push(W);
    path
}

/// The adversarial schedule on the `(f + 1)`-loop network: controller `q_i`
/// installs `π_i` up to its first ingress flip and is frozen there while the
/// others finish, for every `i` in `1..=f + 1`.
pub fn lowerbound(f: u32) -> Scenario {
    assert!(f >= 1, "the construction needs f >= 1");
    let n = f + 2;
    let mut s = base(&format!("lowerbound_f{f}"), loop_network(f), reusetag(), n);
    let top = 10 * u64::from(f + 2) - 1;
    s.initial_policy = Some(Policy {
        paths: [(p(1), loop_path(f, 1, None)), (p(2), loop_path(f, 2, None))].into_iter().collect(),
        ..Policy::new("pi0", 0, FlowSet::interval(0, top))
    });
    let mut script = Vec::new();
    for i in 1..=f + 1 {
        let id = format!("pi{i}");
        let hi = 10 * u64::from(f + 2 - i) - 1;
        s.policies.push(pol(&id, i, 0, hi, vec![loop_path(f, 1, Some(i)), loop_path(f, 2, Some(i))]));
        s.requests.push(request(i, &id, 0));
        let first = s.injects.len();
        s.injects.extend([inject(0, 1, 0), inject(0, 2, 0)]);
        script.extend([
            Directive::Invoke { request: (i - 1) as usize },
            Directive::RunCtrl {
                ctrl: c(i),
                until: Cond::PortOps { policy: Some(id.as_str().into()), ingress_only: true, count: 1 },
                max_steps: None,
            },
            Directive::Freeze { ctrl: c(i) },
            Directive::Run { until: Cond::Quiescent, max_steps: None },
            Directive::Inject { inject: first },
            Directive::Inject { inject: first + 1 },
            Directive::Drain { max_steps: None },
        ]);
    }
    for i in 1..=f + 1 {
        script.push(Directive::Release { ctrl: c(i) });
    }
    let first = s.injects.len();
    s.injects.extend([inject(0, 1, 0), inject(0, 2, 0)]);
    script.extend([Directive::Inject { inject: first }, Directive::Inject { inject: first + 1 }]);
    s.faults.f = f;
    s.schedule = Schedule::Scripted { seed: 0, script };
    s
}

/// Host `a` of a 4-switch mesh, then the port of switch `b` facing `a`, and so
/// on along `via`, then `World`.
fn mesh_path(a: u32, via: &[u32]) -> Vec<PortId> {
    let mut path = vec![p(a)];
    let mut from = a;
    for &b in via {
        path.push(p(10 * b + from));
        from = b;
    }
    path.push(W);
    path
}

fn ring(a: u32, k: u32) -> u32 {
    (a - 1 + k) % 4 + 1
}

/// Five requests on the 4-switch mesh under ReuseTag with up to `f` random
/// crashes; the seed is supplied per run.
pub fn reusetag_sweep(f: u32) -> Scenario {
    let n = f + 2;
    let mut s = base(&format!("reusetag_f{f}"), full_mesh(4), reusetag(), n);
    s.initial_policy = Some(pol("pi0", 0, 0, 499, (1..=4).map(|a| mesh_path(a, &[])).collect()));
    s.policies = vec![
        pol("web", 1, 0, 99, (1..=4).map(|a| mesh_path(a, &[ring(a, 1)])).collect()),
        pol("mail", 1, 100, 199, (1..=4).map(|a| mesh_path(a, &[ring(a, 2)])).collect()),
        pol("overlap", 1, 50, 149, (1..=4).map(|a| mesh_path(a, &[ring(a, 3)])).collect()),
        pol("web_fast", 2, 0, 49, (1..=4).map(|a| mesh_path(a, &[ring(a, 2)])).collect()),
        pol("backup", 1, 200, 299, (1..=2).map(|a| mesh_path(a, &[ring(a, 3)])).collect()),
    ];
    s.requests = ["web", "mail", "overlap", "web_fast", "backup"]
        .iter()
        .enumerate()
        .map(|(i, id)| request(1 + (i as u32 % n), id, [0, 0, 10, 20, 30][i]))
        .collect();
    let flows = [10, 120, 60, 30, 250, 400, 75, 180];
    s.injects = flows.iter().enumerate().map(|(i, fl)| inject(*fl, 1 + (i as u32 % 4), 15 * i as u64)).collect();
    s.faults = FaultPlan { f, crashes: Vec::new(), random: (f > 0).then_some(RandomCrashes { max: f, window: 40 }) };
    s
}

/// FixTag on the three-switch mesh with three controllers, up to two of which
/// crash at random points of their own step sequence.
pub fn fixtag_crashstorm() -> Scenario {
    let mut s = fig1();
    s.name = "fixtag_crashstorm".into();
    s.protocol = ProtocolConfig::Fixtag { catalog_cap: crate::fixtag::DEFAULT_CATALOG_CAP };
    s.policies.push(pol("pi4", 2, 0, 49, vec![vec![p(1), p(31), p(23), W], vec![p(2), W], vec![p(3), p(13), W]]));
    s.requests = vec![request(1, "pi1", 0), request(2, "pi2", 0), request(3, "pi3", 0), request(1, "pi4", 5)];
    s.injects = [(10, 1), (120, 2), (60, 3), (30, 1), (150, 3), (20, 2)]
        .iter()
        .enumerate()
        .map(|(i, (fl, port))| inject(*fl, *port, 4 * i as u64))
        .collect();
    s.faults = FaultPlan { f: 2, crashes: Vec::new(), random: Some(RandomCrashes { max: 2, window: 8 }) };
    s.schedule = Schedule::RandomFair { seed: 0 };
    s
}

/// A FixTag scenario with fixed crash points, for documentation and tests.
pub fn fixtag_fixed_crash() -> Scenario {
    let mut s = fixtag_crashstorm();
    s.name = "fixtag_fixed_crash".into();
    s.faults = FaultPlan {
        f: 2,
        crashes: vec![
            CrashSpec { controller: c(1), at_step: None, after_steps: Some(3) },
            CrashSpec { controller: c(2), at_step: Some(40), after_steps: None },
        ],
        random: None,
    };
    s
}

/// Every shipped scenario with its file name.
pub fn all() -> Vec<(String, Scenario)> {
    let mut v = vec![("fig1.json".to_owned(), fig1()), ("weakport.json".to_owned(), weakport())];
    for f in [1, 2] {
        v.push((format!("lowerbound_f{f}.json"), lowerbound(f)));
    }
    for f in [0, 1, 2] {
        v.push((format!("reusetag_f{f}.json"), reusetag_sweep(f)));
    }
    v.push(("fixtag_crashstorm.json".to_owned(), fixtag_crashstorm()));
    v.push(("fixtag_fixed_crash.json".to_owned(), fixtag_fixed_crash()));
    v
}
