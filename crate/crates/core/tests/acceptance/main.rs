//! Acceptance suite: one PASS/FAIL line per criterion.

mod naive;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cpc_sim::checker::{self, sample, Limits, VerdictKind, Violation, WitnessEntry};
use cpc_sim::controller::Outcome;
use cpc_sim::psm;
use cpc_sim::report::{self, RunReport, Status};
use cpc_sim::scenario::{canned, ProtocolConfig, Scenario};

const SEEDS: u64 = 1000;

type Check = Result<String, String>;
type Criterion = fn(&mut Runs) -> Check;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// A run's report plus the discrepancies found by replaying its serializer log.
struct Logged {
    report: RunReport,
    replay: usize,
    has_ps: bool,
}

fn run_one(sc: &Scenario, seed: Option<u64>) -> Logged {
    let run = report::run(sc, seed, Limits::default()).expect("scenario runs");
    let budget = run.log.header.tag_budget;
    let replay = budget.map_or(0, |b| psm::replay(b, Some(&run.log.header.initial_policy), &run.log.ps_ops()).len());
    Logged { report: run.report, replay, has_ps: budget.is_some() }
}

fn sweep(sc: &Scenario) -> Vec<Logged> {
    (0..SEEDS).into_par_iter().map(|s| run_one(sc, Some(s))).collect()
}

fn with_budget(mut sc: Scenario, b: u32) -> Scenario {
    if let ProtocolConfig::Reusetag { tag_budget, .. } = &mut sc.protocol {
        *tag_budget = Some(b);
    }
    sc
}

#[derive(Default)]
struct Runs {
    reusetag: BTreeMap<u32, Vec<Logged>>,
    fixtag: Vec<(String, Vec<Logged>)>,
    other: Vec<Logged>,
}

impl Runs {
    fn all(&self) -> impl Iterator<Item = &Logged> {
        self.reusetag.values().flatten().chain(self.fixtag.iter().flat_map(|(_, v)| v)).chain(&self.other)
    }
}

fn fig1(runs: &mut Runs) -> Check {
    let t = Instant::now();
    let l = run_one(&canned::fig1(), None);
    let took = t.elapsed();
    let r = &l.report;
    let outcomes: Vec<_> = r.requests.iter().map(|q| (q.policy.to_string(), q.outcome)).collect();
    let want = vec![
        ("pi1".to_owned(), Some(Outcome::Ack)),
        ("pi2".to_owned(), Some(Outcome::Ack)),
        ("pi3".to_owned(), Some(Outcome::Nack)),
    ];
    ensure(outcomes == want, || format!("outcomes {outcomes:?}"))?;
    ensure(r.verdict.composable, || format!("verdict {:?}", r.verdict.verdict))?;
    let order: Vec<String> = r
        .verdict
        .witness
        .iter()
        .flatten()
        .filter_map(|w| match w {
            WitnessEntry::Request { policy, .. } => Some(policy.to_string()),
            _ => None,
        })
        .collect();
    ensure(order == ["pi1", "pi2", "pi3"], || format!("witness order {order:?}"))?;
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    runs.other.push(l);
    Ok(format!("pi1 ack, pi2 ack, pi3 nack; witness pi1, pi2, pi3; {took:?}"))
}

fn reusetag_bound(runs: &mut Runs) -> Check {
    let mut notes = Vec::new();
    for f in 0..=2u32 {
        let sc = canned::reusetag_sweep(f);
        ensure(sc.controllers == f + 2, || format!("f={f}: {} controllers", sc.controllers))?;
        ensure(sc.requests.len() == 5 && sc.policies.len() == 5, || format!("f={f}: workload size"))?;
        ensure(sc.faults.random.as_ref().map_or(0, |r| r.max) == f, || format!("f={f}: crash plan"))?;
        let v = sweep(&sc);
        let bad: Vec<_> = v.iter().filter(|l| l.report.status != Status::Pass).map(|l| l.report.seed).collect();
        let tags = v.iter().map(|l| l.report.tags.distinct).max().unwrap_or(0);
        let unanswered: usize = v.iter().map(|l| l.report.unanswered.len()).sum();
        let composable = v.iter().filter(|l| l.report.verdict.composable).count();
        let crashes: usize = v.iter().map(|l| l.report.crashed.len()).sum();
        runs.reusetag.insert(f, v);
        ensure(bad.is_empty(), || format!("f={f}: failing seeds {:?}", &bad[..bad.len().min(10)]))?;
        ensure(composable == SEEDS as usize, || format!("f={f}: {composable} composable"))?;
        ensure(tags <= (f + 2) as usize, || format!("f={f}: {tags} distinct tags"))?;
        ensure(unanswered == 0, || format!("f={f}: {unanswered} unanswered"))?;
        notes.push(format!("f={f} max tags {tags}, {crashes} crashes"));
    }
    Ok(notes.join("; "))
}

fn one_bit(runs: &mut Runs) -> Check {
    let v = runs.reusetag.get(&0).ok_or("f=0 sweep missing")?;
    let tags = v.iter().map(|l| l.report.tags.distinct).max().unwrap_or(0);
    let bad = v.iter().filter(|l| l.report.status != Status::Pass).count();
    ensure(bad == 0 && tags <= 2, || format!("{bad} failures, {tags} tags"))?;
    Ok(format!("{} runs, max tags {tags}", v.len()))
}

fn fixtag_wait_free(runs: &mut Runs) -> Check {
    let mut notes = Vec::new();
    for sc in [canned::fixtag_crashstorm(), canned::fixtag_fixed_crash()] {
        let v = sweep(&sc);
        let bad: Vec<_> = v
            .iter()
            .filter(|l| l.report.status != Status::Pass)
            .map(|l| (l.report.seed, l.report.problems.clone()))
            .collect();
        let bound = v.iter().filter_map(|l| l.report.step_bound).max().unwrap_or(0) as u64;
        let steps = v.iter().map(|l| l.report.max_local_steps).max().unwrap_or(0);
        let waits: u64 = v.iter().flat_map(|l| l.report.wait_steps.values()).sum();
        let unanswered: usize = v.iter().map(|l| l.report.unanswered.len()).sum();
        let crashes: usize = v.iter().map(|l| l.report.crashed.len()).sum();
        let name = sc.name.clone();
        runs.fixtag.push((name.clone(), v));
        ensure(bad.is_empty(), || format!("{name}: {} failing, first {:?}", bad.len(), bad.first()))?;
        ensure(bound > 0 && steps <= bound, || format!("{name}: {steps} own steps, bound {bound}"))?;
        ensure(waits == 0 && unanswered == 0, || format!("{name}: {waits} wait steps, {unanswered} unanswered"))?;
        notes.push(format!("{name}: own steps <= {steps} (bound {bound}), {crashes} crashes"));
    }
    let storm = canned::fixtag_crashstorm();
    ensure(storm.faults.random.as_ref().is_some_and(|r| r.max + 1 == storm.controllers), || {
        "crash storm does not allow n-1 crashes".into()
    })?;
    Ok(notes.join("; "))
}

fn all_or_nothing(runs: &mut Runs) -> Check {
    let total: usize = runs.fixtag.iter().map(|(_, v)| v.len()).sum();
    ensure(total > 0, || "no fixtag runs".into())?;
    let partial: Vec<_> = runs
        .fixtag
        .iter()
        .flat_map(|(n, v)| v.iter().map(move |l| (n, l)))
        .filter(|(_, l)| !l.report.partial_installs.is_empty())
        .map(|(n, l)| format!("{n} seed {}: {:?}", l.report.seed, l.report.partial_installs))
        .collect();
    ensure(partial.is_empty(), || partial[..partial.len().min(3)].join("; "))?;
    Ok(format!("{total} runs, no partially installed policy"))
}

fn lower_bound(runs: &mut Runs) -> Check {
    let mut notes = Vec::new();
    for f in 1..=2u32 {
        let sc = canned::lowerbound(f);
        let short = run_one(&with_budget(sc.clone(), f + 1), None);
        let full = run_one(&with_budget(sc, f + 2), None);
        let (s, p) = (short.report.status, full.report.status);
        runs.other.push(short);
        runs.other.push(full);
        ensure(matches!(s, Status::Violation | Status::NonTermination), || format!("f={f}: budget f+1 gave {s:?}"))?;
        ensure(p == Status::Pass, || format!("f={f}: budget f+2 gave {p:?}"))?;
        notes.push(format!("f={f}: {s:?} with f+1, Pass with f+2"));
    }
    Ok(notes.join("; "))
}

fn weak_ports(_: &mut Runs) -> Check {
    let sc = canned::weakport();
    let l = run_one(&sc, None);
    let v = &l.report.verdict;
    ensure(v.verdict == VerdictKind::NotComposable, || format!("verdict {:?}", v.verdict))?;
    let pol = |id: &str| sc.policies.iter().find(|p| p.id.as_str() == id).expect("declared");
    let (p1, p2) = (pol("pi1"), pol("pi2"));
    match &v.violation {
        Some(Violation::Trace { flow, port, trace, committed, .. }) => {
            let ids: Vec<&str> = committed.iter().map(|c| c.as_str()).collect();
            ensure(p2.covers(*flow), || format!("flow {flow} outside the refinement"))?;
            ensure(p1.path_at(*port) == Some(&trace[..]), || format!("trace {trace:?} is not the outdated path"))?;
            ensure(ids.contains(&"pi1") && ids.contains(&"pi2"), || format!("committed {ids:?}"))?;
            Ok(format!("flow {flow} took {trace:?} with {ids:?} committed"))
        }
        other => Err(format!("violation {other:?}")),
    }
}

fn oracle(_: &mut Runs) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cfg = sample::SampleConfig::default();
    let histories: Vec<_> = (0..300).map(|_| sample::random_history(&mut rng, cfg)).collect();
    let results: Vec<(bool, bool, VerdictKind)> = histories
        .par_iter()
        .map(|h| {
            let v = checker::sequentially_composable(h, Limits::default());
            (v.composable, naive::composable(h), v.verdict)
        })
        .collect();
    let undecided = results.iter().filter(|r| r.2 == VerdictKind::Undecided).count();
    let disagree: Vec<usize> = results.iter().enumerate().filter(|(_, r)| r.0 != r.1).map(|(i, _)| i).collect();
    let yes = results.iter().filter(|r| r.1).count();
    ensure(undecided == 0, || format!("{undecided} undecided"))?;
    ensure(disagree.is_empty(), || format!("disagreement on histories {disagree:?}"))?;
    ensure(yes > 0 && yes < results.len(), || "sample has only one verdict class".into())?;
    Ok(format!("{} histories agree ({yes} composable)", results.len()))
}

fn replay(runs: &mut Runs) -> Check {
    let logged: Vec<&Logged> = runs.all().filter(|l| l.has_ps).collect();
    ensure(!logged.is_empty(), || "no serializer runs".into())?;
    let bad: Vec<_> = logged.iter().filter(|l| l.replay > 0).map(|l| (l.report.scenario.clone(), l.report.seed)).collect();
    ensure(bad.is_empty(), || format!("discrepancies in {bad:?}"))?;
    Ok(format!("{} serializer logs replayed", logged.len()))
}

fn determinism(_: &mut Runs) -> Check {
    let scenarios = canned::all();
    let diffs: Vec<String> = scenarios
        .par_iter()
        .flat_map(|(name, sc)| {
            (0..20u64).into_par_iter().filter_map(move |seed| {
                let a = report::run(sc, Some(seed), Limits::default()).ok()?.log.to_jsonl();
                let b = report::run(sc, Some(seed), Limits::default()).ok()?.log.to_jsonl();
                (a != b).then(|| format!("{name} seed {seed}"))
            })
        })
        .collect();
    ensure(diffs.is_empty(), || diffs.join(", "))?;
    Ok(format!("{} scenarios x 20 seeds, byte-identical", scenarios.len()))
}

/// Written straight to stdout so the lines show without `--nocapture`.
fn report(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

#[test]
fn acceptance() {
    let criteria: [(&str, Criterion); 10] = [
        ("fig1 scenario outcomes", fig1),
        ("reusetag tag bound f+2", reusetag_bound),
        ("reusetag f=0 uses one bit", one_bit),
        ("fixtag wait-free and correct", fixtag_wait_free),
        ("fixtag all-or-nothing", all_or_nothing),
        ("lower bound f+1 vs f+2", lower_bound),
        ("weak ports break composition", weak_ports),
        ("checker agrees with brute force", oracle),
        ("serializer replay", replay),
        ("determinism", determinism),
    ];
    report(String::new());
    let mut runs = Runs::default();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = check(&mut runs);
        let took = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => report(format!("PASS {:>2} {name} [{took:.1}s]: {detail}", i + 1)),
            Err(why) => {
                report(format!("FAIL {:>2} {name} [{took:.1}s]: {why}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
