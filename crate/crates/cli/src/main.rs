//! `cpcsim`: run, check and sweep policy-composition scenarios.
//!
//! Exit codes: 0 pass, 1 usage or input error, 2 consistency violation,
//! 3 suspected non-termination, 4 undecided.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpc_sim::checker::{self, Limits, VerdictKind};
use cpc_sim::report::{self, Status};
use cpc_sim::scenario::{canned, Directive, ProtocolConfig, Scenario, Schedule};
use cpc_sim::scheduler::EventLog;

#[derive(Parser)]
#[command(name = "cpcsim", version, about = "Simulate and check consistent policy composition")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario and check the resulting history.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for log.jsonl, verdict.json and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON array of schedule directives replacing the scenario's schedule.
        #[arg(long)]
        script: Option<PathBuf>,
        #[command(flatten)]
        over: Overrides,
    },
    /// Check an existing JSONL event log.
    Check {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = checker::DEFAULT_MAX_REQUESTS)]
        max_requests: usize,
        #[arg(long, default_value_t = checker::DEFAULT_MAX_INJECTS)]
        max_injects: usize,
    },
    /// Run a range of seeds and summarize.
    Sweep {
        scenario: PathBuf,
        /// `A..B`, or `N` for `0..N`.
        #[arg(long, value_parser = parse_seeds, default_value = "0..100")]
        seeds: Range<u64>,
        /// File for the summary JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        over: Overrides,
    },
    /// Emit the loop-network scenario with its freezing schedule.
    GenLowerbound {
        #[arg(long)]
        f: u32,
        #[arg(long)]
        tag_budget: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    tag_budget: Option<u32>,
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Fixtag,
    Reusetag,
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let num = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("bad seed `{x}`: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let r = num(a)?..num(b)?;
            if r.is_empty() {
                return Err(format!("empty seed range {s}"));
            }
            Ok(r)
        }
        None => Ok(0..num(s)?),
    }
}

fn apply(sc: &mut Scenario, over: &Overrides) -> Result<(), String> {
    if let Some(p) = over.protocol {
        let keep = sc.protocol.name() == match p {
            Protocol::Fixtag => "fixtag",
            Protocol::Reusetag => "reusetag",
        };
        if !keep {
            sc.protocol = match p {
                Protocol::Fixtag => ProtocolConfig::Fixtag { catalog_cap: cpc_sim::fixtag::DEFAULT_CATALOG_CAP },
                Protocol::Reusetag => ProtocolConfig::Reusetag { tag_budget: None, catchup_broadcast: false },
            };
        }
    }
    if let Some(b) = over.tag_budget {
        match &mut sc.protocol {
            ProtocolConfig::Reusetag { tag_budget, .. } => *tag_budget = Some(b),
            ProtocolConfig::Fixtag { .. } => return Err("--tag-budget only applies to reusetag".into()),
        }
    }
    if let Some(s) = over.steps {
        sc.step_cap = s;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load(path: &Path) -> Result<Scenario, String> {
    Scenario::load(path).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn code(s: Status) -> u8 {
    s.exit_code() as u8
}

fn dispatch(cmd: Cmd) -> Result<u8, String> {
    match cmd {
        Cmd::Run { scenario, seed, out, script, over } => {
            let mut sc = load(&scenario)?;
            apply(&mut sc, &over)?;
            if let Some(p) = script {
                let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                let script: Vec<Directive> =
                    serde_json::from_str(&text).map_err(|e| format!("{}: line {}: {e}", p.display(), e.line()))?;
                sc.schedule = Schedule::Scripted { seed: sc.seed(), script };
            }
            let run = report::run(&sc, seed, Limits::default()).map_err(|e| e.to_string())?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
                write(&dir.join("log.jsonl"), &run.log.to_jsonl())?;
                write(&dir.join("verdict.json"), &json(&run.report.verdict))?;
                write(&dir.join("report.json"), &json(&run.report))?;
            }
            let r = &run.report;
            println!("{} seed {}: {:?} ({} events)", r.scenario, r.seed, r.status, r.steps);
            for q in &r.requests {
                let o = q.outcome.map_or("pending".to_owned(), |o| format!("{o:?}").to_lowercase());
                println!("  {} {} -> {o}", q.controller, q.policy);
            }
            println!("  distinct tags: {}", r.tags.distinct);
            for p in &r.problems {
                println!("  problem: {p}");
            }
            Ok(code(r.status))
        }
        Cmd::Check { log, out, max_requests, max_injects } => {
            let text = fs::read_to_string(&log).map_err(|e| format!("{}: {e}", log.display()))?;
            let log = EventLog::from_jsonl(&text).map_err(|e| e.to_string())?;
            let v = checker::check_log(&log, Limits { max_requests, max_injects }).map_err(|e| e.to_string())?;
            let text = json(&v);
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(code(match v.verdict {
                VerdictKind::Composable => Status::Pass,
                VerdictKind::NotComposable => Status::Violation,
                VerdictKind::Undecided => Status::Undecided,
            }))
        }
        Cmd::Sweep { scenario, seeds, out, over } => {
            let mut sc = load(&scenario)?;
            apply(&mut sc, &over)?;
            let s = report::sweep(&sc, seeds, Limits::default()).map_err(|e| e.to_string())?;
            let text = json(&s);
            match out {
                Some(p) => {
                    write(&p, &text)?;
                    println!("{} seeds {}..{}: {:?} {:?}", s.scenario, s.seeds.0, s.seeds.1, s.status, s.by_status);
                    println!("  max distinct tags {}, max own steps {}", s.max_distinct_tags, s.max_local_steps);
                }
                None => print!("{text}"),
            }
            Ok(code(s.status))
        }
        Cmd::GenLowerbound { f, tag_budget, out } => {
            if f == 0 {
                return Err("the loop network needs f >= 1".into());
            }
            let mut sc = canned::lowerbound(f);
            if let ProtocolConfig::Reusetag { tag_budget: b, .. } = &mut sc.protocol {
                *b = tag_budget.or(*b);
            }
            let text = sc.to_json_pretty();
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
    }
}
