//! The JSONL event log: one header line, then one object per scheduler step.

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerId, MsgBody, Outcome, PortOpRecord, RequestId};
use crate::dataplane::{PacketUid, PortMode, RuleOrigin, Tag};
use crate::error::CheckError;
use crate::policy::{Policy, PolicyId};
use crate::psm::PsOp;
use crate::topology::{PortId, TopologySpec};

pub const LOG_FORMAT: &str = "cpc-sim-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub controllers: u32,
    pub f: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_budget: Option<u32>,
    pub port_mode: PortMode,
    pub topology: TopologySpec,
    pub initial_policy: Policy,
    /// Tags present in the rules installed before time zero, excluding a
    /// FixTag catalog preinstall.
    pub initial_tags: Vec<Tag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Inject {
        uid: PacketUid,
        flow: u64,
        port: PortId,
        workload: usize,
    },
    Forward {
        uid: PacketUid,
        from: PortId,
        to: PortId,
        tag_before: Option<Tag>,
        tag_after: Option<Tag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rule: Option<RuleOrigin>,
    },
    PortOp {
        ctrl: ControllerId,
        #[serde(flatten)]
        record: PortOpRecord,
    },
    PsPush {
        ctrl: ControllerId,
        index: usize,
        policy: Policy,
    },
    PsPull {
        ctrl: ControllerId,
        index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        policy: Option<PolicyId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<Tag>,
        blocked: Vec<Tag>,
    },
    MsgSend {
        msg: u64,
        from: ControllerId,
        to: ControllerId,
        body: MsgBody,
    },
    MsgDeliver {
        msg: u64,
        from: ControllerId,
        to: ControllerId,
    },
    Invoke {
        ctrl: ControllerId,
        request: RequestId,
        policy: Policy,
    },
    Response {
        ctrl: ControllerId,
        request: RequestId,
        outcome: Outcome,
    },
    Crash {
        ctrl: ControllerId,
    },
    OracleQuery {
        ctrl: ControllerId,
        tags: Vec<Tag>,
        open: bool,
    },
    Freeze {
        ctrl: ControllerId,
    },
    Release {
        ctrl: ControllerId,
    },
}

impl EventKind {
    pub fn from_ps(op: PsOp) -> EventKind {
        match op {
            PsOp::Push { ctrl, index, policy } => EventKind::PsPush { ctrl, index, policy },
            PsOp::Pull { ctrl, index, policy, tag, blocked } => EventKind::PsPull { ctrl, index, policy, tag, blocked },
        }
    }

    pub fn to_ps(&self) -> Option<PsOp> {
        match self {
            EventKind::PsPush { ctrl, index, policy } => {
                Some(PsOp::Push { ctrl: *ctrl, index: *index, policy: policy.clone() })
            }
            EventKind::PsPull { ctrl, index, policy, tag, blocked } => Some(PsOp::Pull {
                ctrl: *ctrl,
                index: *index,
                policy: policy.clone(),
                tag: *tag,
                blocked: blocked.clone(),
            }),
            _ => None,
        }
    }

    /// The controller this event is attributed to, if any.
    pub fn controller(&self) -> Option<ControllerId> {
        match self {
            EventKind::PortOp { ctrl, .. }
            | EventKind::PsPush { ctrl, .. }
            | EventKind::PsPull { ctrl, .. }
            | EventKind::Invoke { ctrl, .. }
            | EventKind::Response { ctrl, .. }
            | EventKind::OracleQuery { ctrl, .. } => Some(*ctrl),
            EventKind::MsgSend { from, .. } => Some(*from),
            EventKind::MsgDeliver { to, .. } => Some(*to),
            _ => None,
        }
    }
}

/// A complete log: header plus events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EventLog, CheckError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(CheckError::Log { line: 1, msg: "empty log".into() })?;
        let header: LogHeader =
            serde_json::from_str(first).map_err(|e| CheckError::Log { line: 1, msg: e.to_string() })?;
        if header.format != LOG_FORMAT {
            return Err(CheckError::Log { line: 1, msg: format!("not a {LOG_FORMAT} file") });
        }
        let mut events = Vec::new();
        for (i, l) in lines {
            let e: Event = serde_json::from_str(l).map_err(|e| CheckError::Log { line: i + 1, msg: e.to_string() })?;
            events.push(e);
        }
        Ok(EventLog { header, events })
    }

    pub fn ps_ops(&self) -> Vec<PsOp> {
        self.events.iter().filter_map(|e| e.kind.to_ps()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::PortOpKind;

    #[test]
    fn events_round_trip_as_flat_objects() {
        let e = Event {
            seq: 7,
            kind: EventKind::PortOp {
                ctrl: ControllerId(2),
                record: PortOpRecord {
                    port: PortId::Port(3),
                    op: PortOpKind::Update,
                    ingress: true,
                    policy: Some("a".into()),
                    changed: true,
                    tags_written: vec![Tag(1)],
                },
            },
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"seq":7,"kind":"port_op","ctrl":2,"port":3,"op":"update","ingress":true,"policy":"a","changed":true,"tags_written":[1]}"#
        );
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), e);

        let f = Event {
            seq: 8,
            kind: EventKind::Forward {
                uid: PacketUid(0),
                from: PortId::Port(1),
                to: PortId::World,
                tag_before: None,
                tag_after: Some(Tag(0)),
                rule: None,
            },
        };
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), f);
    }
}
