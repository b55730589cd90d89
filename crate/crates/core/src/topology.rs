//! Ports, directed links and the two special sinks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::TopologyError;

/// A port of the data plane.
///
/// Regular ports are numbered; `World` and `Drop` are the sinks through which a
/// packet leaves the network or is discarded. Ordering places every numbered
/// port before the sinks, which is the ascending order protocols rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortId {
    Port(u32),
    World,
    Drop,
}

impl PortId {
    pub fn is_sink(self) -> bool {
        matches!(self, PortId::World | PortId::Drop)
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortId::Port(n) => write!(f, "{n}"),
            PortId::World => f.write_str("World"),
            PortId::Drop => f.write_str("Drop"),
        }
    }
}

impl From<u32> for PortId {
    fn from(n: u32) -> Self {
        PortId::Port(n)
    }
}

impl FromStr for PortId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "World" | "world" => Ok(PortId::World),
            "Drop" | "drop" => Ok(PortId::Drop),
            _ => s
                .parse::<u32>()
                .map(PortId::Port)
                .map_err(|_| format!("invalid port id `{s}`")),
        }
    }
}

// Numbered ports serialize as integers (and as "7"-style keys inside JSON
// objects); the sinks as their names.
impl Serialize for PortId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            PortId::Port(n) => serializer.serialize_u32(*n),
            PortId::World => serializer.serialize_str("World"),
            PortId::Drop => serializer.serialize_str("Drop"),
        }
    }
}

impl<'de> Deserialize<'de> for PortId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PortVisitor;

        impl Visitor<'_> for PortVisitor {
            type Value = PortId;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a port number, \"World\" or \"Drop\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<PortId, E> {
                u32::try_from(v)
                    .map(PortId::Port)
                    .map_err(|_| E::custom(format!("port id {v} out of range")))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<PortId, E> {
                u32::try_from(v)
                    .map(PortId::Port)
                    .map_err(|_| E::custom(format!("port id {v} out of range")))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<PortId, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(PortVisitor)
    }
}

/// Declarative form of a topology as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub ports: Vec<u32>,
    pub links: Vec<(PortId, PortId)>,
}

/// A validated port graph.
///
/// Every numbered port has an implicit link to `Drop`. Ingress ports are the
/// numbered ports without incoming links; all other numbered ports are
/// internal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    ports: BTreeSet<PortId>,
    succ: BTreeMap<PortId, BTreeSet<PortId>>,
    ingress: BTreeSet<PortId>,
}

impl Topology {
    pub fn new(
        ports: impl IntoIterator<Item = u32>,
        links: impl IntoIterator<Item = (PortId, PortId)>,
    ) -> Result<Self, TopologyError> {
        let mut set: BTreeSet<PortId> = BTreeSet::new();
        for p in ports {
            if !set.insert(PortId::Port(p)) {
                return Err(TopologyError::DuplicatePort(PortId::Port(p)));
            }
        }
        let mut succ: BTreeMap<PortId, BTreeSet<PortId>> =
            set.iter().map(|p| (*p, BTreeSet::from([PortId::Drop]))).collect();
        let mut has_incoming: BTreeSet<PortId> = BTreeSet::new();
        for (from, to) in links {
            if from.is_sink() {
                return Err(TopologyError::SinkHasOutgoing(from));
            }
            for p in [from, to] {
                if !p.is_sink() && !set.contains(&p) {
                    return Err(TopologyError::UnknownPort(p));
                }
            }
            if from == to {
                return Err(TopologyError::SelfLoop(from));
            }
            succ.entry(from).or_default().insert(to);
            if !to.is_sink() {
                has_incoming.insert(to);
            }
        }
        let ingress = set.difference(&has_incoming).copied().collect();
        set.insert(PortId::World);
        set.insert(PortId::Drop);
        Ok(Topology { ports: set, succ, ingress })
    }

    pub fn from_spec(spec: &TopologySpec) -> Result<Self, TopologyError> {
        Topology::new(spec.ports.iter().copied(), spec.links.iter().copied())
    }

    /// An empty network: only the sinks.
    pub fn empty() -> Self {
        Topology::new([], []).expect("empty topology is valid")
    }

    /// All ports, sinks included, in ascending order.
    pub fn ports(&self) -> impl Iterator<Item = PortId> + '_ {
        self.ports.iter().copied()
    }

    pub fn contains(&self, p: PortId) -> bool {
        self.ports.contains(&p)
    }

    pub fn ingress(&self) -> impl Iterator<Item = PortId> + '_ {
        self.ingress.iter().copied()
    }

    pub fn is_ingress(&self, p: PortId) -> bool {
        self.ingress.contains(&p)
    }

    pub fn is_internal(&self, p: PortId) -> bool {
        !p.is_sink() && self.ports.contains(&p) && !self.ingress.contains(&p)
    }

    pub fn internal(&self) -> impl Iterator<Item = PortId> + '_ {
        self.ports.iter().copied().filter(|p| self.is_internal(*p))
    }

    pub fn successors(&self, p: PortId) -> impl Iterator<Item = PortId> + '_ {
        self.succ.get(&p).into_iter().flatten().copied()
    }

    pub fn has_link(&self, from: PortId, to: PortId) -> bool {
        self.succ.get(&from).is_some_and(|s| s.contains(&to))
    }

    /// Every directed link, implicit `Drop` links included.
    pub fn links(&self) -> impl Iterator<Item = (PortId, PortId)> + '_ {
        self.succ
            .iter()
            .flat_map(|(from, tos)| tos.iter().map(move |to| (*from, *to)))
    }

    /// Declared links, i.e. everything except the implicit `Drop` links.
    pub fn to_spec(&self) -> TopologySpec {
        TopologySpec {
            ports: self
                .ports
                .iter()
                .filter_map(|p| match p {
                    PortId::Port(n) => Some(*n),
                    _ => None,
                })
                .collect(),
            links: self.links().filter(|(_, to)| *to != PortId::Drop).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Topology {
        // 1 -> 2 -> 3 -> World
        Topology::new([1, 2, 3], [(1.into(), 2.into()), (2.into(), 3.into()), (3.into(), PortId::World)])
            .unwrap()
    }

    #[test]
    fn ingress_is_derived_from_incoming_links() {
        let t = line();
        assert_eq!(t.ingress().collect::<Vec<_>>(), vec![PortId::Port(1)]);
        assert!(t.is_internal(2.into()));
        assert!(t.is_internal(3.into()));
        assert!(!t.is_internal(PortId::World));
    }

    #[test]
    fn every_port_reaches_drop_and_sinks_have_no_successors() {
        let t = line();
        for p in [1, 2, 3] {
            assert!(t.has_link(p.into(), PortId::Drop));
        }
        assert_eq!(t.successors(PortId::World).count(), 0);
        assert_eq!(t.successors(PortId::Drop).count(), 0);
    }

    #[test]
    fn rejects_links_out_of_sinks() {
        let err = Topology::new([1], [(PortId::World, 1.into())]).unwrap_err();
        assert!(matches!(err, TopologyError::SinkHasOutgoing(PortId::World)));
    }

    #[test]
    fn rejects_unknown_ports() {
        let err = Topology::new([1], [(1.into(), 9.into())]).unwrap_err();
        assert!(matches!(err, TopologyError::UnknownPort(PortId::Port(9))));
    }

    #[test]
    fn port_ids_round_trip_through_json() {
        let v: Vec<PortId> = serde_json::from_str(r#"[3, "World", "Drop"]"#).unwrap();
        assert_eq!(v, vec![PortId::Port(3), PortId::World, PortId::Drop]);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"[3,"World","Drop"]"#);
        let m: BTreeMap<PortId, u8> = serde_json::from_str(r#"{"4": 1}"#).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"4":1}"#);
    }

    #[test]
    fn spec_round_trip_drops_implicit_links() {
        let t = line();
        let back = Topology::from_spec(&t.to_spec()).unwrap();
        assert_eq!(t, back);
    }
}
