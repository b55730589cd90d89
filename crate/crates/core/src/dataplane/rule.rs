use std::fmt;

use serde::{Deserialize, Serialize};

use crate::policy::{FlowSet, PolicyId};
use crate::topology::PortId;

/// Value of the tag header field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tag(pub u32);

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "τ{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PacketUid(pub u64);

/// A packet instance. Only the tag is rewritten in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub uid: PacketUid,
    pub flow: u64,
    pub tag: Option<Tag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagMatch {
    Any,
    Untagged,
    Is(Tag),
}

impl TagMatch {
    pub fn matches(self, tag: Option<Tag>) -> bool {
        match self {
            TagMatch::Any => true,
            TagMatch::Untagged => tag.is_none(),
            TagMatch::Is(t) => tag == Some(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    /// New tag, or `None` to keep the packet's tag.
    pub set_tag: Option<Tag>,
    pub out: PortId,
}

/// Bookkeeping a protocol attaches to the rules it writes. It never affects
/// matching beyond breaking ties between identical actions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleOrigin {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<u64>,
    /// The tag the same policy writes at every ingress port, carried so that a
    /// reader of one port can complete the installation elsewhere.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan: Vec<(PortId, Tag)>,
}

/// A prioritized partial map from packets to located packets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub flows: FlowSet,
    pub tag: TagMatch,
    pub priority: i64,
    pub action: Action,
    #[serde(default)]
    pub origin: RuleOrigin,
}

impl Rule {
    pub fn matches(&self, pk: &Packet) -> bool {
        self.tag.matches(pk.tag) && self.flows.contains(pk.flow)
    }

    pub fn apply(&self, pk: &Packet) -> (Packet, PortId) {
        let mut out = *pk;
        if let Some(t) = self.action.set_tag {
            out.tag = Some(t);
        }
        (out, self.action.out)
    }

    /// Tags this rule reads or writes.
    pub fn tags(&self) -> impl Iterator<Item = Tag> {
        let matched = match self.tag {
            TagMatch::Is(t) => Some(t),
            _ => None,
        };
        matched.into_iter().chain(self.action.set_tag)
    }

    fn overlaps(&self, other: &Rule) -> bool {
        let tags_overlap = match (self.tag, other.tag) {
            (TagMatch::Any, _) | (_, TagMatch::Any) => true,
            (a, b) => a == b,
        };
        tags_overlap && self.flows.intersects(&other.flows)
    }
}

/// Picks the rule applied to `pk`: highest priority, then highest generation,
/// then earliest in table order.
pub fn select_rule<'a>(rules: &'a [Rule], pk: &Packet) -> Option<&'a Rule> {
    let mut best: Option<&Rule> = None;
    for r in rules.iter().filter(|r| r.matches(pk)) {
        best = match best {
            Some(b) if (b.priority, b.origin.generation) >= (r.priority, r.origin.generation) => Some(b),
            _ => Some(r),
        };
    }
    best
}

/// Equal-priority rules of the same generation with overlapping match sets
/// must agree on their action, so the applied rule is unique up to
/// bookkeeping. Across generations the newer rule wins.
pub fn ambiguous_pair(rules: &[Rule]) -> Option<(&Rule, &Rule)> {
    for (i, a) in rules.iter().enumerate() {
        for b in &rules[i + 1..] {
            if a.priority == b.priority
                && a.origin.generation == b.origin.generation
                && a.action != b.action
                && a.overlaps(b)
            {
                return Some((a, b));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(tag: TagMatch, pr: i64, out: u32) -> Rule {
        Rule {
            flows: FlowSet::all(),
            tag,
            priority: pr,
            action: Action { set_tag: None, out: PortId::Port(out) },
            origin: RuleOrigin::default(),
        }
    }

    fn pk(tag: Option<u32>) -> Packet {
        Packet { uid: PacketUid(0), flow: 5, tag: tag.map(Tag) }
    }

    #[test]
    fn priority_decides() {
        let rules = vec![rule(TagMatch::Any, 1, 3), rule(TagMatch::Any, 2, 4)];
        assert_eq!(select_rule(&rules, &pk(None)).unwrap().action.out, PortId::Port(4));
    }

    #[test]
    fn tag_match_filters() {
        let rules = vec![rule(TagMatch::Is(Tag(0)), 0, 3), rule(TagMatch::Is(Tag(1)), 0, 4)];
        assert_eq!(select_rule(&rules, &pk(Some(1))).unwrap().action.out, PortId::Port(4));
        assert!(select_rule(&rules, &pk(None)).is_none());
        assert!(TagMatch::Untagged.matches(None) && !TagMatch::Untagged.matches(Some(Tag(0))));
    }

    #[test]
    fn ambiguity_detection_ignores_identical_actions() {
        let mut a = rule(TagMatch::Is(Tag(1)), 0, 3);
        let mut b = a.clone();
        a.origin.generation = Some(1);
        b.origin.generation = Some(3);
        assert!(ambiguous_pair(&[a.clone(), b.clone()]).is_none());
        assert_eq!(select_rule(&[a.clone(), b.clone()], &pk(Some(1))).unwrap().origin.generation, Some(3));
        b.action.out = PortId::Port(9);
        assert!(ambiguous_pair(&[a.clone(), b.clone()]).is_none());
        b.origin.generation = Some(1);
        assert!(ambiguous_pair(&[a, b]).is_some());
    }
}
