//! Brute-force sequential-composability decision, written without the
//! checker's precedence, legality or search code.
//!
//! Every order of the requests is tried. For each order, every inject is
//! given a slot (the number of requests placed before it); slots are filtered
//! by real-time order and by the trace the packet produced, and the remaining
//! assignments are enumerated in full.

use cpc_sim::checker::History;
use cpc_sim::controller::Outcome;
use cpc_sim::policy::{self, Policy};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

fn request_before_request(h: &History, a: usize, b: usize) -> bool {
    h.requests[a].response.is_some_and(|(r, _)| r < h.requests[b].invoked)
}

fn trace_fits(h: &History, i: usize, committed: &[&Policy]) -> bool {
    let inj = &h.injects[i];
    let t = &h.traces[i];
    let ports: Vec<_> = t.hops.iter().map(|x| x.port).collect();
    let want = policy::expected_path(committed, inj.flow, inj.port);
    if t.terminated {
        ports == want
    } else {
        ports.len() <= want.len() && want[..ports.len()] == ports[..]
    }
}

/// Committed sets after each prefix of `order`, or `None` if a recorded
/// outcome disagrees with the one its position forces.
fn prefixes<'a>(h: &'a History, order: &[usize]) -> Option<Vec<Vec<&'a Policy>>> {
    let mut sets = vec![vec![&h.initial]];
    for &r in order {
        let mut cur = sets.last().expect("non-empty").clone();
        let q = &h.requests[r];
        let fits = cur.iter().all(|p| !policy::conflicts(p, &q.policy));
        if let Some((_, o)) = q.response {
            if (o == Outcome::Ack) != fits {
                return None;
            }
        }
        if fits {
            cur.push(&q.policy);
        }
        sets.push(cur);
    }
    Some(sets)
}

pub fn composable(h: &History) -> bool {
    let nr = h.requests.len();
    'orders: for order in permutations(nr) {
        for x in 0..nr {
            for y in x + 1..nr {
                if request_before_request(h, order[y], order[x]) {
                    continue 'orders;
                }
            }
        }
        let Some(sets) = prefixes(h, &order) else { continue };
        let mut options: Vec<Vec<usize>> = Vec::new();
        for i in 0..h.injects.len() {
            let inj = &h.injects[i];
            let slots: Vec<usize> = (0..=nr)
                .filter(|&s| {
                    order.iter().enumerate().all(|(pos, &r)| {
                        let q = &h.requests[r];
                        // a request answered before the packet arrived is placed before it
                        let must_precede = q.response.is_some_and(|(t, _)| t < inj.at);
                        // a packet processed before the invocation is placed before it
                        let must_follow = inj.processed.is_some_and(|p| p < q.invoked);
                        (!must_precede || pos < s) && (!must_follow || pos >= s)
                    }) && trace_fits(h, i, &sets[s])
                })
                .collect();
            if slots.is_empty() {
                continue 'orders;
            }
            options.push(slots);
        }
        if assign(h, &options, &mut Vec::new()) {
            return true;
        }
    }
    false
}

/// Tries every slot choice; injects at the same port must keep their order.
fn assign(h: &History, options: &[Vec<usize>], chosen: &mut Vec<usize>) -> bool {
    let i = chosen.len();
    if i == options.len() {
        return true;
    }
    for &s in &options[i] {
        let ok = (0..i).all(|k| {
            let (a, b) = (&h.injects[k], &h.injects[i]);
            a.port != b.port || (a.at < b.at && chosen[k] <= s) || (b.at < a.at && s <= chosen[k])
        });
        if ok {
            chosen.push(s);
            if assign(h, options, chosen) {
                return true;
            }
            chosen.pop();
        }
    }
    false
}

#[test]
fn permutation_count() {
    assert_eq!(permutations(4).len(), 24);
    assert_eq!(permutations(0).len(), 1);
}
