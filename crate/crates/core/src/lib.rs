//! Deterministic simulation and checking of consistent policy composition in
//! a distributed SDN control plane.
//!
//! The crate models a data plane of ports, queues and prioritized rules, a set
//! of crash-prone controllers running the FixTag or ReuseTag protocol, a seeded
//! fair (or scripted adversarial) scheduler, and a checker that decides whether
//! a recorded history is sequentially composable.

pub mod checker;
pub mod controller;
pub mod dataplane;
pub mod error;
pub mod fixtag;
pub mod policy;
pub mod psm;
pub mod report;
pub mod reusetag;
pub mod scenario;
pub mod scheduler;
pub mod topology;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-plane.md")]
    mod data_plane {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/serializer.md")]
    mod serializer {}
    #[doc = include_str!("../../../book/src/controllers.md")]
    mod controllers {}
    #[doc = include_str!("../../../book/src/scheduler.md")]
    mod scheduler {}
    #[doc = include_str!("../../../book/src/checker.md")]
    mod checker {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
