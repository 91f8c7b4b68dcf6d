//! Discrete-event simulator for deep-learning training jobs on a
//! multi-tenant GPU cluster.
//!
//! The crate models the cluster and its placement logic (gang scheduling
//! with reservations, pod-at-a-time Spread and Pack), the job lifecycle
//! with an atomic multi-step deployer, an etcd-like coordination store,
//! node faults with checkpoint restart, and the metrics used to compare
//! scheduling policies. Everything is deterministic in the seed.

pub mod cluster;
pub mod lifecycle;
pub mod metrics;
pub mod replay;
pub mod rng;
pub mod scenario;
pub mod sched;
pub mod sim;
pub mod store;
pub mod time;
pub mod workload;
