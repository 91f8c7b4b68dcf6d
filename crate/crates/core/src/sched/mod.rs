//! Placement policies and dispatch.
//!
//! - [`filter`]: predicates, Spread/Pack ranking and pod-at-a-time placement.
//! - [`gang`]: all-or-nothing gang placement by biased sampling.
//! - [`dispatch`]: FCFS job queue and the per-pod queue.
//! - [`deadlock`]: detection of partially placed synchronous jobs.

pub mod deadlock;
pub mod dispatch;
pub mod filter;
pub mod gang;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cluster::ResourceVector;
use crate::time::SimDuration;

pub use deadlock::{detect_deadlocks, DeadlockReport, PartialPlacement};
pub use dispatch::{fcfs_cmp, Dispatcher, Placement};
pub use filter::{filter_nodes, rank_nodes, schedule_pod, NodeVerdict, ScoredNode, Unschedulable};
pub use gang::{plan_gang, schedule_gang, Assignment, Binding, NoFeasibleAssignment, Objective};

/// Node scoring for pod-at-a-time placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scoring {
    /// Least-allocated node first.
    Spread,
    /// Most-allocated node first.
    Pack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    #[serde(rename = "pod-spread")]
    PodSpread,
    #[serde(rename = "pod-pack")]
    PodPack,
    Gang,
}

impl Policy {
    pub fn pod_scoring(self) -> Option<Scoring> {
        match self {
            Policy::PodSpread => Some(Scoring::Spread),
            Policy::PodPack => Some(Scoring::Pack),
            Policy::Gang => None,
        }
    }

    pub fn is_gang(self) -> bool {
        self == Policy::Gang
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::PodSpread => "pod-spread",
            Policy::PodPack => "pod-pack",
            Policy::Gang => "gang",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gang" => Ok(Policy::Gang),
            "pod-spread" => Ok(Policy::PodSpread),
            "pod-pack" => Ok(Policy::PodPack),
            other => Err(format!("unknown policy {other:?} (expected gang, pod-spread or pod-pack)")),
        }
    }
}

/// Order in which the learner pods of newly dispatched jobs reach the
/// pod-at-a-time scheduler. Jobs submitted at different times never mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PodOrdering {
    /// Job by job, learners in index order.
    Fifo,
    /// One pod per job in turn: every job's learner 0, then every learner 1, ...
    RoundRobin,
    /// Each pod is delayed by `U(0, W)` job slots behind its job's position,
    /// where the window `W ~ Exp(mean_window_jobs)` is drawn once per run.
    Interleaved { mean_window_jobs: f64 },
}

impl Default for PodOrdering {
    fn default() -> Self {
        PodOrdering::Fifo
    }
}

/// A request to place one learner pod.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PodRequest {
    pub gang_id: String,
    pub learner_index: u32,
    pub demand: ResourceVector,
}

/// Why a node was excluded for a pod.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Predicate {
    NodeUnschedulable,
    GpuClassMismatch,
    InsufficientGpu,
    InsufficientCpu,
    InsufficientMem,
}

impl Predicate {
    /// The scheduler-log style label.
    pub fn label(self) -> &'static str {
        match self {
            Predicate::NodeUnschedulable => "NodeUnschedulable",
            Predicate::GpuClassMismatch => "MatchNodeSelector",
            Predicate::InsufficientGpu => "Insufficient alpha.kubernetes.io/nvidia-gpu",
            Predicate::InsufficientCpu => "Insufficient cpu",
            Predicate::InsufficientMem => "Insufficient memory",
        }
    }
}

fn default_samples() -> u32 {
    64
}
fn default_deadlock_timeout() -> f64 {
    600.0
}
fn default_peek() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub policy: Policy,
    /// Candidate assignments drawn per gang, including the greedy one.
    #[serde(default = "default_samples")]
    pub samples: u32,
    #[serde(default = "default_deadlock_timeout", rename = "deadlock_timeout_s")]
    pub deadlock_timeout_secs: f64,
    /// How many blocked jobs the gang dispatcher may skip per pass. 1 is strict FCFS.
    #[serde(default = "default_peek")]
    pub max_queue_peek: usize,
    #[serde(default)]
    pub pod_ordering: PodOrdering,
    /// Release the pods of a job once it has been deadlocked past the timeout.
    #[serde(default)]
    pub evict_deadlocked: bool,
}

impl SchedulerConfig {
    pub fn new(policy: Policy) -> Self {
        SchedulerConfig {
            policy,
            samples: default_samples(),
            deadlock_timeout_secs: default_deadlock_timeout(),
            max_queue_peek: default_peek(),
            pod_ordering: PodOrdering::Fifo,
            evict_deadlocked: false,
        }
    }

    pub fn with_ordering(mut self, ordering: PodOrdering) -> Self {
        self.pod_ordering = ordering;
        self
    }

    pub fn deadlock_timeout(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.deadlock_timeout_secs)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.samples == 0 {
            return Err("samples must be >= 1".into());
        }
        if self.max_queue_peek == 0 {
            return Err("max_queue_peek must be >= 1".into());
        }
        if !(self.deadlock_timeout_secs >= 0.0) {
            return Err("deadlock_timeout_s must be >= 0".into());
        }
        if let PodOrdering::Interleaved { mean_window_jobs } = self.pod_ordering {
            if !(mean_window_jobs >= 0.0) || !mean_window_jobs.is_finite() {
                return Err("mean_window_jobs must be a finite non-negative number".into());
            }
        }
        Ok(())
    }
}
