//! Deterministic discrete-event simulation of the cluster, the scheduler
//! and the job lifecycle.

mod engine;
pub mod event;
pub mod fault;
pub mod result;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::NodeSpec;
use crate::lifecycle::LifecycleConfig;
use crate::sched::SchedulerConfig;
use crate::time::SimTime;
use crate::workload::JobSpec;

pub use event::{Event, EventKind, EventQueue, Phase};
pub use fault::{DeployTrigger, FaultEntry, FaultKind, FaultPlan, Outage};
pub use result::{DeadlockSample, LogEntry, NodeUtilization, SimResult};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Loop cadences, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Scheduler loop period on top of event-driven passes.
    pub dispatch_period_s: f64,
    pub deadlock_scan_period_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { dispatch_period_s: 10.0, deadlock_scan_period_s: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scheduler: SchedulerConfig,
    pub lifecycle: LifecycleConfig,
    pub engine: EngineConfig,
    pub horizon: SimTime,
}

impl SimConfig {
    pub fn new(scheduler: SchedulerConfig, horizon: SimTime) -> Self {
        SimConfig { scheduler, lifecycle: LifecycleConfig::default(), engine: EngineConfig::default(), horizon }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.scheduler.validate()?;
        self.lifecycle.validate()?;
        for (name, v) in [
            ("dispatch_period_s", self.engine.dispatch_period_s),
            ("deadlock_scan_period_s", self.engine.deadlock_scan_period_s),
        ] {
            if !(v >= 0.001 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.horizon == SimTime::ZERO {
            return Err("horizon must be positive".into());
        }
        Ok(())
    }
}

/// Simulates one seed. The result is a pure function of the arguments.
pub fn run(
    topology: &[NodeSpec],
    workload: &[JobSpec],
    config: &SimConfig,
    faults: &FaultPlan,
    seed: u64,
) -> Result<SimResult, SimError> {
    log::debug!("run seed={seed} policy={} jobs={} nodes={}", config.scheduler.policy, workload.len(), topology.len());
    let r = engine::run(topology, workload, config, faults, seed);
    if let Ok(r) = &r {
        log::debug!("seed={seed} finished at {:.1}s after {} events", r.end_time.as_secs_f64(), r.events.len());
    }
    r
}

/// Runs every seed independently, in parallel; results keep the seed order.
pub fn run_batch(
    topology: &[NodeSpec],
    workload: &[JobSpec],
    config: &SimConfig,
    faults: &FaultPlan,
    seeds: &[u64],
) -> Vec<Result<SimResult, SimError>> {
    seeds.par_iter().map(|&s| run(topology, workload, config, faults, s)).collect()
}
