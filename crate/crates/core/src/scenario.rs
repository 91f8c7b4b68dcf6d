//! Scenario files: one JSON document naming a topology, a workload, the
//! scheduler and lifecycle settings, a fault plan, seeds and a horizon.
//!
//! Relative paths inside a scenario resolve against the scenario's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{load_topology, GpuClass, NodeSpec};
use crate::lifecycle::LifecycleConfig;
use crate::sched::{Policy, SchedulerConfig};
use crate::sim::{self, EngineConfig, FaultPlan, SimConfig, SimError, SimResult};
use crate::time::{SimDuration, SimTime};
use crate::workload::{generate_synthetic, load_trace, parse_trace, JobSpec, WorkloadConfig, WorkloadError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    /// A referenced file failed to load; the message names it.
    #[error("{0}")]
    Input(String),
}

/// `count` identical nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformNodes {
    pub count: usize,
    pub gpu_class: GpuClass,
    pub gpus: u32,
    #[serde(default = "default_cpu")]
    pub cpu_millicores: u64,
    #[serde(default = "default_mem")]
    pub mem_mb: u64,
}

fn default_cpu() -> u64 {
    64_000
}
fn default_mem() -> u64 {
    512 * 1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySource {
    Path(PathBuf),
    Inline(Vec<NodeSpec>),
    Uniform { uniform: UniformNodes },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadSource {
    Trace { trace: PathBuf },
    /// Trace records written inline, same fields as a trace line.
    Jobs { jobs: Vec<serde_json::Value> },
    Generate {
        generate: WorkloadConfig,
        /// Fixes the generated workload across run seeds; otherwise each run
        /// seed generates its own.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FaultSource {
    Path(PathBuf),
    Inline(FaultPlan),
}

impl Default for FaultSource {
    fn default() -> Self {
        FaultSource::Inline(FaultPlan::none())
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_threshold() -> f64 {
    900.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub topology: TopologySource,
    pub workload: WorkloadSource,
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub lifecycle: LifecycleConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub faults: FaultSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub horizon_s: f64,
    /// Queueing threshold for the queued-too-long metric.
    #[serde(default = "default_threshold")]
    pub threshold_s: f64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line style adjustments applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Replace the seed list with `0..n`.
    pub seeds: Option<u64>,
    pub policy: Option<Policy>,
    pub samples: Option<u32>,
    pub horizon_s: Option<f64>,
    pub threshold_s: Option<f64>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::parse(&text, &base).map_err(|e| match e {
            ScenarioError::Parse { message, .. } => ScenarioError::Parse { path: path.display().to_string(), message },
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        let mut s: Scenario = serde_json::from_str(text)
            .map_err(|e| ScenarioError::Parse { path: "<scenario>".into(), message: e.to_string() })?;
        s.base_dir = base_dir.to_path_buf();
        Ok(s)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.seeds {
            self.seeds = (0..n).collect();
        }
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(p) = o.policy {
            self.scheduler.policy = p;
        }
        if let Some(k) = o.samples {
            self.scheduler.samples = k;
        }
        if let Some(h) = o.horizon_s {
            self.horizon_s = h;
        }
        if let Some(t) = o.threshold_s {
            self.threshold_s = t;
        }
    }

    fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads every referenced file and checks the settings.
    pub fn prepare(&self) -> Result<Prepared, ScenarioError> {
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return Err(ScenarioError::Invalid("horizon_s must be positive".into()));
        }
        if !(self.threshold_s >= 0.0) {
            return Err(ScenarioError::Invalid("threshold_s must be >= 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(ScenarioError::Invalid("at least one seed is required".into()));
        }
        let topology = match &self.topology {
            TopologySource::Path(p) => {
                let p = self.resolve_path(p);
                load_topology(&p).map_err(|e| ScenarioError::Input(e.to_string()))?
            }
            TopologySource::Inline(nodes) => nodes.clone(),
            TopologySource::Uniform { uniform: u } => {
                crate::cluster::uniform_topology(u.count, u.gpu_class.clone(), u.gpus, u.cpu_millicores, u.mem_mb)
            }
        };
        let workload = match &self.workload {
            WorkloadSource::Trace { trace } => {
                let p = self.resolve_path(trace);
                let specs = load_trace(&p).map_err(|e| match e {
                    WorkloadError::Io { .. } => ScenarioError::Input(e.to_string()),
                    e => ScenarioError::Parse { path: p.display().to_string(), message: e.to_string() },
                })?;
                PreparedWorkload::Fixed(specs)
            }
            WorkloadSource::Jobs { jobs } => {
                let text: String = jobs.iter().map(|j| format!("{j}\n")).collect();
                PreparedWorkload::Fixed(parse_trace(&text).map_err(|e| ScenarioError::Invalid(e.to_string()))?)
            }
            WorkloadSource::Generate { generate, seed: Some(s) } => PreparedWorkload::Fixed(
                generate_synthetic(generate, *s).map_err(|e| ScenarioError::Invalid(e.to_string()))?,
            ),
            WorkloadSource::Generate { generate, seed: None } => {
                // Surface generator errors now rather than per run.
                generate_synthetic(generate, 0).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                PreparedWorkload::PerSeed(generate.clone())
            }
        };
        let faults = match &self.faults {
            FaultSource::Path(p) => {
                let p = self.resolve_path(p);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| ScenarioError::Io { path: p.display().to_string(), message: e.to_string() })?;
                serde_json::from_str(&text)
                    .map_err(|e| ScenarioError::Parse { path: p.display().to_string(), message: e.to_string() })?
            }
            FaultSource::Inline(plan) => plan.clone(),
        };
        faults.validate().map_err(ScenarioError::Invalid)?;
        let config = SimConfig {
            scheduler: self.scheduler.clone(),
            lifecycle: self.lifecycle.clone(),
            engine: self.engine.clone(),
            horizon: SimTime::from_secs_f64(self.horizon_s),
        };
        config.validate().map_err(ScenarioError::Invalid)?;
        Ok(Prepared {
            name: self.name.clone(),
            topology,
            workload,
            config,
            faults,
            seeds: self.seeds.clone(),
            threshold: SimDuration::from_secs_f64(self.threshold_s),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PreparedWorkload {
    Fixed(Vec<JobSpec>),
    PerSeed(WorkloadConfig),
}

/// A scenario with every file loaded, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub name: String,
    pub topology: Vec<NodeSpec>,
    pub workload: PreparedWorkload,
    pub config: SimConfig,
    pub faults: FaultPlan,
    pub seeds: Vec<u64>,
    pub threshold: SimDuration,
}

impl Prepared {
    pub fn workload_for(&self, seed: u64) -> Result<Vec<JobSpec>, SimError> {
        match &self.workload {
            PreparedWorkload::Fixed(specs) => Ok(specs.clone()),
            PreparedWorkload::PerSeed(cfg) => generate_synthetic(cfg, seed).map_err(|e| SimError::Config(e.to_string())),
        }
    }

    pub fn run(&self, seed: u64) -> Result<SimResult, SimError> {
        sim::run(&self.topology, &self.workload_for(seed)?, &self.config, &self.faults, seed)
    }

    /// Runs every scenario seed in parallel, keeping seed order.
    pub fn run_all(&self) -> Vec<Result<SimResult, SimError>> {
        match &self.workload {
            PreparedWorkload::Fixed(specs) => sim::run_batch(&self.topology, specs, &self.config, &self.faults, &self.seeds),
            PreparedWorkload::PerSeed(_) => {
                use rayon::prelude::*;
                self.seeds.par_iter().map(|&s| self.run(s)).collect()
            }
        }
    }
}
