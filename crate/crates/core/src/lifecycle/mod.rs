//! Job lifecycle: status machine, per-job records, controller aggregation,
//! checkpoint/restart accounting and component recovery delays. The
//! Guardian's deploy sequence lives in [`guardian`].

pub mod guardian;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Eviction, NodeId};
use crate::store::Store;
use crate::time::{SimDuration, SimTime};
use crate::workload::JobSpec;

pub use guardian::{
    guardian_deploy, AttemptResult, DeployCrash, DeployOutcome, DeployReport, DeployStep, Deployment, Grant,
};

/// Timing and retry parameters of the job lifecycle. All durations in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifecycleConfig {
    /// Duration of each of the five deploy steps.
    pub deploy_step_s: f64,
    pub download_s: f64,
    pub store_s: f64,
    pub max_deploy_retries: u32,
    /// Learner liveness lease.
    pub lease_ttl_s: f64,
    /// How long replacement learners may wait before the whole job is requeued.
    pub replacement_grace_s: f64,
    /// Pause added after every checkpoint.
    pub checkpoint_cost_s: f64,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        LifecycleConfig {
            deploy_step_s: 0.5,
            download_s: 60.0,
            store_s: 60.0,
            max_deploy_retries: 3,
            lease_ttl_s: 30.0,
            replacement_grace_s: 900.0,
            checkpoint_cost_s: 0.0,
        }
    }
}

impl LifecycleConfig {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("deploy_step_s", self.deploy_step_s),
            ("download_s", self.download_s),
            ("store_s", self.store_s),
            ("lease_ttl_s", self.lease_ttl_s),
            ("replacement_grace_s", self.replacement_grace_s),
            ("checkpoint_cost_s", self.checkpoint_cost_s),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a finite non-negative number"));
            }
        }
        if self.lease_ttl_s < 0.001 {
            return Err("lease_ttl_s must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Queued,
    Deploying,
    Downloading,
    Processing,
    Storing,
    Completed,
    Failed,
    Halted,
    Resumed,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Queued => "QUEUED",
            JobStatus::Deploying => "DEPLOYING",
            JobStatus::Downloading => "DOWNLOADING",
            JobStatus::Processing => "PROCESSING",
            JobStatus::Storing => "STORING",
            JobStatus::Completed => "COMPLETED",
            JobStatus::Failed => "FAILED",
            JobStatus::Halted => "HALTED",
            JobStatus::Resumed => "RESUMED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Completed | JobStatus::Failed)
    }

    /// Whether the job's learners are (supposed to be) running.
    pub fn is_running(self) -> bool {
        matches!(
            self,
            JobStatus::Downloading | JobStatus::Processing | JobStatus::Storing | JobStatus::Halted | JobStatus::Resumed
        )
    }

    pub fn can_transition(self, to: JobStatus) -> bool {
        use JobStatus::*;
        if self.is_terminal() {
            return false;
        }
        matches!(
            (self, to),
            (Queued, Deploying)
                | (Deploying, Downloading)
                | (Downloading, Processing)
                | (Processing, Storing)
                | (Storing, Completed)
                | (Processing, Halted)
                | (Halted, Resumed)
                | (Resumed, Processing)
                | (_, Failed)
                | (_, Queued)
        )
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use JobStatus::*;
        Ok(match s {
            "QUEUED" => Queued,
            "DEPLOYING" => Deploying,
            "DOWNLOADING" => Downloading,
            "PROCESSING" => Processing,
            "STORING" => Storing,
            "COMPLETED" => Completed,
            "FAILED" => Failed,
            "HALTED" => Halted,
            "RESUMED" => Resumed,
            other => return Err(format!("unknown job status {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("job {job_id}: illegal transition {from} -> {to}")]
    IllegalTransition { job_id: String, from: JobStatus, to: JobStatus },
    #[error("unknown component {0:?} (expected API, LCM, Guardian, Helper or Learner)")]
    UnknownComponent(String),
}

/// Simulator-side state of one job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub spec: JobSpec,
    pub status: JobStatus,
    pub history: Vec<(SimTime, JobStatus)>,
    /// Learners currently bound to a node.
    pub placements: BTreeMap<u32, NodeId>,
    /// Completed work.
    pub progress: SimDuration,
    /// Work captured by the newest checkpoint.
    pub last_checkpoint: SimDuration,
    pub deploy_attempts: u32,
    /// Learner restarts after evictions.
    pub restarts: u32,
    /// Work discarded by rewinds to a checkpoint, summed over the run.
    pub lost_work: SimDuration,
    /// Times the whole job went back to the queue after losing its placement.
    pub requeues: u32,
    /// When all learners were first placed.
    pub first_placed: Option<SimTime>,
}

impl JobRecord {
    pub fn new(spec: JobSpec) -> Self {
        let t = spec.submit_time;
        JobRecord {
            spec,
            status: JobStatus::Queued,
            history: vec![(t, JobStatus::Queued)],
            placements: BTreeMap::new(),
            progress: SimDuration::ZERO,
            last_checkpoint: SimDuration::ZERO,
            deploy_attempts: 0,
            restarts: 0,
            lost_work: SimDuration::ZERO,
            requeues: 0,
            first_placed: None,
        }
    }

    pub fn job_id(&self) -> &str {
        &self.spec.job_id
    }

    /// Moves to `to` and appends to the history; a no-op when already there.
    pub fn transition(&mut self, to: JobStatus, now: SimTime) -> Result<(), LifecycleError> {
        if self.status == to {
            return Ok(());
        }
        if !self.status.can_transition(to) {
            return Err(LifecycleError::IllegalTransition {
                job_id: self.spec.job_id.clone(),
                from: self.status,
                to,
            });
        }
        self.status = to;
        self.history.push((now, to));
        Ok(())
    }

    pub fn placed(&self) -> u32 {
        self.placements.len() as u32
    }

    pub fn is_fully_placed(&self) -> bool {
        self.placed() == self.spec.learners
    }

    /// Time from submission to the first complete placement.
    pub fn wait_time(&self) -> Option<SimDuration> {
        self.first_placed.map(|t| t.since(self.spec.submit_time))
    }

    /// Checks the record's internal invariants.
    pub fn check(&self, max_deploy_retries: u32) -> Result<(), String> {
        let id = &self.spec.job_id;
        if !(self.last_checkpoint <= self.progress && self.progress <= self.spec.work_duration) {
            return Err(format!("job {id}: checkpoint/progress out of order"));
        }
        if self.history.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(format!("job {id}: history not time ordered"));
        }
        if self.history.last().map(|h| h.1) != Some(self.status) {
            return Err(format!("job {id}: history does not end in current status"));
        }
        if self.deploy_attempts > max_deploy_retries + 1 {
            return Err(format!("job {id}: {} deploy attempts", self.deploy_attempts));
        }
        Ok(())
    }
}

/// Captures the current progress. Returns false when there is nothing new
/// to save or checkpointing is disabled.
pub fn take_checkpoint(job: &mut JobRecord) -> bool {
    if job.spec.checkpoint_interval.is_zero() || job.last_checkpoint == job.progress {
        return false;
    }
    job.last_checkpoint = job.progress;
    true
}

/// Rewinds to the newest checkpoint and returns the discarded work.
pub fn rewind_to_checkpoint(job: &mut JobRecord) -> SimDuration {
    let lost = job.progress - job.last_checkpoint;
    job.progress = job.last_checkpoint;
    job.lost_work += lost;
    lost
}

/// What the controller concluded from the learner status keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControllerVerdict {
    /// Aggregated status (possibly unchanged).
    Status(JobStatus),
    /// Some learners reported FAILED; recovery must start. Job status is kept.
    Recover { failed: Vec<u32> },
    /// Some learner keys are missing; wait for liveness to resolve.
    Unknown { missing: Vec<u32> },
}

pub fn learner_status_key(job_id: &str, learner: u32) -> String {
    format!("/jobs/{job_id}/learner/{learner}/status")
}

pub fn job_prefix(job_id: &str) -> String {
    format!("/jobs/{job_id}/")
}

fn phase_rank(s: JobStatus) -> u8 {
    match s {
        JobStatus::Queued => 0,
        JobStatus::Deploying => 1,
        JobStatus::Downloading => 2,
        JobStatus::Halted => 3,
        JobStatus::Resumed => 4,
        JobStatus::Processing => 5,
        JobStatus::Storing => 6,
        JobStatus::Completed => 7,
        JobStatus::Failed => 8,
    }
}

/// Aggregates learner statuses into the job status. The job is only as far
/// along as its slowest learner; history changes only on a real transition.
pub fn controller_tick(job: &mut JobRecord, store: &Store, now: SimTime) -> ControllerVerdict {
    let mut failed = Vec::new();
    let mut missing = Vec::new();
    let mut slowest: Option<JobStatus> = None;
    for i in 0..job.spec.learners {
        match store.get_str(&learner_status_key(&job.spec.job_id, i)).map(JobStatus::from_str) {
            None | Some(Err(_)) => missing.push(i),
            Some(Ok(JobStatus::Failed)) => failed.push(i),
            Some(Ok(s)) => {
                if slowest.is_none_or(|cur| phase_rank(s) < phase_rank(cur)) {
                    slowest = Some(s);
                }
            }
        }
    }
    if !failed.is_empty() {
        return ControllerVerdict::Recover { failed };
    }
    if !missing.is_empty() {
        return ControllerVerdict::Unknown { missing };
    }
    let agg = slowest.unwrap_or(job.status);
    if agg != job.status && job.status.can_transition(agg) {
        job.transition(agg, now).expect("checked");
    }
    ControllerVerdict::Status(job.status)
}

/// Per-job consequence of a node failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecoveryAction {
    /// Evicted learners need replacement pods; `lost_work` was rewound.
    ReplaceLearners { job_id: String, learners: Vec<u32>, lost_work: SimDuration },
    /// The node went down mid-deploy; the attempt is rolled back and the job requeued.
    AbortDeploy { job_id: String },
}

/// Applies evictions to the job records. Progress must already be settled
/// to `now`. Synchronous running jobs rewind to their last checkpoint;
/// asynchronous ones keep their progress.
pub fn handle_node_failure(evictions: &[Eviction], jobs: &mut BTreeMap<String, JobRecord>) -> Vec<RecoveryAction> {
    let mut by_job: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for e in evictions {
        by_job.entry(e.pod.gang.as_str()).or_default().push(e.pod.learner);
    }
    let mut actions = Vec::new();
    for (job_id, mut learners) in by_job {
        let Some(job) = jobs.get_mut(job_id) else { continue };
        learners.sort_unstable();
        if job.status == JobStatus::Deploying {
            actions.push(RecoveryAction::AbortDeploy { job_id: job_id.to_owned() });
            continue;
        }
        for l in &learners {
            job.placements.remove(l);
        }
        let mut lost = SimDuration::ZERO;
        if job.status.is_running() {
            job.restarts += learners.len() as u32;
            if job.spec.sync {
                lost = rewind_to_checkpoint(job);
            }
        }
        actions.push(RecoveryAction::ReplaceLearners { job_id: job_id.to_owned(), learners, lost_work: lost });
    }
    actions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Api,
    Lcm,
    Guardian,
    Helper,
    Learner,
}

impl Component {
    /// Recovery time range in seconds.
    pub fn recovery_range(self) -> (u64, u64) {
        match self {
            Component::Api => (3, 5),
            Component::Lcm => (4, 6),
            Component::Guardian => (1, 2),
            Component::Helper => (3, 4),
            Component::Learner => (10, 20),
        }
    }
}

impl FromStr for Component {
    type Err = LifecycleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "api" => Ok(Component::Api),
            "lcm" => Ok(Component::Lcm),
            "guardian" => Ok(Component::Guardian),
            "helper" => Ok(Component::Helper),
            "learner" => Ok(Component::Learner),
            _ => Err(LifecycleError::UnknownComponent(s.to_owned())),
        }
    }
}

/// Draws a crash-recovery delay uniformly from the component's range.
pub fn component_recovery_delay<R: Rng>(component: Component, rng: &mut R) -> SimDuration {
    let (lo, hi) = component.recovery_range();
    SimDuration::from_millis(rng.random_range(lo * 1000..=hi * 1000))
}

/// Same as [`component_recovery_delay`], by component name.
pub fn recovery_delay_by_name<R: Rng>(name: &str, rng: &mut R) -> Result<SimDuration, LifecycleError> {
    Ok(component_recovery_delay(name.parse()?, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{GpuClass, PodRef, ResourceVector};
    use crate::rng::{substream, Substream};

    fn spec(learners: u32, work: u64, interval: u64) -> JobSpec {
        JobSpec {
            job_id: "j".into(),
            submit_time: SimTime::ZERO,
            learners,
            gpus_per_learner: 1,
            gpu_class: GpuClass::K80,
            cpu_per_learner: 4000,
            mem_per_learner: 24 * 1024,
            work_duration: SimDuration::from_secs(work),
            checkpoint_interval: SimDuration::from_secs(interval),
            sync: true,
        }
    }

    fn secs(s: u64) -> SimDuration {
        SimDuration::from_secs(s)
    }

    #[test]
    fn legal_path_and_illegal_jump() {
        let mut j = JobRecord::new(spec(1, 100, 0));
        for (t, s) in [
            (1, JobStatus::Deploying),
            (2, JobStatus::Downloading),
            (3, JobStatus::Processing),
            (4, JobStatus::Halted),
            (5, JobStatus::Resumed),
            (5, JobStatus::Processing),
            (6, JobStatus::Storing),
            (7, JobStatus::Completed),
        ] {
            j.transition(s, SimTime::from_millis(t * 1000)).unwrap();
        }
        assert_eq!(j.history.len(), 9);
        assert!(j.transition(JobStatus::Queued, SimTime::from_millis(8000)).is_err());
        let mut k = JobRecord::new(spec(1, 100, 0));
        assert!(k.transition(JobStatus::Processing, SimTime::ZERO).is_err());
        assert!(k.transition(JobStatus::Failed, SimTime::ZERO).is_ok());
        assert!(k.check(3).is_ok());
    }

    #[test]
    fn checkpoint_example() {
        let mut j = JobRecord::new(spec(1, 100, 30));
        j.progress = secs(30);
        assert!(take_checkpoint(&mut j));
        assert_eq!(j.last_checkpoint, secs(30));
        assert!(!take_checkpoint(&mut j));
        j.progress = secs(60);
        take_checkpoint(&mut j);
        j.progress = secs(80);
        assert_eq!(rewind_to_checkpoint(&mut j), secs(20));
        assert_eq!(j.progress, secs(60));
        // Failure right after a checkpoint loses nothing.
        take_checkpoint(&mut j);
        assert_eq!(rewind_to_checkpoint(&mut j), SimDuration::ZERO);
    }

    #[test]
    fn no_checkpointing_restarts_from_zero() {
        let mut j = JobRecord::new(spec(1, 100, 0));
        j.progress = secs(80);
        assert!(!take_checkpoint(&mut j));
        assert_eq!(rewind_to_checkpoint(&mut j), secs(80));
        assert_eq!(j.progress, SimDuration::ZERO);
    }

    #[test]
    fn controller_aggregates() {
        let mut store = Store::new();
        let mut j = JobRecord::new(spec(2, 100, 0));
        for s in [JobStatus::Deploying, JobStatus::Downloading] {
            j.transition(s, SimTime::ZERO).unwrap();
        }
        let k0 = learner_status_key("j", 0);
        let k1 = learner_status_key("j", 1);
        store.put(&k0, "PROCESSING", None).unwrap();
        assert_eq!(controller_tick(&mut j, &store, SimTime::ZERO), ControllerVerdict::Unknown { missing: vec![1] });
        store.put(&k1, "DOWNLOADING", None).unwrap();
        assert_eq!(controller_tick(&mut j, &store, SimTime::ZERO), ControllerVerdict::Status(JobStatus::Downloading));
        store.put(&k1, "PROCESSING", None).unwrap();
        let t = SimTime::from_millis(5000);
        assert_eq!(controller_tick(&mut j, &store, t), ControllerVerdict::Status(JobStatus::Processing));
        let len = j.history.len();
        controller_tick(&mut j, &store, t);
        assert_eq!(j.history.len(), len);
        store.put(&k1, "FAILED", None).unwrap();
        assert_eq!(controller_tick(&mut j, &store, t), ControllerVerdict::Recover { failed: vec![1] });
        assert_eq!(j.status, JobStatus::Processing);
    }

    #[test]
    fn node_failure_rewinds_sync_job() {
        let mut j = JobRecord::new(spec(2, 100, 30));
        for s in [JobStatus::Deploying, JobStatus::Downloading, JobStatus::Processing] {
            j.transition(s, SimTime::ZERO).unwrap();
        }
        j.placements.insert(0, NodeId(0));
        j.placements.insert(1, NodeId(1));
        j.progress = secs(80);
        j.last_checkpoint = secs(60);
        let mut jobs = BTreeMap::from([("j".to_string(), j)]);
        let ev = Eviction {
            node: NodeId(1),
            pod: PodRef::new("j", 1),
            demand: ResourceVector::gpus(1, GpuClass::K80),
        };
        let actions = handle_node_failure(&[ev], &mut jobs);
        assert_eq!(
            actions,
            [RecoveryAction::ReplaceLearners { job_id: "j".into(), learners: vec![1], lost_work: secs(20) }]
        );
        let j = &jobs["j"];
        assert_eq!(j.progress, secs(60));
        assert_eq!(j.placed(), 1);
        assert_eq!(j.restarts, 1);
    }

    #[test]
    fn recovery_delays_in_range() {
        let mut rng = substream(9, Substream::Recovery);
        for _ in 0..100 {
            let g = component_recovery_delay(Component::Guardian, &mut rng).as_secs_f64();
            assert!((1.0..=2.0).contains(&g));
            let l = component_recovery_delay(Component::Learner, &mut rng).as_secs_f64();
            assert!((10.0..=20.0).contains(&l));
        }
        assert!(recovery_delay_by_name("scheduler", &mut rng).is_err());
        let a: Vec<_> = {
            let mut r = substream(4, Substream::Recovery);
            (0..5).map(|_| component_recovery_delay(Component::Helper, &mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = substream(4, Substream::Recovery);
            (0..5).map(|_| component_recovery_delay(Component::Helper, &mut r)).collect()
        };
        assert_eq!(a, b);
    }
}
