//! What a run produces, plus its file exports.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::lifecycle::JobRecord;
use crate::sched::Policy;
use crate::time::SimTime;

/// One state change worth keeping in the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub t: SimTime,
    pub event: &'static str,
    pub subject: String,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// A deadlock scan that found stuck jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeadlockSample {
    pub t: SimTime,
    pub jobs: u32,
    pub deadlocked_learners: u32,
    pub idle_gpus: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeUtilization {
    pub node: String,
    pub gpus: u32,
    pub busy_gpu_seconds: f64,
    pub utilization_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub seed: u64,
    pub policy: Policy,
    pub horizon: SimTime,
    /// When the loop stopped: the horizon, or earlier once every job finished.
    pub end_time: SimTime,
    pub total_gpus: u32,
    /// In workload order.
    pub jobs: Vec<JobRecord>,
    /// Allocated GPUs after every change.
    pub utilization: Vec<(SimTime, u32)>,
    pub nodes: Vec<NodeUtilization>,
    pub deadlock_samples: Vec<DeadlockSample>,
    pub peak_deadlocked_learners: u32,
    pub peak_idle_gpus: u32,
    /// Most jobs that were running with all learners placed at once.
    pub peak_running_jobs: u32,
    /// Pods removed because their node failed.
    pub pod_evictions: u32,
    /// Pods that stopped for any reason: completion, eviction or requeue.
    pub pod_terminations: u32,
    pub residual_store_keys: usize,
    pub store_revision: u64,
    /// Live store entries and leases when the run stopped.
    pub store_dump: serde_json::Value,
    pub events: Vec<LogEntry>,
}

impl SimResult {
    pub fn idle_gpu_pct_peak(&self) -> f64 {
        pct(self.peak_idle_gpus as f64, self.total_gpus as f64)
    }

    pub fn job(&self, job_id: &str) -> Option<&JobRecord> {
        self.jobs.iter().find(|j| j.spec.job_id == job_id)
    }

    /// One row per job.
    pub fn jobs_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "job_id",
            "submit_s",
            "learners",
            "gpus_per_learner",
            "gpu_class",
            "status",
            "first_placed_s",
            "wait_s",
            "finished_s",
            "progress_s",
            "last_checkpoint_s",
            "deploy_attempts",
            "restarts",
            "lost_work_s",
            "requeues",
        ])
        .expect("in-memory write");
        for j in &self.jobs {
            let finished = j.status.is_terminal().then(|| j.history.last().expect("non-empty").0);
            w.write_record([
                j.spec.job_id.clone(),
                secs(j.spec.submit_time),
                j.spec.learners.to_string(),
                j.spec.gpus_per_learner.to_string(),
                j.spec.gpu_class.to_string(),
                j.status.to_string(),
                j.first_placed.map(secs).unwrap_or_default(),
                j.wait_time().map(|d| format!("{:.3}", d.as_secs_f64())).unwrap_or_default(),
                finished.map(secs).unwrap_or_default(),
                format!("{:.3}", j.progress.as_secs_f64()),
                format!("{:.3}", j.last_checkpoint.as_secs_f64()),
                j.deploy_attempts.to_string(),
                j.restarts.to_string(),
                format!("{:.3}", j.lost_work.as_secs_f64()),
                j.requeues.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn events_jsonl(&self) -> String {
        jsonl(self.events.iter())
    }

    /// `{job_id, t, status}` per status change.
    pub fn status_history_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            job_id: &'a str,
            t: SimTime,
            status: crate::lifecycle::JobStatus,
        }
        jsonl(self.jobs.iter().flat_map(|j| {
            j.history.iter().map(move |&(t, status)| Row { job_id: &j.spec.job_id, t, status })
        }))
    }

    pub fn utilization_csv(&self) -> String {
        let mut out = String::from("t_s,allocated_gpus,utilization_pct\n");
        for &(t, g) in &self.utilization {
            out.push_str(&format!("{},{g},{:.3}\n", secs(t), pct(g as f64, self.total_gpus as f64)));
        }
        out
    }

    /// Writes every export into `dir` and returns the paths written.
    pub fn write_exports(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            ("jobs.csv", self.jobs_csv()),
            ("events.jsonl", self.events_jsonl()),
            ("status_history.jsonl", self.status_history_jsonl()),
            ("utilization.csv", self.utilization_csv()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}

fn secs(t: SimTime) -> String {
    format!("{:.3}", t.as_secs_f64())
}

pub(crate) fn pct(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        100.0 * part / whole
    } else {
        0.0
    }
}

fn jsonl<T: Serialize>(rows: impl Iterator<Item = T>) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r).expect("serializable"));
        out.push('\n');
    }
    out
}
