//! Temporary deadlocks: synchronous jobs whose learners are only partly
//! placed hold GPUs that do no work until the rest of the gang arrives.

use serde::Serialize;

use crate::time::{SimDuration, SimTime};

/// Placement snapshot of one queued job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialPlacement {
    pub job_id: String,
    pub gang_size: u32,
    pub placed: u32,
    pub gpus_per_learner: u32,
    pub sync: bool,
    /// When the job became partially placed, if it currently is.
    pub partial_since: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StuckJob {
    pub job_id: String,
    pub stuck_learners: u32,
    pub idle_gpus: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeadlockReport {
    pub jobs: Vec<StuckJob>,
}

impl DeadlockReport {
    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn deadlocked_learners(&self) -> u32 {
        self.jobs.iter().map(|j| j.stuck_learners).sum()
    }

    pub fn idle_gpus(&self) -> u32 {
        self.jobs.iter().map(|j| j.idle_gpus).sum()
    }
}

/// Reports every synchronous job that has been partially placed for longer
/// than `timeout`.
pub fn detect_deadlocks(jobs: &[PartialPlacement], now: SimTime, timeout: SimDuration) -> DeadlockReport {
    let jobs = jobs
        .iter()
        .filter(|j| j.sync && j.placed > 0 && j.placed < j.gang_size)
        .filter(|j| j.partial_since.is_some_and(|since| now.since(since) > timeout))
        .map(|j| StuckJob {
            job_id: j.job_id.clone(),
            stuck_learners: j.placed,
            idle_gpus: j.placed * j.gpus_per_learner,
        })
        .collect();
    DeadlockReport { jobs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(id: &str, size: u32, placed: u32, since: u64) -> PartialPlacement {
        PartialPlacement {
            job_id: id.into(),
            gang_size: size,
            placed,
            gpus_per_learner: 2,
            sync: true,
            partial_since: Some(SimTime::from_millis(since * 1000)),
        }
    }

    #[test]
    fn worst_case_all_stuck() {
        let jobs: Vec<_> = (0..4).map(|j| part(&format!("j{j}"), 2, 1, 0)).collect();
        let r = detect_deadlocks(&jobs, SimTime::from_millis(601_000), SimDuration::from_secs(600));
        assert_eq!(r.jobs.len(), 4);
        assert_eq!(r.deadlocked_learners(), 4);
        assert_eq!(r.idle_gpus(), 8);
    }

    #[test]
    fn within_timeout_not_reported() {
        let jobs = [part("j", 2, 1, 100)];
        assert!(detect_deadlocks(&jobs, SimTime::from_millis(700_000), SimDuration::from_secs(600)).is_empty());
        assert_eq!(detect_deadlocks(&jobs, SimTime::from_millis(700_001), SimDuration::from_secs(600)).jobs.len(), 1);
    }

    #[test]
    fn full_empty_or_async_ignored() {
        let mut a = part("a", 2, 1, 0);
        a.sync = false;
        let b = part("b", 2, 2, 0);
        let c = part("c", 2, 0, 0);
        let mut d = part("d", 2, 1, 0);
        d.partial_since = None;
        let r = detect_deadlocks(&[a, b, c, d], SimTime::from_millis(10_000_000), SimDuration::ZERO);
        assert!(r.is_empty());
    }
}
