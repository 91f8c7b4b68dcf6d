//! Queues in front of the placement policies.
//!
//! Under the gang policy whole jobs wait in an FCFS queue and are placed
//! atomically. Under the pod-at-a-time policies every learner pod waits in
//! its own queue entry and is placed greedily when some node fits it, so a
//! job may end up partially placed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::cluster::{Cluster, NodeId, ResourceVector};
use crate::rng::{substream, SimRng, Substream};
use crate::time::SimTime;
use crate::workload::Gang;

use super::filter::schedule_pod;
use super::gang::{schedule_gang, Binding};
use super::{PodOrdering, PodRequest, SchedulerConfig};

/// One decision of a dispatch pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub job_id: String,
    pub learner: u32,
    pub node: NodeId,
    /// `Reserve` when the pod still has to be created by the deployer.
    #[serde(skip)]
    pub binding: Binding,
}

/// A queued request to place `learners` of one job.
#[derive(Debug, Clone)]
pub struct QueuedJob {
    pub gang: Gang,
    pub learners: Vec<u32>,
    pub submit_time: SimTime,
    /// Recovery work goes before new jobs.
    pub head: bool,
    /// Replacement pods already exist, so they are bound directly.
    pub binding: Binding,
    seq: u64,
}

/// FCFS with the largest gang first among equal submit times.
pub fn fcfs_cmp(a: &QueuedJob, b: &QueuedJob) -> Ordering {
    b.head
        .cmp(&a.head)
        .then(a.submit_time.cmp(&b.submit_time))
        .then(b.gang.gang_size.cmp(&a.gang.gang_size))
        .then(a.gang.gang_id.cmp(&b.gang.gang_id))
        .then(a.seq.cmp(&b.seq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct PodKey {
    tier: u8,
    submit: SimTime,
    primary: u64,
    secondary: u64,
    seq: u64,
}

#[derive(Debug, Clone)]
struct PodEntry {
    job_id: String,
    learner: u32,
    demand: ResourceVector,
}

/// Outcome of one dispatch pass.
#[derive(Debug, Clone, Default)]
pub struct DispatchPass {
    pub placements: Vec<Placement>,
    /// Jobs that were tried and did not fit.
    pub blocked: Vec<String>,
}

pub struct Dispatcher {
    config: SchedulerConfig,
    jobs: Vec<QueuedJob>,
    pods: BTreeMap<PodKey, PodEntry>,
    window: f64,
    rank: u64,
    seq: u64,
    sched_rng: SimRng,
    order_rng: SimRng,
}

impl Dispatcher {
    pub fn new(config: SchedulerConfig, seed: u64) -> Self {
        let mut order_rng = substream(seed, Substream::PodOrdering);
        let window = match config.pod_ordering {
            PodOrdering::Interleaved { mean_window_jobs } if mean_window_jobs > 0.0 => {
                Exp::new(1.0 / mean_window_jobs).expect("positive rate").sample(&mut order_rng)
            }
            _ => 0.0,
        };
        Dispatcher {
            config,
            jobs: Vec::new(),
            pods: BTreeMap::new(),
            window,
            rank: 0,
            seq: 0,
            sched_rng: substream(seed, Substream::Scheduling),
            order_rng,
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    /// The interleaving window drawn for this run, in job slots.
    pub fn window(&self) -> f64 {
        self.window
    }

    /// Queues a new job (all learners, capacity to be reserved).
    pub fn enqueue_job(&mut self, gang: &Gang, submit_time: SimTime) {
        let learners: Vec<u32> = (0..gang.gang_size).collect();
        self.push(gang, learners, submit_time, false, Binding::Reserve);
    }

    /// Queues a job ahead of new arrivals, e.g. after an aborted deploy.
    pub fn enqueue_job_at_head(&mut self, gang: &Gang, submit_time: SimTime) {
        let learners: Vec<u32> = (0..gang.gang_size).collect();
        self.push(gang, learners, submit_time, true, Binding::Reserve);
    }

    /// Queues replacement pods for evicted learners, ahead of new arrivals.
    pub fn enqueue_replacements(&mut self, gang: &Gang, learners: &[u32], submit_time: SimTime) {
        if !learners.is_empty() {
            self.push(gang, learners.to_vec(), submit_time, true, Binding::Allocate);
        }
    }

    fn push(&mut self, gang: &Gang, learners: Vec<u32>, submit_time: SimTime, head: bool, binding: Binding) {
        let rank = self.rank;
        self.rank += 1;
        if self.config.policy.is_gang() {
            self.seq += 1;
            self.jobs.push(QueuedJob { gang: gang.clone(), learners, submit_time, head, binding, seq: self.seq });
            return;
        }
        let tier = if head { 0 } else { 1 };
        for learner in learners {
            self.seq += 1;
            let (primary, secondary) = match self.config.pod_ordering {
                PodOrdering::RoundRobin => (learner as u64, rank),
                PodOrdering::Interleaved { .. } => {
                    let delay = if self.window > 0.0 { self.order_rng.random_range(0.0..self.window) } else { 0.0 };
                    (((rank as f64 + delay) * 1e6) as u64, learner as u64)
                }
                PodOrdering::Fifo => (rank, learner as u64),
            };
            let key = PodKey { tier, submit: submit_time, primary, secondary, seq: self.seq };
            self.pods.insert(
                key,
                PodEntry { job_id: gang.gang_id.clone(), learner, demand: gang.per_pod_demand.clone() },
            );
        }
    }

    /// Drops every queued request of `job_id`; returns how many pods were dropped.
    pub fn remove_job(&mut self, job_id: &str) -> usize {
        let mut n = 0;
        self.jobs.retain(|j| {
            let keep = j.gang.gang_id != job_id;
            if !keep {
                n += j.learners.len();
            }
            keep
        });
        self.pods.retain(|_, p| {
            let keep = p.job_id != job_id;
            if !keep {
                n += 1;
            }
            keep
        });
        n
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty() && self.pods.is_empty()
    }

    /// Pods still waiting for a node.
    pub fn pending_pods(&self) -> usize {
        self.jobs.iter().map(|j| j.learners.len()).sum::<usize>() + self.pods.len()
    }

    pub fn pending_for(&self, job_id: &str) -> usize {
        self.jobs.iter().filter(|j| j.gang.gang_id == job_id).map(|j| j.learners.len()).sum::<usize>()
            + self.pods.values().filter(|p| p.job_id == job_id).count()
    }

    /// Runs one scheduler pass over the queue.
    pub fn dispatch(&mut self, cluster: &mut Cluster) -> DispatchPass {
        match self.config.policy.pod_scoring() {
            None => self.dispatch_gangs(cluster),
            Some(scoring) => {
                let mut pass = DispatchPass::default();
                // Demands that already failed in this pass cannot fit later in it.
                let mut failed: BTreeSet<(String, u32, u64, u64)> = BTreeSet::new();
                let keys: Vec<PodKey> = self.pods.keys().copied().collect();
                for key in keys {
                    let entry = &self.pods[&key];
                    let sig = (
                        entry.demand.gpu_class.as_str().to_owned(),
                        entry.demand.gpus,
                        entry.demand.cpu,
                        entry.demand.mem,
                    );
                    if failed.contains(&sig) {
                        continue;
                    }
                    let req = PodRequest {
                        gang_id: entry.job_id.clone(),
                        learner_index: entry.learner,
                        demand: entry.demand.clone(),
                    };
                    match schedule_pod(&req, cluster, scoring) {
                        Ok(node) => {
                            let e = self.pods.remove(&key).expect("key present");
                            pass.placements.push(Placement {
                                job_id: e.job_id,
                                learner: e.learner,
                                node,
                                binding: Binding::Allocate,
                            });
                        }
                        Err(_) => {
                            failed.insert(sig);
                            if !pass.blocked.contains(&req.gang_id) {
                                pass.blocked.push(req.gang_id);
                            }
                        }
                    }
                }
                pass
            }
        }
    }

    fn dispatch_gangs(&mut self, cluster: &mut Cluster) -> DispatchPass {
        let mut pass = DispatchPass::default();
        self.jobs.sort_by(fcfs_cmp);
        let mut i = 0;
        let mut blocked = 0;
        while i < self.jobs.len() && blocked < self.config.max_queue_peek {
            let job = &self.jobs[i];
            match schedule_gang(&job.gang, &job.learners, cluster, self.config.samples, job.binding, &mut self.sched_rng)
            {
                Ok(assignment) => {
                    let job = self.jobs.remove(i);
                    pass.placements.extend(assignment.placements.into_iter().map(|(learner, node)| Placement {
                        job_id: job.gang.gang_id.clone(),
                        learner,
                        node,
                        binding: job.binding,
                    }));
                }
                Err(_) => {
                    pass.blocked.push(job.gang.gang_id.clone());
                    blocked += 1;
                    i += 1;
                }
            }
        }
        pass
    }
}
