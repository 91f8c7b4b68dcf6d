//! The Guardian: a per-job delegate that deploys a job in five steps and
//! rolls back every completed step when one of them crashes, so that a
//! half-deployed job never keeps resources (no zombies).

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, ClusterError, NodeId, PodRef};
use crate::store::{LeaseId, Store};
use crate::time::{SimDuration, SimTime};
use crate::workload::Gang;

use super::{job_prefix, learner_status_key, JobRecord, JobStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeployStep {
    ReservePlacements,
    CreateVolumes,
    CreateHelpers,
    CreateLearners,
    ApplyNetworkPolicy,
}

impl DeployStep {
    pub const ALL: [DeployStep; 5] = [
        DeployStep::ReservePlacements,
        DeployStep::CreateVolumes,
        DeployStep::CreateHelpers,
        DeployStep::CreateLearners,
        DeployStep::ApplyNetworkPolicy,
    ];

    /// 1-based position in the deploy sequence.
    pub fn number(self) -> u32 {
        self as u32 + 1
    }
}

/// Capacity the scheduler handed to the Guardian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grant {
    /// Held as reservations; the Guardian binds the pods in step 1.
    Reserved(Vec<(u32, NodeId)>),
    /// Pods already bound by a pod-at-a-time scheduler.
    Bound(Vec<(u32, NodeId)>),
}

impl Grant {
    pub fn placements(&self) -> &[(u32, NodeId)] {
        match self {
            Grant::Reserved(p) | Grant::Bound(p) => p,
        }
    }
}

/// Injected crash: `job_id` dies right before executing `step` (1-based)
/// on deploy `attempt` (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployCrash {
    pub job_id: String,
    pub attempt: u32,
    pub step: u32,
}

impl DeployCrash {
    pub fn hits(crashes: &[DeployCrash], job_id: &str, attempt: u32, step: DeployStep) -> bool {
        crashes.iter().any(|c| c.job_id == job_id && c.attempt == attempt && c.step == step.number())
    }
}

/// One in-flight deploy attempt.
#[derive(Debug, Clone)]
pub struct Deployment {
    gang: Gang,
    grant: Grant,
    done: Vec<DeployStep>,
    leases: Vec<(u32, LeaseId)>,
    lease_ttl: SimDuration,
}

impl Deployment {
    pub fn new(gang: Gang, grant: Grant, lease_ttl: SimDuration) -> Self {
        Deployment { gang, grant, done: Vec::new(), leases: Vec::new(), lease_ttl }
    }

    pub fn job_id(&self) -> &str {
        &self.gang.gang_id
    }

    pub fn grant(&self) -> &Grant {
        &self.grant
    }

    pub fn next_step(&self) -> Option<DeployStep> {
        DeployStep::ALL.get(self.done.len()).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.next_step().is_none()
    }

    /// Learner liveness leases created in step 4.
    pub fn leases(&self) -> &[(u32, LeaseId)] {
        &self.leases
    }

    fn key(&self, suffix: &str) -> String {
        format!("{}{suffix}", job_prefix(&self.gang.gang_id))
    }

    /// Executes the next step.
    pub fn advance(&mut self, cluster: &mut Cluster, store: &mut Store, now: SimTime) -> Result<DeployStep, ClusterError> {
        let step = self.next_step().expect("deployment already complete");
        let id = self.gang.gang_id.clone();
        match step {
            DeployStep::ReservePlacements => {
                if let Grant::Reserved(p) = &self.grant {
                    for (i, &(l, n)) in p.iter().enumerate() {
                        if let Err(e) = cluster.allocate(n, PodRef::new(id.clone(), l), &self.gang.per_pod_demand) {
                            for &(l, n) in &p[..i] {
                                self.unbind(cluster, l, n);
                            }
                            return Err(e);
                        }
                    }
                }
                let doc: Vec<String> = self.grant.placements().iter().map(|(l, n)| format!("{l}:{}", n.0)).collect();
                store.put(&self.key("placements"), doc.join(","), None).expect("small value");
            }
            DeployStep::CreateVolumes => {
                store.put(&self.key("volume"), "BOUND", None).expect("small value");
            }
            DeployStep::CreateHelpers => {
                store.put(&self.key("helper/status"), "READY", None).expect("small value");
            }
            DeployStep::CreateLearners => {
                for &(l, _) in self.grant.placements() {
                    let lease = store.grant_lease(self.lease_ttl, now).expect("ttl > 0");
                    store.put(&learner_status_key(&id, l), JobStatus::Deploying.as_str(), Some(lease)).expect("lease");
                    self.leases.push((l, lease));
                }
            }
            DeployStep::ApplyNetworkPolicy => {
                store.put(&self.key("netpol"), "APPLIED", None).expect("small value");
            }
        }
        self.done.push(step);
        Ok(step)
    }

    /// Releases a bound pod and puts its capacity back into the reservation.
    fn unbind(&self, cluster: &mut Cluster, learner: u32, node: NodeId) {
        let pod = PodRef::new(self.gang.gang_id.clone(), learner);
        let bound = cluster.node(node).pods.iter().any(|(p, _)| *p == pod);
        if bound {
            cluster.release(node, &pod, &self.gang.per_pod_demand).expect("bound pod");
            // Fails only when the node is down; the caller then drops the grant.
            let _ = cluster.reserve(node, &self.gang.gang_id, &self.gang.per_pod_demand);
        }
    }

    /// Undoes every completed step in reverse order.
    pub fn rollback(&mut self, cluster: &mut Cluster, store: &mut Store) {
        while let Some(step) = self.done.pop() {
            match step {
                DeployStep::ReservePlacements => {
                    if let Grant::Reserved(p) = &self.grant {
                        for &(l, n) in p.iter().rev() {
                            self.unbind(cluster, l, n);
                        }
                    }
                    store.delete(&self.key("placements"));
                }
                DeployStep::CreateVolumes => {
                    store.delete(&self.key("volume"));
                }
                DeployStep::CreateHelpers => {
                    store.delete(&self.key("helper/status"));
                }
                DeployStep::CreateLearners => {
                    for (_, lease) in self.leases.drain(..) {
                        store.revoke(lease);
                    }
                }
                DeployStep::ApplyNetworkPolicy => {
                    store.delete(&self.key("netpol"));
                }
            }
        }
    }

    /// Rolls back and hands every unit of granted capacity back to the cluster.
    pub fn abandon(mut self, cluster: &mut Cluster, store: &mut Store) {
        self.rollback(cluster, store);
        let id = self.gang.gang_id.clone();
        cluster.cancel_reservations(&id);
        if let Grant::Bound(p) = &self.grant {
            for &(l, n) in p {
                let pod = PodRef::new(id.clone(), l);
                if cluster.node(n).pods.iter().any(|(q, _)| *q == pod) {
                    cluster.release(n, &pod, &self.gang.per_pod_demand).expect("bound pod");
                }
            }
        }
        store.delete_prefix(&job_prefix(&id));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum AttemptResult {
    Deployed { attempt: u32 },
    RolledBack { attempt: u32, crashed_at: DeployStep },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DeployOutcome {
    Deployed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeployReport {
    pub attempts: Vec<AttemptResult>,
    pub outcome: DeployOutcome,
    /// Learner leases of the successful attempt.
    pub leases: Vec<(u32, LeaseId)>,
}

impl DeployReport {
    /// True when at least one attempt was rolled back before the final outcome.
    pub fn retried(&self) -> bool {
        self.attempts.iter().any(|a| matches!(a, AttemptResult::RolledBack { .. }))
    }
}

/// Runs the whole deploy sequence at one instant: attempts, rollbacks and
/// retries until the job is deployed or has used `max_retries` retries.
#[allow(clippy::too_many_arguments)]
pub fn guardian_deploy(
    job: &mut JobRecord,
    grant: Grant,
    cluster: &mut Cluster,
    store: &mut Store,
    crashes: &[DeployCrash],
    max_retries: u32,
    lease_ttl: SimDuration,
    now: SimTime,
) -> DeployReport {
    let gang = job.spec.gang();
    job.transition(JobStatus::Deploying, now).expect("deploy starts from QUEUED");
    let mut attempts = Vec::new();
    loop {
        job.deploy_attempts += 1;
        let attempt = job.deploy_attempts;
        let mut d = Deployment::new(gang.clone(), grant.clone(), lease_ttl);
        let mut crashed = None;
        while let Some(step) = d.next_step() {
            if DeployCrash::hits(crashes, &gang.gang_id, attempt, step) {
                crashed = Some(step);
                break;
            }
            d.advance(cluster, store, now).expect("granted capacity is available");
        }
        match crashed {
            None => {
                attempts.push(AttemptResult::Deployed { attempt });
                job.placements = grant.placements().iter().copied().collect();
                job.first_placed.get_or_insert(now);
                job.transition(JobStatus::Downloading, now).expect("legal");
                return DeployReport { attempts, outcome: DeployOutcome::Deployed, leases: d.leases().to_vec() };
            }
            Some(step) => {
                attempts.push(AttemptResult::RolledBack { attempt, crashed_at: step });
                if attempt > max_retries {
                    d.abandon(cluster, store);
                    job.placements.clear();
                    job.transition(JobStatus::Failed, now).expect("legal");
                    return DeployReport { attempts, outcome: DeployOutcome::Failed, leases: Vec::new() };
                }
                d.rollback(cluster, store);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{uniform_topology, GpuClass};
    use crate::sched::{schedule_gang, Binding};
    use crate::rng::{substream, Substream};
    use crate::workload::JobSpec;

    fn job(id: &str, learners: u32) -> JobRecord {
        JobRecord::new(JobSpec {
            job_id: id.into(),
            submit_time: SimTime::ZERO,
            learners,
            gpus_per_learner: 1,
            gpu_class: GpuClass::K80,
            cpu_per_learner: 4000,
            mem_per_learner: 24 * 1024,
            work_duration: SimDuration::from_secs(100),
            checkpoint_interval: SimDuration::ZERO,
            sync: true,
        })
    }

    fn setup(learners: u32) -> (Cluster, Store, JobRecord, Grant) {
        let mut c = Cluster::new(&uniform_topology(2, GpuClass::K80, 4, 64_000, 256 * 1024)).unwrap();
        let j = job("j1", learners);
        let a = schedule_gang(&j.spec.gang(), &(0..learners).collect::<Vec<_>>(), &mut c, 8, Binding::Reserve,
            &mut substream(1, Substream::Scheduling))
        .unwrap();
        (c, Store::new(), j, Grant::Reserved(a.placements))
    }

    const TTL: SimDuration = SimDuration::from_secs(30);

    #[test]
    fn clean_deploy() {
        let (mut c, mut s, mut j, g) = setup(2);
        let r = guardian_deploy(&mut j, g, &mut c, &mut s, &[], 3, TTL, SimTime::ZERO);
        assert_eq!(r.outcome, DeployOutcome::Deployed);
        assert_eq!(j.deploy_attempts, 1);
        assert_eq!(j.status, JobStatus::Downloading);
        assert_eq!(c.allocated_gpus(), 2);
        assert_eq!(c.reserved_gpus(), 0);
        assert_eq!(r.leases.len(), 2);
        assert!(s.get_str("/jobs/j1/netpol").is_some());
    }

    #[test]
    fn crash_at_step_three_then_retry() {
        let (mut c, mut s, mut j, g) = setup(2);
        let crash = [DeployCrash { job_id: "j1".into(), attempt: 1, step: 3 }];
        let r = guardian_deploy(&mut j, g, &mut c, &mut s, &crash, 3, TTL, SimTime::ZERO);
        assert!(r.retried());
        assert_eq!(r.attempts[0], AttemptResult::RolledBack { attempt: 1, crashed_at: DeployStep::CreateHelpers });
        assert_eq!(r.outcome, DeployOutcome::Deployed);
        assert_eq!(c.allocated_gpus(), 2);
        assert_eq!(c.reserved_gpus(), 0);
        c.check_invariants().unwrap();
    }

    #[test]
    fn crashes_every_attempt_fails_clean() {
        let (mut c, mut s, mut j, g) = setup(3);
        let crash: Vec<_> = (1..=4).map(|a| DeployCrash { job_id: "j1".into(), attempt: a, step: 5 }).collect();
        let r = guardian_deploy(&mut j, g, &mut c, &mut s, &crash, 3, TTL, SimTime::ZERO);
        assert_eq!(r.outcome, DeployOutcome::Failed);
        assert_eq!(r.attempts.len(), 4);
        assert_eq!(j.status, JobStatus::Failed);
        assert_eq!(c.allocated_gpus() + c.reserved_gpus(), 0);
        assert!(s.is_empty());
        assert!(j.check(3).is_ok());
    }

    #[test]
    fn rollback_restores_exact_state() {
        let (mut c, mut s, j, g) = setup(2);
        let before = c.clone();
        let mut d = Deployment::new(j.spec.gang(), g, TTL);
        for _ in 0..4 {
            d.advance(&mut c, &mut s, SimTime::ZERO).unwrap();
        }
        d.rollback(&mut c, &mut s);
        assert_eq!(c.nodes(), before.nodes());
        assert!(s.is_empty());
    }
}
