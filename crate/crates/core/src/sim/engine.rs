//! The event loop.

use std::collections::{BTreeMap, BTreeSet};

use crate::cluster::{Cluster, NodeId, NodeSpec, NodeStatus};
use crate::lifecycle::{
    component_recovery_delay, controller_tick, handle_node_failure, job_prefix, learner_status_key,
    rewind_to_checkpoint, take_checkpoint, Component, ControllerVerdict, DeployCrash, Deployment, Grant, JobRecord,
    JobStatus, RecoveryAction,
};
use crate::rng::{substream, SimRng, Substream};
use crate::sched::{detect_deadlocks, Binding, Dispatcher, PartialPlacement, Placement};
use crate::store::{LeaseId, Store};
use crate::time::{SimDuration, SimTime};
use crate::workload::JobSpec;

use super::event::{EventKind, EventQueue, Phase};
use super::fault::{FaultKind, FaultPlan};
use super::result::{DeadlockSample, LogEntry, NodeUtilization, SimResult};
use super::{SimConfig, SimError};

#[derive(Debug)]
enum RunPhase {
    Idle,
    Deploy(Deployment),
    Download,
    Work,
    Store,
}

#[derive(Debug)]
struct JobRt {
    generation: u64,
    phase: RunPhase,
    /// Learners whose containers are up.
    running: BTreeSet<u32>,
    leases: BTreeMap<u32, LeaseId>,
    /// Evicted learners that are not running again yet.
    awaiting: BTreeSet<u32>,
    /// Evicted learners whose failure was detected and replacement requested.
    requested: BTreeSet<u32>,
    /// Bumped whenever a learner gets a new replacement pod.
    learner_epoch: BTreeMap<u32, u64>,
    replace_since: Option<SimTime>,
    partial_since: Option<SimTime>,
    /// Progress accrues from here (may lie in the future during a checkpoint pause).
    seg_start: SimTime,
    halted: bool,
    deadlock_logged: bool,
}

impl JobRt {
    fn new() -> Self {
        JobRt {
            generation: 0,
            phase: RunPhase::Idle,
            running: BTreeSet::new(),
            leases: BTreeMap::new(),
            awaiting: BTreeSet::new(),
            requested: BTreeSet::new(),
            learner_epoch: BTreeMap::new(),
            replace_since: None,
            partial_since: None,
            seg_start: SimTime::ZERO,
            halted: false,
            deadlock_logged: false,
        }
    }

    fn is_active(&self) -> bool {
        matches!(self.phase, RunPhase::Download | RunPhase::Work | RunPhase::Store) && self.awaiting.is_empty()
    }
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    seed: u64,
    now: SimTime,
    queue: EventQueue,
    cluster: Cluster,
    store: Store,
    dispatcher: Dispatcher,
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    /// Indexed like `ids`.
    records: Vec<JobRecord>,
    rt: Vec<JobRt>,
    crashes: Vec<DeployCrash>,
    recovery_rng: SimRng,
    dispatch_pending_at: Option<SimTime>,
    dirty: bool,
    arrived: usize,
    terminal: usize,
    /// Arrived and not yet terminal.
    live: BTreeSet<usize>,
    /// Jobs with replacement learners outstanding.
    replacing: BTreeSet<usize>,
    log: Vec<LogEntry>,
    utilization: Vec<(SimTime, u32)>,
    busy: Vec<f64>,
    last_alloc: Vec<u32>,
    last_t: SimTime,
    samples: Vec<DeadlockSample>,
    peak_deadlocked: u32,
    peak_idle: u32,
    peak_running: u32,
    pod_evictions: u32,
    pod_terminations: u32,
}

fn dur(secs: f64) -> SimDuration {
    SimDuration::from_secs_f64(secs)
}

pub(super) fn run(
    topology: &[NodeSpec],
    workload: &[JobSpec],
    cfg: &SimConfig,
    faults: &FaultPlan,
    seed: u64,
) -> Result<SimResult, SimError> {
    cfg.validate().map_err(SimError::Config)?;
    faults.validate().map_err(SimError::Config)?;
    let cluster = Cluster::new(topology).map_err(|e| SimError::Config(e.to_string()))?;
    let mut index = BTreeMap::new();
    for (i, j) in workload.iter().enumerate() {
        j.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if !cluster.has_gpu_class(&j.gpu_class) {
            return Err(SimError::Config(format!(
                "job {}: gpu class {} is absent from the topology",
                j.job_id, j.gpu_class
            )));
        }
        if index.insert(j.job_id.clone(), i).is_some() {
            return Err(SimError::Config(format!("duplicate job id {}", j.job_id)));
        }
        if j.submit_time >= cfg.horizon {
            return Err(SimError::Config(format!("job {} is submitted at or after the horizon", j.job_id)));
        }
    }
    let max_attempts = cfg.lifecycle.max_deploy_retries + 1;
    let n_nodes = cluster.len();
    let mut e = Engine {
        cfg,
        seed,
        now: SimTime::ZERO,
        queue: EventQueue::new(),
        dispatcher: Dispatcher::new(cfg.scheduler.clone(), seed),
        ids: workload.iter().map(|j| j.job_id.clone()).collect(),
        index,
        records: workload.iter().map(|j| JobRecord::new(j.clone())).collect(),
        rt: workload.iter().map(|_| JobRt::new()).collect(),
        crashes: faults.deploy_crashes(workload, max_attempts, seed),
        recovery_rng: substream(seed, Substream::Recovery),
        store: Store::new(),
        dispatch_pending_at: None,
        dirty: false,
        arrived: 0,
        terminal: 0,
        live: BTreeSet::new(),
        replacing: BTreeSet::new(),
        log: Vec::new(),
        utilization: vec![(SimTime::ZERO, 0)],
        busy: vec![0.0; n_nodes],
        last_alloc: vec![0; n_nodes],
        last_t: SimTime::ZERO,
        samples: Vec::new(),
        peak_deadlocked: 0,
        peak_idle: 0,
        peak_running: 0,
        pod_evictions: 0,
        pod_terminations: 0,
        cluster,
    };
    e.seed_events(workload, faults)?;
    e.run_loop()?;
    e.finish()
}

impl Engine<'_> {
    fn seed_events(&mut self, workload: &[JobSpec], faults: &FaultPlan) -> Result<(), SimError> {
        let mut order: Vec<usize> = (0..workload.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&workload[a], &workload[b]);
            x.submit_time.cmp(&y.submit_time).then(y.learners.cmp(&x.learners)).then(x.job_id.cmp(&y.job_id))
        });
        for j in order {
            self.queue.push(workload[j].submit_time, EventKind::JobArrival { job: j });
        }
        let horizon = self.cfg.horizon;
        for f in &faults.plan {
            let Some(t) = f.time() else { continue };
            let kind = match f.kind {
                FaultKind::NodeFail => {
                    EventKind::NodeFail { node: self.node(&f.target)?, down: f.down_s.map(dur) }
                }
                FaultKind::NodeRecover => EventKind::NodeRecover { node: self.node(&f.target)? },
                FaultKind::Cordon => EventKind::NodeCordon { node: self.node(&f.target)? },
                FaultKind::Halt => EventKind::UserHalt { job: self.job(&f.target)? },
                FaultKind::Resume => EventKind::UserResume { job: self.job(&f.target)? },
                FaultKind::DeployCrash => continue,
            };
            self.queue.push(t, kind);
        }
        for c in &self.crashes {
            if !self.index.contains_key(&c.job_id) {
                return Err(SimError::Config(format!("deploy-crash targets unknown job {}", c.job_id)));
            }
        }
        for o in faults.sample_outages(self.cluster.len(), horizon, self.seed) {
            self.queue.push(o.at, EventKind::NodeFail { node: NodeId(o.node), down: Some(o.down) });
        }
        self.queue.push(self.now + dur(self.cfg.engine.dispatch_period_s), EventKind::DispatchTick { periodic: true });
        self.queue.push(self.now + dur(self.cfg.engine.deadlock_scan_period_s), EventKind::DeadlockScan);
        self.queue.push(horizon, EventKind::SimEnd);
        Ok(())
    }

    fn node(&self, id: &str) -> Result<NodeId, SimError> {
        self.cluster.lookup(id).map_err(|e| SimError::Config(format!("fault plan: {e}")))
    }

    fn job(&self, id: &str) -> Result<usize, SimError> {
        self.index.get(id).copied().ok_or_else(|| SimError::Config(format!("fault plan: unknown job {id}")))
    }

    fn all_done(&self) -> bool {
        self.arrived == self.ids.len() && self.terminal == self.ids.len()
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        if self.ids.is_empty() {
            return Ok(());
        }
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.cfg.horizon {
                break;
            }
            self.advance_clock(ev.time);
            let end = ev.kind == EventKind::SimEnd;
            self.handle(ev.kind)?;
            self.record_utilization();
            if end || self.all_done() {
                break;
            }
        }
        Ok(())
    }

    fn advance_clock(&mut self, t: SimTime) {
        let dt = t.since(self.last_t).as_secs_f64();
        for (b, &a) in self.busy.iter_mut().zip(&self.last_alloc) {
            *b += a as f64 * dt;
        }
        self.last_t = t;
        self.now = t;
    }

    fn record_utilization(&mut self) {
        let mut changed = false;
        for (i, n) in self.cluster.nodes().iter().enumerate() {
            let a = n.allocated.gpus;
            if self.last_alloc[i] != a {
                self.last_alloc[i] = a;
                changed = true;
            }
        }
        if changed {
            let total = self.cluster.allocated_gpus();
            match self.utilization.last_mut() {
                Some(last) if last.0 == self.now => last.1 = total,
                _ => self.utilization.push((self.now, total)),
            }
        }
    }

    fn emit(&mut self, event: &'static str, subject: impl Into<String>, detail: impl Into<String>) {
        self.log.push(LogEntry { t: self.now, event, subject: subject.into(), detail: detail.into() });
    }

    fn rec(&mut self, j: usize) -> &mut JobRecord {
        &mut self.records[j]
    }

    fn set_status(&mut self, j: usize, to: JobStatus) -> Result<(), SimError> {
        let now = self.now;
        let rec = &mut self.records[j];
        let from = rec.status;
        rec.transition(to, now).map_err(|e| SimError::Invariant(e.to_string()))?;
        if from != to {
            if to.is_terminal() {
                self.terminal += 1;
                self.live.remove(&j);
            }
            self.emit("status", self.ids[j].clone(), to.as_str());
        }
        Ok(())
    }

    fn request_dispatch(&mut self) {
        self.dirty = true;
        if self.dispatch_pending_at != Some(self.now) {
            self.dispatch_pending_at = Some(self.now);
            self.queue.push(self.now, EventKind::DispatchTick { periodic: false });
        }
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::JobArrival { job } => {
                self.arrived += 1;
                self.live.insert(job);
                let gang = self.rec(job).spec.gang();
                let submit = self.rec(job).spec.submit_time;
                self.dispatcher.enqueue_job(&gang, submit);
                self.emit("arrival", self.ids[job].clone(), "");
                self.request_dispatch();
            }
            EventKind::DispatchTick { periodic } => {
                if periodic {
                    self.check_grace()?;
                    if !self.all_done() {
                        let next = self.now + dur(self.cfg.engine.dispatch_period_s);
                        self.queue.push(next, EventKind::DispatchTick { periodic: true });
                    }
                } else if self.dispatch_pending_at == Some(self.now) {
                    self.dispatch_pending_at = None;
                }
                if self.dirty {
                    self.dirty = false;
                    self.dispatch()?;
                }
            }
            EventKind::DeployStep { job, generation } => {
                if self.rt[job].generation == generation {
                    self.deploy_step(job)?;
                }
            }
            EventKind::PhaseComplete { job, generation, phase } => self.phase_complete(job, generation, phase)?,
            EventKind::CheckpointDue { job, generation } => {
                if self.rt[job].generation == generation {
                    self.settle(job);
                    let rec = self.rec(job);
                    if take_checkpoint(rec) {
                        let p = rec.progress.as_secs_f64();
                        self.emit("checkpoint", self.ids[job].clone(), format!("{p:.3}"));
                        let cost = dur(self.cfg.lifecycle.checkpoint_cost_s);
                        if !cost.is_zero() {
                            self.rt[job].seg_start = self.now + cost;
                        }
                    }
                    self.schedule_work(job);
                }
            }
            EventKind::NodeFail { node, down } => self.node_fail(node, down)?,
            EventKind::NodeRecover { node } => {
                if self.cluster.node(node).status == NodeStatus::NotReady {
                    self.cluster.recover(node).map_err(|e| SimError::Invariant(e.to_string()))?;
                    self.emit("node-recover", self.cluster.node(node).id.clone(), "");
                    self.request_dispatch();
                }
            }
            EventKind::NodeCordon { node } => {
                self.cluster.cordon(node).map_err(|e| SimError::Invariant(e.to_string()))?;
                self.emit("node-cordon", self.cluster.node(node).id.clone(), "");
            }
            EventKind::LeaseExpiry => self.lease_expiry()?,
            EventKind::DeadlockScan => {
                self.deadlock_scan()?;
                if !self.all_done() {
                    let next = self.now + dur(self.cfg.engine.deadlock_scan_period_s);
                    self.queue.push(next, EventKind::DeadlockScan);
                }
            }
            EventKind::UserHalt { job } => self.halt(job)?,
            EventKind::UserResume { job } => self.resume(job)?,
            EventKind::SimEnd => {}
        }
        Ok(())
    }

    // ---- scheduling -------------------------------------------------------

    fn dispatch(&mut self) -> Result<(), SimError> {
        let pass = self.dispatcher.dispatch(&mut self.cluster);
        let mut groups: Vec<(usize, Vec<Placement>)> = Vec::new();
        for p in pass.placements {
            let j = self.index[&p.job_id];
            match groups.iter_mut().find(|(g, _)| *g == j) {
                Some((_, v)) => v.push(p),
                None => groups.push((j, vec![p])),
            }
        }
        for (j, ps) in groups {
            let detail: Vec<String> =
                ps.iter().map(|p| format!("{}@{}", p.learner, self.cluster.node(p.node).id)).collect();
            self.emit("placed", self.ids[j].clone(), detail.join(" "));
            let placements: Vec<(u32, NodeId)> = ps.iter().map(|p| (p.learner, p.node)).collect();
            match ps[0].binding {
                Binding::Reserve => {
                    let now = self.now;
                    self.rec(j).first_placed.get_or_insert(now);
                    self.rt[j].partial_since = None;
                    self.start_deploy(j, Grant::Reserved(placements))?;
                }
                Binding::Allocate if self.rec(j).status == JobStatus::Queued => {
                    let now = self.now;
                    let rec = self.rec(j);
                    rec.placements.extend(placements);
                    if rec.is_fully_placed() {
                        rec.first_placed.get_or_insert(now);
                        let all: Vec<(u32, NodeId)> = rec.placements.iter().map(|(&l, &n)| (l, n)).collect();
                        self.rt[j].partial_since = None;
                        self.start_deploy(j, Grant::Bound(all))?;
                    } else {
                        self.rt[j].partial_since.get_or_insert(now);
                    }
                }
                Binding::Allocate => {
                    for (l, n) in placements {
                        self.rec(j).placements.insert(l, n);
                        let epoch = {
                            let e = self.rt[j].learner_epoch.entry(l).or_insert(0);
                            *e += 1;
                            *e
                        };
                        let delay = component_recovery_delay(Component::Learner, &mut self.recovery_rng);
                        self.queue.push(
                            self.now + delay,
                            EventKind::PhaseComplete { job: j, generation: epoch, phase: Phase::LearnerRecovered(l) },
                        );
                    }
                }
            }
        }
        Ok(())
    }

    // ---- deployment -------------------------------------------------------

    fn start_deploy(&mut self, j: usize, grant: Grant) -> Result<(), SimError> {
        self.set_status(j, JobStatus::Deploying)?;
        let gang = self.rec(j).spec.gang();
        self.rec(j).deploy_attempts += 1;
        let rt = &mut self.rt[j];
        rt.generation += 1;
        rt.phase = RunPhase::Deploy(Deployment::new(gang, grant, dur(self.cfg.lifecycle.lease_ttl_s)));
        let generation = rt.generation;
        self.queue.push(self.now + dur(self.cfg.lifecycle.deploy_step_s), EventKind::DeployStep { job: j, generation });
        Ok(())
    }

    fn deploy_step(&mut self, j: usize) -> Result<(), SimError> {
        let attempt = self.rec(j).deploy_attempts;
        let RunPhase::Deploy(d) = &self.rt[j].phase else {
            return Err(SimError::Invariant(format!("job {} deploy step outside deployment", self.ids[j])));
        };
        let step = d.next_step().expect("incomplete deployment");
        let step_time = dur(self.cfg.lifecycle.deploy_step_s);
        if DeployCrash::hits(&self.crashes, &self.ids[j], attempt, step) {
            self.emit("deploy-crash", self.ids[j].clone(), format!("attempt {attempt} step {}", step.number()));
            let RunPhase::Deploy(mut d) = std::mem::replace(&mut self.rt[j].phase, RunPhase::Idle) else {
                unreachable!()
            };
            if attempt > self.cfg.lifecycle.max_deploy_retries {
                d.abandon(&mut self.cluster, &mut self.store);
                self.rec(j).placements.clear();
                self.rt[j].generation += 1;
                self.set_status(j, JobStatus::Failed)?;
                self.request_dispatch();
            } else {
                d.rollback(&mut self.cluster, &mut self.store);
                self.rt[j].phase = RunPhase::Deploy(d);
                self.rec(j).deploy_attempts += 1;
                let delay = component_recovery_delay(Component::Guardian, &mut self.recovery_rng);
                let generation = self.rt[j].generation;
                self.queue.push(self.now + delay + step_time, EventKind::DeployStep { job: j, generation });
            }
            return Ok(());
        }
        let RunPhase::Deploy(d) = &mut self.rt[j].phase else { unreachable!() };
        d.advance(&mut self.cluster, &mut self.store, self.now)
            .map_err(|e| SimError::Invariant(format!("job {}: {e}", self.ids[j])))?;
        if d.is_complete() {
            self.finish_deploy(j)?;
        } else {
            let generation = self.rt[j].generation;
            self.queue.push(self.now + step_time, EventKind::DeployStep { job: j, generation });
        }
        Ok(())
    }

    fn finish_deploy(&mut self, j: usize) -> Result<(), SimError> {
        let RunPhase::Deploy(d) = std::mem::replace(&mut self.rt[j].phase, RunPhase::Download) else {
            unreachable!()
        };
        let placements: BTreeMap<u32, NodeId> = d.grant().placements().iter().copied().collect();
        let rt = &mut self.rt[j];
        rt.leases = d.leases().iter().copied().collect();
        rt.running = placements.keys().copied().collect();
        rt.generation += 1;
        let generation = rt.generation;
        self.rec(j).placements = placements;
        self.publish_phase(j, JobStatus::Downloading)?;
        self.queue.push(
            self.now + dur(self.cfg.lifecycle.download_s),
            EventKind::PhaseComplete { job: j, generation, phase: Phase::Download },
        );
        self.update_peak_running();
        Ok(())
    }

    fn update_peak_running(&mut self) {
        let n = self.rt.iter().filter(|r| r.is_active()).count() as u32;
        self.peak_running = self.peak_running.max(n);
    }

    /// Writes `status` for every running learner and lets the controller
    /// aggregate it into the job status.
    fn publish_phase(&mut self, j: usize, status: JobStatus) -> Result<(), SimError> {
        let id = self.ids[j].clone();
        for &l in &self.rt[j].running {
            let lease = self.rt[j].leases.get(&l).copied();
            self.store
                .put(&learner_status_key(&id, l), status.as_str(), lease)
                .map_err(|e| SimError::Invariant(e.to_string()))?;
        }
        let before = self.rec(j).status;
        let now = self.now;
        let rec = &mut self.records[j];
        let verdict = controller_tick(rec, &self.store, now);
        let after = rec.status;
        if after != before {
            if after.is_terminal() {
                self.terminal += 1;
            }
            self.emit("status", id.clone(), after.as_str());
        }
        match verdict {
            ControllerVerdict::Status(s) if s == status => Ok(()),
            other => Err(SimError::Invariant(format!("job {id}: controller saw {other:?} after publishing {status}"))),
        }
    }

    // ---- running phases ---------------------------------------------------

    fn rate(&self, j: usize) -> (u64, u64) {
        let rt = &self.rt[j];
        let size = self.records[j].spec.learners as u64;
        let running = rt.running.len() as u64;
        if rt.halted || running == 0 {
            (0, 1)
        } else if self.records[j].spec.sync {
            if running == size {
                (1, 1)
            } else {
                (0, 1)
            }
        } else {
            (running, size)
        }
    }

    /// Credits work done since the segment start at the current rate.
    fn settle(&mut self, j: usize) {
        if !matches!(self.rt[j].phase, RunPhase::Work) {
            return;
        }
        let (num, den) = self.rate(j);
        let start = self.rt[j].seg_start;
        let elapsed = self.now.since(start).as_millis();
        let rec = self.rec(j);
        let gained = SimDuration::from_millis(elapsed * num / den);
        rec.progress = (rec.progress + gained).min(rec.spec.work_duration);
        let rt = &mut self.rt[j];
        rt.seg_start = rt.seg_start.max(self.now);
    }

    /// Schedules the next checkpoint or the end of work at the current rate.
    fn schedule_work(&mut self, j: usize) {
        let (num, den) = self.rate(j);
        let rt = &mut self.rt[j];
        rt.generation += 1;
        if num == 0 {
            return;
        }
        let generation = rt.generation;
        let start = rt.seg_start.max(self.now);
        let rec = &self.records[j];
        let p = rec.progress.as_millis();
        let work = rec.spec.work_duration.as_millis();
        let interval = rec.spec.checkpoint_interval.as_millis();
        let mut target = work;
        let mut is_checkpoint = false;
        if interval > 0 {
            let next = (p / interval + 1) * interval;
            if next < work {
                target = next;
                is_checkpoint = true;
            }
        }
        let need = (target - p) * den;
        let at = start + SimDuration::from_millis(need.div_ceil(num));
        let kind = if is_checkpoint {
            EventKind::CheckpointDue { job: j, generation }
        } else {
            EventKind::PhaseComplete { job: j, generation, phase: Phase::Work }
        };
        self.queue.push(at, kind);
    }

    fn phase_complete(&mut self, j: usize, generation: u64, phase: Phase) -> Result<(), SimError> {
        if let Phase::LearnerRecovered(l) = phase {
            return self.learner_recovered(j, l, generation);
        }
        if self.rt[j].generation != generation {
            return Ok(());
        }
        match phase {
            Phase::Download => {
                self.rt[j].phase = RunPhase::Work;
                self.publish_phase(j, JobStatus::Processing)?;
                self.rt[j].seg_start = self.now;
                self.schedule_work(j);
            }
            Phase::Work => {
                self.settle(j);
                let rec = self.rec(j);
                if rec.progress < rec.spec.work_duration {
                    return Err(SimError::Invariant(format!("job {}: work ended early", rec.spec.job_id)));
                }
                self.rt[j].phase = RunPhase::Store;
                self.rt[j].generation += 1;
                let generation = self.rt[j].generation;
                self.publish_phase(j, JobStatus::Storing)?;
                self.queue.push(
                    self.now + dur(self.cfg.lifecycle.store_s),
                    EventKind::PhaseComplete { job: j, generation, phase: Phase::Store },
                );
            }
            Phase::Store => {
                self.publish_phase(j, JobStatus::Completed)?;
                self.teardown(j);
                self.rt[j].phase = RunPhase::Idle;
                self.request_dispatch();
            }
            Phase::LearnerRecovered(_) => unreachable!(),
        }
        Ok(())
    }

    /// Releases every pod, lease and store key of a job.
    fn teardown(&mut self, j: usize) -> u32 {
        let id = self.ids[j].clone();
        let mut released = 0;
        for (n, pod, demand) in self.cluster.pods_of(&id) {
            self.cluster.release(n, &pod, &demand).expect("bound pod");
            released += 1;
        }
        self.cluster.cancel_reservations(&id);
        self.pod_terminations += released;
        let rt = &mut self.rt[j];
        for (_, lease) in std::mem::take(&mut rt.leases) {
            self.store.revoke(lease);
        }
        self.store.delete_prefix(&job_prefix(&id));
        rt.generation += 1;
        rt.running.clear();
        rt.awaiting.clear();
        rt.requested.clear();
        rt.replace_since = None;
        rt.partial_since = None;
        rt.halted = false;
        self.replacing.remove(&j);
        self.rec(j).placements.clear();
        released
    }

    fn resume_phase(&mut self, j: usize) {
        self.replacing.remove(&j);
        let rt = &mut self.rt[j];
        rt.replace_since = None;
        let (delay, phase) = match rt.phase {
            RunPhase::Download => (self.cfg.lifecycle.download_s, Phase::Download),
            RunPhase::Store => (self.cfg.lifecycle.store_s, Phase::Store),
            RunPhase::Work => {
                self.schedule_work(j);
                return;
            }
            _ => return,
        };
        rt.generation += 1;
        let generation = rt.generation;
        self.queue.push(self.now + dur(delay), EventKind::PhaseComplete { job: j, generation, phase });
    }

    fn learner_recovered(&mut self, j: usize, l: u32, epoch: u64) -> Result<(), SimError> {
        let status = self.rec(j).status;
        let rt = &self.rt[j];
        if !status.is_running() || !rt.awaiting.contains(&l) || rt.learner_epoch.get(&l) != Some(&epoch) {
            return Ok(());
        }
        self.settle(j);
        let lease = self
            .store
            .grant_lease(dur(self.cfg.lifecycle.lease_ttl_s), self.now)
            .map_err(|e| SimError::Invariant(e.to_string()))?;
        let id = self.ids[j].clone();
        self.store
            .put(&learner_status_key(&id, l), status.as_str(), Some(lease))
            .map_err(|e| SimError::Invariant(e.to_string()))?;
        let rt = &mut self.rt[j];
        rt.leases.insert(l, lease);
        rt.awaiting.remove(&l);
        rt.requested.remove(&l);
        rt.running.insert(l);
        let all_back = rt.awaiting.is_empty();
        self.emit("learner-recovered", id, l.to_string());
        if all_back {
            self.resume_phase(j);
            self.update_peak_running();
        } else if matches!(self.rt[j].phase, RunPhase::Work) {
            self.schedule_work(j);
        }
        Ok(())
    }

    fn halt(&mut self, j: usize) -> Result<(), SimError> {
        if self.rec(j).status != JobStatus::Processing {
            let status = self.rec(j).status.as_str();
            self.emit("halt-ignored", self.ids[j].clone(), status);
            return Ok(());
        }
        self.settle(j);
        self.rt[j].halted = true;
        self.rt[j].generation += 1;
        self.publish_phase(j, JobStatus::Halted)
    }

    fn resume(&mut self, j: usize) -> Result<(), SimError> {
        if self.rec(j).status != JobStatus::Halted {
            let status = self.rec(j).status.as_str();
            self.emit("resume-ignored", self.ids[j].clone(), status);
            return Ok(());
        }
        self.settle(j);
        self.rt[j].halted = false;
        if self.rt[j].awaiting.is_empty() {
            self.publish_phase(j, JobStatus::Resumed)?;
            self.publish_phase(j, JobStatus::Processing)?;
        } else {
            // Some learners are still being replaced; their keys are not live.
            self.set_status(j, JobStatus::Resumed)?;
            self.set_status(j, JobStatus::Processing)?;
        }
        self.schedule_work(j);
        Ok(())
    }

    // ---- failures ---------------------------------------------------------

    fn node_fail(&mut self, node: NodeId, down: Option<SimDuration>) -> Result<(), SimError> {
        if self.cluster.node(node).status == NodeStatus::NotReady {
            return Ok(());
        }
        let n = self.cluster.node(node);
        let mut touched: BTreeSet<usize> = n.pods.iter().map(|(p, _)| self.index[&p.gang]).collect();
        touched.extend(n.reservations.iter().map(|(g, _)| self.index[g]));
        for &j in &touched {
            self.settle(j);
        }
        let report = self.cluster.fail(node).map_err(|e| SimError::Invariant(e.to_string()))?;
        let node_name = self.cluster.node(node).id.clone();
        self.pod_evictions += report.evicted.len() as u32;
        self.pod_terminations += report.evicted.len() as u32;
        self.emit("node-fail", node_name, format!("{} pods evicted", report.evicted.len()));
        if let Some(d) = down {
            self.queue.push(self.now + d, EventKind::NodeRecover { node });
        }

        let deploying: BTreeSet<usize> =
            touched.iter().copied().filter(|&j| matches!(self.rt[j].phase, RunPhase::Deploy(_))).collect();
        for &j in &deploying {
            self.abort_deploy(j)?;
        }
        let evictions: Vec<_> = report
            .evicted
            .into_iter()
            .filter(|e| !deploying.contains(&self.index[&e.pod.gang]))
            .collect();
        // Lend the affected records out by id, then put them back.
        let mut lent: BTreeMap<String, JobRecord> = BTreeMap::new();
        for e in &evictions {
            let j = self.index[&e.pod.gang];
            if !lent.contains_key(&self.ids[j]) {
                let placeholder = JobRecord::new(self.records[j].spec.clone());
                lent.insert(self.ids[j].clone(), std::mem::replace(&mut self.records[j], placeholder));
            }
        }
        let actions = handle_node_failure(&evictions, &mut lent);
        for (id, rec) in lent {
            let j = self.index[&id];
            self.records[j] = rec;
        }
        for action in actions {
            let RecoveryAction::ReplaceLearners { job_id, learners, lost_work } = action else { continue };
            let j = self.index[&job_id];
            let rec = &self.records[j];
            if rec.status == JobStatus::Queued {
                let gang = rec.spec.gang();
                let submit = rec.spec.submit_time;
                if rec.placed() == 0 {
                    self.rt[j].partial_since = None;
                }
                self.dispatcher.enqueue_replacements(&gang, &learners, submit);
                self.request_dispatch();
                continue;
            }
            if !lost_work.is_zero() {
                self.emit("rewind", job_id.clone(), format!("{:.3}", lost_work.as_secs_f64()));
            }
            let ttl = dur(self.cfg.lifecycle.lease_ttl_s);
            let rt = &mut self.rt[j];
            for l in learners {
                rt.running.remove(&l);
                rt.awaiting.insert(l);
                if let Some(&lease) = rt.leases.get(&l) {
                    // Last heartbeat: the moment the node died.
                    self.store.keep_alive(lease, self.now).map_err(|e| SimError::Invariant(e.to_string()))?;
                }
            }
            if matches!(rt.phase, RunPhase::Work) {
                self.schedule_work(j);
            } else {
                rt.generation += 1;
            }
            self.queue.push(self.now + ttl + SimDuration::from_millis(1), EventKind::LeaseExpiry);
        }
        Ok(())
    }

    /// The node under a deploying job died: undo the attempt and queue the
    /// job again ahead of new arrivals. The attempt does not count.
    fn abort_deploy(&mut self, j: usize) -> Result<(), SimError> {
        let RunPhase::Deploy(d) = std::mem::replace(&mut self.rt[j].phase, RunPhase::Idle) else { unreachable!() };
        d.abandon(&mut self.cluster, &mut self.store);
        self.rt[j].generation += 1;
        let rec = self.rec(j);
        rec.placements.clear();
        rec.deploy_attempts = 0;
        let gang = rec.spec.gang();
        let submit = rec.spec.submit_time;
        self.set_status(j, JobStatus::Queued)?;
        self.emit("deploy-aborted", self.ids[j].clone(), "");
        self.dispatcher.enqueue_job_at_head(&gang, submit);
        self.request_dispatch();
        Ok(())
    }

    fn lease_expiry(&mut self) -> Result<(), SimError> {
        // Live learners heartbeat continuously.
        for rt in &self.rt {
            for (l, &lease) in &rt.leases {
                if rt.running.contains(l) {
                    self.store.keep_alive(lease, self.now).map_err(|e| SimError::Invariant(e.to_string()))?;
                }
            }
        }
        let expired = self.store.expire_leases(self.now);
        let mut affected = BTreeSet::new();
        for key in expired {
            let Some((job_id, learner)) = parse_learner_key(&key) else { continue };
            let Some(&j) = self.index.get(job_id) else { continue };
            self.rt[j].leases.remove(&learner);
            self.store.put(&key, JobStatus::Failed.as_str(), None).map_err(|e| SimError::Invariant(e.to_string()))?;
            affected.insert(j);
        }
        for j in affected {
            let id = self.ids[j].clone();
            let now = self.now;
            let rec = &mut self.records[j];
            if let ControllerVerdict::Recover { failed } = controller_tick(rec, &self.store, now) {
                let gang = rec.spec.gang();
                let submit = rec.spec.submit_time;
                let rt = &mut self.rt[j];
                let fresh: Vec<u32> =
                    failed.into_iter().filter(|l| rt.awaiting.contains(l) && !rt.requested.contains(l)).collect();
                if fresh.is_empty() {
                    continue;
                }
                rt.requested.extend(fresh.iter().copied());
                rt.replace_since.get_or_insert(now);
                self.replacing.insert(j);
                let list: Vec<String> = fresh.iter().map(u32::to_string).collect();
                self.dispatcher.enqueue_replacements(&gang, &fresh, submit);
                self.emit("learner-failed", id, list.join(" "));
                self.request_dispatch();
            }
        }
        Ok(())
    }

    fn check_grace(&mut self) -> Result<(), SimError> {
        let grace = dur(self.cfg.lifecycle.replacement_grace_s);
        let overdue: Vec<usize> = self
            .replacing
            .iter()
            .copied()
            .filter(|&j| self.rt[j].replace_since.is_some_and(|s| self.now.since(s) > grace))
            .collect();
        for j in overdue {
            self.requeue_whole(j)?;
        }
        Ok(())
    }

    /// Replacement learners could not be placed in time: release the whole
    /// job and queue it again from its last checkpoint.
    fn requeue_whole(&mut self, j: usize) -> Result<(), SimError> {
        self.settle(j);
        let id = self.ids[j].clone();
        self.dispatcher.remove_job(&id);
        self.teardown(j);
        self.rt[j].phase = RunPhase::Idle;
        let rec = self.rec(j);
        rewind_to_checkpoint(rec);
        rec.requeues += 1;
        rec.deploy_attempts = 0;
        let gang = rec.spec.gang();
        let submit = rec.spec.submit_time;
        self.set_status(j, JobStatus::Queued)?;
        self.emit("job-requeued", id, "");
        self.dispatcher.enqueue_job(&gang, submit);
        self.request_dispatch();
        Ok(())
    }

    // ---- deadlocks --------------------------------------------------------

    fn deadlock_scan(&mut self) -> Result<(), SimError> {
        let gang = self.cfg.scheduler.policy.is_gang();
        let mut parts = Vec::new();
        for &j in &self.live {
            let id = &self.ids[j];
            let rec = &self.records[j];
            if rec.status != JobStatus::Queued || rec.placed() == 0 {
                continue;
            }
            if gang {
                return Err(SimError::Invariant(format!("gang job {id} is partially placed")));
            }
            parts.push(PartialPlacement {
                job_id: id.clone(),
                gang_size: rec.spec.learners,
                placed: rec.placed(),
                gpus_per_learner: rec.spec.gpus_per_learner,
                sync: rec.spec.sync,
                partial_since: self.rt[j].partial_since,
            });
        }
        self.cluster.check_invariants().map_err(SimError::Invariant)?;
        let report = detect_deadlocks(&parts, self.now, self.cfg.scheduler.deadlock_timeout());
        if report.is_empty() {
            return Ok(());
        }
        let learners = report.deadlocked_learners();
        let idle = report.idle_gpus();
        self.samples.push(DeadlockSample {
            t: self.now,
            jobs: report.jobs.len() as u32,
            deadlocked_learners: learners,
            idle_gpus: idle,
        });
        self.peak_deadlocked = self.peak_deadlocked.max(learners);
        self.peak_idle = self.peak_idle.max(idle);
        for stuck in &report.jobs {
            let j = self.index[&stuck.job_id];
            if !self.rt[j].deadlock_logged {
                self.rt[j].deadlock_logged = true;
                self.emit("deadlock", stuck.job_id.clone(), format!("{} learners stuck", stuck.stuck_learners));
            }
            if self.cfg.scheduler.evict_deadlocked {
                let id = stuck.job_id.clone();
                self.dispatcher.remove_job(&id);
                self.teardown(j);
                let gang = self.rec(j).spec.gang();
                self.dispatcher.enqueue_job(&gang, self.now);
                self.emit("deadlock-evicted", id, "");
                self.request_dispatch();
            }
        }
        Ok(())
    }

    // ---- wrap-up ----------------------------------------------------------

    fn finish(mut self) -> Result<SimResult, SimError> {
        let end = self.now;
        self.advance_clock(end);
        self.cluster.check_invariants().map_err(SimError::Invariant)?;
        for (id, rec) in self.ids.iter().zip(&self.records) {
            rec.check(self.cfg.lifecycle.max_deploy_retries).map_err(SimError::Invariant)?;
            if rec.status.is_terminal()
                && (!self.cluster.pods_of(id).is_empty() || self.cluster.has_reservations(id))
            {
                return Err(SimError::Invariant(format!("finished job {id} still holds resources")));
            }
        }
        let elapsed = end.as_secs_f64();
        let nodes = self
            .cluster
            .nodes()
            .iter()
            .zip(&self.busy)
            .map(|(n, &b)| NodeUtilization {
                node: n.id.clone(),
                gpus: n.capacity.gpus,
                busy_gpu_seconds: b,
                utilization_pct: if elapsed > 0.0 && n.capacity.gpus > 0 {
                    100.0 * b / (elapsed * n.capacity.gpus as f64)
                } else {
                    0.0
                },
            })
            .collect();
        let jobs = std::mem::take(&mut self.records);
        Ok(SimResult {
            seed: self.seed,
            policy: self.cfg.scheduler.policy,
            horizon: self.cfg.horizon,
            end_time: end,
            total_gpus: self.cluster.total_gpus(),
            jobs,
            utilization: self.utilization,
            nodes,
            deadlock_samples: self.samples,
            peak_deadlocked_learners: self.peak_deadlocked,
            peak_idle_gpus: self.peak_idle,
            peak_running_jobs: self.peak_running,
            pod_evictions: self.pod_evictions,
            pod_terminations: self.pod_terminations,
            residual_store_keys: self.store.len(),
            store_revision: self.store.revision(),
            store_dump: self.store.dump(),
            events: self.log,
        })
    }
}

fn parse_learner_key(key: &str) -> Option<(&str, u32)> {
    let rest = key.strip_prefix("/jobs/")?.strip_suffix("/status")?;
    let (job, learner) = rest.rsplit_once("/learner/")?;
    Some((job, learner.parse().ok()?))
}
