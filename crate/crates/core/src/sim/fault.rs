//! Fault plans: scheduled node and user events, deploy crash triggers and
//! stochastic node failures.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::lifecycle::{DeployCrash, DeployStep};
use crate::rng::{substream, Substream};
use crate::time::{SimDuration, SimTime};
use crate::workload::JobSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    NodeFail,
    NodeRecover,
    Cordon,
    Halt,
    Resume,
    DeployCrash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployTrigger {
    pub attempt: u32,
    pub step: u32,
}

/// One line of a fault plan file. Timed entries carry `t`; deploy crashes
/// carry a `trigger` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<DeployTrigger>,
    /// Node id for node events, job id for job events.
    pub target: String,
    pub kind: FaultKind,
    /// For node-fail: recover automatically after this long.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub down_s: Option<f64>,
}

impl FaultEntry {
    pub fn time(&self) -> Option<SimTime> {
        self.t.map(SimTime::from_secs_f64)
    }

    pub fn validate(&self) -> Result<(), String> {
        let what = format!("fault entry {:?} on {}", self.kind, self.target);
        match self.kind {
            FaultKind::DeployCrash => {
                let Some(tr) = &self.trigger else { return Err(format!("{what}: deploy-crash needs a trigger")) };
                if tr.attempt == 0 || !(1..=DeployStep::ALL.len() as u32).contains(&tr.step) {
                    return Err(format!("{what}: attempt must be >= 1 and step in 1..=5"));
                }
            }
            _ => match self.t {
                Some(t) if t >= 0.0 && t.is_finite() => {}
                _ => return Err(format!("{what}: needs a non-negative time t")),
            },
        }
        if let Some(d) = self.down_s {
            if self.kind != FaultKind::NodeFail || !(d > 0.0 && d.is_finite()) {
                return Err(format!("{what}: down_s must be positive and only on node-fail"));
            }
        }
        Ok(())
    }
}

fn default_repair() -> f64 {
    1800.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub plan: Vec<FaultEntry>,
    /// Mean time between failures of each node; none disables random failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_mtbf_s: Option<f64>,
    /// Mean repair time of a randomly failed node.
    #[serde(default = "default_repair")]
    pub node_repair_s: f64,
    /// Chance that any single deploy step crashes.
    #[serde(default)]
    pub deploy_crash_probability: f64,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan { plan: Vec::new(), node_mtbf_s: None, node_repair_s: default_repair(), deploy_crash_probability: 0.0 }
    }
}

/// A node outage drawn from the MTBF model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outage {
    pub node: usize,
    pub at: SimTime,
    pub down: SimDuration,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_entries(plan: Vec<FaultEntry>) -> Self {
        FaultPlan { plan, ..Self::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty() && self.node_mtbf_s.is_none() && self.deploy_crash_probability == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        for e in &self.plan {
            e.validate()?;
        }
        if let Some(m) = self.node_mtbf_s {
            if !(m > 0.0 && m.is_finite()) {
                return Err("node_mtbf_s must be positive".into());
            }
        }
        if !(self.node_repair_s > 0.0 && self.node_repair_s.is_finite()) {
            return Err("node_repair_s must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.deploy_crash_probability) {
            return Err("deploy_crash_probability must be within [0, 1]".into());
        }
        Ok(())
    }

    /// Explicit crash triggers plus crashes sampled from
    /// `deploy_crash_probability` for every job and possible attempt.
    pub fn deploy_crashes(&self, jobs: &[JobSpec], max_attempts: u32, seed: u64) -> Vec<DeployCrash> {
        let mut out: Vec<DeployCrash> = self
            .plan
            .iter()
            .filter(|e| e.kind == FaultKind::DeployCrash)
            .filter_map(|e| {
                e.trigger.as_ref().map(|tr| DeployCrash { job_id: e.target.clone(), attempt: tr.attempt, step: tr.step })
            })
            .collect();
        let p = self.deploy_crash_probability;
        if p > 0.0 {
            let mut rng = substream(seed, Substream::DeployCrashes);
            for job in jobs {
                for attempt in 1..=max_attempts {
                    for step in DeployStep::ALL {
                        if rng.random_bool(p) {
                            out.push(DeployCrash { job_id: job.job_id.clone(), attempt, step: step.number() });
                            break;
                        }
                    }
                }
            }
        }
        out
    }

    /// Random outages of every node up to `horizon`, in node order then time.
    pub fn sample_outages(&self, nodes: usize, horizon: SimTime, seed: u64) -> Vec<Outage> {
        let Some(mtbf) = self.node_mtbf_s else { return Vec::new() };
        let mut rng = substream(seed, Substream::Faults);
        let up = Exp::new(1.0 / mtbf).expect("positive mtbf");
        let repair = Exp::new(1.0 / self.node_repair_s).expect("positive repair");
        let mut out = Vec::new();
        for node in 0..nodes {
            let mut t = 0.0;
            loop {
                t += up.sample(&mut rng);
                let at = SimTime::from_secs_f64(t);
                if at >= horizon {
                    break;
                }
                let down = repair.sample(&mut rng).max(1.0);
                out.push(Outage { node, at, down: SimDuration::from_secs_f64(down) });
                t += down;
            }
        }
        out
    }
}
