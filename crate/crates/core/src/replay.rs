//! Self-contained desk-scale reproductions with PASS/FAIL verdicts.
//!
//! Every experiment runs from scenarios embedded in the library, so the
//! verdicts need no files on disk.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::lifecycle::JobStatus;
use crate::metrics::{deadlock_cdf, failure_impact, queued_over_threshold};
use crate::scenario::{Prepared, Scenario};
use crate::sched::Policy;
use crate::sim::{SimError, SimResult};
use crate::time::SimDuration;

/// The scenarios shipped with the crate, by name.
pub const SCENARIOS: [(&str, &str); 7] = [
    ("fragmentation", include_str!("../scenarios/fragmentation.json")),
    ("gang-2l1g", include_str!("../scenarios/gang-2l1g.json")),
    ("gang-2l2g", include_str!("../scenarios/gang-2l2g.json")),
    ("gang-4l1g", include_str!("../scenarios/gang-4l1g.json")),
    ("worst-case", include_str!("../scenarios/worst-case.json")),
    ("spread-vs-pack", include_str!("../scenarios/spread-vs-pack.json")),
    ("faults", include_str!("../scenarios/faults.json")),
];

/// A shipped scenario, optionally with its scheduling policy replaced.
pub fn shipped(name: &str, policy: Option<Policy>) -> Result<Prepared, SimError> {
    let (_, text) = SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| SimError::Config(format!("no shipped scenario named {name}")))?;
    let mut s = Scenario::parse(text, Path::new(".")).map_err(|e| SimError::Config(e.to_string()))?;
    if let Some(p) = policy {
        s.scheduler.policy = p;
    }
    s.prepare().map_err(|e| SimError::Config(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fragmentation,
    Gang,
    SpreadVsPack,
    Faults,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::Fragmentation, Experiment::Gang, Experiment::SpreadVsPack, Experiment::Faults];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fragmentation => "fragmentation",
            Experiment::Gang => "gang",
            Experiment::SpreadVsPack => "spread-vs-pack",
            Experiment::Faults => "faults",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
            format!("unknown experiment {s:?} (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub target: String,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, measured: impl fmt::Display, target: impl Into<String>, pass: bool) -> Check {
        Check { name: name.into(), measured: measured.to_string(), target: target.into(), pass }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub experiment: Experiment,
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Fixed-width table, one row per check.
    pub fn table(&self) -> String {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let m = self.checks.iter().map(|c| c.measured.len()).max().unwrap_or(8).max(8);
        let mut out = format!("{:<w$}  {:<m$}  {:<6}  target\n", "check", "measured", "result");
        for c in &self.checks {
            let r = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("{:<w$}  {:<m$}  {:<6}  {}\n", c.name, c.measured, r, c.target));
        }
        out.push_str(&format!("{}: {}\n", self.experiment, if self.passed() { "PASS" } else { "FAIL" }));
        out
    }
}

fn all_ok(results: Vec<Result<SimResult, SimError>>) -> Result<Vec<SimResult>, SimError> {
    results.into_iter().collect()
}

pub fn run_experiment(exp: Experiment) -> Result<Verdict, SimError> {
    let checks = match exp {
        Experiment::Fragmentation => fragmentation()?,
        Experiment::Gang => gang()?,
        Experiment::SpreadVsPack => spread_vs_pack()?,
        Experiment::Faults => faults()?,
    };
    Ok(Verdict { experiment: exp, checks })
}

fn placed_big(r: &SimResult) -> usize {
    r.jobs.iter().filter(|j| j.spec.gpus_per_learner == 4 && j.first_placed.is_some()).count()
}

fn fragmentation() -> Result<Vec<Check>, SimError> {
    let spread = shipped("fragmentation", Some(Policy::PodSpread))?;
    let pack = shipped("fragmentation", Some(Policy::PodPack))?;
    let s = spread.run(spread.seeds[0])?;
    let p = pack.run(pack.seeds[0])?;
    let small_s = s.jobs.iter().filter(|j| j.spec.gpus_per_learner == 1 && j.first_placed.is_some()).count();
    let nodes_s: std::collections::BTreeSet<_> =
        s.jobs.iter().filter(|j| j.spec.gpus_per_learner == 1).flat_map(|j| j.placements.values().copied()).collect();
    Ok(vec![
        Check::new("spread: 1-GPU jobs on distinct nodes", nodes_s.len(), "4", small_s == 4 && nodes_s.len() == 4),
        Check::new("spread: 4-GPU jobs placed", placed_big(&s), "0", placed_big(&s) == 0),
        Check::new("pack: 4-GPU jobs placed", placed_big(&p), "3", placed_big(&p) == 3),
    ])
}

fn gang() -> Result<Vec<Check>, SimError> {
    let mut checks = Vec::new();
    for name in ["gang-2l1g", "gang-2l2g", "gang-4l1g"] {
        let runs = all_ok(shipped(name, Some(Policy::Gang))?.run_all())?;
        let dl: u32 = runs.iter().map(|r| r.peak_deadlocked_learners).max().unwrap_or(0);
        let idle: u32 = runs.iter().map(|r| r.peak_idle_gpus).max().unwrap_or(0);
        checks.push(Check::new(
            format!("{name} gang: max deadlocked learners / idle GPUs over {} seeds", runs.len()),
            format!("{dl} / {idle}"),
            "0 / 0",
            dl == 0 && idle == 0,
        ));
        if name == "gang-2l1g" {
            let running: Vec<u32> = runs.iter().map(|r| r.peak_running_jobs).collect();
            let ok = running.iter().all(|&n| n == 30);
            let lo = running.iter().min().copied().unwrap_or(0);
            let hi = running.iter().max().copied().unwrap_or(0);
            checks.push(Check::new(format!("{name} gang: concurrent jobs"), format!("{lo}..{hi}"), "30 in every seed", ok));
        }
        let base = all_ok(shipped(name, Some(Policy::PodSpread))?.run_all())?;
        let cdf = deadlock_cdf(&base);
        let free = cdf.at(0.0);
        let max_dl = base.iter().map(|r| r.peak_deadlocked_learners).max().unwrap_or(0);
        if name == "gang-2l1g" {
            checks.push(Check::new(
                format!("{name} pod-at-a-time: P(no deadlock)"),
                format!("{free:.2} (max {max_dl} learners)"),
                "within [0.2, 0.6], some seed deadlocks",
                (0.2..=0.6).contains(&free) && max_dl >= 1,
            ));
        }
        if name == "gang-4l1g" {
            let peak = base.iter().map(SimResult::idle_gpu_pct_peak).fold(0.0, f64::max);
            checks.push(Check::new(
                format!("{name} pod-at-a-time: peak idle GPUs"),
                format!("{peak:.1}%"),
                ">= 35% in some seed",
                peak >= 35.0,
            ));
        }
    }
    let rr = shipped("worst-case", None)?;
    let r = rr.run(rr.seeds[0])?;
    checks.push(Check::new(
        "worst-case round-robin: deadlocked learners / idle GPUs",
        format!("{} / {}", r.peak_deadlocked_learners, r.peak_idle_gpus),
        "4 / 8",
        r.peak_deadlocked_learners == 4 && r.peak_idle_gpus == 8,
    ));
    let g = shipped("worst-case", Some(Policy::Gang))?;
    let r = g.run(g.seeds[0])?;
    let running = r.jobs.iter().filter(|j| j.status.is_running() && j.placed() == 2).count();
    let whole = r.jobs.iter().filter(|j| j.status == JobStatus::Queued && j.placed() == 0).count();
    checks.push(Check::new(
        "worst-case gang: jobs placed / queued whole",
        format!("{running} / {whole}"),
        "2 / 2",
        running == 2 && whole == 2 && r.peak_deadlocked_learners == 0,
    ));
    Ok(checks)
}

/// Queued-over-threshold counts under (Spread, Pack) on the shipped trace.
pub fn spread_vs_pack_counts() -> Result<(usize, usize), SimError> {
    let mut counts = [0usize; 2];
    for (i, policy) in [Policy::PodSpread, Policy::PodPack].into_iter().enumerate() {
        let p = shipped("spread-vs-pack", Some(policy))?;
        let r = p.run(p.seeds[0])?;
        counts[i] = queued_over_threshold(&r, p.threshold, SimDuration::from_secs(21_600)).queued;
    }
    Ok((counts[0], counts[1]))
}

fn spread_vs_pack() -> Result<Vec<Check>, SimError> {
    let (s, p) = spread_vs_pack_counts()?;
    Ok(vec![Check::new(
        "queued > 15 min: spread vs pack",
        format!("{s} vs {p}"),
        "pack <= 0.5 x spread",
        2 * p <= s,
    )])
}

fn faults() -> Result<Vec<Check>, SimError> {
    let runs = all_ok(shipped("faults", None)?.run_all())?;
    let fi = failure_impact(&runs);
    Ok(vec![
        Check::new(
            "pod deletions from node failures",
            format!("{:.2}% ({}/{})", fi.pod_deletion_pct, fi.pod_evictions, fi.pod_terminations),
            "<= 5%",
            fi.pod_deletion_pct <= 5.0,
        ),
        Check::new(
            "jobs cancelled and restarted from scratch",
            format!("{:.2}% ({}/{})", fi.job_cancel_pct, fi.cancelled_jobs, fi.jobs),
            "<= 1%",
            fi.job_cancel_pct <= 1.0,
        ),
    ])
}
