//! Evaluation quantities computed from finished runs.

use serde::Serialize;

use crate::lifecycle::JobStatus;
use crate::sched::Policy;
use crate::sim::SimResult;
use crate::time::SimDuration;

/// One support point of an empirical CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfPoint {
    pub value: f64,
    /// P(X <= value)
    pub p: f64,
}

/// Empirical CDF over every distinct observed value, no binning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cdf {
    pub samples: usize,
    pub points: Vec<CdfPoint>,
}

impl Cdf {
    pub fn from_samples(samples: &[f64]) -> Cdf {
        let mut xs: Vec<f64> = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let mut points: Vec<CdfPoint> = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            let p = (i + 1) as f64 / n as f64;
            match points.last_mut() {
                Some(last) if last.value == x => last.p = p,
                _ => points.push(CdfPoint { value: x, p }),
            }
        }
        Cdf { samples: n, points }
    }

    /// P(X <= x).
    pub fn at(&self, x: f64) -> f64 {
        self.points.iter().take_while(|pt| pt.value <= x).last().map_or(0.0, |pt| pt.p)
    }

    /// P(X == x).
    pub fn mass(&self, x: f64) -> f64 {
        let below = self.points.iter().take_while(|pt| pt.value < x).last().map_or(0.0, |pt| pt.p);
        self.at(x) - below
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,p\n");
        for pt in &self.points {
            out.push_str(&format!("{},{:.6}\n", pt.value, pt.p));
        }
        out
    }
}

/// CDF over runs of the peak number of deadlocked learners.
pub fn deadlock_cdf(results: &[SimResult]) -> Cdf {
    let xs: Vec<f64> = results.iter().map(|r| r.peak_deadlocked_learners as f64).collect();
    Cdf::from_samples(&xs)
}

/// CDF over runs of the peak share of cluster GPUs held by stuck learners, in percent.
pub fn idle_gpu_cdf(results: &[SimResult]) -> Cdf {
    let xs: Vec<f64> = results.iter().map(|r| r.idle_gpu_pct_peak()).collect();
    Cdf::from_samples(&xs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayCount {
    pub day: u64,
    pub arrivals: usize,
    pub queued: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueuedOverThreshold {
    pub threshold_s: f64,
    pub arrivals: usize,
    pub queued: usize,
    pub pct: f64,
    pub by_day: Vec<DayCount>,
}

/// Jobs whose first complete placement came more than `threshold` after
/// submission. Jobs never placed count when they waited past the threshold
/// before the run ended. Days are `day_length` windows of submit time.
pub fn queued_over_threshold(result: &SimResult, threshold: SimDuration, day_length: SimDuration) -> QueuedOverThreshold {
    let day_ms = day_length.as_millis().max(1);
    let mut by_day: Vec<DayCount> = Vec::new();
    let mut queued = 0;
    for j in &result.jobs {
        let waited = match j.wait_time() {
            Some(w) => w,
            None => result.end_time.since(j.spec.submit_time),
        };
        let over = waited > threshold;
        queued += over as usize;
        let day = j.spec.submit_time.as_millis() / day_ms;
        let idx = match by_day.binary_search_by_key(&day, |d| d.day) {
            Ok(i) => i,
            Err(i) => {
                by_day.insert(i, DayCount { day, arrivals: 0, queued: 0, pct: 0.0 });
                i
            }
        };
        by_day[idx].arrivals += 1;
        by_day[idx].queued += over as usize;
    }
    for d in &mut by_day {
        d.pct = pct(d.queued, d.arrivals);
    }
    let arrivals = result.jobs.len();
    QueuedOverThreshold { threshold_s: threshold.as_secs_f64(), arrivals, queued, pct: pct(queued, arrivals), by_day }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureImpact {
    pub pod_evictions: u64,
    pub pod_terminations: u64,
    pub pod_deletion_pct: f64,
    pub cancelled_jobs: u64,
    pub jobs: u64,
    pub job_cancel_pct: f64,
}

/// Pods deleted by node failures over all pod terminations, and jobs
/// restarted from scratch over all jobs, summed across runs.
pub fn failure_impact(results: &[SimResult]) -> FailureImpact {
    let evictions: u64 = results.iter().map(|r| r.pod_evictions as u64).sum();
    let terminations: u64 = results.iter().map(|r| r.pod_terminations as u64).sum();
    let cancelled: u64 = results.iter().map(|r| r.jobs.iter().filter(|j| j.requeues > 0).count() as u64).sum();
    let jobs: u64 = results.iter().map(|r| r.jobs.len() as u64).sum();
    FailureImpact {
        pod_evictions: evictions,
        pod_terminations: terminations,
        pod_deletion_pct: pct(evictions as usize, terminations as usize),
        cancelled_jobs: cancelled,
        jobs,
        job_cancel_pct: pct(cancelled as usize, jobs as usize),
    }
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobMetrics {
    pub job_id: String,
    pub wait_s: Option<f64>,
    pub restarts: u32,
    pub lost_work_s: f64,
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub policy: Policy,
    pub jobs: usize,
    pub completed: usize,
    pub failed: usize,
    pub deadlocked_learners: u32,
    pub idle_gpu_pct_peak: f64,
    pub queued_over_threshold: usize,
    pub queued_over_threshold_pct: f64,
    pub mean_utilization_pct: f64,
    pub peak_running_jobs: u32,
    pub pod_deletion_pct: f64,
    pub job_cancel_pct: f64,
    pub end_time_s: f64,
    #[serde(skip)]
    pub gpu_utilization_timeline: Vec<(f64, f64)>,
    #[serde(skip)]
    pub per_job: Vec<JobMetrics>,
}

impl RunMetrics {
    /// Column order of [`RunMetrics::csv_row`].
    pub const CSV_HEADER: &'static str = "seed,policy,jobs,completed,failed,deadlocked_learners,idle_gpu_pct_peak,\
queued_over_threshold,queued_over_threshold_pct,mean_utilization_pct,peak_running_jobs,pod_deletion_pct,\
job_cancel_pct,end_time_s";

    pub fn from_result(r: &SimResult, threshold: SimDuration) -> RunMetrics {
        let q = queued_over_threshold(r, threshold, SimDuration::from_secs(86_400));
        let fi = failure_impact(std::slice::from_ref(r));
        let busy: f64 = r.nodes.iter().map(|n| n.busy_gpu_seconds).sum();
        let capacity = r.end_time.as_secs_f64() * r.total_gpus as f64;
        let total = r.total_gpus.max(1) as f64;
        RunMetrics {
            seed: r.seed,
            policy: r.policy,
            jobs: r.jobs.len(),
            completed: r.jobs.iter().filter(|j| j.status == JobStatus::Completed).count(),
            failed: r.jobs.iter().filter(|j| j.status == JobStatus::Failed).count(),
            deadlocked_learners: r.peak_deadlocked_learners,
            idle_gpu_pct_peak: r.idle_gpu_pct_peak(),
            queued_over_threshold: q.queued,
            queued_over_threshold_pct: q.pct,
            mean_utilization_pct: if capacity > 0.0 { 100.0 * busy / capacity } else { 0.0 },
            peak_running_jobs: r.peak_running_jobs,
            pod_deletion_pct: fi.pod_deletion_pct,
            job_cancel_pct: fi.job_cancel_pct,
            end_time_s: r.end_time.as_secs_f64(),
            gpu_utilization_timeline: r
                .utilization
                .iter()
                .map(|&(t, g)| (t.as_secs_f64(), 100.0 * g as f64 / total))
                .collect(),
            per_job: r
                .jobs
                .iter()
                .map(|j| JobMetrics {
                    job_id: j.spec.job_id.clone(),
                    wait_s: j.wait_time().map(SimDuration::as_secs_f64),
                    restarts: j.restarts,
                    lost_work_s: j.lost_work.as_secs_f64(),
                })
                .collect(),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3},{},{:.3},{:.3},{},{:.3},{:.3},{:.3}",
            self.seed,
            self.policy,
            self.jobs,
            self.completed,
            self.failed,
            self.deadlocked_learners,
            self.idle_gpu_pct_peak,
            self.queued_over_threshold,
            self.queued_over_threshold_pct,
            self.mean_utilization_pct,
            self.peak_running_jobs,
            self.pod_deletion_pct,
            self.job_cancel_pct,
            self.end_time_s
        )
    }
}

/// Header plus one row per run.
pub fn metrics_csv(rows: &[RunMetrics]) -> String {
    let mut out = format!("{}\n", RunMetrics::CSV_HEADER);
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
