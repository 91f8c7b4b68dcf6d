//! Job specifications, trace ingestion and synthetic workload generation.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{GpuClass, ResourceVector};
use crate::rng::{substream, Substream};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("job {job_id}: {message}")]
    Validation { job_id: String, message: String },
    #[error("no t-shirt size for {gpus} x {gpu_class}")]
    UnknownConfiguration { gpu_class: GpuClass, gpus: u32 },
    #[error("invalid workload config: {0}")]
    InvalidConfig(String),
}

/// A deep-learning training job: `learners` homogeneous pods plus lifecycle parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: String,
    pub submit_time: SimTime,
    pub learners: u32,
    pub gpus_per_learner: u32,
    pub gpu_class: GpuClass,
    /// Millicores.
    pub cpu_per_learner: u64,
    /// MB.
    pub mem_per_learner: u64,
    pub work_duration: SimDuration,
    /// Zero disables checkpointing.
    pub checkpoint_interval: SimDuration,
    /// A sync job progresses only while all learners run.
    pub sync: bool,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |message: &str| {
            Err(WorkloadError::Validation { job_id: self.job_id.clone(), message: message.to_string() })
        };
        if self.job_id.is_empty() {
            return fail("empty job_id");
        }
        if self.learners == 0 {
            return fail("learners must be >= 1");
        }
        if self.gpus_per_learner == 0 {
            return fail("gpus_per_learner must be >= 1");
        }
        if self.work_duration.is_zero() {
            return fail("work_duration must be > 0");
        }
        if self.gpu_class.as_str().is_empty() {
            return fail("empty gpu_class");
        }
        Ok(())
    }

    pub fn per_pod_demand(&self) -> ResourceVector {
        ResourceVector::new(self.gpus_per_learner, self.gpu_class.clone(), self.cpu_per_learner, self.mem_per_learner)
    }

    pub fn total_gpus(&self) -> u32 {
        self.learners * self.gpus_per_learner
    }

    pub fn gang(&self) -> Gang {
        Gang { gang_id: self.job_id.clone(), gang_size: self.learners, per_pod_demand: self.per_pod_demand() }
    }
}

/// The scheduling view of a job: `gang_size` identical pods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gang {
    pub gang_id: String,
    pub gang_size: u32,
    pub per_pod_demand: ResourceVector,
}

/// Recommended CPU cores and memory (GB) for a learner with `gpus` of `gpu_class`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TShirtSize {
    pub gpu_class: GpuClass,
    pub gpus: u32,
    pub cpu_cores: u32,
    pub mem_gb: u32,
}

const TSHIRT_ROWS: [(GpuClass, u32, u32, u32); 7] = [
    (GpuClass::K80, 1, 4, 24),
    (GpuClass::K80, 2, 8, 48),
    (GpuClass::K80, 4, 16, 96),
    (GpuClass::P100, 1, 8, 24),
    (GpuClass::P100, 2, 16, 48),
    (GpuClass::V100, 1, 26, 24),
    (GpuClass::V100, 2, 42, 48),
];

/// Default CPU-only learner: (cores, GB).
pub const CPU_ONLY_DEFAULT: (u32, u32) = (4, 9);

pub fn tshirt_table() -> Vec<TShirtSize> {
    TSHIRT_ROWS
        .iter()
        .map(|(c, g, cpu, mem)| TShirtSize { gpu_class: c.clone(), gpus: *g, cpu_cores: *cpu, mem_gb: *mem })
        .collect()
}

/// (CPU cores, memory GB) for a learner configuration.
pub fn default_resources(gpu_class: &GpuClass, gpus_per_learner: u32) -> Result<(u32, u32), WorkloadError> {
    if gpus_per_learner == 0 {
        return Ok(CPU_ONLY_DEFAULT);
    }
    TSHIRT_ROWS
        .iter()
        .find(|(c, g, _, _)| c == gpu_class && *g == gpus_per_learner)
        .map(|(_, _, cpu, mem)| (*cpu, *mem))
        .ok_or_else(|| WorkloadError::UnknownConfiguration { gpu_class: gpu_class.clone(), gpus: gpus_per_learner })
}

fn default_true() -> bool {
    true
}

/// One line of a JSON-lines trace. `cpu_per_learner` / `mem_per_learner`
/// default from the t-shirt table when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceRecord {
    job_id: String,
    submit_time: SimTime,
    learners: u32,
    gpus_per_learner: u32,
    gpu_class: GpuClass,
    #[serde(default)]
    cpu_per_learner: Option<u64>,
    #[serde(default)]
    mem_per_learner: Option<u64>,
    work_duration: SimDuration,
    #[serde(default)]
    checkpoint_interval: SimDuration,
    #[serde(default = "default_true")]
    sync: bool,
}

impl TraceRecord {
    fn into_spec(self) -> Result<JobSpec, WorkloadError> {
        let (cpu, mem) = match (self.cpu_per_learner, self.mem_per_learner) {
            (Some(cpu), Some(mem)) => (cpu, mem),
            (cpu, mem) => {
                let (cores, gb) = default_resources(&self.gpu_class, self.gpus_per_learner).map_err(|_| {
                    WorkloadError::Validation {
                        job_id: self.job_id.clone(),
                        message: format!(
                            "unknown gpu_class/gpus combination {} x {} and no explicit cpu/mem",
                            self.gpus_per_learner, self.gpu_class
                        ),
                    }
                })?;
                (cpu.unwrap_or(cores as u64 * 1000), mem.unwrap_or(gb as u64 * 1024))
            }
        };
        let spec = JobSpec {
            job_id: self.job_id,
            submit_time: self.submit_time,
            learners: self.learners,
            gpus_per_learner: self.gpus_per_learner,
            gpu_class: self.gpu_class,
            cpu_per_learner: cpu,
            mem_per_learner: mem,
            work_duration: self.work_duration,
            checkpoint_interval: self.checkpoint_interval,
            sync: self.sync,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn sort_by_submit(specs: &mut [JobSpec]) {
    // Stable: equal submit times keep file order.
    specs.sort_by_key(|s| s.submit_time);
}

/// Parses JSON-lines trace text. Blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<JobSpec>, WorkloadError> {
    let mut specs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(line).map_err(|e| WorkloadError::Parse { line: i + 1, message: e.to_string() })?;
        let spec = record.into_spec()?;
        if !seen.insert(spec.job_id.clone()) {
            return Err(WorkloadError::Validation { job_id: spec.job_id, message: "duplicate job_id".into() });
        }
        specs.push(spec);
    }
    sort_by_submit(&mut specs);
    Ok(specs)
}

pub fn load_trace(path: &Path) -> Result<Vec<JobSpec>, WorkloadError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| WorkloadError::Io { path: path.display().to_string(), source })?;
    parse_trace(&text)
}

/// Writes specs as JSON-lines, one job per line.
pub fn write_trace<W: Write>(specs: &[JobSpec], mut out: W) -> std::io::Result<()> {
    for spec in specs {
        serde_json::to_writer(&mut out, spec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Distribution of per-job work durations, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DurationDist {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
    /// Exponential with the given mean, clamped to `[min, max]`.
    Exponential { mean: f64, min: f64, max: f64 },
}

impl Default for DurationDist {
    fn default() -> Self {
        DurationDist::Fixed(3600.0)
    }
}

impl DurationDist {
    fn validate(&self) -> Result<(), WorkloadError> {
        let ok = match *self {
            DurationDist::Fixed(s) => s > 0.0,
            DurationDist::Uniform { min, max } => min > 0.0 && max >= min,
            DurationDist::Exponential { mean, min, max } => mean > 0.0 && min > 0.0 && max >= min,
        };
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::InvalidConfig(format!("bad duration distribution {self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> SimDuration {
        let secs = match *self {
            DurationDist::Fixed(s) => s,
            DurationDist::Uniform { min, max } => {
                if max > min {
                    rng.random_range(min..max)
                } else {
                    min
                }
            }
            DurationDist::Exponential { mean, min, max } => {
                let e: f64 = Exp::new(1.0 / mean).expect("mean > 0").sample(rng);
                e.clamp(min, max)
            }
        };
        // Whole seconds keep generated traces readable.
        SimDuration::from_secs(secs.round().max(1.0) as u64)
    }
}

/// One job shape in a workload mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub weight: f64,
    pub learners: u32,
    pub gpus_per_learner: u32,
    pub gpu_class: GpuClass,
}

fn pick_mix<'a, R: Rng>(mix: &'a [MixEntry], rng: &mut R) -> &'a MixEntry {
    let total: f64 = mix.iter().map(|m| m.weight).sum();
    let mut x = rng.random_range(0.0..total);
    for m in mix {
        if x < m.weight {
            return m;
        }
        x -= m.weight;
    }
    mix.last().expect("mix validated non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadLevel {
    Light,
    Heavy,
}

fn default_k80() -> GpuClass {
    GpuClass::K80
}
fn default_one() -> u32 {
    1
}
fn default_batch_window() -> f64 {
    60.0
}
fn default_day_length() -> f64 {
    86_400.0
}
fn default_burst_fraction() -> f64 {
    0.5
}
fn default_burst_spread() -> f64 {
    600.0
}
fn default_bursts_per_day() -> u32 {
    2
}

/// Synthetic workload recipes, selected by the `scenario` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorkloadConfig {
    /// `n_jobs` identical synchronous jobs, all submitted at time zero.
    GangExperiment {
        n_jobs: u32,
        learners: u32,
        gpus_per_learner: u32,
        #[serde(default = "default_k80")]
        gpu_class: GpuClass,
        #[serde(default)]
        work_duration: DurationDist,
        #[serde(default)]
        checkpoint_interval_s: f64,
    },
    /// Staggered light/heavy job mix: K80 batches at 0 and 15 min, P100 at
    /// 30 min, V100 at 32 min. Each batch spreads over `batch_window_s`.
    LoadMix {
        load: LoadLevel,
        #[serde(default = "default_one")]
        learners: u32,
        #[serde(default = "default_one")]
        gpus_per_learner: u32,
        #[serde(default)]
        work_duration: DurationDist,
        #[serde(default = "default_batch_window")]
        batch_window_s: f64,
        #[serde(default)]
        checkpoint_interval_s: f64,
    },
    /// Homogeneous Poisson arrivals over `duration_s`.
    Poisson {
        rate_per_hour: f64,
        duration_s: f64,
        mix: Vec<MixEntry>,
        #[serde(default)]
        work_duration: DurationDist,
        #[serde(default)]
        checkpoint_interval_s: f64,
    },
    /// Day-structured bursty arrivals: each day's volume is lognormal around
    /// `mean_jobs_per_day`, and a share of each day's jobs cluster around a
    /// few burst centres.
    Bursty {
        days: u32,
        #[serde(default = "default_day_length")]
        day_length_s: f64,
        mean_jobs_per_day: f64,
        /// Lognormal sigma of the per-day volume multiplier.
        #[serde(default)]
        day_sigma: f64,
        #[serde(default = "default_burst_fraction")]
        burst_fraction: f64,
        #[serde(default = "default_bursts_per_day")]
        bursts_per_day: u32,
        #[serde(default = "default_burst_spread")]
        burst_spread_s: f64,
        mix: Vec<MixEntry>,
        #[serde(default)]
        work_duration: DurationDist,
        #[serde(default)]
        checkpoint_interval_s: f64,
    },
}

/// Job counts per batch for the light and heavy mixes.
pub fn load_mix_batches(load: LoadLevel) -> [(GpuClass, u32, SimTime); 4] {
    let counts = match load {
        LoadLevel::Light => [30, 24, 11, 5],
        LoadLevel::Heavy => [300, 240, 110, 50],
    };
    [
        (GpuClass::K80, counts[0], SimTime::ZERO),
        (GpuClass::K80, counts[1], SimTime::from_millis(15 * 60 * 1000)),
        (GpuClass::P100, counts[2], SimTime::from_millis(30 * 60 * 1000)),
        (GpuClass::V100, counts[3], SimTime::from_millis(32 * 60 * 1000)),
    ]
}

fn make_spec(
    job_id: String,
    submit_time: SimTime,
    learners: u32,
    gpus_per_learner: u32,
    gpu_class: &GpuClass,
    work_duration: SimDuration,
    checkpoint_interval_s: f64,
) -> Result<JobSpec, WorkloadError> {
    let (cores, gb) = default_resources(gpu_class, gpus_per_learner)?;
    let spec = JobSpec {
        job_id,
        submit_time,
        learners,
        gpus_per_learner,
        gpu_class: gpu_class.clone(),
        cpu_per_learner: cores as u64 * 1000,
        mem_per_learner: gb as u64 * 1024,
        work_duration,
        checkpoint_interval: SimDuration::from_secs_f64(checkpoint_interval_s),
        sync: true,
    };
    spec.validate()?;
    Ok(spec)
}

fn check_mix(mix: &[MixEntry]) -> Result<(), WorkloadError> {
    if mix.is_empty() || mix.iter().any(|m| !(m.weight >= 0.0)) || mix.iter().map(|m| m.weight).sum::<f64>() <= 0.0 {
        return Err(WorkloadError::InvalidConfig("mix needs at least one entry with positive weight".into()));
    }
    for m in mix {
        default_resources(&m.gpu_class, m.gpus_per_learner)?;
        if m.learners == 0 {
            return Err(WorkloadError::InvalidConfig("mix entry with zero learners".into()));
        }
    }
    Ok(())
}

/// Builds a workload from `config`. Pure in `(config, seed)`.
pub fn generate_synthetic(config: &WorkloadConfig, seed: u64) -> Result<Vec<JobSpec>, WorkloadError> {
    let mut rng = substream(seed, Substream::Workload);
    let mut specs = Vec::new();
    match config {
        WorkloadConfig::GangExperiment {
            n_jobs,
            learners,
            gpus_per_learner,
            gpu_class,
            work_duration,
            checkpoint_interval_s,
        } => {
            work_duration.validate()?;
            if *learners == 0 || *gpus_per_learner == 0 {
                return Err(WorkloadError::InvalidConfig("learners and gpus_per_learner must be >= 1".into()));
            }
            let width = n_jobs.to_string().len().max(2);
            for i in 0..*n_jobs {
                specs.push(make_spec(
                    format!("j{i:0width$}"),
                    SimTime::ZERO,
                    *learners,
                    *gpus_per_learner,
                    gpu_class,
                    work_duration.sample(&mut rng),
                    *checkpoint_interval_s,
                )?);
            }
        }
        WorkloadConfig::LoadMix {
            load,
            learners,
            gpus_per_learner,
            work_duration,
            batch_window_s,
            checkpoint_interval_s,
        } => {
            work_duration.validate()?;
            if *batch_window_s < 0.0 {
                return Err(WorkloadError::InvalidConfig("batch_window_s must be >= 0".into()));
            }
            let mut n = 0usize;
            for (batch, (class, count, start)) in load_mix_batches(*load).into_iter().enumerate() {
                for _ in 0..count {
                    let offset = if *batch_window_s > 0.0 { rng.random_range(0.0..*batch_window_s) } else { 0.0 };
                    specs.push(make_spec(
                        format!("b{}-{class}-{n:04}", batch + 1),
                        start + SimDuration::from_secs_f64(offset),
                        *learners,
                        *gpus_per_learner,
                        &class,
                        work_duration.sample(&mut rng),
                        *checkpoint_interval_s,
                    )?);
                    n += 1;
                }
            }
        }
        WorkloadConfig::Poisson { rate_per_hour, duration_s, mix, work_duration, checkpoint_interval_s } => {
            work_duration.validate()?;
            check_mix(mix)?;
            if !(*rate_per_hour > 0.0) || !(*duration_s > 0.0) {
                return Err(WorkloadError::InvalidConfig("rate_per_hour and duration_s must be > 0".into()));
            }
            let gap = Exp::new(rate_per_hour / 3600.0).expect("rate > 0");
            let mut t = 0.0;
            loop {
                t += gap.sample(&mut rng);
                if t >= *duration_s {
                    break;
                }
                let m = pick_mix(mix, &mut rng);
                let id = format!("p{:05}", specs.len());
                specs.push(make_spec(
                    id,
                    SimTime::from_secs_f64(t),
                    m.learners,
                    m.gpus_per_learner,
                    &m.gpu_class,
                    work_duration.sample(&mut rng),
                    *checkpoint_interval_s,
                )?);
            }
        }
        WorkloadConfig::Bursty {
            days,
            day_length_s,
            mean_jobs_per_day,
            day_sigma,
            burst_fraction,
            bursts_per_day,
            burst_spread_s,
            mix,
            work_duration,
            checkpoint_interval_s,
        } => {
            work_duration.validate()?;
            check_mix(mix)?;
            if !(*day_length_s > 0.0) || !(*mean_jobs_per_day > 0.0) || !(0.0..=1.0).contains(burst_fraction) {
                return Err(WorkloadError::InvalidConfig("bad bursty parameters".into()));
            }
            if *burst_fraction > 0.0 && (*bursts_per_day == 0 || !(*burst_spread_s > 0.0)) {
                return Err(WorkloadError::InvalidConfig("bursts need bursts_per_day >= 1 and burst_spread_s > 0".into()));
            }
            let mut arrivals: Vec<(f64, &MixEntry, SimDuration)> = Vec::new();
            for day in 0..*days {
                let z: f64 = StandardNormal.sample(&mut rng);
                let multiplier = (day_sigma * z - day_sigma * day_sigma / 2.0).exp();
                let n = Poisson::new(mean_jobs_per_day * multiplier).map(|p| p.sample(&mut rng)).unwrap_or(0.0) as u64;
                let day_start = day as f64 * day_length_s;
                let centres: Vec<f64> =
                    (0..*bursts_per_day).map(|_| rng.random_range(0.0..*day_length_s)).collect();
                let spread = Exp::new(1.0 / burst_spread_s.max(f64::MIN_POSITIVE)).expect("spread > 0");
                for _ in 0..n {
                    let within = if !centres.is_empty() && rng.random_bool(*burst_fraction) {
                        let c = centres[rng.random_range(0..centres.len())];
                        (c + spread.sample(&mut rng)).min(day_length_s - 1e-3)
                    } else {
                        rng.random_range(0.0..*day_length_s)
                    };
                    let m = pick_mix(mix, &mut rng);
                    arrivals.push((day_start + within, m, work_duration.sample(&mut rng)));
                }
            }
            arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (i, (t, m, work)) in arrivals.into_iter().enumerate() {
                specs.push(make_spec(
                    format!("t{i:05}"),
                    SimTime::from_secs_f64(t),
                    m.learners,
                    m.gpus_per_learner,
                    &m.gpu_class,
                    work,
                    *checkpoint_interval_s,
                )?);
            }
        }
    }
    sort_by_submit(&mut specs);
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_line_gets_tshirt_defaults() {
        let specs = parse_trace(
            r#"{"job_id":"j1","submit_time":0,"learners":2,"gpus_per_learner":1,"gpu_class":"K80","work_duration":600}"#,
        )
        .unwrap();
        assert_eq!(specs.len(), 1);
        let j = &specs[0];
        assert_eq!(j.cpu_per_learner, 4000);
        assert_eq!(j.mem_per_learner, 24576);
        assert!(j.sync);
        assert_eq!(j.checkpoint_interval, SimDuration::ZERO);
    }

    #[test]
    fn empty_trace_is_empty() {
        assert!(parse_trace("").unwrap().is_empty());
        assert!(parse_trace("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn trace_sorted_by_submit_time() {
        let text = concat!(
            r#"{"job_id":"a","submit_time":10,"learners":1,"gpus_per_learner":1,"gpu_class":"K80","work_duration":5}"#,
            "\n",
            r#"{"job_id":"b","submit_time":5,"learners":1,"gpus_per_learner":1,"gpu_class":"K80","work_duration":5}"#,
        );
        let ids: Vec<_> = parse_trace(text).unwrap().into_iter().map(|s| s.job_id).collect();
        assert_eq!(ids, ["b", "a"]);
    }

    #[test]
    fn trace_errors_carry_line_numbers() {
        let text = "\n{not json}\n";
        match parse_trace(text) {
            Err(WorkloadError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let zero = r#"{"job_id":"z","submit_time":0,"learners":0,"gpus_per_learner":1,"gpu_class":"K80","work_duration":5}"#;
        assert!(matches!(parse_trace(zero), Err(WorkloadError::Validation { .. })));
        let unknown = r#"{"job_id":"u","submit_time":0,"learners":1,"gpus_per_learner":1,"gpu_class":"TPU","work_duration":5}"#;
        assert!(matches!(parse_trace(unknown), Err(WorkloadError::Validation { .. })));
    }

    #[test]
    fn tshirt_rows() {
        assert_eq!(default_resources(&GpuClass::V100, 1).unwrap(), (26, 24));
        assert_eq!(default_resources(&GpuClass::K80, 4).unwrap(), (16, 96));
        assert_eq!(default_resources(&GpuClass::P100, 2).unwrap(), (16, 48));
        assert!(matches!(
            default_resources(&GpuClass::K80, 3),
            Err(WorkloadError::UnknownConfiguration { gpus: 3, .. })
        ));
        assert_eq!(default_resources(&GpuClass::K80, 0).unwrap(), CPU_ONLY_DEFAULT);
        assert_eq!(tshirt_table().len(), 7);
    }

    #[test]
    fn gang_experiment_all_at_time_zero() {
        let cfg = WorkloadConfig::GangExperiment {
            n_jobs: 50,
            learners: 2,
            gpus_per_learner: 1,
            gpu_class: GpuClass::K80,
            work_duration: DurationDist::Fixed(3600.0),
            checkpoint_interval_s: 0.0,
        };
        let specs = generate_synthetic(&cfg, 1).unwrap();
        assert_eq!(specs.len(), 50);
        assert!(specs.iter().all(|s| s.submit_time == SimTime::ZERO));
        assert_eq!(specs.iter().map(JobSpec::total_gpus).sum::<u32>(), 100);
    }

    #[test]
    fn heavy_load_mix_batches() {
        let cfg: WorkloadConfig = serde_json::from_str(r#"{"scenario":"load-mix","load":"heavy"}"#).unwrap();
        let specs = generate_synthetic(&cfg, 3).unwrap();
        let count = |class: GpuClass, from: u64, to: u64| {
            specs
                .iter()
                .filter(|s| s.gpu_class == class && s.submit_time.as_millis() >= from && s.submit_time.as_millis() < to)
                .count()
        };
        assert_eq!(count(GpuClass::K80, 0, 60_000), 300);
        assert_eq!(count(GpuClass::K80, 900_000, 960_000), 240);
        assert_eq!(count(GpuClass::P100, 1_800_000, 1_860_000), 110);
        assert_eq!(count(GpuClass::V100, 1_920_000, 1_980_000), 50);
        assert_eq!(specs.len(), 700);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg: WorkloadConfig = serde_json::from_str(
            r#"{"scenario":"bursty","days":5,"day_length_s":3600,"mean_jobs_per_day":20,"day_sigma":0.6,
                "mix":[{"weight":3,"learners":1,"gpus_per_learner":1,"gpu_class":"K80"},
                       {"weight":1,"learners":1,"gpus_per_learner":4,"gpu_class":"K80"}],
                "work_duration":{"exponential":{"mean":900,"min":60,"max":7200}}}"#,
        )
        .unwrap();
        let a = generate_synthetic(&cfg, 9).unwrap();
        let b = generate_synthetic(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.windows(2).all(|w| w[0].submit_time <= w[1].submit_time));
        assert_ne!(a, generate_synthetic(&cfg, 10).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = WorkloadConfig::Poisson { rate_per_hour: 0.0, duration_s: 10.0, mix: vec![], work_duration: DurationDist::default(), checkpoint_interval_s: 0.0 };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(WorkloadError::InvalidConfig(_))));
        let cfg = WorkloadConfig::GangExperiment {
            n_jobs: 1,
            learners: 0,
            gpus_per_learner: 1,
            gpu_class: GpuClass::K80,
            work_duration: DurationDist::default(),
            checkpoint_interval_s: 0.0,
        };
        assert!(generate_synthetic(&cfg, 0).is_err());
    }

    #[test]
    fn write_then_parse_round_trip() {
        let cfg: WorkloadConfig = serde_json::from_str(r#"{"scenario":"load-mix","load":"light"}"#).unwrap();
        let specs = generate_synthetic(&cfg, 2).unwrap();
        let mut buf = Vec::new();
        write_trace(&specs, &mut buf).unwrap();
        let back = parse_trace(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, specs);
    }
}
