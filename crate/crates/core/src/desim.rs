//! Discrete-event simulation of the anonymizer queue.
//!
//! The simulator implements the same dynamics as the analytic model —
//! Poisson arrivals, exponential attempt durations, batches of `k` leaving
//! together on success — but measures everything empirically: time-average
//! queue length by area under the sample path, sojourn times per query,
//! utilization as the fraction of time an attempt is in progress. Failed
//! attempts, which cancel out of the stationary equations, are explicit
//! events here, so the simulation exercises exactly the behavior the
//! closed-form layer abstracts away.
//!
//! Success can be decided two ways: a Bernoulli coin with the configured
//! probability `r`, or a geometric clique test over the waiting queries'
//! actual positions and tolerance rectangles (in which case `r` emerges
//! from the geometry rather than being prescribed).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{any_clique, ConstraintGraph, GeometryConfig, GeometryError};
use crate::params::{
    relative_error, LbsQuery, MetricsReport, ParamError, Provenance, SystemParams,
};
use crate::rng::{streams, RandomStream, RngError};
use crate::scalar::{count, lit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("compared reports describe different systems: {0}")]
    ParameterMismatch(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Rng(#[from] RngError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How an attempt's success is decided.
#[derive(Debug, Clone, PartialEq)]
pub enum ServiceMode<T> {
    /// Coin flip with the configured anonymization probability `r`.
    Bernoulli,
    /// Clique test over the waiting queries' geometry. Positions and
    /// tolerances are drawn per arrival; an attempt succeeds when the
    /// oldest `min(queue length, window)` queries contain a `k`-clique,
    /// and the clique members are the ones that depart. The parameter `r`
    /// is ignored in this mode — the success rate is an output.
    GeometricClique {
        geometry: GeometryConfig<T>,
        /// How many head-of-line queries the clique search may consider.
        window: usize,
    },
}

impl<T: Scalar> ServiceMode<T> {
    /// Geometric mode with the conventional window of `2k` queries.
    pub fn geometric(geometry: GeometryConfig<T>) -> Self {
        let window = 2 * geometry.k;
        ServiceMode::GeometricClique { geometry, window }
    }
}

/// When to stop the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon<T> {
    /// Simulated seconds.
    Time(T),
    /// Number of arrivals to process.
    Arrivals(u64),
}

/// What the server does after a failed attempt while the queue still holds
/// at least `k` queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetryPolicy {
    /// Start the next attempt immediately. This matches the Markov chain
    /// (attempts recur at rate mu whenever the level is at least k) and is
    /// the mode comparable to the analytic and numeric layers.
    Immediate,
    /// Stay idle until the next arrival. A successful batch still chains
    /// into a new attempt at once; only failures wait.
    WaitForArrival,
}

/// One pre-scripted attempt in a replay run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayAttempt<T> {
    pub duration: T,
    pub success: bool,
}

/// Deterministic schedule replacing all random draws: absolute arrival
/// times plus attempt durations and outcomes, consumed in order. Used for
/// golden-trace tests of specific published walkthroughs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySchedule<T> {
    pub arrivals: Vec<T>,
    pub attempts: Vec<ReplayAttempt<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub params: SystemParams<T>,
    pub horizon: Horizon<T>,
    /// Simulated seconds excluded from statistics; the queue level at the
    /// warmup boundary carries over.
    pub warmup: T,
    pub seed: u64,
    pub replications: u32,
    pub service_mode: ServiceMode<T>,
    pub retry: RetryPolicy,
    /// Record the sample path (step function, per-query records, busy and
    /// idle periods, event trace). Costs memory linear in event count.
    pub trace: bool,
    pub replay: Option<ReplaySchedule<T>>,
    /// Accept parameters with `lambda >= mu r k`. The queue then has no
    /// stationary distribution and the run measures transient growth.
    pub allow_unstable: bool,
}

impl<T: Scalar> SimConfig<T> {
    /// Bernoulli-mode configuration with immediate retry and one
    /// replication; the common starting point.
    pub fn bernoulli(params: SystemParams<T>, horizon: T, warmup: T, seed: u64) -> Self {
        Self {
            params,
            horizon: Horizon::Time(horizon),
            warmup,
            seed,
            replications: 1,
            service_mode: ServiceMode::Bernoulli,
            retry: RetryPolicy::Immediate,
            trace: false,
            replay: None,
            allow_unstable: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !self.params.is_stable() && !self.allow_unstable {
            return Err(SimError::InvalidConfig(format!(
                "unstable parameters (lambda = {} >= mu r k = {}); set allow_unstable to run anyway",
                self.params.lambda(),
                self.params.drain_rate(),
            )));
        }
        if !(self.warmup >= T::zero() && self.warmup.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "warmup must be finite and non-negative, got {}",
                self.warmup
            )));
        }
        match self.horizon {
            Horizon::Time(end) => {
                if !(end > T::zero() && end.is_finite()) {
                    return Err(SimError::InvalidConfig(format!(
                        "time horizon must be finite and positive, got {end}"
                    )));
                }
                if self.warmup >= end {
                    return Err(SimError::InvalidConfig(format!(
                        "warmup {} must be shorter than the horizon {end}",
                        self.warmup
                    )));
                }
            }
            Horizon::Arrivals(n) => {
                if n == 0 {
                    return Err(SimError::InvalidConfig(
                        "arrival-count horizon must be positive".into(),
                    ));
                }
            }
        }
        if self.replications < 1 {
            return Err(SimError::InvalidConfig(
                "at least one replication is required".into(),
            ));
        }
        if let ServiceMode::GeometricClique { geometry, window } = &self.service_mode {
            geometry.validate()?;
            if geometry.k != self.params.k() {
                return Err(SimError::InvalidConfig(format!(
                    "geometry batch size {} disagrees with queueing k {}",
                    geometry.k,
                    self.params.k()
                )));
            }
            if *window < self.params.k() {
                return Err(SimError::InvalidConfig(format!(
                    "clique window {window} is smaller than the batch size {}",
                    self.params.k()
                )));
            }
        }
        if let Some(replay) = &self.replay {
            if matches!(self.service_mode, ServiceMode::GeometricClique { .. }) {
                return Err(SimError::InvalidConfig(
                    "replay runs script their outcomes and cannot use the geometric mode".into(),
                ));
            }
            let sorted = replay
                .arrivals
                .windows(2)
                .all(|w| w[0] <= w[1]);
            if !sorted || replay.arrivals.iter().any(|&t| !(t >= T::zero())) {
                return Err(SimError::InvalidConfig(
                    "replay arrival times must be non-negative and non-decreasing".into(),
                ));
            }
            if replay.attempts.iter().any(|a| !(a.duration > T::zero())) {
                return Err(SimError::InvalidConfig(
                    "replay attempt durations must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Event categories in the simulator trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Arrival,
    AttemptFail,
    Departure,
}

impl TraceKind {
    pub fn label(&self) -> &'static str {
        match self {
            TraceKind::Arrival => "arrival",
            TraceKind::AttemptFail => "attempt-fail",
            TraceKind::Departure => "departure",
        }
    }
}

/// One trace line: `time, event kind, queue length after, query id`.
/// A successful batch emits one departure line per departing query, all
/// sharing the completion time and the post-batch queue length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent<T> {
    pub t: T,
    pub kind: TraceKind,
    pub len_after: usize,
    pub query: Option<u64>,
}

/// Arrival/departure bookkeeping for one served query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord<T> {
    pub query: u64,
    pub arrival: T,
    pub departure: T,
    pub sojourn: T,
}

/// Full sample-path record of a run (only collected with `trace` set).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePath<T> {
    /// Step function of queue length: the level is constant between
    /// consecutive points. Starts at `(0, 0)`; one point per arrival
    /// (level + 1) and one per successful batch (level - k).
    pub points: Vec<(T, usize)>,
    /// Per-query records for every query that departed within the run.
    pub records: Vec<QueryRecord<T>>,
    /// Completed busy-period lengths (attempt in progress throughout).
    pub busy_periods: Vec<T>,
    /// Completed idle-period lengths.
    pub idle_periods: Vec<T>,
    /// One line per event, departures expanded per query.
    pub events: Vec<TraceEvent<T>>,
}

/// Summary statistics of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport<T> {
    pub metrics: MetricsReport<T>,
    /// Post-warmup arrival rate estimate.
    pub lambda_observed: T,
    pub p50_sojourn: T,
    pub p95_sojourn: T,
    pub mean_busy_period: T,
    pub mean_idle_period: T,
    /// Whole-run event counts (warmup included).
    pub arrivals: u64,
    pub departures: u64,
    pub attempts: u64,
    pub failed_attempts: u64,
    pub final_queue_len: usize,
    /// Post-warmup simulated seconds behind the time averages.
    pub measured_time: T,
    /// Fraction of measured time spent at each queue level.
    pub level_occupancy: Vec<T>,
    /// How many post-warmup arrivals found the system at each level.
    pub arrival_seen_counts: Vec<u64>,
    pub seed: u64,
}

/// Result of [`run`]: the report plus the sample path when tracing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome<T> {
    pub report: SimReport<T>,
    pub path: Option<SamplePath<T>>,
}

/// A replication mean with a normal-approximation 95% half-width
/// (`1.96 s / sqrt(n)`; zero when only one replication exists).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub mean: T,
    pub half_width: T,
}

impl<T: Scalar> Interval<T> {
    fn from_samples(samples: &[T]) -> Self {
        let n = count::<T>(samples.len());
        let mean = samples.iter().copied().sum::<T>() / n;
        if samples.len() < 2 {
            return Self {
                mean,
                half_width: T::zero(),
            };
        }
        let var = samples
            .iter()
            .map(|&x| (x - mean) * (x - mean))
            .sum::<T>()
            / (n - T::one());
        Self {
            mean,
            half_width: lit::<T>(1.96) * (var / n).sqrt(),
        }
    }

    pub fn contains(&self, value: T) -> bool {
        (value - self.mean).abs() <= self.half_width
    }

    /// Whether two intervals intersect.
    pub fn overlaps(&self, other: &Interval<T>) -> bool {
        (self.mean - other.mean).abs() <= self.half_width + other.half_width
    }
}

/// Aggregated metrics across independent replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary<T> {
    pub params: SystemParams<T>,
    pub replications: u32,
    pub l: Interval<T>,
    pub lq: Interval<T>,
    pub w: Interval<T>,
    pub wq: Interval<T>,
    pub s: Interval<T>,
    pub lambda_observed: Interval<T>,
    pub reports: Vec<SimReport<T>>,
}

impl<T: Scalar> ReplicationSummary<T> {
    /// The replication means as a standard metrics report.
    pub fn mean_metrics(&self) -> MetricsReport<T> {
        MetricsReport {
            params: self.params,
            l: self.l.mean,
            lq: self.lq.mean,
            w: self.w.mean,
            wq: self.wq.mean,
            s: self.s.mean,
            provenance: Provenance::Simulation,
            warning: None,
        }
    }
}

/// Runs one simulation (replication index 0 of the seed).
pub fn run<T: Scalar>(cfg: &SimConfig<T>) -> Result<SimOutcome<T>, SimError> {
    cfg.validate()?;
    run_replication(cfg, 0)
}

/// Runs `cfg.replications` independent replications (distinct substreams
/// of the same seed) and aggregates the headline metrics. Sample paths are
/// not retained. The first replication reproduces [`run`] exactly.
pub fn replicate<T: Scalar>(cfg: &SimConfig<T>) -> Result<ReplicationSummary<T>, SimError> {
    cfg.validate()?;
    if cfg.replay.is_some() && cfg.replications > 1 {
        return Err(SimError::InvalidConfig(
            "replay runs are deterministic; replications would repeat one path".into(),
        ));
    }
    let mut quiet = cfg.clone();
    quiet.trace = false;
    let mut reports = Vec::with_capacity(cfg.replications as usize);
    for rep in 0..cfg.replications {
        reports.push(run_replication(&quiet, rep as u64)?.report);
    }
    let column = |f: &dyn Fn(&SimReport<T>) -> T| -> Vec<T> { reports.iter().map(f).collect() };
    Ok(ReplicationSummary {
        params: cfg.params,
        replications: cfg.replications,
        l: Interval::from_samples(&column(&|r| r.metrics.l)),
        lq: Interval::from_samples(&column(&|r| r.metrics.lq)),
        w: Interval::from_samples(&column(&|r| r.metrics.w)),
        wq: Interval::from_samples(&column(&|r| r.metrics.wq)),
        s: Interval::from_samples(&column(&|r| r.metrics.s)),
        lambda_observed: Interval::from_samples(&column(&|r| r.lambda_observed)),
        reports,
    })
}

fn run_replication<T: Scalar>(cfg: &SimConfig<T>, rep: u64) -> Result<SimOutcome<T>, SimError> {
    Engine::new(cfg, rep).run()
}

/// Metric-by-metric comparison of two reports over the same parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow<T> {
    pub metric: &'static str,
    pub left: T,
    pub right: T,
    /// Relative difference with the right value as reference (absolute
    /// when the reference is zero).
    pub rel_error: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareTable<T> {
    pub left: Provenance,
    pub right: Provenance,
    pub rows: Vec<CompareRow<T>>,
}

impl<T: Scalar> CompareTable<T> {
    pub fn max_rel_error(&self) -> T {
        self.rows
            .iter()
            .map(|r| r.rel_error)
            .fold(T::zero(), T::max)
    }

    pub fn row(&self, metric: &str) -> Option<&CompareRow<T>> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Compares two metrics reports of the same system, typically one
/// estimated layer against one reference layer.
pub fn compare<T: Scalar>(
    left: &MetricsReport<T>,
    right: &MetricsReport<T>,
) -> Result<CompareTable<T>, SimError> {
    if left.params != right.params {
        return Err(SimError::ParameterMismatch(format!(
            "left is {:?}, right is {:?}",
            left.params, right.params
        )));
    }
    let rows = left
        .values()
        .iter()
        .zip(right.values().iter())
        .map(|(&(metric, lv), &(_, rv))| CompareRow {
            metric,
            left: lv,
            right: rv,
            rel_error: relative_error(lv, rv),
        })
        .collect();
    Ok(CompareTable {
        left: left.provenance,
        right: right.provenance,
        rows,
    })
}

/// The event loop. Exactly two events can be pending at once: the next
/// arrival and the completion of the attempt in progress (if any). At
/// equal timestamps the arrival is processed first; with exponential draws
/// ties have probability zero, so the rule only matters in replay mode,
/// where it pins down the golden traces.
struct Engine<'a, T: Scalar> {
    cfg: &'a SimConfig<T>,
    arrivals_rng: RandomStream,
    service_rng: RandomStream,
    success_rng: RandomStream,
    positions_rng: RandomStream,
    now: T,
    queue: VecDeque<LbsQuery<T>>,
    next_arrival: T,
    /// Completion time of the attempt in progress; infinity when idle.
    attempt_done: T,
    /// Scripted outcome of the attempt in progress (replay mode).
    scripted_outcome: Option<bool>,
    replay_arrival_idx: usize,
    replay_attempt_idx: usize,
    // Counters over the whole run.
    arrivals: u64,
    departures: u64,
    attempts: u64,
    failed_attempts: u64,
    // Post-warmup accumulators.
    area: T,
    busy_time: T,
    level_time: Vec<T>,
    measured_arrivals: u64,
    arrival_seen_counts: Vec<u64>,
    sojourns: Vec<T>,
    busy_period_starts: u64,
    // Path recording (only with cfg.trace).
    last_transition: T,
    points: Vec<(T, usize)>,
    records: Vec<QueryRecord<T>>,
    busy_periods: Vec<T>,
    idle_periods: Vec<T>,
    events: Vec<TraceEvent<T>>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(cfg: &'a SimConfig<T>, rep: u64) -> Self {
        let seed = cfg.seed;
        let mut engine = Self {
            cfg,
            arrivals_rng: RandomStream::for_replication(seed, streams::ARRIVALS, rep),
            service_rng: RandomStream::for_replication(seed, streams::SERVICE, rep),
            success_rng: RandomStream::for_replication(seed, streams::SUCCESS, rep),
            positions_rng: RandomStream::for_replication(seed, streams::POSITIONS, rep),
            now: T::zero(),
            queue: VecDeque::new(),
            next_arrival: T::infinity(),
            attempt_done: T::infinity(),
            scripted_outcome: None,
            replay_arrival_idx: 0,
            replay_attempt_idx: 0,
            arrivals: 0,
            departures: 0,
            attempts: 0,
            failed_attempts: 0,
            area: T::zero(),
            busy_time: T::zero(),
            level_time: Vec::new(),
            measured_arrivals: 0,
            arrival_seen_counts: Vec::new(),
            sojourns: Vec::new(),
            busy_period_starts: 0,
            last_transition: T::zero(),
            points: Vec::new(),
            records: Vec::new(),
            busy_periods: Vec::new(),
            idle_periods: Vec::new(),
            events: Vec::new(),
        };
        if cfg.trace {
            engine.points.push((T::zero(), 0));
        }
        engine
    }

    fn run(mut self) -> Result<SimOutcome<T>, SimError> {
        self.schedule_first_arrival()?;
        let end = match self.cfg.horizon {
            Horizon::Time(end) => end,
            Horizon::Arrivals(_) => T::infinity(),
        };
        loop {
            if let Horizon::Arrivals(limit) = self.cfg.horizon {
                if self.arrivals >= limit {
                    break;
                }
            }
            let next = self.next_arrival.min(self.attempt_done);
            if next > end {
                self.advance(end);
                break;
            }
            if next.is_infinite() {
                // Nothing left to happen (exhausted replay schedule).
                break;
            }
            self.advance(next);
            if self.next_arrival <= self.attempt_done {
                self.handle_arrival()?;
            } else {
                self.handle_completion()?;
            }
        }
        Ok(self.finish())
    }

    /// Accrues time-weighted statistics for the constant-state segment
    /// from `self.now` to `to`, restricted to the post-warmup window.
    fn advance(&mut self, to: T) {
        let from = self.now.max(self.cfg.warmup);
        if to > from {
            let dt = to - from;
            let level = self.queue.len();
            self.area += count::<T>(level) * dt;
            if self.attempt_done.is_finite() {
                self.busy_time += dt;
            }
            if self.level_time.len() <= level {
                self.level_time.resize(level + 1, T::zero());
            }
            self.level_time[level] += dt;
        }
        self.now = to;
    }

    fn schedule_first_arrival(&mut self) -> Result<(), SimError> {
        self.schedule_next_arrival()
    }

    fn schedule_next_arrival(&mut self) -> Result<(), SimError> {
        self.next_arrival = match &self.cfg.replay {
            Some(replay) => {
                if self.replay_arrival_idx < replay.arrivals.len() {
                    let t = replay.arrivals[self.replay_arrival_idx];
                    self.replay_arrival_idx += 1;
                    t
                } else {
                    T::infinity()
                }
            }
            None => self.now + self.arrivals_rng.exp_sample(self.cfg.params.lambda())?,
        };
        Ok(())
    }

    fn handle_arrival(&mut self) -> Result<(), SimError> {
        let seen = self.queue.len();
        self.arrivals += 1;
        if self.now >= self.cfg.warmup {
            self.measured_arrivals += 1;
            if self.arrival_seen_counts.len() <= seen {
                self.arrival_seen_counts.resize(seen + 1, 0);
            }
            self.arrival_seen_counts[seen] += 1;
        }
        let query = self.make_query();
        let id = query.user_id;
        self.queue.push_back(query);
        if self.cfg.trace {
            self.points.push((self.now, self.queue.len()));
            self.events.push(TraceEvent {
                t: self.now,
                kind: TraceKind::Arrival,
                len_after: self.queue.len(),
                query: Some(id),
            });
        }
        self.schedule_next_arrival()?;
        if self.attempt_done.is_infinite() && self.queue.len() >= self.cfg.params.k() {
            self.start_attempt(true)?;
        }
        Ok(())
    }

    fn make_query(&mut self) -> LbsQuery<T> {
        let id = self.arrivals;
        let mut query = match &self.cfg.service_mode {
            ServiceMode::GeometricClique { geometry, .. } => {
                // Position and tolerance draws come from their own stream
                // so that Bernoulli runs with the same seed stay aligned.
                geometry.draw_query(id, (id - 1) as usize, &mut self.positions_rng)
            }
            ServiceMode::Bernoulli => LbsQuery::at(id, T::zero(), T::zero(), T::zero(), T::zero()),
        };
        query.query_no = id;
        query.timestamp = self.now;
        query.k = self.cfg.params.k();
        query
    }

    fn start_attempt(&mut self, fresh: bool) -> Result<(), SimError> {
        debug_assert!(self.attempt_done.is_infinite());
        debug_assert!(self.queue.len() >= self.cfg.params.k());
        let duration = match &self.cfg.replay {
            Some(replay) => {
                let attempt = replay.attempts.get(self.replay_attempt_idx).ok_or_else(|| {
                    SimError::InvalidConfig(format!(
                        "replay schedule exhausted: an attempt would start at t = {} \
                         but only {} attempts are scripted",
                        self.now,
                        replay.attempts.len()
                    ))
                })?;
                self.replay_attempt_idx += 1;
                self.scripted_outcome = Some(attempt.success);
                attempt.duration
            }
            None => self.service_rng.exp_sample(self.cfg.params.mu())?,
        };
        self.attempt_done = self.now + duration;
        if fresh {
            if self.now >= self.cfg.warmup {
                self.busy_period_starts += 1;
            }
            if self.cfg.trace {
                self.idle_periods.push(self.now - self.last_transition);
                self.last_transition = self.now;
            }
        }
        Ok(())
    }

    fn handle_completion(&mut self) -> Result<(), SimError> {
        self.attempts += 1;
        self.attempt_done = T::infinity();
        let k = self.cfg.params.k();
        // Which queries depart on success: the FCFS-oldest k, unless the
        // geometry picks a clique out of the head-of-line window.
        let departing: Option<Vec<usize>> = match &self.cfg.service_mode {
            ServiceMode::Bernoulli => {
                let success = match self.scripted_outcome.take() {
                    Some(outcome) => outcome,
                    None => self.success_rng.bernoulli(self.cfg.params.r()),
                };
                success.then(|| (0..k).collect())
            }
            ServiceMode::GeometricClique { geometry, window } => {
                let span = self.queue.len().min(*window);
                let nodes: Vec<LbsQuery<T>> =
                    self.queue.iter().take(span).cloned().collect();
                let areas: Option<Vec<T>> = geometry.mmb_areas.as_ref().map(|list| {
                    nodes
                        .iter()
                        .map(|q| list[(q.user_id - 1) as usize % list.len()])
                        .collect()
                });
                let graph = ConstraintGraph::build(
                    &nodes,
                    geometry.edge_rule,
                    areas.as_deref(),
                    &geometry.region,
                )?;
                any_clique(&graph, k)
            }
        };
        let succeeded = departing.is_some();
        match departing {
            Some(indices) => self.depart(&indices),
            None => {
                self.failed_attempts += 1;
                if self.cfg.trace {
                    self.events.push(TraceEvent {
                        t: self.now,
                        kind: TraceKind::AttemptFail,
                        len_after: self.queue.len(),
                        query: None,
                    });
                }
            }
        }
        let chain = self.queue.len() >= k
            && match self.cfg.retry {
                RetryPolicy::Immediate => true,
                // After a failure the server waits for the next arrival;
                // a fresh batch after success starts at once.
                RetryPolicy::WaitForArrival => succeeded,
            };
        if chain {
            // The busy stretch continues without a gap.
            self.start_attempt(false)?;
        } else if self.cfg.trace {
            self.busy_periods.push(self.now - self.last_transition);
            self.last_transition = self.now;
        }
        Ok(())
    }

    fn depart(&mut self, indices: &[usize]) {
        let k = indices.len();
        debug_assert_eq!(k, self.cfg.params.k());
        let mut removed: Vec<LbsQuery<T>> = Vec::with_capacity(k);
        for &i in indices.iter().rev() {
            removed.push(self.queue.remove(i).expect("departure index in range"));
        }
        removed.reverse();
        self.departures += k as u64;
        let len_after = self.queue.len();
        for query in &removed {
            if query.timestamp >= self.cfg.warmup {
                self.sojourns.push(self.now - query.timestamp);
            }
            if self.cfg.trace {
                self.records.push(QueryRecord {
                    query: query.user_id,
                    arrival: query.timestamp,
                    departure: self.now,
                    sojourn: self.now - query.timestamp,
                });
                self.events.push(TraceEvent {
                    t: self.now,
                    kind: TraceKind::Departure,
                    len_after,
                    query: Some(query.user_id),
                });
            }
        }
        if self.cfg.trace {
            self.points.push((self.now, len_after));
        }
    }

    fn finish(mut self) -> SimOutcome<T> {
        let measured_time = (self.now - self.cfg.warmup).max(T::zero());
        let zero = T::zero();
        let has_time = measured_time > zero;
        let l = if has_time { self.area / measured_time } else { zero };
        let s = if has_time {
            self.busy_time / measured_time
        } else {
            zero
        };
        let lambda_observed = if has_time {
            count::<T>(self.measured_arrivals as usize) / measured_time
        } else {
            zero
        };
        self.sojourns
            .sort_by(|a, b| a.partial_cmp(b).expect("sojourns are finite"));
        let (w, wq) = if self.sojourns.is_empty() {
            (zero, zero)
        } else {
            let w = self.sojourns.iter().copied().sum::<T>() / count::<T>(self.sojourns.len());
            (w, w - self.cfg.params.mu().recip())
        };
        let lq = lambda_observed * wq;
        let metrics = MetricsReport {
            params: self.cfg.params,
            l,
            lq,
            w,
            wq,
            s,
            provenance: Provenance::Simulation,
            warning: None,
        };
        let mean_busy_period = if self.busy_period_starts > 0 {
            self.busy_time / count::<T>(self.busy_period_starts as usize)
        } else {
            zero
        };
        let mean_idle_period = if self.busy_period_starts > 0 {
            (measured_time - self.busy_time) / count::<T>(self.busy_period_starts as usize)
        } else {
            measured_time
        };
        let level_occupancy = if has_time {
            self.level_time
                .iter()
                .map(|&t| t / measured_time)
                .collect()
        } else {
            Vec::new()
        };
        let report = SimReport {
            metrics,
            lambda_observed,
            p50_sojourn: percentile(&self.sojourns, 0.50),
            p95_sojourn: percentile(&self.sojourns, 0.95),
            mean_busy_period,
            mean_idle_period,
            arrivals: self.arrivals,
            departures: self.departures,
            attempts: self.attempts,
            failed_attempts: self.failed_attempts,
            final_queue_len: self.queue.len(),
            measured_time,
            level_occupancy,
            arrival_seen_counts: self.arrival_seen_counts,
            seed: self.cfg.seed,
        };
        let path = if self.cfg.trace {
            Some(SamplePath {
                points: self.points,
                records: self.records,
                busy_periods: self.busy_periods,
                idle_periods: self.idle_periods,
                events: self.events,
            })
        } else {
            None
        };
        SimOutcome { report, path }
    }
}

/// Nearest-rank percentile of an ascending-sorted sample; zero when empty.
fn percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    if sorted.is_empty() {
        return T::zero();
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
