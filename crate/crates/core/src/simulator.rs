//! Discrete-event simulation of the per-queue multi-class processor-sharing model.
//!
//! Queues are independent, so each is simulated on its own. Under PS with `n`
//! jobs present every job is served at `1/n` of the full rate, so the attained
//! service of all present jobs grows at the same speed. Tracking that common
//! "virtual time" `V` (with `dV/dt = 1/n`), a job that arrives at virtual time
//! `V_a` with a full-rate service requirement `w` leaves when `V = V_a + w`.
//! The next completion is recomputed at every event from the job with the
//! smallest remaining requirement.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::queueing::{loads, QueueError, ServiceTable};
use crate::ua::Association;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileSizeDist {
    /// Exponential with the table's mean file size.
    #[default]
    Exponential,
    /// Every file has exactly the mean size.
    Deterministic,
}

/// One simulation experiment. Service requirements are `s_ij` scaled by a
/// unit-mean draw from `file_sizes`.
#[derive(Clone, Debug)]
pub struct SimSpec {
    pub assoc: Association,
    pub table: ServiceTable,
    pub lambda: f64,
    pub file_sizes: FileSizeDist,
    /// Arrivals stop at `horizon`; jobs in service are then drained.
    pub horizon: f64,
    /// Arrivals before `warmup` are not recorded.
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
    /// Record an event trace of the first replication.
    pub trace: bool,
}

impl SimSpec {
    /// Spec with the default warmup of 10% of the horizon.
    pub fn new(assoc: Association, table: ServiceTable, lambda: f64, horizon: f64, seed: u64) -> Self {
        SimSpec {
            assoc,
            table,
            lambda,
            file_sizes: FileSizeDist::Exponential,
            horizon,
            warmup: 0.1 * horizon,
            seed,
            replications: 10,
            trace: false,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.into()));
        if !(self.horizon > self.warmup && self.warmup >= 0.0) {
            return bad("need horizon > warmup >= 0");
        }
        if self.replications == 0 {
            return bad("need at least one replication");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.assoc.len() != self.table.n_locations() {
            return bad("association length differs from the number of locations");
        }
        self.table.check(&self.assoc)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Departure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time: f64,
    pub queue: usize,
    pub event: EventKind,
    pub class: usize,
    pub n_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub location: usize,
    pub queue: usize,
    /// Recorded arrivals over all replications.
    pub arrivals: u64,
    /// Mean over replications of the per-replication mean sojourn; NaN without data.
    pub mean_sojourn: f64,
    /// 95% confidence half-width across replications; NaN with fewer than two.
    pub ci_half_width: f64,
    /// Analytic mean sojourn, infinite when the queue is unstable.
    pub formula: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueueStats {
    pub queue: usize,
    pub rho: f64,
    /// Arrivals during `[warmup, horizon)`, all replications.
    pub arrivals: u64,
    /// Departures during `[0, horizon]`, all replications.
    pub departures: u64,
    /// All arrivals during `[0, horizon)`, all replications.
    pub arrivals_total: u64,
    /// Time-average number in system over `[warmup, horizon]`.
    pub mean_number: f64,
    /// Measured arrival rate over `[warmup, horizon)`.
    pub arrival_rate: f64,
    /// Mean sojourn of the recorded arrivals.
    pub mean_sojourn: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub classes: Vec<ClassStats>,
    pub queues: Vec<QueueStats>,
    pub system_mean: f64,
    pub system_ci_half_width: f64,
    /// Largest class mean among classes with data.
    pub max_class_mean: f64,
    /// Some queue has load at least one; statistics then describe a transient.
    pub non_stationary: bool,
    pub replications: usize,
    #[serde(skip)]
    pub trace: Option<Vec<TraceEvent>>,
}

#[derive(Clone, Copy)]
struct Job {
    finish: f64,
    arrived: f64,
    class: usize,
}

impl PartialEq for Job {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Job {}
impl PartialOrd for Job {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Job {
    // Reversed: BinaryHeap pops the smallest virtual finish time first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .finish
            .total_cmp(&self.finish)
            .then(other.class.cmp(&self.class))
    }
}

#[derive(Default)]
struct QueueRun {
    /// Per class in the queue: (recorded count, sojourn sum).
    class_sums: Vec<(u64, f64)>,
    arrivals: u64,
    arrivals_total: u64,
    departures: u64,
    sojourn_sum: f64,
    area: f64,
}

struct QueueInput<'a> {
    queue: usize,
    /// (location, rate, mean service seconds)
    classes: &'a [(usize, f64, f64)],
}

fn run_queue(
    q: &QueueInput,
    spec: &SimSpec,
    rng: &mut ChaCha8Rng,
    mut trace: Option<&mut Vec<TraceEvent>>,
) -> QueueRun {
    let mut out = QueueRun {
        class_sums: vec![(0, 0.0); q.classes.len()],
        ..QueueRun::default()
    };
    let total_rate: f64 = q.classes.iter().map(|c| c.1).sum();
    if total_rate <= 0.0 {
        return out;
    }
    let inter = Exp::new(total_rate).expect("positive rate");
    let pick = WeightedIndex::new(q.classes.iter().map(|c| c.1)).expect("positive weights");
    let (warm, horizon) = (spec.warmup, spec.horizon);

    let mut heap: BinaryHeap<Job> = BinaryHeap::new();
    let (mut t, mut v) = (0.0f64, 0.0f64);
    let mut next_arrival = inter.sample(rng);
    let advance = |t: &mut f64, v: &mut f64, to: f64, n: usize, area: &mut f64| {
        if n > 0 {
            let lo = t.max(warm);
            let hi = to.min(horizon);
            if hi > lo {
                *area += n as f64 * (hi - lo);
            }
            *v += (to - *t) / n as f64;
        }
        *t = to;
    };
    loop {
        let n = heap.len();
        let next_departure = heap.peek().map(|j| t + (j.finish - v).max(0.0) * n as f64);
        let arrival_first = next_arrival < horizon && next_departure.is_none_or(|d| next_arrival < d);
        if arrival_first {
            advance(&mut t, &mut v, next_arrival, n, &mut out.area);
            let c = pick.sample(rng);
            let size: f64 = match spec.file_sizes {
                FileSizeDist::Exponential => Exp1.sample(rng),
                FileSizeDist::Deterministic => 1.0,
            };
            heap.push(Job {
                finish: v + q.classes[c].2 * size,
                arrived: t,
                class: c,
            });
            out.arrivals_total += 1;
            if t >= warm {
                out.arrivals += 1;
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceEvent {
                    time: t,
                    queue: q.queue,
                    event: EventKind::Arrival,
                    class: q.classes[c].0,
                    n_after: heap.len(),
                });
            }
            next_arrival = t + inter.sample(rng);
        } else if let Some(d) = next_departure {
            advance(&mut t, &mut v, d, n, &mut out.area);
            let job = heap.pop().expect("non-empty");
            // Pin virtual time to the finisher to keep rounding from accumulating.
            v = job.finish;
            if t <= horizon {
                out.departures += 1;
            }
            if job.arrived >= warm {
                let s = t - job.arrived;
                let e = &mut out.class_sums[job.class];
                e.0 += 1;
                e.1 += s;
                out.sojourn_sum += s;
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceEvent {
                    time: t,
                    queue: q.queue,
                    event: EventKind::Departure,
                    class: q.classes[job.class].0,
                    n_after: heap.len(),
                });
            }
        } else {
            break;
        }
    }
    out
}

fn replication(
    inputs: &[QueueInput],
    spec: &SimSpec,
    rep: usize,
    trace: Option<&mut Vec<TraceEvent>>,
) -> Vec<QueueRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(rep as u64);
    let mut trace = trace;
    inputs
        .iter()
        .map(|q| {
            // Fresh seed per queue so queues do not share a draw sequence.
            let mut qrng = ChaCha8Rng::seed_from_u64(rng.random());
            run_queue(q, spec, &mut qrng, trace.as_deref_mut())
        })
        .collect()
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

pub fn simulate(spec: &SimSpec) -> Result<SimReport, SimError> {
    spec.validate()?;
    let table = &spec.table;
    let rho = loads(&spec.assoc, table, spec.lambda);
    let mut per_queue: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); table.n_queues()];
    for (i, &j) in spec.assoc.target.iter().enumerate() {
        let rate = spec.lambda * table.alpha[i];
        if rate > 0.0 {
            per_queue[j].push((i, rate, table.secs(i, j)));
        }
    }
    let inputs: Vec<QueueInput> = per_queue
        .iter()
        .enumerate()
        .map(|(queue, classes)| QueueInput { queue, classes })
        .collect();

    let mut trace = spec.trace.then(Vec::new);
    let first = replication(&inputs, spec, 0, trace.as_mut());
    let rest: Vec<Vec<QueueRun>> = (1..spec.replications)
        .into_par_iter()
        .map(|r| replication(&inputs, spec, r, None))
        .collect();
    let runs: Vec<Vec<QueueRun>> = std::iter::once(first).chain(rest).collect();

    let window = spec.horizon - spec.warmup;
    let reps = spec.replications as f64;
    let mut classes = Vec::new();
    for q in &inputs {
        for (c, &(location, _, secs)) in q.classes.iter().enumerate() {
            let per_rep: Vec<f64> = runs
                .iter()
                .filter_map(|r| {
                    let (n, s) = r[q.queue].class_sums[c];
                    (n > 0).then(|| s / n as f64)
                })
                .collect();
            let (mean_sojourn, ci_half_width) = mean_ci(&per_rep);
            let r = rho[q.queue];
            classes.push(ClassStats {
                location,
                queue: q.queue,
                arrivals: runs.iter().map(|r| r[q.queue].class_sums[c].0).sum(),
                mean_sojourn,
                ci_half_width,
                formula: if r < 1.0 { secs / (1.0 - r) } else { f64::INFINITY },
            });
        }
    }
    classes.sort_by_key(|c| c.location);

    let queues = (0..table.n_queues())
        .map(|j| {
            let arrivals: u64 = runs.iter().map(|r| r[j].arrivals).sum();
            let sojourn: f64 = runs.iter().map(|r| r[j].sojourn_sum).sum();
            QueueStats {
                queue: j,
                rho: rho[j],
                arrivals,
                departures: runs.iter().map(|r| r[j].departures).sum(),
                arrivals_total: runs.iter().map(|r| r[j].arrivals_total).sum(),
                mean_number: runs.iter().map(|r| r[j].area).sum::<f64>() / (window * reps),
                arrival_rate: arrivals as f64 / (window * reps),
                mean_sojourn: if arrivals > 0 { sojourn / arrivals as f64 } else { 0.0 },
            }
        })
        .collect();

    let system: Vec<f64> = runs
        .iter()
        .filter_map(|r| {
            let n: u64 = r.iter().map(|q| q.arrivals).sum();
            (n > 0).then(|| r.iter().map(|q| q.sojourn_sum).sum::<f64>() / n as f64)
        })
        .collect();
    let (system_mean, system_ci_half_width) = mean_ci(&system);
    Ok(SimReport {
        max_class_mean: classes
            .iter()
            .map(|c| c.mean_sojourn)
            .filter(|m| !m.is_nan())
            .fold(0.0, f64::max),
        classes,
        queues,
        system_mean,
        system_ci_half_width,
        non_stationary: rho.iter().any(|&r| r >= 1.0),
        replications: spec.replications,
        trace,
    })
}

/// Little's-law residual `|L - lambda W| / (lambda W)` per queue; zero for queues without traffic.
pub fn littles_check(report: &SimReport) -> Vec<f64> {
    report
        .queues
        .iter()
        .map(|q| {
            let lw = q.arrival_rate * q.mean_sojourn;
            if lw > 0.0 {
                (q.mean_number - lw).abs() / lw
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_class(secs: f64) -> ServiceTable {
        ServiceTable::from_rows(&[vec![Some(secs)]], vec![1.0])
    }

    #[test]
    fn mm1_ps_sojourn() {
        // rho = 0.5 with mean service 0.1 s: T = 0.1 / 0.5 = 0.2 s.
        let mut spec = SimSpec::new(Association::new(vec![0]), one_class(0.1), 5.0, 20_000.0, 3);
        spec.replications = 8;
        let r = simulate(&spec).unwrap();
        let c = &r.classes[0];
        assert!((c.formula - 0.2).abs() < 1e-12);
        assert!((c.mean_sojourn - 0.2).abs() < c.ci_half_width.max(0.004), "{c:?}");
    }

    #[test]
    fn light_traffic_sees_bare_service_time() {
        let mut spec = SimSpec::new(Association::new(vec![0]), one_class(0.01), 0.01, 400_000.0, 5);
        spec.file_sizes = FileSizeDist::Deterministic;
        spec.replications = 2;
        let r = simulate(&spec).unwrap();
        assert!((r.classes[0].mean_sojourn - 0.01).abs() < 1e-4);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SimSpec::new(Association::new(vec![0]), one_class(0.1), 6.0, 500.0, 9);
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a, b);
        let c = simulate(&SimSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.system_mean, c.system_mean);
    }

    #[test]
    fn departures_never_exceed_arrivals() {
        let t = ServiceTable::from_rows(
            &[vec![Some(0.2), None], vec![Some(0.1), Some(0.3)], vec![None, Some(0.05)]],
            vec![0.3, 0.3, 0.4],
        );
        let spec = SimSpec::new(Association::new(vec![0, 1, 1]), t, 4.0, 300.0, 1);
        let r = simulate(&spec).unwrap();
        for q in &r.queues {
            assert!(q.departures <= q.arrivals_total);
            assert!(q.arrivals <= q.arrivals_total);
        }
    }

    #[test]
    fn trace_is_consistent() {
        let mut spec = SimSpec::new(Association::new(vec![0]), one_class(0.1), 5.0, 50.0, 2);
        spec.trace = true;
        spec.replications = 1;
        let r = simulate(&spec).unwrap();
        let tr = r.trace.unwrap();
        let mut n = 0usize;
        let mut last = 0.0;
        for e in &tr {
            assert!(e.time >= last);
            last = e.time;
            match e.event {
                EventKind::Arrival => n += 1,
                EventKind::Departure => n -= 1,
            }
            assert_eq!(n, e.n_after);
        }
        assert_eq!(n, 0);
    }

    #[test]
    fn uncovered_target_is_an_error() {
        let t = ServiceTable::from_rows(&[vec![Some(0.1), None]], vec![1.0]);
        let spec = SimSpec::new(Association::new(vec![1]), t, 1.0, 10.0, 1);
        assert!(matches!(simulate(&spec), Err(SimError::Queue(QueueError::Uncovered { .. }))));
    }

    #[test]
    fn bad_windows_rejected() {
        let mut spec = SimSpec::new(Association::new(vec![0]), one_class(0.1), 1.0, 10.0, 1);
        spec.warmup = 10.0;
        assert!(matches!(simulate(&spec), Err(SimError::InvalidSpec(_))));
        spec.warmup = 1.0;
        spec.replications = 0;
        assert!(matches!(simulate(&spec), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn littles_residual_zero_for_idle_queue() {
        let t = ServiceTable::from_rows(&[vec![Some(0.1), Some(0.1)]], vec![1.0]);
        let spec = SimSpec::new(Association::new(vec![0]), t, 2.0, 2000.0, 4);
        let r = simulate(&spec).unwrap();
        let res = littles_check(&r);
        assert_eq!(res[1], 0.0);
        assert!(res[0] < 0.02, "{res:?}");
    }

    #[test]
    fn unstable_load_is_flagged() {
        let mut spec = SimSpec::new(Association::new(vec![0]), one_class(0.1), 12.0, 50.0, 1);
        spec.replications = 1;
        let r = simulate(&spec).unwrap();
        assert!(r.non_stationary);
        assert!(r.classes[0].formula.is_infinite());
    }
}
