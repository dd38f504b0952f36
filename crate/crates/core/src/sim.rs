//! Deterministic discrete-event simulator of the inference server.
//!
//! Resources: a FIFO arrival queue, a fixed set of launch threads, one
//! serialized compute device, and (in executor mode) one busy flag per pool
//! executor. A launch thread handles a query end to end: it dequeues,
//! routes, waits for the executor, pays the launch cost, and stays attached
//! until the device finishes the job — which is what makes latency grow
//! linearly once threads outnumber what the device can absorb.
//!
//! Virtual time is f64 milliseconds. Simultaneous events order by insertion
//! sequence, so a run is a pure function of its inputs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{compute_time, graphless_service, CostParams};
use crate::error::{Error, Result};
use crate::pool::{plan_pool, route, ExecutorPool, PlanStrategy};
use crate::traffic::EmpiricalDist;
use crate::trace::Trace;

/// Server execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Route to fixed-length executors; launch is one cheap thread-side op.
    Graph,
    /// Launch every kernel individually; thread and device run in lockstep.
    Graphless,
}

/// How queries become available to the server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ArrivalProcess {
    /// Use the trace timestamps, shifted so the first query arrives at zero.
    Replay,
    /// The whole trace is queued from the start; latency is measured from
    /// the moment a thread admits the query, since queue wait under
    /// saturation is unbounded by construction.
    Saturation,
    /// Seeded exponential inter-arrival gaps.
    Poisson { rate_qps: f64 },
}

/// Simulation configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_threads: usize,
    pub mode: SimMode,
    pub arrival: ArrivalProcess,
    pub seed: u64,
    /// Leading queries excluded from latency statistics.
    pub warmup: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_threads: 3,
            mode: SimMode::Graph,
            arrival: ArrivalProcess::Saturation,
            seed: 0,
            warmup: 100,
        }
    }
}

/// Results of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Completion minus arrival per completed query, in trace order.
    pub latencies_ms: Vec<f64>,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    pub throughput_qps: f64,
    pub device_utilization: f64,
    pub per_executor_hits: Vec<u64>,
    pub max_queue_depth: usize,
    pub realtime_factor: f64,
    pub completed: usize,
    pub server_errors: usize,
    pub makespan_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival,
    LaunchDone,
    DeviceDone,
    GraphlessDone,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
    query: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we need earliest-first
        other
            .time
            .partial_cmp(&self.time)
            .expect("finite event times")
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Engine<'a> {
    cost: &'a CostParams,
    cfg: &'a SimConfig,
    lengths: Vec<f64>,
    arrivals: Vec<f64>,
    routed: Vec<Option<usize>>,
    pool_lengths: Vec<f64>,

    heap: BinaryHeap<Event>,
    seq: u64,
    pending: VecDeque<usize>,
    next_arrival: usize,
    idle_threads: usize,
    exec_busy: Vec<bool>,
    exec_waiters: Vec<VecDeque<usize>>,
    device_queue: VecDeque<usize>,
    device_busy: bool,
    device_busy_ms: f64,

    arrival_eff: Vec<f64>,
    completion: Vec<Option<f64>>,
    errors: usize,
    per_executor_hits: Vec<u64>,
    max_queue_depth: usize,
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: f64, kind: EventKind, query: usize) {
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
            query,
        });
        self.seq += 1;
    }

    fn device_job_ms(&self, q: usize) -> f64 {
        match self.cfg.mode {
            SimMode::Graph => compute_time(self.cost, self.pool_lengths[self.routed[q].unwrap()]),
            SimMode::Graphless => graphless_service(self.cost, self.lengths[q]),
        }
    }

    fn start_device(&mut self, now: f64) {
        if self.device_busy {
            return;
        }
        let Some(q) = self.device_queue.pop_front() else {
            return;
        };
        self.device_busy = true;
        let dur = self.device_job_ms(q);
        self.device_busy_ms += dur;
        let done = match self.cfg.mode {
            SimMode::Graph => EventKind::DeviceDone,
            SimMode::Graphless => EventKind::GraphlessDone,
        };
        self.push(now + dur, done, q);
    }

    fn dispatch(&mut self, now: f64) {
        while self.idle_threads > 0 {
            let Some(&q) = self.pending.front() else {
                break;
            };
            self.pending.pop_front();
            self.idle_threads -= 1;
            // under saturation the clock starts when the thread admits the
            // query; otherwise it started at the external arrival
            if matches!(self.cfg.arrival, ArrivalProcess::Saturation) {
                self.arrival_eff[q] = now;
            }
            match self.cfg.mode {
                SimMode::Graph => match self.routed[q] {
                    Some(e) => {
                        self.per_executor_hits[e] += 1;
                        if self.exec_busy[e] {
                            self.exec_waiters[e].push_back(q);
                        } else {
                            self.exec_busy[e] = true;
                            self.push(now + self.cost.t_graph_launch_ms, EventKind::LaunchDone, q);
                        }
                    }
                    None => {
                        // routing failed upstream of launch: a counted
                        // server error, thread freed immediately
                        self.errors += 1;
                        self.idle_threads += 1;
                    }
                },
                SimMode::Graphless => {
                    self.device_queue.push_back(q);
                    self.start_device(now);
                }
            }
        }
        self.max_queue_depth = self.max_queue_depth.max(self.pending.len());
    }

    fn run(&mut self) -> f64 {
        let mut now = 0.0;
        self.dispatch(now);
        while let Some(ev) = self.heap.pop() {
            now = ev.time;
            match ev.kind {
                EventKind::Arrival => {
                    self.pending.push_back(ev.query);
                    self.max_queue_depth = self.max_queue_depth.max(self.pending.len());
                    self.dispatch(now);
                }
                EventKind::LaunchDone => {
                    self.device_queue.push_back(ev.query);
                    self.start_device(now);
                }
                EventKind::DeviceDone => {
                    self.completion[ev.query] = Some(now);
                    self.device_busy = false;
                    let e = self.routed[ev.query].unwrap();
                    if let Some(waiter) = self.exec_waiters[e].pop_front() {
                        self.push(now + self.cost.t_graph_launch_ms, EventKind::LaunchDone, waiter);
                    } else {
                        self.exec_busy[e] = false;
                    }
                    self.idle_threads += 1;
                    self.start_device(now);
                    self.dispatch(now);
                }
                EventKind::GraphlessDone => {
                    self.completion[ev.query] = Some(now);
                    self.device_busy = false;
                    self.idle_threads += 1;
                    self.start_device(now);
                    self.dispatch(now);
                }
            }
        }
        now
    }
}

/// Runs one simulation. `pool` is required in executor mode and unused
/// otherwise.
pub fn run_sim(
    trace: &Trace,
    pool: Option<&ExecutorPool>,
    cost: &CostParams,
    cfg: &SimConfig,
) -> Result<SimReport> {
    if trace.is_empty() {
        return Err(Error::data("run_sim: empty trace"));
    }
    if cfg.n_threads < 1 {
        return Err(Error::usage("run_sim: need at least one launch thread"));
    }
    if cfg.warmup >= trace.len() {
        return Err(Error::usage(format!(
            "run_sim: warmup {} must be below trace size {}",
            cfg.warmup,
            trace.len()
        )));
    }
    let pool = match (cfg.mode, pool) {
        (SimMode::Graph, None) => {
            return Err(Error::usage("run_sim: executor mode requires a pool"))
        }
        (SimMode::Graph, Some(p)) => {
            p.validate()?;
            Some(p)
        }
        (SimMode::Graphless, _) => None,
    };

    let n = trace.len();
    let lengths: Vec<f64> = trace.audio_lengths();
    let arrivals: Vec<f64> = match cfg.arrival {
        ArrivalProcess::Saturation => vec![0.0; n],
        ArrivalProcess::Replay => {
            let t0 = trace.queries().first().unwrap().timestamp_ms;
            trace
                .queries()
                .iter()
                .map(|q| (q.timestamp_ms - t0) as f64)
                .collect()
        }
        ArrivalProcess::Poisson { rate_qps } => {
            if !(rate_qps > 0.0) {
                return Err(Error::usage("run_sim: poisson rate must be positive"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut t = 0.0;
            (0..n)
                .map(|_| {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    t += -u.ln() * 1000.0 / rate_qps;
                    t
                })
                .collect()
        }
    };

    let (routed, pool_lengths, n_exec) = match pool {
        Some(p) => {
            let routed: Vec<Option<usize>> =
                lengths.iter().map(|&l| route(p, l).ok()).collect();
            (routed, p.lengths_s.clone(), p.len())
        }
        None => (vec![None; n], Vec::new(), 0),
    };

    let mut engine = Engine {
        cost,
        cfg,
        lengths,
        arrivals: arrivals.clone(),
        routed,
        pool_lengths,
        heap: BinaryHeap::new(),
        seq: 0,
        pending: VecDeque::new(),
        next_arrival: 0,
        idle_threads: cfg.n_threads,
        exec_busy: vec![false; n_exec],
        exec_waiters: vec![VecDeque::new(); n_exec],
        device_queue: VecDeque::new(),
        device_busy: false,
        device_busy_ms: 0.0,
        arrival_eff: arrivals,
        completion: vec![None; n],
        errors: 0,
        per_executor_hits: vec![0; n_exec],
        max_queue_depth: 0,
    };
    let _ = engine.next_arrival;

    match cfg.arrival {
        ArrivalProcess::Saturation => {
            engine.pending = (0..n).collect();
            engine.max_queue_depth = n;
        }
        _ => {
            for q in 0..n {
                let t = engine.arrivals[q];
                engine.push(t, EventKind::Arrival, q);
            }
        }
    }
    let end = engine.run();

    // conservation: every query either completed or errored
    debug_assert_eq!(
        engine.completion.iter().filter(|c| c.is_some()).count() + engine.errors,
        n
    );

    let mut latencies = Vec::with_capacity(n);
    let mut post_warmup = Vec::new();
    let mut audio_done = 0.0;
    for q in 0..n {
        if let Some(done) = engine.completion[q] {
            let lat = done - engine.arrival_eff[q];
            latencies.push(lat);
            if q >= cfg.warmup {
                post_warmup.push(lat);
            }
            audio_done += engine.lengths[q];
        }
    }
    if post_warmup.is_empty() {
        post_warmup = latencies.clone();
    }
    post_warmup.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let completed = latencies.len();
    let makespan_ms = end.max(f64::MIN_POSITIVE);
    let percentile = |p: f64| -> f64 {
        if post_warmup.is_empty() {
            return 0.0;
        }
        crate::labeling::nearest_rank(&post_warmup, p)
    };

    Ok(SimReport {
        p50_ms: percentile(0.5),
        p99_ms: percentile(0.99),
        mean_ms: post_warmup.iter().sum::<f64>() / post_warmup.len().max(1) as f64,
        latencies_ms: latencies,
        throughput_qps: completed as f64 / (makespan_ms / 1000.0),
        device_utilization: (engine.device_busy_ms / makespan_ms).min(1.0),
        per_executor_hits: engine.per_executor_hits,
        max_queue_depth: engine.max_queue_depth,
        realtime_factor: audio_done / (makespan_ms / 1000.0),
        completed,
        server_errors: engine.errors,
        makespan_ms: end,
    })
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub throughput_qps: f64,
    pub utilization: f64,
}

/// Writes sweep rows as CSV with the fixed header.
pub fn write_sweep_csv(rows: &[SweepRow], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "x,p50_ms,p99_ms,throughput_qps,utilization")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.x,
            fmt_f64(r.p50_ms),
            fmt_f64(r.p99_ms),
            fmt_f64(r.throughput_qps),
            fmt_f64(r.utilization)
        )?;
    }
    Ok(())
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Re-plans a pool per executor count and runs the simulation for each.
pub fn sweep_graphs(
    trace: &Trace,
    cost: &CostParams,
    cfg: &SimConfig,
    n_values: &[usize],
    strategy: PlanStrategy,
    budget_mb: f64,
) -> Result<Vec<SweepRow>> {
    let dist = EmpiricalDist::from_trace(trace)?;
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let pool = plan_pool(&dist, n, strategy, cost, budget_mb)?;
        let graph_cfg = SimConfig {
            mode: SimMode::Graph,
            ..*cfg
        };
        let report = run_sim(trace, Some(&pool), cost, &graph_cfg)?;
        rows.push(SweepRow {
            x: n,
            p50_ms: report.p50_ms,
            p99_ms: report.p99_ms,
            throughput_qps: report.throughput_qps,
            utilization: report.device_utilization,
        });
    }
    Ok(rows)
}

/// Varies the launch thread count against a fixed pool.
pub fn sweep_threads(
    trace: &Trace,
    pool: &ExecutorPool,
    cost: &CostParams,
    cfg: &SimConfig,
    k_values: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let run_cfg = SimConfig {
            n_threads: k,
            mode: SimMode::Graph,
            ..*cfg
        };
        let report = run_sim(trace, Some(pool), cost, &run_cfg)?;
        rows.push(SweepRow {
            x: k,
            p50_ms: report.p50_ms,
            p99_ms: report.p99_ms,
            throughput_qps: report.throughput_qps,
            utilization: report.device_utilization,
        });
    }
    Ok(rows)
}

/// Mode comparison over identical seeds and inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    /// Median graphless latency over median executor-mode latency.
    pub latency_speedup: f64,
    /// Executor-mode throughput over graphless throughput.
    pub throughput_gain: f64,
}

/// Runs both modes with the same configuration and reports the ratios.
pub fn compare_modes(
    trace: &Trace,
    pool: &ExecutorPool,
    cost: &CostParams,
    cfg: &SimConfig,
) -> Result<ModeComparison> {
    if trace.is_empty() {
        return Err(Error::data("compare_modes: empty trace"));
    }
    let graph = run_sim(
        trace,
        Some(pool),
        cost,
        &SimConfig {
            mode: SimMode::Graph,
            ..*cfg
        },
    )?;
    let graphless = run_sim(
        trace,
        None,
        cost,
        &SimConfig {
            mode: SimMode::Graphless,
            ..*cfg
        },
    )?;
    Ok(ModeComparison {
        latency_speedup: graphless.p50_ms / graph.p50_ms,
        throughput_gain: graph.throughput_qps / graphless.throughput_qps,
    })
}
