//! Floating random walk capacitance extraction.
//!
//! Walks run in pools owned by worker threads. Cubes the walker cannot
//! resolve locally are posted to sampler threads and the walker parks until
//! its sample comes back. Walk `i` draws from its own random stream and the
//! coordinator folds results in walk order, so the estimate does not depend
//! on thread count or scheduling.

mod accumulator;
mod kernels;
mod sampler;
mod walker;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accumulator::{estimate_error, AccumulatorError, EntryEstimate, EstimatorAccumulator};
pub use kernels::{quantize, sample_gradient_from, sample_poisson_from, CacheCounters, OracleMemo, StratifiedCache};
pub use sampler::{sampler_loop, serve, BatchConfig, SampleResult, SampleTask, SamplerStats};
pub use walker::{CubeCounters, SampleRequest, StepOutcome, TaskKind, WalkSpace, Walker, WalkerState};

use crate::fdm::FdmOptions;
use crate::geometry::{GeometryError, Layout};
use crate::linalg::SolverError;
use crate::nn::{KernelPredictor, ModelBundle};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Accumulator(#[from] AccumulatorError),
    #[error("kernel sampling failed: {0}")]
    Kernel(String),
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

/// Where transitions of cubes outside the fast path come from.
#[derive(Clone)]
pub enum SlowPath {
    /// Finite-difference kernels solved in the walker thread.
    Oracle,
    /// Posted to sampler threads running a kernel predictor.
    Sampler(Arc<dyn KernelPredictor>),
}

#[derive(Clone)]
pub struct KernelSource {
    /// Homogeneous and layered cubes use the stratified cache.
    pub fast_path: bool,
    pub slow: SlowPath,
}

impl std::fmt::Debug for KernelSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl KernelSource {
    /// Finite-difference kernels for every cube.
    pub fn oracle_direct() -> Self {
        Self {
            fast_path: false,
            slow: SlowPath::Oracle,
        }
    }

    /// Stratified cache for layered cubes, finite-difference kernels for the rest.
    pub fn hybrid_oracle() -> Self {
        Self {
            fast_path: true,
            slow: SlowPath::Oracle,
        }
    }

    /// Network sampling for every cube.
    pub fn neural(bundle: Arc<ModelBundle>) -> Self {
        Self::sampled(bundle, false)
    }

    /// Stratified cache for layered cubes, network sampling for the rest.
    pub fn hybrid_neural(bundle: Arc<ModelBundle>) -> Self {
        Self::sampled(bundle, true)
    }

    pub fn sampled(pred: Arc<dyn KernelPredictor>, fast_path: bool) -> Self {
        Self {
            fast_path,
            slow: SlowPath::Sampler(pred),
        }
    }

    pub fn name(&self) -> &'static str {
        match (&self.slow, self.fast_path) {
            (SlowPath::Oracle, false) => "oracle",
            (SlowPath::Oracle, true) => "cache",
            (SlowPath::Sampler(_), false) => "neural-direct",
            (SlowPath::Sampler(_), true) => "neural",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub n: usize,
    pub workers: usize,
    pub pool_size: usize,
    pub target_stderr: f64,
    pub min_walks: u64,
    pub max_walks: u64,
    pub check_interval: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub flush_latency_ms: f64,
    /// Poisson sampler threads; defaults to one per two workers.
    pub poisson_samplers: Option<usize>,
    pub surface_offset: Option<f64>,
    /// Contact tolerance as a fraction of the window diagonal.
    pub delta_rel: f64,
    pub max_steps: u64,
    pub steps_per_tick: usize,
    pub memo_capacity: usize,
    #[serde(skip)]
    pub fdm: FdmOptions,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n: 23,
            workers: 8,
            pool_size: 512,
            target_stderr: 0.01,
            min_walks: 1000,
            max_walks: 10_000_000,
            check_interval: 1000,
            seed: 0,
            batch_size: 2048,
            flush_latency_ms: 2.0,
            poisson_samplers: None,
            surface_offset: None,
            delta_rel: 1e-6,
            max_steps: 100_000,
            steps_per_tick: 64,
            memo_capacity: 2048,
            fdm: FdmOptions::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.into()));
        if self.workers == 0 || self.pool_size == 0 || self.batch_size == 0 || self.steps_per_tick == 0 {
            return bad("workers, pool_size, batch_size and steps_per_tick must be positive");
        }
        if self.max_walks < 2 || self.check_interval == 0 {
            return bad("max_walks must be at least 2 and check_interval positive");
        }
        if !(self.target_stderr >= 0.0) || !(self.delta_rel > 0.0) || !(self.flush_latency_ms >= 0.0) {
            return bad("target_stderr, delta_rel and flush_latency_ms must be nonnegative numbers");
        }
        if self.poisson_samplers == Some(0) {
            return bad("poisson_samplers must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EngineStats {
    pub steps: u64,
    pub cubes_homogeneous: u64,
    pub cubes_stratified: u64,
    pub cubes_nonstratified: u64,
    pub poisson_tasks: u64,
    pub gradient_tasks: u64,
    pub batches: u64,
    pub mean_batch: f64,
    pub uniform_fallbacks: u64,
    pub oracle_fallbacks: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub memo_hits: u64,
    pub memo_misses: u64,
    pub ticks: u64,
    pub conservation_checks: u64,
    pub conservation_violations: u64,
    pub abandoned_walks: u64,
    pub awaiting_at_exit: u64,
    pub step_limit_walks: u64,
}

impl EngineStats {
    /// Share of cubes that needed the slow path classification.
    pub fn nonstratified_fraction(&self) -> f64 {
        let total = self.cubes_homogeneous + self.cubes_stratified + self.cubes_nonstratified;
        if total == 0 {
            0.0
        } else {
            self.cubes_nonstratified as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionResult {
    pub master: u32,
    pub source: String,
    pub entries: Vec<EntryEstimateSer>,
    pub walks: u64,
    pub relative_error: f64,
    pub converged: bool,
    pub elapsed_s: f64,
    pub stats: EngineStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntryEstimateSer {
    pub id: u32,
    pub mean: f64,
    pub stderr: f64,
}

impl ExtractionResult {
    pub fn get(&self, id: u32) -> Option<&EntryEstimateSer> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn self_capacitance(&self) -> &EntryEstimateSer {
        self.get(self.master).expect("master entry present")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "master {}  source {}  walks {}", self.master, self.source, self.walks);
        let _ = writeln!(s, "{:>8} {:>16} {:>14}", "id", "C", "stderr");
        for e in &self.entries {
            let _ = writeln!(s, "{:>8} {:>16.8e} {:>14.4e}", e.id, e.mean, e.stderr);
        }
        let _ = writeln!(
            s,
            "relative error {:.4e} ({})  elapsed {:.3}s",
            self.relative_error,
            if self.converged { "converged" } else { "not converged" },
            self.elapsed_s
        );
        let st = &self.stats;
        let _ = writeln!(
            s,
            "tasks poisson {} gradient {}  nonstratified cubes {:.4}",
            st.poisson_tasks,
            st.gradient_tasks,
            st.nonstratified_fraction()
        );
        s
    }
}

enum Msg {
    Walk { index: u64, terminal: u32, value: f64, limited: bool },
    Fatal(String),
    Done(WorkerStats),
}

#[derive(Debug, Default, Clone, Copy)]
struct WorkerStats {
    ticks: u64,
    checks: u64,
    violations: u64,
    abandoned: u64,
    awaiting_at_exit: u64,
    poisson_tasks: u64,
    gradient_tasks: u64,
}

struct Shared<'a> {
    space: &'a WalkSpace,
    next: AtomicU64,
    limit: AtomicU64,
    abort: AtomicBool,
}

#[derive(Default, Clone, Copy, PartialEq, Eq, Debug)]
struct PoolCounts {
    active: usize,
    awaiting: usize,
    terminated: usize,
}

struct TaskLines {
    poisson: Sender<SampleTask>,
    gradient: Sender<SampleTask>,
    results: Receiver<SampleResult>,
}

fn worker_loop(shared: &Shared, wid: usize, cfg: &EngineConfig, lines: Option<TaskLines>, out: Sender<Msg>) {
    let space = shared.space;
    let pool = cfg.pool_size;
    let mut slots: Vec<Option<Walker>> = (0..pool).map(|_| None).collect();
    let mut counts = PoolCounts::default();
    let mut exhausted = false;
    let mut st = WorkerStats::default();
    let fatal = |e: String| {
        shared.abort.store(true, Ordering::SeqCst);
        shared.limit.store(0, Ordering::SeqCst);
        let _ = out.send(Msg::Fatal(e));
    };

    loop {
        st.ticks += 1;
        let limit = shared.limit.load(Ordering::SeqCst);

        if !exhausted {
            for slot in slots.iter_mut().filter(|s| s.is_none()) {
                let i = shared.next.fetch_add(1, Ordering::SeqCst);
                if i >= limit {
                    exhausted = true;
                    break;
                }
                *slot = Some(space.start_walker(i));
                counts.active += 1;
            }
        }

        for (si, slot) in slots.iter_mut().enumerate() {
            let Some(w) = slot else { continue };
            if w.state != WalkerState::Active {
                continue;
            }
            if w.index >= limit {
                *slot = None;
                counts.active -= 1;
                st.abandoned += 1;
                continue;
            }
            for _ in 0..cfg.steps_per_tick {
                match space.step(w) {
                    Ok(StepOutcome::Moved) => {}
                    Ok(StepOutcome::Terminated) => {
                        counts.active -= 1;
                        counts.terminated += 1;
                        break;
                    }
                    Ok(StepOutcome::Submit(request)) => {
                        let Some(l) = &lines else {
                            fatal("sample request without samplers".into());
                            break;
                        };
                        let line = match request.kind {
                            TaskKind::Poisson => {
                                st.poisson_tasks += 1;
                                &l.poisson
                            }
                            TaskKind::Gradient(_) => {
                                st.gradient_tasks += 1;
                                &l.gradient
                            }
                        };
                        line.send(SampleTask {
                            worker: wid,
                            slot: si,
                            request,
                        })
                        .expect("samplers outlive workers");
                        counts.active -= 1;
                        counts.awaiting += 1;
                        break;
                    }
                    Err(e) => {
                        fatal(e.to_string());
                        break;
                    }
                }
            }
        }

        let limit = shared.limit.load(Ordering::SeqCst);
        if let Some(l) = &lines {
            let mut deliver = |r: SampleResult, counts: &mut PoolCounts, st: &mut WorkerStats| {
                let slot = &mut slots[r.slot];
                let w = slot.as_mut().expect("result for an occupied slot");
                counts.awaiting -= 1;
                match r.outcome {
                    Ok(t) if w.index < limit => {
                        space.deliver(w, &t);
                        counts.active += 1;
                    }
                    Ok(_) => {
                        *slot = None;
                        st.abandoned += 1;
                    }
                    Err(e) => {
                        *slot = None;
                        fatal(e);
                    }
                }
            };
            while let Ok(r) = l.results.try_recv() {
                deliver(r, &mut counts, &mut st);
            }
            if counts.active == 0 && counts.awaiting > 0 {
                if let Ok(r) = l.results.recv_timeout(Duration::from_millis(100)) {
                    deliver(r, &mut counts, &mut st);
                }
            }
        }

        for slot in slots.iter_mut() {
            if let Some(w) = slot {
                if w.state == WalkerState::Terminated {
                    let _ = out.send(Msg::Walk {
                        index: w.index,
                        terminal: w.terminal.expect("terminated walker has a terminal"),
                        value: w.value,
                        limited: w.diagnostic.is_some(),
                    });
                    *slot = None;
                    counts.terminated -= 1;
                }
            }
        }

        let mut scan = PoolCounts::default();
        let mut empty = 0;
        for s in &slots {
            match s.as_ref().map(|w| w.state) {
                None => empty += 1,
                Some(WalkerState::Active) => scan.active += 1,
                Some(WalkerState::AwaitingSample) => scan.awaiting += 1,
                Some(WalkerState::Terminated) => scan.terminated += 1,
            }
        }
        st.checks += 1;
        if scan != counts || scan.active + scan.awaiting + scan.terminated + empty != pool {
            st.violations += 1;
            counts = scan;
        }

        if shared.abort.load(Ordering::SeqCst) {
            exhausted = true;
        }
        if exhausted && empty == pool {
            break;
        }
    }
    st.awaiting_at_exit = counts.awaiting as u64;
    drop(lines);
    let _ = out.send(Msg::Done(st));
}

/// Estimates the capacitance row of `master`.
pub fn run_extraction(
    layout: &Layout,
    master: u32,
    cfg: &EngineConfig,
    source: KernelSource,
) -> Result<ExtractionResult, EngineError> {
    cfg.validate()?;
    let start = Instant::now();
    let space = WalkSpace::new(layout.clone(), master, cfg, source)?;
    let shared = Shared {
        space: &space,
        next: AtomicU64::new(0),
        limit: AtomicU64::new(cfg.max_walks),
        abort: AtomicBool::new(false),
    };
    let mut acc = EstimatorAccumulator::new(layout.conductor_ids());
    let mut wstats = WorkerStats::default();
    let mut sstats = SamplerStats::default();
    let mut fatal: Option<String> = None;
    let mut step_limited = 0u64;
    let fdm = cfg.fdm;
    let batch = BatchConfig {
        max_batch: cfg.batch_size,
        flush: Duration::from_secs_f64(cfg.flush_latency_ms / 1000.0),
    };

    std::thread::scope(|s| {
        let (msg_tx, msg_rx) = unbounded::<Msg>();
        let mut sampler_handles = Vec::new();
        let mut lines: Vec<Option<TaskLines>> = (0..cfg.workers).map(|_| None).collect();
        if let SlowPath::Sampler(pred) = &space.source.slow {
            let (res_txs, res_rxs): (Vec<_>, Vec<_>) = (0..cfg.workers).map(|_| unbounded()).unzip();
            let np = cfg.poisson_samplers.unwrap_or((cfg.workers / 2).max(1));
            let (ptxs, prxs): (Vec<_>, Vec<_>) = (0..np).map(|_| unbounded::<SampleTask>()).unzip();
            let (gtx, grx) = unbounded::<SampleTask>();
            for rx in prxs.into_iter().chain(std::iter::once(grx)) {
                let txs = res_txs.clone();
                let pred = pred.clone();
                sampler_handles.push(s.spawn(move || sampler_loop(rx, &txs, pred.as_ref(), batch, &fdm)));
            }
            for (w, rx) in res_rxs.into_iter().enumerate() {
                lines[w] = Some(TaskLines {
                    poisson: ptxs[w % np].clone(),
                    gradient: gtx.clone(),
                    results: rx,
                });
            }
        }
        for (wid, l) in lines.into_iter().enumerate() {
            let tx = msg_tx.clone();
            let shared = &shared;
            s.spawn(move || worker_loop(shared, wid, cfg, l, tx));
        }
        drop(msg_tx);

        let mut pending: BTreeMap<u64, (u32, f64)> = BTreeMap::new();
        let mut limit = cfg.max_walks;
        let mut folded = 0u64;
        for msg in msg_rx.iter() {
            match msg {
                Msg::Walk {
                    index,
                    terminal,
                    value,
                    limited,
                } => {
                    if index >= limit {
                        continue;
                    }
                    step_limited += limited as u64;
                    pending.insert(index, (terminal, value));
                    while let Some((t, v)) = pending.remove(&folded) {
                        if let Err(e) = acc.push(t, v) {
                            fatal.get_or_insert(e.to_string());
                        }
                        folded += 1;
                        let checkpoint = folded.is_multiple_of(cfg.check_interval) && folded >= cfg.min_walks;
                        let done = folded >= limit
                            || (checkpoint && estimate_error(&acc, master).is_ok_and(|r| r <= cfg.target_stderr));
                        if done {
                            limit = folded;
                            shared.limit.store(folded, Ordering::SeqCst);
                            pending.clear();
                            break;
                        }
                    }
                }
                Msg::Fatal(e) => {
                    fatal.get_or_insert(e);
                }
                Msg::Done(w) => {
                    wstats.ticks += w.ticks;
                    wstats.checks += w.checks;
                    wstats.violations += w.violations;
                    wstats.abandoned += w.abandoned;
                    wstats.awaiting_at_exit += w.awaiting_at_exit;
                    wstats.poisson_tasks += w.poisson_tasks;
                    wstats.gradient_tasks += w.gradient_tasks;
                }
            }
        }
        for h in sampler_handles {
            let st = h.join().expect("sampler thread panicked");
            sstats.batches += st.batches;
            sstats.tasks += st.tasks;
            sstats.uniform_fallbacks += st.uniform_fallbacks;
            sstats.oracle_fallbacks += st.oracle_fallbacks;
        }
    });

    if let Some(e) = fatal {
        return Err(EngineError::Kernel(e));
    }
    let walks = acc.count();
    let relative_error = estimate_error(&acc, master).unwrap_or(f64::INFINITY);
    let c = &space.counters;
    let (cache_hits, cache_misses) = space.cache.counters.snapshot();
    let (memo_hits, memo_misses) = space.memo.counters.snapshot();
    let stats = EngineStats {
        steps: c.steps.load(Ordering::Relaxed),
        cubes_homogeneous: c.homogeneous.load(Ordering::Relaxed),
        cubes_stratified: c.stratified.load(Ordering::Relaxed),
        cubes_nonstratified: c.nonstratified.load(Ordering::Relaxed),
        poisson_tasks: wstats.poisson_tasks,
        gradient_tasks: wstats.gradient_tasks,
        batches: sstats.batches,
        mean_batch: if sstats.batches > 0 {
            sstats.tasks as f64 / sstats.batches as f64
        } else {
            0.0
        },
        uniform_fallbacks: sstats.uniform_fallbacks,
        oracle_fallbacks: sstats.oracle_fallbacks,
        cache_hits,
        cache_misses,
        memo_hits,
        memo_misses,
        ticks: wstats.ticks,
        conservation_checks: wstats.checks,
        conservation_violations: wstats.violations,
        abandoned_walks: wstats.abandoned,
        awaiting_at_exit: wstats.awaiting_at_exit,
        step_limit_walks: step_limited,
    };
    Ok(ExtractionResult {
        master,
        source: space.source.name().into(),
        entries: acc
            .entries()
            .into_iter()
            .map(|e| EntryEstimateSer {
                id: e.id,
                mean: e.mean,
                stderr: e.stderr,
            })
            .collect(),
        walks,
        relative_error,
        converged: relative_error <= cfg.target_stderr,
        elapsed_s: start.elapsed().as_secs_f64(),
        stats,
    })
}
