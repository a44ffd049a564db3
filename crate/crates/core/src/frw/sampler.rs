//! Sampler service: collects sample requests into batches and answers them
//! with the configured kernel predictor.

use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::sample_gradient_from;
use super::walker::{SampleRequest, TaskKind};
use crate::fdm::{kernel_set, FdmOptions};
use crate::nn::{sample_gradient_transition, sample_poisson_transition, KernelPredictor, NnError, SampledTransition};

#[derive(Debug, Clone)]
pub struct SampleTask {
    pub worker: usize,
    pub slot: usize,
    pub request: SampleRequest,
}

#[derive(Debug)]
pub struct SampleResult {
    pub slot: usize,
    pub outcome: Result<SampledTransition, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConfig {
    pub max_batch: usize,
    pub flush: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub batches: u64,
    pub tasks: u64,
    pub uniform_fallbacks: u64,
    pub oracle_fallbacks: u64,
}

/// Answers one request; identical to what the walker would draw itself
/// from the same seed.
pub fn serve(pred: &dyn KernelPredictor, req: &SampleRequest, fdm: &FdmOptions, stats: &mut SamplerStats) -> Result<SampledTransition, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    match req.kind {
        TaskKind::Poisson => {
            let t = sample_poisson_transition(pred, &req.grid, &mut rng).map_err(|e| e.to_string())?;
            if t.fallback {
                stats.uniform_fallbacks += 1;
            }
            Ok(t)
        }
        TaskKind::Gradient(axis) => match sample_gradient_transition(pred, &req.grid, axis, &mut rng) {
            Err(NnError::Degenerate) => {
                stats.oracle_fallbacks += 1;
                let ks = kernel_set(&req.grid, fdm).map_err(|e| e.to_string())?;
                let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
                let mut t = sample_gradient_from(&ks, axis, &mut rng);
                t.fallback = true;
                Ok(t)
            }
            other => other.map_err(|e| e.to_string()),
        },
    }
}

/// Runs until every sender of `tasks` is dropped, then drains and returns.
pub fn sampler_loop(
    tasks: Receiver<SampleTask>,
    results: &[Sender<SampleResult>],
    pred: &dyn KernelPredictor,
    batch: BatchConfig,
    fdm: &FdmOptions,
) -> SamplerStats {
    let mut stats = SamplerStats::default();
    let mut pending = Vec::with_capacity(batch.max_batch);
    while let Ok(first) = tasks.recv() {
        pending.push(first);
        let deadline = Instant::now() + batch.flush;
        while pending.len() < batch.max_batch {
            let left = deadline.saturating_duration_since(Instant::now());
            match tasks.recv_timeout(left) {
                Ok(t) => pending.push(t),
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        stats.batches += 1;
        stats.tasks += pending.len() as u64;
        for task in pending.drain(..) {
            let outcome = serve(pred, &task.request, fdm, &mut stats);
            // A worker stays alive until all of its requests are answered.
            let _ = results[task.worker].send(SampleResult {
                slot: task.slot,
                outcome,
            });
        }
    }
    stats
}
