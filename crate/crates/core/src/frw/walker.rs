//! Single-walk state machine.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{sample_gradient_from, sample_poisson_from, OracleMemo, StratifiedCache};
use super::{EngineConfig, EngineError, KernelSource, SlowPath};
use crate::dielectric::{cube_profile, voxelize_cube, VoxelGrid};
use crate::fdm::KernelSet;
use crate::geometry::{
    build_gaussian_surface, classify_cube, default_surface_offset, CubeClass, GaussianSurface, Layout, Point3,
    SignedAxis, TransitionCube,
};
use crate::nn::SampledTransition;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkerState {
    Active,
    AwaitingSample,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Poisson,
    /// Derivative along `+axis`.
    Gradient(usize),
}

/// A transition the walker cannot take on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    pub grid: VoxelGrid,
    pub kind: TaskKind,
    pub seed: u64,
    pub half_width: f64,
}

#[derive(Debug, Clone)]
pub struct Walker {
    pub index: u64,
    pub state: WalkerState,
    pub position: Point3,
    pub first_step: bool,
    /// Walk value, fixed at the first transition.
    pub value: f64,
    pub terminal: Option<u32>,
    pub steps: u64,
    pub diagnostic: Option<String>,
    normal: SignedAxis,
    /// `α(r) / f(r)` at the start point.
    amplitude: f64,
    pending: Option<TransitionCube>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Moved,
    Submit(SampleRequest),
    Terminated,
}

#[derive(Debug, Default)]
pub struct CubeCounters {
    pub homogeneous: AtomicU64,
    pub stratified: AtomicU64,
    pub nonstratified: AtomicU64,
    pub steps: AtomicU64,
}

/// Everything a walk needs: layout, target surface and kernel sources.
pub struct WalkSpace {
    pub layout: Layout,
    pub master: u32,
    pub surface: GaussianSurface,
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub max_steps: u64,
    pub source: KernelSource,
    pub cache: StratifiedCache,
    pub memo: OracleMemo,
    pub counters: CubeCounters,
}

impl WalkSpace {
    pub fn new(layout: Layout, master: u32, cfg: &EngineConfig, source: KernelSource) -> Result<Self, EngineError> {
        layout.conductor(master)?;
        let offset = match cfg.surface_offset {
            Some(o) => o,
            None => default_surface_offset(&layout, master)?,
        };
        let surface = build_gaussian_surface(&layout, master, offset)?;
        if surface.faces.is_empty() {
            return Err(EngineError::Config("gaussian surface is empty".into()));
        }
        if let SlowPath::Sampler(p) = &source.slow {
            if p.n() != cfg.n {
                return Err(EngineError::Config(format!(
                    "kernel predictor uses n={}, engine uses n={}",
                    p.n(),
                    cfg.n
                )));
            }
        }
        crate::dielectric::check_grid_size(cfg.n).map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(Self {
            delta: cfg.delta_rel * layout.diagonal(),
            layout,
            master,
            surface,
            n: cfg.n,
            seed: cfg.seed,
            max_steps: cfg.max_steps,
            source,
            cache: StratifiedCache::new(cfg.n, cfg.fdm),
            memo: OracleMemo::new(cfg.fdm, cfg.memo_capacity),
            counters: CubeCounters::default(),
        })
    }

    pub fn walker_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// A fresh walker at a uniform point of the Gaussian surface.
    pub fn start_walker(&self, index: u64) -> Walker {
        let mut rng = self.walker_rng(index);
        let s = self.surface.sample(&mut rng);
        let position = self.layout.fold(s.point);
        Walker {
            index,
            state: WalkerState::Active,
            position,
            first_step: true,
            value: 0.0,
            terminal: None,
            steps: 0,
            diagnostic: None,
            normal: s.normal,
            amplitude: self.layout.kappa_at(position) / s.density,
            pending: None,
            rng,
        }
    }

    fn terminate(&self, w: &mut Walker, id: u32) -> StepOutcome {
        w.state = WalkerState::Terminated;
        w.terminal = Some(id);
        StepOutcome::Terminated
    }

    /// Advances an active walker by one transition, or hands the transition
    /// off as a sample request.
    pub fn step(&self, w: &mut Walker) -> Result<StepOutcome, EngineError> {
        debug_assert_eq!(w.state, WalkerState::Active);
        let (id, d) = self.layout.nearest_conductor(w.position);
        if d <= self.delta {
            return Ok(self.terminate(w, id));
        }
        if w.steps >= self.max_steps {
            w.diagnostic = Some(format!("step limit {} reached", self.max_steps));
            return Ok(self.terminate(w, id));
        }
        let cube = TransitionCube {
            center: w.position,
            half_width: d,
        };
        let kind = if w.first_step {
            TaskKind::Gradient(w.normal.axis)
        } else {
            TaskKind::Poisson
        };
        let class = classify_cube(&self.layout, &cube);
        let c = &self.counters;
        match class {
            CubeClass::Homogeneous => c.homogeneous.fetch_add(1, Ordering::Relaxed),
            CubeClass::Stratified(_) => c.stratified.fetch_add(1, Ordering::Relaxed),
            CubeClass::NonStratified => c.nonstratified.fetch_add(1, Ordering::Relaxed),
        };
        let ks: Arc<KernelSet> = match (self.source.fast_path, class) {
            (true, CubeClass::Homogeneous) => self.cache.homogeneous()?,
            (true, CubeClass::Stratified(axis)) => self.cache.lookup(axis, &cube_profile(&self.layout, &cube, axis, self.n))?,
            _ => {
                let grid = if class == CubeClass::Homogeneous {
                    VoxelGrid::homogeneous(self.n, 1.0).expect("valid size")
                } else {
                    voxelize_cube(&self.layout, &cube, self.n).map_err(|e| EngineError::Config(e.to_string()))?
                };
                match &self.source.slow {
                    SlowPath::Oracle => self.memo.get(&grid)?,
                    SlowPath::Sampler(_) => {
                        w.state = WalkerState::AwaitingSample;
                        w.pending = Some(cube);
                        return Ok(StepOutcome::Submit(SampleRequest {
                            grid,
                            kind,
                            seed: w.rng.next_u64(),
                            half_width: d,
                        }));
                    }
                }
            }
        };
        let t = match kind {
            TaskKind::Gradient(axis) => sample_gradient_from(&ks, axis, &mut w.rng),
            TaskKind::Poisson => sample_poisson_from(&ks, &mut w.rng),
        };
        self.apply(w, &cube, &t);
        Ok(StepOutcome::Moved)
    }

    /// Completes an outstanding sample request.
    pub fn deliver(&self, w: &mut Walker, t: &SampledTransition) {
        debug_assert_eq!(w.state, WalkerState::AwaitingSample);
        let cube = w.pending.take().expect("awaiting walker holds its cube");
        self.apply(w, &cube, t);
    }

    fn apply(&self, w: &mut Walker, cube: &TransitionCube, t: &SampledTransition) {
        let local = t.local_point(self.n);
        if w.first_step {
            w.value = -w.amplitude * (t.weight / cube.half_width) * t.sign * w.normal.sign();
            w.first_step = false;
        }
        w.position = self.layout.fold(cube.point_at(local));
        w.steps += 1;
        w.state = WalkerState::Active;
        self.counters.steps.fetch_add(1, Ordering::Relaxed);
    }

    /// Runs one walk to completion with synchronous kernels only.
    pub fn run_walk(&self, index: u64) -> Result<Walker, EngineError> {
        let mut w = self.start_walker(index);
        while w.state == WalkerState::Active {
            if let StepOutcome::Submit(_) = self.step(&mut w)? {
                return Err(EngineError::Config("synchronous walk needs a sampler".into()));
            }
        }
        Ok(w)
    }
}
