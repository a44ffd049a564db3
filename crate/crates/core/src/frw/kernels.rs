//! Exact kernel sets for the synchronous transition paths.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rand::Rng;

use crate::dielectric::VoxelGrid;
use crate::fdm::{kernel_set, FdmOptions, KernelSet};
use crate::geometry::SignedAxis;
use crate::linalg::SolverError;
use crate::nn::{sample_categorical, SampledTransition};

/// Draws a Poisson transition from an exact kernel set.
pub fn sample_poisson_from<R: Rng + ?Sized>(ks: &KernelSet, rng: &mut R) -> SampledTransition {
    let n = ks.n();
    let face = SignedAxis::from_index(sample_categorical(&ks.face_dist, rng).expect("kernel mass is positive"));
    let idx = sample_categorical(ks.poisson.face(face), rng).expect("face mass is positive");
    SampledTransition {
        face,
        u: idx / n,
        v: idx % n,
        offset: [rng.gen::<f64>(), rng.gen::<f64>()],
        sign: 1.0,
        weight: 1.0,
        fallback: false,
    }
}

/// Draws a gradient transition for the derivative along `+axis`.
pub fn sample_gradient_from<R: Rng + ?Sized>(ks: &KernelSet, axis: usize, rng: &mut R) -> SampledTransition {
    let n = ks.n();
    let g = &ks.grad[axis];
    let face = SignedAxis::from_index(sample_categorical(&ks.grad_face_dist(axis), rng).expect("gradient mass"));
    let vals = g.signed.face(face);
    let mags: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    let idx = sample_categorical(&mags, rng).expect("face gradient mass");
    SampledTransition {
        face,
        u: idx / n,
        v: idx % n,
        offset: [rng.gen::<f64>(), rng.gen::<f64>()],
        sign: vals[idx].signum(),
        weight: g.weight,
        fallback: false,
    }
}

#[derive(Debug, Default)]
pub struct CacheCounters {
    pub hits: AtomicU64,
    pub misses: AtomicU64,
}

impl CacheCounters {
    pub fn snapshot(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}

/// Finite-difference kernels per voxelized cube, remembered by exact grid
/// contents up to a fixed number of entries.
#[derive(Debug)]
pub struct OracleMemo {
    opts: FdmOptions,
    capacity: usize,
    map: RwLock<HashMap<Vec<u64>, Arc<KernelSet>>>,
    pub counters: CacheCounters,
}

impl OracleMemo {
    pub fn new(opts: FdmOptions, capacity: usize) -> Self {
        Self {
            opts,
            capacity,
            map: RwLock::new(HashMap::new()),
            counters: CacheCounters::default(),
        }
    }

    pub fn get(&self, grid: &VoxelGrid) -> Result<Arc<KernelSet>, SolverError> {
        let key: Vec<u64> = grid.values().iter().map(|v| v.to_bits()).collect();
        if let Some(ks) = self.map.read().expect("memo poisoned").get(&key) {
            self.counters.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ks.clone());
        }
        self.counters.misses.fetch_add(1, Ordering::Relaxed);
        let ks = Arc::new(kernel_set(grid, &self.opts)?);
        let mut map = self.map.write().expect("memo poisoned");
        if map.len() < self.capacity {
            map.insert(key, ks.clone());
        }
        Ok(ks)
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("memo poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rounds to three significant digits.
pub fn quantize(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let e = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(2 - e);
    (v * scale).round() / scale
}

/// Kernel sets of layered cubes keyed by the quantized, normalized
/// permittivity profile along the layering axis. All homogeneous cubes share
/// one entry.
#[derive(Debug)]
pub struct StratifiedCache {
    n: usize,
    opts: FdmOptions,
    map: RwLock<HashMap<(usize, Vec<u64>), Arc<KernelSet>>>,
    pub counters: CacheCounters,
}

impl StratifiedCache {
    pub fn new(n: usize, opts: FdmOptions) -> Self {
        Self {
            n,
            opts,
            map: RwLock::new(HashMap::new()),
            counters: CacheCounters::default(),
        }
    }

    /// Canonical cache key for a raw profile along `axis`.
    pub fn key(axis: usize, profile: &[f64]) -> (usize, Vec<f64>) {
        let m = profile.iter().copied().fold(0.0, f64::max);
        let q: Vec<f64> = profile.iter().map(|&v| quantize(v / m)).collect();
        if q.iter().all(|&v| v == q[0]) {
            (2, vec![1.0; profile.len()])
        } else {
            (axis, q)
        }
    }

    pub fn lookup(&self, axis: usize, profile: &[f64]) -> Result<Arc<KernelSet>, SolverError> {
        assert_eq!(profile.len(), self.n);
        let (axis, q) = Self::key(axis, profile);
        let key = (axis, q.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if let Some(ks) = self.map.read().expect("cache poisoned").get(&key) {
            self.counters.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ks.clone());
        }
        self.counters.misses.fetch_add(1, Ordering::Relaxed);
        let n = self.n;
        let mut raw = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    raw.push(q[[i, j, k][axis]]);
                }
            }
        }
        let grid = VoxelGrid::from_raw(n, raw).expect("profile values are positive");
        let ks = Arc::new(kernel_set(&grid, &self.opts)?);
        self.map.write().expect("cache poisoned").insert(key, ks.clone());
        Ok(ks)
    }

    pub fn homogeneous(&self) -> Result<Arc<KernelSet>, SolverError> {
        self.lookup(2, &vec![1.0; self.n])
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
