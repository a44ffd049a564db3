//! Voxelized permittivity grids and the random block generator used to
//! synthesize training cubes.

use rand::Rng;
use thiserror::Error;

use crate::geometry::{kappa_in, Layout, TransitionCube};
use crate::symmetry::Symmetry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DielectricError {
    #[error("grid size must be odd and at least 5, got {0}")]
    BadGridSize(usize),
    #[error("grid values must be positive and finite")]
    BadValues,
}

pub fn check_grid_size(n: usize) -> Result<(), DielectricError> {
    if n >= 5 && n % 2 == 1 {
        Ok(())
    } else {
        Err(DielectricError::BadGridSize(n))
    }
}

/// Normalized cell-centered permittivity on an `n³` grid spanning `[-1,1]³`.
/// Values are indexed `(i, j, k) = (x, y, z)`, x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    n: usize,
    values: Vec<f64>,
    raw_max: f64,
}

impl VoxelGrid {
    /// Normalizes raw permittivities by their maximum.
    pub fn from_raw(n: usize, raw: Vec<f64>) -> Result<Self, DielectricError> {
        check_grid_size(n)?;
        if raw.len() != n * n * n || raw.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(DielectricError::BadValues);
        }
        let raw_max = raw.iter().copied().fold(0.0, f64::max);
        let values = raw.into_iter().map(|v| v / raw_max).collect();
        Ok(Self { n, values, raw_max })
    }

    /// Wraps already-normalized values (e.g. read back from a dataset).
    pub fn from_normalized(n: usize, values: Vec<f64>, raw_max: f64) -> Result<Self, DielectricError> {
        check_grid_size(n)?;
        if values.len() != n * n * n || values.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(DielectricError::BadValues);
        }
        Ok(Self { n, values, raw_max })
    }

    pub fn homogeneous(n: usize, kappa: f64) -> Result<Self, DielectricError> {
        Self::from_raw(n, vec![kappa; n * n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn raw_max(&self) -> f64 {
        self.raw_max
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.n + j) * self.n + k]
    }

    pub fn center(&self) -> f64 {
        let c = self.n / 2;
        self.get(c, c, c)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    /// Re-normalizes by the current maximum; a no-op on valid grids.
    pub fn renormalized(&self) -> VoxelGrid {
        let m = self.values.iter().copied().fold(0.0, f64::max);
        VoxelGrid {
            n: self.n,
            values: self.values.iter().map(|v| v / m).collect(),
            raw_max: self.raw_max * m,
        }
    }

    pub fn transformed(&self, g: &Symmetry) -> VoxelGrid {
        VoxelGrid {
            n: self.n,
            values: g.apply_cells(&self.values, self.n),
            raw_max: self.raw_max,
        }
    }

    /// Raw values rounded through `f32`, as stored on disk.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Normalized coordinate of cell `m` along one axis.
pub fn cell_center(m: usize, n: usize) -> f64 {
    -1.0 + (2 * m + 1) as f64 / n as f64
}

/// `0.8·U(2,10) + 0.2·U(10,80)`.
pub fn random_dielectric<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.gen::<f64>() < 0.8 {
        rng.gen_range(2.0..10.0)
    } else {
        rng.gen_range(10.0..80.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigBlock {
    pub center: [f64; 3],
    pub sides: [f64; 3],
    pub kappa: f64,
    /// Index of the block this one coats, for nested blocks.
    pub nested_in: Option<usize>,
}

impl ConfigBlock {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= 0.5 * self.sides[a])
    }
}

/// Ordered block list over `[-1,1]³`; earlier blocks win, the background
/// fills the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct DielectricConfig {
    pub blocks: Vec<ConfigBlock>,
    pub background: f64,
}

impl DielectricConfig {
    pub fn homogeneous(kappa: f64) -> Self {
        Self {
            blocks: Vec::new(),
            background: kappa,
        }
    }

    /// Entries including the background.
    pub fn len(&self) -> usize {
        self.blocks.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kappa_at(&self, p: [f64; 3]) -> f64 {
        self.blocks
            .iter()
            .find(|b| b.contains(p))
            .map_or(self.background, |b| b.kappa)
    }

    pub fn scale_kappa(&self, s: f64) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConfigBlock { kappa: b.kappa * s, ..b.clone() })
                .collect(),
            background: self.background * s,
        }
    }

    /// Parses `block cx cy cz lx ly lz kappa` / `background kappa` lines.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut blocks = Vec::new();
        let mut background = None;
        for (lineno, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut it = content.split_whitespace();
            let kw = it.next().unwrap_or_default();
            let nums: Result<Vec<f64>, _> = it.map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| format!("line {}: {e}", lineno + 1))?;
            match (kw, nums.len()) {
                ("block", 7) => {
                    if nums[3..6].iter().any(|&l| !(l > 0.0)) || !(nums[6] > 0.0) {
                        return Err(format!("line {}: sides and kappa must be positive", lineno + 1));
                    }
                    blocks.push(ConfigBlock {
                        center: [nums[0], nums[1], nums[2]],
                        sides: [nums[3], nums[4], nums[5]],
                        kappa: nums[6],
                        nested_in: None,
                    });
                }
                ("background", 1) if nums[0] > 0.0 => background = Some(nums[0]),
                _ => return Err(format!("line {}: expected 'block cx cy cz lx ly lz kappa' or 'background kappa'", lineno + 1)),
            }
        }
        Ok(Self {
            blocks,
            background: background.ok_or("missing 'background' line")?,
        })
    }
}

/// Random block configuration: `count` outer blocks with centers in
/// `U(-2,2)³` and sides in `U(0,4)³`, each followed by a geometric number of
/// coating blocks grown by a tenth of the largest side per step.
pub fn random_config<R: Rng + ?Sized>(count: usize, p_nest: f64, rng: &mut R) -> DielectricConfig {
    assert!(count >= 1, "block count must be at least 1");
    assert!((0.0..1.0).contains(&p_nest), "p_nest must lie in [0, 1)");
    let mut blocks: Vec<ConfigBlock> = Vec::new();
    let positive_side = |rng: &mut R| loop {
        let l = rng.gen_range(0.0..4.0);
        if l > 0.0 {
            break l;
        }
    };
    for _ in 0..count {
        let center = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        let mut sides = [positive_side(rng), positive_side(rng), positive_side(rng)];
        let kappa = random_dielectric(rng);
        blocks.push(ConfigBlock {
            center,
            sides,
            kappa,
            nested_in: None,
        });
        while rng.gen::<f64>() < p_nest {
            let grow = sides.iter().copied().fold(0.0, f64::max) / 10.0;
            for l in &mut sides {
                *l += grow;
            }
            let kappa = random_dielectric(rng);
            let parent = blocks.len() - 1;
            blocks.push(ConfigBlock {
                center,
                sides,
                kappa,
                nested_in: Some(parent),
            });
        }
    }
    let background = random_dielectric(rng);
    DielectricConfig { blocks, background }
}

pub fn voxelize_config(cfg: &DielectricConfig, n: usize) -> Result<VoxelGrid, DielectricError> {
    check_grid_size(n)?;
    let mut raw = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                raw.push(cfg.kappa_at([cell_center(i, n), cell_center(j, n), cell_center(k, n)]));
            }
        }
    }
    VoxelGrid::from_raw(n, raw)
}

/// Voxelizes a transition cube of a layout, cube mapped onto `[-1,1]³`.
pub fn voxelize_cube(layout: &Layout, cube: &TransitionCube, n: usize) -> Result<VoxelGrid, DielectricError> {
    check_grid_size(n)?;
    let blocks = layout.blocks_near(cube);
    let coords: Vec<f64> = (0..n).map(|m| cell_center(m, n)).collect();
    let mut raw = Vec::with_capacity(n * n * n);
    for &x in &coords {
        for &y in &coords {
            for &z in &coords {
                let p = layout.fold(cube.point_at([x, y, z]));
                raw.push(kappa_in(&blocks, p));
            }
        }
    }
    VoxelGrid::from_raw(n, raw)
}

/// Permittivity along the cube's center line on `axis`, one value per cell.
pub fn cube_profile(layout: &Layout, cube: &TransitionCube, axis: usize, n: usize) -> Vec<f64> {
    let blocks = layout.blocks_near(cube);
    (0..n)
        .map(|m| {
            let mut local = [0.0; 3];
            local[axis] = cell_center(m, n);
            kappa_in(&blocks, layout.fold(cube.point_at(local)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dielectric_mixture_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..100_000).map(|_| random_dielectric(&mut rng)).collect();
        assert!(draws.iter().all(|&k| (2.0..=80.0).contains(&k)));
        let n = draws.len() as f64;
        let low = draws.iter().filter(|&&k| k < 10.0).count() as f64 / n;
        let sigma = (0.8 * 0.2 / n).sqrt();
        assert!((low - 0.8).abs() < 3.0 * sigma, "low fraction {low}");
        // Mixture mean 0.8·6 + 0.2·45 = 13.8; variance from the two uniforms
        // plus the spread between component means.
        let var = 0.8 * (64.0 / 12.0 + 36.0) + 0.2 * (4900.0 / 12.0 + 2025.0) - 13.8f64.powi(2);
        let mean = draws.iter().sum::<f64>() / n;
        assert!((mean - 13.8).abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
    }

    #[test]
    fn config_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = random_config(1, 0.0, &mut rng);
        assert_eq!(cfg.len(), 2);
        let mut nested = 0usize;
        let trials = 4000;
        for _ in 0..trials {
            let cfg = random_config(5, 0.2, &mut rng);
            assert!(cfg.len() >= 6);
            for (idx, b) in cfg.blocks.iter().enumerate() {
                assert!(b.sides.iter().all(|&l| l > 0.0));
                if let Some(p) = b.nested_in {
                    nested += 1;
                    assert_eq!(p + 1, idx);
                    let parent = &cfg.blocks[p];
                    assert_eq!(parent.center, b.center);
                    let grow = parent.sides.iter().copied().fold(0.0, f64::max) / 10.0;
                    for a in 0..3 {
                        assert_eq!(b.sides[a], parent.sides[a] + grow);
                    }
                }
            }
        }
        // Geometric number of coats per block: mean p/(1-p) = 0.25.
        let per_block = nested as f64 / (5 * trials) as f64;
        let var = 0.2 / 0.64; // p / (1-p)^2
        assert!((per_block - 0.25).abs() < 3.0 * (var / (5 * trials) as f64).sqrt());
    }

    #[test]
    fn voxelize_priority_and_normalization() {
        let g = voxelize_config(&DielectricConfig::homogeneous(3.9), 7).unwrap();
        assert!(g.values().iter().all(|&v| v == 1.0));
        assert_eq!(g.raw_max(), 3.9);

        let cfg = DielectricConfig {
            blocks: vec![
                ConfigBlock { center: [0.0; 3], sides: [4.0; 3], kappa: 10.0, nested_in: None },
                ConfigBlock { center: [0.0; 3], sides: [8.0; 3], kappa: 20.0, nested_in: None },
            ],
            background: 1.0,
        };
        let g = voxelize_config(&cfg, 5).unwrap();
        assert!(g.values().iter().all(|&v| v == 1.0));
        assert_eq!(g.raw_max(), 10.0);
    }

    #[test]
    fn half_space_split_matches_point_queries() {
        let n = 11;
        let cfg = DielectricConfig {
            blocks: vec![ConfigBlock { center: [5.0, 0.0, 0.0], sides: [10.0, 10.0, 10.0], kappa: 8.0, nested_in: None }],
            background: 2.0,
        };
        let g = voxelize_config(&cfg, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let p = [cell_center(i, n), cell_center(j, n), cell_center(k, n)];
                    let expect = if p[0] >= 0.0 { 1.0 } else { 0.25 };
                    assert_eq!(g.get(i, j, k), expect);
                }
            }
        }
        // center column included: 6 high cells, 5 low per x-row
        let high = (0..n).filter(|&i| g.get(i, 0, 0) == 1.0).count();
        assert_eq!(high, 6);
    }

    #[test]
    fn even_grid_rejected() {
        assert_eq!(
            voxelize_config(&DielectricConfig::homogeneous(1.0), 10).unwrap_err(),
            DielectricError::BadGridSize(10)
        );
    }

    #[test]
    fn config_document_parses() {
        let cfg = DielectricConfig::parse("block 0 0 0.5 2 2 1 8\nbackground 2 # bg\n").unwrap();
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!(cfg.background, 2.0);
        assert!(DielectricConfig::parse("block 0 0 0 1 1 1 3\n").is_err());
    }
}
