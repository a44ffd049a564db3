//! Synthetic training data: random dielectric configurations paired with
//! their finite-difference transition kernels.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dielectric::{check_grid_size, random_config, voxelize_config, DielectricError};
use crate::fdm::{DiscreteSystem, FdmOptions, FaceField};
use crate::linalg::SolverError;

pub const DATASET_MAGIC: [u8; 4] = *b"DRWD";
pub const DATASET_VERSION: u32 = 1;
const MAX_ATTEMPTS: u64 = 64;
const CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("file truncated or malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Grid(#[from] DielectricError),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("record {index} failed after {attempts} attempts: {source}")]
    Exhausted {
        index: u64,
        attempts: u64,
        source: SolverError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub n: u32,
    pub count: u64,
    pub p_nest: f64,
    pub blocks: u32,
    pub seed: u64,
}

impl DatasetHeader {
    const BYTES: usize = 4 + 4 + 4 + 8 + 8 + 4 + 8;

    pub fn record_floats(&self) -> usize {
        let n = self.n as usize;
        n * n * n + 12 * n * n + 1
    }

    fn write(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&self.count.to_le_bytes())?;
        w.write_all(&self.p_nest.to_le_bytes())?;
        w.write_all(&self.blocks.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())
    }

    fn read(r: &mut impl Read) -> Result<Self, DatasetError> {
        let mut buf = [0u8; Self::BYTES];
        r.read_exact(&mut buf)
            .map_err(|_| DatasetError::Malformed("short header".into()))?;
        let magic: [u8; 4] = buf[0..4].try_into().unwrap();
        if magic != DATASET_MAGIC {
            return Err(DatasetError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(DatasetError::BadVersion(version));
        }
        let header = DatasetHeader {
            n: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
            count: u64::from_le_bytes(buf[12..20].try_into().unwrap()),
            p_nest: f64::from_le_bytes(buf[20..28].try_into().unwrap()),
            blocks: u32::from_le_bytes(buf[28..32].try_into().unwrap()),
            seed: u64::from_le_bytes(buf[32..40].try_into().unwrap()),
        };
        check_grid_size(header.n as usize)?;
        Ok(header)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub grid: Vec<f32>,
    pub poisson: Vec<f32>,
    pub grad_signed_z: Vec<f32>,
    pub weight_z: f32,
}

impl DatasetRecord {
    pub fn from_kernels(grid: &[f64], poisson: &FaceField, grad_z: &FaceField, weight_z: f64) -> Self {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
        Self {
            grid: f(grid),
            poisson: f(poisson.data()),
            grad_signed_z: f(grad_z.data()),
            weight_z: weight_z as f32,
        }
    }

    pub fn write(&self, w: &mut impl Write) -> io::Result<()> {
        for v in self.grid.iter().chain(&self.poisson).chain(&self.grad_signed_z) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.weight_z.to_le_bytes())
    }

    fn read(r: &mut impl Read, n: usize) -> Result<Self, DatasetError> {
        let floats = n * n * n + 12 * n * n + 1;
        let mut buf = vec![0u8; floats * 4];
        r.read_exact(&mut buf)
            .map_err(|_| DatasetError::Malformed("short record".into()))?;
        let vals: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (grid, rest) = vals.split_at(n * n * n);
        let (poisson, rest) = rest.split_at(6 * n * n);
        let (grad, rest) = rest.split_at(6 * n * n);
        Ok(Self {
            grid: grid.to_vec(),
            poisson: poisson.to_vec(),
            grad_signed_z: grad.to_vec(),
            weight_z: rest[0],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
    pub resample_count: u64,
}

impl DatasetFile {
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        self.header.write(w)?;
        for r in &self.records {
            r.write(w)?;
        }
        w.write_all(&self.resample_count.to_le_bytes())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, DatasetError> {
        let header = DatasetHeader::read(r)?;
        let n = header.n as usize;
        let mut records = Vec::new();
        for _ in 0..header.count {
            records.push(DatasetRecord::read(r, n)?);
        }
        let mut tail = [0u8; 8];
        r.read_exact(&mut tail)
            .map_err(|_| DatasetError::Malformed("missing footer".into()))?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(DatasetError::Malformed("trailing bytes after footer".into()));
        }
        Ok(Self {
            header,
            records,
            resample_count: u64::from_le_bytes(tail),
        })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// The random stream for one generation attempt of one record.
pub fn record_rng(seed: u64, index: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index ^ (attempt << 40));
    rng
}

/// One record as a pure function of `(seed, index)`; returns the number of
/// resampled attempts alongside it.
pub fn generate_record(
    header: &DatasetHeader,
    index: u64,
    opts: &FdmOptions,
) -> Result<(DatasetRecord, u64), DatasetError> {
    let n = header.n as usize;
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = record_rng(header.seed, index, attempt);
        let cfg = random_config(header.blocks as usize, header.p_nest, &mut rng);
        let grid = voxelize_config(&cfg, n)?;
        let sys = DiscreteSystem::assemble(&grid);
        let solved = (|| {
            let c = sys.center();
            let p = sys.absorption(&sys.solve_point_source(c, opts)?);
            let (mut up, mut down) = (c, c);
            up[2] += 1;
            down[2] -= 1;
            let a = sys.absorption(&sys.solve_point_source(up, opts)?);
            let b = sys.absorption(&sys.solve_point_source(down, opts)?);
            Ok::<_, SolverError>((p, a, b))
        })();
        match solved {
            Ok((p, a, b)) => {
                let h = 2.0 / n as f64;
                let g: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) / (2.0 * h))
                    .collect();
                let g = FaceField::from_vec(n, g);
                let w = g.abs_sum();
                return Ok((DatasetRecord::from_kernels(grid.values(), &p, &g, w), attempt));
            }
            Err(e) => {
                log::warn!("record {index} attempt {attempt}: {e}; resampling");
                last = Some(e);
            }
        }
    }
    Err(DatasetError::Exhausted {
        index,
        attempts: MAX_ATTEMPTS,
        source: last.expect("at least one attempt"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateParams {
    pub count: u64,
    pub n: usize,
    pub blocks: u32,
    pub p_nest: f64,
    pub seed: u64,
    pub workers: usize,
    pub fdm: FdmOptions,
}

impl GenerateParams {
    fn header(&self) -> Result<DatasetHeader, DatasetError> {
        check_grid_size(self.n)?;
        if self.count == 0 {
            return Err(DatasetError::Param("count must be at least 1".into()));
        }
        if self.blocks == 0 {
            return Err(DatasetError::Param("blocks must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.p_nest) {
            return Err(DatasetError::Param(format!("p_nest {} outside [0, 1)", self.p_nest)));
        }
        Ok(DatasetHeader {
            n: self.n as u32,
            count: self.count,
            p_nest: self.p_nest,
            blocks: self.blocks,
            seed: self.seed,
        })
    }
}

/// Streams a dataset to `out`, computing records in parallel chunks and
/// writing them in index order. `progress` sees the number of records done.
pub fn generate_dataset_to(
    params: &GenerateParams,
    out: &mut impl Write,
    mut progress: impl FnMut(u64, u64),
) -> Result<DatasetHeader, DatasetError> {
    let header = params.header()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.workers.max(1))
        .build()
        .map_err(|e| DatasetError::Param(e.to_string()))?;
    header.write(out)?;
    let mut resamples = 0;
    let mut start = 0;
    while start < header.count {
        let end = (start + CHUNK as u64).min(header.count);
        let chunk: Vec<_> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| generate_record(&header, i, &params.fdm))
                .collect()
        });
        for r in chunk {
            let (rec, extra) = r?;
            resamples += extra;
            rec.write(out)?;
        }
        progress(end, resamples);
        start = end;
    }
    out.write_all(&resamples.to_le_bytes())?;
    Ok(header)
}

pub fn generate_dataset(params: &GenerateParams) -> Result<DatasetFile, DatasetError> {
    let mut buf = Vec::new();
    generate_dataset_to(params, &mut buf, |_, _| {})?;
    DatasetFile::read_from(&mut buf.as_slice())
}

/// Deterministic shuffled split into training and validation indices.
pub fn split(count: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Param(format!("ratio {ratio} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = (ratio * count as f64).round() as usize;
    let val = idx.split_off(train);
    Ok((idx, val))
}
