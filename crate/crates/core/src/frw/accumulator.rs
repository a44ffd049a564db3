use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccumulatorError {
    #[error("need at least 2 walks, have {0}")]
    TooFewWalks(u64),
    #[error("unknown conductor {0}")]
    UnknownConductor(u32),
}

/// Running statistics of one capacitance row. Every walk contributes its
/// value to the terminal conductor and zero to all others.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorAccumulator {
    ids: Vec<u32>,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryEstimate {
    pub id: u32,
    pub mean: f64,
    pub stderr: f64,
}

impl EstimatorAccumulator {
    pub fn new(ids: Vec<u32>) -> Self {
        let k = ids.len();
        Self {
            ids,
            count: 0,
            mean: vec![0.0; k],
            m2: vec![0.0; k],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn push(&mut self, terminal: u32, value: f64) -> Result<(), AccumulatorError> {
        let t = self
            .ids
            .iter()
            .position(|&id| id == terminal)
            .ok_or(AccumulatorError::UnknownConductor(terminal))?;
        self.count += 1;
        let n = self.count as f64;
        for (i, (m, m2)) in self.mean.iter_mut().zip(&mut self.m2).enumerate() {
            let x = if i == t { value } else { 0.0 };
            let d = x - *m;
            *m += d / n;
            *m2 += d * (x - *m);
        }
        Ok(())
    }

    pub fn mean(&self, id: u32) -> Option<f64> {
        self.ids.iter().position(|&i| i == id).map(|i| self.mean[i])
    }

    /// Standard error of the mean (sample standard deviation over `√count`).
    pub fn stderr(&self, id: u32) -> Result<f64, AccumulatorError> {
        let i = self
            .ids
            .iter()
            .position(|&i| i == id)
            .ok_or(AccumulatorError::UnknownConductor(id))?;
        if self.count < 2 {
            return Err(AccumulatorError::TooFewWalks(self.count));
        }
        let n = self.count as f64;
        Ok((self.m2[i] / (n - 1.0) / n).sqrt())
    }

    pub fn entries(&self) -> Vec<EntryEstimate> {
        self.ids
            .iter()
            .map(|&id| EntryEstimate {
                id,
                mean: self.mean(id).unwrap(),
                stderr: self.stderr(id).unwrap_or(f64::INFINITY),
            })
            .collect()
    }
}

/// Relative standard error `stderr / |mean|` of the entry `id`.
pub fn estimate_error(acc: &EstimatorAccumulator, id: u32) -> Result<f64, AccumulatorError> {
    let se = acc.stderr(id)?;
    let m = acc.mean(id).unwrap().abs();
    Ok(if se == 0.0 { 0.0 } else { se / m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_stream_has_zero_error() {
        let mut acc = EstimatorAccumulator::new(vec![1, 2]);
        for _ in 0..10 {
            acc.push(1, 3.5).unwrap();
        }
        assert_eq!(acc.mean(1), Some(3.5));
        assert_eq!(acc.mean(2), Some(0.0));
        assert_eq!(estimate_error(&acc, 1).unwrap(), 0.0);
    }

    #[test]
    fn too_few_walks() {
        let mut acc = EstimatorAccumulator::new(vec![1]);
        acc.push(1, 1.0).unwrap();
        assert_eq!(estimate_error(&acc, 1), Err(AccumulatorError::TooFewWalks(1)));
        assert_eq!(acc.push(9, 1.0), Err(AccumulatorError::UnknownConductor(9)));
    }

    #[test]
    fn stderr_tracks_sigma_over_root_n() {
        // Uniform(0, 2): mean 1, sigma 1/sqrt(3).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut acc = EstimatorAccumulator::new(vec![1]);
        let n = 10_000;
        for _ in 0..n {
            acc.push(1, rng.gen_range(0.0..2.0)).unwrap();
        }
        let want = (1.0f64 / 3.0).sqrt() / (n as f64).sqrt();
        let got = acc.stderr(1).unwrap();
        assert!((got / want - 1.0).abs() < 0.1, "{got} vs {want}");
    }

    #[test]
    fn split_between_terminals() {
        let mut acc = EstimatorAccumulator::new(vec![1, 2]);
        acc.push(1, 4.0).unwrap();
        acc.push(2, -2.0).unwrap();
        assert_eq!(acc.mean(1), Some(2.0));
        assert_eq!(acc.mean(2), Some(-1.0));
    }
}
