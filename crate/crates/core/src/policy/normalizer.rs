use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

const VAR_EPS: f64 = 1e-8;

/// Per-coordinate running mean/variance filter (Welford accumulation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer<T> {
    count: u64,
    mean: Vec<T>,
    m2: Vec<T>,
    clip: T,
}

impl<T: Scalar> RunningNormalizer<T> {
    /// Empty filter with the default clip bound of 10.
    pub fn new(dim: usize) -> Self {
        Self::with_clip(dim, T::lit(10.0))
    }

    pub fn with_clip(dim: usize, clip: T) -> Self {
        RunningNormalizer {
            count: 0,
            mean: vec![T::zero(); dim],
            m2: vec![T::zero(); dim],
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn clip(&self) -> T {
        self.clip
    }

    /// Population variance per coordinate; ones while empty.
    pub fn variance(&self) -> Vec<T> {
        if self.count == 0 {
            return vec![T::one(); self.dim()];
        }
        let n = T::lit(self.count as f64);
        self.m2.iter().map(|&m| m / n).collect()
    }

    pub fn observe(&mut self, x: &[T]) {
        assert_eq!(x.len(), self.dim(), "observation dimension");
        self.count += 1;
        let n = T::lit(self.count as f64);
        for ((mean, m2), &xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = xi - *mean;
            *mean += delta / n;
            *m2 += delta * (xi - *mean);
        }
    }

    /// Folds a batch of raw observations into the running statistics.
    pub fn update<'a, I>(&mut self, batch: I)
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        for x in batch {
            self.observe(x);
        }
    }

    /// `(x − mean) / √(var + 1e-8)`, clipped to `±clip`. Identity while empty.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[T], out: &mut [T]) {
        if self.count == 0 {
            out.copy_from_slice(x);
            return;
        }
        let n = T::lit(self.count as f64);
        let eps = T::lit(VAR_EPS);
        for (i, o) in out.iter_mut().enumerate() {
            let z = (x[i] - self.mean[i]) / (self.m2[i] / n + eps).sqrt();
            *o = z.max(-self.clip).min(self.clip);
        }
    }

    /// Raw parts for checkpointing: `(count, mean, m2, clip)`.
    pub fn to_parts(&self) -> (u64, &[T], &[T], T) {
        (self.count, &self.mean, &self.m2, self.clip)
    }

    pub fn from_parts(count: u64, mean: Vec<T>, m2: Vec<T>, clip: T) -> Self {
        assert_eq!(mean.len(), m2.len());
        RunningNormalizer {
            count,
            mean,
            m2,
            clip,
        }
    }
}
