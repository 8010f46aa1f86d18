//! Monte Carlo accumulation with schedule-independent reduction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Samples are reduced in fixed-size chunks so that the floating-point
/// summation order never depends on the number of workers.
pub const CHUNK: usize = 512;

/// A sample mean with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { mean: value, stderr: 0.0, n: 0 }
    }

    /// `|self - other| / sqrt(se_a^2 + se_b^2)`; zero when both are exact and equal.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        z_score(self.mean, other.mean, self.stderr, other.stderr)
    }
}

pub fn z_score(a: f64, b: f64, se_a: f64, se_b: f64) -> f64 {
    let diff = a - b;
    let se = (se_a * se_a + se_b * se_b).sqrt();
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Running sums for a mean and its standard error. The range is kept so
/// that constant samples give an exact mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accumulator {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for Accumulator {
    fn default() -> Self {
        Accumulator { n: 0, sum: 0.0, sum_sq: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl Accumulator {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, o: &Accumulator) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    pub fn estimate(&self) -> Estimate {
        if self.n == 0 {
            return Estimate { mean: f64::NAN, stderr: f64::NAN, n: 0 };
        }
        if self.min == self.max {
            return Estimate { mean: self.min, stderr: 0.0, n: self.n };
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let stderr = if self.n > 1 {
            let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr, n: self.n }
    }
}

/// Outcome of one stationary-type sample: a value, or a capped path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Value(f64),
    Capped,
}

/// Mean of a sampled value plus the count of capped samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CappedEstimate {
    pub estimate: Estimate,
    pub n_capped: u64,
    pub n_total: u64,
}

/// Capped fractions above this flag an estimate as unreliable.
pub const CAPPED_FRACTION_LIMIT: f64 = 1e-3;

impl CappedEstimate {
    pub fn capped_fraction(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_capped as f64 / self.n_total as f64
        }
    }

    pub fn reliable(&self) -> bool {
        self.capped_fraction() <= CAPPED_FRACTION_LIMIT
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct CappedAcc {
    acc: Accumulator,
    capped: u64,
}

/// Parallel mean of `f(i)` for `i in 0..n`, bit-identical for any pool size.
pub fn par_mean<F>(n: usize, f: F) -> Estimate
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks: Vec<Accumulator> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Accumulator::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc.push(f(i));
            }
            acc
        })
        .collect();
    let mut total = Accumulator::default();
    for c in &chunks {
        total.merge(c);
    }
    total.estimate()
}

/// Like [`par_mean`] for samples that may be capped.
pub fn par_mean_capped<F>(n: usize, f: F) -> CappedEstimate
where
    F: Fn(usize) -> Outcome + Sync,
{
    let chunks: Vec<CappedAcc> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = CappedAcc::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                match f(i) {
                    Outcome::Value(v) => acc.acc.push(v),
                    Outcome::Capped => acc.capped += 1,
                }
            }
            acc
        })
        .collect();
    let mut total = CappedAcc::default();
    for c in &chunks {
        total.acc.merge(&c.acc);
        total.capped += c.capped;
    }
    CappedEstimate {
        estimate: total.acc.estimate(),
        n_capped: total.capped,
        n_total: n as u64,
    }
}

/// Chunked parallel fold with a fixed merge order.
pub fn par_reduce<A, F, M>(n: usize, fold: F, merge: M) -> A
where
    A: Default + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, &A),
{
    let chunks: Vec<A> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = A::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = A::default();
    for c in &chunks {
        merge(&mut total, c);
    }
    total
}

/// Parallel map whose output order is the index order.
pub fn par_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
