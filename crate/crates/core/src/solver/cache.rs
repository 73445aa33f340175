//! Incremental bookkeeping for the row-wise correlation objective.
//!
//! Reassigning segment `i` replaces row and column `i` of the face matrix.
//! Row `i` is recomputed from scratch; every other row changes in a single
//! entry, so its mean, spread and co-moment with the speech row are updated
//! in constant time. Scoring one candidate therefore costs O(N) instead of
//! the O(N^2) of a full recomputation.

use crate::error::{Error, Result};
use crate::identity::{corr_objective, pearson_from_stats, DiagonalPolicy, DistanceMatrix, RowStats};

#[derive(Debug, Clone)]
pub struct ObjectiveCache {
    n: usize,
    policy: DiagonalPolicy,
    order: Vec<String>,
    /// Speech rows minus their row mean; excluded self entries hold 0.
    sd_centered: Vec<f64>,
    sd_stats: Vec<RowStats>,
    fd: Vec<f64>,
    fd_stats: Vec<RowStats>,
    cov: Vec<f64>,
    row_corr: Vec<f64>,
    objective: f64,
}

impl ObjectiveCache {
    pub fn new(sd: &DistanceMatrix, fd: &DistanceMatrix, policy: DiagonalPolicy) -> Result<Self> {
        if sd.order() != fd.order() {
            return Err(Error::OrderMismatch);
        }
        let n = sd.len();
        let min = if policy == DiagonalPolicy::Exclude { 3 } else { 2 };
        if n < min {
            return Err(Error::TooFewElements {
                required: min,
                actual: n,
            });
        }
        let mut cache = Self {
            n,
            policy,
            order: sd.order().to_vec(),
            sd_centered: vec![0.0; n * n],
            sd_stats: Vec::with_capacity(n),
            fd: fd.values().to_vec(),
            fd_stats: vec![RowStats { mean: 0.0, m2: 0.0 }; n],
            cov: vec![0.0; n],
            row_corr: vec![0.0; n],
            objective: 0.0,
        };
        for r in 0..n {
            let row = sd.row(r);
            let stats = RowStats::of(cache.kept(r).map(|j| row[j]), cache.count());
            for j in cache.kept(r) {
                cache.sd_centered[r * n + j] = row[j] - stats.mean;
            }
            cache.sd_stats.push(stats);
        }
        cache.refresh();
        Ok(cache)
    }

    fn count(&self) -> usize {
        match self.policy {
            DiagonalPolicy::Include => self.n,
            DiagonalPolicy::Exclude => self.n - 1,
        }
    }

    fn kept(&self, r: usize) -> impl Iterator<Item = usize> + Clone {
        let skip = (self.policy == DiagonalPolicy::Exclude).then_some(r);
        (0..self.n).filter(move |&j| Some(j) != skip)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn row_correlations(&self) -> &[f64] {
        &self.row_corr
    }

    pub fn fd_row(&self, r: usize) -> &[f64] {
        &self.fd[r * self.n..(r + 1) * self.n]
    }

    pub fn face_matrix(&self) -> DistanceMatrix {
        DistanceMatrix::from_raw(self.fd.clone(), self.order.clone())
    }

    /// Exact recomputation of every row statistic from the stored face matrix.
    pub fn refresh(&mut self) {
        for r in 0..self.n {
            let (stats, cov) = self.exact_row(r, |j| self.fd[r * self.n + j]);
            self.fd_stats[r] = stats;
            self.cov[r] = cov;
            self.row_corr[r] = pearson_from_stats(cov, self.sd_stats[r], stats, self.count());
        }
        self.objective = self.mean_corr(|r| self.row_corr[r]);
    }

    fn exact_row(&self, r: usize, value: impl Fn(usize) -> f64) -> (RowStats, f64) {
        let stats = RowStats::of(self.kept(r).map(&value), self.count());
        let xc = &self.sd_centered[r * self.n..(r + 1) * self.n];
        let cov = self.kept(r).map(|j| xc[j] * value(j)).sum::<f64>();
        (stats, cov)
    }

    fn mean_corr(&self, corr: impl Fn(usize) -> f64) -> f64 {
        (0..self.n).map(corr).sum::<f64>() / self.n as f64
    }

    /// Statistics of row `r != i` after its entry `i` becomes `new`.
    fn shifted(&self, r: usize, i: usize, new: f64) -> (RowStats, f64) {
        let old = self.fd[r * self.n + i];
        let stats = self.fd_stats[r];
        let delta = new - old;
        if delta == 0.0 {
            return (stats, self.cov[r]);
        }
        let mean = stats.mean + delta / self.count() as f64;
        let m2 = (stats.m2 + delta * (new - mean + old - stats.mean)).max(0.0);
        let cov = self.cov[r] + self.sd_centered[r * self.n + i] * delta;
        (RowStats { mean, m2 }, cov)
    }

    fn check_column(&self, i: usize, column: &[f64]) {
        assert!(i < self.n, "segment index {i} out of range");
        assert_eq!(column.len(), self.n, "column length");
        debug_assert_eq!(column[i], 0.0, "self distance must be zero");
    }

    /// Objective value if column `i` were replaced by `column`, without
    /// modifying the cache.
    pub fn evaluate_column(&self, i: usize, column: &[f64]) -> f64 {
        self.check_column(i, column);
        let count = self.count();
        let (own_stats, own_cov) = self.exact_row(i, |j| column[j]);
        let own = pearson_from_stats(own_cov, self.sd_stats[i], own_stats, count);
        self.mean_corr(|r| {
            if r == i {
                own
            } else {
                let (stats, cov) = self.shifted(r, i, column[r]);
                pearson_from_stats(cov, self.sd_stats[r], stats, count)
            }
        })
    }

    /// Replaces row and column `i` of the face matrix and returns the new
    /// objective.
    pub fn apply_reassignment(&mut self, i: usize, column: &[f64]) -> f64 {
        self.check_column(i, column);
        let n = self.n;
        let count = self.count();
        for (r, &value) in column.iter().enumerate() {
            if r == i {
                continue;
            }
            let (stats, cov) = self.shifted(r, i, value);
            self.fd_stats[r] = stats;
            self.cov[r] = cov;
            self.row_corr[r] = pearson_from_stats(cov, self.sd_stats[r], stats, count);
            self.fd[r * n + i] = value;
        }
        self.fd[i * n..(i + 1) * n].copy_from_slice(column);
        let (stats, cov) = self.exact_row(i, |j| column[j]);
        self.fd_stats[i] = stats;
        self.cov[i] = cov;
        self.row_corr[i] = pearson_from_stats(cov, self.sd_stats[i], stats, count);
        self.objective = self.mean_corr(|r| self.row_corr[r]);
        self.objective
    }

    /// Compares the cached objective with a full recomputation.
    pub fn check_consistency(&self, sd: &DistanceMatrix, tolerance: f64) -> Result<()> {
        let recomputed = corr_objective(sd, &self.face_matrix(), self.policy)?;
        if (recomputed - self.objective).abs() > tolerance {
            return Err(Error::CacheInconsistency {
                cached: self.objective,
                recomputed,
            });
        }
        Ok(())
    }
}
