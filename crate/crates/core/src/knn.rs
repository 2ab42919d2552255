//! Exact brute-force k-nearest-neighbor queries and the neighbor-graph
//! statistics used to check SMOTE's geometry: maximum in-degree of the
//! k-NN graph and the distance to the k-th neighbor.
//!
//! Neighbors are ordered by `(squared distance, index)`, so ties always go
//! to the smallest index and a point is never its own neighbor.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::sq_dist;

#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Vec<f64>>,
    dim: usize,
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl KnnIndex {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::config("points differ in dimension"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("points must be finite"));
        }
        Ok(KnnIndex { points, dim })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Euclidean distance; symmetric with zero diagonal.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(&self.points[i], &self.points[j]).sqrt()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.len() {
            return Err(Error::domain(format!(
                "k must lie in [1, n-1] = [1, {}], got {k}",
                self.len().saturating_sub(1)
            )));
        }
        Ok(())
    }

    fn sorted_neighbors(&self, i: usize, k: usize) -> Vec<(f64, usize)> {
        let xi = &self.points[i];
        let mut cand: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, p)| (sq_dist(xi, p), j))
            .collect();
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist_then_index);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist_then_index);
        cand
    }

    /// The `k` nearest other points of point `i`, closest first.
    pub fn knn(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        self.check_k(k)?;
        if i >= self.len() {
            return Err(Error::domain(format!("point index {i} out of range")));
        }
        Ok(self
            .sorted_neighbors(i, k)
            .into_iter()
            .map(|(_, j)| j)
            .collect())
    }

    /// Neighbor lists for every point.
    pub fn all_knn(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        self.check_k(k)?;
        Ok((0..self.len())
            .into_par_iter()
            .map(|i| {
                self.sorted_neighbors(i, k)
                    .into_iter()
                    .map(|(_, j)| j)
                    .collect()
            })
            .collect())
    }

    /// In-degree of every point in the directed k-NN graph.
    pub fn indegrees(&self, k: usize) -> Result<Vec<usize>> {
        let lists = self.all_knn(k)?;
        let mut deg = vec![0usize; self.len()];
        for j in lists.into_iter().flatten() {
            deg[j] += 1;
        }
        Ok(deg)
    }

    /// Largest number of points that count a single point among their
    /// `k` nearest neighbors.
    pub fn max_indegree(&self, k: usize) -> Result<usize> {
        Ok(self.indegrees(k)?.into_iter().max().unwrap_or(0))
    }

    /// Mean and maximum distance from each point to its k-th neighbor.
    pub fn rk_stats(&self, k: usize) -> Result<(f64, f64)> {
        self.check_k(k)?;
        let rk: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| self.sorted_neighbors(i, k)[k - 1].0.sqrt())
            .collect();
        let mean = rk.iter().sum::<f64>() / rk.len() as f64;
        let max = rk.iter().copied().fold(0.0, f64::max);
        Ok((mean, max))
    }
}

/// `k * 5^d`: a general upper bound on the k-NN in-degree in dimension `d`.
pub fn indegree_bound(k: usize, d: usize) -> f64 {
    k as f64 * 5f64.powi(d as i32)
}

/// Kissing numbers for the dimensions where the 1-NN in-degree bound is
/// asserted.
pub fn kissing_number(d: usize) -> Option<usize> {
    match d {
        1 => Some(2),
        2 => Some(6),
        3 => Some(12),
        4 => Some(24),
        _ => None,
    }
}
