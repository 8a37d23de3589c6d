//! Exact 1-D k-means by dynamic programming.
//!
//! In one dimension every minimum-WCSS clustering is a contiguous
//! partition of the sorted values, so the optimum is found exactly by a
//! dynamic program over interval costs in `O(k n^2)` time: `D[m][i]`,
//! the best cost of the first `i + 1` sorted values in `m` clusters,
//! minimises `D[m-1][j-1] + cost(j, i)` over the start `j` of the last
//! cluster.
//!
//! Ties between optimal partitions are resolved deterministically: the
//! last cluster starts as early as possible, then the one before it, and
//! so on (the breakpoint vector read from the right is lexicographically
//! smallest). [`exhaustive_reference`] enumerates all contiguous
//! partitions under the same cost arithmetic and tie rule; it exists to
//! validate the dynamic program on small inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest input the brute-force reference accepts.
pub const EXHAUSTIVE_MAX_N: usize = 16;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must satisfy 1 <= k <= n; got k = {k} with n = {n}")]
    BadK { k: usize, n: usize },
    #[error("values must be finite; value at index {index} is not")]
    NonFiniteInput { index: usize },
    #[error("exhaustive reference supports at most {max} values, got {n}")]
    TooLarge { n: usize, max: usize },
}

/// Result of clustering `n` values into `k` groups on the line.
///
/// `assignment[i]` is the cluster id of input value `i`; ids run `0..k`
/// in ascending order of cluster mean. `wcss` is the total within-cluster
/// sum of squared deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub wcss: f64,
}

impl Clustering {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Input indices belonging to `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Interval costs over a fixed ascending value order, backed by prefix
/// sums. Both the dynamic program and the brute-force reference price
/// their partitions through this type, so equal partitions always get
/// bitwise-equal costs.
pub struct IntervalCosts {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl IntervalCosts {
    /// `sorted` must be ascending; this is not re-checked.
    pub fn new(sorted: &[f64]) -> Self {
        let mut sum = Vec::with_capacity(sorted.len() + 1);
        let mut sum_sq = Vec::with_capacity(sorted.len() + 1);
        sum.push(0.0);
        sum_sq.push(0.0);
        for &v in sorted {
            sum.push(sum.last().unwrap() + v);
            sum_sq.push(sum_sq.last().unwrap() + v * v);
        }
        IntervalCosts { sum, sum_sq }
    }

    /// Sum of squared deviations from the mean over `sorted[i..=j]`,
    /// clamped at zero against cancellation.
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        let m = (j - i + 1) as f64;
        let s = self.sum[j + 1] - self.sum[i];
        let sq = self.sum_sq[j + 1] - self.sum_sq[i];
        (sq - s * s / m).max(0.0)
    }
}

fn validated_order(values: &[f64], k: usize) -> Result<Vec<usize>, ClusterError> {
    let n = values.len();
    if k == 0 || k > n {
        return Err(ClusterError::BadK { k, n });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(ClusterError::NonFiniteInput { index });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    Ok(order)
}

fn assignment_from_breaks(order: &[usize], starts: &[usize], k: usize) -> Vec<usize> {
    // starts[m] is the sorted position where cluster m begins.
    let n = order.len();
    let mut assignment = vec![0usize; n];
    for m in 0..k {
        let end = if m + 1 < k { starts[m + 1] } else { n };
        for t in starts[m]..end {
            assignment[order[t]] = m;
        }
    }
    assignment
}

/// Exact minimum-WCSS clustering of `values` into `k` groups.
pub fn ckmeans(values: &[f64], k: usize) -> Result<Clustering, ClusterError> {
    let order = validated_order(values, k)?;
    let n = values.len();
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let costs = IntervalCosts::new(&sorted);

    // best[m-1][i]: optimal cost of sorted[0..=i] in m clusters.
    // start[m-1][i]: smallest start of the last cluster attaining it.
    let mut best = vec![vec![0.0f64; n]; k];
    let mut start = vec![vec![0usize; n]; k];
    for i in 0..n {
        best[0][i] = costs.cost(0, i);
        start[0][i] = 0;
    }
    for m in 1..k {
        // At least one value per cluster: i >= m, last cluster starts in m..=i.
        for i in m..n {
            let mut b = f64::INFINITY;
            let mut s = m;
            for j in m..=i {
                let cand = best[m - 1][j - 1] + costs.cost(j, i);
                if cand < b {
                    b = cand;
                    s = j;
                }
            }
            best[m][i] = b;
            start[m][i] = s;
        }
    }

    let mut starts = vec![0usize; k];
    let mut end = n - 1;
    for m in (0..k).rev() {
        starts[m] = start[m][end];
        if m > 0 {
            end = starts[m] - 1;
        }
    }
    Ok(Clustering {
        k,
        assignment: assignment_from_breaks(&order, &starts, k),
        wcss: best[k - 1][n - 1],
    })
}

/// Brute-force reference: enumerates every contiguous partition of the
/// sorted values and keeps the best under the same cost arithmetic and
/// tie rule as [`ckmeans`]. Guarded to small inputs; use it to check the
/// dynamic program, not to cluster.
pub fn exhaustive_reference(values: &[f64], k: usize) -> Result<Clustering, ClusterError> {
    let n = values.len();
    if n > EXHAUSTIVE_MAX_N {
        return Err(ClusterError::TooLarge {
            n,
            max: EXHAUSTIVE_MAX_N,
        });
    }
    let order = validated_order(values, k)?;
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let costs = IntervalCosts::new(&sorted);

    // starts[0] = 0 always; choose starts[1..k] ascending from 1..n.
    let mut starts: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut wcss = 0.0;
        for m in 0..k {
            let end = if m + 1 < k { starts[m + 1] - 1 } else { n - 1 };
            wcss += costs.cost(starts[m], end);
        }
        let rev_better = |cand: &[usize], incumbent: &[usize]| {
            for (c, b) in cand.iter().rev().zip(incumbent.iter().rev()) {
                if c != b {
                    return c < b;
                }
            }
            false
        };
        match &best {
            None => best = Some((wcss, starts.clone())),
            Some((bw, bs)) => {
                if wcss < *bw || (wcss == *bw && rev_better(&starts, bs)) {
                    best = Some((wcss, starts.clone()));
                }
            }
        }
        // Next combination of k-1 breakpoints in lexicographic order.
        let mut m = k;
        loop {
            if m == 1 {
                let (wcss, starts) = best.expect("at least one partition was scored");
                return Ok(Clustering {
                    k,
                    assignment: assignment_from_breaks(&order, &starts, k),
                    wcss,
                });
            }
            m -= 1;
            let limit = n - (k - 1 - m);
            if starts[m] + 1 < limit {
                starts[m] += 1;
                for t in m + 1..k {
                    starts[t] = starts[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Mean of each cluster's values, indexed by cluster id. Members are
/// accumulated in ascending input order.
pub fn cluster_means(values: &[f64], clustering: &Clustering) -> Vec<f64> {
    let mut sums = vec![0.0f64; clustering.k];
    let mut counts = vec![0usize; clustering.k];
    for (i, &c) in clustering.assignment.iter().enumerate() {
        sums[c] += values[i];
        counts[c] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect()
}
