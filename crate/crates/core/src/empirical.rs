//! Order-statistic conditioning of samples and the four dependence estimators.
//!
//! Groups are formed from ranks of the benchmark coordinate. An observation
//! gets rank `k` (1-based) after sorting by value, ties broken by column
//! index. The band `[q1, q2]` keeps ranks `⌈q1·N⌉ ..= ⌈q2·N⌉`, closed at both
//! ends, with the lower rank replaced by 1 when `q1 = 0`. Adjacent bands
//! therefore share their boundary observation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sample::SampleBlock;
use crate::truncated::{ConditionalMatrix, MatrixKind, QuantileInterval};

/// Minimum group size for any conditional estimate.
pub const MIN_GROUP_ROWS: usize = 30;

/// Observation indices sorted by each coordinate, ties broken by index.
///
/// Built once per sample. Any subset then inherits its per-coordinate order
/// from a linear filter of the global one, so the rank estimators never sort.
#[derive(Debug, Clone)]
pub struct SampleOrder {
    order: Vec<usize>,
    columns: Vec<Vec<u32>>,
    ranks: Vec<Vec<u32>>,
    tied: bool,
}

impl SampleOrder {
    pub fn new(sample: &SampleBlock) -> Self {
        let n = sample.dim();
        let m = sample.len();
        let data = sample.data.as_slice();
        let sorted = |i: usize| {
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_unstable_by(|&a, &b| data[a * n + i].total_cmp(&data[b * n + i]).then(a.cmp(&b)));
            idx
        };
        let order = sorted(0);
        let mut tied = false;
        let mut columns = Vec::with_capacity(n);
        let mut ranks = Vec::with_capacity(n);
        for i in 0..n {
            let idx = if i == 0 { order.clone() } else { sorted(i) };
            tied |= idx.windows(2).any(|w| data[w[0] * n + i] == data[w[1] * n + i]);
            let mut rank = vec![0u32; m];
            for (r, &k) in idx.iter().enumerate() {
                rank[k] = r as u32;
            }
            columns.push(idx.into_iter().map(|k| k as u32).collect());
            ranks.push(rank);
        }
        Self {
            order,
            columns,
            ranks,
            tied,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Observation indices of the band, in ascending benchmark order.
    pub fn group(&self, interval: &QuantileInterval) -> &[usize] {
        let (lo, hi) = rank_range(interval, self.order.len());
        &self.order[lo..hi]
    }

    /// Members of `mask` in the order of coordinate `i`.
    fn filtered(&self, i: usize, mask: &[bool]) -> Vec<u32> {
        self.columns[i].iter().copied().filter(|&k| mask[k as usize]).collect()
    }

    fn spearman_matrix(&self, rows: &[usize]) -> DMatrix<f64> {
        let mut mask = vec![false; self.len()];
        rows.iter().for_each(|&k| mask[k] = true);
        let mut local = vec![0.0; self.len()];
        let ranks: Vec<Vec<f64>> = (0..self.columns.len())
            .map(|i| {
                for (r, k) in self.filtered(i, &mask).into_iter().enumerate() {
                    local[k as usize] = (r + 1) as f64;
                }
                rows.iter().map(|&k| local[k]).collect()
            })
            .collect();
        pairwise(ranks.len(), |i, j| pearson(&ranks[i], &ranks[j]))
    }

    fn kendall_matrix(&self, rows: &[usize]) -> DMatrix<f64> {
        let mut mask = vec![false; self.len()];
        rows.iter().for_each(|&k| mask[k] = true);
        let n = self.columns.len();
        let total = (rows.len() as u64) * (rows.len() as u64 - 1) / 2;
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            let seq = self.filtered(i, &mask);
            for j in (i + 1)..n {
                let mut ys: Vec<u32> = seq.iter().map(|&k| self.ranks[j][k as usize]).collect();
                let swaps = merge_count(&mut ys);
                let v = ((total as f64 - 2.0 * swaps as f64) / total as f64).clamp(-1.0, 1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// 0-based half-open slice `[lo, hi)` of the sorted order covered by `interval`.
pub fn rank_range(interval: &QuantileInterval, n: usize) -> (usize, usize) {
    let nf = n as f64;
    // guard against q·N landing a hair above an integer through rounding
    let ceil_rank = |q: f64| ((q * nf) - 1e-9).ceil().max(1.0) as usize;
    let lo = if interval.q1() == 0.0 { 1 } else { ceil_rank(interval.q1()) };
    let hi = ceil_rank(interval.q2()).min(n);
    (lo.min(hi).saturating_sub(1), hi)
}

/// Conditional dependence matrix of the band `interval` of `sample`.
pub fn empirical_conditional_matrix(
    sample: &SampleBlock,
    interval: &QuantileInterval,
    kind: MatrixKind,
) -> Result<ConditionalMatrix> {
    let order = SampleOrder::new(sample);
    conditional_matrix_with_order(sample, &order, interval, kind)
}

pub fn conditional_matrix_with_order(
    sample: &SampleBlock,
    order: &SampleOrder,
    interval: &QuantileInterval,
    kind: MatrixKind,
) -> Result<ConditionalMatrix> {
    let rows = order.group(interval);
    if rows.len() < MIN_GROUP_ROWS {
        return Err(Error::InsufficientData {
            context: "conditional matrix",
            needed: MIN_GROUP_ROWS,
            got: rows.len(),
        });
    }
    let matrix = match kind {
        MatrixKind::Covariance => mean_and_covariance(sample, rows).1,
        MatrixKind::Correlation => {
            crate::truncated::covariance_to_correlation(&mean_and_covariance(sample, rows).1)?
        }
        MatrixKind::Spearman if !order.tied => order.spearman_matrix(rows),
        MatrixKind::Kendall if !order.tied => order.kendall_matrix(rows),
        MatrixKind::Spearman => spearman_matrix(&gather(sample, rows)),
        MatrixKind::Kendall => kendall_matrix(&gather(sample, rows)),
    };
    Ok(ConditionalMatrix {
        kind,
        interval: *interval,
        matrix,
    })
}

/// Per-coordinate vectors of the selected observations.
fn gather(sample: &SampleBlock, rows: &[usize]) -> Vec<Vec<f64>> {
    (0..sample.dim())
        .map(|i| rows.iter().map(|&k| sample.data[(i, k)]).collect())
        .collect()
}

/// Two-pass mean and unbiased covariance over the listed observations.
pub fn mean_and_covariance(sample: &SampleBlock, rows: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
    let n = sample.dim();
    let m = rows.len();
    let mut mean = vec![0.0; n];
    for &k in rows {
        for (acc, &v) in mean.iter_mut().zip(sample.observation(k)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut acc = vec![0.0; n * n];
    let mut centred = vec![0.0; n];
    for &k in rows {
        for ((c, &v), &mu) in centred.iter_mut().zip(sample.observation(k)).zip(&mean) {
            *c = v - mu;
        }
        for i in 0..n {
            let ci = centred[i];
            for j in i..n {
                acc[i * n + j] += ci * centred[j];
            }
        }
    }
    let denom = (m as f64 - 1.0).max(1.0);
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        acc[a * n + b] / denom
    });
    (mean, cov)
}

/// Mid-ranks (1-based; ties share their average rank).
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rank correlation (Pearson correlation of mid-ranks).
pub fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

fn pairwise(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = f(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn spearman_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let ranks: Vec<Vec<f64>> = cols.iter().map(|c| average_ranks(c)).collect();
    pairwise(cols.len(), |i, j| pearson(&ranks[i], &ranks[j]))
}

fn kendall_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    pairwise(cols.len(), |i, j| kendall_tau_b(&cols[i], &cols[j]))
}

/// Kendall's τ_b in `O(N log N)` (Knight's merge-sort algorithm).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "kendall_tau_b: length mismatch");
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * (t - 1) / 2;
    let (mut ties_x, mut ties_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                ties_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            ties_x += pairs(run_x);
            ties_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    ties_x += pairs(run_x);
    ties_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let swaps = merge_count(&mut ys);

    let mut ties_y = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            ties_y += pairs(run_y);
            run_y = 1;
        }
    }
    ties_y += pairs(run_y);

    let total = pairs(n as u64);
    let numer = total as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    let denom = ((total - ties_x) as f64 * (total - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (numer / denom).clamp(-1.0, 1.0)
}

/// Bottom-up merge sort returning the number of strictly inverted pairs.
fn merge_count<T: PartialOrd + Copy + Default>(v: &mut [T]) -> u64 {
    let n = v.len();
    let mut buf = vec![T::default(); n];
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            if mid < end {
                let (mut i, mut j, mut k) = (start, mid, start);
                while i < mid && j < end {
                    if v[j] < v[i] {
                        buf[k] = v[j];
                        swaps += (mid - i) as u64;
                        j += 1;
                    } else {
                        buf[k] = v[i];
                        i += 1;
                    }
                    k += 1;
                }
                buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
                k += mid - i;
                buf[k..k + (end - j)].copy_from_slice(&v[j..end]);
                v[start..end].copy_from_slice(&buf[start..end]);
            }
            start = end;
        }
        width *= 2;
    }
    swaps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
                let dy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
                s += dx * dy;
                tx += (dx != 0) as i64;
                ty += (dy != 0) as i64;
            }
        }
        s as f64 / ((tx as f64) * (ty as f64)).sqrt()
    }

    fn block(cols: &[Vec<f64>]) -> SampleBlock {
        let n = cols.len();
        let m = cols[0].len();
        SampleBlock::new(DMatrix::from_fn(n, m, |i, k| cols[i][k]), 0, "test", "fixed")
    }

    #[test]
    fn rank_range_conventions() {
        let n = 1000;
        assert_eq!(rank_range(&QuantileInterval::lower(0.2).unwrap(), n), (0, 200));
        assert_eq!(rank_range(&QuantileInterval::center(0.2).unwrap(), n), (199, 800));
        assert_eq!(rank_range(&QuantileInterval::new(0.8, 1.0).unwrap(), n), (799, 1000));
        assert_eq!(rank_range(&QuantileInterval::full(), n), (0, 1000));
        // ⌈0.1985·1000⌉ = 199
        assert_eq!(rank_range(&QuantileInterval::lower(0.1985).unwrap(), n), (0, 199));
    }

    #[test]
    fn kendall_matches_brute_force_with_ties() {
        let x = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 0.5, 4.0, 2.0];
        let y = [3.0, 1.0, 1.0, 2.0, 2.0, 7.0, 6.0, 0.0, 2.0, 9.0];
        assert!((kendall_tau_b(&x, &y) - brute_tau_b(&x, &y)).abs() < 1e-15);
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) % 13) as f64
        };
        let a: Vec<f64> = (0..300).map(|_| next()).collect();
        let b: Vec<f64> = (0..300).map(|_| next()).collect();
        assert!((kendall_tau_b(&a, &b) - brute_tau_b(&a, &b)).abs() < 1e-14);
    }

    #[test]
    fn comonotone_and_countermonotone() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        let z: Vec<f64> = x.iter().map(|v| -v.exp()).collect();
        assert_eq!(kendall_tau_b(&x, &y), 1.0);
        assert_eq!(kendall_tau_b(&x, &z), -1.0);
        assert!((spearman_rho(&x, &y) - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&x, &z) + 1.0).abs() < 1e-15);

        let s = block(&[x.clone(), y]);
        let m = empirical_conditional_matrix(&s, &QuantileInterval::full(), MatrixKind::Kendall).unwrap();
        assert_eq!(m.matrix[(0, 1)], 1.0);
        assert_eq!(m.matrix[(1, 1)], 1.0);
    }

    #[test]
    fn mid_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn covariance_matches_direct_formula() {
        let x = vec![1.0, 2.0, 4.0, 7.0, 11.0];
        let y = vec![2.0, 1.0, 0.0, 5.0, 3.0];
        let s = block(&[x.clone(), y.clone()]);
        let (mean, cov) = s.moments();
        assert_eq!(mean, vec![5.0, 2.2]);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - 5.0) * (b - 2.2)).sum::<f64>() / 4.0;
        assert!((cov[(0, 1)] - sxy).abs() < 1e-14);
        assert_eq!(cov[(0, 1)], cov[(1, 0)]);
    }

    #[test]
    fn small_groups_are_rejected() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = block(&[x.clone(), x]);
        let err = empirical_conditional_matrix(&s, &QuantileInterval::lower(0.2).unwrap(), MatrixKind::Covariance);
        assert!(matches!(err, Err(Error::InsufficientData { got: 20, .. })));
    }

    #[test]
    fn groups_follow_benchmark_order() {
        let x = vec![5.0, 1.0, 3.0, 1.0, 4.0];
        let s = block(&[x.clone(), x]);
        let order = SampleOrder::new(&s);
        // ties broken by index: 1 before 3
        assert_eq!(order.group(&QuantileInterval::full()), &[1, 3, 2, 4, 0]);
        assert_eq!(order.group(&QuantileInterval::lower(0.4).unwrap()), &[1, 3]);
        assert_eq!(order.group(&QuantileInterval::center(0.4).unwrap()), &[3, 2]);
    }

    #[test]
    fn presorted_estimators_match_direct_ones() {
        let mut state = 11u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..500).map(|_| next()).collect())
            .collect();
        let s = block(&cols);
        let order = SampleOrder::new(&s);
        assert!(!order.tied);
        for iv in [QuantileInterval::lower(0.2).unwrap(), QuantileInterval::center(0.2).unwrap()] {
            let rows = order.group(&iv);
            let g = gather(&s, rows);
            assert_eq!(order.spearman_matrix(rows), spearman_matrix(&g));
            let fast = order.kendall_matrix(rows);
            let slow = kendall_matrix(&g);
            assert!((fast - slow).amax() < 1e-15);
        }
    }
}
