//! Sample-quality and statistical evaluation.
//!
//! * `mmd2_unbiased` — the unbiased squared maximum mean discrepancy with an
//!   RBF kernel, the FID stand-in at desk scale:
//!
//!   ```text
//!   MMD^2 = sum_{i!=j} k(x_i,x_j) / (m(m-1))
//!         + sum_{i!=j} k(y_i,y_j) / (n(n-1))
//!         - 2 sum_{i,j} k(x_i,y_j) / (mn)
//!   ```
//!
//!   with k(a,b) = exp(-||a-b||^2 / (2 sigma^2)); the median heuristic picks
//!   sigma as the median pairwise distance over the pooled sets.
//!
//! * `bridge_mass` — the fraction of generated samples farther than tau from
//!   every training point, a proxy for probability placed on the regions
//!   connecting data components.
//!
//! * `pearson_r_and_pvalue` — correlation with a two-sided t-test p-value.

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::knn::{nn_distance_to_set, self_nn_distances};
use crate::parallel::par_map;
use crate::scalar::Scalar;

pub mod special;

/// Bandwidth policy for the RBF kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Value(f64),
    MedianHeuristic,
}

/// Unbiased MMD^2 estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub value: f64,
    pub bandwidth: f64,
    pub m: usize,
    pub n: usize,
}

pub fn mmd2_unbiased<S: Scalar, T: Scalar>(
    xs: &DataMatrix<S>,
    ys: &DataMatrix<T>,
    bandwidth: Bandwidth,
    threads: usize,
) -> Result<MmdResult> {
    let m = xs.n();
    let n = ys.n();
    if m < 2 || n < 2 {
        return Err(Error::Argument(
            "the unbiased estimator needs at least 2 points per set".into(),
        ));
    }
    if xs.dim() != ys.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            xs.dim(),
            ys.dim()
        )));
    }
    let dim = xs.dim();
    let xv: Vec<f64> = xs.values().iter().map(|v| v.widen()).collect();
    let yv: Vec<f64> = ys.values().iter().map(|v| v.widen()).collect();

    let sigma = match bandwidth {
        Bandwidth::Value(v) => {
            if !(v > 0.0) {
                return Err(Error::Argument("bandwidth must be positive".into()));
            }
            v
        }
        Bandwidth::MedianHeuristic => median_pairwise_distance(&xv, &yv, dim)?,
    };
    let inv = 1.0 / (2.0 * sigma * sigma);

    // Per-row partial sums, combined in row order: identical for any
    // thread count.
    fn row(buf: &[f64], dim: usize, i: usize) -> &[f64] {
        &buf[i * dim..(i + 1) * dim]
    }
    let kernel = |a: &[f64], b: &[f64]| -> f64 {
        let mut d2 = 0.0;
        for (x, y) in a.iter().zip(b) {
            let d = x - y;
            d2 += d * d;
        }
        (-d2 * inv).exp()
    };

    let xx: f64 = par_map(m, threads, |i| {
        let mut acc = 0.0;
        for j in 0..m {
            if j != i {
                acc += kernel(row(&xv, dim, i), row(&xv, dim, j));
            }
        }
        acc
    })
    .into_iter()
    .sum();
    let yy: f64 = par_map(n, threads, |i| {
        let mut acc = 0.0;
        for j in 0..n {
            if j != i {
                acc += kernel(row(&yv, dim, i), row(&yv, dim, j));
            }
        }
        acc
    })
    .into_iter()
    .sum();
    let xy: f64 = par_map(m, threads, |i| {
        let mut acc = 0.0;
        for j in 0..n {
            acc += kernel(row(&xv, dim, i), row(&yv, dim, j));
        }
        acc
    })
    .into_iter()
    .sum();

    let value = xx / (m as f64 * (m as f64 - 1.0)) + yy / (n as f64 * (n as f64 - 1.0))
        - 2.0 * xy / (m as f64 * n as f64);
    Ok(MmdResult { value, bandwidth: sigma, m, n })
}

/// Median-heuristic bandwidth over two sets, without computing an MMD.
pub fn median_heuristic<S: Scalar, T: Scalar>(
    xs: &DataMatrix<S>,
    ys: &DataMatrix<T>,
) -> Result<f64> {
    if xs.dim() != ys.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            xs.dim(),
            ys.dim()
        )));
    }
    let xv: Vec<f64> = xs.values().iter().map(|v| v.widen()).collect();
    let yv: Vec<f64> = ys.values().iter().map(|v| v.widen()).collect();
    median_pairwise_distance(&xv, &yv, xs.dim())
}

/// Lower median of all pairwise distances over the pooled points.
fn median_pairwise_distance(xv: &[f64], yv: &[f64], dim: usize) -> Result<f64> {
    let mut pooled = Vec::with_capacity(xv.len() + yv.len());
    pooled.extend_from_slice(xv);
    pooled.extend_from_slice(yv);
    let total = pooled.len() / dim;
    let mut dists = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        let a = &pooled[i * dim..(i + 1) * dim];
        for j in (i + 1)..total {
            let b = &pooled[j * dim..(j + 1) * dim];
            let mut d2 = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                d2 += d * d;
            }
            dists.push(d2.sqrt());
        }
    }
    let mid = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let median = *median;
    if !(median > 0.0) {
        return Err(Error::Validation(
            "median pairwise distance is zero; bandwidth heuristic is degenerate".into(),
        ));
    }
    Ok(median)
}

/// Threshold policy for [`bridge_mass`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tau {
    Value(f64),
    /// 3x the 95th percentile (nearest rank) of the training set's own
    /// 1-NN distances.
    Auto,
}

/// Off-support mass report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeReport {
    pub tau: f64,
    pub off_support_fraction: f64,
    pub min_distances: Vec<f64>,
}

pub fn bridge_mass<S: Scalar, T: Scalar>(
    samples: &DataMatrix<S>,
    train: &DataMatrix<T>,
    tau: Tau,
    threads: usize,
) -> Result<BridgeReport> {
    if samples.dim() != train.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: samples are {}-dimensional, train is {}-dimensional",
            samples.dim(),
            train.dim()
        )));
    }
    let tau = match tau {
        Tau::Value(v) => {
            if v < 0.0 {
                return Err(Error::Argument("tau must be non-negative".into()));
            }
            v
        }
        Tau::Auto => {
            let mut own = self_nn_distances(train, threads)?;
            own.sort_by(|a, b| a.total_cmp(b));
            let rank = ((0.95 * own.len() as f64).ceil() as usize).clamp(1, own.len());
            3.0 * own[rank - 1]
        }
    };
    let min_distances = nn_distance_to_set(samples, train, threads)?;
    let off = min_distances.iter().filter(|&&d| d > tau).count();
    Ok(BridgeReport {
        tau,
        off_support_fraction: off as f64 / samples.n() as f64,
        min_distances,
    })
}

/// Pearson correlation with a two-sided p-value from the exact t-test:
/// t = r sqrt((n-2) / (1-r^2)) against Student's t with n-2 degrees of
/// freedom. |r| = 1 returns p = 0.
pub fn pearson_r_and_pvalue(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Argument(format!(
            "length mismatch: {} vs {}",
            n,
            y.len()
        )));
    }
    if n < 3 {
        return Err(Error::Argument("need at least 3 pairs".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Argument(
            "correlation is undefined for a constant input vector".into(),
        ));
    }
    // r through r^2 keeps exactly-linear integer cases exact; and with
    // t^2 = df r^2/(1-r^2) the two-sided tail
    // I_{df/(df+t^2)}(df/2, 1/2) reduces to I_{1-r^2}(df/2, 1/2).
    let r2 = ((sxy * sxy) / (sxx * syy)).min(1.0);
    let r = sxy.signum() * r2.sqrt();
    let df = (n - 2) as f64;
    let one_minus_r2 = 1.0 - r2;
    let p = if one_minus_r2 <= 0.0 {
        0.0
    } else {
        special::betainc_regularized(df / 2.0, 0.5, one_minus_r2)
    };
    Ok((r, p))
}

/// Ordinary least squares y = slope * x + intercept.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Argument("need at least 2 matched pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        return Err(Error::Argument("slope is undefined for constant x".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Correlation report between per-group dimension estimates and accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdAccuracyReport {
    pub r: f64,
    pub p_value: f64,
    pub slope: f64,
    pub intercept: f64,
    pub d_hats: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl IdAccuracyReport {
    /// Plot-ready TSV: `x, y, fit`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("x\ty\tfit\n");
        for (x, y) in self.d_hats.iter().zip(&self.accuracies) {
            out.push_str(&format!("{x}\t{y}\t{}\n", self.slope * x + self.intercept));
        }
        out
    }
}

pub fn id_accuracy_report(d_hats: &[f64], accuracies: &[f64]) -> Result<IdAccuracyReport> {
    let (r, p_value) = pearson_r_and_pvalue(d_hats, accuracies)?;
    let (slope, intercept) = ols_line(d_hats, accuracies)?;
    Ok(IdAccuracyReport {
        r,
        p_value,
        slope,
        intercept,
        d_hats: d_hats.to_vec(),
        accuracies: accuracies.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn matrix(rows: &[&[f64]]) -> DataMatrix<f64> {
        let dim = rows[0].len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DataMatrix::new(rows.len(), dim, values).unwrap()
    }

    fn normal_matrix(n: usize, dim: usize, seed: u64, shift: f64) -> DataMatrix<f64> {
        let mut rng = Rng::new(seed);
        let values = (0..n * dim).map(|_| shift + rng.next_normal()).collect();
        DataMatrix::new(n, dim, values).unwrap()
    }

    #[test]
    fn hand_evaluated_mmd() {
        // Xs = {0, 2}, Ys = {1, 1}, sigma = 1:
        // e^{-2} + 1 - 2 e^{-1/2}
        let xs = matrix(&[&[0.0], &[2.0]]);
        let ys = matrix(&[&[1.0], &[1.0]]);
        let r = mmd2_unbiased(&xs, &ys, Bandwidth::Value(1.0), 1).unwrap();
        let expected = (-2.0f64).exp() + 1.0 - 2.0 * (-0.5f64).exp();
        assert!((r.value - expected).abs() < 1e-12, "{} vs {expected}", r.value);
        assert!((expected - -0.077726).abs() < 1e-6);
    }

    #[test]
    fn mmd_is_symmetric() {
        let xs = normal_matrix(40, 3, 1, 0.0);
        let ys = normal_matrix(50, 3, 2, 0.5);
        let a = mmd2_unbiased(&xs, &ys, Bandwidth::MedianHeuristic, 1).unwrap();
        let b = mmd2_unbiased(&ys, &xs, Bandwidth::MedianHeuristic, 1).unwrap();
        assert!((a.value - b.value).abs() <= 1e-12);
        assert_eq!(a.bandwidth, b.bandwidth);
    }

    #[test]
    fn mmd_near_zero_under_the_null() {
        let xs = normal_matrix(5000, 2, 3, 0.0);
        let ys = normal_matrix(5000, 2, 4, 0.0);
        let r = mmd2_unbiased(&xs, &ys, Bandwidth::MedianHeuristic, 4).unwrap();
        assert!(r.value.abs() <= 0.005, "{}", r.value);
    }

    #[test]
    fn mmd_separates_far_blobs() {
        let xs = normal_matrix(200, 2, 5, 0.0);
        let ys = normal_matrix(200, 2, 6, 20.0);
        let r = mmd2_unbiased(&xs, &ys, Bandwidth::MedianHeuristic, 1).unwrap();
        assert!(r.value > 0.1, "{}", r.value);
    }

    #[test]
    fn mmd_thread_count_does_not_change_value() {
        let xs = normal_matrix(120, 3, 7, 0.0);
        let ys = normal_matrix(90, 3, 8, 1.0);
        let a = mmd2_unbiased(&xs, &ys, Bandwidth::MedianHeuristic, 1).unwrap();
        let b = mmd2_unbiased(&xs, &ys, Bandwidth::MedianHeuristic, 5).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn mmd_rejects_tiny_sets() {
        let xs = matrix(&[&[0.0]]);
        let ys = matrix(&[&[1.0], &[2.0]]);
        assert!(mmd2_unbiased(&xs, &ys, Bandwidth::Value(1.0), 1).is_err());
    }

    #[test]
    fn bridge_mass_zero_for_training_subset() {
        let train = normal_matrix(100, 2, 9, 0.0);
        let rows: Vec<usize> = (0..50).collect();
        let samples = train.select_rows(&rows);
        let r = bridge_mass(&samples, &train, Tau::Auto, 1).unwrap();
        assert_eq!(r.off_support_fraction, 0.0);
    }

    #[test]
    fn bridge_mass_one_for_midpoint_between_far_blobs() {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            rows.push(vec![rng.next_f64() * 0.01, rng.next_f64() * 0.01]);
        }
        for _ in 0..50 {
            rows.push(vec![1000.0 + rng.next_f64() * 0.01, rng.next_f64() * 0.01]);
        }
        let train_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let train = matrix(&train_refs);
        let sample = matrix(&[&[500.0, 0.0]]);
        let r = bridge_mass(&sample, &train, Tau::Auto, 1).unwrap();
        assert_eq!(r.off_support_fraction, 1.0);
    }

    #[test]
    fn bridge_mass_is_monotone_in_tau() {
        let train = normal_matrix(200, 2, 13, 0.0);
        let samples = normal_matrix(200, 2, 14, 1.0);
        let mut prev = 1.0;
        for tau in [0.0, 0.1, 0.3, 0.7, 1.5, 4.0] {
            let r = bridge_mass(&samples, &train, Tau::Value(tau), 1).unwrap();
            assert!(r.off_support_fraction <= prev + 1e-15);
            prev = r.off_support_fraction;
        }
    }

    #[test]
    fn pearson_exact_linear() {
        let (r, p) = pearson_r_and_pvalue(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn pearson_analytic_df1_case() {
        // r = 0.5, df = 1: two-sided p = 2/3 via the arctan CDF.
        let (r, p) = pearson_r_and_pvalue(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() <= 1e-12, "r = {r}");
        assert!((p - 2.0 / 3.0).abs() <= 1e-9, "p = {p}");
    }

    #[test]
    fn pearson_sign_flip_negates_r_keeps_p() {
        let x = [0.5, 1.5, 2.0, 4.0, 5.5];
        let y = [1.0, 0.7, 2.2, 3.1, 2.9];
        let (r1, p1) = pearson_r_and_pvalue(&x, &y).unwrap();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let (r2, p2) = pearson_r_and_pvalue(&x, &neg).unwrap();
        assert!((r1 + r2).abs() < 1e-12);
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn pearson_invariant_under_positive_affine_maps() {
        let x = [0.5, 1.5, 2.0, 4.0, 5.5, 9.0];
        let y = [1.0, 0.7, 2.2, 3.1, 2.9, 4.0];
        let (r1, p1) = pearson_r_and_pvalue(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.0 * v + 7.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| 0.25 * v - 2.0).collect();
        let (r2, p2) = pearson_r_and_pvalue(&xs, &ys).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_constant_input() {
        assert!(pearson_r_and_pvalue(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn report_handles_perfect_anticorrelation() {
        let report = id_accuracy_report(&[1.0, 2.0, 3.0], &[9.0, 6.0, 3.0]).unwrap();
        assert!((report.r + 1.0).abs() < 1e-12);
        assert!(report.slope < 0.0);
        assert!(report.to_tsv().starts_with("x\ty\tfit\n"));
    }

    #[test]
    fn shuffled_pairs_have_small_r_on_average() {
        let mut rng = Rng::new(15);
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let mut sum_abs_r = 0.0;
        let trials = 50;
        for _ in 0..trials {
            let mut y = x.clone();
            for i in (1..y.len()).rev() {
                let j = rng.next_index(i + 1);
                y.swap(i, j);
            }
            let (r, _) = pearson_r_and_pvalue(&x, &y).unwrap();
            sum_abs_r += r.abs();
        }
        assert!(sum_abs_r / (trials as f64) < 0.25);
    }
}
