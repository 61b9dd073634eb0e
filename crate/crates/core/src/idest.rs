//! Maximum-likelihood intrinsic-dimension estimation from nearest-neighbour
//! distance ratios.
//!
//! For a table of per-point sorted neighbour distances T_1(x) <= ... <= T_k(x),
//! the estimate is
//!
//! ```text
//! d_hat = [ 1/(n c) * sum_i sum_{j=1}^{k-1} ln( T_k(x_i) / T_j(x_i) ) ]^-1
//! ```
//!
//! with the normalizer c = k - 1 by default; c = k - 2 is the asymptotic
//! bias-corrected variant retained for cross-checking against prior work.
//! Accumulation runs in f64, in row order, with no reordering, so results
//! are identical across platforms and thread counts.

use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, GroupIndex};
use crate::error::{Error, Result};
use crate::knn::{knn_distances, Backend, NeighborTable};
use crate::scalar::Scalar;

/// Which denominator the estimator divides the log-ratio sum by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// c = k - 1 (default; more consistent across k).
    #[default]
    KMinus1,
    /// c = k - 2 (asymptotic bias correction used by earlier work).
    KMinus2,
}

impl Variant {
    pub fn normalizer(self, k: usize) -> usize {
        match self {
            Variant::KMinus1 => k - 1,
            Variant::KMinus2 => k - 2,
        }
    }

    pub fn min_k(self) -> usize {
        match self {
            Variant::KMinus1 => 2,
            Variant::KMinus2 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::KMinus1 => "k-minus-1",
            Variant::KMinus2 => "k-minus-2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k-minus-1" | "k-1" => Ok(Variant::KMinus1),
            "k-minus-2" | "k-2" => Ok(Variant::KMinus2),
            other => Err(Error::Argument(format!(
                "unknown estimator variant {other:?}; expected \"k-1\" or \"k-2\""
            ))),
        }
    }
}

/// One intrinsic-dimension estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub k: usize,
    pub variant: Variant,
    pub value: f64,
    /// Points that contributed to the sum.
    pub n_used: usize,
}

/// MLE estimate from a neighbour table at neighbourhood size `k`.
pub fn mle_id(table: &NeighborTable, k: usize, variant: Variant) -> Result<IdEstimate> {
    if k > table.k() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the table's {} stored neighbours",
            table.k()
        )));
    }
    if k < variant.min_k() {
        return Err(Error::Argument(format!(
            "variant {} needs k >= {}, got {k}",
            variant.name(),
            variant.min_k()
        )));
    }
    let n = table.n();
    let mut sum = 0.0f64;
    for i in 0..n {
        let row = table.row_distances(i);
        let t_k = row[k - 1];
        if !(t_k > 0.0) {
            return Err(Error::EstimatorUndefined(format!(
                "point {i} has zero distance to its neighbour; deduplicate first"
            )));
        }
        let ln_tk = t_k.ln();
        for &t_j in &row[..k - 1] {
            if !(t_j > 0.0) {
                return Err(Error::EstimatorUndefined(format!(
                    "point {i} has zero distance to its neighbour; deduplicate first"
                )));
            }
            sum += ln_tk - t_j.ln();
        }
    }
    let c = variant.normalizer(k) as f64;
    let mean = sum / (n as f64 * c);
    if !(mean > 0.0) {
        return Err(Error::EstimatorUndefined(
            "log-ratio sum is not positive (all neighbour distances equal?)".into(),
        ));
    }
    Ok(IdEstimate { k, variant, value: mean.recip(), n_used: n })
}

/// Latent dimension from a real-valued estimate: round up, floor at 1.
pub fn latent_dim_from_estimate(estimate: &IdEstimate) -> usize {
    (estimate.value.ceil() as usize).max(1)
}

/// One cell of the per-group estimate grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum IdCell {
    Estimate(IdEstimate),
    /// The group has too few points for this k; not fatal.
    Insufficient { group_size: usize, k: usize },
}

impl IdCell {
    pub fn estimate(&self) -> Option<IdEstimate> {
        match self {
            IdCell::Estimate(e) => Some(*e),
            IdCell::Insufficient { .. } => None,
        }
    }
}

/// Per-group summary over the k sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

/// Per-group, per-k intrinsic-dimension estimates with pooled estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdReport {
    pub groups: Vec<usize>,
    pub k_list: Vec<usize>,
    pub variant: Variant,
    /// `cells[g][j]` is the estimate for group `groups[g]` at `k_list[j]`.
    pub cells: Vec<Vec<IdCell>>,
    /// Whole-dataset estimate per k, ignoring the grouping.
    pub pooled: Vec<IdCell>,
    pub summaries: Vec<Option<GroupSummary>>,
    /// Duplicates removed per group (last entry: pooled dataset).
    pub duplicates_removed: Vec<usize>,
}

impl IdReport {
    pub fn cell(&self, group: usize, k: usize) -> Option<&IdCell> {
        let g = self.groups.iter().position(|&x| x == group)?;
        let j = self.k_list.iter().position(|&x| x == k)?;
        Some(&self.cells[g][j])
    }

    /// Long-form CSV: `group, k, variant, estimate, n_used`; the pooled rows
    /// use the group name "all".
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,k,variant,estimate,n_used\n");
        for (g, row) in self.groups.iter().zip(&self.cells) {
            for (k, cell) in self.k_list.iter().zip(row) {
                match cell {
                    IdCell::Estimate(e) => out.push_str(&format!(
                        "{g},{k},{},{},{}\n",
                        e.variant.name(),
                        e.value,
                        e.n_used
                    )),
                    IdCell::Insufficient { .. } => {
                        out.push_str(&format!("{g},{k},{},insufficient,0\n", self.variant.name()))
                    }
                }
            }
        }
        for (k, cell) in self.k_list.iter().zip(&self.pooled) {
            match cell {
                IdCell::Estimate(e) => out.push_str(&format!(
                    "all,{k},{},{},{}\n",
                    e.variant.name(),
                    e.value,
                    e.n_used
                )),
                IdCell::Insufficient { .. } => {
                    out.push_str(&format!("all,{k},{},insufficient,0\n", self.variant.name()))
                }
            }
        }
        out
    }
}

/// Default neighbourhood sweep.
pub const DEFAULT_K_LIST: [usize; 4] = [3, 5, 10, 20];

/// Estimate intrinsic dimension independently per group and for the pooled
/// dataset. Duplicates are removed (per group) before estimation and the
/// removal counts are reported.
pub fn per_group_id<S: Scalar>(
    x: &DataMatrix<S>,
    groups: &GroupIndex,
    k_list: &[usize],
    variant: Variant,
    backend: Backend,
    threads: usize,
) -> Result<IdReport> {
    if k_list.is_empty() {
        return Err(Error::Argument("k list is empty".into()));
    }
    let mut k_sorted = k_list.to_vec();
    k_sorted.sort_unstable();
    k_sorted.dedup();
    if k_sorted[0] < variant.min_k() {
        return Err(Error::Argument(format!(
            "variant {} needs k >= {}",
            variant.name(),
            variant.min_k()
        )));
    }

    let mut cells = Vec::with_capacity(groups.n_groups());
    let mut summaries = Vec::with_capacity(groups.n_groups());
    let mut duplicates = Vec::with_capacity(groups.n_groups() + 1);
    for g in 0..groups.n_groups() {
        let member_rows = groups.members(g);
        let sub = x.select_rows(&member_rows);
        let (row, removed) = sweep(&sub, &k_sorted, variant, backend, threads)?;
        duplicates.push(removed);
        summaries.push(summarize(&row));
        cells.push(row);
    }
    let (pooled, pooled_removed) = sweep(x, &k_sorted, variant, backend, threads)?;
    duplicates.push(pooled_removed);

    Ok(IdReport {
        groups: (0..groups.n_groups()).collect(),
        k_list: k_sorted,
        variant,
        cells,
        pooled,
        summaries,
        duplicates_removed: duplicates,
    })
}

fn sweep<S: Scalar>(
    x: &DataMatrix<S>,
    k_list: &[usize],
    variant: Variant,
    backend: Backend,
    threads: usize,
) -> Result<(Vec<IdCell>, usize)> {
    // One table at the largest feasible k serves every smaller k. Feasibility
    // is judged against the deduplicated point count.
    let (distinct, removed) = crate::knn::distinct_rows(x);
    let n_distinct = distinct.len();
    let feasible: Vec<usize> = k_list.iter().copied().filter(|&k| k < n_distinct).collect();
    if feasible.is_empty() {
        let row = k_list
            .iter()
            .map(|&k| IdCell::Insufficient { group_size: n_distinct, k })
            .collect();
        return Ok((row, removed));
    }
    let k_build = *feasible.last().unwrap();
    let out = knn_distances(x, k_build, true, backend, threads)?;
    let row = k_list
        .iter()
        .map(|&k| {
            if k > out.table.k() {
                Ok(IdCell::Insufficient { group_size: n_distinct, k })
            } else {
                mle_id(&out.table, k, variant).map(IdCell::Estimate)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((row, out.duplicates_removed))
}

fn summarize(cells: &[IdCell]) -> Option<GroupSummary> {
    let mut vals: Vec<f64> = cells.iter().filter_map(|c| c.estimate()).map(|e| e.value).collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    let min = vals[0];
    let max = *vals.last().unwrap();
    let m = vals.len();
    let median = if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    };
    Some(GroupSummary { min, max, median })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> DataMatrix<f64> {
        let dim = rows[0].len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DataMatrix::new(rows.len(), dim, values).unwrap()
    }

    fn line_table() -> NeighborTable {
        let e = std::f64::consts::E;
        let x = matrix(&[&[0.0], &[1.0], &[e]]);
        knn_distances(&x, 2, false, Backend::BruteForce, 1)
            .unwrap()
            .table
    }

    #[test]
    fn analytic_three_point_case() {
        // sum of log ratios telescopes to exactly 2, so d_hat = 3/2.
        let t = line_table();
        let e = mle_id(&t, 2, Variant::KMinus1).unwrap();
        assert!((e.value - 1.5).abs() < 1e-12, "{}", e.value);
        assert_eq!(e.n_used, 3);
    }

    #[test]
    fn variant_identity_is_algebraic() {
        let mut rng = crate::rng::Rng::new(17);
        let values: Vec<f64> = (0..200 * 6).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(200, 6, values).unwrap();
        let t = knn_distances(&x, 9, false, Backend::BruteForce, 1).unwrap().table;
        for k in [3usize, 5, 9] {
            let a = mle_id(&t, k, Variant::KMinus1).unwrap().value;
            let b = mle_id(&t, k, Variant::KMinus2).unwrap().value;
            let expected = a * (k as f64 - 2.0) / (k as f64 - 1.0);
            assert!(
                (b - expected).abs() <= 1e-12 * expected.abs(),
                "k={k}: {b} vs {expected}"
            );
        }
    }

    #[test]
    fn variant_minimum_k_is_enforced() {
        let t = line_table();
        assert!(mle_id(&t, 2, Variant::KMinus2).is_err());
        assert!(mle_id(&t, 3, Variant::KMinus1).is_err()); // exceeds table
    }

    #[test]
    fn ceiling_rule() {
        let mk = |value| IdEstimate { k: 20, variant: Variant::KMinus1, value, n_used: 10 };
        assert_eq!(latent_dim_from_estimate(&mk(21.3)), 22);
        assert_eq!(latent_dim_from_estimate(&mk(3.0)), 3);
        assert_eq!(latent_dim_from_estimate(&mk(0.2)), 1);
    }

    #[test]
    fn scale_invariance() {
        let mut rng = crate::rng::Rng::new(4);
        let values: Vec<f64> = (0..300 * 5).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(300, 5, values.clone()).unwrap();
        let scaled =
            DataMatrix::new(300, 5, values.iter().map(|v| v * 37.5).collect()).unwrap();
        let ta = knn_distances(&x, 10, false, Backend::BruteForce, 1).unwrap().table;
        let tb = knn_distances(&scaled, 10, false, Backend::BruteForce, 1).unwrap().table;
        for k in [3usize, 10] {
            let a = mle_id(&ta, k, Variant::KMinus1).unwrap().value;
            let b = mle_id(&tb, k, Variant::KMinus1).unwrap().value;
            assert!((a - b).abs() <= 1e-9 * a.abs(), "k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = crate::rng::Rng::new(14);
        let n = 250;
        let dim = 6;
        let values: Vec<f64> = (0..n * dim).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(n, dim, values.clone()).unwrap();
        // random rotation (orthonormal frame with d = D) plus translation
        let rot = crate::synth::random_orthonormal_frame(&mut rng, dim, dim);
        let shift: Vec<f64> = (0..dim).map(|_| 10.0 * rng.next_normal()).collect();
        let mut moved = vec![0.0f64; n * dim];
        for i in 0..n {
            for a in 0..dim {
                let mut acc = shift[a];
                for j in 0..dim {
                    acc += rot[a * dim + j] * values[i * dim + j];
                }
                moved[i * dim + a] = acc;
            }
        }
        let y = DataMatrix::new(n, dim, moved).unwrap();
        let ta = knn_distances(&x, 10, false, Backend::BruteForce, 1).unwrap().table;
        let tb = knn_distances(&y, 10, false, Backend::BruteForce, 1).unwrap().table;
        for k in [3usize, 10] {
            let a = mle_id(&ta, k, Variant::KMinus1).unwrap().value;
            let b = mle_id(&tb, k, Variant::KMinus1).unwrap().value;
            assert!((a - b).abs() <= 1e-9 * a.abs(), "k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn embedding_dimension_does_not_matter() {
        // Same 3-manifold sampled into D = 8 and D = 40; estimates agree to
        // Monte-Carlo tolerance.
        let (x8, _) = crate::synth::gen_affine_manifold(3000, 3, 8, 70, 0.0).unwrap();
        let (x40, _) = crate::synth::gen_affine_manifold(3000, 3, 40, 70, 0.0).unwrap();
        let ta = knn_distances(&x8, 10, true, Backend::VpTree, 2).unwrap().table;
        let tb = knn_distances(&x40, 10, true, Backend::VpTree, 2).unwrap().table;
        let a = mle_id(&ta, 10, Variant::KMinus1).unwrap().value;
        let b = mle_id(&tb, 10, Variant::KMinus1).unwrap().value;
        assert!((a - b).abs() < 0.3, "{a} vs {b}");
    }

    #[test]
    fn single_group_grid_equals_whole_dataset() {
        let mut rng = crate::rng::Rng::new(8);
        let values: Vec<f64> = (0..100 * 3).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(100, 3, values).unwrap();
        let g = GroupIndex::from_assignment(vec![0; 100], 1).unwrap();
        let report =
            per_group_id(&x, &g, &[3, 5], Variant::KMinus1, Backend::BruteForce, 1).unwrap();
        for (j, cell) in report.cells[0].iter().enumerate() {
            assert_eq!(cell, &report.pooled[j]);
        }
    }

    #[test]
    fn small_group_yields_insufficient_cell() {
        let x = matrix(&[&[0.0], &[1.0], &[2.5], &[10.0]]);
        let g = GroupIndex::from_assignment(vec![0, 0, 0, 1], 2).unwrap();
        let report =
            per_group_id(&x, &g, &[2, 3], Variant::KMinus1, Backend::BruteForce, 1).unwrap();
        // group 1 has a single point: everything insufficient
        assert!(report.cells[1].iter().all(|c| c.estimate().is_none()));
        assert!(report.summaries[1].is_none());
        // group 0 supports k=2 only
        assert!(report.cells[0][0].estimate().is_some());
        assert!(report.cells[0][1].estimate().is_none());
    }

    #[test]
    fn csv_has_header_and_pooled_rows() {
        let x = matrix(&[&[0.0], &[1.0], &[3.0], &[7.0]]);
        let g = GroupIndex::from_assignment(vec![0, 0, 0, 0], 1).unwrap();
        let report =
            per_group_id(&x, &g, &[2], Variant::KMinus1, Backend::BruteForce, 1).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("group,k,variant,estimate,n_used\n"));
        assert!(csv.contains("\nall,2,k-minus-1,"));
    }
}
