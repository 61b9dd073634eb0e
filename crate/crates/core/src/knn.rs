//! Exact k-nearest-neighbour search under the Euclidean metric.
//!
//! Two interchangeable backends produce identical tables:
//!
//! * a brute-force scan, kept as the correctness oracle, and
//! * a vantage-point tree, faster when the data has low intrinsic dimension.
//!
//! Candidates are ordered by (squared distance, row index), so ties are
//! broken by ascending index and both backends agree bit-for-bit. All
//! distances are computed and stored in f64 regardless of the storage
//! scalar, since downstream estimators take logs of distance ratios.

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::scalar::Scalar;

/// Per-point sorted nearest-neighbour distances and indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    distances: Vec<f64>,
    indices: Vec<usize>,
}

impl NeighborTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Ascending distances from point `i` to its k nearest neighbours.
    pub fn row_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    pub fn row_indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Debug dump as `i, j, index, distance` CSV lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,index,distance\n");
        for i in 0..self.n {
            for j in 0..self.k {
                out.push_str(&format!(
                    "{i},{j},{},{}\n",
                    self.row_indices(i)[j],
                    self.row_distances(i)[j]
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    BruteForce,
    #[default]
    VpTree,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" | "brute-force" => Ok(Backend::BruteForce),
            "vptree" | "vp-tree" => Ok(Backend::VpTree),
            other => Err(Error::Argument(format!(
                "unknown backend {other:?}; expected \"brute\" or \"vptree\""
            ))),
        }
    }
}

/// Result of a kNN run: the table plus the duplicate-removal report.
#[derive(Debug, Clone)]
pub struct KnnOutput {
    pub table: NeighborTable,
    /// Original row ids covered by the table, ascending. Identity when no
    /// duplicates were removed.
    pub kept: Vec<usize>,
    pub duplicates_removed: usize,
}

/// Exact k smallest Euclidean distances per point, self excluded.
///
/// With `dedup` set, duplicate rows (pairwise distance exactly 0) are
/// removed before the search and the table covers the surviving points;
/// without it, a duplicate pair is an error since zero distances make
/// log-ratio estimators undefined.
pub fn knn_distances<S: Scalar>(
    x: &DataMatrix<S>,
    k: usize,
    dedup: bool,
    backend: Backend,
    threads: usize,
) -> Result<KnnOutput> {
    if x.n() == 0 {
        return Err(Error::Argument("dataset is empty".into()));
    }
    let (kept, removed) = dedup_rows(x, dedup)?;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if k >= kept.len() {
        return Err(Error::Argument(format!(
            "k = {k} must be smaller than the number of distinct points ({})",
            kept.len()
        )));
    }

    let points = widen_rows(x, &kept);
    let dim = x.dim();
    let n = kept.len();

    let rows: Vec<(Vec<f64>, Vec<usize>)> = match backend {
        Backend::BruteForce => par_map(n, threads, |i| {
            let query = &points[i * dim..(i + 1) * dim];
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(query, &points[j * dim..(j + 1) * dim]), j))
                .collect();
            k_smallest(&mut cand, k)
        }),
        Backend::VpTree => {
            let tree = VpTree::build(&points, dim);
            par_map(n, threads, |i| {
                let query = &points[i * dim..(i + 1) * dim];
                let mut best = KBest::new(k);
                tree.search(query, Some(i), &mut best);
                best.into_sorted()
            })
        }
    };

    let mut distances = Vec::with_capacity(n * k);
    let mut indices = Vec::with_capacity(n * k);
    for (d, idx) in rows {
        distances.extend(d);
        indices.extend(idx);
    }
    Ok(KnnOutput {
        table: NeighborTable { n, k, distances, indices },
        kept,
        duplicates_removed: removed,
    })
}

/// For each query row, the distance to the closest reference row. The query
/// and reference sets are distinct: no self exclusion.
pub fn nn_distance_to_set<S: Scalar, T: Scalar>(
    queries: &DataMatrix<S>,
    reference: &DataMatrix<T>,
    threads: usize,
) -> Result<Vec<f64>> {
    if reference.n() == 0 {
        return Err(Error::Argument("reference set is empty".into()));
    }
    if queries.dim() != reference.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: queries are {}-dimensional, reference is {}-dimensional",
            queries.dim(),
            reference.dim()
        )));
    }
    let dim = reference.dim();
    let all: Vec<usize> = (0..reference.n()).collect();
    let ref_points = widen_rows(reference, &all);
    let tree = VpTree::build(&ref_points, dim);
    Ok(par_map(queries.n(), threads, |i| {
        let q: Vec<f64> = queries.row(i).iter().map(|v| v.widen()).collect();
        let mut best = KBest::new(1);
        tree.search(&q, None, &mut best);
        best.into_sorted().0[0]
    }))
}

/// 1-NN distance of every point to the rest of its own set (self excluded).
/// Zero distances are fine here; used for the bridge-mass threshold.
pub fn self_nn_distances<S: Scalar>(x: &DataMatrix<S>, threads: usize) -> Result<Vec<f64>> {
    if x.n() < 2 {
        return Err(Error::Argument("need at least 2 points for self 1-NN".into()));
    }
    let all: Vec<usize> = (0..x.n()).collect();
    let points = widen_rows(x, &all);
    let dim = x.dim();
    let tree = VpTree::build(&points, dim);
    Ok(par_map(x.n(), threads, |i| {
        let q = &points[i * dim..(i + 1) * dim];
        let mut best = KBest::new(1);
        tree.search(q, Some(i), &mut best);
        best.into_sorted().0[0]
    }))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn widen_rows<S: Scalar>(x: &DataMatrix<S>, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * x.dim());
    for &r in rows {
        out.extend(x.row(r).iter().map(|v| v.widen()));
    }
    out
}

/// Sort candidates by (squared distance, index), keep the first k, and
/// return (euclidean distances, indices).
fn k_smallest(cand: &mut Vec<(f64, usize)>, k: usize) -> (Vec<f64>, Vec<usize>) {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    let d = cand.iter().map(|(d2, _)| d2.sqrt()).collect();
    let idx = cand.iter().map(|&(_, j)| j).collect();
    (d, idx)
}

/// Original ids of the distinct rows of `x` (ascending) and the number of
/// exact duplicates that would be dropped.
pub fn distinct_rows<S: Scalar>(x: &DataMatrix<S>) -> (Vec<usize>, usize) {
    dedup_rows(x, true).expect("dedup with removal cannot fail")
}

/// Detect exact-duplicate rows. Returns (kept original ids ascending,
/// removed count); errors on duplicates when `remove` is unset.
fn dedup_rows<S: Scalar>(x: &DataMatrix<S>, remove: bool) -> Result<(Vec<usize>, usize)> {
    let n = x.n();
    let dim = x.dim();
    // Normalize -0.0 to 0.0 so rows at zero distance compare equal.
    let key = |i: usize| -> Vec<f64> {
        x.row(i)
            .iter()
            .map(|v| {
                let f = v.widen();
                if f == 0.0 {
                    0.0
                } else {
                    f
                }
            })
            .collect()
    };
    let keys: Vec<Vec<f64>> = (0..n).map(key).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        for d in 0..dim {
            match keys[a][d].total_cmp(&keys[b][d]) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        a.cmp(&b)
    });

    let mut kept = Vec::with_capacity(n);
    let mut removed = 0usize;
    let mut run_start = 0usize;
    while run_start < n {
        let mut run_end = run_start + 1;
        while run_end < n && keys[order[run_end]] == keys[order[run_start]] {
            run_end += 1;
        }
        if run_end - run_start > 1 && !remove {
            let mut pair: Vec<usize> = order[run_start..run_start + 2].to_vec();
            pair.sort_unstable();
            return Err(Error::DuplicatePoints { first: pair[0], second: pair[1] });
        }
        // order within a run is ascending original index (sort tiebreak)
        kept.push(order[run_start]);
        removed += run_end - run_start - 1;
        run_start = run_end;
    }
    kept.sort_unstable();
    Ok((kept, removed))
}

// ---------------------------------------------------------------------------
// Vantage-point tree
// ---------------------------------------------------------------------------

struct VpNode {
    /// Point id of the vantage point.
    point: usize,
    /// Median distance from the vantage point to the remaining subset.
    radius: f64,
    inside: Option<Box<VpNode>>,
    outside: Option<Box<VpNode>>,
}

struct VpTree<'a> {
    points: &'a [f64],
    dim: usize,
    root: Option<Box<VpNode>>,
}

impl<'a> VpTree<'a> {
    fn build(points: &'a [f64], dim: usize) -> Self {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        let mut ids: Vec<(f64, usize)> = (0..n).map(|i| (0.0, i)).collect();
        let root = Self::build_node(points, dim, &mut ids);
        VpTree { points, dim, root }
    }

    fn row(points: &[f64], dim: usize, i: usize) -> &[f64] {
        &points[i * dim..(i + 1) * dim]
    }

    /// `items` holds (scratch distance, point id); the vantage point is the
    /// item with the smallest id, so construction is deterministic.
    fn build_node(points: &[f64], dim: usize, items: &mut [(f64, usize)]) -> Option<Box<VpNode>> {
        if items.is_empty() {
            return None;
        }
        let vp_pos = items
            .iter()
            .enumerate()
            .min_by_key(|(_, &(_, id))| id)
            .map(|(pos, _)| pos)
            .unwrap();
        items.swap(0, vp_pos);
        let vp = items[0].1;
        let rest = &mut items[1..];
        if rest.is_empty() {
            return Some(Box::new(VpNode { point: vp, radius: 0.0, inside: None, outside: None }));
        }
        let vp_row = Self::row(points, dim, vp);
        for item in rest.iter_mut() {
            item.0 = sq_dist(vp_row, Self::row(points, dim, item.1));
        }
        let mid = (rest.len() - 1) / 2;
        rest.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let radius = rest[mid].0;
        let (left, right) = rest.split_at_mut(mid + 1);
        let inside = Self::build_node(points, dim, left);
        let outside = Self::build_node(points, dim, right);
        Some(Box::new(VpNode { point: vp, radius, inside, outside }))
    }

    fn search(&self, query: &[f64], exclude: Option<usize>, best: &mut KBest) {
        if let Some(root) = &self.root {
            self.search_node(root, query, exclude, best);
        }
    }

    fn search_node(&self, node: &VpNode, query: &[f64], exclude: Option<usize>, best: &mut KBest) {
        let d2 = sq_dist(query, Self::row(self.points, self.dim, node.point));
        if exclude != Some(node.point) {
            best.offer(d2, node.point);
        }
        if node.inside.is_none() && node.outside.is_none() {
            return;
        }
        // Prune with the triangle inequality on plain distances. The bound
        // is non-strict and carries a relative slack that over-covers the
        // sqrt rounding, so candidates whose squared distance ties the
        // current worst (which offer() resolves by index) are never lost
        // to a boundary-tight prune.
        let d = d2.sqrt();
        let r = node.radius.sqrt();
        let worst = best.worst_bound().sqrt() * (1.0 + 1e-12);
        if d < r {
            if let Some(inside) = &node.inside {
                self.search_node(inside, query, exclude, best);
            }
            if let Some(outside) = &node.outside {
                if d + worst >= r {
                    self.search_node(outside, query, exclude, best);
                }
            }
        } else {
            if let Some(outside) = &node.outside {
                self.search_node(outside, query, exclude, best);
            }
            if let Some(inside) = &node.inside {
                if d - worst <= r {
                    self.search_node(inside, query, exclude, best);
                }
            }
        }
    }
}

/// Bounded best-k buffer ordered by (squared distance, index).
struct KBest {
    cap: usize,
    items: Vec<(f64, usize)>,
}

impl KBest {
    fn new(cap: usize) -> Self {
        KBest { cap, items: Vec::with_capacity(cap + 1) }
    }

    fn worst_bound(&self) -> f64 {
        if self.items.len() < self.cap {
            f64::INFINITY
        } else {
            self.items.last().map(|&(d, _)| d).unwrap_or(f64::INFINITY)
        }
    }

    fn offer(&mut self, d2: f64, idx: usize) {
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.items.len() == self.cap {
            if cmp(&(d2, idx), self.items.last().unwrap()) != std::cmp::Ordering::Less {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|it| cmp(it, &(d2, idx)) == std::cmp::Ordering::Less);
        self.items.insert(pos, (d2, idx));
    }

    fn into_sorted(self) -> (Vec<f64>, Vec<usize>) {
        let d = self.items.iter().map(|(d2, _)| d2.sqrt()).collect();
        let idx = self.items.iter().map(|&(_, j)| j).collect();
        (d, idx)
    }
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

    fn random_matrix(n: usize, dim: usize, seed: u64) -> DataMatrix<f64> {
        let mut rng = Rng::new(seed);
        let values = (0..n * dim).map(|_| rng.next_normal()).collect();
        DataMatrix::new(n, dim, values).unwrap()
    }

    #[test]
    fn hand_geometry_three_points() {
        let e = std::f64::consts::E;
        let x = matrix(&[&[0.0], &[1.0], &[e]]);
        let out = knn_distances(&x, 2, false, Backend::BruteForce, 1).unwrap();
        let t = &out.table;
        assert_eq!(t.row_distances(0), &[1.0, e]);
        assert_eq!(t.row_distances(1), &[1.0, e - 1.0]);
        assert_eq!(t.row_distances(2), &[e - 1.0, e]);
        assert_eq!(out.duplicates_removed, 0);
    }

    #[test]
    fn duplicate_rows_error_without_dedup() {
        let x = matrix(&[&[0.0, 1.0], &[2.0, 3.0], &[0.0, 1.0]]);
        let err = knn_distances(&x, 1, false, Backend::BruteForce, 1).unwrap_err();
        match err {
            Error::DuplicatePoints { first, second } => {
                assert_eq!((first, second), (0, 2));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn dedup_removes_duplicates_and_reports() {
        let x = matrix(&[&[0.0, 1.0], &[2.0, 3.0], &[0.0, 1.0], &[5.0, 5.0]]);
        let out = knn_distances(&x, 2, true, Backend::BruteForce, 1).unwrap();
        assert_eq!(out.duplicates_removed, 1);
        assert_eq!(out.kept, vec![0, 1, 3]);
        assert_eq!(out.table.n(), 3);
    }

    #[test]
    fn negative_zero_rows_are_duplicates() {
        let x = matrix(&[&[-0.0, 5.0], &[0.0, 5.0]]);
        let err = knn_distances(&x, 1, false, Backend::BruteForce, 1).unwrap_err();
        assert!(matches!(err, Error::DuplicatePoints { .. }));
    }

    #[test]
    fn k_too_large_is_an_argument_error() {
        let x = matrix(&[&[0.0], &[1.0]]);
        let err = knn_distances(&x, 2, false, Backend::BruteForce, 1).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn vptree_matches_brute_force_exactly() {
        for seed in 0..5u64 {
            let x = random_matrix(200, 8, seed);
            let brute = knn_distances(&x, 7, false, Backend::BruteForce, 1).unwrap();
            let tree = knn_distances(&x, 7, false, Backend::VpTree, 2).unwrap();
            assert_eq!(brute.table, tree.table, "seed {seed}");
        }
    }

    #[test]
    fn vptree_matches_brute_force_with_grid_ties() {
        // Integer grid data produces many exactly tied distances.
        let mut values = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                values.push(i as f64);
                values.push(j as f64);
            }
        }
        let x = DataMatrix::new(36, 2, values).unwrap();
        let brute = knn_distances(&x, 5, false, Backend::BruteForce, 1).unwrap();
        let tree = knn_distances(&x, 5, false, Backend::VpTree, 1).unwrap();
        assert_eq!(brute.table, tree.table);
    }

    #[test]
    fn rows_are_sorted_and_self_free() {
        let x = random_matrix(64, 4, 9);
        let out = knn_distances(&x, 6, false, Backend::VpTree, 1).unwrap();
        for i in 0..out.table.n() {
            let d = out.table.row_distances(i);
            for w in d.windows(2) {
                assert!(w[0] <= w[1]);
            }
            assert!(!out.table.row_indices(i).contains(&i));
        }
    }

    #[test]
    fn permuting_rows_permutes_outputs() {
        let x = random_matrix(50, 3, 21);
        let out = knn_distances(&x, 4, false, Backend::BruteForce, 1).unwrap();
        // reverse-order permutation
        let perm: Vec<usize> = (0..50).rev().collect();
        let xp = x.select_rows(&perm);
        let outp = knn_distances(&xp, 4, false, Backend::BruteForce, 1).unwrap();
        for i in 0..50 {
            let pi = 49 - i; // position of original row i in xp
            assert_eq!(out.table.row_distances(i), outp.table.row_distances(pi));
            let mapped: Vec<usize> =
                outp.table.row_indices(pi).iter().map(|&j| 49 - j).collect();
            assert_eq!(out.table.row_indices(i), &mapped[..]);
        }
    }

    #[test]
    fn nn_distance_hand_cases() {
        let q = matrix(&[&[0.0, 0.0]]);
        let r = matrix(&[&[3.0, 4.0]]);
        let d = nn_distance_to_set(&q, &r, 1).unwrap();
        assert_eq!(d, vec![5.0]);

        let q2 = matrix(&[&[3.0, 4.0], &[0.0, 1.0]]);
        let d2 = nn_distance_to_set(&q2, &r, 1).unwrap();
        assert_eq!(d2[0], 0.0);
    }

    #[test]
    fn nn_distance_matches_full_scan() {
        let q = random_matrix(80, 5, 2);
        let r = random_matrix(120, 5, 3);
        let fast = nn_distance_to_set(&q, &r, 3).unwrap();
        for i in 0..q.n() {
            let mut best = f64::INFINITY;
            for j in 0..r.n() {
                best = best.min(sq_dist(q.row(i), r.row(j)));
            }
            assert_eq!(fast[i], best.sqrt(), "query {i}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let q = matrix(&[&[0.0, 0.0]]);
        let r = matrix(&[&[1.0]]);
        assert!(matches!(
            nn_distance_to_set(&q, &r, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn empty_reference_set_is_rejected() {
        let q = matrix(&[&[0.0, 0.0]]);
        let r = DataMatrix::<f64>::new(0, 2, vec![]).unwrap();
        assert!(matches!(
            nn_distance_to_set(&q, &r, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn vptree_matches_brute_force_on_collinear_ties() {
        // Integer points on a line: every triangle inequality is exactly
        // tight and symmetric neighbours tie in distance, so tie-breaking
        // and prune bounds are maximally stressed.
        let values: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let x = DataMatrix::new(60, 1, values).unwrap();
        for k in [1usize, 2, 5, 11] {
            let brute = knn_distances(&x, k, false, Backend::BruteForce, 1).unwrap();
            let tree = knn_distances(&x, k, false, Backend::VpTree, 1).unwrap();
            assert_eq!(brute.table, tree.table, "k = {k}");
        }
    }

    #[test]
    fn vptree_matches_brute_force_on_manifold_data() {
        // Low-dimensional structure in a wider ambient space, the regime
        // the index is actually used in.
        let (x, _) = crate::synth::gen_affine_manifold(1500, 3, 16, 31, 0.0).unwrap();
        let brute = knn_distances(&x, 10, true, Backend::BruteForce, 2).unwrap();
        let tree = knn_distances(&x, 10, true, Backend::VpTree, 2).unwrap();
        assert_eq!(brute.table, tree.table);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let x = random_matrix(150, 6, 5);
        let a = knn_distances(&x, 5, false, Backend::VpTree, 1).unwrap();
        let b = knn_distances(&x, 5, false, Backend::VpTree, 7).unwrap();
        assert_eq!(a.table, b.table);
    }
}
