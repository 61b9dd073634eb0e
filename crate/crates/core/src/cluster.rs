//! Unsupervised partitioning into L clusters.
//!
//! Two algorithms:
//!
//! * agglomerative clustering under Ward's criterion, where the cost of
//!   merging clusters A and B is the within-cluster sum-of-squares increase
//!
//!   ```text
//!   cost(A, B) = |A||B| / (|A| + |B|) * ||mean_A - mean_B||^2
//!   ```
//!
//!   maintained across merges with the Lance-Williams recurrence; and
//!
//! * k-means++ seeding followed by Lloyd iterations.
//!
//! Ward is fully deterministic: the merged pair is the global cost minimum,
//! with exact ties broken by the lexicographically smallest pair of cluster
//! creation ids (initial clusters are 0..n-1, the cluster born at step s is
//! n+s). Note the pair-cost bookkeeping is quadratic in memory.

use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, GroupIndex};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// One merge in the agglomeration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub step: usize,
    /// Creation ids of the merged pair, left < right.
    pub left_id: usize,
    pub right_id: usize,
    pub cost: f64,
    pub new_size: usize,
}

/// Merge log of an agglomerative run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dendrogram {
    pub steps: Vec<MergeStep>,
}

impl Dendrogram {
    /// CSV dump: `step, left_id, right_id, cost, new_size`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,left_id,right_id,cost,new_size\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.step, s.left_id, s.right_id, s.cost, s.new_size
            ));
        }
        out
    }
}

/// Agglomerate from singletons down to `l_target` clusters.
pub fn ward_agglomerative<S: Scalar>(
    x: &DataMatrix<S>,
    l_target: usize,
) -> Result<(GroupIndex, Dendrogram)> {
    let n = x.n();
    if l_target < 1 || l_target > n {
        return Err(Error::Argument(format!(
            "target cluster count {l_target} must be in 1..={n}"
        )));
    }

    // Slot state; a merge keeps the lower slot and frees the higher one.
    let mut active: Vec<bool> = vec![true; n];
    let mut creation_id: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    // Condensed pair-cost matrix over slots, i < j.
    let pair_index = |i: usize, j: usize| -> usize {
        debug_assert!(i < j);
        i * n - i * (i + 1) / 2 + (j - i - 1)
    };
    let mut cost = vec![0.0f64; n * (n - 1) / 2];
    for i in 0..n {
        let ri = x.row(i);
        for j in (i + 1)..n {
            let rj = x.row(j);
            let mut d2 = 0.0f64;
            for (a, b) in ri.iter().zip(rj) {
                let d = a.widen() - b.widen();
                d2 += d * d;
            }
            cost[pair_index(i, j)] = 0.5 * d2;
        }
    }

    // Per-slot best partner, kept exact under merges.
    #[derive(Clone, Copy)]
    struct Candidate {
        cost: f64,
        ids: (usize, usize),
        other: usize,
    }
    let key = |c: f64, id_a: usize, id_b: usize| -> (f64, usize, usize) {
        let (lo, hi) = if id_a < id_b { (id_a, id_b) } else { (id_b, id_a) };
        (c, lo, hi)
    };
    let better = |a: (f64, usize, usize), b: (f64, usize, usize)| -> bool {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .is_lt()
    };

    let scan_candidate = |slot: usize,
                          active: &[bool],
                          creation_id: &[usize],
                          cost: &[f64]|
     -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for other in 0..n {
            if other == slot || !active[other] {
                continue;
            }
            let (i, j) = if slot < other { (slot, other) } else { (other, slot) };
            let c = cost[pair_index(i, j)];
            let k = key(c, creation_id[slot], creation_id[other]);
            if best.is_none()
                || better(k, key(best.unwrap().cost, best.unwrap().ids.0, best.unwrap().ids.1))
            {
                best = Some(Candidate { cost: c, ids: (k.1, k.2), other });
            }
        }
        best
    };

    let mut candidate: Vec<Option<Candidate>> = (0..n)
        .map(|s| scan_candidate(s, &active, &creation_id, &cost))
        .collect();

    let mut dendrogram = Dendrogram::default();
    let mut n_active = n;
    let mut step = 0usize;
    while n_active > l_target {
        // Global minimum over per-slot candidates.
        let mut best_slot = None;
        for s in 0..n {
            if !active[s] {
                continue;
            }
            let cand = candidate[s].expect("active slot has a candidate");
            let k = key(cand.cost, cand.ids.0, cand.ids.1);
            match best_slot {
                None => best_slot = Some((s, k)),
                Some((_, bk)) if better(k, bk) => best_slot = Some((s, k)),
                _ => {}
            }
        }
        let (slot, (merge_cost, id_lo, id_hi)) = best_slot.expect("n_active > 1");
        let other = candidate[slot].unwrap().other;
        let (a, b) = if slot < other { (slot, other) } else { (other, slot) };

        // Lance-Williams update of every surviving pair cost against the
        // merged cluster, which takes over slot `a`.
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        let dab = cost[pair_index(a, b)];
        for e in 0..n {
            if e == a || e == b || !active[e] {
                continue;
            }
            let se = size[e] as f64;
            let dae = cost[pair_index(a.min(e), a.max(e))];
            let dbe = cost[pair_index(b.min(e), b.max(e))];
            let total = sa + sb + se;
            let updated = ((sa + se) * dae + (sb + se) * dbe - se * dab) / total;
            cost[pair_index(a.min(e), a.max(e))] = updated;
        }

        let new_id = n + step;
        dendrogram.steps.push(MergeStep {
            step,
            left_id: id_lo,
            right_id: id_hi,
            cost: merge_cost,
            new_size: size[a] + size[b],
        });

        active[b] = false;
        size[a] += size[b];
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        creation_id[a] = new_id;
        n_active -= 1;
        step += 1;
        if n_active <= l_target {
            break;
        }

        // Refresh candidates: slots that pointed at a or b rescan; everyone
        // else can only be improved by the new cluster in slot a.
        candidate[a] = scan_candidate(a, &active, &creation_id, &cost);
        for e in 0..n {
            if e == a || !active[e] {
                continue;
            }
            let stale = matches!(candidate[e], Some(c) if c.other == a || c.other == b);
            if stale {
                candidate[e] = scan_candidate(e, &active, &creation_id, &cost);
            } else {
                let c = cost[pair_index(a.min(e), a.max(e))];
                let k = key(c, creation_id[a], creation_id[e]);
                let cur = candidate[e].expect("active slot has a candidate");
                if better(k, key(cur.cost, cur.ids.0, cur.ids.1)) {
                    candidate[e] = Some(Candidate { cost: c, ids: (k.1, k.2), other: a });
                }
            }
        }
    }

    // Final clusters numbered by ascending creation id.
    let mut finals: Vec<usize> = (0..n).filter(|&s| active[s]).collect();
    finals.sort_by_key(|&s| creation_id[s]);
    let mut assignment = vec![0usize; n];
    for (g, &s) in finals.iter().enumerate() {
        for &p in &members[s] {
            assignment[p] = g;
        }
    }
    let groups = GroupIndex::from_assignment(assignment, l_target)?;
    Ok((groups, dendrogram))
}

/// Result of a k-means run.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub groups: GroupIndex,
    /// L x D centroids, row-major.
    pub centroids: Vec<f64>,
    pub iterations: usize,
    /// Empty clusters reseeded to the farthest point, with the iteration
    /// at which each event happened.
    pub reseed_events: Vec<usize>,
}

pub const LLOYD_ITERATION_CAP: usize = 300;

/// k-means++ seeding (squared-distance weighted) plus Lloyd iterations to an
/// assignment fixpoint or the iteration cap.
pub fn kmeanspp<S: Scalar>(
    x: &DataMatrix<S>,
    l: usize,
    seed: u64,
    threads: usize,
) -> Result<KmeansResult> {
    let n = x.n();
    if l < 1 || l > n {
        return Err(Error::Argument(format!("cluster count {l} must be in 1..={n}")));
    }
    let dim = x.dim();
    let mut rng = Rng::new(seed);

    // Seeding.
    let mut centroids: Vec<f64> = Vec::with_capacity(l * dim);
    let first = rng.next_index(n);
    centroids.extend(x.row(first).iter().map(|v| v.widen()));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist_to(x.row(i), &centroids[0..dim]))
        .collect();
    for _ in 1..l {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            rng.next_categorical(&d2)
        } else {
            rng.next_index(n)
        };
        let base = centroids.len();
        centroids.extend(x.row(pick).iter().map(|v| v.widen()));
        for i in 0..n {
            let nd = sq_dist_to(x.row(i), &centroids[base..base + dim]);
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }

    // Lloyd.
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut iterations = 0usize;
    let mut reseed_events = Vec::new();
    loop {
        let next: Vec<usize> = par_map(n, threads, |i| {
            let row = x.row(i);
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..l {
                let d = sq_dist_to(row, &centroids[c * dim..(c + 1) * dim]);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        });
        let converged = next == assignment;
        assignment = next;
        if converged || iterations >= LLOYD_ITERATION_CAP {
            break;
        }
        iterations += 1;

        // Mean update, accumulated in row order.
        let mut sums = vec![0.0f64; l * dim];
        let mut counts = vec![0usize; l];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x.row(i)) {
                *s += v.widen();
            }
        }
        for c in 0..l {
            if counts[c] == 0 {
                // Reseed to the point farthest from its assigned centroid.
                let far = (0..n)
                    .map(|i| {
                        let a = assignment[i];
                        (sq_dist_to(x.row(i), &centroids[a * dim..(a + 1) * dim]), i)
                    })
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .map(|(_, i)| i)
                    .unwrap();
                for (dst, v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(x.row(far)) {
                    *dst = v.widen();
                }
                reseed_events.push(iterations);
            } else {
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / counts[c] as f64;
                }
            }
        }
    }

    // Guard against empty clusters surviving to the fixpoint.
    let mut sizes = vec![0usize; l];
    for &a in &assignment {
        sizes[a] += 1;
    }
    for c in 0..l {
        if sizes[c] == 0 {
            // Assign the farthest point outright; keeps the partition valid.
            let far = (0..n)
                .filter(|&i| sizes[assignment[i]] > 1)
                .map(|i| {
                    let a = assignment[i];
                    (sq_dist_to(x.row(i), &centroids[a * dim..(a + 1) * dim]), i)
                })
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, i)| i)
                .expect("some cluster has more than one point");
            sizes[assignment[far]] -= 1;
            assignment[far] = c;
            sizes[c] += 1;
            reseed_events.push(iterations);
        }
    }

    let groups = GroupIndex::from_assignment(assignment, l)?;
    Ok(KmeansResult { groups, centroids, iterations, reseed_events })
}

#[inline]
fn sq_dist_to<S: Scalar>(row: &[S], centroid: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (v, c) in row.iter().zip(centroid) {
        let d = v.widen() - c;
        acc += d * d;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> DataMatrix<f64> {
        let dim = rows[0].len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DataMatrix::new(rows.len(), dim, values).unwrap()
    }

    /// Naive Ward: recompute every pair cost from raw points each step.
    /// Used as the oracle for the Lance-Williams implementation.
    pub(crate) fn ward_naive(x: &DataMatrix<f64>, l_target: usize) -> (GroupIndex, Dendrogram) {
        let n = x.n();
        let dim = x.dim();
        #[derive(Clone)]
        struct Cl {
            id: usize,
            members: Vec<usize>,
        }
        let mut clusters: Vec<Cl> = (0..n).map(|i| Cl { id: i, members: vec![i] }).collect();
        let mut dendrogram = Dendrogram::default();
        let mut step = 0usize;
        let centroid = |cl: &Cl| -> Vec<f64> {
            let mut c = vec![0.0; dim];
            for &m in &cl.members {
                for (dst, v) in c.iter_mut().zip(x.row(m)) {
                    *dst += v;
                }
            }
            for v in &mut c {
                *v /= cl.members.len() as f64;
            }
            c
        };
        while clusters.len() > l_target {
            let mut best: Option<(f64, usize, usize, usize, usize)> = None;
            for p in 0..clusters.len() {
                for q in (p + 1)..clusters.len() {
                    let (ca, cb) = (centroid(&clusters[p]), centroid(&clusters[q]));
                    let d2: f64 =
                        ca.iter().zip(&cb).map(|(a, b)| (a - b) * (a - b)).sum();
                    let (sa, sb) =
                        (clusters[p].members.len() as f64, clusters[q].members.len() as f64);
                    let cost = sa * sb / (sa + sb) * d2;
                    let (lo, hi) = if clusters[p].id < clusters[q].id {
                        (clusters[p].id, clusters[q].id)
                    } else {
                        (clusters[q].id, clusters[p].id)
                    };
                    let k = (cost, lo, hi);
                    let is_better = match best {
                        None => true,
                        Some((bc, blo, bhi, _, _)) => {
                            k.0.total_cmp(&bc).then(k.1.cmp(&blo)).then(k.2.cmp(&bhi)).is_lt()
                        }
                    };
                    if is_better {
                        best = Some((cost, lo, hi, p, q));
                    }
                }
            }
            let (cost, lo, hi, p, q) = best.unwrap();
            let removed = clusters.remove(q);
            clusters[p].members.extend(removed.members);
            clusters[p].id = n + step;
            dendrogram.steps.push(MergeStep {
                step,
                left_id: lo,
                right_id: hi,
                cost,
                new_size: clusters[p].members.len(),
            });
            step += 1;
        }
        clusters.sort_by_key(|c| c.id);
        let mut assignment = vec![0usize; n];
        for (g, cl) in clusters.iter().enumerate() {
            for &m in &cl.members {
                assignment[m] = g;
            }
        }
        (GroupIndex::from_assignment(assignment, l_target).unwrap(), dendrogram)
    }

    #[test]
    fn l_equals_n_means_no_merges() {
        let x = matrix(&[&[0.0], &[1.0], &[5.0]]);
        let (g, d) = ward_agglomerative(&x, 3).unwrap();
        assert!(d.steps.is_empty());
        assert_eq!(g.sizes(), &[1, 1, 1]);
    }

    #[test]
    fn hand_evaluated_first_merge_cost() {
        let x = matrix(&[&[0.0], &[1.0], &[10.0]]);
        let (g, d) = ward_agglomerative(&x, 2).unwrap();
        assert_eq!(d.steps.len(), 1);
        let s = &d.steps[0];
        assert_eq!((s.left_id, s.right_id), (0, 1));
        assert!((s.cost - 0.5).abs() < 1e-15);
        // clusters {0,1} and {10}
        assert_eq!(g.assignment()[0], g.assignment()[1]);
        assert_ne!(g.assignment()[0], g.assignment()[2]);
    }

    #[test]
    fn lance_williams_matches_naive_recompute() {
        for seed in 0..12u64 {
            let mut rng = Rng::new(1000 + seed);
            let n = 10 + (rng.next_u64() % 41) as usize; // 10..=50
            let dim = 1 + (rng.next_u64() % 4) as usize;
            let values: Vec<f64> = (0..n * dim).map(|_| rng.next_normal()).collect();
            let x = DataMatrix::new(n, dim, values).unwrap();
            let l = 1 + (rng.next_u64() % 3) as usize;
            let (ga, da) = ward_agglomerative(&x, l).unwrap();
            let (gb, db) = ward_naive(&x, l);
            assert_eq!(ga, gb, "seed {seed}");
            assert_eq!(da.steps.len(), db.steps.len());
            for (sa, sb) in da.steps.iter().zip(&db.steps) {
                assert_eq!((sa.left_id, sa.right_id), (sb.left_id, sb.right_id), "seed {seed}");
                assert_eq!(sa.new_size, sb.new_size);
                let tol = 1e-9 * sa.cost.abs().max(1e-12);
                assert!((sa.cost - sb.cost).abs() <= tol, "seed {seed}: {} vs {}", sa.cost, sb.cost);
            }
        }
    }

    #[test]
    fn each_chosen_cost_is_the_global_minimum() {
        // Replay the merge log and check every chosen cost against an
        // exhaustive enumeration of active pair costs from raw points.
        let mut rng = Rng::new(77);
        let n = 24;
        let values: Vec<f64> = (0..n * 2).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(n, 2, values).unwrap();
        let (_, d) = ward_agglomerative(&x, 1).unwrap();

        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        for s in &d.steps {
            let mut min_cost = f64::INFINITY;
            for p in 0..clusters.len() {
                for q in (p + 1)..clusters.len() {
                    min_cost = min_cost.min(pair_cost(&x, &clusters[p].1, &clusters[q].1));
                }
            }
            assert!(
                s.cost <= min_cost + 1e-9 * min_cost.abs().max(1.0),
                "step {}: chose {} but global min is {min_cost}",
                s.step,
                s.cost
            );
            let p = clusters.iter().position(|c| c.0 == s.left_id).unwrap();
            let q = clusters.iter().position(|c| c.0 == s.right_id).unwrap();
            let removed = clusters.remove(p.max(q));
            let kept = p.min(q);
            clusters[kept].1.extend(removed.1);
            clusters[kept].0 = n + s.step;
        }
    }

    fn pair_cost(x: &DataMatrix<f64>, a: &[usize], b: &[usize]) -> f64 {
        let dim = x.dim();
        let centroid = |m: &[usize]| -> Vec<f64> {
            let mut c = vec![0.0; dim];
            for &i in m {
                for (dst, v) in c.iter_mut().zip(x.row(i)) {
                    *dst += v;
                }
            }
            for v in &mut c {
                *v /= m.len() as f64;
            }
            c
        };
        let (ca, cb) = (centroid(a), centroid(b));
        let d2: f64 = ca.iter().zip(&cb).map(|(u, v)| (u - v) * (u - v)).sum();
        let (sa, sb) = (a.len() as f64, b.len() as f64);
        sa * sb / (sa + sb) * d2
    }

    #[test]
    fn ward_is_deterministic() {
        let mut rng = Rng::new(5);
        let values: Vec<f64> = (0..60 * 3).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(60, 3, values).unwrap();
        let a = ward_agglomerative(&x, 4).unwrap();
        let b = ward_agglomerative(&x, 4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn ward_rejects_bad_target() {
        let x = matrix(&[&[0.0], &[1.0]]);
        assert!(ward_agglomerative(&x, 0).is_err());
        assert!(ward_agglomerative(&x, 3).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let x = matrix(&[&[0.0, 0.0], &[2.0, 2.0], &[4.0, -2.0]]);
        let r = kmeanspp(&x, 1, 9, 1).unwrap();
        assert_eq!(r.groups.sizes(), &[3]);
        assert_eq!(r.centroids, vec![2.0, 0.0]);
    }

    #[test]
    fn kmeans_separates_far_blobs_under_any_seed() {
        // Two blobs separated by 100x their diameter.
        let mut values = Vec::new();
        let mut rng = Rng::new(3);
        for _ in 0..40 {
            values.push(rng.next_f64()); // blob at origin, diameter ~1
            values.push(rng.next_f64());
        }
        for _ in 0..40 {
            values.push(100.0 + rng.next_f64());
            values.push(100.0 + rng.next_f64());
        }
        let x = DataMatrix::new(80, 2, values).unwrap();
        for seed in 0..10u64 {
            let r = kmeanspp(&x, 2, seed, 1).unwrap();
            let a = r.groups.assignment();
            assert!(a[..40].iter().all(|&g| g == a[0]), "seed {seed}");
            assert!(a[40..].iter().all(|&g| g == a[40]), "seed {seed}");
            assert_ne!(a[0], a[40], "seed {seed}");
        }
    }

    #[test]
    fn kmeans_fixed_seed_is_reproducible_across_threads() {
        let mut rng = Rng::new(8);
        let values: Vec<f64> = (0..200 * 4).map(|_| rng.next_normal()).collect();
        let x = DataMatrix::new(200, 4, values).unwrap();
        let a = kmeanspp(&x, 5, 42, 1).unwrap();
        let b = kmeanspp(&x, 5, 42, 6).unwrap();
        assert_eq!(a.groups, b.groups);
        assert_eq!(a.centroids, b.centroids);
    }
}
