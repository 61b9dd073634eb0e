//! Clustered pushforward models.
//!
//! Training partitions the dataset, fits one two-step model per cluster
//! sequentially, and persists each model before starting the next, so at
//! most one per-cluster model is resident at a time. The trained object is
//! a mixture whose weights are exactly |cluster| / n.
//!
//! Sampling first draws per-cluster counts (m_1, ..., m_L) — a multinomial
//! over the mixture weights realized as m inverse-CDF categorical draws —
//! then loads each needed model once, emits its samples, and releases it.
//! Per-cluster randomness comes from the stream split rule, so results do
//! not depend on which clusters happen to be loaded.
//!
//! On disk a model is a bundle directory: `manifest.json` plus one
//! `cluster_###.params` blob per cluster. Loading a bundle reads only the
//! manifest; parameters are pulled in lazily per cluster.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{split_by_group, DataMatrix, GroupIndex};
use crate::error::{Error, Result};
use crate::idest::{latent_dim_from_estimate, per_group_id, Variant};
use crate::knn::Backend;
use crate::parallel::par_map;
use crate::rng::Rng;
use crate::twostep::{
    checksum_hex, fit_two_step, load_model_from_parts, params_to_blob, sample as sample_model,
    BaseKind, DecoderKind, ModelManifest, PushforwardModel, FORMAT_VERSION,
};

/// How per-cluster latent dimensions are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimsMode {
    /// Estimate each cluster's intrinsic dimension and round up.
    Auto,
    /// One pooled whole-dataset estimate shared by every cluster.
    Constant,
    /// Caller-provided dimensions: one per cluster, or a single value
    /// broadcast to all clusters.
    Explicit(Vec<usize>),
}

/// Knobs for [`train_clustered`].
#[derive(Debug, Clone)]
pub struct ClusteredConfig {
    pub seed: u64,
    pub base_kind: BaseKind,
    pub decoder_kind: DecoderKind,
    /// Neighbourhood size for auto/constant dimension estimation.
    pub id_k: usize,
    pub id_variant: Variant,
    pub knn_backend: Backend,
    pub threads: usize,
    /// Opt-in concurrent per-cluster training. Results are identical to the
    /// sequential loop because sub-seeds are cluster-indexed, but the
    /// one-resident-model memory contract no longer holds.
    pub parallel_clusters: bool,
}

impl Default for ClusteredConfig {
    fn default() -> Self {
        ClusteredConfig {
            seed: 0,
            base_kind: BaseKind::Gaussian,
            decoder_kind: DecoderKind::Affine,
            id_k: 20,
            id_variant: Variant::KMinus1,
            knn_backend: Backend::VpTree,
            threads: 1,
            parallel_clusters: false,
        }
    }
}

/// Counts per-cluster models alive in memory; `peak` is the high-water mark
/// the memory contract is asserted against.
#[derive(Debug, Default)]
pub struct ResidentGauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl ResidentGauge {
    fn acquire(&self) -> ResidentGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        ResidentGuard { gauge: self }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

struct ResidentGuard<'a> {
    gauge: &'a ResidentGauge,
}

impl Drop for ResidentGuard<'_> {
    fn drop(&mut self) {
        self.gauge.current.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Bundle manifest: the single source of truth for weights and dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: u32,
    pub clusters: usize,
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    /// Mixture weights, exactly sizes[l] / sum(sizes).
    pub weights: Vec<f64>,
    pub files: Vec<String>,
    pub models: Vec<ModelManifest>,
}

impl BundleManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported bundle format {} (expected {FORMAT_VERSION})",
                self.format
            )));
        }
        let l = self.clusters;
        if l == 0 {
            return Err(Error::Validation("bundle has no clusters".into()));
        }
        if self.sizes.len() != l
            || self.dims.len() != l
            || self.weights.len() != l
            || self.files.len() != l
            || self.models.len() != l
        {
            return Err(Error::Validation("bundle manifest arrays disagree on L".into()));
        }
        if self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::Validation("bundle has an empty cluster".into()));
        }
        let total: usize = self.sizes.iter().sum();
        for (i, (&s, &w)) in self.sizes.iter().zip(&self.weights).enumerate() {
            let expect = s as f64 / total as f64;
            if w != expect {
                return Err(Error::Validation(format!(
                    "weight of cluster {i} is {w}, but sizes give {expect}"
                )));
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("bundle weights sum to {sum}")));
        }
        Ok(())
    }
}

/// A clustered model, backed by its bundle directory. Per-cluster
/// parameters stay on disk until sampled.
#[derive(Debug, Clone)]
pub struct ClusteredModel {
    dir: PathBuf,
    manifest: BundleManifest,
}

impl ClusteredModel {
    pub fn manifest(&self) -> &BundleManifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn mixture_weights(&self) -> &[f64] {
        &self.manifest.weights
    }

    /// Load one cluster's model from disk, verifying its checksum.
    pub fn load_cluster(&self, index: usize) -> Result<PushforwardModel> {
        let file = self.dir.join(&self.manifest.files[index]);
        let blob = std::fs::read(&file).map_err(|_| Error::MissingCluster {
            index,
            path: file.display().to_string(),
        })?;
        load_model_from_parts(&self.manifest.models[index], &blob)
    }
}

/// Report of a clustered training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub weights: Vec<f64>,
    /// Per-cluster reconstruction error from the first step.
    pub reconstruction_errors: Vec<f64>,
    pub peak_resident_models: usize,
}

fn cluster_file_name(index: usize) -> String {
    format!("cluster_{index:03}.params")
}

/// Train one two-step model per cluster and persist the bundle to `dir`.
pub fn train_clustered<SM: crate::scalar::Scalar>(
    x: &DataMatrix<SM>,
    groups: &GroupIndex,
    dims: &DimsMode,
    cfg: &ClusteredConfig,
    dir: &Path,
) -> Result<(ClusteredModel, TrainReport)> {
    let l = groups.n_groups();
    let resolved_dims = resolve_dims(x, groups, dims, cfg)?;
    let parts = split_by_group(x, groups)?;
    std::fs::create_dir_all(dir)?;

    let gauge = ResidentGauge::default();
    let fit_one = |li: usize| -> Result<(ModelManifest, Vec<u8>, f64)> {
        let sub_seed = Rng::substream_seed(cfg.seed, li as u64);
        let part = parts[li].widen();
        let _guard = gauge.acquire();
        let model = fit_two_step(&part, resolved_dims[li], cfg.base_kind, &cfg.decoder_kind, sub_seed)
            .map_err(|e| Error::Cluster { index: li, source: Box::new(e) })?;
        let blob = params_to_blob(&model.collect_params());
        let manifest = model.manifest();
        Ok((manifest, blob, model.meta.reconstruction_error))
    };

    let fitted: Vec<Result<(ModelManifest, Vec<u8>, f64)>> = if cfg.parallel_clusters {
        par_map(l, cfg.threads, fit_one)
    } else {
        let mut out = Vec::with_capacity(l);
        for li in 0..l {
            let result = fit_one(li);
            if let Ok((manifest, blob, _)) = &result {
                // Persist before moving on; the blob is all that survives.
                std::fs::write(dir.join(cluster_file_name(li)), blob)?;
                debug_assert_eq!(manifest.checksum, checksum_hex(blob));
            }
            out.push(result);
        }
        out
    };

    let mut models = Vec::with_capacity(l);
    let mut files = Vec::with_capacity(l);
    let mut recon = Vec::with_capacity(l);
    for (li, r) in fitted.into_iter().enumerate() {
        let (manifest, blob, err) = r?;
        if cfg.parallel_clusters {
            std::fs::write(dir.join(cluster_file_name(li)), &blob)?;
        }
        files.push(cluster_file_name(li));
        models.push(manifest);
        recon.push(err);
    }

    let total: usize = groups.sizes().iter().sum();
    let weights: Vec<f64> = groups.sizes().iter().map(|&s| s as f64 / total as f64).collect();
    let manifest = BundleManifest {
        format: FORMAT_VERSION,
        clusters: l,
        sizes: groups.sizes().to_vec(),
        dims: resolved_dims.clone(),
        weights: weights.clone(),
        files,
        models,
    };
    manifest.validate()?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let report = TrainReport {
        dims: resolved_dims,
        sizes: groups.sizes().to_vec(),
        weights,
        reconstruction_errors: recon,
        peak_resident_models: gauge.peak(),
    };
    Ok((ClusteredModel { dir: dir.to_path_buf(), manifest }, report))
}

fn resolve_dims<SM: crate::scalar::Scalar>(
    x: &DataMatrix<SM>,
    groups: &GroupIndex,
    dims: &DimsMode,
    cfg: &ClusteredConfig,
) -> Result<Vec<usize>> {
    let l = groups.n_groups();
    match dims {
        DimsMode::Explicit(list) if list.len() == 1 => Ok(vec![list[0]; l]),
        DimsMode::Explicit(list) => {
            if list.len() != l {
                return Err(Error::Argument(format!(
                    "got {} dimensions for {l} clusters",
                    list.len()
                )));
            }
            Ok(list.clone())
        }
        DimsMode::Auto | DimsMode::Constant => {
            let report = per_group_id(
                x,
                groups,
                &[cfg.id_k],
                cfg.id_variant,
                cfg.knn_backend,
                cfg.threads,
            )?;
            if matches!(dims, DimsMode::Constant) {
                let pooled = report.pooled[0].estimate().ok_or_else(|| {
                    Error::Argument(format!(
                        "pooled dataset too small to estimate dimension at k = {}",
                        cfg.id_k
                    ))
                })?;
                return Ok(vec![latent_dim_from_estimate(&pooled); l]);
            }
            (0..l)
                .map(|g| {
                    report.cells[g][0]
                        .estimate()
                        .map(|e| latent_dim_from_estimate(&e))
                        .ok_or_else(|| {
                            Error::Argument(format!(
                                "cluster {g} is too small to estimate dimension at k = {}",
                                cfg.id_k
                            ))
                        })
                })
                .collect()
        }
    }
}

/// Report of a sampling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleReport {
    pub counts: Vec<usize>,
    pub peak_resident_models: usize,
}

/// Draw m samples from the mixture. Output rows are grouped by source
/// cluster (ascending) and labeled with it.
pub fn sample_clustered(
    model: &ClusteredModel,
    m: usize,
    seed: u64,
) -> Result<(DataMatrix<f64>, SampleReport)> {
    if m < 1 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let manifest = &model.manifest;
    manifest.validate()?;
    let l = manifest.clusters;

    // Multinomial counts as m categorical draws on the master stream.
    let mut rng = Rng::new(seed);
    let mut counts = vec![0usize; l];
    for _ in 0..m {
        counts[rng.next_categorical(&manifest.weights)] += 1;
    }

    let gauge = ResidentGauge::default();
    let ambient = manifest.models[0].ambient;
    let mut values = Vec::with_capacity(m * ambient);
    let mut labels = Vec::with_capacity(m);
    for (li, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let _guard = gauge.acquire();
        let cluster_model = model.load_cluster(li)?;
        let sub_seed = Rng::substream_seed(seed, li as u64);
        let draws = sample_model(&cluster_model, count, sub_seed)?;
        values.extend_from_slice(draws.values());
        labels.extend(std::iter::repeat(li).take(count));
    }
    let out = DataMatrix::new(m, ambient, values)?.with_labels(labels)?;
    Ok((out, SampleReport { counts, peak_resident_models: gauge.peak() }))
}

/// Copy a bundle to `dir`, verifying per-cluster checksums on the way.
pub fn save_bundle(model: &ClusteredModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (li, file) in model.manifest.files.iter().enumerate() {
        let blob = std::fs::read(model.dir.join(file)).map_err(|_| Error::MissingCluster {
            index: li,
            path: model.dir.join(file).display().to_string(),
        })?;
        let found = checksum_hex(&blob);
        if found != model.manifest.models[li].checksum {
            return Err(Error::Integrity(format!(
                "cluster {li} blob hashes to {found}, manifest says {}",
                model.manifest.models[li].checksum
            )));
        }
        std::fs::write(dir.join(file), &blob)?;
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&model.manifest)?,
    )?;
    Ok(())
}

/// Open a bundle by reading its manifest only; cluster parameters are
/// loaded on demand by sampling.
pub fn load_bundle(dir: &Path) -> Result<ClusteredModel> {
    let manifest: BundleManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest.validate()?;
    Ok(ClusteredModel { dir: dir.to_path_buf(), manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn blob_data(n: usize, dim: usize, seed: u64) -> DataMatrix<f64> {
        let mut rng = Rng::new(seed);
        let values = (0..n * dim).map(|_| rng.next_normal()).collect();
        DataMatrix::new(n, dim, values).unwrap()
    }

    fn two_blob_data(n_each: usize, dim: usize, seed: u64, offset: f64) -> DataMatrix<f64> {
        let mut rng = Rng::new(seed);
        let mut values = Vec::with_capacity(2 * n_each * dim);
        for _ in 0..n_each * dim {
            values.push(rng.next_normal());
        }
        for _ in 0..n_each * dim {
            values.push(offset + rng.next_normal());
        }
        let labels = (0..2 * n_each).map(|i| usize::from(i >= n_each)).collect();
        DataMatrix::new(2 * n_each, dim, values)
            .unwrap()
            .with_labels(labels)
            .unwrap()
    }

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "stratum-clustered-{name}-{}",
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn single_cluster_matches_plain_two_step() {
        let x = blob_data(150, 4, 3);
        let groups = GroupIndex::from_assignment(vec![0; 150], 1).unwrap();
        let dir = tmp("single");
        let cfg = ClusteredConfig { seed: 17, ..ClusteredConfig::default() };
        let (model, report) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![2]), &cfg, &dir).unwrap();
        assert_eq!(report.dims, vec![2]);
        assert_eq!(report.peak_resident_models, 1);

        let direct = fit_two_step(
            &x,
            2,
            cfg.base_kind,
            &cfg.decoder_kind,
            Rng::substream_seed(17, 0),
        )
        .unwrap();
        let loaded = model.load_cluster(0).unwrap();
        let expect: Vec<f64> =
            direct.collect_params().iter().map(|&p| p as f32 as f64).collect();
        assert_eq!(loaded.collect_params(), expect);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mixture_weights_are_exact_size_ratios() {
        let x = blob_data(5, 2, 1)
            .with_labels(vec![0, 0, 1, 1, 1])
            .unwrap();
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let dir = tmp("weights");
        let cfg = ClusteredConfig::default();
        let (model, _) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![1]), &cfg, &dir).unwrap();
        assert_eq!(model.mixture_weights(), &[0.4, 0.6]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sampling_is_deterministic_and_labeled() {
        let x = two_blob_data(60, 3, 5, 50.0);
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let dir = tmp("sample");
        let cfg = ClusteredConfig { seed: 9, ..ClusteredConfig::default() };
        let (model, _) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![2]), &cfg, &dir).unwrap();
        let (a, ra) = sample_clustered(&model, 500, 31).unwrap();
        let (b, rb) = sample_clustered(&model, 500, 31).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(ra.counts, rb.counts);
        assert_eq!(ra.counts.iter().sum::<usize>(), 500);
        assert_eq!(ra.peak_resident_models, 1);
        // labels sorted ascending by construction
        let labels = a.labels().unwrap();
        assert!(labels.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), ra.counts[0]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bundle_roundtrip_preserves_samples() {
        let x = two_blob_data(50, 2, 7, 30.0);
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let dir = tmp("roundtrip");
        let cfg = ClusteredConfig { seed: 4, ..ClusteredConfig::default() };
        let (model, _) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![1]), &cfg, &dir).unwrap();
        let (before, _) = sample_clustered(&model, 200, 11).unwrap();

        let dir2 = tmp("roundtrip-copy");
        save_bundle(&model, &dir2).unwrap();
        let loaded = load_bundle(&dir2).unwrap();
        let (after, _) = sample_clustered(&loaded, 200, 11).unwrap();
        assert_eq!(before.values(), after.values());
        assert_eq!(before.labels(), after.labels());
        std::fs::remove_dir_all(&dir).ok();
        std::fs::remove_dir_all(&dir2).ok();
    }

    #[test]
    fn missing_cluster_file_fails_only_when_drawn() {
        let x = two_blob_data(40, 2, 2, 40.0);
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let dir = tmp("lazy");
        let cfg = ClusteredConfig { seed: 2, ..ClusteredConfig::default() };
        let (_model, _) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![1]), &cfg, &dir).unwrap();
        std::fs::remove_file(dir.join("cluster_001.params")).unwrap();

        // loading the bundle still works: only the manifest is read
        let loaded = load_bundle(&dir).unwrap();
        // a large draw will hit cluster 1 and fail, naming it
        let err = sample_clustered(&loaded, 200, 3).unwrap_err();
        assert!(matches!(err, Error::MissingCluster { index: 1, .. }), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tampered_weights_are_rejected_on_load() {
        let x = two_blob_data(30, 2, 8, 25.0);
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let dir = tmp("tamper");
        let cfg = ClusteredConfig::default();
        train_clustered(&x, &groups, &DimsMode::Explicit(vec![1]), &cfg, &dir).unwrap();
        let p = dir.join("manifest.json");
        let mut manifest: BundleManifest =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        manifest.weights[0] = 0.7;
        manifest.weights[1] = 0.3;
        std::fs::write(&p, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
        let err = load_bundle(&dir).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn cluster_too_small_for_latent_dim_names_the_cluster() {
        let x = blob_data(10, 3, 6).with_labels(vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1]).unwrap();
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let dir = tmp("toosmall");
        let cfg = ClusteredConfig::default();
        let err = train_clustered(&x, &groups, &DimsMode::Explicit(vec![3]), &cfg, &dir)
            .unwrap_err();
        assert!(matches!(err, Error::Cluster { index: 1, .. }), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn parallel_training_matches_sequential() {
        let x = two_blob_data(40, 3, 12, 60.0);
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let cfg_seq = ClusteredConfig { seed: 5, ..ClusteredConfig::default() };
        let cfg_par = ClusteredConfig {
            seed: 5,
            parallel_clusters: true,
            threads: 4,
            ..ClusteredConfig::default()
        };
        let d1 = tmp("seq");
        let d2 = tmp("par");
        let (m1, _) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![2]), &cfg_seq, &d1).unwrap();
        let (m2, _) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![2]), &cfg_par, &d2).unwrap();
        for li in 0..2 {
            assert_eq!(
                m1.load_cluster(li).unwrap().collect_params(),
                m2.load_cluster(li).unwrap().collect_params()
            );
        }
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
    }

    #[test]
    fn auto_dims_equal_ceil_of_per_group_estimates() {
        use crate::idest::{latent_dim_from_estimate, per_group_id};
        let (a, ta) = crate::synth::gen_affine_manifold(600, 2, 16, 41, 0.0).unwrap();
        let (b, tb) = crate::synth::gen_affine_manifold(500, 5, 16, 42, 0.0).unwrap();
        let (union, _) = crate::synth::compose_union(&[(a, ta), (b, tb)], 8.0, 43).unwrap();
        let groups = GroupIndex::from_labels(union.labels().unwrap()).unwrap();
        let cfg = ClusteredConfig { seed: 3, ..ClusteredConfig::default() };
        let dir = tmp("autodims");
        let (_, report) = train_clustered(&union, &groups, &DimsMode::Auto, &cfg, &dir).unwrap();

        let id = per_group_id(&union, &groups, &[cfg.id_k], cfg.id_variant, cfg.knn_backend, 1)
            .unwrap();
        for g in 0..2 {
            let expect = latent_dim_from_estimate(&id.cells[g][0].estimate().unwrap());
            assert_eq!(report.dims[g], expect, "group {g}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn multinomial_counts_match_weights_statistically() {
        // counts [2, 3] -> weights [0.4, 0.6]; large-m draw stays close
        let x = blob_data(5, 2, 1).with_labels(vec![0, 0, 1, 1, 1]).unwrap();
        let groups = GroupIndex::from_labels(x.labels().unwrap()).unwrap();
        let dir = tmp("multinomial");
        let cfg = ClusteredConfig::default();
        let (model, _) =
            train_clustered(&x, &groups, &DimsMode::Explicit(vec![1]), &cfg, &dir).unwrap();
        let (_, report) = sample_clustered(&model, 100_000, 77).unwrap();
        let p0 = report.counts[0] as f64 / 100_000.0;
        assert!((p0 - 0.4).abs() < 0.01, "p0 {p0}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
