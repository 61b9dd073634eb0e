//! Subcommand front door for dataset generation, per-group intrinsic
//! dimension estimation, clustering, clustered-model training, sampling,
//! evaluation, and the canned experiments.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error. All randomness
//! flows from `--seed`; every run writes a `run.json` with the fully
//! resolved configuration into the output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use stratum_core::clustered::{sample_clustered, train_clustered, ClusteredConfig, DimsMode};
use stratum_core::data::{
    load_csv, load_labels_csv, load_raw, save_csv, save_labels_csv, save_raw, DataMatrix,
    GroupIndex,
};
use stratum_core::error::{Error, Result};
use stratum_core::eval::{bridge_mass, mmd2_unbiased, Bandwidth, Tau};
use stratum_core::idest::{per_group_id, Variant, DEFAULT_K_LIST};
use stratum_core::knn::{knn_distances, Backend};
use stratum_core::repro::{run_experiment, DEFAULT_SEED, EXPERIMENTS};
use stratum_core::synth::{compose_union, gen_affine_manifold, gen_pushforward_manifold};
use stratum_core::twostep::{BaseKind, DecoderKind, MlpConfig};
use stratum_core::weights::{
    id_weights, per_class_accuracy, train_softmax_weighted, ClassWeights, SoftmaxConfig,
};

mod config;
use config::{meta_block, portable, resolve_seed, resolve_threads, FileConfig, RunDir};

#[derive(Parser)]
#[command(
    name = "stratum",
    version,
    about = "Per-group intrinsic dimension estimation and clustered generative models",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Output directory for artifacts and run.json.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for all randomness in this run.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: STRATUM_THREADS or 1). Any value gives
    /// identical numeric output.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets with known intrinsic dimensions.
    Synth {
        #[command(flatten)]
        common: Common,
        /// affine | pushforward | union
        #[arg(long)]
        kind: String,
        /// Points per dataset (affine/pushforward kinds).
        #[arg(long)]
        n: Option<usize>,
        /// Manifold dimension (affine kind).
        #[arg(long)]
        dim: Option<usize>,
        /// Latent dimension of the generator network (pushforward kind).
        #[arg(long)]
        latent: Option<usize>,
        /// Latent coordinates left active; the rest are zeroed
        /// (pushforward kind).
        #[arg(long)]
        active: Option<usize>,
        /// Ambient dimension D.
        #[arg(long)]
        ambient: Option<usize>,
        /// Isotropic noise scale (affine kind).
        #[arg(long)]
        noise: Option<f64>,
        /// Union component, repeatable: "affine,n=5000,d=2" or
        /// "pushforward,n=5000,latent=20,active=3".
        #[arg(long = "component")]
        components: Vec<String>,
        /// Minimum inter-component distance (union kind).
        #[arg(long)]
        gap: Option<f64>,
        /// Output format: csv (default) or raw (f32 + JSON sidecar).
        #[arg(long)]
        format: Option<String>,
    },
    /// Estimate intrinsic dimension per group and pooled, over a k sweep.
    EstimateId {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Single-column CSV of labels; defaults to labels embedded in the
        /// input (raw sidecar), else one pooled group.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Comma-separated neighbourhood sizes.
        #[arg(long)]
        k: Option<String>,
        /// Estimator normalizer: k-1 (default) or k-2.
        #[arg(long)]
        variant: Option<String>,
        /// Nearest-neighbour backend: vptree (default) or brute.
        #[arg(long)]
        backend: Option<String>,
        /// Also dump the pooled neighbour table as CSV to this file name
        /// inside --out.
        #[arg(long)]
        dump_neighbors: Option<String>,
    },
    /// Partition a dataset into clusters.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// ward (default) or kmeans.
        #[arg(long)]
        algo: Option<String>,
        /// Number of clusters L.
        #[arg(long = "clusters", visible_alias = "l", visible_alias = "L")]
        clusters: Option<usize>,
    },
    /// Train a clustered pushforward model and persist the bundle.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Cluster source: labels | kmeans | ward | single (one
        /// non-clustered model) | path to an assignment CSV.
        #[arg(long)]
        clusters: Option<String>,
        /// Cluster count for kmeans/ward sources.
        #[arg(long)]
        l: Option<usize>,
        /// Latent dimensions: auto | constant | N | comma list per cluster.
        #[arg(long)]
        dims: Option<String>,
        /// Base density: gaussian (default) | gmm | gmm:K.
        #[arg(long)]
        base: Option<String>,
        /// Decoder: affine (default) | mlp.
        #[arg(long)]
        decoder: Option<String>,
        /// Neighbourhood size for auto/constant dimension estimation.
        #[arg(long)]
        id_k: Option<usize>,
        /// Estimator variant for dimension estimation.
        #[arg(long)]
        variant: Option<String>,
        /// MLP hidden widths, comma separated.
        #[arg(long)]
        mlp_widths: Option<String>,
        #[arg(long)]
        mlp_epochs: Option<usize>,
        #[arg(long)]
        mlp_lr: Option<f64>,
        #[arg(long)]
        mlp_batch: Option<usize>,
        /// Train clusters concurrently (more memory, same results).
        #[arg(long)]
        parallel_clusters: bool,
    },
    /// Draw samples from a trained bundle.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Bundle directory produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Number of samples.
        #[arg(long)]
        m: Option<usize>,
        /// Output format: csv (default) or raw.
        #[arg(long)]
        format: Option<String>,
    },
    /// Evaluate samples against a reference set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
        /// Reference/held-out set for the MMD comparison.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Compute the unbiased MMD^2 (default when --reference is given).
        #[arg(long)]
        mmd: bool,
        /// RBF bandwidth: median (default) or a positive number.
        #[arg(long)]
        bandwidth: Option<String>,
        /// Training set for the bridge-mass check.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Bridge-mass threshold: auto (default) or a non-negative number.
        #[arg(long)]
        tau: Option<String>,
    },
    /// Per-class dimension estimates and the matching loss weights.
    Weights {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        id_k: Option<usize>,
        #[arg(long)]
        variant: Option<String>,
        /// Also train weighted and standard softmax classifiers and report
        /// per-class accuracy for both.
        #[arg(long)]
        train_classifier: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Run a canned experiment: uom-verify | prop1 | varying-dims |
    /// weighted-ce | all.
    Repro {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        experiment: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            common,
            kind,
            n,
            dim,
            latent,
            active,
            ambient,
            noise,
            components,
            gap,
            format,
        } => cmd_synth(common, kind, n, dim, latent, active, ambient, noise, components, gap, format),
        Command::EstimateId { common, input, labels, k, variant, backend, dump_neighbors } => {
            cmd_estimate_id(common, input, labels, k, variant, backend, dump_neighbors)
        }
        Command::Cluster { common, input, algo, clusters } => {
            cmd_cluster(common, input, algo, clusters)
        }
        Command::Train {
            common,
            input,
            labels,
            clusters,
            l,
            dims,
            base,
            decoder,
            id_k,
            variant,
            mlp_widths,
            mlp_epochs,
            mlp_lr,
            mlp_batch,
            parallel_clusters,
        } => cmd_train(
            common,
            input,
            labels,
            clusters,
            l,
            dims,
            base,
            decoder,
            id_k,
            variant,
            mlp_widths,
            mlp_epochs,
            mlp_lr,
            mlp_batch,
            parallel_clusters,
        ),
        Command::Sample { common, model, m, format } => cmd_sample(common, model, m, format),
        Command::Eval { common, samples, reference, mmd, bandwidth, train, tau } => {
            cmd_eval(common, samples, reference, mmd, bandwidth, train, tau)
        }
        Command::Weights {
            common,
            input,
            labels,
            id_k,
            variant,
            train_classifier,
            epochs,
            lr,
            batch,
        } => cmd_weights(common, input, labels, id_k, variant, train_classifier, epochs, lr, batch),
        Command::Repro { common, experiment } => cmd_repro(common, experiment),
    }
}

// ---------------------------------------------------------------------------
// shared input handling
// ---------------------------------------------------------------------------

/// Load a dataset by extension: `.csv` parses as f64 CSV, anything else is
/// treated as raw f32 + sidecar (widened to f64). An explicit labels file
/// overrides embedded labels.
fn load_input(path: &Path, labels: Option<&Path>) -> Result<DataMatrix<f64>> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    let matrix = if is_csv {
        load_csv::<f64>(path)?
    } else {
        load_raw(path)?.widen()
    };
    match labels {
        Some(p) => {
            let l = load_labels_csv(p)?;
            matrix.with_labels(l)
        }
        None => Ok(matrix),
    }
}

fn labeled_groups(x: &DataMatrix<f64>) -> Result<GroupIndex> {
    match x.labels() {
        Some(l) => GroupIndex::from_labels(l),
        None => GroupIndex::from_assignment(vec![0; x.n()], 1),
    }
}

fn parse_k_list(flag: Option<String>, cfg: &FileConfig) -> Result<Vec<usize>> {
    let text = flag.or_else(|| cfg.get_str("k"));
    match text {
        None => Ok(DEFAULT_K_LIST.to_vec()),
        Some(t) => t
            .split(',')
            .map(|s| {
                s.trim().parse::<usize>().map_err(|_| {
                    Error::Argument(format!("cannot parse neighbourhood size {s:?}"))
                })
            })
            .collect(),
    }
}

fn parse_variant(flag: Option<String>, cfg: &FileConfig) -> Result<Variant> {
    match flag.or_else(|| cfg.get_str("variant")) {
        None => Ok(Variant::KMinus1),
        Some(t) => t.parse(),
    }
}

fn parse_backend(flag: Option<String>, cfg: &FileConfig) -> Result<Backend> {
    match flag.or_else(|| cfg.get_str("backend")) {
        None => Ok(Backend::VpTree),
        Some(t) => t.parse(),
    }
}

fn save_matrix(
    x: &DataMatrix<f64>,
    run: &RunDir,
    stem: &str,
    format: &str,
) -> Result<Vec<String>> {
    let mut written = Vec::new();
    match format {
        "csv" => {
            let data_name = format!("{stem}.csv");
            save_csv(x, &run.path(&data_name))?;
            written.push(data_name);
            if let Some(labels) = x.labels() {
                let label_name = format!("{stem}.labels.csv");
                save_labels_csv(labels, &run.path(&label_name))?;
                written.push(label_name);
            }
        }
        "raw" => {
            let data_name = format!("{stem}.raw");
            let narrow: Vec<f32> = x.values().iter().map(|&v| v as f32).collect();
            let mut m32 = DataMatrix::<f32>::new(x.n(), x.dim(), narrow)?;
            if let Some(labels) = x.labels() {
                m32 = m32.with_labels(labels.to_vec())?;
            }
            save_raw(&m32, &run.path(&data_name))?;
            written.push(format!("{data_name}.json"));
            written.push(data_name);
        }
        other => {
            return Err(Error::Argument(format!(
                "unknown format {other:?}; expected \"csv\" or \"raw\""
            )))
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    common: Common,
    kind: String,
    n: Option<usize>,
    dim: Option<usize>,
    latent: Option<usize>,
    active: Option<usize>,
    ambient: Option<usize>,
    noise: Option<f64>,
    components: Vec<String>,
    gap: Option<f64>,
    format: Option<String>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let seed = resolve_seed(common.seed, &cfg);
    let run = RunDir::create(&common.out)?;
    let ambient = ambient
        .or_else(|| cfg.get_u64("ambient").map(|v| v as usize))
        .unwrap_or(64);
    let n = n.or_else(|| cfg.get_u64("n").map(|v| v as usize)).unwrap_or(5000);
    let noise = noise.or_else(|| cfg.get_f64("noise")).unwrap_or(0.0);
    let format = format
        .or_else(|| cfg.get_str("format"))
        .unwrap_or_else(|| "csv".into());

    let (x, truth) = match kind.as_str() {
        "affine" => {
            let d = dim.ok_or_else(|| Error::Argument("--dim is required for kind affine".into()))?;
            gen_affine_manifold(n, d, ambient, seed, noise)?
        }
        "pushforward" => {
            let d_latent = latent
                .ok_or_else(|| Error::Argument("--latent is required for kind pushforward".into()))?;
            let m = active.unwrap_or(d_latent);
            gen_pushforward_manifold(n, d_latent, m, ambient, seed)?
        }
        "union" => {
            if components.is_empty() {
                return Err(Error::Argument(
                    "kind union needs at least one --component".into(),
                ));
            }
            let parts: Vec<_> = components
                .iter()
                .enumerate()
                .map(|(i, spec)| {
                    synth_component(spec, ambient, stratum_core::rng::Rng::substream_seed(seed, i as u64))
                })
                .collect::<Result<_>>()?;
            let gap = gap.or_else(|| cfg.get_f64("gap")).unwrap_or(10.0);
            compose_union(&parts, gap, stratum_core::rng::Rng::substream_seed(seed, 1_000_003))?
        }
        other => {
            return Err(Error::Argument(format!(
                "unknown kind {other:?}; expected affine, pushforward, or union"
            )))
        }
    };

    let written = save_matrix(&x, &run, "data", &format)?;
    run.write_json("truth.json", &serde_json::to_value(&truth)?)?;
    run.write_run_manifest(
        "synth",
        json!({
            "kind": kind,
            "n": n,
            "dim": dim,
            "latent": latent,
            "active": active,
            "ambient": ambient,
            "noise": noise,
            "components": components,
            "gap": gap,
            "format": format,
            "seed": seed,
            "files": written,
        }),
    )?;
    println!("wrote {} points to {}", x.n(), common.out.display());
    Ok(())
}

/// Parse "affine,n=5000,d=2" / "pushforward,n=5000,latent=20,active=3".
fn synth_component(
    spec: &str,
    ambient: usize,
    seed: u64,
) -> Result<(DataMatrix<f64>, stratum_core::synth::SyntheticTruth)> {
    let mut parts = spec.split(',');
    let kind = parts.next().unwrap_or_default().trim();
    let mut n = 5000usize;
    let mut d = None::<usize>;
    let mut latent = None::<usize>;
    let mut active = None::<usize>;
    let mut noise = 0.0f64;
    for kv in parts {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("component field {kv:?} is not key=value")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "n" => {
                n = value
                    .parse()
                    .map_err(|_| Error::Argument(format!("cannot parse component field {kv:?}")))?
            }
            "d" | "dim" => {
                d = Some(value.parse().map_err(|_| {
                    Error::Argument(format!("cannot parse component field {kv:?}"))
                })?)
            }
            "latent" => {
                latent = Some(value.parse().map_err(|_| {
                    Error::Argument(format!("cannot parse component field {kv:?}"))
                })?)
            }
            "active" | "m" => {
                active = Some(value.parse().map_err(|_| {
                    Error::Argument(format!("cannot parse component field {kv:?}"))
                })?)
            }
            "noise" => {
                noise = value
                    .parse()
                    .map_err(|_| Error::Argument(format!("cannot parse component field {kv:?}")))?
            }
            other => {
                return Err(Error::Argument(format!(
                    "unknown component field {other:?} in {spec:?}"
                )))
            }
        }
    }
    match kind {
        "affine" => {
            let d = d.ok_or_else(|| Error::Argument(format!("component {spec:?} needs d=")))?;
            gen_affine_manifold(n, d, ambient, seed, noise)
        }
        "pushforward" => {
            let latent = latent
                .ok_or_else(|| Error::Argument(format!("component {spec:?} needs latent=")))?;
            gen_pushforward_manifold(n, latent, active.unwrap_or(latent), ambient, seed)
        }
        other => Err(Error::Argument(format!(
            "unknown component kind {other:?} in {spec:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// estimate-id
// ---------------------------------------------------------------------------

fn cmd_estimate_id(
    common: Common,
    input: PathBuf,
    labels: Option<PathBuf>,
    k: Option<String>,
    variant: Option<String>,
    backend: Option<String>,
    dump_neighbors: Option<String>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let threads = resolve_threads(common.threads, &cfg);
    let run = RunDir::create(&common.out)?;
    let k_list = parse_k_list(k, &cfg)?;
    let variant = parse_variant(variant, &cfg)?;
    let backend = parse_backend(backend, &cfg)?;

    let x = load_input(&input, labels.as_deref())?;
    let groups = labeled_groups(&x)?;
    let report = per_group_id(&x, &groups, &k_list, variant, backend, threads)?;
    run.write_json(
        "id_report.json",
        &json!({ "meta": meta_block(), "report": serde_json::to_value(&report)? }),
    )?;
    run.write_text("id_report.csv", &report.to_csv())?;

    if let Some(name) = dump_neighbors {
        let k_max = *k_list.iter().max().unwrap();
        let out = knn_distances(&x, k_max.min(x.n().saturating_sub(1)), true, backend, threads)?;
        run.write_text(&name, &out.table.to_csv())?;
    }

    run.write_run_manifest(
        "estimate-id",
        json!({
            "input": portable(&input),
            "labels": labels.as_deref().map(portable),
            "k": k_list,
            "variant": variant.name(),
            "backend": format!("{backend:?}"),
            "threads": threads,
            "groups": groups.n_groups(),
        }),
    )?;
    for (g, summary) in report.summaries.iter().enumerate() {
        if let Some(s) = summary {
            println!("group {g}: median estimate {:.3} over k sweep", s.median);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

fn cmd_cluster(
    common: Common,
    input: PathBuf,
    algo: Option<String>,
    clusters: Option<usize>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let seed = resolve_seed(common.seed, &cfg);
    let threads = resolve_threads(common.threads, &cfg);
    let algo = algo
        .or_else(|| cfg.get_str("algo"))
        .unwrap_or_else(|| "ward".into());
    let l = clusters
        .or_else(|| cfg.get_u64("clusters").map(|v| v as usize))
        .unwrap_or(10);
    if l == 0 {
        return Err(Error::Argument("cluster count must be at least 1".into()));
    }
    let x = load_input(&input, None)?;
    let run = RunDir::create(&common.out)?;

    let groups = match algo.as_str() {
        "ward" => {
            let (groups, dendrogram) = stratum_core::cluster::ward_agglomerative(&x, l)?;
            run.write_text("dendrogram.csv", &dendrogram.to_csv())?;
            groups
        }
        "kmeans" => {
            let result = stratum_core::cluster::kmeanspp(&x, l, seed, threads)?;
            run.write_json(
                "kmeans.json",
                &json!({
                    "meta": meta_block(),
                    "iterations": result.iterations,
                    "reseeds": result.reseed_events.len(),
                }),
            )?;
            result.groups
        }
        other => {
            return Err(Error::Argument(format!(
                "unknown algorithm {other:?}; expected \"ward\" or \"kmeans\""
            )))
        }
    };
    save_labels_csv(groups.assignment(), &run.path("assignment.csv"))?;
    run.write_json(
        "clusters.json",
        &json!({ "meta": meta_block(), "sizes": groups.sizes() }),
    )?;
    run.write_run_manifest(
        "cluster",
        json!({
            "input": portable(&input),
            "algo": algo,
            "clusters": l,
            "seed": seed,
            "threads": threads,
        }),
    )?;
    println!("cluster sizes: {:?}", groups.sizes());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn parse_dims(text: &str) -> Result<DimsMode> {
    match text {
        "auto" => Ok(DimsMode::Auto),
        "constant" => Ok(DimsMode::Constant),
        list => {
            let dims: Vec<usize> = list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Argument(format!("cannot parse dimension {s:?}")))
                })
                .collect::<Result<_>>()?;
            if dims.iter().any(|&d| d == 0) {
                return Err(Error::Argument("latent dimensions must be at least 1".into()));
            }
            Ok(DimsMode::Explicit(dims))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: Common,
    input: PathBuf,
    labels: Option<PathBuf>,
    clusters: Option<String>,
    l: Option<usize>,
    dims: Option<String>,
    base: Option<String>,
    decoder: Option<String>,
    id_k: Option<usize>,
    variant: Option<String>,
    mlp_widths: Option<String>,
    mlp_epochs: Option<usize>,
    mlp_lr: Option<f64>,
    mlp_batch: Option<usize>,
    parallel_clusters: bool,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let seed = resolve_seed(common.seed, &cfg);
    let threads = resolve_threads(common.threads, &cfg);
    let run = RunDir::create(&common.out)?;

    let x = load_input(&input, labels.as_deref())?;
    let clusters_spec = clusters
        .or_else(|| cfg.get_str("clusters"))
        .unwrap_or_else(|| "labels".into());
    let l = l.or_else(|| cfg.get_u64("l").map(|v| v as usize)).unwrap_or(10);
    let groups = match clusters_spec.as_str() {
        "labels" => match x.labels() {
            Some(lbl) => GroupIndex::from_labels(lbl)?,
            None => {
                return Err(Error::Argument(
                    "--clusters labels needs a labeled dataset (--labels or raw sidecar)".into(),
                ))
            }
        },
        "single" | "none" => GroupIndex::from_assignment(vec![0; x.n()], 1)?,
        "kmeans" => {
            stratum_core::cluster::kmeanspp(
                &x,
                l,
                stratum_core::rng::Rng::substream_seed(seed, 999),
                threads,
            )?
            .groups
        }
        "ward" => stratum_core::cluster::ward_agglomerative(&x, l)?.0,
        path => {
            let assignment = load_labels_csv(Path::new(path))?;
            GroupIndex::from_labels(&assignment)?
        }
    };

    let dims_text = dims.or_else(|| cfg.get_str("dims")).unwrap_or_else(|| "auto".into());
    let dims_mode = parse_dims(&dims_text)?;
    let base_kind: BaseKind = base
        .or_else(|| cfg.get_str("base"))
        .unwrap_or_else(|| "gaussian".into())
        .parse()?;
    let decoder_text = decoder
        .or_else(|| cfg.get_str("decoder"))
        .unwrap_or_else(|| "affine".into());
    let decoder_kind = match decoder_text.as_str() {
        "affine" => DecoderKind::Affine,
        "mlp" => {
            let widths = match mlp_widths.or_else(|| cfg.get_str("mlp-widths")) {
                None => vec![64, 64],
                Some(t) => t
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Argument(format!("cannot parse width {s:?}")))
                    })
                    .collect::<Result<_>>()?,
            };
            DecoderKind::Mlp(MlpConfig {
                widths,
                learning_rate: mlp_lr.or_else(|| cfg.get_f64("mlp-lr")).unwrap_or(0.01),
                epochs: mlp_epochs
                    .or_else(|| cfg.get_u64("mlp-epochs").map(|v| v as usize))
                    .unwrap_or(50),
                batch_size: mlp_batch
                    .or_else(|| cfg.get_u64("mlp-batch").map(|v| v as usize))
                    .unwrap_or(64),
            })
        }
        other => {
            return Err(Error::Argument(format!(
                "unknown decoder {other:?}; expected \"affine\" or \"mlp\""
            )))
        }
    };

    let train_cfg = ClusteredConfig {
        seed,
        base_kind,
        decoder_kind: decoder_kind.clone(),
        id_k: id_k.or_else(|| cfg.get_u64("id-k").map(|v| v as usize)).unwrap_or(20),
        id_variant: parse_variant(variant, &cfg)?,
        knn_backend: Backend::VpTree,
        threads,
        parallel_clusters,
    };
    let bundle_dir = run.path("model");
    let (_, report) = train_clustered(&x, &groups, &dims_mode, &train_cfg, &bundle_dir)?;
    run.write_json(
        "train_report.json",
        &json!({ "meta": meta_block(), "report": serde_json::to_value(&report)? }),
    )?;
    run.write_run_manifest(
        "train",
        json!({
            "input": portable(&input),
            "labels": labels.as_deref().map(portable),
            "clusters": clusters_spec,
            "l": groups.n_groups(),
            "dims": dims_text,
            "base": base_kind.name(),
            "decoder": decoder_text,
            "id_k": train_cfg.id_k,
            "variant": train_cfg.id_variant.name(),
            "seed": seed,
            "threads": threads,
            "parallel_clusters": parallel_clusters,
            "bundle": "model",
        }),
    )?;
    println!(
        "trained {} clusters with dims {:?} (peak resident models: {})",
        groups.n_groups(),
        report.dims,
        report.peak_resident_models
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn cmd_sample(
    common: Common,
    model: PathBuf,
    m: Option<usize>,
    format: Option<String>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let seed = resolve_seed(common.seed, &cfg);
    let run = RunDir::create(&common.out)?;
    let m = m.or_else(|| cfg.get_u64("m").map(|v| v as usize)).unwrap_or(10_000);
    let format = format
        .or_else(|| cfg.get_str("format"))
        .unwrap_or_else(|| "csv".into());

    let bundle = stratum_core::clustered::load_bundle(&model)?;
    let (samples, report) = sample_clustered(&bundle, m, seed)?;
    let written = save_matrix(&samples, &run, "samples", &format)?;
    run.write_json(
        "sample_report.json",
        &json!({ "meta": meta_block(), "report": serde_json::to_value(&report)? }),
    )?;
    run.write_run_manifest(
        "sample",
        json!({
            "model": portable(&model),
            "m": m,
            "seed": seed,
            "format": format,
            "files": written,
        }),
    )?;
    println!("drew {m} samples across {} clusters", report.counts.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(
    common: Common,
    samples: PathBuf,
    reference: Option<PathBuf>,
    mmd: bool,
    bandwidth: Option<String>,
    train: Option<PathBuf>,
    tau: Option<String>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let threads = resolve_threads(common.threads, &cfg);
    let run = RunDir::create(&common.out)?;
    let sample_data = load_input(&samples, None)?;

    let mut payload = serde_json::Map::new();
    let do_mmd = mmd || reference.is_some();
    if do_mmd {
        let reference_path = reference
            .as_ref()
            .ok_or_else(|| Error::Argument("--mmd needs --reference".into()))?;
        let reference_data = load_input(reference_path, None)?;
        let bw = match bandwidth.as_deref().or(cfg.get_str("bandwidth").as_deref()) {
            None | Some("median") => Bandwidth::MedianHeuristic,
            Some(v) => Bandwidth::Value(v.parse().map_err(|_| {
                Error::Argument(format!("bandwidth must be \"median\" or a number, got {v:?}"))
            })?),
        };
        let result = mmd2_unbiased(&sample_data, &reference_data, bw, threads)?;
        payload.insert("mmd".into(), serde_json::to_value(result)?);
    }
    if let Some(train_path) = &train {
        let train_data = load_input(train_path, None)?;
        let tau = match tau.as_deref().or(cfg.get_str("tau").as_deref()) {
            None | Some("auto") => Tau::Auto,
            Some(v) => Tau::Value(v.parse().map_err(|_| {
                Error::Argument(format!("tau must be \"auto\" or a number, got {v:?}"))
            })?),
        };
        let report = bridge_mass(&sample_data, &train_data, tau, threads)?;
        let mut distances = String::from("min_distance\n");
        for d in &report.min_distances {
            distances.push_str(&format!("{d}\n"));
        }
        run.write_text("bridge_distances.tsv", &distances)?;
        payload.insert(
            "bridge".into(),
            json!({ "tau": report.tau, "off_support_fraction": report.off_support_fraction }),
        );
    }
    if payload.is_empty() {
        return Err(Error::Argument(
            "nothing to evaluate: pass --reference (MMD) and/or --train (bridge mass)".into(),
        ));
    }
    run.write_json(
        "eval_report.json",
        &json!({ "meta": meta_block(), "report": serde_json::Value::Object(payload) }),
    )?;
    run.write_run_manifest(
        "eval",
        json!({
            "samples": portable(&samples),
            "reference": reference.as_deref().map(portable),
            "train": train.as_deref().map(portable),
            "threads": threads,
        }),
    )?;
    println!("wrote eval_report.json");
    Ok(())
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_weights(
    common: Common,
    input: PathBuf,
    labels: Option<PathBuf>,
    id_k: Option<usize>,
    variant: Option<String>,
    train_classifier: bool,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let seed = resolve_seed(common.seed, &cfg);
    let threads = resolve_threads(common.threads, &cfg);
    let run = RunDir::create(&common.out)?;
    let x = load_input(&input, labels.as_deref())?;
    let label_vec = x
        .labels()
        .ok_or_else(|| Error::Argument("weights needs labels (--labels or raw sidecar)".into()))?
        .to_vec();
    let groups = GroupIndex::from_labels(&label_vec)?;
    let k = id_k.or_else(|| cfg.get_u64("id-k").map(|v| v as usize)).unwrap_or(20);
    let variant = parse_variant(variant, &cfg)?;

    let report = per_group_id(&x, &groups, &[k], variant, Backend::VpTree, threads)?;
    let d_hats: Vec<f64> = (0..groups.n_groups())
        .map(|g| {
            report.cells[g][0].estimate().map(|e| e.value).ok_or_else(|| {
                Error::Argument(format!("class {g} is too small to estimate at k = {k}"))
            })
        })
        .collect::<Result<_>>()?;
    let omega = id_weights(&d_hats)?;
    run.write_text("weights.csv", &omega.to_csv(Some(&d_hats)))?;

    let mut payload = json!({
        "d_hats": d_hats,
        "omega": omega.values,
        "k": k,
        "variant": variant.name(),
    });

    if train_classifier {
        let dense_labels: Vec<usize> = groups.assignment().to_vec();
        let train_cfg = SoftmaxConfig {
            learning_rate: lr.or_else(|| cfg.get_f64("lr")).unwrap_or(0.5),
            epochs: epochs.or_else(|| cfg.get_u64("epochs").map(|v| v as usize)).unwrap_or(100),
            batch_size: batch.or_else(|| cfg.get_u64("batch").map(|v| v as usize)).unwrap_or(64),
            seed,
        };
        let (standard, _) = train_softmax_weighted(
            &x,
            &dense_labels,
            &ClassWeights::ones(groups.n_groups()),
            &train_cfg,
        )?;
        let (weighted, _) = train_softmax_weighted(&x, &dense_labels, &omega, &train_cfg)?;
        let acc_standard = per_class_accuracy(&standard, &x, &dense_labels)?;
        let acc_weighted = per_class_accuracy(&weighted, &x, &dense_labels)?;
        stratum_core::weights::save_classifier(&weighted, &[], &run.path("classifier"))?;
        payload["per_class_accuracy_standard"] = serde_json::to_value(&acc_standard)?;
        payload["per_class_accuracy_weighted"] = serde_json::to_value(&acc_weighted)?;
    }

    run.write_json("weights.json", &json!({ "meta": meta_block(), "report": payload }))?;
    run.write_run_manifest(
        "weights",
        json!({
            "input": portable(&input),
            "labels": labels.as_deref().map(portable),
            "id_k": k,
            "variant": variant.name(),
            "train_classifier": train_classifier,
            "seed": seed,
            "threads": threads,
        }),
    )?;
    println!("wrote weights for {} classes", groups.n_groups());
    Ok(())
}

// ---------------------------------------------------------------------------
// repro
// ---------------------------------------------------------------------------

fn cmd_repro(common: Common, experiment: String) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let seed = common.seed.or_else(|| cfg.get_u64("seed")).unwrap_or(DEFAULT_SEED);
    let threads = resolve_threads(common.threads, &cfg);
    let run = RunDir::create(&common.out)?;

    let names: Vec<&str> = if experiment == "all" {
        EXPERIMENTS.to_vec()
    } else {
        vec![experiment.as_str()]
    };

    let mut all_passed = true;
    let mut failed = Vec::new();
    for name in &names {
        let out = run_experiment(name, seed, threads)?;
        let sub = RunDir::create(&run.path(name))?;
        for (file, contents) in &out.plot_files {
            sub.write_text(file, contents)?;
        }
        sub.write_json(
            "report.json",
            &json!({
                "meta": meta_block(),
                "experiment": out.experiment,
                "seed": out.seed,
                "passed": out.passed,
                "checks": serde_json::to_value(&out.checks)?,
                "payload": out.payload,
            }),
        )?;
        for check in &out.checks {
            println!(
                "[{}] {}::{} — {}",
                if check.passed { "PASS" } else { "FAIL" },
                name,
                check.name,
                check.detail
            );
            if !check.passed {
                failed.push(format!("{name}::{}", check.name));
            }
        }
        all_passed &= out.passed;
    }
    run.write_run_manifest(
        "repro",
        json!({ "experiment": experiment, "seed": seed, "threads": threads }),
    )?;
    if !all_passed {
        return Err(Error::Validation(format!(
            "failing criteria: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}
