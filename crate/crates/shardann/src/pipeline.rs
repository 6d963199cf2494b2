//! Subcommand drivers behind the CLI: every artifact-producing step writes
//! the artifact plus a JSON manifest with its resolved parameters and the
//! sha256 of the artifact and of every input, so later steps can refuse
//! mixed-provenance combinations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MetricTag};
use crate::eval;
use crate::graph::{build_approx_knn, build_exact_knn, graph_recall, BallCarvingParams, KnnGraph};
use crate::io::{self, VectorFormat};
use crate::overlap::{overlap_by_centers, overlap_graph_partition, OverlapParams};
use crate::partition::{
    balanced_kmeans_partition, export_partition, import_partition, kmeans_partition,
    partition_graph, pyramid_partition, Centroids, Partition,
};
use crate::rng::{rng, split};
use crate::routing::{
    aggregate_probe_order, hrt_route, hrt_train, kmr_route, kmr_train, load_router, save_router,
    KmrParams, LshFamilyTag, ProbeOrder, Router, RoutingMode,
};
use crate::truth::compute_ground_truth;

/// Sidecar manifest written next to every artifact as
/// `<artifact>.manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub content_sha256: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, InputRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut os = artifact.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

pub fn write_manifest(
    artifact: &Path,
    kind: &str,
    seed: u64,
    params: serde_json::Value,
    inputs: &[(&str, &Path)],
) -> anyhow::Result<Manifest> {
    let mut input_map = BTreeMap::new();
    for (role, path) in inputs {
        input_map.insert(
            role.to_string(),
            InputRef {
                path: path.display().to_string(),
                sha256: io::file_sha256(path)?,
            },
        );
    }
    let manifest = Manifest {
        artifact: kind.to_string(),
        content_sha256: io::file_sha256(artifact)?,
        seed,
        params,
        inputs: input_map,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path(artifact), json)?;
    Ok(manifest)
}

pub fn read_manifest(artifact: &Path) -> Option<Manifest> {
    let bytes = std::fs::read(manifest_path(artifact)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// If `artifact` carries a manifest naming `role`, the recorded hash must
/// match the file now passed for that role.
pub fn check_provenance(artifact: &Path, role: &str, input: &Path) -> anyhow::Result<()> {
    let Some(manifest) = read_manifest(artifact) else {
        return Ok(());
    };
    let Some(recorded) = manifest.inputs.get(role) else {
        return Ok(());
    };
    let actual = io::file_sha256(input)?;
    if recorded.sha256 != actual {
        bail!(
            "provenance mismatch: {} was built against {role} {} (sha256 {}), got {} (sha256 {})",
            artifact.display(),
            recorded.path,
            &recorded.sha256[..12],
            input.display(),
            &actual[..12]
        );
    }
    Ok(())
}

/// Short hash of a parameter blob, for the CSV params-hash column.
pub fn params_hash(params: &serde_json::Value) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(params.to_string().as_bytes());
    let digest = hasher.finalize();
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_dataset(path: &Path, format: Option<VectorFormat>, metric: MetricTag) -> anyhow::Result<Dataset> {
    let format = format.unwrap_or_else(|| VectorFormat::from_path(path));
    io::read_vectors(path, format, metric)
        .with_context(|| format!("reading vectors from {}", path.display()))
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

/// Deterministic Gaussian-mixture generator for demos and smoke tests.
/// When `queries_out` is set, `n_queries` extra points are drawn from the
/// same mixture and written as a query set.
#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    out: &Path,
    queries_out: Option<&Path>,
    n: usize,
    n_queries: usize,
    d: usize,
    clusters: usize,
    spread: f64,
    metric: MetricTag,
    format: VectorFormat,
    seed: u64,
) -> anyhow::Result<()> {
    let extra = if queries_out.is_some() { n_queries } else { 0 };
    let all = synth_dataset(n + extra, d, clusters, spread, metric, seed)?;
    let data = all.gather(&(0..n as u32).collect::<Vec<_>>());
    io::write_vectors(&data, out, format)?;
    let params = serde_json::json!({
        "n": n, "dim": d, "clusters": clusters, "spread": spread,
        "metric": metric.to_string(), "format": format.to_string(),
    });
    write_manifest(out, "dataset", seed, params.clone(), &[])?;
    if let Some(qpath) = queries_out {
        let queries = all.gather(&((n as u32)..(n + extra) as u32).collect::<Vec<_>>());
        io::write_vectors(&queries, qpath, format)?;
        write_manifest(qpath, "queries", seed, params, &[])?;
        println!(
            "wrote {} ({n} x {d}) and {} ({extra} queries)",
            out.display(),
            qpath.display()
        );
    } else {
        println!("wrote {} ({n} x {d}, {metric})", out.display());
    }
    Ok(())
}

/// Clustered synthetic data: uniform cluster centers in [0, 255]^d with
/// Gaussian spread, coordinates rounded and clamped to [0, 255].
pub fn synth_dataset(
    n: usize,
    d: usize,
    clusters: usize,
    spread: f64,
    metric: MetricTag,
    seed: u64,
) -> anyhow::Result<Dataset> {
    if metric == MetricTag::Hamming {
        let mut r = rng(split(seed, 0x3D7));
        let values: Vec<f32> = (0..n * d)
            .map(|_| if r.gen::<bool>() { 1.0 } else { 0.0 })
            .collect();
        return Ok(Dataset::new(values, d, metric)?);
    }
    let mut r = rng(split(seed, 0x3D7));
    let centers: Vec<f32> = (0..clusters * d).map(|_| r.gen_range(0.0..255.0f32)).collect();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        let c = i % clusters;
        for j in 0..d {
            let g = gaussian(&mut r) * spread as f32;
            let v = (centers[c * d + j] + g).clamp(0.0, 255.0).round();
            values.push(v);
        }
    }
    Ok(Dataset::new(values, d, metric)?)
}

fn gaussian(r: &mut rand_chacha::ChaCha8Rng) -> f32 {
    let u1: f64 = r.gen_range(f64::EPSILON..1.0);
    let u2: f64 = r.gen();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

pub fn cmd_compute_gt(
    dataset: &Path,
    queries: &Path,
    metric: MetricTag,
    format: Option<VectorFormat>,
    k: usize,
    out: &Path,
    seed: u64,
) -> anyhow::Result<()> {
    let data = load_dataset(dataset, format, metric)?;
    let qs = load_dataset(queries, format, metric)?;
    let gt = compute_ground_truth(&data, &qs, k)?;
    io::write_ground_truth(&gt, out)?;
    write_manifest(
        out,
        "ground-truth",
        seed,
        serde_json::json!({"k": k, "metric": metric.to_string()}),
        &[("dataset", dataset), ("queries", queries)],
    )?;
    println!(
        "wrote {} ({} queries, k={k})",
        out.display(),
        gt.num_queries()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_build_graph(
    exact: bool,
    dataset: &Path,
    metric: MetricTag,
    format: Option<VectorFormat>,
    k: usize,
    params: BallCarvingParams,
    out: &Path,
    seed: u64,
) -> anyhow::Result<()> {
    let data = load_dataset(dataset, format, metric)?;
    let (graph, params_json) = if exact {
        (build_exact_knn(&data, k)?, serde_json::json!({"mode": "exact", "k": k}))
    } else {
        let params = BallCarvingParams { seed, ..params };
        (
            build_approx_knn(&data, k, &params)?,
            serde_json::json!({"mode": "approx", "k": k, "params": params}),
        )
    };
    graph.write_to(out)?;
    write_manifest(out, "knn-graph", seed, params_json, &[("dataset", dataset)])?;
    println!(
        "wrote {} ({} nodes, {} edges)",
        out.display(),
        graph.len(),
        graph.num_edges()
    );
    Ok(())
}

pub fn cmd_graph_recall(approx: &Path, exact: &Path) -> anyhow::Result<()> {
    let a = KnnGraph::read_from(approx)?;
    let e = KnnGraph::read_from(exact)?;
    let recall = graph_recall(&a, &e)?;
    println!("graph-recall {recall:.6}");
    Ok(())
}

pub enum PartitionerSpec {
    Gp { graph: PathBuf },
    Km { dataset: PathBuf, centers_out: Option<PathBuf> },
    Bkm { dataset: PathBuf, centers_out: Option<PathBuf> },
    Pyramid { dataset: PathBuf, sample_size: usize, router_out: Option<PathBuf> },
    Import { source: PathBuf, dataset: Option<PathBuf> },
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_partition(
    spec: PartitionerSpec,
    metric: MetricTag,
    format: Option<VectorFormat>,
    s: u32,
    epsilon: f64,
    out: &Path,
    seed: u64,
) -> anyhow::Result<()> {
    let (partition, name, inputs, extra): (Partition, &str, Vec<(&str, &Path)>, serde_json::Value);
    let mut centers_artifact: Option<(PathBuf, Centroids)> = None;
    let mut router_artifact: Option<(PathBuf, Router)> = None;

    match &spec {
        PartitionerSpec::Gp { graph } => {
            let g = KnnGraph::read_from(graph)?;
            partition = partition_graph(&g, s, epsilon, seed)?;
            name = "gp";
            inputs = vec![("graph", graph.as_path())];
            extra = serde_json::json!({});
        }
        PartitionerSpec::Km { dataset, centers_out } => {
            let data = load_dataset(dataset, format, metric)?;
            let (p, centroids) = kmeans_partition(&data, s, epsilon, seed)?;
            partition = p;
            if let Some(path) = centers_out {
                centers_artifact = Some((path.clone(), centroids));
            }
            name = "km";
            inputs = vec![("dataset", dataset.as_path())];
            extra = serde_json::json!({"metric": metric.to_string()});
        }
        PartitionerSpec::Bkm { dataset, centers_out } => {
            let data = load_dataset(dataset, format, metric)?;
            let (p, centroids, stats) = balanced_kmeans_partition(&data, s, epsilon, seed)?;
            partition = p;
            if let Some(path) = centers_out {
                centers_artifact = Some((path.clone(), centroids));
            }
            name = "bkm";
            inputs = vec![("dataset", dataset.as_path())];
            extra = serde_json::json!({
                "metric": metric.to_string(),
                "penalized_rounds": stats.penalized_rounds,
                "forced_finish": stats.forced_finish,
            });
        }
        PartitionerSpec::Pyramid { dataset, sample_size, router_out } => {
            let data = load_dataset(dataset, format, metric)?;
            let (p, router) = pyramid_partition(&data, s, epsilon, *sample_size, seed)?;
            partition = p;
            if let Some(path) = router_out {
                router_artifact = Some((path.clone(), Router::Pyramid(router)));
            }
            name = "pyramid";
            inputs = vec![("dataset", dataset.as_path())];
            extra = serde_json::json!({"metric": metric.to_string(), "sample_size": sample_size});
        }
        PartitionerSpec::Import { source, dataset } => {
            partition = import_partition(source)?;
            if let Some(ds) = dataset {
                let data = load_dataset(ds, format, metric)?;
                if data.len() != partition.len() {
                    bail!(
                        "hash/shape mismatch: partition covers {} nodes but dataset {} has {}",
                        partition.len(),
                        ds.display(),
                        data.len()
                    );
                }
            }
            name = "import";
            inputs = vec![("source", source.as_path())];
            extra = serde_json::json!({});
        }
    }

    export_partition(&partition, out)?;
    let mut params = serde_json::json!({
        "partitioner": name,
        "s": s,
        "epsilon": epsilon,
        "num_shards": partition.num_shards(),
    });
    merge_json(&mut params, extra);
    write_manifest(out, "partition", seed, params, &inputs)?;

    if let Some((path, centroids)) = centers_artifact {
        let centers_data = Dataset::new(centroids.centers_flat().to_vec(), centroids.dim(), metric)?;
        io::write_vectors(&centers_data, &path, VectorFormat::Fbin)?;
        write_manifest(
            &path,
            "centroids",
            seed,
            serde_json::json!({"partitioner": name, "s": s}),
            &[("partition", out)],
        )?;
    }
    if let Some((path, router)) = router_artifact {
        save_router(&router, &path)?;
        write_manifest(
            &path,
            "router",
            seed,
            serde_json::json!({"router": router.kind_name()}),
            &[("partition", out)],
        )?;
    }

    let sizes = partition.shard_sizes();
    println!(
        "wrote {} ({name}, {} shards, max size {}, limit {})",
        out.display(),
        partition.num_shards(),
        sizes.iter().max().unwrap(),
        partition.size_limit()
    );
    Ok(())
}

fn merge_json(base: &mut serde_json::Value, extra: serde_json::Value) {
    if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_overlap(
    by_centers: bool,
    graph: Option<&Path>,
    partition: &Path,
    dataset: Option<&Path>,
    centers: Option<&Path>,
    metric: MetricTag,
    format: Option<VectorFormat>,
    s: u32,
    epsilon: f64,
    o: f64,
    out: &Path,
    seed: u64,
) -> anyhow::Result<()> {
    let p = import_partition(partition)?;
    let params = OverlapParams::new(p.len(), s, epsilon, o)?;
    let (result, inputs): (Partition, Vec<(&str, &Path)>) = if by_centers {
        let dataset = dataset.context("--dataset is required for centers overlap")?;
        let centers_path = centers.context("--centers is required for centers overlap")?;
        check_provenance(centers_path, "partition", partition)?;
        let data = load_dataset(dataset, format, metric)?;
        let centers_data = load_dataset(centers_path, Some(VectorFormat::Fbin), metric)?;
        let sizes = p.shard_sizes();
        let centroids = Centroids::from_centers(
            centers_data.values().to_vec(),
            centers_data.dim(),
            metric,
            sizes,
        );
        (
            overlap_by_centers(&data, &p, &centroids, &params)?,
            vec![
                ("partition", partition),
                ("dataset", dataset),
                ("centers", centers_path),
            ],
        )
    } else {
        let graph = graph.context("--graph is required for graph overlap")?;
        check_provenance(partition, "graph", graph)?;
        let g = KnnGraph::read_from(graph)?;
        (
            overlap_graph_partition(&g, &p, &params)?,
            vec![("partition", partition), ("graph", graph)],
        )
    };

    export_partition(&result, out)?;
    write_manifest(
        out,
        "partition",
        seed,
        serde_json::json!({
            "partitioner": if by_centers { "overlap-centers" } else { "overlap-graph" },
            "s": s, "epsilon": epsilon, "o": o, "s_prime": params.s_prime,
            "num_shards": result.num_shards(),
        }),
        &inputs,
    )?;
    println!(
        "wrote {} ({} shards, volume {:.3}n, limit {})",
        out.display(),
        result.num_shards(),
        result.volume() as f64 / result.len() as f64,
        params.l_final
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train_router(
    kind: &str,
    dataset: &Path,
    partition: &Path,
    metric: MetricTag,
    format: Option<VectorFormat>,
    m: usize,
    l: usize,
    lambda: usize,
    reps: usize,
    tokens: usize,
    family: Option<LshFamilyTag>,
    out: &Path,
    seed: u64,
) -> anyhow::Result<()> {
    check_provenance(partition, "dataset", dataset)?;
    let data = load_dataset(dataset, format, metric)?;
    let p = import_partition(partition)?;
    if p.len() != data.len() {
        bail!(
            "partition covers {} nodes but the dataset has {}",
            p.len(),
            data.len()
        );
    }
    let (router, params_json) = match kind {
        "kmr" => {
            let params = KmrParams { l, lambda, m, seed };
            let tree = kmr_train(&data, &p, &params)?;
            let stored = tree.total_centroids();
            (
                Router::Kmr(tree),
                serde_json::json!({"router": "kmr", "m": m, "l": l, "lambda": lambda, "stored": stored}),
            )
        }
        "hrt" => {
            let family = family.unwrap_or_else(|| LshFamilyTag::for_metric(metric));
            let index = hrt_train(&data, &p, m, reps, tokens, family, seed)?;
            let sampled = index.sample_len();
            (
                Router::Hrt(index),
                serde_json::json!({
                    "router": "hrt", "m": m, "r": reps, "t": tokens,
                    "family": family.to_string(), "sampled": sampled,
                }),
            )
        }
        other => bail!("unknown router kind '{other}' (expected kmr or hrt)"),
    };
    save_router(&router, out)?;
    write_manifest(
        out,
        "router",
        seed,
        params_json,
        &[("dataset", dataset), ("partition", partition)],
    )?;
    println!("wrote {} ({kind})", out.display());
    Ok(())
}

/// Computes per-query probe orders for any router kind.
pub fn route_queries(
    router: &Router,
    queries: &Dataset,
    budget: usize,
    window: usize,
    mode: RoutingMode,
) -> anyhow::Result<Vec<ProbeOrder>> {
    let orders: Vec<ProbeOrder> = match router {
        Router::Kmr(tree) => (0..queries.len())
            .into_par_iter()
            .map(|qi| kmr_route(tree, queries.row(qi), budget))
            .collect(),
        Router::Hrt(index) => {
            let results: Vec<crate::Result<ProbeOrder>> = (0..queries.len())
                .into_par_iter()
                .map(|qi| {
                    let set = hrt_route(index, queries.row(qi), window)?;
                    Ok(aggregate_probe_order(
                        &set.candidates,
                        mode,
                        index.num_shards(),
                    ))
                })
                .collect();
            results.into_iter().collect::<crate::Result<Vec<_>>>()?
        }
        Router::Pyramid(pr) => {
            let results: Vec<crate::Result<ProbeOrder>> = (0..queries.len())
                .into_par_iter()
                .map(|qi| pr.route(queries.row(qi)))
                .collect();
            results.into_iter().collect::<crate::Result<Vec<_>>>()?
        }
    };
    Ok(orders)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_route(
    router_path: &Path,
    queries: &Path,
    metric: MetricTag,
    format: Option<VectorFormat>,
    budget: usize,
    window: usize,
    mode: RoutingMode,
    out: &Path,
) -> anyhow::Result<()> {
    let router = load_router(router_path)?;
    let qs = load_dataset(queries, format, metric)?;
    let orders = route_queries(&router, &qs, budget, window, mode)?;
    let mut csv = String::from("query,rank,shard,score\n");
    for (qi, order) in orders.iter().enumerate() {
        for (rank, (&sid, &score)) in order.order().iter().zip(order.scores()).enumerate() {
            csv.push_str(&format!("{qi},{rank},{sid},{score}\n"));
        }
    }
    std::fs::write(out, csv)?;
    println!("wrote {} ({} queries)", out.display(), qs.len());
    Ok(())
}

/// Standard result row of every evaluation CSV.
fn curve_csv(
    dataset: &str,
    partitioner: &str,
    router: &str,
    phash: &str,
    curve: &eval::RecallCurve,
    n_queries: usize,
    seed: u64,
) -> String {
    let mut out = String::new();
    for (i, v) in curve.values.iter().enumerate() {
        out.push_str(&format!(
            "{dataset},{partitioner},{router},{phash},{},{v:.6},{n_queries},{seed}\n",
            i + 1
        ));
    }
    out
}

const CSV_HEADER: &str = "dataset,partitioner,router,params-hash,eta,recall,n_queries,seed\n";

pub struct EvalInputs<'a> {
    pub dataset: &'a Path,
    pub queries: &'a Path,
    pub gt: &'a Path,
    pub partition: &'a Path,
    pub metric: MetricTag,
    pub format: Option<VectorFormat>,
    pub k: usize,
    pub seed: u64,
}

fn dataset_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn partitioner_label(partition: &Path) -> String {
    read_manifest(partition)
        .and_then(|m| {
            m.params
                .get("partitioner")
                .and_then(|v| v.as_str().map(str::to_string))
        })
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn cmd_evaluate_oracle(inputs: &EvalInputs, out: &Path) -> anyhow::Result<()> {
    check_provenance(inputs.gt, "dataset", inputs.dataset)?;
    check_provenance(inputs.gt, "queries", inputs.queries)?;
    check_provenance(inputs.partition, "dataset", inputs.dataset)?;
    let gt = io::read_ground_truth(inputs.gt)?;
    let p = import_partition(inputs.partition)?;
    let orders = eval::oracle_probe_order(&gt, &p);
    let curve = eval::recall_vs_probes(&orders, &p, &gt, inputs.k, "oracle")?;
    let params = serde_json::json!({"k": inputs.k});
    let mut csv = String::from(CSV_HEADER);
    csv.push_str(&curve_csv(
        &dataset_label(inputs.dataset),
        &partitioner_label(inputs.partition),
        "oracle",
        &params_hash(&params),
        &curve,
        gt.num_queries(),
        inputs.seed,
    ));
    std::fs::write(out, csv)?;
    println!("wrote {} (eta 1..{} oracle recall)", out.display(), curve.num_shards());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate_curves(
    inputs: &EvalInputs,
    router_path: &Path,
    budget: usize,
    window: usize,
    mode: RoutingMode,
    out: &Path,
) -> anyhow::Result<()> {
    check_provenance(inputs.gt, "dataset", inputs.dataset)?;
    check_provenance(inputs.partition, "dataset", inputs.dataset)?;
    check_provenance(router_path, "dataset", inputs.dataset)?;
    check_provenance(router_path, "partition", inputs.partition)?;
    let gt = io::read_ground_truth(inputs.gt)?;
    let p = import_partition(inputs.partition)?;
    let qs = load_dataset(inputs.queries, inputs.format, inputs.metric)?;
    let router = load_router(router_path)?;
    if router.num_shards() != p.num_shards() {
        bail!(
            "router was trained for {} shards, partition has {}",
            router.num_shards(),
            p.num_shards()
        );
    }
    let orders = route_queries(&router, &qs, budget, window, mode)?;
    let curve = eval::recall_vs_probes(&orders, &p, &gt, inputs.k, router.kind_name())?;
    let params = serde_json::json!({
        "k": inputs.k, "budget": budget, "window": window,
        "mode": format!("{mode:?}").to_lowercase(),
    });
    let mut csv = String::from(CSV_HEADER);
    csv.push_str(&curve_csv(
        &dataset_label(inputs.dataset),
        &partitioner_label(inputs.partition),
        router.kind_name(),
        &params_hash(&params),
        &curve,
        gt.num_queries(),
        inputs.seed,
    ));
    std::fs::write(out, csv)?;
    println!(
        "wrote {} (eta=1 recall {:.4})",
        out.display(),
        curve.at(1)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate_ablation(
    inputs: &EvalInputs,
    m_grid: &[usize],
    l: usize,
    lambda: usize,
    budget: usize,
    out: &Path,
) -> anyhow::Result<()> {
    check_provenance(inputs.partition, "dataset", inputs.dataset)?;
    let gt = io::read_ground_truth(inputs.gt)?;
    let p = import_partition(inputs.partition)?;
    let data = load_dataset(inputs.dataset, inputs.format, inputs.metric)?;
    let qs = load_dataset(inputs.queries, inputs.format, inputs.metric)?;
    let base = KmrParams {
        l,
        lambda,
        m: m_grid[0].max(p.num_shards() as usize + 1),
        seed: inputs.seed,
    };
    let rows = eval::loss_ablation(&data, &qs, &p, &gt, m_grid, &base, budget, inputs.k)?;
    let params = serde_json::json!({"k": inputs.k, "budget": budget, "l": l, "lambda": lambda});
    let phash = params_hash(&params);
    let mut csv = String::from(CSV_HEADER);
    for row in &rows {
        let router = if row.m == 0 {
            row.variant.clone()
        } else {
            format!("{}@m{}", row.variant, row.m)
        };
        csv.push_str(&curve_csv(
            &dataset_label(inputs.dataset),
            &partitioner_label(inputs.partition),
            &router,
            &phash,
            &row.curve,
            gt.num_queries(),
            inputs.seed,
        ));
    }
    std::fs::write(out, csv)?;
    println!("wrote {} ({} ablation curves)", out.display(), rows.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate_graph_sweep(
    inputs: &EvalInputs,
    grid: &[eval::SweepPoint],
    s: u32,
    epsilon: f64,
    kmr: KmrParams,
    budget: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let data = load_dataset(inputs.dataset, inputs.format, inputs.metric)?;
    let qs = load_dataset(inputs.queries, inputs.format, inputs.metric)?;
    let gt = io::read_ground_truth(inputs.gt)?;
    let config = eval::SweepConfig {
        k: inputs.k,
        s,
        epsilon,
        kmr,
        budget,
        seed: inputs.seed,
    };
    let rows = eval::graph_quality_sweep(&data, &qs, &gt, grid, &config)?;
    let mut csv = String::from(
        "dataset,row,degree,repetitions,fanout,max_cluster_size,graph_recall,query_recall_eta1,n_queries,seed\n",
    );
    for (i, row) in rows.iter().enumerate() {
        let (degree, reps, fanout, mcs) = row
            .point
            .map(|pt| {
                (
                    pt.degree.to_string(),
                    pt.params.repetitions.to_string(),
                    pt.params.fanout.to_string(),
                    pt.params.max_cluster_size.to_string(),
                )
            })
            .unwrap_or_else(|| (inputs.k.to_string(), "exact".into(), "-".into(), "-".into()));
        csv.push_str(&format!(
            "{},{i},{degree},{reps},{fanout},{mcs},{:.6},{:.6},{},{}\n",
            dataset_label(inputs.dataset),
            row.graph_recall,
            row.query_recall_eta1,
            qs.len(),
            inputs.seed,
        ));
    }
    std::fs::write(out, csv)?;
    println!("wrote {} ({} sweep rows)", out.display(), rows.len());
    Ok(())
}
