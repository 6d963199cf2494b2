use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use shardann::dataset::MetricTag;
use shardann::graph::BallCarvingParams;
use shardann::io::VectorFormat;
use shardann::pipeline::{self, EvalInputs, PartitionerSpec};
use shardann::routing::{KmrParams, LshFamilyTag, RoutingMode};

/// Shard partitioning and query routing for large nearest-neighbor search.
#[derive(Parser)]
#[command(name = "shardann", version, about)]
struct Cli {
    /// JSON file of flag defaults ({"flag-name": value}); explicit flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; all randomness in a run derives from it
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker thread cap (1 reproduces parallel runs exactly)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphMode {
    Exact,
    Approx,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionAlgo {
    Gp,
    Km,
    Bkm,
    Pyramid,
    Import,
}

#[derive(Clone, Copy, ValueEnum)]
enum OverlapMode {
    Graph,
    Centers,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouterKind {
    Kmr,
    Hrt,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalWhat {
    Curves,
    Oracle,
    Ablation,
    GraphSweep,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic dataset
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// also write a query set drawn from the same mixture
        #[arg(long)]
        queries_out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        n_queries: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        clusters: usize,
        #[arg(long, default_value_t = 15.0)]
        spread: f64,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long, default_value = "fbin")]
        format: String,
    },
    /// Exhaustive top-k ground truth for a query set
    ComputeGt {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the exact or ball-carved approximate k-NN graph
    BuildGraph {
        #[arg(value_enum)]
        mode: GraphMode,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 3)]
        fanout: usize,
        #[arg(long, default_value_t = 2500)]
        max_cluster_size: usize,
        #[arg(long, default_value_t = 950)]
        top_level_pivots: usize,
        #[arg(long, default_value_t = 0.005)]
        pivot_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edge recall of an approximate graph against the exact one
    GraphRecall {
        #[arg(long)]
        approx: PathBuf,
        #[arg(long)]
        exact: PathBuf,
    },
    /// Partition the pointset into balanced shards
    Partition {
        #[arg(value_enum)]
        algo: PartitionAlgo,
        /// k-NN graph (gp)
        #[arg(long)]
        graph: Option<PathBuf>,
        /// vectors (km, bkm, pyramid, import validation)
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// existing partition file (import)
        #[arg(long = "in")]
        source: Option<PathBuf>,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 16)]
        shards: u32,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 10_000)]
        sample_size: usize,
        /// write k-means centers here (km, bkm)
        #[arg(long)]
        centers_out: Option<PathBuf>,
        /// write the meta-point router here (pyramid)
        #[arg(long)]
        router_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grow an overlapping partition out of a disjoint one
    Overlap {
        #[arg(value_enum)]
        mode: OverlapMode,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        centers: Option<PathBuf>,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long)]
        format: Option<String>,
        /// post-overlap logical shard count (the size-limit divisor)
        #[arg(long, default_value_t = 16)]
        shards: u32,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        /// replication factor o
        #[arg(long, default_value_t = 1.2)]
        overlap: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a routing index over a partition
    TrainRouter {
        #[arg(value_enum)]
        kind: RouterKind,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long)]
        format: Option<String>,
        /// index size budget
        #[arg(long, default_value_t = 50_000)]
        m: usize,
        /// centroids per tree node (kmr)
        #[arg(long, default_value_t = 64)]
        l: usize,
        /// cluster size threshold (kmr)
        #[arg(long, default_value_t = 350)]
        lambda: usize,
        /// repetitions (hrt)
        #[arg(long, default_value_t = 8)]
        reps: usize,
        /// compound hash length (hrt)
        #[arg(long, default_value_t = 24)]
        tokens: usize,
        /// LSH family (hrt); defaults to the metric's family
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit per-query probe orders as CSV
    Route {
        #[arg(long)]
        router: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long)]
        format: Option<String>,
        /// tree search budget (kmr)
        #[arg(long, default_value_t = 50_000)]
        budget: usize,
        /// window size (hrt)
        #[arg(long, default_value_t = 200)]
        window: usize,
        #[arg(long, default_value = "ranking")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall-vs-probes curves, the routing oracle, the loss ablation, or
    /// the graph-quality sweep
    Evaluate {
        #[arg(value_enum)]
        what: EvalWhat,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        router: Option<PathBuf>,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 50_000)]
        budget: usize,
        #[arg(long, default_value_t = 200)]
        window: usize,
        #[arg(long, default_value = "ranking")]
        mode: String,
        /// router sizes for the ablation, comma separated
        #[arg(long, default_value = "10000")]
        m_grid: String,
        #[arg(long, default_value_t = 16)]
        shards: u32,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 32)]
        l: usize,
        #[arg(long, default_value_t = 200)]
        lambda: usize,
        /// sweep grid: graph degrees, comma separated
        #[arg(long, default_value = "3,10")]
        grid_degree: String,
        /// sweep grid: repetitions values, comma separated
        #[arg(long, default_value = "2,3")]
        grid_reps: String,
        /// sweep grid: fanout values, comma separated
        #[arg(long, default_value = "1,3")]
        grid_fanout: String,
        /// sweep grid: max cluster sizes, comma separated
        #[arg(long, default_value = "500,2500")]
        grid_mcs: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|e| anyhow::anyhow!("bad list entry '{part}': {e}"))
        })
        .collect()
}

/// Injects config-file values as trailing flags for every key the command
/// line does not already carry, so explicit flags always win.
fn merge_config_args() -> anyhow::Result<Vec<String>> {
    let mut args: Vec<String> = std::env::args().collect();
    let config_path = args
        .iter()
        .position(|a| a == "--config")
        .and_then(|i| args.get(i + 1).cloned());
    let Some(path) = config_path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("cannot read config {path}: {e}"))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("config {path} is not valid JSON: {e}"))?;
    let Some(object) = value.as_object() else {
        anyhow::bail!("config {path} must hold a JSON object of flag values");
    };
    for (key, val) in object {
        let flag = format!("--{key}");
        if args.contains(&flag) {
            continue;
        }
        match val {
            serde_json::Value::Bool(true) => args.push(flag),
            serde_json::Value::Bool(false) => {}
            serde_json::Value::String(s) => {
                args.push(flag);
                args.push(s.clone());
            }
            other => {
                args.push(flag);
                args.push(other.to_string());
            }
        }
    }
    Ok(args)
}

fn run() -> anyhow::Result<()> {
    let args = merge_config_args()?;
    let cli = Cli::parse_from(args);
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    let seed = cli.seed;

    match cli.command {
        Command::Synth {
            out,
            queries_out,
            n,
            n_queries,
            dim,
            clusters,
            spread,
            metric,
            format,
        } => pipeline::cmd_synth(
            &out,
            queries_out.as_deref(),
            n,
            n_queries,
            dim,
            clusters,
            spread,
            MetricTag::parse(&metric)?,
            VectorFormat::parse(&format)?,
            seed,
        ),
        Command::ComputeGt {
            dataset,
            queries,
            metric,
            format,
            k,
            out,
        } => pipeline::cmd_compute_gt(
            &dataset,
            &queries,
            MetricTag::parse(&metric)?,
            parse_format(format.as_deref())?,
            k,
            &out,
            seed,
        ),
        Command::BuildGraph {
            mode,
            dataset,
            metric,
            format,
            k,
            reps,
            fanout,
            max_cluster_size,
            top_level_pivots,
            pivot_fraction,
            out,
        } => pipeline::cmd_build_graph(
            matches!(mode, GraphMode::Exact),
            &dataset,
            MetricTag::parse(&metric)?,
            parse_format(format.as_deref())?,
            k,
            BallCarvingParams {
                repetitions: reps,
                fanout,
                max_cluster_size,
                top_level_pivots,
                pivot_fraction,
                seed,
            },
            &out,
            seed,
        ),
        Command::GraphRecall { approx, exact } => pipeline::cmd_graph_recall(&approx, &exact),
        Command::Partition {
            algo,
            graph,
            dataset,
            source,
            metric,
            format,
            shards,
            epsilon,
            sample_size,
            centers_out,
            router_out,
            out,
        } => {
            let need = |opt: Option<PathBuf>, what: &str| {
                opt.ok_or_else(|| anyhow::anyhow!("--{what} is required for this partitioner"))
            };
            let spec = match algo {
                PartitionAlgo::Gp => PartitionerSpec::Gp {
                    graph: need(graph, "graph")?,
                },
                PartitionAlgo::Km => PartitionerSpec::Km {
                    dataset: need(dataset, "dataset")?,
                    centers_out,
                },
                PartitionAlgo::Bkm => PartitionerSpec::Bkm {
                    dataset: need(dataset, "dataset")?,
                    centers_out,
                },
                PartitionAlgo::Pyramid => PartitionerSpec::Pyramid {
                    dataset: need(dataset, "dataset")?,
                    sample_size,
                    router_out,
                },
                PartitionAlgo::Import => PartitionerSpec::Import {
                    source: need(source, "in")?,
                    dataset,
                },
            };
            pipeline::cmd_partition(
                spec,
                MetricTag::parse(&metric)?,
                parse_format(format.as_deref())?,
                shards,
                epsilon,
                &out,
                seed,
            )
        }
        Command::Overlap {
            mode,
            graph,
            partition,
            dataset,
            centers,
            metric,
            format,
            shards,
            epsilon,
            overlap,
            out,
        } => pipeline::cmd_overlap(
            matches!(mode, OverlapMode::Centers),
            graph.as_deref(),
            &partition,
            dataset.as_deref(),
            centers.as_deref(),
            MetricTag::parse(&metric)?,
            parse_format(format.as_deref())?,
            shards,
            epsilon,
            overlap,
            &out,
            seed,
        ),
        Command::TrainRouter {
            kind,
            dataset,
            partition,
            metric,
            format,
            m,
            l,
            lambda,
            reps,
            tokens,
            family,
            out,
        } => pipeline::cmd_train_router(
            match kind {
                RouterKind::Kmr => "kmr",
                RouterKind::Hrt => "hrt",
            },
            &dataset,
            &partition,
            MetricTag::parse(&metric)?,
            parse_format(format.as_deref())?,
            m,
            l,
            lambda,
            reps,
            tokens,
            family.as_deref().map(LshFamilyTag::parse).transpose()?,
            &out,
            seed,
        ),
        Command::Route {
            router,
            queries,
            metric,
            format,
            budget,
            window,
            mode,
            out,
        } => pipeline::cmd_route(
            &router,
            &queries,
            MetricTag::parse(&metric)?,
            parse_format(format.as_deref())?,
            budget,
            window,
            RoutingMode::parse(&mode)?,
            &out,
        ),
        Command::Evaluate {
            what,
            dataset,
            queries,
            gt,
            partition,
            router,
            metric,
            format,
            k,
            budget,
            window,
            mode,
            m_grid,
            shards,
            epsilon,
            l,
            lambda,
            grid_degree,
            grid_reps,
            grid_fanout,
            grid_mcs,
            out,
        } => {
            let inputs = EvalInputs {
                dataset: &dataset,
                queries: &queries,
                gt: &gt,
                partition: partition.as_deref().unwrap_or(std::path::Path::new("")),
                metric: MetricTag::parse(&metric)?,
                format: parse_format(format.as_deref())?,
                k,
                seed,
            };
            let need_partition = || {
                partition
                    .clone()
                    .ok_or_else(|| anyhow::anyhow!("--partition is required here"))
            };
            match what {
                EvalWhat::Oracle => {
                    let p = need_partition()?;
                    let inputs = EvalInputs { partition: &p, ..inputs };
                    pipeline::cmd_evaluate_oracle(&inputs, &out)
                }
                EvalWhat::Curves => {
                    let p = need_partition()?;
                    let r = router.ok_or_else(|| anyhow::anyhow!("--router is required here"))?;
                    let inputs = EvalInputs { partition: &p, ..inputs };
                    pipeline::cmd_evaluate_curves(
                        &inputs,
                        &r,
                        budget,
                        window,
                        RoutingMode::parse(&mode)?,
                        &out,
                    )
                }
                EvalWhat::Ablation => {
                    let p = need_partition()?;
                    let inputs = EvalInputs { partition: &p, ..inputs };
                    pipeline::cmd_evaluate_ablation(
                        &inputs,
                        &parse_list(&m_grid)?,
                        l,
                        lambda,
                        budget,
                        &out,
                    )
                }
                EvalWhat::GraphSweep => {
                    let mut grid = Vec::new();
                    for &degree in &parse_list(&grid_degree)? {
                        for &reps in &parse_list(&grid_reps)? {
                            for &fanout in &parse_list(&grid_fanout)? {
                                for &mcs in &parse_list(&grid_mcs)? {
                                    grid.push(shardann::eval::SweepPoint {
                                        degree,
                                        params: BallCarvingParams {
                                            repetitions: reps,
                                            fanout,
                                            max_cluster_size: mcs,
                                            seed,
                                            ..Default::default()
                                        },
                                    });
                                }
                            }
                        }
                    }
                    let kmr = KmrParams {
                        l,
                        lambda,
                        m: 50_000,
                        seed,
                    };
                    pipeline::cmd_evaluate_graph_sweep(
                        &inputs, &grid, shards, epsilon, kmr, budget, &out,
                    )
                }
            }
        }
    }
}

fn parse_format(s: Option<&str>) -> anyhow::Result<Option<VectorFormat>> {
    Ok(s.map(VectorFormat::parse).transpose()?)
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
