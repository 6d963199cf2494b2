//! Shard-based decomposition of large nearest-neighbor search problems.
//!
//! The pipeline: build a k-NN graph of the pointset, cut it into balanced
//! (optionally overlapping) shards, train a small routing index over coarse
//! per-shard representatives, and at query time probe only the few shards
//! the router ranks first. Every stage is modular: any partitioner can be
//! combined with any router.
//!
//! - [`dataset`]: dense vectors and metric dispatch
//! - [`truth`]: exhaustive ground truth and recall accounting
//! - [`graph`]: exact and ball-carved approximate k-NN graphs
//! - [`partition`]: balanced graph partitioning plus k-means family baselines
//! - [`overlap`]: node replication that eliminates cut edges
//! - [`routing`]: k-means-tree and sorted-LSH routing indices
//! - [`eval`]: routing oracle, recall-vs-probes curves, sweeps and ablations
//! - [`io`]: dataset and ground-truth file formats
//! - [`pipeline`]: the artifact-producing CLI driver
//!
//! The [`guide`] module embeds the long-form book chapters so their code
//! samples run as doc-tests.

pub mod dataset;
pub mod eval;
pub mod graph;
pub mod guide;
pub mod io;
pub mod overlap;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod routing;
pub mod truth;

mod topk;

pub use dataset::{distance, Dataset, MetricTag};
pub use graph::{build_approx_knn, build_exact_knn, graph_recall, BallCarvingParams, KnnGraph};
pub use overlap::{overlap_by_centers, overlap_graph_partition, OverlapParams};
pub use partition::{
    balanced_kmeans_partition, cut_edges, kmeans_partition, max_imbalance, partition_graph,
    pyramid_partition, Centroids, Partition,
};
pub use routing::{
    aggregate_probe_order, hrt_route, hrt_train, kmr_route, kmr_train, HrtIndex, KmrParams,
    KmrTree, LshFamilyTag, ProbeOrder, RoutingMode,
};
pub use truth::{compute_ground_truth, recall_at_k, Candidate, GroundTruth};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Preconditions on an operation's arguments were violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A binary artifact failed to parse; `offset` points at the first bad byte.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
