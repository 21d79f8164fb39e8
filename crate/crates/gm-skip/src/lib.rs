//! Greedy metric-guided transformer block skipping.
//!
//! Given an evaluator that scores any retained subset of a model's
//! transformer blocks on a calibration set, the search repeatedly removes
//! the block whose removal hurts the task metric least, preferring deeper
//! blocks on ties and refusing any removal that would drop the score below
//! a configurable fraction of the full model's score. The crate ships:
//!
//! - [`search`]: the greedy loop, an exhaustive per-cardinality oracle, and
//!   the feedback-free baselines (fixed-interval, forward, reverse, random).
//! - [`metrics`]: top-1 accuracy, set-level precision, and corpus CIDEr
//!   behind a name-based registry.
//! - [`toy`]: a deterministic seeded toy transformer with independently
//!   skippable blocks and optional planted-redundant blocks, used as the
//!   built-in backend.
//! - [`eval`] / [`external`]: the scoring contract, a memoizing cache, and
//!   a child-process adapter speaking line-delimited JSON for real models.
//! - [`bench`]: latency measurement (median/percentiles plus an exact
//!   multiply-accumulate tally) and report rendering.
//! - [`config`]: the persisted `SkipConfig` artifact with strict validation
//!   and a fixed JSON layout.
//!
//! Everything random flows from explicit SplitMix64 seeds; repeated runs
//! are bit-identical.

pub mod bench;
pub mod block;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod external;
pub mod metrics;
pub mod rng;
pub mod search;
pub mod toy;

pub use bench::{
    build_report, compare_latency, measure_latency, BenchError, LatencyStats, ReportFormat,
    ReportRow,
};
pub use block::BlockSet;
pub use config::{ConfigError, ConfigParseError, IterationRecord, SkipConfig};
pub use dataset::{CalExample, CalibrationSet, DatasetError, Gold, TaskKind, TokenSequence};
pub use eval::{
    CacheStats, CachedEvaluator, EvalError, Evaluator, SharedEvaluator, TableEvaluator,
    ToyEvaluator,
};
pub use external::{ExternalEvaluator, DEFAULT_ADAPTER_TIMEOUT};
pub use metrics::{
    cider, set_precision, top1_accuracy, Caption, Label, LabelSet, MetricError, MetricKind,
    MetricScore, ReferenceSet,
};
pub use search::{
    baseline_search, brute_force_oracle, delta, deletion_curve, greedy_search, BaselineStrategy,
    DeletionOrder, OracleEntry, SearchError, SearchParams, DEFAULT_ORACLE_LIMIT,
};
pub use toy::{ForwardOutput, ToyError, ToyModel, ToyModelSpec};
