//! Greedy metric-guided block-skip search, the exhaustive oracle, and the
//! feedback-free baselines.
//!
//! The greedy loop starts from the full retained set and, per iteration,
//! scores the removal of every retained block, picks the block whose
//! removal costs the least (ties go to the *largest* index, protecting
//! early blocks), and accepts the removal only if the resulting score stays
//! at or above `lambda` times the *full* model's score. The first rejection
//! ends the search. Note the asymmetry, which is implemented deliberately:
//! deltas are measured against the current set's score, while the
//! acceptance floor is anchored to the full model's score.
//!
//! Candidate evaluations within one iteration may run in parallel (install
//! a rayon pool to bound the worker count); results are collected in
//! candidate order, so the trace is byte-identical for any schedule.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::block::BlockSet;
use crate::config::{IterationRecord, SkipConfig};
use crate::eval::{CachedEvaluator, EvalError, Evaluator, SharedEvaluator};
use crate::rng::SplitMix64;

/// Brute-force enumeration refuses models wider than this unless forced.
pub const DEFAULT_ORACLE_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("evaluator failed: {source}")]
    Evaluator {
        source: EvalError,
        /// Iterations completed before the failure.
        trace: Vec<IterationRecord>,
    },
    #[error("block {block} is not in the retained set")]
    BlockNotRetained { block: usize },
    #[error("no candidate blocks to select from")]
    EmptyCandidates,
    #[error("{total_blocks} blocks exceeds the exhaustive limit of {limit}")]
    TooManyBlocks { total_blocks: usize, limit: usize },
    #[error("invalid search parameters: {detail}")]
    InvalidParams { detail: String },
    #[error("invalid baseline strategy: {detail}")]
    InvalidStrategy { detail: String },
}

/// Inputs to the greedy search: removal budget, score floor, and the
/// optional tolerance for treating near-equal deltas as tied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    /// At most this many blocks are removed.
    pub max_remove: usize,
    /// Accepted configurations must score at least `lambda` times the full
    /// model's score.
    pub lambda: f64,
    /// Deltas within this distance of the minimum count as tied. The
    /// default 0 means exact equality, and only exact-tie traces satisfy
    /// strict [`SkipConfig`] validation.
    pub tie_tolerance: f64,
}

impl SearchParams {
    pub fn new(max_remove: usize, lambda: f64) -> Self {
        Self {
            max_remove,
            lambda,
            tie_tolerance: 0.0,
        }
    }

    /// Default budget for a model of `total_blocks`: everything but one
    /// block, staying clear of the degenerate empty model.
    pub fn default_budget(total_blocks: usize) -> usize {
        total_blocks.saturating_sub(1)
    }

    fn validate(&self) -> Result<(), SearchError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SearchError::InvalidParams {
                detail: format!("lambda {} outside [0, 1]", self.lambda),
            });
        }
        if !(self.tie_tolerance >= 0.0) {
            return Err(SearchError::InvalidParams {
                detail: format!("tie_tolerance {} must be >= 0", self.tie_tolerance),
            });
        }
        Ok(())
    }
}

/// Score change from removing `block` from `retained`: positive means the
/// score drops. The current set's score is fetched through the evaluator,
/// so wrap it in a cache if repeated calls should be free.
pub fn delta(
    evaluator: &dyn Evaluator,
    retained: &BlockSet,
    block: usize,
) -> Result<f64, SearchError> {
    let without = retained
        .without(block)
        .ok_or(SearchError::BlockNotRetained { block })?;
    let current = score_value(evaluator, retained, &[])?;
    let removed = score_value(evaluator, &without, &[])?;
    Ok(current - removed)
}

fn score_value(
    evaluator: &dyn Evaluator,
    retained: &BlockSet,
    trace_so_far: &[IterationRecord],
) -> Result<f64, SearchError> {
    evaluator
        .score(retained)
        .map(|s| s.value)
        .map_err(|source| SearchError::Evaluator {
            source,
            trace: trace_so_far.to_vec(),
        })
}

/// Argmin with reverse-order tie-breaking: among candidates whose delta is
/// within `tie_tolerance` of the minimum, the largest block index wins.
pub fn select_block(
    deltas: &BTreeMap<usize, f64>,
    tie_tolerance: f64,
) -> Result<usize, SearchError> {
    if deltas.is_empty() {
        return Err(SearchError::EmptyCandidates);
    }
    let min = deltas.values().cloned().fold(f64::INFINITY, f64::min);
    deltas
        .iter()
        .filter(|(_, &d)| d <= min + tie_tolerance)
        .map(|(&b, _)| b)
        .max()
        .ok_or(SearchError::EmptyCandidates)
}

/// The full greedy search. Wraps the evaluator in a fresh memoizing cache,
/// so the current set's score is computed once per iteration and carried
/// into the next one.
pub fn greedy_search(
    evaluator: SharedEvaluator,
    params: &SearchParams,
) -> Result<SkipConfig, SearchError> {
    params.validate()?;
    let total_blocks = evaluator.total_blocks();
    if total_blocks == 0 {
        return Err(SearchError::InvalidParams {
            detail: "evaluator reports zero blocks".to_string(),
        });
    }
    let model_id = evaluator.model_id();
    let metric = evaluator.metric_name().to_string();
    let cached = CachedEvaluator::new(evaluator);

    let full = BlockSet::full(total_blocks);
    let mut trace: Vec<IterationRecord> = Vec::new();
    let full_score = score_value(&cached, &full, &trace)?;
    let floor = params.lambda * full_score;

    let mut current = full;
    let mut current_score = full_score;
    let mut skipped_order = Vec::new();

    for iteration in 1..=params.max_remove {
        if current.is_empty() {
            break;
        }
        // Post-removal score for every retained candidate, evaluated in
        // candidate order (possibly in parallel; order of results is fixed).
        let removed_scores: Vec<(usize, Result<f64, SearchError>)> = current
            .retained()
            .par_iter()
            .map(|&block| {
                let without = current.without(block).expect("candidate is retained");
                (block, score_value(&cached, &without, &[]))
            })
            .collect();
        let mut candidate_deltas = BTreeMap::new();
        let mut removed_by_block = BTreeMap::new();
        for (block, result) in removed_scores {
            match result {
                Ok(score) => {
                    candidate_deltas.insert(block, current_score - score);
                    removed_by_block.insert(block, score);
                }
                Err(SearchError::Evaluator { source, .. }) => {
                    return Err(SearchError::Evaluator {
                        source,
                        trace,
                    });
                }
                Err(other) => return Err(other),
            }
        }

        let chosen = select_block(&candidate_deltas, params.tie_tolerance)?;
        let score_after = removed_by_block[&chosen];
        let accepted = score_after >= floor;
        trace.push(IterationRecord {
            iteration,
            candidate_deltas,
            chosen,
            score_after,
            accepted,
        });
        if !accepted {
            break;
        }
        current = current.without(chosen).expect("chosen is retained");
        current_score = score_after;
        skipped_order.push(chosen);
    }

    Ok(SkipConfig {
        model_id,
        total_blocks,
        skipped: skipped_order,
        lambda: params.lambda,
        max_remove: params.max_remove,
        metric,
        full_score,
        final_score: current_score,
        trace,
    })
}

/// Best retained set and score at one cardinality.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub retained: BlockSet,
    pub score: f64,
}

/// Exhaustive enumeration of all `2^L` retained subsets, keeping the best
/// score per retained-set cardinality. Score ties resolve to the
/// lexicographically largest skipped list, mirroring the reverse
/// preference. The result is independent of enumeration order.
pub fn brute_force_oracle(
    evaluator: &dyn Evaluator,
    max_blocks_for_exhaustive: usize,
) -> Result<BTreeMap<usize, OracleEntry>, SearchError> {
    let total_blocks = evaluator.total_blocks();
    if total_blocks > max_blocks_for_exhaustive {
        return Err(SearchError::TooManyBlocks {
            total_blocks,
            limit: max_blocks_for_exhaustive,
        });
    }
    let mut best: BTreeMap<usize, (OracleEntry, Vec<usize>)> = BTreeMap::new();
    for mask in 0u64..(1u64 << total_blocks) {
        let retained: Vec<usize> = (0..total_blocks).filter(|b| mask & (1 << b) != 0).collect();
        let set = BlockSet::from_retained(total_blocks, retained).expect("valid subset");
        let score = score_value(evaluator, &set, &[])?;
        let skipped = set.skipped();
        let cardinality = set.len();
        let entry = OracleEntry {
            retained: set,
            score,
        };
        match best.get(&cardinality) {
            Some((incumbent, incumbent_skipped))
                if incumbent.score > score
                    || (incumbent.score == score && *incumbent_skipped >= skipped) => {}
            _ => {
                best.insert(cardinality, (entry, skipped));
            }
        }
    }
    Ok(best.into_iter().map(|(k, (e, _))| (k, e)).collect())
}

/// The feedback-free strategies used for motivation comparisons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineStrategy {
    /// Skip every n-th block: indices `n-1, 2n-1, ...`.
    FixedInterval { interval: usize },
    /// Skip the first k blocks.
    Forward { k: usize },
    /// Skip the last k blocks.
    Reverse { k: usize },
    /// Skip k distinct blocks drawn from the pinned generator.
    RandomUneven { k: usize, seed: u64 },
}

impl BaselineStrategy {
    /// Parse the CLI form: `fixed-interval:4`, `forward:8`, `reverse:8`,
    /// `random:8,seed=7`.
    pub fn parse(text: &str) -> Result<Self, SearchError> {
        let fail = |detail: String| SearchError::InvalidStrategy { detail };
        let (kind, rest) = text
            .split_once(':')
            .ok_or_else(|| fail(format!("expected kind:args, got `{text}`")))?;
        let parse_k = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| fail(format!("bad count `{v}` in `{text}`")))
        };
        match kind {
            "fixed-interval" => Ok(Self::FixedInterval {
                interval: parse_k(rest)?,
            }),
            "forward" => Ok(Self::Forward { k: parse_k(rest)? }),
            "reverse" => Ok(Self::Reverse { k: parse_k(rest)? }),
            "random" => {
                let (k, seed) = match rest.split_once(',') {
                    Some((k, seed_part)) => {
                        let seed = seed_part
                            .strip_prefix("seed=")
                            .and_then(|s| s.parse::<u64>().ok())
                            .ok_or_else(|| fail(format!("bad seed in `{text}`")))?;
                        (parse_k(k)?, seed)
                    }
                    None => (parse_k(rest)?, 0),
                };
                Ok(Self::RandomUneven { k, seed })
            }
            other => Err(fail(format!(
                "unknown strategy `{other}` (expected fixed-interval, forward, reverse, random)"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::FixedInterval { interval } => format!("fixed_interval({interval})"),
            Self::Forward { k } => format!("forward({k})"),
            Self::Reverse { k } => format!("reverse({k})"),
            Self::RandomUneven { k, seed } => format!("random_uneven({k},seed={seed})"),
        }
    }

    /// Skipped indices in removal order for a model of `total_blocks`.
    pub fn skipped_blocks(&self, total_blocks: usize) -> Result<Vec<usize>, SearchError> {
        let fail = |detail: String| SearchError::InvalidStrategy { detail };
        match *self {
            Self::FixedInterval { interval } => {
                if interval < 2 {
                    return Err(fail(format!("interval {interval} must be >= 2")));
                }
                Ok((interval - 1..total_blocks).step_by(interval).collect())
            }
            Self::Forward { k } => {
                if k > total_blocks {
                    return Err(fail(format!("k={k} exceeds {total_blocks} blocks")));
                }
                Ok((0..k).collect())
            }
            Self::Reverse { k } => {
                if k > total_blocks {
                    return Err(fail(format!("k={k} exceeds {total_blocks} blocks")));
                }
                // Removal order: deepest first.
                Ok((total_blocks - k..total_blocks).rev().collect())
            }
            Self::RandomUneven { k, seed } => {
                if k > total_blocks {
                    return Err(fail(format!("k={k} exceeds {total_blocks} blocks")));
                }
                let mut rng = SplitMix64::new(seed);
                let mut chosen = Vec::with_capacity(k);
                let mut taken = vec![false; total_blocks];
                while chosen.len() < k {
                    let idx = rng.next_below(total_blocks as u64) as usize;
                    if !taken[idx] {
                        taken[idx] = true;
                        chosen.push(idx);
                    }
                }
                Ok(chosen)
            }
        }
    }
}

/// Score a feedback-free baseline and package it as a [`SkipConfig`] with an
/// empty trace and no lambda gate (`lambda = 0`).
pub fn baseline_search(
    evaluator: &dyn Evaluator,
    strategy: &BaselineStrategy,
) -> Result<SkipConfig, SearchError> {
    let total_blocks = evaluator.total_blocks();
    let skipped = strategy.skipped_blocks(total_blocks)?;
    let full = BlockSet::full(total_blocks);
    let set = BlockSet::from_skipped(total_blocks, &skipped).expect("strategy yields valid set");
    let full_score = score_value(evaluator, &full, &[])?;
    let final_score = score_value(evaluator, &set, &[])?;
    Ok(SkipConfig {
        model_id: evaluator.model_id(),
        total_blocks,
        skipped,
        lambda: 0.0,
        max_remove: total_blocks,
        metric: evaluator.metric_name().to_string(),
        full_score,
        final_score,
        trace: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeletionOrder {
    Forward,
    Reverse,
}

impl DeletionOrder {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::Reverse => "reverse",
        }
    }
}

/// Score the forward or reverse deletion curve: for k = 0..=L, skip the
/// first (or last) k blocks and record the score.
pub fn deletion_curve(
    evaluator: &dyn Evaluator,
    order: DeletionOrder,
) -> Result<Vec<(usize, f64)>, SearchError> {
    let total_blocks = evaluator.total_blocks();
    let mut points = Vec::with_capacity(total_blocks + 1);
    for k in 0..=total_blocks {
        let strategy = match order {
            DeletionOrder::Forward => BaselineStrategy::Forward { k },
            DeletionOrder::Reverse => BaselineStrategy::Reverse { k },
        };
        let skipped = strategy.skipped_blocks(total_blocks)?;
        let set = BlockSet::from_skipped(total_blocks, &skipped).expect("valid");
        points.push((k, score_value(evaluator, &set, &[])?));
    }
    Ok(points)
}
