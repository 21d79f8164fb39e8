//! The scoring contract the search runs against.
//!
//! An [`Evaluator`] maps a retained [`BlockSet`] to a [`MetricScore`] over
//! some calibration data. Scores must be deterministic within a session:
//! the greedy comparisons are meaningless otherwise. Adapters that decode
//! stochastically must seed themselves.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::block::BlockSet;
use crate::config::ConfigError;
use crate::dataset::{CalibrationSet, Gold, TaskKind};
use crate::metrics::{cider, set_precision, top1_accuracy, MetricError, MetricKind, MetricScore};
use crate::toy::{ToyError, ToyModel, DEFAULT_MAX_NEW};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric `{metric}` does not match {task} gold data")]
    TaskMetricMismatch { metric: String, task: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no table entry for retained set [{key}]")]
    MissingTableEntry { key: String },
    #[error("failed to spawn adapter `{command}`: {source}")]
    SpawnFailure {
        command: String,
        source: std::io::Error,
    },
    #[error("adapter protocol error: {reason} (line: {line:?})")]
    Protocol { line: String, reason: String },
    #[error("adapter timed out after {seconds} s")]
    AdapterTimeout { seconds: u64 },
    #[error("adapter reported an error for request {id}: {message}")]
    Adapter { id: u64, message: String },
}

/// Deterministic scoring of retained block sets.
pub trait Evaluator: Send + Sync {
    fn total_blocks(&self) -> usize;
    fn metric_name(&self) -> &str;
    fn model_id(&self) -> String;
    fn score(&self, retained: &BlockSet) -> Result<MetricScore, EvalError>;
}

pub type SharedEvaluator = Arc<dyn Evaluator>;

/// Scores a toy model on a calibration set with the metric matching the
/// data's task. Safe for concurrent `score` calls.
pub struct ToyEvaluator {
    model: Arc<ToyModel>,
    data: CalibrationSet,
    metric: MetricKind,
}

impl ToyEvaluator {
    pub fn new(
        model: Arc<ToyModel>,
        data: CalibrationSet,
        metric: MetricKind,
    ) -> Result<Self, EvalError> {
        let matches = matches!(
            (metric, data.task()),
            (MetricKind::Top1, TaskKind::Single)
                | (MetricKind::SetPrecision, TaskKind::Multi)
                | (MetricKind::Cider, TaskKind::Caption)
        );
        if !matches {
            return Err(EvalError::TaskMetricMismatch {
                metric: metric.name().to_string(),
                task: data.task().name().to_string(),
            });
        }
        if data.task() == TaskKind::Multi {
            for (i, example) in data.examples().iter().enumerate() {
                if let Gold::Labels(gold) = &example.gold {
                    if gold.is_empty() {
                        return Err(EvalError::Metric(MetricError::EmptyGoldSet { example: i }));
                    }
                }
            }
        }
        Ok(Self {
            model,
            data,
            metric,
        })
    }

    pub fn data(&self) -> &CalibrationSet {
        &self.data
    }

    pub fn model(&self) -> &Arc<ToyModel> {
        &self.model
    }
}

impl Evaluator for ToyEvaluator {
    fn total_blocks(&self) -> usize {
        self.model.n_blocks()
    }

    fn metric_name(&self) -> &str {
        self.metric.name()
    }

    fn model_id(&self) -> String {
        self.model.id()
    }

    fn score(&self, retained: &BlockSet) -> Result<MetricScore, EvalError> {
        let class_vocab = self.model.class_vocab();
        match self.data.task() {
            TaskKind::Single => {
                let mut preds = Vec::with_capacity(self.data.len());
                let mut golds = Vec::with_capacity(self.data.len());
                for example in self.data.examples() {
                    preds.push(self.model.classify(&example.tokens, retained, &class_vocab)?);
                    match &example.gold {
                        Gold::Label(gold) => golds.push(gold.clone()),
                        _ => unreachable!("task checked at construction"),
                    }
                }
                Ok(top1_accuracy(&preds, &golds)?)
            }
            TaskKind::Multi => {
                let mut preds = Vec::with_capacity(self.data.len());
                let mut golds = Vec::with_capacity(self.data.len());
                for example in self.data.examples() {
                    let gold = match &example.gold {
                        Gold::Labels(gold) => gold.clone(),
                        _ => unreachable!("task checked at construction"),
                    };
                    // Predict as many labels as the gold set holds.
                    let k = gold.len().min(class_vocab.len());
                    preds.push(self.model.predict_set(&example.tokens, retained, &class_vocab, k)?);
                    golds.push(gold);
                }
                Ok(set_precision(&preds, &golds)?)
            }
            TaskKind::Caption => {
                let mut candidates = Vec::with_capacity(self.data.len());
                let mut refs = Vec::with_capacity(self.data.len());
                for example in self.data.examples() {
                    candidates.push(self.model.generate_greedy(
                        &example.tokens,
                        retained,
                        DEFAULT_MAX_NEW,
                    )?);
                    match &example.gold {
                        Gold::References(r) => refs.push(r.clone()),
                        _ => unreachable!("task checked at construction"),
                    }
                }
                Ok(cider(&candidates, &refs)?)
            }
        }
    }
}

/// Fixed score table keyed by canonical retained sets. Used by tests, the
/// oracle examples, and dry runs.
pub struct TableEvaluator {
    total_blocks: usize,
    metric: String,
    table: HashMap<String, f64>,
}

impl TableEvaluator {
    pub fn new(
        total_blocks: usize,
        metric: impl Into<String>,
        entries: impl IntoIterator<Item = (BlockSet, f64)>,
    ) -> Self {
        Self {
            total_blocks,
            metric: metric.into(),
            table: entries.into_iter().map(|(s, v)| (s.key(), v)).collect(),
        }
    }
}

impl Evaluator for TableEvaluator {
    fn total_blocks(&self) -> usize {
        self.total_blocks
    }

    fn metric_name(&self) -> &str {
        &self.metric
    }

    fn model_id(&self) -> String {
        "table".to_string()
    }

    fn score(&self, retained: &BlockSet) -> Result<MetricScore, EvalError> {
        let key = retained.key();
        let value = *self
            .table
            .get(&key)
            .ok_or(EvalError::MissingTableEntry { key })?;
        Ok(MetricScore::new(value, self.metric.clone(), 1))
    }
}

/// Cache hit/miss counters; `misses` equals the number of underlying
/// evaluator calls made through the wrapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Memoizing wrapper. The key is the canonical sorted retained list, so
/// permutations of one set share an entry. Concurrent scoring may compute a
/// value twice (last write wins — values are equal by determinism) but a
/// cached value is never recomputed.
pub struct CachedEvaluator {
    inner: SharedEvaluator,
    cache: Mutex<HashMap<String, MetricScore>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CachedEvaluator {
    pub fn new(inner: SharedEvaluator) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

impl Evaluator for CachedEvaluator {
    fn total_blocks(&self) -> usize {
        self.inner.total_blocks()
    }

    fn metric_name(&self) -> &str {
        self.inner.metric_name()
    }

    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    fn score(&self, retained: &BlockSet) -> Result<MetricScore, EvalError> {
        let key = retained.key();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let score = self.inner.score(retained)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, score.clone());
        Ok(score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::ToyModelSpec;

    fn toy_eval(task: TaskKind, metric: MetricKind) -> Result<ToyEvaluator, EvalError> {
        let model = Arc::new(ToyModel::build(ToyModelSpec {
            n_blocks: 4,
            dim: 16,
            n_heads: 4,
            vocab: 32,
            ..ToyModelSpec::default()
        })
        .unwrap());
        let data = model.gen_calibration(task, 6, 3).unwrap();
        ToyEvaluator::new(model, data, metric)
    }

    #[test]
    fn full_model_scores_one_on_self_labeled_top1() {
        let eval = toy_eval(TaskKind::Single, MetricKind::Top1).unwrap();
        let score = eval.score(&BlockSet::full(4)).unwrap();
        assert_eq!(score.value, 1.0);
        assert_eq!(score.metric, "top1");
        assert_eq!(score.n_examples, 6);
    }

    #[test]
    fn full_model_scores_one_on_self_labeled_set_precision() {
        let eval = toy_eval(TaskKind::Multi, MetricKind::SetPrecision).unwrap();
        assert_eq!(eval.score(&BlockSet::full(4)).unwrap().value, 1.0);
    }

    #[test]
    fn repeated_scores_are_identical() {
        let eval = toy_eval(TaskKind::Caption, MetricKind::Cider).unwrap();
        let set = BlockSet::from_skipped(4, &[1]).unwrap();
        let a = eval.score(&set).unwrap();
        let b = eval.score(&set).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn task_metric_mismatch_is_rejected() {
        let err = toy_eval(TaskKind::Single, MetricKind::Cider).unwrap_err();
        assert!(matches!(err, EvalError::TaskMetricMismatch { .. }));
    }

    #[test]
    fn cache_hits_and_misses_are_counted() {
        let inner: SharedEvaluator = Arc::new(toy_eval(TaskKind::Single, MetricKind::Top1).unwrap());
        let cached = CachedEvaluator::new(inner);
        let set = BlockSet::from_skipped(4, &[2]).unwrap();
        cached.score(&set).unwrap();
        cached.score(&set).unwrap();
        let stats = cached.stats();
        assert_eq!(stats, CacheStats { hits: 1, misses: 1 });
    }

    #[test]
    fn cache_key_is_canonical_across_permutations() {
        let inner: SharedEvaluator = Arc::new(toy_eval(TaskKind::Single, MetricKind::Top1).unwrap());
        let cached = CachedEvaluator::new(inner);
        let a = BlockSet::from_retained(4, [3, 1]).unwrap();
        let b = BlockSet::from_retained(4, [1, 3]).unwrap();
        cached.score(&a).unwrap();
        cached.score(&b).unwrap();
        assert_eq!(cached.stats(), CacheStats { hits: 1, misses: 1 });
    }

    #[test]
    fn cached_equals_uncached_on_all_subsets() {
        let inner = Arc::new(toy_eval(TaskKind::Single, MetricKind::Top1).unwrap());
        let cached = CachedEvaluator::new(inner.clone() as SharedEvaluator);
        for mask in 0u32..16 {
            let retained: Vec<usize> = (0..4).filter(|b| mask & (1 << b) != 0).collect();
            let set = BlockSet::from_retained(4, retained).unwrap();
            assert_eq!(
                cached.score(&set).unwrap(),
                inner.score(&set).unwrap(),
                "mask {mask}"
            );
        }
    }

    #[test]
    fn table_evaluator_reports_missing_entries() {
        let table = TableEvaluator::new(
            2,
            "stub",
            [(BlockSet::full(2), 0.9)],
        );
        assert_eq!(table.score(&BlockSet::full(2)).unwrap().value, 0.9);
        let missing = BlockSet::from_skipped(2, &[0]).unwrap();
        assert!(matches!(
            table.score(&missing),
            Err(EvalError::MissingTableEntry { .. })
        ));
    }
}
