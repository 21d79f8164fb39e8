//! Persisted skip-search results and their validation.
//!
//! [`SkipConfig`] is the durable artifact of a search run: which blocks were
//! removed (in removal order — it is a log, unlike [`BlockSet`] which is the
//! canonical sorted form), the score floor parameters, and the full
//! per-iteration trace. The JSON layout is fixed: field order follows the
//! struct declarations below, every field is required, unknown fields are
//! rejected, and floats are written with shortest round-trip precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::BlockSet;

/// Validation failures for block sets and skip configurations.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("model has zero blocks")]
    EmptyModel,
    #[error("duplicate block index {index}")]
    DuplicateIndex { index: usize },
    #[error("block index {index} out of range for {total_blocks} blocks")]
    IndexOutOfRange { index: usize, total_blocks: usize },
    #[error("lambda {lambda} outside [0, 1]")]
    LambdaOutOfRange { lambda: f64 },
    #[error("{skipped} blocks skipped but max_remove is {max_remove}")]
    BudgetExceeded { skipped: usize, max_remove: usize },
    #[error("final score {final_score} below floor {floor} (lambda * full score)")]
    FloorViolated { final_score: f64, floor: f64 },
    #[error("non-finite value in field `{field}`")]
    NonFinite { field: &'static str },
    #[error("invalid trace at iteration {iteration}: {detail}")]
    InvalidTrace { iteration: usize, detail: String },
}

/// Reading a serialized config can fail three ways: malformed JSON, a
/// schema mismatch (missing/unknown field, wrong type), or a config that
/// parses but violates an invariant.
#[derive(Debug, Error)]
pub enum ConfigParseError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: {message}")]
    Schema { message: String },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

/// One greedy iteration: every candidate's delta, the block picked, the
/// score the model would have after removing it, and whether the removal
/// was accepted against the lambda floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Block index -> score delta from removing that block (serialized with
    /// string keys, sorted ascending).
    pub candidate_deltas: BTreeMap<usize, f64>,
    pub chosen: usize,
    pub score_after: f64,
    pub accepted: bool,
}

impl IterationRecord {
    /// Check the selection rule against the recorded deltas: `chosen` must
    /// attain the minimum delta, and among exact ties it must be the block
    /// with the largest index. Comparisons are exact, no tolerance.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |detail: String| ConfigError::InvalidTrace {
            iteration: self.iteration,
            detail,
        };
        if self.candidate_deltas.is_empty() {
            return Err(invalid("empty candidate_deltas".into()));
        }
        for (&block, &delta) in &self.candidate_deltas {
            if !delta.is_finite() {
                return Err(invalid(format!("non-finite delta for block {block}")));
            }
        }
        if !self.score_after.is_finite() {
            return Err(ConfigError::NonFinite {
                field: "score_after",
            });
        }
        let chosen_delta = *self
            .candidate_deltas
            .get(&self.chosen)
            .ok_or_else(|| invalid(format!("chosen block {} not a candidate", self.chosen)))?;
        let min = self
            .candidate_deltas
            .values()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if chosen_delta != min {
            return Err(invalid(format!(
                "chosen block {} has delta {} but the minimum is {}",
                self.chosen, chosen_delta, min
            )));
        }
        let largest_tied = self
            .candidate_deltas
            .iter()
            .filter(|(_, &d)| d == min)
            .map(|(&b, _)| b)
            .max()
            .expect("non-empty");
        if self.chosen != largest_tied {
            return Err(invalid(format!(
                "tie at delta {} resolved to block {} instead of largest index {}",
                min, self.chosen, largest_tied
            )));
        }
        Ok(())
    }
}

/// The persisted result of a skip search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipConfig {
    pub model_id: String,
    pub total_blocks: usize,
    /// Skipped block indices in removal order.
    pub skipped: Vec<usize>,
    pub lambda: f64,
    pub max_remove: usize,
    pub metric: String,
    pub full_score: f64,
    pub final_score: f64,
    pub trace: Vec<IterationRecord>,
}

impl SkipConfig {
    /// Fraction of blocks skipped, in `[0, 1]`.
    pub fn sparsity(&self) -> f64 {
        self.skipped.len() as f64 / self.total_blocks as f64
    }

    /// Sparsity as a percentage, the way reports quote it.
    pub fn sparsity_pct(&self) -> f64 {
        100.0 * self.sparsity()
    }

    /// The canonical retained set implied by `skipped`.
    pub fn retained_set(&self) -> Result<BlockSet, ConfigError> {
        BlockSet::from_skipped(self.total_blocks, &self.skipped)
    }

    /// Confirm every invariant. Idempotent; exact comparisons throughout.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.total_blocks == 0 {
            return Err(ConfigError::EmptyModel);
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::LambdaOutOfRange {
                lambda: self.lambda,
            });
        }
        self.retained_set()?;
        if self.skipped.len() > self.max_remove {
            return Err(ConfigError::BudgetExceeded {
                skipped: self.skipped.len(),
                max_remove: self.max_remove,
            });
        }
        if !self.full_score.is_finite() {
            return Err(ConfigError::NonFinite {
                field: "full_score",
            });
        }
        if !self.final_score.is_finite() {
            return Err(ConfigError::NonFinite {
                field: "final_score",
            });
        }
        if !self.skipped.is_empty() && self.final_score < self.lambda * self.full_score {
            return Err(ConfigError::FloorViolated {
                final_score: self.final_score,
                floor: self.lambda * self.full_score,
            });
        }
        self.validate_trace()
    }

    /// Trace consistency: records are numbered 1..=n, each satisfies the
    /// argmin-with-largest-index rule, every accepted step respects the
    /// lambda floor, only the last record may be a rejection, and the
    /// accepted chosen blocks are exactly `skipped` in order. An empty trace
    /// is fine (baseline strategies record no iterations).
    fn validate_trace(&self) -> Result<(), ConfigError> {
        if self.trace.is_empty() {
            return Ok(());
        }
        let mut accepted_order = Vec::new();
        let last = self.trace.len() - 1;
        for (pos, record) in self.trace.iter().enumerate() {
            record.validate()?;
            let invalid = |detail: String| ConfigError::InvalidTrace {
                iteration: record.iteration,
                detail,
            };
            if record.iteration != pos + 1 {
                return Err(invalid(format!("expected iteration {}", pos + 1)));
            }
            if record.chosen >= self.total_blocks {
                return Err(ConfigError::IndexOutOfRange {
                    index: record.chosen,
                    total_blocks: self.total_blocks,
                });
            }
            if record.accepted {
                if record.score_after < self.lambda * self.full_score {
                    return Err(invalid(format!(
                        "accepted score {} below floor {}",
                        record.score_after,
                        self.lambda * self.full_score
                    )));
                }
                accepted_order.push(record.chosen);
            } else if pos != last {
                return Err(invalid("rejection must terminate the trace".into()));
            }
        }
        if accepted_order != self.skipped {
            return Err(ConfigError::InvalidTrace {
                iteration: self.trace.len(),
                detail: format!(
                    "accepted removals {:?} do not match skipped list {:?}",
                    accepted_order, self.skipped
                ),
            });
        }
        Ok(())
    }

    /// Serialize to the fixed JSON layout. The config is validated first.
    pub fn to_json(&self) -> Result<String, ConfigError> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self).expect("validated config serializes");
        text.push('\n');
        Ok(text)
    }

    /// Parse and validate a serialized config.
    pub fn from_json(text: &str) -> Result<Self, ConfigParseError> {
        let config: SkipConfig = serde_json::from_str(text).map_err(|err| {
            if err.classify() == serde_json::error::Category::Data {
                ConfigParseError::Schema {
                    message: err.to_string(),
                }
            } else {
                ConfigParseError::Parse {
                    line: err.line(),
                    column: err.column(),
                    message: err.to_string(),
                }
            }
        })?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> SkipConfig {
        SkipConfig {
            model_id: "toy:seed=42,L=8,d=32,heads=4,vocab=64".into(),
            total_blocks: 8,
            skipped: vec![6, 5],
            lambda: 1.0,
            max_remove: 4,
            metric: "top1".into(),
            full_score: 1.0,
            final_score: 1.0,
            trace: vec![
                IterationRecord {
                    iteration: 1,
                    candidate_deltas: BTreeMap::from([(5, 0.0), (6, 0.0), (7, 0.25)]),
                    chosen: 6,
                    score_after: 1.0,
                    accepted: true,
                },
                IterationRecord {
                    iteration: 2,
                    candidate_deltas: BTreeMap::from([(5, 0.0), (7, 0.25)]),
                    chosen: 5,
                    score_after: 1.0,
                    accepted: true,
                },
            ],
        }
    }

    #[test]
    fn sparsity_examples() {
        let mut config = minimal_config();
        config.total_blocks = 32;
        config.max_remove = 16;
        config.trace.clear();
        config.skipped = vec![29, 16, 27, 21, 28, 24, 20, 17, 2, 6, 7];
        assert!((config.sparsity() - 0.34375).abs() < 1e-15);
        assert_eq!(format!("{:.2}", config.sparsity_pct()), "34.38");

        config.skipped.clear();
        assert_eq!(config.sparsity(), 0.0);

        config.skipped = (0..10).collect();
        assert!((config.sparsity() - 0.3125).abs() < 1e-15);
        assert_eq!(format!("{:.2}", config.sparsity_pct()), "31.25");
    }

    #[test]
    fn validate_accepts_well_formed_config() {
        minimal_config().validate().unwrap();
    }

    #[test]
    fn validate_rejects_duplicates_and_range() {
        let mut config = minimal_config();
        config.skipped = vec![3, 3];
        config.trace.clear();
        assert_eq!(
            config.validate(),
            Err(ConfigError::DuplicateIndex { index: 3 })
        );

        let mut config = minimal_config();
        config.skipped = vec![8];
        config.trace.clear();
        assert_eq!(
            config.validate(),
            Err(ConfigError::IndexOutOfRange {
                index: 8,
                total_blocks: 8
            })
        );
    }

    #[test]
    fn validate_rejects_bad_lambda() {
        let mut config = minimal_config();
        config.lambda = 1.2;
        assert_eq!(
            config.validate(),
            Err(ConfigError::LambdaOutOfRange { lambda: 1.2 })
        );
        config.lambda = f64::NAN;
        assert!(matches!(
            config.validate(),
            Err(ConfigError::LambdaOutOfRange { .. })
        ));
    }

    #[test]
    fn validate_rejects_budget_and_floor_violations() {
        let mut config = minimal_config();
        config.max_remove = 1;
        assert_eq!(
            config.validate(),
            Err(ConfigError::BudgetExceeded {
                skipped: 2,
                max_remove: 1
            })
        );

        let mut config = minimal_config();
        config.final_score = 0.9;
        let err = config.validate().unwrap_err();
        assert!(matches!(err, ConfigError::FloorViolated { .. }));
    }

    #[test]
    fn validate_rejects_wrong_tie_break() {
        let mut config = minimal_config();
        // Block 6 ties block 5 at the minimum but 5 was chosen first.
        config.trace[0].chosen = 5;
        config.skipped = vec![5, 5];
        let err = config.validate().unwrap_err();
        assert!(matches!(err, ConfigError::InvalidTrace { iteration: 1, .. }));
    }

    #[test]
    fn validate_rejects_non_minimal_choice() {
        let mut config = minimal_config();
        config.trace[1].chosen = 7;
        config.skipped = vec![6, 7];
        config.final_score = 0.75;
        config.lambda = 0.5;
        let err = config.validate().unwrap_err();
        assert!(matches!(err, ConfigError::InvalidTrace { iteration: 2, .. }));
    }

    #[test]
    fn validate_rejects_mid_trace_rejection() {
        let mut config = minimal_config();
        config.trace[0].accepted = false;
        config.skipped = vec![5];
        let err = config.validate().unwrap_err();
        assert!(matches!(err, ConfigError::InvalidTrace { iteration: 1, .. }));
    }

    #[test]
    fn json_round_trip_is_identity() {
        let config = minimal_config();
        let text = config.to_json().unwrap();
        let back = SkipConfig::from_json(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn json_key_order_is_fixed() {
        let text = minimal_config().to_json().unwrap();
        let positions: Vec<usize> = [
            "\"model_id\"",
            "\"total_blocks\"",
            "\"skipped\"",
            "\"lambda\"",
            "\"max_remove\"",
            "\"metric\"",
            "\"full_score\"",
            "\"final_score\"",
            "\"trace\"",
        ]
        .iter()
        .map(|k| text.find(k).expect("key present"))
        .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn out_of_range_lambda_in_json_is_rejected() {
        let text = minimal_config().to_json().unwrap().replace(
            "\"lambda\": 1.0",
            "\"lambda\": 2.0",
        );
        match SkipConfig::from_json(&text) {
            Err(ConfigParseError::Invalid(ConfigError::LambdaOutOfRange { lambda })) => {
                assert_eq!(lambda, 2.0)
            }
            other => panic!("expected lambda range error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_a_schema_error() {
        let mut value: serde_json::Value =
            serde_json::from_str(&minimal_config().to_json().unwrap()).unwrap();
        value.as_object_mut().unwrap().remove("lambda");
        let err = SkipConfig::from_json(&value.to_string()).unwrap_err();
        match err {
            ConfigParseError::Schema { message } => assert!(message.contains("lambda")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_a_schema_error() {
        let mut value: serde_json::Value =
            serde_json::from_str(&minimal_config().to_json().unwrap()).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("extra".into(), serde_json::json!(1));
        let err = SkipConfig::from_json(&value.to_string()).unwrap_err();
        match err {
            ConfigParseError::Schema { message } => assert!(message.contains("extra")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line_and_column() {
        let err = SkipConfig::from_json("{\n  \"model_id\": \"x\",,\n}").unwrap_err();
        match err {
            ConfigParseError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn removal_order_round_trips_verbatim() {
        // Removal-order list in the shape reports use: 11 skipped out of 32.
        let skipped = vec![29, 16, 27, 21, 28, 24, 20, 17, 2, 6, 7];
        let config = SkipConfig {
            model_id: "external".into(),
            total_blocks: 32,
            skipped: skipped.clone(),
            lambda: 1.0,
            max_remove: 16,
            metric: "top1".into(),
            full_score: 1.0,
            final_score: 1.0,
            trace: vec![],
        };
        let back = SkipConfig::from_json(&config.to_json().unwrap()).unwrap();
        assert_eq!(back.skipped, skipped);
        assert_eq!(back.skipped.len(), 11);
    }
}
