//! Latency measurement and report rendering.
//!
//! Wall-clock numbers are noisy, so the instrumented multiply-accumulate
//! count is the primary efficiency signal (it is exact and timing-free);
//! latency is reported as median with p10/p90 over repeated full passes.
//! Timed runs execute strictly sequentially.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::BlockSet;
use crate::dataset::TokenSequence;
use crate::toy::{ToyError, ToyModel};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least one repetition")]
    ZeroReps,
    #[error("no inputs to benchmark")]
    EmptyInputs,
    #[error("report has no rows")]
    EmptyReport,
    #[error("baseline median latency is zero")]
    ZeroBaseline,
    #[error("unknown report format `{0}` (expected table, csv, json)")]
    UnknownFormat(String),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error("malformed report csv at line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Latency of one configuration: percentiles over `reps` timed passes plus
/// the exact MAC count of a single pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_s: f64,
    pub p10_s: f64,
    pub p90_s: f64,
    pub reps: usize,
    pub warmup: usize,
    pub ops: u64,
}

/// One line of a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub score: f64,
    pub sparsity_pct: f64,
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        match text.to_lowercase().as_str() {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(BenchError::UnknownFormat(other.to_string())),
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Time `reps` full passes (every input, one forward each) after `warmup`
/// uncounted passes. The MAC tally comes from the closed form, which the
/// instrumented forward is tested to match exactly.
pub fn measure_latency(
    model: &ToyModel,
    inputs: &[TokenSequence],
    retained: &BlockSet,
    reps: usize,
    warmup: usize,
) -> Result<LatencyStats, BenchError> {
    if reps == 0 {
        return Err(BenchError::ZeroReps);
    }
    if inputs.is_empty() {
        return Err(BenchError::EmptyInputs);
    }
    for _ in 0..warmup {
        for input in inputs {
            model.forward(input, retained)?;
        }
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for input in inputs {
            model.forward(input, retained)?;
        }
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let ops = inputs
        .iter()
        .map(|i| model.theoretical_ops(i.len(), retained.len()))
        .sum();
    Ok(LatencyStats {
        median_s: percentile(&times, 0.5),
        p10_s: percentile(&times, 0.1),
        p90_s: percentile(&times, 0.9),
        reps,
        warmup,
        ops,
    })
}

/// Latency reduction of `b` relative to baseline `a`, in percent.
pub fn compare_latency(a: &LatencyStats, b: &LatencyStats) -> Result<f64, BenchError> {
    if a.median_s == 0.0 {
        return Err(BenchError::ZeroBaseline);
    }
    Ok(100.0 * (a.median_s - b.median_s) / a.median_s)
}

const CSV_HEADER: &str = "method,score,sparsity_pct,latency_median_s,latency_p10_s,latency_p90_s,ops";

/// Render rows sorted by sparsity. The table format quotes percentages to
/// 2 decimals and latencies to 4, the way the comparison tables do; csv and
/// json keep full float precision so they round-trip exactly.
pub fn build_report(rows: &[ReportRow], format: ReportFormat) -> Result<String, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::EmptyReport);
    }
    let mut rows: Vec<ReportRow> = rows.to_vec();
    rows.sort_by(|a, b| a.sparsity_pct.total_cmp(&b.sparsity_pct));
    match format {
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<28} {:>10} {:>8} {:>12} {:>12} {:>12} {:>14}\n",
                "method", "score", "sps_pct", "lat_med_s", "lat_p10_s", "lat_p90_s", "ops"
            ));
            for r in &rows {
                out.push_str(&format!(
                    "{:<28} {:>10.4} {:>8.2} {:>12.4} {:>12.4} {:>12.4} {:>14}\n",
                    r.method,
                    r.score,
                    r.sparsity_pct,
                    r.latency.median_s,
                    r.latency.p10_s,
                    r.latency.p90_s,
                    r.latency.ops
                ));
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.method,
                    r.score,
                    r.sparsity_pct,
                    r.latency.median_s,
                    r.latency.p10_s,
                    r.latency.p90_s,
                    r.latency.ops
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(&rows).expect("rows serialize");
            text.push('\n');
            Ok(text)
        }
    }
}

/// Parse the csv emitted by [`build_report`] back into rows.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>, BenchError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => {
            return Err(BenchError::Csv {
                line: 1,
                message: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(BenchError::Csv {
                line: idx + 1,
                message: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let bad = |message: String| BenchError::Csv {
            line: idx + 1,
            message,
        };
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("bad float `{s}`")))
        };
        rows.push(ReportRow {
            method: fields[0].to_string(),
            score: parse_f(fields[1])?,
            sparsity_pct: parse_f(fields[2])?,
            latency: LatencyStats {
                median_s: parse_f(fields[3])?,
                p10_s: parse_f(fields[4])?,
                p90_s: parse_f(fields[5])?,
                reps: 0,
                warmup: 0,
                ops: fields[6]
                    .parse::<u64>()
                    .map_err(|_| bad(format!("bad ops `{}`", fields[6])))?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::ToyModelSpec;

    fn stats(median: f64) -> LatencyStats {
        LatencyStats {
            median_s: median,
            p10_s: median * 0.9,
            p90_s: median * 1.1,
            reps: 30,
            warmup: 3,
            ops: 1000,
        }
    }

    #[test]
    fn compare_latency_reproduces_published_reductions() {
        // Latency pairs from the real-world deployment tables.
        let cases = [
            (0.6006, 0.3280, 45.4),
            (1.4265, 1.0170, 28.7),
            (1.1293, 0.7106, 37.1),
        ];
        for (full, skip, expected) in cases {
            let got = compare_latency(&stats(full), &stats(skip)).unwrap();
            assert!(
                (got - expected).abs() < 0.1,
                "{full} -> {skip}: got {got}, expected ~{expected}"
            );
        }
    }

    #[test]
    fn compare_latency_identical_is_zero_and_zero_baseline_errors() {
        let s = stats(0.5);
        assert_eq!(compare_latency(&s, &s).unwrap(), 0.0);
        assert!(matches!(
            compare_latency(&stats(0.0), &s),
            Err(BenchError::ZeroBaseline)
        ));
    }

    #[test]
    fn percentiles_are_ordered() {
        let model = ToyModel::build(ToyModelSpec {
            n_blocks: 2,
            dim: 16,
            n_heads: 2,
            vocab: 16,
            ..ToyModelSpec::default()
        })
        .unwrap();
        let inputs = vec![TokenSequence::new(vec![1, 2, 3]).unwrap()];
        let full = BlockSet::full(2);
        let stats = measure_latency(&model, &inputs, &full, 5, 1).unwrap();
        assert!(stats.p10_s <= stats.median_s);
        assert!(stats.median_s <= stats.p90_s);
        assert_eq!(stats.reps, 5);
        assert_eq!(stats.warmup, 1);
        assert_eq!(stats.ops, model.theoretical_ops(3, 2));
    }

    #[test]
    fn minimum_reps_accepted_zero_rejected() {
        let model = ToyModel::build(ToyModelSpec {
            n_blocks: 1,
            dim: 8,
            n_heads: 1,
            vocab: 4,
            ..ToyModelSpec::default()
        })
        .unwrap();
        let inputs = vec![TokenSequence::new(vec![1]).unwrap()];
        let full = BlockSet::full(1);
        assert!(measure_latency(&model, &inputs, &full, 3, 0).is_ok());
        assert!(matches!(
            measure_latency(&model, &inputs, &full, 0, 1),
            Err(BenchError::ZeroReps)
        ));
    }

    #[test]
    fn table_formats_percentages_to_two_decimals() {
        let row = ReportRow {
            method: "high_perf".into(),
            score: 0.875,
            sparsity_pct: 100.0 * 11.0 / 32.0,
            latency: stats(0.4140),
        };
        let text = build_report(&[row], ReportFormat::Table).unwrap();
        assert!(text.contains("34.38"), "table was:\n{text}");
        assert!(text.contains("0.4140"));

        let full_row = ReportRow {
            method: "full".into(),
            score: 1.0,
            sparsity_pct: 0.0,
            latency: stats(0.6006),
        };
        let text = build_report(&[full_row], ReportFormat::Table).unwrap();
        assert!(text.contains("0.00"));
    }

    #[test]
    fn report_rows_sort_by_sparsity() {
        let rows = vec![
            ReportRow {
                method: "b".into(),
                score: 0.5,
                sparsity_pct: 50.0,
                latency: stats(0.2),
            },
            ReportRow {
                method: "a".into(),
                score: 1.0,
                sparsity_pct: 0.0,
                latency: stats(0.4),
            },
        ];
        let text = build_report(&rows, ReportFormat::Csv).unwrap();
        let a = text.find("\na,").unwrap();
        let b = text.find("\nb,").unwrap();
        assert!(a < b);
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![
            ReportRow {
                method: "full".into(),
                score: 1.0,
                sparsity_pct: 0.0,
                latency: stats(0.6006),
            },
            ReportRow {
                method: "skip".into(),
                score: 0.96875,
                sparsity_pct: 34.375,
                latency: stats(0.328),
            },
        ];
        let text = build_report(&rows, ReportFormat::Csv).unwrap();
        let back = parse_report_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].score, 1.0);
        assert_eq!(back[1].sparsity_pct, 34.375);
        assert_eq!(back[1].latency.median_s, 0.328);
    }

    #[test]
    fn empty_report_rejected() {
        assert!(matches!(
            build_report(&[], ReportFormat::Table),
            Err(BenchError::EmptyReport)
        ));
    }

    #[test]
    fn format_parsing() {
        assert_eq!(ReportFormat::parse("table").unwrap(), ReportFormat::Table);
        assert_eq!(ReportFormat::parse("CSV").unwrap(), ReportFormat::Csv);
        assert!(ReportFormat::parse("yaml").is_err());
    }
}
