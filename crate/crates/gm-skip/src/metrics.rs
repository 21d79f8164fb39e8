//! Task metrics behind a uniform higher-is-better interface.
//!
//! Three metrics are provided: top-1 accuracy for single-label
//! classification, set-level precision for multi-label prediction, and a
//! corpus-level CIDEr score for captions. All of them aggregate per-example
//! scores by summing in sorted order, so shuffling the (prediction, gold)
//! pairs cannot change the value even in the last float bit.
//!
//! CIDEr here is the classic variant: cosine similarity of TF-IDF weighted
//! n-gram vectors for n = 1..4, uniform weights, scaled by 10, no length
//! penalty. The IDF table is built from the reference sets of the corpus
//! being scored: `idf(w) = max(0, ln(|I| / (1 + df(w))))` where `df(w)`
//! counts the examples whose reference set contains `w`. Note the floor
//! zeroes every reference n-gram's weight when the corpus has fewer than
//! three examples, so tiny corpora legitimately score 0.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("got {predictions} predictions but {golds} gold entries")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("example {example} has an empty gold label set")]
    EmptyGoldSet { example: usize },
    #[error("empty scoring corpus")]
    EmptyCorpus,
    #[error("example {example} has no references")]
    EmptyReferenceSet { example: usize },
    #[error("unknown metric `{name}`; available: {available}")]
    UnknownMetric { name: String, available: String },
    #[error("labels must be non-empty after trimming")]
    EmptyLabel,
    #[error("caption token {token:?} contains whitespace")]
    TokenHasWhitespace { token: String },
}

/// A scalar metric value, higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricScore {
    pub value: f64,
    pub metric: String,
    pub n_examples: usize,
}

impl MetricScore {
    pub fn new(value: f64, metric: impl Into<String>, n_examples: usize) -> Self {
        Self {
            value,
            metric: metric.into(),
            n_examples,
        }
    }
}

/// A class label, normalized (trimmed, case-folded) at construction so that
/// equality is the metric's equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(String);

impl Label {
    pub fn new(value: impl AsRef<str>) -> Result<Self, MetricError> {
        let normalized = value.as_ref().trim().to_lowercase();
        if normalized.is_empty() {
            return Err(MetricError::EmptyLabel);
        }
        Ok(Self(normalized))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// A set of labels (no duplicates by construction).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet(BTreeSet<Label>);

impl LabelSet {
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Self {
        Self(labels.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.0.contains(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.0.iter()
    }

    fn intersection_size(&self, other: &LabelSet) -> usize {
        self.0.iter().filter(|l| other.0.contains(*l)).count()
    }
}

/// A tokenized caption. May be empty (a degenerate generation); tokens never
/// contain whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Caption {
    tokens: Vec<String>,
}

impl Caption {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, MetricError> {
        if let Some(token) = tokens.iter().find(|t| t.chars().any(char::is_whitespace)) {
            return Err(MetricError::TokenHasWhitespace {
                token: token.clone(),
            });
        }
        Ok(Self { tokens })
    }

    /// Tokenize raw text: lowercase, drop the punctuation characters
    /// `.,!?;:"`, split on whitespace.
    pub fn parse(text: &str) -> Self {
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .filter(|c| !matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '"'))
            .collect();
        Self {
            tokens: cleaned.split_whitespace().map(str::to_string).collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The references for one example; at least one caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    references: Vec<Caption>,
}

impl ReferenceSet {
    pub fn new(references: Vec<Caption>) -> Result<Self, MetricError> {
        if references.is_empty() {
            return Err(MetricError::EmptyReferenceSet { example: 0 });
        }
        Ok(Self { references })
    }

    pub fn references(&self) -> &[Caption] {
        &self.references
    }
}

/// Sum in ascending order so the result is a function of the multiset of
/// values, not of their arrival order.
fn ordered_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn mean(values: Vec<f64>) -> f64 {
    let n = values.len();
    ordered_sum(values) / n as f64
}

/// Top-1 accuracy: fraction of exact label matches.
pub fn top1_accuracy(predictions: &[Label], golds: &[Label]) -> Result<MetricScore, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(MetricScore::new(
        hits as f64 / predictions.len() as f64,
        "top1",
        predictions.len(),
    ))
}

/// Set-level precision: mean over examples of `|predicted ∩ gold| / |gold|`.
/// Extra predictions are not penalized; an empty gold set is an error.
pub fn set_precision(
    predictions: &[LabelSet],
    golds: &[LabelSet],
) -> Result<MetricScore, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let mut per_example = Vec::with_capacity(golds.len());
    for (example, (pred, gold)) in predictions.iter().zip(golds).enumerate() {
        if gold.is_empty() {
            return Err(MetricError::EmptyGoldSet { example });
        }
        per_example.push(pred.intersection_size(gold) as f64 / gold.len() as f64);
    }
    Ok(MetricScore::new(
        mean(per_example),
        "set_precision",
        predictions.len(),
    ))
}

const MAX_NGRAM: usize = 4;

type NgramCounts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts<'_> {
    let mut counts = NgramCounts::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Document frequencies per n-gram order: how many examples' reference sets
/// contain each n-gram. Built once per corpus, then read-only.
struct IdfTable<'a> {
    n_examples: usize,
    df: [BTreeMap<&'a [String], usize>; MAX_NGRAM],
}

impl<'a> IdfTable<'a> {
    fn build(refs: &'a [ReferenceSet]) -> Self {
        let mut df: [BTreeMap<&[String], usize>; MAX_NGRAM] = Default::default();
        for reference_set in refs {
            for n in 1..=MAX_NGRAM {
                let mut seen: BTreeSet<&[String]> = BTreeSet::new();
                for caption in reference_set.references() {
                    seen.extend(ngram_counts(caption.tokens(), n).into_keys());
                }
                for gram in seen {
                    *df[n - 1].entry(gram).or_insert(0) += 1;
                }
            }
        }
        Self {
            n_examples: refs.len(),
            df,
        }
    }

    fn idf(&self, n: usize, gram: &[String]) -> f64 {
        let df = self.df[n - 1].get(gram).copied().unwrap_or(0);
        let raw = (self.n_examples as f64 / (1 + df) as f64).ln();
        raw.max(0.0)
    }

    /// TF-IDF vector over order-n n-grams: term frequency normalized by the
    /// total number of order-n n-grams, weighted by idf.
    fn vector<'t>(&self, tokens: &'t [String], n: usize) -> BTreeMap<&'t [String], f64> {
        let counts = ngram_counts(tokens, n);
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(gram, count)| {
                let tf = count as f64 / total as f64;
                (gram, tf * self.idf(n, gram))
            })
            .collect()
    }
}

fn cosine(a: &BTreeMap<&[String], f64>, b: &BTreeMap<&[String], f64>) -> f64 {
    let norm = |v: &BTreeMap<&[String], f64>| {
        ordered_sum(v.values().map(|x| x * x).collect::<Vec<_>>()).sqrt()
    };
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot = ordered_sum(
        a.iter()
            .filter_map(|(gram, x)| b.get(gram).map(|y| x * y))
            .collect::<Vec<_>>(),
    );
    dot / (na * nb)
}

/// Corpus-level CIDEr: per example, average over n = 1..4 of the mean cosine
/// similarity between the candidate's and each reference's TF-IDF n-gram
/// vectors, scaled by 10; then the mean over examples. A zero vector has
/// cosine 0 with everything.
pub fn cider(candidates: &[Caption], refs: &[ReferenceSet]) -> Result<MetricScore, MetricError> {
    if candidates.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            predictions: candidates.len(),
            golds: refs.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let idf = IdfTable::build(refs);
    let mut per_example = Vec::with_capacity(candidates.len());
    for (candidate, reference_set) in candidates.iter().zip(refs) {
        let mut order_scores = 0.0;
        for n in 1..=MAX_NGRAM {
            let cand_vec = idf.vector(candidate.tokens(), n);
            let cosines: Vec<f64> = reference_set
                .references()
                .iter()
                .map(|r| cosine(&cand_vec, &idf.vector(r.tokens(), n)))
                .collect();
            order_scores += mean(cosines);
        }
        per_example.push(10.0 * order_scores / MAX_NGRAM as f64);
    }
    Ok(MetricScore::new(mean(per_example), "cider", candidates.len()))
}

/// The metric registry: resolve a metric by (case-insensitive) name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Top1,
    SetPrecision,
    Cider,
}

pub const METRIC_NAMES: [&str; 3] = ["top1", "set_precision", "cider"];

impl MetricKind {
    pub fn lookup(name: &str) -> Result<Self, MetricError> {
        match name.to_lowercase().as_str() {
            "top1" => Ok(Self::Top1),
            "set_precision" => Ok(Self::SetPrecision),
            "cider" => Ok(Self::Cider),
            _ => Err(MetricError::UnknownMetric {
                name: name.to_string(),
                available: METRIC_NAMES.join(", "),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Top1 => "top1",
            Self::SetPrecision => "set_precision",
            Self::Cider => "cider",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(s: &str) -> Label {
        Label::new(s).unwrap()
    }

    fn caption(words: &[&str]) -> Caption {
        Caption::from_tokens(words.iter().map(|w| w.to_string()).collect()).unwrap()
    }

    #[test]
    fn top1_counts_exact_matches() {
        let preds = vec![label("cat"), label("dog")];
        let golds = vec![label("cat"), label("cat")];
        assert_eq!(top1_accuracy(&preds, &golds).unwrap().value, 0.5);
    }

    #[test]
    fn top1_identity_is_one() {
        let labels = vec![label("a"), label("b"), label("c")];
        assert_eq!(top1_accuracy(&labels, &labels).unwrap().value, 1.0);
    }

    #[test]
    fn top1_normalizes_case_and_whitespace() {
        let preds = vec![label("Chair ")];
        let golds = vec![label("chair")];
        assert_eq!(top1_accuracy(&preds, &golds).unwrap().value, 1.0);
    }

    #[test]
    fn top1_rejects_length_mismatch_and_empty() {
        assert_eq!(
            top1_accuracy(&[label("a")], &[]),
            Err(MetricError::LengthMismatch {
                predictions: 1,
                golds: 0
            })
        );
        assert_eq!(top1_accuracy(&[], &[]), Err(MetricError::EmptyDataset));
    }

    #[test]
    fn set_precision_fraction_of_gold_recovered() {
        let pred = LabelSet::new([label("a"), label("b")]);
        let gold = LabelSet::new([label("a"), label("b"), label("c"), label("d")]);
        let score = set_precision(&[pred], &[gold]).unwrap();
        assert_eq!(score.value, 0.5);
    }

    #[test]
    fn set_precision_identity_is_one() {
        let s = LabelSet::new([label("x"), label("y")]);
        assert_eq!(set_precision(&[s.clone()], &[s]).unwrap().value, 1.0);
    }

    #[test]
    fn set_precision_does_not_penalize_extras() {
        let pred = LabelSet::new([label("a"), label("b"), label("x"), label("y"), label("z")]);
        let gold = LabelSet::new([label("a")]);
        assert_eq!(set_precision(&[pred], &[gold]).unwrap().value, 1.0);
    }

    #[test]
    fn set_precision_rejects_empty_gold() {
        let pred = LabelSet::new([label("a")]);
        let gold = LabelSet::default();
        assert_eq!(
            set_precision(&[pred], &[gold]),
            Err(MetricError::EmptyGoldSet { example: 0 })
        );
    }

    #[test]
    fn cider_zero_overlap_scores_zero() {
        let candidates = vec![caption(&["x", "y", "z"])];
        let refs = vec![
            ReferenceSet::new(vec![caption(&["a", "b", "c"])]).unwrap(),
        ];
        assert_eq!(cider(&candidates, &refs).unwrap().value, 0.0);
    }

    #[test]
    fn cider_empty_candidate_scores_zero() {
        let candidates = vec![caption(&[])];
        let refs = vec![ReferenceSet::new(vec![caption(&["a", "b"])]).unwrap()];
        assert_eq!(cider(&candidates, &refs).unwrap().value, 0.0);
    }

    #[test]
    fn cider_empty_corpus_rejected() {
        assert_eq!(cider(&[], &[]), Err(MetricError::EmptyCorpus));
    }

    #[test]
    fn cider_is_invariant_to_reference_order() {
        let candidates = vec![
            caption(&["a", "red", "car"]),
            caption(&["the", "dog"]),
            caption(&["a", "blue", "bird"]),
        ];
        let fwd = vec![
            ReferenceSet::new(vec![caption(&["a", "red", "car"]), caption(&["red", "car"])])
                .unwrap(),
            ReferenceSet::new(vec![caption(&["the", "dog", "runs"])]).unwrap(),
            ReferenceSet::new(vec![caption(&["a", "blue", "bird"])]).unwrap(),
        ];
        let mut rev = fwd.clone();
        rev[0] = ReferenceSet::new(vec![caption(&["red", "car"]), caption(&["a", "red", "car"])])
            .unwrap();
        let a = cider(&candidates, &fwd).unwrap().value;
        let b = cider(&candidates, &rev).unwrap().value;
        assert_eq!(a, b);
    }

    #[test]
    fn caption_parse_strips_punctuation_and_lowercases() {
        let c = Caption::parse("A red Car, parked!");
        assert_eq!(c.tokens(), &["a", "red", "car", "parked"]);
    }

    #[test]
    fn caption_rejects_whitespace_tokens() {
        let err = Caption::from_tokens(vec!["a b".into()]).unwrap_err();
        assert!(matches!(err, MetricError::TokenHasWhitespace { .. }));
    }

    #[test]
    fn empty_reference_set_rejected() {
        assert!(matches!(
            ReferenceSet::new(vec![]),
            Err(MetricError::EmptyReferenceSet { .. })
        ));
    }

    #[test]
    fn registry_resolves_names_case_insensitively() {
        assert_eq!(MetricKind::lookup("top1").unwrap(), MetricKind::Top1);
        assert_eq!(MetricKind::lookup("CIDEr").unwrap(), MetricKind::Cider);
        assert_eq!(
            MetricKind::lookup("set_precision").unwrap(),
            MetricKind::SetPrecision
        );
        match MetricKind::lookup("bleu") {
            Err(MetricError::UnknownMetric { available, .. }) => {
                assert!(available.contains("cider"));
            }
            other => panic!("expected unknown metric, got {other:?}"),
        }
    }

    #[test]
    fn empty_label_rejected() {
        assert_eq!(Label::new("   "), Err(MetricError::EmptyLabel));
    }
}
