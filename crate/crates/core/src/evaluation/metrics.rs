use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{FailureKind, Outcome, Strategy, ValidationError, VerifiabilityLabel};

/// Confusion counts with VERIFIABLE as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, gold: VerifiabilityLabel, predicted: VerifiabilityLabel) {
        match (gold.is_positive(), predicted.is_positive()) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    /// Metrics, or `None` when there are no counts at all.
    pub fn metrics(&self) -> Option<Metrics> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        Some(Metrics {
            accuracy: (self.tp + self.tn) as f64 / n as f64,
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: f1_from_counts(self),
        })
    }
}

/// Precision and recall are `None` when their denominator is zero; F1 is
/// then 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
}

/// `2tp / (2tp + fp + fn)`, 0 when the denominator is 0.
pub fn f1_from_counts(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

/// Harmonic mean `2pr / (p + r)`, 0 when `p + r` is 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Settings a report was produced under.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub alpha: f64,
    pub k: usize,
    pub model_id: String,
    pub embedding_model_id: String,
    pub extraction_template_digest: String,
    pub decision_template_digest: String,
    pub credibility_rules_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvalReport")]
pub struct EvalReport {
    pub strategy: Strategy,
    /// Strategy name plus any ablation suffix, e.g. `RAVE[alpha=1]`.
    pub variant: String,
    pub dataset: String,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub config: ConfigSnapshot,
    /// Claims whose verdict never parsed; excluded from `counts`.
    pub unparseable_count: u64,
    /// Claims lost to service or scoring failures; excluded from `counts`.
    pub failed_count: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvalReport {
    strategy: Strategy,
    variant: String,
    dataset: String,
    counts: ConfusionCounts,
    accuracy: f64,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: f64,
    config: ConfigSnapshot,
    unparseable_count: u64,
    failed_count: u64,
}

impl TryFrom<RawEvalReport> for EvalReport {
    type Error = ValidationError;

    fn try_from(r: RawEvalReport) -> Result<Self, Self::Error> {
        let expected =
            r.counts.metrics().ok_or_else(|| ValidationError::new("counts", "report has no scored claims"))?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let close_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => close(a, b),
            (None, None) => true,
            _ => false,
        };
        for (field, ok) in [
            ("accuracy", close(r.accuracy, expected.accuracy)),
            ("precision", close_opt(r.precision, expected.precision)),
            ("recall", close_opt(r.recall, expected.recall)),
            ("f1", close(r.f1, expected.f1)),
        ] {
            if !ok {
                return Err(ValidationError::new(field, "does not match the confusion counts"));
            }
        }
        Ok(EvalReport {
            strategy: r.strategy,
            variant: r.variant,
            dataset: r.dataset,
            counts: r.counts,
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            config: r.config,
            unparseable_count: r.unparseable_count,
            failed_count: r.failed_count,
        })
    }
}

impl EvalReport {
    pub fn metrics(&self) -> Metrics {
        Metrics { accuracy: self.accuracy, precision: self.precision, recall: self.recall, f1: self.f1 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no decisions to evaluate")]
    Empty,
    #[error("no gold label for claim {0}")]
    MissingGold(String),
    #[error("every claim failed; nothing to score ({unparseable} unparseable, {failed} failed)")]
    NothingScored { unparseable: u64, failed: u64 },
}

/// Fold outcomes into a report. Failed claims are counted, not scored.
pub fn compute_metrics(
    variant: &str,
    strategy: Strategy,
    dataset: &str,
    outcomes: &[Outcome],
    golds: &HashMap<String, VerifiabilityLabel>,
    config: ConfigSnapshot,
) -> Result<EvalReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = ConfusionCounts::default();
    let (mut unparseable, mut failed) = (0, 0);
    for outcome in outcomes {
        let gold = *golds.get(outcome.claim_id()).ok_or_else(|| EvalError::MissingGold(outcome.claim_id().into()))?;
        match outcome {
            Outcome::Decided(d) => counts.add(gold, d.label),
            Outcome::Failed(f) if f.kind == FailureKind::DecisionFormat => unparseable += 1,
            Outcome::Failed(_) => failed += 1,
        }
    }
    let m = counts.metrics().ok_or(EvalError::NothingScored { unparseable, failed })?;
    Ok(EvalReport {
        strategy,
        variant: variant.to_string(),
        dataset: dataset.to_string(),
        counts,
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        config,
        unparseable_count: unparseable,
        failed_count: failed,
    })
}
