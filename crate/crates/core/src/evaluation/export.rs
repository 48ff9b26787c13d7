//! Misclassified examples for manual review.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{serialize_record, Claim, Decision, Outcome, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorType {
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "FN")]
    FalseNegative,
}

/// First line of an export file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportHeader {
    pub variant: String,
    pub strategy: Strategy,
    pub dataset: String,
    pub decision_template_digest: String,
    pub false_positives: u64,
    pub false_negatives: u64,
}

/// One FP or FN, with everything needed to re-render its prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Misclassification {
    pub error_type: ErrorType,
    pub claim: Claim,
    pub decision: Decision,
}

/// Pick out the decided claims whose label disagrees with gold. Claims
/// without a gold label or without a decision are skipped.
pub fn export_errors(
    variant: &str,
    strategy: Strategy,
    dataset: &str,
    outcomes: &[Outcome],
    claims: &HashMap<String, Claim>,
    decision_template_digest: &str,
) -> (ExportHeader, Vec<Misclassification>) {
    let mut records = Vec::new();
    for decision in outcomes.iter().filter_map(Outcome::decision) {
        let Some(claim) = claims.get(&decision.claim_id) else { continue };
        let Some(gold) = claim.gold_label() else { continue };
        let error_type = match (gold.is_positive(), decision.label.is_positive()) {
            (false, true) => ErrorType::FalsePositive,
            (true, false) => ErrorType::FalseNegative,
            _ => continue,
        };
        records.push(Misclassification { error_type, claim: claim.clone(), decision: decision.clone() });
    }
    let count = |t| records.iter().filter(|r| r.error_type == t).count() as u64;
    let header = ExportHeader {
        variant: variant.to_string(),
        strategy,
        dataset: dataset.to_string(),
        decision_template_digest: decision_template_digest.to_string(),
        false_positives: count(ErrorType::FalsePositive),
        false_negatives: count(ErrorType::FalseNegative),
    };
    (header, records)
}

pub fn write_export(header: &ExportHeader, records: &[Misclassification]) -> String {
    let mut out = serialize_record(header) + "\n";
    for r in records {
        out.push_str(&serialize_record(r));
        out.push('\n');
    }
    out
}
