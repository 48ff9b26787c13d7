//! Ingestion, metrics, alpha tuning, the K sweep, corpus statistics and
//! error export.

mod export;
mod ingest;
mod metrics;
mod sweep;
mod tune;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{Claim, VerifiabilityLabel};

pub use export::{export_errors, write_export, ErrorType, ExportHeader, Misclassification};
pub use ingest::{
    parse_corpus, read_corpus, write_corpus, CorpusFormat, IngestError, LabelMap, CT22_LABELS, POLICLAIM_LABELS,
};
pub use metrics::{
    compute_metrics, f1_from_counts, f1_from_pr, ConfigSnapshot, ConfusionCounts, EvalError, EvalReport, Metrics,
};
pub use sweep::{sweep_k, to_csv, to_svg, SweepResult, SweepRow, CSV_HEADER, DEFAULT_KS};
pub use tune::{tune_alpha, AlphaTuneResult, Prediction, TieBreak, TuneConfig, TuneError, DEFAULT_GRID, TIE_ALPHA};

/// Share of claims with no extracted entity, per gold label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SparsityTable {
    pub verifiable: usize,
    pub verifiable_without_entities: usize,
    pub non_verifiable: usize,
    pub non_verifiable_without_entities: usize,
}

impl SparsityTable {
    /// Fraction of verifiable claims without entities; 0 if there are none.
    pub fn verifiable_fraction(&self) -> f64 {
        fraction(self.verifiable_without_entities, self.verifiable)
    }

    pub fn non_verifiable_fraction(&self) -> f64 {
        fraction(self.non_verifiable_without_entities, self.non_verifiable)
    }
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Entity sparsity of `claims`, given the entity count per claim id.
/// Unlabeled claims are ignored; a claim missing from `entity_counts` is
/// treated as entity-free, matching how the pipeline handles failed
/// extractions.
pub fn corpus_stats(claims: &[Claim], entity_counts: &HashMap<String, usize>) -> SparsityTable {
    let mut t = SparsityTable::default();
    for claim in claims {
        let Some(label) = claim.gold_label() else { continue };
        let empty = entity_counts.get(claim.id()).copied().unwrap_or(0) == 0;
        match label {
            VerifiabilityLabel::Verifiable => {
                t.verifiable += 1;
                t.verifiable_without_entities += usize::from(empty);
            }
            VerifiabilityLabel::NonVerifiable => {
                t.non_verifiable += 1;
                t.non_verifiable_without_entities += usize::from(empty);
            }
        }
    }
    t
}
