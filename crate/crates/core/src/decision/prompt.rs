use crate::digest::sha256_hex;
use crate::model::{RetrievalStats, ScoredSnippet, Strategy};
use crate::structured::squash_whitespace;

use super::StrategyInput;

pub const DECISION_TEMPLATE: &str = include_str!("../../assets/decision_prompt.v1.txt");
pub const DECISION_TEMPLATE_VERSION: &str = "decision_prompt.v1";

pub const NO_CONTEXT_MARKER: &str = "No external context provided.";
pub const NO_SNIPPETS_MARKER: &str = "No snippets retrieved.";

pub fn decision_template_digest() -> String {
    sha256_hex(DECISION_TEMPLATE)
}

/// Render the shared decision template. Strategies differ only in the
/// evidence block.
pub fn render_decision_prompt(input: &StrategyInput) -> String {
    DECISION_TEMPLATE.replacen("{{evidence}}", &render_evidence(input), 1).replacen("{{claim}}", input.claim.text(), 1)
}

pub fn render_evidence(input: &StrategyInput) -> String {
    match input.strategy {
        Strategy::TextOnly => NO_CONTEXT_MARKER.to_string(),
        Strategy::RaveStats => match &input.stats {
            Some(stats) => render_stats(stats),
            None => NO_SNIPPETS_MARKER.to_string(),
        },
        _ if input.evidence.is_empty() => NO_SNIPPETS_MARKER.to_string(),
        _ => input
            .evidence
            .iter()
            .enumerate()
            .map(|(i, s)| render_item(i + 1, s, input.include_snippet_text, input.include_scores))
            .collect::<Vec<_>>()
            .join("\n\n"),
    }
}

fn render_stats(stats: &RetrievalStats) -> String {
    format!(
        "Retrieval statistics:\n\
         - entities extracted: {}\n\
         - entity coverage: {:.4}\n\
         - snippet coverage: {:.4}\n\
         - source diversity: {:.4}\n\
         - inter-snippet agreement: {:.4}",
        stats.entity_count,
        stats.entity_coverage,
        stats.snippet_coverage,
        stats.source_diversity,
        stats.inter_snippet_agreement,
    )
}

fn render_item(n: usize, s: &ScoredSnippet, text: bool, scores: bool) -> String {
    let snippet = s.snippet();
    let mut lines =
        vec![format!("[{n}] domain: {}", snippet.domain()), format!("title: {}", squash_whitespace(snippet.title()))];
    if scores {
        lines.push(format!("relevance: {:.4}", s.relevance()));
        lines.push(format!("credibility: {:.2}", s.credibility().score()));
    }
    if text {
        lines.push(format!("text: {}", squash_whitespace(snippet.text())));
    }
    lines.join("\n")
}
