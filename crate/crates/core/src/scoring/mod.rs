//! Relevance, credibility, combined score and top-K selection.

mod credibility;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::model::{Claim, ScoredSnippet, Snippet, ValidationError};
use crate::retrieval::ContextPool;

pub use credibility::{CredibilityRule, CredibilityRules, MatcherKind, RuleError, DEFAULT_RULES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub alpha: f64,
    pub k: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { alpha: 0.6, k: 3 }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.k < 1 {
            return Err("k must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero or empty vector")]
    ZeroVector,
    #[error("could not embed the claim: {0}")]
    ClaimEmbedding(GatewayError),
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
pub fn relevance(claim_embedding: &[f64], snippet_embedding: &[f64]) -> Result<f64, ScoringError> {
    if claim_embedding.len() != snippet_embedding.len() {
        return Err(ScoringError::DimensionMismatch(claim_embedding.len(), snippet_embedding.len()));
    }
    let dot: f64 = claim_embedding.iter().zip(snippet_embedding).map(|(a, b)| a * b).sum();
    let na = claim_embedding.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = snippet_embedding.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(ScoringError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `alpha * r + (1 - alpha) * c`.
pub fn combined_score(relevance: f64, credibility: f64, alpha: f64) -> f64 {
    alpha * relevance + (1.0 - alpha) * credibility
}

/// Scored pool plus what scoring had to throw away.
#[derive(Debug, Clone, Default)]
pub struct ScoredPool {
    pub scored: Vec<ScoredSnippet>,
    /// Embedding of each entry of `scored`, same order.
    pub embeddings: Vec<Vec<f64>>,
    /// (url, reason) for snippets that could not be scored.
    pub dropped: Vec<(String, String)>,
}

impl ScoredPool {
    /// Same relevance and credibility, recombined under another alpha.
    pub fn with_alpha(&self, alpha: f64) -> Result<ScoredPool, ValidationError> {
        let scored = self
            .scored
            .iter()
            .map(|s| ScoredSnippet::new(s.snippet().clone(), s.relevance(), s.credibility(), alpha))
            .collect::<Result<_, _>>()?;
        Ok(ScoredPool { scored, embeddings: self.embeddings.clone(), dropped: self.dropped.clone() })
    }
}

fn embed_text(snippet: &Snippet) -> Option<&str> {
    [snippet.text(), snippet.title()].into_iter().find(|t| !t.trim().is_empty())
}

/// Score every snippet of `pool` against `claim`.
///
/// The claim is embedded once, in the same batch as the snippets. If the
/// batch fails the texts are retried one by one so that a single bad
/// snippet only costs itself.
pub fn score_pool(
    gateway: &Gateway,
    rules: &CredibilityRules,
    claim: &Claim,
    pool: &ContextPool,
    config: &ScoringConfig,
) -> Result<ScoredPool, ScoringError> {
    let mut out = ScoredPool::default();
    if pool.snippets.is_empty() {
        return Ok(out);
    }
    let mut candidates: Vec<(&Snippet, String)> = Vec::new();
    for s in &pool.snippets {
        match embed_text(s) {
            Some(t) => candidates.push((s, t.to_string())),
            None => {
                log::warn!("claim {}: snippet {} has no text to embed", claim.id(), s.url());
                out.dropped.push((s.url().to_string(), "no text".into()));
            }
        }
    }
    let mut texts = vec![claim.text().to_string()];
    texts.extend(candidates.iter().map(|(_, t)| t.clone()));

    let vectors: Vec<Option<Vec<f64>>> = match gateway.embed(&texts) {
        Ok(v) => v.into_iter().map(Some).collect(),
        Err(batch_err) => {
            log::warn!("claim {}: batch embedding failed ({batch_err}); retrying per text", claim.id());
            let claim_vec = gateway.embed(&texts[..1]).map_err(ScoringError::ClaimEmbedding)?;
            let mut v = vec![claim_vec.into_iter().next()];
            for (i, text) in texts.iter().enumerate().skip(1) {
                match gateway.embed(std::slice::from_ref(text)) {
                    Ok(mut e) => v.push(e.pop()),
                    Err(e) => {
                        log::warn!("claim {}: dropping snippet {}: {e}", claim.id(), candidates[i - 1].0.url());
                        v.push(None);
                    }
                }
            }
            v
        }
    };
    let claim_vec = vectors[0].clone().expect("claim embedding present");
    for ((snippet, _), vector) in candidates.into_iter().zip(vectors.into_iter().skip(1)) {
        let Some(vector) = vector else {
            out.dropped.push((snippet.url().to_string(), "embedding failed".into()));
            continue;
        };
        let r = match relevance(&claim_vec, &vector) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("claim {}: dropping snippet {}: {e}", claim.id(), snippet.url());
                out.dropped.push((snippet.url().to_string(), e.to_string()));
                continue;
            }
        };
        let c = rules.credibility(snippet.domain());
        let scored = ScoredSnippet::new(snippet.clone(), r, c, config.alpha)
            .expect("relevance is clamped and alpha was validated");
        out.scored.push(scored);
        out.embeddings.push(vector);
    }
    Ok(out)
}

/// Total order used for selection: larger combined score first, then
/// higher credibility, then better engine rank. Input position breaks any
/// remaining tie.
pub fn selection_order(a: &ScoredSnippet, b: &ScoredSnippet) -> Ordering {
    b.combined()
        .total_cmp(&a.combined())
        .then_with(|| b.credibility().cmp(&a.credibility()))
        .then_with(|| a.snippet().rank_in_search().cmp(&b.snippet().rank_in_search()))
}

/// The `min(k, n)` best snippets, best first.
pub fn select_top_k(scored: &[ScoredSnippet], k: usize) -> Vec<ScoredSnippet> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    // stable sort keeps input order among exact ties
    order.sort_by(|&i, &j| selection_order(&scored[i], &scored[j]));
    order.into_iter().take(k).map(|i| scored[i].clone()).collect()
}
