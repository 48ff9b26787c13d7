use std::collections::HashSet;

use crate::model::{Entity, RetrievalStats};
use crate::retrieval::ContextPool;
use crate::scoring::relevance;

/// Aggregate retrieval statistics for the stats-only baseline.
///
/// An entity counts as covered when its query returned at least one hit.
/// Agreement is the mean pairwise cosine of the snippet embeddings, taken
/// as 1.0 when fewer than two embeddings exist.
pub fn compute_stats(
    entities: &[Entity],
    pool: &ContextPool,
    embeddings: &[Vec<f64>],
    results_per_query: u32,
) -> RetrievalStats {
    let entity_count = entities.len();
    let (entity_coverage, snippet_coverage) = if entity_count == 0 {
        (0.0, 0.0)
    } else {
        let covered =
            entities.iter().filter(|e| pool.per_entity_counts.iter().any(|c| &c.entity == *e && c.count > 0)).count();
        let capacity = entity_count as f64 * f64::from(results_per_query.max(1));
        (covered as f64 / entity_count as f64, (pool.snippets.len() as f64 / capacity).clamp(0.0, 1.0))
    };
    let source_diversity = if pool.snippets.is_empty() {
        0.0
    } else {
        let domains: HashSet<&str> = pool.snippets.iter().map(|s| s.domain()).collect();
        domains.len() as f64 / pool.snippets.len() as f64
    };
    RetrievalStats {
        entity_count: entity_count as u32,
        entity_coverage,
        snippet_coverage,
        source_diversity,
        inter_snippet_agreement: mean_pairwise_cosine(embeddings),
    }
}

fn mean_pairwise_cosine(vectors: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in vectors.iter().enumerate() {
        for b in &vectors[i + 1..] {
            if let Ok(c) = relevance(a, b) {
                sum += c;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        1.0
    } else {
        (sum / pairs as f64).clamp(-1.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntityKind, Snippet};
    use crate::retrieval::EntityCount;

    fn org(s: &str) -> Entity {
        Entity::new(s, EntityKind::Org).unwrap()
    }

    #[test]
    fn no_entities() {
        let s = compute_stats(&[], &ContextPool::empty("c"), &[], 5);
        assert_eq!(
            (s.entity_count, s.entity_coverage, s.snippet_coverage, s.source_diversity, s.inter_snippet_agreement),
            (0, 0.0, 0.0, 0.0, 1.0)
        );
        s.validate().unwrap();
    }

    #[test]
    fn half_the_entities_covered() {
        let (a, b) = (org("A"), org("B"));
        let mut pool = ContextPool::empty("c");
        pool.per_entity_counts = vec![
            EntityCount { entity: a.clone(), count: 2, failed: false },
            EntityCount { entity: b.clone(), count: 0, failed: false },
        ];
        pool.snippets.push(Snippet::new("t", "t", "https://x.com/1", a.clone(), 1).unwrap());
        pool.snippets.push(Snippet::new("t", "t", "https://x.com/2", a.clone(), 2).unwrap());
        let s = compute_stats(&[a, b], &pool, &[vec![1.0, 0.0], vec![1.0, 0.0]], 5);
        assert_eq!(s.entity_coverage, 0.5);
        assert_eq!(s.snippet_coverage, 0.2);
        assert_eq!(s.source_diversity, 0.5);
        assert!((s.inter_snippet_agreement - 1.0).abs() < 1e-12);
    }

    /// Unit vectors with prescribed pairwise cosines, via Cholesky of the
    /// Gram matrix.
    fn vectors_with_cosines(c01: f64, c02: f64, c12: f64) -> Vec<Vec<f64>> {
        let v0 = vec![1.0, 0.0, 0.0];
        let y1 = (1.0 - c01 * c01).sqrt();
        let v1 = vec![c01, y1, 0.0];
        let y2 = (c12 - c01 * c02) / y1;
        let z2 = (1.0 - c02 * c02 - y2 * y2).sqrt();
        let v2 = vec![c02, y2, z2];
        vec![v0, v1, v2]
    }

    #[test]
    fn agreement_is_mean_pairwise_cosine() {
        let v = vectors_with_cosines(0.2, 0.4, 0.6);
        assert!((relevance(&v[0], &v[1]).unwrap() - 0.2).abs() < 1e-12);
        assert!((relevance(&v[1], &v[2]).unwrap() - 0.6).abs() < 1e-12);
        assert!((mean_pairwise_cosine(&v) - 0.4).abs() < 1e-12);
        assert_eq!(mean_pairwise_cosine(&v[..1]), 1.0);
    }
}
