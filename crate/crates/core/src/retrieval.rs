//! Per-claim context pool: one search per entity, merged and deduplicated
//! by url.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::gateway::Gateway;
use crate::model::{Claim, Entity, EntityKind, Snippet, ValidationError};

/// Search outcome for one entity. `count` is the number of hits the engine
/// returned, before url deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCount {
    pub entity: Entity,
    pub count: u32,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawContextPool")]
pub struct ContextPool {
    pub claim_id: String,
    pub snippets: Vec<Snippet>,
    /// In query order.
    pub per_entity_counts: Vec<EntityCount>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContextPool {
    claim_id: String,
    snippets: Vec<Snippet>,
    per_entity_counts: Vec<EntityCount>,
}

impl TryFrom<RawContextPool> for ContextPool {
    type Error = ValidationError;

    fn try_from(raw: RawContextPool) -> Result<Self, Self::Error> {
        let pool =
            ContextPool { claim_id: raw.claim_id, snippets: raw.snippets, per_entity_counts: raw.per_entity_counts };
        pool.validate()?;
        Ok(pool)
    }
}

impl ContextPool {
    pub fn empty(claim_id: impl Into<String>) -> Self {
        Self { claim_id: claim_id.into(), snippets: Vec::new(), per_entity_counts: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut keys = HashSet::new();
        for s in &self.snippets {
            if !keys.insert(dedup_key(s.url())) {
                return Err(ValidationError::new("snippets", format!("duplicate url {}", s.url())));
            }
            if !self.per_entity_counts.iter().any(|c| &c.entity == s.origin_entity()) {
                return Err(ValidationError::new(
                    "snippets",
                    format!("origin entity {} of {} was never queried", s.origin_entity(), s.url()),
                ));
            }
        }
        Ok(())
    }

    /// Position of `entity` in query order.
    pub fn entity_index(&self, entity: &Entity) -> Option<usize> {
        self.per_entity_counts.iter().position(|c| &c.entity == entity)
    }
}

/// Canonical url key: host lowercased without `www.`, no scheme, no
/// fragment, no trailing slash; query string kept. Unparseable urls are
/// their own key.
pub fn dedup_key(raw: &str) -> String {
    let Ok(url) = url::Url::parse(raw.trim()) else {
        return raw.to_string();
    };
    let Some(host) = url.host_str() else {
        return raw.to_string();
    };
    let host = host.to_ascii_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host);
    let path = url.path().trim_end_matches('/');
    match url.query() {
        Some(q) => format!("{host}{path}?{q}"),
        None => format!("{host}{path}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub results_per_query: u32,
    /// Search the whole claim when no entity was extracted. Off for
    /// comparisons against the published protocol.
    pub claim_fallback_search: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { results_per_query: 5, claim_fallback_search: false }
    }
}

/// Pool plus search bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolReport {
    pub pool: ContextPool,
    pub queries: usize,
    pub failed_queries: usize,
    pub empty_queries: usize,
    /// Hits discarded because their url was already in the pool.
    pub duplicates: usize,
}

/// Query each entity surface verbatim and merge the hits. The first
/// occurrence of a url wins, in entity order and then engine order.
pub fn build_pool(gateway: &Gateway, claim: &Claim, entities: &[Entity], config: &RetrievalConfig) -> PoolReport {
    let fallback;
    let queries: &[Entity] = if entities.is_empty() && config.claim_fallback_search {
        fallback = [Entity::new(claim.text(), EntityKind::ClaimObject).expect("claim text is non-empty")];
        &fallback
    } else {
        entities
    };
    let mut report = PoolReport {
        pool: ContextPool::empty(claim.id()),
        queries: 0,
        failed_queries: 0,
        empty_queries: 0,
        duplicates: 0,
    };
    let mut seen = HashSet::new();
    for entity in queries {
        report.queries += 1;
        let hits = match gateway.search(entity.surface(), config.results_per_query) {
            Ok(hits) => hits,
            Err(e) => {
                log::warn!("claim {}: search for {entity} failed: {e}", claim.id());
                report.failed_queries += 1;
                report.pool.per_entity_counts.push(EntityCount { entity: entity.clone(), count: 0, failed: true });
                continue;
            }
        };
        if hits.is_empty() {
            report.empty_queries += 1;
        }
        report.pool.per_entity_counts.push(EntityCount {
            entity: entity.clone(),
            count: hits.len() as u32,
            failed: false,
        });
        for hit in hits {
            if !seen.insert(dedup_key(&hit.url)) {
                report.duplicates += 1;
                continue;
            }
            match Snippet::new(hit.text, hit.title, hit.url, entity.clone(), hit.rank) {
                Ok(s) => report.pool.snippets.push(s),
                Err(e) => log::warn!("claim {}: skipping search hit: {e}", claim.id()),
            }
        }
    }
    if !queries.is_empty() && report.failed_queries == queries.len() {
        log::warn!("claim {}: every search failed; continuing with an empty pool", claim.id());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{
        Backend, EmbedRequest, GatewayConfig, GatewayMode, LlmRequest, SearchItem, SearchRequest, TransportError,
    };
    use std::collections::HashMap;
    use std::sync::Arc;

    struct Canned(HashMap<String, Result<Vec<SearchItem>, TransportError>>);

    impl Backend for Canned {
        fn chat(&self, _: &LlmRequest) -> Result<String, TransportError> {
            unreachable!()
        }
        fn embed(&self, _: &EmbedRequest) -> Result<Vec<Vec<f64>>, TransportError> {
            unreachable!()
        }
        fn search(&self, r: &SearchRequest) -> Result<Vec<SearchItem>, TransportError> {
            self.0.get(&r.query).cloned().unwrap_or(Ok(Vec::new()))
        }
    }

    fn item(url: &str) -> SearchItem {
        SearchItem { title: format!("title {url}"), url: url.into(), snippet: format!("text {url}") }
    }

    fn gateway(entries: Vec<(&str, Result<Vec<SearchItem>, TransportError>)>) -> Gateway {
        let map = entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let config = GatewayConfig { mode: GatewayMode::Live, retries: 0, retry_backoff_ms: 0, ..Default::default() };
        Gateway::new(config, Arc::new(Canned(map)), None).unwrap()
    }

    fn org(s: &str) -> Entity {
        Entity::new(s, EntityKind::Org).unwrap()
    }

    #[test]
    fn dedup_key_rules() {
        assert_eq!(dedup_key("https://WWW.BBC.com/news/"), dedup_key("http://bbc.com/news"));
        assert_eq!(dedup_key("https://bbc.com/a#top"), dedup_key("https://bbc.com/a#bottom"));
        assert_ne!(dedup_key("https://bbc.com/a?x=1"), dedup_key("https://bbc.com/a?x=2"));
        assert_eq!(dedup_key("https://bbc.com/"), dedup_key("https://bbc.com"));
        assert_eq!(dedup_key("not a url"), "not a url");
    }

    #[test]
    fn zero_entities_zero_snippets() {
        let gw = gateway(vec![]);
        let claim = Claim::new("c", "we found a way toward a solution").unwrap();
        let r = build_pool(&gw, &claim, &[], &RetrievalConfig::default());
        assert!(r.pool.snippets.is_empty());
        assert_eq!(r.queries, 0);
    }

    #[test]
    fn fallback_searches_claim_text() {
        let text = "we found a way toward a solution";
        let gw = gateway(vec![(text, Ok(vec![item("https://a.com/1")]))]);
        let claim = Claim::new("c", text).unwrap();
        let config = RetrievalConfig { claim_fallback_search: true, ..Default::default() };
        let r = build_pool(&gw, &claim, &[], &config);
        assert_eq!(r.pool.snippets.len(), 1);
        assert_eq!(r.pool.snippets[0].origin_entity().kind(), EntityKind::ClaimObject);
        r.pool.validate().unwrap();
    }

    #[test]
    fn shared_url_kept_once_first_wins() {
        let gw = gateway(vec![
            ("Pfizer", Ok(vec![item("https://a.com/1"), item("https://www.shared.org/x/")])),
            ("Sinovac", Ok(vec![item("http://shared.org/x"), item("https://b.com/2")])),
        ]);
        let claim = Claim::new("c", "Pfizer isn't Sinovac").unwrap();
        let r = build_pool(&gw, &claim, &[org("Pfizer"), org("Sinovac")], &RetrievalConfig::default());
        let urls: Vec<_> = r.pool.snippets.iter().map(|s| s.url()).collect();
        assert_eq!(urls, ["https://a.com/1", "https://www.shared.org/x/", "https://b.com/2"]);
        assert_eq!(r.pool.snippets[1].origin_entity().surface(), "Pfizer");
        assert_eq!(r.duplicates, 1);
        let total: u32 = r.pool.per_entity_counts.iter().map(|c| c.count).sum();
        assert!(total as usize >= r.pool.snippets.len());
        r.pool.validate().unwrap();
    }

    #[test]
    fn failed_entity_contributes_nothing() {
        let gw = gateway(vec![
            ("Pfizer", Err(TransportError::Service { status: 403, message: "quota".into() })),
            ("Sinovac", Ok(vec![item("https://b.com/2")])),
        ]);
        let claim = Claim::new("c", "Pfizer isn't Sinovac").unwrap();
        let r = build_pool(&gw, &claim, &[org("Pfizer"), org("Sinovac")], &RetrievalConfig::default());
        assert_eq!(r.failed_queries, 1);
        assert_eq!(r.pool.per_entity_counts[0], EntityCount { entity: org("Pfizer"), count: 0, failed: true });
        assert_eq!(r.pool.snippets.len(), 1);
    }

    #[test]
    fn all_failures_give_empty_pool() {
        let err = || Err(TransportError::Transient("down".into()));
        let gw = gateway(vec![("Pfizer", err()), ("Sinovac", err())]);
        let claim = Claim::new("c", "Pfizer isn't Sinovac").unwrap();
        let r = build_pool(&gw, &claim, &[org("Pfizer"), org("Sinovac")], &RetrievalConfig::default());
        assert!(r.pool.snippets.is_empty());
        assert_eq!(r.failed_queries, 2);
    }

    #[test]
    fn pool_with_unknown_origin_is_invalid() {
        let mut pool = ContextPool::empty("c");
        pool.snippets.push(Snippet::new("t", "t", "https://a.com", org("X"), 1).unwrap());
        assert!(pool.validate().is_err());
    }
}
