//! Evidence assembly for every strategy, the shared decision prompt, and
//! verdict parsing.

mod prompt;
mod stats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::digest::sha256_hex;
use crate::gateway::{Gateway, GatewayError};
use crate::model::{Claim, Decision, Entity, RetrievalStats, ScoredSnippet, Strategy, VerifiabilityLabel};
use crate::retrieval::ContextPool;
use crate::scoring::select_top_k;
use crate::structured::json_objects;

pub use prompt::{
    decision_template_digest, render_decision_prompt, render_evidence, DECISION_TEMPLATE, DECISION_TEMPLATE_VERSION,
    NO_CONTEXT_MARKER, NO_SNIPPETS_MARKER,
};
pub use stats::compute_stats;

const REPAIR_NOTE: &str = "Your previous reply could not be parsed. Reply with only the JSON object \
{\"label\": \"VERIFIABLE\" or \"NON-VERIFIABLE\", \"rationale\": \"...\"} and no other text.";

/// Everything the decision prompt is rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyInput {
    pub strategy: Strategy,
    pub claim: Claim,
    pub evidence: Vec<ScoredSnippet>,
    pub stats: Option<RetrievalStats>,
    pub include_snippet_text: bool,
    pub include_scores: bool,
    pub rng_seed: Option<u64>,
}

impl StrategyInput {
    /// Check the per-strategy field combinations.
    pub fn validate(&self) -> Result<(), DecisionError> {
        let bad = |m: &str| Err(DecisionError::Config(format!("{}: {m}", self.strategy)));
        match self.strategy {
            Strategy::TextOnly | Strategy::RaveStats if !self.evidence.is_empty() => bad("takes no snippets"),
            Strategy::RaveStats if self.stats.is_none() => bad("requires retrieval statistics"),
            Strategy::RandK if self.rng_seed.is_none() => bad("requires a seed"),
            Strategy::RandK | Strategy::SearchK if self.include_scores || !self.include_snippet_text => {
                bad("shows snippet text without scores")
            }
            Strategy::RaveMeta if self.include_snippet_text || !self.include_scores => {
                bad("shows scores and metadata without snippet text")
            }
            Strategy::Rave if !self.include_snippet_text => bad("shows snippet text"),
            _ => Ok(()),
        }
    }

    /// Rebuild the input a recorded decision was rendered from.
    pub fn from_decision(claim: Claim, decision: &Decision) -> Self {
        Self {
            strategy: decision.strategy,
            claim,
            evidence: decision.evidence_used.clone(),
            stats: decision.stats,
            include_snippet_text: decision.show_text,
            include_scores: decision.show_scores,
            rng_seed: None,
        }
    }
}

/// Retrieval output for one claim, as consumed by evidence assembly.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalContext<'a> {
    pub entities: &'a [Entity],
    pub pool: &'a ContextPool,
    /// Scored snippets in pool order.
    pub scored: &'a [ScoredSnippet],
    /// Embeddings of `scored`, same order.
    pub embeddings: &'a [Vec<f64>],
    pub results_per_query: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecisionError {
    #[error("no parseable verdict after one repair attempt: {message}")]
    Format { message: String, raw_model_output: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid strategy configuration: {0}")]
    Config(String),
}

/// Select and shape the evidence `strategy` shows the model.
///
/// `ctx` may be `None` only for TEXT_ONLY.
pub fn assemble_evidence(
    strategy: Strategy,
    claim: &Claim,
    ctx: Option<RetrievalContext<'_>>,
    k: usize,
    rng_seed: Option<u64>,
) -> Result<StrategyInput, DecisionError> {
    if k == 0 {
        return Err(DecisionError::Config("k must be >= 1".into()));
    }
    let mut input = StrategyInput {
        strategy,
        claim: claim.clone(),
        evidence: Vec::new(),
        stats: None,
        include_snippet_text: true,
        include_scores: false,
        rng_seed: None,
    };
    if strategy == Strategy::TextOnly {
        input.include_snippet_text = false;
        return Ok(input);
    }
    let ctx = ctx.ok_or_else(|| DecisionError::Config(format!("{strategy} requires retrieval results")))?;
    match strategy {
        Strategy::TextOnly => unreachable!(),
        Strategy::RandK => {
            let seed = rng_seed.ok_or_else(|| DecisionError::Config("RAND_K requires a seed".into()))?;
            input.rng_seed = Some(seed);
            input.evidence = sample_k(ctx.scored, k, seed);
        }
        Strategy::SearchK => input.evidence = engine_order(ctx.pool, ctx.scored, k),
        Strategy::RaveStats => {
            input.include_snippet_text = false;
            input.stats = Some(compute_stats(ctx.entities, ctx.pool, ctx.embeddings, ctx.results_per_query));
        }
        Strategy::RaveMeta => {
            input.include_snippet_text = false;
            input.include_scores = true;
            input.evidence = select_top_k(ctx.scored, k);
        }
        Strategy::Rave => {
            input.include_scores = true;
            input.evidence = select_top_k(ctx.scored, k);
        }
    }
    Ok(input)
}

/// `min(k, n)` snippets drawn uniformly without replacement, kept in pool
/// order.
fn sample_k(scored: &[ScoredSnippet], k: usize, seed: u64) -> Vec<ScoredSnippet> {
    let n = scored.len();
    if n <= k {
        return scored.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| scored[i].clone()).collect()
}

/// First `k` snippets by (entity query order, engine rank).
fn engine_order(pool: &ContextPool, scored: &[ScoredSnippet], k: usize) -> Vec<ScoredSnippet> {
    let mut order: Vec<&ScoredSnippet> = scored.iter().collect();
    order.sort_by_key(|s| {
        let entity = pool.entity_index(s.snippet().origin_entity()).unwrap_or(usize::MAX);
        (entity, s.snippet().rank_in_search())
    });
    order.into_iter().take(k).cloned().collect()
}

/// Label and rationale from a model reply. Prose and fences around the
/// JSON block are tolerated; the block itself is required.
pub fn parse_verdict(raw: &str) -> Result<(VerifiabilityLabel, Option<String>), String> {
    let objects = json_objects(raw);
    let mut bad_label = None;
    for obj in &objects {
        let Some(label) = obj.get("label") else { continue };
        let parsed = label
            .as_str()
            .map(|s| s.trim().to_ascii_uppercase().replace(['_', ' '], "-"))
            .and_then(|s| s.parse::<VerifiabilityLabel>().ok());
        match parsed {
            Some(l) => return Ok((l, obj.get("rationale").and_then(Value::as_str).map(str::to_string))),
            None => bad_label = Some(label.to_string()),
        }
    }
    Err(match bad_label {
        Some(l) => format!("label {l} is neither VERIFIABLE nor NON-VERIFIABLE"),
        None if objects.is_empty() => "no JSON object in the reply".into(),
        None => "JSON reply has no \"label\" field".into(),
    })
}

/// Ask the model for a verdict, with at most one format-repair prompt.
pub fn decide(gateway: &Gateway, input: &StrategyInput) -> Result<Decision, DecisionError> {
    input.validate()?;
    let prompt = render_decision_prompt(input);
    let raw = gateway.chat(&gateway.llm_request(prompt.clone()))?;
    let (label, raw) = match parse_verdict(&raw) {
        Ok((label, _)) => (label, raw),
        Err(first) => {
            log::warn!("claim {} ({}): unparseable verdict ({first}); repairing", input.claim.id(), input.strategy);
            let raw = gateway.chat(&gateway.llm_request(format!("{prompt}\n{REPAIR_NOTE}")))?;
            match parse_verdict(&raw) {
                Ok((label, _)) => (label, raw),
                Err(message) => return Err(DecisionError::Format { message, raw_model_output: raw }),
            }
        }
    };
    Ok(Decision {
        claim_id: input.claim.id().to_string(),
        strategy: input.strategy,
        label,
        raw_model_output: raw,
        evidence_used: input.evidence.clone(),
        stats: input.stats,
        show_text: input.include_snippet_text,
        show_scores: input.include_scores,
        prompt_hash: sha256_hex(&prompt),
        template_digest: decision_template_digest(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{
        Backend, EmbedRequest, GatewayConfig, GatewayMode, LlmRequest, SearchItem, SearchRequest, TransportError,
    };
    use crate::model::{Credibility, EntityKind, Snippet};
    use crate::retrieval::EntityCount;
    use std::sync::{Arc, Mutex};

    fn org(s: &str) -> Entity {
        Entity::new(s, EntityKind::Org).unwrap()
    }

    struct Fixture {
        claim: Claim,
        entities: Vec<Entity>,
        pool: ContextPool,
        scored: Vec<ScoredSnippet>,
        embeddings: Vec<Vec<f64>>,
    }

    impl Fixture {
        fn ctx(&self) -> RetrievalContext<'_> {
            RetrievalContext {
                entities: &self.entities,
                pool: &self.pool,
                scored: &self.scored,
                embeddings: &self.embeddings,
                results_per_query: 5,
            }
        }
    }

    /// Pfizer's rank-1 hit is a low-credibility shop; Sinovac's hits are
    /// authoritative and more relevant.
    fn fixture() -> Fixture {
        let (p, s) = (org("Pfizer"), org("Sinovac"));
        let rows = [
            ("https://shop-anything.xyz/pfizer", &p, 1, 0.10, Credibility::Unclassified),
            ("https://www.reuters.com/pfizer", &p, 2, 0.45, Credibility::Authoritative),
            ("https://cdc.gov/vaccines", &s, 1, 0.50, Credibility::GovernmentOrEducation),
            ("https://blog.com/sinovac", &s, 2, 0.30, Credibility::Commercial),
        ];
        let mut pool = ContextPool::empty("c7");
        pool.per_entity_counts = vec![
            EntityCount { entity: p.clone(), count: 2, failed: false },
            EntityCount { entity: s.clone(), count: 2, failed: false },
        ];
        let mut scored = Vec::new();
        for (url, e, rank, r, c) in rows {
            let snippet =
                Snippet::new(format!("body of {url}"), format!("title of {url}"), url, e.clone(), rank).unwrap();
            pool.snippets.push(snippet.clone());
            scored.push(ScoredSnippet::new(snippet, r, c, 0.6).unwrap());
        }
        let embeddings = (0..4).map(|i| vec![1.0, i as f64]).collect();
        Fixture {
            claim: Claim::new("c7", "Pfizer isn't Lamborghini. Sinovac isn't Proton.").unwrap(),
            entities: vec![p, s],
            pool,
            scored,
            embeddings,
        }
    }

    fn urls(input: &StrategyInput) -> Vec<&str> {
        input.evidence.iter().map(|s| s.snippet().url()).collect()
    }

    #[test]
    fn rave_and_search_k_disagree_on_low_credibility_top_hit() {
        let f = fixture();
        let rave = assemble_evidence(Strategy::Rave, &f.claim, Some(f.ctx()), 2, None).unwrap();
        let search = assemble_evidence(Strategy::SearchK, &f.claim, Some(f.ctx()), 2, None).unwrap();
        assert_eq!(urls(&search), ["https://shop-anything.xyz/pfizer", "https://www.reuters.com/pfizer"]);
        // 0.6*0.50 + 0.4*0.95 = 0.68 beats 0.6*0.45 + 0.4*1.00 = 0.67
        assert_eq!(urls(&rave), ["https://cdc.gov/vaccines", "https://www.reuters.com/pfizer"]);
    }

    #[test]
    fn small_pool_used_whole() {
        let f = fixture();
        for strategy in [Strategy::RandK, Strategy::SearchK, Strategy::RaveMeta, Strategy::Rave] {
            let input = assemble_evidence(strategy, &f.claim, Some(f.ctx()), 10, Some(1)).unwrap();
            assert_eq!(input.evidence.len(), 4, "{strategy}");
        }
    }

    #[test]
    fn rand_k_needs_seed_and_is_reproducible() {
        let f = fixture();
        assert!(matches!(
            assemble_evidence(Strategy::RandK, &f.claim, Some(f.ctx()), 2, None),
            Err(DecisionError::Config(_))
        ));
        let a = assemble_evidence(Strategy::RandK, &f.claim, Some(f.ctx()), 2, Some(42)).unwrap();
        let b = assemble_evidence(Strategy::RandK, &f.claim, Some(f.ctx()), 2, Some(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.evidence.len(), 2);
    }

    #[test]
    fn rand_k_frequencies_are_uniform() {
        let f = fixture();
        let (n, k, draws) = (f.scored.len(), 2usize, 10_000u64);
        let mut hits = vec![0u32; n];
        for seed in 0..draws {
            for s in sample_k(&f.scored, k, seed) {
                hits[f.scored.iter().position(|x| x == &s).unwrap()] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        for h in hits {
            let freq = f64::from(h) / draws as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "{freq} vs {p}");
        }
    }

    #[test]
    fn prompts_differ_only_in_evidence_block() {
        let f = fixture();
        let strip = |p: String| {
            let start = p.find("<evidence>").unwrap();
            let end = p.find("</evidence>").unwrap();
            format!("{}{}", &p[..start], &p[end..])
        };
        let reference =
            strip(render_decision_prompt(&assemble_evidence(Strategy::TextOnly, &f.claim, None, 3, None).unwrap()));
        for strategy in Strategy::ALL {
            let input = assemble_evidence(strategy, &f.claim, Some(f.ctx()), 3, Some(7)).unwrap();
            assert_eq!(strip(render_decision_prompt(&input)), reference, "{strategy}");
        }
    }

    #[test]
    fn evidence_block_contents() {
        let f = fixture();
        let text_only = render_evidence(&assemble_evidence(Strategy::TextOnly, &f.claim, None, 3, None).unwrap());
        assert_eq!(text_only, NO_CONTEXT_MARKER);

        let rave = render_evidence(&assemble_evidence(Strategy::Rave, &f.claim, Some(f.ctx()), 3, None).unwrap());
        for s in select_top_k(&f.scored, 3) {
            assert!(rave.contains(&format!("relevance: {:.4}", s.relevance())));
            assert!(rave.contains(&format!("credibility: {:.2}", s.credibility().score())));
            assert!(rave.contains(s.snippet().text()));
        }

        let meta = render_evidence(&assemble_evidence(Strategy::RaveMeta, &f.claim, Some(f.ctx()), 3, None).unwrap());
        assert!(meta.contains("domain: reuters.com"));
        assert!(meta.contains("credibility: 1.00"));
        assert!(!meta.contains("body of"));

        let stats = render_evidence(&assemble_evidence(Strategy::RaveStats, &f.claim, Some(f.ctx()), 3, None).unwrap());
        assert!(stats.contains("- entity coverage: 1.0000"));
        assert!(!stats.contains("domain:"));
    }

    #[test]
    fn empty_pool_uses_marker_not_text_only() {
        let f = fixture();
        let empty = ContextPool::empty("c7");
        let ctx = RetrievalContext { entities: &[], pool: &empty, scored: &[], embeddings: &[], results_per_query: 5 };
        let input = assemble_evidence(Strategy::Rave, &f.claim, Some(ctx), 3, None).unwrap();
        assert_eq!(render_evidence(&input), NO_SNIPPETS_MARKER);
        assert_eq!(input.strategy, Strategy::Rave);
    }

    #[test]
    fn tolerant_verdict_parsing() {
        let ok = [
            "```json\n{\"label\": \"VERIFIABLE\", \"rationale\": \"r\"}\n```",
            "Verdict: {\"label\": \"non-verifiable\"} hope that helps",
            "{\"label\": \"NON_VERIFIABLE\"}",
        ];
        let labels: Vec<_> = ok.iter().map(|r| parse_verdict(r).unwrap().0).collect();
        assert_eq!(
            labels,
            [VerifiabilityLabel::Verifiable, VerifiabilityLabel::NonVerifiable, VerifiabilityLabel::NonVerifiable]
        );
        assert!(parse_verdict("VERIFIABLE").is_err());
        assert!(parse_verdict("{\"rationale\": \"x\"}").is_err());
        assert!(parse_verdict("{\"label\": \"MAYBE\"}").is_err());
    }

    struct Replies(Mutex<Vec<String>>);

    impl Backend for Replies {
        fn chat(&self, _: &LlmRequest) -> Result<String, TransportError> {
            let mut r = self.0.lock().unwrap();
            Ok(if r.is_empty() { String::new() } else { r.remove(0) })
        }
        fn embed(&self, _: &EmbedRequest) -> Result<Vec<Vec<f64>>, TransportError> {
            unreachable!()
        }
        fn search(&self, _: &SearchRequest) -> Result<Vec<SearchItem>, TransportError> {
            unreachable!()
        }
    }

    fn gateway(replies: &[&str]) -> Gateway {
        let backend = Replies(Mutex::new(replies.iter().map(|s| s.to_string()).collect()));
        let config = GatewayConfig { mode: GatewayMode::Live, retry_backoff_ms: 0, ..Default::default() };
        Gateway::new(config, Arc::new(backend), None).unwrap()
    }

    #[test]
    fn decide_repairs_once() {
        let f = fixture();
        let input = assemble_evidence(Strategy::Rave, &f.claim, Some(f.ctx()), 3, None).unwrap();
        let d = decide(&gateway(&["hmm", "{\"label\":\"VERIFIABLE\"}"]), &input).unwrap();
        assert_eq!(d.label, VerifiabilityLabel::Verifiable);
        assert_eq!(d.prompt_hash, sha256_hex(render_decision_prompt(&input)));
        assert_eq!(d.evidence_used.len(), 3);

        match decide(&gateway(&["hmm", "{\"rationale\":\"no label\"}"]), &input) {
            Err(DecisionError::Format { raw_model_output, .. }) => assert!(raw_model_output.contains("no label")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recorded_decision_rerenders_to_same_hash() {
        let f = fixture();
        let input = assemble_evidence(Strategy::RaveMeta, &f.claim, Some(f.ctx()), 2, None).unwrap();
        let d = decide(&gateway(&["{\"label\":\"VERIFIABLE\"}"]), &input).unwrap();
        let again = StrategyInput::from_decision(f.claim.clone(), &d);
        assert_eq!(sha256_hex(render_decision_prompt(&again)), d.prompt_hash);
    }
}
