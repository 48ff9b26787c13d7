//! End-to-end runs: extract, retrieve, score, select and decide for every
//! claim under one or more strategy variants.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::decision::{assemble_evidence, decide, decision_template_digest, DecisionError, RetrievalContext};
use crate::digest::sha256_hex;
use crate::evaluation::{
    compute_metrics, sweep_k, tune_alpha, AlphaTuneResult, ConfigSnapshot, EvalError, EvalReport, Prediction,
    SweepResult, TuneConfig, TuneError,
};
use crate::extraction::{extract_entities, extraction_template_digest, ExtractionError, ExtractionResult};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{Claim, DecisionFailure, Entity, FailureKind, Outcome, Strategy, VerifiabilityLabel};
use crate::retrieval::{build_pool, ContextPool, RetrievalConfig};
use crate::scoring::{score_pool, CredibilityRules, ScoredPool, ScoringConfig};

/// One strategy plus the settings it runs under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub strategy: Strategy,
    pub alpha: f64,
    pub k: usize,
    /// Withhold relevance and credibility from the prompt.
    #[serde(default)]
    pub hide_scores: bool,
}

impl Variant {
    pub fn new(strategy: Strategy, alpha: f64, k: usize) -> Self {
        Self { name: strategy.as_str().to_string(), strategy, alpha, k, hide_scores: false }
    }

    /// The six strategies of the main comparison.
    pub fn all(alpha: f64, k: usize) -> Vec<Self> {
        Strategy::ALL.into_iter().map(|s| Self::new(s, alpha, k)).collect()
    }

    /// The score ablations of the full method: relevance only, credibility
    /// only, and snippets without scores.
    pub fn ablations(k: usize) -> Vec<Self> {
        vec![
            Self { name: "RAVE[relevance-only]".into(), ..Self::new(Strategy::Rave, 1.0, k) },
            Self { name: "RAVE[credibility-only]".into(), ..Self::new(Strategy::Rave, 0.0, k) },
            Self { name: "RAVE[no-scores]".into(), hide_scores: true, ..Self::new(Strategy::Rave, 0.6, k) },
        ]
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Per-stage counters, shared by all workers.
#[derive(Debug, Default)]
pub struct RunMetrics {
    claims: AtomicU64,
    entities: AtomicU64,
    zero_entity_claims: AtomicU64,
    extraction_failures: AtomicU64,
    extraction_repairs: AtomicU64,
    unknown_kinds: AtomicU64,
    hallucinated_entities: AtomicU64,
    searches: AtomicU64,
    search_failures: AtomicU64,
    empty_searches: AtomicU64,
    snippets: AtomicU64,
    duplicate_urls: AtomicU64,
    dropped_snippets: AtomicU64,
    decisions: AtomicU64,
    unparseable: AtomicU64,
    failures: AtomicU64,
}

/// Plain snapshot of [`RunMetrics`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub claims: u64,
    pub entities: u64,
    pub zero_entity_claims: u64,
    pub extraction_failures: u64,
    pub extraction_repairs: u64,
    pub unknown_kinds: u64,
    pub hallucinated_entities: u64,
    pub searches: u64,
    pub search_failures: u64,
    pub empty_searches: u64,
    pub snippets: u64,
    pub duplicate_urls: u64,
    pub dropped_snippets: u64,
    pub decisions: u64,
    pub unparseable: u64,
    pub failures: u64,
}

impl RunMetrics {
    fn add(counter: &AtomicU64, n: usize) {
        counter.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> Counters {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        Counters {
            claims: get(&self.claims),
            entities: get(&self.entities),
            zero_entity_claims: get(&self.zero_entity_claims),
            extraction_failures: get(&self.extraction_failures),
            extraction_repairs: get(&self.extraction_repairs),
            unknown_kinds: get(&self.unknown_kinds),
            hallucinated_entities: get(&self.hallucinated_entities),
            searches: get(&self.searches),
            search_failures: get(&self.search_failures),
            empty_searches: get(&self.empty_searches),
            snippets: get(&self.snippets),
            duplicate_urls: get(&self.duplicate_urls),
            dropped_snippets: get(&self.dropped_snippets),
            decisions: get(&self.decisions),
            unparseable: get(&self.unparseable),
            failures: get(&self.failures),
        }
    }
}

/// Extraction and retrieval output for one claim.
#[derive(Debug, Clone)]
pub struct ClaimContext {
    pub extraction: Option<ExtractionResult>,
    pub entities: Vec<Entity>,
    pub pool: ContextPool,
    /// Scores under the alpha given to [`Engine::prepare`].
    pub scored: Result<ScoredPool, String>,
}

/// Gateway, rules and settings for a run.
#[derive(Debug)]
pub struct Engine {
    gateway: Gateway,
    rules: CredibilityRules,
    retrieval: RetrievalConfig,
    seed: u64,
    workers: usize,
    metrics: RunMetrics,
}

/// RAND_K seed for one claim, derived from the run seed.
pub fn claim_seed(seed: u64, claim_id: &str) -> u64 {
    let digest = sha256_hex(format!("{seed}:{claim_id}"));
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

impl Engine {
    pub fn new(
        gateway: Gateway,
        rules: CredibilityRules,
        retrieval: RetrievalConfig,
        seed: u64,
        workers: usize,
    ) -> Self {
        Self { gateway, rules, retrieval, seed, workers: workers.max(1), metrics: RunMetrics::default() }
    }

    pub fn from_config(
        config: &RunConfig,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, crate::config::ConfigError> {
        config.validate()?;
        let rules = config.credibility_rules()?;
        let gateway = config.gateway(lookup)?;
        Ok(Self::new(gateway, rules, config.retrieval(), config.seed, config.worker_count()))
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn rules(&self) -> &CredibilityRules {
        &self.rules
    }

    pub fn counters(&self) -> Counters {
        self.metrics.snapshot()
    }

    /// Extract entities. A format failure is logged and treated as an
    /// empty entity list; a service failure is returned.
    pub fn extract(&self, claim: &Claim) -> Result<Option<ExtractionResult>, GatewayError> {
        let m = &self.metrics;
        match extract_entities(&self.gateway, claim) {
            Ok(report) => {
                RunMetrics::add(&m.unknown_kinds, report.unknown_kinds);
                RunMetrics::add(&m.hallucinated_entities, report.hallucinated);
                RunMetrics::add(&m.extraction_repairs, usize::from(report.repaired));
                Ok(Some(report.result))
            }
            Err(ExtractionError::Format { message, .. }) => {
                log::warn!("claim {}: extraction failed ({message}); continuing with no entities", claim.id());
                RunMetrics::add(&m.extraction_failures, 1);
                Ok(None)
            }
            Err(ExtractionError::Gateway(e)) => {
                RunMetrics::add(&m.extraction_failures, 1);
                Err(e)
            }
        }
    }

    /// Extraction and pool construction for one claim.
    pub fn retrieve(
        &self,
        claim: &Claim,
    ) -> Result<(Option<ExtractionResult>, Vec<Entity>, ContextPool), GatewayError> {
        let m = &self.metrics;
        let extraction = self.extract(claim)?;
        let entities = extraction.as_ref().map(|e| e.entities.clone()).unwrap_or_default();
        RunMetrics::add(&m.entities, entities.len());
        RunMetrics::add(&m.zero_entity_claims, usize::from(entities.is_empty()));

        let report = build_pool(&self.gateway, claim, &entities, &self.retrieval);
        RunMetrics::add(&m.searches, report.queries);
        RunMetrics::add(&m.search_failures, report.failed_queries);
        RunMetrics::add(&m.empty_searches, report.empty_queries);
        RunMetrics::add(&m.duplicate_urls, report.duplicates);
        RunMetrics::add(&m.snippets, report.pool.snippets.len());
        Ok((extraction, entities, report.pool))
    }

    /// Extraction, pool construction and scoring for one claim.
    pub fn prepare(&self, claim: &Claim, alpha: f64) -> Result<ClaimContext, GatewayError> {
        let (extraction, entities, pool) = self.retrieve(claim)?;
        let scoring = ScoringConfig { alpha, k: 1 };
        let scored = score_pool(&self.gateway, &self.rules, claim, &pool, &scoring).map_err(|e| e.to_string());
        match &scored {
            Ok(s) => RunMetrics::add(&self.metrics.dropped_snippets, s.dropped.len()),
            Err(e) => log::warn!("claim {}: scoring failed: {e}", claim.id()),
        }
        Ok(ClaimContext { extraction, entities, pool, scored })
    }

    fn failure(
        &self,
        claim: &Claim,
        variant: &Variant,
        kind: FailureKind,
        message: String,
        raw: Option<String>,
    ) -> Outcome {
        let m = &self.metrics;
        RunMetrics::add(if kind == FailureKind::DecisionFormat { &m.unparseable } else { &m.failures }, 1);
        log::error!("claim {} ({}): {message}", claim.id(), variant.name);
        Outcome::Failed(DecisionFailure {
            claim_id: claim.id().to_string(),
            strategy: variant.strategy,
            kind,
            message,
            raw_model_output: raw,
        })
    }

    /// Decide one claim under one variant. `ctx` is ignored for TEXT_ONLY.
    pub fn decide_variant(&self, claim: &Claim, ctx: Option<&ClaimContext>, variant: &Variant) -> Outcome {
        let rescored;
        let retrieval = if variant.strategy.needs_retrieval() {
            let Some(ctx) = ctx else {
                return self.failure(claim, variant, FailureKind::Service, "retrieval did not complete".into(), None);
            };
            let scored = match &ctx.scored {
                Ok(s) => s,
                Err(e) => return self.failure(claim, variant, FailureKind::Scoring, e.clone(), None),
            };
            rescored = match scored.with_alpha(variant.alpha) {
                Ok(s) => s,
                Err(e) => return self.failure(claim, variant, FailureKind::Scoring, e.to_string(), None),
            };
            Some(RetrievalContext {
                entities: &ctx.entities,
                pool: &ctx.pool,
                scored: &rescored.scored,
                embeddings: &rescored.embeddings,
                results_per_query: self.retrieval.results_per_query,
            })
        } else {
            None
        };
        let seed = (variant.strategy == Strategy::RandK).then(|| claim_seed(self.seed, claim.id()));
        let mut input = match assemble_evidence(variant.strategy, claim, retrieval, variant.k, seed) {
            Ok(i) => i,
            Err(e) => return self.failure(claim, variant, FailureKind::Service, e.to_string(), None),
        };
        if variant.hide_scores {
            input.include_scores = false;
        }
        match decide(&self.gateway, &input) {
            Ok(d) => {
                RunMetrics::add(&self.metrics.decisions, 1);
                Outcome::Decided(d)
            }
            Err(DecisionError::Format { message, raw_model_output }) => {
                self.failure(claim, variant, FailureKind::DecisionFormat, message, Some(raw_model_output))
            }
            Err(e) => self.failure(claim, variant, FailureKind::Service, e.to_string(), None),
        }
    }

    fn process(&self, claim: &Claim, variants: &[Variant]) -> Vec<Outcome> {
        RunMetrics::add(&self.metrics.claims, 1);
        let ctx = if variants.iter().any(|v| v.strategy.needs_retrieval()) {
            let alpha = variants.iter().find(|v| v.strategy.needs_retrieval()).map_or(0.6, |v| v.alpha);
            match self.prepare(claim, alpha) {
                Ok(c) => Some(c),
                Err(e) => {
                    return variants
                        .iter()
                        .map(|v| {
                            if v.strategy.needs_retrieval() {
                                self.failure(claim, v, FailureKind::Service, e.to_string(), None)
                            } else {
                                self.decide_variant(claim, None, v)
                            }
                        })
                        .collect()
                }
            }
        } else {
            None
        };
        variants.iter().map(|v| self.decide_variant(claim, ctx.as_ref(), v)).collect()
    }

    /// Run every claim through every variant. `result[v][c]` is the outcome
    /// of claim `c` under variant `v`, in corpus order whatever the worker
    /// scheduling.
    pub fn run(&self, claims: &[Claim], variants: &[Variant]) -> Vec<Vec<Outcome>> {
        let per_claim = self.map_claims(claims, |c| self.process(c, variants));
        let mut per_variant: Vec<Vec<Outcome>> = variants.iter().map(|_| Vec::with_capacity(claims.len())).collect();
        for outcomes in per_claim {
            for (slot, o) in per_variant.iter_mut().zip(outcomes) {
                slot.push(o);
            }
        }
        per_variant
    }

    /// `f` applied to every claim on the worker pool, results in input order.
    pub fn map_claims<T, F>(&self, claims: &[Claim], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&Claim) -> T + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build().expect("thread pool");
        pool.install(|| claims.par_iter().map(&f).collect())
    }

    pub fn snapshot(&self, variant: &Variant, config: &RunConfig) -> ConfigSnapshot {
        ConfigSnapshot {
            alpha: variant.alpha,
            k: variant.k,
            model_id: config.model_id.clone(),
            embedding_model_id: config.embedding_model_id.clone(),
            extraction_template_digest: extraction_template_digest(),
            decision_template_digest: decision_template_digest(),
            credibility_rules_digest: self.rules.digest().to_string(),
        }
    }

    /// Metrics for each variant's outcomes.
    pub fn evaluate(
        &self,
        claims: &[Claim],
        variants: &[Variant],
        outcomes: &[Vec<Outcome>],
        config: &RunConfig,
    ) -> Vec<Result<EvalReport, EvalError>> {
        let golds = gold_labels(claims);
        variants
            .iter()
            .zip(outcomes)
            .map(|(v, o)| compute_metrics(&v.name, v.strategy, &config.dataset, o, &golds, self.snapshot(v, config)))
            .collect()
    }
}

/// Run `strategy` at every K and score each run. Extraction, retrieval
/// and scoring happen once per claim.
pub fn run_sweep(engine: &Engine, claims: &[Claim], strategy: Strategy, config: &RunConfig) -> SweepResult {
    let variants: Vec<Variant> = config
        .k_values
        .iter()
        .map(|&k| Variant::new(strategy, config.alpha, k).with_name(format!("{}[k={k}]", strategy.as_str())))
        .collect();
    let outcomes = engine.run(claims, &variants);
    let reports = engine.evaluate(claims, &variants, &outcomes, config);
    let mut by_k = config.k_values.iter().copied().zip(reports).collect::<Vec<_>>();
    sweep_k(&config.k_values, |k| {
        let i = by_k.iter().position(|(kk, _)| *kk == k).expect("k from the same list");
        by_k.remove(i).1
    })
}

/// Tune alpha for RAVE over `config.alpha_grid` at `config.k`.
pub fn run_tune(engine: &Engine, claims: &[Claim], config: &RunConfig) -> Result<AlphaTuneResult, TuneError> {
    let golds = gold_labels(claims);
    let variants: Vec<Variant> = config
        .alpha_grid
        .iter()
        .map(|&a| Variant::new(Strategy::Rave, a, config.k).with_name(format!("RAVE[alpha={a}]")))
        .collect();
    let outcomes = engine.run(claims, &variants);
    let tune = TuneConfig { resamples: config.bootstrap_resamples, seed: config.seed, tie_break: config.tie_break };
    tune_alpha(&config.alpha_grid, &tune, |alpha| {
        let i = config.alpha_grid.iter().position(|a| *a == alpha).expect("alpha from the grid");
        outcomes[i]
            .iter()
            .map(|o| {
                let gold =
                    golds.get(o.claim_id()).ok_or_else(|| format!("no gold label for claim {}", o.claim_id()))?;
                Ok::<Prediction, String>((*gold, o.decision().map(|d| d.label)))
            })
            .collect::<Result<Vec<_>, String>>()
    })
}

pub fn gold_labels(claims: &[Claim]) -> HashMap<String, VerifiabilityLabel> {
    claims.iter().filter_map(|c| c.gold_label().map(|g| (c.id().to_string(), g))).collect()
}

/// Decisions file body: one line per outcome.
pub fn outcome_lines(outcomes: &[Outcome]) -> String {
    outcomes.iter().map(|o| o.to_line() + "\n").collect()
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub variants: Vec<Variant>,
    pub extraction_template_digest: String,
    pub decision_template_digest: String,
    pub credibility_rules_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture_cache_digest: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub counters: Counters,
    /// sha256 of each output file, by file name.
    pub outputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, engine: &Engine, config: &RunConfig, variants: &[Variant], started_at: String) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            variants: variants.to_vec(),
            extraction_template_digest: extraction_template_digest(),
            decision_template_digest: decision_template_digest(),
            credibility_rules_digest: engine.rules.digest().to_string(),
            fixture_cache_digest: engine.gateway.cache().map(|c| c.digest().to_string()),
            started_at,
            finished_at: String::new(),
            counters: Counters::default(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, engine: &Engine) {
        self.finished_at = now();
        self.counters = engine.counters();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// 0 clean, 1 when any claim ended in a failure.
pub fn exit_code(counters: &Counters) -> i32 {
    if counters.failures + counters.unparseable + counters.extraction_failures > 0 {
        1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, GatewayMode, Simulator};
    use std::sync::Arc;

    fn engine(workers: usize) -> Engine {
        let config = GatewayConfig { mode: GatewayMode::Live, ..Default::default() };
        let gateway = Gateway::new(config, Arc::new(Simulator), None).unwrap();
        Engine::new(gateway, CredibilityRules::default(), RetrievalConfig::default(), 7, workers)
    }

    fn claims() -> Vec<Claim> {
        [
            "Pfizer isn't Lamborghini. Sinovac isn't Proton.",
            "we found a way toward a solution",
            "The WHO reported 3 million deaths in 2020.",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| Claim::new(format!("c{i}"), *t).unwrap())
        .collect()
    }

    #[test]
    fn order_is_independent_of_workers() {
        let variants = Variant::all(0.6, 3);
        let a = engine(1).run(&claims(), &variants);
        let b = engine(4).run(&claims(), &variants);
        assert_eq!(a, b);
        for per_variant in &a {
            let ids: Vec<_> = per_variant.iter().map(|o| o.claim_id().to_string()).collect();
            assert_eq!(ids, ["c0", "c1", "c2"]);
        }
    }

    #[test]
    fn text_only_runs_no_retrieval() {
        let e = engine(2);
        e.run(&claims(), &[Variant::new(Strategy::TextOnly, 0.6, 3)]);
        let c = e.counters();
        assert_eq!((c.snippets, c.searches, c.entities), (0, 0, 0));
        assert_eq!(c.decisions, 3);
    }

    #[test]
    fn claim_seeds_differ() {
        assert_ne!(claim_seed(0, "a"), claim_seed(0, "b"));
        assert_ne!(claim_seed(0, "a"), claim_seed(1, "a"));
        assert_eq!(claim_seed(3, "a"), claim_seed(3, "a"));
    }

    #[test]
    fn ablation_names_and_flags() {
        let a = Variant::ablations(3);
        assert_eq!(a.iter().map(|v| v.alpha).collect::<Vec<_>>(), [1.0, 0.0, 0.6]);
        assert!(a[2].hide_scores);
    }
}
