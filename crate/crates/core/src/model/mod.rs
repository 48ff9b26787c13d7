//! Shared domain types.
//!
//! Every type with an invariant validates it on construction and again on
//! deserialization, so a value that exists is a value that is valid.

mod record;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use record::{parse_any_record, parse_record, serialize_record, AnyRecord, Record, RecordError, SCHEMA_VERSION};

/// Prefix used for invariant failures so the record parser can tell them
/// apart from plain schema errors.
pub(crate) const INVARIANT_PREFIX: &str = "invariant violated";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invariant violated: {field}: {reason}")]
pub struct ValidationError {
    pub field: String,
    pub reason: String,
}

impl ValidationError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { field: field.into(), reason: reason.into() }
    }
}

/// Verifiability verdict. The positive class is `Verifiable`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerifiabilityLabel {
    #[serde(rename = "VERIFIABLE")]
    Verifiable,
    #[serde(rename = "NON-VERIFIABLE")]
    NonVerifiable,
}

impl VerifiabilityLabel {
    pub const ALL: [VerifiabilityLabel; 2] = [Self::Verifiable, Self::NonVerifiable];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Verifiable => "VERIFIABLE",
            Self::NonVerifiable => "NON-VERIFIABLE",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Self::Verifiable
    }
}

impl fmt::Display for VerifiabilityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerifiabilityLabel {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VERIFIABLE" => Ok(Self::Verifiable),
            "NON-VERIFIABLE" => Ok(Self::NonVerifiable),
            other => Err(ValidationError::new("label", format!("unknown label {other:?}"))),
        }
    }
}

/// The five entity types the extractor is allowed to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityKind {
    Person,
    Org,
    Location,
    Event,
    ClaimObject,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [Self::Person, Self::Org, Self::Location, Self::Event, Self::ClaimObject];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Person => "PERSON",
            Self::Org => "ORG",
            Self::Location => "LOCATION",
            Self::Event => "EVENT",
            Self::ClaimObject => "CLAIM_OBJECT",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ValidationError::new("kind", format!("unknown entity kind {s:?}")))
    }
}

/// One input text unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawClaim")]
pub struct Claim {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_label: Option<VerifiabilityLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_dataset: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClaim {
    id: String,
    text: String,
    #[serde(default)]
    gold_label: Option<VerifiabilityLabel>,
    #[serde(default)]
    source_dataset: Option<String>,
}

impl TryFrom<RawClaim> for Claim {
    type Error = ValidationError;

    fn try_from(raw: RawClaim) -> Result<Self, Self::Error> {
        let mut claim = Claim::new(raw.id, raw.text)?;
        claim.gold_label = raw.gold_label;
        claim.source_dataset = raw.source_dataset;
        Ok(claim)
    }
}

impl Claim {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ValidationError> {
        let id = id.into();
        let text = text.into();
        if id.trim().is_empty() {
            return Err(ValidationError::new("id", "must not be empty"));
        }
        if text.trim().is_empty() {
            return Err(ValidationError::new("text", "must not be empty after trimming"));
        }
        Ok(Self { id, text, gold_label: None, source_dataset: None })
    }

    pub fn with_gold(mut self, label: VerifiabilityLabel) -> Self {
        self.gold_label = Some(label);
        self
    }

    pub fn with_source(mut self, tag: impl Into<String>) -> Self {
        self.source_dataset = Some(tag.into());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn gold_label(&self) -> Option<VerifiabilityLabel> {
        self.gold_label
    }

    pub fn source_dataset(&self) -> Option<&str> {
        self.source_dataset.as_deref()
    }
}

/// A typed phrase lifted from a claim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawEntity")]
pub struct Entity {
    surface: String,
    kind: EntityKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntity {
    surface: String,
    kind: EntityKind,
}

impl TryFrom<RawEntity> for Entity {
    type Error = ValidationError;

    fn try_from(raw: RawEntity) -> Result<Self, Self::Error> {
        Entity::new(raw.surface, raw.kind)
    }
}

impl Entity {
    pub fn new(surface: impl Into<String>, kind: EntityKind) -> Result<Self, ValidationError> {
        let surface = surface.into();
        if surface.trim().is_empty() {
            return Err(ValidationError::new("surface", "must not be empty"));
        }
        Ok(Self { surface, kind })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.surface)
    }
}

/// Lowercased host of `url` with scheme, port, credentials and a leading
/// `www.` removed. Scheme-less inputs are read as `http://`.
pub fn domain_from_url(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    let parsed = url::Url::parse(raw)
        .ok()
        .filter(|u| u.has_host())
        .or_else(|| url::Url::parse(&format!("http://{raw}")).ok())?;
    let host = parsed.host_str()?.trim_end_matches('.').to_ascii_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host).to_string();
    if host.is_empty() {
        None
    } else {
        Some(host)
    }
}

/// A search result kept as evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSnippet")]
pub struct Snippet {
    text: String,
    domain: String,
    title: String,
    url: String,
    origin_entity: Entity,
    rank_in_search: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSnippet {
    text: String,
    domain: String,
    title: String,
    url: String,
    origin_entity: Entity,
    rank_in_search: u32,
}

impl TryFrom<RawSnippet> for Snippet {
    type Error = ValidationError;

    fn try_from(raw: RawSnippet) -> Result<Self, Self::Error> {
        let snippet = Snippet::new(raw.text, raw.title, raw.url, raw.origin_entity, raw.rank_in_search)?;
        if snippet.domain != raw.domain {
            return Err(ValidationError::new(
                "domain",
                format!("{:?} does not match the url host {:?}", raw.domain, snippet.domain),
            ));
        }
        Ok(snippet)
    }
}

impl Snippet {
    pub fn new(
        text: impl Into<String>,
        title: impl Into<String>,
        url: impl Into<String>,
        origin_entity: Entity,
        rank_in_search: u32,
    ) -> Result<Self, ValidationError> {
        let url = url.into();
        let domain = domain_from_url(&url)
            .ok_or_else(|| ValidationError::new("url", format!("no parseable host in {url:?}")))?;
        if rank_in_search < 1 {
            return Err(ValidationError::new("rank_in_search", "must be >= 1"));
        }
        Ok(Self { text: text.into(), domain, title: title.into(), url, origin_entity, rank_in_search })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn origin_entity(&self) -> &Entity {
        &self.origin_entity
    }

    pub fn rank_in_search(&self) -> u32 {
        self.rank_in_search
    }
}

/// Source credibility tiers. The only values a credibility score can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Credibility {
    /// Other or unclassified domains.
    Unclassified,
    /// General commercial (.com).
    Commercial,
    /// Non-profit organizations (.org).
    NonProfit,
    /// Established news outlets.
    News,
    /// Academic and research institutions.
    Academic,
    /// Government and educational suffixes.
    GovernmentOrEducation,
    /// Highly authoritative sources.
    Authoritative,
}

impl Credibility {
    pub const ALL: [Credibility; 7] = [
        Self::Authoritative,
        Self::GovernmentOrEducation,
        Self::Academic,
        Self::News,
        Self::NonProfit,
        Self::Commercial,
        Self::Unclassified,
    ];

    pub fn score(self) -> f64 {
        match self {
            Self::Authoritative => 1.00,
            Self::GovernmentOrEducation => 0.95,
            Self::Academic => 0.85,
            Self::News => 0.75,
            Self::NonProfit => 0.65,
            Self::Commercial => 0.50,
            Self::Unclassified => 0.40,
        }
    }

    /// Exact inverse of [`Credibility::score`].
    pub fn from_score(score: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.score() == score)
    }
}

impl Serialize for Credibility {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.score())
    }
}

impl<'de> Deserialize<'de> for Credibility {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let score = f64::deserialize(deserializer)?;
        Credibility::from_score(score).ok_or_else(|| {
            serde::de::Error::custom(ValidationError::new(
                "credibility",
                format!("{score} is not one of 1.00, 0.95, 0.85, 0.75, 0.65, 0.50, 0.40"),
            ))
        })
    }
}

/// A snippet with its relevance, credibility and combined score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoredSnippet")]
pub struct ScoredSnippet {
    snippet: Snippet,
    relevance: f64,
    credibility: Credibility,
    alpha: f64,
    combined: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScoredSnippet {
    snippet: Snippet,
    relevance: f64,
    credibility: Credibility,
    alpha: f64,
    combined: f64,
}

impl TryFrom<RawScoredSnippet> for ScoredSnippet {
    type Error = ValidationError;

    fn try_from(raw: RawScoredSnippet) -> Result<Self, Self::Error> {
        let scored = ScoredSnippet::new(raw.snippet, raw.relevance, raw.credibility, raw.alpha)?;
        if scored.combined.to_bits() != raw.combined.to_bits() {
            return Err(ValidationError::new(
                "combined",
                format!("{} != alpha*relevance + (1-alpha)*credibility = {}", raw.combined, scored.combined),
            ));
        }
        Ok(scored)
    }
}

impl ScoredSnippet {
    pub fn new(
        snippet: Snippet,
        relevance: f64,
        credibility: Credibility,
        alpha: f64,
    ) -> Result<Self, ValidationError> {
        if !(-1.0..=1.0).contains(&relevance) {
            return Err(ValidationError::new("relevance", format!("{relevance} outside [-1, 1]")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ValidationError::new("alpha", format!("{alpha} outside [0, 1]")));
        }
        let combined = crate::scoring::combined_score(relevance, credibility.score(), alpha);
        Ok(Self { snippet, relevance, credibility, alpha, combined })
    }

    pub fn snippet(&self) -> &Snippet {
        &self.snippet
    }

    pub fn relevance(&self) -> f64 {
        self.relevance
    }

    pub fn credibility(&self) -> Credibility {
        self.credibility
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn combined(&self) -> f64 {
        self.combined
    }
}

/// Evidence strategies: the full method and its five baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    TextOnly,
    RandK,
    SearchK,
    RaveStats,
    RaveMeta,
    Rave,
}

impl Strategy {
    pub const ALL: [Strategy; 6] =
        [Self::TextOnly, Self::RandK, Self::SearchK, Self::RaveStats, Self::RaveMeta, Self::Rave];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TextOnly => "TEXT_ONLY",
            Self::RandK => "RAND_K",
            Self::SearchK => "SEARCH_K",
            Self::RaveStats => "RAVE_STATS",
            Self::RaveMeta => "RAVE_META",
            Self::Rave => "RAVE",
        }
    }

    /// Whether the strategy needs extraction, retrieval and scoring.
    pub fn needs_retrieval(self) -> bool {
        self != Self::TextOnly
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = ValidationError;

    /// Accepts the canonical upper-case names as well as kebab/lower case
    /// (`rave-meta`, `text_only`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ValidationError::new("strategy", format!("unknown strategy {s:?}")))
    }
}

/// Aggregated retrieval statistics handed to the stats-only baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRetrievalStats")]
pub struct RetrievalStats {
    pub entity_count: u32,
    pub entity_coverage: f64,
    pub snippet_coverage: f64,
    pub source_diversity: f64,
    pub inter_snippet_agreement: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRetrievalStats {
    entity_count: u32,
    entity_coverage: f64,
    snippet_coverage: f64,
    source_diversity: f64,
    inter_snippet_agreement: f64,
}

impl TryFrom<RawRetrievalStats> for RetrievalStats {
    type Error = ValidationError;

    fn try_from(raw: RawRetrievalStats) -> Result<Self, Self::Error> {
        let stats = RetrievalStats {
            entity_count: raw.entity_count,
            entity_coverage: raw.entity_coverage,
            snippet_coverage: raw.snippet_coverage,
            source_diversity: raw.source_diversity,
            inter_snippet_agreement: raw.inter_snippet_agreement,
        };
        stats.validate()?;
        Ok(stats)
    }
}

impl RetrievalStats {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let unit = 0.0..=1.0;
        for (name, v) in [
            ("entity_coverage", self.entity_coverage),
            ("snippet_coverage", self.snippet_coverage),
            ("source_diversity", self.source_diversity),
        ] {
            if !unit.contains(&v) {
                return Err(ValidationError::new(name, format!("{v} outside [0, 1]")));
            }
        }
        if !(-1.0..=1.0).contains(&self.inter_snippet_agreement) {
            return Err(ValidationError::new(
                "inter_snippet_agreement",
                format!("{} outside [-1, 1]", self.inter_snippet_agreement),
            ));
        }
        if self.entity_count == 0 && self.entity_coverage != 0.0 {
            return Err(ValidationError::new("entity_coverage", "must be 0 when entity_count is 0"));
        }
        Ok(())
    }
}

/// A verdict for one claim under one strategy.
///
/// `show_text`/`show_scores` and `stats` record exactly what the prompt
/// showed, so the prompt can be re-rendered from the record alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDecision")]
pub struct Decision {
    pub claim_id: String,
    pub strategy: Strategy,
    pub label: VerifiabilityLabel,
    pub raw_model_output: String,
    pub evidence_used: Vec<ScoredSnippet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<RetrievalStats>,
    pub show_text: bool,
    pub show_scores: bool,
    pub prompt_hash: String,
    pub template_digest: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecision {
    claim_id: String,
    strategy: Strategy,
    label: VerifiabilityLabel,
    raw_model_output: String,
    evidence_used: Vec<ScoredSnippet>,
    #[serde(default)]
    stats: Option<RetrievalStats>,
    show_text: bool,
    show_scores: bool,
    prompt_hash: String,
    template_digest: String,
}

impl TryFrom<RawDecision> for Decision {
    type Error = ValidationError;

    fn try_from(r: RawDecision) -> Result<Self, Self::Error> {
        let d = Decision {
            claim_id: r.claim_id,
            strategy: r.strategy,
            label: r.label,
            raw_model_output: r.raw_model_output,
            evidence_used: r.evidence_used,
            stats: r.stats,
            show_text: r.show_text,
            show_scores: r.show_scores,
            prompt_hash: r.prompt_hash,
            template_digest: r.template_digest,
        };
        d.validate()?;
        Ok(d)
    }
}

impl Decision {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.strategy == Strategy::TextOnly && !self.evidence_used.is_empty() {
            return Err(ValidationError::new("evidence_used", "must be empty for TEXT_ONLY"));
        }
        if self.prompt_hash.is_empty() {
            return Err(ValidationError::new("prompt_hash", "must not be empty"));
        }
        Ok(())
    }
}

/// Why a claim ended without a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The model never produced a parseable verdict.
    DecisionFormat,
    /// An external service failed terminally.
    Service,
    /// Scoring could not embed the claim.
    Scoring,
}

/// Placeholder written in place of a decision when a claim failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionFailure {
    pub claim_id: String,
    pub strategy: Strategy,
    pub kind: FailureKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_model_output: Option<String>,
}

/// One line of a decisions file.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Decided(Decision),
    Failed(DecisionFailure),
}

impl Outcome {
    pub fn claim_id(&self) -> &str {
        match self {
            Outcome::Decided(d) => &d.claim_id,
            Outcome::Failed(f) => &f.claim_id,
        }
    }

    pub fn decision(&self) -> Option<&Decision> {
        match self {
            Outcome::Decided(d) => Some(d),
            Outcome::Failed(_) => None,
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Outcome::Decided(d) => serialize_record(d),
            Outcome::Failed(f) => serialize_record(f),
        }
    }

    pub fn from_line(line: &str) -> Result<Self, RecordError> {
        match parse_any_record(line)? {
            AnyRecord::Decision(d) => Ok(Outcome::Decided(d)),
            AnyRecord::DecisionFailure(f) => Ok(Outcome::Failed(f)),
            other => Err(RecordError::Schema {
                field: "type".into(),
                message: format!("expected decision or decision_failure, found {}", other.kind()),
            }),
        }
    }
}
