//! Zero-shot, prompt-based entity extraction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::digest::sha256_hex;
use crate::gateway::{Gateway, GatewayError};
use crate::model::{Claim, Entity, EntityKind, ValidationError};
use crate::structured::{json_objects, squash_whitespace};

pub const EXTRACTION_TEMPLATE: &str = include_str!("../assets/extraction_prompt.v1.txt");
pub const EXTRACTION_TEMPLATE_VERSION: &str = "extraction_prompt.v1";

const CLAIM_SLOT: &str = "{{claim}}";

const REPAIR_NOTE: &str = "Your previous reply could not be parsed. Reply with only the JSON object in the form \
shown above, with no other text.";

pub fn extraction_template_digest() -> String {
    sha256_hex(EXTRACTION_TEMPLATE)
}

/// Entities for one claim, plus the raw model output they came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExtractionResult")]
pub struct ExtractionResult {
    pub claim_id: String,
    pub entities: Vec<Entity>,
    pub raw_model_output: String,
    pub template_digest: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExtractionResult {
    claim_id: String,
    entities: Vec<Entity>,
    raw_model_output: String,
    template_digest: String,
}

impl TryFrom<RawExtractionResult> for ExtractionResult {
    type Error = ValidationError;

    fn try_from(raw: RawExtractionResult) -> Result<Self, Self::Error> {
        let mut seen = HashSet::new();
        for e in &raw.entities {
            if !seen.insert(dedup_key(e)) {
                return Err(ValidationError::new("entities", format!("duplicate entity {e}")));
            }
        }
        Ok(Self {
            claim_id: raw.claim_id,
            entities: raw.entities,
            raw_model_output: raw.raw_model_output,
            template_digest: raw.template_digest,
        })
    }
}

fn normalize(text: &str) -> String {
    squash_whitespace(text).to_lowercase()
}

fn dedup_key(e: &Entity) -> (String, EntityKind) {
    (normalize(e.surface()), e.kind())
}

/// Extraction result with the bookkeeping the run manifest needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionReport {
    pub result: ExtractionResult,
    /// Items whose kind is outside the five allowed types.
    pub unknown_kinds: usize,
    /// Items whose surface does not occur in the claim.
    pub hallucinated: usize,
    pub duplicates: usize,
    /// Whether the format-repair prompt was needed.
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractionError {
    #[error("model output is not a valid entity list after one repair attempt: {message}")]
    Format { message: String, raw_model_output: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Fill the template's claim slot. The template mentions no claim text of
/// its own, so the claim appears exactly once.
pub fn render_extraction_prompt(claim: &Claim) -> String {
    EXTRACTION_TEMPLATE.replacen(CLAIM_SLOT, claim.text(), 1)
}

/// Entities accepted from one model reply.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedEntities {
    pub entities: Vec<Entity>,
    pub unknown_kinds: usize,
    pub hallucinated: usize,
    pub duplicates: usize,
}

/// Parse a reply. Fails only if no entity list can be found at all;
/// individual bad items are dropped and counted.
pub fn parse_extraction(raw: &str, claim_text: &str) -> Result<ParsedEntities, String> {
    let list = json_objects(raw)
        .into_iter()
        .find_map(|obj| match obj.get("entities") {
            Some(Value::Array(items)) => Some(items.clone()),
            _ => None,
        })
        .ok_or_else(|| "no JSON object with an \"entities\" array".to_string())?;

    let claim_norm = normalize(claim_text);
    let mut parsed = ParsedEntities::default();
    let mut seen = HashSet::new();
    for item in list {
        let surface = item.get("surface").and_then(Value::as_str).map(squash_whitespace);
        let kind = item.get("kind").and_then(Value::as_str);
        let Some(surface) = surface.filter(|s| !s.is_empty()) else {
            log::warn!("extraction item without a surface: {item}");
            parsed.unknown_kinds += 1;
            continue;
        };
        let Some(kind) = kind.and_then(|k| k.trim().to_ascii_uppercase().parse::<EntityKind>().ok()) else {
            log::warn!("dropping entity {surface:?} with unsupported kind {kind:?}");
            parsed.unknown_kinds += 1;
            continue;
        };
        if !claim_norm.contains(&normalize(&surface)) {
            log::warn!("dropping entity {surface:?}: not found in the claim");
            parsed.hallucinated += 1;
            continue;
        }
        let entity = Entity::new(surface, kind).expect("surface checked non-empty");
        if seen.insert(dedup_key(&entity)) {
            parsed.entities.push(entity);
        } else {
            parsed.duplicates += 1;
        }
    }
    Ok(parsed)
}

/// Extract entities from `claim`, with at most one format-repair prompt.
pub fn extract_entities(gateway: &Gateway, claim: &Claim) -> Result<ExtractionReport, ExtractionError> {
    let prompt = render_extraction_prompt(claim);
    let raw = gateway.chat(&gateway.llm_request(prompt.clone()))?;
    let (parsed, raw, repaired) = match parse_extraction(&raw, claim.text()) {
        Ok(p) => (p, raw, false),
        Err(first) => {
            log::warn!("claim {}: unparseable extraction output ({first}); repairing", claim.id());
            let repair = format!("{prompt}\n{REPAIR_NOTE}");
            let raw = gateway.chat(&gateway.llm_request(repair))?;
            match parse_extraction(&raw, claim.text()) {
                Ok(p) => (p, raw, true),
                Err(message) => return Err(ExtractionError::Format { message, raw_model_output: raw }),
            }
        }
    };
    Ok(ExtractionReport {
        result: ExtractionResult {
            claim_id: claim.id().to_string(),
            entities: parsed.entities,
            raw_model_output: raw,
            template_digest: extraction_template_digest(),
        },
        unknown_kinds: parsed.unknown_kinds,
        hallucinated: parsed.hallucinated,
        duplicates: parsed.duplicates,
        repaired,
    })
}
