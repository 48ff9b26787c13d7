//! Line-oriented record format.
//!
//! Each record is one JSON object on one line with two envelope keys:
//! `schema` (currently 1) and `type` (the record kind). Keys are emitted in
//! sorted order so identical records always produce identical bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::{Claim, Decision, DecisionFailure, Entity, RetrievalStats, ScoredSnippet, Snippet, INVARIANT_PREFIX};
use crate::digest::canonical_json;
use crate::evaluation::{EvalReport, ExportHeader, Misclassification};
use crate::extraction::ExtractionResult;
use crate::retrieval::ContextPool;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("validation error at `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
}

impl RecordError {
    pub fn field(&self) -> &str {
        match self {
            RecordError::Parse { field, .. }
            | RecordError::Validation { field, .. }
            | RecordError::Schema { field, .. } => field,
        }
    }
}

/// A type with a line-record representation.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

macro_rules! record_kind {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl Record for $ty { const KIND: &'static str = $kind; })*
    };
}

record_kind! {
    Claim => "claim",
    Entity => "entity",
    Snippet => "snippet",
    ScoredSnippet => "scored_snippet",
    Decision => "decision",
    DecisionFailure => "decision_failure",
    RetrievalStats => "retrieval_stats",
    ExtractionResult => "extraction",
    ContextPool => "pool",
    EvalReport => "eval_report",
    Misclassification => "misclassification",
    ExportHeader => "export_header",
}

/// Serialize one record to a single line (no trailing newline).
pub fn serialize_record<R: Record>(record: &R) -> String {
    let mut value = serde_json::to_value(record).expect("domain records always serialize");
    let obj = value.as_object_mut().expect("records serialize as JSON objects");
    obj.insert("schema".into(), Value::from(SCHEMA_VERSION));
    obj.insert("type".into(), Value::from(R::KIND));
    canonical_json(&value)
}

fn envelope(line: &str) -> Result<(String, Value), RecordError> {
    let mut value: Value = serde_json::from_str(line.trim())
        .map_err(|e| RecordError::Parse { field: "<line>".into(), message: e.to_string() })?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| RecordError::Parse { field: "<line>".into(), message: "record is not a JSON object".into() })?;
    match obj.remove("schema") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(RecordError::Schema {
                field: "schema".into(),
                message: format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
            })
        }
        None => return Err(RecordError::Schema { field: "schema".into(), message: "missing".into() }),
    }
    let kind = match obj.remove("type") {
        Some(Value::String(s)) => s,
        Some(other) => {
            return Err(RecordError::Schema { field: "type".into(), message: format!("not a string: {other}") })
        }
        None => return Err(RecordError::Schema { field: "type".into(), message: "missing".into() }),
    };
    Ok((kind, value))
}

fn decode<R: DeserializeOwned>(value: Value) -> Result<R, RecordError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let path = err.path().to_string();
        let message = err.into_inner().to_string();
        if let Some(rest) = message.strip_prefix(INVARIANT_PREFIX) {
            let rest = rest.trim_start_matches(':').trim();
            let (inner, reason) = rest.split_once(": ").unwrap_or(("", rest));
            let field = match (path.as_str(), inner) {
                (".", f) => f.to_string(),
                (p, "") => p.to_string(),
                (p, f) => format!("{p}.{f}"),
            };
            RecordError::Validation { field, message: reason.to_string() }
        } else {
            RecordError::Parse { field: path, message }
        }
    })
}

/// Parse a line that must hold a record of kind `R`.
pub fn parse_record<R: Record>(line: &str) -> Result<R, RecordError> {
    let (kind, value) = envelope(line)?;
    if kind != R::KIND {
        return Err(RecordError::Schema {
            field: "type".into(),
            message: format!("expected {:?}, found {kind:?}", R::KIND),
        });
    }
    decode(value)
}

/// Any record kind, dispatched on the `type` key.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyRecord {
    Claim(Claim),
    Entity(Entity),
    Snippet(Snippet),
    ScoredSnippet(ScoredSnippet),
    Decision(Decision),
    DecisionFailure(DecisionFailure),
    RetrievalStats(RetrievalStats),
    Extraction(ExtractionResult),
    Pool(ContextPool),
    EvalReport(EvalReport),
    Misclassification(Misclassification),
    ExportHeader(ExportHeader),
}

impl AnyRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyRecord::Claim(_) => Claim::KIND,
            AnyRecord::Entity(_) => Entity::KIND,
            AnyRecord::Snippet(_) => Snippet::KIND,
            AnyRecord::ScoredSnippet(_) => ScoredSnippet::KIND,
            AnyRecord::Decision(_) => Decision::KIND,
            AnyRecord::DecisionFailure(_) => DecisionFailure::KIND,
            AnyRecord::RetrievalStats(_) => RetrievalStats::KIND,
            AnyRecord::Extraction(_) => ExtractionResult::KIND,
            AnyRecord::Pool(_) => ContextPool::KIND,
            AnyRecord::EvalReport(_) => EvalReport::KIND,
            AnyRecord::Misclassification(_) => Misclassification::KIND,
            AnyRecord::ExportHeader(_) => ExportHeader::KIND,
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            AnyRecord::Claim(r) => serialize_record(r),
            AnyRecord::Entity(r) => serialize_record(r),
            AnyRecord::Snippet(r) => serialize_record(r),
            AnyRecord::ScoredSnippet(r) => serialize_record(r),
            AnyRecord::Decision(r) => serialize_record(r),
            AnyRecord::DecisionFailure(r) => serialize_record(r),
            AnyRecord::RetrievalStats(r) => serialize_record(r),
            AnyRecord::Extraction(r) => serialize_record(r),
            AnyRecord::Pool(r) => serialize_record(r),
            AnyRecord::EvalReport(r) => serialize_record(r),
            AnyRecord::Misclassification(r) => serialize_record(r),
            AnyRecord::ExportHeader(r) => serialize_record(r),
        }
    }
}

pub fn parse_any_record(line: &str) -> Result<AnyRecord, RecordError> {
    let (kind, value) = envelope(line)?;
    Ok(match kind.as_str() {
        k if k == Claim::KIND => AnyRecord::Claim(decode(value)?),
        k if k == Entity::KIND => AnyRecord::Entity(decode(value)?),
        k if k == Snippet::KIND => AnyRecord::Snippet(decode(value)?),
        k if k == ScoredSnippet::KIND => AnyRecord::ScoredSnippet(decode(value)?),
        k if k == Decision::KIND => AnyRecord::Decision(decode(value)?),
        k if k == DecisionFailure::KIND => AnyRecord::DecisionFailure(decode(value)?),
        k if k == RetrievalStats::KIND => AnyRecord::RetrievalStats(decode(value)?),
        k if k == ExtractionResult::KIND => AnyRecord::Extraction(decode(value)?),
        k if k == ContextPool::KIND => AnyRecord::Pool(decode(value)?),
        k if k == EvalReport::KIND => AnyRecord::EvalReport(decode(value)?),
        k if k == Misclassification::KIND => AnyRecord::Misclassification(decode(value)?),
        k if k == ExportHeader::KIND => AnyRecord::ExportHeader(decode(value)?),
        other => {
            return Err(RecordError::Schema { field: "type".into(), message: format!("unknown record type {other:?}") })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Credibility, EntityKind, VerifiabilityLabel};

    #[test]
    fn claim_line_carries_label() {
        let claim = Claim::new("c1", "x").unwrap().with_gold(VerifiabilityLabel::Verifiable);
        let line = serialize_record(&claim);
        assert!(!line.contains('\n'));
        assert!(line.contains("\"VERIFIABLE\""));
        assert!(line.contains("\"schema\":1"));
        assert_eq!(parse_record::<Claim>(&line).unwrap(), claim);
    }

    #[test]
    fn non_verifiable_is_hyphenated() {
        let claim = Claim::new("c1", "x").unwrap().with_gold(VerifiabilityLabel::NonVerifiable);
        let line = serialize_record(&claim);
        assert!(line.contains("\"NON-VERIFIABLE\""));
        assert!(!line.contains("NON_VERIFIABLE"));
    }

    #[test]
    fn malformed_line_is_parse_error() {
        let err = parse_record::<Claim>("{not json").unwrap_err();
        assert!(matches!(err, RecordError::Parse { .. }));
        let err = parse_record::<Claim>("[1,2]").unwrap_err();
        assert!(matches!(err, RecordError::Parse { .. }));
    }

    #[test]
    fn missing_field_is_named() {
        let err = parse_record::<Claim>(r#"{"schema":1,"type":"claim","id":"c1"}"#).unwrap_err();
        assert!(matches!(err, RecordError::Parse { .. }), "{err:?}");
        assert!(err.to_string().contains("text"), "{err}");
    }

    #[test]
    fn wrong_type_names_field() {
        let err = parse_record::<Claim>(r#"{"schema":1,"type":"claim","id":"c1","text":7}"#).unwrap_err();
        assert_eq!(err.field(), "text");
    }

    #[test]
    fn empty_text_is_validation_error() {
        let err = parse_record::<Claim>(r#"{"schema":1,"type":"claim","id":"c1","text":"  "}"#).unwrap_err();
        assert!(matches!(err, RecordError::Validation { .. }), "{err:?}");
        assert_eq!(err.field(), "text");
    }

    #[test]
    fn off_table_credibility_is_validation_error() {
        let entity = Entity::new("BBC", EntityKind::Org).unwrap();
        let snippet = Snippet::new("body", "title", "https://bbc.com/x", entity, 1).unwrap();
        let scored = ScoredSnippet::new(snippet, 0.3, Credibility::Authoritative, 0.6).unwrap();
        let line = serialize_record(&scored).replace("\"credibility\":1.0", "\"credibility\":0.6");
        assert!(line.contains("0.6"));
        let err = parse_record::<ScoredSnippet>(&line).unwrap_err();
        assert!(matches!(err, RecordError::Validation { .. }), "{err:?}");
        assert!(err.field().contains("credibility"), "{err:?}");
    }

    #[test]
    fn tampered_combined_is_rejected() {
        let entity = Entity::new("BBC", EntityKind::Org).unwrap();
        let snippet = Snippet::new("body", "title", "https://bbc.com/x", entity, 1).unwrap();
        let scored = ScoredSnippet::new(snippet, 0.5, Credibility::News, 0.5).unwrap();
        let line = serialize_record(&scored);
        let tampered = line.replace("\"combined\":0.625", "\"combined\":0.626");
        assert_ne!(line, tampered);
        let err = parse_record::<ScoredSnippet>(&tampered).unwrap_err();
        assert_eq!(err.field(), "combined");
    }

    #[test]
    fn schema_and_type_are_checked() {
        let err = parse_record::<Claim>(r#"{"schema":2,"type":"claim","id":"c","text":"t"}"#).unwrap_err();
        assert_eq!(err.field(), "schema");
        let err = parse_record::<Claim>(r#"{"type":"claim","id":"c","text":"t"}"#).unwrap_err();
        assert_eq!(err.field(), "schema");
        let err = parse_record::<Entity>(r#"{"schema":1,"type":"claim","id":"c","text":"t"}"#).unwrap_err();
        assert_eq!(err.field(), "type");
    }

    #[test]
    fn any_record_dispatches() {
        let entity = Entity::new("Texas", EntityKind::Location).unwrap();
        let line = serialize_record(&entity);
        let any = parse_any_record(&line).unwrap();
        assert_eq!(any.kind(), "entity");
        assert_eq!(any.to_line(), line);
    }
}
