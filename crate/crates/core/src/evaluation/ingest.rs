//! Corpus loaders for the canonical record format and the two benchmark
//! layouts.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::model::{parse_record, serialize_record, Claim, VerifiabilityLabel};

pub const CT22_LABELS: &str = include_str!("../../assets/ct22_labels.v1.tsv");
pub const POLICLAIM_LABELS: &str = include_str!("../../assets/policlaim_labels.v1.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One claim record per line.
    Canonical,
    /// Tab-separated with `tweet_id`, `tweet_text` and `class_label` columns.
    Ct22Tsv,
    /// Comma-separated with a text column, a label column and an optional
    /// id column.
    PoliClaim,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "canonical" | "jsonl" => Ok(Self::Canonical),
            "ct22-tsv" | "ct22" => Ok(Self::Ct22Tsv),
            "policlaim" => Ok(Self::PoliClaim),
            other => Err(format!("unknown corpus format {other:?} (expected canonical, ct22-tsv or policlaim)")),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Canonical => "canonical",
            Self::Ct22Tsv => "ct22-tsv",
            Self::PoliClaim => "policlaim",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("unknown label tokens on lines {}", list_lines(.0))]
    UnknownLabels(Vec<(usize, String)>),
    #[error("duplicate claim id {id:?} on lines {first} and {line}")]
    DuplicateId { id: String, first: usize, line: usize },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("label map line {line}: {message}")]
    LabelMap { line: usize, message: String },
}

fn list_lines(items: &[(usize, String)]) -> String {
    items.iter().map(|(l, t)| format!("{l} ({t:?})")).collect::<Vec<_>>().join(", ")
}

/// Case-insensitive token → label table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap(HashMap<String, VerifiabilityLabel>);

impl LabelMap {
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| IngestError::LabelMap { line: line_no, message };
            let (token, label) = line.split_once('\t').ok_or_else(|| err("expected token<TAB>label".into()))?;
            let label: VerifiabilityLabel = label.trim().parse().map_err(|e| err(format!("{e}")))?;
            map.insert(token.trim().to_lowercase(), label);
        }
        Ok(Self(map))
    }

    pub fn get(&self, token: &str) -> Option<VerifiabilityLabel> {
        self.0.get(&token.trim().to_lowercase()).copied()
    }
}

pub fn read_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Claim>, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IngestError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_corpus(&text, format)
}

/// Parse a corpus held in memory, using the bundled label maps.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Vec<Claim>, IngestError> {
    let claims = match format {
        CorpusFormat::Canonical => parse_canonical(text)?,
        CorpusFormat::Ct22Tsv => parse_table(text, b'\t', &Columns::CT22, &LabelMap::parse(CT22_LABELS)?, "ct22")?,
        CorpusFormat::PoliClaim => {
            parse_table(text, b',', &Columns::POLICLAIM, &LabelMap::parse(POLICLAIM_LABELS)?, "policlaim")?
        }
    };
    if claims.is_empty() {
        log::warn!("corpus is empty");
    }
    Ok(claims)
}

fn check_unique(ids: impl Iterator<Item = (usize, String)>) -> Result<(), IngestError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, id) in ids {
        if let Some(&first) = seen.get(&id) {
            return Err(IngestError::DuplicateId { id, first, line });
        }
        seen.insert(id, line);
    }
    Ok(())
}

fn parse_canonical(text: &str) -> Result<Vec<Claim>, IngestError> {
    let mut claims = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let claim =
            parse_record::<Claim>(line).map_err(|e| IngestError::Line { line: i + 1, message: e.to_string() })?;
        lines.push((i + 1, claim.id().to_string()));
        claims.push(claim);
    }
    check_unique(lines.into_iter())?;
    Ok(claims)
}

struct Columns {
    id: &'static [&'static str],
    text: &'static [&'static str],
    label: &'static [&'static str],
    id_required: bool,
}

impl Columns {
    const CT22: Columns =
        Columns { id: &["tweet_id"], text: &["tweet_text"], label: &["class_label"], id_required: true };
    const POLICLAIM: Columns = Columns {
        id: &["id", "sentence_id", "idx"],
        text: &["text", "sentence", "sentences"],
        label: &["label", "golden", "gold", "gold_label", "verifiable"],
        id_required: false,
    };
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn parse_table(
    text: &str,
    delimiter: u8,
    columns: &Columns,
    labels: &LabelMap,
    tag: &str,
) -> Result<Vec<Claim>, IngestError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        // tweets carry unbalanced quote characters
        .quoting(delimiter != b'\t')
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| IngestError::Line { line: 1, message: e.to_string() })?.clone();
    let missing = |names: &[&str]| IngestError::MissingColumn(names[0].to_string());
    let text_col = find_column(&headers, columns.text).ok_or_else(|| missing(columns.text))?;
    let label_col = find_column(&headers, columns.label).ok_or_else(|| missing(columns.label))?;
    let id_col = find_column(&headers, columns.id);
    if columns.id_required && id_col.is_none() {
        return Err(missing(columns.id));
    }

    let mut claims = Vec::new();
    let mut ids = Vec::new();
    let mut unknown = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| IngestError::Line { line, message: e.to_string() })?;
        let field = |col: usize| record.get(col).unwrap_or("").trim();
        let id = match id_col {
            Some(c) => field(c).to_string(),
            None => format!("{tag}-{}", row + 1),
        };
        let token = field(label_col);
        let Some(label) = labels.get(token) else {
            unknown.push((line, token.to_string()));
            continue;
        };
        let claim = Claim::new(id.clone(), field(text_col))
            .map_err(|e| IngestError::Line { line, message: e.to_string() })?
            .with_gold(label)
            .with_source(tag);
        ids.push((line, id));
        claims.push(claim);
    }
    if !unknown.is_empty() {
        return Err(IngestError::UnknownLabels(unknown));
    }
    check_unique(ids.into_iter())?;
    Ok(claims)
}

/// Canonical serialization: one claim record per line.
pub fn write_corpus(claims: &[Claim]) -> String {
    claims.iter().map(|c| serialize_record(c) + "\n").collect()
}
