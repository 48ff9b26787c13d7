//! Domain-type credibility heuristic.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::digest::sha256_hex;
use crate::model::Credibility;

pub const DEFAULT_RULES: &str = include_str!("../../assets/credibility_rules.v1.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatcherKind {
    /// Domain equals the pattern or is one of its subdomains.
    Host,
    /// Domain ends with `.pattern`, or equals it.
    Suffix,
    /// Pattern occurs anywhere in the domain.
    Keyword,
    Default,
}

impl FromStr for MatcherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "host" => Ok(Self::Host),
            "suffix" => Ok(Self::Suffix),
            "keyword" => Ok(Self::Keyword),
            "default" => Ok(Self::Default),
            other => Err(format!("unknown rule kind {other:?}")),
        }
    }
}

impl fmt::Display for MatcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Host => "host",
            Self::Suffix => "suffix",
            Self::Keyword => "keyword",
            Self::Default => "default",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CredibilityRule {
    pub matcher: MatcherKind,
    pub pattern: String,
    pub score: Credibility,
    /// 0 is tried first.
    pub priority: usize,
}

fn on_label_boundary(domain: &str, pattern: &str) -> bool {
    domain == pattern || domain.strip_suffix(pattern).is_some_and(|head| head.ends_with('.'))
}

impl CredibilityRule {
    pub fn matches(&self, domain: &str) -> bool {
        match self.matcher {
            MatcherKind::Host | MatcherKind::Suffix => on_label_boundary(domain, &self.pattern),
            MatcherKind::Keyword => domain.contains(&self.pattern),
            MatcherKind::Default => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("credibility rules line {line}: {message}")]
pub struct RuleError {
    pub line: usize,
    pub message: String,
}

/// Priority-ordered rule set. Total: the final default rule matches any
/// domain.
#[derive(Debug, Clone)]
pub struct CredibilityRules {
    rules: Vec<CredibilityRule>,
    digest: String,
}

impl Default for CredibilityRules {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled credibility rules are valid")
    }
}

impl CredibilityRules {
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut rules: Vec<CredibilityRule> = Vec::new();
        let mut default_line = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let err = |message: String| RuleError { line, message };
            if let Some(prev) = default_line {
                return Err(err(format!("rule after the default rule on line {prev}")));
            }
            let fields: Vec<&str> = content.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect();
            let [kind, pattern, score] = fields[..] else {
                return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            };
            let matcher: MatcherKind = kind.parse().map_err(err)?;
            let value: f64 = score.parse().map_err(|_| err(format!("score {score:?} is not a number")))?;
            let score = Credibility::from_score(value)
                .ok_or_else(|| err(format!("score {value} is not one of the allowed credibility values")))?;
            let pattern = pattern.trim_start_matches('.').to_ascii_lowercase();
            if pattern.is_empty() {
                return Err(err("empty pattern".into()));
            }
            if matcher == MatcherKind::Default {
                default_line = Some(line);
            }
            let priority = rules.len();
            rules.push(CredibilityRule { matcher, pattern, score, priority });
        }
        if default_line.is_none() {
            return Err(RuleError { line: text.lines().count(), message: "no default rule".into() });
        }
        Ok(Self { rules, digest: sha256_hex(text) })
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RuleError { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn rules(&self) -> &[CredibilityRule] {
        &self.rules
    }

    /// Digest of the rule file text.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// The highest-priority matching rule.
    pub fn rule_for(&self, domain: &str) -> &CredibilityRule {
        let domain = domain.trim().trim_end_matches('.').to_ascii_lowercase();
        let domain = domain.strip_prefix("www.").unwrap_or(&domain);
        self.rules.iter().find(|r| r.matches(domain)).expect("rule sets always end with a default rule")
    }

    pub fn credibility(&self, domain: &str) -> Credibility {
        self.rule_for(domain).score
    }
}
