//! Deterministic offline backend.
//!
//! Stands in for the chat model, the embedding service and web search when
//! no credentials are available. It reads the same prompts the live model
//! would see: lexicon-based entity extraction for extraction prompts, and a
//! feature-weighted verdict for decision prompts. Embeddings are hashed bags
//! of words; search results are synthesized from the query. Output is a pure
//! function of the request, so fixtures recorded from it are reproducible.

use super::{Backend, EmbedRequest, LlmRequest, SearchItem, SearchRequest, TransportError};

pub const EMBEDDING_DIM: usize = 64;

#[derive(Debug, Default, Clone)]
pub struct Simulator;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn mix(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "by", "from", "is", "are",
    "was", "were", "be", "been", "it", "its", "this", "that", "these", "those", "as", "has", "have", "had", "not",
    "isn", "t", "s", "we", "i", "you", "our", "my", "your", "they", "their", "he", "she", "his", "her", "them", "us",
    "me", "do", "does", "did", "will", "would", "can", "could", "so", "if", "than", "then", "there", "what", "about",
    "all", "more", "just", "into", "over", "any", "no", "who", "which", "when", "how",
];

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Unit-length hashed bag-of-words vector with a small constant component,
/// so no text maps to the zero vector.
pub fn embed_text(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    v[0] = 0.25;
    for token in tokens(text) {
        let h = fnv1a(token.as_bytes());
        let bucket = 1 + (h % (EMBEDDING_DIM as u64 - 1)) as usize;
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| ((x / norm) * 1e6).round() / 1e6).collect()
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some(text[start..end].trim())
}

// ---------------------------------------------------------------- extraction

const ORGS: &[&str] = &[
    "Pfizer",
    "Sinovac",
    "Moderna",
    "AstraZeneca",
    "Johnson & Johnson",
    "World Health Organization",
    "WHO",
    "CDC",
    "FDA",
    "NHS",
    "Congress",
    "Senate",
    "Supreme Court",
    "Lamborghini",
    "Proton",
    "Facebook",
    "Twitter",
    "Google",
    "Amazon",
    "KFC",
    "NASA",
    "United Nations",
    "European Union",
    "Medicare",
    "Medicaid",
    "Department of Education",
    "Democrats",
    "Republicans",
    "Bharat Biotech",
    "Novavax",
    "BioNTech",
    "Sputnik",
];
const LOCATIONS: &[&str] = &[
    "United States",
    "America",
    "USA",
    "US",
    "China",
    "Wuhan",
    "India",
    "Brazil",
    "Texas",
    "Florida",
    "California",
    "New York",
    "Alaska",
    "London",
    "UK",
    "Britain",
    "Canada",
    "Australia",
    "Europe",
    "Africa",
    "Israel",
    "Italy",
    "Germany",
    "France",
    "Japan",
    "Mexico",
    "Ohio",
    "Michigan",
    "Malaysia",
    "Indonesia",
    "Philippines",
    "Kentucky",
    "Georgia",
    "Arizona",
    "Chile",
];
const PEOPLE: &[&str] = &[
    "Biden",
    "Trump",
    "Fauci",
    "Obama",
    "Bill Gates",
    "Gates",
    "Harris",
    "Boris Johnson",
    "Bolsonaro",
    "Modi",
    "Jacinda Ardern",
    "Tedros",
    "Duterte",
];
const EVENTS: &[&str] = &[
    "pandemic",
    "election",
    "lockdown",
    "lockdowns",
    "Olympics",
    "World Cup",
    "summit",
    "hurricane",
    "recession",
    "outbreak",
    "shutdown",
];
const OBJECTS: &[&str] = &[
    "vaccines",
    "vaccine",
    "masks",
    "mask mandates",
    "ivermectin",
    "hydroxychloroquine",
    "booster",
    "COVID-19",
    "Covid",
    "COVID",
    "unemployment rate",
    "minimum wage",
    "taxes",
    "tax cut",
    "budget",
    "prison system",
    "roads and bridges",
    "inflation",
    "deficit",
    "herbs and spices",
    "testing",
    "treatments",
    "5G",
    "variant",
    "death rate",
    "infection rate",
    "jobs",
    "teachers",
    "broadband",
    "opioid",
];

const SENTENCE_STARTERS: &[&str] = &[
    "The",
    "We",
    "I",
    "Our",
    "This",
    "It",
    "When",
    "After",
    "As",
    "And",
    "But",
    "So",
    "If",
    "Today",
    "Now",
    "They",
    "You",
    "My",
    "That",
    "There",
    "In",
    "On",
    "Let",
    "Let's",
    "Together",
    "Every",
    "No",
    "Yes",
    "Just",
    "What",
    "BREAKING",
    "Breaking",
    "RT",
    "Please",
    "Thank",
    "Thanks",
    "President",
    "Governor",
];

fn is_boundary(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(|c| c.is_alphanumeric()) && !after.is_some_and(|c| c.is_alphanumeric())
}

/// Every case-(in)sensitive whole-word occurrence of `phrase` in `text`.
fn find_all(text: &str, phrase: &str, case_sensitive: bool) -> Vec<(usize, usize)> {
    let (hay, needle) = if case_sensitive {
        (text.to_string(), phrase.to_string())
    } else {
        (text.to_lowercase(), phrase.to_lowercase())
    };
    if hay.len() != text.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        if is_boundary(text, start, end) {
            out.push((start, end));
        }
        from = end;
    }
    out
}

fn simulate_extraction(claim: &str) -> String {
    let mut found: Vec<(usize, usize, &'static str)> = Vec::new();
    let lexicons: [(&[&str], &str, bool); 5] = [
        (ORGS, "ORG", true),
        (LOCATIONS, "LOCATION", true),
        (PEOPLE, "PERSON", true),
        (EVENTS, "EVENT", false),
        (OBJECTS, "CLAIM_OBJECT", false),
    ];
    for (lexicon, kind, case_sensitive) in lexicons {
        for phrase in lexicon {
            for (s, e) in find_all(claim, phrase, case_sensitive) {
                found.push((s, e, kind));
            }
        }
    }
    // unknown runs of two or more capitalized words read as names
    let words: Vec<(usize, &str)> =
        claim.split_whitespace().map(|w| (w.as_ptr() as usize - claim.as_ptr() as usize, w)).collect();
    let mut i = 0;
    while i < words.len() {
        let capital = |w: &str| {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric());
            w.len() > 1 && w.chars().next().is_some_and(char::is_uppercase) && !SENTENCE_STARTERS.contains(&w)
        };
        let mut j = i;
        while j < words.len() && capital(words[j].1) {
            j += 1;
            if words[j - 1].1.ends_with(|c: char| ",.;:!?".contains(c)) {
                break;
            }
        }
        if j - i >= 2 {
            let start = words[i].0 + words[i].1.find(|c: char| c.is_alphanumeric()).unwrap_or(0);
            let last = words[j - 1];
            let end = last.0 + last.1.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
            found.push((start, end, "PERSON"));
        }
        i = j.max(i + 1);
    }
    // longest match wins on overlap, then earliest position
    found.sort_by_key(|&(s, e, _)| (s, std::cmp::Reverse(e)));
    let mut kept: Vec<(usize, usize, &str)> = Vec::new();
    for m in found {
        if kept.iter().any(|k| m.0 < k.1 && k.0 < m.1) {
            continue;
        }
        kept.push(m);
    }
    let mut entities: Vec<serde_json::Value> =
        kept.iter().map(|&(s, e, kind)| serde_json::json!({ "surface": &claim[s..e], "kind": kind })).collect();
    // the model also volunteers things the type list does not allow, and
    // things the claim does not say
    for word in claim.split(|c: char| !c.is_ascii_digit()) {
        if word.len() == 4 && (word.starts_with("19") || word.starts_with("20")) {
            entities.push(serde_json::json!({ "surface": word, "kind": "DATE" }));
        }
    }
    let lower = claim.to_lowercase();
    if lower.contains("covid") && !lower.contains("covid-19 pandemic") {
        entities.push(serde_json::json!({ "surface": "COVID-19 pandemic", "kind": "EVENT" }));
    }
    let body = serde_json::json!({ "entities": entities }).to_string();
    if fnv1a(claim.as_bytes()).is_multiple_of(3) {
        format!("Here are the entities I found:\n```json\n{body}\n```")
    } else {
        body
    }
}

// ------------------------------------------------------------------ decision

const OPINION_CUES: &[&str] = &[
    "i think",
    "i believe",
    "we will",
    "i will",
    "should",
    "must",
    "proud",
    "honor",
    "hope",
    "love",
    "hate",
    "amazing",
    "terrible",
    "let's",
    "together",
    "best",
    "worst",
    "deserve",
    "shame",
    "blessed",
    "we found a way",
    "i won't",
    "never forget",
    "disgrace",
];
const FACT_CUES: &[&str] = &[
    "percent",
    "%",
    "according to",
    "reported",
    "approved",
    "announced",
    "confirmed",
    "killed",
    "died",
    "deaths",
    "cases",
    "million",
    "billion",
    "study",
    "data",
    "rate",
    "signed",
    "passed",
    "increased",
    "decreased",
];

struct EvidenceItem {
    relevance: Option<f64>,
    credibility: Option<f64>,
    text: Option<String>,
}

fn parse_evidence(block: &str) -> (Vec<EvidenceItem>, Option<(f64, f64, f64)>) {
    let mut items = Vec::new();
    let mut stats: Option<(f64, f64, f64)> = None;
    let mut current: Option<EvidenceItem> = None;
    for line in block.lines() {
        let line = line.trim();
        if line.starts_with('[') {
            if let Some(item) = current.take() {
                items.push(item);
            }
            current = Some(EvidenceItem { relevance: None, credibility: None, text: None });
        }
        let value = |prefix: &str| line.split_once(prefix).map(|(_, v)| v.trim().to_string());
        if let Some(item) = current.as_mut() {
            if let Some(v) = value("relevance:") {
                item.relevance = v.parse().ok();
            } else if let Some(v) = value("credibility:") {
                item.credibility = v.parse().ok();
            } else if let Some(v) = value("text:") {
                item.text = Some(v);
            }
        }
        let stat = |prefix: &str| line.strip_prefix(prefix).and_then(|v| v.trim().parse::<f64>().ok());
        if let Some(v) = stat("- entities extracted:") {
            stats.get_or_insert((0.0, 0.0, 0.0)).0 = v;
        } else if let Some(v) = stat("- entity coverage:") {
            stats.get_or_insert((0.0, 0.0, 0.0)).1 = v;
        } else if let Some(v) = stat("- source diversity:") {
            stats.get_or_insert((0.0, 0.0, 0.0)).2 = v;
        }
    }
    if let Some(item) = current {
        items.push(item);
    }
    (items, stats)
}

fn simulate_decision(claim: &str, evidence: &str, prompt: &str) -> String {
    let lower = claim.to_lowercase();
    let mut score = 0.0;
    if claim.chars().any(|c| c.is_ascii_digit()) {
        score += 1.0;
    }
    let named = claim
        .split_whitespace()
        .skip(1)
        .filter(|w| {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric());
            w.len() > 1 && w.chars().next().is_some_and(char::is_uppercase) && !SENTENCE_STARTERS.contains(&w)
        })
        .count();
    score += 0.4 * named.min(2) as f64;
    if FACT_CUES.iter().any(|c| lower.contains(c)) {
        score += 0.5;
    }
    let opinions = OPINION_CUES.iter().filter(|c| lower.contains(*c)).count()
        + usize::from(claim.contains('?'))
        + usize::from(claim.contains('!'));
    score -= (0.75 * opinions as f64).min(1.5);

    let claim_tokens = tokens(claim);
    let (items, stats) = parse_evidence(evidence);
    for item in &items {
        match (item.relevance, item.credibility) {
            (Some(r), Some(c)) => {
                if r >= 0.2 && c >= 0.75 {
                    score += 0.5;
                }
                if c >= 0.85 {
                    score += 0.15;
                }
            }
            _ => {
                if let Some(text) = &item.text {
                    let shared = tokens(text).iter().filter(|t| claim_tokens.contains(t)).count();
                    if shared >= 2 {
                        score += 0.35;
                    }
                }
            }
        }
    }
    if let Some((entities, coverage, diversity)) = stats {
        score += 0.8 * coverage + 0.3 * diversity;
        if entities == 0.0 {
            score -= 0.3;
        }
    }
    let (label, why) = if score >= 1.0 {
        ("VERIFIABLE", "The claim states specific facts that external sources could confirm or refute.")
    } else {
        ("NON-VERIFIABLE", "The claim is an opinion or generalization with nothing concrete to check.")
    };
    let body = serde_json::json!({ "label": label, "rationale": why }).to_string();
    match fnv1a(prompt.as_bytes()) % 4 {
        0 => format!("```json\n{body}\n```"),
        1 => format!("Verdict: {body}"),
        _ => body,
    }
}

// -------------------------------------------------------------------- search

struct Site {
    domain: &'static str,
    name: &'static str,
}

const SITES: &[Site] = &[
    Site { domain: "en.wikipedia.org", name: "Wikipedia" },
    Site { domain: "reuters.com", name: "Reuters" },
    Site { domain: "bbc.co.uk", name: "BBC News" },
    Site { domain: "nature.com", name: "Nature" },
    Site { domain: "cdc.gov", name: "CDC" },
    Site { domain: "nih.gov", name: "NIH" },
    Site { domain: "stanford.edu", name: "Stanford" },
    Site { domain: "ox.ac.uk", name: "University of Oxford" },
    Site { domain: "nytimes.com", name: "The New York Times" },
    Site { domain: "washingtonpost.com", name: "The Washington Post" },
    Site { domain: "citynews-daily.net", name: "City News Daily" },
    Site { domain: "redcross.org", name: "Red Cross" },
    Site { domain: "factcheck.org", name: "FactCheck.org" },
    Site { domain: "medium.com", name: "Medium" },
    Site { domain: "amazon.com", name: "Amazon" },
    Site { domain: "quora.com", name: "Quora" },
    Site { domain: "healthy-truth.info", name: "Healthy Truth" },
    Site { domain: "viralclips.tv", name: "ViralClips" },
    Site { domain: "shop-anything.xyz", name: "Shop Anything" },
    Site { domain: "forum.example.net", name: "Example Forum" },
];

const TEMPLATES: &[&str] = &[
    "{q}: overview, history and key facts about {q}, with references and the latest statistics.",
    "Latest news on {q}: officials confirmed new figures on Monday, according to a government report.",
    "Shop {q} deals and discounts. Free shipping on orders over $50.",
    "What people are saying about {q}. Join the discussion and share your opinion.",
    "Peer-reviewed study of outcomes related to {q} in 2,000 participants; data and methods available.",
    "{q} explained in 5 minutes. Subscribe for more viral videos!",
    "Official guidance on {q} from public health authorities, with updated data and fact sheets.",
];

fn slug(q: &str) -> String {
    let s: String = q.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

fn simulate_search(request: &SearchRequest) -> Vec<SearchItem> {
    let seed = fnv1a(request.query.as_bytes());
    if mix(seed, 0).is_multiple_of(8) {
        return Vec::new();
    }
    let available = 2 + (mix(seed, 1) % 6) as usize;
    let n = available.min(request.num as usize);
    (0..n)
        .map(|i| {
            let r = mix(seed, 10 + i as u64);
            let site = &SITES[(r % SITES.len() as u64) as usize];
            let template = TEMPLATES[((r >> 8) % TEMPLATES.len() as u64) as usize];
            let url = match (r >> 16) % 6 {
                // site front pages recur across queries
                0 => format!("https://{}/", site.domain),
                1 => format!("https://www.{}", site.domain),
                _ => format!("https://{}/{}/{:06x}", site.domain, slug(&request.query), (r >> 24) & 0xff_ffff),
            };
            SearchItem {
                title: format!("{} | {}", request.query, site.name),
                url,
                snippet: template.replace("{q}", &request.query),
            }
        })
        .collect()
}

impl Backend for Simulator {
    fn chat(&self, request: &LlmRequest) -> Result<String, TransportError> {
        let prompt = &request.prompt;
        let claim = between(prompt, "<claim>", "</claim>")
            .ok_or_else(|| TransportError::Service { status: 400, message: "prompt has no <claim> section".into() })?;
        if let Some(evidence) = between(prompt, "<evidence>", "</evidence>") {
            Ok(simulate_decision(claim, evidence, prompt))
        } else if prompt.contains("CLAIM_OBJECT") {
            Ok(simulate_extraction(claim))
        } else {
            Err(TransportError::Service { status: 400, message: "unrecognized prompt".into() })
        }
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, TransportError> {
        Ok(request.texts.iter().map(|t| embed_text(t)).collect())
    }

    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchItem>, TransportError> {
        Ok(simulate_search(request))
    }
}
