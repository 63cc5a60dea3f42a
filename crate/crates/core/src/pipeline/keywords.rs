use std::collections::{BTreeMap, HashSet};

use crate::model::{word_count, CharacterProfile, KeywordSet, MAX_KEYWORDS, MAX_KEYWORD_WORDS, MIN_KEYWORDS};
use crate::provider::{ChatMessage, ChatRequest};

use super::template::{PromptTemplate, TemplateError};

const KEYWORD_SYSTEM: &str = "You distill character profiles into visual keywords for concept artists.";

const STOPWORDS: &[&str] = &[
    "the", "and", "with", "for", "from", "into", "onto", "over", "under", "his", "her", "hers", "its", "their",
    "they", "them", "was", "were", "are", "has", "have", "had", "that", "this", "who", "whom", "which", "of",
];

/// Used only when the profile itself cannot supply enough distinct tokens.
const FALLBACK_KEYWORDS: &[&str] = &["game character", "concept art", "full body", "character sheet", "original design"];

pub fn build_keyword_prompt(profile: &CharacterProfile, template: &PromptTemplate) -> Result<ChatRequest, TemplateError> {
    let extra = profile
        .extra_sections
        .iter()
        .map(|(h, t)| format!("{h}: {t}"))
        .collect::<Vec<_>>()
        .join("\n");
    let values = BTreeMap::from([
        ("name", profile.name.clone()),
        ("age", profile.age.clone()),
        ("dressing_style", profile.dressing_style.clone()),
        ("weapon", profile.weapon.clone()),
        ("background_story", profile.background_story.clone()),
        ("extra_sections", extra),
    ]);
    let prompt = template.render(&values)?;
    Ok(ChatRequest::new(vec![ChatMessage::system(KEYWORD_SYSTEM), ChatMessage::user(prompt)]).with_limits(200, 0.5))
}

fn clean_token(token: &str) -> String {
    let token = token.trim();
    let token = token.trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c == '#');
    let token = token.trim_start();
    // Leading list numbering such as "1." or "2)".
    let token = match token.find(|c: char| !c.is_ascii_digit()) {
        Some(i) if i > 0 && token[i..].starts_with(['.', ')']) => &token[i + 1..],
        _ => token,
    };
    let token = token
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '.' | ';' | ':'));
    token.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits a raw reply on commas and newlines, cleans list markup, drops empty
/// and over-long tokens and case-insensitive duplicates (first spelling kept),
/// and caps the result at the maximum keyword count.
pub fn parse_keyword_response(raw: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for piece in raw.split([',', '\n']) {
        let token = clean_token(piece);
        let words = word_count(&token);
        if words == 0 || words > MAX_KEYWORD_WORDS {
            continue;
        }
        if seen.insert(token.to_lowercase()) {
            out.push(token);
        }
    }
    out.truncate(MAX_KEYWORDS);
    out
}

/// Lower-cased content words of `text`: alphanumeric-trimmed, at least three
/// characters, not a stopword.
pub fn content_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| w.chars().count() >= 3 && !STOPWORDS.contains(&w.as_str()))
}

/// Tops `keywords` up to the minimum with content words from the dressing
/// style, then the weapon, then the fallback list, skipping duplicates.
pub fn pad_keywords(mut keywords: Vec<String>, profile: &CharacterProfile) -> Vec<String> {
    let mut seen: HashSet<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    let candidates = content_words(&profile.dressing_style)
        .chain(content_words(&profile.weapon))
        .chain(FALLBACK_KEYWORDS.iter().map(|s| (*s).to_owned()));
    for candidate in candidates {
        if keywords.len() >= MIN_KEYWORDS {
            break;
        }
        if seen.insert(candidate.to_lowercase()) {
            keywords.push(candidate);
        }
    }
    keywords
}

/// Parses and pads a raw keyword reply into a valid set.
pub fn keywords_from_response(raw: &str, profile: &CharacterProfile) -> KeywordSet {
    let keywords = pad_keywords(parse_keyword_response(raw), profile);
    KeywordSet::new(keywords).expect("parsed and padded keywords satisfy the set invariants")
}
