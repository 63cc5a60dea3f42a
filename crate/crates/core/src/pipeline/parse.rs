//! Extraction of a [`CharacterProfile`] from labeled model output.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{word_count, CharacterProfile, ProfileField, MAX_STORY_WORDS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("missing fields: {}", join_fields(.fields))]
    MissingFields { fields: Vec<ProfileField> },
    #[error("{field} empty")]
    EmptyField { field: ProfileField },
    #[error("{field} exceeds {MAX_STORY_WORDS} words ({words})")]
    OverWordLimit { field: ProfileField, words: usize },
}

fn join_fields(fields: &[ProfileField]) -> String {
    fields.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ")
}

fn heading_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        // Optional list/heading markup, optional bold, a short label, a colon.
        Regex::new(r"^\s*(?:[#>*-]+\s+)?\**\s*([A-Za-z][A-Za-z0-9 _'/-]{0,39}?)\s*\**\s*:\s*\**\s*(.*)$")
            .expect("valid heading regex")
    })
}

fn normalize_label(label: &str) -> String {
    label
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn core_field(label: &str) -> Option<ProfileField> {
    match normalize_label(label).as_str() {
        "name" => Some(ProfileField::Name),
        "age" => Some(ProfileField::Age),
        "dressing style" => Some(ProfileField::DressingStyle),
        "weapon" => Some(ProfileField::Weapon),
        "background story" | "backstory" => Some(ProfileField::BackgroundStory),
        _ => None,
    }
}

struct Section {
    label: String,
    lines: Vec<String>,
}

impl Section {
    fn text(&self) -> String {
        self.lines.join("\n").trim().trim_end_matches("**").trim().to_owned()
    }
}

fn split_sections(raw: &str) -> Vec<Section> {
    let mut sections: Vec<Section> = Vec::new();
    for line in raw.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        let heading = heading_pattern()
            .captures(line)
            .filter(|c| word_count(&c[1]) <= 4);
        match heading {
            Some(caps) => sections.push(Section {
                label: caps[1].trim().to_owned(),
                lines: vec![caps[2].to_owned()],
            }),
            None => {
                if let Some(current) = sections.last_mut() {
                    current.lines.push(line.to_owned());
                }
            }
        }
    }
    sections
}

/// Parses labeled sections case-insensitively. Text before the first label is
/// ignored; sections other than the five core fields are kept in order as
/// `extra_sections` (empty ones dropped). The first occurrence of a core label wins.
pub fn parse_profile_response(raw: &str) -> Result<CharacterProfile, ParseError> {
    let mut core: [Option<String>; 5] = Default::default();
    let mut extra_sections = Vec::new();
    for section in split_sections(raw) {
        match core_field(&section.label) {
            Some(field) => {
                let slot = &mut core[field as usize];
                if slot.is_none() {
                    *slot = Some(section.text());
                }
            }
            None => {
                let text = section.text();
                if !text.is_empty() {
                    extra_sections.push((section.label, text));
                }
            }
        }
    }

    let missing: Vec<ProfileField> = ProfileField::ALL
        .into_iter()
        .filter(|f| core[*f as usize].is_none())
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingFields { fields: missing });
    }
    let [name, age, dressing_style, weapon, background_story] = core.map(Option::unwrap_or_default);
    let profile = CharacterProfile { name, age, dressing_style, weapon, background_story, extra_sections };
    if let Some(field) = ProfileField::ALL.into_iter().find(|f| profile.field(*f).trim().is_empty()) {
        return Err(ParseError::EmptyField { field });
    }
    let words = word_count(&profile.background_story);
    if words > MAX_STORY_WORDS {
        return Err(ParseError::OverWordLimit { field: ProfileField::BackgroundStory, words });
    }
    Ok(profile)
}

/// Renders a profile back into the labeled form the parser reads.
pub fn render_profile(profile: &CharacterProfile) -> String {
    let mut out = String::new();
    for field in ProfileField::ALL {
        out.push_str(&format!("{}: {}\n", field.label(), profile.field(field)));
    }
    for (heading, text) in &profile.extra_sections {
        out.push_str(&format!("{heading}: {text}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn story(words: usize) -> String {
        (0..words).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn raw(story_words: usize) -> String {
        format!(
            "Name: Ahab\nAge: 52\nDressing style: a salt-stained greatcoat\nWeapon: a harpoon\nBackground story: {}\n",
            story(story_words)
        )
    }

    #[test]
    fn well_formed_response() {
        let profile = parse_profile_response(&raw(120)).unwrap();
        assert_eq!(profile.name, "Ahab");
        assert_eq!(profile.weapon, "a harpoon");
        assert_eq!(word_count(&profile.background_story), 120);
        assert!(profile.extra_sections.is_empty());
    }

    #[test]
    fn missing_weapon() {
        let text = raw(10).replace("Weapon: a harpoon\n", "");
        assert_eq!(
            parse_profile_response(&text),
            Err(ParseError::MissingFields { fields: vec![ProfileField::Weapon] })
        );
    }

    #[test]
    fn extra_sections_pass_through_in_order() {
        let text = format!("{}Allies: Mira and the crew\nFears: deep water\n", raw(10));
        let profile = parse_profile_response(&text).unwrap();
        assert_eq!(
            profile.extra_sections,
            vec![
                ("Allies".to_string(), "Mira and the crew".to_string()),
                ("Fears".to_string(), "deep water".to_string())
            ]
        );
    }

    #[test]
    fn labels_are_case_insensitive_and_markup_tolerant() {
        let text = "Here is the profile:\n**NAME:** Mira\n- age: 19\n## Dressing_Style: patched cloak\n\
                    WEAPON: bow\nbackground-story: Raised by wolves.\nShe never forgot.\n";
        let profile = parse_profile_response(text).unwrap();
        assert_eq!(profile.name, "Mira");
        assert_eq!(profile.age, "19");
        assert_eq!(profile.dressing_style, "patched cloak");
        assert_eq!(profile.background_story, "Raised by wolves.\nShe never forgot.");
        assert!(profile.extra_sections.is_empty());
    }

    #[test]
    fn word_limit() {
        assert!(parse_profile_response(&raw(150)).is_ok());
        let err = parse_profile_response(&raw(151)).unwrap_err();
        assert_eq!(err.to_string(), "background_story exceeds 150 words (151)");
    }

    #[test]
    fn empty_field() {
        let text = raw(10).replace("Age: 52", "Age:   ");
        assert_eq!(parse_profile_response(&text), Err(ParseError::EmptyField { field: ProfileField::Age }));
    }

    #[test]
    fn render_then_parse() {
        let profile = parse_profile_response(&format!("{}Allies: crew\n", raw(30))).unwrap();
        assert_eq!(parse_profile_response(&render_profile(&profile)).unwrap(), profile);
    }
}
