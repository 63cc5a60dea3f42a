//! Offline backend whose every output is a pure function of `(seed, request)`.
//!
//! Text replies are template expansions keyed by a SHA-256 of the seed and the
//! full message list. The task is recognised from the prompt wording: a request
//! naming the profile sections gets a labeled profile, a request for
//! comma-separated keywords gets a keyword line, anything else is answered in
//! character. Images are solid-color PNGs whose color derives from the prompt.

use chrono::{DateTime, TimeZone, Utc};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, ImageRequest, ProviderError, ProviderKind, Role, TextResult, Usage};
use crate::model::{word_count, ReferenceImage};
use crate::pipeline::template::{KEYWORD_REQUEST_MARKER, PROFILE_FIELD_LIST, TAKEN_NAMES_MARKER};
use crate::raster;

const NAMES: &[&str] = &[
    "Ahab", "Mira", "Durin", "Kael", "Ysolde", "Tobias", "Rhea", "Orin", "Sable", "Lucan", "Nadia",
    "Corvin", "Isolde", "Jarek", "Vesna", "Theron", "Lyra", "Bastian", "Zara", "Elric", "Maelis",
    "Ronan", "Sigrid", "Cassian", "Anwen", "Dario", "Freya", "Hale", "Ilse", "Joren", "Kestrel",
    "Leander", "Morrigan", "Nyx", "Osric", "Petra", "Quill", "Rook", "Seren", "Talia", "Ulric",
    "Vale", "Wren", "Xander", "Yara", "Zephyr", "Aldous", "Brisa", "Cato", "Dagny", "Emrys",
    "Fenna", "Gideon", "Hana", "Ivo", "Juno", "Kira", "Lorcan", "Mabel", "Nico", "Odile", "Pax",
    "Rilla", "Silas",
];

const DRESSING: &[&str] = &[
    "a weathered leather coat over chain mail",
    "a hooded black jacket with neon trim",
    "layered crimson robes with brass clasps",
    "a patched traveling cloak and worn boots",
    "a lacquered armor vest with silk sleeves",
    "a fur-lined mantle and iron bracers",
    "a tailored naval uniform with silver buttons",
    "loose ink-dyed linen and straw sandals",
    "a reinforced flight suit covered in badges",
    "a scholar's gown stained with alchemy burns",
];

const WEAPONS: &[&str] = &[
    "a notched bronze sword",
    "a modified taser pistol",
    "a twin-bladed glaive",
    "a runed war hammer",
    "a recurve bow of black yew",
    "a pair of curved daggers",
    "a harpoon on a steel cable",
    "an ornate flintlock rifle",
    "a staff crowned with a storm crystal",
    "a chain sickle",
];

const TRAITS: &[&str] = &[
    "stubborn, loyal and quick to laugh",
    "quiet, calculating and fiercely protective",
    "reckless, generous and restless",
    "proud, disciplined and secretly lonely",
    "curious, sharp-tongued and kind",
    "gloomy, patient and unexpectedly funny",
];

const HOOKS: &[&str] = &[
    "A broken promise still drives every choice they make",
    "They carry a map to a place no one else remembers",
    "An old rival has recently returned to hunt them",
    "They owe a life debt to a stranger they cannot find",
    "Rumors claim they once betrayed their own order",
    "They are searching for the sibling who vanished years ago",
    "A mysterious mark on their arm glows before every storm",
    "They refuse to fight on the day of the new moon",
];

const VOCABULARY: &[&str] = &[
    "battle-worn", "stoic gaze", "windswept hair", "glowing runes", "tattered cape", "scarred face",
    "heroic stance", "dark palette", "ornate armor", "mysterious aura", "bold silhouette",
    "soft lighting", "dynamic pose", "cyberpunk neon", "ancient relic", "determined expression",
    "flowing fabric", "metallic accents", "earthy tones", "sharp features", "loyal companion",
    "misty background", "crimson accents", "rugged boots", "arcane symbols", "youthful energy",
    "weathered skin", "regal bearing", "playful grin", "storm clouds",
];

const GESTURES: &[&str] = &[
    "tilts their head",
    "folds their arms",
    "smiles faintly",
    "narrows their eyes",
    "laughs under their breath",
    "rests a hand on their weapon",
];

/// Which generation step a text request belongs to, judged from its first user message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTask {
    Profile,
    Keywords,
    Chat,
}

fn first_user(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or_default()
}

pub fn task_of(request: &ChatRequest) -> PromptTask {
    let lower = first_user(request).to_lowercase();
    if lower.contains(PROFILE_FIELD_LIST) {
        PromptTask::Profile
    } else if lower.contains(KEYWORD_REQUEST_MARKER) {
        PromptTask::Keywords
    } else {
        PromptTask::Chat
    }
}

/// Fixed creation time for mock images.
pub fn mock_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid timestamp")
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn digest(&self, domain: &str, parts: &[&[u8]]) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((domain.len() as u64).to_le_bytes());
        hasher.update(domain.as_bytes());
        for part in parts {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        hasher.finalize().into()
    }

    /// Text reply for a request; exposed so tests can compute expected outputs.
    pub fn reply(&self, request: &ChatRequest) -> String {
        let mut parts: Vec<Vec<u8>> = Vec::with_capacity(request.messages.len());
        for m in &request.messages {
            let role = match m.role {
                Role::System => b's',
                Role::User => b'u',
                Role::Assistant => b'a',
            };
            let mut bytes = vec![role];
            bytes.extend_from_slice(m.content.as_bytes());
            parts.push(bytes);
        }
        let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        let h = Picker(self.digest("chat", &refs));

        match task_of(request) {
            PromptTask::Profile => profile_reply(&h, request),
            PromptTask::Keywords => keyword_reply(&h, first_user(request)),
            PromptTask::Chat => chat_reply(&h, request),
        }
    }

    /// Solid-color PNGs for an image request; colors are distinct within one call.
    pub fn images(&self, request: &ImageRequest) -> Result<Vec<ReferenceImage>, ProviderError> {
        let mut colors: Vec<[u8; 3]> = Vec::with_capacity(request.count as usize);
        let mut images = Vec::with_capacity(request.count as usize);
        for index in 0..request.count {
            let h = self.digest(
                "image",
                &[
                    request.prompt.as_bytes(),
                    &request.width.to_le_bytes(),
                    &request.height.to_le_bytes(),
                    &index.to_le_bytes(),
                ],
            );
            let mut rgb = [h[0], h[1], h[2]];
            while colors.contains(&rgb) {
                rgb[2] = rgb[2].wrapping_add(1);
                if rgb[2] == 0 {
                    rgb[1] = rgb[1].wrapping_add(1);
                }
            }
            colors.push(rgb);
            let media = raster::solid_png(request.width, request.height, rgb)
                .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
            images.push(ReferenceImage::new(media, request.prompt.clone(), mock_epoch()));
        }
        Ok(images)
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }

    fn complete(&self, request: &ChatRequest) -> Result<TextResult, ProviderError> {
        let content = self.reply(request);
        let prompt_tokens: usize = request.messages.iter().map(|m| word_count(&m.content)).sum();
        Ok(TextResult {
            usage: Usage {
                prompt_tokens: prompt_tokens as u32,
                completion_tokens: word_count(&content) as u32,
            },
            content,
        })
    }

    fn generate_images(&self, request: &ImageRequest) -> Result<Vec<ReferenceImage>, ProviderError> {
        self.images(request)
    }
}

struct Picker([u8; 32]);

impl Picker {
    fn index(&self, slot: usize, len: usize) -> usize {
        let i = (slot * 2) % 30;
        (u16::from_le_bytes([self.0[i], self.0[i + 1]]) as usize) % len
    }

    fn pick<'a>(&self, slot: usize, options: &[&'a str]) -> &'a str {
        options[self.index(slot, options.len())]
    }
}

/// Value of the first `Label: value` line in `text`, compared case-insensitively.
fn labeled_value<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let (head, rest) = line.split_once(':')?;
        head.trim().eq_ignore_ascii_case(label).then(|| rest.trim())
    })
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

fn taken_names(request: &ChatRequest) -> Vec<String> {
    request
        .messages
        .iter()
        .filter(|m| m.role == Role::User)
        .filter_map(|m| labeled_value(&m.content, TAKEN_NAMES_MARKER))
        .flat_map(|list| list.split(','))
        .map(|n| n.trim().to_lowercase())
        .filter(|n| !n.is_empty())
        .collect()
}

fn profile_reply(h: &Picker, request: &ChatRequest) -> String {
    let prompt = first_user(request);
    let given = labeled_value(prompt, "name")
        .filter(|v| !v.is_empty() && !v.to_lowercase().contains("invent"))
        .map(str::to_owned);
    let name = given.unwrap_or_else(|| {
        let taken = taken_names(request);
        let start = h.index(0, NAMES.len());
        (0..NAMES.len())
            .map(|k| NAMES[(start + k) % NAMES.len()])
            .find(|n| !taken.contains(&n.to_lowercase()))
            .unwrap_or(NAMES[start])
            .to_owned()
    });
    let role = labeled_value(prompt, "role details")
        .filter(|v| !v.is_empty() && !v.starts_with('('))
        .map(|v| first_words(v, 20))
        .unwrap_or_else(|| "a wanderer with no fixed role".into());
    let game = labeled_value(prompt, "game type")
        .map(|v| first_words(v, 12))
        .filter(|v| !v.is_empty())
        .unwrap_or_else(|| "untold".into());
    let age = 17 + h.index(1, 48);
    format!(
        "Name: {name}\nAge: {age}\nDressing style: {dressing}\nWeapon: {weapon}\n\
         Background story: From the setting of {game}, {name} is {role}. \
         {hook1}. {hook2}.\nPersonality: {personality}\n",
        dressing = h.pick(2, DRESSING),
        weapon = h.pick(3, WEAPONS),
        hook1 = h.pick(4, HOOKS),
        hook2 = h.pick(5, HOOKS),
        personality = h.pick(6, TRAITS),
    )
}

fn keyword_reply(h: &Picker, prompt: &str) -> String {
    let mut keywords: Vec<String> = Vec::new();
    if let Some(weapon) = labeled_value(prompt, "weapon") {
        let weapon = first_words(weapon.trim_start_matches("a ").trim_start_matches("an "), 4);
        if !weapon.is_empty() {
            keywords.push(weapon);
        }
    }
    let wanted = 6 + h.index(7, 4);
    let start = h.index(8, VOCABULARY.len());
    let step = 1 + 2 * h.index(9, 7);
    let mut k = 0;
    while keywords.len() < wanted && k < VOCABULARY.len() * 2 {
        let word = VOCABULARY[(start + k * step) % VOCABULARY.len()].to_owned();
        if !keywords.contains(&word) {
            keywords.push(word);
        }
        k += 1;
    }
    keywords.join(", ")
}

fn chat_reply(h: &Picker, request: &ChatRequest) -> String {
    let name = request
        .messages
        .iter()
        .find(|m| m.role == Role::System)
        .and_then(|m| labeled_value(&m.content, "name"))
        .filter(|n| !n.is_empty())
        .unwrap_or("The character");
    let said = request
        .messages
        .last()
        .map(|m| first_words(&m.content, 8))
        .unwrap_or_default();
    format!(
        "*{name} {gesture}.* You ask about \"{said}\". {hook}, so I will answer carefully.",
        gesture = h.pick(10, GESTURES),
        hook = h.pick(11, HOOKS),
    )
}
