//! Domain types shared by every part of the studio, with their validation rules.

use std::fmt;

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::raster;

pub const MAX_FIELD_CHARS: usize = 2000;
pub const MAX_STORY_WORDS: usize = 150;
pub const MIN_KEYWORDS: usize = 5;
pub const MAX_KEYWORDS: usize = 10;
pub const MAX_KEYWORD_WORDS: usize = 5;

/// Number of whitespace-delimited tokens in `text`.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// The designer's raw inputs. An empty `name` asks the model to invent one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub role_details: String,
    #[serde(default)]
    pub background_story: String,
    pub game_type: String,
    pub render_style: String,
}

impl CharacterSpec {
    pub fn validate(&self) -> ValidationReport {
        validate_spec(self)
    }

    pub fn field(&self, field: SpecField) -> &str {
        match field {
            SpecField::Name => &self.name,
            SpecField::RoleDetails => &self.role_details,
            SpecField::BackgroundStory => &self.background_story,
            SpecField::GameType => &self.game_type,
            SpecField::RenderStyle => &self.render_style,
        }
    }

    pub fn field_mut(&mut self, field: SpecField) -> &mut String {
        match field {
            SpecField::Name => &mut self.name,
            SpecField::RoleDetails => &mut self.role_details,
            SpecField::BackgroundStory => &mut self.background_story,
            SpecField::GameType => &mut self.game_type,
            SpecField::RenderStyle => &mut self.render_style,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpecField {
    Name,
    RoleDetails,
    BackgroundStory,
    GameType,
    RenderStyle,
}

impl SpecField {
    pub const ALL: [SpecField; 5] = [
        SpecField::Name,
        SpecField::RoleDetails,
        SpecField::BackgroundStory,
        SpecField::GameType,
        SpecField::RenderStyle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpecField::Name => "name",
            SpecField::RoleDetails => "role_details",
            SpecField::BackgroundStory => "background_story",
            SpecField::GameType => "game_type",
            SpecField::RenderStyle => "render_style",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

/// Layer-1 structured output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub name: String,
    pub age: String,
    pub dressing_style: String,
    pub weapon: String,
    pub background_story: String,
    #[serde(default)]
    pub extra_sections: Vec<(String, String)>,
}

impl CharacterProfile {
    pub fn validate(&self) -> ValidationReport {
        validate_profile(self)
    }

    pub fn field(&self, field: ProfileField) -> &str {
        match field {
            ProfileField::Name => &self.name,
            ProfileField::Age => &self.age,
            ProfileField::DressingStyle => &self.dressing_style,
            ProfileField::Weapon => &self.weapon,
            ProfileField::BackgroundStory => &self.background_story,
        }
    }

    pub fn field_mut(&mut self, field: ProfileField) -> &mut String {
        match field {
            ProfileField::Name => &mut self.name,
            ProfileField::Age => &mut self.age,
            ProfileField::DressingStyle => &mut self.dressing_style,
            ProfileField::Weapon => &mut self.weapon,
            ProfileField::BackgroundStory => &mut self.background_story,
        }
    }
}

/// The five required profile sections, in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileField {
    Name,
    Age,
    DressingStyle,
    Weapon,
    BackgroundStory,
}

impl ProfileField {
    pub const ALL: [ProfileField; 5] = [
        ProfileField::Name,
        ProfileField::Age,
        ProfileField::DressingStyle,
        ProfileField::Weapon,
        ProfileField::BackgroundStory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileField::Name => "name",
            ProfileField::Age => "age",
            ProfileField::DressingStyle => "dressing_style",
            ProfileField::Weapon => "weapon",
            ProfileField::BackgroundStory => "background_story",
        }
    }

    /// Human-facing section label, e.g. "Dressing style".
    pub fn label(self) -> &'static str {
        match self {
            ProfileField::Name => "Name",
            ProfileField::Age => "Age",
            ProfileField::DressingStyle => "Dressing style",
            ProfileField::Weapon => "Weapon",
            ProfileField::BackgroundStory => "Background story",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl fmt::Display for ProfileField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Layer-2 keywords. Construction enforces count, uniqueness and token length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct KeywordSet {
    keywords: Vec<String>,
}

impl KeywordSet {
    pub fn new(keywords: Vec<String>) -> Result<Self, ValidationError> {
        let report = validate_keywords(&keywords);
        if report.is_valid() {
            Ok(Self { keywords })
        } else {
            Err(ValidationError(report))
        }
    }

    pub fn as_slice(&self) -> &[String] {
        &self.keywords
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.keywords.iter().map(String::as_str)
    }

    pub fn joined(&self) -> String {
        self.keywords.join(", ")
    }
}

impl TryFrom<Vec<String>> for KeywordSet {
    type Error = ValidationError;

    fn try_from(value: Vec<String>) -> Result<Self, Self::Error> {
        KeywordSet::new(value)
    }
}

impl From<KeywordSet> for Vec<String> {
    fn from(value: KeywordSet) -> Self {
        value.keywords
    }
}

/// Layer-3 prompt handed to the image backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePrompt {
    pub keywords: KeywordSet,
    pub render_style: String,
    pub role_details: String,
    pub assembled: String,
}

/// Hex SHA-256 of an image payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(String);

impl ImageId {
    pub fn of(media: &[u8]) -> Self {
        ImageId(hex::encode(Sha256::digest(media)))
    }

    /// Accepts only a 64-character lowercase hex digest.
    pub fn parse(s: &str) -> Option<Self> {
        let ok = s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        ok.then(|| ImageId(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceImage {
    pub image_id: ImageId,
    #[serde(with = "base64_bytes")]
    pub media: Vec<u8>,
    pub prompt_used: String,
    pub created_at: DateTime<Utc>,
}

impl ReferenceImage {
    pub fn new(media: Vec<u8>, prompt_used: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        Self {
            image_id: ImageId::of(&media),
            media,
            prompt_used: prompt_used.into(),
            created_at,
        }
    }

    /// Checks that the id is the digest of the media and that the media decodes.
    pub fn verify(&self) -> Result<(), String> {
        if ImageId::of(&self.media) != self.image_id {
            return Err(format!("image {} does not match its media digest", self.image_id));
        }
        raster::decode_dimensions(&self.media)
            .map(|_| ())
            .map_err(|e| format!("image {} is not a valid raster: {e}", self.image_id))
    }
}

/// Exported summary of a finished character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCardDocument {
    pub character_id: String,
    pub profile: CharacterProfile,
    pub selected_image: ReferenceImage,
    /// Workspace-relative path of the selected image blob.
    pub media_ref: String,
    pub keywords: KeywordSet,
    pub issued_at: DateTime<Utc>,
}

pub(crate) mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

pub fn encode_base64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// One broken rule. `Display` is the human-facing message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    /// Neither role details nor a background story was given.
    StoryAndRoleEmpty,
    Empty { field: String },
    TooLong { field: String, chars: usize },
    OverWordLimit { field: String, words: usize },
    KeywordCount { count: usize },
    DuplicateKeyword { keyword: String },
    KeywordLength { keyword: String, words: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StoryAndRoleEmpty => f.write_str("role_details/background_story both empty"),
            Violation::Empty { field } => write!(f, "{field} empty"),
            Violation::TooLong { field, chars } => {
                write!(f, "{field}: field too long ({chars} > {MAX_FIELD_CHARS} characters)")
            }
            Violation::OverWordLimit { field, words } => {
                write!(f, "{field} exceeds {MAX_STORY_WORDS} words ({words})")
            }
            Violation::KeywordCount { count } => write!(
                f,
                "keyword count {count} outside {MIN_KEYWORDS}..={MAX_KEYWORDS}"
            ),
            Violation::DuplicateKeyword { keyword } => write!(f, "duplicate keyword \"{keyword}\""),
            Violation::KeywordLength { keyword, words } => write!(
                f,
                "keyword \"{keyword}\" has {words} words (allowed 1..={MAX_KEYWORD_WORDS})"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }

    pub fn into_result(self) -> Result<(), ValidationError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(ValidationError(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages().join("; "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("validation failed: {0}")]
pub struct ValidationError(pub ValidationReport);

pub fn validate_spec(spec: &CharacterSpec) -> ValidationReport {
    let mut violations = Vec::new();
    if spec.role_details.trim().is_empty() && spec.background_story.trim().is_empty() {
        violations.push(Violation::StoryAndRoleEmpty);
    }
    for field in [SpecField::GameType, SpecField::RenderStyle] {
        if spec.field(field).trim().is_empty() {
            violations.push(Violation::Empty { field: field.as_str().into() });
        }
    }
    for field in SpecField::ALL {
        let chars = spec.field(field).trim().chars().count();
        if chars > MAX_FIELD_CHARS {
            violations.push(Violation::TooLong { field: field.as_str().into(), chars });
        }
    }
    ValidationReport { violations }
}

pub fn validate_profile(profile: &CharacterProfile) -> ValidationReport {
    let mut violations = Vec::new();
    for field in ProfileField::ALL {
        if profile.field(field).trim().is_empty() {
            violations.push(Violation::Empty { field: field.as_str().into() });
        }
    }
    let words = word_count(&profile.background_story);
    if words > MAX_STORY_WORDS {
        violations.push(Violation::OverWordLimit {
            field: ProfileField::BackgroundStory.as_str().into(),
            words,
        });
    }
    ValidationReport { violations }
}

pub fn validate_keywords(keywords: &[String]) -> ValidationReport {
    let mut violations = Vec::new();
    if !(MIN_KEYWORDS..=MAX_KEYWORDS).contains(&keywords.len()) {
        violations.push(Violation::KeywordCount { count: keywords.len() });
    }
    let mut seen = std::collections::HashSet::new();
    for keyword in keywords {
        let words = word_count(keyword);
        if !(1..=MAX_KEYWORD_WORDS).contains(&words) || keyword.trim() != keyword {
            violations.push(Violation::KeywordLength { keyword: keyword.clone(), words });
        }
        if !seen.insert(keyword.to_lowercase()) {
            violations.push(Violation::DuplicateKeyword { keyword: keyword.clone() });
        }
    }
    ValidationReport { violations }
}

/// Stages of the derivation chain spec → profile → keywords → images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Profile,
    Keywords,
    Images,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Profile, Layer::Keywords, Layer::Images];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Profile => "profile",
            Layer::Keywords => "keywords",
            Layer::Images => "images",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }

    /// The derived layer this one is computed from, if any.
    pub fn upstream(self) -> Option<Layer> {
        match self {
            Layer::Profile => None,
            Layer::Keywords => Some(Layer::Profile),
            Layer::Images => Some(Layer::Keywords),
        }
    }

    /// This layer and everything derived from it.
    pub fn and_downstream(self) -> impl Iterator<Item = Layer> {
        Layer::ALL.into_iter().filter(move |l| *l >= self)
    }

    /// Everything strictly derived from this layer.
    pub fn downstream(self) -> impl Iterator<Item = Layer> {
        Layer::ALL.into_iter().filter(move |l| *l > self)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
