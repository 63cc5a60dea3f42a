//! Prompt templates with `{{placeholder}}` syntax, one per generation layer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// The section list the summary prompt must spell out; the mock keys on it too.
pub const PROFILE_FIELD_LIST: &str = "name, age, dressing style, weapon, background story";
pub const WORD_LIMIT_TEXT: &str = "no more than 150 words";
pub const KEYWORD_REQUEST_MARKER: &str = "comma-separated keywords";
/// Label of the line listing names a batch variant must not reuse.
pub const TAKEN_NAMES_MARKER: &str = "Names already taken";
pub const IMAGE_SUFFIX: &str = "single character, full-body concept reference";
pub const INVENT_NAME_TEXT: &str = "(none given; invent a fitting name)";
pub const NOT_SPECIFIED_TEXT: &str = "(not specified)";

const BUILTIN_SUMMARY: &str = include_str!("../../../../templates/summary.v1.txt");
const BUILTIN_KEYWORDS: &str = include_str!("../../../../templates/keywords.v1.txt");
const BUILTIN_IMAGE: &str = include_str!("../../../../templates/image.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateLayer {
    Summary,
    Keywords,
    Image,
}

impl TemplateLayer {
    pub const ALL: [TemplateLayer; 3] = [TemplateLayer::Summary, TemplateLayer::Keywords, TemplateLayer::Image];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateLayer::Summary => "summary",
            TemplateLayer::Keywords => "keywords",
            TemplateLayer::Image => "image",
        }
    }

    /// Placeholder names a template of this layer may reference.
    pub fn allowed_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateLayer::Summary => &["name", "role_details", "background_story", "game_type", "render_style"],
            TemplateLayer::Keywords => {
                &["name", "age", "dressing_style", "weapon", "background_story", "extra_sections"]
            }
            TemplateLayer::Image => &["render_style", "role_details", "keywords"],
        }
    }
}

impl fmt::Display for TemplateLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template_id}: unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { template_id: String, name: String },
    #[error("template {template_id}: unterminated placeholder")]
    Unterminated { template_id: String },
    #[error("template {template_id}: missing required text \"{text}\"")]
    MissingText { template_id: String, text: String },
    #[error("template {template_id}: {problem}")]
    Layout { template_id: String, problem: String },
    #[error("template {template_id} is for layer {found}, expected {expected}")]
    WrongLayer { template_id: String, expected: TemplateLayer, found: TemplateLayer },
    #[error("no {layer} template in {dir}")]
    Missing { layer: TemplateLayer, dir: PathBuf },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub layer: TemplateLayer,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(template_id: impl Into<String>, layer: TemplateLayer, body: impl Into<String>) -> Self {
        Self { template_id: template_id.into(), layer, body: body.into() }
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Result<Vec<&str>, TemplateError> {
        let mut names = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
                template_id: self.template_id.clone(),
            })?;
            names.push(after[..end].trim());
            rest = &after[end + 2..];
        }
        Ok(names)
    }

    /// Checks placeholders and the layer's required wording.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let allowed = self.layer.allowed_placeholders();
        let names = self.placeholders()?;
        if let Some(bad) = names.iter().find(|n| !allowed.contains(n)) {
            return Err(TemplateError::UnknownPlaceholder {
                template_id: self.template_id.clone(),
                name: (*bad).to_owned(),
            });
        }
        let lower = self.body.to_lowercase();
        let required: &[&str] = match self.layer {
            TemplateLayer::Summary => &[WORD_LIMIT_TEXT, PROFILE_FIELD_LIST],
            TemplateLayer::Keywords => &[KEYWORD_REQUEST_MARKER],
            TemplateLayer::Image => &[IMAGE_SUFFIX],
        };
        for text in required {
            if !lower.contains(text) {
                return Err(TemplateError::MissingText {
                    template_id: self.template_id.clone(),
                    text: (*text).to_owned(),
                });
            }
        }
        if self.layer == TemplateLayer::Image {
            let order: Vec<&str> = names
                .iter()
                .copied()
                .filter(|n| ["render_style", "role_details", "keywords"].contains(n))
                .collect();
            if order != ["render_style", "role_details", "keywords"] {
                return Err(TemplateError::Layout {
                    template_id: self.template_id.clone(),
                    problem: "image template must use render_style, role_details, keywords once each, in that order"
                        .into(),
                });
            }
        }
        Ok(())
    }

    /// Substitutes every placeholder; a name without a value is an error.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let allowed = self.layer.allowed_placeholders();
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
                template_id: self.template_id.clone(),
            })?;
            let name = after[..end].trim();
            let value = values
                .get(name)
                .filter(|_| allowed.contains(&name))
                .ok_or_else(|| TemplateError::UnknownPlaceholder {
                    template_id: self.template_id.clone(),
                    name: name.to_owned(),
                })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// One template per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub summary: PromptTemplate,
    pub keywords: PromptTemplate,
    pub image: PromptTemplate,
}

impl TemplateSet {
    /// The catalog shipped under `templates/`.
    pub fn builtin() -> Self {
        Self {
            summary: PromptTemplate::new("summary.v1", TemplateLayer::Summary, BUILTIN_SUMMARY.trim_end()),
            keywords: PromptTemplate::new("keywords.v1", TemplateLayer::Keywords, BUILTIN_KEYWORDS.trim_end()),
            image: PromptTemplate::new("image.v1", TemplateLayer::Image, BUILTIN_IMAGE.trim_end()),
        }
    }

    /// Loads `<layer>.v<N>.txt` files from `dir`, taking the highest version per layer.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let entries = std::fs::read_dir(dir).map_err(|source| TemplateError::Io { path: dir.to_owned(), source })?;
        let mut best: BTreeMap<&'static str, (u32, PathBuf)> = BTreeMap::new();
        for entry in entries {
            let entry = entry.map_err(|source| TemplateError::Io { path: dir.to_owned(), source })?;
            let file_name = entry.file_name().to_string_lossy().into_owned();
            let Some((layer, version)) = parse_template_file_name(&file_name) else {
                continue;
            };
            let slot = best.entry(layer.as_str()).or_insert((0, PathBuf::new()));
            if version >= slot.0 {
                *slot = (version, entry.path());
            }
        }
        let load = |layer: TemplateLayer| -> Result<PromptTemplate, TemplateError> {
            let (version, path) = best
                .get(layer.as_str())
                .ok_or_else(|| TemplateError::Missing { layer, dir: dir.to_owned() })?;
            let body = std::fs::read_to_string(path).map_err(|source| TemplateError::Io { path: path.clone(), source })?;
            let template = PromptTemplate::new(format!("{layer}.v{version}"), layer, body.trim_end());
            template.validate()?;
            Ok(template)
        };
        Ok(Self {
            summary: load(TemplateLayer::Summary)?,
            keywords: load(TemplateLayer::Keywords)?,
            image: load(TemplateLayer::Image)?,
        })
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for (template, layer) in [
            (&self.summary, TemplateLayer::Summary),
            (&self.keywords, TemplateLayer::Keywords),
            (&self.image, TemplateLayer::Image),
        ] {
            if template.layer != layer {
                return Err(TemplateError::WrongLayer {
                    template_id: template.template_id.clone(),
                    expected: layer,
                    found: template.layer,
                });
            }
            template.validate()?;
        }
        Ok(())
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

fn parse_template_file_name(name: &str) -> Option<(TemplateLayer, u32)> {
    let stem = name.strip_suffix(".txt")?;
    let (layer, version) = stem.split_once(".v")?;
    let layer = TemplateLayer::ALL.into_iter().find(|l| l.as_str() == layer)?;
    Some((layer, version.parse().ok()?))
}
