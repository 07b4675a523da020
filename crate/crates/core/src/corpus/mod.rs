//! Images, study labels, annotation responses and their on-disk layout.
//!
//! A corpus directory holds `images.jsonl`, `responses.jsonl`, an `images/`
//! folder with the image files and a `masks/` subtree. Each JSON-lines file
//! starts with a header line carrying its schema version.

mod category;
mod store;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use category::{
    Categorization, CategoryGroup, CategorySelector, KeywordRule, KeywordRules, RuleError, RuleHit,
    TextCategory, UnknownCategory,
};
pub use store::{ingest_manifest, write_atomic as write_file_atomic, CorpusStore, IngestOptions, Manifest, ManifestImage, ManifestResponse};

use crate::human::ClickPoint;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("schema error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema { line: Option<usize>, message: String },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("participant {participant_id:?} already answered image {image_id:?}")]
    DuplicateResponse { participant_id: String, image_id: String },
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("unknown response {0:?}")]
    UnknownResponse(String),
    #[error("response {response_id:?} is invalid: {}", format_field_errors(errors))]
    InvalidResponse { response_id: String, errors: Vec<FieldError> },
    #[error("{} has schema version {found}; this build reads <= {supported}", file.display())]
    VersionMismatch { file: PathBuf, found: u32, supported: u32 },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn schema(line: Option<usize>, message: impl Into<String>) -> Self {
        CorpusError::Schema {
            line,
            message: message.into(),
        }
    }
}

/// A validation failure tied to one field of a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

fn format_field_errors(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("{}: {}", e.field, e.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// The eight boolean study labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Context,
    Env,
    Animal,
    Human,
    Hands,
    Vip,
    Solo,
    Portrait,
}

impl Label {
    pub const ALL: [Label; 8] = [
        Label::Context,
        Label::Env,
        Label::Animal,
        Label::Human,
        Label::Hands,
        Label::Vip,
        Label::Solo,
        Label::Portrait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Label::Context => "CONTEXT",
            Label::Env => "ENV",
            Label::Animal => "ANIMAL",
            Label::Human => "HUMAN",
            Label::Hands => "HANDS",
            Label::Vip => "VIP",
            Label::Solo => "SOLO",
            Label::Portrait => "PORTRAIT",
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub struct ImageLabels {
    pub context: bool,
    pub env: bool,
    pub animal: bool,
    pub human: bool,
    pub hands: bool,
    pub vip: bool,
    pub solo: bool,
    pub portrait: bool,
}

impl ImageLabels {
    pub fn get(&self, label: Label) -> bool {
        match label {
            Label::Context => self.context,
            Label::Env => self.env,
            Label::Animal => self.animal,
            Label::Human => self.human,
            Label::Hands => self.hands,
            Label::Vip => self.vip,
            Label::Solo => self.solo,
            Label::Portrait => self.portrait,
        }
    }

    pub fn set(&mut self, label: Label, value: bool) {
        let slot = match label {
            Label::Context => &mut self.context,
            Label::Env => &mut self.env,
            Label::Animal => &mut self.animal,
            Label::Human => &mut self.human,
            Label::Hands => &mut self.hands,
            Label::Vip => &mut self.vip,
            Label::Solo => &mut self.solo,
            Label::Portrait => &mut self.portrait,
        };
        *slot = value;
    }
}

/// A slice of the corpus: everything, or images with a label set / unset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stratum {
    All,
    Label { label: Label, positive: bool },
}

impl Stratum {
    /// `All` followed by `(+)` and `(−)` for every label.
    pub fn standard() -> Vec<Stratum> {
        std::iter::once(Stratum::All)
            .chain(Label::ALL.into_iter().flat_map(|label| {
                [true, false].map(|positive| Stratum::Label { label, positive })
            }))
            .collect()
    }

    pub fn contains(&self, labels: &ImageLabels) -> bool {
        match *self {
            Stratum::All => true,
            Stratum::Label { label, positive } => labels.get(label) == positive,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stratum::All => f.write_str("ALL"),
            Stratum::Label { label, positive } => {
                write!(f, "{}({})", label.name(), if *positive { '+' } else { '-' })
            }
        }
    }
}

impl FromStr for Stratum {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Stratum::All);
        }
        let (name, positive) = if let Some(n) = s.strip_suffix("(+)") {
            (n, true)
        } else if let Some(n) = s.strip_suffix("(-)") {
            (n, false)
        } else {
            return Err(format!("stratum {s:?} must be ALL, LABEL(+) or LABEL(-)"));
        };
        Ok(Stratum::Label {
            label: name.parse()?,
            positive,
        })
    }
}

impl Serialize for Stratum {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Stratum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    /// Relative to the corpus root.
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub generator: String,
    pub labels: ImageLabels,
}

/// Where a response's text categories came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySource {
    #[default]
    Rules,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationResponse {
    pub response_id: String,
    pub participant_id: String,
    pub image_id: String,
    pub clicks: Vec<ClickPoint>,
    /// One item tag per click, when annotated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click_item_tags: Option<Vec<String>>,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub text_categories: BTreeSet<TextCategory>,
    #[serde(default)]
    pub category_source: CategorySource,
    /// Set when no rule matched and nobody has categorized the text by hand.
    #[serde(default)]
    pub needs_review: bool,
    #[serde(default)]
    pub timestamp: String,
}

impl AnnotationResponse {
    /// Field-level checks against the image the response refers to.
    pub fn validate(&self, image: &ImageRecord) -> Vec<FieldError> {
        let mut errors = Vec::new();
        if self.response_id.trim().is_empty() {
            errors.push(FieldError::new("response_id", "must not be empty"));
        }
        if self.participant_id.trim().is_empty() {
            errors.push(FieldError::new("participant_id", "must not be empty"));
        }
        match self.clicks.len() {
            0 => errors.push(FieldError::new("clicks", "at least one click is required")),
            1 | 2 => {}
            n => errors.push(FieldError::new("clicks", format!("at most two clicks allowed, got {n}"))),
        }
        for (i, c) in self.clicks.iter().enumerate() {
            if c.x >= image.width || c.y >= image.height {
                errors.push(FieldError::new(
                    format!("clicks[{i}]"),
                    format!(
                        "({}, {}) is outside the {}x{} image",
                        c.x, c.y, image.width, image.height
                    ),
                ));
            }
        }
        if let Some(tags) = &self.click_item_tags {
            if tags.len() != self.clicks.len() {
                errors.push(FieldError::new(
                    "click_item_tags",
                    format!("{} tags for {} clicks", tags.len(), self.clicks.len()),
                ));
            }
        }
        errors
    }

    /// Sets categories from the rule engine unless they were assigned by hand.
    pub fn apply_rules(&mut self, rules: &KeywordRules) {
        if self.category_source == CategorySource::Manual {
            return;
        }
        let c = rules.categorize(&self.text);
        self.needs_review = c.needs_review();
        self.text_categories = c.categories;
    }
}

pub(crate) fn validate_id(kind: &str, id: &str) -> Result<(), String> {
    if id.is_empty() {
        return Err(format!("{kind} must not be empty"));
    }
    if id.starts_with('.')
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    {
        return Err(format!(
            "{kind} {id:?} may only contain ASCII letters, digits, '-', '_' and '.' and must not start with '.'"
        ));
    }
    Ok(())
}

/// An in-memory corpus rooted at a directory.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    root: PathBuf,
    images: Vec<ImageRecord>,
    responses: Vec<AnnotationResponse>,
    image_index: HashMap<String, usize>,
    response_index: HashMap<String, usize>,
    answered: HashSet<(String, String)>,
}

impl Corpus {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Corpus {
            root: root.into(),
            ..Corpus::default()
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.image_index.get(image_id).map(|&i| &self.images[i])
    }

    pub fn responses(&self) -> &[AnnotationResponse] {
        &self.responses
    }

    pub fn response(&self, response_id: &str) -> Option<&AnnotationResponse> {
        self.response_index.get(response_id).map(|&i| &self.responses[i])
    }

    pub fn responses_for<'a>(&'a self, image_id: &'a str) -> impl Iterator<Item = &'a AnnotationResponse> + 'a {
        self.responses.iter().filter(move |r| r.image_id == image_id)
    }

    pub fn has_response(&self, participant_id: &str, image_id: &str) -> bool {
        self.answered
            .contains(&(participant_id.to_string(), image_id.to_string()))
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn load_image(&self, image_id: &str) -> Result<RgbImage, CorpusError> {
        let rec = self
            .image(image_id)
            .ok_or_else(|| CorpusError::UnknownImage(image_id.to_string()))?;
        let path = self.image_path(rec);
        let img = image::open(&path)
            .map_err(|source| CorpusError::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        if img.dimensions() != (rec.width, rec.height) {
            return Err(CorpusError::schema(
                None,
                format!(
                    "image {image_id} is {}x{} on disk but recorded as {}x{}",
                    img.width(),
                    img.height(),
                    rec.width,
                    rec.height
                ),
            ));
        }
        Ok(img)
    }

    pub fn add_image(&mut self, record: ImageRecord) -> Result<(), CorpusError> {
        validate_id("image_id", &record.image_id).map_err(|m| CorpusError::schema(None, m))?;
        if record.generator.trim().is_empty() {
            return Err(CorpusError::schema(
                None,
                format!("image {}: generator must not be empty", record.image_id),
            ));
        }
        if record.width == 0 || record.height == 0 {
            return Err(CorpusError::schema(
                None,
                format!("image {}: dimensions must be positive", record.image_id),
            ));
        }
        if self.image_index.contains_key(&record.image_id) {
            return Err(CorpusError::DuplicateId {
                kind: "image",
                id: record.image_id,
            });
        }
        self.image_index
            .insert(record.image_id.clone(), self.images.len());
        self.images.push(record);
        Ok(())
    }

    /// Adds a validated response. Categories are stored as given.
    pub fn add_response(&mut self, response: AnnotationResponse) -> Result<(), CorpusError> {
        let image = self
            .image(&response.image_id)
            .ok_or_else(|| CorpusError::UnknownImage(response.image_id.clone()))?;
        let errors = response.validate(image);
        if !errors.is_empty() {
            return Err(CorpusError::InvalidResponse {
                response_id: response.response_id.clone(),
                errors,
            });
        }
        if self.response_index.contains_key(&response.response_id) {
            return Err(CorpusError::DuplicateId {
                kind: "response",
                id: response.response_id,
            });
        }
        let key = (response.participant_id.clone(), response.image_id.clone());
        if self.answered.contains(&key) {
            return Err(CorpusError::DuplicateResponse {
                participant_id: key.0,
                image_id: key.1,
            });
        }
        self.answered.insert(key);
        self.response_index
            .insert(response.response_id.clone(), self.responses.len());
        self.responses.push(response);
        Ok(())
    }

    /// Manual assignment; always wins over the rule engine afterwards.
    pub fn set_manual_categories(
        &mut self,
        response_id: &str,
        categories: BTreeSet<TextCategory>,
    ) -> Result<(), CorpusError> {
        let &i = self
            .response_index
            .get(response_id)
            .ok_or_else(|| CorpusError::UnknownResponse(response_id.to_string()))?;
        let r = &mut self.responses[i];
        r.text_categories = categories;
        r.category_source = CategorySource::Manual;
        r.needs_review = false;
        Ok(())
    }

    /// Re-runs the rule engine over every rule-sourced response.
    pub fn recategorize(&mut self, rules: &KeywordRules) {
        for r in &mut self.responses {
            r.apply_rules(rules);
        }
    }

    pub fn masks_dir(&self) -> PathBuf {
        self.root.join("masks")
    }

    /// `masks/human/<image>.pgm`
    pub fn human_mask_path(&self, image_id: &str) -> PathBuf {
        self.masks_dir().join("human").join(format!("{image_id}.pgm"))
    }

    /// `masks/text/<category>/<image>.pgm`
    pub fn text_mask_path(&self, selector: CategorySelector, image_id: &str) -> PathBuf {
        self.masks_dir()
            .join("text")
            .join(selector.id())
            .join(format!("{image_id}.pgm"))
    }

    /// `masks/xai/<detector>/<method>/<image>.pgm`
    pub fn xai_mask_path(&self, detector_id: &str, method_id: &str, image_id: &str) -> PathBuf {
        self.masks_dir()
            .join("xai")
            .join(detector_id)
            .join(method_id)
            .join(format!("{image_id}.pgm"))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self, CorpusError> {
        store::load_corpus(root.as_ref())
    }

    /// Writes `images.jsonl` and `responses.jsonl` under the corpus root.
    pub fn save(&self) -> Result<(), CorpusError> {
        store::save_corpus(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            path: format!("images/{id}.png"),
            width: 10,
            height: 8,
            generator: "SDXL 1.0".into(),
            labels: ImageLabels::default(),
        }
    }

    pub(crate) fn response(id: &str, participant: &str, image: &str, clicks: &[(u32, u32)]) -> AnnotationResponse {
        AnnotationResponse {
            response_id: id.into(),
            participant_id: participant.into(),
            image_id: image.into(),
            clicks: clicks.iter().map(|&(x, y)| ClickPoint { x, y }).collect(),
            click_item_tags: None,
            text: String::new(),
            text_categories: BTreeSet::new(),
            category_source: CategorySource::Rules,
            needs_review: false,
            timestamp: String::new(),
        }
    }

    #[test]
    fn labels_serialize_upper_case() {
        let mut l = ImageLabels::default();
        l.set(Label::Vip, true);
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(
            json,
            r#"{"CONTEXT":false,"ENV":false,"ANIMAL":false,"HUMAN":false,"HANDS":false,"VIP":true,"SOLO":false,"PORTRAIT":false}"#
        );
        assert!(serde_json::from_str::<ImageLabels>(r#"{"CONTEXT":true}"#).is_err());
    }

    #[test]
    fn strata() {
        let s = Stratum::standard();
        assert_eq!(s.len(), 17);
        assert_eq!(s[1].to_string(), "CONTEXT(+)");
        assert_eq!(s[2].to_string(), "CONTEXT(-)");
        for st in s {
            assert_eq!(st.to_string().parse::<Stratum>().unwrap(), st);
        }
        let mut l = ImageLabels::default();
        l.human = true;
        assert!("HUMAN(+)".parse::<Stratum>().unwrap().contains(&l));
        assert!(!"HUMAN(-)".parse::<Stratum>().unwrap().contains(&l));
    }

    #[test]
    fn response_validation() {
        let img = record("a");
        assert!(response("r", "p", "a", &[(0, 0), (9, 7)]).validate(&img).is_empty());
        let zero = response("r", "p", "a", &[]).validate(&img);
        assert_eq!(zero[0].field, "clicks");
        let three = response("r", "p", "a", &[(0, 0); 3]).validate(&img);
        assert_eq!(three[0].field, "clicks");
        let oob = response("r", "p", "a", &[(10, 0)]).validate(&img);
        assert_eq!(oob[0].field, "clicks[0]");
    }

    #[test]
    fn referential_integrity_and_duplicates() {
        let mut c = Corpus::empty("/tmp/x");
        c.add_image(record("a")).unwrap();
        assert!(matches!(c.add_image(record("a")), Err(CorpusError::DuplicateId { kind: "image", .. })));
        assert!(matches!(
            c.add_response(response("r1", "p", "zz", &[(1, 1)])),
            Err(CorpusError::UnknownImage(_))
        ));
        c.add_response(response("r1", "p", "a", &[(1, 1)])).unwrap();
        assert!(matches!(
            c.add_response(response("r1", "q", "a", &[(1, 1)])),
            Err(CorpusError::DuplicateId { kind: "response", .. })
        ));
        assert!(matches!(
            c.add_response(response("r2", "p", "a", &[(1, 1)])),
            Err(CorpusError::DuplicateResponse { .. })
        ));
        match c.add_response(response("r3", "q", "a", &[(50, 1)])) {
            Err(CorpusError::InvalidResponse { response_id, .. }) => assert_eq!(response_id, "r3"),
            other => panic!("{other:?}"),
        }
        assert!(c.has_response("p", "a"));
        assert!(!c.has_response("q", "a"));
    }

    #[test]
    fn manual_override_wins() {
        let mut c = Corpus::empty("/tmp/x");
        c.add_image(record("a")).unwrap();
        let mut r = response("r1", "p", "a", &[(1, 1)]);
        r.text = "six fingers".into();
        r.apply_rules(&KeywordRules::default_rules());
        assert_eq!(r.text_categories.iter().copied().collect::<Vec<_>>(), vec![TextCategory::Vi]);
        c.add_response(r).unwrap();
        c.set_manual_categories("r1", [TextCategory::Iii].into()).unwrap();
        c.recategorize(&KeywordRules::default_rules());
        let r = c.response("r1").unwrap();
        assert_eq!(r.category_source, CategorySource::Manual);
        assert_eq!(r.text_categories, [TextCategory::Iii].into());
    }

    #[test]
    fn id_rules() {
        assert!(validate_id("image_id", "img_01.a-b").is_ok());
        assert!(validate_id("image_id", "../x").is_err());
        assert!(validate_id("image_id", "a/b").is_err());
        assert!(validate_id("image_id", "").is_err());
    }
}
