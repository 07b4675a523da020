//! The closed vocabulary of twelve text categories and the keyword rule
//! engine that assigns them to free-text responses.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TextCategory {
    I,
    Ii,
    Iii,
    Iv,
    V,
    Vi,
    Vii,
    Viii,
    Ix,
    X,
    Xi,
    Xii,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryGroup {
    VisualQuality,
    RealismOfContent,
}

impl CategoryGroup {
    pub const ALL: [CategoryGroup; 2] = [CategoryGroup::VisualQuality, CategoryGroup::RealismOfContent];

    /// Row label of the umbrella row in text-score tables.
    pub fn label(self) -> &'static str {
        match self {
            CategoryGroup::VisualQuality => "Visual quality (All)",
            CategoryGroup::RealismOfContent => "Realism of content (All)",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            CategoryGroup::VisualQuality => "visual_quality",
            CategoryGroup::RealismOfContent => "realism_of_content",
        }
    }

    pub fn members(self) -> impl Iterator<Item = TextCategory> {
        TextCategory::ALL.into_iter().filter(move |c| c.group() == self)
    }
}

impl TextCategory {
    pub const ALL: [TextCategory; 12] = [
        TextCategory::I,
        TextCategory::Ii,
        TextCategory::Iii,
        TextCategory::Iv,
        TextCategory::V,
        TextCategory::Vi,
        TextCategory::Vii,
        TextCategory::Viii,
        TextCategory::Ix,
        TextCategory::X,
        TextCategory::Xi,
        TextCategory::Xii,
    ];

    /// Lower-case roman numeral.
    pub fn id(self) -> &'static str {
        use TextCategory::*;
        match self {
            I => "i",
            Ii => "ii",
            Iii => "iii",
            Iv => "iv",
            V => "v",
            Vi => "vi",
            Vii => "vii",
            Viii => "viii",
            Ix => "ix",
            X => "x",
            Xi => "xi",
            Xii => "xii",
        }
    }

    pub fn group(self) -> CategoryGroup {
        if self <= TextCategory::V {
            CategoryGroup::VisualQuality
        } else {
            CategoryGroup::RealismOfContent
        }
    }

    /// Short table label.
    pub fn label(self) -> &'static str {
        use TextCategory::*;
        match self {
            I => "Perspective & lights",
            Ii => "Inconsistency",
            Iii => "Texture & details",
            Iv => "Background",
            V => "Distortion & blend",
            Vi => "Shape & appearance",
            Vii => "Synthetic perfection",
            Viii => "Absence of physics",
            Ix => "Uncommon content",
            X => "Unknown design",
            Xi => "VIP subject",
            Xii => "Non-sense text",
        }
    }

    pub fn description(self) -> &'static str {
        use TextCategory::*;
        match self {
            I => "errors in the perspective, lights, and reflections",
            Ii => "visual inconsistencies, as incomplete shapes or sudden color changes",
            Iii => "errors in the texture, resolution, color and details",
            Iv => "unnatural blurred background",
            V => "distortions and visual blend of multiple items",
            Vi => "errors in shape, appearance and anatomy",
            Vii => "lacking of imperfections",
            Viii => "absence of physics",
            Ix => "atypical content",
            X => "items presented in a novel, implausible design",
            Xi => "atypical behavior for well-known people",
            Xii => "presence of non-sense writing and illegible characters",
        }
    }
}

impl fmt::Display for TextCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown text category {0:?} (expected a roman numeral i..xii)")]
pub struct UnknownCategory(pub String);

impl FromStr for TextCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        TextCategory::ALL
            .into_iter()
            .find(|c| c.id() == lower)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

impl Serialize for TextCategory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for TextCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Either one category or a whole group of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CategorySelector {
    One(TextCategory),
    Group(CategoryGroup),
}

impl CategorySelector {
    pub fn matches(self, categories: &BTreeSet<TextCategory>) -> bool {
        match self {
            CategorySelector::One(c) => categories.contains(&c),
            CategorySelector::Group(g) => categories.iter().any(|c| c.group() == g),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            CategorySelector::One(c) => c.id(),
            CategorySelector::Group(g) => g.id(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CategorySelector::One(c) => c.label(),
            CategorySelector::Group(g) => g.label(),
        }
    }

    /// The twelve categories followed by the two groups.
    pub fn table_rows() -> Vec<CategorySelector> {
        TextCategory::ALL
            .into_iter()
            .map(CategorySelector::One)
            .chain(CategoryGroup::ALL.into_iter().map(CategorySelector::Group))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rule set is empty")]
    Empty,
    #[error("rule {index} ({category}): bad pattern {pattern:?}: {source}")]
    Pattern {
        index: usize,
        category: TextCategory,
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

/// One entry of a rule file: any of `patterns` (whole-word, case-insensitive
/// regular expressions) assigns `category`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub category: TextCategory,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleFile {
    rules: Vec<KeywordRule>,
}

/// A rule that fired, for auditing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleHit {
    pub category: TextCategory,
    pub pattern: String,
    pub matched: String,
}

/// Result of categorizing one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Categorization {
    pub categories: BTreeSet<TextCategory>,
    pub hits: Vec<RuleHit>,
}

impl Categorization {
    /// No rule fired; the response should be reviewed by hand.
    pub fn needs_review(&self) -> bool {
        self.categories.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct KeywordRules {
    rules: Vec<KeywordRule>,
    compiled: Vec<(TextCategory, String, Regex)>,
}

const DEFAULT_RULES: &str = include_str!("default_rules.json");

impl KeywordRules {
    pub fn from_rules(rules: Vec<KeywordRule>) -> Result<Self, RuleError> {
        let mut compiled = Vec::new();
        for (index, rule) in rules.iter().enumerate() {
            for pattern in &rule.patterns {
                let re = RegexBuilder::new(&format!(r"\b(?:{pattern})\b"))
                    .case_insensitive(true)
                    .build()
                    .map_err(|source| RuleError::Pattern {
                        index,
                        category: rule.category,
                        pattern: pattern.clone(),
                        source,
                    })?;
                compiled.push((rule.category, pattern.clone(), re));
            }
        }
        if compiled.is_empty() {
            return Err(RuleError::Empty);
        }
        Ok(KeywordRules { rules, compiled })
    }

    pub fn from_json(text: &str) -> Result<Self, RuleError> {
        let file: RuleFile = serde_json::from_str(text)?;
        Self::from_rules(file.rules)
    }

    /// The rule file shipped with the crate.
    pub fn default_rules() -> Self {
        Self::from_json(DEFAULT_RULES).expect("bundled rule file is valid")
    }

    pub fn default_rules_json() -> &'static str {
        DEFAULT_RULES
    }

    pub fn rules(&self) -> &[KeywordRule] {
        &self.rules
    }

    pub fn categorize(&self, text: &str) -> Categorization {
        let mut categories = BTreeSet::new();
        let mut hits = Vec::new();
        for (category, pattern, re) in &self.compiled {
            if let Some(m) = re.find(text) {
                categories.insert(*category);
                hits.push(RuleHit {
                    category: *category,
                    pattern: pattern.clone(),
                    matched: m.as_str().to_string(),
                });
            }
        }
        Categorization { categories, hits }
    }
}

impl Default for KeywordRules {
    fn default() -> Self {
        Self::default_rules()
    }
}
