//! Which items people clicked on, per stratum.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::AnalysisError;
use crate::corpus::{AnnotationResponse, ImageLabels, Stratum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ItemTag {
    Human,
    Face,
    Hands,
    Background,
    Animal,
    OtherObject,
}

impl ItemTag {
    pub const ALL: [ItemTag; 6] = [
        ItemTag::Human,
        ItemTag::Face,
        ItemTag::Hands,
        ItemTag::Background,
        ItemTag::Animal,
        ItemTag::OtherObject,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ItemTag::Human => "human",
            ItemTag::Face => "face",
            ItemTag::Hands => "hands",
            ItemTag::Background => "background",
            ItemTag::Animal => "animal",
            ItemTag::OtherObject => "other_object",
        }
    }
}

impl fmt::Display for ItemTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ItemTag {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        ItemTag::ALL
            .into_iter()
            .find(|t| t.id() == norm)
            .ok_or_else(|| AnalysisError::UnknownTag(s.to_string()))
    }
}

impl Serialize for ItemTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for ItemTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub stratum: Stratum,
    pub item: ItemTag,
    /// Share of responses with at least one click on the item.
    pub fraction: f64,
    pub responses_with_item: usize,
    pub n_responses: usize,
    /// Share of all clicks that landed on the item.
    pub click_share: f64,
    pub clicks_with_item: usize,
    pub n_clicks: usize,
}

/// Parses the tags of every response that carries them. Responses without
/// tags are skipped.
pub fn tagged_responses<'a>(
    responses: impl IntoIterator<Item = &'a AnnotationResponse>,
) -> Result<Vec<(&'a AnnotationResponse, Vec<ItemTag>)>, AnalysisError> {
    let mut out = Vec::new();
    for r in responses {
        let Some(tags) = &r.click_item_tags else { continue };
        let parsed = tags.iter().map(|t| t.parse()).collect::<Result<Vec<ItemTag>, _>>()?;
        out.push((r, parsed));
    }
    Ok(out)
}

/// Per-stratum item statistics over the tagged responses. Strata without
/// tagged responses are left out.
pub fn selection_stats(
    responses: &[AnnotationResponse],
    labels: &BTreeMap<String, ImageLabels>,
    strata: &[Stratum],
) -> Result<Vec<SelectionStats>, AnalysisError> {
    let tagged = tagged_responses(responses)?;
    let mut out = Vec::new();
    for stratum in strata {
        let mut n_responses = 0usize;
        let mut n_clicks = 0usize;
        let mut with_item = [0usize; 6];
        let mut clicks_item = [0usize; 6];
        for (r, tags) in &tagged {
            let l = labels
                .get(&r.image_id)
                .ok_or_else(|| AnalysisError::InvalidInput(format!("no labels for image {}", r.image_id)))?;
            if !stratum.contains(l) {
                continue;
            }
            n_responses += 1;
            n_clicks += tags.len();
            for (i, item) in ItemTag::ALL.iter().enumerate() {
                let hits = tags.iter().filter(|t| *t == item).count();
                clicks_item[i] += hits;
                if hits > 0 {
                    with_item[i] += 1;
                }
            }
        }
        if n_responses == 0 {
            continue;
        }
        for (i, item) in ItemTag::ALL.into_iter().enumerate() {
            out.push(SelectionStats {
                stratum: *stratum,
                item,
                fraction: with_item[i] as f64 / n_responses as f64,
                responses_with_item: with_item[i],
                n_responses,
                click_share: if n_clicks == 0 {
                    0.0
                } else {
                    clicks_item[i] as f64 / n_clicks as f64
                },
                clicks_with_item: clicks_item[i],
                n_clicks,
            });
        }
    }
    Ok(out)
}

/// Share of clicks landing on any item of `items`, computed from counts.
pub fn click_share_of(stats: &[SelectionStats], stratum: Stratum, items: &[ItemTag]) -> Option<f64> {
    let rows: Vec<_> = stats.iter().filter(|s| s.stratum == stratum).collect();
    let n = rows.first()?.n_clicks;
    let hits: usize = rows
        .iter()
        .filter(|s| items.contains(&s.item))
        .map(|s| s.clicks_with_item)
        .sum();
    Some(hits as f64 / n as f64)
}
