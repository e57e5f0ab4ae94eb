//! Standard feature pools, the feature registry and prompt rendering.
//!
//! Four standard pools hold sixteen subcategories:
//!
//! | pool       | features                                                                 |
//! |------------|--------------------------------------------------------------------------|
//! | trajectory | `traj_times`, `context_stay_count`, `target_stay_duration`, `visit_frequency`, `major_venues` |
//! | spatial    | `admin_areas`, `subdistrict_count`, `poi_collection`                      |
//! | memory     | `long_term_memory`, `short_term_memory`, `top_activity_hours`, `recent_visits`, `profile_keywords` |
//! | social     | `direct_neighbors`, `neighbor_top_locations`, `two_hop_summary`          |
//!
//! Generated features and the group-label feature are registered on top.

mod builders;
mod generated;
mod social;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builders::{
    build_memory_features, build_social_features, build_spatial_features, build_trajectory_features,
    count_ranked, format_local_time, hour_histogram, FeatureBuilder, FeatureConfig, UserProfile,
};
pub use generated::{DwellStat, ExtractorRule, Field, GeneratedFeature};
pub use social::SocialGraph;

pub mod ids {
    pub const TRAJ_TIMES: &str = "traj_times";
    pub const CONTEXT_STAY_COUNT: &str = "context_stay_count";
    pub const TARGET_STAY_DURATION: &str = "target_stay_duration";
    pub const VISIT_FREQUENCY: &str = "visit_frequency";
    pub const MAJOR_VENUES: &str = "major_venues";
    pub const ADMIN_AREAS: &str = "admin_areas";
    pub const SUBDISTRICT_COUNT: &str = "subdistrict_count";
    pub const POI_COLLECTION: &str = "poi_collection";
    pub const LONG_TERM_MEMORY: &str = "long_term_memory";
    pub const SHORT_TERM_MEMORY: &str = "short_term_memory";
    pub const TOP_ACTIVITY_HOURS: &str = "top_activity_hours";
    pub const RECENT_VISITS: &str = "recent_visits";
    pub const PROFILE_KEYWORDS: &str = "profile_keywords";
    pub const DIRECT_NEIGHBORS: &str = "direct_neighbors";
    pub const NEIGHBOR_TOP_LOCATIONS: &str = "neighbor_top_locations";
    pub const TWO_HOP_SUMMARY: &str = "two_hop_summary";
    pub const GROUP_LABEL: &str = "group_label";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Trajectory,
    Spatial,
    Memory,
    Social,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Standard,
    LlmGenerated,
    GroupLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub feature_id: String,
    pub pool: Pool,
    pub subcategory: String,
    pub origin: Origin,
    pub renderer_id: String,
}

impl FeatureDescriptor {
    fn standard(id: &str, pool: Pool, subcategory: &str) -> Self {
        Self {
            feature_id: id.into(),
            pool,
            subcategory: subcategory.into(),
            origin: Origin::Standard,
            renderer_id: id.into(),
        }
    }
}

pub fn standard_descriptors() -> Vec<FeatureDescriptor> {
    use ids::*;
    use Pool::*;
    let d = FeatureDescriptor::standard;
    vec![
        d(TRAJ_TIMES, Trajectory, "trajectory time"),
        d(CONTEXT_STAY_COUNT, Trajectory, "context stay count"),
        d(TARGET_STAY_DURATION, Trajectory, "target stay duration"),
        d(VISIT_FREQUENCY, Trajectory, "historical visit frequency"),
        d(MAJOR_VENUES, Trajectory, "major venue ids"),
        d(ADMIN_AREAS, Spatial, "administrative areas"),
        d(SUBDISTRICT_COUNT, Spatial, "subdistrict count"),
        d(POI_COLLECTION, Spatial, "nearby poi collection"),
        d(LONG_TERM_MEMORY, Memory, "long-term memory"),
        d(SHORT_TERM_MEMORY, Memory, "short-term memory"),
        d(TOP_ACTIVITY_HOURS, Memory, "top activity times"),
        d(RECENT_VISITS, Memory, "recent visits"),
        d(PROFILE_KEYWORDS, Memory, "user profile keywords"),
        d(DIRECT_NEIGHBORS, Social, "social network"),
        d(NEIGHBOR_TOP_LOCATIONS, Social, "neighbor network locations"),
        d(TWO_HOP_SUMMARY, Social, "hop-level features"),
    ]
}

pub fn group_label_descriptor() -> FeatureDescriptor {
    FeatureDescriptor {
        feature_id: ids::GROUP_LABEL.into(),
        pool: Pool::Generated,
        subcategory: "user group category".into(),
        origin: Origin::GroupLabel,
        renderer_id: ids::GROUP_LABEL.into(),
    }
}

/// Every feature the selection stage may choose from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    descriptors: Vec<FeatureDescriptor>,
    generated: BTreeMap<String, GeneratedFeature>,
}

impl Default for FeatureRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureRegistry {
    pub fn standard() -> Self {
        Self {
            descriptors: standard_descriptors(),
            generated: BTreeMap::new(),
        }
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.descriptors.iter().any(|d| d.feature_id == id)
    }

    pub fn get(&self, id: &str) -> Option<&FeatureDescriptor> {
        self.descriptors.iter().find(|d| d.feature_id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.descriptors.iter().map(|d| d.feature_id.as_str())
    }

    pub fn standard_ids(&self) -> Vec<String> {
        self.descriptors
            .iter()
            .filter(|d| d.origin == Origin::Standard)
            .map(|d| d.feature_id.clone())
            .collect()
    }

    pub fn generated(&self) -> &BTreeMap<String, GeneratedFeature> {
        &self.generated
    }

    pub fn generated_rule(&self, id: &str) -> Option<&GeneratedFeature> {
        self.generated.get(id)
    }

    /// Adds a generated feature. Returns `false` (and changes nothing) for duplicate ids.
    pub fn register_generated(&mut self, feature: GeneratedFeature) -> bool {
        if self.contains(&feature.descriptor.feature_id) {
            return false;
        }
        self.descriptors.push(feature.descriptor.clone());
        self.generated
            .insert(feature.descriptor.feature_id.clone(), feature);
        true
    }

    pub fn ensure_group_label(&mut self) -> bool {
        if self.contains(ids::GROUP_LABEL) {
            return false;
        }
        self.descriptors.push(group_label_descriptor());
        true
    }

    pub fn pool_counts(&self) -> BTreeMap<Pool, usize> {
        let mut counts = BTreeMap::new();
        for d in &self.descriptors {
            *counts.entry(d.pool).or_insert(0) += 1;
        }
        counts
    }

    /// One line per descriptor, used in agent prompts.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for d in &self.descriptors {
            let _ = writeln!(out, "- {} [{:?}] {}", d.feature_id, d.pool, d.subcategory);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Empty,
    Integer(i64),
    Number(f64),
    Text(String),
    List(Vec<String>),
    Table(Vec<(String, f64)>),
}

impl Payload {
    pub fn is_empty(&self) -> bool {
        match self {
            Payload::Empty => true,
            Payload::Text(s) => s.is_empty(),
            Payload::List(l) => l.is_empty(),
            Payload::Table(t) => t.is_empty(),
            Payload::Integer(_) | Payload::Number(_) => false,
        }
    }
}

pub const UNKNOWN: &str = "unknown";
pub const UNAVAILABLE: &str = "unavailable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub feature_id: String,
    pub payload: Payload,
    pub rendered: String,
}

impl FeatureValue {
    /// Renders `payload` as `"<id>: <body>"`; empty payloads render as `placeholder`.
    pub fn new(feature_id: &str, payload: Payload, placeholder: &str) -> Self {
        let body = if payload.is_empty() {
            placeholder.to_string()
        } else {
            render_payload(&payload)
        };
        Self {
            feature_id: feature_id.into(),
            rendered: format!("{feature_id}: {body}"),
            payload,
        }
    }

    pub fn unavailable(feature_id: &str) -> Self {
        Self::new(feature_id, Payload::Empty, UNAVAILABLE)
    }
}

fn render_payload(payload: &Payload) -> String {
    match payload {
        Payload::Empty => String::new(),
        Payload::Integer(i) => i.to_string(),
        Payload::Number(f) => format!("{f:.3}"),
        Payload::Text(s) => s.clone(),
        Payload::List(items) => items.join(", "),
        Payload::Table(rows) => rows
            .iter()
            .map(|(k, v)| format!("{k}={v:.3}"))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedBlock {
    pub text: String,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    /// Set when nothing fit and only the trajectory-time block was emitted.
    pub minimal: bool,
}

/// Orders feature blocks by descending weight (ties by id) and drops whole
/// lowest-weight blocks until the whitespace-token count fits `budget`.
pub fn render_feature_block(
    values: &[FeatureValue],
    weights: &BTreeMap<String, f64>,
    budget: usize,
) -> Result<RenderedBlock> {
    if budget == 0 {
        return Err(Error::invalid("feature token budget must be positive"));
    }
    let weight = |id: &str| weights.get(id).copied().unwrap_or(0.0);
    let mut ordered: Vec<&FeatureValue> = values.iter().collect();
    ordered.sort_by(|a, b| {
        weight(&b.feature_id)
            .total_cmp(&weight(&a.feature_id))
            .then_with(|| a.feature_id.cmp(&b.feature_id))
    });

    let mut total: usize = ordered.iter().map(|v| token_count(&v.rendered)).sum();
    let mut dropped = Vec::new();
    while total > budget {
        let Some(last) = ordered.pop() else { break };
        total -= token_count(&last.rendered);
        dropped.push(last.feature_id.clone());
    }

    if ordered.is_empty() && !values.is_empty() {
        log::warn!("no feature block fits a budget of {budget} tokens; emitting trajectory times only");
        let text = values
            .iter()
            .find(|v| v.feature_id == ids::TRAJ_TIMES)
            .map(|v| {
                v.rendered
                    .split_whitespace()
                    .take(budget)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default();
        let kept = if text.is_empty() {
            vec![]
        } else {
            vec![ids::TRAJ_TIMES.to_string()]
        };
        return Ok(RenderedBlock {
            text,
            kept,
            dropped,
            minimal: true,
        });
    }

    Ok(RenderedBlock {
        text: ordered
            .iter()
            .map(|v| v.rendered.as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        kept: ordered.iter().map(|v| v.feature_id.clone()).collect(),
        dropped,
        minimal: false,
    })
}
