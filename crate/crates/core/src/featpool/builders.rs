use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

use super::{ids, FeatureRegistry, FeatureValue, Payload, SocialGraph, UNAVAILABLE, UNKNOWN};
use crate::corpus::{PredictionSample, Session, Stay};
use crate::geo::{subdistrict_count, Geocoder, SpatialContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub major_venues_n: usize,
    pub short_term_sessions: usize,
    pub recent_visits: usize,
    pub top_hours: usize,
    pub long_term_top: usize,
    pub neighbor_top: usize,
    pub tz_offset_secs: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            major_venues_n: 10,
            short_term_sessions: 2,
            recent_visits: 10,
            top_hours: 3,
            long_term_top: 10,
            neighbor_top: 5,
            tz_offset_secs: 0,
        }
    }
}

/// Counts occurrences, ordered by count descending with ties broken by first appearance.
pub fn count_ranked<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, item) in items.into_iter().enumerate() {
        counts.entry(item).or_insert((0, i)).0 += 1;
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.into_iter().map(|(k, (c, _))| (k.to_string(), c)).collect()
}

fn local_time(ts: i64, tz_offset_secs: i64) -> DateTime<FixedOffset> {
    let offset = FixedOffset::east_opt(tz_offset_secs as i32).unwrap_or_else(|| FixedOffset::east_opt(0).unwrap());
    DateTime::from_timestamp(ts, 0)
        .unwrap_or_default()
        .with_timezone(&offset)
}

/// `"2023-01-02 09:15 Mon"` in the city's local time.
pub fn format_local_time(ts: i64, tz_offset_secs: i64) -> String {
    local_time(ts, tz_offset_secs).format("%Y-%m-%d %H:%M %a").to_string()
}

pub fn hour_histogram<'a>(stays: impl IntoIterator<Item = &'a Stay>, tz_offset_secs: i64) -> [u32; 24] {
    let mut hist = [0u32; 24];
    for s in stays {
        hist[(s.timestamp + tz_offset_secs).rem_euclid(86_400) as usize / 3600] += 1;
    }
    hist
}

pub fn build_trajectory_features(sample: &PredictionSample, cfg: &FeatureConfig) -> Vec<FeatureValue> {
    let times: Vec<String> = sample
        .context
        .iter()
        .map(|s| format_local_time(s.timestamp, cfg.tz_offset_secs))
        .collect();
    let gap = sample
        .context
        .last()
        .map(|last| Payload::Integer((sample.target.timestamp - last.timestamp) / 60))
        .unwrap_or(Payload::Empty);

    let observed: Vec<&str> = sample.observed_stays().map(|s| s.location_id.as_str()).collect();
    let ranked = count_ranked(observed.iter().copied());
    let total = observed.len() as f64;
    let freq = Payload::Table(ranked.iter().map(|(l, c)| (l.clone(), *c as f64 / total)).collect());
    let major = Payload::List(
        ranked
            .iter()
            .take(cfg.major_venues_n)
            .map(|(l, _)| l.clone())
            .collect(),
    );

    vec![
        FeatureValue::new(ids::TRAJ_TIMES, Payload::List(times), UNKNOWN),
        FeatureValue::new(
            ids::CONTEXT_STAY_COUNT,
            Payload::Integer(sample.context.len() as i64),
            UNKNOWN,
        ),
        FeatureValue::new(ids::TARGET_STAY_DURATION, gap, UNKNOWN),
        FeatureValue::new(ids::VISIT_FREQUENCY, freq, UNKNOWN),
        FeatureValue::new(ids::MAJOR_VENUES, major, UNKNOWN),
    ]
}

pub fn build_spatial_features(sample: &PredictionSample, geo: &Geocoder) -> Vec<FeatureValue> {
    let contexts: Vec<SpatialContext> = sample
        .context
        .iter()
        .filter_map(|s| s.coord)
        .map(|c| geo.reverse_geocode(c))
        .collect();
    let mut areas: Vec<String> = Vec::new();
    for c in &contexts {
        if !c.admin_area.is_empty() && !areas.contains(&c.admin_area) {
            areas.push(c.admin_area.clone());
        }
    }
    let subdistricts = subdistrict_count(&contexts);
    let pois = sample
        .context
        .last()
        .and_then(|s| s.coord)
        .map(|c| geo.reverse_geocode(c).nearby_poi_names)
        .unwrap_or_default();
    vec![
        FeatureValue::new(ids::ADMIN_AREAS, Payload::List(areas), UNKNOWN),
        FeatureValue::new(
            ids::SUBDISTRICT_COUNT,
            if subdistricts == 0 {
                Payload::Empty
            } else {
                Payload::Integer(subdistricts as i64)
            },
            UNKNOWN,
        ),
        FeatureValue::new(ids::POI_COLLECTION, Payload::List(pois), UNKNOWN),
    ]
}

pub fn build_memory_features(history: &[Session], keywords: &[String], cfg: &FeatureConfig) -> Vec<FeatureValue> {
    let stays: Vec<&Stay> = history.iter().flat_map(|s| &s.stays).collect();
    let long_term = Payload::Table(
        count_ranked(stays.iter().map(|s| s.location_id.as_str()))
            .into_iter()
            .take(cfg.long_term_top)
            .map(|(l, c)| (l, c as f64))
            .collect(),
    );
    let short_term = Payload::List(
        history[history.len().saturating_sub(cfg.short_term_sessions)..]
            .iter()
            .map(|s| {
                s.stays
                    .iter()
                    .map(|st| st.location_id.as_str())
                    .collect::<Vec<_>>()
                    .join(" > ")
            })
            .collect(),
    );
    let hist = hour_histogram(stays.iter().copied(), cfg.tz_offset_secs);
    let mut hours: Vec<usize> = (0..24).filter(|&h| hist[h] > 0).collect();
    hours.sort_by(|&a, &b| hist[b].cmp(&hist[a]).then(a.cmp(&b)));
    hours.truncate(cfg.top_hours);
    let top_hours = Payload::List(hours.iter().map(|h| format!("{h:02}h")).collect());
    let recent = Payload::List(
        stays[stays.len().saturating_sub(cfg.recent_visits)..]
            .iter()
            .map(|s| s.location_id.clone())
            .collect(),
    );
    vec![
        FeatureValue::new(ids::LONG_TERM_MEMORY, long_term, UNKNOWN),
        FeatureValue::new(ids::SHORT_TERM_MEMORY, short_term, UNKNOWN),
        FeatureValue::new(ids::TOP_ACTIVITY_HOURS, top_hours, UNKNOWN),
        FeatureValue::new(ids::RECENT_VISITS, recent, UNKNOWN),
        FeatureValue::new(ids::PROFILE_KEYWORDS, Payload::List(keywords.to_vec()), UNKNOWN),
    ]
}

pub fn build_social_features(user: &str, graph: &SocialGraph, cfg: &FeatureConfig) -> Vec<FeatureValue> {
    if !graph.contains(user) {
        return vec![
            FeatureValue::new(ids::DIRECT_NEIGHBORS, Payload::Empty, UNKNOWN),
            FeatureValue::new(ids::NEIGHBOR_TOP_LOCATIONS, Payload::Empty, UNKNOWN),
            FeatureValue::new(ids::TWO_HOP_SUMMARY, Payload::Empty, UNKNOWN),
        ];
    }
    let neighbors = graph.neighbors(user);
    let neighbor_locs = count_ranked(
        neighbors
            .iter()
            .flat_map(|n| graph.top_locations(n))
            .map(String::as_str),
    );
    vec![
        FeatureValue::new(ids::DIRECT_NEIGHBORS, Payload::List(neighbors.clone()), UNKNOWN),
        FeatureValue::new(
            ids::NEIGHBOR_TOP_LOCATIONS,
            Payload::Table(
                neighbor_locs
                    .into_iter()
                    .take(cfg.neighbor_top)
                    .map(|(l, c)| (l, c as f64))
                    .collect(),
            ),
            UNKNOWN,
        ),
        FeatureValue::new(
            ids::TWO_HOP_SUMMARY,
            Payload::Text(format!(
                "{} direct, {} at two hops",
                neighbors.len(),
                graph.two_hop_count(user)
            )),
            UNKNOWN,
        ),
    ]
}

/// Profiling output attached to a user: interest keywords and the rendered group label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub keywords: Vec<String>,
    pub group_label: Option<String>,
}

/// Computes any subset of registered features for a sample.
#[derive(Clone)]
pub struct FeatureBuilder {
    pub cfg: FeatureConfig,
    pub geo: Arc<Geocoder>,
    pub social: Arc<SocialGraph>,
    pub profiles: BTreeMap<String, UserProfile>,
}

impl FeatureBuilder {
    pub fn new(cfg: FeatureConfig, geo: Arc<Geocoder>, social: Arc<SocialGraph>) -> Self {
        Self {
            cfg,
            geo,
            social,
            profiles: BTreeMap::new(),
        }
    }

    /// Values for `ids` in the given order. Ids the registry does not know render as unavailable.
    pub fn compute(&self, sample: &PredictionSample, registry: &FeatureRegistry, ids: &[String]) -> Vec<FeatureValue> {
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let pool_hit = |pool: &[&str]| pool.iter().any(|id| wanted.contains(id));
        let mut all: BTreeMap<String, FeatureValue> = BTreeMap::new();
        let mut absorb = |values: Vec<FeatureValue>| {
            for v in values {
                all.insert(v.feature_id.clone(), v);
            }
        };
        if pool_hit(&TRAJECTORY_IDS) {
            absorb(build_trajectory_features(sample, &self.cfg));
        }
        if pool_hit(&SPATIAL_IDS) {
            absorb(build_spatial_features(sample, &self.geo));
        }
        let profile = self.profiles.get(&sample.user_id);
        if pool_hit(&MEMORY_IDS) {
            let keywords = profile.map(|p| p.keywords.as_slice()).unwrap_or(&[]);
            absorb(build_memory_features(&sample.history, keywords, &self.cfg));
        }
        if pool_hit(&SOCIAL_IDS) {
            absorb(build_social_features(&sample.user_id, &self.social, &self.cfg));
        }

        ids.iter()
            .map(|id| {
                if !registry.contains(id) {
                    return FeatureValue::unavailable(id);
                }
                if let Some(v) = all.remove(id) {
                    return v;
                }
                if id == ids::GROUP_LABEL {
                    let label = profile.and_then(|p| p.group_label.clone()).unwrap_or_default();
                    return FeatureValue::new(id, Payload::Text(label), UNAVAILABLE);
                }
                match registry.generated_rule(id) {
                    Some(g) => g.compute(sample, self.cfg.tz_offset_secs),
                    None => FeatureValue::unavailable(id),
                }
            })
            .collect()
    }
}

const TRAJECTORY_IDS: [&str; 5] = [
    ids::TRAJ_TIMES,
    ids::CONTEXT_STAY_COUNT,
    ids::TARGET_STAY_DURATION,
    ids::VISIT_FREQUENCY,
    ids::MAJOR_VENUES,
];
const SPATIAL_IDS: [&str; 3] = [ids::ADMIN_AREAS, ids::SUBDISTRICT_COUNT, ids::POI_COLLECTION];
const MEMORY_IDS: [&str; 5] = [
    ids::LONG_TERM_MEMORY,
    ids::SHORT_TERM_MEMORY,
    ids::TOP_ACTIVITY_HOURS,
    ids::RECENT_VISITS,
    ids::PROFILE_KEYWORDS,
];
const SOCIAL_IDS: [&str; 3] = [ids::DIRECT_NEIGHBORS, ids::NEIGHBOR_TOP_LOCATIONS, ids::TWO_HOP_SUMMARY];
