//! Features proposed by the generation agent. A proposal is only accepted when its
//! computation rule names one of the primitive extractors below.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{count_ranked, FeatureDescriptor, FeatureValue, Origin, Payload, Pool, UNAVAILABLE};
use crate::corpus::{PredictionSample, Stay};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Location,
    Category,
    Hour,
    Weekday,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwellStat {
    Mean,
    Median,
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "extractor", rename_all = "snake_case")]
pub enum ExtractorRule {
    FrequencyOverField { field: Field, top: usize },
    TimeBucketHistogram { bucket_hours: u32 },
    TransitionCount { top: usize },
    DwellStatistic { stat: DwellStat },
}

pub const EXTRACTOR_NAMES: [&str; 4] = [
    "frequency_over_field",
    "time_bucket_histogram",
    "transition_count",
    "dwell_statistic",
];

impl ExtractorRule {
    /// Accepts `{"extractor": name, "params": {...}}`, a flat object with `extractor`,
    /// or a string such as `"frequency_over_field(field=category, top=3)"`.
    pub fn from_value(v: &Value) -> Result<Self, String> {
        let (name, params): (String, BTreeMap<String, String>) = match v {
            Value::String(s) => parse_call(s)?,
            Value::Object(obj) => {
                let name = obj
                    .get("extractor")
                    .or_else(|| obj.get("name"))
                    .and_then(Value::as_str)
                    .ok_or("computation rule has no extractor name")?
                    .to_string();
                let source = obj.get("params").and_then(Value::as_object).unwrap_or(obj);
                let params = source
                    .iter()
                    .filter(|(k, _)| k.as_str() != "extractor" && k.as_str() != "name")
                    .map(|(k, v)| {
                        let s = match v {
                            Value::String(s) => s.clone(),
                            other => other.to_string(),
                        };
                        (k.clone(), s)
                    })
                    .collect();
                (name, params)
            }
            _ => return Err("computation rule must be a string or an object".into()),
        };
        Self::build(&name.trim().to_lowercase(), &params)
    }

    fn build(name: &str, params: &BTreeMap<String, String>) -> Result<Self, String> {
        let num = |key: &str, default: usize| -> Result<usize, String> {
            match params.get(key) {
                None => Ok(default),
                Some(s) => s
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| format!("parameter {key}=`{s}` is not a positive integer")),
            }
        };
        match name {
            "frequency_over_field" => {
                let field = match params.get("field").map(|s| s.trim().to_lowercase()).as_deref() {
                    None | Some("location") => Field::Location,
                    Some("category") | Some("venue_category") => Field::Category,
                    Some("hour") => Field::Hour,
                    Some("weekday") | Some("day_of_week") => Field::Weekday,
                    Some(other) => return Err(format!("unknown field `{other}`")),
                };
                Ok(Self::FrequencyOverField {
                    field,
                    top: num("top", 5)?.max(1),
                })
            }
            "time_bucket_histogram" => {
                let bucket_hours = num("bucket_hours", 6)?;
                if !(1..=24).contains(&bucket_hours) {
                    return Err(format!("bucket_hours must be in 1..=24, got {bucket_hours}"));
                }
                Ok(Self::TimeBucketHistogram {
                    bucket_hours: bucket_hours as u32,
                })
            }
            "transition_count" => Ok(Self::TransitionCount {
                top: num("top", 5)?.max(1),
            }),
            "dwell_statistic" => {
                let stat = match params.get("stat").map(|s| s.trim().to_lowercase()).as_deref() {
                    None | Some("mean") => DwellStat::Mean,
                    Some("median") => DwellStat::Median,
                    Some("max") => DwellStat::Max,
                    Some(other) => return Err(format!("unknown dwell statistic `{other}`")),
                };
                Ok(Self::DwellStatistic { stat })
            }
            other => Err(format!(
                "unrecognized extractor `{other}` (expected one of {})",
                EXTRACTOR_NAMES.join(", ")
            )),
        }
    }

    pub fn compute(&self, sample: &PredictionSample, tz_offset_secs: i64) -> Payload {
        let stays: Vec<&Stay> = sample.observed_stays().collect();
        match self {
            Self::FrequencyOverField { field, top } => {
                let values: Vec<String> = stays
                    .iter()
                    .filter_map(|s| field_value(s, *field, tz_offset_secs))
                    .collect();
                if values.is_empty() {
                    return Payload::Empty;
                }
                let total = values.len() as f64;
                Payload::Table(
                    count_ranked(values.iter().map(String::as_str))
                        .into_iter()
                        .take(*top)
                        .map(|(k, c)| (k, c as f64 / total))
                        .collect(),
                )
            }
            Self::TimeBucketHistogram { bucket_hours } => {
                if stays.is_empty() {
                    return Payload::Empty;
                }
                let width = *bucket_hours as i64;
                let n_buckets = (24 + width - 1) / width;
                let mut counts = vec![0usize; n_buckets as usize];
                for s in &stays {
                    counts[(local_hour(s.timestamp, tz_offset_secs) / width) as usize] += 1;
                }
                let total = stays.len() as f64;
                Payload::Table(
                    counts
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| {
                            let lo = i as i64 * width;
                            let hi = (lo + width).min(24);
                            (format!("{lo:02}-{hi:02}h"), c as f64 / total)
                        })
                        .collect(),
                )
            }
            Self::TransitionCount { top } => {
                let mut pairs = Vec::new();
                for session in sample.history.iter().map(|s| s.stays.as_slice()).chain([sample.context.as_slice()]) {
                    for w in session.windows(2) {
                        pairs.push(format!("{}>{}", w[0].location_id, w[1].location_id));
                    }
                }
                if pairs.is_empty() {
                    return Payload::Empty;
                }
                Payload::Table(
                    count_ranked(pairs.iter().map(String::as_str))
                        .into_iter()
                        .take(*top)
                        .map(|(k, c)| (k, c as f64))
                        .collect(),
                )
            }
            Self::DwellStatistic { stat } => {
                let mut gaps: Vec<f64> = Vec::new();
                for session in sample.history.iter().map(|s| s.stays.as_slice()).chain([sample.context.as_slice()]) {
                    for w in session.windows(2) {
                        gaps.push((w[1].timestamp - w[0].timestamp) as f64 / 60.0);
                    }
                }
                if gaps.is_empty() {
                    return Payload::Empty;
                }
                gaps.sort_by(f64::total_cmp);
                let value = match stat {
                    DwellStat::Mean => gaps.iter().sum::<f64>() / gaps.len() as f64,
                    DwellStat::Max => *gaps.last().expect("non-empty"),
                    DwellStat::Median => {
                        let n = gaps.len();
                        if n % 2 == 1 {
                            gaps[n / 2]
                        } else {
                            (gaps[n / 2 - 1] + gaps[n / 2]) / 2.0
                        }
                    }
                };
                Payload::Number(value)
            }
        }
    }
}

fn parse_call(s: &str) -> Result<(String, BTreeMap<String, String>), String> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_string(), BTreeMap::new()));
    };
    let name = s[..open].trim().to_string();
    let inner = s[open + 1..].trim_end().strip_suffix(')').ok_or("unbalanced parentheses in rule")?;
    let mut params = BTreeMap::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("parameter `{part}` is not key=value"))?;
        params.insert(k.trim().to_string(), v.trim().trim_matches('"').to_string());
    }
    Ok((name, params))
}

fn local_hour(ts: i64, tz_offset_secs: i64) -> i64 {
    (ts + tz_offset_secs).rem_euclid(86_400) / 3600
}

fn field_value(stay: &Stay, field: Field, tz_offset_secs: i64) -> Option<String> {
    match field {
        Field::Location => Some(stay.location_id.clone()),
        Field::Category => stay.venue_category.clone(),
        Field::Hour => Some(format!("{:02}h", local_hour(stay.timestamp, tz_offset_secs))),
        Field::Weekday => {
            let days = (stay.timestamp + tz_offset_secs).div_euclid(86_400);
            // 1970-01-01 was a Thursday.
            const NAMES: [&str; 7] = ["Thu", "Fri", "Sat", "Sun", "Mon", "Tue", "Wed"];
            Some(NAMES[days.rem_euclid(7) as usize].to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedFeature {
    pub descriptor: FeatureDescriptor,
    pub name: String,
    pub description: String,
    pub rule: ExtractorRule,
}

impl GeneratedFeature {
    pub fn new(name: &str, description: &str, rule: ExtractorRule) -> Self {
        let id = format!("gen_{}", slug(name));
        Self {
            descriptor: FeatureDescriptor {
                feature_id: id.clone(),
                pool: Pool::Generated,
                subcategory: name.trim().to_string(),
                origin: Origin::LlmGenerated,
                renderer_id: id,
            },
            name: name.trim().to_string(),
            description: description.trim().to_string(),
            rule,
        }
    }

    pub fn id(&self) -> &str {
        &self.descriptor.feature_id
    }

    pub fn compute(&self, sample: &PredictionSample, tz_offset_secs: i64) -> FeatureValue {
        FeatureValue::new(self.id(), self.rule.compute(sample, tz_offset_secs), UNAVAILABLE)
    }
}

pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.trim().to_lowercase().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}
