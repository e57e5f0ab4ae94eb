//! Deterministic synthetic corpus for smoke tests and the mock regression: four
//! small cities with routine-driven users, a shared geocoding fixture, friendship
//! edges, per-city configs and a scripted mock backend.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canonical;
use crate::corpus::Coord;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Pipeline};
use crate::geo::{cache_key, save_context_records, ContextSource, SpatialContext};
use crate::llm::{ChatBackend, MockRule};

pub const TOY_SEED: u64 = 20_240_101;
pub const USERS_PER_CITY: usize = 10;
pub const DAYS: i64 = 42;
pub const EXPECTED_METRICS: &str = "expected_metrics.json";

pub struct ToyCity {
    pub name: &'static str,
    pub code: &'static str,
    pub lat: f64,
    pub lon: f64,
    pub tz_hours: i64,
}

pub const CITIES: [ToyCity; 4] = [
    ToyCity { name: "tokyo", code: "tyo", lat: 35.68, lon: 139.76, tz_hours: 9 },
    ToyCity { name: "moscow", code: "mow", lat: 55.75, lon: 37.62, tz_hours: 3 },
    ToyCity { name: "saopaulo", code: "sao", lat: -23.55, lon: -46.63, tz_hours: -3 },
    ToyCity { name: "shanghai", code: "sha", lat: 31.23, lon: 121.47, tz_hours: 8 },
];

/// Venue category and the POI names the geocoding fixture reports near it.
const CATEGORIES: [(&str, [&str; 2]); 8] = [
    ("Office", ["business center", "coworking hub"]),
    ("Cafe", ["coffee bar", "bakery"]),
    ("Restaurant", ["noodle house", "food court"]),
    ("Gym", ["fitness studio", "juice bar"]),
    ("Park", ["city park", "riverside walk"]),
    ("Mall", ["shopping mall", "cinema"]),
    ("Bar", ["night bar", "live music club"]),
    ("Museum", ["art museum", "gallery"]),
];

const DISTRICTS: [&str; 4] = ["north", "south", "east", "west"];

#[derive(Debug, Clone)]
struct Venue {
    id: String,
    category: &'static str,
    lat: f64,
    lon: f64,
}

fn round5(v: f64) -> f64 {
    (v * 1e5).round() / 1e5
}

fn venue(rng: &mut ChaCha8Rng, city: &ToyCity, id: String, category: &'static str) -> Venue {
    Venue {
        id,
        category,
        lat: round5(city.lat + rng.gen_range(-0.05..0.05)),
        lon: round5(city.lon + rng.gen_range(-0.05..0.05)),
    }
}

fn context_for(city: &ToyCity, v: &Venue) -> SpatialContext {
    let district = match (v.lat >= city.lat, v.lon >= city.lon) {
        (true, true) => DISTRICTS[0],
        (false, true) => DISTRICTS[2],
        (false, false) => DISTRICTS[1],
        (true, false) => DISTRICTS[3],
    };
    let block = (((v.lat - city.lat).abs() * 100.0) as i64) * 10 + ((v.lon - city.lon).abs() * 100.0) as i64;
    let pois = match CATEGORIES.iter().find(|(c, _)| *c == v.category) {
        Some((_, names)) => names.iter().map(|s| s.to_string()).collect(),
        None => vec!["residential street".to_string()],
    };
    SpatialContext {
        admin_area: format!("{} {district}", city.name),
        subdistrict: format!("{} block {block}", city.name),
        nearby_poi_names: pois,
        source: ContextSource::Fixture,
    }
}

struct Routine {
    wake_hour: u32,
    home: Venue,
    office: Venue,
    favourites: Vec<Venue>,
}

struct CityData {
    checkins: String,
    edges: String,
    contexts: BTreeMap<String, SpatialContext>,
}

fn generate_city(city: &ToyCity, seed: u64) -> Result<CityData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut venues: Vec<Venue> = Vec::new();
    for i in 0..4 {
        venues.push(venue(&mut rng, city, format!("{}_v{:03}", city.code, i), "Office"));
    }
    for i in 4..28 {
        let category = CATEGORIES[1 + (i % (CATEGORIES.len() - 1))].0;
        venues.push(venue(&mut rng, city, format!("{}_v{:03}", city.code, i), category));
    }
    let leisure: Vec<Venue> = venues.iter().filter(|v| v.category != "Office").cloned().collect();

    let routines: Vec<Routine> = (0..USERS_PER_CITY)
        .map(|u| Routine {
            wake_hour: [6, 8, 10][u % 3],
            home: venue(&mut rng, city, format!("{}_h{:02}", city.code, u + 1), "Home"),
            office: venues[u % 4].clone(),
            favourites: leisure.choose_multiple(&mut rng, 3).cloned().collect(),
        })
        .collect();

    let tz = city.tz_hours * 3600;
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");
    let mut out = String::from("user_id\ttimestamp\tvenue_id\tlat\tlon\tcategory\n");
    for (u, r) in routines.iter().enumerate() {
        let user = format!("u{:02}", u + 1);
        for day in 0..DAYS {
            if rng.gen_bool(0.08) {
                continue;
            }
            let date = start + Duration::days(day);
            let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
            let mut plan: Vec<(u32, u32, &Venue)> = vec![(r.wake_hour, rng.gen_range(0..20), &r.home)];
            if weekend {
                plan.push((11, rng.gen_range(0..50), r.favourites.choose(&mut rng).expect("three favourites")));
                plan.push((15, rng.gen_range(0..50), leisure.choose(&mut rng).expect("leisure venues")));
            } else {
                plan.push((r.wake_hour + 1, 30 + rng.gen_range(0..20), &r.office));
                let lunch = if rng.gen_bool(0.8) {
                    r.favourites.choose(&mut rng).expect("three favourites")
                } else {
                    leisure.choose(&mut rng).expect("leisure venues")
                };
                plan.push((12 + u32::from(r.wake_hour >= 10), rng.gen_range(0..40), lunch));
                if rng.gen_bool(0.7) {
                    plan.push((18, rng.gen_range(0..50), r.favourites.choose(&mut rng).expect("three favourites")));
                }
            }
            plan.push((rng.gen_range(20..24), rng.gen_range(0..50), &r.home));
            for (hour, minute, v) in plan {
                let local = date.and_hms_opt(hour, minute, 0).expect("valid time");
                let ts = Utc.from_utc_datetime(&local).timestamp() - tz;
                let _ = writeln!(out, "{user}\t{ts}\t{}\t{:.5}\t{:.5}\t{}", v.id, v.lat, v.lon, v.category);
            }
        }
    }
    // One malformed line exercises the skip path.
    out.push_str("u01\tnot-a-time\tbroken\n");

    let mut edges = String::from("# user_a\tuser_b\n");
    for u in 0..USERS_PER_CITY {
        let _ = writeln!(edges, "u{:02}\tu{:02}", u + 1, (u + 1) % USERS_PER_CITY + 1);
    }
    for _ in 0..3 {
        let a = rng.gen_range(1..=USERS_PER_CITY);
        let b = rng.gen_range(1..=USERS_PER_CITY);
        if a != b {
            let _ = writeln!(edges, "u{a:02}\tu{b:02}");
        }
    }

    let mut contexts = BTreeMap::new();
    for v in venues.iter().chain(routines.iter().map(|r| &r.home)) {
        contexts.insert(cache_key(Coord::new(v.lat, v.lon)?), context_for(city, v));
    }
    Ok(CityData {
        checkins: out,
        edges,
        contexts,
    })
}

/// The scripted backend for the toy pipeline. Prediction replies copy the leading
/// items of the first location-bearing feature block, so block order (and thus the
/// learned weights) changes what gets predicted.
pub fn mock_rules() -> Vec<MockRule> {
    let generation = r#"[
  {"name": "weekday rhythm", "description": "Share of stays per weekday.", "computation_rule": {"extractor": "frequency_over_field", "params": {"field": "weekday", "top": 3}}},
  {"name": "transition habits", "description": "Most frequent consecutive location pairs.", "computation_rule": "transition_count(top=5)"},
  {"name": "vibe embedding", "description": "Latent taste vector.", "computation_rule": "embedding_similarity(dim=8)"}
]"#;
    let selection = r#"{"selected": ["major_venues", "recent_visits", "long_term_memory", "top_activity_hours", "admin_areas", "gen_transition_habits"]}"#;
    let loc = "([A-Za-z0-9_]+)[^,\\n]*";
    let blocks = "major_venues|recent_visits|long_term_memory|visit_frequency|neighbor_top_locations|gen_[a-z_]+";
    let prediction = format!("(?m)^(?:{blocks}): {loc}(?:, {loc})?(?:, {loc})?(?:, {loc})?(?:, {loc})?");
    vec![
        MockRule::new("Task: feature generation", generation),
        MockRule::new("Task: feature selection", selection),
        MockRule::expanding(r"(?s)Task: user persona.*?top_activity_hours: (\d\d)h", r#"{"persona": "${1}h starter"}"#),
        MockRule::new("Task: user persona", r#"{"persona": "irregular"}"#),
        MockRule::expanding(r"(?s)Task: interest mining.*?poi_collection: ([a-z ]+)", r#"["${1}"]"#),
        MockRule::new("Task: interest mining", "[]"),
        MockRule::new("Task: group merge", "No strong preference."),
        MockRule::expanding(
            &format!("(?s)Task: next-location prediction.*?{prediction}"),
            r#"{"prediction": ["${1}", "${2}", "${3}", "${4}", "${5}"], "reason": "ranked by the strongest location block"}"#,
        ),
        MockRule::expanding(
            r"(?s)Task: next-location prediction.*Candidate locations: ([A-Za-z0-9_]+)",
            r#"{"prediction": ["${1}"], "reason": "most frequent candidate"}"#,
        ),
        MockRule::new("Task: next-location prediction", "I cannot tell from this information."),
    ]
}

fn city_config(city: &ToyCity) -> String {
    format!(
        r#"# Synthetic {name} corpus with the scripted mock backend.
city = "{name}"
seed = 42

[data]
checkins = "{name}/checkins.tsv"
tz_offset_secs = {tz}
session_policy = "window72h"
split = [7.0, 1.0, 2.0]
geo_fixture = "geo_fixture.jsonl"
social_edges = "{name}/edges.tsv"

[data.schema]
delimiter = "\t"
has_header = true
user = 0
time = 1
location = 2
lat = 3
lon = 4
category = 5

[model]
model_id = "gpt-4o-mini"
backend = "mock"
mock_rules = "mock_rules.json"
max_tokens = 512

[optimize]
iterations = 5
variant = "FS-LNFW"

[grouping]
stage = "L1L2M"
min_group_size = 3

[predict]
test_samples = 200
"#,
        name = city.name,
        tz = city.tz_hours * 3600
    )
}

fn fused_config() -> String {
    let configs: Vec<String> = CITIES.iter().map(|c| format!("\"{}.toml\"", c.name)).collect();
    format!(
        r#"# Users drawn from all four synthetic cities.
city = "fused"
seed = 42

[data]
geo_fixture = "geo_fixture.jsonl"

[data.fuse]
configs = [{}]
total_users = 20

[model]
model_id = "gpt-4o-mini"
backend = "mock"
mock_rules = "mock_rules.json"
max_tokens = 512

[grouping]
stage = "off"
"#,
        configs.join(", ")
    )
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    canonical::write_atomic(path, text)
}

/// Writes the whole toy bundle into `dir`. Output bytes depend only on the code.
pub fn write_toy_data(dir: &Path) -> Result<()> {
    let mut contexts = BTreeMap::new();
    for (i, city) in CITIES.iter().enumerate() {
        let data = generate_city(city, TOY_SEED + i as u64)?;
        write(&dir.join(city.name).join("checkins.tsv"), &data.checkins)?;
        write(&dir.join(city.name).join("edges.tsv"), &data.edges)?;
        write(&dir.join(format!("{}.toml", city.name)), &city_config(city))?;
        contexts.extend(data.contexts);
    }
    save_context_records(&dir.join("geo_fixture.jsonl"), &contexts)?;
    write(&dir.join("mock_rules.json"), &canonical::to_canonical_pretty(&mock_rules())?)?;
    write(&dir.join("fused.toml"), &fused_config())?;
    Ok(())
}

/// Runs the full pipeline for every toy city under `work` and returns the combined
/// metrics in canonical text, keyed by city.
pub fn run_toy_pipelines(toy_dir: &Path, work: &Path, backend: Option<std::sync::Arc<dyn ChatBackend>>) -> Result<String> {
    let mut all = BTreeMap::new();
    for city in &CITIES {
        let cfg = ExperimentConfig::load(&toy_dir.join(format!("{}.toml", city.name)), &[])?;
        let mut p = Pipeline::open(cfg, work.join(city.name))?;
        if let Some(b) = &backend {
            p = p.with_backend(b.clone());
        }
        all.insert(city.name.to_string(), p.run()?);
    }
    canonical::to_canonical_pretty(&all)
}
