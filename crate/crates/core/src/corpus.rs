//! Check-in ingestion: parsing, grid mapping, sessionization, filtering,
//! temporal splitting and prediction-sample extraction.

use std::collections::BTreeMap;
use std::io::BufRead;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SESSION_WINDOW_SECS: i64 = 72 * 3600;
pub const MIN_SESSION_STAYS: usize = 4;
pub const MIN_USER_SESSIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

impl Coord {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::invalid(format!("latitude {lat} out of range")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!("longitude {lon} out of range")));
        }
        Ok(Self { lat, lon })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stay {
    pub user_id: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub location_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord: Option<Coord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue_category: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub user_id: String,
    pub session_id: u32,
    pub stays: Vec<Stay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Session {
    pub fn start(&self) -> i64 {
        self.stays.first().map(|s| s.timestamp).unwrap_or(i64::MIN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub ref_lat: f64,
    pub ref_lon: f64,
    #[serde(default = "default_cell_km")]
    pub cell_km: f64,
}

fn default_cell_km() -> f64 {
    1.0
}

impl GridConfig {
    pub fn new(ref_lat: f64, ref_lon: f64, cell_km: f64) -> Result<Self> {
        Coord::new(ref_lat, ref_lon)?;
        if !(cell_km.is_finite() && cell_km > 0.0) {
            return Err(Error::invalid(format!("cell_km must be positive, got {cell_km}")));
        }
        Ok(Self {
            ref_lat,
            ref_lon,
            cell_km,
        })
    }
}

pub const KM_PER_DEG_LAT: f64 = 110.574;
pub const KM_PER_DEG_LON_EQUATOR: f64 = 111.320;

/// Equirectangular projection relative to the grid anchor, returned as integer cell indices.
pub fn grid_cell(coord: Coord, cfg: &GridConfig) -> (i64, i64) {
    let km_per_deg_lon = KM_PER_DEG_LON_EQUATOR * cfg.ref_lat.to_radians().cos();
    let x = ((coord.lon - cfg.ref_lon) * km_per_deg_lon / cfg.cell_km).floor() as i64;
    let y = ((coord.lat - cfg.ref_lat) * KM_PER_DEG_LAT / cfg.cell_km).floor() as i64;
    (x, y)
}

pub fn map_to_grid(coord: Coord, cfg: &GridConfig) -> String {
    let (x, y) = grid_cell(coord, cfg);
    format!("{x}_{y}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SessionPolicy {
    /// A stay more than 72h after the first stay of the open session starts a new one.
    #[default]
    Window72h,
    /// A gap of more than 72h between consecutive stays starts a new session.
    Gap72h,
    /// One session per local calendar day.
    PerDay,
}

impl std::str::FromStr for SessionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window72h" => Ok(Self::Window72h),
            "gap72h" => Ok(Self::Gap72h),
            "per_day" => Ok(Self::PerDay),
            other => Err(Error::invalid(format!(
                "unknown session policy `{other}` (expected window72h, gap72h or per_day)"
            ))),
        }
    }
}

/// Column layout of a delimiter-separated check-in file. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckinSchema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub has_header: bool,
    pub user: usize,
    pub time: usize,
    #[serde(default)]
    pub location: Option<usize>,
    #[serde(default)]
    pub lat: Option<usize>,
    #[serde(default)]
    pub lon: Option<usize>,
    #[serde(default)]
    pub category: Option<usize>,
}

fn default_delimiter() -> char {
    '\t'
}

impl CheckinSchema {
    pub fn validate(&self, grid: Option<&GridConfig>) -> Result<()> {
        let has_coords = self.lat.is_some() && self.lon.is_some();
        if self.lat.is_some() != self.lon.is_some() {
            return Err(Error::invalid("schema must name both lat and lon columns or neither"));
        }
        if self.location.is_none() {
            if !has_coords {
                return Err(Error::invalid("schema names neither a location nor lat/lon columns"));
            }
            if grid.is_none() {
                return Err(Error::invalid("coordinate-only input requires a grid config"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub stays: Vec<Stay>,
    pub skipped: Vec<SkippedLine>,
}

/// Accepts epoch seconds (integer or decimal), RFC 3339, `YYYY-MM-DD HH:MM:SS`
/// (taken as UTC) and the Foursquare dump format `Tue Apr 03 18:00:09 +0000 2012`.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(i) = s.parse::<i64>() {
        return Some(i);
    }
    if let Ok(f) = s.parse::<f64>() {
        return f.is_finite().then(|| f.floor() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&naive).timestamp());
        }
    }
    DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y")
        .ok()
        .map(|dt| dt.timestamp())
}

pub fn parse_checkins<R: BufRead>(
    reader: R,
    schema: &CheckinSchema,
    grid: Option<&GridConfig>,
) -> Result<ParseOutcome> {
    schema.validate(grid)?;
    let mut out = ParseOutcome::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<check-in stream>", e))?;
        if idx == 0 && schema.has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, schema, grid) {
            Ok(stay) => out.stays.push(stay),
            Err(reason) => {
                log::warn!("skipping line {line_no}: {reason}");
                out.skipped.push(SkippedLine {
                    line: line_no,
                    reason,
                });
            }
        }
    }
    Ok(out)
}

fn parse_line(
    line: &str,
    schema: &CheckinSchema,
    grid: Option<&GridConfig>,
) -> std::result::Result<Stay, String> {
    let cols: Vec<&str> = line.split(schema.delimiter).collect();
    let col = |i: usize, name: &str| -> std::result::Result<&str, String> {
        cols.get(i)
            .map(|c| c.trim())
            .ok_or_else(|| format!("missing {name} column {i}"))
    };
    let user_id = col(schema.user, "user")?;
    if user_id.is_empty() {
        return Err("empty user id".into());
    }
    let raw_time = col(schema.time, "time")?;
    let timestamp = parse_timestamp(raw_time).ok_or_else(|| format!("malformed timestamp `{raw_time}`"))?;

    let coord = match (schema.lat, schema.lon) {
        (Some(lat_i), Some(lon_i)) => {
            let lat = col(lat_i, "lat")?;
            let lon = col(lon_i, "lon")?;
            if lat.is_empty() && lon.is_empty() {
                None
            } else {
                let lat: f64 = lat.parse().map_err(|_| format!("malformed latitude `{lat}`"))?;
                let lon: f64 = lon.parse().map_err(|_| format!("malformed longitude `{lon}`"))?;
                Some(Coord::new(lat, lon).map_err(|e| e.to_string())?)
            }
        }
        _ => None,
    };

    let location_id = match schema.location {
        Some(i) => col(i, "location")?.to_string(),
        None => match (coord, grid) {
            (Some(c), Some(g)) => map_to_grid(c, g),
            _ => return Err("no location id and no coordinates".into()),
        },
    };
    if location_id.is_empty() {
        return Err("empty location id".into());
    }
    let venue_category = match schema.category {
        Some(i) => cols
            .get(i)
            .map(|c| c.trim())
            .filter(|c| !c.is_empty())
            .map(str::to_string),
        None => None,
    };
    Ok(Stay {
        user_id: user_id.to_string(),
        timestamp,
        location_id,
        coord,
        venue_category,
    })
}

fn local_day(ts: i64, tz_offset_secs: i64) -> i64 {
    (ts + tz_offset_secs).div_euclid(86_400)
}

/// Splits one user's time-sorted stays into sessions.
pub fn sessionize(stays: &[Stay], policy: SessionPolicy, tz_offset_secs: i64) -> Vec<Session> {
    let mut sessions: Vec<Session> = Vec::new();
    let mut current: Vec<Stay> = Vec::new();
    for stay in stays {
        let starts_new = match current.first() {
            None => false,
            Some(anchor) => match policy {
                SessionPolicy::Window72h => stay.timestamp - anchor.timestamp > SESSION_WINDOW_SECS,
                SessionPolicy::Gap72h => {
                    let prev = current.last().map(|s| s.timestamp).unwrap_or(anchor.timestamp);
                    stay.timestamp - prev > SESSION_WINDOW_SECS
                }
                SessionPolicy::PerDay => {
                    local_day(stay.timestamp, tz_offset_secs)
                        != local_day(anchor.timestamp, tz_offset_secs)
                }
            },
        };
        if starts_new {
            let done = std::mem::take(&mut current);
            push_session(&mut sessions, done);
        }
        current.push(stay.clone());
    }
    if !current.is_empty() {
        push_session(&mut sessions, current);
    }
    sessions
}

fn push_session(sessions: &mut Vec<Session>, stays: Vec<Stay>) {
    let session_id = sessions.len() as u32;
    sessions.push(Session {
        user_id: stays[0].user_id.clone(),
        session_id,
        stays,
        split: None,
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub city: String,
    /// Offset of local time from UTC, used for calendar days and hour-of-day features.
    pub tz_offset_secs: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub users: BTreeMap<String, Vec<Session>>,
}

impl Corpus {
    /// Groups stays by user, orders them by time (stable) and sessionizes each user.
    pub fn build(
        city: impl Into<String>,
        stays: Vec<Stay>,
        policy: SessionPolicy,
        tz_offset_secs: i64,
        grid: Option<GridConfig>,
    ) -> Self {
        let mut per_user: BTreeMap<String, Vec<Stay>> = BTreeMap::new();
        for stay in stays {
            per_user.entry(stay.user_id.clone()).or_default().push(stay);
        }
        let users = per_user
            .into_iter()
            .map(|(user, mut stays)| {
                stays.sort_by_key(|s| s.timestamp);
                let sessions = sessionize(&stays, policy, tz_offset_secs);
                (user, sessions)
            })
            .collect();
        Self {
            city: city.into(),
            tz_offset_secs,
            grid,
            users,
        }
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn session_count(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    pub fn stay_count(&self) -> usize {
        self.sessions().map(|s| s.stays.len()).sum()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.users.values().flatten()
    }

    /// Sessions in global temporal order: by first-stay time, then user, then session id.
    pub fn sessions_in_time_order(&self) -> Vec<&Session> {
        let mut all: Vec<&Session> = self.sessions().collect();
        all.sort_by(|a, b| {
            a.start()
                .cmp(&b.start())
                .then_with(|| a.user_id.cmp(&b.user_id))
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        all
    }

    /// Short plain-text description used in generation prompts.
    pub fn stats_summary(&self) -> String {
        let mut locations = std::collections::BTreeSet::new();
        let mut with_category = 0usize;
        let mut with_coord = 0usize;
        for stay in self.sessions().flat_map(|s| &s.stays) {
            locations.insert(stay.location_id.as_str());
            with_category += stay.venue_category.is_some() as usize;
            with_coord += stay.coord.is_some() as usize;
        }
        let stays = self.stay_count();
        format!(
            "city: {}\nusers: {}\nsessions: {}\nstays: {}\ndistinct locations: {}\nstays with venue category: {}\nstays with coordinates: {}",
            self.city,
            self.user_count(),
            self.session_count(),
            stays,
            locations.len(),
            with_category,
            with_coord
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub dropped_sessions: usize,
    pub dropped_users: usize,
}

/// Drops sessions with fewer than 4 stays, then users left with fewer than 5 sessions.
pub fn filter_corpus(corpus: &Corpus) -> Result<(Corpus, FilterReport)> {
    let mut report = FilterReport::default();
    let mut users = BTreeMap::new();
    for (user, sessions) in &corpus.users {
        let kept: Vec<Session> = sessions
            .iter()
            .filter(|s| s.stays.len() >= MIN_SESSION_STAYS)
            .cloned()
            .collect();
        report.dropped_sessions += sessions.len() - kept.len();
        if kept.len() >= MIN_USER_SESSIONS {
            users.insert(user.clone(), kept);
        } else {
            report.dropped_sessions += kept.len();
            report.dropped_users += 1;
        }
    }
    if users.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    log::info!(
        "filter: dropped {} sessions and {} users",
        report.dropped_sessions,
        report.dropped_users
    );
    Ok((
        Corpus {
            users,
            ..corpus.clone()
        },
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        if [train, valid, test].iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::invalid(format!("split ratios must be positive, got {train}:{valid}:{test}")));
        }
        Ok(r)
    }

    /// Train/valid/test counts for `n` sessions: floor for train and valid, remainder to test.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let total = self.train + self.valid + self.test;
        // The epsilon absorbs representation error for exact multiples such as 7·10/10.
        let share = |w: f64| ((w * n as f64) / total + 1e-9).floor() as usize;
        let n_train = share(self.train).min(n);
        let n_valid = share(self.valid).min(n - n_train);
        (n_train, n_valid, n - n_train - n_valid)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Global temporal split: sessions ordered by first-stay time, tagged train, valid, test.
pub fn temporal_split(corpus: &Corpus, ratios: SplitRatios) -> Result<(Corpus, SplitCounts)> {
    let n = corpus.session_count();
    if n < 3 {
        return Err(Error::TooFewSessions(n));
    }
    let (n_train, n_valid, n_test) = ratios.counts(n);
    let order: Vec<(String, u32)> = corpus
        .sessions_in_time_order()
        .into_iter()
        .map(|s| (s.user_id.clone(), s.session_id))
        .collect();
    let mut tags: BTreeMap<(String, u32), Split> = BTreeMap::new();
    for (i, key) in order.into_iter().enumerate() {
        let tag = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        tags.insert(key, tag);
    }
    let mut out = corpus.clone();
    for sessions in out.users.values_mut() {
        for s in sessions.iter_mut() {
            s.split = tags.get(&(s.user_id.clone(), s.session_id)).copied();
        }
    }
    Ok((
        out,
        SplitCounts {
            train: n_train,
            valid: n_valid,
            test: n_test,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSample {
    pub sample_id: String,
    pub user_id: String,
    pub session_id: u32,
    /// The user's sessions that start before the current one.
    pub history: Vec<Session>,
    pub context: Vec<Stay>,
    pub target: Stay,
}

impl PredictionSample {
    pub fn from_session(corpus: &Corpus, session: &Session) -> Result<Self> {
        if session.stays.len() < 2 {
            return Err(Error::invalid(format!(
                "session {}/{} has fewer than 2 stays",
                session.user_id, session.session_id
            )));
        }
        let history = corpus
            .users
            .get(&session.user_id)
            .map(|all| {
                all.iter()
                    .filter(|s| s.start() < session.start() && s.session_id != session.session_id)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        let (target, context) = session.stays.split_last().expect("non-empty session");
        Ok(Self {
            sample_id: format!("{}/{}", session.user_id, session.session_id),
            user_id: session.user_id.clone(),
            session_id: session.session_id,
            history,
            context: context.to_vec(),
            target: target.clone(),
        })
    }

    /// History stays followed by context stays, in time order.
    pub fn observed_stays(&self) -> impl Iterator<Item = &Stay> {
        self.history.iter().flat_map(|s| &s.stays).chain(&self.context)
    }

    pub fn history_stays(&self) -> impl Iterator<Item = &Stay> {
        self.history.iter().flat_map(|s| &s.stays)
    }
}

/// Uniformly samples `min(n, available)` sessions of `split` without replacement.
/// The output is in global temporal order.
pub fn sample_sessions(corpus: &Corpus, split: Split, n: usize, seed: u64) -> Result<Vec<PredictionSample>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let candidates: Vec<&Session> = corpus
        .sessions_in_time_order()
        .into_iter()
        .filter(|s| s.split == Some(split))
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid(format!("no {split:?} sessions to sample")));
    }
    if n > candidates.len() {
        log::warn!(
            "requested {n} samples but only {} {split:?} sessions exist; using all",
            candidates.len()
        );
    }
    let k = n.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), k).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| PredictionSample::from_session(corpus, candidates[i]))
        .collect()
}

pub fn sample_test_set(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<PredictionSample>> {
    sample_sessions(corpus, Split::Test, n, seed)
}
