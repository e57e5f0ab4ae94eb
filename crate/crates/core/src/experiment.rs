//! Experiment configuration and the stage-by-stage pipeline over a run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    filter_corpus, parse_checkins, sample_test_set, temporal_split, CheckinSchema, Corpus, FilterReport, GridConfig,
    PredictionSample, SessionPolicy, SkippedLine, Split, SplitCounts, SplitRatios,
};
use crate::error::{Error, Result};
use crate::eval::{reference_rows_for, report, MetricsReport, RenderedReport};
use crate::featagent::{optimize, FeatureWeights, FsVariant, ObjectiveConfig, OptimizationArtifact, OptimizeConfig, OptimizeInput, WeightParams, WeightScope};
use crate::featpool::{FeatureBuilder, FeatureConfig, FeatureRegistry, FeatureValue, SocialGraph};
use crate::geo::{GeoCache, Geocoder, LiveGeoConfig};
use crate::http::{HttpTransport, UreqTransport};
use crate::llm::{
    save_fixture, load_fixture, ChatBackend, ChatRequest, ChatResponse, LiveBackend, LiveConfig, LlmError, MockBackend,
    RecordingBackend, ReplayBackend, TranscriptBackend, TranscriptEntry,
};
use crate::predictor::{CandidatePolicy, FeaturePlan, PredictionRecord, Predictor, PromptConfig};
use crate::profiler::{
    build_groups, is_partition, optimize_group, plan_from_groups, profile_users, representative_sample,
    user_feature_summary, user_profiles, GroupObjectiveConfig, GroupRun, GroupingStage, UserGroup, UserPersona,
};
use crate::rundir::{self, RunDir, RunMeta};
use crate::transfer::{
    direct_city_transfer, fuse_cities, model_transfer, user_transfer, FusionShare, TransferArtifact, TransferKind,
    TransferMetadata, TransferRun, UserTransferInput,
};

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseSection {
    /// Per-city experiment configs whose corpora are fused.
    pub configs: Vec<PathBuf>,
    pub total_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkins: Option<PathBuf>,
    #[serde(default)]
    pub tz_offset_secs: i64,
    #[serde(default = "default_policy")]
    pub session_policy: String,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Keep a seeded subset of this many users after filtering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_users: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_fixture: Option<PathBuf>,
    /// Nominatim-compatible service used when no fixture is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub social_edges: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<CheckinSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuse: Option<FuseSection>,
}

fn default_policy() -> String {
    "window72h".into()
}

fn default_split() -> [f64; 3] {
    [7.0, 1.0, 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub model_id: String,
    /// mock | replay | live | record
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_rules: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    pub max_tokens: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o-mini".into(),
            backend: "mock".into(),
            mock_rules: None,
            fixture: None,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub lambda: f64,
    pub iterations: usize,
    pub variant: String,
    pub k_max: usize,
    pub validation_samples: usize,
    pub probe_cap: usize,
    pub initial_weight: f64,
    pub eta: f64,
    pub w_max: f64,
    pub tau_high: f64,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        let o = ObjectiveConfig::default();
        let w = WeightParams::default();
        Self {
            lambda: o.lambda,
            iterations: 5,
            variant: FsVariant::Lnfw.as_str().into(),
            k_max: 12,
            validation_samples: o.validation_sample_count,
            probe_cap: o.probe_cap,
            initial_weight: w.initial,
            eta: w.eta,
            w_max: w.w_max,
            tau_high: w.tau_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupingSection {
    /// off | OL1 | L1L2 | L1L2M
    pub stage: String,
    pub alpha: f64,
    pub min_group_size: usize,
}

impl Default for GroupingSection {
    fn default() -> Self {
        let g = GroupObjectiveConfig::default();
        Self {
            stage: GroupingStage::Off.as_str().into(),
            alpha: g.alpha,
            min_group_size: g.min_group_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub test_samples: usize,
    /// history | open
    pub candidate_policy: String,
    pub total_budget: usize,
    pub feature_budget: usize,
    pub max_context_stays: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        let p = PromptConfig::default();
        Self {
            test_samples: 200,
            candidate_policy: "history".into(),
            total_budget: p.total_budget,
            feature_budget: p.feature_budget,
            max_context_stays: p.max_context_stays,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub replace_users: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student_model: Option<String>,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            replace_users: 0,
            student_model: None,
        }
    }
}

/// The key-value config file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub city: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub grouping: GroupingSection,
    #[serde(default)]
    pub predict: PredictSection,
    #[serde(default)]
    pub transfer: TransferSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendMode {
    Mock,
    Replay,
    Live,
    Record,
}

impl std::str::FromStr for BackendMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mock" => Ok(Self::Mock),
            "replay" => Ok(Self::Replay),
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            _ => Err(format!("unknown backend `{s}` (expected mock, replay, live or record)")),
        }
    }
}

/// Typed view of a validated config.
#[derive(Debug, Clone)]
pub struct Settings {
    pub policy: SessionPolicy,
    pub split: SplitRatios,
    pub backend: BackendMode,
    pub stage: GroupingStage,
    pub weights: WeightParams,
    pub opt: OptimizeConfig,
    pub group: GroupObjectiveConfig,
    pub prompt: PromptConfig,
    pub features: FeatureConfig,
}

/// Parses a `--set` value as a TOML scalar, falling back to a plain string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(vec![format!("{key}: `{p}` is not a table")]))?;
    }
    table.insert(last.to_string(), override_value(raw));
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Reads a config file, applies `key.path=value` overrides and resolves relative paths.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("{}: {}", path.display(), e.message())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [&mut d.checkins, &mut d.geo_fixture, &mut d.social_edges].into_iter().flatten() {
            resolve(base, p);
        }
        if let Some(f) = &mut d.fuse {
            for p in &mut f.configs {
                resolve(base, p);
            }
        }
        for p in [&mut self.model.mock_rules, &mut self.model.fixture].into_iter().flatten() {
            resolve(base, p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config serialization: {e}")))
    }

    /// Checks every field and collects all problems into one error.
    pub fn validate(&self) -> Result<Settings> {
        let mut errs: Vec<String> = Vec::new();
        let mut check = |field: &str, r: std::result::Result<(), String>| {
            if let Err(e) = r {
                errs.push(format!("{field}: {e}"));
            }
        };
        let exists = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(format!("path {} does not exist", p.display()))
            }
        };
        check("city", if self.city.trim().is_empty() { Err("must not be empty".into()) } else { Ok(()) });

        let d = &self.data;
        match (&d.checkins, &d.fuse) {
            (Some(p), None) => {
                check("data.checkins", exists(p));
                match &d.schema {
                    Some(s) => check("data.schema", s.validate(d.grid.as_ref()).map_err(|e| e.to_string())),
                    None => check("data.schema", Err("required with data.checkins".into())),
                }
            }
            (None, Some(f)) => {
                for p in &f.configs {
                    check("data.fuse.configs", exists(p));
                }
                check(
                    "data.fuse",
                    if f.configs.len() < 2 { Err("needs at least two city configs".into()) } else { Ok(()) },
                );
                check(
                    "data.fuse.total_users",
                    if f.total_users == 0 { Err("must be positive".into()) } else { Ok(()) },
                );
            }
            (Some(_), Some(_)) => check("data", Err("set either checkins or fuse, not both".into())),
            (None, None) => check("data", Err("one of checkins or fuse is required".into())),
        }
        if let Some(g) = &d.grid {
            check("data.grid", GridConfig::new(g.ref_lat, g.ref_lon, g.cell_km).map(|_| ()).map_err(|e| e.to_string()));
        }
        for (field, p) in [("data.geo_fixture", &d.geo_fixture), ("data.social_edges", &d.social_edges)] {
            if let Some(p) = p {
                check(field, exists(p));
            }
        }
        check(
            "data.tz_offset_secs",
            if d.tz_offset_secs.abs() <= 14 * 3600 { Ok(()) } else { Err("must lie within ±14h".into()) },
        );
        let policy = d.session_policy.parse::<SessionPolicy>().map_err(|e| e.to_string());
        check("data.session_policy", policy.as_ref().map(|_| ()).map_err(Clone::clone));
        let split = SplitRatios::new(d.split[0], d.split[1], d.split[2]).map_err(|e| e.to_string());
        check("data.split", split.as_ref().map(|_| ()).map_err(Clone::clone));
        if d.max_users == Some(0) {
            check("data.max_users", Err("must be positive".into()));
        }

        let m = &self.model;
        check("model.model_id", if m.model_id.trim().is_empty() { Err("must not be empty".into()) } else { Ok(()) });
        let backend = m.backend.parse::<BackendMode>();
        check("model.backend", backend.as_ref().map(|_| ()).map_err(Clone::clone));
        match backend {
            Ok(BackendMode::Mock) => match &m.mock_rules {
                Some(p) => check("model.mock_rules", exists(p)),
                None => check("model.mock_rules", Err("required for the mock backend".into())),
            },
            Ok(BackendMode::Replay) => match &m.fixture {
                Some(p) => check("model.fixture", exists(p)),
                None => check("model.fixture", Err("required for the replay backend".into())),
            },
            _ => {}
        }

        let o = &self.optimize;
        let objective = ObjectiveConfig {
            lambda: o.lambda,
            validation_sample_count: o.validation_samples,
            probe_cap: o.probe_cap,
        };
        check(&optimize_field(&objective.validate()), objective.validate());
        check("optimize.iterations", if o.iterations == 0 { Err("must be at least 1".into()) } else { Ok(()) });
        check("optimize.k_max", if o.k_max == 0 { Err("must be at least 1".into()) } else { Ok(()) });
        let variant = o.variant.parse::<FsVariant>();
        check("optimize.variant", variant.as_ref().map(|_| ()).map_err(Clone::clone));
        let weights = WeightParams {
            initial: o.initial_weight,
            eta: o.eta,
            w_max: o.w_max,
            tau_high: o.tau_high,
        };
        check(&optimize_field(&weights.validate()), weights.validate());

        let stage = self.grouping.stage.parse::<GroupingStage>();
        check("grouping.stage", stage.as_ref().map(|_| ()).map_err(Clone::clone));
        let group = GroupObjectiveConfig {
            alpha: self.grouping.alpha,
            min_group_size: self.grouping.min_group_size,
        };
        check("grouping", group.validate());

        let p = &self.predict;
        check("predict.test_samples", if p.test_samples == 0 { Err("must be positive".into()) } else { Ok(()) });
        let candidates = p.candidate_policy.parse::<CandidatePolicy>();
        check("predict.candidate_policy", candidates.as_ref().map(|_| ()).map_err(Clone::clone));
        let prompt = PromptConfig {
            model_id: m.model_id.clone(),
            max_tokens: m.max_tokens,
            seed: Some(self.seed),
            total_budget: p.total_budget,
            feature_budget: p.feature_budget,
            candidate_policy: candidates.clone().unwrap_or_default(),
            max_context_stays: p.max_context_stays,
            tz_offset_secs: d.tz_offset_secs,
        };
        check("predict", prompt.validate());

        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let variant = variant.expect("validated");
        Ok(Settings {
            policy: policy.expect("validated"),
            split: split.expect("validated"),
            backend: backend.expect("validated"),
            stage: stage.expect("validated"),
            weights,
            opt: OptimizeConfig {
                iterations: o.iterations,
                objective,
                variant,
                k_max: o.k_max,
                model_id: m.model_id.clone(),
                seed: self.seed,
            },
            group,
            prompt,
            features: FeatureConfig {
                tz_offset_secs: d.tz_offset_secs,
                ..FeatureConfig::default()
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub city: String,
    pub parsed_stays: usize,
    pub skipped_lines: usize,
    /// First few skipped lines with reasons.
    pub skipped_examples: Vec<SkippedLine>,
    pub filter: FilterReport,
    pub split: SplitCounts,
    pub users: usize,
    pub sessions: usize,
    pub valid_samples: usize,
    pub test_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<Vec<FusionShare>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleIds {
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureRow {
    sample_id: String,
    features: Vec<FeatureValue>,
}

/// Reads, sessionizes, filters and splits one city's check-ins.
pub fn build_corpus(cfg: &ExperimentConfig, settings: &Settings) -> Result<(Corpus, IngestReport)> {
    let d = &cfg.data;
    let path = d.checkins.as_ref().ok_or_else(|| Error::invalid("config has no check-in file"))?;
    let schema = d.schema.as_ref().ok_or_else(|| Error::invalid("config has no check-in schema"))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_checkins(BufReader::new(file), schema, d.grid.as_ref())?;
    if !parsed.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed lines", path.display(), parsed.skipped.len());
    }
    let n_stays = parsed.stays.len();
    let raw = Corpus::build(&cfg.city, parsed.stays, settings.policy, d.tz_offset_secs, d.grid);
    let (mut filtered, filter) = filter_corpus(&raw)?;
    if let Some(max) = d.max_users {
        if filtered.user_count() > max {
            let ids: Vec<String> = filtered.users.keys().cloned().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let keep: BTreeSet<String> = rand::seq::index::sample(&mut rng, ids.len(), max)
                .into_iter()
                .map(|i| ids[i].clone())
                .collect();
            filtered.users.retain(|u, _| keep.contains(u));
        }
    }
    let (corpus, split) = temporal_split(&filtered, settings.split)?;
    let report = IngestReport {
        city: cfg.city.clone(),
        parsed_stays: n_stays,
        skipped_lines: parsed.skipped.len(),
        skipped_examples: parsed.skipped.into_iter().take(10).collect(),
        filter,
        split,
        users: corpus.user_count(),
        sessions: corpus.session_count(),
        valid_samples: 0,
        test_samples: 0,
        fusion: None,
    };
    Ok((corpus, report))
}

/// Rebuilds samples from `user/session` ids.
pub fn samples_by_id(corpus: &Corpus, ids: &[String]) -> Result<Vec<PredictionSample>> {
    ids.iter()
        .map(|id| {
            let (user, session) = id
                .rsplit_once('/')
                .ok_or_else(|| Error::invalid(format!("malformed sample id `{id}`")))?;
            let sid: u32 = session
                .parse()
                .map_err(|_| Error::invalid(format!("malformed sample id `{id}`")))?;
            let s = corpus
                .users
                .get(user)
                .and_then(|ss| ss.iter().find(|s| s.session_id == sid))
                .ok_or_else(|| Error::invalid(format!("sample `{id}` is not in the corpus")))?;
            PredictionSample::from_session(corpus, s)
        })
        .collect()
}

/// Remembers the first exhaustion-type failure and fails fast afterwards, so a dead
/// endpoint or an incomplete fixture stops the run instead of degrading it silently.
struct ExhaustionGuard {
    inner: Arc<dyn ChatBackend>,
    tripped: Mutex<Option<String>>,
}

impl ExhaustionGuard {
    fn tripped(&self) -> Option<String> {
        self.tripped.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl ChatBackend for ExhaustionGuard {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, LlmError> {
        if let Some(msg) = self.tripped() {
            return Err(LlmError::Backend {
                status: None,
                retries: 0,
                message: format!("backend already exhausted: {msg}"),
            });
        }
        let r = self.inner.complete(request);
        if let Err(e @ (LlmError::Backend { .. } | LlmError::FixtureMiss(_) | LlmError::Config(_))) = &r {
            let mut slot = self.tripped.lock().unwrap_or_else(|p| p.into_inner());
            slot.get_or_insert_with(|| e.to_string());
        }
        r
    }
}

struct BackendStack {
    top: Arc<TranscriptBackend<Arc<dyn ChatBackend>>>,
    guard: Arc<ExhaustionGuard>,
    recorder: Option<Arc<RecordingBackend<Arc<dyn ChatBackend>>>>,
}

/// Summary of the optimize stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSummary {
    pub city_best_j: f64,
    pub city_best_iteration: usize,
    pub groups: usize,
    pub selected: Vec<String>,
}

/// One run directory driven by one config.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub settings: Settings,
    pub dir: RunDir,
    transport: Arc<dyn HttpTransport>,
    backend_override: Option<Arc<dyn ChatBackend>>,
    stack: OnceLock<BackendStack>,
}

impl Pipeline {
    /// Validates the config, creates the run directory and snapshots the config.
    pub fn open(cfg: ExperimentConfig, run_dir: impl Into<PathBuf>) -> Result<Self> {
        let settings = cfg.validate()?;
        let dir = RunDir::create(run_dir)?;
        dir.write_text(rundir::CONFIG, &cfg.to_toml()?)?;
        Ok(Self {
            cfg,
            settings,
            dir,
            transport: Arc::new(UreqTransport::new(Duration::from_secs(120))),
            backend_override: None,
            stack: OnceLock::new(),
        })
    }

    /// Re-opens a run directory from its config snapshot.
    pub fn reopen(run_dir: impl Into<PathBuf>, overrides: &[(String, String)]) -> Result<Self> {
        let dir = RunDir::new(run_dir);
        let path = dir.path(rundir::CONFIG);
        if !path.is_file() {
            return Err(Error::MissingStage {
                stage: "ingest",
                what: "config snapshot".into(),
                file: rundir::CONFIG.into(),
            });
        }
        let cfg = ExperimentConfig::load(&path, overrides)?;
        Self::open(cfg, dir.root().to_path_buf())
    }

    /// Replaces the HTTP transport used by live backends and the live geocoder.
    pub fn with_transport(mut self, transport: Arc<dyn HttpTransport>) -> Self {
        self.transport = transport;
        self
    }

    /// Uses `backend` instead of the one the config names.
    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend_override = Some(backend);
        self
    }

    fn meta(&self) -> RunMeta {
        RunMeta {
            city: self.cfg.city.clone(),
            model_id: self.cfg.model.model_id.clone(),
            seed: self.cfg.seed,
            lambda: self.cfg.optimize.lambda,
            iterations: self.settings.opt.iterations,
            variant: self.settings.opt.variant,
            grouping_stage: self.settings.stage,
            k_max: self.settings.opt.k_max,
        }
    }

    fn stack(&self) -> Result<&BackendStack> {
        if let Some(s) = self.stack.get() {
            return Ok(s);
        }
        let base: Arc<dyn ChatBackend> = match &self.backend_override {
            Some(b) => b.clone(),
            None => match self.settings.backend {
                BackendMode::Mock => Arc::new(MockBackend::from_file(self.cfg.model.mock_rules.as_ref().expect("validated"))?),
                BackendMode::Replay => Arc::new(ReplayBackend::from_file(self.cfg.model.fixture.as_ref().expect("validated"))?),
                BackendMode::Live | BackendMode::Record => {
                    Arc::new(LiveBackend::new(LiveConfig::from_env()?, self.transport.clone()))
                }
            },
        };
        let recorder = (self.settings.backend == BackendMode::Record && self.backend_override.is_none())
            .then(|| Arc::new(RecordingBackend::new(base.clone())));
        let inner: Arc<dyn ChatBackend> = match &recorder {
            Some(r) => r.clone(),
            None => base,
        };
        let guard = Arc::new(ExhaustionGuard {
            inner,
            tripped: Mutex::new(None),
        });
        let top = Arc::new(TranscriptBackend::new(guard.clone() as Arc<dyn ChatBackend>));
        let _ = self.stack.set(BackendStack { top, guard, recorder });
        Ok(self.stack.get().expect("just set"))
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>> {
        Ok(self.stack()?.top.clone())
    }

    /// Persists transcripts (and recorded fixtures), then reports exhaustion if it happened.
    fn flush_backend(&self) -> Result<()> {
        let Some(stack) = self.stack.get() else {
            return Ok(());
        };
        let mut entries: Vec<TranscriptEntry> = if self.dir.has(rundir::TRANSCRIPTS) {
            self.dir.read_lines(rundir::TRANSCRIPTS, "transcripts", "predict")?
        } else {
            vec![]
        };
        entries.extend(stack.top.entries());
        entries.sort_by(|a, b| a.request_hash.cmp(&b.request_hash).then_with(|| a.response.cmp(&b.response)));
        entries.dedup();
        self.dir.write_lines(rundir::TRANSCRIPTS, &entries)?;
        if let Some(rec) = &stack.recorder {
            let path = self.dir.path(rundir::FIXTURES);
            let mut all = if path.is_file() { load_fixture(&path)? } else { BTreeMap::new() };
            all.extend(rec.records());
            save_fixture(&path, &all)?;
        }
        match stack.guard.tripped() {
            Some(msg) => Err(Error::BackendExhausted(msg)),
            None => Ok(()),
        }
    }

    /// Runs a backend-using stage body, then always flushes transcripts.
    fn with_flush<T>(&self, body: impl FnOnce() -> Result<T>) -> Result<T> {
        let out = body();
        let flushed = self.flush_backend();
        match (out, flushed) {
            (_, Err(e @ Error::BackendExhausted(_))) => Err(e),
            (Err(e), _) => Err(e),
            (Ok(_), Err(e)) => Err(e),
            (Ok(v), Ok(())) => Ok(v),
        }
    }

    fn geocoder(&self) -> Result<Geocoder> {
        let d = &self.cfg.data;
        if let Some(p) = &d.geo_fixture {
            return Geocoder::fixture_file(p);
        }
        if let Some(url) = &d.geo_base_url {
            let cache_path = self.dir.path(rundir::GEO_CACHE);
            let cache = if cache_path.is_file() { GeoCache::load(&cache_path)? } else { GeoCache::new() };
            return Ok(Geocoder::live(LiveGeoConfig::new(url.clone()), self.transport.clone(), cache));
        }
        log::warn!("no geocoding source configured; spatial features render as unknown");
        Ok(Geocoder::empty())
    }

    fn save_geo(&self, geo: &Geocoder) -> Result<()> {
        if self.cfg.data.geo_fixture.is_none() && self.cfg.data.geo_base_url.is_some() {
            geo.cache().save(&self.dir.path(rundir::GEO_CACHE))?;
        }
        Ok(())
    }

    fn load_corpus(&self) -> Result<Corpus> {
        self.dir.read(rundir::CORPUS, "corpus", "ingest")
    }

    fn load_ids(&self) -> Result<SampleIds> {
        self.dir.read(rundir::SAMPLES, "sample ids", "ingest")
    }

    fn builder(&self, corpus: &Corpus) -> Result<FeatureBuilder> {
        let mut social: SocialGraph = self.dir.read(rundir::SOCIAL, "social graph", "ingest")?;
        social.attach_top_locations(corpus, self.settings.features.neighbor_top);
        Ok(FeatureBuilder::new(
            self.settings.features.clone(),
            Arc::new(self.geocoder()?),
            Arc::new(social),
        ))
    }

    fn load_social(&self, prefix: Option<&str>, cfg: &ExperimentConfig) -> Result<SocialGraph> {
        let own = match &cfg.data.social_edges {
            Some(p) => SocialGraph::from_file(p)?,
            None => SocialGraph::new(),
        };
        Ok(match prefix {
            None => own,
            Some(city) => {
                let mut g = SocialGraph::new();
                g.extend_namespaced(&own, city);
                g
            }
        })
    }

    /// Parses (or fuses) the corpus and writes corpus, sample ids and social graph.
    pub fn ingest(&self) -> Result<IngestReport> {
        let (corpus, mut report, social) = match &self.cfg.data.fuse {
            None => {
                let (c, r) = build_corpus(&self.cfg, &self.settings)?;
                (c, r, self.load_social(None, &self.cfg)?)
            }
            Some(f) => {
                let mut corpora = Vec::new();
                let mut social = SocialGraph::new();
                for p in &f.configs {
                    let city_cfg = ExperimentConfig::load(p, &[])?;
                    let city_settings = city_cfg.validate()?;
                    corpora.push(build_corpus(&city_cfg, &city_settings)?.0);
                    social.extend_namespaced(&self.load_social(None, &city_cfg)?, &city_cfg.city);
                }
                let (mut fused, shares) = fuse_cities(&corpora, f.total_users, self.cfg.seed)?;
                fused.city = self.cfg.city.clone();
                let report = IngestReport {
                    city: fused.city.clone(),
                    parsed_stays: fused.stay_count(),
                    skipped_lines: 0,
                    skipped_examples: vec![],
                    filter: FilterReport::default(),
                    split: SplitCounts::default(),
                    users: fused.user_count(),
                    sessions: fused.session_count(),
                    valid_samples: 0,
                    test_samples: 0,
                    fusion: Some(shares),
                };
                (fused, report, social)
            }
        };
        let valid: Vec<String> = corpus
            .sessions_in_time_order()
            .into_iter()
            .filter(|s| s.split == Some(Split::Valid))
            .map(|s| format!("{}/{}", s.user_id, s.session_id))
            .collect();
        let test: Vec<String> = sample_test_set(&corpus, self.cfg.predict.test_samples, self.cfg.seed)?
            .into_iter()
            .map(|s| s.sample_id)
            .collect();
        report.valid_samples = valid.len();
        report.test_samples = test.len();
        if report.fusion.is_some() {
            let mut counts = SplitCounts::default();
            for s in corpus.sessions() {
                match s.split {
                    Some(Split::Train) => counts.train += 1,
                    Some(Split::Valid) => counts.valid += 1,
                    Some(Split::Test) => counts.test += 1,
                    None => {}
                }
            }
            report.split = counts;
        }
        self.dir.write(rundir::CORPUS, &corpus)?;
        self.dir.write(rundir::SAMPLES, &SampleIds { valid, test })?;
        self.dir.write(rundir::SOCIAL, &social)?;
        self.dir.write(rundir::INGEST_REPORT, &report)?;
        self.dir.write(rundir::RUN_META, &self.meta())?;
        Ok(report)
    }

    /// Writes the standard registry and every test sample's standard feature values.
    pub fn features(&self) -> Result<usize> {
        let corpus = self.load_corpus()?;
        let ids = self.load_ids()?;
        let test = samples_by_id(&corpus, &ids.test)?;
        let registry = FeatureRegistry::standard();
        let builder = self.builder(&corpus)?;
        let std_ids = registry.standard_ids();
        let rows: Vec<FeatureRow> = test
            .iter()
            .map(|s| FeatureRow {
                sample_id: s.sample_id.clone(),
                features: builder.compute(s, &registry, &std_ids),
            })
            .collect();
        self.save_geo(&builder.geo)?;
        self.dir.write(rundir::BASE_REGISTRY, &registry)?;
        self.dir.write_lines(rundir::FEATURES, &rows)?;
        Ok(rows.len())
    }

    /// City-level optimization, then (when enabled) profiling, grouping and per-group runs.
    pub fn optimize(&self) -> Result<OptimizeSummary> {
        let corpus = self.load_corpus()?;
        let ids = self.load_ids()?;
        let valid = samples_by_id(&corpus, &ids.valid)?;
        let mut registry: FeatureRegistry = self.dir.read(rundir::BASE_REGISTRY, "feature registry", "features")?;
        let backend = self.backend()?;
        let builder = self.builder(&corpus)?;
        let stats = corpus.stats_summary();
        let opt = &self.settings.opt;
        self.dir.write(rundir::RUN_META, &self.meta())?;

        self.with_flush(|| {
            let predictor = Predictor::new(&builder, self.settings.prompt.clone());
            let input = OptimizeInput {
                city: &self.cfg.city,
                validation: &valid,
                corpus_stats: &stats,
                predictor: &predictor,
            };
            let weights = FeatureWeights::new(&registry, self.settings.weights);
            let city_run = optimize(&input, &mut registry, weights, &WeightScope::Global, opt, backend.as_ref())?;
            self.dir.write(rundir::OPTIMIZATION, &city_run)?;
            let fallback = city_run.plan_entry();
            let mut weights = city_run.final_weights.clone();
            let mut plan = FeaturePlan {
                default: fallback.clone(),
                ..FeaturePlan::default()
            };
            let mut n_groups = 0;

            if self.settings.stage == GroupingStage::Off {
                for f in [rundir::GROUPS, rundir::PERSONAS, rundir::GROUP_OPTIMIZATION] {
                    self.dir.remove(f)?;
                }
            } else {
                let mut summaries = BTreeMap::new();
                for user in corpus.users.keys() {
                    match representative_sample(&corpus, user) {
                        Some(s) => {
                            summaries.insert(user.clone(), user_feature_summary(&builder, &registry, &s)?);
                        }
                        None => log::warn!("user {user} has no non-test session to profile"),
                    }
                }
                let personas = profile_users(&summaries, self.settings.stage, backend.as_ref(), &opt.model_id);
                self.dir.write(rundir::PERSONAS, &personas)?;
                let groups = build_groups(&personas, self.settings.stage, &self.settings.group, backend.as_ref(), &opt.model_id);
                let users: BTreeSet<String> = personas.keys().cloned().collect();
                if !is_partition(&groups, &users) {
                    return Err(Error::invalid("grouping did not produce a partition of the users"));
                }
                self.dir.write(rundir::GROUPS, &groups)?;

                let mut grouped = builder.clone();
                grouped.profiles = user_profiles(&groups, &personas);
                let gpredictor = Predictor::new(&grouped, self.settings.prompt.clone());
                let mut runs = Vec::with_capacity(groups.len());
                for g in &groups {
                    let (artifact, w) = optimize_group(
                        g,
                        users.len(),
                        &self.cfg.city,
                        &valid,
                        &stats,
                        &gpredictor,
                        &mut registry,
                        weights,
                        &self.settings.group,
                        opt,
                        true,
                        backend.as_ref(),
                    )?;
                    weights = w;
                    runs.push(GroupRun {
                        group_id: g.group_id.clone(),
                        artifact,
                    });
                    self.dir.write(rundir::GROUP_OPTIMIZATION, &runs)?;
                }
                plan = plan_from_groups(&groups, &runs, &fallback);
                n_groups = groups.len();
            }
            self.dir.write(rundir::REGISTRY, &registry)?;
            self.dir.write(rundir::WEIGHTS, &weights)?;
            self.dir.write(rundir::PLAN, &plan)?;
            self.save_geo(&builder.geo)?;
            Ok(OptimizeSummary {
                city_best_j: city_run.best_j,
                city_best_iteration: city_run.best_iteration,
                groups: n_groups,
                selected: fallback.selected,
            })
        })
    }

    fn grouped_builder(&self, corpus: &Corpus) -> Result<FeatureBuilder> {
        let mut builder = self.builder(corpus)?;
        if self.dir.has(rundir::GROUPS) && self.dir.has(rundir::PERSONAS) {
            let groups: Vec<UserGroup> = self.dir.read(rundir::GROUPS, "groups", "optimize")?;
            let personas: BTreeMap<String, UserPersona> = self.dir.read(rundir::PERSONAS, "personas", "optimize")?;
            builder.profiles = user_profiles(&groups, &personas);
        }
        Ok(builder)
    }

    /// Predicts every test sample with the optimized plan.
    pub fn predict(&self) -> Result<usize> {
        let corpus = self.load_corpus()?;
        let ids = self.load_ids()?;
        let test = samples_by_id(&corpus, &ids.test)?;
        let registry: FeatureRegistry = self.dir.read(rundir::REGISTRY, "optimized feature registry", "optimize")?;
        let plan: FeaturePlan = self.dir.read(rundir::PLAN, "feature plan", "optimize")?;
        let builder = self.grouped_builder(&corpus)?;
        let backend = self.backend()?;
        self.with_flush(|| {
            let predictor = Predictor::new(&builder, self.settings.prompt.clone());
            let records = predictor.predict_batch(&test, &registry, &plan, backend.as_ref())?;
            self.dir.write_lines(rundir::PREDICTIONS, &records)?;
            self.save_geo(&builder.geo)?;
            Ok(records.len())
        })
    }

    pub fn eval(&self) -> Result<MetricsReport> {
        let records: Vec<PredictionRecord> = self.dir.read_lines(rundir::PREDICTIONS, "predictions", "predict")?;
        let metrics = MetricsReport::compute(&records)?;
        self.dir.write(rundir::METRICS, &metrics)?;
        Ok(metrics)
    }

    fn label(&self) -> String {
        format!("{}/{}", self.cfg.model.model_id, self.cfg.city)
    }

    pub fn report(&self) -> Result<RenderedReport> {
        let metrics: MetricsReport = self.dir.read(rundir::METRICS, "metrics", "eval")?;
        let rendered = report(&[(self.label(), metrics)], &reference_rows_for(&self.cfg.city));
        self.dir.write_text(rundir::REPORT_TXT, &rendered.table)?;
        self.dir.write_text(rundir::REPORT_TSV, &rendered.tsv)?;
        Ok(rendered)
    }

    /// ingest → features → optimize (with grouping) → predict → eval → report.
    pub fn run(&self) -> Result<MetricsReport> {
        self.ingest()?;
        self.features()?;
        self.optimize()?;
        self.predict()?;
        let metrics = self.eval()?;
        self.report()?;
        Ok(metrics)
    }

    fn ensure_ingested(&self) -> Result<()> {
        if !self.dir.has(rundir::CORPUS) || !self.dir.has(rundir::SAMPLES) || !self.dir.has(rundir::SOCIAL) {
            self.ingest()?;
        }
        Ok(())
    }

    fn finish_transfer(&self, run: &TransferRun, artifact: &TransferArtifact) -> Result<()> {
        self.dir.write_lines(rundir::PREDICTIONS, &run.records)?;
        self.dir.write(rundir::METRICS, &run.metrics)?;
        self.dir.write(
            rundir::TRANSFER,
            &serde_json::json!({
                "metadata": run.metadata,
                "unavailable_features": run.unavailable_features,
            }),
        )?;
        artifact.save(&self.dir.path(rundir::SOURCE_ARTIFACT))?;
        self.report()?;
        Ok(())
    }

    /// Runs the artifact's city-level feature set on this config's city.
    pub fn transfer_city(&self, artifact: &TransferArtifact) -> Result<TransferRun> {
        self.ensure_ingested()?;
        let corpus = self.load_corpus()?;
        let test = samples_by_id(&corpus, &self.load_ids()?.test)?;
        let builder = self.builder(&corpus)?;
        let backend = self.backend()?;
        let run = self.with_flush(|| {
            let predictor = Predictor::new(&builder, self.settings.prompt.clone());
            direct_city_transfer(artifact, &self.cfg.city, &test, &predictor, backend.as_ref())
        })?;
        self.finish_transfer(&run, artifact)?;
        Ok(run)
    }

    /// Prediction only under `student`, reusing the artifact's groups and weights.
    pub fn transfer_model(&self, artifact: &TransferArtifact, student: &str) -> Result<TransferRun> {
        self.ensure_ingested()?;
        let corpus = self.load_corpus()?;
        let test = samples_by_id(&corpus, &self.load_ids()?.test)?;
        let mut builder = self.builder(&corpus)?;
        builder.profiles = artifact.profiles();
        let backend = self.backend()?;
        let run = self.with_flush(|| {
            let predictor = Predictor::new(&builder, self.settings.prompt.clone());
            model_transfer(artifact, student, &test, &predictor, backend.as_ref())
        })?;
        let mut run = run;
        if !artifact.source_cities.contains(&self.cfg.city) {
            log::warn!(
                "model transfer evaluated on {}, not on the artifact's city ({})",
                self.cfg.city,
                artifact.source_cities.join("+")
            );
            run.metadata.target_city = self.cfg.city.clone();
        }
        self.finish_transfer(&run, artifact)?;
        Ok(run)
    }

    /// Replaces `replace_n` artifact users with held-out users of this config's corpus,
    /// optimizes only the newcomers, and evaluates on the resulting user set.
    pub fn transfer_users(&self, artifact: &TransferArtifact, replace_n: usize) -> Result<TransferRun> {
        self.ensure_ingested()?;
        let corpus = self.load_corpus()?;
        let ids = self.load_ids()?;
        let valid = samples_by_id(&corpus, &ids.valid)?;
        let builder = self.builder(&corpus)?;
        let backend = self.backend()?;
        let run = self.with_flush(|| {
            let predictor = Predictor::new(&builder, self.settings.prompt.clone());
            let input = UserTransferInput {
                corpus: &corpus,
                validation: &valid,
                predictor: &predictor,
                opt: self.settings.opt.clone(),
                group_cfg: self.settings.group,
            };
            let outcome = user_transfer(&input, artifact, replace_n, self.cfg.seed, backend.as_ref())?;
            self.dir.write(rundir::USER_TRANSFER, &outcome)?;
            self.dir.write(rundir::PLAN, &outcome.plan)?;
            self.dir.write(rundir::WEIGHTS, &outcome.weights)?;
            self.dir.write(rundir::REGISTRY, &outcome.registry)?;
            self.dir.write(rundir::GROUPS, &outcome.groups)?;
            self.dir.write(rundir::PERSONAS, &outcome.personas)?;

            let users: BTreeSet<&String> = outcome.users.iter().collect();
            let test: Vec<PredictionSample> = samples_by_id(&corpus, &ids.test)?
                .into_iter()
                .filter(|s| users.contains(&s.user_id))
                .collect();
            if test.is_empty() {
                return Err(Error::invalid("no test samples belong to the transferred user set"));
            }
            let mut grouped = builder.clone();
            grouped.profiles = user_profiles(&outcome.groups, &outcome.personas);
            let predictor = Predictor::new(&grouped, self.settings.prompt.clone());
            let records = predictor.predict_batch(&test, &outcome.registry, &outcome.plan, backend.as_ref())?;
            let metrics = MetricsReport::compute(&records)?;
            Ok(TransferRun {
                metadata: TransferMetadata {
                    kind: TransferKind::Users,
                    source_cities: artifact.source_cities.clone(),
                    target_city: self.cfg.city.clone(),
                    teacher: artifact.source_model_id.clone(),
                    student: self.cfg.model.model_id.clone(),
                },
                unavailable_features: vec![],
                records,
                metrics,
            })
        })?;
        self.finish_transfer(&run, artifact)?;
        Ok(run)
    }

    pub fn load_optimization(&self) -> Result<OptimizationArtifact> {
        self.dir.read(rundir::OPTIMIZATION, "optimization artifact", "optimize")
    }
}

/// Names the `[optimize]` key a shared validator message refers to.
fn optimize_field(r: &std::result::Result<(), String>) -> String {
    let key = match r.as_ref().err().and_then(|m| m.split_whitespace().next()) {
        Some("lambda") => "lambda",
        Some("initial") => "initial_weight",
        Some("validation_sample_count") => "validation_samples",
        Some(k @ ("probe_cap" | "eta" | "w_max" | "tau_high")) => k,
        _ => return "optimize".into(),
    };
    format!("optimize.{key}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// 3, 5 and 10 optimization rounds.
    Iterations,
    /// off, OL1, L1L2, L1L2M.
    Grouping,
    /// FS-OL, FS-LNF, FS-LNFW.
    Variant,
}

impl std::str::FromStr for Sweep {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "iterations" => Ok(Self::Iterations),
            "grouping" => Ok(Self::Grouping),
            "variant" => Ok(Self::Variant),
            _ => Err(format!("unknown sweep `{s}` (expected iterations, grouping or variant)")),
        }
    }
}

pub fn ablation_configs(base: &ExperimentConfig, sweep: Sweep) -> Vec<(String, ExperimentConfig)> {
    let with = |name: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (name, c)
    };
    match sweep {
        Sweep::Iterations => [3usize, 5, 10]
            .iter()
            .map(|&n| with(format!("FT+{n}"), &|c| c.optimize.iterations = n))
            .collect(),
        Sweep::Grouping => [GroupingStage::Off, GroupingStage::Ol1, GroupingStage::L1l2, GroupingStage::L1l2m]
            .iter()
            .map(|s| with(s.as_str().to_string(), &|c| c.grouping.stage = s.as_str().into()))
            .collect(),
        Sweep::Variant => [FsVariant::Ol, FsVariant::Lnf, FsVariant::Lnfw]
            .iter()
            .map(|v| with(v.as_str().to_string(), &|c| c.optimize.variant = v.as_str().into()))
            .collect(),
    }
}

/// Runs each configuration of the sweep in `out/<name>` and writes a combined report.
pub fn run_ablation(
    base: &ExperimentConfig,
    sweep: Sweep,
    out: &Path,
    backend: Option<Arc<dyn ChatBackend>>,
) -> Result<Vec<(String, MetricsReport)>> {
    let mut results = Vec::new();
    for (name, cfg) in ablation_configs(base, sweep) {
        let mut p = Pipeline::open(cfg, out.join(&name))?;
        if let Some(b) = &backend {
            p = p.with_backend(b.clone());
        }
        let m = p.run()?;
        results.push((format!("{name}/{}", base.city), m));
    }
    let rendered = report(&results, &reference_rows_for(&base.city));
    let dir = RunDir::create(out)?;
    dir.write_text("ablation.txt", &rendered.table)?;
    dir.write_text("ablation.tsv", &rendered.tsv)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_scalars_and_strings() {
        let mut t: toml::Table = toml::from_str("city = \"a\"\n[optimize]\niterations = 5\n").unwrap();
        apply_override(&mut t, "optimize.iterations", "3").unwrap();
        apply_override(&mut t, "grouping.stage", "L1L2M").unwrap();
        apply_override(&mut t, "optimize.lambda", "0.25").unwrap();
        assert_eq!(t["optimize"]["iterations"].as_integer(), Some(3));
        assert_eq!(t["optimize"]["lambda"].as_float(), Some(0.25));
        assert_eq!(t["grouping"]["stage"].as_str(), Some("L1L2M"));
        assert!(apply_override(&mut t, "city.x", "1").is_err());
    }

    #[test]
    fn validation_lists_every_bad_field() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            city = "x"
            [data]
            checkins = "/definitely/missing.tsv"
            session_policy = "hourly"
            [data.schema]
            user = 0
            time = 1
            location = 2
            [model]
            model_id = "m"
            backend = "carrier-pigeon"
            max_tokens = 10
            [optimize]
            lambda = 1.5
            variant = "FS-XX"
            [grouping]
            stage = "L3"
            "#,
        )
        .unwrap();
        let Err(Error::Config(errs)) = cfg.validate() else {
            panic!("expected a config error");
        };
        let joined = errs.join("\n");
        for field in ["data.checkins", "data.session_policy", "model.backend", "optimize.lambda", "optimize.variant", "grouping.stage"] {
            assert!(joined.contains(field), "missing {field} in:\n{joined}");
        }
    }

    #[test]
    fn ablation_grid_names() {
        let cfg: ExperimentConfig = toml::from_str("city = \"x\"\n[data]\n").unwrap();
        let names: Vec<String> = ablation_configs(&cfg, Sweep::Iterations).into_iter().map(|p| p.0).collect();
        assert_eq!(names, ["FT+3", "FT+5", "FT+10"]);
        let iters: Vec<usize> = ablation_configs(&cfg, Sweep::Iterations).iter().map(|p| p.1.optimize.iterations).collect();
        assert_eq!(iters, [3, 5, 10]);
        assert_eq!(ablation_configs(&cfg, Sweep::Grouping).len(), 4);
        assert_eq!(ablation_configs(&cfg, Sweep::Variant)[0].1.optimize.variant, "FS-OL");
    }
}
