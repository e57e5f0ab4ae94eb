//! Prompt assembly and next-location prediction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::PredictionSample;
use crate::error::Result;
use crate::featpool::{
    count_ranked, format_local_time, ids, render_feature_block, token_count, FeatureBuilder, FeatureRegistry,
    FeatureValue, RenderedBlock,
};
use crate::llm::{extract_json_payload, ChatBackend, ChatMessage, ChatRequest, ExtractStrategy};

pub const MAX_RANKED: usize = 10;
pub const UNSEEN_TOKEN: &str = "unseen";
/// Marker present in every prediction system prompt; mock scripts route on it.
pub const PREDICTION_MARKER: &str = "Task: next-location prediction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    /// Predict among previously visited locations plus an `unseen` escape token.
    #[default]
    History,
    Open,
}

impl std::str::FromStr for CandidatePolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "history" => Ok(Self::History),
            "open" => Ok(Self::Open),
            other => Err(format!("unknown candidate policy `{other}` (expected history or open)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub model_id: String,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub total_budget: usize,
    pub feature_budget: usize,
    pub candidate_policy: CandidatePolicy,
    pub max_context_stays: usize,
    pub tz_offset_secs: i64,
}

/// Tokens kept free beyond the feature budget for instructions and one context stay.
pub const PROMPT_RESERVE: usize = 150;

impl PromptConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.feature_budget == 0 {
            return Err("feature_budget must be positive".into());
        }
        if self.total_budget < self.feature_budget + PROMPT_RESERVE {
            return Err(format!(
                "total_budget ({}) must be at least feature_budget + {PROMPT_RESERVE} ({})",
                self.total_budget,
                self.feature_budget + PROMPT_RESERVE
            ));
        }
        if self.max_context_stays == 0 {
            return Err("max_context_stays must be positive".into());
        }
        Ok(())
    }
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o-mini".into(),
            max_tokens: 512,
            seed: None,
            total_budget: 3000,
            feature_budget: 1500,
            candidate_policy: CandidatePolicy::History,
            max_context_stays: 20,
            tz_offset_secs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Fallback,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub sample_id: String,
    pub ranked: Vec<String>,
    pub reason: String,
    pub raw: String,
    pub parse_status: ParseStatus,
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub user_id: String,
    pub ranked: Vec<String>,
    pub truth: String,
    pub status: ParseStatus,
    pub reason: String,
}

fn system_prompt() -> String {
    format!(
        "{PREDICTION_MARKER}\n\
         You are a human-mobility analyst. Given a user's features and the stays of the current \
         trajectory, rank the locations the user is most likely to visit next.\n\
         Answer with JSON only, in exactly this form:\n\
         {{\"prediction\": [\"<location_id>\", ...], \"reason\": \"<one sentence>\"}}\n\
         List at most {MAX_RANKED} distinct location ids, most likely first."
    )
}

/// Location ids the user has been observed at, most frequent first.
pub fn candidate_universe(sample: &PredictionSample) -> Vec<String> {
    count_ranked(sample.observed_stays().map(|s| s.location_id.as_str()))
        .into_iter()
        .map(|(l, _)| l)
        .collect()
}

fn user_message(
    sample: &PredictionSample,
    features: &str,
    context_from: usize,
    candidates: Option<&[String]>,
    cfg: &PromptConfig,
) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "User features (most important first):\n{features}\n");
    let _ = writeln!(m, "Current trajectory (local time | location):");
    for s in &sample.context[context_from..] {
        let _ = writeln!(m, "{} | {}", format_local_time(s.timestamp, cfg.tz_offset_secs), s.location_id);
    }
    let _ = writeln!(
        m,
        "\nPredict the location visited at {}.",
        format_local_time(sample.target.timestamp, cfg.tz_offset_secs)
    );
    if let Some(c) = candidates {
        let mut list = c.join(", ");
        if !list.is_empty() {
            list.push_str(", ");
        }
        let _ = writeln!(m, "Candidate locations: {list}{UNSEEN_TOKEN}");
    }
    m
}

/// Builds the chat request. Under the history policy the candidate list is trimmed
/// (least frequent first), then the oldest context stays, until the prompt fits
/// `total_budget` whitespace tokens.
pub fn assemble_prompt(
    sample: &PredictionSample,
    block: &RenderedBlock,
    group_label: Option<&str>,
    cfg: &PromptConfig,
) -> ChatRequest {
    let mut features = block.text.clone();
    if let Some(label) = group_label {
        if !block.kept.iter().any(|k| k == ids::GROUP_LABEL) {
            if !features.is_empty() {
                features.push('\n');
            }
            let _ = write!(features, "{}: {label}", ids::GROUP_LABEL);
        }
    }
    let system = system_prompt();
    let mut candidates = match cfg.candidate_policy {
        CandidatePolicy::History => Some(candidate_universe(sample)),
        CandidatePolicy::Open => None,
    };
    let mut context_from = sample.context.len().saturating_sub(cfg.max_context_stays);
    loop {
        let user = user_message(sample, &features, context_from, candidates.as_deref(), cfg);
        let total = token_count(&system) + token_count(&user);
        let can_trim_candidates = candidates.as_ref().is_some_and(|c| !c.is_empty());
        if total <= cfg.total_budget || (!can_trim_candidates && context_from + 1 >= sample.context.len()) {
            if total > cfg.total_budget {
                log::warn!("prompt for {} uses {total} tokens, above the budget of {}", sample.sample_id, cfg.total_budget);
            }
            let mut req = ChatRequest::new(cfg.model_id.clone(), vec![ChatMessage::system(system), ChatMessage::user(user)]);
            req.max_tokens = cfg.max_tokens;
            req.seed = cfg.seed;
            return req;
        }
        if can_trim_candidates {
            let c = candidates.as_mut().expect("checked");
            let excess = total - cfg.total_budget;
            c.truncate(c.len().saturating_sub(excess.max(1)));
        } else {
            context_from += 1;
        }
    }
}

fn coerce_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Object(o) => o
            .get("location_id")
            .or_else(|| o.get("location"))
            .or_else(|| o.get("id"))
            .and_then(coerce_id),
        _ => None,
    }
}

/// Interprets model output. Strict JSON with a list of string ids is `Ok`; anything
/// recovered by lenient extraction or coercion is `Fallback`; the rest is `Failed`.
pub fn parse_prediction(sample_id: &str, raw: &str) -> RankedPrediction {
    let failed = || RankedPrediction {
        sample_id: sample_id.into(),
        ranked: vec![],
        reason: String::new(),
        raw: raw.into(),
        parse_status: ParseStatus::Failed,
    };
    let Ok(extracted) = extract_json_payload(raw) else {
        return failed();
    };
    let mut strict = extracted.strategy == ExtractStrategy::WholeText;
    let (list, reason) = match &extracted.value {
        Value::Object(obj) => {
            let reason = obj.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
            match obj.get("prediction") {
                Some(Value::Array(items)) => (items.clone(), reason),
                Some(single @ (Value::String(_) | Value::Number(_))) => {
                    strict = false;
                    (vec![single.clone()], reason)
                }
                _ => return failed(),
            }
        }
        Value::Array(items) => {
            strict = false;
            (items.clone(), String::new())
        }
        _ => return failed(),
    };
    let mut ranked: Vec<String> = Vec::new();
    for item in &list {
        if !item.is_string() {
            strict = false;
        }
        match coerce_id(item) {
            Some(id) if !id.is_empty() => {
                if ranked.contains(&id) {
                    continue;
                }
                ranked.push(id);
            }
            _ => strict = false,
        }
    }
    if ranked.is_empty() {
        return failed();
    }
    ranked.truncate(MAX_RANKED);
    RankedPrediction {
        sample_id: sample_id.into(),
        ranked,
        reason,
        raw: raw.into(),
        parse_status: if strict { ParseStatus::Ok } else { ParseStatus::Fallback },
    }
}

/// One completion; backend errors become a `Failed` prediction.
pub fn predict(sample: &PredictionSample, request: &ChatRequest, backend: &dyn ChatBackend) -> RankedPrediction {
    match backend.complete(request) {
        Ok(resp) => parse_prediction(&sample.sample_id, &resp.text),
        Err(e) => {
            log::warn!("prediction for {} failed: {e}", sample.sample_id);
            RankedPrediction {
                sample_id: sample.sample_id.clone(),
                ranked: vec![],
                reason: String::new(),
                raw: format!("backend error: {e}"),
                parse_status: ParseStatus::Failed,
            }
        }
    }
}

/// Selected feature ids and weights used for one user or group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub selected: Vec<String>,
    pub weights: BTreeMap<String, f64>,
    /// Rendered group label, injected into the prompt when grouping is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_label: Option<String>,
}

impl PlanEntry {
    pub fn new(selected: Vec<String>, weights: BTreeMap<String, f64>) -> Self {
        Self {
            selected,
            weights,
            group_label: None,
        }
    }
}

/// Which features each user's prompt uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeaturePlan {
    pub default: PlanEntry,
    pub groups: BTreeMap<String, PlanEntry>,
    pub user_groups: BTreeMap<String, String>,
}

impl FeaturePlan {
    pub fn single(selected: Vec<String>, weights: BTreeMap<String, f64>) -> Self {
        Self {
            default: PlanEntry::new(selected, weights),
            ..Self::default()
        }
    }

    pub fn entry_for(&self, user: &str) -> &PlanEntry {
        self.user_groups
            .get(user)
            .and_then(|g| self.groups.get(g))
            .unwrap_or(&self.default)
    }
}

/// Renders features and builds prompts for samples.
pub struct Predictor<'a> {
    pub builder: &'a FeatureBuilder,
    pub cfg: PromptConfig,
}

impl<'a> Predictor<'a> {
    pub fn new(builder: &'a FeatureBuilder, cfg: PromptConfig) -> Self {
        Self { builder, cfg }
    }

    pub fn feature_values(
        &self,
        sample: &PredictionSample,
        registry: &FeatureRegistry,
        selected: &[String],
    ) -> Vec<FeatureValue> {
        self.builder.compute(sample, registry, selected)
    }

    pub fn request(&self, sample: &PredictionSample, registry: &FeatureRegistry, entry: &PlanEntry) -> Result<ChatRequest> {
        let values = self.feature_values(sample, registry, &entry.selected);
        let block = render_feature_block(&values, &entry.weights, self.cfg.feature_budget)?;
        Ok(assemble_prompt(sample, &block, entry.group_label.as_deref(), &self.cfg))
    }

    pub fn predict(
        &self,
        sample: &PredictionSample,
        registry: &FeatureRegistry,
        entry: &PlanEntry,
        backend: &dyn ChatBackend,
    ) -> Result<RankedPrediction> {
        Ok(predict(sample, &self.request(sample, registry, entry)?, backend))
    }

    /// Predicts every sample; output order matches input order.
    pub fn predict_batch(
        &self,
        samples: &[PredictionSample],
        registry: &FeatureRegistry,
        plan: &FeaturePlan,
        backend: &dyn ChatBackend,
    ) -> Result<Vec<PredictionRecord>> {
        samples
            .par_iter()
            .map(|s| {
                let p = self.predict(s, registry, plan.entry_for(&s.user_id), backend)?;
                Ok(record_for(s, p))
            })
            .collect()
    }
}

pub fn record_for(sample: &PredictionSample, p: RankedPrediction) -> PredictionRecord {
    PredictionRecord {
        sample_id: sample.sample_id.clone(),
        user_id: sample.user_id.clone(),
        ranked: p.ranked,
        truth: sample.target.location_id.clone(),
        status: p.parse_status,
        reason: p.reason,
    }
}
