use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde_json::Value;

use super::FeatureSet;
use crate::featpool::{ids, FeatureRegistry, Origin};
use crate::llm::{extract_json_payload, ChatBackend, ChatMessage, ChatRequest};

pub const SELECTION_MARKER: &str = "Task: feature selection";
/// Always selected: trajectory timestamps and historical visit frequency.
pub const MANDATORY_CORE: [&str; 2] = [ids::TRAJ_TIMES, ids::VISIT_FREQUENCY];

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub k_max: usize,
    pub tau_high: f64,
    pub use_high_weight: bool,
    /// Newly generated ids that join the candidate union.
    pub generated: Vec<String>,
    pub group_label: bool,
    pub model_id: String,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k_max: 12,
            tau_high: 0.7,
            use_high_weight: true,
            generated: vec![],
            group_label: false,
            model_id: "gpt-4o-mini".into(),
        }
    }
}

fn prompt(registry: &FeatureRegistry, weights: &BTreeMap<String, f64>, k_max: usize) -> (String, String) {
    let system = format!(
        "{SELECTION_MARKER}\n\
         Choose the features that best help predict a user's next location. \
         Pick at most {k_max}. Answer with JSON: {{\"selected\": [\"<feature_id>\", ...]}}"
    );
    let mut user = String::from("Available features (id [pool] description, current weight):\n");
    for d in registry.descriptors() {
        let w = weights.get(&d.feature_id).copied().unwrap_or(0.0);
        let _ = writeln!(user, "- {} [{:?}] {} (weight {w:.3})", d.feature_id, d.pool, d.subcategory);
    }
    (system, user)
}

fn parse_picks(text: &str, registry: &FeatureRegistry) -> Option<Vec<String>> {
    let value = extract_json_payload(text).ok()?.value;
    let list = match value {
        Value::Array(items) => items,
        Value::Object(mut obj) => match obj.remove("selected").or_else(|| obj.remove("features")) {
            Some(Value::Array(items)) => items,
            _ => return None,
        },
        _ => return None,
    };
    let picks: Vec<String> = list
        .iter()
        .filter_map(Value::as_str)
        .map(str::trim)
        .filter(|id| {
            let known = registry.contains(id);
            if !known {
                log::debug!("selection reply names unknown feature `{id}`");
            }
            known
        })
        .map(str::to_string)
        .collect();
    Some(picks)
}

/// Union of agent picks, high-weight features, the mandatory core, newly generated
/// features and (when enabled) the group label, ordered by descending weight with
/// ties by id and truncated to `k_max`. An unusable reply falls back to the top
/// `k_max` registered features by the same order.
pub fn select_features(
    registry: &FeatureRegistry,
    weights: &BTreeMap<String, f64>,
    backend: &dyn ChatBackend,
    cfg: &SelectionConfig,
) -> FeatureSet {
    let w = |id: &str| weights.get(id).copied().unwrap_or(0.0);
    let order = |v: &mut Vec<String>| {
        v.sort_by(|a, b| w(b).total_cmp(&w(a)).then_with(|| a.cmp(b)));
    };

    let (system, user) = prompt(registry, weights, cfg.k_max);
    let request = ChatRequest::new(cfg.model_id.clone(), vec![ChatMessage::system(system), ChatMessage::user(user)]);
    let picks = match backend.complete(&request) {
        Ok(r) => parse_picks(&r.text, registry),
        Err(e) => {
            log::warn!("feature selection request failed: {e}");
            None
        }
    };

    let high_weight: Vec<String> = if cfg.use_high_weight {
        registry
            .ids()
            .filter(|id| w(id) >= cfg.tau_high)
            .map(str::to_string)
            .collect()
    } else {
        vec![]
    };
    let group_label_feature = (cfg.group_label && registry.contains(ids::GROUP_LABEL)).then(|| ids::GROUP_LABEL.to_string());
    let std_ids = registry.standard_ids();
    let generated: Vec<String> = cfg.generated.iter().filter(|id| registry.contains(id)).cloned().collect();

    let fallback = picks.is_none();
    let mut selected: Vec<String> = match &picks {
        Some(p) => {
            let mut union: BTreeSet<String> = p.iter().cloned().collect();
            union.extend(high_weight.iter().cloned());
            union.extend(MANDATORY_CORE.iter().filter(|id| registry.contains(id)).map(|s| s.to_string()));
            union.extend(generated.iter().cloned());
            union.extend(group_label_feature.iter().cloned());
            union.into_iter().collect()
        }
        None => {
            log::warn!("feature selection reply unusable; falling back to top-{} by weight", cfg.k_max);
            registry
                .descriptors()
                .iter()
                .filter(|d| d.origin != Origin::GroupLabel || group_label_feature.is_some())
                .map(|d| d.feature_id.clone())
                .collect()
        }
    };
    order(&mut selected);
    selected.truncate(cfg.k_max);

    FeatureSet {
        std: std_ids,
        generated,
        high_weight,
        agent_picks: picks.unwrap_or_default(),
        group_label_feature,
        selected,
        fallback,
    }
}
