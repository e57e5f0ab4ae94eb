use serde_json::Value;

use crate::featpool::{ExtractorRule, FeatureRegistry, GeneratedFeature};
use crate::llm::{extract_json_payload, ChatBackend, ChatMessage, ChatRequest};

pub const GENERATION_MARKER: &str = "Task: feature generation";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationOutcome {
    pub accepted: Vec<GeneratedFeature>,
    /// `name: reason` for every rejected proposal.
    pub rejected: Vec<String>,
}

fn prompt(std_summary: &str, corpus_stats: &str) -> (String, String) {
    let system = format!(
        "{GENERATION_MARKER}\n\
         You design features for next-location prediction. Propose features that the \
         existing pools miss. Each computation_rule must use one extractor: \
         frequency_over_field(field=location|category|hour|weekday, top=N), \
         time_bucket_histogram(bucket_hours=N), transition_count(top=N), \
         dwell_statistic(stat=mean|median|max).\n\
         Answer with a JSON list of objects with keys name, description, computation_rule."
    );
    let user = format!("Existing features:\n{std_summary}\nCorpus statistics:\n{corpus_stats}");
    (system, user)
}

/// Asks the backend for new feature proposals. Unusable replies yield no candidates.
pub fn generate_new_features(
    std_summary: &str,
    corpus_stats: &str,
    backend: &dyn ChatBackend,
    model_id: &str,
) -> GenerationOutcome {
    let (system, user) = prompt(std_summary, corpus_stats);
    let request = ChatRequest::new(model_id, vec![ChatMessage::system(system), ChatMessage::user(user)]);
    let text = match backend.complete(&request) {
        Ok(r) => r.text,
        Err(e) => {
            log::warn!("feature generation request failed: {e}");
            return GenerationOutcome::default();
        }
    };
    let value = match extract_json_payload(&text) {
        Ok(e) => e.value,
        Err(_) => {
            log::warn!("feature generation reply is not JSON; continuing with existing features");
            return GenerationOutcome::default();
        }
    };
    let items = match value {
        Value::Array(items) => items,
        Value::Object(mut obj) => match obj.remove("features") {
            Some(Value::Array(items)) => items,
            _ => vec![Value::Object(obj)],
        },
        _ => vec![],
    };
    let mut out = GenerationOutcome::default();
    for item in items {
        let name = item.get("name").and_then(Value::as_str).unwrap_or("").trim().to_string();
        if name.is_empty() {
            out.rejected.push("<unnamed>: missing name".into());
            continue;
        }
        let description = item.get("description").and_then(Value::as_str).unwrap_or("");
        let rule = item
            .get("computation_rule")
            .ok_or_else(|| "missing computation_rule".to_string())
            .and_then(ExtractorRule::from_value);
        match rule {
            Ok(rule) => out.accepted.push(GeneratedFeature::new(&name, description, rule)),
            Err(reason) => {
                log::info!("rejected generated feature `{name}`: {reason}");
                out.rejected.push(format!("{name}: {reason}"));
            }
        }
    }
    out
}

/// Adds accepted proposals to the registry, skipping ids it already holds.
/// Returns the ids that were newly registered.
pub fn register_generated(registry: &mut FeatureRegistry, outcome: &GenerationOutcome) -> Vec<String> {
    let mut added = Vec::new();
    for f in &outcome.accepted {
        if registry.register_generated(f.clone()) {
            added.push(f.id().to_string());
        }
    }
    added
}
