//! User profiling: persona labels, interest tags, grouping and group merging, plus
//! per-group feature optimization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Corpus, PredictionSample, Split};
use crate::error::{Error, Result};
use crate::featagent::{optimize, FeatureWeights, OptimizationArtifact, OptimizeConfig, OptimizeInput, WeightScope};
use crate::featpool::{render_feature_block, FeatureBuilder, FeatureRegistry, UserProfile};
use crate::llm::{extract_json_payload, ChatBackend, ChatMessage, ChatRequest};
use crate::predictor::{FeaturePlan, PlanEntry, Predictor};

pub const PERSONA_MARKER: &str = "Task: user persona";
pub const INTEREST_MARKER: &str = "Task: interest mining";
pub const MERGE_MARKER: &str = "Task: group merge";
pub const UNCLASSIFIED: &str = "unclassified";
pub const MAX_TAGS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GroupingStage {
    #[default]
    #[serde(rename = "off")]
    Off,
    /// Persona labels only.
    #[serde(rename = "OL1")]
    Ol1,
    /// Personas refined by interest tags.
    #[serde(rename = "L1L2")]
    L1l2,
    /// Personas and interests with small-group merging.
    #[serde(rename = "L1L2M")]
    L1l2m,
}

impl GroupingStage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::Ol1 => "OL1",
            Self::L1l2 => "L1L2",
            Self::L1l2m => "L1L2M",
        }
    }
}

impl std::str::FromStr for GroupingStage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "OFF" => Ok(Self::Off),
            "OL1" => Ok(Self::Ol1),
            "L1L2" => Ok(Self::L1l2),
            "L1L2M" => Ok(Self::L1l2m),
            _ => Err(format!("unknown grouping stage `{s}` (expected off, OL1, L1L2 or L1L2M)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGroup {
    pub group_id: String,
    pub l1_label: String,
    pub l2_tags: Vec<String>,
    pub members: BTreeSet<String>,
    pub merged_from: Vec<String>,
}

impl UserGroup {
    pub fn label_text(&self) -> String {
        group_label_text(&self.l1_label, &self.l2_tags)
    }

    fn signature(&self) -> BTreeSet<String> {
        std::iter::once(format!("l1:{}", self.l1_label))
            .chain(self.l2_tags.iter().map(|t| format!("tag:{t}")))
            .collect()
    }
}

/// `"persona | tag, tag"`, used as the group-label feature text.
pub fn group_label_text(l1: &str, tags: &[String]) -> String {
    if tags.is_empty() {
        l1.to_string()
    } else {
        format!("{l1} | {}", tags.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPersona {
    pub l1: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupObjectiveConfig {
    pub alpha: f64,
    pub min_group_size: usize,
}

impl Default for GroupObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            min_group_size: 5,
        }
    }
}

impl GroupObjectiveConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.min_group_size == 0 {
            return Err("min_group_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Lowercase, trimmed, inner whitespace collapsed, surrounding punctuation removed.
pub fn normalize_label(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn ask(backend: &dyn ChatBackend, model_id: &str, system: String, user: String) -> Option<String> {
    let req = ChatRequest::new(model_id, vec![ChatMessage::system(system), ChatMessage::user(user)]);
    match backend.complete(&req) {
        Ok(r) => Some(r.text),
        Err(e) => {
            log::warn!("profiling request failed: {e}");
            None
        }
    }
}

/// Persona label from a `{"persona": ...}` reply or a short single-line answer.
pub fn assign_l1(user_id: &str, features: &str, backend: &dyn ChatBackend, model_id: &str) -> String {
    let system = format!(
        "{PERSONA_MARKER}\n\
         Assign the user one short persona label describing their role in the city \
         (for example: office worker, student, night-shift worker). \
         Answer with JSON: {{\"persona\": \"<label>\"}}"
    );
    let user = format!("User {user_id} features:\n{features}");
    let Some(text) = ask(backend, model_id, system, user) else {
        return UNCLASSIFIED.into();
    };
    let label = match extract_json_payload(&text) {
        Ok(e) => e.value.get("persona").and_then(Value::as_str).map(normalize_label),
        Err(_) => {
            let line = text.trim();
            let plausible = !line.is_empty() && !line.contains('\n') && line.split_whitespace().count() <= 4;
            plausible.then(|| normalize_label(line))
        }
    };
    match label {
        Some(l) if !l.is_empty() => l,
        _ => {
            log::warn!("persona reply for {user_id} unusable; labelled {UNCLASSIFIED}");
            UNCLASSIFIED.into()
        }
    }
}

/// Up to three normalized interest tags; unusable replies give none.
pub fn mine_l2(user_id: &str, l1: &str, features: &str, backend: &dyn ChatBackend, model_id: &str) -> Vec<String> {
    let system = format!(
        "{INTEREST_MARKER}\n\
         List up to {MAX_TAGS} secondary interests of this user (for example: fitness, nightlife). \
         Answer with a JSON list of short tags."
    );
    let user = format!("User {user_id}, persona {l1}. Features:\n{features}");
    let Some(text) = ask(backend, model_id, system, user) else {
        return vec![];
    };
    let items = match extract_json_payload(&text).map(|e| e.value) {
        Ok(Value::Array(items)) => items,
        Ok(Value::Object(mut obj)) => match obj.remove("interests").or_else(|| obj.remove("tags")) {
            Some(Value::Array(items)) => items,
            _ => vec![],
        },
        _ => vec![],
    };
    let mut tags: Vec<String> = Vec::new();
    for tag in items.iter().filter_map(Value::as_str).map(normalize_label) {
        if !tag.is_empty() && !tags.contains(&tag) {
            tags.push(tag);
        }
    }
    tags.truncate(MAX_TAGS);
    tags
}

/// The user's latest non-test session as a sample, so profiling never sees test targets.
pub fn representative_sample(corpus: &Corpus, user: &str) -> Option<PredictionSample> {
    let session = corpus
        .users
        .get(user)?
        .iter()
        .rev()
        .find(|s| s.split != Some(Split::Test) && s.stays.len() >= 2)?;
    PredictionSample::from_session(corpus, session).ok()
}

/// Text of all registered standard features for one representative sample per user.
pub fn user_feature_summary(builder: &FeatureBuilder, registry: &FeatureRegistry, sample: &PredictionSample) -> Result<String> {
    let ids = registry.standard_ids();
    let values = builder.compute(sample, registry, &ids);
    let weights = ids.iter().map(|id| (id.clone(), 1.0)).collect();
    Ok(render_feature_block(&values, &weights, 1500)?.text)
}

/// Labels every user; interests are mined only for stages past OL1.
pub fn profile_users(
    summaries: &BTreeMap<String, String>,
    stage: GroupingStage,
    backend: &dyn ChatBackend,
    model_id: &str,
) -> BTreeMap<String, UserPersona> {
    summaries
        .par_iter()
        .map(|(user, text)| {
            let l1 = assign_l1(user, text, backend, model_id);
            let tags = match stage {
                GroupingStage::L1l2 | GroupingStage::L1l2m => mine_l2(user, &l1, text, backend, model_id),
                _ => vec![],
            };
            (user.clone(), UserPersona { l1, tags })
        })
        .collect()
}

fn group_by(personas: &BTreeMap<String, UserPersona>, with_tags: bool) -> Vec<UserGroup> {
    let mut groups: BTreeMap<String, UserGroup> = BTreeMap::new();
    for (user, p) in personas {
        let mut tags = if with_tags { p.tags.clone() } else { vec![] };
        tags.sort();
        let id = if tags.is_empty() {
            p.l1.clone()
        } else {
            format!("{}|{}", p.l1, tags.join("+"))
        };
        groups
            .entry(id.clone())
            .or_insert_with(|| UserGroup {
                group_id: id,
                l1_label: p.l1.clone(),
                l2_tags: tags,
                members: BTreeSet::new(),
                merged_from: vec![],
            })
            .members
            .insert(user.clone());
    }
    groups.into_values().collect()
}

pub fn group_ol1(personas: &BTreeMap<String, UserPersona>) -> Vec<UserGroup> {
    group_by(personas, false)
}

pub fn group_l1l2(personas: &BTreeMap<String, UserPersona>) -> Vec<UserGroup> {
    group_by(personas, true)
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Index of the group most similar to `sig`; ties go to the larger group, then the smaller id.
fn most_similar(sig: &BTreeSet<String>, groups: &[UserGroup]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, g) in groups.iter().enumerate() {
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let (si, sb) = (jaccard(sig, &g.signature()), jaccard(sig, &groups[b].signature()));
        let (ni, nb) = (g.members.len(), groups[b].members.len());
        if si > sb || (si == sb && (ni > nb || (ni == nb && g.group_id < groups[b].group_id))) {
            best = Some(i);
        }
    }
    best
}

/// Where a newcomer with `persona` belongs among existing groups: the group whose id
/// (or a merged-in id) equals the persona's own group key, else the most similar one.
pub fn nearest_group(persona: &UserPersona, groups: &[UserGroup]) -> Option<usize> {
    let mut tags = persona.tags.clone();
    tags.sort();
    let key = if tags.is_empty() {
        persona.l1.clone()
    } else {
        format!("{}|{}", persona.l1, tags.join("+"))
    };
    groups
        .iter()
        .position(|g| g.group_id == key || g.merged_from.contains(&key))
        .or_else(|| {
            let sig = std::iter::once(format!("l1:{}", persona.l1))
                .chain(persona.tags.iter().map(|t| format!("tag:{t}")))
                .collect();
            most_similar(&sig, groups)
        })
}

fn backend_target(small: &UserGroup, candidates: &[&UserGroup], backend: &dyn ChatBackend, model_id: &str) -> Option<String> {
    let system = format!(
        "{MERGE_MARKER}\n\
         A user group is too small. Pick the most similar group to merge it into. \
         Answer with JSON: {{\"target\": \"<group_id>\"}}"
    );
    let mut user = format!("Small group: {} ({})\nCandidates:\n", small.group_id, small.label_text());
    for c in candidates {
        let _ = writeln!(user, "- {} ({}; {} members)", c.group_id, c.label_text(), c.members.len());
    }
    let text = ask(backend, model_id, system, user)?;
    let target = extract_json_payload(&text).ok()?.value.get("target")?.as_str()?.trim().to_string();
    candidates.iter().any(|c| c.group_id == target).then_some(target)
}

/// Folds every group smaller than `min_size` into its most similar peer, smallest
/// first. Similarity is Jaccard over `{persona} ∪ tags`; ties go to the larger
/// target, then the smaller id. A backend may name the target instead, but only a
/// valid candidate id is accepted.
pub fn merge_groups(
    groups: Vec<UserGroup>,
    min_size: usize,
    backend: Option<&dyn ChatBackend>,
    model_id: &str,
) -> Vec<UserGroup> {
    let mut groups = groups;
    groups.sort_by(|a, b| a.group_id.cmp(&b.group_id));
    loop {
        if groups.len() <= 1 {
            break;
        }
        let Some(small_idx) = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.members.len() < min_size)
            .min_by(|(_, a), (_, b)| a.members.len().cmp(&b.members.len()).then_with(|| a.group_id.cmp(&b.group_id)))
            .map(|(i, _)| i)
        else {
            break;
        };
        let small = groups.remove(small_idx);
        let candidates: Vec<&UserGroup> = groups.iter().collect();
        let chosen = backend.and_then(|b| backend_target(&small, &candidates, b, model_id));
        let target_idx = match chosen {
            Some(id) => groups.iter().position(|g| g.group_id == id).expect("validated candidate"),
            None => most_similar(&small.signature(), &groups).expect("at least one candidate"),
        };
        let target = &mut groups[target_idx];
        target.members.extend(small.members);
        target.merged_from.push(small.group_id);
        target.merged_from.extend(small.merged_from);
    }
    groups
}

/// Groups are disjoint, non-empty and together cover exactly `users`.
pub fn is_partition(groups: &[UserGroup], users: &BTreeSet<String>) -> bool {
    let mut seen = BTreeSet::new();
    for g in groups {
        if g.members.is_empty() {
            return false;
        }
        for m in &g.members {
            if !seen.insert(m.clone()) {
                return false;
            }
        }
    }
    &seen == users
}

/// Runs the grouping stages up to `stage`.
pub fn build_groups(
    personas: &BTreeMap<String, UserPersona>,
    stage: GroupingStage,
    cfg: &GroupObjectiveConfig,
    backend: &dyn ChatBackend,
    model_id: &str,
) -> Vec<UserGroup> {
    match stage {
        GroupingStage::Off => vec![],
        GroupingStage::Ol1 => group_ol1(personas),
        GroupingStage::L1l2 => group_l1l2(personas),
        GroupingStage::L1l2m => merge_groups(group_l1l2(personas), cfg.min_group_size, Some(backend), model_id),
    }
}

pub fn blend_weights(global: &BTreeMap<String, f64>, group: &BTreeMap<String, f64>, alpha: f64) -> BTreeMap<String, f64> {
    crate::featagent::blend(global, Some(group), alpha)
}

/// Profile entries that feed the profile-keyword and group-label features.
pub fn user_profiles(groups: &[UserGroup], personas: &BTreeMap<String, UserPersona>) -> BTreeMap<String, UserProfile> {
    let mut out = BTreeMap::new();
    for g in groups {
        for m in &g.members {
            out.insert(
                m.clone(),
                UserProfile {
                    keywords: personas.get(m).map(|p| p.tags.clone()).unwrap_or_default(),
                    group_label: Some(g.label_text()),
                },
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRun {
    pub group_id: String,
    /// `None` when the group had no validation samples and inherited the city-level set.
    pub artifact: Option<OptimizationArtifact>,
}

/// Optimizes one group on its members' validation samples with blended weights.
/// Returns the artifact (if any samples exist) and the updated weights.
#[allow(clippy::too_many_arguments)]
pub fn optimize_group(
    group: &UserGroup,
    total_users: usize,
    city: &str,
    validation: &[PredictionSample],
    corpus_stats: &str,
    predictor: &Predictor,
    registry: &mut FeatureRegistry,
    weights: FeatureWeights,
    cfg: &GroupObjectiveConfig,
    opt: &OptimizeConfig,
    inject_label: bool,
    backend: &dyn ChatBackend,
) -> Result<(Option<OptimizationArtifact>, FeatureWeights)> {
    if total_users == 0 {
        return Err(Error::invalid("total user count must be positive"));
    }
    let samples: Vec<PredictionSample> = validation
        .iter()
        .filter(|s| group.members.contains(&s.user_id))
        .cloned()
        .collect();
    if samples.is_empty() {
        log::warn!("group {} has no validation samples; it inherits the city-level feature set", group.group_id);
        return Ok((None, weights));
    }
    let scope = WeightScope::Group {
        group_id: group.group_id.clone(),
        alpha: cfg.alpha,
        share: group.members.len() as f64 / total_users as f64,
        label: inject_label.then(|| group.label_text()),
    };
    let input = OptimizeInput {
        city,
        validation: &samples,
        corpus_stats,
        predictor,
    };
    let artifact = optimize(&input, registry, weights, &scope, opt, backend)?;
    let weights = artifact.final_weights.clone();
    Ok((Some(artifact), weights))
}

/// Per-group plan: each group's best entry, or `fallback` for groups without samples.
pub fn plan_from_groups(groups: &[UserGroup], runs: &[GroupRun], fallback: &PlanEntry) -> FeaturePlan {
    let mut plan = FeaturePlan {
        default: fallback.clone(),
        ..FeaturePlan::default()
    };
    for g in groups {
        let run = runs.iter().find(|r| r.group_id == g.group_id);
        let entry = match run.and_then(|r| r.artifact.as_ref()) {
            Some(a) => a.plan_entry(),
            None => PlanEntry {
                group_label: Some(g.label_text()),
                ..fallback.clone()
            },
        };
        plan.groups.insert(g.group_id.clone(), entry);
        for m in &g.members {
            plan.user_groups.insert(m.clone(), g.group_id.clone());
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, MockRule};
    use proptest::prelude::*;

    fn mock(marker: &str, reply: &str) -> MockBackend {
        MockBackend::new(vec![MockRule::new(marker, reply)]).unwrap()
    }

    #[test]
    fn persona_parsing() {
        assert_eq!(assign_l1("u", "f", &mock(PERSONA_MARKER, r#"{"persona": " Office Worker "}"#), "m"), "office worker");
        assert_eq!(assign_l1("u", "f", &mock(PERSONA_MARKER, "office worker"), "m"), "office worker");
        assert_eq!(assign_l1("u", "f", &mock(PERSONA_MARKER, "{{{ not json at all"), "m"), UNCLASSIFIED);
        let m = mock(PERSONA_MARKER, r#"{"persona": "student"}"#);
        assert_eq!(assign_l1("u", "f", &m, "m"), assign_l1("u", "f", &m, "m"));
    }

    #[test]
    fn interest_parsing() {
        assert_eq!(mine_l2("u", "x", "f", &mock(INTEREST_MARKER, r#"["Fitness","nightlife"]"#), "m"), ["fitness", "nightlife"]);
        assert!(mine_l2("u", "x", "f", &mock(INTEREST_MARKER, ""), "m").is_empty());
        let five = mine_l2("u", "x", "f", &mock(INTEREST_MARKER, r#"["a","b","c","d","e"]"#), "m");
        assert_eq!(five, ["a", "b", "c"]);
    }

    fn group(id: &str, l1: &str, tags: &[&str], n: usize) -> UserGroup {
        UserGroup {
            group_id: id.into(),
            l1_label: l1.into(),
            l2_tags: tags.iter().map(|t| t.to_string()).collect(),
            members: (0..n).map(|i| format!("{id}-{i}")).collect(),
            merged_from: vec![],
        }
    }

    #[test]
    fn merge_examples() {
        let out = merge_groups(vec![group("a", "x", &[], 10), group("b", "y", &[], 2)], 5, None, "m");
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].members.len(), 12);
        assert_eq!(out[0].merged_from, ["b"]);

        let both = vec![group("a", "x", &[], 10), group("b", "y", &[], 10)];
        assert_eq!(merge_groups(both.clone(), 5, None, "m"), both);

        // Jaccard picks the group sharing the persona even though it is smaller.
        let out = merge_groups(
            vec![group("big", "student", &[], 20), group("near", "worker", &["gym"], 6), group("tiny", "worker", &["gym", "bar"], 1)],
            5,
            None,
            "m",
        );
        assert_eq!(out.iter().find(|g| g.group_id == "near").unwrap().members.len(), 7);

        // A valid backend choice overrides similarity; an invalid one is ignored.
        let pick_big = mock(MERGE_MARKER, r#"{"target": "big"}"#);
        let groups = vec![group("big", "student", &[], 20), group("near", "worker", &["gym"], 6), group("tiny", "worker", &["gym"], 1)];
        let out = merge_groups(groups.clone(), 5, Some(&pick_big), "m");
        assert_eq!(out.iter().find(|g| g.group_id == "big").unwrap().members.len(), 21);
        let bogus = mock(MERGE_MARKER, r#"{"target": "nope"}"#);
        let out = merge_groups(groups, 5, Some(&bogus), "m");
        assert_eq!(out.iter().find(|g| g.group_id == "near").unwrap().members.len(), 7);
    }

    #[test]
    fn group_ids_and_stages() {
        let personas = BTreeMap::from([
            ("u1".to_string(), UserPersona { l1: "student".into(), tags: vec!["nightlife".into(), "fitness".into()] }),
            ("u2".to_string(), UserPersona { l1: "student".into(), tags: vec![] }),
        ]);
        let ol1 = group_ol1(&personas);
        assert_eq!(ol1.len(), 1);
        let l1l2 = group_l1l2(&personas);
        let ids: Vec<_> = l1l2.iter().map(|g| g.group_id.as_str()).collect();
        assert_eq!(ids, ["student", "student|fitness+nightlife"]);
        assert_eq!(l1l2[1].label_text(), "student | fitness, nightlife");
    }

    #[test]
    fn blend_arithmetic() {
        let g = BTreeMap::from([("f".to_string(), 0.4)]);
        let w = BTreeMap::from([("f".to_string(), 0.8)]);
        assert_eq!(blend_weights(&g, &w, 0.0), g);
        assert_eq!(blend_weights(&g, &w, 1.0), w);
        assert!((blend_weights(&g, &w, 0.5)["f"] - 0.6).abs() < 1e-12);
    }

    fn arb_groups() -> impl Strategy<Value = Vec<UserGroup>> {
        prop::collection::vec((0u8..3, prop::collection::vec(0u8..4, 0..3), 1usize..8), 1..7).prop_map(|specs| {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, (l1, tags, n))| {
                    let tags: Vec<String> = tags.iter().map(|t| format!("t{t}")).collect::<BTreeSet<_>>().into_iter().collect();
                    UserGroup {
                        group_id: format!("g{i}"),
                        l1_label: format!("p{l1}"),
                        l2_tags: tags,
                        members: (0..n).map(|m| format!("g{i}u{m}")).collect(),
                        merged_from: vec![],
                    }
                })
                .collect()
        })
    }

    /// Reference merger: exhaustive scan of all (small, target) choices at each step.
    fn oracle_merge(mut groups: Vec<UserGroup>, min: usize) -> Vec<BTreeSet<String>> {
        while groups.len() > 1 {
            let mut order: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].members.len() < min).collect();
            if order.is_empty() {
                break;
            }
            order.sort_by_key(|&i| (groups[i].members.len(), groups[i].group_id.clone()));
            let s = groups.remove(order[0]);
            let sig = s.signature();
            let score = |g: &UserGroup| {
                let sim = jaccard(&sig, &g.signature());
                (sim, g.members.len(), std::cmp::Reverse(g.group_id.clone()))
            };
            let t = (0..groups.len())
                .max_by(|&a, &b| score(&groups[a]).partial_cmp(&score(&groups[b])).unwrap())
                .unwrap();
            groups[t].members.extend(s.members);
        }
        let mut out: Vec<BTreeSet<String>> = groups.into_iter().map(|g| g.members).collect();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn merge_is_partition_idempotent_and_matches_oracle(groups in arb_groups(), min in 1usize..8) {
            let users: BTreeSet<String> = groups.iter().flat_map(|g| g.members.iter().cloned()).collect();
            let merged = merge_groups(groups.clone(), min, None, "m");
            prop_assert!(is_partition(&merged, &users));
            prop_assert_eq!(merge_groups(merged.clone(), min, None, "m"), merged.clone());
            prop_assert!(merged.len() == 1 || merged.iter().all(|g| g.members.len() >= min));
            let mut got: Vec<BTreeSet<String>> = merged.iter().map(|g| g.members.clone()).collect();
            got.sort();
            prop_assert_eq!(got, oracle_merge(groups, min));
        }
    }
}
