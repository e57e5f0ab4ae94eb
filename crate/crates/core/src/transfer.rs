//! Reusing a finished run's weights, feature set and user groups: for new users in
//! the same city, for other cities, and for a smaller prediction model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::corpus::{Corpus, PredictionSample, Session};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::featagent::{optimize, FeatureSet, FeatureWeights, FsVariant, OptimizationArtifact, OptimizeConfig, OptimizeInput, WeightScope};
use crate::featpool::{FeatureRegistry, GeneratedFeature, UserProfile};
use crate::llm::ChatBackend;
use crate::predictor::{FeaturePlan, PlanEntry, PredictionRecord, Predictor};
use crate::profiler::{
    build_groups, nearest_group, optimize_group, profile_users, representative_sample, user_feature_summary,
    user_profiles, GroupObjectiveConfig, GroupingStage, UserGroup, UserPersona,
};
use crate::rundir::{self, RunDir, RunMeta};

/// Plan key for newcomers when the source run had no groups.
pub const NEWCOMER_GROUP: &str = "transfer:new";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub seed: u64,
    pub lambda: f64,
    pub iterations: usize,
    pub variant: FsVariant,
    pub grouping_stage: GroupingStage,
    pub k_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferArtifact {
    pub source_cities: Vec<String>,
    pub source_model_id: String,
    pub source_users: Vec<String>,
    pub weights: FeatureWeights,
    /// City-level best selection.
    pub feature_set: FeatureSet,
    pub plan: FeaturePlan,
    pub generated: Vec<GeneratedFeature>,
    pub groups: Vec<UserGroup>,
    pub personas: BTreeMap<String, UserPersona>,
    pub metadata: ArtifactMetadata,
}

impl TransferArtifact {
    /// Standard features plus the source run's generated ones (and the group label
    /// when the source grouped users).
    pub fn registry(&self) -> FeatureRegistry {
        let mut reg = FeatureRegistry::standard();
        for f in &self.generated {
            reg.register_generated(f.clone());
        }
        if !self.groups.is_empty() {
            reg.ensure_group_label();
        }
        reg
    }

    /// Keyword and group-label profiles for the source users.
    pub fn profiles(&self) -> BTreeMap<String, UserProfile> {
        user_profiles(&self.groups, &self.personas)
    }

    pub fn to_text(&self) -> Result<String> {
        canonical::to_canonical_pretty(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        canonical::write_atomic(path, &self.to_text()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        canonical::read_file(path)
    }
}

/// Collects a finished run into an artifact and writes it to the run directory.
pub fn export_artifact(run: &RunDir) -> Result<TransferArtifact> {
    let meta: Option<RunMeta> = run.has(rundir::RUN_META).then(|| run.read(rundir::RUN_META, "run metadata", "ingest")).transpose()?;
    let mut required = vec![
        (rundir::RUN_META, "ingest"),
        (rundir::CORPUS, "ingest"),
        (rundir::REGISTRY, "optimize"),
        (rundir::OPTIMIZATION, "optimize"),
        (rundir::WEIGHTS, "optimize"),
        (rundir::PLAN, "optimize"),
    ];
    if meta.as_ref().is_some_and(|m| m.grouping_stage != GroupingStage::Off) {
        required.push((rundir::GROUPS, "optimize"));
        required.push((rundir::PERSONAS, "optimize"));
    }
    let missing: Vec<String> = required
        .iter()
        .filter(|(f, _)| !run.has(f))
        .map(|(f, stage)| format!("{f} (from `{stage}`)"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteRun(missing));
    }
    let meta = meta.expect("checked above");

    let corpus: Corpus = run.read(rundir::CORPUS, "corpus", "ingest")?;
    let registry: FeatureRegistry = run.read(rundir::REGISTRY, "feature registry", "optimize")?;
    let opt: OptimizationArtifact = run.read(rundir::OPTIMIZATION, "optimization artifact", "optimize")?;
    let (groups, personas) = if meta.grouping_stage == GroupingStage::Off {
        (vec![], BTreeMap::new())
    } else {
        (
            run.read(rundir::GROUPS, "groups", "optimize")?,
            run.read(rundir::PERSONAS, "personas", "optimize")?,
        )
    };
    let artifact = TransferArtifact {
        source_cities: vec![meta.city.clone()],
        source_model_id: meta.model_id.clone(),
        source_users: corpus.users.keys().cloned().collect(),
        weights: run.read(rundir::WEIGHTS, "weights", "optimize")?,
        feature_set: opt.best,
        plan: run.read(rundir::PLAN, "feature plan", "optimize")?,
        generated: registry.generated().values().cloned().collect(),
        groups,
        personas,
        metadata: ArtifactMetadata {
            seed: meta.seed,
            lambda: meta.lambda,
            iterations: meta.iterations,
            variant: meta.variant,
            grouping_stage: meta.grouping_stage,
            k_max: meta.k_max,
        },
    };
    artifact.save(&run.path(rundir::ARTIFACT))?;
    Ok(artifact)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Users,
    City,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMetadata {
    pub kind: TransferKind,
    pub source_cities: Vec<String>,
    pub target_city: String,
    pub teacher: String,
    pub student: String,
}

/// Predictions and metrics of a transfer run that skipped optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    pub metadata: TransferMetadata,
    /// Selected ids the target registry cannot compute; they render as unavailable.
    pub unavailable_features: Vec<String>,
    pub records: Vec<PredictionRecord>,
    pub metrics: MetricsReport,
}

fn unknown_ids(plan: &FeaturePlan, registry: &FeatureRegistry) -> Vec<String> {
    let ids: BTreeSet<&String> = std::iter::once(&plan.default)
        .chain(plan.groups.values())
        .flat_map(|e| &e.selected)
        .filter(|id| !registry.contains(id))
        .collect();
    ids.into_iter().cloned().collect()
}

/// Applies the artifact's city-level feature set and weights to another city's test
/// samples, with no re-optimization. Groups do not cross cities.
pub fn direct_city_transfer(
    artifact: &TransferArtifact,
    target_city: &str,
    samples: &[PredictionSample],
    predictor: &Predictor,
    backend: &dyn ChatBackend,
) -> Result<TransferRun> {
    let mut registry = FeatureRegistry::standard();
    for f in &artifact.generated {
        registry.register_generated(f.clone());
    }
    let plan = FeaturePlan {
        default: PlanEntry {
            group_label: None,
            ..artifact.plan.default.clone()
        },
        ..FeaturePlan::default()
    };
    let unavailable = unknown_ids(&plan, &registry);
    if !unavailable.is_empty() {
        log::warn!("features unknown in {target_city} render as unavailable: {}", unavailable.join(", "));
    }
    let records = predictor.predict_batch(samples, &registry, &plan, backend)?;
    let metrics = MetricsReport::compute(&records)?;
    Ok(TransferRun {
        metadata: TransferMetadata {
            kind: TransferKind::City,
            source_cities: artifact.source_cities.clone(),
            target_city: target_city.to_string(),
            teacher: artifact.source_model_id.clone(),
            student: predictor.cfg.model_id.clone(),
        },
        unavailable_features: unavailable,
        records,
        metrics,
    })
}

/// Prediction only, under `student_model`, using the artifact's groups, feature set
/// and weights. No generation, selection, profiling or merge calls are made.
///
/// `predictor.builder` should carry [`TransferArtifact::profiles`] so group labels and
/// interest keywords render.
pub fn model_transfer(
    artifact: &TransferArtifact,
    student_model: &str,
    samples: &[PredictionSample],
    predictor: &Predictor,
    backend: &dyn ChatBackend,
) -> Result<TransferRun> {
    let registry = artifact.registry();
    let mut cfg = predictor.cfg.clone();
    cfg.model_id = student_model.to_string();
    let student = Predictor::new(predictor.builder, cfg);
    let unavailable = unknown_ids(&artifact.plan, &registry);
    let records = student.predict_batch(samples, &registry, &artifact.plan, backend)?;
    let metrics = MetricsReport::compute(&records)?;
    Ok(TransferRun {
        metadata: TransferMetadata {
            kind: TransferKind::Model,
            source_cities: artifact.source_cities.clone(),
            target_city: artifact.source_cities.join("+"),
            teacher: artifact.source_model_id.clone(),
            student: student_model.to_string(),
        },
        unavailable_features: unavailable,
        records,
        metrics,
    })
}

pub struct UserTransferInput<'a> {
    pub corpus: &'a Corpus,
    /// Validation samples of the whole corpus; newcomers' samples are picked from here.
    pub validation: &'a [PredictionSample],
    pub predictor: &'a Predictor<'a>,
    pub opt: OptimizeConfig,
    pub group_cfg: GroupObjectiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTransferOutcome {
    pub removed: Vec<String>,
    pub added: Vec<String>,
    /// Weights the newcomers' optimization started from: the artifact's, unchanged.
    pub initial_weights: FeatureWeights,
    pub weights: FeatureWeights,
    pub feature_set: FeatureSet,
    pub groups: Vec<UserGroup>,
    pub personas: BTreeMap<String, UserPersona>,
    pub plan: FeaturePlan,
    pub runs: Vec<OptimizationArtifact>,
    pub users: Vec<String>,
    /// The artifact's registry plus anything generated while optimizing newcomers.
    pub registry: FeatureRegistry,
}

fn pick_sorted(pool: &[String], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut idx = rand::seq::index::sample(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// Swaps `replace_n` of the artifact's users for held-out users of the same city.
/// Remaining users keep their groups and plan entries; newcomers are profiled, placed
/// in the nearest existing group and optimized starting from the artifact's weights.
pub fn user_transfer(
    input: &UserTransferInput,
    artifact: &TransferArtifact,
    replace_n: usize,
    seed: u64,
    backend: &dyn ChatBackend,
) -> Result<UserTransferOutcome> {
    let source: BTreeSet<&String> = artifact.source_users.iter().collect();
    let held_out: Vec<String> = input.corpus.users.keys().filter(|u| !source.contains(u)).cloned().collect();
    if held_out.len() < replace_n {
        return Err(Error::invalid(format!(
            "user transfer needs {replace_n} held-out users but the corpus has {}",
            held_out.len()
        )));
    }
    if replace_n > artifact.source_users.len() {
        return Err(Error::invalid(format!(
            "cannot replace {replace_n} of {} source users",
            artifact.source_users.len()
        )));
    }
    let identity = UserTransferOutcome {
        removed: vec![],
        added: vec![],
        initial_weights: artifact.weights.clone(),
        weights: artifact.weights.clone(),
        feature_set: artifact.feature_set.clone(),
        groups: artifact.groups.clone(),
        personas: artifact.personas.clone(),
        plan: artifact.plan.clone(),
        runs: vec![],
        users: artifact.source_users.clone(),
        registry: artifact.registry(),
    };
    if replace_n == 0 {
        return Ok(identity);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed = pick_sorted(&artifact.source_users, replace_n, &mut rng);
    let added = pick_sorted(&held_out, replace_n, &mut rng);
    let gone: BTreeSet<&String> = removed.iter().collect();
    let mut users: Vec<String> = artifact
        .source_users
        .iter()
        .filter(|u| !gone.contains(u))
        .chain(&added)
        .cloned()
        .collect();
    users.sort();

    let mut out = UserTransferOutcome {
        removed: removed.clone(),
        added: added.clone(),
        users: users.clone(),
        ..identity
    };
    for g in &mut out.groups {
        g.members.retain(|m| !gone.contains(m));
    }
    out.groups.retain(|g| !g.members.is_empty());
    out.personas.retain(|u, _| !gone.contains(u));
    out.plan.user_groups.retain(|u, _| !gone.contains(u));

    let mut registry = artifact.registry();
    let newcomers: BTreeSet<&String> = added.iter().collect();
    let new_validation: Vec<PredictionSample> = input
        .validation
        .iter()
        .filter(|s| newcomers.contains(&s.user_id))
        .cloned()
        .collect();
    let stats = input.corpus.stats_summary();
    let city = artifact.source_cities.join("+");
    let mut weights = artifact.weights.clone();

    if artifact.metadata.grouping_stage == GroupingStage::Off {
        if new_validation.is_empty() {
            log::warn!("newcomers have no validation samples; they use the artifact's feature set");
        } else {
            let opt_input = OptimizeInput {
                city: &city,
                validation: &new_validation,
                corpus_stats: &stats,
                predictor: input.predictor,
            };
            let run = optimize(&opt_input, &mut registry, weights, &WeightScope::Global, &input.opt, backend)?;
            weights = run.final_weights.clone();
            out.plan.groups.insert(NEWCOMER_GROUP.into(), run.plan_entry());
            for u in &added {
                out.plan.user_groups.insert(u.clone(), NEWCOMER_GROUP.into());
            }
            out.runs.push(run);
        }
        out.weights = weights;
        out.registry = registry;
        return Ok(out);
    }

    let mut summaries = BTreeMap::new();
    for u in &added {
        if let Some(sample) = representative_sample(input.corpus, u) {
            summaries.insert(u.clone(), user_feature_summary(input.predictor.builder, &registry, &sample)?);
        }
    }
    let personas = profile_users(&summaries, artifact.metadata.grouping_stage, backend, &input.opt.model_id);
    let mut touched: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let unplaced: BTreeMap<String, UserPersona> = if out.groups.is_empty() {
        personas.clone()
    } else {
        for (u, p) in &personas {
            let idx = nearest_group(p, &out.groups).expect("non-empty groups");
            out.groups[idx].members.insert(u.clone());
            touched.entry(out.groups[idx].group_id.clone()).or_default().insert(u.clone());
        }
        BTreeMap::new()
    };
    for g in build_groups(&unplaced, artifact.metadata.grouping_stage, &input.group_cfg, backend, &input.opt.model_id) {
        touched.insert(g.group_id.clone(), g.members.clone());
        out.groups.push(g);
    }
    out.groups.sort_by(|a, b| a.group_id.cmp(&b.group_id));
    out.personas.extend(personas);

    for (group_id, members) in &touched {
        let group = out.groups.iter().find(|g| &g.group_id == group_id).expect("touched group exists");
        let newcomers_only = UserGroup {
            members: members.clone(),
            ..group.clone()
        };
        let (run, w) = optimize_group(
            &newcomers_only,
            users.len(),
            &city,
            &new_validation,
            &stats,
            input.predictor,
            &mut registry,
            weights,
            &input.group_cfg,
            &input.opt,
            true,
            backend,
        )?;
        weights = w;
        let key = format!("{group_id}#transfer");
        let entry = match &run {
            Some(r) => r.plan_entry(),
            None => artifact.plan.groups.get(group_id).cloned().unwrap_or_else(|| PlanEntry {
                group_label: Some(group.label_text()),
                ..artifact.plan.default.clone()
            }),
        };
        out.plan.groups.insert(key.clone(), entry);
        for m in members {
            out.plan.user_groups.insert(m.clone(), key.clone());
        }
        out.runs.extend(run);
    }
    // Newcomers without a usable sample fall back to the city-level entry.
    out.weights = weights;
    out.registry = registry;
    Ok(out)
}

/// Per-city share of a fused corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionShare {
    pub city: String,
    pub requested: usize,
    pub available: usize,
    pub drawn: usize,
}

/// Equal quotas (remainder round-robin in city order), capped by availability, with
/// any shortfall handed round-robin to cities that still have users.
pub fn fusion_allocation(available: &[usize], total: usize) -> Vec<(usize, usize)> {
    let k = available.len();
    let quota: Vec<usize> = (0..k).map(|i| total / k + usize::from(i < total % k)).collect();
    let mut drawn: Vec<usize> = quota.iter().zip(available).map(|(q, a)| *q.min(a)).collect();
    let mut shortfall = total.saturating_sub(drawn.iter().sum());
    while shortfall > 0 {
        let mut progressed = false;
        for i in 0..k {
            if shortfall > 0 && drawn[i] < available[i] {
                drawn[i] += 1;
                shortfall -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota.into_iter().zip(drawn).collect()
}

fn namespaced(city: &str, user: &str) -> String {
    format!("{city}:{user}")
}

/// Draws users from several cities into one corpus with `city:user` ids.
pub fn fuse_cities(corpora: &[Corpus], total_users: usize, seed: u64) -> Result<(Corpus, Vec<FusionShare>)> {
    if corpora.len() < 2 {
        return Err(Error::invalid("city fusion needs at least two corpora"));
    }
    if total_users == 0 {
        return Err(Error::invalid("fused user count must be positive"));
    }
    let available: Vec<usize> = corpora.iter().map(Corpus::user_count).collect();
    let alloc = fusion_allocation(&available, total_users);
    let mut users: BTreeMap<String, Vec<Session>> = BTreeMap::new();
    let mut shares = Vec::with_capacity(corpora.len());
    for (i, (corpus, (requested, drawn))) in corpora.iter().zip(alloc).enumerate() {
        if drawn < requested {
            log::warn!("{} has only {} users; taking all of them for fusion", corpus.city, corpus.user_count());
        }
        let ids: Vec<String> = corpus.users.keys().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for user in pick_sorted(&ids, drawn, &mut rng) {
            let id = namespaced(&corpus.city, &user);
            let sessions = corpus.users[&user]
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.user_id = id.clone();
                    for stay in &mut s.stays {
                        stay.user_id = id.clone();
                    }
                    s
                })
                .collect();
            users.insert(id, sessions);
        }
        shares.push(FusionShare {
            city: corpus.city.clone(),
            requested,
            available: corpus.user_count(),
            drawn,
        });
    }
    if shares.iter().map(|s| s.drawn).sum::<usize>() < total_users {
        log::warn!("only {} users exist across all cities; fused corpus is smaller than {total_users}", users.len());
    }
    let tz = corpora[0].tz_offset_secs;
    let tz_offset_secs = if corpora.iter().all(|c| c.tz_offset_secs == tz) {
        tz
    } else {
        log::warn!("fused cities have different time zones; local-time features use UTC");
        0
    };
    let city = format!("fused({})", corpora.iter().map(|c| c.city.as_str()).collect::<Vec<_>>().join("+"));
    Ok((
        Corpus {
            city,
            tz_offset_secs,
            grid: None,
            users,
        },
        shares,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Stay;
    use proptest::prelude::*;

    fn corpus(city: &str, n_users: usize) -> Corpus {
        let stays = (0..n_users)
            .flat_map(|u| {
                (0..4).map(move |k| Stay {
                    user_id: format!("u{u:03}"),
                    timestamp: 1_700_000_000 + k * 3600,
                    location_id: format!("l{k}"),
                    coord: None,
                    venue_category: None,
                })
            })
            .collect();
        Corpus::build(city, stays, Default::default(), 0, None)
    }

    #[test]
    fn allocation_examples() {
        let four: Vec<usize> = fusion_allocation(&[100; 4], 200).into_iter().map(|p| p.1).collect();
        assert_eq!(four, [50, 50, 50, 50]);
        let three: Vec<usize> = fusion_allocation(&[100; 3], 200).into_iter().map(|p| p.1).collect();
        assert_eq!(three, [67, 67, 66]);
        // A short city gives its shortfall to the others in city order.
        assert_eq!(fusion_allocation(&[10, 100, 100], 90), [(30, 10), (30, 40), (30, 40)]);
        assert_eq!(fusion_allocation(&[3, 4], 20), [(10, 3), (10, 4)]);
    }

    #[test]
    fn fused_ids_are_namespaced_and_reproducible() {
        let cs = [corpus("a", 8), corpus("b", 8), corpus("c", 2)];
        let (fused, shares) = fuse_cities(&cs, 12, 7).unwrap();
        assert_eq!(fused.user_count(), shares.iter().map(|s| s.drawn).sum::<usize>());
        assert_eq!(fused.user_count(), 12);
        assert_eq!(shares[2].drawn, 2);
        assert!(fused.users.keys().all(|u| u.contains(':')));
        for (id, sessions) in &fused.users {
            assert!(sessions.iter().flat_map(|s| &s.stays).all(|s| &s.user_id == id));
        }
        assert_eq!(fuse_cities(&cs, 12, 7).unwrap().0, fused);
        assert!(fuse_cities(&cs[..1], 12, 7).is_err());
    }

    proptest! {
        #[test]
        fn allocation_count_oracle(avail in prop::collection::vec(0usize..30, 2..6), total in 1usize..150) {
            let alloc = fusion_allocation(&avail, total);
            let drawn: usize = alloc.iter().map(|p| p.1).sum();
            prop_assert_eq!(drawn, total.min(avail.iter().sum()));
            for ((q, d), a) in alloc.iter().zip(&avail) {
                prop_assert!(d <= a);
                // A city below its quota was exhausted.
                if d < q { prop_assert_eq!(d, a); }
            }
            let quotas: Vec<usize> = alloc.iter().map(|p| p.0).collect();
            prop_assert_eq!(quotas.iter().sum::<usize>(), total);
            prop_assert!(quotas.iter().max().unwrap() - quotas.iter().min().unwrap() <= 1);
        }

        #[test]
        fn fusion_draws_are_disjoint(seed in any::<u64>(), total in 2usize..20) {
            let cs = [corpus("x", 7), corpus("y", 9)];
            let (fused, shares) = fuse_cities(&cs, total, seed).unwrap();
            prop_assert_eq!(fused.user_count(), shares.iter().map(|s| s.drawn).sum::<usize>());
        }
    }
}
