use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_contributions, generate_new_features, objective_from_records, register_generated, select_features, FeatureSet,
    FeatureWeights, FsVariant, ObjectiveConfig, SelectionConfig,
};
use crate::corpus::PredictionSample;
use crate::error::{Error, Result};
use crate::featpool::{FeatureRegistry, GeneratedFeature};
use crate::llm::ChatBackend;
use crate::predictor::{FeaturePlan, PlanEntry, PredictionRecord, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub objective: ObjectiveConfig,
    pub variant: FsVariant,
    pub k_max: usize,
    pub model_id: String,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            objective: ObjectiveConfig::default(),
            variant: FsVariant::Lnfw,
            k_max: 12,
            model_id: "gpt-4o-mini".into(),
            seed: 42,
        }
    }
}

/// Which weights a run reads and writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightScope {
    Global,
    /// Reads `alpha·group + (1−alpha)·global`; writes the group map and the global map
    /// with contributions scaled by `share` (the group's fraction of all users).
    Group {
        group_id: String,
        alpha: f64,
        share: f64,
        /// Injected into prompts and selection as the group-label feature.
        label: Option<String>,
    },
}

impl WeightScope {
    fn label(&self) -> Option<&str> {
        match self {
            Self::Group { label, .. } => label.as_deref(),
            Self::Global => None,
        }
    }
}

pub struct OptimizeInput<'a> {
    pub city: &'a str,
    pub validation: &'a [PredictionSample],
    pub corpus_stats: &'a str,
    pub predictor: &'a Predictor<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub generated: Vec<String>,
    pub selection: FeatureSet,
    pub j: f64,
    pub acc1: f64,
    pub acc5: f64,
    pub all_failed: bool,
    pub contributions: BTreeMap<String, f64>,
    /// Effective weights used for this round's prompts.
    pub weights_used: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationArtifact {
    pub city: String,
    pub model_id: String,
    pub variant: FsVariant,
    pub lambda: f64,
    pub seed: u64,
    pub iterations: usize,
    pub scope: WeightScope,
    pub validation_sample_ids: Vec<String>,
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub best_j: f64,
    pub best: FeatureSet,
    pub best_weights: BTreeMap<String, f64>,
    pub final_weights: FeatureWeights,
    pub generated: Vec<GeneratedFeature>,
}

impl OptimizationArtifact {
    pub fn plan_entry(&self) -> PlanEntry {
        PlanEntry {
            selected: self.best.selected.clone(),
            weights: self.best_weights.clone(),
            group_label: self.scope.label().map(str::to_string),
        }
    }
}

pub fn blend(global: &BTreeMap<String, f64>, group: Option<&BTreeMap<String, f64>>, alpha: f64) -> BTreeMap<String, f64> {
    global
        .iter()
        .map(|(id, &g)| {
            let wg = group.and_then(|m| m.get(id)).copied().unwrap_or(g);
            (id.clone(), alpha * wg + (1.0 - alpha) * g)
        })
        .collect()
}

/// Applies contributions to one group's weights and, scaled by `share`, to the global weights.
pub fn propagate_group_update(
    weights: &FeatureWeights,
    group_id: &str,
    contributions: &BTreeMap<String, f64>,
    share: f64,
) -> Result<FeatureWeights> {
    let (eta, w_max) = (weights.params.eta, weights.params.w_max);
    let mut out = weights.clone();
    let group = weights.per_group.get(group_id).unwrap_or(&weights.global);
    out.per_group
        .insert(group_id.to_string(), apply_contributions(group, contributions, eta, w_max)?);
    let scaled: BTreeMap<String, f64> = contributions.iter().map(|(k, v)| (k.clone(), v * share)).collect();
    out.global = apply_contributions(&weights.global, &scaled, eta, w_max)?;
    Ok(out)
}

fn effective(weights: &FeatureWeights, scope: &WeightScope) -> BTreeMap<String, f64> {
    match scope {
        WeightScope::Global => weights.global.clone(),
        WeightScope::Group { group_id, alpha, .. } => blend(&weights.global, weights.per_group.get(group_id), *alpha),
    }
}

fn run_entry(
    input: &OptimizeInput,
    registry: &FeatureRegistry,
    entry: &PlanEntry,
    samples: &[PredictionSample],
    backend: &dyn ChatBackend,
) -> Result<Vec<PredictionRecord>> {
    let plan = FeaturePlan {
        default: entry.clone(),
        ..FeaturePlan::default()
    };
    input.predictor.predict_batch(samples, registry, &plan, backend)
}

/// Iterative generate → select → evaluate → reweight loop with best-so-far retention.
pub fn optimize(
    input: &OptimizeInput,
    registry: &mut FeatureRegistry,
    mut weights: FeatureWeights,
    scope: &WeightScope,
    cfg: &OptimizeConfig,
    backend: &dyn ChatBackend,
) -> Result<OptimizationArtifact> {
    if input.validation.is_empty() {
        return Err(Error::invalid(format!("no validation samples for {}", input.city)));
    }
    if cfg.iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    cfg.objective.validate().map_err(Error::Invalid)?;
    let lambda = cfg.objective.lambda;

    let n = cfg.objective.validation_sample_count.min(input.validation.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked = rand::seq::index::sample(&mut rng, input.validation.len(), n).into_vec();
    picked.sort_unstable();
    let subset: Vec<PredictionSample> = picked.iter().map(|&i| input.validation[i].clone()).collect();
    let n_probe = cfg.objective.probe_cap.min(subset.len());

    if scope.label().is_some() {
        registry.ensure_group_label();
    }
    weights.cover(registry);
    if let WeightScope::Group { group_id, .. } = scope {
        if !weights.per_group.contains_key(group_id) {
            weights.per_group.insert(group_id.clone(), weights.global.clone());
        }
    }

    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(usize, f64, FeatureSet, BTreeMap<String, f64>)> = None;
    for iteration in 1..=cfg.iterations {
        let mut generated = Vec::new();
        if cfg.variant.generates() {
            let outcome = generate_new_features(&registry.describe(), input.corpus_stats, backend, &cfg.model_id);
            generated = register_generated(registry, &outcome);
            weights.cover(registry);
        }

        let eff = effective(&weights, scope);
        let selection_cfg = SelectionConfig {
            k_max: cfg.k_max,
            tau_high: weights.params.tau_high,
            use_high_weight: cfg.variant != FsVariant::Ol,
            generated: if cfg.variant.generates() {
                registry.generated().keys().cloned().collect()
            } else {
                vec![]
            },
            group_label: scope.label().is_some(),
            model_id: cfg.model_id.clone(),
        };
        let selection = select_features(registry, &eff, backend, &selection_cfg);
        let entry = PlanEntry {
            selected: selection.selected.clone(),
            weights: eff.clone(),
            group_label: scope.label().map(str::to_string),
        };

        let subset_records = run_entry(input, registry, &entry, &subset, backend)?;
        let value = objective_from_records(&subset_records, lambda)?;

        let mut contributions = BTreeMap::new();
        if cfg.variant.updates_weights() {
            let probe = &subset[..n_probe];
            let base = objective_from_records(&subset_records[..n_probe], lambda)?.j;
            for id in &entry.selected {
                let reduced = PlanEntry {
                    selected: entry.selected.iter().filter(|s| *s != id).cloned().collect(),
                    ..entry.clone()
                };
                let without = objective_from_records(&run_entry(input, registry, &reduced, probe, backend)?, lambda)?.j;
                contributions.insert(id.clone(), base - without);
            }
            match scope {
                WeightScope::Global => {
                    let (eta, w_max) = (weights.params.eta, weights.params.w_max);
                    weights.global = apply_contributions(&weights.global, &contributions, eta, w_max)?;
                }
                WeightScope::Group { group_id, share, .. } => {
                    weights = propagate_group_update(&weights, group_id, &contributions, *share)?;
                }
            }
        }

        log::info!(
            "{} iteration {iteration}: J={:.4} acc1={:.4} acc5={:.4} selected={}",
            input.city,
            value.j,
            value.acc1,
            value.acc5,
            selection.selected.join(",")
        );
        if best.as_ref().is_none_or(|b| value.j > b.1) {
            best = Some((iteration, value.j, selection.clone(), eff.clone()));
        }
        records.push(IterationRecord {
            iteration,
            generated,
            selection,
            j: value.j,
            acc1: value.acc1,
            acc5: value.acc5,
            all_failed: value.all_failed,
            contributions,
            weights_used: eff,
        });
    }

    let (best_iteration, best_j, best_set, best_weights) = best.expect("at least one iteration");
    Ok(OptimizationArtifact {
        city: input.city.to_string(),
        model_id: cfg.model_id.clone(),
        variant: cfg.variant,
        lambda,
        seed: cfg.seed,
        iterations: cfg.iterations,
        scope: scope.clone(),
        validation_sample_ids: subset.iter().map(|s| s.sample_id.clone()).collect(),
        records,
        best_iteration,
        best_j,
        best: best_set,
        best_weights,
        final_weights: weights,
        generated: registry.generated().values().cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featagent::WeightParams;

    #[test]
    fn two_group_updates_scale_into_global() {
        let mut w = FeatureWeights {
            global: BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]),
            per_group: BTreeMap::new(),
            params: WeightParams::default(),
        };
        w = propagate_group_update(&w, "g1", &BTreeMap::from([("a".to_string(), 0.1)]), 0.6).unwrap();
        w = propagate_group_update(&w, "g2", &BTreeMap::from([("a".to_string(), -0.2), ("b".to_string(), 0.05)]), 0.4).unwrap();
        // 0.5 + 0.6·0.1 − 0.4·0.2 and 0.5 + 0.4·0.05.
        assert!((w.global["a"] - 0.48).abs() < 1e-12);
        assert!((w.global["b"] - 0.52).abs() < 1e-12);
        assert!((w.per_group["g1"]["a"] - 0.6).abs() < 1e-12);
        assert!((w.per_group["g2"]["a"] - 0.36).abs() < 1e-12);
    }

    #[test]
    fn blend_boundaries() {
        let g = BTreeMap::from([("a".to_string(), 0.4), ("b".to_string(), 0.1)]);
        let grp = BTreeMap::from([("a".to_string(), 0.8)]);
        assert_eq!(blend(&g, Some(&grp), 0.0), g);
        assert_eq!(blend(&g, Some(&grp), 1.0)["a"], 0.8);
        assert!((blend(&g, Some(&grp), 0.5)["a"] - 0.6).abs() < 1e-12);
        assert_eq!(blend(&g, Some(&grp), 0.5)["b"], 0.1);
    }
}
