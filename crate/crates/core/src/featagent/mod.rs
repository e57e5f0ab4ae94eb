//! Feature optimization agent: generation, selection, objective evaluation and
//! weight maintenance.

mod generate;
mod optimize;
mod select;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::PredictionSample;
use crate::error::{Error, Result};
use crate::eval::acc_at_k;
use crate::featpool::FeatureRegistry;
use crate::llm::ChatBackend;
use crate::predictor::{FeaturePlan, ParseStatus, PlanEntry, PredictionRecord, Predictor};

pub use generate::{generate_new_features, register_generated, GenerationOutcome, GENERATION_MARKER};
pub use optimize::{blend, optimize, propagate_group_update, IterationRecord, OptimizationArtifact, OptimizeConfig, OptimizeInput, WeightScope};
pub use select::{select_features, SelectionConfig, MANDATORY_CORE, SELECTION_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FsVariant {
    /// Agent selection only: no generation, no high-weight set, frozen weights.
    #[serde(rename = "FS-OL")]
    Ol,
    /// Adds generated features; weights stay frozen.
    #[serde(rename = "FS-LNF")]
    Lnf,
    /// Full loop with weight maintenance.
    #[default]
    #[serde(rename = "FS-LNFW")]
    Lnfw,
}

impl FsVariant {
    pub fn generates(self) -> bool {
        self != Self::Ol
    }

    pub fn updates_weights(self) -> bool {
        self == Self::Lnfw
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ol => "FS-OL",
            Self::Lnf => "FS-LNF",
            Self::Lnfw => "FS-LNFW",
        }
    }
}

impl std::str::FromStr for FsVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "FS-OL" => Ok(Self::Ol),
            "FS-LNF" => Ok(Self::Lnf),
            "FS-LNFW" => Ok(Self::Lnfw),
            _ => Err(format!("unknown feature-selection variant `{s}` (expected FS-OL, FS-LNF or FS-LNFW)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub initial: f64,
    pub eta: f64,
    pub w_max: f64,
    pub tau_high: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            initial: 0.5,
            eta: 1.0,
            w_max: 1.0,
            tau_high: 0.7,
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return Err("w_max must be positive".into());
        }
        if !(0.0..=self.w_max).contains(&self.initial) {
            return Err("initial weight must lie in [0, w_max]".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err("eta must be non-negative".into());
        }
        if !(0.0..=self.w_max).contains(&self.tau_high) {
            return Err("tau_high must lie in [0, w_max]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub global: BTreeMap<String, f64>,
    pub per_group: BTreeMap<String, BTreeMap<String, f64>>,
    pub params: WeightParams,
}

impl FeatureWeights {
    /// Every registered feature at the initial weight.
    pub fn new(registry: &FeatureRegistry, params: WeightParams) -> Self {
        let mut w = Self {
            global: BTreeMap::new(),
            per_group: BTreeMap::new(),
            params,
        };
        w.cover(registry);
        w
    }

    /// Gives features added to the registry since construction the initial weight.
    pub fn cover(&mut self, registry: &FeatureRegistry) {
        for id in registry.ids() {
            self.global.entry(id.to_string()).or_insert(self.params.initial);
        }
        for group in self.per_group.values_mut() {
            for id in registry.ids() {
                let g = self.global[id];
                group.entry(id.to_string()).or_insert(g);
            }
        }
    }

    pub fn get(&self, id: &str) -> f64 {
        self.global.get(id).copied().unwrap_or(self.params.initial)
    }

    pub fn group(&self, group_id: &str) -> Option<&BTreeMap<String, f64>> {
        self.per_group.get(group_id)
    }

    pub fn check(&self, registry: &FeatureRegistry) -> Result<()> {
        let maps = std::iter::once(&self.global).chain(self.per_group.values());
        for map in maps {
            for (id, w) in map {
                if !registry.contains(id) {
                    return Err(Error::UnknownFeature(id.clone()));
                }
                if !(0.0..=self.params.w_max).contains(w) {
                    return Err(Error::invalid(format!("weight of {id} is {w}, outside [0, {}]", self.params.w_max)));
                }
            }
        }
        Ok(())
    }
}

/// `w ← clamp(w + eta·ΔJ, 0, w_max)` on a single weight map. Errors on ids absent from `map`.
pub fn apply_contributions(
    map: &BTreeMap<String, f64>,
    contributions: &BTreeMap<String, f64>,
    eta: f64,
    w_max: f64,
) -> Result<BTreeMap<String, f64>> {
    let mut out = map.clone();
    for (id, delta) in contributions {
        if !delta.is_finite() {
            return Err(Error::invalid(format!("contribution for {id} is not finite")));
        }
        let w = out.get_mut(id).ok_or_else(|| Error::UnknownFeature(id.clone()))?;
        *w = (*w + eta * delta).clamp(0.0, w_max);
    }
    Ok(out)
}

/// Applies marginal objective contributions to the global weights. The input is untouched.
pub fn update_weights(weights: &FeatureWeights, contributions: &BTreeMap<String, f64>) -> Result<FeatureWeights> {
    Ok(FeatureWeights {
        global: apply_contributions(&weights.global, contributions, weights.params.eta, weights.params.w_max)?,
        ..weights.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    /// Size of the seeded validation subset evaluated each round.
    pub validation_sample_count: usize,
    /// Samples used for leave-one-out contribution estimates.
    pub probe_cap: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            validation_sample_count: 50,
            probe_cap: 20,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.validation_sample_count == 0 || self.probe_cap == 0 {
            return Err("validation_sample_count and probe_cap must be positive".into());
        }
        Ok(())
    }
}

/// `λ·acc1 + (1−λ)·acc5`, evaluated exactly on the shortest decimal forms of the
/// inputs and rounded once, so decimal inputs give decimal answers
/// (`(0.5, 0.2, 0.4)` is `0.3`, not `0.30000000000000004`). Falls back to binary
/// arithmetic when the exact form would overflow.
pub fn composite_objective(lambda: f64, acc1: f64, acc5: f64) -> f64 {
    exact_objective(lambda, acc1, acc5).unwrap_or_else(|| lambda * acc1 + (1.0 - lambda) * acc5)
}

type Decimal = (i128, i32);

fn decimal(x: f64) -> Option<Decimal> {
    if !x.is_finite() {
        return None;
    }
    let s = format!("{x:e}");
    let (mantissa, exp) = s.split_once('e')?;
    let exp: i32 = exp.parse().ok()?;
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits: i128 = format!("{int}{frac}").parse().ok()?;
    Some((digits, exp - frac.len() as i32))
}

fn dec_add(a: Decimal, b: Decimal) -> Option<Decimal> {
    let e = a.1.min(b.1);
    let scale = |d: Decimal| d.0.checked_mul(10i128.checked_pow((d.1 - e) as u32)?);
    Some((scale(a)?.checked_add(scale(b)?)?, e))
}

fn dec_mul(a: Decimal, b: Decimal) -> Option<Decimal> {
    Some((a.0.checked_mul(b.0)?, a.1 + b.1))
}

fn exact_objective(lambda: f64, acc1: f64, acc5: f64) -> Option<f64> {
    let l = decimal(lambda)?;
    let one_minus = dec_add((1, 0), (-l.0, l.1))?;
    let j = dec_add(dec_mul(l, decimal(acc1)?)?, dec_mul(one_minus, decimal(acc5)?)?)?;
    format!("{}e{}", j.0, j.1).parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub j: f64,
    pub acc1: f64,
    pub acc5: f64,
    /// Every prediction failed to parse; the accuracies are zero by the miss rule.
    pub all_failed: bool,
}

/// Candidate, generated and high-weight ids plus the final ordered selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub std: Vec<String>,
    pub generated: Vec<String>,
    pub high_weight: Vec<String>,
    pub agent_picks: Vec<String>,
    pub group_label_feature: Option<String>,
    pub selected: Vec<String>,
    /// The selection reply was unusable and the top-K-by-weight fallback applied.
    pub fallback: bool,
}

pub fn objective_from_records(records: &[PredictionRecord], lambda: f64) -> Result<ObjectiveValue> {
    let acc1 = acc_at_k(records, 1)?;
    let acc5 = acc_at_k(records, 5)?;
    let all_failed = records.iter().all(|r| r.status == ParseStatus::Failed);
    if all_failed {
        log::warn!("every validation prediction failed to parse");
    }
    Ok(ObjectiveValue {
        j: composite_objective(lambda, acc1, acc5),
        acc1,
        acc5,
        all_failed,
    })
}

/// Predicts `samples` with one plan entry and scores the composite objective.
pub fn evaluate_objective(
    entry: &PlanEntry,
    samples: &[PredictionSample],
    lambda: f64,
    predictor: &Predictor,
    registry: &FeatureRegistry,
    backend: &dyn ChatBackend,
) -> Result<ObjectiveValue> {
    if samples.is_empty() {
        return Err(Error::invalid("objective needs at least one validation sample"));
    }
    let plan = FeaturePlan {
        default: entry.clone(),
        ..FeaturePlan::default()
    };
    let records = predictor.predict_batch(samples, registry, &plan, backend)?;
    objective_from_records(&records, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn objective_arithmetic() {
        assert_eq!(composite_objective(0.5, 0.2, 0.4), 0.3);
        assert_eq!(composite_objective(0.3, 1e-300, 0.5), 0.3 * 1e-300 + 0.7 * 0.5);
        assert_eq!(composite_objective(1.0, 0.37, 0.9), 0.37);
        assert_eq!(composite_objective(0.0, 0.37, 0.9), 0.9);
    }

    fn weights(pairs: &[(&str, f64)]) -> FeatureWeights {
        FeatureWeights {
            global: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            per_group: BTreeMap::new(),
            params: WeightParams::default(),
        }
    }

    #[test]
    fn update_rule() {
        let w = weights(&[("a", 0.5), ("b", 0.95), ("c", 0.3)]);
        let d = BTreeMap::from([("a".to_string(), 0.1), ("b".to_string(), 0.2)]);
        let out = update_weights(&w, &d).unwrap();
        assert!((out.global["a"] - 0.6).abs() < 1e-12);
        assert_eq!(out.global["b"], 1.0);
        assert_eq!(out.global["c"], 0.3);
        assert_eq!(w.global["a"], 0.5);
        assert_eq!(update_weights(&w, &d).unwrap(), out);
        let bad = BTreeMap::from([("zzz".to_string(), 0.1)]);
        assert!(matches!(update_weights(&w, &bad), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn registry_coverage() {
        let mut reg = FeatureRegistry::standard();
        let mut w = FeatureWeights::new(&reg, WeightParams::default());
        assert_eq!(w.global.len(), 16);
        reg.ensure_group_label();
        w.cover(&reg);
        assert_eq!(w.get("group_label"), 0.5);
        w.check(&reg).unwrap();
        w.global.insert("ghost".into(), 0.1);
        assert!(w.check(&reg).is_err());
    }

    proptest! {
        #[test]
        fn weights_stay_in_range(seq in prop::collection::vec(prop::collection::vec((0usize..4, -2.0f64..2.0), 0..6), 1..30)) {
            let ids = ["a", "b", "c", "d"];
            let mut w = weights(&[("a", 0.5), ("b", 0.5), ("c", 0.5), ("d", 0.5)]);
            for step in seq {
                let d: BTreeMap<String, f64> = step.into_iter().map(|(i, v)| (ids[i].to_string(), v)).collect();
                w = update_weights(&w, &d).unwrap();
                prop_assert!(w.global.values().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn objective_close_to_binary_form(lambda in 0.0f64..=1.0, a1 in 0.0f64..=1.0, a5 in 0.0f64..=1.0) {
            let plain = lambda * a1 + (1.0 - lambda) * a5;
            prop_assert!((composite_objective(lambda, a1, a5) - plain).abs() <= 1e-15);
        }

        #[test]
        fn objective_monotone(lambda in 0.001f64..0.999, a1 in 0.0f64..1.0, a5 in 0.0f64..1.0, bump in 1e-6f64..0.5) {
            prop_assert!(composite_objective(lambda, a1 + bump, a5) > composite_objective(lambda, a1, a5));
            prop_assert!(composite_objective(lambda, a1, a5 + bump) > composite_objective(lambda, a1, a5));
        }
    }
}
