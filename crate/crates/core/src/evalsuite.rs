//! Fairness distributions, output homogeneity and counting accuracy over
//! ingested per-image annotations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{bootstrap_proportion_ci, BootstrapError};
use crate::model::{Axis, CategoricalLabel, CountAnnotation, ModelError, ModelId};

pub const DEFAULT_IMAGES_PER_PROMPT: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("images_per_prompt must be at least 2, got {0}")]
    ImagesPerPrompt(u32),
    #[error("no annotations for model {0}")]
    Empty(String),
    #[error("annotation {prompt_id}: target count {target} outside 1..=10")]
    TargetOutOfRange { prompt_id: String, target: u32 },
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisDistribution {
    pub axis: Axis,
    pub n_images: u64,
    pub counts: BTreeMap<String, u64>,
    pub proportions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub model: ModelId,
    pub distributions: Vec<AxisDistribution>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub homogeneity: Vec<HomogeneityReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn check_labels(labels: &[CategoricalLabel]) -> Result<(), EvalError> {
    for l in labels {
        l.axis.check_category(&l.category)?;
    }
    Ok(())
}

/// Per-axis category proportions for one model. Axes without any label are
/// left out and reported in the returned warnings.
pub fn fairness_distribution(
    labels: &[CategoricalLabel],
    model: &ModelId,
) -> Result<(Vec<AxisDistribution>, Vec<String>), EvalError> {
    check_labels(labels)?;
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for axis in Axis::ALL {
        let mut counts: BTreeMap<String, u64> = axis.categories().iter().map(|c| (c.to_string(), 0)).collect();
        let mut n = 0u64;
        for l in labels.iter().filter(|l| &l.model == model && l.axis == axis) {
            *counts.get_mut(&l.category).expect("validated category") += 1;
            n += 1;
        }
        if n == 0 {
            warnings.push(format!("no {axis} labels for {model}"));
            continue;
        }
        let proportions = counts.iter().map(|(c, k)| (c.clone(), *k as f64 / n as f64)).collect();
        out.push(AxisDistribution { axis, n_images: n, counts, proportions });
    }
    Ok((out, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub axis: Axis,
    pub percent_homogeneous: f64,
    pub prompts_homogeneous: u64,
    pub prompts_evaluated: u64,
    pub prompts_skipped: u64,
}

/// Share of prompts whose labeled images all fall in one category.
///
/// A prompt is evaluated on an axis when at least `images_per_prompt`
/// distinct images carry a label on it; other prompts of the model are
/// counted as skipped.
pub fn homogeneity(
    labels: &[CategoricalLabel],
    model: &ModelId,
    images_per_prompt: u32,
) -> Result<(Vec<HomogeneityReport>, Vec<String>), EvalError> {
    if images_per_prompt < 2 {
        return Err(EvalError::ImagesPerPrompt(images_per_prompt));
    }
    check_labels(labels)?;
    let own: Vec<&CategoricalLabel> = labels.iter().filter(|l| &l.model == model).collect();
    let prompts: BTreeSet<&str> = own.iter().map(|l| l.prompt_id.as_str()).collect();

    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for axis in Axis::ALL {
        let mut per_prompt: BTreeMap<&str, (BTreeSet<u32>, BTreeSet<&str>)> = BTreeMap::new();
        for l in own.iter().filter(|l| l.axis == axis) {
            let e = per_prompt.entry(l.prompt_id.as_str()).or_default();
            e.0.insert(l.image_index);
            e.1.insert(l.category.as_str());
        }
        let mut evaluated = 0u64;
        let mut homogeneous = 0u64;
        for (images, cats) in per_prompt.values() {
            if images.len() < images_per_prompt as usize {
                continue;
            }
            evaluated += 1;
            if cats.len() == 1 {
                homogeneous += 1;
            }
        }
        if evaluated == 0 {
            warnings.push(format!("no prompt of {model} has {images_per_prompt} labeled images on {axis}"));
            continue;
        }
        out.push(HomogeneityReport {
            axis,
            percent_homogeneous: 100.0 * homogeneous as f64 / evaluated as f64,
            prompts_homogeneous: homogeneous,
            prompts_evaluated: evaluated,
            prompts_skipped: prompts.len() as u64 - evaluated,
        });
    }
    Ok((out, warnings))
}

/// Distribution and homogeneity together, as written to `fairness_report.json`.
pub fn fairness_report(labels: &[CategoricalLabel], model: &ModelId, images_per_prompt: u32) -> Result<FairnessReport, EvalError> {
    let (distributions, mut warnings) = fairness_distribution(labels, model)?;
    let (homogeneity, w) = homogeneity(labels, model, images_per_prompt)?;
    warnings.extend(w);
    Ok(FairnessReport { model: model.clone(), distributions, homogeneity, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCi {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingReport {
    pub model: ModelId,
    pub confidence_level: f64,
    pub overall: AccuracyCi,
    pub per_number: BTreeMap<u32, AccuracyCi>,
    pub per_sentence_type: BTreeMap<String, AccuracyCi>,
}

impl CountingReport {
    /// Accuracy difference in percentage points between two target numbers.
    pub fn gap_points(&self, from: u32, to: u32) -> Option<f64> {
        Some(100.0 * (self.per_number.get(&from)?.accuracy - self.per_number.get(&to)?.accuracy))
    }
}

fn accuracy(outcomes: &[bool], level: f64, n_boot: usize, seed: u64) -> Result<AccuracyCi, EvalError> {
    let ci = bootstrap_proportion_ci(outcomes, level, n_boot, seed)?;
    let correct = outcomes.iter().filter(|b| **b).count() as u64;
    let total = outcomes.len() as u64;
    Ok(AccuracyCi { correct, total, accuracy: correct as f64 / total as f64, ci_low: ci.ci_low, ci_high: ci.ci_high })
}

/// Exact-count accuracy for one model, overall and grouped by target
/// number and by sentence type.
pub fn counting_report(
    annotations: &[CountAnnotation],
    model: &ModelId,
    confidence_level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<CountingReport, EvalError> {
    let own: Vec<&CountAnnotation> = annotations.iter().filter(|a| &a.model == model).collect();
    if own.is_empty() {
        return Err(EvalError::Empty(model.to_string()));
    }
    if let Some(a) = own.iter().find(|a| !(1..=10).contains(&a.target_count)) {
        return Err(EvalError::TargetOutOfRange { prompt_id: a.prompt_id.clone(), target: a.target_count });
    }

    let mut by_number: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    let mut by_type: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    let mut all = Vec::with_capacity(own.len());
    for a in &own {
        all.push(a.is_exact());
        by_number.entry(a.target_count).or_default().push(a.is_exact());
        by_type.entry(a.sentence_type.clone()).or_default().push(a.is_exact());
    }

    let overall = accuracy(&all, confidence_level, n_boot, seed)?;
    let mut per_number = BTreeMap::new();
    for (k, v) in &by_number {
        per_number.insert(*k, accuracy(v, confidence_level, n_boot, seed.wrapping_add(*k as u64))?);
    }
    let mut per_sentence_type = BTreeMap::new();
    for (i, (k, v)) in by_type.iter().enumerate() {
        per_sentence_type.insert(k.clone(), accuracy(v, confidence_level, n_boot, seed.wrapping_add(100 + i as u64))?);
    }
    Ok(CountingReport { model: model.clone(), confidence_level, overall, per_number, per_sentence_type })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: &str) -> ModelId {
        ModelId::new(s).unwrap()
    }

    fn label(prompt: usize, image: u32, axis: Axis, cat: &str) -> CategoricalLabel {
        CategoricalLabel { prompt_id: format!("p{prompt}"), model: m("x"), image_index: image, axis, category: cat.into() }
    }

    fn ann(target: u32, got: u32, kind: &str) -> CountAnnotation {
        CountAnnotation {
            prompt_id: format!("c{target}-{got}"),
            model: m("x"),
            target_count: target,
            sentence_type: kind.into(),
            annotated_count: got,
            rater_id: None,
            timestamp: None,
        }
    }

    #[test]
    fn gender_split() {
        let labels: Vec<_> =
            (0..1000).map(|i| label(i / 4, (i % 4) as u32, Axis::PerceivedGender, if i < 625 { "masculine" } else { "feminine" })).collect();
        let (d, warnings) = fairness_distribution(&labels, &m("x")).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(warnings.len(), 2);
        assert_eq!(d[0].proportions["masculine"], 0.625);
        assert_eq!(d[0].proportions["feminine"], 0.375);
        let total: f64 = d[0].proportions.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_unknown_category() {
        let labels = vec![label(0, 0, Axis::PerceivedAge, "ancient")];
        assert!(matches!(fairness_distribution(&labels, &m("x")), Err(EvalError::Model(_))));
    }

    #[test]
    fn homogeneity_trivial_cases() {
        let same: Vec<_> = (0..40).map(|i| label(i / 4, (i % 4) as u32, Axis::PerceivedAge, "30+")).collect();
        let (h, _) = homogeneity(&same, &m("x"), 4).unwrap();
        assert_eq!(h[0].percent_homogeneous, 100.0);
        let split: Vec<_> =
            (0..40).map(|i| label(i / 4, (i % 4) as u32, Axis::PerceivedAge, if i % 4 < 2 { "30+" } else { "0-30" })).collect();
        let (h, _) = homogeneity(&split, &m("x"), 4).unwrap();
        assert_eq!(h[0].percent_homogeneous, 0.0);
        assert_eq!(homogeneity(&split, &m("x"), 1), Err(EvalError::ImagesPerPrompt(1)));
    }

    #[test]
    fn short_prompts_are_skipped() {
        let mut labels: Vec<_> = (0..8).map(|i| label(i / 4, (i % 4) as u32, Axis::PerceivedAge, "30+")).collect();
        labels.push(label(9, 0, Axis::PerceivedAge, "0-30"));
        let (h, _) = homogeneity(&labels, &m("x"), 4).unwrap();
        assert_eq!(h[0].prompts_evaluated, 2);
        assert_eq!(h[0].prompts_skipped, 1);
    }

    #[test]
    fn counting_groups_aggregate_to_overall() {
        let mut anns = Vec::new();
        for t in 1..=10u32 {
            for i in 0..20u32 {
                anns.push(ann(t, if i < 20 - t { t } else { t + 1 }, if i % 2 == 0 { "plain" } else { "attribute" }));
            }
        }
        let r = counting_report(&anns, &m("x"), 0.95, 200, 3).unwrap();
        let weighted: f64 = r.per_number.values().map(|a| a.accuracy * a.total as f64).sum::<f64>() / r.overall.total as f64;
        assert!((weighted - r.overall.accuracy).abs() < 1e-12);
        assert_eq!(r.per_number.len(), 10);
        assert!(r.overall.ci_low <= r.overall.accuracy && r.overall.accuracy <= r.overall.ci_high);
    }

    #[test]
    fn counting_rejects_bad_targets() {
        assert!(matches!(counting_report(&[ann(11, 11, "p")], &m("x"), 0.95, 10, 0), Err(EvalError::TargetOutOfRange { .. })));
        assert!(matches!(counting_report(&[], &m("x"), 0.95, 10, 0), Err(EvalError::Empty(_))));
    }
}
