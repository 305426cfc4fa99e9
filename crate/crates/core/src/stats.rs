//! Hypothesis tests and the win/loss/tie classification used to check
//! automatic metrics against human side-by-side judgments.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::bootstrap::{self, percentile_interval, BootstrapError};
use crate::elo::{tally_win_rate, PairTally, TiePolicy};
use crate::model::{Choice, MetricScore, ModelId, RatingRecord, Study};

pub const DEFAULT_EXACT_THRESHOLD: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least one paired observation")]
    Empty,
    #[error("need at least 2 usable pairs, got {0}")]
    InsufficientData(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("key sets differ: only in metric {only_metric:?}, only in human {only_human:?}")]
    KeyMismatch { only_metric: Vec<String>, only_human: Vec<String> },
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Sum of positive signed ranks.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: TestMethod,
}

/// Two-sided Wilcoxon signed-rank test on `x - y`.
///
/// Zero differences are dropped, tied magnitudes get midranks. Up to
/// `exact_threshold` non-zero differences the p-value comes from the exact
/// permutation distribution of the (mid)ranks; beyond that from the normal
/// approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], exact_threshold: usize) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    signed_rank_test(&diffs, exact_threshold)
}

/// Same as [`wilcoxon_signed_rank`] on precomputed differences.
pub fn signed_rank_test(diffs: &[f64], exact_threshold: usize) -> Result<TestResult, StatsError> {
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0, n_effective: 0, method: TestMethod::Exact });
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    // Doubled midranks stay integral.
    let mut doubled = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, times two
        let r2 = (i + 1 + j + 1) as u64;
        for d in doubled.iter_mut().take(j + 1).skip(i) {
            *d = r2;
        }
        tie_sizes.push((j - i + 1) as f64);
        i = j + 1;
    }
    let w_plus2: u64 = nz.iter().zip(&doubled).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
    let statistic = w_plus2 as f64 / 2.0;

    if n <= exact_threshold {
        let total2: u64 = doubled.iter().sum();
        let mut counts = vec![0f64; total2 as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &doubled {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let w = w_plus2 as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let upper: f64 = counts[w..].iter().sum::<f64>() / all;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(TestResult { statistic, p_value: p, n_effective: n, method: TestMethod::Exact });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes.iter().map(|t| t * t * t - t).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(TestResult { statistic, p_value: p, n_effective: n, method: TestMethod::NormalApprox })
}

/// Outcome of comparing model A against model B on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    WinA,
    WinB,
    Tie,
}

impl PairClass {
    pub fn mirrored(self) -> PairClass {
        match self {
            PairClass::WinA => PairClass::WinB,
            PairClass::WinB => PairClass::WinA,
            PairClass::Tie => PairClass::Tie,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            PairClass::WinA => "W",
            PairClass::WinB => "L",
            PairClass::Tie => "T",
        }
    }
}

/// Dataset plus model pair in canonical order (`model_a < model_b`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub dataset: String,
    pub model_a: ModelId,
    pub model_b: ModelId,
}

impl PairKey {
    /// Canonical key for `(first, second)`; the flag tells whether the
    /// order was swapped, in which case classes must be mirrored.
    pub fn canonical(dataset: impl Into<String>, first: ModelId, second: ModelId) -> (PairKey, bool) {
        let dataset = dataset.into();
        if first <= second {
            (PairKey { dataset, model_a: first, model_b: second }, false)
        } else {
            (PairKey { dataset, model_a: second, model_b: first }, true)
        }
    }

    pub fn label(&self) -> String {
        format!("{}: {} vs {}", self.dataset, self.model_a, self.model_b)
    }
}

pub type ClassMap = BTreeMap<PairKey, PairClass>;

/// JSON line of a class file (`--human`, `--metric`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairClassEntry {
    pub dataset: String,
    pub model_a: ModelId,
    pub model_b: ModelId,
    pub class: PairClass,
}

/// A named set of pair classifications, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFile {
    pub name: String,
    pub classes: Vec<PairClassEntry>,
}

impl ClassFile {
    pub fn from_map(name: impl Into<String>, map: &ClassMap) -> Self {
        Self {
            name: name.into(),
            classes: map
                .iter()
                .map(|(k, c)| PairClassEntry { dataset: k.dataset.clone(), model_a: k.model_a.clone(), model_b: k.model_b.clone(), class: *c })
                .collect(),
        }
    }

    /// Canonicalizes every entry; later duplicates overwrite earlier ones.
    pub fn to_map(&self) -> ClassMap {
        self.classes
            .iter()
            .map(|e| {
                let (key, swapped) = PairKey::canonical(e.dataset.clone(), e.model_a.clone(), e.model_b.clone());
                (key, if swapped { e.class.mirrored() } else { e.class })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanPairClass {
    pub class: PairClass,
    pub win_share: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Classifies one study from its ratings: `Tie` when the bootstrap
/// interval of model A's win share contains 0.5, otherwise the side of 0.5
/// the interval lies on.
pub fn classify_pair_human(
    records: &[RatingRecord],
    tie_policy: TiePolicy,
    confidence_level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<HumanPairClass, StatsError> {
    let choices: Vec<Choice> = records.iter().map(|r| r.choice).collect();
    classify_choices(&choices, tie_policy, confidence_level, n_boot, seed)
}

pub fn classify_choices(
    choices: &[Choice],
    tie_policy: TiePolicy,
    confidence_level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<HumanPairClass, StatsError> {
    if choices.is_empty() {
        return Err(StatsError::Empty);
    }
    bootstrap::check_level(confidence_level)?;
    if n_boot == 0 {
        return Err(BootstrapError::NoReplicates.into());
    }
    let share = tally_win_rate(&PairTally::from_choices(choices), tie_policy).map_err(|_| StatsError::InsufficientData(0))?;
    let reps = bootstrap::replicate(choices.len(), n_boot, seed, |idx| {
        let t = PairTally::from_choices(idx.iter().map(|&i| &choices[i]));
        tally_win_rate(&t, tie_policy).unwrap_or(f64::NAN)
    });
    let (lo, hi) = percentile_interval(&reps, confidence_level).unwrap_or((0.0, 1.0));
    let class = if lo <= 0.5 && 0.5 <= hi {
        PairClass::Tie
    } else if lo > 0.5 {
        PairClass::WinA
    } else {
        PairClass::WinB
    };
    Ok(HumanPairClass { class, win_share: share, ci_low: lo, ci_high: hi, n: choices.len() })
}

/// Human classes for every study with ratings, keyed by prompt set.
pub fn human_pair_classes(
    records: &[RatingRecord],
    studies: &[Study],
    tie_policy: TiePolicy,
    confidence_level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<BTreeMap<PairKey, HumanPairClass>, StatsError> {
    let mut by_study: BTreeMap<&str, Vec<Choice>> = BTreeMap::new();
    for r in records {
        by_study.entry(r.study_id.as_str()).or_default().push(r.choice);
    }
    let index: HashMap<&str, &Study> = studies.iter().map(|s| (s.study_id.as_str(), s)).collect();
    let mut out = BTreeMap::new();
    for (i, (id, choices)) in by_study.iter().enumerate() {
        let Some(s) = index.get(id) else { continue };
        let c = classify_choices(choices, tie_policy, confidence_level, n_boot, seed.wrapping_add(i as u64))?;
        let (key, _) = PairKey::canonical(s.prompt_set.clone(), s.model_a.clone(), s.model_b.clone());
        out.insert(key, c);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPairResult {
    pub class: PairClass,
    pub p_value: f64,
    pub mean_diff: f64,
    pub n_pairs: usize,
}

/// Classifies a pair from per-prompt metric scores: significant Wilcoxon
/// difference at `alpha` decides a win, the mean difference its direction.
/// Only prompts scored for both models are used.
pub fn classify_pair_metric(
    scores_a: &BTreeMap<String, f64>,
    scores_b: &BTreeMap<String, f64>,
    alpha: f64,
) -> Result<MetricPairResult, StatsError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        scores_a.iter().filter_map(|(p, a)| scores_b.get(p).map(|b| (*a, *b))).unzip();
    if xs.len() < 2 {
        return Err(StatsError::InsufficientData(xs.len()));
    }
    let test = wilcoxon_signed_rank(&xs, &ys, DEFAULT_EXACT_THRESHOLD)?;
    let mean_diff = xs.iter().zip(&ys).map(|(a, b)| a - b).sum::<f64>() / xs.len() as f64;
    let class = if test.p_value < alpha && mean_diff > 0.0 {
        PairClass::WinA
    } else if test.p_value < alpha && mean_diff < 0.0 {
        PairClass::WinB
    } else {
        PairClass::Tie
    };
    Ok(MetricPairResult { class, p_value: test.p_value, mean_diff, n_pairs: xs.len() })
}

/// Metric classes for every model pair within each dataset.
pub fn metric_pair_classes(scores: &[MetricScore], metric_name: &str, alpha: f64) -> Result<ClassMap, StatsError> {
    let mut table: BTreeMap<&str, BTreeMap<&ModelId, BTreeMap<String, f64>>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.metric_name == metric_name) {
        table.entry(s.dataset.as_str()).or_default().entry(&s.model).or_default().insert(s.prompt_id.clone(), s.score);
    }
    let mut out = ClassMap::new();
    for (dataset, models) in &table {
        let names: Vec<&&ModelId> = models.keys().collect();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                let r = classify_pair_metric(&models[**a], &models[**b], alpha)?;
                out.insert(PairKey { dataset: dataset.to_string(), model_a: (**a).clone(), model_b: (**b).clone() }, r.class);
            }
        }
    }
    Ok(out)
}

pub fn metric_names(scores: &[MetricScore]) -> Vec<String> {
    scores.iter().map(|s| s.metric_name.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: u64,
    pub total: u64,
}

impl Tally {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, hit: bool) {
        self.total += 1;
        if hit {
            self.correct += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAgreement {
    pub metric: String,
    pub per_dataset: BTreeMap<String, Tally>,
    pub overall: Tally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterMetricAgreement {
    pub metric_a: String,
    pub metric_b: String,
    /// Pairs where both metrics give the same class, over all pairs both scored.
    pub agreement: Tally,
    /// Among human-labeled pairs where the metrics agree, how often the
    /// agreed class matches the human one.
    pub conditional_human: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub metrics: Vec<MetricAgreement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inter_metric: Vec<InterMetricAgreement>,
}

/// Compares each metric's classes with the human classes.
///
/// Every human-labeled pair must be classified by every metric. Metrics may
/// also classify pairs without human labels; those count only toward
/// inter-metric agreement.
pub fn agreement_report(metrics: &[(String, ClassMap)], human: &ClassMap) -> Result<AgreementReport, StatsError> {
    for (name, classes) in metrics {
        let missing: Vec<String> = human.keys().filter(|k| !classes.contains_key(*k)).map(PairKey::label).collect();
        if !missing.is_empty() {
            return Err(StatsError::KeyMismatch {
                only_metric: vec![format!("metric {name} lacks {} human pairs", missing.len())],
                only_human: missing,
            });
        }
    }

    let per_metric = metrics
        .iter()
        .map(|(name, classes)| {
            let mut per_dataset: BTreeMap<String, Tally> = BTreeMap::new();
            let mut overall = Tally::default();
            for (key, h) in human {
                let hit = classes[key] == *h;
                per_dataset.entry(key.dataset.clone()).or_default().add(hit);
                overall.add(hit);
            }
            MetricAgreement { metric: name.clone(), per_dataset, overall, overall_fraction: overall.fraction() }
        })
        .collect();

    let mut inter = Vec::new();
    for (i, (name_a, a)) in metrics.iter().enumerate() {
        for (name_b, b) in &metrics[i + 1..] {
            let mut agreement = Tally::default();
            let mut conditional = Tally::default();
            for (key, ca) in a {
                let Some(cb) = b.get(key) else { continue };
                agreement.add(ca == cb);
                if ca == cb {
                    if let Some(h) = human.get(key) {
                        conditional.add(ca == h);
                    }
                }
            }
            inter.push(InterMetricAgreement {
                metric_a: name_a.clone(),
                metric_b: name_b.clone(),
                agreement,
                conditional_human: conditional,
            });
        }
    }
    Ok(AgreementReport { metrics: per_metric, inter_metric: inter })
}

/// Strict key-equality join used when a single metric is compared: both
/// maps must classify exactly the same pairs.
pub fn check_same_keys(metric: &ClassMap, human: &ClassMap) -> Result<(), StatsError> {
    let only_metric: Vec<String> = metric.keys().filter(|k| !human.contains_key(*k)).map(PairKey::label).collect();
    let only_human: Vec<String> = human.keys().filter(|k| !metric.contains_key(*k)).map(PairKey::label).collect();
    if only_metric.is_empty() && only_human.is_empty() {
        Ok(())
    } else {
        Err(StatsError::KeyMismatch { only_metric, only_human })
    }
}

/// Win/loss/tie grid per dataset: rows are the model on the y-axis, cells
/// show the metric's verdict for the row model with the human verdict in
/// parentheses where one exists.
pub fn render_grid(metric: &str, classes: &ClassMap, human: &ClassMap) -> String {
    let mut out = String::new();
    let datasets: BTreeSet<&str> = classes.keys().map(|k| k.dataset.as_str()).collect();
    for ds in datasets {
        let models: BTreeSet<&ModelId> =
            classes.keys().filter(|k| k.dataset == ds).flat_map(|k| [&k.model_a, &k.model_b]).collect();
        let models: Vec<&ModelId> = models.into_iter().collect();
        let width = models.iter().map(|m| m.as_str().chars().count()).max().unwrap_or(1).max(6);
        out.push_str(&format!("{metric} / {ds}\n"));
        out.push_str(&format!("{:width$}", ""));
        for m in &models {
            out.push_str(&format!(" {:>width$}", m.as_str()));
        }
        out.push('\n');
        for row in &models {
            out.push_str(&format!("{:width$}", row.as_str()));
            for col in &models {
                let cell = if row == col {
                    "-".to_string()
                } else {
                    let (key, swapped) = PairKey::canonical(ds, (*row).clone(), (*col).clone());
                    let orient = |c: PairClass| if swapped { c.mirrored() } else { c };
                    match classes.get(&key) {
                        None => "?".to_string(),
                        Some(c) => match human.get(&key) {
                            Some(h) => format!("{}({})", orient(*c).symbol(), orient(*h).symbol()),
                            None => orient(*c).symbol().to_string(),
                        },
                    }
                };
                out.push_str(&format!(" {cell:>width$}"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
