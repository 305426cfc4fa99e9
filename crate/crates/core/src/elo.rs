//! Elo leaderboards fitted as Bradley–Terry maximum-likelihood ratings.
//!
//! Ratings are fitted offline from all canonical outcomes at once by
//! minorization–maximization, polished with a few Newton steps, and
//! reported on the Elo scale (`scale` points per factor of `base` in odds)
//! with the mean pinned to `anchor_mean`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{self, percentile_interval};
use crate::model::{Aspect, Choice, ModelId, RatingRecord, Study};

/// Gap assigned to a model whose likelihood has no finite maximizer.
pub const SATURATION_GAP: f64 = 800.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EloError {
    #[error("invalid Elo configuration: {0}")]
    InvalidConfig(String),
    #[error("rating {rating_id} references unknown study {study_id}")]
    UnknownStudy { rating_id: String, study_id: String },
    #[error("no ratings to fit")]
    NoData,
    #[error("comparison graph is disconnected: {}", format_components(.components))]
    Disconnected { components: Vec<Vec<ModelId>> },
    #[error("win rate undefined: no decisive ratings")]
    UndefinedRate,
    #[error("no outcomes between {0} and {1}")]
    NoOutcomes(ModelId, ModelId),
}

fn format_components(components: &[Vec<ModelId>]) -> String {
    components
        .iter()
        .map(|c| format!("{{{}}}", c.iter().map(ModelId::as_str).collect::<Vec<_>>().join(", ")))
        .collect::<Vec<_>>()
        .join(" | ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// A tie counts as half a win for each side.
    #[default]
    HalfWin,
    /// Ties are discarded.
    Drop,
}

impl std::str::FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "half_win" | "halfwin" | "half" => Ok(TiePolicy::HalfWin),
            "drop" => Ok(TiePolicy::Drop),
            other => Err(format!("unknown tie policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloConfig {
    pub scale: f64,
    pub base: f64,
    pub anchor_mean: f64,
    pub tie_policy: TiePolicy,
    pub max_iterations: usize,
    /// Stop when the mean absolute rating change (Elo points) drops below this.
    pub convergence_tol: f64,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self {
            scale: 400.0,
            base: 10.0,
            anchor_mean: 1000.0,
            tie_policy: TiePolicy::HalfWin,
            max_iterations: 10_000,
            convergence_tol: 1e-9,
        }
    }
}

impl EloConfig {
    pub fn validate(&self) -> Result<(), EloError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(EloError::InvalidConfig(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.base > 1.0 && self.base.is_finite()) {
            return Err(EloError::InvalidConfig(format!("base must exceed 1, got {}", self.base)));
        }
        if !self.anchor_mean.is_finite() {
            return Err(EloError::InvalidConfig("anchor_mean must be finite".into()));
        }
        if self.max_iterations == 0 {
            return Err(EloError::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Elo points per natural-log unit of strength.
    pub fn points_per_nat(&self) -> f64 {
        self.scale / self.base.ln()
    }

    /// Elo gap implied by an effective score `s` in (0, 1).
    pub fn gap_for_score(&self, s: f64) -> f64 {
        self.scale * (s / (1.0 - s)).ln() / self.base.ln()
    }
}

/// Probability that a model rated `r_a` beats one rated `r_b`.
pub fn expected_score(r_a: f64, r_b: f64, config: &EloConfig) -> f64 {
    1.0 / (1.0 + config.base.powf((r_b - r_a) / config.scale))
}

/// Outcome counts of one study, from `model_a`'s side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTally {
    pub wins_a: u64,
    pub wins_b: u64,
    pub ties: u64,
}

impl PairTally {
    pub fn add(&mut self, choice: Choice) {
        match choice {
            Choice::A => self.wins_a += 1,
            Choice::B => self.wins_b += 1,
            Choice::Tie => self.ties += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.wins_a + self.wins_b + self.ties
    }

    pub fn from_choices<'a>(choices: impl IntoIterator<Item = &'a Choice>) -> Self {
        let mut t = Self::default();
        for c in choices {
            t.add(*c);
        }
        t
    }

    /// Effective wins for (a, b) under `policy`.
    pub fn effective(&self, policy: TiePolicy) -> (f64, f64) {
        match policy {
            TiePolicy::HalfWin => {
                let half = 0.5 * self.ties as f64;
                (self.wins_a as f64 + half, self.wins_b as f64 + half)
            }
            TiePolicy::Drop => (self.wins_a as f64, self.wins_b as f64),
        }
    }
}

/// Share of model_a over one study's ratings.
pub fn win_rate(records: &[RatingRecord], policy: TiePolicy) -> Result<f64, EloError> {
    if records.is_empty() {
        return Err(EloError::NoData);
    }
    let t = PairTally::from_choices(records.iter().map(|r| &r.choice));
    tally_win_rate(&t, policy)
}

pub fn tally_win_rate(t: &PairTally, policy: TiePolicy) -> Result<f64, EloError> {
    match policy {
        TiePolicy::HalfWin => {
            if t.total() == 0 {
                return Err(EloError::NoData);
            }
            Ok((t.wins_a as f64 + 0.5 * t.ties as f64) / t.total() as f64)
        }
        TiePolicy::Drop => {
            let decisive = t.wins_a + t.wins_b;
            if decisive == 0 {
                return Err(EloError::UndefinedRate);
            }
            Ok(t.wins_a as f64 / decisive as f64)
        }
    }
}

/// Outcome tallies indexed by model position, ready for fitting.
#[derive(Debug, Clone)]
pub struct Comparisons {
    pub models: Vec<ModelId>,
    /// `(index_a, index_b, tally)`, one entry per study.
    pub tallies: Vec<(usize, usize, PairTally)>,
}

impl Comparisons {
    /// Groups records by study. Studies without ratings contribute nothing
    /// and their models are left out unless another study includes them.
    pub fn from_records(records: &[RatingRecord], studies: &[Study]) -> Result<Self, EloError> {
        let by_id: HashMap<&str, &Study> = studies.iter().map(|s| (s.study_id.as_str(), s)).collect();
        let mut per_study: BTreeMap<&str, PairTally> = BTreeMap::new();
        for r in records {
            if !by_id.contains_key(r.study_id.as_str()) {
                return Err(EloError::UnknownStudy { rating_id: r.rating_id.clone(), study_id: r.study_id.clone() });
            }
            per_study.entry(r.study_id.as_str()).or_default().add(r.choice);
        }
        let models: BTreeSet<&ModelId> =
            per_study.keys().flat_map(|id| [&by_id[id].model_a, &by_id[id].model_b]).collect();
        let models: Vec<ModelId> = models.into_iter().cloned().collect();
        let index: HashMap<&ModelId, usize> = models.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let tallies = per_study
            .iter()
            .map(|(id, t)| {
                let s = by_id[id];
                (index[&s.model_a], index[&s.model_b], *t)
            })
            .collect();
        Ok(Self { models, tallies })
    }

    pub fn n_ratings(&self) -> Vec<u64> {
        let mut n = vec![0u64; self.models.len()];
        for &(a, b, t) in &self.tallies {
            n[a] += t.total();
            n[b] += t.total();
        }
        n
    }

    /// Dense matrix of effective wins: `w[i][j]` = wins of i over j.
    pub fn win_matrix(&self, policy: TiePolicy) -> Vec<Vec<f64>> {
        let n = self.models.len();
        let mut w = vec![vec![0.0; n]; n];
        for &(a, b, t) in &self.tallies {
            let (wa, wb) = t.effective(policy);
            w[a][b] += wa;
            w[b][a] += wb;
        }
        w
    }
}

/// Connected components of the comparison graph (edges where any
/// effective outcome exists), each sorted, ordered by first member.
pub fn components(w: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = w.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && w[i][j] + w[j][i] > 0.0 {
                    seen[j] = true;
                    comp.push(j);
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Result of a fit on the natural-log strength scale.
#[derive(Debug, Clone)]
struct NaturalFit {
    /// Log-strengths; entries for saturated models are placeholders.
    theta: Vec<f64>,
    low: Vec<bool>,
    high: Vec<bool>,
    iterations: usize,
    converged: bool,
}

/// Gradient of the Bradley–Terry log-likelihood with respect to the
/// natural log-strengths `theta`.
pub fn log_likelihood_gradient(w: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut g = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let nij = w[i][j] + w[j][i];
            if nij == 0.0 {
                continue;
            }
            let p = logistic(theta[i] - theta[j]);
            g[i] += w[i][j] - nij * p;
        }
    }
    g
}

pub fn log_likelihood(w: &[Vec<f64>], theta: &[f64]) -> f64 {
    let n = w.len();
    let mut ll = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && w[i][j] > 0.0 {
                // ln sigma(x) = -ln(1 + e^{-x})
                ll -= w[i][j] * (-(theta[i] - theta[j])).exp().ln_1p();
            }
        }
    }
    ll
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Finds models whose maximum-likelihood rating runs off to ±infinity
/// (zero effective wins or zero effective losses among the models that
/// are still bounded), repeating until none remain.
fn saturated_models(w: &[Vec<f64>]) -> (Vec<bool>, Vec<bool>, Vec<usize>) {
    let n = w.len();
    let mut low = vec![false; n];
    let mut high = vec![false; n];
    let mut order = Vec::new();
    loop {
        let mut changed = false;
        for i in 0..n {
            if low[i] || high[i] {
                continue;
            }
            let active = |j: usize| j != i && !low[j] && !high[j];
            let wins: f64 = (0..n).filter(|&j| active(j)).map(|j| w[i][j]).sum();
            let losses: f64 = (0..n).filter(|&j| active(j)).map(|j| w[j][i]).sum();
            if wins + losses == 0.0 {
                continue;
            }
            if wins == 0.0 {
                low[i] = true;
            } else if losses == 0.0 {
                high[i] = true;
            } else {
                continue;
            }
            order.push(i);
            changed = true;
        }
        if !changed {
            return (low, high, order);
        }
    }
}

fn fit_natural(w: &[Vec<f64>], init: Option<&[f64]>, config: &EloConfig) -> NaturalFit {
    let n = w.len();
    let (low, high, removal_order) = saturated_models(w);
    let active: Vec<usize> = (0..n).filter(|&i| !low[i] && !high[i]).collect();
    let mut theta = vec![0.0; n];
    if let Some(init) = init {
        theta.copy_from_slice(init);
    }

    let mut iterations = 0;
    let mut converged = true;
    if active.len() >= 2 {
        let sub: Vec<Vec<f64>> = active.iter().map(|&i| active.iter().map(|&j| w[i][j]).collect()).collect();
        let start: Vec<f64> = active.iter().map(|&i| theta[i]).collect();
        let (sub_theta, iters, conv) = fit_bounded(&sub, &start, config);
        for (k, &i) in active.iter().enumerate() {
            theta[i] = sub_theta[k];
        }
        iterations = iters;
        converged = conv;
    } else if active.len() == 1 {
        theta[active[0]] = 0.0;
    }

    // Place saturated models one clamp gap beyond their fitted opponents,
    // innermost first.
    let gap = SATURATION_GAP / config.points_per_nat();
    let mut placed: Vec<bool> = (0..n).map(|i| !low[i] && !high[i]).collect();
    for &i in removal_order.iter().rev() {
        let opponents: Vec<f64> = (0..n)
            .filter(|&j| j != i && placed[j] && w[i][j] + w[j][i] > 0.0)
            .map(|j| theta[j])
            .collect();
        theta[i] = if opponents.is_empty() {
            if low[i] { -gap / 2.0 } else { gap / 2.0 }
        } else if low[i] {
            opponents.iter().copied().fold(f64::INFINITY, f64::min) - gap
        } else {
            opponents.iter().copied().fold(f64::NEG_INFINITY, f64::max) + gap
        };
        placed[i] = true;
    }

    NaturalFit { theta, low, high, iterations, converged }
}

/// MM iteration followed by Newton refinement. Every model must have both
/// effective wins and losses, and the graph must be connected.
fn fit_bounded(w: &[Vec<f64>], start: &[f64], config: &EloConfig) -> (Vec<f64>, usize, bool) {
    let n = w.len();
    let wins: Vec<f64> = (0..n).map(|i| w[i].iter().sum()).collect();
    let mut p: Vec<f64> = start.iter().map(|t| t.exp()).collect();
    let per_nat = config.points_per_nat();

    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let mut change = 0.0;
        for i in 0..n {
            let mut denom = 0.0;
            for j in 0..n {
                let nij = w[i][j] + w[j][i];
                if i != j && nij > 0.0 {
                    denom += nij / (p[i] + p[j]);
                }
            }
            let next = wins[i] / denom;
            change += (next.ln() - p[i].ln()).abs();
            p[i] = next;
        }
        let log_mean = p.iter().map(|x| x.ln()).sum::<f64>() / n as f64;
        for x in p.iter_mut() {
            *x /= log_mean.exp();
        }
        if change / n as f64 * per_nat < config.convergence_tol {
            converged = true;
            break;
        }
    }

    let mut theta: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    newton_polish(w, &mut theta);
    let mean = theta.iter().sum::<f64>() / n as f64;
    for t in theta.iter_mut() {
        *t -= mean;
    }
    (theta, iterations, converged)
}

/// Newton steps on the log-likelihood with the last coordinate pinned.
fn newton_polish(w: &[Vec<f64>], theta: &mut [f64]) {
    let n = theta.len();
    if n < 2 {
        return;
    }
    let m = n - 1;
    for _ in 0..50 {
        let g = log_likelihood_gradient(w, theta);
        let gmax = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if gmax < 1e-11 {
            return;
        }
        // Negative Hessian restricted to the first n-1 coordinates.
        let mut h = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in (i + 1)..n {
                let nij = w[i][j] + w[j][i];
                if nij == 0.0 {
                    continue;
                }
                let p = logistic(theta[i] - theta[j]);
                let c = nij * p * (1.0 - p);
                if i < m {
                    h[(i, i)] += c;
                }
                if j < m {
                    h[(j, j)] += c;
                }
                if i < m && j < m {
                    h[(i, j)] -= c;
                    h[(j, i)] -= c;
                }
            }
        }
        let rhs = DVector::from_iterator(m, g[..m].iter().copied());
        let Some(chol) = h.cholesky() else { return };
        let step = chol.solve(&rhs);
        let before = log_likelihood(w, theta);
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> =
                (0..n).map(|i| if i < m { theta[i] + scale * step[i] } else { theta[i] }).collect();
            if log_likelihood(w, &trial) >= before - 1e-9 * before.abs() || scale < 1e-6 {
                theta.copy_from_slice(&trial);
                break;
            }
            scale *= 0.5;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloEntry {
    pub model: ModelId,
    pub rating: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_ratings: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbounded_low: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbounded_high: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Number of log entries the fit reflects, when served live.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_offset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect: Option<Aspect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_set: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_level: Option<f64>,
    pub anchor_mean: f64,
    pub tie_policy: TiePolicy,
    /// Sorted by rating, highest first.
    pub entries: Vec<EloEntry>,
    pub metadata: FitMetadata,
}

impl Leaderboard {
    pub fn entry(&self, model: &ModelId) -> Option<&EloEntry> {
        self.entries.iter().find(|e| &e.model == model)
    }

    pub fn mean_rating(&self) -> f64 {
        self.entries.iter().map(|e| e.rating).sum::<f64>() / self.entries.len() as f64
    }

    /// `(model, rating)` pairs in leaderboard order.
    pub fn standings(&self) -> Vec<(ModelId, f64)> {
        self.entries.iter().map(|e| (e.model.clone(), e.rating)).collect()
    }
}

/// Fitted Elo ratings (anchored) in model order, plus fit diagnostics.
#[derive(Debug, Clone)]
pub struct RatingFit {
    pub models: Vec<ModelId>,
    pub ratings: Vec<f64>,
    pub unbounded_low: Vec<bool>,
    pub unbounded_high: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits anchored Elo ratings from outcome tallies.
pub fn fit_comparisons(data: &Comparisons, config: &EloConfig) -> Result<RatingFit, EloError> {
    fit_comparisons_from(data, config, None)
}

fn fit_comparisons_from(data: &Comparisons, config: &EloConfig, init: Option<&[f64]>) -> Result<RatingFit, EloError> {
    config.validate()?;
    if data.models.is_empty() {
        return Err(EloError::NoData);
    }
    let w = data.win_matrix(config.tie_policy);
    let comps = components(&w);
    if comps.len() > 1 {
        return Err(EloError::Disconnected {
            components: comps.iter().map(|c| c.iter().map(|&i| data.models[i].clone()).collect()).collect(),
        });
    }
    let init_nat: Option<Vec<f64>> =
        init.map(|r| r.iter().map(|x| (x - config.anchor_mean) / config.points_per_nat()).collect());
    let fit = fit_natural(&w, init_nat.as_deref(), config);
    let per_nat = config.points_per_nat();
    let mean = fit.theta.iter().sum::<f64>() / fit.theta.len() as f64;
    let ratings = fit.theta.iter().map(|t| (t - mean) * per_nat + config.anchor_mean).collect();
    Ok(RatingFit {
        models: data.models.clone(),
        ratings,
        unbounded_low: fit.low,
        unbounded_high: fit.high,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

fn scope_of(studies: &[Study], data: &Comparisons) -> (Option<Aspect>, Option<String>) {
    let used: Vec<&Study> = studies
        .iter()
        .filter(|s| data.models.contains(&s.model_a) && data.models.contains(&s.model_b))
        .collect();
    let aspects: BTreeSet<Aspect> = used.iter().map(|s| s.aspect).collect();
    let sets: BTreeSet<&str> = used.iter().map(|s| s.prompt_set.as_str()).collect();
    (
        (aspects.len() == 1).then(|| *aspects.iter().next().unwrap()),
        (sets.len() == 1).then(|| sets.iter().next().unwrap().to_string()),
    )
}

fn assemble(fit: &RatingFit, data: &Comparisons) -> Vec<EloEntry> {
    let n_ratings = data.n_ratings();
    let mut entries: Vec<EloEntry> = (0..fit.models.len())
        .map(|i| EloEntry {
            model: fit.models[i].clone(),
            rating: fit.ratings[i],
            ci_low: fit.ratings[i],
            ci_high: fit.ratings[i],
            n_ratings: n_ratings[i],
            unbounded_low: fit.unbounded_low[i],
            unbounded_high: fit.unbounded_high[i],
        })
        .collect();
    entries.sort_by(|a, b| b.rating.total_cmp(&a.rating).then_with(|| a.model.cmp(&b.model)));
    entries
}

/// Point-estimate leaderboard; CI bounds equal the rating.
pub fn fit_leaderboard(records: &[RatingRecord], studies: &[Study], config: &EloConfig) -> Result<Leaderboard, EloError> {
    let data = Comparisons::from_records(records, studies)?;
    let fit = fit_comparisons(&data, config)?;
    let (aspect, prompt_set) = scope_of(studies, &data);
    Ok(Leaderboard {
        aspect,
        prompt_set,
        confidence_level: None,
        anchor_mean: config.anchor_mean,
        tie_policy: config.tie_policy,
        entries: assemble(&fit, &data),
        metadata: FitMetadata { iterations: fit.iterations, converged: fit.converged, ..Default::default() },
    })
}

/// Draws a with-replacement resample of a study's ratings as outcome
/// counts. Resampling `n` records with replacement is a multinomial draw
/// over the record categories, which this samples directly.
pub fn resample_tally(rng: &mut impl Rng, t: &PairTally) -> PairTally {
    let n = t.total();
    if n == 0 {
        return *t;
    }
    let pa = t.wins_a as f64 / n as f64;
    let wins_a = Binomial::new(n, pa).expect("valid binomial").sample(rng);
    let rest = n - wins_a;
    let others = t.wins_b + t.ties;
    let wins_b = if others == 0 || rest == 0 {
        0
    } else {
        Binomial::new(rest, t.wins_b as f64 / others as f64).expect("valid binomial").sample(rng)
    };
    PairTally { wins_a, wins_b, ties: rest - wins_b }
}

/// Leaderboard with percentile-bootstrap confidence intervals. Ratings are
/// resampled within each study so every replicate keeps the study sizes.
pub fn bootstrap_leaderboard(
    records: &[RatingRecord],
    studies: &[Study],
    config: &EloConfig,
    confidence_level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<Leaderboard, EloError> {
    bootstrap::check_level(confidence_level).map_err(|e| EloError::InvalidConfig(e.to_string()))?;
    if n_boot == 0 {
        return Err(EloError::InvalidConfig("n_boot must be positive".into()));
    }
    let data = Comparisons::from_records(records, studies)?;
    let fit = fit_comparisons(&data, config)?;
    let (aspect, prompt_set) = scope_of(studies, &data);

    let replicates: Vec<Option<Vec<f64>>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = bootstrap::substream(seed, r);
            let tallies = data.tallies.iter().map(|&(a, b, t)| (a, b, resample_tally(&mut rng, &t))).collect();
            let rep = Comparisons { models: data.models.clone(), tallies };
            fit_comparisons_from(&rep, config, Some(&fit.ratings)).ok().map(|f| f.ratings)
        })
        .collect();

    let mut metadata =
        FitMetadata { iterations: fit.iterations, converged: fit.converged, n_boot: Some(n_boot), seed: Some(seed), ..Default::default() };
    if n_boot < 100 {
        metadata.warnings.push(format!("n_boot = {n_boot} is below 100; intervals are unreliable"));
    }
    let failed = replicates.iter().filter(|r| r.is_none()).count();
    if failed > 0 {
        metadata.warnings.push(format!("{failed} of {n_boot} replicates could not be fitted and were skipped"));
    }

    let mut entries = assemble(&fit, &data);
    for e in entries.iter_mut() {
        let i = data.models.iter().position(|m| m == &e.model).expect("model in data");
        let values: Vec<f64> = replicates.iter().flatten().map(|r| r[i]).collect();
        if let Some((lo, hi)) = percentile_interval(&values, confidence_level) {
            e.ci_low = lo.min(e.rating);
            e.ci_high = hi.max(e.rating);
        }
    }
    Ok(Leaderboard {
        aspect,
        prompt_set,
        confidence_level: Some(confidence_level),
        anchor_mean: config.anchor_mean,
        tie_policy: config.tie_policy,
        entries,
        metadata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreliminaryRating {
    pub rating: f64,
    pub saturated: bool,
    pub n_ratings: u64,
}

/// One-dimensional maximum-likelihood rating of `new_model` against a
/// single opponent whose rating is held fixed. No re-anchoring.
pub fn preliminary_rating(
    new_model: &ModelId,
    opponent: (&ModelId, f64),
    records: &[RatingRecord],
    studies: &[Study],
    config: &EloConfig,
) -> Result<PreliminaryRating, EloError> {
    config.validate()?;
    let (opp, opp_rating) = opponent;
    let by_id: HashMap<&str, &Study> = studies.iter().map(|s| (s.study_id.as_str(), s)).collect();
    let mut tally = PairTally::default();
    for r in records {
        let Some(s) = by_id.get(r.study_id.as_str()) else { continue };
        if !(s.involves(new_model) && s.involves(opp)) {
            continue;
        }
        let choice = if &s.model_a == new_model { r.choice } else { r.choice.mirrored() };
        tally.add(choice);
    }
    preliminary_from_tally(&tally, opp_rating, config)
        .ok_or_else(|| EloError::NoOutcomes(new_model.clone(), opp.clone()))
}

/// `tally` is oriented with the new model as side A. Returns `None` when
/// there is nothing to fit.
pub fn preliminary_from_tally(tally: &PairTally, opponent_rating: f64, config: &EloConfig) -> Option<PreliminaryRating> {
    let (w, l) = tally.effective(config.tie_policy);
    if w + l == 0.0 {
        return None;
    }
    let s = w / (w + l);
    let (gap, saturated) = if s <= 0.0 {
        (-SATURATION_GAP, true)
    } else if s >= 1.0 {
        (SATURATION_GAP, true)
    } else {
        let g = config.gap_for_score(s);
        if g.abs() > SATURATION_GAP {
            (g.signum() * SATURATION_GAP, true)
        } else {
            (g, false)
        }
    };
    Some(PreliminaryRating { rating: opponent_rating + gap, saturated, n_ratings: tally.total() })
}

/// Splits studies into `(aspect, prompt_set)` scopes.
pub fn group_by_scope(studies: &[Study]) -> BTreeMap<(Aspect, String), Vec<Study>> {
    let mut out: BTreeMap<(Aspect, String), Vec<Study>> = BTreeMap::new();
    for s in studies {
        out.entry((s.aspect, s.prompt_set.clone())).or_default().push(s.clone());
    }
    out
}
