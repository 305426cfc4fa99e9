//! Synthetic rating logs drawn from a Bradley-Terry model with known
//! ratings. Used for recovery checks and end-to-end runs.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::substream;
use crate::elo::{expected_score, EloConfig};
use crate::model::{Choice, ModelId, RatingRecord, Response, Side, Study};
use crate::scheduler::{allocate_prompts, SchedulerError};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("no generating rating for model {0}")]
    MissingRating(ModelId),
    #[error("no prompts for prompt set {0}")]
    MissingPromptSet(String),
    #[error("tie rate {0} outside [0, 1)")]
    BadTieRate(f64),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub ratings: BTreeMap<ModelId, f64>,
    /// Fraction of "indifferent" answers. Decisive outcomes are skewed so
    /// the half-win expected score still equals the model's win
    /// probability.
    #[serde(default)]
    pub tie_rate: f64,
    /// Ratings per simulated rater within a study.
    #[serde(default = "default_per_rater")]
    pub ratings_per_rater: u32,
    pub seed: u64,
}

fn default_per_rater() -> u32 {
    50
}

/// Log start used for all simulated timestamps.
pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid date")
}

/// Prompt ids `p0001..` for sets without a prompt file.
pub fn synthetic_prompt_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("p{i:04}")).collect()
}

/// Draws `target_ratings` records per study. Studies are processed in the
/// order given, each with its own random stream, so the output depends
/// only on the inputs and the seed.
pub fn simulate_ratings(
    studies: &[Study],
    prompts: &BTreeMap<String, Vec<String>>,
    sim: &SimulationConfig,
    elo: &EloConfig,
) -> Result<Vec<RatingRecord>, SimulateError> {
    if !(0.0..1.0).contains(&sim.tie_rate) {
        return Err(SimulateError::BadTieRate(sim.tie_rate));
    }
    let per_rater = sim.ratings_per_rater.max(1);
    let mut out = Vec::new();
    let mut clock = 0i64;
    for (si, study) in studies.iter().enumerate() {
        let rating = |m: &ModelId| sim.ratings.get(m).copied().ok_or_else(|| SimulateError::MissingRating(m.clone()));
        let p_a = expected_score(rating(&study.model_a)?, rating(&study.model_b)?, elo);
        let ids = prompts.get(&study.prompt_set).ok_or_else(|| SimulateError::MissingPromptSet(study.prompt_set.clone()))?;
        let alloc = allocate_prompts(ids, study.target_ratings, sim.seed.wrapping_add(si as u64))?;
        let slots: Vec<&String> = alloc.0.iter().flat_map(|(p, n)| std::iter::repeat_n(p, *n as usize)).collect();

        let t = sim.tie_rate;
        let decisive_a = ((p_a - t / 2.0) / (1.0 - t)).clamp(0.0, 1.0);
        let mut rng = substream(sim.seed, si as u64);
        for (k, prompt) in slots.into_iter().enumerate() {
            let a_side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
            let choice = if rng.random::<f64>() < t {
                Choice::Tie
            } else if rng.random::<f64>() < decisive_a {
                Choice::A
            } else {
                Choice::B
            };
            let response: Response = choice.presented(a_side);
            out.push(RatingRecord {
                rating_id: format!("sim-{si:04}-{k:06}"),
                study_id: study.study_id.clone(),
                prompt_id: prompt.clone(),
                rater_id: format!("sim-rater-{si:04}-{:04}", k as u32 / per_rater),
                a_side,
                choice,
                timestamp: epoch() + Duration::seconds(clock),
                submission_id: None,
                response: Some(response),
            });
            clock += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Aspect;

    fn m(s: &str) -> ModelId {
        ModelId::new(s).unwrap()
    }

    #[test]
    fn deterministic_and_sized() {
        let s = Study::new(Aspect::Alignment, "set", m("a"), m("b"), 300).unwrap();
        let prompts: BTreeMap<_, _> = [("set".to_string(), synthetic_prompt_ids(40))].into_iter().collect();
        let sim = SimulationConfig {
            ratings: [(m("a"), 1100.0), (m("b"), 900.0)].into_iter().collect(),
            tie_rate: 0.1,
            ratings_per_rater: 50,
            seed: 9,
        };
        let a = simulate_ratings(std::slice::from_ref(&s), &prompts, &sim, &EloConfig::default()).unwrap();
        let b = simulate_ratings(std::slice::from_ref(&s), &prompts, &sim, &EloConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        for r in &a {
            assert_eq!(r.response.unwrap().canonicalize(r.a_side), r.choice);
        }
        let raters: std::collections::BTreeSet<_> = a.iter().map(|r| &r.rater_id).collect();
        assert_eq!(raters.len(), 6);
    }

    #[test]
    fn missing_inputs() {
        let s = Study::new(Aspect::Alignment, "set", m("a"), m("b"), 10).unwrap();
        let sim = SimulationConfig { ratings: BTreeMap::new(), tie_rate: 0.0, ratings_per_rater: 50, seed: 0 };
        let prompts: BTreeMap<_, _> = [("set".to_string(), synthetic_prompt_ids(4))].into_iter().collect();
        assert!(matches!(simulate_ratings(&[s], &prompts, &sim, &EloConfig::default()), Err(SimulateError::MissingRating(_))));
    }
}
