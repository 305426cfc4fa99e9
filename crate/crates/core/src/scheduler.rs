//! Study planning and rater task assignment.
//!
//! Planning functions are pure. [`Scheduler`] holds the mutable progress
//! state and is meant to be driven by one serialized command stream.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Aspect, CountingStudy, ModelError, ModelId, Side, Study};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("need at least 2 distinct models, got {0}")]
    TooFewModels(usize),
    #[error("model {0} listed twice")]
    DuplicateModel(ModelId),
    #[error("counting is a single-model aspect; use plan_counting")]
    CountingNotPairwise,
    #[error("no aspects or prompt sets to plan")]
    NothingToPlan,
    #[error("target_ratings must be positive")]
    ZeroTarget,
    #[error("prompt set is empty")]
    EmptyPromptSet,
    #[error("neighbor count k must be at least 1")]
    BadNeighborCount,
    #[error("leaderboard is empty")]
    EmptyLeaderboard,
    #[error("{0} is already on the leaderboard")]
    AlreadyRanked(ModelId),
    #[error("invalid rater constraint: {0}")]
    BadConstraint(String),
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error("duplicate study {0}")]
    DuplicateStudy(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("lease for task {0} expired")]
    LeaseExpired(String),
    #[error("task {0} was already completed")]
    AlreadyCompleted(String),
    #[error("task {task} belongs to another rater")]
    WrongRater { task: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Every study of a tournament, plus single-model counting studies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TournamentPlan {
    pub studies: Vec<Study>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counting: Vec<CountingStudy>,
}

impl TournamentPlan {
    pub fn groups(&self) -> BTreeMap<(Aspect, String), Vec<&Study>> {
        let mut out: BTreeMap<(Aspect, String), Vec<&Study>> = BTreeMap::new();
        for s in &self.studies {
            out.entry((s.aspect, s.prompt_set.clone())).or_default().push(s);
        }
        out
    }

    /// Appends studies from `other` whose ids are not already planned.
    pub fn merge(&mut self, other: TournamentPlan) {
        let mut seen: HashSet<String> = self.studies.iter().map(|s| s.study_id.clone()).collect();
        seen.extend(self.counting.iter().map(|s| s.study_id.clone()));
        for s in other.studies {
            if seen.insert(s.study_id.clone()) {
                self.studies.push(s);
            }
        }
        for s in other.counting {
            if seen.insert(s.study_id.clone()) {
                self.counting.push(s);
            }
        }
    }

    pub fn models(&self) -> BTreeSet<&ModelId> {
        self.studies
            .iter()
            .flat_map(|s| [&s.model_a, &s.model_b])
            .chain(self.counting.iter().map(|c| &c.model))
            .collect()
    }
}

fn distinct_sorted(models: &[ModelId]) -> Result<Vec<ModelId>, SchedulerError> {
    let mut sorted = models.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(SchedulerError::DuplicateModel(w[0].clone()));
    }
    Ok(sorted)
}

/// One study per unordered model pair, for every aspect and prompt set.
/// Studies come out grouped by aspect, then prompt set, then pair in
/// canonical model order, whatever the input order.
pub fn plan_exhaustive(
    models: &[ModelId],
    aspects: &[Aspect],
    prompt_sets: &[String],
    target_ratings: u32,
) -> Result<TournamentPlan, SchedulerError> {
    let sorted = distinct_sorted(models)?;
    if sorted.len() < 2 {
        return Err(SchedulerError::TooFewModels(sorted.len()));
    }
    if target_ratings == 0 {
        return Err(SchedulerError::ZeroTarget);
    }
    if aspects.is_empty() || prompt_sets.is_empty() {
        return Err(SchedulerError::NothingToPlan);
    }
    if aspects.contains(&Aspect::Counting) {
        return Err(SchedulerError::CountingNotPairwise);
    }
    let mut studies = Vec::new();
    for &aspect in aspects {
        for set in prompt_sets {
            for (i, a) in sorted.iter().enumerate() {
                for b in &sorted[i + 1..] {
                    studies.push(Study::new(aspect, set.clone(), a.clone(), b.clone(), target_ratings)?);
                }
            }
        }
    }
    Ok(TournamentPlan { studies, counting: Vec::new() })
}

/// One counting study per model and prompt set.
pub fn plan_counting(models: &[ModelId], prompt_sets: &[String], target_ratings: u32) -> Result<TournamentPlan, SchedulerError> {
    let sorted = distinct_sorted(models)?;
    if sorted.is_empty() {
        return Err(SchedulerError::TooFewModels(0));
    }
    let mut counting = Vec::new();
    for set in prompt_sets {
        for m in &sorted {
            counting.push(CountingStudy::new(set.clone(), m.clone(), target_ratings)?);
        }
    }
    Ok(TournamentPlan { studies: Vec::new(), counting })
}

/// Repetitions per prompt within one study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptAllocation(pub BTreeMap<String, u32>);

impl PromptAllocation {
    pub fn total(&self) -> u64 {
        self.0.values().map(|&c| c as u64).sum()
    }

    pub fn get(&self, prompt_id: &str) -> u32 {
        self.0.get(prompt_id).copied().unwrap_or(0)
    }
}

/// Spreads `target_ratings` over the prompts as evenly as possible. Which
/// prompts receive the one extra repetition depends only on `seed`.
pub fn allocate_prompts(prompt_ids: &[String], target_ratings: u32, seed: u64) -> Result<PromptAllocation, SchedulerError> {
    if target_ratings == 0 {
        return Err(SchedulerError::ZeroTarget);
    }
    if prompt_ids.is_empty() {
        return Err(SchedulerError::EmptyPromptSet);
    }
    let p = prompt_ids.len() as u32;
    let base = target_ratings / p;
    let extra = (target_ratings % p) as usize;
    let mut order: Vec<usize> = (0..prompt_ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut counts: BTreeMap<String, u32> = prompt_ids.iter().map(|id| (id.clone(), base)).collect();
    for &i in &order[..extra] {
        *counts.get_mut(&prompt_ids[i]).expect("prompt present") += 1;
    }
    Ok(PromptAllocation(counts))
}

/// Studies placing a new model on an existing leaderboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub new_model: ModelId,
    pub stage1: Study,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preliminary_rating: Option<f64>,
    /// Neighbor window above the preliminary rating, closest first.
    pub better_neighbors: Vec<ModelId>,
    /// Neighbor window below the preliminary rating, closest first.
    pub worse_neighbors: Vec<ModelId>,
    /// Studies against the neighbor window, minus the stage-1 opponent.
    pub stage2: Vec<Study>,
}

impl InsertionPlan {
    pub fn all_studies(&self) -> Vec<Study> {
        std::iter::once(self.stage1.clone()).chain(self.stage2.iter().cloned()).collect()
    }
}

fn ranked(leaderboard: &[(ModelId, f64)]) -> Vec<(ModelId, f64)> {
    let mut v = leaderboard.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Stage-1 study: the new model against the current leader.
pub fn plan_insertion_stage1(
    new_model: &ModelId,
    leaderboard: &[(ModelId, f64)],
    aspect: Aspect,
    prompt_set: &str,
    target_ratings: u32,
) -> Result<Study, SchedulerError> {
    if leaderboard.is_empty() {
        return Err(SchedulerError::EmptyLeaderboard);
    }
    if leaderboard.iter().any(|(m, _)| m == new_model) {
        return Err(SchedulerError::AlreadyRanked(new_model.clone()));
    }
    let leader = ranked(leaderboard)[0].0.clone();
    Ok(Study::new(aspect, prompt_set, new_model.clone(), leader, target_ratings)?)
}

/// Full insertion plan once the preliminary rating from stage 1 is known:
/// the `k` incumbents directly above and the `k` directly below it.
/// Incumbents rated exactly at the preliminary rating count as better.
pub fn plan_insertion(
    new_model: &ModelId,
    leaderboard: &[(ModelId, f64)],
    preliminary_rating: f64,
    k: usize,
    aspect: Aspect,
    prompt_set: &str,
    target_ratings: u32,
) -> Result<InsertionPlan, SchedulerError> {
    if k < 1 {
        return Err(SchedulerError::BadNeighborCount);
    }
    let stage1 = plan_insertion_stage1(new_model, leaderboard, aspect, prompt_set, target_ratings)?;
    let ranked = ranked(leaderboard);
    let split = ranked.iter().take_while(|(_, r)| *r >= preliminary_rating).count();
    let better: Vec<ModelId> = ranked[..split].iter().rev().take(k).map(|(m, _)| m.clone()).collect();
    let worse: Vec<ModelId> = ranked[split..].iter().take(k).map(|(m, _)| m.clone()).collect();
    let leader = stage1.opponent_of(new_model).expect("stage1 involves new model").clone();
    let stage2 = better
        .iter()
        .chain(worse.iter())
        .filter(|m| **m != leader)
        .map(|m| Study::new(aspect, prompt_set, new_model.clone(), m.clone(), target_ratings))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InsertionPlan {
        new_model: new_model.clone(),
        stage1,
        preliminary_rating: Some(preliminary_rating),
        better_neighbors: better,
        worse_neighbors: worse,
        stage2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaterConstraints {
    /// Largest share of all studies one rater may contribute to.
    pub max_study_fraction: f64,
    /// Largest share of one study's ratings one rater may provide.
    pub max_rating_fraction_per_study: f64,
}

impl Default for RaterConstraints {
    fn default() -> Self {
        Self { max_study_fraction: 0.10, max_rating_fraction_per_study: 0.02 }
    }
}

fn ceil_fraction(fraction: f64, total: usize) -> usize {
    // guard against 0.02 * 2500 = 50.000000000000004
    ((fraction * total as f64) - 1e-9).ceil().max(0.0) as usize
}

impl RaterConstraints {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        for (name, v) in [
            ("max_study_fraction", self.max_study_fraction),
            ("max_rating_fraction_per_study", self.max_rating_fraction_per_study),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SchedulerError::BadConstraint(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn per_study_cap(&self, target_ratings: u32) -> usize {
        ceil_fraction(self.max_rating_fraction_per_study, target_ratings as usize)
    }

    pub fn study_cap(&self, n_studies: usize) -> usize {
        ceil_fraction(self.max_study_fraction, n_studies)
    }
}

/// A study as the scheduler sees it: a target and a per-prompt allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenStudy {
    pub study_id: String,
    pub target_ratings: u32,
    pub allocation: PromptAllocation,
}

/// One served rating task, reserved for one rater until `lease_expiry`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub task_id: String,
    pub study_id: String,
    pub prompt_id: String,
    pub rater_id: String,
    pub a_side: Side,
    pub issued_at: DateTime<Utc>,
    pub lease_expiry: DateTime<Utc>,
}

#[derive(Debug, Clone, Default)]
struct RaterCounts {
    completed: u32,
    leased: u32,
}

impl RaterCounts {
    fn total(&self) -> usize {
        (self.completed + self.leased) as usize
    }
}

#[derive(Debug, Clone)]
struct StudyState {
    open: OpenStudy,
    prompts: Vec<String>,
    quota: Vec<u32>,
    done: Vec<u32>,
    leased: Vec<u32>,
    prompt_index: HashMap<String, usize>,
    raters: BTreeMap<String, RaterCounts>,
}

impl StudyState {
    fn new(open: OpenStudy) -> Self {
        let prompts: Vec<String> = open.allocation.0.keys().cloned().collect();
        let quota = open.allocation.0.values().copied().collect();
        let prompt_index = prompts.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let n = prompts.len();
        Self { open, prompts, quota, done: vec![0; n], leased: vec![0; n], prompt_index, raters: BTreeMap::new() }
    }

    fn filled(&self) -> u64 {
        self.done.iter().chain(self.leased.iter()).map(|&x| x as u64).sum()
    }

    fn completed(&self) -> u64 {
        self.done.iter().map(|&x| x as u64).sum()
    }

    fn remaining(&self) -> u64 {
        (self.open.target_ratings as u64).saturating_sub(self.filled())
    }
}

/// Per-study progress, as written to `progress.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyStatus {
    pub study_id: String,
    pub target_ratings: u32,
    pub completed: u64,
    pub outstanding_leases: u64,
    pub distinct_raters: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub constraints: RaterConstraints,
    pub studies: Vec<StudyProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyProgress {
    #[serde(flatten)]
    pub status: StudyStatus,
    /// Completed ratings per prompt.
    pub per_prompt: BTreeMap<String, u32>,
    /// Completed ratings per rater.
    pub per_rater: BTreeMap<String, u32>,
}

/// Mutable assignment state. Not internally synchronized: callers apply
/// commands one at a time.
#[derive(Debug, Clone)]
pub struct Scheduler {
    studies: Vec<StudyState>,
    index: HashMap<String, usize>,
    /// Studies where a rater has a completed rating or a live lease.
    rater_studies: HashMap<String, BTreeSet<usize>>,
    leases: HashMap<String, TaskAssignment>,
    expired: HashSet<String>,
    completed_tasks: HashSet<String>,
    constraints: RaterConstraints,
    lease_duration: Duration,
    rng: ChaCha8Rng,
}

pub const DEFAULT_LEASE_SECONDS: i64 = 600;

impl Scheduler {
    pub fn new(
        studies: Vec<OpenStudy>,
        constraints: RaterConstraints,
        lease_duration: Duration,
        seed: u64,
    ) -> Result<Self, SchedulerError> {
        constraints.validate()?;
        let mut index = HashMap::new();
        let mut states = Vec::with_capacity(studies.len());
        for (i, s) in studies.into_iter().enumerate() {
            if index.insert(s.study_id.clone(), i).is_some() {
                return Err(SchedulerError::DuplicateStudy(s.study_id));
            }
            if s.allocation.0.is_empty() {
                return Err(SchedulerError::EmptyPromptSet);
            }
            states.push(StudyState::new(s));
        }
        Ok(Self {
            studies: states,
            index,
            rater_studies: HashMap::new(),
            leases: HashMap::new(),
            expired: HashSet::new(),
            completed_tasks: HashSet::new(),
            constraints,
            lease_duration,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn constraints(&self) -> RaterConstraints {
        self.constraints
    }

    pub fn study_cap(&self) -> usize {
        self.constraints.study_cap(self.studies.len())
    }

    /// Ratings (completed or leased) rater holds in a study.
    pub fn rater_load(&self, rater_id: &str, study_id: &str) -> usize {
        self.index
            .get(study_id)
            .and_then(|&i| self.studies[i].raters.get(rater_id))
            .map_or(0, RaterCounts::total)
    }

    /// Studies the rater has entered.
    pub fn rater_study_count(&self, rater_id: &str) -> usize {
        self.rater_studies.get(rater_id).map_or(0, BTreeSet::len)
    }

    pub fn lease(&self, task_id: &str) -> Option<&TaskAssignment> {
        self.leases.get(task_id)
    }

    /// Reclaims leases that expired before `now`; returns them.
    pub fn expire(&mut self, now: DateTime<Utc>) -> Vec<TaskAssignment> {
        let mut gone: Vec<String> = self.leases.iter().filter(|(_, l)| l.lease_expiry < now).map(|(id, _)| id.clone()).collect();
        gone.sort();
        gone.into_iter().map(|id| self.release(&id)).collect()
    }

    fn release(&mut self, task_id: &str) -> TaskAssignment {
        let lease = self.leases.remove(task_id).expect("lease exists");
        let si = self.index[&lease.study_id];
        let st = &mut self.studies[si];
        st.leased[st.prompt_index[&lease.prompt_id]] -= 1;
        let counts = st.raters.get_mut(&lease.rater_id).expect("rater counted");
        counts.leased -= 1;
        if counts.total() == 0 {
            st.raters.remove(&lease.rater_id);
            if let Some(set) = self.rater_studies.get_mut(&lease.rater_id) {
                set.remove(&si);
            }
        }
        self.expired.insert(task_id.to_string());
        lease
    }

    fn eligible(&self, rater_id: &str, si: usize) -> bool {
        let st = &self.studies[si];
        if st.remaining() == 0 {
            return false;
        }
        let load = st.raters.get(rater_id).map_or(0, RaterCounts::total);
        if load >= self.constraints.per_study_cap(st.open.target_ratings) {
            return false;
        }
        let entered = self.rater_studies.get(rater_id);
        let already_in = entered.is_some_and(|s| s.contains(&si));
        already_in || entered.map_or(0, BTreeSet::len) < self.study_cap()
    }

    /// Issues the next task for `rater_id`, or `None` when every open study
    /// is full or capped for this rater. Picks the least-filled eligible
    /// study, then its least-filled prompt.
    pub fn next_task(&mut self, rater_id: &str, now: DateTime<Utc>) -> Option<TaskAssignment> {
        self.expire(now);
        let si = (0..self.studies.len())
            .filter(|&i| self.eligible(rater_id, i))
            .min_by(|&i, &j| {
                let fi = self.studies[i].filled() as f64 / self.studies[i].open.target_ratings as f64;
                let fj = self.studies[j].filled() as f64 / self.studies[j].open.target_ratings as f64;
                fi.total_cmp(&fj).then(i.cmp(&j))
            })?;

        let st = &self.studies[si];
        let mut best: Vec<usize> = Vec::new();
        let mut best_fill = f64::INFINITY;
        for p in 0..st.prompts.len() {
            let used = st.done[p] + st.leased[p];
            if used >= st.quota[p] {
                continue;
            }
            let fill = used as f64 / st.quota[p] as f64;
            if fill < best_fill {
                best_fill = fill;
                best.clear();
                best.push(p);
            } else if fill == best_fill {
                best.push(p);
            }
        }
        let p = best[self.rng.random_range(0..best.len())];
        let a_side = if self.rng.random_bool(0.5) { Side::Left } else { Side::Right };
        let task_id = format!("t-{:016x}", self.rng.random::<u64>());

        let st = &mut self.studies[si];
        st.leased[p] += 1;
        st.raters.entry(rater_id.to_string()).or_default().leased += 1;
        self.rater_studies.entry(rater_id.to_string()).or_default().insert(si);
        let task = TaskAssignment {
            task_id: task_id.clone(),
            study_id: st.open.study_id.clone(),
            prompt_id: st.prompts[p].clone(),
            rater_id: rater_id.to_string(),
            a_side,
            issued_at: now,
            lease_expiry: now + self.lease_duration,
        };
        self.leases.insert(task_id, task.clone());
        Some(task)
    }

    /// Converts a live lease into a completed rating. An expired lease is
    /// released back to the pool and reported as such.
    pub fn complete(&mut self, task_id: &str, rater_id: &str, now: DateTime<Utc>) -> Result<TaskAssignment, SchedulerError> {
        if self.completed_tasks.contains(task_id) {
            return Err(SchedulerError::AlreadyCompleted(task_id.to_string()));
        }
        let Some(lease) = self.leases.get(task_id) else {
            if self.expired.contains(task_id) {
                return Err(SchedulerError::LeaseExpired(task_id.to_string()));
            }
            return Err(SchedulerError::UnknownTask(task_id.to_string()));
        };
        if lease.rater_id != rater_id {
            return Err(SchedulerError::WrongRater { task: task_id.to_string() });
        }
        if lease.lease_expiry < now {
            self.release(task_id);
            return Err(SchedulerError::LeaseExpired(task_id.to_string()));
        }
        let lease = self.leases.remove(task_id).expect("checked above");
        let si = self.index[&lease.study_id];
        let st = &mut self.studies[si];
        let p = st.prompt_index[&lease.prompt_id];
        st.leased[p] -= 1;
        st.done[p] += 1;
        let counts = st.raters.get_mut(&lease.rater_id).expect("rater counted");
        counts.leased -= 1;
        counts.completed += 1;
        self.completed_tasks.insert(task_id.to_string());
        Ok(lease)
    }

    /// Replays a completed rating from the log (crash recovery).
    pub fn record_completed(&mut self, study_id: &str, prompt_id: &str, rater_id: &str) -> Result<(), SchedulerError> {
        let &si = self.index.get(study_id).ok_or_else(|| SchedulerError::UnknownStudy(study_id.to_string()))?;
        let st = &mut self.studies[si];
        if let Some(&p) = st.prompt_index.get(prompt_id) {
            st.done[p] += 1;
        }
        st.raters.entry(rater_id.to_string()).or_default().completed += 1;
        self.rater_studies.entry(rater_id.to_string()).or_default().insert(si);
        Ok(())
    }

    /// Marks a task id as already completed (replay).
    pub fn mark_task_completed(&mut self, task_id: &str) {
        self.completed_tasks.insert(task_id.to_string());
    }

    pub fn status(&self, study_id: &str) -> Option<StudyStatus> {
        self.index.get(study_id).map(|&i| self.status_of(i))
    }

    fn status_of(&self, i: usize) -> StudyStatus {
        let st = &self.studies[i];
        let completed = st.completed();
        StudyStatus {
            study_id: st.open.study_id.clone(),
            target_ratings: st.open.target_ratings,
            completed,
            outstanding_leases: st.leased.iter().map(|&x| x as u64).sum(),
            distinct_raters: st.raters.values().filter(|c| c.completed > 0).count(),
            complete: completed >= st.open.target_ratings as u64,
        }
    }

    pub fn progress(&self) -> ProgressSnapshot {
        let studies = (0..self.studies.len())
            .map(|i| {
                let st = &self.studies[i];
                StudyProgress {
                    status: self.status_of(i),
                    per_prompt: st.prompts.iter().cloned().zip(st.done.iter().copied()).collect(),
                    per_rater: st
                        .raters
                        .iter()
                        .filter(|(_, c)| c.completed > 0)
                        .map(|(r, c)| (r.clone(), c.completed))
                        .collect(),
                }
            })
            .collect();
        ProgressSnapshot { constraints: self.constraints, studies }
    }
}
