//! Service state. Every mutation goes through [`Core`] behind one mutex, so
//! submissions are applied in a single total order that matches the log.

use std::collections::HashMap;

use arena_eval_core::api::{question_text, Answer, AnswerKind, NextTaskResponse, RejectReason, SubmissionAck, SubmitRequest, TaskPayload};
use arena_eval_core::io::write_json;
use arena_eval_core::model::{Aspect, CountAnnotation, CountingStudy, PromptSet, RatingRecord, Side, Study};
use arena_eval_core::scheduler::{allocate_prompts, OpenStudy, ProgressSnapshot, Scheduler, SchedulerError, StudyStatus, TournamentPlan};
use chrono::{DateTime, Duration, SecondsFormat, Utc};

use crate::assets::AssetStore;
use crate::config::ServiceConfig;
use crate::eventlog::{EventLog, LogEvent};
use crate::ServiceError;

#[derive(Debug, Clone)]
pub enum StudyKind {
    Pairwise(Study),
    Counting(CountingStudy),
}

impl StudyKind {
    fn prompt_set(&self) -> &str {
        match self {
            StudyKind::Pairwise(s) => &s.prompt_set,
            StudyKind::Counting(c) => &c.prompt_set,
        }
    }
}

/// Ratings and studies of one leaderboard scope at a point in the log.
pub struct ScopeSnapshot {
    pub records: Vec<RatingRecord>,
    pub studies: Vec<Study>,
    pub log_offset: u64,
    pub withheld: usize,
}

pub struct Core {
    config: ServiceConfig,
    scheduler: Scheduler,
    studies: HashMap<String, StudyKind>,
    pairwise: Vec<Study>,
    prompts: HashMap<String, PromptSet>,
    assets: AssetStore,
    log: EventLog,
    ratings: Vec<RatingRecord>,
    counts: Vec<CountAnnotation>,
    done_tasks: HashMap<String, String>,
    sessions: HashMap<String, (u32, DateTime<Utc>)>,
}

impl Core {
    /// Builds the scheduler from the plan and replays the existing log.
    pub fn new(
        config: ServiceConfig,
        plan: TournamentPlan,
        prompt_sets: Vec<PromptSet>,
        mut assets: AssetStore,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let prompts: HashMap<String, PromptSet> = prompt_sets.into_iter().map(|p| (p.name.clone(), p)).collect();

        let mut kinds: Vec<(String, StudyKind)> = plan.studies.iter().map(|s| (s.study_id.clone(), StudyKind::Pairwise(s.clone()))).collect();
        kinds.extend(plan.counting.iter().map(|c| (c.study_id.clone(), StudyKind::Counting(c.clone()))));

        let mut open = Vec::with_capacity(kinds.len());
        for (i, (id, kind)) in kinds.iter().enumerate() {
            let set_name = kind.prompt_set();
            let set = prompts.get(set_name).ok_or_else(|| ServiceError::Config(format!("no prompt file for set {set_name:?}")))?;
            let aspect = match kind {
                StudyKind::Pairwise(s) => s.aspect,
                StudyKind::Counting(_) => Aspect::Counting,
            };
            let problems = set.check_for(aspect);
            if !problems.is_empty() {
                return Err(ServiceError::Config(format!("prompt set {set_name}: {}", problems.join("; "))));
            }
            let target = match kind {
                StudyKind::Pairwise(s) => s.target_ratings,
                StudyKind::Counting(c) => c.target_ratings,
            };
            let allocation = allocate_prompts(&set.prompt_ids(), target, config.seed.wrapping_add(i as u64))?;
            open.push(OpenStudy { study_id: id.clone(), target_ratings: target, allocation });
        }
        for set in prompts.values() {
            for p in &set.prompts {
                if let Some(r) = &p.reference_image {
                    let path = if std::path::Path::new(r).is_relative() { config.data_dir.join(r) } else { r.into() };
                    assets.add_reference(&set.name, &p.prompt_id, path);
                }
            }
        }

        let scheduler = Scheduler::new(open, config.constraints, Duration::seconds(config.lease_seconds), config.seed)?;
        let (log, events) = EventLog::open(&config.log_path())?;
        let mut core = Self {
            config,
            scheduler,
            studies: kinds.into_iter().collect(),
            pairwise: plan.studies,
            prompts,
            assets,
            log,
            ratings: Vec::new(),
            counts: Vec::new(),
            done_tasks: HashMap::new(),
            sessions: HashMap::new(),
        };
        for ev in events {
            core.replay(ev)?;
        }
        Ok(core)
    }

    fn replay(&mut self, ev: LogEvent) -> Result<(), ServiceError> {
        let (study_id, prompt_id, rater_id, at) = match &ev {
            LogEvent::Rating { record, .. } => (record.study_id.clone(), record.prompt_id.clone(), record.rater_id.clone(), record.timestamp),
            LogEvent::Count { study_id, record, .. } => (
                study_id.clone(),
                record.prompt_id.clone(),
                record.rater_id.clone().unwrap_or_default(),
                record.timestamp.unwrap_or_default(),
            ),
        };
        self.scheduler.record_completed(&study_id, &prompt_id, &rater_id)?;
        self.scheduler.mark_task_completed(ev.task_id());
        self.done_tasks.insert(ev.task_id().to_string(), ev.rating_id().to_string());
        self.session_for(&rater_id, at);
        match ev {
            LogEvent::Rating { record, .. } => self.ratings.push(record),
            LogEvent::Count { record, .. } => self.counts.push(record),
        }
        Ok(())
    }

    fn session_for(&mut self, rater_id: &str, at: DateTime<Utc>) -> String {
        let gap = Duration::seconds(self.config.session_gap_seconds);
        let entry = self.sessions.entry(rater_id.to_string()).or_insert((0, at));
        if entry.0 == 0 || at - entry.1 > gap {
            entry.0 += 1;
        }
        entry.1 = at;
        format!("{rater_id}/{}", entry.0)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn assets(&self) -> &AssetStore {
        &self.assets
    }

    pub fn log_entries(&self) -> u64 {
        self.log.entries()
    }

    pub fn open_leases(&self) -> usize {
        self.scheduler.progress().studies.iter().map(|s| s.status.outstanding_leases as usize).sum()
    }

    pub fn ratings(&self) -> &[RatingRecord] {
        &self.ratings
    }

    pub fn counts(&self) -> &[CountAnnotation] {
        &self.counts
    }

    pub fn next_task(&mut self, rater_id: &str, now: DateTime<Utc>) -> NextTaskResponse {
        let Some(task) = self.scheduler.next_task(rater_id, now) else {
            return NextTaskResponse::NoTaskAvailable;
        };
        let kind = &self.studies[&task.study_id];
        let entry = self.prompts[kind.prompt_set()].get(&task.prompt_id).expect("allocated prompt exists");
        let lease_expires_at = task.lease_expiry.to_rfc3339_opts(SecondsFormat::Secs, true);
        let payload = match kind {
            StudyKind::Pairwise(s) => {
                let (left, right) = match task.a_side {
                    Side::Left => (&s.model_a, &s.model_b),
                    Side::Right => (&s.model_b, &s.model_a),
                };
                TaskPayload {
                    task_id: task.task_id.clone(),
                    question_text: question_text(s.aspect, None),
                    prompt_text: s.aspect.shows_prompt().then(|| entry.text.clone()),
                    left_image_url: self.assets.image_url(left, &task.prompt_id),
                    right_image_url: Some(self.assets.image_url(right, &task.prompt_id)),
                    reference_image_url: (s.aspect == Aspect::ContentRecreation)
                        .then(|| self.assets.reference_url(&s.prompt_set, &task.prompt_id)),
                    answer_kind: AnswerKind::Choice3,
                    lease_expires_at,
                }
            }
            StudyKind::Counting(c) => TaskPayload {
                task_id: task.task_id.clone(),
                question_text: question_text(Aspect::Counting, entry.count_object.as_deref()),
                prompt_text: None,
                left_image_url: self.assets.image_url(&c.model, &task.prompt_id),
                right_image_url: None,
                reference_image_url: None,
                answer_kind: AnswerKind::CountInteger,
                lease_expires_at,
            },
        };
        NextTaskResponse::Task { task: payload }
    }

    fn reject(reason: RejectReason, rating_id: Option<String>) -> SubmissionAck {
        SubmissionAck { rating_id, accepted: false, reason: Some(reason) }
    }

    pub fn submit(&mut self, req: &SubmitRequest, now: DateTime<Utc>) -> Result<SubmissionAck, ServiceError> {
        if let Some(rid) = self.done_tasks.get(&req.task_id) {
            return Ok(Self::reject(RejectReason::Duplicate, Some(rid.clone())));
        }
        if let Some(lease) = self.scheduler.lease(&req.task_id) {
            let counting = matches!(self.studies[&lease.study_id], StudyKind::Counting(_));
            if counting != matches!(req.answer, Answer::Count(_)) {
                return Ok(Self::reject(RejectReason::InvalidAnswer, None));
            }
        }
        let task = match self.scheduler.complete(&req.task_id, &req.rater_id, now) {
            Ok(t) => t,
            Err(SchedulerError::LeaseExpired(_)) => return Ok(Self::reject(RejectReason::LeaseExpired, None)),
            Err(SchedulerError::UnknownTask(_)) => return Ok(Self::reject(RejectReason::UnknownTask, None)),
            Err(SchedulerError::WrongRater { .. }) => return Ok(Self::reject(RejectReason::WrongRater, None)),
            Err(SchedulerError::AlreadyCompleted(_)) => return Ok(Self::reject(RejectReason::Duplicate, None)),
            Err(e) => return Err(e.into()),
        };

        let rating_id = format!("r-{:08}", self.log.entries() + 1);
        let event = match (&self.studies[&task.study_id], req.answer) {
            (StudyKind::Pairwise(_), Answer::Choice(response)) => LogEvent::Rating {
                task_id: task.task_id.clone(),
                record: RatingRecord {
                    rating_id: rating_id.clone(),
                    study_id: task.study_id.clone(),
                    prompt_id: task.prompt_id.clone(),
                    rater_id: task.rater_id.clone(),
                    a_side: task.a_side,
                    choice: response.canonicalize(task.a_side),
                    timestamp: now,
                    submission_id: Some(self.session_for(&task.rater_id, now)),
                    response: Some(response),
                },
            },
            (StudyKind::Counting(c), Answer::Count(n)) => {
                let entry = self.prompts[&c.prompt_set].get(&task.prompt_id).expect("allocated prompt exists");
                let record = CountAnnotation {
                    prompt_id: task.prompt_id.clone(),
                    model: c.model.clone(),
                    target_count: entry.target_count.expect("checked at startup"),
                    sentence_type: entry.sentence_type.clone().unwrap_or_else(|| "default".into()),
                    annotated_count: n,
                    rater_id: Some(task.rater_id.clone()),
                    timestamp: Some(now),
                };
                self.session_for(&task.rater_id, now);
                LogEvent::Count { task_id: task.task_id.clone(), rating_id: rating_id.clone(), study_id: task.study_id.clone(), record }
            }
            _ => unreachable!("answer kind checked against the lease"),
        };
        self.log.append(&event)?;
        self.done_tasks.insert(task.task_id.clone(), rating_id.clone());
        match event {
            LogEvent::Rating { record, .. } => self.ratings.push(record),
            LogEvent::Count { record, .. } => self.counts.push(record),
        }
        let every = self.config.progress_every.max(1);
        if self.log.entries() % every == 0 {
            self.write_progress()?;
        }
        Ok(SubmissionAck { rating_id: Some(rating_id), accepted: true, reason: None })
    }

    pub fn status(&self, study_id: &str) -> Option<StudyStatus> {
        self.scheduler.status(study_id)
    }

    pub fn progress(&self) -> ProgressSnapshot {
        self.scheduler.progress()
    }

    pub fn write_progress(&self) -> Result<(), ServiceError> {
        write_json(self.config.progress_path(), &self.progress()).map_err(|e| ServiceError::Io(e.to_string()))
    }

    /// Copies the ratings of one scope, leaving out studies below the
    /// release threshold.
    pub fn scope_snapshot(&self, aspect: Aspect, prompt_set: &str) -> ScopeSnapshot {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for r in &self.ratings {
            *counts.entry(r.study_id.as_str()).or_default() += 1;
        }
        let in_scope: Vec<&Study> = self.pairwise.iter().filter(|s| s.aspect == aspect && s.prompt_set == prompt_set).collect();
        let (released, withheld): (Vec<&Study>, Vec<&Study>) = in_scope
            .into_iter()
            .partition(|s| counts.get(s.study_id.as_str()).copied().unwrap_or(0) >= self.config.completion_threshold);
        let ids: std::collections::HashSet<&str> = released.iter().map(|s| s.study_id.as_str()).collect();
        ScopeSnapshot {
            records: self.ratings.iter().filter(|r| ids.contains(r.study_id.as_str())).cloned().collect(),
            studies: released.into_iter().cloned().collect(),
            log_offset: self.log.entries(),
            withheld: withheld.len(),
        }
    }
}
