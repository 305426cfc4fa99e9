//! Consistency checks for rating logs before analysis.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{PromptSet, RatingRecord, Study};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    UnknownStudy { rating_id: String, study_id: String },
    UnknownPrompt { rating_id: String, study_id: String, prompt_id: String },
    DuplicateRatingId { rating_id: String },
    ChoiceSideMismatch { rating_id: String },
    DuplicateStudyId { study_id: String },
}

impl Finding {
    pub fn describe(&self) -> String {
        match self {
            Finding::UnknownStudy { rating_id, study_id } => {
                format!("{rating_id}: unknown study {study_id}")
            }
            Finding::UnknownPrompt { rating_id, study_id, prompt_id } => {
                format!("{rating_id}: unknown prompt {prompt_id} for study {study_id}")
            }
            Finding::DuplicateRatingId { rating_id } => format!("{rating_id}: duplicate rating_id"),
            Finding::ChoiceSideMismatch { rating_id } => {
                format!("{rating_id}: stored choice disagrees with raw response and a_side")
            }
            Finding::DuplicateStudyId { study_id } => format!("{study_id}: duplicate study_id"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    /// Ratings per known study.
    pub coverage: BTreeMap<String, u64>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks every record against the study list. Prompt membership is only
/// checked for studies whose prompt set appears in `prompt_sets`.
pub fn validate_ratings(records: &[RatingRecord], studies: &[Study], prompt_sets: &[PromptSet]) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut by_id: HashMap<&str, &Study> = HashMap::new();
    for s in studies {
        if by_id.insert(s.study_id.as_str(), s).is_some() {
            report.errors.push(Finding::DuplicateStudyId { study_id: s.study_id.clone() });
        }
        report.coverage.entry(s.study_id.clone()).or_insert(0);
    }
    let prompts: HashMap<&str, BTreeSet<&str>> = prompt_sets
        .iter()
        .map(|ps| (ps.name.as_str(), ps.prompts.iter().map(|p| p.prompt_id.as_str()).collect()))
        .collect();

    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.rating_id.as_str()) {
            report.errors.push(Finding::DuplicateRatingId { rating_id: r.rating_id.clone() });
        }
        if let Some(resp) = r.response {
            if resp.canonicalize(r.a_side) != r.choice {
                report.errors.push(Finding::ChoiceSideMismatch { rating_id: r.rating_id.clone() });
            }
        }
        let Some(study) = by_id.get(r.study_id.as_str()) else {
            report.errors.push(Finding::UnknownStudy { rating_id: r.rating_id.clone(), study_id: r.study_id.clone() });
            continue;
        };
        *report.coverage.entry(study.study_id.clone()).or_insert(0) += 1;
        if let Some(ids) = prompts.get(study.prompt_set.as_str()) {
            if !ids.contains(r.prompt_id.as_str()) {
                report.errors.push(Finding::UnknownPrompt {
                    rating_id: r.rating_id.clone(),
                    study_id: r.study_id.clone(),
                    prompt_id: r.prompt_id.clone(),
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aspect, Choice, ModelId, PromptEntry, Response, Side};
    use chrono::{TimeZone, Utc};

    fn study() -> Study {
        Study::new(
            Aspect::OverallPreference,
            "set",
            ModelId::new("a").unwrap(),
            ModelId::new("b").unwrap(),
            2500,
        )
        .unwrap()
    }

    fn rec(i: usize, study_id: &str, prompt: &str) -> RatingRecord {
        let a_side = if i % 2 == 0 { Side::Left } else { Side::Right };
        let response = [Response::Left, Response::Right, Response::Indifferent][i % 3];
        RatingRecord {
            rating_id: format!("r{i}"),
            study_id: study_id.into(),
            prompt_id: prompt.into(),
            rater_id: format!("rater{}", i % 70),
            a_side,
            choice: response.canonicalize(a_side),
            timestamp: Utc.timestamp_opt(1_700_000_000 + i as i64, 0).unwrap(),
            submission_id: None,
            response: Some(response),
        }
    }

    #[test]
    fn empty_input_is_clean() {
        let r = validate_ratings(&[], &[], &[]);
        assert!(r.is_ok());
        assert!(r.coverage.is_empty());
    }

    #[test]
    fn unknown_study_reported_once() {
        let r = validate_ratings(&[rec(0, "nope", "p")], &[], &[]);
        assert_eq!(r.errors.len(), 1);
        assert!(r.errors[0].describe().contains("unknown study"));
    }

    #[test]
    fn full_study_log_is_clean() {
        let s = study();
        let set = PromptSet {
            name: "set".into(),
            prompts: (0..1600).map(|i| PromptEntry::new(format!("p{i}"), "t")).collect(),
        };
        let records: Vec<_> = (0..2500).map(|i| rec(i, &s.study_id, &format!("p{}", i % 1600))).collect();
        let report = validate_ratings(&records, std::slice::from_ref(&s), std::slice::from_ref(&set));
        assert!(report.is_ok(), "{:?}", report.errors);
        // direct scan
        let direct = records.iter().filter(|r| r.study_id == s.study_id).count() as u64;
        assert_eq!(report.coverage[&s.study_id], direct);
        assert_eq!(direct, 2500);
    }

    #[test]
    fn detects_duplicates_prompts_and_mismatch() {
        let s = study();
        let set = PromptSet { name: "set".into(), prompts: vec![PromptEntry::new("p0", "t")] };
        let mut bad = rec(1, &s.study_id, "p0");
        bad.choice = Choice::Tie;
        bad.response = Some(Response::Left);
        let records = vec![rec(0, &s.study_id, "p0"), rec(0, &s.study_id, "p0"), rec(2, &s.study_id, "zz"), bad];
        let report = validate_ratings(&records, &[s], &[set]);
        let kinds: Vec<_> = report.errors.iter().map(|f| std::mem::discriminant(f)).collect();
        assert_eq!(report.errors.len(), 3, "{:?}", report.errors);
        assert!(matches!(report.errors[0], Finding::DuplicateRatingId { .. }));
        assert!(matches!(report.errors[1], Finding::UnknownPrompt { .. }));
        assert!(matches!(report.errors[2], Finding::ChoiceSideMismatch { .. }));
        assert_eq!(kinds.len(), 3);
    }
}
