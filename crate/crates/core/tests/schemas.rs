use std::path::Path;

use arena_eval_core::model::{Aspect, ModelId};
use arena_eval_core::scheduler::{allocate_prompts, plan_counting, plan_exhaustive, OpenStudy, RaterConstraints, Scheduler, TournamentPlan};
use chrono::{DateTime, Duration, Utc};
use serde_json::Value;

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&raw).unwrap()
}

fn check(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn plan_matches_schema() {
    let models: Vec<ModelId> = ["a", "b", "c"].iter().map(|m| ModelId::new(*m).unwrap()).collect();
    let sets = vec!["bench".to_string()];
    let mut plan = plan_exhaustive(&models, &[Aspect::OverallPreference, Aspect::Alignment, Aspect::VisualAppeal, Aspect::ContentRecreation], &sets, 500).unwrap();
    plan.counting = plan_counting(&models, &sets, 100).unwrap().counting;
    let v = schema("plan.schema.json");
    let doc = serde_json::to_value(&plan).unwrap();
    check(&v, &doc);
    let back: TournamentPlan = serde_json::from_value(doc.clone()).unwrap();
    assert_eq!(back, plan);

    let mut bad = doc;
    bad["studies"][0]["target_ratings"] = 0.into();
    assert!(!v.is_valid(&bad));
}

#[test]
fn progress_matches_schema() {
    let ids: Vec<String> = (0..8).map(|i| format!("p{i}")).collect();
    let studies = vec![
        OpenStudy { study_id: "s1".into(), target_ratings: 20, allocation: allocate_prompts(&ids, 20, 1).unwrap() },
        OpenStudy { study_id: "s2".into(), target_ratings: 20, allocation: allocate_prompts(&ids, 20, 2).unwrap() },
    ];
    let c = RaterConstraints { max_study_fraction: 1.0, max_rating_fraction_per_study: 0.5 };
    let mut s = Scheduler::new(studies, c, Duration::minutes(10), 4).unwrap();
    let now: DateTime<Utc> = "2024-06-01T00:00:00Z".parse().unwrap();
    for r in 0..6 {
        let rater = format!("r{r}");
        let t = s.next_task(&rater, now).unwrap();
        if r % 2 == 0 {
            s.complete(&t.task_id, &rater, now).unwrap();
        }
    }
    let doc = serde_json::to_value(s.progress()).unwrap();
    check(&schema("progress.schema.json"), &doc);
    assert!(doc["studies"].as_array().unwrap().iter().any(|st| st["outstanding_leases"].as_u64().unwrap() > 0));
}
